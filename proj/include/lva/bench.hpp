#pragma once

#include "lva/conv.hpp"
#include "lva/dataset.hpp"
#include "lva/lva.hpp"
#include "lva/train.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lva::bench {

enum class Domain { Source, Target };

struct SignalSpec {
    int n = 2000;
    std::uint64_t noise_seed = 0;
    Domain domain = Domain::Source;
};

/// Amplitude envelope of the target signal.
inline double gamma_envelope(double t) { return 0.4 * t + 1.3998; }

/// Source: (t_i, sin(5 pi t_i)) on an equispaced grid over [-1, 1].
/// Target: (t_i + 0.05 xi_i, gamma(t_i) sin(5 pi t_i) + 0.03 eta_i) with
/// xi ~ Normal(mean 1.5, variance 0.8) and eta ~ Uniform(-1, 1).
PairedDataset gen_signal(const SignalSpec& spec);

struct BlurSpec {
    int image_size = 16;
    int num_images = 64;
    double blur_sigma_source = 1.0;
    double blur_sigma_target = 1.6;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Normalized 1-D Gaussian taps of radius ceil(3 sigma).
std::vector<double> gaussian_taps(double sigma);
/// Separable Gaussian blur with reflective (mirror) borders on a single-channel image.
Matrix gaussian_blur(const Matrix& image, double sigma);
/// Smooth image: sum of five random 2-D cosines, min-max normalized to [0, 1].
Matrix smooth_image(int size, std::uint64_t seed, std::uint64_t index);

/// (source, target) datasets over the same sharp images: inputs are blurred
/// (flattened row-major), labels are the sharp images.
std::pair<PairedDataset, PairedDataset> gen_blur_pairs(const BlurSpec& spec);

struct BenchResult {
    std::string method;  // Pretrained, GD, LVA1, LVA2, LVA_OT, ...
    int budget = 0;      // number of target samples used for adaptation
    double target_loss = 0.0;
    long runtime_ms = 0;
    std::map<std::string, double> extra_metrics;  // e.g. psnr
    std::uint64_t seed = 0;
};

inline constexpr const char* kResultsHeader = "method,budget,loss,psnr,runtime_ms,seed";
std::string results_csv(const std::vector<BenchResult>& results, bool include_runtime = true);
std::string summary_table(const std::vector<BenchResult>& results);

struct Bench1dOptions {
    int samples = 2000;
    int test_samples = 500;
    int pretrain_epochs = 8000;
    int gd_epochs = 12000;
    double learning_rate = 1e-3;
    int batch_size = 64;  // shared by pretraining and GD finetuning
    int hidden = 64;
    int sweeps = 3;
    double ridge = 0.0;             // one-layer solve
    double two_layer_ridge = 1e-3;  // penultimate-layer regression
    double sinkhorn_reg = 0.05;
    int sinkhorn_iters = 200;
    bool with_gd2 = false;  // 2-layer GD baseline (slow)
};

struct Bench1dOutcome {
    std::vector<BenchResult> results;
    TrainReport pretrain_report;
    TheoryReport transfer;        // for the LVA1 net
    TheoryReport generalization;  // LVA1 net on a held-out target split
    std::optional<LvaTwoLayerResult> two_layer;
    std::optional<Mlp> pretrained;
    std::optional<Mlp> lva1;
};

Bench1dOutcome run_benchmark_1d(std::uint64_t seed, const Bench1dOptions& options = {});

struct BenchDeblurOptions {
    int image_size = 16;
    int pretrain_images = 96;
    int test_images = 32;
    std::vector<int> budgets{16, 64, 256};
    double sigma_source = 1.0;
    double sigma_target = 1.6;
    int pretrain_epochs = 200;
    int pretrain_batch = 16;
    double pretrain_lr = 3e-3;
    int gd_epochs = 200;
    double gd_lr = 1e-3;
    std::vector<int> kernel_sizes{9, 5, 5};
    std::vector<int> channels{1, 8, 8, 1};
    double ridge = 0.0;
};

struct BenchDeblurOutcome {
    std::vector<BenchResult> results;
    double pretrained_source_mse = 0.0;  // held-out source images
    double pretrained_target_mse = 0.0;  // held-out target images
    double identity_delta_norm = 0.0;    // conv LVA on the source set itself
};

BenchDeblurOutcome run_benchmark_deblur(std::uint64_t seed, const BenchDeblurOptions& options = {});

}  // namespace lva::bench
