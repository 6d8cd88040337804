#include "lva/bench.hpp"

#include "lva/errors.hpp"
#include "lva/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace lva::bench {

namespace {

using Clock = std::chrono::steady_clock;

long elapsed_ms(Clock::time_point start) {
    return static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count());
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

PairedDataset gen_signal(const SignalSpec& spec) {
    if (spec.n < 2) throw ArgumentError("gen_signal: n must be >= 2");
    PairedDataset data{Matrix(spec.n, 1), Matrix(spec.n, 1), spec.domain == Domain::Source ? "signal-source" : "signal-target"};
    CounterRng xi_rng(spec.noise_seed, 0x51);
    CounterRng eta_rng(spec.noise_seed, 0x52);
    const double xi_std = std::sqrt(0.8);
    for (int i = 0; i < spec.n; ++i) {
        const double t = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(spec.n - 1);
        const double clean = std::sin(5.0 * std::numbers::pi * t);
        if (spec.domain == Domain::Source) {
            data.inputs(i, 0) = t;
            data.labels(i, 0) = clean;
        } else {
            const double xi = xi_rng.normal(1.5, xi_std);
            const double eta = eta_rng.uniform(-1.0, 1.0);
            data.inputs(i, 0) = t + 0.05 * xi;
            data.labels(i, 0) = gamma_envelope(t) * clean + 0.03 * eta;
        }
    }
    return data;
}

void BlurSpec::validate() const {
    if (image_size < 1 || num_images < 1) throw ArgumentError("BlurSpec: image_size and num_images must be >= 1");
    if (!(blur_sigma_source > 0.0 && blur_sigma_target > 0.0)) throw ArgumentError("BlurSpec: sigmas must be > 0");
    if (!(blur_sigma_target > blur_sigma_source)) throw ArgumentError("BlurSpec: target must be blurrier than source");
}

std::vector<double> gaussian_taps(double sigma) {
    if (!(sigma > 0.0)) throw ArgumentError("gaussian_taps: sigma must be > 0");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double w = std::exp(-0.5 * k * k / (sigma * sigma));
        taps[static_cast<std::size_t>(k + radius)] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

namespace {

int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
}

}  // namespace

Matrix gaussian_blur(const Matrix& image, double sigma) {
    const auto taps = gaussian_taps(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    Matrix tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += taps[static_cast<std::size_t>(k + radius)] * image(y, reflect(x + k, w));
            tmp(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += taps[static_cast<std::size_t>(k + radius)] * tmp(reflect(y + k, h), x);
            out(y, x) = acc;
        }
    return out;
}

Matrix smooth_image(int size, std::uint64_t seed, std::uint64_t index) {
    CounterRng rng(seed, 0x1a6e0000ULL + index);
    Matrix img = Matrix::Zero(size, size);
    for (int c = 0; c < 5; ++c) {
        const double amp = rng.uniform(0.5, 1.0);
        const double fx = rng.uniform(-3.0, 3.0), fy = rng.uniform(-3.0, 3.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                img(y, x) += amp * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) / size + phase);
    }
    const double lo = img.minCoeff(), hi = img.maxCoeff();
    if (hi - lo > 0.0) img = (img.array() - lo) / (hi - lo);
    else img.setConstant(0.5);
    return img;
}

namespace {

Matrix flatten(const Matrix& image) {
    return Eigen::Map<const Matrix>(image.data(), 1, image.size());
}

// Images [first, first + count) of the sharp-image stream, blurred with `sigma`.
PairedDataset blurred_set(int size, std::uint64_t seed, std::uint64_t first, int count, double sigma, std::string name) {
    PairedDataset d{Matrix(count, size * size), Matrix(count, size * size), std::move(name)};
    for (int i = 0; i < count; ++i) {
        const Matrix sharp = smooth_image(size, seed, first + static_cast<std::uint64_t>(i));
        d.inputs.row(i) = flatten(gaussian_blur(sharp, sigma));
        d.labels.row(i) = flatten(sharp);
    }
    return d;
}

}  // namespace

std::pair<PairedDataset, PairedDataset> gen_blur_pairs(const BlurSpec& spec) {
    spec.validate();
    return {blurred_set(spec.image_size, spec.seed, 0, spec.num_images, spec.blur_sigma_source, "blur-source"),
            blurred_set(spec.image_size, spec.seed, 0, spec.num_images, spec.blur_sigma_target, "blur-target")};
}

std::string results_csv(const std::vector<BenchResult>& results, bool include_runtime) {
    std::string out = std::string(kResultsHeader) + "\n";
    for (const BenchResult& r : results) {
        out += r.method + "," + std::to_string(r.budget) + "," + fmt17(r.target_loss) + ",";
        if (auto it = r.extra_metrics.find("psnr"); it != r.extra_metrics.end()) out += fmt17(it->second);
        out += "," + (include_runtime ? std::to_string(r.runtime_ms) : std::string("0")) + "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

std::string summary_table(const std::vector<BenchResult>& results) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %8s %16s %10s %12s\n", "method", "budget", "loss", "psnr", "runtime_ms");
    os << line;
    for (const BenchResult& r : results) {
        const auto it = r.extra_metrics.find("psnr");
        char psnr[32] = "-";
        if (it != r.extra_metrics.end()) std::snprintf(psnr, sizeof psnr, "%.3f", it->second);
        std::snprintf(line, sizeof line, "%-14s %8d %16.6e %10s %12ld\n", r.method.c_str(), r.budget, r.target_loss, psnr,
                      r.runtime_ms);
        os << line;
    }
    return os.str();
}

Bench1dOutcome run_benchmark_1d(std::uint64_t seed, const Bench1dOptions& opt) {
    Bench1dOutcome out;
    const PairedDataset source = gen_signal({opt.samples, seed, Domain::Source});
    const PairedDataset target = gen_signal({opt.samples, seed, Domain::Target});
    // Held-out target points: same law, independent noise, different grid.
    const PairedDataset test = gen_signal({opt.test_samples, seed ^ 0x7e57ULL, Domain::Target});

    const Eigen::Index dims[] = {1, opt.hidden, opt.hidden, 1};
    const Mlp init = make_mlp(dims, Activation::relu(), Activation::identity(), seed);
    TrainConfig cfg;
    cfg.learning_rate = opt.learning_rate;
    cfg.epochs = opt.pretrain_epochs;
    cfg.batch_size = opt.batch_size;
    cfg.seed = seed;

    auto start = Clock::now();
    auto [f, pre_report] = pretrain(init, source, cfg);
    out.pretrain_report = pre_report;
    const auto n = f.num_layers();
    out.results.push_back({"Pretrained", 0, mse_loss(f, target), elapsed_ms(start), {}, seed});

    TrainConfig ft = cfg;
    ft.epochs = opt.gd_epochs;
    ft.trainable_layers = {n};
    start = Clock::now();
    auto [g_gd, gd_report] = finetune_gd(f, target, ft);
    out.results.push_back({"GD", opt.samples, gd_report.final_loss, elapsed_ms(start), {}, seed});

    if (opt.with_gd2) {
        ft.trainable_layers = {n - 1, n};
        start = Clock::now();
        auto [g_gd2, gd2_report] = finetune_gd(f, target, ft);
        out.results.push_back({"GD2", opt.samples, gd2_report.final_loss, elapsed_ms(start), {}, seed});
    }

    LvaOptions lva_opt;
    lva_opt.ridge = opt.ridge;
    start = Clock::now();
    const Alignment nn = align_nearest(source, target);
    LvaResult one = lva_one_layer(f, nn, source, target, lva_opt);
    out.results.push_back({"LVA1", opt.samples, mse_loss(one.adapted, target), elapsed_ms(start), {}, seed});

    LvaOptions two_opt = lva_opt;
    two_opt.penultimate_ridge = opt.two_layer_ridge;
    start = Clock::now();
    out.two_layer = lva_two_layer(f, nn, source, target, opt.sweeps, two_opt);
    out.results.push_back({"LVA2", opt.samples, out.two_layer->target_loss, elapsed_ms(start), {}, seed});

    start = Clock::now();
    const Alignment ot = align_sinkhorn(source, target, opt.sinkhorn_reg, opt.sinkhorn_iters, 1e-9);
    const LvaResult one_ot = lva_one_layer(f, ot, source, target, lva_opt);
    out.results.push_back({"LVA_OT", opt.samples, mse_loss(one_ot.adapted, target), elapsed_ms(start), {}, seed});

    LvaOptions input_opt = lva_opt;
    input_opt.variant = ResidueVariant::InputJacobian;
    start = Clock::now();
    const LvaResult one_in = lva_one_layer(f, nn, source, target, input_opt);
    out.results.push_back({"LVA1_INPUT", opt.samples, mse_loss(one_in.adapted, target), elapsed_ms(start), {}, seed});
    start = Clock::now();
    const LvaResult ot_in = lva_one_layer(f, ot, source, target, input_opt);
    out.results.push_back({"LVA_OT_INPUT", opt.samples, mse_loss(ot_in.adapted, target), elapsed_ms(start), {}, seed});

    out.transfer = verify_transfer_bound(f, one.adapted, 1, nn, source, target);
    out.generalization = verify_generalization_bound(one.adapted, target, test);
    out.pretrained = f;
    out.lva1 = one.adapted;
    return out;
}

BenchDeblurOutcome run_benchmark_deblur(std::uint64_t seed, const BenchDeblurOptions& opt) {
    if (opt.budgets.empty()) throw ArgumentError("deblur benchmark: no budgets");
    BlurSpec spec{opt.image_size, 1, opt.sigma_source, opt.sigma_target, seed};
    spec.validate();
    const int max_budget = *std::max_element(opt.budgets.begin(), opt.budgets.end());
    const int size = opt.image_size;
    const ImageShape shape{size, size, 1};

    // Disjoint slices of one sharp-image stream.
    std::uint64_t next = 0;
    const PairedDataset src_train = blurred_set(size, seed, next, opt.pretrain_images, opt.sigma_source, "src-train");
    next += static_cast<std::uint64_t>(opt.pretrain_images);
    const PairedDataset src_test = blurred_set(size, seed, next, opt.test_images, opt.sigma_source, "src-test");
    next += static_cast<std::uint64_t>(opt.test_images);
    const PairedDataset tgt_pool = blurred_set(size, seed, next, max_budget, opt.sigma_target, "tgt-pool");
    next += static_cast<std::uint64_t>(max_budget);
    const PairedDataset tgt_test = blurred_set(size, seed, next, opt.test_images, opt.sigma_target, "tgt-test");

    TrainConfig cfg;
    cfg.learning_rate = opt.pretrain_lr;
    cfg.epochs = opt.pretrain_epochs;
    cfg.batch_size = opt.pretrain_batch;
    cfg.seed = seed;
    const Cnn init = make_cnn(opt.kernel_sizes, opt.channels, Activation::relu(), seed);
    Cnn f = pretrain_cnn(init, src_train, shape, cfg).first;
    // Least-squares polish of the output kernel: f is then exactly well-trained in its last layer.
    f = refit_last_kernel(f, src_train, shape, opt.ridge);

    BenchDeblurOutcome out;
    out.pretrained_source_mse = pixel_mse(f, src_test, shape);
    out.pretrained_target_mse = pixel_mse(f, tgt_test, shape);

    for (int budget : opt.budgets) {
        const PairedDataset adapt = tgt_pool.slice(0, budget);

        TrainConfig gd = cfg;
        gd.learning_rate = opt.gd_lr;
        gd.epochs = opt.gd_epochs;
        gd.batch_size = budget;
        auto start = Clock::now();
        const Cnn g_gd = finetune_cnn_last(f, adapt, shape, gd).first;
        const long gd_ms = elapsed_ms(start);
        const double gd_mse = pixel_mse(g_gd, tgt_test, shape);
        out.results.push_back({"GD", budget, gd_mse, gd_ms, {{"psnr", psnr(gd_mse)}}, seed});

        start = Clock::now();
        const Alignment a = align_nearest(src_train, adapt);
        const ConvLvaResult lva = lva_conv_last_layer(f, a, src_train, adapt, shape, opt.ridge);
        const Cnn g_lva = f.with_last_kernel(lva.kernel);
        const long lva_ms = elapsed_ms(start);
        const double lva_mse = pixel_mse(g_lva, tgt_test, shape);
        out.results.push_back({"LVA", budget, lva_mse, lva_ms, {{"psnr", psnr(lva_mse)}}, seed});
    }

    // Identical-domain control: adapting on the pretraining set itself.
    const Alignment self = align_nearest(src_train, src_train);
    const ConvLvaResult control = lva_conv_last_layer(f, self, src_train, src_train, shape, opt.ridge);
    double sq = control.delta.bias.squaredNorm();
    for (double w : control.delta.weights) sq += w * w;
    out.identity_delta_norm = std::sqrt(sq);
    return out;
}

}  // namespace lva::bench
