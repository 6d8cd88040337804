#pragma once

#include "lva/align.hpp"
#include "lva/dataset.hpp"
#include "lva/linalg.hpp"
#include "lva/lva.hpp"
#include "lva/net.hpp"
#include "lva/train.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace lva {

/// Convolution kernel C[i][j][a][b]: (i, j) over kernel height x width,
/// a over input channels, b over output channels. Cross-correlation, no flip.
struct ConvKernel {
    int kernel_h = 1, kernel_w = 1, in_channels = 1, out_channels = 1;
    int stride = 1, padding = 0;  // symmetric zero padding
    std::vector<double> weights;  // ((i * kernel_w + j) * in_channels + a) * out_channels + b
    Vector bias;                  // out_channels

    ConvKernel() = default;
    ConvKernel(int kh, int kw, int cin, int cout, int stride = 1, int padding = 0);

    double& at(int i, int j, int a, int b) { return weights[index(i, j, a, b)]; }
    double at(int i, int j, int a, int b) const { return weights[index(i, j, a, b)]; }
    int patch_size() const { return kernel_h * kernel_w * in_channels; }
    void validate() const;

private:
    std::size_t index(int i, int j, int a, int b) const {
        return static_cast<std::size_t>(((i * kernel_w + j) * in_channels + a) * out_channels + b);
    }
};

/// Channel-major image: data[(c * height + y) * width + x].
struct ImageTensor {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data;

    ImageTensor() = default;
    ImageTensor(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h * w * c), 0.0) {}

    double& at(int c, int y, int x) { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
    double at(int c, int y, int x) const { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
};

/// One row per output position (k, l) in row-major order; columns follow the
/// flattening (i, j, a) -> (i * kernel_w + j) * in_channels + a. Padded entries are 0.
struct PatchMatrix {
    Matrix matrix;
    std::vector<std::pair<int, int>> position_index;  // row -> (k, l)
    int out_h = 0, out_w = 0;
};

int conv_output_size(int input, int kernel, int stride, int padding);

ImageTensor conv_forward(const ConvKernel& kernel, const ImageTensor& image);
PatchMatrix im2col(const ImageTensor& image, int kernel_h, int kernel_w, int stride, int padding);

/// W[b][(i * kernel_w + j) * in_channels + a] = C[i][j][a][b], shape out_channels x patch_size.
Matrix kernel_as_matrix(const ConvKernel& kernel);
/// Inverse index map of kernel_as_matrix; stride/padding/bias come from `like`.
ConvKernel kernel_from_matrix(const Matrix& w, const ConvKernel& like);

/// Rows (positions x channels) back into a channel-major image.
ImageTensor fold(const Matrix& rows, int out_h, int out_w);

struct ConvLayer {
    ConvKernel kernel;
    Activation activation;
};

struct ImageShape {
    int height = 0, width = 0, channels = 1;
    int size() const { return height * width * channels; }
};

/// Stack of conv layers, each followed by an elementwise activation.
class Cnn {
public:
    explicit Cnn(std::vector<ConvLayer> layers);

    const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
    std::size_t num_layers() const noexcept { return layers_.size(); }
    Cnn with_last_kernel(ConvKernel kernel) const;
    ImageShape output_shape(const ImageShape& in) const;
    ImageShape latent_shape(const ImageShape& in, std::size_t k) const;

private:
    std::vector<ConvLayer> layers_;
};

/// Random He-uniform kernels, "same" padding (kernel / 2), stride 1.
Cnn make_cnn(const std::vector<int>& kernel_sizes, const std::vector<int>& channels, Activation hidden,
             std::uint64_t seed);

ImageTensor cnn_forward(const Cnn& cnn, const ImageTensor& image);
/// Each dataset row is one flattened channel-major image; returns flattened outputs of the first k layers.
Matrix cnn_latent_batch(const Cnn& cnn, const Matrix& images, const ImageShape& shape, std::size_t k);
Matrix cnn_forward_batch(const Cnn& cnn, const Matrix& images, const ImageShape& shape);

ImageTensor image_from_row(const Eigen::Ref<const Matrix>& row, const ImageShape& shape);
Matrix row_from_image(const ImageTensor& image);

/// Per-pixel mean squared error over all images.
double pixel_mse(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape);
double psnr(double mse, double peak = 1.0);

std::pair<Cnn, TrainReport> pretrain_cnn(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape,
                                         const TrainConfig& cfg);
/// Gradient descent on the last kernel only; earlier kernels are returned bit-identical.
std::pair<Cnn, TrainReport> finetune_cnn_last(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape,
                                              const TrainConfig& cfg);
/// Exact least-squares refit of the last kernel on `data` (penultimate patches -> labels).
Cnn refit_last_kernel(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape, double ridge = 0.0);

/// CNN model file: {"model": "cnn", "input_shape": {"height", "width", "channels"},
///   "layers": [{"kernel_h", "kernel_w", "in_channels", "out_channels", "stride", "padding",
///               "weights": [...] (C[i][j][a][b] flattened as in ConvKernel), "bias": [...],
///               "activation": {...}}]}
struct CnnModel {
    Cnn cnn;
    ImageShape input_shape;
};
std::string serialize_cnn(const Cnn& cnn, const ImageShape& input_shape);
CnnModel deserialize_cnn(const std::string& text);
CnnModel load_cnn(const std::string& path);
void save_cnn(const Cnn& cnn, const ImageShape& input_shape, const std::string& path);
/// "cnn" for CNN documents, "mlp" otherwise. Throws ParseError on invalid JSON.
std::string model_kind(const std::string& text);

struct ConvLvaResult {
    ConvKernel kernel;        // updated last kernel
    ConvKernel delta;         // correction in kernel coordinates
    TransferalResidue residue;  // one row per (target image, output position)
    LstsqSolution solve;
};

/// Closed-form correction of the last conv layer: every output position of every
/// target image contributes one regression row (shared weights), with the residue
/// built from the penultimate feature maps (J(f_n) is the unfolded last kernel).
ConvLvaResult lva_conv_last_layer(const Cnn& cnn, const Alignment& alignment, const PairedDataset& source,
                                  const PairedDataset& target, const ImageShape& shape, double ridge = 0.0,
                                  bool bias_column = true);

}  // namespace lva
