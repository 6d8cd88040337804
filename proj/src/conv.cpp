#include "lva/conv.hpp"

#include "json_util.hpp"

#include "lva/errors.hpp"
#include "lva/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numeric>

namespace lva {

ConvKernel::ConvKernel(int kh, int kw, int cin, int cout, int stride_, int padding_)
    : kernel_h(kh), kernel_w(kw), in_channels(cin), out_channels(cout), stride(stride_), padding(padding_),
      weights(static_cast<std::size_t>(std::max(0, kh * kw * cin * cout)), 0.0), bias(Vector::Zero(std::max(0, cout))) {
    validate();
}

void ConvKernel::validate() const {
    if (kernel_h < 1 || kernel_w < 1 || in_channels < 1 || out_channels < 1 || stride < 1 || padding < 0) {
        throw ShapeError("conv kernel: dimensions and stride must be >= 1, padding >= 0");
    }
    if (weights.size() != static_cast<std::size_t>(kernel_h * kernel_w * in_channels * out_channels) ||
        bias.size() != out_channels) {
        throw ShapeError("conv kernel: storage does not match its dimensions");
    }
    for (double w : weights) {
        if (!std::isfinite(w)) throw DataError("conv kernel: non-finite weight");
    }
}

int conv_output_size(int input, int kernel, int stride, int padding) {
    const int span = input + 2 * padding - kernel;
    if (span < 0) throw ShapeError("conv: kernel larger than the padded input");
    return span / stride + 1;
}

ImageTensor conv_forward(const ConvKernel& kernel, const ImageTensor& image) {
    kernel.validate();
    if (image.channels != kernel.in_channels) throw ShapeError("conv_forward: channel count mismatch");
    const int oh = conv_output_size(image.height, kernel.kernel_h, kernel.stride, kernel.padding);
    const int ow = conv_output_size(image.width, kernel.kernel_w, kernel.stride, kernel.padding);
    ImageTensor out(oh, ow, kernel.out_channels);
    for (int b = 0; b < kernel.out_channels; ++b) {
        for (int k = 0; k < oh; ++k) {
            for (int l = 0; l < ow; ++l) {
                double acc = kernel.bias[b];
                for (int i = 0; i < kernel.kernel_h; ++i) {
                    const int y = k * kernel.stride + i - kernel.padding;
                    if (y < 0 || y >= image.height) continue;
                    for (int j = 0; j < kernel.kernel_w; ++j) {
                        const int x = l * kernel.stride + j - kernel.padding;
                        if (x < 0 || x >= image.width) continue;
                        for (int a = 0; a < kernel.in_channels; ++a) acc += kernel.at(i, j, a, b) * image.at(a, y, x);
                    }
                }
                out.at(b, k, l) = acc;
            }
        }
    }
    return out;
}

PatchMatrix im2col(const ImageTensor& image, int kernel_h, int kernel_w, int stride, int padding) {
    if (kernel_h < 1 || kernel_w < 1 || stride < 1 || padding < 0) throw ShapeError("im2col: bad kernel geometry");
    PatchMatrix pm;
    pm.out_h = conv_output_size(image.height, kernel_h, stride, padding);
    pm.out_w = conv_output_size(image.width, kernel_w, stride, padding);
    const int cin = image.channels;
    pm.matrix = Matrix::Zero(pm.out_h * pm.out_w, kernel_h * kernel_w * cin);
    for (int k = 0; k < pm.out_h; ++k) {
        for (int l = 0; l < pm.out_w; ++l) {
            const Eigen::Index row = k * pm.out_w + l;
            pm.position_index.emplace_back(k, l);
            for (int i = 0; i < kernel_h; ++i) {
                const int y = k * stride + i - padding;
                if (y < 0 || y >= image.height) continue;
                for (int j = 0; j < kernel_w; ++j) {
                    const int x = l * stride + j - padding;
                    if (x < 0 || x >= image.width) continue;
                    for (int a = 0; a < cin; ++a) pm.matrix(row, (i * kernel_w + j) * cin + a) = image.at(a, y, x);
                }
            }
        }
    }
    return pm;
}

Matrix kernel_as_matrix(const ConvKernel& kernel) {
    Matrix w(kernel.out_channels, kernel.patch_size());
    for (int i = 0; i < kernel.kernel_h; ++i)
        for (int j = 0; j < kernel.kernel_w; ++j)
            for (int a = 0; a < kernel.in_channels; ++a)
                for (int b = 0; b < kernel.out_channels; ++b)
                    w(b, (i * kernel.kernel_w + j) * kernel.in_channels + a) = kernel.at(i, j, a, b);
    return w;
}

ConvKernel kernel_from_matrix(const Matrix& w, const ConvKernel& like) {
    if (w.rows() != like.out_channels || w.cols() != like.patch_size()) throw ShapeError("kernel_from_matrix: shape mismatch");
    ConvKernel out = like;
    for (int i = 0; i < like.kernel_h; ++i)
        for (int j = 0; j < like.kernel_w; ++j)
            for (int a = 0; a < like.in_channels; ++a)
                for (int b = 0; b < like.out_channels; ++b)
                    out.at(i, j, a, b) = w(b, (i * like.kernel_w + j) * like.in_channels + a);
    return out;
}

ImageTensor fold(const Matrix& rows, int out_h, int out_w) {
    if (rows.rows() != static_cast<Eigen::Index>(out_h) * out_w) throw ShapeError("fold: row count != out_h * out_w");
    ImageTensor img(out_h, out_w, static_cast<int>(rows.cols()));
    for (int k = 0; k < out_h; ++k)
        for (int l = 0; l < out_w; ++l)
            for (int c = 0; c < img.channels; ++c) img.at(c, k, l) = rows(k * out_w + l, c);
    return img;
}

// ---------------------------------------------------------------------------
// Batched internals. A batch of feature maps is a matrix with one row per
// (image, y, x) position, row = (b * H + y) * W + x, and one column per channel.
// ---------------------------------------------------------------------------
namespace {

struct Geometry {
    int batch, height, width, channels;
};

Matrix to_positions(const Matrix& images, const ImageShape& shape) {
    const Eigen::Index n = images.rows();
    const int hw = shape.height * shape.width;
    Matrix feats(n * hw, shape.channels);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int c = 0; c < shape.channels; ++c)
            for (int p = 0; p < hw; ++p) feats(b * hw + p, c) = images(b, c * hw + p);
    return feats;
}

Matrix from_positions(const Matrix& feats, Eigen::Index n, const ImageShape& shape) {
    const int hw = shape.height * shape.width;
    Matrix images(n, static_cast<Eigen::Index>(hw) * shape.channels);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int c = 0; c < shape.channels; ++c)
            for (int p = 0; p < hw; ++p) images(b, c * hw + p) = feats(b * hw + p, c);
    return images;
}

Matrix im2col_batch(const Matrix& feats, const Geometry& g, const ConvKernel& k, int oh, int ow) {
    Matrix patches = Matrix::Zero(static_cast<Eigen::Index>(g.batch) * oh * ow, k.patch_size());
    for (int b = 0; b < g.batch; ++b) {
        for (int y0 = 0; y0 < oh; ++y0) {
            for (int x0 = 0; x0 < ow; ++x0) {
                const Eigen::Index row = (static_cast<Eigen::Index>(b) * oh + y0) * ow + x0;
                for (int i = 0; i < k.kernel_h; ++i) {
                    const int y = y0 * k.stride + i - k.padding;
                    if (y < 0 || y >= g.height) continue;
                    for (int j = 0; j < k.kernel_w; ++j) {
                        const int x = x0 * k.stride + j - k.padding;
                        if (x < 0 || x >= g.width) continue;
                        const Eigen::Index src = (static_cast<Eigen::Index>(b) * g.height + y) * g.width + x;
                        patches.row(row).segment((i * k.kernel_w + j) * g.channels, g.channels) = feats.row(src);
                    }
                }
            }
        }
    }
    return patches;
}

Matrix col2im_batch(const Matrix& patches, const Geometry& g, const ConvKernel& k, int oh, int ow) {
    Matrix feats = Matrix::Zero(static_cast<Eigen::Index>(g.batch) * g.height * g.width, g.channels);
    for (int b = 0; b < g.batch; ++b) {
        for (int y0 = 0; y0 < oh; ++y0) {
            for (int x0 = 0; x0 < ow; ++x0) {
                const Eigen::Index row = (static_cast<Eigen::Index>(b) * oh + y0) * ow + x0;
                for (int i = 0; i < k.kernel_h; ++i) {
                    const int y = y0 * k.stride + i - k.padding;
                    if (y < 0 || y >= g.height) continue;
                    for (int j = 0; j < k.kernel_w; ++j) {
                        const int x = x0 * k.stride + j - k.padding;
                        if (x < 0 || x >= g.width) continue;
                        const Eigen::Index dst = (static_cast<Eigen::Index>(b) * g.height + y) * g.width + x;
                        feats.row(dst) += patches.row(row).segment((i * k.kernel_w + j) * g.channels, g.channels);
                    }
                }
            }
        }
    }
    return feats;
}

struct LayerCache {
    Geometry in;
    int oh = 0, ow = 0;
    Matrix patches;  // input patches
    Matrix pre;      // pre-activation, positions x out_channels
    Matrix out;      // activation
};

// Forward through layers [0, k) keeping caches when `keep` is set.
Matrix run_layers(const Cnn& cnn, const Matrix& feats0, const ImageShape& shape, Eigen::Index batch, std::size_t k,
                  std::vector<LayerCache>* caches, ImageShape* out_shape) {
    Matrix feats = feats0;
    Geometry g{static_cast<int>(batch), shape.height, shape.width, shape.channels};
    for (std::size_t l = 0; l < k; ++l) {
        const ConvLayer& layer = cnn.layers()[l];
        const ConvKernel& kern = layer.kernel;
        if (g.channels != kern.in_channels) throw ShapeError("cnn: channel mismatch at layer " + std::to_string(l));
        const int oh = conv_output_size(g.height, kern.kernel_h, kern.stride, kern.padding);
        const int ow = conv_output_size(g.width, kern.kernel_w, kern.stride, kern.padding);
        Matrix patches = im2col_batch(feats, g, kern, oh, ow);
        Matrix pre = patches * kernel_as_matrix(kern).transpose();
        pre.rowwise() += kern.bias.transpose();
        Matrix out = layer.activation.kind == Activation::Kind::Identity
                         ? pre
                         : Matrix(pre.unaryExpr([&layer](double v) { return layer.activation.apply(v); }));
        if (caches) (*caches)[l] = LayerCache{g, oh, ow, std::move(patches), std::move(pre), out};
        feats = std::move(out);
        g = Geometry{g.batch, oh, ow, kern.out_channels};
    }
    if (out_shape) *out_shape = ImageShape{g.height, g.width, g.channels};
    return feats;
}

}  // namespace

Cnn::Cnn(std::vector<ConvLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ArgumentError("Cnn needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].kernel.validate();
        if (i > 0 && layers_[i].kernel.in_channels != layers_[i - 1].kernel.out_channels) {
            throw ShapeError("cnn: layer " + std::to_string(i) + " channel chain broken");
        }
    }
}

Cnn Cnn::with_last_kernel(ConvKernel kernel) const {
    const ConvKernel& old = layers_.back().kernel;
    if (kernel.kernel_h != old.kernel_h || kernel.kernel_w != old.kernel_w || kernel.in_channels != old.in_channels ||
        kernel.out_channels != old.out_channels) {
        throw ShapeError("with_last_kernel: shape differs");
    }
    std::vector<ConvLayer> copy = layers_;
    copy.back().kernel = std::move(kernel);
    return Cnn(std::move(copy));
}

ImageShape Cnn::latent_shape(const ImageShape& in, std::size_t k) const {
    ImageShape s = in;
    for (std::size_t l = 0; l < k; ++l) {
        const ConvKernel& kern = layers_.at(l).kernel;
        s = ImageShape{conv_output_size(s.height, kern.kernel_h, kern.stride, kern.padding),
                       conv_output_size(s.width, kern.kernel_w, kern.stride, kern.padding), kern.out_channels};
    }
    return s;
}

ImageShape Cnn::output_shape(const ImageShape& in) const { return latent_shape(in, layers_.size()); }

Cnn make_cnn(const std::vector<int>& kernel_sizes, const std::vector<int>& channels, Activation hidden,
             std::uint64_t seed) {
    if (channels.size() != kernel_sizes.size() + 1) throw ArgumentError("make_cnn: need one more channel count than kernels");
    CounterRng rng(seed, 0xc0);
    std::vector<ConvLayer> layers;
    for (std::size_t l = 0; l < kernel_sizes.size(); ++l) {
        const int ks = kernel_sizes[l];
        ConvKernel k(ks, ks, channels[l], channels[l + 1], 1, ks / 2);
        const double bound = std::sqrt(6.0 / static_cast<double>(k.patch_size()));
        for (double& w : k.weights) w = rng.uniform(-bound, bound);
        for (Eigen::Index b = 0; b < k.bias.size(); ++b) k.bias[b] = rng.uniform(-0.01, 0.01);
        layers.push_back({std::move(k), l + 1 == kernel_sizes.size() ? Activation::identity() : hidden});
    }
    return Cnn(std::move(layers));
}

ImageTensor image_from_row(const Eigen::Ref<const Matrix>& row, const ImageShape& shape) {
    if (row.size() != shape.size()) throw ShapeError("image_from_row: size mismatch");
    ImageTensor img(shape.height, shape.width, shape.channels);
    for (Eigen::Index i = 0; i < row.size(); ++i) img.data[static_cast<std::size_t>(i)] = row(0, i);
    return img;
}

Matrix row_from_image(const ImageTensor& image) {
    Matrix row(1, static_cast<Eigen::Index>(image.data.size()));
    for (std::size_t i = 0; i < image.data.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = image.data[i];
    return row;
}

Matrix cnn_latent_batch(const Cnn& cnn, const Matrix& images, const ImageShape& shape, std::size_t k) {
    if (k > cnn.num_layers()) throw ArgumentError("cnn_latent_batch: k out of range");
    if (images.cols() != shape.size()) throw ShapeError("cnn_latent_batch: image size mismatch");
    ImageShape out_shape;
    const Matrix feats = run_layers(cnn, to_positions(images, shape), shape, images.rows(), k, nullptr, &out_shape);
    return from_positions(feats, images.rows(), out_shape);
}

Matrix cnn_forward_batch(const Cnn& cnn, const Matrix& images, const ImageShape& shape) {
    return cnn_latent_batch(cnn, images, shape, cnn.num_layers());
}

ImageTensor cnn_forward(const Cnn& cnn, const ImageTensor& image) {
    const ImageShape shape{image.height, image.width, image.channels};
    const Matrix out = cnn_forward_batch(cnn, row_from_image(image), shape);
    return image_from_row(out, cnn.output_shape(shape));
}

double pixel_mse(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape) {
    const Matrix pred = cnn_forward_batch(cnn, data.inputs, shape);
    if (pred.cols() != data.labels.cols()) throw ShapeError("pixel_mse: label size differs from the network output");
    return (pred - data.labels).squaredNorm() / static_cast<double>(pred.size());
}

double psnr(double mse, double peak) { return 10.0 * std::log10(peak * peak / mse); }

namespace {

struct AdamSlot {
    Matrix m_w, v_w;
    Vector m_b, v_b;
};

void adam_update(Matrix& w, Vector& b, const Matrix& gw, const Vector& gb, AdamSlot& s, const TrainConfig& cfg, long step) {
    if (cfg.optimizer == TrainConfig::Optimizer::SGD) {
        w -= cfg.learning_rate * gw;
        b -= cfg.learning_rate * gb;
        return;
    }
    const AdamParams& p = cfg.adam;
    if (s.m_w.size() == 0) {
        s.m_w = Matrix::Zero(w.rows(), w.cols());
        s.v_w = s.m_w;
        s.m_b = Vector::Zero(b.size());
        s.v_b = s.m_b;
    }
    s.m_w = p.beta1 * s.m_w + (1.0 - p.beta1) * gw;
    s.v_w = p.beta2 * s.v_w + (1.0 - p.beta2) * gw.cwiseAbs2();
    s.m_b = p.beta1 * s.m_b + (1.0 - p.beta1) * gb;
    s.v_b = p.beta2 * s.v_b + (1.0 - p.beta2) * gb.cwiseAbs2();
    const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
    w.array() -= cfg.learning_rate * (s.m_w.array() / c1) / ((s.v_w.array() / c2).sqrt() + p.epsilon);
    b.array() -= cfg.learning_rate * (s.m_b.array() / c1) / ((s.v_b.array() / c2).sqrt() + p.epsilon);
}

std::vector<Eigen::Index> epoch_order(Eigen::Index count, Eigen::Index batch, std::uint64_t seed, int epoch) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    if (batch < count) {
        CounterRng rng(seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    }
    return order;
}

void check_image_data(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape) {
    data.validate();
    if (data.input_dim() != shape.size()) throw ShapeError("image dataset width does not match the image shape");
    if (data.label_dim() != cnn.output_shape(shape).size()) throw ShapeError("image labels do not match the CNN output");
}

TrainReport finish_report(TrainReport report, double final_mse, Eigen::Index count) {
    report.final_loss = final_mse;
    report.epsilon_trained = std::sqrt(static_cast<double>(count) * final_mse);
    return report;
}

}  // namespace

std::pair<Cnn, TrainReport> pretrain_cnn(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape,
                                         const TrainConfig& cfg) {
    cfg.validate();
    check_image_data(cnn, data, shape);
    std::vector<ConvLayer> layers = cnn.layers();
    const std::size_t n = layers.size();
    const Eigen::Index count = data.size();
    const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, count);
    const ImageShape out_shape = cnn.output_shape(shape);
    std::vector<AdamSlot> slots(n);
    TrainReport report;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(count, batch, cfg.seed, epoch);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < count; start += batch) {
            const Eigen::Index b = std::min(batch, count - start);
            Matrix in(b, data.input_dim()), lab(b, data.label_dim());
            for (Eigen::Index r = 0; r < b; ++r) {
                in.row(r) = data.inputs.row(order[static_cast<std::size_t>(start + r)]);
                lab.row(r) = data.labels.row(order[static_cast<std::size_t>(start + r)]);
            }
            const Cnn current(layers);
            std::vector<LayerCache> caches(n);
            const Matrix out = run_layers(current, to_positions(in, shape), shape, b, n, &caches, nullptr);
            const Matrix target = to_positions(lab, out_shape);
            const double scale = 1.0 / static_cast<double>(out.size());
            Matrix g = out - target;
            epoch_loss += g.squaredNorm() * scale * static_cast<double>(b);
            g *= 2.0 * scale;
            ++step;
            for (std::size_t l = n; l-- > 0;) {
                LayerCache& c = caches[l];
                const ConvLayer& layer = layers[l];
                if (layer.activation.kind != Activation::Kind::Identity) {
                    g.array() *= c.pre.unaryExpr([&layer](double v) { return layer.activation.derivative(v); }).array();
                }
                Matrix w = kernel_as_matrix(layer.kernel);
                const Matrix gw = g.transpose() * c.patches;
                const Vector gb = g.colwise().sum().transpose();
                if (l > 0) g = col2im_batch(g * w, c.in, layer.kernel, c.oh, c.ow);
                adam_update(w, layers[l].kernel.bias, gw, gb, slots[l], cfg, step);
                layers[l].kernel = kernel_from_matrix(w, layers[l].kernel);
            }
        }
        epoch_loss /= static_cast<double>(count);
        if (!std::isfinite(epoch_loss)) {
            throw TrainingError("cnn training diverged at epoch " + std::to_string(epoch), epoch - 1,
                                report.loss_history.empty() ? std::nan("") : report.loss_history.back());
        }
        report.loss_history.push_back(epoch_loss);
    }
    Cnn trained(std::move(layers));
    const double final_mse = pixel_mse(trained, data, shape);
    return {trained, finish_report(std::move(report), final_mse, count)};
}

namespace {

// Penultimate patches for every image (rows grouped per image) and the matching label rows.
std::pair<Matrix, Matrix> last_layer_problem(const Cnn& cnn, const Matrix& images, const Matrix& labels,
                                             const ImageShape& shape) {
    const std::size_t n = cnn.num_layers();
    ImageShape pen_shape;
    const Matrix feats = run_layers(cnn, to_positions(images, shape), shape, images.rows(), n - 1, nullptr, &pen_shape);
    const ConvKernel& last = cnn.layers().back().kernel;
    const int oh = conv_output_size(pen_shape.height, last.kernel_h, last.stride, last.padding);
    const int ow = conv_output_size(pen_shape.width, last.kernel_w, last.stride, last.padding);
    Matrix patches = im2col_batch(feats, Geometry{static_cast<int>(images.rows()), pen_shape.height, pen_shape.width,
                                                  pen_shape.channels},
                                  last, oh, ow);
    Matrix target = to_positions(labels, ImageShape{oh, ow, last.out_channels});
    return {std::move(patches), std::move(target)};
}

}  // namespace

std::pair<Cnn, TrainReport> finetune_cnn_last(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape,
                                              const TrainConfig& cfg) {
    cfg.validate();
    check_image_data(cnn, data, shape);
    const auto [patches, target] = last_layer_problem(cnn, data.inputs, data.labels, shape);
    const Eigen::Index count = data.size();
    const Eigen::Index per_image = patches.rows() / count;
    const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, count);
    ConvKernel kernel = cnn.layers().back().kernel;
    Matrix w = kernel_as_matrix(kernel);
    AdamSlot slot;
    TrainReport report;
    long step = 0;
    Matrix bp, bt;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(count, batch, cfg.seed, epoch);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < count; start += batch) {
            const Eigen::Index b = std::min(batch, count - start);
            const Matrix* p = &patches;
            const Matrix* t = &target;
            if (b != count) {
                bp.resize(b * per_image, patches.cols());
                bt.resize(b * per_image, target.cols());
                for (Eigen::Index r = 0; r < b; ++r) {
                    const Eigen::Index img = order[static_cast<std::size_t>(start + r)];
                    bp.middleRows(r * per_image, per_image) = patches.middleRows(img * per_image, per_image);
                    bt.middleRows(r * per_image, per_image) = target.middleRows(img * per_image, per_image);
                }
                p = &bp;
                t = &bt;
            }
            Matrix g = (*p) * w.transpose();
            g.rowwise() += kernel.bias.transpose();
            g -= *t;
            const double scale = 1.0 / static_cast<double>(g.size());
            epoch_loss += g.squaredNorm() * scale * static_cast<double>(b);
            g *= 2.0 * scale;
            ++step;
            adam_update(w, kernel.bias, g.transpose() * (*p), g.colwise().sum().transpose(), slot, cfg, step);
        }
        epoch_loss /= static_cast<double>(count);
        if (!std::isfinite(epoch_loss)) {
            throw TrainingError("cnn finetuning diverged at epoch " + std::to_string(epoch), epoch - 1,
                                report.loss_history.empty() ? std::nan("") : report.loss_history.back());
        }
        report.loss_history.push_back(epoch_loss);
    }
    Cnn tuned = cnn.with_last_kernel(kernel_from_matrix(w, kernel));
    const double final_mse = pixel_mse(tuned, data, shape);
    return {tuned, finish_report(std::move(report), final_mse, count)};
}

Cnn refit_last_kernel(const Cnn& cnn, const PairedDataset& data, const ImageShape& shape, double ridge) {
    check_image_data(cnn, data, shape);
    const auto [patches, target] = last_layer_problem(cnn, data.inputs, data.labels, shape);
    Matrix design(patches.rows(), patches.cols() + 1);
    design.leftCols(patches.cols()) = patches;
    design.col(patches.cols()).setOnes();
    const LstsqSolution sol = linalg::least_squares(design, target, ridge);
    ConvKernel kernel = kernel_from_matrix(sol.coefficients.topRows(patches.cols()).transpose(), cnn.layers().back().kernel);
    kernel.bias = sol.coefficients.row(patches.cols()).transpose();
    return cnn.with_last_kernel(std::move(kernel));
}

ConvLvaResult lva_conv_last_layer(const Cnn& cnn, const Alignment& alignment, const PairedDataset& source,
                                  const PairedDataset& target, const ImageShape& shape, double ridge, bool bias_column) {
    if (cnn.layers().back().activation.kind != Activation::Kind::Identity) {
        throw UnsupportedModelError("conv LVA needs an identity activation on the last conv layer");
    }
    check_image_data(cnn, source, shape);
    check_image_data(cnn, target, shape);
    if (static_cast<Eigen::Index>(alignment.size()) != target.size()) throw ShapeError("alignment does not match the target set");

    Matrix src_images(target.size(), source.input_dim()), src_labels(target.size(), source.label_dim());
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        const auto j = static_cast<Eigen::Index>(alignment.source_index[static_cast<std::size_t>(i)]);
        if (j >= source.size()) throw ShapeError("alignment refers past the source dataset");
        src_images.row(i) = source.inputs.row(j);
        src_labels.row(i) = source.labels.row(j);
    }
    const auto [tgt_patches, tgt_labels] = last_layer_problem(cnn, target.inputs, target.labels, shape);
    const auto [src_patches, src_label_rows] = last_layer_problem(cnn, src_images, src_labels, shape);

    const ConvKernel& last = cnn.layers().back().kernel;
    const Matrix w = kernel_as_matrix(last);
    Matrix src_pred = src_patches * w.transpose();
    src_pred.rowwise() += last.bias.transpose();

    ConvLvaResult out;
    out.residue.variant = ResidueVariant::LatentJacobian;
    out.residue.label_shift = tgt_labels - src_label_rows;
    out.residue.jacobian_correction = (tgt_patches - src_patches) * w.transpose();
    out.residue.pretrain_error = src_label_rows - src_pred;
    out.residue.q = out.residue.label_shift - out.residue.jacobian_correction + out.residue.pretrain_error;

    Matrix design = tgt_patches;
    if (bias_column) {
        design.conservativeResize(Eigen::NoChange, tgt_patches.cols() + 1);
        design.col(tgt_patches.cols()).setOnes();
    }
    out.solve = linalg::least_squares(design, out.residue.q, ridge);
    out.delta = kernel_from_matrix(out.solve.coefficients.topRows(tgt_patches.cols()).transpose(), last);
    out.delta.bias = bias_column ? Vector(out.solve.coefficients.row(tgt_patches.cols()).transpose())
                                 : Vector::Zero(last.out_channels);
    out.kernel = last;
    for (std::size_t i = 0; i < out.kernel.weights.size(); ++i) out.kernel.weights[i] += out.delta.weights[i];
    out.kernel.bias += out.delta.bias;
    return out;
}

namespace {

using detail::json;

int int_at(const json& j, const char* field, const std::string& where) {
    if (!j.contains(field) || !j[field].is_number_integer()) throw ParseError(where + "." + field + ": expected integer");
    return j[field].get<int>();
}

}  // namespace

std::string serialize_cnn(const Cnn& cnn, const ImageShape& input_shape) {
    json layers = json::array();
    for (const ConvLayer& l : cnn.layers()) {
        const ConvKernel& k = l.kernel;
        json bias = json::array();
        for (Eigen::Index b = 0; b < k.bias.size(); ++b) bias.push_back(k.bias[b]);
        layers.push_back({{"kernel_h", k.kernel_h},
                          {"kernel_w", k.kernel_w},
                          {"in_channels", k.in_channels},
                          {"out_channels", k.out_channels},
                          {"stride", k.stride},
                          {"padding", k.padding},
                          {"weights", k.weights},
                          {"bias", std::move(bias)},
                          {"activation", detail::activation_to_json(l.activation)}});
    }
    json doc{{"model", "cnn"},
             {"input_shape", {{"height", input_shape.height}, {"width", input_shape.width}, {"channels", input_shape.channels}}},
             {"layers", std::move(layers)}};
    return doc.dump(1) + "\n";
}

CnnModel deserialize_cnn(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("cnn JSON: ") + e.what());
    }
    if (!doc.is_object() || doc.value("model", "") != "cnn") throw ParseError("cnn JSON: field 'model' must be \"cnn\"");
    if (!doc.contains("input_shape") || !doc["input_shape"].is_object()) throw ParseError("cnn JSON: missing 'input_shape'");
    const json& js = doc["input_shape"];
    const ImageShape shape{int_at(js, "height", "input_shape"), int_at(js, "width", "input_shape"),
                           int_at(js, "channels", "input_shape")};
    if (shape.height < 1 || shape.width < 1 || shape.channels < 1) throw ParseError("cnn JSON: input_shape must be positive");
    if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty()) {
        throw ParseError("cnn JSON: 'layers' must be a non-empty array");
    }
    std::vector<ConvLayer> layers;
    for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
        const json& e = doc["layers"][i];
        const std::string where = "layers[" + std::to_string(i) + "]";
        if (!e.is_object()) throw ParseError(where + ": expected object");
        ConvKernel k;
        try {
            k = ConvKernel(int_at(e, "kernel_h", where), int_at(e, "kernel_w", where), int_at(e, "in_channels", where),
                           int_at(e, "out_channels", where), int_at(e, "stride", where), int_at(e, "padding", where));
        } catch (const ShapeError& err) {
            throw ParseError(where + ": " + err.what());
        }
        if (!e.contains("weights") || !e["weights"].is_array() || e["weights"].size() != k.weights.size()) {
            throw ParseError(where + ".weights: expected " + std::to_string(k.weights.size()) + " numbers");
        }
        for (std::size_t w = 0; w < k.weights.size(); ++w) {
            k.weights[w] = detail::number_at(e["weights"][w], where + ".weights[" + std::to_string(w) + "]");
        }
        if (!e.contains("bias") || !e["bias"].is_array() || e["bias"].size() != static_cast<std::size_t>(k.out_channels)) {
            throw ParseError(where + ".bias: expected " + std::to_string(k.out_channels) + " numbers");
        }
        for (int b = 0; b < k.out_channels; ++b) {
            k.bias[b] = detail::number_at(e["bias"][static_cast<std::size_t>(b)], where + ".bias[" + std::to_string(b) + "]");
        }
        if (!e.contains("activation")) throw ParseError(where + ": missing field 'activation'");
        layers.push_back({std::move(k), detail::activation_from_json(e["activation"], where)});
    }
    try {
        CnnModel model{Cnn(std::move(layers)), shape};
        model.cnn.output_shape(shape);  // geometry check
        return model;
    } catch (const std::exception& err) {
        throw ParseError(std::string("cnn JSON: ") + err.what());
    }
}

CnnModel load_cnn(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return deserialize_cnn(buffer.str());
}

void save_cnn(const Cnn& cnn, const ImageShape& input_shape, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file '" + path + "'");
    out << serialize_cnn(cnn, input_shape);
}

std::string model_kind(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model JSON: ") + e.what());
    }
    return doc.is_object() && doc.value("model", "") == "cnn" ? "cnn" : "mlp";
}

}  // namespace lva
