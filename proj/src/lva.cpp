#include "lva/lva.hpp"

#include "lva/errors.hpp"
#include "lva/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace lva {

std::string to_string(ResidueVariant v) {
    return v == ResidueVariant::LatentJacobian ? "latent" : "input";
}

namespace {

void check_inputs(const Mlp& net, const Alignment& alignment, const PairedDataset& source, const PairedDataset& target) {
    source.validate();
    target.validate();
    if (source.input_dim() != net.input_dim() || target.input_dim() != net.input_dim() ||
        source.label_dim() != net.output_dim() || target.label_dim() != net.output_dim()) {
        throw ShapeError("datasets do not match the network dimensions");
    }
    if (static_cast<Eigen::Index>(alignment.size()) != target.size() || alignment.delta_x.rows() != target.size() ||
        alignment.delta_y.rows() != target.size() || alignment.delta_x.cols() != target.input_dim() ||
        alignment.delta_y.cols() != target.label_dim()) {
        throw ShapeError("alignment does not match the target dataset");
    }
    for (std::size_t j : alignment.source_index) {
        if (static_cast<Eigen::Index>(j) >= source.size()) throw ShapeError("alignment refers past the source dataset");
    }
}

void require_affine_output(const Mlp& net) {
    if (net.layers().back().activation.kind != Activation::Kind::Identity) {
        throw UnsupportedModelError("closed-form adaptation needs an affine (identity-activation) last layer");
    }
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& index) {
    Matrix out(static_cast<Eigen::Index>(index.size()), m.cols());
    for (std::size_t i = 0; i < index.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(index[i]));
    return out;
}

Matrix activation_derivatives(const Matrix& pre, const Activation& act) {
    return pre.unaryExpr([&act](double v) { return act.derivative(v); });
}

// Batched Jacobian-vector products J(layers (k1, n])(x_r) * tangent_r for every row r,
// where `inputs` already holds latent(x_r, k1).
Matrix batched_jvp(const Mlp& net, std::size_t k1, const Matrix& inputs, const Matrix& tangents) {
    Matrix z = inputs, t = tangents;
    for (std::size_t l = k1; l < net.num_layers(); ++l) {
        const Layer& layer = net.layer(l);
        Matrix pre = z * layer.weight.transpose();
        pre.rowwise() += layer.bias.transpose();
        t = t * layer.weight.transpose();
        if (layer.activation.kind != Activation::Kind::Identity) {
            t.array() *= activation_derivatives(pre, layer.activation).array();
            z = pre.unaryExpr([&layer](double v) { return layer.activation.apply(v); });
        } else {
            z = std::move(pre);
        }
    }
    return t;
}

Matrix with_bias_column(const Matrix& m) {
    Matrix out(m.rows(), m.cols() + 1);
    out.leftCols(m.cols()) = m;
    out.col(m.cols()).setOnes();
    return out;
}

}  // namespace

TransferalResidue transferal_residue(const Mlp& net, const Alignment& alignment, const PairedDataset& source,
                                     const PairedDataset& target, ResidueVariant variant) {
    check_inputs(net, alignment, source, target);
    const std::size_t n = net.num_layers();
    const Matrix src_x = gather_rows(source.inputs, alignment.source_index);
    const Matrix src_y = gather_rows(source.labels, alignment.source_index);

    TransferalResidue res;
    res.variant = variant;
    res.label_shift = alignment.delta_y;
    res.pretrain_error = src_y - forward_batch(net, src_x);
    if (variant == ResidueVariant::LatentJacobian) {
        const Matrix z_src = latent_batch(net, src_x, n - 1);
        const Matrix z_tgt = latent_batch(net, target.inputs, n - 1);
        res.jacobian_correction = batched_jvp(net, n - 1, z_src, z_tgt - z_src);
    } else {
        res.jacobian_correction = batched_jvp(net, 0, src_x, alignment.delta_x);
    }
    res.q = res.label_shift - res.jacobian_correction + res.pretrain_error;
    return res;
}

LvaResult lva_one_layer(const Mlp& net, const Alignment& alignment, const PairedDataset& source,
                        const PairedDataset& target, const LvaOptions& options) {
    require_affine_output(net);
    TransferalResidue residue = transferal_residue(net, alignment, source, target, options.variant);
    const std::size_t n = net.num_layers();
    const Matrix latents = latent_batch(net, target.inputs, n - 1);
    const Matrix design = options.bias_column ? with_bias_column(latents) : latents;
    LstsqSolution solve = linalg::least_squares(design, residue.q, options.ridge);

    const Layer& last = net.layers().back();
    LayerDelta delta;
    delta.target_layer = n - 1;
    delta.d_weight = solve.coefficients.topRows(latents.cols()).transpose();
    delta.d_bias = options.bias_column ? Vector(solve.coefficients.row(latents.cols()).transpose())
                                       : Vector::Zero(last.out_dim());

    Layer updated = last;
    updated.weight += delta.d_weight;
    updated.bias += delta.d_bias;
    return {net.with_layer(n - 1, std::move(updated)), std::move(delta), std::move(residue), std::move(solve)};
}

LvaTwoLayerResult lva_two_layer(const Mlp& net, const Alignment& alignment, const PairedDataset& source,
                                const PairedDataset& target, int sweeps, const LvaOptions& options) {
    if (sweeps < 0) throw ArgumentError("lva_two_layer: sweeps must be >= 0");
    if (net.num_layers() < 2) throw ArgumentError("lva_two_layer: network needs at least two layers");
    require_affine_output(net);

    LvaResult one = lva_one_layer(net, alignment, source, target, options);
    LvaTwoLayerResult out{one.adapted, {}, {}, 0.0, 0.0, 0.0};
    const std::size_t n = net.num_layers();
    const std::size_t pen = n - 2, last = n - 1;
    const Layer& pen_layer = net.layer(pen);
    const Layer& last_layer = net.layer(last);
    out.one_layer_loss = mse_loss(one.adapted, target);
    out.target_loss = out.one_layer_loss;
    out.deltas = {LayerDelta{Matrix::Zero(pen_layer.out_dim(), pen_layer.in_dim()), Vector::Zero(pen_layer.out_dim()), pen},
                  one.delta};
    if (sweeps == 0) {
        out.objective_history.clear();
        return out;
    }

    const Matrix& q = one.residue.q;
    const Eigen::Index count = target.size();
    const Eigen::Index dy = net.output_dim();
    const Eigen::Index width = pen_layer.out_dim();  // l
    const Eigen::Index fan_in = pen_layer.in_dim();  // m
    const Matrix z_in = latent_batch(net, target.inputs, pen);  // inputs of the penultimate layer
    Matrix pre = z_in * pen_layer.weight.transpose();
    pre.rowwise() += pen_layer.bias.transpose();
    const Matrix slopes = activation_derivatives(pre, pen_layer.activation);
    const Matrix hidden = pre.unaryExpr([&pen_layer](double v) { return pen_layer.activation.apply(v); });
    const Matrix hidden_design = options.bias_column ? with_bias_column(hidden) : hidden;
    const double ridge = options.ridge;
    const double pen_ridge = options.penultimate_ridge;
    if (!(pen_ridge >= 0.0)) throw ArgumentError("lva_two_layer: penultimate_ridge must be >= 0");

    // Linearized iterate.
    Matrix last_coef = one.solve.coefficients;  // (l [+1]) x dy
    Matrix pen_dw = Matrix::Zero(width, fan_in);
    Vector pen_db = Vector::Zero(width);

    // Output response to a pre-activation correction P (rows = samples): (P .* slopes) W_n^T.
    const auto pen_response = [&](const Matrix& pre_delta) -> Matrix {
        return (pre_delta.array() * slopes.array()).matrix() * last_layer.weight.transpose();
    };
    const auto pen_pre_delta = [&](const Matrix& dw, const Vector& db) -> Matrix {
        Matrix p = z_in * dw.transpose();
        p.rowwise() += db.transpose();
        return p;
    };
    const auto objective = [&]() {
        const Matrix r = hidden_design * last_coef + pen_response(pen_pre_delta(pen_dw, pen_db)) - q;
        return r.squaredNorm() + ridge * last_coef.squaredNorm() + pen_ridge * (pen_dw.squaredNorm() + pen_db.squaredNorm());
    };
    // Rows (i, k) of the linear map from an l-vector v to dy outputs: W_n[k, :] .* slopes[i, :].
    const auto row_gain = [&](Eigen::Index i, Eigen::Index k) -> Vector {
        return (last_layer.weight.row(k).array() * slopes.row(i).array()).matrix().transpose();
    };

    out.objective_history.push_back(objective());
    double best_loss = out.one_layer_loss;
    for (int s = 0; s < sweeps; ++s) {
        // (i) last layer with the penultimate correction fixed.
        {
            const Matrix rhs = q - pen_response(pen_pre_delta(pen_dw, pen_db));
            last_coef = linalg::least_squares(hidden_design, rhs, ridge).coefficients;
            out.objective_history.push_back(objective());
        }
        // (ii) penultimate weights with the bias correction held.
        {
            const Matrix resid = q - hidden_design * last_coef - pen_response(pen_pre_delta(Matrix::Zero(width, fan_in), pen_db));
            if (pen_ridge > 0.0 && count * dy < width * fan_in) {
                // Row (i, k) of the design is gain(i, k) (x) z_i, so the dual Gram is
                // (gain gain^T) .* (z z^T) and never needs the wide design itself.
                Matrix gains(count * dy, width);
                Matrix zrep(count * dy, fan_in);
                Vector rhs(count * dy);
                for (Eigen::Index i = 0; i < count; ++i) {
                    for (Eigen::Index k = 0; k < dy; ++k) {
                        gains.row(i * dy + k) = row_gain(i, k).transpose();
                        zrep.row(i * dy + k) = z_in.row(i);
                        rhs(i * dy + k) = resid(i, k);
                    }
                }
                Matrix gram = (gains * gains.transpose()).cwiseProduct(zrep * zrep.transpose());
                gram.diagonal().array() += pen_ridge;
                const Vector alpha = gram.llt().solve(rhs);
                pen_dw = gains.transpose() * alpha.asDiagonal() * zrep;
            } else {
                Matrix design(count * dy, width * fan_in);
                Matrix rhs(count * dy, 1);
                for (Eigen::Index i = 0; i < count; ++i) {
                    for (Eigen::Index k = 0; k < dy; ++k) {
                        const Vector gain = row_gain(i, k);
                        const Eigen::Index row = i * dy + k;
                        for (Eigen::Index p = 0; p < width; ++p) design.row(row).segment(p * fan_in, fan_in) = gain[p] * z_in.row(i);
                        rhs(row, 0) = resid(i, k);
                    }
                }
                const Matrix sol = linalg::least_squares(design, rhs, pen_ridge).coefficients;
                pen_dw = Eigen::Map<const Matrix>(sol.data(), width, fan_in);
            }
            out.objective_history.push_back(objective());
        }
        // (iii) penultimate bias correction.
        {
            const Matrix resid = q - hidden_design * last_coef - pen_response(pen_pre_delta(pen_dw, Vector::Zero(width)));
            Matrix design(count * dy, width);
            Matrix rhs(count * dy, 1);
            for (Eigen::Index i = 0; i < count; ++i) {
                for (Eigen::Index k = 0; k < dy; ++k) {
                    design.row(i * dy + k) = row_gain(i, k).transpose();
                    rhs(i * dy + k, 0) = resid(i, k);
                }
            }
            pen_db = linalg::least_squares(design, rhs, pen_ridge).coefficients.col(0);
            out.objective_history.push_back(objective());
        }

        // Realize: scaled penultimate correction, exact last-layer refit, keep if it helps.
        for (int halvings = 0; halvings <= 10; ++halvings) {
            const double scale = std::ldexp(1.0, -halvings);
            Layer moved = pen_layer;
            moved.weight += scale * pen_dw;
            moved.bias += scale * pen_db;
            const Mlp intermediate = net.with_layer(pen, std::move(moved));
            LvaResult refit = lva_one_layer(intermediate, alignment, source, target, options);
            const double loss = mse_loss(refit.adapted, target);
            if (loss < best_loss) {
                best_loss = loss;
                out.accepted_scale = scale;
                out.deltas[0].d_weight = scale * pen_dw;
                out.deltas[0].d_bias = scale * pen_db;
                out.deltas[1].d_weight = refit.adapted.layer(last).weight - last_layer.weight;
                out.deltas[1].d_bias = refit.adapted.layer(last).bias - last_layer.bias;
                out.adapted = std::move(refit.adapted);
                break;
            }
        }
    }
    out.target_loss = best_loss;
    return out;
}

double homogeneous_norm(const Matrix& weight, const Vector& bias, bool append_unit_row) {
    Matrix aug = Matrix::Zero(weight.rows() + (append_unit_row ? 1 : 0), weight.cols() + 1);
    aug.topLeftCorner(weight.rows(), weight.cols()) = weight;
    aug.block(0, weight.cols(), weight.rows(), 1) = bias;
    if (append_unit_row) aug(weight.rows(), weight.cols()) = 1.0;
    return linalg::spectral_norm(aug);
}

namespace {

double layer_constant(const Layer& layer) {
    return layer.activation.lipschitz() * homogeneous_norm(layer.weight, layer.bias, true);
}

bool same_structure(const Mlp& a, const Mlp& b) {
    if (a.num_layers() != b.num_layers()) return false;
    for (std::size_t i = 0; i < a.num_layers(); ++i) {
        const Layer& la = a.layer(i);
        const Layer& lb = b.layer(i);
        if (la.weight.rows() != lb.weight.rows() || la.weight.cols() != lb.weight.cols() || la.activation != lb.activation) {
            return false;
        }
    }
    return true;
}

}  // namespace

TheoryReport verify_transfer_bound(const Mlp& f, const Mlp& g, std::size_t r, const Alignment& alignment,
                                   const PairedDataset& source, const PairedDataset& target) {
    if (!same_structure(f, g)) throw ArgumentError("verify_transfer_bound: f and g differ in structure");
    const std::size_t n = f.num_layers();
    if (r < 1 || r > n) throw ArgumentError("verify_transfer_bound: r must lie in [1, n]");
    check_inputs(f, alignment, source, target);
    const std::size_t split = n - r;

    TheoryReport rep;
    rep.kind = TheoryReport::Kind::Transfer;
    rep.finetuned_layers = r;
    for (std::size_t l = 0; l < split; ++l) {
        if (!(f.layer(l).weight == g.layer(l).weight && f.layer(l).bias == g.layer(l).bias)) rep.prefix_matches = false;
    }

    rep.epsilon_pretrained = std::sqrt((forward_batch(f, source.inputs) - source.labels).squaredNorm());
    double eps_sq = 0.0;
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        eps_sq = std::max(eps_sq, alignment.delta_x.row(i).squaredNorm() + alignment.delta_y.row(i).squaredNorm());
    }
    rep.epsilon_data = std::sqrt(eps_sq);

    rep.c_prefix = 1.0;
    for (std::size_t l = 0; l < split; ++l) rep.c_prefix *= layer_constant(f.layer(l));
    rep.c_suffix = 1.0;
    for (std::size_t l = split; l < n; ++l) rep.c_suffix *= layer_constant(f.layer(l));

    // Telescoping over the finetuned block: sum_k Lip(G after k) * |[dW_k db_k]| * C(F between split and k).
    rep.c_delta = 0.0;
    for (std::size_t k = split; k < n; ++k) {
        const Layer& fk = f.layer(k);
        const Layer& gk = g.layer(k);
        double after = 1.0;
        for (std::size_t l = k + 1; l < n; ++l) {
            after *= g.layer(l).activation.lipschitz() * linalg::spectral_norm(g.layer(l).weight);
        }
        double before = 1.0;
        for (std::size_t l = split; l < k; ++l) before *= layer_constant(f.layer(l));
        const double diff = fk.activation.lipschitz() * homogeneous_norm(gk.weight - fk.weight, gk.bias - fk.bias, false);
        rep.c_delta += after * diff * before;
    }

    double cx = 0.0;
    for (Eigen::Index i = 0; i < target.size(); ++i) cx = std::max(cx, target.inputs.row(i).squaredNorm() + 1.0);
    rep.c_xtilde = std::sqrt(cx);

    const double cp2 = rep.c_prefix * rep.c_prefix;
    rep.v1_bound = 2.0 * (rep.c_delta * rep.c_delta * cp2 * rep.c_xtilde * rep.c_xtilde +
                          rep.c_suffix * rep.c_suffix * cp2 * rep.epsilon_data * rep.epsilon_data);
    rep.rhs_bound = 3.0 * (rep.epsilon_pretrained * rep.epsilon_pretrained + rep.epsilon_data * rep.epsilon_data + rep.v1_bound);
    rep.observed_loss = mse_loss(g, target);
    rep.holds = rep.observed_loss <= rep.rhs_bound + kBoundSlack;
    rep.cdelta_leq_edata = rep.c_delta <= rep.epsilon_data;
    return rep;
}

TheoryReport verify_generalization_bound(const Mlp& g, const PairedDataset& adapt_set, const PairedDataset& test_set) {
    adapt_set.validate();
    test_set.validate();
    if (test_set.size() > adapt_set.size()) {
        throw ArgumentError("verify_generalization_bound: test set larger than the adaptation set");
    }
    if (adapt_set.input_dim() != g.input_dim() || adapt_set.label_dim() != g.output_dim() ||
        test_set.input_dim() != g.input_dim() || test_set.label_dim() != g.output_dim()) {
        throw ShapeError("verify_generalization_bound: dataset dimensions do not match the network");
    }
    const Alignment a = align_nearest(adapt_set, test_set, JointMetric{1.0});

    TheoryReport rep;
    rep.kind = TheoryReport::Kind::Generalization;
    rep.epsilon_data = a.epsilon_data;
    rep.c_prefix = 1.0;
    rep.c_suffix = 1.0;
    for (const Layer& layer : g.layers()) rep.c_suffix *= layer.activation.lipschitz() * linalg::spectral_norm(layer.weight);
    rep.n_adapt = static_cast<std::size_t>(adapt_set.size());
    rep.n_test = static_cast<std::size_t>(test_set.size());
    std::map<std::size_t, std::size_t> counts;
    rep.max_multiplicity = 0;
    for (std::size_t j : a.source_index) rep.max_multiplicity = std::max(rep.max_multiplicity, ++counts[j]);

    rep.adapt_loss = mse_loss(g, adapt_set);
    rep.observed_loss = mse_loss(g, test_set);
    const double e2 = rep.epsilon_data * rep.epsilon_data;
    rep.rhs_bound = 3.0 * (rep.c_suffix * rep.c_suffix + 1.0) * e2 +
                    3.0 * static_cast<double>(rep.max_multiplicity) * static_cast<double>(rep.n_adapt) /
                        static_cast<double>(rep.n_test) * rep.adapt_loss;
    rep.holds = rep.observed_loss <= rep.rhs_bound + kBoundSlack;
    return rep;
}

}  // namespace lva
