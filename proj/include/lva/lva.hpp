#pragma once

#include "lva/align.hpp"
#include "lva/dataset.hpp"
#include "lva/linalg.hpp"
#include "lva/net.hpp"

#include <string>
#include <vector>

namespace lva {

/// Which first-order term corrects the pretrained prediction:
///   LatentJacobian: J(f_n)(z_j) * (z~_i - z_j), with z the penultimate latent;
///   InputJacobian:  J(f)(x_j) * (x~_i - x_j).
enum class ResidueVariant { LatentJacobian, InputJacobian };

std::string to_string(ResidueVariant v);

/// q = label_shift - jacobian_correction + pretrain_error, one row per target sample.
struct TransferalResidue {
    Matrix q;
    Matrix label_shift;          // y~_i - y_{j_i}
    Matrix jacobian_correction;  // J * delta
    Matrix pretrain_error;       // y_{j_i} - f(x_{j_i})
    ResidueVariant variant = ResidueVariant::LatentJacobian;
};

/// Affine correction added to one layer: (W + d_weight, b + d_bias).
struct LayerDelta {
    Matrix d_weight;
    Vector d_bias;
    std::size_t target_layer = 0;  // 0-based layer index
};

struct LvaOptions {
    double ridge = 0.0;
    bool bias_column = true;  // false: strict z~ -> q regression without an intercept
    ResidueVariant variant = ResidueVariant::LatentJacobian;
    double penultimate_ridge = 0.0;  // two-layer only: ridge on the penultimate-layer correction
};

struct LvaResult {
    Mlp adapted;
    LayerDelta delta;
    TransferalResidue residue;
    LstsqSolution solve;  // diagnostics: rank, conditioning, fallback flags
};

struct LvaTwoLayerResult {
    Mlp adapted;
    std::vector<LayerDelta> deltas;  // {penultimate, last}
    /// Linearized objective at the one-layer initialization and after every half-step.
    std::vector<double> objective_history;
    /// Scale applied to the penultimate-layer correction when realizing the net (0 = rejected).
    double accepted_scale = 0.0;
    double one_layer_loss = 0.0;
    double target_loss = 0.0;
};

TransferalResidue transferal_residue(const Mlp& net, const Alignment& alignment, const PairedDataset& source,
                                     const PairedDataset& target, ResidueVariant variant);

/// Closed-form last-layer adaptation: regress q on the target penultimate latents.
LvaResult lva_one_layer(const Mlp& net, const Alignment& alignment, const PairedDataset& source,
                        const PairedDataset& target, const LvaOptions& options = {});

/// Two-layer iterative regression on the first-order expansion of the last two layers.
/// Unknowns: last-layer correction (dW_n, db_n) and a pre-activation correction
/// (dW_{n-1}, db_{n-1}) of the penultimate layer. Each sweep solves, by least squares,
///   (i) the last layer, (ii) dW_{n-1} with db_{n-1} held, (iii) db_{n-1}.
/// The net is realized from the linearized iterate with a backtracked scale on the
/// penultimate correction and an exact last-layer refit; it is only accepted when its
/// true target loss improves on the one-layer solution.
LvaTwoLayerResult lva_two_layer(const Mlp& net, const Alignment& alignment, const PairedDataset& source,
                                const PairedDataset& target, int sweeps, const LvaOptions& options = {});

/// Constants and observed loss for the finetuned-loss inequality chain
///   L(g) <= 3 (eps_pretrained^2 + eps_data^2 + v1_bound),
///   v1_bound = 2 (C_dF^2 C_prefix^2 C_x~^2 + C_F^2 C_prefix^2 eps_data^2).
/// All C constants are operator norms in homogeneous coordinates ((x, 1) with
/// affine layers as [W b; 0 1]), which bound both the Lipschitz constants and the
/// growth |h(x)| <= C |(x, 1)| needed by the chain when layers carry biases.
struct TheoryReport {
    enum class Kind { Transfer, Generalization };
    Kind kind = Kind::Transfer;

    double epsilon_pretrained = 0.0;  // sqrt(sum_j |f(x_j) - y_j|^2), the sum convention
    double epsilon_data = 0.0;        // unweighted joint (x, y) deviation of the alignment
    double c_prefix = 0.0;            // C_{F_{n-r}}
    double c_suffix = 0.0;            // C_F (Transfer) or C_g (Generalization)
    double c_delta = 0.0;             // C_{dF}
    double c_xtilde = 0.0;            // max_i |(x~_i, 1)|
    double v1_bound = 0.0;
    double rhs_bound = 0.0;
    double observed_loss = 0.0;
    bool holds = false;
    bool cdelta_leq_edata = false;    // sufficient condition C_dF <= eps_data, reported only
    bool prefix_matches = true;       // f and g share the first n - r layers bit-exactly
    std::size_t finetuned_layers = 1;

    // Generalization only.
    double adapt_loss = 0.0;
    std::size_t n_adapt = 0;
    std::size_t n_test = 0;
    std::size_t max_multiplicity = 1;  // most test samples aligned to one adapt sample
};

inline constexpr double kBoundSlack = 1e-9;

/// Spectral norm of [W b; 0 1] (or [dW db] for a correction).
double homogeneous_norm(const Matrix& weight, const Vector& bias, bool append_unit_row);

TheoryReport verify_transfer_bound(const Mlp& f, const Mlp& g, std::size_t r, const Alignment& alignment,
                                   const PairedDataset& source, const PairedDataset& target);

/// Held-out bound L_test(g) <= 3 (C_g^2 + 1) eps_test^2 + 3 m (N / N_test) L_adapt(g),
/// with eps_test the deviation between test and adapt sets and m the largest number of
/// test samples sharing one nearest adapt sample (m = 1 for injective matchings).
TheoryReport verify_generalization_bound(const Mlp& g, const PairedDataset& adapt_set, const PairedDataset& test_set);

}  // namespace lva
