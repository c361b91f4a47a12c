#ifndef LRNR_MODEL_HPP
#define LRNR_MODEL_HPP

#include <cstddef>
#include <vector>

#include "lrnr/linalg.hpp"
#include "lrnr/pde_params.hpp"
#include "lrnr/rng.hpp"

// Network architectures: the low-rank INR (LRNR), its EIM-reduced counterpart
// (FastLRNR), and the hypernetwork mapping physical parameters to coefficient
// vectors. Forward evaluation comes in a value-only flavor and a jet flavor
// that propagates (u, u_x, u_t, u_xx) through every layer in one sweep.

namespace lrnr {

enum class ActivationKind { Tanh };

struct Activation {
    ActivationKind kind = ActivationKind::Tanh;

    double value(double a) const;
    double d1(double a) const;
    double d2(double a) const;

    // Derivatives recovered from a stored sigma = value(a).
    static double d1_from_value(double s) { return 1.0 - s * s; }
    static double d2_from_value(double s) { return -2.0 * s * (1.0 - s * s); }
    static double d3_from_value(double s) {
        const double d1 = 1.0 - s * s;
        return -2.0 * d1 * d1 + 4.0 * s * s * d1;
    }
};

// Per-layer factors (U, V, b) of the three-factor weight decomposition
// W^l = U^l diag(s^l) V^l^T. Layer l (1-based in the math) lives at index l-1.
struct LrnrParams {
    std::vector<std::size_t> widths;  // M_0 .. M_L
    std::vector<std::size_t> ranks;   // r_1 .. r_L
    std::vector<DenseMatrix> u;       // u[l]: widths[l+1] x ranks[l]
    std::vector<DenseMatrix> v;       // v[l]: widths[l]   x ranks[l]
    std::vector<DenseVector> b;       // b[l]: widths[l+1]
    Activation act;

    std::size_t depth() const { return ranks.size(); }
    std::size_t max_width() const;
    void validate() const;
};

// The only trainable object of the fine-tune and fast phases.
struct Coefficients {
    std::vector<DenseVector> s;  // s[l]: ranks[l]

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& v : s) n += v.len();
        return n;
    }
};

// Reduced factors produced by EIM. Inner layers l = 1..L-1 are subsampled;
// the input factor V^1 and the output factor U^L stay full (their dimensions
// are already small).
struct FastParams {
    std::vector<std::size_t> ranks;      // r_1 .. r_L (copied from the parent)
    std::vector<std::size_t> red_ranks;  // rhat_1 .. rhat_{L-1}
    DenseMatrix v_in;                    // M_0 x r_1
    std::vector<DenseMatrix> u_hat;      // u_hat[l-1]: rhat_l x r_l
    std::vector<DenseVector> b_hat;      // b_hat[l-1]: rhat_l
    std::vector<DenseMatrix> v_hat;      // v_hat[l-1]: rhat_l x r_{l+1}
    DenseMatrix u_out;                   // M_L x r_L
    DenseVector b_out;                   // M_L
    Activation act;

    std::size_t depth() const { return ranks.size(); }
    void validate() const;
};

// Dense feedforward network mapping normalized physical parameters to the
// stacked coefficient vector, with a final elementwise ReLU so outputs are
// non-negative. Carries the domain box used for input normalization.
struct HyperParams {
    std::vector<DenseMatrix> w;
    std::vector<DenseVector> b;
    std::vector<std::size_t> split;  // per-layer coefficient counts r_1..r_L
    ParamDomain box;

    std::size_t out_dim() const {
        std::size_t n = 0;
        for (std::size_t r : split) n += r;
        return n;
    }
    void validate() const;
};

// Input-derivative bundle carried through any network variant.
struct Jet {
    DenseVector value, dx, dt, dxx;
};

// Normalizes mu to [0,1]^3 over the box; degenerate axes map to 0.
DenseVector normalize_mu(const PdeParams& mu, const ParamDomain& box);

DenseVector inr_forward(double x, double t, const LrnrParams& params, const Coefficients& s);

// Identical math to inr_forward; distinct entry point for the frozen-bases
// phases.
DenseVector lrnr_forward(double x, double t, const LrnrParams& frozen, const Coefficients& s);

DenseVector fast_forward(double x, double t, const FastParams& fast, const Coefficients& s);

Coefficients hyper_forward(const PdeParams& mu, const HyperParams& theta);

DenseVector meta_forward(double x, double t, const PdeParams& mu, const LrnrParams& params,
                         const HyperParams& theta);

Jet jet_forward(double x, double t, const LrnrParams& params, const Coefficients& s);
Jet jet_forward(double x, double t, const FastParams& fast, const Coefficients& s);

// Post-activation hidden states z^1 .. z^{L-1} (the vectors EIM snapshots are
// harvested from).
std::vector<DenseVector> hidden_states(double x, double t, const LrnrParams& params,
                                       const Coefficients& s);

// Seeded random construction used by training initialization and tests.
LrnrParams make_lrnr_params(const std::vector<std::size_t>& widths,
                            const std::vector<std::size_t>& ranks, Rng& rng,
                            bool orthonormal_bases = true, double bias_scale = 0.5);
HyperParams make_hyper_params(const std::vector<std::size_t>& split, std::size_t hidden_depth,
                              std::size_t hidden_width, const ParamDomain& box, Rng& rng,
                              double out_weight_scale = 0.01, double out_bias = 0.5);
Coefficients make_coefficients(const std::vector<std::size_t>& ranks, Rng& rng, double lo = 0.0,
                               double hi = 1.0);

namespace kernels {

// Non-owning view of a jet: four parallel slots of length n.
struct JetView {
    double* v;
    double* dx;
    double* dt;
    double* dxx;
    std::size_t n;
};

struct ConstJetView {
    const double* v;
    const double* dx;
    const double* dt;
    const double* dxx;
    std::size_t n;
};

inline ConstJetView as_const(const JetView& j) { return {j.v, j.dx, j.dt, j.dxx, j.n}; }

// out = U diag(s) V^T in (+ b on the value slot). Also emits y = V^T in as
// four r-length blocks [v|dx|dt|dxx] in y_out (reused by the reverse pass).
void jet_affine_factored(const DenseMatrix& u, const double* s, const DenseMatrix& v,
                         const double* b, ConstJetView in, JetView out, double* y_out);

// out = A in + b, or A^T in + b when trans is set. b may be null.
void jet_affine_dense(const DenseMatrix& a, bool trans, const double* b, ConstJetView in,
                      JetView out);

// out_slot = s ⊙ in_slot for all four slots.
void jet_scale(const double* s, ConstJetView in, JetView out);

// Activation jet: value σ(a), first-derivative chain on dx/dt, second-order
// chain on dxx.
void jet_activation(const Activation& act, ConstJetView in, JetView out);

// Value-only variants.
void value_affine_factored(const DenseMatrix& u, const double* s, const DenseMatrix& v,
                           const double* b, const double* in, double* out, double* y_scratch);
void value_affine_dense(const DenseMatrix& a, bool trans, const double* b, const double* in,
                        double* out);
void value_activation(const Activation& act, const double* in, double* out, std::size_t n);

}  // namespace kernels

}  // namespace lrnr

#endif
