#ifndef LRNR_REDUCTION_HPP
#define LRNR_REDUCTION_HPP

#include <cstdint>
#include <vector>

#include "lrnr/linalg.hpp"
#include "lrnr/model.hpp"
#include "lrnr/pde.hpp"
#include "lrnr/pde_params.hpp"

// Model reduction of a meta-learned LRNR: drop coefficient modes the
// hypernetwork never activates, harvest hidden-state snapshots at sparse
// sampling points, build per-layer interpolation bases greedily, and assemble
// the reduced FastLRNR factors.

namespace lrnr {
namespace reduction {

// Snapshot provenance: which (mu, sampling point, perturbation) produced a
// column.
struct SnapshotTag {
    std::size_t mu_index;
    std::size_t point_index;
    std::size_t perturb_index;  // 0 = the unperturbed point
    pde::Point point;
    PdeParams mu;
};

// Harvested post-activation hidden states, one matrix per inner layer;
// columns are states z^l in R^{M_l}.
struct SnapshotSet {
    std::vector<DenseMatrix> layers;  // layers[l-1]: M_l x n_snapshots
    std::vector<SnapshotTag> tags;    // shared across layers, column-aligned
};

// Greedy interpolation basis for one layer: basis columns, interpolation
// indices (the columns of P), and the prefactored square block P^T Xi.
struct EimBasis {
    DenseMatrix xi;                    // M x r_hat
    std::vector<std::size_t> indices;  // distinct row indices, greedy order
    LuFactorization block_lu;          // LU of P^T Xi
    bool exhausted = false;  // true when residuals hit floor before the budget

    std::size_t dim() const { return indices.size(); }
};

// Sparse space-time sampling set; the default is the 4-by-3 uniform grid of
// 12 points over the closed domain.
struct SamplingSetX {
    std::vector<pde::Point> points;

    static SamplingSetX uniform_grid(std::size_t n_x, std::size_t n_t);
};

// Classification of a sampling point for the fast-phase loss.
enum class PointKind { Interior, Initial, Periodic };
PointKind classify_point(const pde::Point& p);

// Drops coefficient modes whose hypernetwork output stays below
// eps_trunc * (global max coefficient) across all probe values; removes the
// matching columns of U, V and rows of the hypernetwork output layer.
struct TruncationResult {
    LrnrParams params;
    HyperParams hyper;
    std::vector<std::size_t> kept_per_layer;
};
TruncationResult truncate_zero_modes(const LrnrParams& params, const HyperParams& theta,
                                     const std::vector<PdeParams>& mu_probe, double eps_trunc);

// Evaluates the LRNR at every sampling point and n_perturb Gaussian
// perturbations of it (clipped to the closed domain), for every mu in
// mu_grid, recording the post-activation states of all inner layers.
SnapshotSet harvest_snapshots(const LrnrParams& params, const HyperParams& theta,
                              const SamplingSetX& sampling, std::size_t n_perturb,
                              double sigma_factor, const std::vector<PdeParams>& mu_grid,
                              std::uint64_t seed);

// Classic greedy EIM on the snapshot columns: repeatedly pick the snapshot
// with the largest interpolation residual (sup-norm), normalize the residual
// at its max-magnitude entry, and add that entry's index to P. Stops early
// (exhausted flag) when the residual floor 1e-12 is reached.
EimBasis eim_greedy(const DenseMatrix& snapshots, std::size_t r_hat);

// Reconstruction Xi (P^T Xi)^{-1} sampled_values; interpolates exactly at the
// selected indices.
DenseVector eim_apply(const EimBasis& basis, const DenseVector& sampled_values);

// Uhat^l = rows of U^l at the selected indices, bhat^l likewise,
// Vhat^{l+1} = (V^{l+1,T} Xi (P^T Xi)^{-1})^T; input and output factors are
// copied unreduced.
FastParams build_fastparams(const LrnrParams& params, const std::vector<EimBasis>& bases);

// Identity reduction (Xi = P = I) for equivalence testing.
std::vector<EimBasis> identity_bases(const LrnrParams& params);

// Uniform probe/harvest grid over the active axes of the domain box
// (points_per_axis per active axis, the corner value on degenerate axes).
std::vector<PdeParams> uniform_mu_grid(const ParamDomain& box, std::size_t points_per_axis);

}  // namespace reduction
}  // namespace lrnr

#endif
