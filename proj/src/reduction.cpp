#include "lrnr/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lrnr {
namespace reduction {

SamplingSetX SamplingSetX::uniform_grid(std::size_t n_x, std::size_t n_t) {
    SamplingSetX s;
    for (std::size_t j = 0; j < n_t; ++j) {
        for (std::size_t i = 0; i < n_x; ++i) {
            // Uniform over the closed domain, endpoints included.
            const double x = n_x > 1 ? pde::kTwoPi * static_cast<double>(i) /
                                           static_cast<double>(n_x - 1)
                                     : 0.0;
            const double t = n_t > 1 ? pde::kTimeHorizon * static_cast<double>(j) /
                                           static_cast<double>(n_t - 1)
                                     : 0.0;
            s.points.push_back({x, t});
        }
    }
    return s;
}

PointKind classify_point(const pde::Point& p) {
    if (p.t == 0.0) return PointKind::Initial;
    if (p.x == 0.0 || p.x == pde::kTwoPi) return PointKind::Periodic;
    return PointKind::Interior;
}

TruncationResult truncate_zero_modes(const LrnrParams& params, const HyperParams& theta,
                                     const std::vector<PdeParams>& mu_probe, double eps_trunc) {
    params.validate();
    theta.validate();
    require(!mu_probe.empty(), "truncate_zero_modes: empty probe set");
    const std::size_t depth_l = params.depth();

    // Max hypernetwork output per mode across the probe set.
    std::vector<std::vector<double>> mode_max(depth_l);
    for (std::size_t l = 0; l < depth_l; ++l) mode_max[l].assign(params.ranks[l], 0.0);
    double global_max = 0.0;
    for (const PdeParams& mu : mu_probe) {
        const Coefficients c = hyper_forward(mu, theta);
        for (std::size_t l = 0; l < depth_l; ++l) {
            for (std::size_t i = 0; i < c.s[l].len(); ++i) {
                mode_max[l][i] = std::max(mode_max[l][i], c.s[l][i]);
                global_max = std::max(global_max, c.s[l][i]);
            }
        }
    }
    const double threshold = eps_trunc * global_max;

    TruncationResult out;
    out.params.widths = params.widths;
    out.params.act = params.act;
    out.hyper.box = theta.box;
    std::vector<std::vector<std::size_t>> kept(depth_l);
    for (std::size_t l = 0; l < depth_l; ++l) {
        for (std::size_t i = 0; i < params.ranks[l]; ++i) {
            if (mode_max[l][i] >= threshold) kept[l].push_back(i);
        }
        if (kept[l].empty()) {
            throw std::runtime_error("truncate_zero_modes: layer " + std::to_string(l + 1) +
                                     " truncated to rank 0");
        }
        out.kept_per_layer.push_back(kept[l].size());
    }

    for (std::size_t l = 0; l < depth_l; ++l) {
        const std::size_t r_new = kept[l].size();
        DenseMatrix u(params.u[l].rows, r_new);
        DenseMatrix v(params.v[l].rows, r_new);
        for (std::size_t j = 0; j < r_new; ++j) {
            const std::size_t src = kept[l][j];
            for (std::size_t i = 0; i < u.rows; ++i) u.at(i, j) = params.u[l].at(i, src);
            for (std::size_t i = 0; i < v.rows; ++i) v.at(i, j) = params.v[l].at(i, src);
        }
        out.params.ranks.push_back(r_new);
        out.params.u.push_back(std::move(u));
        out.params.v.push_back(std::move(v));
        out.params.b.push_back(params.b[l]);
    }

    // The hypernetwork keeps its hidden layers; only output rows are dropped.
    out.hyper.w = theta.w;
    out.hyper.b = theta.b;
    out.hyper.split = out.params.ranks;
    std::vector<std::size_t> keep_rows;
    std::size_t ofs = 0;
    for (std::size_t l = 0; l < depth_l; ++l) {
        for (std::size_t i : kept[l]) keep_rows.push_back(ofs + i);
        ofs += params.ranks[l];
    }
    const DenseMatrix& w_old = theta.w.back();
    const DenseVector& b_old = theta.b.back();
    DenseMatrix w_new(keep_rows.size(), w_old.cols);
    DenseVector b_new(keep_rows.size());
    for (std::size_t r = 0; r < keep_rows.size(); ++r) {
        for (std::size_t c = 0; c < w_old.cols; ++c) w_new.at(r, c) = w_old.at(keep_rows[r], c);
        b_new[r] = b_old[keep_rows[r]];
    }
    out.hyper.w.back() = std::move(w_new);
    out.hyper.b.back() = std::move(b_new);
    out.params.validate();
    out.hyper.validate();
    return out;
}

SnapshotSet harvest_snapshots(const LrnrParams& params, const HyperParams& theta,
                              const SamplingSetX& sampling, std::size_t n_perturb,
                              double sigma_factor, const std::vector<PdeParams>& mu_grid,
                              std::uint64_t seed) {
    params.validate();
    require(sigma_factor > 0.0 || n_perturb == 0, "harvest_snapshots: sigma must be positive");
    const std::size_t depth_l = params.depth();
    const std::size_t n_cols = mu_grid.size() * sampling.points.size() * (1 + n_perturb);
    SnapshotSet set;
    set.layers.reserve(depth_l - 1);
    for (std::size_t l = 0; l + 1 < depth_l; ++l)
        set.layers.emplace_back(params.widths[l + 1], n_cols);

    const double sig_x = sigma_factor * pde::kTwoPi;
    const double sig_t = sigma_factor * pde::kTimeHorizon;
    Rng rng(seed);
    std::size_t col = 0;
    for (std::size_t mi = 0; mi < mu_grid.size(); ++mi) {
        const Coefficients s = hyper_forward(mu_grid[mi], theta);
        for (std::size_t pi = 0; pi < sampling.points.size(); ++pi) {
            for (std::size_t k = 0; k <= n_perturb; ++k) {
                pde::Point p = sampling.points[pi];
                if (k > 0) {
                    p.x = std::clamp(p.x + sig_x * rng.normal(), 0.0, pde::kTwoPi);
                    p.t = std::clamp(p.t + sig_t * rng.normal(), 0.0, pde::kTimeHorizon);
                }
                const std::vector<DenseVector> states = hidden_states(p.x, p.t, params, s);
                for (std::size_t l = 0; l + 1 < depth_l; ++l) {
                    for (std::size_t i = 0; i < states[l].len(); ++i)
                        set.layers[l].at(i, col) = states[l][i];
                }
                set.tags.push_back({mi, pi, k, p, mu_grid[mi]});
                ++col;
            }
        }
    }
    return set;
}

namespace {

// Interpolation residual of column c of S against the current basis.
DenseVector interp_residual(const EimBasis& basis, const DenseMatrix& snapshots,
                            std::size_t col) {
    const std::size_t m = snapshots.rows;
    DenseVector v(m);
    for (std::size_t i = 0; i < m; ++i) v[i] = snapshots.at(i, col);
    if (basis.indices.empty()) return v;
    DenseVector sampled(basis.indices.size());
    for (std::size_t k = 0; k < basis.indices.size(); ++k) sampled[k] = v[basis.indices[k]];
    const DenseVector recon = eim_apply(basis, sampled);
    for (std::size_t i = 0; i < m; ++i) v[i] -= recon[i];
    return v;
}

void refactor_block(EimBasis& basis) {
    const std::size_t r = basis.indices.size();
    DenseMatrix block(r, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) block.at(i, j) = basis.xi.at(basis.indices[i], j);
    basis.block_lu = lu_factor(block);
}

}  // namespace

EimBasis eim_greedy(const DenseMatrix& snapshots, std::size_t r_hat) {
    require(snapshots.cols >= 1, "eim_greedy: empty snapshot set");
    require(r_hat >= 1, "eim_greedy: budget must be positive");
    const std::size_t m = snapshots.rows;
    EimBasis basis;
    basis.xi = DenseMatrix(m, 0);

    while (basis.indices.size() < std::min(r_hat, m)) {
        // Snapshot with the largest residual sup-norm; ties go to the lowest
        // column index.
        std::size_t best_col = 0;
        double best_norm = -1.0;
        DenseVector best_res;
        for (std::size_t c = 0; c < snapshots.cols; ++c) {
            DenseVector res = interp_residual(basis, snapshots, c);
            double nrm = 0.0;
            for (std::size_t i = 0; i < m; ++i) nrm = std::max(nrm, std::fabs(res[i]));
            if (nrm > best_norm) {
                best_norm = nrm;
                best_col = c;
                best_res = std::move(res);
            }
        }
        (void)best_col;
        if (best_norm < 1e-12) {
            basis.exhausted = true;
            break;
        }
        // Max-magnitude entry not already selected; lowest index wins ties.
        std::size_t best_idx = m;
        double best_mag = -1.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (std::find(basis.indices.begin(), basis.indices.end(), i) !=
                basis.indices.end())
                continue;
            const double mag = std::fabs(best_res[i]);
            if (mag > best_mag) {
                best_mag = mag;
                best_idx = i;
            }
        }
        if (best_idx == m || best_mag < 1e-12) {
            basis.exhausted = true;
            break;
        }
        DenseMatrix xi_new(m, basis.xi.cols + 1);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < basis.xi.cols; ++j) xi_new.at(i, j) = basis.xi.at(i, j);
            xi_new.at(i, basis.xi.cols) = best_res[i] / best_res[best_idx];
        }
        basis.xi = std::move(xi_new);
        basis.indices.push_back(best_idx);
        refactor_block(basis);
    }
    require(!basis.indices.empty(), "eim_greedy: no basis vector selected");
    return basis;
}

DenseVector eim_apply(const EimBasis& basis, const DenseVector& sampled_values) {
    require(sampled_values.len() == basis.indices.size(), "eim_apply: sample length mismatch");
    const DenseVector coeff = lu_solve(basis.block_lu, sampled_values);
    return matvec(basis.xi, coeff);
}

FastParams build_fastparams(const LrnrParams& params, const std::vector<EimBasis>& bases) {
    params.validate();
    const std::size_t depth_l = params.depth();
    require(bases.size() == depth_l - 1, "build_fastparams: need one basis per inner layer");
    FastParams fast;
    fast.ranks = params.ranks;
    fast.act = params.act;
    fast.v_in = params.v[0];
    fast.u_out = params.u[depth_l - 1];
    fast.b_out = params.b[depth_l - 1];
    for (std::size_t l = 0; l + 1 < depth_l; ++l) {
        const EimBasis& basis = bases[l];
        const std::size_t r_hat = basis.dim();
        fast.red_ranks.push_back(r_hat);
        DenseMatrix u_hat(r_hat, params.ranks[l]);
        DenseVector b_hat(r_hat);
        for (std::size_t k = 0; k < r_hat; ++k) {
            const std::size_t row = basis.indices[k];
            for (std::size_t j = 0; j < params.ranks[l]; ++j)
                u_hat.at(k, j) = params.u[l].at(row, j);
            b_hat[k] = params.b[l][row];
        }
        // Vhat^{l+1} = (P^T Xi)^{-T} (Xi^T V^{l+1}): solve the transposed
        // block column by column.
        const DenseMatrix proj = mat_t_mul(basis.xi, params.v[l + 1]);  // r_hat x r_{l+1}
        DenseMatrix block_t(r_hat, r_hat);
        for (std::size_t i = 0; i < r_hat; ++i)
            for (std::size_t j = 0; j < r_hat; ++j)
                block_t.at(i, j) = basis.xi.at(basis.indices[j], i);
        const LuFactorization block_t_lu = lu_factor(block_t);
        DenseMatrix v_hat(r_hat, params.ranks[l + 1]);
        DenseVector col(r_hat);
        for (std::size_t j = 0; j < params.ranks[l + 1]; ++j) {
            for (std::size_t i = 0; i < r_hat; ++i) col[i] = proj.at(i, j);
            const DenseVector sol = lu_solve(block_t_lu, col);
            for (std::size_t i = 0; i < r_hat; ++i) v_hat.at(i, j) = sol[i];
        }
        fast.u_hat.push_back(std::move(u_hat));
        fast.b_hat.push_back(std::move(b_hat));
        fast.v_hat.push_back(std::move(v_hat));
    }
    fast.validate();
    return fast;
}

std::vector<EimBasis> identity_bases(const LrnrParams& params) {
    std::vector<EimBasis> bases;
    for (std::size_t l = 0; l + 1 < params.depth(); ++l) {
        const std::size_t m = params.widths[l + 1];
        EimBasis b;
        b.xi = DenseMatrix::identity(m);
        for (std::size_t i = 0; i < m; ++i) b.indices.push_back(i);
        b.block_lu = lu_factor(b.xi);
        bases.push_back(std::move(b));
    }
    return bases;
}

std::vector<PdeParams> uniform_mu_grid(const ParamDomain& box, std::size_t points_per_axis) {
    require(points_per_axis >= 1, "uniform_mu_grid: need at least one point per axis");
    std::vector<std::size_t> counts(3);
    for (std::size_t a = 0; a < 3; ++a)
        counts[a] = (box.hi[a] - box.lo[a]) > 0.0 ? points_per_axis : 1;
    std::vector<PdeParams> grid;
    for (std::size_t i0 = 0; i0 < counts[0]; ++i0) {
        for (std::size_t i1 = 0; i1 < counts[1]; ++i1) {
            for (std::size_t i2 = 0; i2 < counts[2]; ++i2) {
                auto coord = [&](std::size_t a, std::size_t idx) {
                    if (counts[a] == 1) return box.lo[a];
                    return box.lo[a] + (box.hi[a] - box.lo[a]) * static_cast<double>(idx) /
                                           static_cast<double>(counts[a] - 1);
                };
                PdeParams mu;
                mu.mu1 = coord(0, i0);
                mu.mu2 = coord(1, i1);
                mu.mu3 = coord(2, i2);
                grid.push_back(mu);
            }
        }
    }
    return grid;
}

}  // namespace reduction
}  // namespace lrnr
