#ifndef LRNR_TRAINING_HPP
#define LRNR_TRAINING_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lrnr/autodiff.hpp"
#include "lrnr/model.hpp"
#include "lrnr/pde.hpp"
#include "lrnr/reduction.hpp"

// Loss assembly and the three training loops: meta-learning of the bases and
// hypernetwork, per-mu fine-tuning of the coefficients on the full LRNR, and
// the fast phase driving the coefficients with FastLRNR gradients only.

namespace lrnr {
namespace training {

struct RegularizerWeights {
    double lambda_ortho = 1e-3;
    double lambda_sparse = 1e-4;
    double lambda_local = 1e-2;
    double gamma = 1.5;  // decay ratio of the banded sparsity penalty, >= 1
};

struct EpochRecord {
    std::size_t epoch = 0;
    double wall_s = 0.0;
    double loss = 0.0;
    double loss_residual = 0.0;
    double loss_boundary = 0.0;
    double reg_ortho = 0.0;
    double reg_sparse = 0.0;
    double reg_local = 0.0;
    double l1_rel_err = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
    std::string phase;
    std::vector<EpochRecord> records;
    bool aborted_nonfinite = false;
    bool diverged = false;
    std::size_t best_epoch = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    // Largest tape node / bound matrix seen by the phase's gradient engine.
    std::size_t max_node_len = 0;
    std::size_t max_matrix_elems = 0;
};

struct PhaseConfig {
    double lr = 1e-2;
    std::size_t epochs = 400;
    std::size_t n_interior = 1024;
    std::size_t n_initial = 256;
    std::size_t n_periodic = 256;
    std::uint64_t seed = 1234;
    std::size_t eval_interval = 100;  // L1 cadence in epochs; 0 disables
};

struct ParallelConfig {
    std::size_t threads = 2;
    std::size_t chunk = 64;  // terms per deterministic reduction chunk
};

// ---- regularizers (plain evaluation) ----

// Sum over layers of ||U^T U - I||_F^2 + ||V^T V - I||_F^2.
double reg_ortho(const LrnrParams& params);

// Mean over the mu batch of the per-layer l1 norms of relu(Gamma f(mu)),
// where Gamma has -1 on the diagonal and gamma on the superdiagonal.
double reg_sparse(const HyperParams& theta, const std::vector<PdeParams>& mu_batch,
                  double gamma);

// Sum over layers of ||s^l - s_init^l||_1.
double reg_local(const Coefficients& s, const Coefficients& s_init);

// ---- losses (plain evaluation; canonical definitions) ----

struct LossBreakdown {
    double total = 0.0;
    double residual = 0.0;
    double boundary = 0.0;
};

// Mean squared interior residual plus mean squared initial and periodic
// residuals, through meta_forward jets (per-sample mu).
LossBreakdown loss_meta(const LrnrParams& params, const HyperParams& theta,
                        const pde::CollocationBatch& batch);

// Same shape at fixed mu on the frozen LRNR.
LossBreakdown loss_tune(const Coefficients& s, const PdeParams& mu, const LrnrParams& params,
                        const pde::CollocationBatch& batch);

// Sparsely sampled l1 version on the FastLRNR: sums of absolute residuals
// over the classified points of X.
LossBreakdown loss_fast(const Coefficients& s, const PdeParams& mu, const FastParams& fast,
                        const reduction::SamplingSetX& sampling);

// ---- training loops ----

struct MetaSetup {
    std::vector<std::size_t> widths{2, 128, 128, 128, 1};
    std::vector<std::size_t> ranks{1, 16, 16, 16, 1};
    std::size_t hyper_depth = 3;
    std::size_t hyper_width = 0;  // 0 -> max(64, r_total)
    double init_bias_scale = 1.0;
    double hyper_out_weight_scale = 0.01;
    double hyper_out_bias = 1.0;
    std::uint64_t init_seed = 42;
    ParamDomain domain = ParamDomain::d1();
    RegularizerWeights regs;
    PhaseConfig phase{3e-3, 3000, 2048, 256, 256, 1234, 0};
    ParallelConfig par;
};

struct MetaResult {
    LrnrParams params;
    HyperParams hyper;
    TrainReport report;
};

// Adam minimization of loss_meta + lambda_ortho reg_ortho + lambda_sparse
// reg_sparse with fresh collocation/mu batches per epoch. Deterministic given
// the setup. Returns the best-loss iterate.
MetaResult meta_train(const MetaSetup& setup);

struct SolveResult {
    Coefficients coeffs;
    TrainReport report;
};

// Fine-tuning at fixed mu from the hypernetwork initialization, with
// non-negativity projection each step. When ref is non-null the l1 relative
// error is recorded every eval_interval epochs.
SolveResult fine_tune(const PdeParams& mu, const LrnrParams& params, const HyperParams& theta,
                      const PhaseConfig& cfg, const ParallelConfig& par,
                      const pde::GridField* ref = nullptr);

// Fast phase: Adam on loss_fast + lambda_local reg_local using only FastLRNR
// evaluations and gradients between initialization and return. Sets the
// diverged flag (and stops) when the loss exceeds 1e3 x its initial value.
SolveResult fast_solve(const PdeParams& mu, const HyperParams& theta, const FastParams& fast,
                       const reduction::SamplingSetX& sampling, const PhaseConfig& cfg,
                       double lambda_local, const ParallelConfig& par);

// ---- step-cost benchmark ----

struct BenchmarkRow {
    std::size_t m_max = 0;
    double t_lrnr_s = 0.0;
    double t_fast_s = 0.0;
    double ratio = 0.0;
};

struct BenchmarkConfig {
    std::vector<std::size_t> ranks{1, 16, 16, 16, 1};
    std::size_t r_hat = 5;
    std::size_t reps = 11;
    std::size_t warmup = 2;
    // Fast steps are tens of microseconds; a timed rep covers a block of them
    // and reports the per-step average, then the median over reps is taken.
    std::size_t fast_steps_per_rep = 32;
    PhaseConfig tune_phase;  // batch sizes for the full-LRNR step
    ParallelConfig par;
    std::uint64_t seed = 2024;
};

// Median wall time of one Adam step on the fine-tune path versus the fast
// path, for each maximum width in the list.
std::vector<BenchmarkRow> benchmark_step_time(const std::vector<std::size_t>& widths_list,
                                              const BenchmarkConfig& cfg);

// ---- chunked gradient engine (exposed for tests) ----

struct ExtraBindings {
    BoundFast fast;
    bool has_fast = false;
};

using SetupFn = std::function<ExtraBindings(TapeBindings&)>;
// Emits the fully weighted scalar term idx; adds its weighted component
// values to comps[4] = {residual, boundary, sparse, local}.
using EmitFn = std::function<NodeId(TapeBindings&, const ExtraBindings&, std::size_t idx,
                                    double* comps)>;

struct BatchGradResult {
    double value = 0.0;
    double comps[4] = {0.0, 0.0, 0.0, 0.0};
    std::vector<double> grad;
    std::size_t max_node_len = 0;
    std::size_t max_matrix_elems = 0;
};

// Deterministic chunk-parallel accumulation: fixed chunk boundaries,
// sequential in-chunk order, combination by chunk index. Results are
// identical for any thread count.
BatchGradResult run_batch_gradient(const Trainables& at, ParamSelector select,
                                   const SetupFn& setup, const EmitFn& emit,
                                   std::size_t n_terms, const ParallelConfig& par);

}  // namespace training
}  // namespace lrnr

#endif
