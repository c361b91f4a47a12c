#include "lrnr/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <thread>

namespace lrnr {
namespace training {

namespace {

double now_seconds(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t epoch_seed(std::uint64_t base, std::size_t epoch) {
    // splitmix-style scramble keeps per-epoch batches decorrelated
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

double reg_ortho(const LrnrParams& params) {
    double acc = 0.0;
    for (std::size_t l = 0; l < params.depth(); ++l) {
        const DenseMatrix gu = mat_t_mul(params.u[l], params.u[l]);
        const DenseMatrix gv = mat_t_mul(params.v[l], params.v[l]);
        for (std::size_t i = 0; i < gu.rows; ++i) {
            for (std::size_t j = 0; j < gu.cols; ++j) {
                const double eu = gu.at(i, j) - (i == j ? 1.0 : 0.0);
                const double ev = gv.at(i, j) - (i == j ? 1.0 : 0.0);
                acc += eu * eu + ev * ev;
            }
        }
    }
    return acc;
}

double reg_sparse(const HyperParams& theta, const std::vector<PdeParams>& mu_batch,
                  double gamma) {
    require(gamma >= 1.0, "reg_sparse: gamma must be >= 1");
    if (mu_batch.empty()) return 0.0;
    double acc = 0.0;
    for (const PdeParams& mu : mu_batch) {
        const Coefficients c = hyper_forward(mu, theta);
        for (const DenseVector& f : c.s) {
            for (std::size_t i = 0; i + 1 < f.len(); ++i) {
                const double arg = -f[i] + gamma * f[i + 1];
                if (arg > 0.0) acc += arg;
            }
        }
    }
    return acc / static_cast<double>(mu_batch.size());
}

double reg_local(const Coefficients& s, const Coefficients& s_init) {
    require(s.s.size() == s_init.s.size(), "reg_local: layer count mismatch");
    double acc = 0.0;
    for (std::size_t l = 0; l < s.s.size(); ++l) {
        require(s.s[l].len() == s_init.s[l].len(), "reg_local: rank mismatch");
        for (std::size_t i = 0; i < s.s[l].len(); ++i)
            acc += std::fabs(s.s[l][i] - s_init.s[l][i]);
    }
    return acc;
}

namespace {

template <typename Forward>
LossBreakdown pinn_loss(const pde::CollocationBatch& batch, const Forward& fwd) {
    LossBreakdown out;
    if (!batch.interior.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < batch.interior.size(); ++i) {
            const double r = fwd.interior_residual(i);
            acc += r * r;
        }
        out.residual = acc / static_cast<double>(batch.interior.size());
    }
    if (!batch.initial_x.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < batch.initial_x.size(); ++i) {
            const double r = fwd.initial_residual(i);
            acc += r * r;
        }
        out.boundary += acc / static_cast<double>(batch.initial_x.size());
    }
    if (!batch.periodic_t.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < batch.periodic_t.size(); ++i) {
            const double r = fwd.periodic_residual(i);
            acc += r * r;
        }
        out.boundary += acc / static_cast<double>(batch.periodic_t.size());
    }
    out.total = out.residual + out.boundary;
    return out;
}

}  // namespace

LossBreakdown loss_meta(const LrnrParams& params, const HyperParams& theta,
                        const pde::CollocationBatch& batch) {
    require(batch.interior.empty() || batch.interior_mu.size() == batch.interior.size(),
            "loss_meta: batch lacks per-sample mu");
    struct Fwd {
        const LrnrParams& params;
        const HyperParams& theta;
        const pde::CollocationBatch& batch;
        double interior_residual(std::size_t i) const {
            const Coefficients s = hyper_forward(batch.interior_mu[i], theta);
            const Jet jet = jet_forward(batch.interior[i].x, batch.interior[i].t, params, s);
            return pde::residual(jet, batch.interior_mu[i]);
        }
        double initial_residual(std::size_t i) const {
            const Coefficients s = hyper_forward(batch.initial_mu[i], theta);
            const double x = batch.initial_x[i];
            return lrnr_forward(x, 0.0, params, s)[0] - std::sin(x);
        }
        double periodic_residual(std::size_t i) const {
            const Coefficients s = hyper_forward(batch.periodic_mu[i], theta);
            const double t = batch.periodic_t[i];
            return lrnr_forward(0.0, t, params, s)[0] -
                   lrnr_forward(pde::kTwoPi, t, params, s)[0];
        }
    };
    const LossBreakdown out = pinn_loss(batch, Fwd{params, theta, batch});
    if (!std::isfinite(out.total)) throw NonFiniteError(-1);
    return out;
}

LossBreakdown loss_tune(const Coefficients& s, const PdeParams& mu, const LrnrParams& params,
                        const pde::CollocationBatch& batch) {
    struct Fwd {
        const Coefficients& s;
        const PdeParams& mu;
        const LrnrParams& params;
        const pde::CollocationBatch& batch;
        double interior_residual(std::size_t i) const {
            const Jet jet = jet_forward(batch.interior[i].x, batch.interior[i].t, params, s);
            return pde::residual(jet, mu);
        }
        double initial_residual(std::size_t i) const {
            const double x = batch.initial_x[i];
            return lrnr_forward(x, 0.0, params, s)[0] - std::sin(x);
        }
        double periodic_residual(std::size_t i) const {
            const double t = batch.periodic_t[i];
            return lrnr_forward(0.0, t, params, s)[0] -
                   lrnr_forward(pde::kTwoPi, t, params, s)[0];
        }
    };
    const LossBreakdown out = pinn_loss(batch, Fwd{s, mu, params, batch});
    if (!std::isfinite(out.total)) throw NonFiniteError(-1);
    return out;
}

LossBreakdown loss_fast(const Coefficients& s, const PdeParams& mu, const FastParams& fast,
                        const reduction::SamplingSetX& sampling) {
    LossBreakdown out;
    for (const pde::Point& p : sampling.points) {
        switch (reduction::classify_point(p)) {
            case reduction::PointKind::Interior: {
                const Jet jet = jet_forward(p.x, p.t, fast, s);
                out.residual += std::fabs(pde::residual(jet, mu));
                break;
            }
            case reduction::PointKind::Initial: {
                out.boundary += std::fabs(fast_forward(p.x, 0.0, fast, s)[0] - std::sin(p.x));
                break;
            }
            case reduction::PointKind::Periodic: {
                out.boundary += std::fabs(fast_forward(0.0, p.t, fast, s)[0] -
                                          fast_forward(pde::kTwoPi, p.t, fast, s)[0]);
                break;
            }
        }
    }
    out.total = out.residual + out.boundary;
    if (!std::isfinite(out.total)) throw NonFiniteError(-1);
    return out;
}

BatchGradResult run_batch_gradient(const Trainables& at, ParamSelector select,
                                   const SetupFn& setup, const EmitFn& emit,
                                   std::size_t n_terms, const ParallelConfig& par) {
    ParamPacker packer(at, select);
    BatchGradResult out;
    out.grad.assign(packer.size(), 0.0);
    if (n_terms == 0) return out;
    const std::size_t chunk = std::max<std::size_t>(1, par.chunk);
    const std::size_t n_chunks = (n_terms + chunk - 1) / chunk;

    struct ChunkOut {
        double value = 0.0;
        double comps[4] = {0.0, 0.0, 0.0, 0.0};
        std::vector<double> grad;
    };
    std::vector<ChunkOut> chunks(n_chunks);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors;
    std::vector<std::size_t> stats_len, stats_mat;
    std::mutex stats_mu;

    auto work = [&]() {
        try {
            Tape tape;
            TapeBindings ctx = make_bindings(tape, at, select);
            ExtraBindings extras = setup ? setup(ctx) : ExtraBindings{};
            tape.set_watermark();
            while (true) {
                const std::size_t c = next.fetch_add(1);
                if (c >= n_chunks) break;
                ChunkOut& o = chunks[c];
                const std::size_t lo = c * chunk;
                const std::size_t hi = std::min(n_terms, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) {
                    tape.reset_to_watermark();
                    const NodeId root = emit(ctx, extras, i, o.comps);
                    tape.check_finite(root);
                    tape.backward(root, 1.0);
                    o.value += tape.value(root);
                }
                o.grad = collect_grads(tape, ctx);
                tape.clear_param_grads();
            }
            std::lock_guard<std::mutex> lock(stats_mu);
            stats_len.push_back(tape.max_node_len());
            stats_mat.push_back(tape.max_matrix_elems());
        } catch (...) {
            std::lock_guard<std::mutex> lock(stats_mu);
            errors.push_back(std::current_exception());
        }
    };

    const std::size_t n_threads = std::min<std::size_t>(std::max<std::size_t>(1, par.threads),
                                                        n_chunks);
    if (n_threads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (!errors.empty()) std::rethrow_exception(errors.front());

    // Fixed-order combination: by chunk index, independent of scheduling.
    for (const ChunkOut& o : chunks) {
        out.value += o.value;
        for (int k = 0; k < 4; ++k) out.comps[k] += o.comps[k];
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += o.grad[i];
    }
    for (std::size_t v : stats_len) out.max_node_len = std::max(out.max_node_len, v);
    for (std::size_t v : stats_mat) out.max_matrix_elems = std::max(out.max_matrix_elems, v);
    return out;
}

namespace {

// Squared-residual PINN terms shared by the meta and fine-tune phases. The
// coefficient nodes are either hypernetwork outputs (meta) or bound leaves
// (fine-tune).
struct PinnTermEmitter {
    const pde::CollocationBatch* batch;
    double w_interior = 0.0, w_initial = 0.0, w_periodic = 0.0;
    bool meta_mode = false;       // per-sample mu through the hypernetwork
    PdeParams fixed_mu;           // used when !meta_mode
    double lambda_sparse = 0.0;   // meta only
    double gamma = 1.5;

    NodeId operator()(TapeBindings& ctx, const ExtraBindings&, std::size_t idx,
                      double* comps) const {
        Tape& tp = ctx.tape;
        const std::size_t n_int = batch->interior.size();
        const std::size_t n_ic = batch->initial_x.size();
        auto s_nodes_for = [&](const PdeParams& mu) {
            return meta_mode ? emit_hyper(tp, mu, ctx.hyper) : ctx.coeffs.s_leaves;
        };
        if (idx < n_int) {
            const PdeParams mu = meta_mode ? batch->interior_mu[idx] : fixed_mu;
            const std::vector<NodeId> s_nodes = s_nodes_for(mu);
            const pde::Point p = batch->interior[idx];
            const NodeId jet = emit_lrnr_jet(tp, p.x, p.t, ctx.lrnr, s_nodes);
            const NodeId sq = tp.square(tp.residual_cdr(jet, mu));
            const NodeId term = tp.scale(sq, w_interior);
            comps[0] += tp.value(term);
            if (meta_mode && lambda_sparse > 0.0) {
                std::vector<NodeId> ids{term};
                std::vector<double> ws{1.0};
                for (const NodeId sn : s_nodes) {
                    ids.push_back(tp.banded_decay_penalty(sn, gamma));
                    ws.push_back(lambda_sparse * w_interior);
                }
                const NodeId tot = tp.weighted_sum(ids, ws);
                comps[2] += tp.value(tot) - tp.value(term);
                return tot;
            }
            return term;
        }
        if (idx < n_int + n_ic) {
            const std::size_t j = idx - n_int;
            const PdeParams mu = meta_mode ? batch->initial_mu[j] : fixed_mu;
            const std::vector<NodeId> s_nodes = s_nodes_for(mu);
            const double x = batch->initial_x[j];
            const NodeId jet = emit_lrnr_jet(tp, x, 0.0, ctx.lrnr, s_nodes);
            const NodeId r = tp.sub_const(tp.pick_value(jet, 0), std::sin(x));
            const NodeId term = tp.scale(tp.square(r), w_initial);
            comps[1] += tp.value(term);
            return term;
        }
        const std::size_t j = idx - n_int - n_ic;
        const PdeParams mu = meta_mode ? batch->periodic_mu[j] : fixed_mu;
        const std::vector<NodeId> s_nodes = s_nodes_for(mu);
        const double t = batch->periodic_t[j];
        const NodeId jet0 = emit_lrnr_jet(tp, 0.0, t, ctx.lrnr, s_nodes);
        const NodeId jet1 = emit_lrnr_jet(tp, pde::kTwoPi, t, ctx.lrnr, s_nodes);
        const NodeId r = tp.sub(tp.pick_value(jet0, 0), tp.pick_value(jet1, 0));
        const NodeId term = tp.scale(tp.square(r), w_periodic);
        comps[1] += tp.value(term);
        return term;
    }
};

double safe_inv(std::size_t n) { return n == 0 ? 0.0 : 1.0 / static_cast<double>(n); }

}  // namespace

MetaResult meta_train(const MetaSetup& setup) {
    std::size_t r_total = 0;
    for (std::size_t r : setup.ranks) r_total += r;
    const std::size_t hyper_width =
        setup.hyper_width > 0 ? setup.hyper_width : std::max<std::size_t>(64, r_total);

    Rng rng(setup.init_seed);
    MetaResult out;
    out.params = make_lrnr_params(setup.widths, setup.ranks, rng, true, setup.init_bias_scale);
    out.hyper = make_hyper_params(setup.ranks, setup.hyper_depth, hyper_width, setup.domain,
                                  rng, setup.hyper_out_weight_scale, setup.hyper_out_bias);
    out.report.phase = "meta";
    if (setup.phase.epochs == 0) return out;

    Trainables at{&out.params, &out.hyper, nullptr};
    ParamPacker packer(at, ParamSelector::BasesBiasesAndHyper);
    std::vector<double> x = packer.pack();
    AdamState adam = AdamState::make(x.size(), setup.phase.lr);

    LrnrParams best_params = out.params;
    HyperParams best_hyper = out.hyper;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t e = 1; e <= setup.phase.epochs; ++e) {
        const pde::CollocationBatch batch = pde::sample_collocation(
            epoch_seed(setup.phase.seed, e), setup.phase.n_interior, setup.phase.n_initial,
            setup.phase.n_periodic, setup.domain, true);
        PinnTermEmitter emitter;
        emitter.batch = &batch;
        emitter.w_interior = safe_inv(batch.interior.size());
        emitter.w_initial = safe_inv(batch.initial_x.size());
        emitter.w_periodic = safe_inv(batch.periodic_t.size());
        emitter.meta_mode = true;
        emitter.lambda_sparse = setup.regs.lambda_sparse;
        emitter.gamma = setup.regs.gamma;
        const std::size_t n_terms =
            batch.interior.size() + batch.initial_x.size() + batch.periodic_t.size();

        BatchGradResult bg;
        GradResult ro;
        try {
            bg = run_batch_gradient(at, ParamSelector::BasesBiasesAndHyper, nullptr,
                                    std::cref(emitter), n_terms, setup.par);
            const double lo = setup.regs.lambda_ortho;
            ro = grad(
                [&](TapeBindings& ctx) {
                    std::vector<NodeId> ids;
                    std::vector<double> ws;
                    for (std::size_t l = 0; l < ctx.at.lrnr->depth(); ++l) {
                        ids.push_back(ctx.tape.gram_ortho_penalty(ctx.lrnr.u_slots[l]));
                        ws.push_back(lo);
                        ids.push_back(ctx.tape.gram_ortho_penalty(ctx.lrnr.v_slots[l]));
                        ws.push_back(lo);
                    }
                    return ctx.tape.weighted_sum(ids, ws);
                },
                at, ParamSelector::BasesBiasesAndHyper);
        } catch (const NonFiniteError&) {
            out.report.aborted_nonfinite = true;
            break;
        }

        const double loss = bg.value + ro.value;
        EpochRecord rec;
        rec.epoch = e;
        rec.wall_s = now_seconds(t0);
        rec.loss = loss;
        rec.loss_residual = bg.comps[0];
        rec.loss_boundary = bg.comps[1];
        rec.reg_sparse = bg.comps[2];
        rec.reg_ortho = ro.value;
        out.report.records.push_back(rec);
        out.report.max_node_len = std::max(out.report.max_node_len, bg.max_node_len);
        out.report.max_matrix_elems = std::max(out.report.max_matrix_elems, bg.max_matrix_elems);

        if (loss < out.report.best_loss) {
            out.report.best_loss = loss;
            out.report.best_epoch = e;
            best_params = out.params;
            best_hyper = out.hyper;
        }

        std::vector<double> g(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = bg.grad[i] + ro.grad[i];
        adam_step(adam, x, g);
        packer.unpack(x);
    }

    out.params = std::move(best_params);
    out.hyper = std::move(best_hyper);
    return out;
}

SolveResult fine_tune(const PdeParams& mu, const LrnrParams& params, const HyperParams& theta,
                      const PhaseConfig& cfg, const ParallelConfig& par,
                      const pde::GridField* ref) {
    LrnrParams frozen = params;
    SolveResult out;
    out.coeffs = hyper_forward(mu, theta);
    out.report.phase = "fine-tune";
    if (cfg.epochs == 0) return out;

    Trainables at{&frozen, nullptr, &out.coeffs};
    ParamPacker packer(at, ParamSelector::CoefficientsOnly);
    std::vector<double> x = packer.pack();
    AdamState adam = AdamState::make(x.size(), cfg.lr);
    Coefficients best = out.coeffs;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const pde::CollocationBatch batch =
            pde::sample_collocation(epoch_seed(cfg.seed, e), cfg.n_interior, cfg.n_initial,
                                    cfg.n_periodic, ParamDomain{}, false);
        PinnTermEmitter emitter;
        emitter.batch = &batch;
        emitter.w_interior = safe_inv(batch.interior.size());
        emitter.w_initial = safe_inv(batch.initial_x.size());
        emitter.w_periodic = safe_inv(batch.periodic_t.size());
        emitter.meta_mode = false;
        emitter.fixed_mu = mu;
        const std::size_t n_terms =
            batch.interior.size() + batch.initial_x.size() + batch.periodic_t.size();

        BatchGradResult bg;
        try {
            bg = run_batch_gradient(at, ParamSelector::CoefficientsOnly, nullptr,
                                    std::cref(emitter), n_terms, par);
        } catch (const NonFiniteError&) {
            out.report.aborted_nonfinite = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = e;
        rec.wall_s = now_seconds(t0);
        rec.loss = bg.value;
        rec.loss_residual = bg.comps[0];
        rec.loss_boundary = bg.comps[1];
        if (ref != nullptr && cfg.eval_interval > 0 &&
            (e % cfg.eval_interval == 0 || e == cfg.epochs)) {
            rec.l1_rel_err = pde::l1_relative_error(
                [&](double px, double pt) { return lrnr_forward(px, pt, frozen, out.coeffs)[0]; },
                *ref);
        }
        out.report.records.push_back(rec);
        out.report.max_node_len = std::max(out.report.max_node_len, bg.max_node_len);
        out.report.max_matrix_elems = std::max(out.report.max_matrix_elems, bg.max_matrix_elems);

        if (bg.value < out.report.best_loss) {
            out.report.best_loss = bg.value;
            out.report.best_epoch = e;
            best = out.coeffs;
        }

        adam_step(adam, x, bg.grad);
        packer.project_nonnegative_coeffs(x);
        packer.unpack(x);
    }

    out.coeffs = std::move(best);
    return out;
}

SolveResult fast_solve(const PdeParams& mu, const HyperParams& theta, const FastParams& fast,
                       const reduction::SamplingSetX& sampling, const PhaseConfig& cfg,
                       double lambda_local, const ParallelConfig& par) {
    SolveResult out;
    out.coeffs = hyper_forward(mu, theta);
    out.report.phase = lambda_local > 0.0 ? "fast" : "fast-naive";
    if (cfg.epochs == 0) return out;

    const Coefficients s_init = out.coeffs;
    Trainables at{nullptr, nullptr, &out.coeffs};
    ParamPacker packer(at, ParamSelector::CoefficientsOnly);
    std::vector<double> x = packer.pack();
    AdamState adam = AdamState::make(x.size(), cfg.lr);
    Coefficients best = out.coeffs;

    const std::size_t n_points = sampling.points.size();
    const std::size_t n_terms = n_points + (lambda_local > 0.0 ? 1 : 0);
    SetupFn setup = [&](TapeBindings& ctx) {
        ExtraBindings ex;
        ex.fast = bind_fast(ctx.tape, fast);
        ex.has_fast = true;
        return ex;
    };
    EmitFn emit = [&](TapeBindings& ctx, const ExtraBindings& ex, std::size_t idx,
                      double* comps) -> NodeId {
        Tape& tp = ctx.tape;
        if (idx < n_points) {
            const pde::Point p = sampling.points[idx];
            switch (reduction::classify_point(p)) {
                case reduction::PointKind::Interior: {
                    const NodeId jet = emit_fast_jet(tp, p.x, p.t, ex.fast, ctx.coeffs.s_leaves);
                    const NodeId term = tp.abs_val(tp.residual_cdr(jet, mu));
                    comps[0] += tp.value(term);
                    return term;
                }
                case reduction::PointKind::Initial: {
                    const NodeId jet = emit_fast_jet(tp, p.x, 0.0, ex.fast, ctx.coeffs.s_leaves);
                    const NodeId term =
                        tp.abs_val(tp.sub_const(tp.pick_value(jet, 0), std::sin(p.x)));
                    comps[1] += tp.value(term);
                    return term;
                }
                case reduction::PointKind::Periodic:
                default: {
                    const NodeId j0 = emit_fast_jet(tp, 0.0, p.t, ex.fast, ctx.coeffs.s_leaves);
                    const NodeId j1 =
                        emit_fast_jet(tp, pde::kTwoPi, p.t, ex.fast, ctx.coeffs.s_leaves);
                    const NodeId term =
                        tp.abs_val(tp.sub(tp.pick_value(j0, 0), tp.pick_value(j1, 0)));
                    comps[1] += tp.value(term);
                    return term;
                }
            }
        }
        // locality regularizer toward the hypernetwork prediction
        std::vector<NodeId> ids;
        std::vector<double> ws;
        for (std::size_t l = 0; l < ctx.coeffs.s_leaves.size(); ++l) {
            ids.push_back(tp.l1_to_target(ctx.coeffs.s_leaves[l], s_init.s[l].data.data(),
                                          s_init.s[l].len()));
            ws.push_back(lambda_local);
        }
        const NodeId term = tp.weighted_sum(ids, ws);
        comps[3] += tp.value(term);
        return term;
    };

    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        BatchGradResult bg;
        try {
            bg = run_batch_gradient(at, ParamSelector::CoefficientsOnly, setup, emit, n_terms,
                                    par);
        } catch (const NonFiniteError&) {
            out.report.aborted_nonfinite = true;
            out.report.diverged = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = e;
        rec.wall_s = now_seconds(t0);
        rec.loss = bg.value;
        rec.loss_residual = bg.comps[0];
        rec.loss_boundary = bg.comps[1];
        rec.reg_local = bg.comps[3];
        out.report.records.push_back(rec);
        out.report.max_node_len = std::max(out.report.max_node_len, bg.max_node_len);
        out.report.max_matrix_elems = std::max(out.report.max_matrix_elems, bg.max_matrix_elems);

        if (e == 1) initial_loss = bg.value;
        if (bg.value > 1e3 * initial_loss) {
            out.report.diverged = true;
            break;
        }
        if (bg.value < out.report.best_loss) {
            out.report.best_loss = bg.value;
            out.report.best_epoch = e;
            best = out.coeffs;
        }

        adam_step(adam, x, bg.grad);
        packer.project_nonnegative_coeffs(x);
        packer.unpack(x);
    }

    out.coeffs = std::move(best);
    return out;
}

namespace {

// Per-width benchmark state: one prepared fine-tune step and one fast step,
// both including their Adam update.
struct BenchContext {
    std::size_t m_max;
    PdeParams mu{1.0, 0.5, 0.5};
    reduction::SamplingSetX sampling = reduction::SamplingSetX::uniform_grid(4, 3);
    BenchmarkConfig cfg;
    LrnrParams params;
    FastParams fast;
    Coefficients s_tune, s_fast, s_init;
    Trainables at_tune, at_fast;
    std::unique_ptr<ParamPacker> packer_tune, packer_fast;
    std::vector<double> x_tune, x_fast;
    AdamState adam_tune, adam_fast;
    std::size_t tick = 0;

    BenchContext(std::size_t m, const BenchmarkConfig& bench_cfg) : m_max(m), cfg(bench_cfg) {
        const std::size_t depth_l = cfg.ranks.size();
        std::vector<std::size_t> widths(depth_l + 1, m_max);
        widths.front() = 2;
        widths.back() = 1;
        Rng rng(cfg.seed);
        params = make_lrnr_params(widths, cfg.ranks, rng, true, 0.5);
        s_tune = make_coefficients(cfg.ranks, rng, 0.2, 1.0);
        s_fast = s_tune;
        s_init = s_tune;

        // FastLRNR factors with the benchmark's reduced dimensions; values
        // are irrelevant for step cost, shapes are what matters.
        fast.ranks = cfg.ranks;
        fast.act = params.act;
        fast.v_in = params.v.front();
        fast.u_out = params.u.back();
        fast.b_out = params.b.back();
        for (std::size_t l = 0; l + 1 < depth_l; ++l) {
            const std::size_t r_hat = std::min(cfg.r_hat, widths[l + 1]);
            fast.red_ranks.push_back(r_hat);
            DenseMatrix u_hat(r_hat, cfg.ranks[l]);
            for (double& v : u_hat.data) v = rng.normal();
            DenseVector b_hat(r_hat);
            for (double& v : b_hat.data) v = 0.1 * rng.normal();
            DenseMatrix v_hat(r_hat, cfg.ranks[l + 1]);
            for (double& v : v_hat.data) v = rng.normal();
            fast.u_hat.push_back(std::move(u_hat));
            fast.b_hat.push_back(std::move(b_hat));
            fast.v_hat.push_back(std::move(v_hat));
        }
        fast.validate();

        at_tune = Trainables{&params, nullptr, &s_tune};
        packer_tune = std::make_unique<ParamPacker>(at_tune, ParamSelector::CoefficientsOnly);
        x_tune = packer_tune->pack();
        adam_tune = AdamState::make(x_tune.size(), 1e-2);

        at_fast = Trainables{nullptr, nullptr, &s_fast};
        packer_fast = std::make_unique<ParamPacker>(at_fast, ParamSelector::CoefficientsOnly);
        x_fast = packer_fast->pack();
        adam_fast = AdamState::make(x_fast.size(), 1e-2);
    }

    void tune_step() {
        const pde::CollocationBatch batch = pde::sample_collocation(
            epoch_seed(cfg.seed, ++tick), cfg.tune_phase.n_interior, cfg.tune_phase.n_initial,
            cfg.tune_phase.n_periodic, ParamDomain{}, false);
        PinnTermEmitter emitter;
        emitter.batch = &batch;
        emitter.w_interior = safe_inv(batch.interior.size());
        emitter.w_initial = safe_inv(batch.initial_x.size());
        emitter.w_periodic = safe_inv(batch.periodic_t.size());
        emitter.meta_mode = false;
        emitter.fixed_mu = mu;
        const std::size_t n_terms =
            batch.interior.size() + batch.initial_x.size() + batch.periodic_t.size();
        BatchGradResult bg = run_batch_gradient(at_tune, ParamSelector::CoefficientsOnly,
                                                nullptr, std::cref(emitter), n_terms, cfg.par);
        adam_step(adam_tune, x_tune, bg.grad);
        packer_tune->project_nonnegative_coeffs(x_tune);
        packer_tune->unpack(x_tune);
    }

    void fast_step() {
        SetupFn setup = [&](TapeBindings& ctx) {
            ExtraBindings ex;
            ex.fast = bind_fast(ctx.tape, fast);
            ex.has_fast = true;
            return ex;
        };
        const std::size_t n_points = sampling.points.size();
        EmitFn emit = [&](TapeBindings& ctx, const ExtraBindings& ex, std::size_t idx,
                          double* comps) -> NodeId {
            Tape& tp = ctx.tape;
            if (idx < n_points) {
                const pde::Point p = sampling.points[idx];
                switch (reduction::classify_point(p)) {
                    case reduction::PointKind::Interior: {
                        const NodeId jet =
                            emit_fast_jet(tp, p.x, p.t, ex.fast, ctx.coeffs.s_leaves);
                        const NodeId term = tp.abs_val(tp.residual_cdr(jet, mu));
                        comps[0] += tp.value(term);
                        return term;
                    }
                    case reduction::PointKind::Initial: {
                        const NodeId jet =
                            emit_fast_jet(tp, p.x, 0.0, ex.fast, ctx.coeffs.s_leaves);
                        const NodeId term =
                            tp.abs_val(tp.sub_const(tp.pick_value(jet, 0), std::sin(p.x)));
                        comps[1] += tp.value(term);
                        return term;
                    }
                    case reduction::PointKind::Periodic:
                    default: {
                        const NodeId j0 =
                            emit_fast_jet(tp, 0.0, p.t, ex.fast, ctx.coeffs.s_leaves);
                        const NodeId j1 =
                            emit_fast_jet(tp, pde::kTwoPi, p.t, ex.fast, ctx.coeffs.s_leaves);
                        const NodeId term =
                            tp.abs_val(tp.sub(tp.pick_value(j0, 0), tp.pick_value(j1, 0)));
                        comps[1] += tp.value(term);
                        return term;
                    }
                }
            }
            std::vector<NodeId> ids;
            std::vector<double> ws;
            for (std::size_t l = 0; l < ctx.coeffs.s_leaves.size(); ++l) {
                ids.push_back(tp.l1_to_target(ctx.coeffs.s_leaves[l], s_init.s[l].data.data(),
                                              s_init.s[l].len()));
                ws.push_back(1e-2);
            }
            const NodeId term = tp.weighted_sum(ids, ws);
            comps[3] += tp.value(term);
            return term;
        };
        BatchGradResult bg = run_batch_gradient(at_fast, ParamSelector::CoefficientsOnly,
                                                setup, emit, n_points + 1, cfg.par);
        adam_step(adam_fast, x_fast, bg.grad);
        packer_fast->project_nonnegative_coeffs(x_fast);
        packer_fast->unpack(x_fast);
    }
};

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 == 1 ? v[v.size() / 2]
                             : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace

std::vector<BenchmarkRow> benchmark_step_time(const std::vector<std::size_t>& widths_list,
                                              const BenchmarkConfig& cfg) {
    std::vector<std::unique_ptr<BenchContext>> ctxs;
    for (const std::size_t m : widths_list) ctxs.push_back(std::make_unique<BenchContext>(m, cfg));

    // Full fine-tune steps are long; a contiguous median per width is stable.
    std::vector<double> t_lrnr(ctxs.size());
    for (std::size_t i = 0; i < ctxs.size(); ++i) {
        std::vector<double> times;
        for (std::size_t rep = 0; rep < cfg.warmup + cfg.reps; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            ctxs[i]->tune_step();
            const double dt = now_seconds(t0);
            if (rep >= cfg.warmup) times.push_back(dt);
        }
        t_lrnr[i] = median_of(times);
    }

    // SPInProp steps are tens of microseconds; time blocks of them and
    // interleave the widths round-robin so scheduler drift hits all sizes
    // alike.
    const std::size_t block = std::max<std::size_t>(1, cfg.fast_steps_per_rep);
    std::vector<std::vector<double>> fast_times(ctxs.size());
    for (std::size_t rep = 0; rep < cfg.warmup + cfg.reps; ++rep) {
        for (std::size_t i = 0; i < ctxs.size(); ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            for (std::size_t k = 0; k < block; ++k) ctxs[i]->fast_step();
            const double dt = now_seconds(t0) / static_cast<double>(block);
            if (rep >= cfg.warmup) fast_times[i].push_back(dt);
        }
    }

    std::vector<BenchmarkRow> rows;
    for (std::size_t i = 0; i < ctxs.size(); ++i) {
        const double t_fast = median_of(fast_times[i]);
        rows.push_back({ctxs[i]->m_max, t_lrnr[i], t_fast,
                        t_fast > 0.0 ? t_lrnr[i] / t_fast : 0.0});
    }
    return rows;
}

}  // namespace training
}  // namespace lrnr
