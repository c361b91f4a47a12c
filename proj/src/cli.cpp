#include "lrnr/cli.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lrnr/checkpoint.hpp"
#include "lrnr/training.hpp"

namespace lrnr {
namespace cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Refuses to overwrite: concurrent invocations must use distinct outputs.
void ensure_fresh(const std::string& path) {
    if (fs::exists(path))
        throw std::runtime_error("output collision: " + path + " already exists");
    fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_fresh(const std::string& path) {
    ensure_fresh(path);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    return os;
}

void write_metrics_csv(const std::string& path, const training::TrainReport& report) {
    std::ofstream os = open_fresh(path);
    os << "phase,epoch,wall_s,loss,loss_residual,loss_boundary,reg_ortho,reg_sparse,"
          "reg_local,l1_rel_err\n";
    for (const training::EpochRecord& r : report.records) {
        os << report.phase << ',' << r.epoch << ',' << fmt(r.wall_s) << ',' << fmt(r.loss)
           << ',' << fmt(r.loss_residual) << ',' << fmt(r.loss_boundary) << ','
           << fmt(r.reg_ortho) << ',' << fmt(r.reg_sparse) << ',' << fmt(r.reg_local) << ',';
        if (std::isfinite(r.l1_rel_err)) os << fmt(r.l1_rel_err);
        os << '\n';
    }
}

void write_solution_csv(const std::string& path, const LrnrParams& params,
                        const Coefficients& s, const pde::GridField& grid) {
    std::ofstream os = open_fresh(path);
    os << "x,t,value\n";
    for (std::size_t j = 0; j <= grid.n_t; ++j) {
        const double t = grid.t_of(j);
        for (std::size_t i = 0; i < grid.n_x; ++i) {
            const double x = grid.x_of(i);
            os << fmt(x) << ',' << fmt(t) << ',' << fmt(lrnr_forward(x, t, params, s)[0])
               << '\n';
        }
    }
}

void write_coefficients_csv(const std::string& path, const Coefficients& s) {
    std::ofstream os = open_fresh(path);
    os << "layer,index,value\n";
    for (std::size_t l = 0; l < s.s.size(); ++l) {
        for (std::size_t i = 0; i < s.s[l].len(); ++i)
            os << (l + 1) << ',' << i << ',' << fmt(s.s[l][i]) << '\n';
    }
}

RunConfig load_config(const CmdOptions& opt) {
    RunConfig cfg = opt.config_path.empty() ? RunConfig{} : config_load(opt.config_path);
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    return cfg;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

double final_l1(const LrnrParams& params, const Coefficients& s, const pde::GridField& ref) {
    return pde::l1_relative_error(
        [&](double x, double t) { return lrnr_forward(x, t, params, s)[0]; }, ref);
}

}  // namespace

std::string metrics_csv_path(const std::string& out_dir) { return out_dir + "/metrics.csv"; }
std::string checkpoint_path(const std::string& out_dir) { return out_dir + "/checkpoint.lrnr"; }
std::string solution_csv_path(const std::string& out_dir) { return out_dir + "/solution.csv"; }
std::string coefficients_csv_path(const std::string& out_dir) {
    return out_dir + "/coefficients.csv";
}
std::string benchmark_csv_path(const std::string& out_dir) { return out_dir + "/benchmark.csv"; }

int cmd_meta_train(const CmdOptions& opt) {
    return run_guarded([&]() {
        RunConfig cfg = load_config(opt);
        if (opt.seed) cfg.meta.seed = *opt.seed;

        training::MetaSetup setup;
        setup.widths = cfg.widths;
        setup.ranks = cfg.ranks;
        setup.hyper_depth = cfg.hyper_depth;
        setup.hyper_width = cfg.hyper_width_resolved();
        setup.init_bias_scale = cfg.init_bias_scale;
        setup.hyper_out_weight_scale = cfg.hyper_out_weight_scale;
        setup.hyper_out_bias = cfg.hyper_out_bias;
        setup.init_seed = cfg.init_seed;
        setup.domain = cfg.domain;
        setup.regs = cfg.regs;
        setup.phase = cfg.meta;
        setup.par = cfg.par;

        training::MetaResult result = training::meta_train(setup);

        const std::vector<PdeParams> probes =
            reduction::uniform_mu_grid(cfg.domain, cfg.mu_grid_per_axis);
        reduction::TruncationResult trunc =
            reduction::truncate_zero_modes(result.params, result.hyper, probes, cfg.eps_trunc);

        // Post-truncation objective on a held-out deterministic batch; this is
        // the value the checkpoint reproduces.
        const pde::CollocationBatch val_batch =
            pde::sample_collocation(cfg.meta.seed, cfg.meta.n_interior, cfg.meta.n_initial,
                                    cfg.meta.n_periodic, cfg.domain, true);
        const training::LossBreakdown lb =
            training::loss_meta(trunc.params, trunc.hyper, val_batch);
        const double ro = cfg.regs.lambda_ortho * training::reg_ortho(trunc.params);
        const double rs = cfg.regs.lambda_sparse *
                          training::reg_sparse(trunc.hyper, val_batch.interior_mu,
                                               cfg.regs.gamma);
        training::EpochRecord final_rec;
        final_rec.epoch = result.report.records.empty()
                              ? 1
                              : result.report.records.back().epoch + 1;
        final_rec.wall_s = result.report.records.empty()
                               ? 0.0
                               : result.report.records.back().wall_s;
        final_rec.loss = lb.total + ro + rs;
        final_rec.loss_residual = lb.residual;
        final_rec.loss_boundary = lb.boundary;
        final_rec.reg_ortho = ro;
        final_rec.reg_sparse = rs;
        result.report.records.push_back(final_rec);

        Checkpoint ckpt;
        put_lrnr(ckpt, trunc.params);
        put_hyper(ckpt, trunc.hyper);
        ckpt.meta["phase"] = "meta";
        ckpt.meta["seed"] = cfg.meta.seed;
        // Output paths are environment, not experiment; keep them out of the
        // reproducibility-relevant metadata.
        nlohmann::json cfg_echo = cfg.to_json();
        cfg_echo.erase("output");
        ckpt.meta["config"] = cfg_echo;
        ckpt.meta["kept_per_layer"] = trunc.kept_per_layer;
        ckpt.meta["best_epoch"] = result.report.best_epoch;
        ckpt.meta["final_loss"] = final_rec.loss;

        ensure_fresh(checkpoint_path(cfg.out_dir));
        checkpoint_save(ckpt, checkpoint_path(cfg.out_dir));
        write_metrics_csv(metrics_csv_path(cfg.out_dir), result.report);
        if (result.report.aborted_nonfinite) {
            std::cerr << "meta-train: aborted on non-finite loss; checkpoint holds the best "
                         "iterate\n";
            return 1;
        }
        std::cout << "meta-train: " << result.report.records.size() - 1 << " epochs, best loss "
                  << fmt(result.report.best_loss) << " at epoch " << result.report.best_epoch
                  << ", post-truncation ranks";
        for (std::size_t r : trunc.params.ranks) std::cout << ' ' << r;
        std::cout << "\n";
        return 0;
    });
}

int cmd_build_reduction(const CmdOptions& opt) {
    return run_guarded([&]() {
        RunConfig cfg = load_config(opt);
        if (opt.seed) cfg.reduction_seed = *opt.seed;
        require(!opt.checkpoint_path.empty(), "build-reduction: --checkpoint is required");

        Checkpoint ckpt = checkpoint_load(opt.checkpoint_path);
        const LrnrParams params = get_lrnr(ckpt);
        const HyperParams hyper = get_hyper(ckpt);

        const reduction::SamplingSetX sampling =
            reduction::SamplingSetX::uniform_grid(cfg.x_grid_nx, cfg.x_grid_nt);
        const std::vector<PdeParams> mu_grid =
            reduction::uniform_mu_grid(hyper.box, cfg.mu_grid_per_axis);
        const reduction::SnapshotSet snaps =
            reduction::harvest_snapshots(params, hyper, sampling, cfg.n_perturb,
                                         cfg.sigma_perturb, mu_grid, cfg.reduction_seed);

        std::vector<reduction::EimBasis> bases;
        for (std::size_t l = 0; l + 1 < params.depth(); ++l) {
            reduction::EimBasis b = reduction::eim_greedy(snaps.layers[l], cfg.r_hat);
            if (b.exhausted) {
                std::cerr << "build-reduction: layer " << (l + 1)
                          << " snapshots exhausted at dimension " << b.dim() << " (budget "
                          << cfg.r_hat << ")\n";
            }
            bases.push_back(std::move(b));
        }
        const FastParams fast = reduction::build_fastparams(params, bases);

        put_fast(ckpt, fast);
        put_eim(ckpt, bases);
        put_sampling(ckpt, sampling);
        ckpt.meta["phase"] = "reduction";
        ckpt.meta["reduction"] = {{"n_perturb", cfg.n_perturb},
                                  {"sigma_perturb", cfg.sigma_perturb},
                                  {"seed", cfg.reduction_seed},
                                  {"n_sampling_points", sampling.points.size()},
                                  {"mu_grid_size", mu_grid.size()}};
        ensure_fresh(checkpoint_path(cfg.out_dir));
        checkpoint_save(ckpt, checkpoint_path(cfg.out_dir));
        std::cout << "build-reduction: " << sampling.points.size() << " sampling points, "
                  << snaps.tags.size() << " snapshots/layer, reduced dims";
        for (const auto& b : bases) std::cout << ' ' << b.dim();
        std::cout << "\n";
        return 0;
    });
}

int cmd_solve(const CmdOptions& opt) {
    return run_guarded([&]() {
        RunConfig cfg = load_config(opt);
        require(!opt.checkpoint_path.empty(), "solve: --checkpoint is required");
        require(opt.mu.has_value(), "solve: --mu is required");
        const PdeParams mu = *opt.mu;

        Checkpoint ckpt = checkpoint_load(opt.checkpoint_path);
        const LrnrParams params = get_lrnr(ckpt);
        const HyperParams hyper = get_hyper(ckpt);
        if (!hyper.box.contains(mu)) {
            std::cerr << "solve: mu outside the trained domain box; extrapolating\n";
        }

        const pde::GridField ref = pde::reference_solve(mu, cfg.ref_nx, cfg.ref_nt);

        training::SolveResult result;
        if (opt.mode == "fine-tune") {
            training::PhaseConfig phase = cfg.tune;
            if (opt.seed) phase.seed = *opt.seed;
            result = training::fine_tune(mu, params, hyper, phase, cfg.par, &ref);
        } else if (opt.mode == "fast" || opt.mode == "fast-naive") {
            require(has_fast(ckpt), "solve: checkpoint has no FastLRNR; run build-reduction");
            const FastParams fast = get_fast(ckpt);
            const reduction::SamplingSetX sampling =
                ckpt.meta.contains("sampling_x")
                    ? get_sampling(ckpt)
                    : reduction::SamplingSetX::uniform_grid(cfg.x_grid_nx, cfg.x_grid_nt);
            training::PhaseConfig phase = cfg.fast;
            if (opt.seed) phase.seed = *opt.seed;
            const double lambda_local =
                opt.mode == "fast" ? cfg.regs.lambda_local : 0.0;
            result = training::fast_solve(mu, hyper, fast, sampling, phase, lambda_local,
                                          cfg.par);
        } else {
            throw ConfigError("solve: unknown mode " + opt.mode +
                              " (expected fine-tune, fast, or fast-naive)");
        }

        const double l1 = final_l1(params, result.coeffs, ref);
        training::EpochRecord final_rec;
        final_rec.epoch =
            result.report.records.empty() ? 0 : result.report.records.back().epoch + 1;
        final_rec.wall_s =
            result.report.records.empty() ? 0.0 : result.report.records.back().wall_s;
        if (opt.mode == "fine-tune") {
            const pde::CollocationBatch batch = pde::sample_collocation(
                cfg.tune.seed, cfg.tune.n_interior, cfg.tune.n_initial, cfg.tune.n_periodic,
                ParamDomain{}, false);
            final_rec.loss = training::loss_tune(result.coeffs, mu, params, batch).total;
        } else {
            const FastParams fast = get_fast(ckpt);
            const reduction::SamplingSetX sampling =
                ckpt.meta.contains("sampling_x")
                    ? get_sampling(ckpt)
                    : reduction::SamplingSetX::uniform_grid(cfg.x_grid_nx, cfg.x_grid_nt);
            result.report.phase = opt.mode;
            final_rec.loss = training::loss_fast(result.coeffs, mu, fast, sampling).total;
        }
        final_rec.l1_rel_err = l1;
        result.report.records.push_back(final_rec);

        write_metrics_csv(metrics_csv_path(cfg.out_dir), result.report);
        write_coefficients_csv(coefficients_csv_path(cfg.out_dir), result.coeffs);
        write_solution_csv(solution_csv_path(cfg.out_dir), params, result.coeffs, ref);

        std::cout << "solve[" << opt.mode << "] mu=(" << mu.mu1 << ',' << mu.mu2 << ','
                  << mu.mu3 << "): final L1 relative error " << fmt(l1);
        if (result.report.diverged) std::cout << " [diverged]";
        if (result.report.aborted_nonfinite) std::cout << " [non-finite abort]";
        std::cout << "\n";
        return 0;
    });
}

int cmd_benchmark(const CmdOptions& opt) {
    return run_guarded([&]() {
        RunConfig cfg = load_config(opt);
        training::BenchmarkConfig bench;
        bench.ranks = cfg.ranks;
        bench.r_hat = std::min<std::size_t>(cfg.r_hat, 5);
        bench.reps = cfg.bench_reps;
        bench.warmup = cfg.bench_warmup;
        bench.tune_phase = cfg.tune;
        bench.par = cfg.par;
        bench.seed = opt.seed ? *opt.seed : cfg.bench_seed;
        const std::vector<training::BenchmarkRow> rows =
            training::benchmark_step_time(cfg.bench_widths, bench);
        std::ofstream os = open_fresh(benchmark_csv_path(cfg.out_dir));
        os << "m_max,t_lrnr_s,t_fast_s,ratio\n";
        for (const auto& r : rows) {
            os << r.m_max << ',' << fmt(r.t_lrnr_s) << ',' << fmt(r.t_fast_s) << ','
               << fmt(r.ratio) << '\n';
            std::cout << "M=" << r.m_max << ": t_lrnr=" << fmt(r.t_lrnr_s)
                      << "s t_fast=" << fmt(r.t_fast_s) << "s ratio=" << fmt(r.ratio) << "\n";
        }
        return 0;
    });
}

int cmd_evaluate(const CmdOptions& opt) {
    return run_guarded([&]() {
        RunConfig cfg = load_config(opt);
        require(!opt.checkpoint_path.empty(), "evaluate: --checkpoint is required");
        require(opt.mu.has_value(), "evaluate: --mu is required");
        const PdeParams mu = *opt.mu;

        Checkpoint ckpt = checkpoint_load(opt.checkpoint_path);
        const LrnrParams params = get_lrnr(ckpt);
        const HyperParams hyper = get_hyper(ckpt);
        if (!hyper.box.contains(mu)) {
            std::cerr << "evaluate: mu outside the trained domain box; extrapolating\n";
        }
        const Coefficients s = hyper_forward(mu, hyper);
        const pde::GridField ref = pde::reference_solve(mu, cfg.ref_nx, cfg.ref_nt);
        const double l1 = final_l1(params, s, ref);
        write_coefficients_csv(coefficients_csv_path(cfg.out_dir), s);
        write_solution_csv(solution_csv_path(cfg.out_dir), params, s, ref);
        {
            std::ofstream os = open_fresh(cfg.out_dir + "/reference.csv");
            os << "x,t,value\n";
            for (std::size_t j = 0; j <= ref.n_t; ++j)
                for (std::size_t i = 0; i < ref.n_x; ++i)
                    os << fmt(ref.x_of(i)) << ',' << fmt(ref.t_of(j)) << ','
                       << fmt(ref.at(j, i)) << '\n';
        }
        std::cout << "evaluate mu=(" << mu.mu1 << ',' << mu.mu2 << ',' << mu.mu3
                  << "): hypernetwork initialization L1 relative error " << fmt(l1) << "\n";
        return 0;
    });
}

}  // namespace cli
}  // namespace lrnr
