#include <CLI11.hpp>

#include <cstdint>
#include <sstream>
#include <string>

#include "lrnr/cli.hpp"

namespace {

bool parse_mu(const std::string& text, lrnr::PdeParams& mu) {
    std::stringstream ss(text);
    std::string item;
    double vals[3];
    for (int i = 0; i < 3; ++i) {
        if (!std::getline(ss, item, ',')) return false;
        try {
            vals[i] = std::stod(item);
        } catch (...) {
            return false;
        }
    }
    if (std::getline(ss, item, ',')) return false;
    mu = {vals[0], vals[1], vals[2]};
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-rank neural representations for a parametrized "
                 "convection-diffusion-reaction equation"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_dir, mode = "fast", mu_text;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* sub, bool with_ckpt, bool with_mu, bool with_mode) {
        sub->add_option("--config", config_path, "JSON config file (defaults when omitted)");
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option_function<std::uint64_t>(
               "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; },
               "seed override for the active phase");
        if (with_ckpt) sub->add_option("--checkpoint", checkpoint_path, "input checkpoint");
        if (with_mu) sub->add_option("--mu", mu_text, "physical parameters A,B,C");
        if (with_mode)
            sub->add_option("--mode", mode, "fine-tune | fast | fast-naive")
                ->default_str("fast");
    };

    CLI::App* meta = app.add_subcommand("meta-train", "run the meta-learning phase");
    add_common(meta, false, false, false);
    CLI::App* reduce = app.add_subcommand("build-reduction",
                                          "harvest snapshots and build the FastLRNR");
    add_common(reduce, true, false, false);
    CLI::App* solve = app.add_subcommand("solve", "solve for one mu");
    add_common(solve, true, true, true);
    CLI::App* bench = app.add_subcommand("benchmark", "per-step timing table");
    add_common(bench, false, false, false);
    CLI::App* eval = app.add_subcommand("evaluate",
                                        "evaluate the hypernetwork initialization at mu");
    add_common(eval, true, true, false);

    CLI11_PARSE(app, argc, argv);

    lrnr::cli::CmdOptions opt;
    opt.config_path = config_path;
    opt.checkpoint_path = checkpoint_path;
    opt.out_dir = out_dir;
    opt.mode = mode;
    if (seed_set) opt.seed = seed;
    if (!mu_text.empty()) {
        lrnr::PdeParams mu;
        if (!parse_mu(mu_text, mu)) {
            std::fprintf(stderr, "invalid --mu, expected A,B,C\n");
            return 2;
        }
        opt.mu = mu;
    }

    if (meta->parsed()) return lrnr::cli::cmd_meta_train(opt);
    if (reduce->parsed()) return lrnr::cli::cmd_build_reduction(opt);
    if (solve->parsed()) return lrnr::cli::cmd_solve(opt);
    if (bench->parsed()) return lrnr::cli::cmd_benchmark(opt);
    if (eval->parsed()) return lrnr::cli::cmd_evaluate(opt);
    return 1;
}
