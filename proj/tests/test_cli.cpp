#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrnr/checkpoint.hpp"
#include "lrnr/cli.hpp"
#include "lrnr/training.hpp"

using namespace lrnr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

// Tiny but complete run configuration used across the command tests.
std::string tiny_config(const std::string& out_dir, std::size_t meta_epochs) {
    std::ostringstream os;
    os << R"({
  "network": {"widths": [2, 12, 12, 1], "ranks": [1, 3, 1]},
  "hypernetwork": {"depth": 1, "width": 8},
  "training": {
    "meta": {"epochs": )"
       << meta_epochs << R"(, "n_interior": 32, "n_initial": 16, "n_periodic": 8, "seed": 21},
    "tune": {"epochs": 4, "n_interior": 16, "n_initial": 8, "n_periodic": 4, "eval_interval": 0},
    "fast": {"epochs": 4}
  },
  "reduction": {"r_hat": 12, "n_perturb": 2, "mu_grid_per_axis": 3},
  "pde": {"domain": "D1", "ref_nx": 64, "ref_nt": 0},
  "output": {"dir": ")"
       << out_dir << R"("}
})";
    return os.str();
}

}  // namespace

TEST_CASE("config: defaults, schema errors, domains") {
    const RunConfig def = config_from_json(nlohmann::json::object());
    CHECK(def.widths == std::vector<std::size_t>{2, 128, 128, 128, 128, 1});
    CHECK(def.ranks == std::vector<std::size_t>{1, 16, 16, 16, 1});
    CHECK(def.meta.lr == 3e-3);
    CHECK(def.meta.epochs == 3000);
    CHECK(def.meta.n_interior == 2048);
    CHECK(def.tune.lr == 1e-2);
    CHECK(def.tune.n_interior == 1024);
    CHECK(def.regs.lambda_ortho == 1e-3);
    CHECK(def.regs.lambda_sparse == 1e-4);
    CHECK(def.regs.lambda_local == 1e-2);
    CHECK(def.regs.gamma == 1.5);
    CHECK(def.r_hat == 64);
    CHECK(def.x_grid_nx == 4);
    CHECK(def.x_grid_nt == 3);
    CHECK(def.n_perturb == 8);
    CHECK(def.sigma_perturb == 0.05);
    CHECK(def.eps_trunc == 1e-6);
    CHECK(def.ref_nx == 512);
    CHECK(def.domain.lo[0] == 5.0);
    CHECK(def.domain.hi[0] == 8.0);
    CHECK(def.hyper_width_resolved() == 64);

    // Unknown fields are schema errors naming the offender.
    nlohmann::json bad = {{"network", {{"widhts", nlohmann::json::array({2, 4, 1})}}}};
    CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("network.widhts"),
                         ConfigError);

    nlohmann::json mismatched = {
        {"network",
         {{"widths", nlohmann::json::array({2, 8, 1})},
          {"ranks", nlohmann::json::array({1, 1, 1})}}}};
    CHECK_THROWS_AS(config_from_json(mismatched), ConfigError);

    nlohmann::json d2 = {{"pde", {{"domain", "D2"}}}};
    const RunConfig c2 = config_from_json(d2);
    CHECK(c2.domain.hi[2] == 2.0);

    nlohmann::json box = {
        {"pde",
         {{"domain",
           {{"lo", nlohmann::json::array({1.0, 0.0, 0.0})},
            {"hi", nlohmann::json::array({2.0, 1.0, 0.5})}}}}}};
    const RunConfig cb = config_from_json(box);
    CHECK(cb.domain.hi[0] == 2.0);
    CHECK(cb.domain_name == "custom");
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
    const fs::path dir = fresh_dir("lrnr_ckpt_test");
    Rng rng(64);
    LrnrParams params = make_lrnr_params({2, 10, 10, 1}, {1, 4, 1}, rng);
    HyperParams hyper = make_hyper_params({1, 4, 1}, 2, 8, ParamDomain::d2(), rng, 0.1, 0.4);

    Checkpoint ckpt;
    put_lrnr(ckpt, params);
    put_hyper(ckpt, hyper);
    ckpt.meta["phase"] = "meta";
    const std::string p1 = (dir / "a.lrnr").string();
    checkpoint_save(ckpt, p1);

    Checkpoint loaded = checkpoint_load(p1);
    const std::string p2 = (dir / "b.lrnr").string();
    checkpoint_save(loaded, p2);
    CHECK(slurp(p1) == slurp(p2));  // save -> load -> save identical bytes

    const LrnrParams params2 = get_lrnr(loaded);
    for (std::size_t l = 0; l < params.depth(); ++l) {
        for (std::size_t i = 0; i < params.u[l].data.size(); ++i)
            CHECK(params2.u[l].data[i] == params.u[l].data[i]);
        for (std::size_t i = 0; i < params.b[l].len(); ++i)
            CHECK(params2.b[l][i] == params.b[l][i]);
    }
    const HyperParams hyper2 = get_hyper(loaded);
    CHECK(hyper2.box.lo == hyper.box.lo);
    for (std::size_t k = 0; k < hyper.w.size(); ++k)
        for (std::size_t i = 0; i < hyper.w[k].data.size(); ++i)
            CHECK(hyper2.w[k].data[i] == hyper.w[k].data[i]);
}

TEST_CASE("checkpoint: bad magic and truncation are explicit errors") {
    const fs::path dir = fresh_dir("lrnr_ckpt_bad");
    const fs::path bad = dir / "bad.lrnr";
    write_file(bad, "NOPE this is not a checkpoint");
    CHECK_THROWS_WITH_AS(checkpoint_load(bad.string()), doctest::Contains("bad magic"),
                         std::runtime_error);

    Checkpoint ckpt;
    DenseVector v{1.0, 2.0, 3.0};
    ckpt.add_tensor("v", v);
    const fs::path good = dir / "good.lrnr";
    checkpoint_save(ckpt, good.string());
    const std::string bytes = slurp(good);
    write_file(dir / "trunc.lrnr", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH_AS(checkpoint_load((dir / "trunc.lrnr").string()),
                         doctest::Contains("truncated"), std::runtime_error);
}

TEST_CASE("cmd_meta_train: epochs=0 writes a checkpoint, determinism byte-for-byte") {
    const fs::path dir = fresh_dir("lrnr_cmd_meta");
    const fs::path cfg0 = dir / "cfg0.json";
    write_file(cfg0, tiny_config((dir / "out0").string(), 0));
    cli::CmdOptions opt;
    opt.config_path = cfg0.string();
    CHECK(cli::cmd_meta_train(opt) == 0);
    CHECK(fs::exists(dir / "out0/checkpoint.lrnr"));
    CHECK(fs::exists(dir / "out0/metrics.csv"));

    // Two identical seeded runs produce byte-identical checkpoints.
    const fs::path cfg1 = dir / "cfg1.json";
    const fs::path cfg2 = dir / "cfg2.json";
    write_file(cfg1, tiny_config((dir / "out1").string(), 3));
    write_file(cfg2, tiny_config((dir / "out2").string(), 3));
    cli::CmdOptions o1, o2;
    o1.config_path = cfg1.string();
    o2.config_path = cfg2.string();
    CHECK(cli::cmd_meta_train(o1) == 0);
    CHECK(cli::cmd_meta_train(o2) == 0);
    CHECK(slurp(dir / "out1/checkpoint.lrnr") == slurp(dir / "out2/checkpoint.lrnr"));

    // Output collision is an error.
    CHECK(cli::cmd_meta_train(o1) == 1);
}

TEST_CASE("cmd_meta_train: final CSV loss is reproducible from the checkpoint") {
    const fs::path dir = fresh_dir("lrnr_cmd_meta_recompute");
    const fs::path cfg = dir / "cfg.json";
    write_file(cfg, tiny_config((dir / "out").string(), 5));
    cli::CmdOptions opt;
    opt.config_path = cfg.string();
    REQUIRE(cli::cmd_meta_train(opt) == 0);

    Checkpoint ckpt = checkpoint_load((dir / "out/checkpoint.lrnr").string());
    const LrnrParams params = get_lrnr(ckpt);
    const HyperParams hyper = get_hyper(ckpt);
    const RunConfig cfg_echo = config_from_json(ckpt.meta.at("config"));

    const pde::CollocationBatch val = pde::sample_collocation(
        cfg_echo.meta.seed, cfg_echo.meta.n_interior, cfg_echo.meta.n_initial,
        cfg_echo.meta.n_periodic, cfg_echo.domain, true);
    const training::LossBreakdown lb = training::loss_meta(params, hyper, val);
    const double want = lb.total + cfg_echo.regs.lambda_ortho * training::reg_ortho(params) +
                        cfg_echo.regs.lambda_sparse *
                            training::reg_sparse(hyper, val.interior_mu, cfg_echo.regs.gamma);

    // Last CSV row holds the post-truncation objective.
    std::ifstream is(dir / "out/metrics.csv");
    std::string line, last;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (!line.empty()) last = line;
    }
    std::stringstream ss(last);
    std::string field;
    for (int k = 0; k < 4; ++k) std::getline(ss, field, ',');
    const double csv_loss = std::stod(field);
    CHECK(std::fabs(csv_loss - want) < 1e-10);
    CHECK(csv_loss == doctest::Approx(ckpt.meta.at("final_loss").get<double>()));
}

TEST_CASE("cmd_build_reduction + cmd_solve fast path end to end at toy scale") {
    const fs::path dir = fresh_dir("lrnr_cmd_solve");
    const fs::path cfg = dir / "cfg.json";
    write_file(cfg, tiny_config((dir / "meta").string(), 4));
    cli::CmdOptions opt;
    opt.config_path = cfg.string();
    REQUIRE(cli::cmd_meta_train(opt) == 0);

    // Reduction into a separate directory.
    const fs::path cfg2 = dir / "cfg2.json";
    write_file(cfg2, tiny_config((dir / "red").string(), 4));
    cli::CmdOptions ropt;
    ropt.config_path = cfg2.string();
    ropt.checkpoint_path = (dir / "meta/checkpoint.lrnr").string();
    REQUIRE(cli::cmd_build_reduction(ropt) == 0);

    Checkpoint ckpt = checkpoint_load((dir / "red/checkpoint.lrnr").string());
    CHECK(has_fast(ckpt));
    CHECK(ckpt.meta.at("reduction").at("n_sampling_points").get<std::size_t>() == 12);
    const auto bases = get_eim(ckpt);
    CHECK(bases.size() == 2);

    // r_hat = 12 >= hidden width, so the loaded FastLRNR matches the LRNR.
    const LrnrParams params = get_lrnr(ckpt);
    const HyperParams hyper = get_hyper(ckpt);
    const FastParams fast = get_fast(ckpt);
    const PdeParams mu{6.2, 0.0, 0.0};
    const Coefficients s = hyper_forward(mu, hyper);
    Rng rng(10);
    for (int k = 0; k < 50; ++k) {
        const double x = rng.uniform_in(0, pde::kTwoPi), t = rng.uniform_in(0, 1);
        CHECK(std::fabs(fast_forward(x, t, fast, s)[0] - lrnr_forward(x, t, params, s)[0]) <
              1e-8);
    }

    // Solve in fast mode with epochs = 0: the solution equals the
    // hypernetwork initialization.
    const fs::path cfg3 = dir / "cfg3.json";
    std::string solve_cfg = tiny_config((dir / "solve").string(), 4);
    solve_cfg.replace(solve_cfg.find("\"fast\": {\"epochs\": 4}"),
                      std::string("\"fast\": {\"epochs\": 4}").size(),
                      "\"fast\": {\"epochs\": 0}");
    write_file(cfg3, solve_cfg);
    cli::CmdOptions sopt;
    sopt.config_path = cfg3.string();
    sopt.checkpoint_path = (dir / "red/checkpoint.lrnr").string();
    sopt.mode = "fast";
    sopt.mu = mu;
    REQUIRE(cli::cmd_solve(sopt) == 0);

    std::ifstream is(dir / "solve/coefficients.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "layer,index,value");
    std::size_t l = 0, i = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string layer_s, index_s, value_s;
        std::getline(ss, layer_s, ',');
        std::getline(ss, index_s, ',');
        std::getline(ss, value_s, ',');
        l = std::stoul(layer_s) - 1;
        i = std::stoul(index_s);
        CHECK(std::stod(value_s) == doctest::Approx(s.s[l][i]).epsilon(1e-15));
    }
    CHECK(fs::exists(dir / "solve/solution.csv"));
    CHECK(fs::exists(dir / "solve/metrics.csv"));
}

TEST_CASE("cmd_build_reduction: greedy prefix property across two budgets") {
    const fs::path dir = fresh_dir("lrnr_cmd_prefix");
    const fs::path cfg = dir / "cfg.json";
    write_file(cfg, tiny_config((dir / "meta").string(), 3));
    cli::CmdOptions opt;
    opt.config_path = cfg.string();
    REQUIRE(cli::cmd_meta_train(opt) == 0);

    auto reduce_with = [&](std::size_t r_hat, const std::string& out) {
        std::string c = tiny_config((dir / out).string(), 3);
        const std::string key = "\"r_hat\": 12";
        c.replace(c.find(key), key.size(), "\"r_hat\": " + std::to_string(r_hat));
        const fs::path path = dir / (out + ".json");
        write_file(path, c);
        cli::CmdOptions ropt;
        ropt.config_path = path.string();
        ropt.checkpoint_path = (dir / "meta/checkpoint.lrnr").string();
        REQUIRE(cli::cmd_build_reduction(ropt) == 0);
        return get_eim(checkpoint_load((dir / out / "checkpoint.lrnr").string()));
    };
    const auto bases4 = reduce_with(4, "red4");
    const auto bases8 = reduce_with(8, "red8");
    REQUIRE(bases4.size() == bases8.size());
    for (std::size_t l = 0; l < bases4.size(); ++l) {
        REQUIRE(bases4[l].dim() <= bases8[l].dim());
        for (std::size_t k = 0; k < bases4[l].dim(); ++k) {
            CHECK(bases4[l].indices[k] == bases8[l].indices[k]);
            for (std::size_t i = 0; i < bases4[l].xi.rows; ++i)
                CHECK(bases4[l].xi.at(i, k) == bases8[l].xi.at(i, k));
        }
    }
}

TEST_CASE("cmd_solve rejects unknown modes and missing inputs") {
    cli::CmdOptions opt;
    opt.checkpoint_path = "/nonexistent/ckpt.lrnr";
    opt.mu = PdeParams{6.0, 0.0, 0.0};
    opt.mode = "warp";
    CHECK(cli::cmd_solve(opt) != 0);
    cli::CmdOptions no_mu;
    no_mu.checkpoint_path = "/nonexistent/ckpt.lrnr";
    CHECK(cli::cmd_solve(no_mu) != 0);
}

TEST_CASE("invalid config file gives exit code 2") {
    const fs::path dir = fresh_dir("lrnr_cmd_cfgerr");
    const fs::path cfg = dir / "bad.json";
    write_file(cfg, R"({"networks": {}})");
    cli::CmdOptions opt;
    opt.config_path = cfg.string();
    CHECK(cli::cmd_meta_train(opt) == 2);
    write_file(dir / "mangled.json", "{not json");
    cli::CmdOptions opt2;
    opt2.config_path = (dir / "mangled.json").string();
    CHECK(cli::cmd_meta_train(opt2) == 2);
}
