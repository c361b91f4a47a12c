#include "lrnr/config.hpp"

#include <fstream>
#include <set>

namespace lrnr {

using nlohmann::json;

namespace {

struct Parser {
    std::vector<std::string> errors;

    void unknown_keys(const json& j, const std::string& path,
                      const std::set<std::string>& allowed) {
        if (!j.is_object()) {
            errors.push_back(path + ": expected an object");
            return;
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (allowed.find(it.key()) == allowed.end())
                errors.push_back(path + "." + it.key() + ": unknown field");
        }
    }

    template <typename T>
    void number(const json& j, const std::string& path, const char* key, T& out) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_number()) {
            errors.push_back(path + "." + key + ": expected a number");
            return;
        }
        out = v.get<T>();
    }

    void index_list(const json& j, const std::string& path, const char* key,
                    std::vector<std::size_t>& out) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_array()) {
            errors.push_back(path + "." + key + ": expected an array");
            return;
        }
        std::vector<std::size_t> parsed;
        for (const auto& e : v) {
            if (!e.is_number_unsigned()) {
                errors.push_back(path + "." + key + ": expected non-negative integers");
                return;
            }
            parsed.push_back(e.get<std::size_t>());
        }
        out = std::move(parsed);
    }

    void text(const json& j, const std::string& path, const char* key, std::string& out) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_string()) {
            errors.push_back(path + "." + key + ": expected a string");
            return;
        }
        out = v.get<std::string>();
    }

    void phase(const json& j, const std::string& path, training::PhaseConfig& out) {
        if (!j.is_object()) {
            errors.push_back(path + ": expected an object");
            return;
        }
        unknown_keys(j, path,
                     {"lr", "epochs", "n_interior", "n_initial", "n_periodic", "seed",
                      "eval_interval"});
        number(j, path, "lr", out.lr);
        number(j, path, "epochs", out.epochs);
        number(j, path, "n_interior", out.n_interior);
        number(j, path, "n_initial", out.n_initial);
        number(j, path, "n_periodic", out.n_periodic);
        number(j, path, "seed", out.seed);
        number(j, path, "eval_interval", out.eval_interval);
    }
};

}  // namespace

std::size_t RunConfig::hyper_width_resolved() const {
    if (hyper_width > 0) return hyper_width;
    std::size_t r_total = 0;
    for (std::size_t r : ranks) r_total += r;
    return std::max<std::size_t>(64, r_total);
}

RunConfig config_from_json(const json& j) {
    RunConfig cfg;
    Parser p;
    p.unknown_keys(j, "config",
                   {"network", "hypernetwork", "training", "regularizers", "reduction", "pde",
                    "benchmark", "output"});

    if (j.contains("network")) {
        const json& n = j.at("network");
        p.unknown_keys(n, "network",
                       {"widths", "ranks", "activation", "init_seed", "init_bias_scale",
                        "hyper_out_weight_scale", "hyper_out_bias"});
        p.index_list(n, "network", "widths", cfg.widths);
        p.index_list(n, "network", "ranks", cfg.ranks);
        p.text(n, "network", "activation", cfg.activation);
        p.number(n, "network", "init_seed", cfg.init_seed);
        p.number(n, "network", "init_bias_scale", cfg.init_bias_scale);
        p.number(n, "network", "hyper_out_weight_scale", cfg.hyper_out_weight_scale);
        p.number(n, "network", "hyper_out_bias", cfg.hyper_out_bias);
    }
    if (j.contains("hypernetwork")) {
        const json& n = j.at("hypernetwork");
        p.unknown_keys(n, "hypernetwork", {"depth", "width"});
        p.number(n, "hypernetwork", "depth", cfg.hyper_depth);
        p.number(n, "hypernetwork", "width", cfg.hyper_width);
    }
    if (j.contains("training")) {
        const json& n = j.at("training");
        p.unknown_keys(n, "training", {"meta", "tune", "fast", "threads", "chunk"});
        if (n.contains("meta")) p.phase(n.at("meta"), "training.meta", cfg.meta);
        if (n.contains("tune")) p.phase(n.at("tune"), "training.tune", cfg.tune);
        if (n.contains("fast")) p.phase(n.at("fast"), "training.fast", cfg.fast);
        p.number(n, "training", "threads", cfg.par.threads);
        p.number(n, "training", "chunk", cfg.par.chunk);
    }
    if (j.contains("regularizers")) {
        const json& n = j.at("regularizers");
        p.unknown_keys(n, "regularizers",
                       {"lambda_ortho", "lambda_sparse", "lambda_local", "gamma"});
        p.number(n, "regularizers", "lambda_ortho", cfg.regs.lambda_ortho);
        p.number(n, "regularizers", "lambda_sparse", cfg.regs.lambda_sparse);
        p.number(n, "regularizers", "lambda_local", cfg.regs.lambda_local);
        p.number(n, "regularizers", "gamma", cfg.regs.gamma);
    }
    if (j.contains("reduction")) {
        const json& n = j.at("reduction");
        p.unknown_keys(n, "reduction",
                       {"r_hat", "x_grid", "n_perturb", "sigma_perturb", "eps_trunc",
                        "mu_grid_per_axis", "seed"});
        p.number(n, "reduction", "r_hat", cfg.r_hat);
        std::vector<std::size_t> xg{cfg.x_grid_nx, cfg.x_grid_nt};
        p.index_list(n, "reduction", "x_grid", xg);
        if (xg.size() == 2) {
            cfg.x_grid_nx = xg[0];
            cfg.x_grid_nt = xg[1];
        } else {
            p.errors.push_back("reduction.x_grid: expected [n_x, n_t]");
        }
        p.number(n, "reduction", "n_perturb", cfg.n_perturb);
        p.number(n, "reduction", "sigma_perturb", cfg.sigma_perturb);
        p.number(n, "reduction", "eps_trunc", cfg.eps_trunc);
        p.number(n, "reduction", "mu_grid_per_axis", cfg.mu_grid_per_axis);
        p.number(n, "reduction", "seed", cfg.reduction_seed);
    }
    if (j.contains("pde")) {
        const json& n = j.at("pde");
        p.unknown_keys(n, "pde", {"domain", "ref_nx", "ref_nt"});
        if (n.contains("domain")) {
            const json& d = n.at("domain");
            if (d.is_string()) {
                const std::string name = d.get<std::string>();
                if (name == "D1") {
                    cfg.domain = ParamDomain::d1();
                    cfg.domain_name = "D1";
                } else if (name == "D2") {
                    cfg.domain = ParamDomain::d2();
                    cfg.domain_name = "D2";
                } else {
                    p.errors.push_back("pde.domain: expected \"D1\", \"D2\", or a box object");
                }
            } else if (d.is_object()) {
                p.unknown_keys(d, "pde.domain", {"lo", "hi"});
                auto corner = [&](const char* key, std::array<double, 3>& out) {
                    if (!d.contains(key) || !d.at(key).is_array() || d.at(key).size() != 3) {
                        p.errors.push_back(std::string("pde.domain.") + key +
                                           ": expected 3 numbers");
                        return;
                    }
                    for (std::size_t i = 0; i < 3; ++i) {
                        if (!d.at(key)[i].is_number()) {
                            p.errors.push_back(std::string("pde.domain.") + key +
                                               ": expected 3 numbers");
                            return;
                        }
                        out[i] = d.at(key)[i].get<double>();
                    }
                };
                corner("lo", cfg.domain.lo);
                corner("hi", cfg.domain.hi);
                cfg.domain_name = "custom";
            } else {
                p.errors.push_back("pde.domain: expected \"D1\", \"D2\", or a box object");
            }
        }
        p.number(n, "pde", "ref_nx", cfg.ref_nx);
        p.number(n, "pde", "ref_nt", cfg.ref_nt);
    }
    if (j.contains("benchmark")) {
        const json& n = j.at("benchmark");
        p.unknown_keys(n, "benchmark", {"widths", "reps", "warmup", "seed"});
        p.index_list(n, "benchmark", "widths", cfg.bench_widths);
        p.number(n, "benchmark", "reps", cfg.bench_reps);
        p.number(n, "benchmark", "warmup", cfg.bench_warmup);
        p.number(n, "benchmark", "seed", cfg.bench_seed);
    }
    if (j.contains("output")) {
        const json& n = j.at("output");
        p.unknown_keys(n, "output", {"dir"});
        p.text(n, "output", "dir", cfg.out_dir);
    }

    // Semantic checks.
    if (cfg.activation != "tanh")
        p.errors.push_back("network.activation: only \"tanh\" is supported");
    if (cfg.widths.size() != cfg.ranks.size() + 1)
        p.errors.push_back("network: widths must have exactly one more entry than ranks");
    else {
        for (std::size_t l = 0; l < cfg.ranks.size(); ++l) {
            if (cfg.ranks[l] == 0 ||
                cfg.ranks[l] > std::min(cfg.widths[l], cfg.widths[l + 1])) {
                p.errors.push_back("network.ranks[" + std::to_string(l) +
                                   "]: must be in [1, min(adjacent widths)]");
            }
        }
    }
    for (std::size_t a = 0; a < 3; ++a) {
        if (cfg.domain.lo[a] > cfg.domain.hi[a])
            p.errors.push_back("pde.domain: lo must be <= hi componentwise");
        if (cfg.domain.lo[a] < 0.0)
            p.errors.push_back("pde.domain: physical parameters are non-negative");
    }
    if (cfg.regs.gamma < 1.0) p.errors.push_back("regularizers.gamma: must be >= 1");
    if (cfg.x_grid_nx * cfg.x_grid_nt == 0)
        p.errors.push_back("reduction.x_grid: grid must be non-empty");

    if (!p.errors.empty()) {
        std::string msg = "invalid config:";
        for (const std::string& e : p.errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

RunConfig config_load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    json j;
    j["network"] = {{"widths", widths},
                    {"ranks", ranks},
                    {"activation", activation},
                    {"init_seed", init_seed},
                    {"init_bias_scale", init_bias_scale},
                    {"hyper_out_weight_scale", hyper_out_weight_scale},
                    {"hyper_out_bias", hyper_out_bias}};
    j["hypernetwork"] = {{"depth", hyper_depth}, {"width", hyper_width}};
    auto phase_json = [](const training::PhaseConfig& p) {
        return json{{"lr", p.lr},
                    {"epochs", p.epochs},
                    {"n_interior", p.n_interior},
                    {"n_initial", p.n_initial},
                    {"n_periodic", p.n_periodic},
                    {"seed", p.seed},
                    {"eval_interval", p.eval_interval}};
    };
    j["training"] = {{"meta", phase_json(meta)},
                     {"tune", phase_json(tune)},
                     {"fast", phase_json(fast)},
                     {"threads", par.threads},
                     {"chunk", par.chunk}};
    j["regularizers"] = {{"lambda_ortho", regs.lambda_ortho},
                         {"lambda_sparse", regs.lambda_sparse},
                         {"lambda_local", regs.lambda_local},
                         {"gamma", regs.gamma}};
    j["reduction"] = {{"r_hat", r_hat},
                      {"x_grid", {x_grid_nx, x_grid_nt}},
                      {"n_perturb", n_perturb},
                      {"sigma_perturb", sigma_perturb},
                      {"eps_trunc", eps_trunc},
                      {"mu_grid_per_axis", mu_grid_per_axis},
                      {"seed", reduction_seed}};
    j["pde"] = {{"domain", domain_name == "custom"
                               ? json{{"lo", domain.lo}, {"hi", domain.hi}}
                               : json(domain_name)},
                {"ref_nx", ref_nx},
                {"ref_nt", ref_nt}};
    j["benchmark"] = {{"widths", bench_widths},
                      {"reps", bench_reps},
                      {"warmup", bench_warmup},
                      {"seed", bench_seed}};
    j["output"] = {{"dir", out_dir}};
    return j;
}

}  // namespace lrnr
