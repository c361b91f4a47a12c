#ifndef LRNR_CONFIG_HPP
#define LRNR_CONFIG_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrnr/pde_params.hpp"
#include "lrnr/training.hpp"

// JSON run configuration. Every field has a default; unknown keys and type
// mismatches are schema errors listing the offending fields.

namespace lrnr {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RunConfig {
    // network
    std::vector<std::size_t> widths{2, 128, 128, 128, 128, 1};
    std::vector<std::size_t> ranks{1, 16, 16, 16, 1};
    std::string activation = "tanh";
    std::uint64_t init_seed = 42;
    double init_bias_scale = 1.0;
    double hyper_out_weight_scale = 0.01;
    double hyper_out_bias = 1.0;

    // hypernetwork
    std::size_t hyper_depth = 3;
    std::size_t hyper_width = 0;  // 0 -> max(64, r_total)

    // training
    training::PhaseConfig meta{3e-3, 3000, 2048, 256, 256, 1234, 0};
    training::PhaseConfig tune{1e-2, 400, 1024, 256, 256, 1234, 100};
    training::PhaseConfig fast{1e-2, 400, 0, 0, 0, 1234, 0};
    training::ParallelConfig par{2, 64};

    // regularizers
    training::RegularizerWeights regs;

    // reduction
    std::size_t r_hat = 64;
    std::size_t x_grid_nx = 4;
    std::size_t x_grid_nt = 3;
    std::size_t n_perturb = 8;
    double sigma_perturb = 0.05;
    double eps_trunc = 1e-6;
    std::size_t mu_grid_per_axis = 5;
    std::uint64_t reduction_seed = 777;

    // pde
    ParamDomain domain = ParamDomain::d1();
    std::string domain_name = "D1";  // "D1", "D2", or "custom"
    std::size_t ref_nx = 512;
    std::size_t ref_nt = 0;  // 0 -> CFL-chosen

    // benchmark
    std::vector<std::size_t> bench_widths{128, 256, 512, 1024};
    std::size_t bench_reps = 11;
    std::size_t bench_warmup = 2;
    std::uint64_t bench_seed = 2024;

    // output
    std::string out_dir = "out";

    std::size_t hyper_width_resolved() const;
    nlohmann::json to_json() const;
};

RunConfig config_from_json(const nlohmann::json& j);
RunConfig config_load(const std::string& path);

}  // namespace lrnr

#endif
