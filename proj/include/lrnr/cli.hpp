#ifndef LRNR_CLI_HPP
#define LRNR_CLI_HPP

#include <optional>
#include <string>

#include "lrnr/config.hpp"
#include "lrnr/pde_params.hpp"

// Command entry points shared by the CLI binary and the test suites. Each
// returns a process exit code: 0 success, 2 config error, 1 anything else.

namespace lrnr {
namespace cli {

struct CmdOptions {
    std::string config_path;      // empty -> built-in defaults
    std::string checkpoint_path;  // input checkpoint (build-reduction, solve, evaluate)
    std::string out_dir;          // overrides config output.dir when set
    std::string mode = "fast";    // solve: fine-tune | fast | fast-naive
    std::optional<PdeParams> mu;
    std::optional<std::uint64_t> seed;  // overrides the active phase seed
};

int cmd_meta_train(const CmdOptions& opt);
int cmd_build_reduction(const CmdOptions& opt);
int cmd_solve(const CmdOptions& opt);
int cmd_benchmark(const CmdOptions& opt);
int cmd_evaluate(const CmdOptions& opt);

// Resolved output path helpers (exposed for tests).
std::string metrics_csv_path(const std::string& out_dir);
std::string checkpoint_path(const std::string& out_dir);
std::string solution_csv_path(const std::string& out_dir);
std::string coefficients_csv_path(const std::string& out_dir);
std::string benchmark_csv_path(const std::string& out_dir);

}  // namespace cli
}  // namespace lrnr

#endif
