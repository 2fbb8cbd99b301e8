#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// Batch front end: `supplyeq <match|invert|estimate|check> --config FILE`.
// Exit codes: 0 ok, 1 config or schema error, 2 solver or optimizer failure
// (report still written), 3 a diagnostic probe failed.
namespace supplyeq::cli {

struct GlobalOptions {
    std::filesystem::path config;
    std::filesystem::path out = ".";
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    bool verbose = false;
};

int cmd_match(const GlobalOptions& g, std::ostream& log);
int cmd_invert(const GlobalOptions& g, std::ostream& log);
int cmd_estimate(const GlobalOptions& g, std::ostream& log);
int cmd_check(const GlobalOptions& g, std::ostream& log);

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace supplyeq::cli
