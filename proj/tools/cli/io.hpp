#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "supplyeq/diagnostics.hpp"
#include "supplyeq/discrete_choice.hpp"
#include "supplyeq/estimation.hpp"
#include "supplyeq/matching.hpp"
#include "supplyeq/solver.hpp"

// Config, CSV and report plumbing shared by the commands.
namespace supplyeq::cli {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1.0";

/// Anything wrong with the config or its input files: exit 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  ///< -1 when absent
    int require(const std::string& name) const;
    bool has(const std::string& name) const { return column(name) >= 0; }
    double number(std::size_t row, int col) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Parsed config plus the directory its relative paths resolve against.
struct ConfigFile {
    Json root;
    std::filesystem::path base;

    std::filesystem::path path_of(const Json& node, const std::string& key) const;
};

ConfigFile load_config(const std::filesystem::path& path);

/// Throws ConfigError on any key outside `allowed`.
void check_keys(const Json& node, const std::vector<std::string>& allowed, const std::string& where);
double get_number(const Json& node, const std::string& key, double fallback);
Vec get_vec(const Json& node, const std::string& key);
Mat get_mat(const Json& node, const std::string& key);

SolverOptions parse_solver(const Json& node, bool verbose);
OptimizerOptions parse_optimizer(const Json& node, OptimizerOptions base);
SamplingOptions parse_sampling(const Json& node);
/// Absent node: `fallback`. String shorthand or {kind, coordinate}.
Normalization parse_normalization(const Json& node, const Normalization& fallback);

struct LoadedMarket {
    std::string name;
    MarketPrimitives market;
};

/// {family, table, masses[, distance, name]}.
LoadedMarket load_market(const ConfigFile& cfg, const Json& node);
DistanceFunction parse_distance(const Json& node);

/// {family, draws, characteristics, sigma, tolls}; goods from the data.
DemandModel parse_demand_model(const Json& node, int goods, std::uint64_t seed);

struct LoadedShares {
    std::vector<std::string> goods;
    Vec shares;
};
LoadedShares load_shares(const std::filesystem::path& path);

Json to_json(const Vec& v);
Json to_json(const Mat& m);
Json to_json(const SolveReport& r, bool verbose);
Json to_json(const PropertyReport& r);
Json error_json(const std::exception& e);

void write_json(const std::filesystem::path& path, const Json& j);
/// Shortest text that round-trips the double.
std::string fmt(double v);

}  // namespace supplyeq::cli
