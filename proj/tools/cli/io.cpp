#include "io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace supplyeq::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(where + ": '" + s + "' is not a number");
    return v;
}

Json number_json(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

int CsvTable::require(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw ConfigError(path + ": missing column '" + name + "'");
    return c;
}

double CsvTable::number(std::size_t row, int col) const {
    return parse_double(rows[row][col], path + ":" + std::to_string(row + 2));
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    CsvTable t;
    t.path = path.string();
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw ConfigError(t.path + ": row " + std::to_string(t.rows.size() + 2) + " has " +
                              std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw ConfigError(t.path + ": empty file");
    return t;
}

fs::path ConfigFile::path_of(const Json& node, const std::string& key) const {
    if (!node.contains(key) || !node[key].is_string()) throw ConfigError("missing path '" + key + "'");
    fs::path p = node[key].get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) throw ConfigError("referenced file does not exist: " + p.string());
    return p;
}

ConfigFile load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    ConfigFile cfg;
    try {
        cfg.root = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (!cfg.root.is_object()) throw ConfigError("config root must be an object");
    cfg.base = fs::absolute(path).parent_path();
    return cfg;
}

void check_keys(const Json& node, const std::vector<std::string>& allowed, const std::string& where) {
    if (!node.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : node.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

double get_number(const Json& node, const std::string& key, double fallback) {
    if (!node.contains(key)) return fallback;
    if (!node[key].is_number()) throw ConfigError("'" + key + "' must be a number");
    return node[key].get<double>();
}

Vec get_vec(const Json& node, const std::string& key) {
    if (!node.contains(key) || !node[key].is_array()) throw ConfigError("'" + key + "' must be an array of numbers");
    const auto& a = node[key];
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw ConfigError("'" + key + "' must be an array of numbers");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

Mat get_mat(const Json& node, const std::string& key) {
    if (!node.contains(key) || !node[key].is_array() || node[key].empty())
        throw ConfigError("'" + key + "' must be a nonempty array of rows");
    const auto& a = node[key];
    std::size_t cols = 0;
    Mat m;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Json row{{"r", a[i]}};
        Vec r = a[i].is_number() ? Vec::Constant(1, a[i].get<double>()) : get_vec(row, "r");
        if (i == 0) {
            cols = static_cast<std::size_t>(r.size());
            m.resize(static_cast<Eigen::Index>(a.size()), r.size());
        } else if (static_cast<std::size_t>(r.size()) != cols) {
            throw ConfigError("'" + key + "' rows differ in length");
        }
        m.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return m;
}

SolverOptions parse_solver(const Json& node, bool verbose) {
    SolverOptions o;
    o.record_iterates = verbose;
    if (node.is_null()) return o;
    check_keys(node,
               {"tol_outer", "tol_inner", "tol_bracket", "max_iter_jacobi", "max_iter_bracket",
                "max_bracket_expansions", "parallel"},
               "solver");
    o.tol_outer = get_number(node, "tol_outer", o.tol_outer);
    o.tol_inner = get_number(node, "tol_inner", o.tol_inner);
    o.tol_bracket = get_number(node, "tol_bracket", o.tol_bracket);
    o.max_iter_jacobi = static_cast<int>(get_number(node, "max_iter_jacobi", o.max_iter_jacobi));
    o.max_iter_bracket = static_cast<int>(get_number(node, "max_iter_bracket", o.max_iter_bracket));
    o.max_bracket_expansions = static_cast<int>(get_number(node, "max_bracket_expansions", o.max_bracket_expansions));
    if (node.contains("parallel")) o.parallel = node["parallel"].get<bool>();
    try {
        o.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("solver: ") + e.what());
    }
    return o;
}

OptimizerOptions parse_optimizer(const Json& node, OptimizerOptions o) {
    if (node.is_null()) return o;
    check_keys(node, {"gradient_tol", "max_iter", "armijo", "max_backtracks"}, "optimizer");
    o.gradient_tol = get_number(node, "gradient_tol", o.gradient_tol);
    o.max_iter = static_cast<int>(get_number(node, "max_iter", o.max_iter));
    o.armijo = get_number(node, "armijo", o.armijo);
    o.max_backtracks = static_cast<int>(get_number(node, "max_backtracks", o.max_backtracks));
    if (o.gradient_tol <= 0 || o.max_iter < 1 || o.armijo <= 0 || o.armijo >= 1 || o.max_backtracks < 1)
        throw ConfigError("optimizer: settings out of range");
    return o;
}

SamplingOptions parse_sampling(const Json& node) {
    SamplingOptions o;
    if (node.is_null()) return o;
    check_keys(node, {"samples", "box_low", "box_high", "tol", "tol_strict", "magnitudes", "seed"}, "sampling");
    o.samples = static_cast<int>(get_number(node, "samples", o.samples));
    o.box_low = get_number(node, "box_low", o.box_low);
    o.box_high = get_number(node, "box_high", o.box_high);
    o.tol = get_number(node, "tol", o.tol);
    o.tol_strict = get_number(node, "tol_strict", o.tol_strict);
    if (node.contains("magnitudes")) {
        Vec m = get_vec(node, "magnitudes");
        o.magnitudes.assign(m.data(), m.data() + m.size());
    }
    if (node.contains("seed")) o.seed = node["seed"].get<std::uint64_t>();
    if (o.samples < 1 || !(o.box_low < o.box_high)) throw ConfigError("sampling: settings out of range");
    return o;
}

Normalization parse_normalization(const Json& node, const Normalization& fallback) {
    if (node.is_null()) return fallback;
    std::string kind;
    int coord = 0;
    if (node.is_string()) {
        kind = node.get<std::string>();
    } else {
        check_keys(node, {"kind", "coordinate"}, "normalization");
        if (!node.contains("kind")) throw ConfigError("normalization: missing 'kind'");
        kind = node["kind"].get<std::string>();
        coord = static_cast<int>(get_number(node, "coordinate", 0));
    }
    if (kind == "coordinate") return Normalization::coordinate_of(coord);
    if (kind == "mean") return Normalization::mean();
    if (kind == "max") return Normalization::max();
    if (kind == "min") return Normalization::min();
    throw ConfigError("normalization: unknown kind '" + kind + "'");
}

DistanceFunction parse_distance(const Json& node) {
    if (node.is_null()) throw ConfigError("itu markets need a 'distance'");
    if (node.is_string()) {
        const auto s = node.get<std::string>();
        if (s == "transferable") return DistanceFunction::transferable();
        if (s == "exponential") return DistanceFunction::exponential();
        throw ConfigError("unknown distance '" + s + "'");
    }
    check_keys(node, {"log_transfer"}, "distance");
    Vec c = get_vec(node, "log_transfer");
    if (c.size() != 2 || c[0] <= 0 || c[1] <= 0) throw ConfigError("log_transfer needs two positive slopes");
    return DistanceFunction::log_transfer_fixture(c[0], c[1]);
}

LoadedMarket load_market(const ConfigFile& cfg, const Json& node) {
    check_keys(node, {"name", "family", "table", "masses", "distance"}, "market");
    if (!node.contains("family")) throw ConfigError("market: missing 'family'");
    FamilyKind kind;
    try {
        kind = family_kind_from_string(node["family"].get<std::string>());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }

    const CsvTable masses = read_csv(cfg.path_of(node, "masses"));
    const int cs = masses.require("side"), ct = masses.require("type"), cm = masses.require("mass");
    std::vector<std::string> xs, ys;
    std::vector<double> nv, mv;
    for (std::size_t r = 0; r < masses.rows.size(); ++r) {
        const auto& side = masses.rows[r][cs];
        auto& names = side == "x" ? xs : ys;
        auto& vals = side == "x" ? nv : mv;
        if (side != "x" && side != "y") throw ConfigError(masses.path + ": side must be x or y");
        if (std::find(names.begin(), names.end(), masses.rows[r][ct]) != names.end())
            throw ConfigError(masses.path + ": duplicate type '" + masses.rows[r][ct] + "'");
        names.push_back(masses.rows[r][ct]);
        vals.push_back(masses.number(r, cm));
    }
    if (xs.empty() || ys.empty()) throw ConfigError(masses.path + ": need types on both sides");

    const CsvTable table = read_csv(cfg.path_of(node, "table"));
    const int cx = table.require("x"), cy = table.require("y");
    const bool split = table.has("alpha") || table.has("gamma");
    const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
    Mat alpha = Mat::Constant(nx, ny, std::nan("")), gamma = alpha, phi = alpha;
    std::map<std::pair<std::string, std::string>, bool> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        auto ix = std::find(xs.begin(), xs.end(), row[cx]);
        auto iy = std::find(ys.begin(), ys.end(), row[cy]);
        if (ix == xs.end() || iy == ys.end())
            throw ConfigError(table.path + ": unknown type pair (" + row[cx] + ", " + row[cy] + ")");
        if (seen[{row[cx], row[cy]}]) throw ConfigError(table.path + ": duplicate cell (" + row[cx] + ", " + row[cy] + ")");
        seen[{row[cx], row[cy]}] = true;
        const auto i = ix - xs.begin(), j = iy - ys.begin();
        if (split) {
            alpha(i, j) = table.number(r, table.require("alpha"));
            gamma(i, j) = table.number(r, table.require("gamma"));
        } else {
            phi(i, j) = table.number(r, table.require("phi"));
        }
    }
    if (static_cast<int>(seen.size()) != nx * ny) throw ConfigError(table.path + ": table does not cover every type pair");

    Vec n = Eigen::Map<Vec>(nv.data(), nx), m = Eigen::Map<Vec>(mv.data(), ny);
    if ((kind == FamilyKind::ETU || kind == FamilyKind::ITU) && !split)
        throw ConfigError(table.path + ": " + std::string(to_string(kind)) + " needs alpha and gamma columns");
    try {
        MatchingFamily family = [&] {
            switch (kind) {
                case FamilyKind::TU: return split ? MatchingFamily::tu_split(alpha, gamma) : MatchingFamily::tu(phi);
                case FamilyKind::NTU: return MatchingFamily::ntu(split ? Mat(alpha + gamma) : phi);
                case FamilyKind::ETU: return MatchingFamily::etu(alpha, gamma);
                case FamilyKind::ITU: break;
            }
            return MatchingFamily::itu(alpha, gamma, parse_distance(node.contains("distance") ? node["distance"] : Json()));
        }();
        LoadedMarket out{node.value("name", std::string("market")), make_market(n, m, std::move(family))};
        out.market.x_types = xs;
        out.market.y_types = ys;
        return out;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

DemandModel parse_demand_model(const Json& node, int goods, std::uint64_t seed) {
    check_keys(node, {"family", "draws", "characteristics", "sigma", "tolls"}, "model");
    if (!node.contains("family")) throw ConfigError("model: missing 'family'");
    const long draws = static_cast<long>(get_number(node, "draws", 0));
    if (draws < 0) throw ConfigError("model: draws must be nonnegative");
    const DrawConfig dc{draws > 0 ? draws : 100'000, seed};
    try {
        switch (demand_family_from_string(node["family"].get<std::string>())) {
            case DemandFamily::Logit:
                return draws > 0 ? DemandModel::logit_mc(goods, dc) : DemandModel::logit(goods);
            case DemandFamily::RCLogit: {
                Mat x = get_mat(node, "characteristics");
                if (x.rows() != goods) throw ConfigError("model: characteristics need one row per good");
                return DemandModel::rc_logit(x, get_vec(node, "sigma"), dc);
            }
            case DemandFamily::PureCharacteristics: {
                Vec x = get_vec(node, "characteristics");
                if (x.size() != goods) throw ConfigError("model: characteristics need one entry per good");
                return DemandModel::pure_characteristics(x, dc);
            }
            case DemandFamily::Bridge: {
                Vec t = get_vec(node, "tolls");
                if (t.size() != goods) throw ConfigError("model: tolls need one entry per good");
                return DemandModel::bridge(t, dc);
            }
            case DemandFamily::Custom: break;
        }
    } catch (const Error& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    throw ConfigError("model: custom utilities cannot be configured from a file");
}

LoadedShares load_shares(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const int cg = t.require("good"), cs = t.require("share");
    LoadedShares out;
    out.shares.resize(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        out.goods.push_back(t.rows[r][cg]);
        out.shares[static_cast<Eigen::Index>(r)] = t.number(r, cs);
    }
    try {
        validate_shares(out.shares);
    } catch (const Error& e) {
        throw ConfigError(t.path + ": " + e.what());
    }
    return out;
}

Json to_json(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_json(v[i]));
    return a;
}

Json to_json(const Mat& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vec(m.row(i).transpose())));
    return a;
}

Json to_json(const SolveReport& r, bool verbose) {
    Json j;
    j["converged"] = r.converged;
    j["residual"] = number_json(r.residual);
    j["normalization_value"] = number_json(r.normalization_value);
    j["pin"] = r.pin;
    j["pin_value"] = number_json(r.pin_value);
    j["jacobi_iterations"] = r.jacobi_iterations;
    j["bracket_iterations"] = r.bracket_iterations;
    j["pinned_solves"] = r.pinned_solves;
    j["monotone_certificate"] = r.monotone_certificate;
    j["p"] = to_json(r.p_star);
    if (verbose) {
        Json h = Json::array();
        for (const auto& [lo, hi] : r.bracket_history) h.push_back({number_json(lo), number_json(hi)});
        j["bracket_history"] = h;
        Json it = Json::array();
        for (const auto& p : r.iterates) it.push_back(to_json(p));
        j["iterates"] = it;
    }
    return j;
}

Json to_json(const PropertyReport& r) {
    Json j;
    j["property"] = r.property_name;
    j["passed"] = r.passed;
    j["samples_tested"] = r.samples_tested;
    j["violation_count"] = r.violation_count;
    Json vs = Json::array();
    for (const auto& v : r.violations) {
        Json vj;
        vj["p"] = to_json(v.p);
        vj["coordinates"] = v.coordinates;
        Json obs = Json::array();
        for (double o : v.observed) obs.push_back(number_json(o));
        vj["observed"] = obs;
        vj["detail"] = v.detail;
        vs.push_back(vj);
    }
    j["violations"] = vs;
    j["flags"] = r.flags;
    return j;
}

Json error_json(const std::exception& e) {
    Json j;
    if (const auto* se = dynamic_cast<const Error*>(&e)) j["code"] = std::string(to_string(se->code()));
    else if (dynamic_cast<const ConfigError*>(&e)) j["code"] = "ConfigError";
    else j["code"] = "Internal";
    j["message"] = e.what();
    return j;
}

void write_json(const fs::path& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string fmt(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace supplyeq::cli
