#include <algorithm>
#include <atomic>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include "cli.hpp"
#include "io.hpp"

namespace supplyeq::cli {

namespace fs = std::filesystem;

namespace {

using Body = std::function<int(const ConfigFile&, Json&)>;

/// Shared envelope: load the config, run, always try to leave a report behind.
int run_command(const std::string& name, const GlobalOptions& g, std::ostream& log, const Body& body) {
    Json report;
    report["schema_version"] = kSchemaVersion;
    report["command"] = name;
    int code = 0;
    try {
        const ConfigFile cfg = load_config(g.config);
        if (cfg.root.contains("command") && cfg.root["command"] != name)
            throw ConfigError("config is for '" + cfg.root["command"].get<std::string>() + "', not '" + name + "'");
        fs::create_directories(g.out);
        code = body(cfg, report);
    } catch (const ConfigError& e) {
        report["status"] = "config_error";
        report["error"] = error_json(e);
        code = 1;
    } catch (const nlohmann::json::exception& e) {
        report["status"] = "config_error";
        report["error"] = {{"code", "ConfigError"}, {"message", e.what()}};
        code = 1;
    } catch (const std::exception& e) {
        report["status"] = "failed";
        report["error"] = error_json(e);
        code = 2;
    }
    if (!report.contains("status")) report["status"] = code == 0 ? "ok" : code == 3 ? "probe_failed" : "failed";
    if (report.contains("error")) log << name << ": " << report["error"]["message"].get<std::string>() << '\n';
    std::error_code ec;
    if (fs::is_directory(g.out, ec)) {
        try {
            write_json(g.out / "report.json", report);
        } catch (const std::exception& e) {
            log << e.what() << '\n';
        }
    }
    return code;
}

std::uint64_t run_seed(const GlobalOptions& g, const Json& root) {
    if (g.seed) return *g.seed;
    if (root.contains("seed")) return root["seed"].get<std::uint64_t>();
    return 0;
}

const Json& opt(const Json& node, const std::string& key) {
    static const Json null;
    return node.contains(key) ? node[key] : null;
}

double max_abs(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// ---- match ----

struct MarketOutcome {
    std::optional<MatchingEquilibrium> eq;
    std::optional<SolveReport> best;
    Json error;
};

Json market_json(const LoadedMarket& lm, const Normalization& norm, double K, const MarketOutcome& r, bool verbose) {
    const auto& mk = lm.market;
    Json j;
    j["name"] = lm.name;
    j["family"] = std::string(to_string(mk.family.kind()));
    j["x_types"] = mk.x_types;
    j["y_types"] = mk.y_types;
    j["normalization"] = norm.label;
    j["K"] = K;
    if (r.eq) {
        const auto& eq = *r.eq;
        j["converged"] = eq.report.converged;
        j["a"] = to_json(eq.a);
        j["b"] = to_json(eq.b);
        j["residual"] = eq.report.residual;
        j["row_residual"] = max_abs(eq.mu.rowwise().sum() - mk.n);
        j["column_residual"] = max_abs(eq.mu.colwise().sum().transpose() - mk.m);
        j["solve"] = to_json(eq.report, verbose);
    } else {
        j["converged"] = false;
        j["error"] = r.error;
        if (r.best) j["best"] = to_json(*r.best, verbose);
    }
    return j;
}

void write_equilibrium(const fs::path& path, const LoadedMarket& lm, const MatchingEquilibrium& eq) {
    const auto& fam = lm.market.family;
    std::optional<Mat> w;
    if (fam.has_transfers()) w = recover_transfers(fam, eq);
    std::ofstream out(path);
    out << "x,y,mu" << (w ? ",w" : "") << '\n';
    for (int x = 0; x < lm.market.nx(); ++x) {
        for (int y = 0; y < lm.market.ny(); ++y) {
            out << lm.market.x_types[x] << ',' << lm.market.y_types[y] << ',' << fmt(eq.mu(x, y));
            if (w) out << ',' << fmt((*w)(x, y));
            out << '\n';
        }
    }
}

int match_body(const GlobalOptions& g, std::ostream& log, const ConfigFile& cfg, Json& report) {
    const Json& root = cfg.root;
    check_keys(root, {"command", "seed", "market", "markets", "normalization", "K", "solver"}, "config");
    std::vector<Json> nodes;
    if (root.contains("market") == root.contains("markets"))
        throw ConfigError("config needs exactly one of 'market' or 'markets'");
    if (root.contains("market")) nodes.push_back(root["market"]);
    else for (const auto& n : root["markets"]) nodes.push_back(n);
    if (nodes.empty()) throw ConfigError("'markets' is empty");

    std::vector<LoadedMarket> markets;
    std::vector<Normalization> norms;
    std::set<std::string> names;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        markets.push_back(load_market(cfg, nodes[i]));
        if (nodes.size() > 1 && !nodes[i].contains("name")) markets.back().name = "market" + std::to_string(i);
        if (!names.insert(markets.back().name).second) throw ConfigError("duplicate market name " + markets.back().name);
        norms.push_back(parse_normalization(opt(root, "normalization"), default_matching_normalization(markets.back().market)));
        if (norms.back().kind == NormalizationKind::Coordinate &&
            (norms.back().coordinate < 0 || norms.back().coordinate >= markets.back().market.nx() + markets.back().market.ny()))
            throw ConfigError("normalization coordinate out of range");
    }
    const double K = get_number(root, "K", 0.0);
    const SolverOptions opts = parse_solver(opt(root, "solver"), g.verbose);

    std::vector<MarketOutcome> results(markets.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < markets.size(); i = next++) {
            try {
                results[i].eq = solve_mfe(markets[i].market, norms[i], K, opts);
            } catch (const SolveError& e) {
                results[i].error = error_json(e);
                results[i].best = e.best();
            } catch (const std::exception& e) {
                results[i].error = error_json(e);
            }
        }
    };
    const int jobs = std::min<int>(g.jobs, static_cast<int>(markets.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    int code = 0;
    Json arr = Json::array();
    for (std::size_t i = 0; i < markets.size(); ++i) {
        arr.push_back(market_json(markets[i], norms[i], K, results[i], g.verbose));
        if (results[i].eq) {
            const auto file = markets.size() == 1 ? std::string("equilibrium.csv") : "equilibrium_" + markets[i].name + ".csv";
            write_equilibrium(g.out / file, markets[i], *results[i].eq);
            if (g.verbose) log << markets[i].name << ": residual " << results[i].eq->report.residual << '\n';
        } else {
            code = 2;
        }
    }
    report["markets"] = arr;
    if (code != 0) report["error"] = {{"code", "SolverFailure"}, {"message", "one or more markets failed to solve"}};
    return code;
}

// ---- invert ----

Json model_json(const DemandModel& m, std::uint64_t seed) {
    Json j;
    j["family"] = std::string(to_string(m.family()));
    j["name"] = m.name();
    j["goods"] = m.goods();
    j["draws"] = m.draws();
    j["seed"] = seed;
    return j;
}

int invert_body(const GlobalOptions& g, std::ostream& log, const ConfigFile& cfg, Json& report) {
    const Json& root = cfg.root;
    check_keys(root, {"command", "seed", "model", "shares", "normalization", "K", "solver"}, "config");
    const auto shares = load_shares(cfg.path_of(root, "shares"));
    const auto seed = run_seed(g, root);
    if (!root.contains("model")) throw ConfigError("config: missing 'model'");
    const DemandModel model = parse_demand_model(root["model"], static_cast<int>(shares.shares.size()), seed);
    const Normalization norm = parse_normalization(opt(root, "normalization"), Normalization::coordinate_of(0));
    if (norm.kind == NormalizationKind::Coordinate && (norm.coordinate < 0 || norm.coordinate >= model.goods()))
        throw ConfigError("normalization coordinate out of range");
    const double K = get_number(root, "K", 0.0);
    const SolverOptions opts = parse_solver(opt(root, "solver"), g.verbose);

    report["model"] = model_json(model, seed);
    report["goods"] = shares.goods;
    report["normalization"] = norm.label;
    report["K"] = K;
    report["tolerance"] = model.simulated() ? std::max(opts.tol_outer, simulated_share_tolerance(model)) : opts.tol_outer;
    try {
        const auto res = invert_demand(model, shares.shares, norm, K, opts);
        const Vec fitted = demand(model, res.delta);
        report["delta"] = to_json(res.delta);
        report["fitted_shares"] = to_json(fitted);
        report["share_residual"] = max_abs(fitted - shares.shares);
        report["solve"] = to_json(res.report, g.verbose);
        std::ofstream out(g.out / "delta.csv");
        out << "good,delta\n";
        for (std::size_t z = 0; z < shares.goods.size(); ++z)
            out << shares.goods[z] << ',' << fmt(res.delta[static_cast<Eigen::Index>(z)]) << '\n';
        if (g.verbose) log << "invert: residual " << res.report.residual << '\n';
        return 0;
    } catch (const SolveError& e) {
        report["error"] = error_json(e);
        report["best"] = to_json(e.best(), g.verbose);
        return 2;
    } catch (const Error& e) {
        report["error"] = error_json(e);
        return 2;
    }
}

// ---- estimate ----

struct BasisCells {
    Mat alpha0, gamma0;
    std::vector<Mat> alpha, gamma;
};

/// Rows (x, y, param, phi | alpha, gamma); param is "offset" or a 0-based index.
BasisCells load_basis(const fs::path& path, const std::vector<std::string>& xs, const std::vector<std::string>& ys) {
    const CsvTable t = read_csv(path);
    const int cx = t.require("x"), cy = t.require("y"), cp = t.require("param");
    const bool split = t.has("alpha") || t.has("gamma");
    const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
    BasisCells out{Mat::Zero(nx, ny), Mat::Zero(nx, ny), {}, {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        auto ix = std::find(xs.begin(), xs.end(), row[cx]);
        auto iy = std::find(ys.begin(), ys.end(), row[cy]);
        if (ix == xs.end() || iy == ys.end())
            throw ConfigError(t.path + ": type pair (" + row[cx] + ", " + row[cy] + ") not in the sample");
        const auto i = ix - xs.begin(), j = iy - ys.begin();
        const double va = split ? t.number(r, t.require("alpha")) : t.number(r, t.require("phi"));
        const double vg = split ? t.number(r, t.require("gamma")) : 0.0;
        if (row[cp] == "offset") {
            out.alpha0(i, j) += va;
            out.gamma0(i, j) += vg;
            continue;
        }
        int k = -1;
        try {
            std::size_t used = 0;
            k = std::stoi(row[cp], &used);
            if (used != row[cp].size()) k = -1;
        } catch (const std::exception&) {
        }
        if (k < 0 || k > 1000) throw ConfigError(t.path + ": param must be 'offset' or an index, got '" + row[cp] + "'");
        while (static_cast<int>(out.alpha.size()) <= k) {
            out.alpha.push_back(Mat::Zero(nx, ny));
            out.gamma.push_back(Mat::Zero(nx, ny));
        }
        out.alpha[k](i, j) += va;
        out.gamma[k](i, j) += vg;
    }
    if (out.alpha.empty()) throw ConfigError(t.path + ": no parameter rows");
    return out;
}

int mle_body(const GlobalOptions& g, std::ostream& log, const ConfigFile& cfg, Json& report) {
    const Json& root = cfg.root;
    check_keys(root,
               {"command", "seed", "method", "family", "sample", "basis", "distance", "theta0", "lower", "upper",
                "normalization", "K", "solver", "optimizer", "kkt"},
               "config");
    const CsvTable st = read_csv(cfg.path_of(root, "sample"));
    const int cx = st.require("x"), cy = st.require("y"), cc = st.require("count");
    std::vector<std::string> xs, ys;
    for (const auto& row : st.rows) {
        if (std::find(xs.begin(), xs.end(), row[cx]) == xs.end()) xs.push_back(row[cx]);
        if (std::find(ys.begin(), ys.end(), row[cy]) == ys.end()) ys.push_back(row[cy]);
    }
    MatchSample sample{Mat::Zero(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ys.size()))};
    for (std::size_t r = 0; r < st.rows.size(); ++r) {
        const auto i = std::find(xs.begin(), xs.end(), st.rows[r][cx]) - xs.begin();
        const auto j = std::find(ys.begin(), ys.end(), st.rows[r][cy]) - ys.begin();
        sample.mu_hat(i, j) += st.number(r, cc);
    }

    ThetaSpec spec;
    try {
        spec.kind = family_kind_from_string(root.value("family", std::string("tu")));
        sample.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    auto basis = load_basis(cfg.path_of(root, "basis"), xs, ys);
    spec.alpha0 = basis.alpha0;
    spec.gamma0 = basis.gamma0;
    spec.alpha_basis = basis.alpha;
    spec.gamma_basis = basis.gamma;
    if (spec.kind == FamilyKind::ITU) spec.distance = parse_distance(opt(root, "distance"));
    if (root.contains("lower")) spec.lower = get_vec(root, "lower");
    if (root.contains("upper")) spec.upper = get_vec(root, "upper");
    const Vec theta0 = get_vec(root, "theta0");
    try {
        spec.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (theta0.size() != spec.dim()) throw ConfigError("theta0 has " + std::to_string(theta0.size()) +
                                                       " entries, basis has " + std::to_string(spec.dim()));
    const int nx = spec.rows();
    Normalization fallback = Normalization::coordinate_of(nx);
    fallback.label = "b[0]";
    const Normalization norm = parse_normalization(opt(root, "normalization"), fallback);
    const double K = get_number(root, "K", 0.0);
    const SolverOptions solver = parse_solver(opt(root, "solver"), false);
    const OptimizerOptions optim = parse_optimizer(opt(root, "optimizer"), OptimizerOptions{});

    report["method"] = "mle";
    report["family"] = std::string(to_string(spec.kind));
    report["x_types"] = xs;
    report["y_types"] = ys;
    report["normalization"] = norm.label;
    report["K"] = K;
    report["observations"] = sample.total();

    auto put = [&](const MleReport& r) {
        Json j;
        j["theta"] = to_json(r.theta);
        j["loglik"] = r.loglik;
        j["gradient"] = to_json(r.gradient);
        j["gradient_norm"] = r.gradient_norm;
        j["iterations"] = r.iterations;
        j["evaluations"] = r.evaluations;
        j["converged"] = r.converged;
        j["message"] = r.message;
        j["a"] = to_json(r.a);
        j["b"] = to_json(r.b);
        return j;
    };
    auto write_fitted = [&](const MleReport& r) {
        if (r.mu.size() == 0) return;
        std::ofstream out(g.out / "fitted.csv");
        out << "x,y,count,mu,pi\n";
        for (int x = 0; x < nx; ++x)
            for (int y = 0; y < spec.cols(); ++y)
                out << xs[x] << ',' << ys[y] << ',' << fmt(sample.mu_hat(x, y)) << ',' << fmt(r.mu(x, y)) << ','
                    << fmt(r.pi(x, y)) << '\n';
    };

    MleReport r;
    try {
        r = mle_nested(sample, spec, norm, K, theta0, solver, optim);
    } catch (const EstimationError& e) {
        report["estimate"] = put(e.best());
        report["error"] = error_json(e);
        write_fitted(e.best());
        return 2;
    }
    report["estimate"] = put(r);
    write_fitted(r);
    if (root.value("kkt", true)) {
        try {
            MpecPoint pt{r.theta, r.a, r.b, mpec_multipliers(r.theta, r.a, r.b, sample, spec, norm, K)};
            report["kkt_residual"] = max_abs(mpec_residual(pt, sample, spec, norm, K).psi);
        } catch (const Error& e) {
            report["kkt_residual"] = nullptr;
        }
    }
    if (g.verbose) log << "estimate: loglik " << r.loglik << " after " << r.iterations << " iterations\n";
    if (!r.converged) {
        report["error"] = {{"code", "OptimizerStalled"}, {"message", r.message}};
        return 2;
    }
    return 0;
}

int gmm_body(const GlobalOptions& g, std::ostream& log, const ConfigFile& cfg, Json& report) {
    const Json& root = cfg.root;
    check_keys(root,
               {"command", "seed", "method", "data", "model", "g", "theta0", "weight", "two_step", "normalization", "K",
                "solver", "optimizer"},
               "config");
    const CsvTable t = read_csv(cfg.path_of(root, "data"));
    const int cg = t.require("good"), c1 = t.require("x1"), c2 = t.require("x2"), cy = t.require("y"),
              cs = t.require("share");
    const auto goods = static_cast<Eigen::Index>(t.rows.size());
    GmmDataset data{Vec(goods), Vec(goods), Vec(goods), Vec(goods)};
    std::vector<std::string> names;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        names.push_back(t.rows[r][cg]);
        data.x1[i] = t.number(r, c1);
        data.x2[i] = t.number(r, c2);
        data.y[i] = t.number(r, cy);
        data.s[i] = t.number(r, cs);
    }
    try {
        data.validate();
    } catch (const Error& e) {
        throw ConfigError(t.path + ": " + e.what());
    }
    const auto seed = run_seed(g, root);
    if (!root.contains("model")) throw ConfigError("config: missing 'model'");
    const DemandModel model = parse_demand_model(root["model"], static_cast<int>(goods), seed);
    if (root.value("g", std::string("linear-price")) != "linear-price")
        throw ConfigError("only the 'linear-price' g family is available from a config");
    const Vec theta0 = get_vec(root, "theta0");
    if (theta0.size() != 1) throw ConfigError("linear-price takes one parameter");
    const Mat W = root.contains("weight") ? get_mat(root, "weight") : Mat(Mat::Identity(2, 2));

    GmmOptions o;
    o.two_step = root.value("two_step", false);
    o.optimizer = parse_optimizer(opt(root, "optimizer"), o.optimizer);
    o.solver = parse_solver(opt(root, "solver"), false);
    o.norm = parse_normalization(opt(root, "normalization"), o.norm);
    o.K = get_number(root, "K", 0.0);

    report["method"] = "gmm";
    report["model"] = model_json(model, seed);
    report["goods"] = names;
    report["g"] = "linear-price";
    report["two_step"] = o.two_step;
    GmmReport r;
    try {
        r = gmm_nested(data, model, linear_price_g(), W, theta0, o);
    } catch (const SolveError& e) {
        report["error"] = error_json(e);
        report["best"] = to_json(e.best(), g.verbose);
        return 2;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SingularWeight || e.code() == ErrorCode::DimensionMismatch)
            throw ConfigError(e.what());
        report["error"] = error_json(e);
        return 2;
    }
    Json j;
    j["theta"] = to_json(r.theta);
    j["moments"] = to_json(r.moments);
    j["objective"] = r.objective;
    j["weight"] = to_json(r.weight);
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    report["estimate"] = j;
    {
        std::ofstream out(g.out / "fitted.csv");
        out << "good,share,delta,xi\n";
        for (Eigen::Index z = 0; z < goods; ++z)
            out << names[z] << ',' << fmt(data.s[z]) << ',' << fmt(r.delta[z]) << ',' << fmt(r.xi[z]) << '\n';
    }
    if (g.verbose) log << "estimate: objective " << r.objective << '\n';
    if (!r.converged) {
        report["error"] = {{"code", "OptimizerStalled"}, {"message", "GMM search did not converge"}};
        return 2;
    }
    return 0;
}

// ---- check ----

const std::vector<std::string> kProbes{"weak_substitutes", "pivotal_substitutes", "responsiveness",
                                       "connected_strict_substitutes", "balance", "utility_regularity"};

struct CheckTarget {
    SupplySystem system;
    Vec q;
    std::optional<DemandModel> model;
    Json description;
};

CheckTarget load_check_target(const GlobalOptions& g, const ConfigFile& cfg) {
    const Json& node = cfg.root["system"];
    if (!node.is_object() || !node.contains("kind")) throw ConfigError("config: 'system' needs a 'kind'");
    const auto kind = node["kind"].get<std::string>();
    Json desc{{"kind", kind}};
    if (kind == "planted") {
        check_keys(node, {"kind", "name"}, "system");
        const auto name = node.value("name", std::string());
        std::optional<PlantedSystem> p;
        if (name == "nonmonotone") p = planted_nonmonotone();
        else if (name == "disconnected") p = planted_disconnected();
        else if (name == "bounded") p = planted_bounded();
        else if (name == "constant") p = planted_constant();
        else throw ConfigError("unknown planted system '" + name + "'");
        desc["name"] = name;
        desc["broken_property"] = p->broken_property;
        return {std::move(p->system), p->q, std::nullopt, desc};
    }
    if (kind == "matching") {
        check_keys(node, {"kind", "market"}, "system");
        if (!node.contains("market")) throw ConfigError("system: missing 'market'");
        auto lm = load_market(cfg, node["market"]);
        desc["name"] = lm.name;
        desc["family"] = std::string(to_string(lm.market.family.kind()));
        return {build_mfe_system(lm.market), matching_target(lm.market), std::nullopt, desc};
    }
    if (kind == "demand") {
        check_keys(node, {"kind", "model", "shares", "goods"}, "system");
        Vec q;
        if (node.contains("shares")) {
            q = load_shares(cfg.path_of(node, "shares")).shares;
        } else {
            const int goods = static_cast<int>(get_number(node, "goods", 0));
            if (goods < 2) throw ConfigError("system: give 'shares' or 'goods' >= 2");
            q = Vec::Constant(goods, 1.0 / goods);
        }
        if (!node.contains("model")) throw ConfigError("system: missing 'model'");
        const auto seed = run_seed(g, cfg.root);
        DemandModel model = parse_demand_model(node["model"], static_cast<int>(q.size()), seed);
        desc["model"] = model_json(model, seed);
        SupplySystem sys = build_demand_system(model);
        return {std::move(sys), q, std::move(model), desc};
    }
    throw ConfigError("system kind must be planted, matching or demand");
}

UtilityProbeGrid parse_grid(const Json& node) {
    UtilityProbeGrid grid;
    if (node.is_null()) return grid;
    check_keys(node, {"delta", "eps", "magnitudes", "h"}, "utility_grid");
    auto assign = [&](const char* key, std::vector<double>& dst) {
        if (!node.contains(key)) return;
        Vec v = get_vec(node, key);
        dst.assign(v.data(), v.data() + v.size());
    };
    assign("delta", grid.delta);
    assign("eps", grid.eps);
    assign("magnitudes", grid.magnitudes);
    grid.h = get_number(node, "h", grid.h);
    return grid;
}

int check_body(const GlobalOptions& g, std::ostream& log, const ConfigFile& cfg, Json& report) {
    const Json& root = cfg.root;
    check_keys(root, {"command", "seed", "system", "probes", "h", "sampling", "utility_grid"}, "config");
    if (!root.contains("system")) throw ConfigError("config: missing 'system'");
    CheckTarget target = load_check_target(g, cfg);
    std::vector<std::string> probes;
    if (root.contains("probes")) {
        for (const auto& p : root["probes"]) {
            const auto name = p.get<std::string>();
            if (std::find(kProbes.begin(), kProbes.end(), name) == kProbes.end())
                throw ConfigError("unknown probe '" + name + "'");
            probes.push_back(name);
        }
    } else {
        probes.assign(kProbes.begin(), kProbes.end() - 1);
        if (target.model) probes.push_back("utility_regularity");
    }
    if (!target.model && std::count(probes.begin(), probes.end(), "utility_regularity"))
        throw ConfigError("utility_regularity needs a demand system");
    const double h = get_number(root, "h", 1e-4);
    const SamplingOptions so = parse_sampling(opt(root, "sampling"));
    const UtilityProbeGrid grid = parse_grid(opt(root, "utility_grid"));

    report["system"] = target.description;
    report["target"] = to_json(target.q);
    Json arr = Json::array();
    bool all = true, errored = false;
    for (const auto& name : probes) {
        try {
            PropertyReport r;
            if (name == "weak_substitutes") r = check_weak_substitutes(target.system, h, so);
            else if (name == "pivotal_substitutes") r = check_pivotal_substitutes_all(target.system, target.q, so);
            else if (name == "responsiveness") r = check_responsiveness_all(target.system, target.q, so);
            else if (name == "connected_strict_substitutes") r = check_connected_strict_substitutes(target.system, so);
            else if (name == "balance") r = check_balance(target.system, so);
            else r = check_utility_regularity(*target.model, grid);
            all = all && r.passed;
            if (g.verbose) log << name << ": " << (r.passed ? "pass" : "FAIL") << '\n';
            arr.push_back(to_json(r));
        } catch (const std::exception& e) {
            errored = true;
            arr.push_back({{"property", name}, {"passed", false}, {"error", error_json(e)}});
        }
    }
    report["probes"] = arr;
    report["all_passed"] = all && !errored;
    if (errored) {
        report["error"] = {{"code", "ProbeError"}, {"message", "a probe could not evaluate the system"}};
        return 2;
    }
    return all ? 0 : 3;
}

}  // namespace

int cmd_match(const GlobalOptions& g, std::ostream& log) {
    return run_command("match", g, log, [&](const ConfigFile& c, Json& r) { return match_body(g, log, c, r); });
}

int cmd_invert(const GlobalOptions& g, std::ostream& log) {
    return run_command("invert", g, log, [&](const ConfigFile& c, Json& r) { return invert_body(g, log, c, r); });
}

int cmd_estimate(const GlobalOptions& g, std::ostream& log) {
    return run_command("estimate", g, log, [&](const ConfigFile& c, Json& r) {
        const auto method = c.root.value("method", std::string());
        if (method == "mle") return mle_body(g, log, c, r);
        if (method == "gmm") return gmm_body(g, log, c, r);
        throw ConfigError("method must be 'mle' or 'gmm'");
    });
}

int cmd_check(const GlobalOptions& g, std::ostream& log) {
    return run_command("check", g, log, [&](const ConfigFile& c, Json& r) { return check_body(g, log, c, r); });
}

}  // namespace supplyeq::cli
