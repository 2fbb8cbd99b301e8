#include "cli.hpp"

#include <CLI11.hpp>

namespace supplyeq::cli {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Equilibrium solving, demand inversion, estimation and diagnostics for supply systems", "supplyeq"};
    app.require_subcommand(1);

    GlobalOptions g;
    std::uint64_t seed = 0;
    auto add_globals = [&](CLI::App* sub) {
        sub->add_option("--config", g.config, "JSON run config")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", g.out, "output directory (created if missing)");
        sub->add_option("--seed", seed, "overrides the config seed");
        sub->add_option("--jobs", g.jobs, "worker threads across independent markets")->check(CLI::PositiveNumber);
        sub->add_flag("--verbose", g.verbose, "bracket and iteration traces in the report");
    };
    auto* match = app.add_subcommand("match", "solve matching equilibria");
    auto* invert = app.add_subcommand("invert", "invert observed market shares");
    auto* estimate = app.add_subcommand("estimate", "nested MLE or GMM");
    auto* check = app.add_subcommand("check", "property probes");
    for (auto* s : {match, invert, estimate, check}) add_globals(s);

    std::vector<std::string> owned{"supplyeq"};
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : owned) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << e.what() << '\n';
        return 1;
    }
    for (auto* s : {match, invert, estimate, check}) {
        if (s->count("--seed") > 0) g.seed = seed;
    }

    if (match->parsed()) return cmd_match(g, err);
    if (invert->parsed()) return cmd_invert(g, err);
    if (estimate->parsed()) return cmd_estimate(g, err);
    return cmd_check(g, err);
}

}  // namespace supplyeq::cli
