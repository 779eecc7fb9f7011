// Command-line front end: run, scan, verify, sense, selftest.

#include "spinpair/acceptance.hpp"
#include "spinpair/runner.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace spinpair;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> engine;
    std::optional<unsigned> threads;
};

ResolvedScenario load(const Overrides& o) {
    ParsedConfig pc = o.config.empty() ? parse_config("") : load_config_file(o.config);
    if (o.seed) pc.cfg.seed = *o.seed;
    if (o.out) pc.cfg.out = *o.out;
    if (o.engine) pc.cfg.engine = *o.engine;
    if (o.threads) pc.cfg.threads = *o.threads;
    return validate_config(pc);
}

int report(const Outcome& r) {
    if (!r.message.empty()) std::cerr << r.message << '\n';
    return static_cast<int>(r.code);
}

int selftest(const Overrides& o) {
    const std::filesystem::path scratch = o.out ? *o.out : "selftest_out";
    std::filesystem::create_directories(scratch);
    const auto verdicts = acceptance::run_all(scratch, o.threads ? *o.threads : 1, [](const acceptance::Verdict& v) {
        std::cout << acceptance::format_verdict(v) << std::endl;
    });
    std::size_t passed = 0;
    for (const auto& v : verdicts) passed += v.passed;
    std::cout << passed << "/" << verdicts.size() << " criteria passed\n";
    return passed == verdicts.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-selected spin-bath pairing simulator"};
    app.require_subcommand(1);
    Overrides o;
    auto add_flags = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "YAML scenario file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "RNG seed");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--engine", o.engine, "dense | factored | montecarlo");
        sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    };
    auto* run = app.add_subcommand("run", "single scenario: trajectory, pair table, manifest");
    auto* scan = app.add_subcommand("scan", "omega-tau grid scan");
    auto* verify = app.add_subcommand("verify", "echo verification of singlet pairing");
    auto* sense = app.add_subcommand("sense", "coherence and spectroscopy");
    auto* self = app.add_subcommand("selftest", "acceptance suite");
    for (auto* s : {run, scan, verify, sense, self}) add_flags(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (self->parsed()) return selftest(o);
        const auto r = load(o);
        if (run->parsed()) return report(run_scenario(r));
        if (scan->parsed()) return report(run_scan(r));
        if (verify->parsed()) return report(run_verify(r));
        return report(run_sense(r));
    } catch (const ConfigError& e) {
        std::cerr << "config error:\n" << e.what() << '\n';
        return static_cast<int>(ExitCode::config);
    } catch (const CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::capacity);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
