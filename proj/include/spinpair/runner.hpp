#ifndef SPINPAIR_RUNNER_HPP
#define SPINPAIR_RUNNER_HPP

// Scenario configuration (YAML), validation and the table writers behind the
// command-line tool.  Needs yaml-cpp and fmt in addition to the core headers.

#include "spinpair/analysis.hpp"
#include "spinpair/dense.hpp"
#include "spinpair/factored.hpp"
#include "spinpair/protocols.hpp"
#include "spinpair/spin_core.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace spinpair {

struct GeometrySpec {
    std::string kind = "chain";  // chain | plane | explicit
    std::size_t n = 10;
    double spacing = 0.2;        // nm
    double z0 = 6.0;             // nm
    double x_offset = 9.0;       // nm, chain only
    double box = 4.0;            // nm, plane only
    double min_separation = 0.0; // nm, plane only
    std::uint64_t seed = 1;      // plane only
    double prefactor = 1.0;      // dipolar prefactor
    std::vector<Vec3> couplings; // explicit only
};

struct VerifySpec {
    double g1 = 3.0;
    double g2 = 4.0;
    double omega = 10.0;
    std::optional<double> tau;  // default: resonant_tau(omega)
    int m_max = 50;
    double threshold = 0.5;
};

struct SenseSpec {
    double coherence_t_max = 8.0;  // units of 1/g_eff
    int coherence_points = 40;
    SpectroscopyDesign design{};
    double tau_min = 0.6;          // absolute
    double tau_max = 1.0;
    int tau_points = 301;
    double prominence = 0.25;
    double window = 0.02;
};

struct ScenarioConfig {
    GeometrySpec geometry;
    std::string engine = "dense";  // dense | factored | montecarlo
    std::size_t dense_max_spins = 12;
    std::string units = "g_eff";   // units of omega, tau, dephasing_rate, readout_time
    std::optional<double> omega;   // empty: optimal_params
    std::optional<double> tau;
    int measurements = 100;
    cplx alpha{1.0 / std::sqrt(2.0), 0.0};
    cplx beta{1.0 / std::sqrt(2.0), 0.0};
    double dephasing_rate = 0.0;         // same units as omega
    std::optional<double> readout_time;  // same units as tau; default: tau
    double extinction_floor = 1e-14;
    std::string initial_state = "mixed";  // mixed | polarized | random_product
    std::size_t mc_samples = 1000;
    std::string unraveling = "haar";      // haar | z_basis
    std::size_t purity_pairs = 256;
    std::size_t max_branches = std::size_t{1} << 20;
    double pairing_threshold = 0.5;
    double scan_pair_threshold = 0.9;
    std::vector<double> scan_omega;  // units of g_eff
    std::vector<double> scan_tau;    // units of 1/g_eff
    std::optional<int> scan_measurements;
    VerifySpec verify;
    SenseSpec sense;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out = "out";
};

/// Config problems, each prefixed with the YAML line when known.
class ConfigErrors : public ConfigError {
public:
    explicit ConfigErrors(std::vector<std::string> errs) : ConfigError(join(errs)), errors(std::move(errs)) {}
    std::vector<std::string> errors;

private:
    static std::string join(const std::vector<std::string>& e) {
        std::string s;
        for (const auto& x : e) s += (s.empty() ? "" : "\n") + x;
        return s;
    }
};

namespace config_detail {

struct Reader {
    std::vector<std::string> errors;
    std::map<std::string, int> lines;  // dotted path -> 1-based line

    std::string where(const std::string& path) const {
        auto it = lines.find(path);
        return it == lines.end() ? "" : fmt::format("line {}: ", it->second);
    }
    void error(const std::string& path, const std::string& msg) { errors.push_back(where(path) + path + ": " + msg); }

    /// Errors in file order; messages without a line go last.
    [[noreturn]] void fail() {
        auto line_of = [](const std::string& e) {
            return e.rfind("line ", 0) == 0 ? std::stoi(e.substr(5)) : std::numeric_limits<int>::max();
        };
        std::stable_sort(errors.begin(), errors.end(),
                         [&](const std::string& a, const std::string& b) { return line_of(a) < line_of(b); });
        throw ConfigErrors(errors);
    }

    void check_keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            const std::string full = path.empty() ? key : path + "." + key;
            lines[full] = kv.first.Mark().line + 1;
            if (!allowed.count(key)) error(full, "unknown key");
        }
    }

    template <class T>
    void get(const YAML::Node& node, const std::string& key, const std::string& path, T& out) {
        const YAML::Node v = node[key];
        if (!v) return;
        const std::string full = path.empty() ? key : path + "." + key;
        try {
            out = v.as<T>();
        } catch (const YAML::Exception&) {
            error(full, "has the wrong type");
        }
    }

    /// Number or the string "auto" (empty optional).
    void get_auto(const YAML::Node& node, const std::string& key, const std::string& path, std::optional<double>& out) {
        const YAML::Node v = node[key];
        if (!v) return;
        if (v.IsScalar() && v.Scalar() == "auto") {
            out.reset();
            return;
        }
        double x = 0.0;
        get(node, key, path, x);
        out = x;
    }

    void get_complex(const YAML::Node& node, const std::string& key, const std::string& path, cplx& out) {
        const YAML::Node v = node[key];
        if (!v) return;
        const std::string full = path + "." + key;
        try {
            if (v.IsSequence() && v.size() == 2) out = {v[0].as<double>(), v[1].as<double>()};
            else out = {v.as<double>(), 0.0};
        } catch (const YAML::Exception&) {
            error(full, "must be a number or [re, im]");
        }
    }

    /// A list of numbers, or {start, stop, count} with count >= 2.
    void get_grid(const YAML::Node& node, const std::string& key, const std::string& path, std::vector<double>& out) {
        const YAML::Node v = node[key];
        if (!v) return;
        const std::string full = path + "." + key;
        try {
            if (v.IsSequence()) {
                out = v.as<std::vector<double>>();
            } else if (v.IsMap()) {
                check_keys(v, full, {"start", "stop", "count"});
                const double a = v["start"].as<double>(), b = v["stop"].as<double>();
                const int n = v["count"].as<int>();
                out.clear();
                if (n == 1) out.push_back(a);
                for (int i = 0; n > 1 && i < n; ++i) out.push_back(a + (b - a) * i / (n - 1));
            } else {
                error(full, "must be a list or {start, stop, count}");
            }
        } catch (const YAML::Exception&) {
            error(full, "must be a list or {start, stop, count}");
        }
    }
};

}  // namespace config_detail

struct ParsedConfig {
    ScenarioConfig cfg;
    std::map<std::string, int> lines;
};

/// Parses YAML text.  Syntax and type errors are collected; semantic checks
/// happen in validate_config.
inline ParsedConfig parse_config(const std::string& text) {
    config_detail::Reader rd;
    ParsedConfig pc;
    ScenarioConfig& c = pc.cfg;
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigErrors({fmt::format("line {}: {}", e.mark.line + 1, e.msg)});
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigErrors({"line 1: top level must be a mapping"});
    rd.check_keys(root, "", {"geometry", "engine", "dense_max_spins", "protocol", "initial_state", "montecarlo",
                             "analysis", "scan", "verify", "sense", "seed", "threads", "output", "manifest"});

    if (const auto g = root["geometry"]) {
        rd.check_keys(g, "geometry", {"kind", "n", "spacing", "z0", "x_offset", "box", "min_separation", "seed",
                                      "prefactor", "couplings"});
        rd.get(g, "kind", "geometry", c.geometry.kind);
        rd.get(g, "n", "geometry", c.geometry.n);
        rd.get(g, "spacing", "geometry", c.geometry.spacing);
        rd.get(g, "z0", "geometry", c.geometry.z0);
        rd.get(g, "x_offset", "geometry", c.geometry.x_offset);
        rd.get(g, "box", "geometry", c.geometry.box);
        rd.get(g, "min_separation", "geometry", c.geometry.min_separation);
        rd.get(g, "seed", "geometry", c.geometry.seed);
        rd.get(g, "prefactor", "geometry", c.geometry.prefactor);
        if (const auto list = g["couplings"]) {
            try {
                for (const auto& row : list) {
                    const auto v = row.as<std::vector<double>>();
                    if (v.size() != 3) throw YAML::Exception(row.Mark(), "need 3 components");
                    c.geometry.couplings.emplace_back(v[0], v[1], v[2]);
                }
            } catch (const YAML::Exception&) {
                rd.error("geometry.couplings", "must be a list of [gx, gy, gz]");
            }
        }
    }
    rd.get(root, "engine", "", c.engine);
    rd.get(root, "dense_max_spins", "", c.dense_max_spins);
    rd.get(root, "initial_state", "", c.initial_state);
    rd.get(root, "seed", "", c.seed);
    rd.get(root, "threads", "", c.threads);
    rd.get(root, "output", "", c.out);

    if (const auto p = root["protocol"]) {
        rd.check_keys(p, "protocol", {"units", "omega", "tau", "measurements", "alpha", "beta", "dephasing_rate",
                                      "readout_time", "extinction_floor"});
        rd.get(p, "units", "protocol", c.units);
        rd.get_auto(p, "omega", "protocol", c.omega);
        rd.get_auto(p, "tau", "protocol", c.tau);
        rd.get(p, "measurements", "protocol", c.measurements);
        rd.get_complex(p, "alpha", "protocol", c.alpha);
        rd.get_complex(p, "beta", "protocol", c.beta);
        rd.get(p, "dephasing_rate", "protocol", c.dephasing_rate);
        rd.get_auto(p, "readout_time", "protocol", c.readout_time);
        rd.get(p, "extinction_floor", "protocol", c.extinction_floor);
    }
    if (const auto m = root["montecarlo"]) {
        rd.check_keys(m, "montecarlo", {"samples", "unraveling", "purity_pairs", "max_branches"});
        rd.get(m, "samples", "montecarlo", c.mc_samples);
        rd.get(m, "unraveling", "montecarlo", c.unraveling);
        rd.get(m, "purity_pairs", "montecarlo", c.purity_pairs);
        rd.get(m, "max_branches", "montecarlo", c.max_branches);
    }
    if (const auto a = root["analysis"]) {
        rd.check_keys(a, "analysis", {"pairing_threshold", "scan_pair_threshold"});
        rd.get(a, "pairing_threshold", "analysis", c.pairing_threshold);
        rd.get(a, "scan_pair_threshold", "analysis", c.scan_pair_threshold);
    }
    if (const auto s = root["scan"]) {
        rd.check_keys(s, "scan", {"omega", "tau", "measurements"});
        rd.get_grid(s, "omega", "scan", c.scan_omega);
        rd.get_grid(s, "tau", "scan", c.scan_tau);
        if (s["measurements"]) {
            int m = 0;
            rd.get(s, "measurements", "scan", m);
            c.scan_measurements = m;
        }
    }
    if (const auto v = root["verify"]) {
        rd.check_keys(v, "verify", {"g1", "g2", "omega", "tau", "m_max", "threshold"});
        rd.get(v, "g1", "verify", c.verify.g1);
        rd.get(v, "g2", "verify", c.verify.g2);
        rd.get(v, "omega", "verify", c.verify.omega);
        rd.get_auto(v, "tau", "verify", c.verify.tau);
        rd.get(v, "m_max", "verify", c.verify.m_max);
        rd.get(v, "threshold", "verify", c.verify.threshold);
    }
    if (const auto s = root["sense"]) {
        rd.check_keys(s, "sense", {"coherence_t_max", "coherence_points", "omega", "epsilon", "host_coupling",
                                   "pair_mismatch", "host_pairs", "probe_coupling", "repetitions", "tau_min",
                                   "tau_max", "tau_points", "prominence", "window"});
        auto& d = c.sense.design;
        rd.get(s, "coherence_t_max", "sense", c.sense.coherence_t_max);
        rd.get(s, "coherence_points", "sense", c.sense.coherence_points);
        rd.get(s, "omega", "sense", d.omega);
        rd.get(s, "epsilon", "sense", d.epsilon);
        rd.get(s, "host_coupling", "sense", d.host_coupling);
        rd.get(s, "pair_mismatch", "sense", d.pair_mismatch);
        rd.get(s, "host_pairs", "sense", d.host_pairs);
        rd.get(s, "probe_coupling", "sense", d.probe_coupling);
        rd.get(s, "repetitions", "sense", d.repetitions);
        rd.get(s, "tau_min", "sense", c.sense.tau_min);
        rd.get(s, "tau_max", "sense", c.sense.tau_max);
        rd.get(s, "tau_points", "sense", c.sense.tau_points);
        rd.get(s, "prominence", "sense", c.sense.prominence);
        rd.get(s, "window", "sense", c.sense.window);
    }
    pc.lines = std::move(rd.lines);
    if (!rd.errors.empty()) rd.fail();
    return pc;
}

inline ParsedConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigErrors({"cannot open config file " + path});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Config with geometry, couplings and units resolved to absolute values.
struct ResolvedScenario {
    ScenarioConfig cfg;
    CouplingSet couplings;  // omega filled in
    double g_eff = 0.0;
    double omega = 0.0;     // absolute
    double tau = 0.0;       // absolute
    double readout_time = 0.0;
    double dephasing_rate = 0.0;  // absolute
    bool omega_from_heuristic = false;
    bool tau_from_heuristic = false;

    ProtocolConfig protocol() const {
        ProtocolConfig p;
        p.omega = omega;
        p.tau = tau;
        p.max_measurements = cfg.measurements;
        p.alpha = cfg.alpha;
        p.beta = cfg.beta;
        p.dephasing_rate = dephasing_rate;
        p.readout_time = readout_time;
        p.extinction_floor = cfg.extinction_floor;
        return p;
    }
};

/// Checks every invariant and reports all violations at once.
inline ResolvedScenario validate_config(const ParsedConfig& pc) {
    config_detail::Reader rd;
    rd.lines = pc.lines;
    const ScenarioConfig& c = pc.cfg;
    ResolvedScenario r;
    r.cfg = c;
    const auto& g = c.geometry;

    const std::set<std::string> kinds{"chain", "plane", "explicit"};
    if (!kinds.count(g.kind)) rd.error("geometry.kind", "must be chain, plane or explicit");
    const std::size_t n = g.kind == "explicit" ? g.couplings.size() : g.n;
    if (n < 1) rd.error(g.kind == "explicit" ? "geometry.couplings" : "geometry.n", "need at least one bath spin");
    if (g.kind == "chain" && !(g.spacing > 0.0)) rd.error("geometry.spacing", "must be > 0");
    if (g.kind == "plane" && !(g.box > 0.0)) rd.error("geometry.box", "must be > 0");
    if (g.kind != "explicit" && !(g.prefactor > 0.0)) rd.error("geometry.prefactor", "must be > 0");

    const std::set<std::string> engines{"dense", "factored", "montecarlo"};
    if (!engines.count(c.engine)) rd.error("engine", "must be dense, factored or montecarlo");
    if (c.engine == "dense" && n > c.dense_max_spins)
        rd.error("engine", fmt::format("dense engine is limited to {} spins (dense_max_spins); got {}",
                                       c.dense_max_spins, n));
    if (c.units != "g_eff" && c.units != "absolute") rd.error("protocol.units", "must be g_eff or absolute");
    if (c.measurements < 1) rd.error("protocol.measurements", "must be >= 1");
    if (std::abs(std::norm(c.alpha) + std::norm(c.beta) - 1.0) > 1e-12)
        rd.error("protocol.alpha", "|alpha|^2 + |beta|^2 must equal 1");
    if (!(c.dephasing_rate >= 0.0)) rd.error("protocol.dephasing_rate", "must be >= 0");
    if (c.readout_time && !(*c.readout_time >= 0.0)) rd.error("protocol.readout_time", "must be >= 0");
    if (c.tau && !(*c.tau >= 0.0)) rd.error("protocol.tau", "must be >= 0");
    if (!(c.extinction_floor >= 0.0)) rd.error("protocol.extinction_floor", "must be >= 0");
    const std::set<std::string> inits{"mixed", "polarized", "random_product"};
    if (!inits.count(c.initial_state)) rd.error("initial_state", "must be mixed, polarized or random_product");
    if (c.engine == "factored" && c.initial_state == "mixed")
        rd.error("initial_state", "the factored engine needs a product input; use montecarlo for a mixed bath");
    if (c.engine == "montecarlo" && c.initial_state != "mixed")
        rd.error("initial_state", "the montecarlo engine samples the mixed bath only");
    if (c.engine != "dense" && c.dephasing_rate > 0.0)
        rd.error("protocol.dephasing_rate", "dephasing is only supported by the dense engine");
    if (c.unraveling != "haar" && c.unraveling != "z_basis") rd.error("montecarlo.unraveling", "must be haar or z_basis");
    if (c.mc_samples < 1) rd.error("montecarlo.samples", "must be >= 1");
    if (c.max_branches < 1) rd.error("montecarlo.max_branches", "must be >= 1");
    if (c.scan_measurements && *c.scan_measurements < 1) rd.error("scan.measurements", "must be >= 1");
    for (double v : c.scan_omega)
        if (!std::isfinite(v)) rd.error("scan.omega", "grid values must be finite");
    for (double v : c.scan_tau)
        if (!(v >= 0.0)) rd.error("scan.tau", "grid values must be >= 0");
    if (c.verify.m_max < 1) rd.error("verify.m_max", "must be >= 1");
    if (!(c.verify.omega > 0.0)) rd.error("verify.omega", "must be > 0");
    if (c.sense.design.epsilon < 0.0) rd.error("sense.epsilon", "must be >= 0");
    if (!(c.sense.design.omega > c.sense.design.epsilon)) rd.error("sense.omega", "must exceed epsilon");
    if (c.sense.design.repetitions < 1) rd.error("sense.repetitions", "must be >= 1");
    if (c.sense.tau_points < 3 || !(c.sense.tau_max > c.sense.tau_min) || !(c.sense.tau_min >= 0.0))
        rd.error("sense.tau_points", "need tau_points >= 3 and 0 <= tau_min < tau_max");
    if (c.sense.coherence_points < 1 || !(c.sense.coherence_t_max > 0.0))
        rd.error("sense.coherence_points", "need coherence_points >= 1 and coherence_t_max > 0");
    if (c.threads < 1) rd.error("threads", "must be >= 1");
    if (!rd.errors.empty()) rd.fail();

    try {
        if (g.kind == "explicit") {
            r.couplings.g = g.couplings;
        } else {
            const SpinGeometry geo = g.kind == "chain" ? SpinGeometry::chain(g.n, g.spacing, g.z0, g.x_offset)
                                                       : SpinGeometry::plane(g.n, g.box, g.z0, g.seed, g.min_separation);
            geo.validate();
            r.couplings = dipolar_couplings(geo, g.prefactor);
        }
    } catch (const DomainError& e) {
        rd.error("geometry", e.what());
        rd.fail();
    }

    double s = 0.0;
    for (const auto& v : r.couplings.g) s += v.squaredNorm();
    r.g_eff = std::sqrt(s / static_cast<double>(r.couplings.size()));
    const bool relative = c.units == "g_eff";
    if ((!c.omega || !c.tau) || relative) {
        if (!(r.g_eff > 0.0)) {
            rd.error("protocol", "all couplings are zero: omega/tau need explicit absolute values");
            rd.fail();
        }
    }
    if (!c.omega || !c.tau) {
        const auto op = optimal_params(r.couplings);
        r.omega = op.omega;
        r.tau = op.tau;
        r.omega_from_heuristic = !c.omega;
        r.tau_from_heuristic = !c.tau;
    }
    if (c.omega) r.omega = relative ? *c.omega * r.g_eff : *c.omega;
    if (c.tau) r.tau = relative ? *c.tau / r.g_eff : *c.tau;
    r.readout_time = c.readout_time ? (relative ? *c.readout_time / r.g_eff : *c.readout_time) : r.tau;
    r.dephasing_rate = relative ? c.dephasing_rate * r.g_eff : c.dephasing_rate;
    r.couplings.omega = r.omega;
    return r;
}

// ---------------------------------------------------------------------------
// Output

/// Shortest decimal that round-trips a double (at least 12 significant digits
/// are kept by construction).
inline std::string num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return fmt::format("{:.17g}", x);
}

class Table {
public:
    explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void add(std::vector<std::string> row) {
        if (row.size() != columns_.size()) throw DomainError("Table: row width mismatch");
        rows_.push_back(std::move(row));
    }

    void write(const std::filesystem::path& file) const {
        std::ofstream out(file, std::ios::binary);
        if (!out) throw Error("cannot write " + file.string());
        out << join(columns_) << '\n';
        for (const auto& r : rows_) out << join(r) << '\n';
    }

    std::size_t size() const { return rows_.size(); }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "\t" : "") + v[i];
        return s;
    }
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

/// Fully resolved config as YAML that parse_config accepts (absolute units),
/// plus a `manifest` section of derived values.
inline std::string manifest_yaml(const ResolvedScenario& r, const std::vector<std::pair<std::string, std::string>>& extra) {
    const auto& c = r.cfg;
    const auto& g = c.geometry;
    std::string s;
    auto line = [&](const std::string& l) { s += l + "\n"; };
    line("geometry:");
    line("  kind: " + g.kind);
    if (g.kind == "explicit") {
        line("  couplings:");
        for (const auto& v : g.couplings) line(fmt::format("    - [{}, {}, {}]", num(v.x()), num(v.y()), num(v.z())));
    } else {
        line(fmt::format("  n: {}", g.n));
        line("  spacing: " + num(g.spacing));
        line("  z0: " + num(g.z0));
        line("  x_offset: " + num(g.x_offset));
        line("  box: " + num(g.box));
        line("  min_separation: " + num(g.min_separation));
        line(fmt::format("  seed: {}", g.seed));
        line("  prefactor: " + num(g.prefactor));
    }
    line("engine: " + c.engine);
    line(fmt::format("dense_max_spins: {}", c.dense_max_spins));
    line("initial_state: " + c.initial_state);
    line("protocol:");
    line("  units: absolute");
    line("  omega: " + num(r.omega));
    line("  tau: " + num(r.tau));
    line(fmt::format("  measurements: {}", c.measurements));
    line(fmt::format("  alpha: [{}, {}]", num(c.alpha.real()), num(c.alpha.imag())));
    line(fmt::format("  beta: [{}, {}]", num(c.beta.real()), num(c.beta.imag())));
    line("  dephasing_rate: " + num(r.dephasing_rate));
    line("  readout_time: " + num(r.readout_time));
    line("  extinction_floor: " + num(c.extinction_floor));
    line("montecarlo:");
    line(fmt::format("  samples: {}", c.mc_samples));
    line("  unraveling: " + c.unraveling);
    line(fmt::format("  purity_pairs: {}", c.purity_pairs));
    line(fmt::format("  max_branches: {}", c.max_branches));
    line("analysis:");
    line("  pairing_threshold: " + num(c.pairing_threshold));
    line("  scan_pair_threshold: " + num(c.scan_pair_threshold));
    if (!c.scan_omega.empty() || !c.scan_tau.empty() || c.scan_measurements) {
        line("scan:");
        auto list = [&](const std::vector<double>& v) {
            std::string out = "[";
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + num(v[i]);
            return out + "]";
        };
        line("  omega: " + list(c.scan_omega));
        line("  tau: " + list(c.scan_tau));
        if (c.scan_measurements) line(fmt::format("  measurements: {}", *c.scan_measurements));
    }
    line("verify:");
    line("  g1: " + num(c.verify.g1));
    line("  g2: " + num(c.verify.g2));
    line("  omega: " + num(c.verify.omega));
    line("  tau: " + (c.verify.tau ? num(*c.verify.tau) : std::string("auto")));
    line(fmt::format("  m_max: {}", c.verify.m_max));
    line("  threshold: " + num(c.verify.threshold));
    const auto& d = c.sense.design;
    line("sense:");
    line("  coherence_t_max: " + num(c.sense.coherence_t_max));
    line(fmt::format("  coherence_points: {}", c.sense.coherence_points));
    line("  omega: " + num(d.omega));
    line("  epsilon: " + num(d.epsilon));
    line("  host_coupling: " + num(d.host_coupling));
    line("  pair_mismatch: " + num(d.pair_mismatch));
    line(fmt::format("  host_pairs: {}", d.host_pairs));
    line("  probe_coupling: " + num(d.probe_coupling));
    line(fmt::format("  repetitions: {}", d.repetitions));
    line("  tau_min: " + num(c.sense.tau_min));
    line("  tau_max: " + num(c.sense.tau_max));
    line(fmt::format("  tau_points: {}", c.sense.tau_points));
    line("  prominence: " + num(c.sense.prominence));
    line("  window: " + num(c.sense.window));
    line(fmt::format("seed: {}", c.seed));
    line(fmt::format("threads: {}", c.threads));
    line("output: \"" + c.out + "\"");
    line("manifest:");
    line(fmt::format("  n_spins: {}", r.couplings.size()));
    line("  g_eff: " + num(r.g_eff));
    line("  omega_g_eff: " + num(r.omega / r.g_eff));
    line("  tau_g_eff: " + num(r.tau * r.g_eff));
    line(std::string("  omega_source: ") + (r.omega_from_heuristic ? "optimal_params" : "config"));
    line(std::string("  tau_source: ") + (r.tau_from_heuristic ? "optimal_params" : "config"));
    line("  gamma_d_tau: " + num(r.dephasing_rate * r.tau));
    for (const auto& [k, v] : extra) line("  " + k + ": " + v);
    return s;
}

enum class ExitCode : int { ok = 0, config = 2, extinction = 3, capacity = 4 };

struct Outcome {
    ExitCode code = ExitCode::ok;
    std::string message;
};

namespace runner_detail {

inline std::vector<Vec2c> product_input(const ResolvedScenario& r) {
    const std::size_t n = r.couplings.size();
    if (r.cfg.initial_state == "polarized") return std::vector<Vec2c>(n, Vec2c(1.0, 0.0));
    return detail::sample_product_state(n, detail::splitmix64(r.cfg.seed), Unraveling::haar);
}

inline BathStateDense dense_input(const ResolvedScenario& r) {
    if (r.cfg.initial_state == "mixed") return BathStateDense::maximally_mixed(r.couplings.size());
    return BathStateDense::product(product_input(r));
}

struct EngineResult {
    std::vector<StepRecord> steps;
    RunStatus status = RunStatus::complete;
    int extinct_step = 0;
    std::vector<PairMarginal> pairs;  // final state; empty if extinct before step 1
    std::vector<std::pair<std::string, std::string>> extra;
};

inline EngineResult run_engine(const ResolvedScenario& r, const ProtocolConfig& p, unsigned workers) {
    EngineResult out;
    if (r.cfg.engine == "dense") {
        auto traj = run_protocol(dense_input(r), p, r.couplings);
        out.steps = std::move(traj.steps);
        out.status = traj.status;
        out.extinct_step = traj.extinct_step;
        if (!out.steps.empty()) out.pairs = pair_marginals(traj.final_state);
    } else if (r.cfg.engine == "factored") {
        EnsembleLimits lim;
        lim.max_branches = r.cfg.max_branches;
        auto run = run_factored(product_input(r), p, r.couplings, lim, workers);
        out.steps = std::move(run.steps);
        out.status = run.status;
        out.extinct_step = run.extinct_step;
        if (!out.steps.empty()) out.pairs = pair_marginals(run.ensemble);
    } else {
        MonteCarloOptions opt;
        opt.samples = r.cfg.mc_samples;
        opt.seed = r.cfg.seed;
        opt.unraveling = r.cfg.unraveling == "haar" ? Unraveling::haar : Unraveling::z_basis;
        opt.purity_pairs = r.cfg.purity_pairs;
        opt.workers = workers;
        opt.limits.max_branches = r.cfg.max_branches;
        const auto mc = mixed_state_monte_carlo(r.couplings, p, opt);
        StepRecord rec;
        rec.step = p.max_measurements;
        rec.cumulative_p = mc.success_probability;
        rec.log10_cumulative_p = std::log10(mc.success_probability);
        rec.conditional_p = std::nan("");
        rec.purity = mc.purity_estimate;
        if (!(mc.success_probability >= p.extinction_floor)) {
            out.status = RunStatus::extinct;
            out.extinct_step = p.max_measurements;
        } else {
            out.steps.push_back(rec);
            out.pairs = mc.pair_rdms;
        }
        out.extra.emplace_back("montecarlo_success_stderr", num(mc.success_stderr));
    }
    return out;
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

}  // namespace runner_detail

/// Single trajectory: trajectory.tsv, pairs.tsv, manifest.yaml.
inline Outcome run_scenario(const ResolvedScenario& r) {
    const std::filesystem::path dir = r.cfg.out;
    runner_detail::ensure_dir(dir);
    const auto res = runner_detail::run_engine(r, r.protocol(), r.cfg.threads);

    Table traj({"step", "conditional_p", "cumulative_p", "log10_cumulative_p", "purity"});
    for (const auto& s : res.steps)
        traj.add({std::to_string(s.step), num(s.conditional_p), num(s.cumulative_p), num(s.log10_cumulative_p),
                  num(s.purity)});
    traj.write(dir / "trajectory.tsv");

    Table pairs({"spin_i", "spin_j", "fidelity", "phase", "concurrence", "matched", "paired"});
    PairAssignment pa;
    if (!res.pairs.empty()) {
        pa = detect_pairing(res.pairs, r.cfg.pairing_threshold);
        std::set<std::pair<std::size_t, std::size_t>> matched;
        for (const auto& p : pa.pairs) matched.insert({p.i, p.j});
        for (const auto& s : score_pairs(res.pairs)) {
            const bool m = matched.count({s.i, s.j}) > 0;
            pairs.add({std::to_string(s.i + 1), std::to_string(s.j + 1), num(s.fidelity), num(s.phase),
                       num(s.concurrence), m ? "1" : "0", (m && s.fidelity > r.cfg.pairing_threshold) ? "1" : "0"});
        }
    }
    pairs.write(dir / "pairs.tsv");

    auto extra = res.extra;
    extra.emplace_back("status", res.status == RunStatus::complete ? "complete" : "extinct");
    extra.emplace_back("steps_completed", std::to_string(res.steps.size()));
    if (res.status == RunStatus::extinct) extra.emplace_back("extinct_step", std::to_string(res.extinct_step));
    if (!res.steps.empty()) {
        extra.emplace_back("final_purity", num(res.steps.back().purity));
        extra.emplace_back("final_cumulative_p", num(res.steps.back().cumulative_p));
        extra.emplace_back("paired_count", std::to_string(pa.paired_count()));
        extra.emplace_back("average_concurrence", num(average_concurrence(res.pairs)));
    }
    std::ofstream(dir / "manifest.yaml", std::ios::binary) << manifest_yaml(r, extra);
    if (res.status == RunStatus::extinct)
        return {ExitCode::extinction, fmt::format("trajectory extinct at measurement {}", res.extinct_step)};
    return {};
}

struct ScanPoint {
    double omega_rel = 0.0, tau_rel = 0.0;
    double purity = std::nan(""), cumulative_p = std::nan(""), log10_p = std::nan("");
    std::size_t n_pairs = 0;
    std::string status = "complete";
};

/// omega-tau grid: scan.tsv (omega-major order) and manifest.yaml.
inline Outcome run_scan(const ResolvedScenario& r) {
    if (r.cfg.scan_omega.empty() || r.cfg.scan_tau.empty())
        throw ConfigErrors({"scan: omega and tau grids must both be non-empty"});
    const std::filesystem::path dir = r.cfg.out;
    runner_detail::ensure_dir(dir);
    const std::size_t nw = r.cfg.scan_omega.size(), nt = r.cfg.scan_tau.size();
    std::vector<ScanPoint> pts(nw * nt);
    // grid points run in parallel; each is a pure function of its inputs and
    // writes only its own slot
    parallel_for(pts.size(), r.cfg.threads, [&](std::size_t idx) {
        ScanPoint& pt = pts[idx];
        pt.omega_rel = r.cfg.scan_omega[idx / nt];
        pt.tau_rel = r.cfg.scan_tau[idx % nt];
        ResolvedScenario local = r;
        local.omega = pt.omega_rel * r.g_eff;
        local.tau = pt.tau_rel / r.g_eff;
        local.couplings.omega = local.omega;
        if (!r.cfg.readout_time) local.readout_time = local.tau;
        ProtocolConfig p = local.protocol();
        if (r.cfg.scan_measurements) p.max_measurements = *r.cfg.scan_measurements;
        const auto res = runner_detail::run_engine(local, p, 1);
        if (res.status == RunStatus::extinct) pt.status = "extinct";
        if (!res.steps.empty()) {
            pt.purity = res.steps.back().purity;
            pt.cumulative_p = res.steps.back().cumulative_p;
            pt.log10_p = res.steps.back().log10_cumulative_p;
        }
        if (!res.pairs.empty()) pt.n_pairs = detect_pairing(res.pairs, r.cfg.scan_pair_threshold).paired_count();
    });

    Table t({"omega", "tau", "omega_g_eff", "tau_g_eff", "purity", "cumulative_p", "log10_cumulative_p", "n_pairs",
             "status"});
    std::size_t extinct = 0;
    for (const auto& pt : pts) {
        extinct += pt.status != "complete";
        t.add({num(pt.omega_rel * r.g_eff), num(pt.tau_rel / r.g_eff), num(pt.omega_rel), num(pt.tau_rel),
               num(pt.purity), num(pt.cumulative_p), num(pt.log10_p), std::to_string(pt.n_pairs), pt.status});
    }
    t.write(dir / "scan.tsv");
    std::ofstream(dir / "manifest.yaml", std::ios::binary)
        << manifest_yaml(r, {{"grid_points", std::to_string(pts.size())}, {"extinct_points", std::to_string(extinct)}});
    return {};
}

struct VerifyOutcome {
    VerificationResult unpolarized, singlet;
};

inline VerifyOutcome verify_protocol(const VerifySpec& v) {
    const auto bath = verification_bath(v.g1, v.g2, v.omega);
    const double tau = v.tau ? *v.tau : resonant_tau(v.omega);
    return {verification_scan(bath, BathPreparation::mixed(2), tau, v.m_max, v.threshold),
            verification_scan(bath, BathPreparation::singlet_paired(2, {{0, 1}}), tau, v.m_max, v.threshold)};
}

/// verification.tsv (flip probability per m for both preparations) and manifest.yaml.
inline Outcome run_verify(const ResolvedScenario& r) {
    const std::filesystem::path dir = r.cfg.out;
    runner_detail::ensure_dir(dir);
    const auto res = verify_protocol(r.cfg.verify);
    Table t({"m", "flip_unpolarized", "flip_singlet"});
    for (int m = 1; m <= r.cfg.verify.m_max; ++m)
        t.add({std::to_string(m), num(res.unpolarized.flip_probability[m - 1]),
               num(res.singlet.flip_probability[m - 1])});
    t.write(dir / "verification.tsv");
    auto mstar = [](const VerificationResult& v) { return v.m_star ? std::to_string(*v.m_star) : std::string("null"); };
    const double g1 = r.cfg.verify.g1, g2 = r.cfg.verify.g2, w = r.cfg.verify.omega;
    std::vector<std::pair<std::string, std::string>> extra{
        {"tau_v", num(r.cfg.verify.tau ? *r.cfg.verify.tau : resonant_tau(w))},
        {"m_star_unpolarized", mstar(res.unpolarized)},
        {"m_star_singlet", mstar(res.singlet)},
        {"predicted_unpolarized", num(w / std::hypot(g1, g2))},
        {"predicted_singlet", num(g1 == g2 ? std::numeric_limits<double>::infinity() : w / std::abs(g1 - g2))},
        {"unpolarized_report", "\"" + res.unpolarized.describe() + "\""},
        {"singlet_report", "\"" + res.singlet.describe() + "\""}};
    std::ofstream(dir / "manifest.yaml", std::ios::binary) << manifest_yaml(r, extra);
    return {};
}

inline std::vector<std::pair<std::size_t, std::size_t>> consecutive_pairs(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> p;
    for (std::size_t k = 0; k + 1 < n; k += 2) p.emplace_back(k, k + 1);
    return p;
}

/// coherence.tsv (scenario bath, three preparations), spectroscopy.tsv and
/// features.tsv (species bath), manifest.yaml.
inline Outcome run_sense(const ResolvedScenario& r) {
    const std::filesystem::path dir = r.cfg.out;
    runner_detail::ensure_dir(dir);
    const std::size_t n = r.couplings.size();
    const auto bath = SpinBath::uniform(r.couplings);
    std::vector<double> t;
    for (int i = 1; i <= r.cfg.sense.coherence_points; ++i)
        t.push_back(r.cfg.sense.coherence_t_max * i / r.cfg.sense.coherence_points / r.g_eff);
    const auto lm = coherence_trace(bath, BathPreparation::mixed(n), t);
    const auto lz = coherence_trace(bath, BathPreparation::polarized(n), t);
    const auto lp = coherence_trace(bath, BathPreparation::singlet_paired(n, consecutive_pairs(n)), t);
    Table ct({"t", "t_g_eff", "mixed", "polarized", "singlet_paired"});
    for (std::size_t i = 0; i < t.size(); ++i)
        ct.add({num(t[i]), num(t[i] * r.g_eff), num(lm[i]), num(lz[i]), num(lp[i])});
    ct.write(dir / "coherence.tsv");

    const auto& s = r.cfg.sense;
    const auto species = make_species_bath(s.design);
    std::vector<double> tau;
    for (int i = 0; i < s.tau_points; ++i) tau.push_back(s.tau_min + (s.tau_max - s.tau_min) * i / (s.tau_points - 1));
    const auto sp = spectroscopy_scan(species, Preparation::singlet_paired, tau, s.design.repetitions, r.cfg.threads);
    const auto su = spectroscopy_scan(species, Preparation::unpolarized, tau, s.design.repetitions, r.cfg.threads);
    const auto sz = spectroscopy_scan(species, Preparation::polarized, tau, s.design.repetitions, r.cfg.threads);
    Table st({"tau", "singlet_paired", "unpolarized", "polarized"});
    for (std::size_t i = 0; i < tau.size(); ++i) st.add({num(tau[i]), num(sp[i]), num(su[i]), num(sz[i])});
    st.write(dir / "spectroscopy.tsv");

    Table ft({"preparation", "tau", "height", "prominence"});
    for (const auto& [name, sig] : {std::pair{"singlet_paired", &sp}, std::pair{"unpolarized", &su}, std::pair{"polarized", &sz}})
        for (const auto& f : find_features(tau, *sig, s.prominence))
            ft.add({name, num(f.position), num(f.height), num(f.prominence)});
    ft.write(dir / "features.tsv");

    const auto rp = side_features(tau, sp, s.design.omega, s.design.epsilon, s.prominence, s.window);
    const auto ru = side_features(tau, su, s.design.omega, s.design.epsilon, s.prominence, s.window);
    std::ofstream(dir / "manifest.yaml", std::ios::binary)
        << manifest_yaml(r, {{"side_tau_upper", num(rp.tau_upper)},
                             {"side_tau_lower", num(rp.tau_lower)},
                             {"resolved_singlet_paired", rp.resolved ? "true" : "false"},
                             {"resolved_unpolarized", ru.resolved ? "true" : "false"}});
    return {};
}

}  // namespace spinpair

#endif  // SPINPAIR_RUNNER_HPP
