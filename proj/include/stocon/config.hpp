#pragma once

// Run configuration for the command-line front end.  Configs live in JSON;
// every numeric field also accepts a quoted token so parameters written as
// exact rationals ("1/20") or as "pi" survive a parse/serialize round trip
// without decimal drift.  Serialization always emits the stored token, which
// makes parse -> serialize -> parse the identity.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "matrix.hpp"
#include "process.hpp"

namespace stocon {

// ---------------------------------------------------------------------------
// Exact numeric tokens

/// A numeric value together with the token it was written as.
struct Number {
    std::string text;
    double value = 0.0;

    Number() = default;
    Number(std::string t, double v) : text(std::move(t)), value(v) {}
    bool operator==(const Number&) const = default;
};

namespace detail {

inline std::string trim_token(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::optional<double> parse_plain(const std::string& t) {
    if (t.empty()) return std::nullopt;
    const char* begin = t.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + t.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace detail

/// Accepts plain decimals, rationals "a/b", and the tokens "pi" / "-pi".
inline Number parse_number(const std::string& raw) {
    const std::string t = detail::trim_token(raw);
    if (t == "pi" || t == "+pi") return {t, M_PI};
    if (t == "-pi") return {t, -M_PI};
    if (auto slash = t.find('/'); slash != std::string::npos) {
        auto num = detail::parse_plain(t.substr(0, slash));
        auto den = detail::parse_plain(t.substr(slash + 1));
        if (!num || !den || *den == 0.0)
            throw ConfigError("config: bad rational token \"" + t + "\"");
        return {t, *num / *den};
    }
    if (auto v = detail::parse_plain(t)) return {t, *v};
    throw ConfigError("config: bad numeric token \"" + t + "\"");
}

using ConfigJson = nlohmann::ordered_json;

/// Numeric JSON values keep their literal spelling as the token.
inline Number number_from_json(const ConfigJson& j, const std::string& where) {
    if (j.is_string()) return parse_number(j.get<std::string>());
    if (j.is_number()) return {j.dump(), j.get<double>()};
    throw ConfigError("config: field \"" + where + "\" must be a number or numeric token");
}

inline ConfigJson number_to_json(const Number& n) { return ConfigJson(n.text); }

// ---------------------------------------------------------------------------
// Config sections

/// Matrix written entry-exact; rows of numeric tokens.
using NumMat = std::vector<std::vector<Number>>;

inline Mat to_mat(const NumMat& rows, const std::string& where) {
    if (rows.empty() || rows[0].empty())
        throw ConfigError("config: matrix \"" + where + "\" is empty");
    Mat m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw ConfigError("config: matrix \"" + where + "\" has ragged rows");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c].value;
    }
    return m;
}

inline Vec to_vec(const std::vector<Number>& xs) {
    Vec v(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) v[i] = xs[i].value;
    return v;
}

/// One grid axis lo..hi in steps; a pinned axis has lo == hi.
struct GridAxis {
    Number lo, hi, step;
    bool operator==(const GridAxis&) const = default;
};

/// Either a bundled system by name, or a user linear system: square drift
/// "a" with optional noise-scaled part "f" for scalar i.i.d. noise, or a
/// per-mode list "modes" for a finite chain.
struct SystemSpec {
    std::optional<std::string> builtin;
    std::optional<NumMat> a;
    std::optional<NumMat> b;  // input column, controller synthesis only
    std::optional<NumMat> f;
    std::vector<NumMat> modes;
    bool operator==(const SystemSpec&) const = default;
};

/// Noise description: "uniform" with a support interval, or "markov" with a
/// column-stochastic transition matrix.  Sampler-backed processes hold code,
/// not data, and cannot be written in a config.
struct ProcessSpec {
    std::string kind;
    Number lo, hi;
    NumMat transition;
    bool operator==(const ProcessSpec&) const = default;
};

struct RunConfig {
    std::string task;
    SystemSpec system;
    std::optional<ProcessSpec> process;
    Number lambda2{"0.9", 0.9};
    std::vector<GridAxis> grid;
    int horizon = 200;
    std::size_t paths = 1000;
    std::uint64_t seed = 1;
    int p = 2;
    bool common_gain = false;
    std::vector<Number> x0, xhat0;
    std::string out_dir = "out";
    bool operator==(const RunConfig&) const = default;
};

// ---------------------------------------------------------------------------
// JSON binding

namespace detail {

inline void reject_unknown(const ConfigJson& j, const std::string& where,
                           std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) ok = true;
        if (!ok)
            throw ConfigError("config: unknown field \"" + where + item.key() + "\"");
    }
}

inline NumMat nummat_from_json(const ConfigJson& j, const std::string& where) {
    if (!j.is_array())
        throw ConfigError("config: field \"" + where + "\" must be an array of rows");
    NumMat rows;
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array())
            throw ConfigError("config: field \"" + where + "\" rows must be arrays");
        std::vector<Number> row;
        for (std::size_t c = 0; c < j[r].size(); ++c)
            row.push_back(number_from_json(j[r][c], where));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline ConfigJson nummat_to_json(const NumMat& m) {
    ConfigJson rows = ConfigJson::array();
    for (const auto& r : m) {
        ConfigJson row = ConfigJson::array();
        for (const auto& n : r) row.push_back(number_to_json(n));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<Number> numlist_from_json(const ConfigJson& j, const std::string& where) {
    if (!j.is_array())
        throw ConfigError("config: field \"" + where + "\" must be an array");
    std::vector<Number> xs;
    for (const auto& e : j) xs.push_back(number_from_json(e, where));
    return xs;
}

inline ConfigJson numlist_to_json(const std::vector<Number>& xs) {
    ConfigJson a = ConfigJson::array();
    for (const auto& n : xs) a.push_back(number_to_json(n));
    return a;
}

} // namespace detail

inline SystemSpec system_from_json(const ConfigJson& j) {
    if (j.is_string()) {
        SystemSpec s;
        s.builtin = j.get<std::string>();
        return s;
    }
    if (!j.is_object()) throw ConfigError("config: \"system\" must be a name or an object");
    detail::reject_unknown(j, "system.", {"builtin", "a", "b", "f", "modes"});
    SystemSpec s;
    if (j.contains("builtin")) s.builtin = j.at("builtin").get<std::string>();
    if (j.contains("a")) s.a = detail::nummat_from_json(j.at("a"), "system.a");
    if (j.contains("b")) s.b = detail::nummat_from_json(j.at("b"), "system.b");
    if (j.contains("f")) s.f = detail::nummat_from_json(j.at("f"), "system.f");
    if (j.contains("modes"))
        for (const auto& m : j.at("modes"))
            s.modes.push_back(detail::nummat_from_json(m, "system.modes"));
    const int ways = int(s.builtin.has_value()) + int(s.a.has_value()) + int(!s.modes.empty());
    if (ways != 1)
        throw ConfigError("config: \"system\" needs exactly one of builtin, a, modes");
    return s;
}

inline ConfigJson system_to_json(const SystemSpec& s) {
    if (s.builtin && !s.a && s.modes.empty() && !s.b && !s.f) return ConfigJson(*s.builtin);
    ConfigJson j = ConfigJson::object();
    if (s.builtin) j["builtin"] = *s.builtin;
    if (s.a) j["a"] = detail::nummat_to_json(*s.a);
    if (s.b) j["b"] = detail::nummat_to_json(*s.b);
    if (s.f) j["f"] = detail::nummat_to_json(*s.f);
    if (!s.modes.empty()) {
        ConfigJson ms = ConfigJson::array();
        for (const auto& m : s.modes) ms.push_back(detail::nummat_to_json(m));
        j["modes"] = std::move(ms);
    }
    return j;
}

inline ProcessSpec process_from_json(const ConfigJson& j) {
    if (!j.is_object()) throw ConfigError("config: \"process\" must be an object");
    detail::reject_unknown(j, "process.", {"kind", "lo", "hi", "transition"});
    ProcessSpec p;
    if (!j.contains("kind")) throw ConfigError("config: \"process.kind\" is required");
    p.kind = j.at("kind").get<std::string>();
    if (p.kind == "uniform") {
        if (!j.contains("lo") || !j.contains("hi"))
            throw ConfigError("config: uniform process needs \"lo\" and \"hi\"");
        p.lo = number_from_json(j.at("lo"), "process.lo");
        p.hi = number_from_json(j.at("hi"), "process.hi");
    } else if (p.kind == "markov") {
        if (!j.contains("transition"))
            throw ConfigError("config: markov process needs \"transition\"");
        p.transition = detail::nummat_from_json(j.at("transition"), "process.transition");
    } else {
        throw ConfigError("config: \"process.kind\" must be uniform or markov");
    }
    return p;
}

inline ConfigJson process_to_json(const ProcessSpec& p) {
    ConfigJson j = ConfigJson::object();
    j["kind"] = p.kind;
    if (p.kind == "uniform") {
        j["lo"] = number_to_json(p.lo);
        j["hi"] = number_to_json(p.hi);
    } else {
        j["transition"] = detail::nummat_to_json(p.transition);
    }
    return j;
}

inline RunConfig config_from_json(const ConfigJson& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    detail::reject_unknown(j, "", {"task", "system", "process", "lambda2", "grid", "horizon",
                                   "paths", "seed", "p", "common_gain", "x0", "xhat0", "out"});
    RunConfig c;
    if (j.contains("task")) c.task = j.at("task").get<std::string>();
    if (j.contains("system")) c.system = system_from_json(j.at("system"));
    if (j.contains("process")) c.process = process_from_json(j.at("process"));
    if (j.contains("lambda2")) c.lambda2 = number_from_json(j.at("lambda2"), "lambda2");
    if (j.contains("grid")) {
        if (!j.at("grid").is_array())
            throw ConfigError("config: \"grid\" must be an array of axes");
        for (const auto& ax : j.at("grid")) {
            if (!ax.is_object() || !ax.contains("lo") || !ax.contains("hi"))
                throw ConfigError("config: grid axes need \"lo\" and \"hi\"");
            detail::reject_unknown(ax, "grid.", {"lo", "hi", "step"});
            GridAxis g;
            g.lo = number_from_json(ax.at("lo"), "grid.lo");
            g.hi = number_from_json(ax.at("hi"), "grid.hi");
            g.step = ax.contains("step") ? number_from_json(ax.at("step"), "grid.step")
                                         : Number{"1", 1.0};
            c.grid.push_back(std::move(g));
        }
    }
    if (j.contains("horizon")) c.horizon = j.at("horizon").get<int>();
    if (j.contains("paths")) c.paths = j.at("paths").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("p")) c.p = j.at("p").get<int>();
    if (j.contains("common_gain")) c.common_gain = j.at("common_gain").get<bool>();
    if (j.contains("x0")) c.x0 = detail::numlist_from_json(j.at("x0"), "x0");
    if (j.contains("xhat0")) c.xhat0 = detail::numlist_from_json(j.at("xhat0"), "xhat0");
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
    return c;
}

inline ConfigJson config_to_json(const RunConfig& c) {
    ConfigJson j = ConfigJson::object();
    if (!c.task.empty()) j["task"] = c.task;
    j["system"] = system_to_json(c.system);
    if (c.process) j["process"] = process_to_json(*c.process);
    j["lambda2"] = number_to_json(c.lambda2);
    if (!c.grid.empty()) {
        ConfigJson axes = ConfigJson::array();
        for (const auto& g : c.grid) {
            ConfigJson ax = ConfigJson::object();
            ax["lo"] = number_to_json(g.lo);
            ax["hi"] = number_to_json(g.hi);
            ax["step"] = number_to_json(g.step);
            axes.push_back(std::move(ax));
        }
        j["grid"] = std::move(axes);
    }
    j["horizon"] = c.horizon;
    j["paths"] = c.paths;
    j["seed"] = c.seed;
    j["p"] = c.p;
    j["common_gain"] = c.common_gain;
    if (!c.x0.empty()) j["x0"] = detail::numlist_to_json(c.x0);
    if (!c.xhat0.empty()) j["xhat0"] = detail::numlist_to_json(c.xhat0);
    j["out"] = c.out_dir;
    return j;
}

/// Parse a JSON config document.  Syntax errors carry the source line and
/// column; semantic errors name the offending field.
inline RunConfig parse_config(const std::string& text) {
    ConfigJson j;
    try {
        j = ConfigJson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // byte offset -> line:column, 1-based
        std::size_t at = e.byte > 0 ? std::size_t(e.byte) - 1 : 0;
        at = std::min(at, text.size());
        int line = 1, col = 1;
        for (std::size_t i = 0; i < at; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("config: line " + std::to_string(line) + ", column " +
                              std::to_string(col) + ": " + e.what(),
                          line, col);
    }
    return config_from_json(j);
}

inline std::string serialize_config(const RunConfig& c) {
    return config_to_json(c).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Spec -> model conversion

inline ProcessModel make_process(const ProcessSpec& p) {
    if (p.kind == "uniform") {
        if (!(p.lo.value <= p.hi.value))
            throw ConfigError("config: uniform support needs lo <= hi");
        return IidScalarUniform{p.lo.value, p.hi.value};
    }
    try {
        return make_finite_markov(to_mat(p.transition, "process.transition"));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("config: process.transition: ") + e.what());
    }
}

} // namespace stocon
