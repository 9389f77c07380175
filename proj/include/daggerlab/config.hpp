#pragma once

// Run configuration files.
//
// A config is a flat list of `key = value` lines (a TOML subset): integers,
// floats, booleans, double-quoted strings and single-line arrays; `#` starts a
// comment. `extends = "name"` first loads a bundled preset of that name, or a
// file path relative to the including file. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "daggerlab/orchestrator.hpp"

namespace daggerlab {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string origin, int line, const std::string& message);

    const std::string& origin() const { return origin_; }
    int line() const { return line_; }

private:
    std::string origin_;
    int line_;
};

struct ConfigValue;
using ConfigArray = std::vector<ConfigValue>;

struct ConfigValue {
    std::variant<bool, std::int64_t, double, std::string, ConfigArray> data;

    bool operator==(const ConfigValue&) const = default;
};

/// TOML spelling of a value (doubles in shortest round-trip form).
std::string format_value(const ConfigValue& value);

/// Parses one value as it would appear right of `=`.
ConfigValue parse_value(std::string_view text);

/// Every key accepted in a run config, in serialization order.
const std::vector<std::string>& config_keys();

/// Sets one field. Throws std::invalid_argument on an unknown key or a value
/// of the wrong type.
void apply_setting(RunConfig& config, std::string_view key, const ConfigValue& value);

ConfigValue get_setting(const RunConfig& config, std::string_view key);

/// `origin` names the text in error messages; relative `extends` paths
/// resolve against `base_dir`.
RunConfig parse_run_config(std::string_view text, std::string_view origin = "<config>",
                           const std::filesystem::path& base_dir = {});

RunConfig load_run_config(const std::filesystem::path& path);

/// Every key, one per line; parse_run_config(serialize(c)) == c.
std::string serialize(const RunConfig& config);

/// Bundled presets keyed by name (rc_rnd, maze_ensemble, ...).
std::map<std::string, RunConfig> preset_configs();
std::vector<std::string> preset_names();
RunConfig preset_config(std::string_view name);
/// Raw text of a bundled preset.
std::string_view preset_text(std::string_view name);

struct SweepAxis {
    std::string key;
    std::vector<ConfigValue> values;

    bool operator==(const SweepAxis&) const = default;
};

struct SweepSpec {
    RunConfig base;
    std::vector<SweepAxis> axes;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7};
    std::string out;

    bool operator==(const SweepSpec&) const = default;
};

struct SweepPoint {
    std::string label;  ///< "met_window=30" style, empty without axes
    RunConfig config;
};

/// A run config plus `axis.<key> = [...]`, `seeds = [...]` and `out = "..."`.
SweepSpec parse_sweep(std::string_view text, std::string_view origin = "<sweep>",
                      const std::filesystem::path& base_dir = {});
SweepSpec load_sweep(const std::filesystem::path& path);

/// Axes cross product (first axis slowest) times seeds (fastest).
std::vector<SweepPoint> enumerate(const SweepSpec& spec);

}  // namespace daggerlab
