#include "daggerlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "daggerlab/io.hpp"

namespace daggerlab {

namespace detail {
extern const std::pair<std::string_view, std::string_view> kPresets[];
extern const int kPresetCount;
}  // namespace detail

ConfigError::ConfigError(std::string origin, int line, const std::string& message)
    : std::runtime_error(origin + ":" + std::to_string(line) + ": " + message), origin_(std::move(origin)),
      line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

class ValueParser {
public:
    explicit ValueParser(std::string_view text) : s_(text) {}

    ConfigValue parse_all() {
        ConfigValue v = parse();
        skip_space();
        if (pos_ != s_.size()) fail("unexpected text after value");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw std::invalid_argument(msg); }

    void skip_space() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    ConfigValue parse() {
        skip_space();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return {parse_string()};
        if (c == '[') return {parse_array()};
        std::size_t end = pos_;
        while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && s_[end] != ' ' && s_[end] != '\t') ++end;
        const std::string_view word = s_.substr(pos_, end - pos_);
        pos_ = end;
        if (word == "true") return {true};
        if (word == "false") return {false};
        return parse_number(word);
    }

    ConfigValue parse_number(std::string_view word) const {
        std::string cleaned;
        for (char ch : word)
            if (ch != '_') cleaned.push_back(ch);
        std::string_view w = cleaned;
        if (!w.empty() && w.front() == '+') w.remove_prefix(1);
        const bool is_float = w.find_first_of(".eE") != std::string_view::npos || w == "inf" || w == "-inf" ||
                              w == "nan" || w == "-nan";
        if (!is_float) {
            std::int64_t i = 0;
            const auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), i);
            if (ec == std::errc() && p == w.data() + w.size() && !w.empty()) return {i};
            fail("malformed value '" + std::string(word) + "'");
        }
        double d = 0.0;
        const auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), d);
        if (ec != std::errc() || p != w.data() + w.size()) fail("malformed number '" + std::string(word) + "'");
        return {d};
    }

    std::string parse_string() {
        ++pos_;  // opening quote
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) break;
                const char e = s_[pos_++];
                switch (e) {
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            }
            out.push_back(c);
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    ConfigArray parse_array() {
        ++pos_;  // [
        ConfigArray out;
        skip_space();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return out;
        }
        for (;;) {
            out.push_back(parse());
            skip_space();
            if (pos_ >= s_.size()) fail("unterminated array");
            if (s_[pos_] == ']') {
                ++pos_;
                return out;
            }
            if (s_[pos_] != ',') fail("expected ',' or ']' in array");
            ++pos_;
            skip_space();
            if (pos_ < s_.size() && s_[pos_] == ']') {  // trailing comma
                ++pos_;
                return out;
            }
        }
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

// Strips a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string && c == '\\') {
            ++i;
        } else if (c == '"') {
            in_string = !in_string;
        } else if (c == '#' && !in_string) {
            return line.substr(0, i);
        }
    }
    return line;
}

struct Entry {
    std::string key;
    ConfigValue value;
    int line = 0;
};

std::vector<Entry> parse_entries(std::string_view text, const std::string& origin) {
    std::vector<Entry> entries;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        const std::string_view line = trim(strip_comment(text.substr(start, end - start)));
        start = end + 1;
        if (line.empty()) continue;
        if (line.front() == '[') throw ConfigError(origin, line_no, "tables are not supported; use flat keys");
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(origin, line_no, "expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty() || !std::all_of(key.begin(), key.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
            })) {
            throw ConfigError(origin, line_no, "malformed key '" + key + "'");
        }
        if (!seen.insert(key).second) throw ConfigError(origin, line_no, "duplicate key '" + key + "'");
        try {
            entries.push_back({key, ValueParser(trim(line.substr(eq + 1))).parse_all(), line_no});
        } catch (const std::invalid_argument& e) {
            throw ConfigError(origin, line_no, e.what());
        }
    }
    return entries;
}

// -- typed accessors -----------------------------------------------------------

std::int64_t as_int(const ConfigValue& v, std::string_view key) {
    if (const auto* i = std::get_if<std::int64_t>(&v.data)) return *i;
    throw std::invalid_argument("'" + std::string(key) + "' expects an integer");
}

std::int64_t as_nonneg(const ConfigValue& v, std::string_view key) {
    const std::int64_t i = as_int(v, key);
    if (i < 0) throw std::invalid_argument("'" + std::string(key) + "' must be non-negative");
    return i;
}

double as_double(const ConfigValue& v, std::string_view key) {
    if (const auto* d = std::get_if<double>(&v.data)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v.data)) return static_cast<double>(*i);
    throw std::invalid_argument("'" + std::string(key) + "' expects a number");
}

bool as_bool(const ConfigValue& v, std::string_view key) {
    if (const auto* b = std::get_if<bool>(&v.data)) return *b;
    throw std::invalid_argument("'" + std::string(key) + "' expects true or false");
}

const std::string& as_string(const ConfigValue& v, std::string_view key) {
    if (const auto* s = std::get_if<std::string>(&v.data)) return *s;
    throw std::invalid_argument("'" + std::string(key) + "' expects a string");
}

std::vector<std::size_t> as_widths(const ConfigValue& v, std::string_view key) {
    const auto* a = std::get_if<ConfigArray>(&v.data);
    if (a == nullptr) throw std::invalid_argument("'" + std::string(key) + "' expects an array of integers");
    std::vector<std::size_t> out;
    for (const ConfigValue& x : *a) {
        const std::int64_t i = as_int(x, key);
        if (i < 1) throw std::invalid_argument("'" + std::string(key) + "' widths must be positive");
        out.push_back(static_cast<std::size_t>(i));
    }
    return out;
}

ConfigValue int_value(std::int64_t i) { return {i}; }
ConfigValue str_value(std::string_view s) { return {std::string(s)}; }

struct Field {
    std::string key;
    std::function<void(RunConfig&, const ConfigValue&)> set;
    std::function<ConfigValue(const RunConfig&)> get;
};

template <typename T>
Field int_field(std::string key, T RunConfig::*member) {
    return {key,
            [member, key](RunConfig& c, const ConfigValue& v) { c.*member = static_cast<T>(as_nonneg(v, key)); },
            [member](const RunConfig& c) { return int_value(static_cast<std::int64_t>(c.*member)); }};
}

Field double_field(std::string key, double RunConfig::*member) {
    return {key, [member, key](RunConfig& c, const ConfigValue& v) { c.*member = as_double(v, key); },
            [member](const RunConfig& c) { return ConfigValue{c.*member}; }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"env", [](RunConfig& c, const ConfigValue& v) { c.env = parse_env_id(as_string(v, "env")); },
                     [](const RunConfig& c) { return str_value(to_string(c.env)); }});
        f.push_back({"method",
                     [](RunConfig& c, const ConfigValue& v) { c.method = parse_method(as_string(v, "method")); },
                     [](const RunConfig& c) { return str_value(to_string(c.method)); }});
        f.push_back(int_field("seed", &RunConfig::seed));
        f.push_back(int_field("iterations", &RunConfig::iterations));
        f.push_back(int_field("samples_per_iteration", &RunConfig::samples_per_iteration));
        f.push_back(int_field("seed_episodes", &RunConfig::seed_episodes));
        f.push_back(int_field("eval_episodes", &RunConfig::eval_episodes));
        f.push_back(int_field("max_steps_guard", &RunConfig::max_steps_guard));
        f.push_back({"policy_hidden",
                     [](RunConfig& c, const ConfigValue& v) { c.policy.hidden = as_widths(v, "policy_hidden"); },
                     [](const RunConfig& c) {
                         ConfigArray a;
                         for (std::size_t w : c.policy.hidden) a.push_back(int_value(static_cast<std::int64_t>(w)));
                         return ConfigValue{a};
                     }});
        f.push_back({"policy_activation",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.policy.activation = parse_activation(as_string(v, "policy_activation"));
                     },
                     [](const RunConfig& c) { return str_value(to_string(c.policy.activation)); }});
        f.push_back({"goal_conditioned",
                     [](RunConfig& c, const ConfigValue& v) { c.goal_conditioned = as_bool(v, "goal_conditioned"); },
                     [](const RunConfig& c) { return ConfigValue{c.goal_conditioned}; }});
        f.push_back({"bc_epochs",
                     [](RunConfig& c, const ConfigValue& v) { c.bc.epochs = static_cast<int>(as_nonneg(v, "bc_epochs")); },
                     [](const RunConfig& c) { return int_value(c.bc.epochs); }});
        f.push_back({"bc_batch_size",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.bc.batch_size = static_cast<std::size_t>(as_nonneg(v, "bc_batch_size"));
                     },
                     [](const RunConfig& c) { return int_value(static_cast<std::int64_t>(c.bc.batch_size)); }});
        f.push_back({"bc_lr", [](RunConfig& c, const ConfigValue& v) { c.bc.lr = as_double(v, "bc_lr"); },
                     [](const RunConfig& c) { return ConfigValue{c.bc.lr}; }});
        f.push_back(double_field("dagger_beta0", &RunConfig::dagger_beta0));
        f.push_back(int_field("ensemble_size", &RunConfig::ensemble_size));
        f.push_back(double_field("chi_factor", &RunConfig::chi_factor));
        f.push_back(double_field("tau_factor", &RunConfig::tau_factor));
        f.push_back(double_field("lazy_beta_h_factor", &RunConfig::lazy_beta_h_factor));
        f.push_back(double_field("lazy_divider", &RunConfig::lazy_divider));
        f.push_back({"lazy_mode",
                     [](RunConfig& c, const ConfigValue& v) { c.lazy_mode = parse_lazy_mode(as_string(v, "lazy_mode")); },
                     [](const RunConfig& c) { return str_value(to_string(c.lazy_mode)); }});
        f.push_back(int_field("met_window", &RunConfig::met_window));
        f.push_back(double_field("rnd_lambda_factor", &RunConfig::rnd_lambda_factor));
        f.push_back(int_field("rnd_history", &RunConfig::rnd_history));
        f.push_back({"rnd_hidden",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.rnd_arch.hidden = static_cast<std::size_t>(as_nonneg(v, "rnd_hidden"));
                     },
                     [](const RunConfig& c) { return int_value(static_cast<std::int64_t>(c.rnd_arch.hidden)); }});
        f.push_back({"rnd_layers",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.rnd_arch.extra_layers = static_cast<std::size_t>(as_nonneg(v, "rnd_layers"));
                     },
                     [](const RunConfig& c) { return int_value(static_cast<std::int64_t>(c.rnd_arch.extra_layers)); }});
        f.push_back({"rnd_output",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.rnd_arch.output = static_cast<std::size_t>(as_nonneg(v, "rnd_output"));
                     },
                     [](const RunConfig& c) { return int_value(static_cast<std::int64_t>(c.rnd_arch.output)); }});
        f.push_back({"rnd_activation",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.rnd_arch.activation = parse_activation(as_string(v, "rnd_activation"));
                     },
                     [](const RunConfig& c) { return str_value(to_string(c.rnd_arch.activation)); }});
        f.push_back({"rnd_epochs",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.rnd_train.epochs = static_cast<int>(as_nonneg(v, "rnd_epochs"));
                     },
                     [](const RunConfig& c) { return int_value(c.rnd_train.epochs); }});
        f.push_back({"rnd_batch_size",
                     [](RunConfig& c, const ConfigValue& v) {
                         c.rnd_train.batch_size = static_cast<std::size_t>(as_nonneg(v, "rnd_batch_size"));
                     },
                     [](const RunConfig& c) { return int_value(static_cast<std::int64_t>(c.rnd_train.batch_size)); }});
        f.push_back({"rnd_lr", [](RunConfig& c, const ConfigValue& v) { c.rnd_train.lr = as_double(v, "rnd_lr"); },
                     [](const RunConfig& c) { return ConfigValue{c.rnd_train.lr}; }});
        f.push_back({"record_trace",
                     [](RunConfig& c, const ConfigValue& v) { c.record_trace = as_bool(v, "record_trace"); },
                     [](const RunConfig& c) { return ConfigValue{c.record_trace}; }});
        return f;
    }();
    return table;
}

const Field* find_field(std::string_view key) {
    for (const Field& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool is_sweep_key(std::string_view key) { return key.starts_with("axis.") || key == "seeds" || key == "out"; }

// Builds the base config (resolving `extends`) and applies the remaining
// entries. Sweep-only keys are handed to `extra` when it is set.
RunConfig build(std::string_view text, const std::string& origin, const std::filesystem::path& base_dir, int depth,
                const std::function<void(const Entry&)>& extra) {
    if (depth > 16) throw ConfigError(origin, 1, "extends chain is too deep (cycle?)");
    const std::vector<Entry> entries = parse_entries(text, origin);
    RunConfig config;
    for (const Entry& e : entries) {
        if (e.key != "extends") continue;
        const std::string* name = std::get_if<std::string>(&e.value.data);
        if (name == nullptr) throw ConfigError(origin, e.line, "'extends' expects a string");
        const bool looks_like_path = name->find('/') != std::string::npos || name->ends_with(".toml");
        const auto presets = preset_names();
        if (!looks_like_path && std::find(presets.begin(), presets.end(), *name) != presets.end()) {
            config = build(preset_text(*name), "preset:" + *name, {}, depth + 1, {});
        } else {
            const std::filesystem::path p = base_dir / *name;
            std::string body;
            try {
                body = read_file(p);
            } catch (const std::runtime_error& err) {
                throw ConfigError(origin, e.line, "extends: no preset or file named '" + *name + "'");
            }
            config = build(body, p.string(), p.parent_path(), depth + 1, {});
        }
    }
    for (const Entry& e : entries) {
        if (e.key == "extends") continue;
        if (extra && is_sweep_key(e.key)) {
            extra(e);
            continue;
        }
        const Field* f = find_field(e.key);
        if (f == nullptr) throw ConfigError(origin, e.line, "unknown key '" + e.key + "'");
        try {
            f->set(config, e.value);
        } catch (const std::invalid_argument& err) {
            throw ConfigError(origin, e.line, err.what());
        }
    }
    return config;
}

}  // namespace

std::string format_value(const ConfigValue& value) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, bool>) {
                return v ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::int64_t>) {
                return std::to_string(v);
            } else if constexpr (std::is_same_v<T, double>) {
                std::string s = format_double(v);
                if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
                return s;
            } else if constexpr (std::is_same_v<T, std::string>) {
                std::string out = "\"";
                for (char c : v) {
                    if (c == '"' || c == '\\') out.push_back('\\');
                    if (c == '\n') {
                        out += "\\n";
                        continue;
                    }
                    if (c == '\t') {
                        out += "\\t";
                        continue;
                    }
                    out.push_back(c);
                }
                return out + "\"";
            } else {
                std::string out = "[";
                for (std::size_t i = 0; i < v.size(); ++i) {
                    if (i > 0) out += ", ";
                    out += format_value(v[i]);
                }
                return out + "]";
            }
        },
        value.data);
}

ConfigValue parse_value(std::string_view text) { return ValueParser(trim(text)).parse_all(); }

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const Field& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

void apply_setting(RunConfig& config, std::string_view key, const ConfigValue& value) {
    const Field* f = find_field(key);
    if (f == nullptr) throw std::invalid_argument("unknown key '" + std::string(key) + "'");
    f->set(config, value);
}

ConfigValue get_setting(const RunConfig& config, std::string_view key) {
    const Field* f = find_field(key);
    if (f == nullptr) throw std::invalid_argument("unknown key '" + std::string(key) + "'");
    return f->get(config);
}

RunConfig parse_run_config(std::string_view text, std::string_view origin, const std::filesystem::path& base_dir) {
    return build(text, std::string(origin), base_dir, 0, {});
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_file(path), path.string(), path.parent_path());
}

std::string serialize(const RunConfig& config) {
    std::string out;
    for (const Field& f : fields()) out += f.key + " = " + format_value(f.get(config)) + "\n";
    return out;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (int i = 0; i < detail::kPresetCount; ++i) names.emplace_back(detail::kPresets[i].first);
    return names;
}

std::string_view preset_text(std::string_view name) {
    for (int i = 0; i < detail::kPresetCount; ++i)
        if (detail::kPresets[i].first == name) return detail::kPresets[i].second;
    throw std::invalid_argument("no preset named '" + std::string(name) + "'");
}

RunConfig preset_config(std::string_view name) {
    const std::string_view text = preset_text(name);
    return build(text, "preset:" + std::string(name), {}, 0, {});
}

std::map<std::string, RunConfig> preset_configs() {
    std::map<std::string, RunConfig> out;
    for (const std::string& n : preset_names()) out.emplace(n, preset_config(n));
    return out;
}

SweepSpec parse_sweep(std::string_view text, std::string_view origin, const std::filesystem::path& base_dir) {
    SweepSpec spec;
    const std::string where(origin);
    spec.base = build(text, where, base_dir, 0, [&](const Entry& e) {
        if (e.key == "out") {
            const auto* s = std::get_if<std::string>(&e.value.data);
            if (s == nullptr) throw ConfigError(where, e.line, "'out' expects a string");
            spec.out = *s;
        } else if (e.key == "seeds") {
            const auto* a = std::get_if<ConfigArray>(&e.value.data);
            if (a == nullptr || a->empty()) throw ConfigError(where, e.line, "'seeds' expects a non-empty array");
            spec.seeds.clear();
            for (const ConfigValue& v : *a) {
                const auto* i = std::get_if<std::int64_t>(&v.data);
                if (i == nullptr || *i < 0) throw ConfigError(where, e.line, "'seeds' entries must be integers >= 0");
                spec.seeds.push_back(static_cast<std::uint64_t>(*i));
            }
        } else {
            SweepAxis axis{e.key.substr(5), {}};
            if (find_field(axis.key) == nullptr || axis.key == "seed") {
                throw ConfigError(where, e.line, "cannot sweep over '" + axis.key + "'");
            }
            const auto* a = std::get_if<ConfigArray>(&e.value.data);
            if (a == nullptr || a->empty()) throw ConfigError(where, e.line, "axis values must be a non-empty array");
            axis.values = *a;
            RunConfig probe;
            for (const ConfigValue& v : axis.values) {
                try {
                    apply_setting(probe, axis.key, v);
                } catch (const std::invalid_argument& err) {
                    throw ConfigError(where, e.line, err.what());
                }
            }
            spec.axes.push_back(std::move(axis));
        }
    });
    return spec;
}

SweepSpec load_sweep(const std::filesystem::path& path) {
    return parse_sweep(read_file(path), path.string(), path.parent_path());
}

std::vector<SweepPoint> enumerate(const SweepSpec& spec) {
    std::vector<SweepPoint> points;
    std::vector<std::size_t> index(spec.axes.size(), 0);
    for (;;) {
        RunConfig c = spec.base;
        std::string label;
        for (std::size_t a = 0; a < spec.axes.size(); ++a) {
            const ConfigValue& v = spec.axes[a].values[index[a]];
            apply_setting(c, spec.axes[a].key, v);
            if (!label.empty()) label += ",";
            label += spec.axes[a].key + "=" + format_value(v);
        }
        for (std::uint64_t seed : spec.seeds) {
            SweepPoint p{label, c};
            p.config.seed = seed;
            points.push_back(std::move(p));
        }
        std::size_t a = spec.axes.size();
        while (a > 0) {
            --a;
            if (++index[a] < spec.axes[a].values.size()) break;
            index[a] = 0;
            if (a == 0) return points;
        }
        if (spec.axes.empty()) return points;
    }
}

}  // namespace daggerlab
