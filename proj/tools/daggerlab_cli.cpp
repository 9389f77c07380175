// daggerlab: run, sweep, evaluate and serve imitation-learning experiments.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "daggerlab/bridge.hpp"
#include "daggerlab/config.hpp"
#include "daggerlab/io.hpp"
#include "daggerlab/sweep.hpp"
#include "daggerlab/websocket.hpp"

namespace fs = std::filesystem;
using namespace daggerlab;

namespace {

fs::path default_out() {
    const char* env = std::getenv("DAGGERLAB_OUT");
    return env && *env ? fs::path(env) : fs::path("daggerlab_out");
}

// A path if one exists there, otherwise a bundled preset name (".toml" optional).
RunConfig resolve_config(const std::string& ref) {
    if (fs::exists(ref)) return load_run_config(ref);
    std::string name = fs::path(ref).filename().string();
    if (name.size() > 5 && name.ends_with(".toml")) name.resize(name.size() - 5);
    for (const std::string& p : preset_names())
        if (p == name) return preset_config(name);
    throw std::runtime_error("no config file or preset named '" + ref + "'");
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw std::runtime_error("--set expects key=value, got '" + s + "'");
        std::string key = s.substr(0, eq);
        try {
            apply_setting(config, key, parse_value(s.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw ConfigError("--set", 0, e.what());
        }
    }
}

void print_metrics(const SessionMetrics& m) {
    std::cout << "iteration,dataset_size,task_performance,nswitch,expert_frames,monitoring_frames,expert_minutes\n";
    for (const IterationMetrics& r : m.rows) {
        std::cout << r.iteration << ',' << r.dataset_size << ',' << format_double(r.task_performance) << ','
                  << (r.nswitch ? std::to_string(*r.nswitch) : "") << ',' << r.expert_frames << ','
                  << r.monitoring_frames << ',' << format_double(r.expert_minutes) << '\n';
    }
}

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<long> guard;
    std::string out;

    RunConfig load() const {
        RunConfig c = resolve_config(config);
        apply_overrides(c, sets);
        if (seed) c.seed = *seed;
        if (guard) c.max_steps_guard = *guard;
        return c;
    }
    fs::path out_dir() const { return out.empty() ? default_out() : fs::path(out); }
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
    app->add_option("--config", c.config, "Config file or preset name")->required();
    app->add_option("--set", c.sets, "Override one key (key=value); repeatable");
    if (with_seed) app->add_option("--seed", c.seed, "Run seed");
    app->add_option("--max-steps-guard", c.guard, "Per-iteration step budget (0: automatic)");
    app->add_option("--out", c.out, "Output directory (default: $DAGGERLAB_OUT or ./daggerlab_out)");
}

int cmd_run(const Common& c) {
    const RunConfig config = c.load();
    const RunResult result = run(config);
    const std::string id = run_id(config);
    write_run_outputs(c.out_dir(), id, config, result);
    print_metrics(result.metrics);
    std::cerr << "wrote " << (c.out_dir() / id).string() << ".*\n";
    return 0;
}

int cmd_sweep(const std::string& path, const std::string& out, int workers, const std::optional<long>& guard) {
    SweepSpec spec = load_sweep(path);
    if (guard) spec.base.max_steps_guard = *guard;
    SweepOptions options;
    options.workers = workers;
    options.out_dir = !out.empty() ? fs::path(out) : !spec.out.empty() ? fs::path(spec.out) : default_out();
    const auto outcomes = run_sweep(spec, options);
    int failed = 0;
    for (const SweepOutcome& o : outcomes) {
        if (!o.metrics) {
            ++failed;
            std::cerr << o.id << ": " << o.error << '\n';
        }
    }
    std::ifstream summary(options.out_dir / "summary.csv");
    std::cout << summary.rdbuf();
    std::cerr << outcomes.size() - failed << " runs ok, " << failed << " failed; results in "
              << options.out_dir.string() << '\n';
    return 0;
}

int cmd_eval(const std::string& path, std::optional<int> episodes, std::optional<std::uint64_t> seed) {
    Checkpoint ck = load_checkpoint(path);
    const double recorded = ck.task_performance;
    if (episodes) ck.eval_episodes = *episodes;
    if (seed) ck.eval_seed = *seed;
    const double score = evaluate_checkpoint(ck);
    std::cout << "task_performance," << format_double(score) << '\n';
    if (!episodes && !seed) std::cout << "recorded," << format_double(recorded) << '\n';
    return 0;
}

int cmd_export_traces(const Common& c, const std::string& record, const std::string& output) {
    RunConfig config;
    RunResult result;
    if (!record.empty()) {
        ReplayResult r = replay_session(load_session_record(record));
        config = r.config;
        result = std::move(r.result);
    } else {
        if (c.config.empty()) throw std::runtime_error("export-traces needs --config or --record");
        config = c.load();
        config.record_trace = true;
        result = run(config);
    }
    if (config.method == Method::bc) throw std::runtime_error("bc runs have no interaction trace");
    const std::string id = run_id(config);
    const fs::path dest = output.empty() ? c.out_dir() / (id + ".trace.csv") : fs::path(output);
    write_text_file(dest, trace_csv(id, result.trace));
    std::cerr << "wrote " << result.trace.size() << " steps to " << dest.string() << '\n';
    return 0;
}

int cmd_serve(const Common& c, int port, double tick_hz, double accept_timeout, double reconnect_timeout) {
    const RunConfig config = c.load();
    WebSocketServer server(static_cast<std::uint16_t>(port));
    std::cerr << "listening on ws://127.0.0.1:" << server.port() << '\n';
    if (!server.accept(std::chrono::milliseconds(static_cast<long>(accept_timeout * 1000)))) {
        std::cerr << "no console connected\n";
        return 3;
    }
    ServeOptions options;
    options.tick_hz = tick_hz;
    options.session_id = run_id(config);
    options.reconnect_timeout = std::chrono::milliseconds(static_cast<long>(reconnect_timeout * 1000));
    options.record_path = c.out_dir() / (options.session_id + ".session.jsonl");
    fs::create_directories(c.out_dir());
    if (fs::exists(options.record_path)) fs::remove(options.record_path);
    ServeOutcome outcome = serve_session(config, server, options);
    std::cerr << "session record: " << options.record_path.string() << '\n';
    if (!outcome.result) {
        std::cerr << "session aborted: " << outcome.error << '\n';
        return 4;
    }
    write_run_outputs(c.out_dir(), options.session_id, config, *outcome.result);
    print_metrics(outcome.result->metrics);
    return 0;
}

int cmd_replay(const std::string& path, const std::string& out) {
    ReplayResult r = replay_session(load_session_record(path));
    if (!out.empty()) write_run_outputs(out, run_id(r.config), r.config, r.result);
    print_metrics(r.result.metrics);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interactive imitation learning experiments"};
    app.require_subcommand(1);

    Common run_opts;
    auto* run_cmd = app.add_subcommand("run", "Run one configuration");
    add_common(run_cmd, run_opts);

    std::string sweep_path, sweep_out;
    int workers = 1;
    std::optional<long> sweep_guard;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a sweep file (axes x seeds)");
    sweep_cmd->add_option("--config", sweep_path, "Sweep file")->required();
    sweep_cmd->add_option("--out", sweep_out, "Output directory");
    sweep_cmd->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--max-steps-guard", sweep_guard, "Per-iteration step budget (0: automatic)");

    std::string ck_path;
    std::optional<int> eval_episodes;
    std::optional<std::uint64_t> eval_seed;
    auto* eval_cmd = app.add_subcommand("eval", "Score a saved checkpoint");
    eval_cmd->add_option("checkpoint", ck_path, "Checkpoint JSON")->required();
    eval_cmd->add_option("--episodes", eval_episodes, "Override the episode count");
    eval_cmd->add_option("--seed", eval_seed, "Override the evaluation seed");

    Common trace_opts;
    std::string trace_record, trace_output;
    auto* trace_cmd = app.add_subcommand("export-traces", "Write the per-step trajectory dump of a run or session");
    trace_cmd->add_option("--config", trace_opts.config, "Config file or preset name (re-runs it)");
    trace_cmd->add_option("--set", trace_opts.sets, "Override one key (key=value); repeatable");
    trace_cmd->add_option("--seed", trace_opts.seed, "Run seed");
    trace_cmd->add_option("--max-steps-guard", trace_opts.guard, "Per-iteration step budget");
    trace_cmd->add_option("--record", trace_record, "Session record (JSONL) to replay instead");
    trace_cmd->add_option("--out", trace_opts.out, "Output directory");
    trace_cmd->add_option("-o,--output", trace_output, "Output CSV path");

    Common serve_opts;
    int port = 8765;
    double tick_hz = 10.0, accept_timeout = 600.0, reconnect_timeout = 60.0;
    auto* serve_cmd = app.add_subcommand("serve", "Serve a live session to an expert console");
    add_common(serve_cmd, serve_opts);
    serve_cmd->add_option("--port", port, "Listen port (0 picks one)");
    serve_cmd->add_option("--tick-hz", tick_hz, "Autonomous frame rate (0: unthrottled)");
    serve_cmd->add_option("--accept-timeout", accept_timeout, "Seconds to wait for the console");
    serve_cmd->add_option("--reconnect-timeout", reconnect_timeout, "Seconds to wait after a disconnect");

    std::string replay_path, replay_out;
    auto* replay_cmd = app.add_subcommand("replay", "Re-drive a recorded session");
    replay_cmd->add_option("record", replay_path, "Session record (JSONL)")->required();
    replay_cmd->add_option("--out", replay_out, "Write run outputs here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) return cmd_run(run_opts);
        if (*sweep_cmd) return cmd_sweep(sweep_path, sweep_out, workers, sweep_guard);
        if (*eval_cmd) return cmd_eval(ck_path, eval_episodes, eval_seed);
        if (*trace_cmd) return cmd_export_traces(trace_opts, trace_record, trace_output);
        if (*serve_cmd) return cmd_serve(serve_opts, port, tick_hz, accept_timeout, reconnect_timeout);
        if (*replay_cmd) return cmd_replay(replay_path, replay_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
