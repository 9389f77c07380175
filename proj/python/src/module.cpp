#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "daggerlab/config.hpp"
#include "daggerlab/io.hpp"
#include "daggerlab/orchestrator.hpp"
#include "daggerlab/sweep.hpp"

namespace py = pybind11;
using namespace daggerlab;

namespace {

// Accepts a preset name, a path, or config text.
RunConfig resolve_config(const std::string& config, const std::map<std::string, std::string>& set) {
    RunConfig c;
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), config) != names.end())
        c = preset_config(config);
    else if (config.find('\n') == std::string::npos && config.find('=') == std::string::npos)
        c = load_run_config(config);
    else
        c = parse_run_config(config);
    for (const auto& [k, v] : set) apply_setting(c, k, parse_value(v));
    validate(c);
    return c;
}

py::dict metrics_row(const IterationMetrics& r) {
    py::dict d;
    d["iteration"] = r.iteration;
    d["dataset_size"] = r.dataset_size;
    d["task_performance"] = r.task_performance;
    d["nswitch"] = r.nswitch ? py::cast(*r.nswitch) : py::none();
    d["expert_frames"] = r.expert_frames;
    d["monitoring_frames"] = r.monitoring_frames;
    d["expert_minutes"] = r.expert_minutes;
    d["env_steps"] = r.env_steps;
    return d;
}

py::object action_value(const Action& a) {
    if (const int* i = std::get_if<int>(&a)) return py::cast(*i);
    return py::cast(std::get<Vec>(a));
}

Action action_arg(EnvId env, const py::object& a) {
    if (env_spec(env).discrete()) return Action{a.cast<int>()};
    return Action{a.cast<Vec>()};
}

class PyEnv {
public:
    PyEnv(const std::string& name, std::uint64_t seed) : id_(parse_env_id(name)) { reset(seed); }

    Vec reset(std::uint64_t seed) {
        auto [st, obs] = env_reset(id_, seed);
        state_ = std::move(st);
        return obs;
    }

    py::tuple step(const py::object& action) {
        const StepResult r = env_step(state_, action_arg(id_, action));
        return py::make_tuple(r.observation, r.done, r.success);
    }

    py::object oracle() const { return action_value(oracle_action(state_)); }
    Vec observation() const { return observe(state_); }
    bool done() const { return state_.done; }
    int steps() const { return state_.steps; }
    void perturb(double magnitude, std::uint64_t seed) { state_ = perturb_state(state_, magnitude, seed); }

private:
    EnvId id_;
    EnvState state_;
};

}  // namespace

PYBIND11_MODULE(_daggerlab, m) {
    m.doc() = "Interactive imitation learning: DAgger variants with learned gating";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<LivenessError>(m, "LivenessError", PyExc_RuntimeError);

    m.def("presets", &preset_names, "Names of the built-in presets.");
    m.def(
        "config_text",
        [](const std::string& config, const std::map<std::string, std::string>& set) {
            return serialize(resolve_config(config, set));
        },
        py::arg("config"), py::arg("set") = std::map<std::string, std::string>{},
        "Fully resolved config text for a preset name, file path or config text.");

    m.def(
        "run",
        [](const std::string& config, std::optional<std::uint64_t> seed, const std::map<std::string, std::string>& set,
           bool trace) {
            RunConfig c = resolve_config(config, set);
            if (seed) c.seed = *seed;
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run(c);
            }
            py::dict out;
            out["run_id"] = run_id(c);
            out["config"] = serialize(c);
            py::list rows;
            for (const auto& row : r.metrics.rows) rows.append(metrics_row(row));
            out["metrics"] = rows;
            out["metrics_csv"] = metrics_csv(r.metrics);
            if (trace) out["trace_csv"] = trace_csv(run_id(c), r.trace);
            return out;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("set") = std::map<std::string, std::string>{},
        py::arg("trace") = false, "Run one configuration; returns metrics rows and CSV text.");

    m.def(
        "gate",
        [](const std::vector<double>& measures, double threshold, int met_window) {
            GateState s;
            s.threshold = threshold;
            s.met_window = met_window;
            std::vector<std::string> out;
            for (double v : measures) out.emplace_back(to_string(gate_step(s, v)));
            return py::make_tuple(out, s.nswitch);
        },
        py::arg("measures"), py::arg("threshold"), py::arg("met_window"),
        "Run the handover rule over one episode of measures; returns (controllers, nswitch).");
    m.def(
        "calibrate_threshold",
        [](const std::vector<double>& measures, double factor) { return calibrate_threshold(measures, factor); },
        py::arg("measures"), py::arg("factor"));
    m.def("lazy_thresholds", &lazy_thresholds, py::arg("beta_h"), py::arg("divider"));
    m.def(
        "expert_minutes",
        [](long frames, const std::string& env) { return expert_minutes(frames, env_spec(parse_env_id(env))); },
        py::arg("frames"), py::arg("env"));

    py::class_<PyEnv>(m, "Env")
        .def(py::init<const std::string&, std::uint64_t>(), py::arg("name"), py::arg("seed") = 0)
        .def("reset", &PyEnv::reset, py::arg("seed"))
        .def("step", &PyEnv::step, py::arg("action"), "Returns (observation, done, success).")
        .def("oracle_action", &PyEnv::oracle)
        .def("observation", &PyEnv::observation)
        .def("perturb", &PyEnv::perturb, py::arg("magnitude"), py::arg("seed") = 0)
        .def_property_readonly("done", &PyEnv::done)
        .def_property_readonly("steps", &PyEnv::steps);
}
