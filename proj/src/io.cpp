#include "daggerlab/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "daggerlab/config.hpp"

namespace daggerlab {

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, end);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    double d = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("csv: bad number '" + s + "'");
    return d;
}

long long parse_int(const std::string& s) {
    long long i = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("csv: bad integer '" + s + "'");
    return i;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
    static const std::vector<std::string> cols{"method",        "env",           "seed",
                                               "iteration",     "dataset_size",  "task_performance",
                                               "nswitch",       "expert_frames", "monitoring_frames",
                                               "expert_minutes"};
    return cols;
}

void write_metrics_csv(std::ostream& out, std::span<const SessionMetrics> runs, bool header) {
    if (header) {
        const auto& cols = metrics_columns();
        for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
        out << '\n';
    }
    for (const SessionMetrics& run : runs) {
        for (const IterationMetrics& r : run.rows) {
            out << to_string(run.method) << ',' << to_string(run.env) << ',' << run.seed << ',' << r.iteration << ','
                << r.dataset_size << ',' << format_double(r.task_performance) << ',';
            if (r.nswitch) out << *r.nswitch;
            out << ',' << r.expert_frames << ',' << r.monitoring_frames << ',' << format_double(r.expert_minutes)
                << '\n';
        }
    }
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const SessionMetrics> runs) {
    auto out = open_out(path);
    write_metrics_csv(out, runs);
}

std::string metrics_csv(const SessionMetrics& run) {
    std::ostringstream ss;
    write_metrics_csv(ss, std::span<const SessionMetrics>(&run, 1));
    return ss.str();
}

std::vector<SessionMetrics> read_metrics_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("metrics csv: empty input");
    if (split_csv_line(line) != metrics_columns()) throw std::runtime_error("metrics csv: unexpected header");
    std::vector<SessionMetrics> runs;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != metrics_columns().size()) {
            throw std::runtime_error("metrics csv line " + std::to_string(line_no) + ": wrong field count");
        }
        const Method method = parse_method(f[0]);
        const EnvId env = parse_env_id(f[1]);
        const auto seed = static_cast<std::uint64_t>(parse_int(f[2]));
        if (runs.empty() || runs.back().method != method || runs.back().env != env || runs.back().seed != seed ||
            std::stoi(f[3]) <= runs.back().rows.back().iteration) {
            runs.push_back(SessionMetrics{method, env, seed, {}});
        }
        IterationMetrics r;
        r.iteration = static_cast<int>(parse_int(f[3]));
        r.dataset_size = static_cast<std::size_t>(parse_int(f[4]));
        r.task_performance = parse_double(f[5]);
        if (!f[6].empty()) r.nswitch = static_cast<long>(parse_int(f[6]));
        r.expert_frames = static_cast<long>(parse_int(f[7]));
        r.monitoring_frames = static_cast<long>(parse_int(f[8]));
        r.expert_minutes = parse_double(f[9]);
        runs.back().rows.push_back(r);
    }
    return runs;
}

std::vector<SessionMetrics> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return read_metrics_csv(in);
}

std::vector<SummaryRow> summarize(std::span<const SessionMetrics> runs, std::span<const std::string> groups) {
    if (!groups.empty() && groups.size() != runs.size()) {
        throw std::invalid_argument("summarize: one group label per run expected");
    }
    struct Acc {
        SummaryRow row;
        std::vector<double> perf, nsw, ef, mf, em;
    };
    std::vector<Acc> accs;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].rows.empty()) continue;
        const std::string group = groups.empty() ? std::string() : groups[i];
        Acc* acc = nullptr;
        for (Acc& a : accs) {
            if (a.row.group == group && a.row.method == runs[i].method && a.row.env == runs[i].env) acc = &a;
        }
        if (acc == nullptr) {
            accs.push_back({});
            acc = &accs.back();
            acc->row.group = group;
            acc->row.method = runs[i].method;
            acc->row.env = runs[i].env;
        }
        const IterationMetrics& f = runs[i].final();
        acc->perf.push_back(f.task_performance);
        if (f.nswitch) acc->nsw.push_back(static_cast<double>(*f.nswitch));
        acc->ef.push_back(static_cast<double>(f.expert_frames));
        acc->mf.push_back(static_cast<double>(f.monitoring_frames));
        acc->em.push_back(f.expert_minutes);
    }
    std::vector<SummaryRow> out;
    for (Acc& a : accs) {
        a.row.runs = a.perf.size();
        std::tie(a.row.performance_mean, a.row.performance_std) = mean_std(a.perf);
        if (!a.nsw.empty()) {
            const auto [m, s] = mean_std(a.nsw);
            a.row.nswitch_mean = m;
            a.row.nswitch_std = s;
        }
        std::tie(a.row.expert_frames_mean, a.row.expert_frames_std) = mean_std(a.ef);
        std::tie(a.row.monitoring_frames_mean, a.row.monitoring_frames_std) = mean_std(a.mf);
        std::tie(a.row.expert_minutes_mean, a.row.expert_minutes_std) = mean_std(a.em);
        out.push_back(a.row);
    }
    return out;
}

void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows) {
    out << "group,method,env,runs,task_performance_mean,task_performance_std,nswitch_mean,nswitch_std,"
           "expert_frames_mean,expert_frames_std,monitoring_frames_mean,monitoring_frames_std,"
           "expert_minutes_mean,expert_minutes_std\n";
    for (const SummaryRow& r : rows) {
        out << r.group << ',' << to_string(r.method) << ',' << to_string(r.env) << ',' << r.runs << ','
            << format_double(r.performance_mean) << ',' << format_double(r.performance_std) << ',';
        if (r.nswitch_mean) out << format_double(*r.nswitch_mean) << ',' << format_double(*r.nswitch_std);
        else out << ',';
        out << ',' << format_double(r.expert_frames_mean) << ',' << format_double(r.expert_frames_std) << ','
            << format_double(r.monitoring_frames_mean) << ',' << format_double(r.monitoring_frames_std) << ','
            << format_double(r.expert_minutes_mean) << ',' << format_double(r.expert_minutes_std) << '\n';
    }
}

void write_trace_csv(std::ostream& out, std::string_view run_id, std::span<const TraceRecord> trace, bool header) {
    if (trace.empty()) {
        if (header) out << "run_id,iteration,episode,t,controller,measure,threshold,w\n";
        return;
    }
    const std::size_t obs_n = trace.front().observation.size();
    const Vec* first_vec = std::get_if<Vec>(&trace.front().action);
    if (header) {
        out << "run_id,iteration,episode,t";
        for (std::size_t i = 0; i < obs_n; ++i) out << ",obs_" << i;
        if (first_vec == nullptr) out << ",action";
        else
            for (std::size_t i = 0; i < first_vec->size(); ++i) out << ",action_" << i;
        out << ",controller,measure,threshold,w\n";
    }
    for (const TraceRecord& r : trace) {
        out << run_id << ',' << r.iteration << ',' << r.episode << ',' << r.t;
        for (double x : r.observation) out << ',' << format_double(x);
        if (const int* a = std::get_if<int>(&r.action)) out << ',' << *a;
        else
            for (double x : std::get<Vec>(r.action)) out << ',' << format_double(x);
        out << ',' << to_string(r.controller) << ',' << format_double(r.measure) << ','
            << format_double(r.threshold) << ',' << r.w << '\n';
    }
}

std::string trace_csv(std::string_view run_id, std::span<const TraceRecord> trace) {
    std::ostringstream ss;
    write_trace_csv(ss, run_id, trace);
    return ss.str();
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace csv: empty input");
    const auto head = split_csv_line(line);
    std::size_t obs_n = 0, act_n = 0;
    bool discrete = false;
    for (const std::string& h : head) {
        if (h.starts_with("obs_")) ++obs_n;
        else if (h.starts_with("action_")) ++act_n;
        else if (h == "action") discrete = true;
    }
    const std::size_t expected = 4 + obs_n + (discrete ? 1 : act_n) + 4;
    if (head.size() != expected || head[0] != "run_id") throw std::runtime_error("trace csv: unexpected header");
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != expected) throw std::runtime_error("trace csv: wrong field count");
        TraceRow row;
        row.run_id = f[0];
        TraceRecord& r = row.record;
        r.iteration = static_cast<int>(parse_int(f[1]));
        r.episode = parse_int(f[2]);
        r.t = static_cast<long>(parse_int(f[3]));
        std::size_t k = 4;
        for (std::size_t i = 0; i < obs_n; ++i) r.observation.push_back(parse_double(f[k++]));
        if (discrete) {
            r.action = static_cast<int>(parse_int(f[k++]));
        } else {
            Vec a;
            for (std::size_t i = 0; i < act_n; ++i) a.push_back(parse_double(f[k++]));
            r.action = a;
        }
        r.controller = parse_controller(f[k++]);
        r.measure = parse_double(f[k++]);
        r.threshold = parse_double(f[k++]);
        r.w = static_cast<int>(parse_int(f[k++]));
        rows.push_back(std::move(row));
    }
    return rows;
}

Checkpoint make_checkpoint(const RunConfig& config, const RunResult& result) {
    Checkpoint c;
    c.config = config;
    if (!result.ensemble.empty()) c.members = result.ensemble;
    else c.members = {result.policy};
    c.rnd = result.rnd;
    c.eval_seed = result.eval_seed;
    c.eval_episodes = config.eval_episodes;
    c.task_performance = result.metrics.rows.empty() ? 0.0 : result.metrics.final().task_performance;
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    nlohmann::json members = nlohmann::json::array();
    for (const PolicyNet& p : c.members) members.push_back(policy_to_json(p));
    nlohmann::json j{{"format", "daggerlab-checkpoint/1"},
                     {"config", serialize(c.config)},
                     {"members", members},
                     {"eval_seed", c.eval_seed},
                     {"eval_episodes", c.eval_episodes},
                     {"task_performance", c.task_performance}};
    if (c.rnd) j["rnd"] = rnd_to_json(*c.rnd);
    auto out = open_out(path);
    out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "daggerlab-checkpoint/1") {
        throw std::runtime_error(path.string() + ": not a daggerlab checkpoint");
    }
    Checkpoint c;
    c.config = parse_run_config(j.at("config").get<std::string>(), path.string() + "#config");
    for (const auto& m : j.at("members")) c.members.push_back(policy_from_json(m));
    if (c.members.empty()) throw std::runtime_error(path.string() + ": checkpoint holds no policy");
    if (j.contains("rnd")) c.rnd = rnd_from_json(j.at("rnd"));
    c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    c.eval_episodes = j.at("eval_episodes").get<int>();
    c.task_performance = j.at("task_performance").get<double>();
    return c;
}

double evaluate_checkpoint(const Checkpoint& c) {
    if (c.members.size() > 1) return evaluate(c.members, c.eval_episodes, c.eval_seed);
    return evaluate(c.members.front(), c.eval_episodes, c.eval_seed);
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    auto out = open_out(path);
    out << text;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace daggerlab
