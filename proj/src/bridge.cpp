#include "daggerlab/bridge.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "daggerlab/config.hpp"
#include "daggerlab/io.hpp"

namespace daggerlab {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

// -- in-process channel -------------------------------------------------------------

namespace {

struct Pipe {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<json> queue[2];
    bool closed = false;
};

class PipeEnd final : public Channel {
public:
    PipeEnd(std::shared_ptr<Pipe> pipe, int side) : pipe_(std::move(pipe)), side_(side) {}
    ~PipeEnd() override { close(); }

    void send(const json& message) override {
        std::lock_guard lock(pipe_->mutex);
        if (pipe_->closed) throw ChannelClosed("channel closed");
        pipe_->queue[1 - side_].push_back(message);
        pipe_->cv.notify_all();
    }

    std::optional<json> receive(std::chrono::milliseconds timeout) override {
        std::unique_lock lock(pipe_->mutex);
        auto& q = pipe_->queue[side_];
        pipe_->cv.wait_for(lock, timeout, [&] { return !q.empty() || pipe_->closed; });
        if (!q.empty()) {
            json m = std::move(q.front());
            q.pop_front();
            return m;
        }
        if (pipe_->closed) throw ChannelClosed("channel closed");
        return std::nullopt;
    }

    void close() override {
        std::lock_guard lock(pipe_->mutex);
        pipe_->closed = true;
        pipe_->cv.notify_all();
    }

private:
    std::shared_ptr<Pipe> pipe_;
    int side_;
};

double unix_now() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

}  // namespace

std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> make_channel_pair() {
    auto pipe = std::make_shared<Pipe>();
    return {std::make_shared<PipeEnd>(pipe, 0), std::make_shared<PipeEnd>(pipe, 1)};
}

// -- message helpers ------------------------------------------------------------------

std::string config_digest(const RunConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize(config)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json geometry_summary(const EnvState& state) {
    json g{{"env", to_string(state.id)}, {"steps", state.steps}};
    if (const auto* r = std::get_if<RaceState>(&state.physical)) {
        g["pose"] = {{"x", r->x},         {"y", r->y},           {"heading", r->heading},
                     {"speed", r->speed}, {"progress", r->progress}, {"arc", r->arc}};
        json walls = json::array();
        for (const Segment& s : race_track().walls) walls.push_back({s.x0, s.y0, s.x1, s.y1});
        g["walls"] = walls;
    } else if (const auto* m = std::get_if<MazeState>(&state.physical)) {
        g["agent"] = {m->ax, m->ay};
        g["goal"] = {m->gx, m->gy};
        json rows = json::array();
        for (int y = maze::size - 1; y >= 0; --y) {
            std::string row;
            for (int x = 0; x < maze::size; ++x) row.push_back(maze::is_free(x, y) ? '.' : '#');
            rows.push_back(row);
        }
        g["layout"] = rows;
    } else {
        const auto& d = std::get<DashState>(state.physical);
        g["pose"] = {{"x", d.x}, {"y", d.y}, {"vx", d.vx}, {"vy", d.vy}};
        g["half_width"] = dash::half_width;
        g["bump_period"] = dash::bump_period;
    }
    return g;
}

EnvState state_from_geometry(EnvId env, const json& g) {
    EnvState s;
    s.id = env;
    s.steps = g.value("steps", 0);
    switch (env) {
        case EnvId::racetrack2d: {
            const json& p = g.at("pose");
            RaceState r;
            r.x = p.at("x").get<double>();
            r.y = p.at("y").get<double>();
            r.heading = p.at("heading").get<double>();
            r.speed = p.at("speed").get<double>();
            r.progress = p.value("progress", 0.0);
            r.arc = p.value("arc", 0.0);
            s.physical = r;
            break;
        }
        case EnvId::gridmaze: {
            MazeState m;
            m.ax = g.at("agent").at(0).get<int>();
            m.ay = g.at("agent").at(1).get<int>();
            m.gx = g.at("goal").at(0).get<int>();
            m.gy = g.at("goal").at(1).get<int>();
            s.physical = m;
            break;
        }
        case EnvId::pointdash: {
            const json& p = g.at("pose");
            s.physical = DashState{p.at("x").get<double>(), p.at("y").get<double>(), p.at("vx").get<double>(),
                                   p.at("vy").get<double>()};
            break;
        }
    }
    return s;
}

json action_to_json(const Action& action) {
    if (const int* a = std::get_if<int>(&action)) return *a;
    return std::get<Vec>(action);
}

Action action_from_json(EnvId env, const json& j) {
    Action a;
    if (env_spec(env).discrete()) {
        if (!j.is_number_integer()) throw std::invalid_argument("expected an integer action");
        a = j.get<int>();
    } else {
        if (!j.is_array()) throw std::invalid_argument("expected an array action");
        Vec v;
        for (const json& x : j) {
            if (!x.is_number()) throw std::invalid_argument("action components must be numbers");
            v.push_back(x.get<double>());
        }
        a = v;
    }
    validate_action(env, a);
    return a;
}

namespace {

json metrics_to_json(const SessionMetrics& m) {
    json rows = json::array();
    for (const IterationMetrics& r : m.rows) {
        rows.push_back({{"iteration", r.iteration},
                        {"dataset_size", r.dataset_size},
                        {"task_performance", r.task_performance},
                        {"nswitch", r.nswitch ? json(*r.nswitch) : json(nullptr)},
                        {"expert_frames", r.expert_frames},
                        {"monitoring_frames", r.monitoring_frames},
                        {"expert_minutes", r.expert_minutes},
                        {"env_steps", r.env_steps}});
    }
    return {{"method", to_string(m.method)}, {"env", to_string(m.env)}, {"seed", m.seed}, {"rows", rows}};
}

}  // namespace

// -- records ---------------------------------------------------------------------------

bool SessionRecord::complete() const {
    if (entries.empty()) return false;
    const json& m = entries.back().message;
    return m.value("type", "") == "session_control" && m.value("action", "") == "end";
}

json entry_to_json(const RecordEntry& e) {
    json j{{"seq", e.seq}, {"wall_time", e.wall_time}, {"dir", e.dir}, {"message", e.message}};
    if (!e.status.empty()) j["status"] = e.status;
    return j;
}

RecordEntry entry_from_json(const json& j) {
    RecordEntry e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.wall_time = j.at("wall_time").get<double>();
    e.dir = j.at("dir").get<std::string>();
    e.status = j.value("status", "");
    e.message = j.at("message");
    return e;
}

std::string session_record_jsonl(const SessionRecord& record) {
    std::string out;
    for (const RecordEntry& e : record.entries) out += entry_to_json(e).dump() + "\n";
    return out;
}

void save_session_record(const std::filesystem::path& path, const SessionRecord& record) {
    write_text_file(path, session_record_jsonl(record));
}

SessionRecord parse_session_record(std::string_view jsonl) {
    SessionRecord rec;
    std::size_t start = 0;
    int line_no = 0;
    while (start < jsonl.size()) {
        std::size_t end = jsonl.find('\n', start);
        const bool last = end == std::string_view::npos;
        if (last) end = jsonl.size();
        ++line_no;
        const std::string_view line = jsonl.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            rec.entries.push_back(entry_from_json(j));
        } catch (const json::exception& e) {
            throw IntegrityError("session record line " + std::to_string(line_no) +
                                 (last ? " is truncated: " : " is malformed: ") + e.what());
        }
    }
    for (const RecordEntry& e : rec.entries) {
        const json& m = e.message;
        if (m.value("type", "") == "session_control" && m.value("action", "") == "start") {
            rec.session_id = m.value("session", "");
            break;
        }
    }
    return rec;
}

SessionRecord load_session_record(const std::filesystem::path& path) { return parse_session_record(read_text_file(path)); }

// -- serving ------------------------------------------------------------------------------

namespace {

class Recorder {
public:
    explicit Recorder(const ServeOptions& options) {
        record.session_id = options.session_id;
        if (!options.record_path.empty()) {
            if (options.record_path.has_parent_path()) {
                std::filesystem::create_directories(options.record_path.parent_path());
            }
            file_.open(options.record_path, std::ios::binary | std::ios::trunc);
            if (!file_) throw std::runtime_error("cannot write '" + options.record_path.string() + "'");
        }
    }

    void add(std::string dir, std::string status, json message) {
        RecordEntry e{next_seq_++, unix_now(), std::move(dir), std::move(status), std::move(message)};
        if (file_.is_open()) {
            file_ << entry_to_json(e).dump() << '\n';
            file_.flush();
        }
        record.entries.push_back(std::move(e));
    }

    SessionRecord record;

private:
    std::ofstream file_;
    std::uint64_t next_seq_ = 0;
};

// The console as an expert provider. Wraps every channel failure into
// ExpertUnavailable so the loop discards the episode.
class RemoteExpert final : public ExpertProvider, public RunObserver {
public:
    RemoteExpert(const RunConfig& config, Channel& channel, Recorder& recorder, const ServeOptions& options)
        : config_(config), channel_(channel), recorder_(recorder), session_(options.session_id),
          tick_hz_(options.tick_hz), reconnect_timeout_(options.reconnect_timeout) {}

    ExpertKind kind() const override {
        return config_.method == Method::hg ? ExpertKind::human_gated : ExpertKind::remote_human;
    }

    void send_start() {
        send({{"type", "session_control"},
              {"action", "start"},
              {"digest", config_digest(config_)},
              {"config", serialize(config_)},
              {"env", to_string(config_.env)},
              {"method", to_string(config_.method)},
              {"tick_hz", tick_hz_}});
    }

    void send_end(const SessionMetrics& metrics) {
        send({{"type", "session_control"},
              {"action", "end"},
              {"digest", config_digest(config_)},
              {"metrics", metrics_to_json(metrics)}});
    }

    // Best effort: the console may already be gone.
    void send_abort(const std::string& reason) {
        json m{{"type", "session_control"}, {"action", "abort"}, {"digest", config_digest(config_)},
               {"reason", reason}};
        try {
            send(m);
        } catch (const ChannelClosed&) {
            m["session"] = session_;
            recorder_.add("note", "", {{"type", "abort_undelivered"}});
            recorder_.add("out", "", std::move(m));
        }
    }

    Action act(const Frame& f) override {
        return guarded(f, "act", [&] {
            if (config_.method == Method::hg) {
                if (stash_ && stash_->first == f.t) {
                    Action a = std::move(stash_->second);
                    stash_.reset();
                    return a;
                }
                send({{"type", "takeover_request"}, {"t", f.t}, {"reason", "human"}});
            } else if (f.handover) {
                send({{"type", "takeover_request"}, {"t", f.t}, {"reason", "gate"}});
            }
            return await_action(f);
        });
    }

    void watch(const Frame& f) override {
        guarded(f, "watch", [&] {
            send_frame(f, false, config_.method == Method::rnd);
            pace();
            return 0;
        });
    }

    std::optional<HumanSignal> poll(const Frame& f) override {
        return guarded(f, "poll", [&]() -> std::optional<HumanSignal> {
            if (f.controller == Controller::expert) {
                // The human either keeps driving (an action for this t) or hands back.
                awaiting_ = f.t;
                awaiting_frame_ = &f;
                send_frame(f, true, false);
                for (;;) {
                    const json m = next_message();
                    const std::string type = m.value("type", "");
                    if (type == "handback" && m.value("t", -1L) == f.t) {
                        recorder_.add("in", "applied", m);
                        awaiting_.reset();
                        send({{"type", "handback"}, {"t", f.t}});
                        return HumanSignal::handback;
                    }
                    if (auto a = handle(m)) {
                        awaiting_.reset();
                        stash_ = {f.t, std::move(*a)};
                        return std::nullopt;
                    }
                }
            }
            drain(std::chrono::milliseconds(0));
            if (pending_takeover_) {
                pending_takeover_ = false;
                send({{"type", "takeover"}, {"t", f.t}});
                return HumanSignal::takeover;
            }
            return std::nullopt;
        });
    }

    bool reconnect() override {
        if (!channel_.await_reconnect(reconnect_timeout_)) return false;
        recorder_.add("note", "", {{"type", "reconnect"}});
        try {
            send_start();
        } catch (const ChannelClosed&) {
            return false;
        }
        return true;
    }

    void on_episode_discarded(std::int64_t episode) override {
        recorder_.add("note", "", {{"type", "episode_discarded"}, {"episode", episode}});
    }

private:
    template <typename F>
    auto guarded(const Frame& f, const char* phase, F&& body) -> decltype(body()) {
        try {
            return body();
        } catch (const ChannelClosed&) {
            awaiting_.reset();
            stash_.reset();
            pending_takeover_ = false;
            recorder_.add("note", "", {{"type", "disconnect"}, {"t", f.t}, {"phase", phase}});
            throw ExpertUnavailable("console disconnected at t=" + std::to_string(f.t));
        }
    }

    void send(json m) {
        m["session"] = session_;
        m["seq"] = out_seq_++;
        channel_.send(m);
        recorder_.add("out", "", std::move(m));
    }

    void send_frame(const Frame& f, bool awaiting, bool autonomous) {
        send({{"type", "state_frame"},
              {"iteration", f.iteration},
              {"episode", f.episode},
              {"t", f.t},
              {"episode_t", f.episode_t},
              {"observation", Vec(f.observation.begin(), f.observation.end())},
              {"geometry", geometry_summary(*f.state)},
              {"measure", f.measure},
              {"threshold", f.threshold},
              {"controller", to_string(f.controller)},
              {"w", f.w},
              {"autonomous", autonomous},
              {"awaiting_action", awaiting}});
    }

    json next_message() {
        for (;;) {
            if (auto m = channel_.receive(std::chrono::milliseconds(100))) return *m;
        }
    }

    Action await_action(const Frame& f) {
        awaiting_ = f.t;
        awaiting_frame_ = &f;
        send_frame(f, true, false);
        for (;;) {
            if (auto a = handle(next_message())) {
                awaiting_.reset();
                return *a;
            }
        }
    }

    // Records and processes one incoming message; returns an accepted action.
    std::optional<Action> handle(const json& m) {
        const std::string type = m.value("type", "");
        if (type == "expert_action") {
            const long t = m.contains("t") && m["t"].is_number_integer() ? m["t"].get<long>() : -1;
            if (!awaiting_ || t != *awaiting_) {
                recorder_.add("in", "rejected", m);
                reject(t, awaiting_ ? "stale t: expected " + std::to_string(*awaiting_) : "no action expected");
                return std::nullopt;
            }
            try {
                Action a = action_from_json(config_.env, m.at("action"));
                recorder_.add("in", "accepted", m);
                return a;
            } catch (const std::exception& e) {
                recorder_.add("in", "rejected", m);
                reject(t, std::string("bad action: ") + e.what());
                return std::nullopt;
            }
        }
        if (type == "takeover" && config_.method == Method::hg && !awaiting_) {
            recorder_.add("in", "queued", m);
            pending_takeover_ = true;
            return std::nullopt;
        }
        if (type == "session_control" && m.contains("tick_hz")) {
            if (m["tick_hz"].is_number() && m["tick_hz"].get<double>() >= 0.0) {
                tick_hz_ = m["tick_hz"].get<double>();
                recorder_.add("in", "applied", m);
            } else {
                recorder_.add("in", "rejected", m);
                send({{"type", "error"}, {"message", "tick_hz must be a number >= 0"}});
            }
            return std::nullopt;
        }
        recorder_.add("in", "ignored", m);
        return std::nullopt;
    }

    void reject(long t, const std::string& why) {
        send({{"type", "error"}, {"t", t}, {"message", why}});
        if (awaiting_ && awaiting_frame_ != nullptr) send_frame(*awaiting_frame_, true, false);
    }

    void drain(std::chrono::milliseconds wait) {
        const auto deadline = Clock::now() + wait;
        for (;;) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            auto m = channel_.receive(std::max(left, std::chrono::milliseconds(0)));
            if (!m) return;
            handle(*m);
        }
    }

    void pace() {
        if (tick_hz_ <= 0.0) {
            drain(std::chrono::milliseconds(0));
            return;
        }
        drain(std::chrono::milliseconds(static_cast<long>(1000.0 / tick_hz_)));
    }

    RunConfig config_;
    Channel& channel_;
    Recorder& recorder_;
    std::string session_;
    double tick_hz_;
    std::chrono::milliseconds reconnect_timeout_;
    std::uint64_t out_seq_ = 0;
    std::optional<long> awaiting_;
    const Frame* awaiting_frame_ = nullptr;
    std::optional<std::pair<long, Action>> stash_;
    bool pending_takeover_ = false;
};

}  // namespace

ServeOutcome serve_session(const RunConfig& config, Channel& channel, const ServeOptions& options) {
    if (config.method != Method::rnd && config.method != Method::hg) {
        throw std::invalid_argument("serve_session: method must be rnd or hg");
    }
    if (options.tick_hz < 0.0) throw std::invalid_argument("serve_session: tick_hz must be >= 0");
    validate(config);
    Recorder recorder(options);
    RemoteExpert expert(config, channel, recorder, options);
    ServeOutcome outcome;
    try {
        expert.send_start();
    } catch (const ChannelClosed&) {
        outcome.error = "console not connected";
        outcome.record = std::move(recorder.record);
        return outcome;
    }
    try {
        RunResult result = config.method == Method::hg ? run_hg_dagger(config, expert, &expert)
                                                       : run_rnd_dagger(config, expert, &expert);
        try {
            expert.send_end(result.metrics);
        } catch (const ChannelClosed&) {
            recorder.add("note", "", {{"type", "end_undelivered"}});
            recorder.add("out", "", {{"type", "session_control"}, {"action", "end"}, {"session", options.session_id},
                                     {"digest", config_digest(config)}, {"metrics", metrics_to_json(result.metrics)}});
        }
        outcome.result = std::move(result);
    } catch (const std::exception& e) {
        outcome.error = e.what();
        expert.send_abort(e.what());
    }
    outcome.record = std::move(recorder.record);
    return outcome;
}

// -- replay ------------------------------------------------------------------------------------

namespace {

struct Disconnect {
    std::string phase;
    bool reconnected = false;
    bool used = false;
};

class ReplayExpert final : public ExpertProvider {
public:
    ReplayExpert(const RunConfig& config, const SessionRecord& record) : config_(config) {
        std::optional<long> last_disconnect;
        for (const RecordEntry& e : record.entries) {
            const json& m = e.message;
            const std::string type = m.value("type", "");
            if (e.dir == "in" && type == "expert_action" && e.status == "accepted") {
                const long t = m.at("t").get<long>();
                actions_.insert_or_assign(t, action_from_json(config.env, m.at("action")));
            } else if (e.dir == "out" && (type == "takeover" || type == "handback") && m.contains("t")) {
                signals_[m.at("t").get<long>()] = type == "takeover" ? HumanSignal::takeover : HumanSignal::handback;
            } else if (e.dir == "note" && type == "disconnect") {
                last_disconnect = m.at("t").get<long>();
                disconnects_[*last_disconnect] = {m.value("phase", ""), false, false};
            } else if (e.dir == "note" && type == "reconnect" && last_disconnect) {
                disconnects_[*last_disconnect].reconnected = true;
            }
        }
    }

    ExpertKind kind() const override {
        return config_.method == Method::hg ? ExpertKind::human_gated : ExpertKind::remote_human;
    }

    Action act(const Frame& f) override {
        maybe_drop(f, "act");
        const auto it = actions_.find(f.t);
        if (it == actions_.end()) {
            throw IntegrityError("session record has no accepted expert_action for t=" + std::to_string(f.t));
        }
        return it->second;
    }

    void watch(const Frame& f) override { maybe_drop(f, "watch"); }

    std::optional<HumanSignal> poll(const Frame& f) override {
        maybe_drop(f, "poll");
        const auto it = signals_.find(f.t);
        if (it == signals_.end()) {
            if (f.controller == Controller::expert && !actions_.contains(f.t)) {
                throw IntegrityError("session record has neither an expert_action nor a handback for t=" +
                                     std::to_string(f.t));
            }
            return std::nullopt;
        }
        return it->second;
    }

    bool reconnect() override { return last_reconnected_; }

private:
    void maybe_drop(const Frame& f, const char* phase) {
        const auto it = disconnects_.find(f.t);
        if (it == disconnects_.end() || it->second.used || it->second.phase != phase) return;
        it->second.used = true;
        last_reconnected_ = it->second.reconnected;
        throw ExpertUnavailable("recorded disconnect at t=" + std::to_string(f.t));
    }

    RunConfig config_;
    std::map<long, Action> actions_;
    std::map<long, HumanSignal> signals_;
    std::map<long, Disconnect> disconnects_;
    bool last_reconnected_ = false;
};

}  // namespace

ReplayResult replay_session(const SessionRecord& record) {
    const json* start = nullptr;
    for (const RecordEntry& e : record.entries) {
        if (e.dir == "out" && e.message.value("type", "") == "session_control" &&
            e.message.value("action", "") == "start") {
            start = &e.message;
            break;
        }
    }
    if (start == nullptr) throw IntegrityError("session record has no start message");
    if (!record.complete()) throw IntegrityError("session record is truncated: no session end");
    ReplayResult out;
    out.config = parse_run_config(start->at("config").get<std::string>(), "session-record#config");
    if (config_digest(out.config) != start->value("digest", "")) {
        throw IntegrityError("session record: config digest mismatch");
    }
    ReplayExpert expert(out.config, record);
    out.result = out.config.method == Method::hg ? run_hg_dagger(out.config, expert)
                                                 : run_rnd_dagger(out.config, expert);
    const json& end = record.entries.back().message;
    if (end.contains("metrics") && end.at("metrics") != metrics_to_json(out.result.metrics)) {
        throw IntegrityError("replay diverged from the recorded session metrics");
    }
    return out;
}

// -- scripted console -------------------------------------------------------------------------

long run_scripted_console(Channel& channel, const ScriptedConsole& console) {
    EnvId env = EnvId::racetrack2d;
    long sent = 0;
    std::optional<long> answered;
    try {
        for (;;) {
            const auto m = channel.receive(std::chrono::milliseconds(100));
            if (!m) continue;
            if (console.on_message) console.on_message(*m);
            const std::string type = m->value("type", "");
            if (type == "session_control") {
                const std::string action = m->value("action", "");
                if (action == "start") env = parse_env_id(m->at("env").get<std::string>());
                if (action == "end" || action == "abort") return sent;
                continue;
            }
            if (type != "state_frame") continue;
            const long t = m->at("t").get<long>();
            if (console.signal) {
                if (const auto s = console.signal(*m)) {
                    channel.send({{"type", *s == HumanSignal::takeover ? "takeover" : "handback"}, {"t", t}});
                    if (*s == HumanSignal::handback && m->value("awaiting_action", false)) continue;
                }
            }
            if (!m->value("awaiting_action", false)) continue;
            // A rejection re-sends the pending frame; answer each t once.
            if (answered && *answered == t) continue;
            if (console.disconnect_after_actions && sent >= *console.disconnect_after_actions) {
                channel.close();
                return sent;
            }
            const Action a = console.act ? console.act(env, *m)
                                         : oracle_action(state_from_geometry(env, m->at("geometry")));
            channel.send({{"type", "expert_action"}, {"t", t}, {"action", action_to_json(a)}});
            answered = t;
            ++sent;
        }
    } catch (const ChannelClosed&) {
        return sent;
    }
}

}  // namespace daggerlab
