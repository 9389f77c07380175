#pragma once

// Live sessions with a remote human expert.
//
// The server streams `state_frame`s and gate status to one console and takes
// `expert_action` / `takeover` / `handback` messages back. While the expert is
// in control the environment only advances on an expert_action whose `t`
// matches the last frame (lock-step). Every message in either direction is
// appended to a SessionRecord, which replays to the same dataset and metrics.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "daggerlab/orchestrator.hpp"

namespace daggerlab {

class ChannelClosed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bidirectional message pipe to one console.
class Channel {
public:
    virtual ~Channel() = default;
    /// Throws ChannelClosed when the peer is gone.
    virtual void send(const nlohmann::json& message) = 0;
    /// Next message, or nullopt on timeout. Throws ChannelClosed once the peer
    /// is gone and nothing is left to read.
    virtual std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout) = 0;
    /// After ChannelClosed: wait for a new console. False if none arrives.
    virtual bool await_reconnect(std::chrono::milliseconds /*timeout*/) { return false; }
    virtual void close() = 0;
};

/// Two connected in-process endpoints.
std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> make_channel_pair();

// -- messages ----------------------------------------------------------------------

/// FNV-1a digest of the serialized config, as 16 hex digits.
std::string config_digest(const RunConfig& config);

/// Pose plus static scene description (walls, goal, corridor) for rendering.
nlohmann::json geometry_summary(const EnvState& state);

/// Rebuilds the physical state from a frame's geometry summary (enough for the
/// scripted oracle; step counters are not restored).
EnvState state_from_geometry(EnvId env, const nlohmann::json& geometry);

nlohmann::json action_to_json(const Action& action);
Action action_from_json(EnvId env, const nlohmann::json& j);

// -- records -------------------------------------------------------------------------

class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One logged message. `dir` is "out" (server to console), "in", or "note"
/// for server-side events (disconnects, discarded episodes). Incoming
/// expert_action messages carry status "accepted" or "rejected".
struct RecordEntry {
    std::uint64_t seq = 0;
    double wall_time = 0.0;  ///< seconds since the Unix epoch
    std::string dir;
    std::string status;
    nlohmann::json message;

    bool operator==(const RecordEntry&) const = default;
};

struct SessionRecord {
    std::string session_id;
    std::vector<RecordEntry> entries;

    /// Ends with session_control "end".
    bool complete() const;
    bool operator==(const SessionRecord&) const = default;
};

nlohmann::json entry_to_json(const RecordEntry& entry);
RecordEntry entry_from_json(const nlohmann::json& j);

void save_session_record(const std::filesystem::path& path, const SessionRecord& record);
/// Throws IntegrityError on a malformed or cut-off line.
SessionRecord load_session_record(const std::filesystem::path& path);
SessionRecord parse_session_record(std::string_view jsonl);
std::string session_record_jsonl(const SessionRecord& record);

// -- serving ---------------------------------------------------------------------------

struct ServeOptions {
    double tick_hz = 10.0;  ///< autonomous frame rate; 0 streams as fast as possible
    std::string session_id = "session";
    std::chrono::milliseconds reconnect_timeout{0};
    /// Appends every entry to this JSONL file as it happens, when set.
    std::filesystem::path record_path;
};

struct ServeOutcome {
    SessionRecord record;
    std::optional<RunResult> result;  ///< empty when the session aborted
    std::string error;
};

/// Runs one rnd or hg session against the console on `channel`. The seed set
/// is still collected from the scripted oracle.
ServeOutcome serve_session(const RunConfig& config, Channel& channel, const ServeOptions& options = {});

struct ReplayResult {
    RunConfig config;
    RunResult result;
};

/// Re-drives the recorded session through the loop. Throws IntegrityError if
/// the record is incomplete, its config digest does not match, or an expert
/// decision the loop needs is missing.
ReplayResult replay_session(const SessionRecord& record);

// -- scripted consoles (tests and headless runs) ------------------------------------

struct ScriptedConsole {
    /// Action for a frame awaiting the expert. Default: the scripted oracle.
    std::function<Action(EnvId, const nlohmann::json& frame)> act;
    /// hg mode: optional takeover/handback for a streamed frame.
    std::function<std::optional<HumanSignal>(const nlohmann::json& frame)> signal;
    /// Called on every received message before it is handled.
    std::function<void(const nlohmann::json&)> on_message;
    /// Stop answering (simulating a dropped console) after this many actions.
    std::optional<long> disconnect_after_actions;
};

/// Consumes messages until session end/abort or channel closure. Returns the
/// number of expert actions sent.
long run_scripted_console(Channel& channel, const ScriptedConsole& console = {});

}  // namespace daggerlab
