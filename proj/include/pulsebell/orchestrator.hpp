#pragma once

// Run-control plane: a coordinator commands the function generator and
// two station agents over an ordered reliable message transport. The
// frequency switch ordered mid-run is the step event both stations use
// for pulse numbering. Transports: in-process queues and length-prefixed
// frames over TCP sockets.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pulsebell/sim.hpp"
#include "pulsebell/timetag.hpp"

namespace pulsebell {

struct ControlMessage {
    enum class Type {
        SetFrequency,
        PrepareRun,
        Ready,
        BeginRecording,
        RunEnded,
        SaveFiles,
        Saved,
        Abort,
    };

    Type type = Type::Abort;
    std::int64_t hz = 0;      // SetFrequency
    std::string run_id;       // PrepareRun, SaveFiles, Saved
    std::string station;      // Ready, Saved
    std::string file_ref;     // Saved
    std::string reason;       // Abort

    bool operator==(const ControlMessage&) const = default;
};

const char* message_type_name(ControlMessage::Type t);

// Single-line text frame: "<type> key=value ...". Values are %-escaped
// so a frame never spans lines.
std::string encode_message(const ControlMessage& m);
ControlMessage decode_message(std::string_view frame);

// Ordered, reliable, bidirectional message channel.
class MsgEndpoint {
public:
    virtual ~MsgEndpoint() = default;
    virtual void send(const ControlMessage& m) = 0;
    // Blocks up to `timeout`; nullopt on timeout or peer close.
    virtual std::optional<ControlMessage> receive(std::chrono::milliseconds timeout) = 0;
    virtual bool closed() const = 0;
};

std::pair<std::unique_ptr<MsgEndpoint>, std::unique_ptr<MsgEndpoint>> make_inproc_pair();

// TCP with a 4-byte big-endian length prefix per frame.
class SocketListener {
public:
    explicit SocketListener(const std::string& addr);  // "host:port", port 0 = ephemeral
    ~SocketListener();
    std::string local_addr() const;
    std::unique_ptr<MsgEndpoint> accept_one(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
};

std::unique_ptr<MsgEndpoint> connect_endpoint(const std::string& addr,
                                              std::chrono::milliseconds timeout);

struct RunScript {
    SimConfig sim;  // physics and clock parameters; n_pre/n_run are derived from the timeline
    double duration_s = 10.0;
    double ready_timeout_s = 5.0;
    double saved_timeout_s = 10.0;
    double station_delay_max_ms = 10.0;  // activation delay after PrepareRun
};

RunScript read_run_script(const KeyValueConfig& kv);
RunScript read_run_script_file(const std::string& path);

// The shared bench the generator and both stations act on. Virtual time
// advances only through coordinator actions, so a run is deterministic
// for a given seed regardless of transport or thread scheduling.
class SimulatedLab {
public:
    SimulatedLab(const RunScript& script, std::uint64_t seed);

    void set_frequency(std::int64_t hz);  // generator action, timestamped at virtual now
    // Blocks until the generator has applied `count` frequency commands;
    // the coordinator must not advance virtual time across an un-applied
    // command or the step timestamp would depend on thread scheduling.
    bool await_frequency_count(std::size_t count, std::chrono::milliseconds timeout);
    void advance(double seconds);         // coordinator action
    void start_capture(Station s);        // at virtual now + the station's activation delay
    bool capture_started(Station s) const;
    double station_delay_s(Station s) const;

    // Generates the timeline on first use and slices this station's
    // recording. Safe to call once per station.
    TagStream capture(Station s);
    // Capture up to virtual now, for aborted runs (pre-only timeline when
    // the run switch never happened).
    TagStream capture_partial(Station s);

    const GroundTruth& truth() const { return truth_; }

private:
    void generate_locked(bool partial);

    mutable std::mutex mu_;
    std::condition_variable freq_cv_;
    RunScript script_;
    std::uint64_t seed_;
    double now_s_ = 0.0;
    std::vector<std::pair<double, std::int64_t>> freq_events_;
    double capture_start_s_[2] = {-1.0, -1.0};
    double delay_s_[2] = {0.0, 0.0};
    bool generated_ = false;
    SimResult result_;
    GroundTruth truth_;
};

// Station state machine. Tag capture runs from PrepareRun until the
// file is saved; BeginRecording/RunEnded bracket the run segment.
enum class AgentState { Idle, Preparing, Recording, Saving };

const char* agent_state_name(AgentState s);

struct StationAgentState {
    AgentState state = AgentState::Idle;
    std::string run_id;
};

struct AgentStepResult {
    StationAgentState next;
    std::vector<ControlMessage> replies;
    bool start_capture = false;
    bool save_file = false;     // close and name the capture, then report Saved
    bool close_partial = false; // abort: keep what was recorded, flagged as partial
};

AgentStepResult station_agent_step(const StationAgentState& st, Station station,
                                   const ControlMessage& msg);

// Drives the state machine against a lab and an endpoint until the file
// is saved, an abort arrives, or the peer disappears.
void run_station_agent(Station station, SimulatedLab& lab, MsgEndpoint& ep,
                       const std::string& out_dir);

// Applies SetFrequency commands to the lab until the peer disappears.
void run_generator_agent(SimulatedLab& lab, MsgEndpoint& ep);

struct RunOutcome {
    bool ok = false;
    std::string abort_reason;
    std::string missing_party;              // station that failed to answer
    std::vector<ControlMessage> sent;       // coordinator's outgoing trace
    std::string file_a;
    std::string file_b;
};

RunOutcome coordinator_run(const RunScript& script, SimulatedLab& lab, MsgEndpoint& generator,
                           MsgEndpoint& station_a, MsgEndpoint& station_b);

enum class TransportKind { Inproc, Socket };

// Full in-process orchestration (agents on threads); with the socket
// transport the control plane runs over loopback TCP.
RunOutcome orchestrate(const RunScript& script, std::uint64_t seed, TransportKind transport,
                       const std::string& out_dir, const std::string& listen_addr = "127.0.0.1:0");

}  // namespace pulsebell
