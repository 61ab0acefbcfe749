#include "pulsebell/orchestrator.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <filesystem>
#include <sstream>
#include <thread>

#include "pulsebell/log.hpp"
#include "pulsebell/rng.hpp"

namespace pulsebell {

namespace {

constexpr std::uint64_t kStreamLabDelays = 100;

const char* kTypeNames[] = {"set_frequency", "prepare_run", "ready",      "begin_recording",
                            "run_ended",     "save_files",  "saved",      "abort"};

std::string escape_value(std::string_view v) {
    std::string out;
    out.reserve(v.size());
    for (char c : v) {
        switch (c) {
            case '%': out += "%25"; break;
            case ' ': out += "%20"; break;
            case '\n': out += "%0A"; break;
            case '=': out += "%3D"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_value(std::string_view v) {
    std::string out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == '%' && i + 2 < v.size()) {
            const auto hex = [](char c) -> int {
                if (c >= '0' && c <= '9') return c - '0';
                if (c >= 'A' && c <= 'F') return c - 'A' + 10;
                if (c >= 'a' && c <= 'f') return c - 'a' + 10;
                return -1;
            };
            const int hi = hex(v[i + 1]), lo = hex(v[i + 2]);
            if (hi >= 0 && lo >= 0) {
                out += static_cast<char>(hi * 16 + lo);
                i += 2;
                continue;
            }
        }
        out += v[i];
    }
    return out;
}

}  // namespace

const char* message_type_name(ControlMessage::Type t) {
    return kTypeNames[static_cast<std::size_t>(t)];
}

std::string encode_message(const ControlMessage& m) {
    std::ostringstream os;
    os << message_type_name(m.type);
    switch (m.type) {
        case ControlMessage::Type::SetFrequency:
            os << " hz=" << m.hz;
            break;
        case ControlMessage::Type::PrepareRun:
        case ControlMessage::Type::SaveFiles:
            os << " run=" << escape_value(m.run_id);
            break;
        case ControlMessage::Type::Ready:
            os << " station=" << escape_value(m.station);
            break;
        case ControlMessage::Type::Saved:
            os << " station=" << escape_value(m.station) << " run=" << escape_value(m.run_id)
               << " file=" << escape_value(m.file_ref);
            break;
        case ControlMessage::Type::Abort:
            os << " reason=" << escape_value(m.reason);
            break;
        case ControlMessage::Type::BeginRecording:
        case ControlMessage::Type::RunEnded:
            break;
    }
    return os.str();
}

ControlMessage decode_message(std::string_view frame) {
    std::size_t sp = frame.find(' ');
    const std::string_view type_name = frame.substr(0, sp);
    ControlMessage m;
    bool found = false;
    for (std::size_t i = 0; i < std::size(kTypeNames); ++i) {
        if (type_name == kTypeNames[i]) {
            m.type = static_cast<ControlMessage::Type>(i);
            found = true;
            break;
        }
    }
    if (!found) throw std::runtime_error("unknown message type '" + std::string(type_name) + "'");

    std::string_view rest = sp == std::string_view::npos ? std::string_view{} : frame.substr(sp + 1);
    while (!rest.empty()) {
        const std::size_t end = rest.find(' ');
        const std::string_view field = rest.substr(0, end);
        rest = end == std::string_view::npos ? std::string_view{} : rest.substr(end + 1);
        if (field.empty()) continue;
        const std::size_t eq = field.find('=');
        if (eq == std::string_view::npos)
            throw std::runtime_error("malformed field '" + std::string(field) + "'");
        const std::string_view key = field.substr(0, eq);
        const std::string value = unescape_value(field.substr(eq + 1));
        if (key == "hz")
            m.hz = std::stoll(value);
        else if (key == "run")
            m.run_id = value;
        else if (key == "station")
            m.station = value;
        else if (key == "file")
            m.file_ref = value;
        else if (key == "reason")
            m.reason = value;
        else
            throw std::runtime_error("unknown field '" + std::string(key) + "'");
    }
    return m;
}

// ---------------------------------------------------------------------------
// in-process transport

namespace {

struct InprocShared {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<ControlMessage> to_first;
    std::deque<ControlMessage> to_second;
    bool first_alive = true;
    bool second_alive = true;
};

class InprocEndpoint : public MsgEndpoint {
public:
    InprocEndpoint(std::shared_ptr<InprocShared> shared, bool is_first)
        : shared_(std::move(shared)), is_first_(is_first) {}

    ~InprocEndpoint() override {
        std::lock_guard<std::mutex> lock(shared_->mu);
        (is_first_ ? shared_->first_alive : shared_->second_alive) = false;
        shared_->cv.notify_all();
    }

    void send(const ControlMessage& m) override {
        std::lock_guard<std::mutex> lock(shared_->mu);
        (is_first_ ? shared_->to_second : shared_->to_first).push_back(m);
        shared_->cv.notify_all();
    }

    std::optional<ControlMessage> receive(std::chrono::milliseconds timeout) override {
        std::unique_lock<std::mutex> lock(shared_->mu);
        auto& queue = is_first_ ? shared_->to_first : shared_->to_second;
        shared_->cv.wait_for(lock, timeout, [&] {
            return !queue.empty() || !(is_first_ ? shared_->second_alive : shared_->first_alive);
        });
        if (queue.empty()) return std::nullopt;
        ControlMessage m = queue.front();
        queue.pop_front();
        return m;
    }

    bool closed() const override {
        std::lock_guard<std::mutex> lock(shared_->mu);
        const bool peer_alive = is_first_ ? shared_->second_alive : shared_->first_alive;
        const auto& queue = is_first_ ? shared_->to_first : shared_->to_second;
        return !peer_alive && queue.empty();
    }

private:
    std::shared_ptr<InprocShared> shared_;
    bool is_first_;
};

}  // namespace

std::pair<std::unique_ptr<MsgEndpoint>, std::unique_ptr<MsgEndpoint>> make_inproc_pair() {
    auto shared = std::make_shared<InprocShared>();
    return {std::make_unique<InprocEndpoint>(shared, true),
            std::make_unique<InprocEndpoint>(shared, false)};
}

// ---------------------------------------------------------------------------
// socket transport

namespace {

struct AddrParts {
    std::string host;
    std::uint16_t port;
};

AddrParts parse_addr(const std::string& addr) {
    const std::size_t colon = addr.rfind(':');
    if (colon == std::string::npos)
        throw std::runtime_error("address '" + addr + "' must be host:port");
    AddrParts p;
    p.host = addr.substr(0, colon);
    p.port = static_cast<std::uint16_t>(std::stoi(addr.substr(colon + 1)));
    return p;
}

class SocketEndpoint : public MsgEndpoint {
public:
    explicit SocketEndpoint(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }

    ~SocketEndpoint() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send(const ControlMessage& m) override {
        const std::string frame = encode_message(m);
        std::string wire(4, '\0');
        const auto len = static_cast<std::uint32_t>(frame.size());
        wire[0] = static_cast<char>(len >> 24);
        wire[1] = static_cast<char>(len >> 16);
        wire[2] = static_cast<char>(len >> 8);
        wire[3] = static_cast<char>(len);
        wire += frame;
        std::size_t sent = 0;
        while (sent < wire.size()) {
            const ssize_t n = ::send(fd_, wire.data() + sent, wire.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) {
                closed_ = true;
                throw std::runtime_error("socket send failed");
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::optional<ControlMessage> receive(std::chrono::milliseconds timeout) override {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        std::uint8_t header[4];
        if (!read_exact(header, 4, deadline)) return std::nullopt;
        const std::uint32_t len = (static_cast<std::uint32_t>(header[0]) << 24) |
                                  (static_cast<std::uint32_t>(header[1]) << 16) |
                                  (static_cast<std::uint32_t>(header[2]) << 8) |
                                  static_cast<std::uint32_t>(header[3]);
        if (len > 1 << 20) {
            closed_ = true;
            return std::nullopt;
        }
        std::string frame(len, '\0');
        if (!read_exact(frame.data(), len, deadline)) return std::nullopt;
        return decode_message(frame);
    }

    bool closed() const override { return closed_; }

private:
    bool read_exact(void* buf, std::size_t want, std::chrono::steady_clock::time_point deadline) {
        std::size_t got = 0;
        auto* out = static_cast<char*>(buf);
        while (got < want) {
            const auto now = std::chrono::steady_clock::now();
            if (now >= deadline) return false;
            struct pollfd pfd {
                fd_, POLLIN, 0
            };
            const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
            const int pr = ::poll(&pfd, 1, static_cast<int>(std::max<std::int64_t>(1, wait_ms.count())));
            if (pr < 0) {
                closed_ = true;
                return false;
            }
            if (pr == 0) continue;
            const ssize_t n = ::recv(fd_, out + got, want - got, 0);
            if (n <= 0) {
                closed_ = true;
                return false;
            }
            got += static_cast<std::size_t>(n);
        }
        return true;
    }

    int fd_;
    bool closed_ = false;
};

}  // namespace

SocketListener::SocketListener(const std::string& addr) {
    const AddrParts parts = parse_addr(addr);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(parts.port);
    if (::inet_pton(AF_INET, parts.host.c_str(), &sa.sin_addr) != 1) {
        ::close(fd_);
        throw std::runtime_error("bad listen address '" + addr + "'");
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
        ::close(fd_);
        throw std::runtime_error("bind to '" + addr + "' failed");
    }
    if (::listen(fd_, 8) != 0) {
        ::close(fd_);
        throw std::runtime_error("listen on '" + addr + "' failed");
    }
}

SocketListener::~SocketListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::string SocketListener::local_addr() const {
    sockaddr_in sa{};
    socklen_t len = sizeof(sa);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0)
        throw std::runtime_error("getsockname failed");
    char host[INET_ADDRSTRLEN];
    ::inet_ntop(AF_INET, &sa.sin_addr, host, sizeof(host));
    return std::string(host) + ":" + std::to_string(ntohs(sa.sin_port));
}

std::unique_ptr<MsgEndpoint> SocketListener::accept_one(std::chrono::milliseconds timeout) {
    struct pollfd pfd {
        fd_, POLLIN, 0
    };
    const int pr = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (pr <= 0) throw std::runtime_error("timed out waiting for a connection");
    const int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) throw std::runtime_error("accept failed");
    return std::make_unique<SocketEndpoint>(cfd);
}

std::unique_ptr<MsgEndpoint> connect_endpoint(const std::string& addr,
                                              std::chrono::milliseconds timeout) {
    const AddrParts parts = parse_addr(addr);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw std::runtime_error("socket() failed");
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_port = htons(parts.port);
        if (::inet_pton(AF_INET, parts.host.c_str(), &sa.sin_addr) != 1) {
            ::close(fd);
            throw std::runtime_error("bad address '" + addr + "'");
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0)
            return std::make_unique<SocketEndpoint>(fd);
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline)
            throw std::runtime_error("connect to '" + addr + "' timed out");
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
}

// ---------------------------------------------------------------------------
// run script

RunScript read_run_script(const KeyValueConfig& kv) {
    static const std::set<std::string> control_keys = {"duration_s", "ready_timeout_s",
                                                       "saved_timeout_s", "station_delay_max_ms"};
    RunScript script;
    script.sim = read_sim_config(kv, control_keys);
    script.duration_s = kv.get_double("duration_s", script.duration_s);
    script.ready_timeout_s = kv.get_double("ready_timeout_s", script.ready_timeout_s);
    script.saved_timeout_s = kv.get_double("saved_timeout_s", script.saved_timeout_s);
    script.station_delay_max_ms = kv.get_double("station_delay_max_ms", script.station_delay_max_ms);
    if (script.duration_s <= 0.0) throw std::runtime_error("duration_s must be positive");
    if (script.ready_timeout_s <= 0.0 || script.saved_timeout_s <= 0.0)
        throw std::runtime_error("timeouts must be positive");
    return script;
}

RunScript read_run_script_file(const std::string& path) {
    return read_run_script(KeyValueConfig::from_file(path));
}

// ---------------------------------------------------------------------------
// simulated lab

SimulatedLab::SimulatedLab(const RunScript& script, std::uint64_t seed)
    : script_(script), seed_(seed) {
    auto rng = substream(seed, kStreamLabDelays);
    std::uniform_real_distribution<double> uni(0.0, script.station_delay_max_ms / 1000.0);
    delay_s_[0] = uni(rng);
    delay_s_[1] = uni(rng);
}

void SimulatedLab::set_frequency(std::int64_t hz) {
    std::lock_guard<std::mutex> lock(mu_);
    freq_events_.emplace_back(now_s_, hz);
    freq_cv_.notify_all();
}

bool SimulatedLab::await_frequency_count(std::size_t count, std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lock(mu_);
    return freq_cv_.wait_for(lock, timeout, [&] { return freq_events_.size() >= count; });
}

void SimulatedLab::advance(double seconds) {
    std::lock_guard<std::mutex> lock(mu_);
    now_s_ += seconds;
}

void SimulatedLab::start_capture(Station s) {
    std::lock_guard<std::mutex> lock(mu_);
    capture_start_s_[static_cast<int>(s)] = now_s_ + delay_s_[static_cast<int>(s)];
}

double SimulatedLab::station_delay_s(Station s) const {
    std::lock_guard<std::mutex> lock(mu_);
    return delay_s_[static_cast<int>(s)];
}

void SimulatedLab::generate_locked(bool partial) {
    if (generated_) return;

    // locate the run-frequency window commanded by the coordinator
    double step_s = -1.0, end_s = -1.0;
    for (const auto& [t, hz] : freq_events_) {
        if (hz == script_.sim.plan.freq_run_hz && step_s < 0.0) step_s = t;
        if (hz == script_.sim.plan.freq_pre_hz && step_s >= 0.0 && end_s < 0.0 && t > step_s)
            end_s = t;
    }

    const TimePs pre_period = script_.sim.plan.pre_period_ps();
    SimConfig cfg = script_.sim;
    // a station whose capture never started records from t=0; its slice
    // is only ever read on this run's abort path
    auto start_ps = [](double s) {
        return s < 0.0 ? TimePs{0}
                       : static_cast<TimePs>(std::llround(s * static_cast<double>(kPsPerSecond)));
    };
    cfg.clock_a.start_offset_ps = start_ps(capture_start_s_[0]);
    cfg.clock_b.start_offset_ps = start_ps(capture_start_s_[1]);

    std::vector<TimePs> train;
    std::int64_t step_index = 0;
    if (step_s < 0.0) {
        if (!partial)
            throw std::runtime_error("run never reached the frequency step");
        // Aborted before the switch: a pre-frequency timeline. Waiting on
        // messages does not advance the virtual clock, so extend past the
        // latest capture start to cover what the stations recorded.
        const double end_s =
            std::max({now_s_, capture_start_s_[0], capture_start_s_[1]}) + 0.05;
        const auto n = static_cast<std::int64_t>(std::ceil(
                           end_s * static_cast<double>(kPsPerSecond) /
                           static_cast<double>(pre_period))) +
                       1;
        for (std::int64_t i = 0; i < n; ++i) train.push_back(i * pre_period);
        // no step: number pulses are all "pre"; mark step at the end so
        // ground truth stays well-defined
        step_index = n - 1;
    } else {
        const TimePs step_ps = static_cast<TimePs>(std::llround(step_s * static_cast<double>(kPsPerSecond)));
        const std::int64_t n_pre = (step_ps + pre_period - 1) / pre_period;
        const double run_span_s = (end_s < 0.0 ? now_s_ : end_s) - step_s;
        const auto n_run = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::floor(run_span_s * static_cast<double>(script_.sim.plan.freq_run_hz))));
        train = trigger_train(script_.sim.plan, n_pre, n_run);
        step_index = n_pre;
        // pre-frequency tail after the back-switch, until past the save point
        const double tail_s = std::max(0.0, now_s_ - (end_s < 0.0 ? now_s_ : end_s)) + 0.005;
        const auto n_tail = static_cast<std::int64_t>(
            std::ceil(tail_s * static_cast<double>(script_.sim.plan.freq_pre_hz))) + 1;
        TimePs t = train.back();
        for (std::int64_t i = 0; i < n_tail; ++i) {
            t += pre_period;
            train.push_back(t);
        }
    }

    result_ = simulate_with_train(train, step_index, cfg, seed_);
    truth_ = std::move(result_.truth);
    generated_ = true;
}

TagStream SimulatedLab::capture(Station s) {
    std::lock_guard<std::mutex> lock(mu_);
    if (capture_start_s_[static_cast<int>(s)] < 0.0)
        throw std::runtime_error("capture was never started for this station");
    generate_locked(false);
    return s == Station::A ? result_.a : result_.b;
}

TagStream SimulatedLab::capture_partial(Station s) {
    std::lock_guard<std::mutex> lock(mu_);
    if (capture_start_s_[static_cast<int>(s)] < 0.0)
        throw std::runtime_error("capture was never started for this station");
    generate_locked(true);
    return s == Station::A ? result_.a : result_.b;
}

bool SimulatedLab::capture_started(Station s) const {
    std::lock_guard<std::mutex> lock(mu_);
    return capture_start_s_[static_cast<int>(s)] >= 0.0;
}

// ---------------------------------------------------------------------------
// station agent

const char* agent_state_name(AgentState s) {
    switch (s) {
        case AgentState::Idle: return "idle";
        case AgentState::Preparing: return "preparing";
        case AgentState::Recording: return "recording";
        case AgentState::Saving: return "saving";
    }
    return "?";
}

AgentStepResult station_agent_step(const StationAgentState& st, Station station,
                                   const ControlMessage& msg) {
    AgentStepResult r;
    r.next = st;

    auto violation = [&](const char* what) {
        ControlMessage reply;
        reply.type = ControlMessage::Type::Abort;
        reply.reason = std::string("protocol-violation: ") + what + " in state " +
                       agent_state_name(st.state);
        r.replies.push_back(reply);
    };

    switch (msg.type) {
        case ControlMessage::Type::PrepareRun: {
            if (st.state != AgentState::Idle) {
                violation("prepare_run");
                return r;
            }
            r.next.state = AgentState::Preparing;
            r.next.run_id = msg.run_id;
            r.start_capture = true;
            ControlMessage ready;
            ready.type = ControlMessage::Type::Ready;
            ready.station = std::string(1, station_code(station));
            r.replies.push_back(ready);
            return r;
        }
        case ControlMessage::Type::BeginRecording:
            if (st.state != AgentState::Preparing) {
                violation("begin_recording");
                return r;
            }
            r.next.state = AgentState::Recording;
            return r;
        case ControlMessage::Type::RunEnded:
            if (st.state != AgentState::Recording) {
                violation("run_ended");
                return r;
            }
            return r;
        case ControlMessage::Type::SaveFiles: {
            if (st.state != AgentState::Recording) {
                violation("save_files");
                return r;
            }
            if (msg.run_id != st.run_id) {
                violation("save_files with mismatched run id");
                return r;
            }
            r.next.state = AgentState::Saving;
            r.save_file = true;
            return r;
        }
        case ControlMessage::Type::Abort:
            if (st.state != AgentState::Idle) r.close_partial = true;
            r.next.state = AgentState::Idle;
            r.next.run_id.clear();
            return r;
        case ControlMessage::Type::SetFrequency:
        case ControlMessage::Type::Ready:
        case ControlMessage::Type::Saved:
            violation(message_type_name(msg.type));
            return r;
    }
    return r;
}

void run_station_agent(Station station, SimulatedLab& lab, MsgEndpoint& ep,
                       const std::string& out_dir) {
    StationAgentState st;
    const std::string code(1, station_code(station));
    while (true) {
        auto msg = ep.receive(std::chrono::milliseconds(200));
        if (!msg) {
            if (ep.closed()) return;
            continue;
        }
        AgentStepResult r = station_agent_step(st, station, *msg);
        if (r.start_capture) lab.start_capture(station);
        if (r.save_file) {
            TagStream stream = lab.capture(station);
            stream.run_id = st.run_id;
            const std::string path = out_dir + "/" + st.run_id + "_" + code + ".tags";
            write_tag_file_to(stream, path);
            ControlMessage saved;
            saved.type = ControlMessage::Type::Saved;
            saved.station = code;
            saved.run_id = st.run_id;
            saved.file_ref = path;
            r.replies.push_back(saved);
            r.next.state = AgentState::Idle;
            for (const ControlMessage& reply : r.replies) ep.send(reply);
            return;  // run complete
        }
        if (r.close_partial) {
            if (lab.capture_started(station)) {
                TagStream stream = lab.capture_partial(station);
                stream.run_id = st.run_id.empty() ? "aborted" : st.run_id;
                const std::string path =
                    out_dir + "/" + stream.run_id + "_" + code + ".tags.partial";
                write_tag_file_to(stream, path);
                log_info("station %s closed partial file %s", code.c_str(), path.c_str());
            }
            for (const ControlMessage& reply : r.replies) ep.send(reply);
            return;  // aborted
        }
        for (const ControlMessage& reply : r.replies) ep.send(reply);
        st = r.next;
    }
}

void run_generator_agent(SimulatedLab& lab, MsgEndpoint& ep) {
    while (true) {
        auto msg = ep.receive(std::chrono::milliseconds(200));
        if (!msg) {
            if (ep.closed()) return;
            continue;
        }
        if (msg->type == ControlMessage::Type::SetFrequency)
            lab.set_frequency(msg->hz);
        else if (msg->type == ControlMessage::Type::Abort)
            return;
    }
}

// ---------------------------------------------------------------------------
// coordinator

namespace {

struct Party {
    const char* name;
    MsgEndpoint* ep;
};

}  // namespace

RunOutcome coordinator_run(const RunScript& script, SimulatedLab& lab, MsgEndpoint& generator,
                           MsgEndpoint& station_a, MsgEndpoint& station_b) {
    RunOutcome outcome;
    const std::string& run_id = script.sim.run_id;

    auto send_all = [&](const ControlMessage& m) {
        generator.send(m);
        station_a.send(m);
        station_b.send(m);
        outcome.sent.push_back(m);
    };
    auto send_to = [&](MsgEndpoint& ep, const ControlMessage& m) {
        ep.send(m);
        outcome.sent.push_back(m);
    };
    auto abort_all = [&](const std::string& reason, const std::string& missing) {
        ControlMessage abort;
        abort.type = ControlMessage::Type::Abort;
        abort.reason = reason;
        send_all(abort);
        outcome.ok = false;
        outcome.abort_reason = reason;
        outcome.missing_party = missing;
        log_error("run %s aborted: %s", run_id.c_str(), reason.c_str());
    };

    const auto gen_timeout =
        std::chrono::milliseconds(static_cast<std::int64_t>(script.ready_timeout_s * 1000));
    auto set_frequency_and_sync = [&](std::int64_t hz, std::size_t count) {
        ControlMessage m;
        m.type = ControlMessage::Type::SetFrequency;
        m.hz = hz;
        send_to(generator, m);
        return lab.await_frequency_count(count, gen_timeout);
    };

    if (!set_frequency_and_sync(script.sim.plan.freq_pre_hz, 1)) {
        abort_all("timeout waiting for the generator to apply SetFrequency", "generator");
        return outcome;
    }
    lab.advance(0.001);

    ControlMessage prep;
    prep.type = ControlMessage::Type::PrepareRun;
    prep.run_id = run_id;
    send_to(station_a, prep);
    send_to(station_b, prep);

    // Ready barrier: the step must occur while both stations record
    const auto ready_deadline =
        std::chrono::steady_clock::now() +
        std::chrono::milliseconds(static_cast<std::int64_t>(script.ready_timeout_s * 1000));
    bool ready_a = false, ready_b = false;
    for (Party p : {Party{"A", &station_a}, Party{"B", &station_b}}) {
        bool& flag = p.name[0] == 'A' ? ready_a : ready_b;
        while (!flag) {
            const auto now = std::chrono::steady_clock::now();
            if (now >= ready_deadline) break;
            auto msg = p.ep->receive(std::chrono::duration_cast<std::chrono::milliseconds>(
                ready_deadline - now));
            if (!msg) break;
            if (msg->type == ControlMessage::Type::Ready && msg->station == p.name) flag = true;
        }
        if (!flag) {
            abort_all("timeout waiting for Ready from station " + std::string(p.name), p.name);
            return outcome;
        }
    }

    // both stations are capturing; give their activation delays room,
    // then fire the step
    lab.advance(script.station_delay_max_ms / 1000.0 + 0.05);
    if (!set_frequency_and_sync(script.sim.plan.freq_run_hz, 2)) {
        abort_all("timeout waiting for the generator to apply SetFrequency", "generator");
        return outcome;
    }

    ControlMessage begin;
    begin.type = ControlMessage::Type::BeginRecording;
    send_to(station_a, begin);
    send_to(station_b, begin);

    lab.advance(script.duration_s);
    if (!set_frequency_and_sync(script.sim.plan.freq_pre_hz, 3)) {
        abort_all("timeout waiting for the generator to apply SetFrequency", "generator");
        return outcome;
    }

    ControlMessage ended;
    ended.type = ControlMessage::Type::RunEnded;
    send_to(station_a, ended);
    send_to(station_b, ended);
    lab.advance(0.002);

    ControlMessage save;
    save.type = ControlMessage::Type::SaveFiles;
    save.run_id = run_id;
    send_to(station_a, save);
    send_to(station_b, save);

    const auto saved_deadline =
        std::chrono::steady_clock::now() +
        std::chrono::milliseconds(static_cast<std::int64_t>(script.saved_timeout_s * 1000));
    for (Party p : {Party{"A", &station_a}, Party{"B", &station_b}}) {
        std::optional<ControlMessage> saved;
        while (!saved) {
            const auto now = std::chrono::steady_clock::now();
            if (now >= saved_deadline) break;
            auto msg = p.ep->receive(
                std::chrono::duration_cast<std::chrono::milliseconds>(saved_deadline - now));
            if (!msg) break;
            if (msg->type == ControlMessage::Type::Saved) saved = msg;
        }
        if (!saved) {
            abort_all("timeout waiting for Saved from station " + std::string(p.name), p.name);
            return outcome;
        }
        if (saved->run_id != run_id || saved->station != p.name) {
            abort_all("protocol violation: Saved carries run '" + saved->run_id + "' station '" +
                          saved->station + "'",
                      p.name);
            return outcome;
        }
        (p.name[0] == 'A' ? outcome.file_a : outcome.file_b) = saved->file_ref;
    }

    outcome.ok = true;
    return outcome;
}

RunOutcome orchestrate(const RunScript& script, std::uint64_t seed, TransportKind transport,
                       const std::string& out_dir, const std::string& listen_addr) {
    std::filesystem::create_directories(out_dir);
    SimulatedLab lab(script, seed);

    if (transport == TransportKind::Inproc) {
        auto [gen_coord, gen_agent] = make_inproc_pair();
        auto [a_coord, a_agent] = make_inproc_pair();
        auto [b_coord, b_agent] = make_inproc_pair();
        std::thread gen([&lab, ep = std::move(gen_agent)]() mutable { run_generator_agent(lab, *ep); });
        std::thread ta([&lab, &out_dir, ep = std::move(a_agent)]() mutable {
            run_station_agent(Station::A, lab, *ep, out_dir);
        });
        std::thread tb([&lab, &out_dir, ep = std::move(b_agent)]() mutable {
            run_station_agent(Station::B, lab, *ep, out_dir);
        });
        RunOutcome outcome = coordinator_run(script, lab, *gen_coord, *a_coord, *b_coord);
        gen_coord.reset();
        a_coord.reset();
        b_coord.reset();
        gen.join();
        ta.join();
        tb.join();
        return outcome;
    }

    SocketListener listener(listen_addr);
    const std::string addr = listener.local_addr();
    log_info("orchestrator listening on %s", addr.c_str());

    // Each agent identifies itself with a hello frame (Ready with its
    // role) right after connecting, since connection order is arbitrary.
    auto connect_as = [&addr](const char* role) {
        auto ep = connect_endpoint(addr, std::chrono::seconds(5));
        ControlMessage hello;
        hello.type = ControlMessage::Type::Ready;
        hello.station = role;
        ep->send(hello);
        return ep;
    };
    std::thread gen([&lab, &connect_as]() {
        auto ep = connect_as("G");
        run_generator_agent(lab, *ep);
    });
    std::thread ta([&lab, &connect_as, &out_dir]() {
        auto ep = connect_as("A");
        run_station_agent(Station::A, lab, *ep, out_dir);
    });
    std::thread tb([&lab, &connect_as, &out_dir]() {
        auto ep = connect_as("B");
        run_station_agent(Station::B, lab, *ep, out_dir);
    });

    RunOutcome outcome;
    try {
        std::unique_ptr<MsgEndpoint> gen_ep, a_ep, b_ep;
        for (int i = 0; i < 3; ++i) {
            auto ep = listener.accept_one(std::chrono::seconds(5));
            auto hello = ep->receive(std::chrono::seconds(5));
            if (!hello || hello->type != ControlMessage::Type::Ready)
                throw std::runtime_error("agent connected without identifying itself");
            if (hello->station == "G")
                gen_ep = std::move(ep);
            else if (hello->station == "A")
                a_ep = std::move(ep);
            else if (hello->station == "B")
                b_ep = std::move(ep);
            else
                throw std::runtime_error("unknown agent role '" + hello->station + "'");
        }
        if (!gen_ep || !a_ep || !b_ep) throw std::runtime_error("missing agent connection");
        outcome = coordinator_run(script, lab, *gen_ep, *a_ep, *b_ep);
    } catch (...) {
        gen.join();
        ta.join();
        tb.join();
        throw;
    }
    gen.join();
    ta.join();
    tb.join();
    return outcome;
}

}  // namespace pulsebell
