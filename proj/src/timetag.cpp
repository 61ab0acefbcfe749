#include "pulsebell/timetag.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pulsebell {

char channel_code(Channel c) {
    switch (c) {
        case Channel::Trigger: return 'T';
        case Channel::Out1: return '1';
        case Channel::Out0: return '0';
    }
    return '?';
}

std::optional<Channel> channel_from_code(char code) {
    switch (code) {
        case 'T': return Channel::Trigger;
        case '1': return Channel::Out1;
        case '0': return Channel::Out0;
        default: return std::nullopt;
    }
}

char station_code(Station s) { return s == Station::A ? 'A' : 'B'; }

std::optional<Station> station_from_code(char code) {
    if (code == 'A') return Station::A;
    if (code == 'B') return Station::B;
    return std::nullopt;
}

static TimePs period_ps(std::int64_t freq_hz) {
    return static_cast<TimePs>(std::llround(static_cast<double>(kPsPerSecond) /
                                            static_cast<double>(freq_hz)));
}

TimePs FrequencyPlan::pre_period_ps() const { return period_ps(freq_pre_hz); }
TimePs FrequencyPlan::run_period_ps() const { return period_ps(freq_run_hz); }

std::vector<TimePs> TagStream::channel_times(Channel c) const {
    std::vector<TimePs> out;
    for (const TimeTag& t : tags)
        if (t.channel == c) out.push_back(t.time_ps);
    return out;
}

std::vector<std::int64_t> TagStream::detection_indices() const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < tags.size(); ++i)
        if (tags[i].channel != Channel::Trigger) out.push_back(static_cast<std::int64_t>(i));
    return out;
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    if (ok()) {
        os << "ok";
        return os.str();
    }
    for (std::size_t i = 0; i < violations.size(); ++i) {
        if (i) os << "; ";
        if (violations[i].record_index >= 0) os << "record " << violations[i].record_index << ": ";
        os << violations[i].message;
    }
    return os.str();
}

ValidationReport validate_plan(const FrequencyPlan& plan) {
    ValidationReport r;
    auto add = [&r](const std::string& m) { r.violations.push_back({-1, m}); };
    if (plan.freq_pre_hz <= 0) add("freq_pre_hz must be positive");
    if (plan.freq_run_hz <= 0) add("freq_run_hz must be positive");
    if (plan.freq_pre_hz > 0 && plan.freq_pre_hz == plan.freq_run_hz)
        add("freq_pre_hz equals freq_run_hz: no frequency step exists");
    if (plan.pulse_on_ns <= 0) add("pulse_on_ns must be positive");
    // On-window must fit in the run period: pulse_on_ns <= 1e9 / freq_run_hz.
    if (plan.freq_run_hz > 0 && plan.pulse_on_ns * plan.freq_run_hz > 1'000'000'000LL)
        add("pulse_on_ns exceeds the run period");
    if (plan.chirp) {
        if (plan.chirp->depth_hz <= 0) add("chirp_depth_hz must be positive");
        if (plan.chirp->period_s <= 0.0) add("chirp_period_s must be positive");
        std::int64_t limit = std::llabs(plan.freq_run_hz - plan.freq_pre_hz) / 4;
        if (plan.chirp->depth_hz >= limit)
            add("chirp_depth_hz must stay below a quarter of the frequency step");
    }
    return r;
}

ValidationReport validate_stream(const TagStream& stream) {
    ValidationReport r = validate_plan(stream.plan);
    if (stream.run_id.empty())
        r.violations.push_back({-1, "run id is empty"});
    for (char ch : stream.run_id)
        if (std::isspace(static_cast<unsigned char>(ch))) {
            r.violations.push_back({-1, "run id contains whitespace"});
            break;
        }

    // last time seen per channel, for the within-channel tie check
    std::array<TimePs, 3> last_time{-1, -1, -1};
    std::array<std::int64_t, 3> last_index{-1, -1, -1};
    TimePs prev = -1;
    for (std::size_t i = 0; i < stream.tags.size(); ++i) {
        const TimeTag& t = stream.tags[i];
        auto idx = static_cast<std::int64_t>(i);
        if (t.time_ps < 0)
            r.violations.push_back({idx, "time_ps is negative"});
        if (prev >= 0 && t.time_ps < prev)
            r.violations.push_back(
                {idx, "records out of time order (records " + std::to_string(i - 1) + " and " +
                          std::to_string(i) + ")"});
        auto c = static_cast<std::size_t>(t.channel);
        if (last_time[c] == t.time_ps && last_index[c] >= 0)
            r.violations.push_back(
                {idx, std::string("duplicate time on channel ") + channel_code(t.channel) +
                          " (records " + std::to_string(last_index[c]) + " and " +
                          std::to_string(i) + ")"});
        last_time[c] = t.time_ps;
        last_index[c] = idx;
        prev = t.time_ps;
    }
    return r;
}

static void append_int(std::string& out, std::int64_t v) {
    char buf[24];
    auto res = std::to_chars(std::begin(buf), std::end(buf), v);
    out.append(buf, res.ptr);
}

static std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(std::begin(buf), std::end(buf), v);
    return std::string(buf, res.ptr);
}

std::string write_tag_file(const TagStream& stream) {
    ValidationReport report = validate_stream(stream);
    if (!report.ok()) {
        const Violation& v = report.violations.front();
        throw std::invalid_argument("invalid stream: " +
                                    (v.record_index >= 0
                                         ? "record " + std::to_string(v.record_index) + ": "
                                         : std::string()) +
                                    v.message);
    }

    std::string out;
    out.reserve(96 + stream.tags.size() * 16);
    out += "# pulsebell-tags v1\n";
    out += "# station: ";
    out += station_code(stream.station);
    out += "\n# run: ";
    out += stream.run_id;
    out += "\n# freq_pre_hz: ";
    append_int(out, stream.plan.freq_pre_hz);
    out += "\n# freq_run_hz: ";
    append_int(out, stream.plan.freq_run_hz);
    out += "\n# pulse_on_ns: ";
    append_int(out, stream.plan.pulse_on_ns);
    out += '\n';
    if (stream.plan.chirp) {
        out += "# chirp_depth_hz: ";
        append_int(out, stream.plan.chirp->depth_hz);
        out += "\n# chirp_period_s: ";
        out += format_double(stream.plan.chirp->period_s);
        out += '\n';
    }
    out += "channel,time_ps\n";
    for (const TimeTag& t : stream.tags) {
        out += channel_code(t.channel);
        out += ',';
        append_int(out, t.time_ps);
        out += '\n';
    }
    return out;
}

namespace {

// Line-oriented cursor over the raw bytes; keeps 1-based line numbers.
struct LineReader {
    std::string_view data;
    std::size_t pos = 0;
    std::size_t line_no = 0;

    bool next(std::string_view& line) {
        if (pos >= data.size()) return false;
        std::size_t nl = data.find('\n', pos);
        if (nl == std::string_view::npos) {
            line = data.substr(pos);
            pos = data.size();
        } else {
            line = data.substr(pos, nl - pos);
            pos = nl + 1;
        }
        ++line_no;
        return true;
    }
};

std::int64_t parse_int(std::string_view s, std::size_t line_no, const char* what) {
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(line_no, std::string("malformed ") + what + " '" + std::string(s) + "'");
    return v;
}

double parse_dbl(std::string_view s, std::size_t line_no, const char* what) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(line_no, std::string("malformed ") + what + " '" + std::string(s) + "'");
    return v;
}

// Expects "# key: value"; returns value or throws.
std::string_view header_value(std::string_view line, std::string_view key, std::size_t line_no) {
    std::string prefix = "# " + std::string(key) + ": ";
    if (line.substr(0, prefix.size()) != prefix)
        throw ParseError(line_no, "expected header '# " + std::string(key) + ": ...', got '" +
                                      std::string(line) + "'");
    return line.substr(prefix.size());
}

}  // namespace

TagStream read_tag_file(std::string_view bytes) {
    LineReader in{bytes};
    std::string_view line;

    auto need_line = [&](const char* what) {
        if (!in.next(line)) throw ParseError(in.line_no + 1, std::string("unexpected end of file, expected ") + what);
    };

    need_line("magic header");
    if (line != "# pulsebell-tags v1")
        throw ParseError(in.line_no, "not a pulsebell-tags v1 file");

    TagStream stream;
    need_line("station header");
    std::string_view sv = header_value(line, "station", in.line_no);
    if (sv.size() != 1 || !station_from_code(sv[0]))
        throw ParseError(in.line_no, "station must be A or B");
    stream.station = *station_from_code(sv[0]);

    need_line("run header");
    stream.run_id = std::string(header_value(line, "run", in.line_no));

    need_line("freq_pre_hz header");
    stream.plan.freq_pre_hz = parse_int(header_value(line, "freq_pre_hz", in.line_no), in.line_no, "freq_pre_hz");
    need_line("freq_run_hz header");
    stream.plan.freq_run_hz = parse_int(header_value(line, "freq_run_hz", in.line_no), in.line_no, "freq_run_hz");
    need_line("pulse_on_ns header");
    stream.plan.pulse_on_ns = parse_int(header_value(line, "pulse_on_ns", in.line_no), in.line_no, "pulse_on_ns");

    need_line("column header");
    if (line.substr(0, 2) == "# ") {
        // optional chirp pair, then the column header
        ChirpSpec chirp;
        chirp.depth_hz = parse_int(header_value(line, "chirp_depth_hz", in.line_no), in.line_no, "chirp_depth_hz");
        need_line("chirp_period_s header");
        chirp.period_s = parse_dbl(header_value(line, "chirp_period_s", in.line_no), in.line_no, "chirp_period_s");
        stream.plan.chirp = chirp;
        need_line("column header");
    }
    if (line != "channel,time_ps")
        throw ParseError(in.line_no, "expected column header 'channel,time_ps', got '" + std::string(line) + "'");

    while (in.next(line)) {
        if (line.empty())
            throw ParseError(in.line_no, "blank line in record section");
        if (line.size() < 3 || line[1] != ',')
            throw ParseError(in.line_no, "malformed record '" + std::string(line) + "'");
        auto ch = channel_from_code(line[0]);
        if (!ch)
            throw ParseError(in.line_no, std::string("unknown channel code '") + line[0] + "'");
        TimePs t = parse_int(line.substr(2), in.line_no, "time_ps");
        if (t < 0)
            throw ParseError(in.line_no, "negative time_ps");
        if (!stream.tags.empty() && t < stream.tags.back().time_ps)
            throw ParseError(in.line_no,
                             "records out of time order (records " +
                                 std::to_string(stream.tags.size() - 1) + " and " +
                                 std::to_string(stream.tags.size()) + ")");
        stream.tags.push_back({t, *ch});
    }

    ValidationReport report = validate_stream(stream);
    if (!report.ok())
        throw ParseError(in.line_no, "stream invariant violated: " + report.to_string());
    return stream;
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, std::string_view contents) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

TagStream read_tag_file_from(const std::string& path) {
    try {
        return read_tag_file(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(e.line, path + ": " + e.what());
    }
}

void write_tag_file_to(const TagStream& stream, const std::string& path) {
    write_text_file(path, write_tag_file(stream));
}

}  // namespace pulsebell
