#pragma once

// Time-tag data model and the v1 tag file format.
//
// All times are integer picoseconds since the recording station's own
// epoch (the instant its TDC started). Three channels per station: the
// trigger input plus the '1' and '0' analyzer outputs.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pulsebell {

using TimePs = std::int64_t;

inline constexpr TimePs kPsPerSecond = 1'000'000'000'000LL;

enum class Channel : std::uint8_t { Trigger, Out1, Out0 };

char channel_code(Channel c);
std::optional<Channel> channel_from_code(char code);

struct TimeTag {
    TimePs time_ps = 0;
    Channel channel = Channel::Trigger;

    bool operator==(const TimeTag&) const = default;
};

enum class Station : std::uint8_t { A, B };

char station_code(Station s);
std::optional<Station> station_from_code(char code);

// Slow sinusoidal modulation of the run repetition rate. Lets pulse
// numbering bridge gaps left by unrecorded triggers.
struct ChirpSpec {
    std::int64_t depth_hz = 0;
    double period_s = 0.0;

    bool operator==(const ChirpSpec&) const = default;
};

struct FrequencyPlan {
    std::int64_t freq_pre_hz = 0;   // repetition rate outside the run
    std::int64_t freq_run_hz = 0;   // repetition rate during the run
    std::int64_t pulse_on_ns = 0;   // pump on-window per pulse
    std::optional<ChirpSpec> chirp;

    TimePs pre_period_ps() const;
    TimePs run_period_ps() const;
    TimePs pulse_on_ps() const { return pulse_on_ns * 1000; }

    bool operator==(const FrequencyPlan&) const = default;
};

struct TagStream {
    Station station = Station::A;
    std::string run_id;
    FrequencyPlan plan;
    std::vector<TimeTag> tags;   // globally sorted by time_ps

    std::vector<TimePs> channel_times(Channel c) const;
    // Detection tags (Out1/Out0) with their positions in `tags`.
    std::vector<std::int64_t> detection_indices() const;

    bool operator==(const TagStream&) const = default;
};

// record_index -1 marks a header/plan-level violation.
struct Violation {
    std::int64_t record_index = -1;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

ValidationReport validate_plan(const FrequencyPlan& plan);
ValidationReport validate_stream(const TagStream& stream);

// Thrown by read_tag_file; `line` is 1-based.
struct ParseError : std::runtime_error {
    ParseError(std::size_t line_no, const std::string& what)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + what),
          line(line_no) {}
    std::size_t line;
};

// v1 text format, byte-deterministic for a given stream. Throws
// std::invalid_argument naming the first offending record if the stream
// violates an invariant.
std::string write_tag_file(const TagStream& stream);

// Strict parser: exact header order, unknown keys rejected, records must
// be sorted. Throws ParseError with the offending line.
TagStream read_tag_file(std::string_view bytes);

TagStream read_tag_file_from(const std::string& path);
void write_tag_file_to(const TagStream& stream, const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

}  // namespace pulsebell
