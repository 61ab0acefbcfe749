#pragma once

// Frequency-step pulse numbering and same-pulse coincidence matching.
// The pre->run repetition-rate step marks pulse 0 identically at both
// stations; numbering the pulses after it replaces the delay scan, and
// matching detections by equal pulse number is immune to clock drift.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pulsebell/postselect.hpp"
#include "pulsebell/timetag.hpp"

namespace pulsebell {

struct StepDetection {
    std::int64_t step_trigger_index = -1;   // index into the recorded trigger sequence
    TimePs step_local_time_ps = 0;
    std::int64_t confidence = 0;            // consecutive run-period intervals after the step
    std::int64_t pulse_count_from_start = 0;  // recorded pulses up to and including the step
};

// Finds the first trigger with `confirm` pre-period intervals before it
// and `confirm` run-period intervals after it. Intervals spanning m
// skipped pulses classify as m periods, so isolated trigger dropout near
// the step does not hide it. Tolerance is a quarter of the period
// difference per spanned period.
StepDetection detect_step(std::span<const TimePs> trigger_times, const FrequencyPlan& plan,
                          int confirm = 3);

struct NumberingError : std::runtime_error {
    NumberingError(std::int64_t trigger, const std::string& what)
        : std::runtime_error(what), trigger_index(trigger) {}
    std::int64_t trigger_index;
};

struct PulseNumbering {
    std::vector<std::int64_t> trigger_pulse;  // pulse number per recorded trigger
    std::vector<std::int64_t> recovered_pulses;  // run pulses with no recorded trigger, sorted
    std::vector<TimePs> run_pulse_start;      // local start time per run pulse number
    TimePs run_period_ps = 0;

    std::int64_t last_run_pulse() const {
        return static_cast<std::int64_t>(run_pulse_start.size()) - 1;
    }
};

// Numbers every recorded trigger (pulse 0 = step trigger, pre-run pulses
// negative) and synthesizes start times for run pulses whose trigger was
// not recorded. A gap whose span in nominal periods has fractional part
// in [0.25, 0.75) is ambiguous and raises NumberingError.
PulseNumbering number_pulses(std::span<const TimePs> trigger_times, const StepDetection& step,
                             const FrequencyPlan& plan);

struct PulseAssignment {
    struct Entry {
        std::int64_t pulse_number = -1;
        TimePs offset_in_pulse_ps = 0;
    };
    // one entry per detection; pulse_number -1 = unassigned
    std::vector<Entry> entries;
    TimePs guard_ps = 0;

    bool assigned(std::size_t i) const { return entries[i].pulse_number >= 0; }
};

inline constexpr TimePs kDefaultGuardPs = 6000;  // 3x the 2 ns detector jitter

// Assigns each detection to the run pulse whose window
// [start, start + on + guard] contains it; pre-run and off-window
// detections stay unassigned.
PulseAssignment assign_pulses(std::span<const TimePs> detection_times,
                              const PulseNumbering& numbering, const FrequencyPlan& plan,
                              TimePs guard_ps = kDefaultGuardPs);

// One pair per pulse number with an assigned detection on each side,
// earliest detection each. dt is the intra-pulse offset difference. No
// time-window filtering. Indices refer to the detection vectors the
// assignments were built from.
CoincidenceSet match_by_pulse(const PulseAssignment& assign_a, const PulseAssignment& assign_b);

struct StartOffset {
    std::int64_t pulse_count_a = 0;
    std::int64_t pulse_count_b = 0;
    std::int64_t pulse_count_diff = 0;
    // count difference times the run period -- the figure quoted in run
    // logs. Carries a systematic error of (T_pre-T_run)/T_pre (~2%) of
    // the offset because the pulses in the start gap tick at the pre
    // frequency.
    TimePs offset_count_based_ps = 0;
    // difference of the step trigger's local timestamps; accurate to
    // clock-rate effects (sub-us at ppm-level drift)
    TimePs offset_time_based_ps = 0;
};

StartOffset start_offset(const StepDetection& step_a, const StepDetection& step_b,
                         const FrequencyPlan& plan);

struct DtHistogram {
    TimePs bin_ps = 2000;
    std::int64_t first_bin = 0;  // bin k is centered on k*bin_ps
    std::vector<std::int64_t> counts;
};

DtHistogram intra_pulse_histogram(const CoincidenceSet& pairs, TimePs bin_ps = 2000);

std::string write_dt_histogram_csv(const DtHistogram& h);
std::string write_step_report(const StepDetection& step);
std::string write_start_offset_report(const StartOffset& off);

// Full pipeline on two tag streams; pair indices are remapped to tag
// positions within each stream.
struct StreamMatch {
    StepDetection step_a;
    StepDetection step_b;
    PulseNumbering numbering_a;
    PulseNumbering numbering_b;
    StartOffset offset;
    CoincidenceSet pairs;
};

StreamMatch match_streams(const TagStream& a, const TagStream& b,
                          TimePs guard_ps = kDefaultGuardPs);

}  // namespace pulsebell
