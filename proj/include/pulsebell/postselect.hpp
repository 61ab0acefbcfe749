#pragma once

// Classical post-selection: windowed coincidence counting over a delay
// scan, peak finding, and iterative window narrowing. The matching rule
// everywhere is the greedy earliest-first one-to-one sweep; the delay is
// added to the B list, so a pair matches when |t_A - (t_B + d)| <= T_w.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pulsebell/timetag.hpp"

namespace pulsebell {

struct DelayHistogram {
    TimePs d_start_ps = 0;
    TimePs d_step_ps = 1;
    TimePs t_w_ps = 0;
    std::vector<std::int64_t> counts;

    TimePs d_at(std::size_t i) const { return d_start_ps + static_cast<TimePs>(i) * d_step_ps; }
};

// Greedy one-to-one coincidence count; both inputs sorted ascending.
std::int64_t coincidence_count(std::span<const TimePs> a_times, std::span<const TimePs> b_times,
                               TimePs d_ps, TimePs t_w_ps);

// One coincidence_count per grid point d = d_min + k*step (k covers the
// range inclusively). Bit-identical to calling coincidence_count per
// point, but evaluated from delta-bucketed candidate pairs so wide scans
// over sparse streams stay cheap.
DelayHistogram delay_histogram(std::span<const TimePs> a_times, std::span<const TimePs> b_times,
                               TimePs d_min_ps, TimePs d_max_ps, TimePs d_step_ps, TimePs t_w_ps);

struct PeakInfo {
    bool found = false;
    TimePs d_peak_ps = 0;
    std::int64_t peak_count = 0;
    TimePs width_ps = 0;       // full width at half maximum, grid-aligned
    double prominence = 0.0;   // peak / median count (inf when the median is 0)
    std::vector<TimePs> secondary_peaks;  // local maxima >= peak/2 outside the main width
};

// Ties resolve to the smallest |d|, then the smallest d.
PeakInfo find_peak(const DelayHistogram& h);

struct PairRecord {
    std::int64_t index_a = -1;
    std::int64_t index_b = -1;
    TimePs dt_ps = 0;
    std::int64_t pulse_number = -1;  // pulse-matched sets only
};

enum class MatchMethod { Postselect, PulseMatch };

struct CoincidenceSet {
    MatchMethod method = MatchMethod::Postselect;
    std::vector<PairRecord> pairs;
    // parameters used
    TimePs d_ps = 0;
    TimePs t_w_ps = -1;
    TimePs guard_ps = 0;
    // pulses where one side saw more than one detection (pulse matching)
    std::int64_t multi_detection_pulses_a = 0;
    std::int64_t multi_detection_pulses_b = 0;
};

// The pairs behind coincidence_count, with dt = t_A - t_B per pair.
CoincidenceSet extract_pairs(std::span<const TimePs> a_times, std::span<const TimePs> b_times,
                             TimePs d_ps, TimePs t_w_ps);

struct ScheduleStage {
    TimePs t_w_ps = 0;
    TimePs d_half_span_ps = 0;  // stage 1 scans [-half, +half]; later stages re-center on the peak
    TimePs d_step_ps = 0;
};

struct PostselectSchedule {
    std::vector<ScheduleStage> stages;
    double prominence_min = 5.0;
    std::int64_t min_peak_counts = 50;
};

// Stage 1: T_w 100 ns over +-15 ms; stage 2: T_w 2 ns over peak +- 200 ns.
PostselectSchedule default_schedule();

// Keep stages down to (and including) the first with t_w_ps <= t_w.
PostselectSchedule truncate_schedule(const PostselectSchedule& s, TimePs t_w_ps);

struct StageResult {
    ScheduleStage stage;
    DelayHistogram hist;
    PeakInfo peak;
    bool converged = false;
};

struct PostselectOutcome {
    bool converged = false;
    std::size_t failed_stage = 0;  // valid when !converged
    std::vector<StageResult> stages;
    TimePs d_final_ps = 0;
    TimePs t_w_final_ps = 0;
    CoincidenceSet pairs;  // final stage's pairs when converged

    std::string failure_message() const;
};

PostselectOutcome iterate_postselect(std::span<const TimePs> a_times,
                                     std::span<const TimePs> b_times,
                                     const PostselectSchedule& schedule);

std::string write_histogram_csv(const DelayHistogram& h);
std::string write_pairs_csv(const CoincidenceSet& set);

}  // namespace pulsebell
