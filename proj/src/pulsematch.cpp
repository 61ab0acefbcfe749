#include "pulsebell/pulsematch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pulsebell {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::int64_t kMaxSpannedPeriods = 20;

enum class GapClass : std::uint8_t { Pre, Run, Other };

// Classifies a recorded inter-trigger gap as m pre-periods or m
// run-periods (m >= 1). Tolerance scales with m; beyond ~49 periods the
// two grids coincide, so long gaps stay unclassified.
GapClass classify_gap(TimePs gap, TimePs pre_period, TimePs run_period, TimePs quarter_diff) {
    auto matches = [&](TimePs period) {
        const std::int64_t m =
            std::clamp<std::int64_t>((gap + period / 2) / period, 1, kMaxSpannedPeriods);
        return std::llabs(gap - m * period) <= m * quarter_diff;
    };
    const bool pre = matches(pre_period);
    const bool run = matches(run_period);
    if (pre == run) return GapClass::Other;
    return pre ? GapClass::Pre : GapClass::Run;
}

}  // namespace

StepDetection detect_step(std::span<const TimePs> trigger_times, const FrequencyPlan& plan,
                          int confirm) {
    ValidationReport pr = validate_plan(plan);
    if (!pr.ok()) throw std::invalid_argument("invalid plan: " + pr.to_string());
    if (confirm < 1) throw std::invalid_argument("confirm must be >= 1");
    const auto k = static_cast<std::size_t>(confirm);
    if (trigger_times.size() < 2 * k + 1)
        throw std::invalid_argument("need at least " + std::to_string(confirm) +
                                    "+1 triggers on each side of the step");

    const TimePs pre_period = plan.pre_period_ps();
    const TimePs run_period = plan.run_period_ps();
    const TimePs quarter_diff = std::llabs(pre_period - run_period) / 4;

    const std::size_t n_gaps = trigger_times.size() - 1;
    std::vector<GapClass> cls(n_gaps);
    for (std::size_t g = 0; g < n_gaps; ++g)
        cls[g] = classify_gap(trigger_times[g + 1] - trigger_times[g], pre_period, run_period,
                              quarter_diff);

    // run lengths of consecutive classifications
    std::vector<std::int64_t> pre_back(n_gaps, 0), run_fwd(n_gaps, 0);
    for (std::size_t g = 0; g < n_gaps; ++g)
        pre_back[g] = cls[g] == GapClass::Pre ? (g ? pre_back[g - 1] : 0) + 1 : 0;
    for (std::size_t g = n_gaps; g-- > 0;)
        run_fwd[g] = cls[g] == GapClass::Run ? (g + 1 < n_gaps ? run_fwd[g + 1] : 0) + 1 : 0;

    std::vector<std::size_t> candidates;
    for (std::size_t i = k; i + k <= n_gaps; ++i)
        if (pre_back[i - 1] >= confirm && run_fwd[i] >= confirm) candidates.push_back(i);

    if (candidates.empty())
        throw std::runtime_error("no frequency step found in trigger stream");
    if (candidates.size() > 1)
        throw std::runtime_error("ambiguous frequency step: " +
                                 std::to_string(candidates.size()) +
                                 " candidates (plan violated)");

    const std::size_t i = candidates.front();
    StepDetection det;
    det.step_trigger_index = static_cast<std::int64_t>(i);
    det.step_local_time_ps = trigger_times[i];
    det.confidence = run_fwd[i];
    det.pulse_count_from_start = static_cast<std::int64_t>(i) + 1;
    return det;
}

namespace {

// Run-segment phase model in pulse units, local time relative to the
// step trigger. Without chirp the phase is linear.
struct PhaseModel {
    double f_run;           // pulses per second
    double depth = 0.0;     // chirp depth, Hz
    double period_s = 0.0;  // chirp period

    double phase(TimePs rel_ps) const {
        const double t = static_cast<double>(rel_ps) / static_cast<double>(kPsPerSecond);
        double p = f_run * t;
        if (depth > 0.0) p += depth * period_s / kTwoPi * (1.0 - std::cos(kTwoPi * t / period_s));
        return p;
    }

    double freq(TimePs rel_ps) const {
        if (depth <= 0.0) return f_run;
        const double t = static_cast<double>(rel_ps) / static_cast<double>(kPsPerSecond);
        return f_run + depth * std::sin(kTwoPi * t / period_s);
    }

    // Inverts phase() between two known bracketing times.
    TimePs time_at_phase(double target, TimePs lo, TimePs hi) const {
        double t = static_cast<double>(lo) +
                   (static_cast<double>(hi) - static_cast<double>(lo)) * 0.5;
        for (int it = 0; it < 8; ++it) {
            const TimePs tp = static_cast<TimePs>(std::llround(t));
            const double err = phase(tp) - target;
            if (std::abs(err) < 1e-9) break;
            t -= err / freq(tp) * static_cast<double>(kPsPerSecond);
        }
        return std::clamp(static_cast<TimePs>(std::llround(t)), lo, hi);
    }
};

double fractional_distance(double x) { return std::abs(x - std::round(x)); }

}  // namespace

PulseNumbering number_pulses(std::span<const TimePs> trigger_times, const StepDetection& step,
                             const FrequencyPlan& plan) {
    if (step.step_trigger_index <= 0 ||
        step.step_trigger_index >= static_cast<std::int64_t>(trigger_times.size()))
        throw std::invalid_argument("step trigger index out of range");

    const auto step_idx = static_cast<std::size_t>(step.step_trigger_index);
    const TimePs step_time = trigger_times[step_idx];
    const TimePs pre_period = plan.pre_period_ps();

    PhaseModel model{static_cast<double>(plan.freq_run_hz)};
    if (plan.chirp) {
        model.depth = static_cast<double>(plan.chirp->depth_hz);
        model.period_s = plan.chirp->period_s;
    }

    PulseNumbering out;
    out.run_period_ps = plan.run_period_ps();
    out.trigger_pulse.assign(trigger_times.size(), 0);

    // pre-run triggers count backwards at the pre period
    for (std::size_t i = step_idx; i-- > 0;) {
        const double span = static_cast<double>(trigger_times[i + 1] - trigger_times[i]) /
                            static_cast<double>(pre_period);
        if (fractional_distance(span) >= 0.25)
            throw NumberingError(static_cast<std::int64_t>(i),
                                 "ambiguous pre-run gap at trigger " + std::to_string(i));
        out.trigger_pulse[i] = out.trigger_pulse[i + 1] - std::llround(span);
    }

    // run triggers: integrate the (possibly chirped) phase model over
    // each recorded gap and round to whole pulses
    std::vector<std::pair<std::int64_t, TimePs>> synthesized;
    double phase_prev = 0.0;
    for (std::size_t i = step_idx + 1; i < trigger_times.size(); ++i) {
        const double phase_here = model.phase(trigger_times[i] - step_time);
        const double span = phase_here - phase_prev;
        const std::int64_t m = std::llround(span);
        if (m < 1 || fractional_distance(span) >= 0.25)
            throw NumberingError(static_cast<std::int64_t>(i),
                                 "ambiguous gap at trigger " + std::to_string(i) + " (" +
                                     std::to_string(span) + " nominal periods)");
        const std::int64_t pulse_prev = out.trigger_pulse[i - 1];
        for (std::int64_t r = 1; r < m; ++r) {
            // phase interpolation pinned to the recorded neighbours
            const double target = phase_prev + span * static_cast<double>(r) / static_cast<double>(m);
            const TimePs t = plan.chirp
                                 ? step_time + model.time_at_phase(target,
                                                                   trigger_times[i - 1] - step_time,
                                                                   trigger_times[i] - step_time)
                                 : trigger_times[i - 1] +
                                       (trigger_times[i] - trigger_times[i - 1]) * r / m;
            synthesized.emplace_back(pulse_prev + r, t);
        }
        out.trigger_pulse[i] = pulse_prev + m;
        phase_prev = phase_here;
    }

    // dense local start-time table over run pulses [0, last]
    const std::int64_t last = out.trigger_pulse.back();
    out.run_pulse_start.assign(static_cast<std::size_t>(last + 1), 0);
    for (std::size_t i = step_idx; i < trigger_times.size(); ++i)
        out.run_pulse_start[static_cast<std::size_t>(out.trigger_pulse[i])] = trigger_times[i];
    out.recovered_pulses.reserve(synthesized.size());
    for (const auto& [pulse, t] : synthesized) {
        out.run_pulse_start[static_cast<std::size_t>(pulse)] = t;
        out.recovered_pulses.push_back(pulse);
    }
    return out;
}

PulseAssignment assign_pulses(std::span<const TimePs> detection_times,
                              const PulseNumbering& numbering, const FrequencyPlan& plan,
                              TimePs guard_ps) {
    if (guard_ps < 0) throw std::invalid_argument("guard_ps must be >= 0");
    const TimePs window = plan.pulse_on_ps() + guard_ps;
    PulseAssignment out;
    out.guard_ps = guard_ps;
    out.entries.assign(detection_times.size(), {});
    const auto& starts = numbering.run_pulse_start;
    for (std::size_t i = 0; i < detection_times.size(); ++i) {
        const TimePs t = detection_times[i];
        auto it = std::upper_bound(starts.begin(), starts.end(), t);
        if (it == starts.begin()) continue;  // before pulse 0: pre-run detection
        const auto pulse = static_cast<std::int64_t>(std::distance(starts.begin(), it)) - 1;
        const TimePs off = t - starts[static_cast<std::size_t>(pulse)];
        if (off <= window) out.entries[i] = {pulse, off};
    }
    return out;
}

CoincidenceSet match_by_pulse(const PulseAssignment& assign_a, const PulseAssignment& assign_b) {
    // first assigned detection per pulse; detections are in time order,
    // so the first hit is the earliest
    struct SideSummary {
        std::vector<std::pair<std::int64_t, std::int64_t>> first;  // (pulse, detection index)
        std::int64_t multi = 0;
    };
    auto summarize = [](const PulseAssignment& a) {
        SideSummary s;
        std::int64_t last_multi = -1;
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            const auto& e = a.entries[i];
            if (e.pulse_number < 0) continue;
            if (!s.first.empty() && s.first.back().first == e.pulse_number) {
                if (last_multi != e.pulse_number) {
                    ++s.multi;
                    last_multi = e.pulse_number;
                }
                continue;
            }
            s.first.emplace_back(e.pulse_number, static_cast<std::int64_t>(i));
        }
        return s;
    };
    const SideSummary sa = summarize(assign_a);
    const SideSummary sb = summarize(assign_b);

    CoincidenceSet set;
    set.method = MatchMethod::PulseMatch;
    set.guard_ps = assign_a.guard_ps;
    set.multi_detection_pulses_a = sa.multi;
    set.multi_detection_pulses_b = sb.multi;

    std::size_t i = 0, j = 0;
    while (i < sa.first.size() && j < sb.first.size()) {
        const auto [pa, ia] = sa.first[i];
        const auto [pb, ib] = sb.first[j];
        if (pa < pb) {
            ++i;
        } else if (pb < pa) {
            ++j;
        } else {
            const TimePs dt = assign_a.entries[static_cast<std::size_t>(ia)].offset_in_pulse_ps -
                              assign_b.entries[static_cast<std::size_t>(ib)].offset_in_pulse_ps;
            set.pairs.push_back({ia, ib, dt, pa});
            ++i;
            ++j;
        }
    }
    return set;
}

StartOffset start_offset(const StepDetection& step_a, const StepDetection& step_b,
                         const FrequencyPlan& plan) {
    StartOffset off;
    off.pulse_count_a = step_a.pulse_count_from_start;
    off.pulse_count_b = step_b.pulse_count_from_start;
    off.pulse_count_diff = off.pulse_count_a - off.pulse_count_b;
    off.offset_count_based_ps = off.pulse_count_diff * plan.run_period_ps();
    off.offset_time_based_ps = step_a.step_local_time_ps - step_b.step_local_time_ps;
    return off;
}

namespace {
std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b, r = a % b;
    return r != 0 && ((r < 0) != (b < 0)) ? q - 1 : q;
}
}  // namespace

DtHistogram intra_pulse_histogram(const CoincidenceSet& pairs, TimePs bin_ps) {
    if (bin_ps <= 0) throw std::invalid_argument("bin_ps must be positive");
    DtHistogram h;
    h.bin_ps = bin_ps;
    if (pairs.pairs.empty()) return h;
    std::int64_t lo = 0, hi = 0;
    bool first = true;
    for (const PairRecord& p : pairs.pairs) {
        const std::int64_t bin = floor_div(p.dt_ps + bin_ps / 2, bin_ps);
        if (first || bin < lo) lo = first ? bin : std::min(lo, bin);
        if (first || bin > hi) hi = first ? bin : std::max(hi, bin);
        first = false;
    }
    h.first_bin = lo;
    h.counts.assign(static_cast<std::size_t>(hi - lo + 1), 0);
    for (const PairRecord& p : pairs.pairs)
        ++h.counts[static_cast<std::size_t>(floor_div(p.dt_ps + bin_ps / 2, bin_ps) - lo)];
    return h;
}

std::string write_dt_histogram_csv(const DtHistogram& h) {
    std::string out = "dt_ps,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        const std::int64_t center = (h.first_bin + static_cast<std::int64_t>(i)) * h.bin_ps;
        out += std::to_string(center) + "," + std::to_string(h.counts[i]) + "\n";
    }
    return out;
}

std::string write_step_report(const StepDetection& step) {
    std::ostringstream os;
    os << "step_index=" << step.step_trigger_index << "\n"
       << "step_local_time_ps=" << step.step_local_time_ps << "\n"
       << "pulse_count_from_start=" << step.pulse_count_from_start << "\n"
       << "confidence=" << step.confidence << "\n";
    return os.str();
}

std::string write_start_offset_report(const StartOffset& off) {
    std::ostringstream os;
    os << "pulse_count_a=" << off.pulse_count_a << "\n"
       << "pulse_count_b=" << off.pulse_count_b << "\n"
       << "pulse_count_diff=" << off.pulse_count_diff << "\n"
       << "offset_count_based_ps=" << off.offset_count_based_ps << "\n"
       << "offset_time_based_ps=" << off.offset_time_based_ps << "\n";
    return os.str();
}

StreamMatch match_streams(const TagStream& a, const TagStream& b, TimePs guard_ps) {
    if (a.plan != b.plan) throw std::invalid_argument("streams carry different frequency plans");

    StreamMatch m;
    const std::vector<TimePs> trig_a = a.channel_times(Channel::Trigger);
    const std::vector<TimePs> trig_b = b.channel_times(Channel::Trigger);
    m.step_a = detect_step(trig_a, a.plan);
    m.step_b = detect_step(trig_b, b.plan);
    m.numbering_a = number_pulses(trig_a, m.step_a, a.plan);
    m.numbering_b = number_pulses(trig_b, m.step_b, b.plan);
    m.offset = start_offset(m.step_a, m.step_b, a.plan);

    const std::vector<std::int64_t> det_idx_a = a.detection_indices();
    const std::vector<std::int64_t> det_idx_b = b.detection_indices();
    std::vector<TimePs> det_a, det_b;
    det_a.reserve(det_idx_a.size());
    det_b.reserve(det_idx_b.size());
    for (std::int64_t i : det_idx_a) det_a.push_back(a.tags[static_cast<std::size_t>(i)].time_ps);
    for (std::int64_t i : det_idx_b) det_b.push_back(b.tags[static_cast<std::size_t>(i)].time_ps);

    const PulseAssignment assign_a = assign_pulses(det_a, m.numbering_a, a.plan, guard_ps);
    const PulseAssignment assign_b = assign_pulses(det_b, m.numbering_b, b.plan, guard_ps);
    m.pairs = match_by_pulse(assign_a, assign_b);
    for (PairRecord& p : m.pairs.pairs) {
        p.index_a = det_idx_a[static_cast<std::size_t>(p.index_a)];
        p.index_b = det_idx_b[static_cast<std::size_t>(p.index_b)];
    }
    return m;
}

}  // namespace pulsebell
