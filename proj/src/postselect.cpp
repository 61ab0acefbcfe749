#include "pulsebell/postselect.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pulsebell {

namespace {

void require_sorted(std::span<const TimePs> v, const char* name) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[i - 1])
            throw std::invalid_argument(std::string(name) + " times not sorted at index " +
                                        std::to_string(i));
}

// Greedy earliest-first one-to-one sweep. Matches the O(n^2) definition:
// each A time takes the earliest unused B time within the window.
std::int64_t sweep_count(std::span<const TimePs> a, std::span<const TimePs> b, TimePs d,
                         TimePs t_w) {
    std::int64_t count = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const TimePs diff = a[i] - (b[j] + d);
        if (diff < -t_w) {
            ++i;
        } else if (diff > t_w) {
            ++j;
        } else {
            ++count;
            ++i;
            ++j;
        }
    }
    return count;
}

// Same sweep restricted to index subsets. Exact as long as the subsets
// contain every tag with a partner in the window at this d: tags without
// a partner never match and never consume anything.
std::int64_t sweep_count_subset(std::span<const TimePs> a, std::span<const TimePs> b,
                                const std::vector<std::int32_t>& ai,
                                const std::vector<std::int32_t>& bj, TimePs d, TimePs t_w) {
    std::int64_t count = 0;
    std::size_t i = 0, j = 0;
    while (i < ai.size() && j < bj.size()) {
        const TimePs diff = a[static_cast<std::size_t>(ai[i])] -
                            (b[static_cast<std::size_t>(bj[j])] + d);
        if (diff < -t_w) {
            ++i;
        } else if (diff > t_w) {
            ++j;
        } else {
            ++count;
            ++i;
            ++j;
        }
    }
    return count;
}

}  // namespace

std::int64_t coincidence_count(std::span<const TimePs> a_times, std::span<const TimePs> b_times,
                               TimePs d_ps, TimePs t_w_ps) {
    if (t_w_ps < 0) throw std::invalid_argument("t_w_ps must be >= 0");
    require_sorted(a_times, "A");
    require_sorted(b_times, "B");
    return sweep_count(a_times, b_times, d_ps, t_w_ps);
}

CoincidenceSet extract_pairs(std::span<const TimePs> a_times, std::span<const TimePs> b_times,
                             TimePs d_ps, TimePs t_w_ps) {
    if (t_w_ps < 0) throw std::invalid_argument("t_w_ps must be >= 0");
    require_sorted(a_times, "A");
    require_sorted(b_times, "B");
    CoincidenceSet set;
    set.method = MatchMethod::Postselect;
    set.d_ps = d_ps;
    set.t_w_ps = t_w_ps;
    std::size_t i = 0, j = 0;
    while (i < a_times.size() && j < b_times.size()) {
        const TimePs diff = a_times[i] - (b_times[j] + d_ps);
        if (diff < -t_w_ps) {
            ++i;
        } else if (diff > t_w_ps) {
            ++j;
        } else {
            set.pairs.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(j),
                                 a_times[i] - b_times[j], -1});
            ++i;
            ++j;
        }
    }
    return set;
}

DelayHistogram delay_histogram(std::span<const TimePs> a_times, std::span<const TimePs> b_times,
                               TimePs d_min_ps, TimePs d_max_ps, TimePs d_step_ps, TimePs t_w_ps) {
    if (d_step_ps <= 0) throw std::invalid_argument("d_step_ps must be positive");
    if (d_max_ps < d_min_ps) throw std::invalid_argument("empty delay range");
    if (t_w_ps < 0) throw std::invalid_argument("t_w_ps must be >= 0");
    require_sorted(a_times, "A");
    require_sorted(b_times, "B");

    const std::int64_t n_points64 = (d_max_ps - d_min_ps) / d_step_ps + 1;
    if (n_points64 > 100'000'000) throw std::invalid_argument("delay grid too large");
    const auto n_points = static_cast<std::size_t>(n_points64);

    DelayHistogram h;
    h.d_start_ps = d_min_ps;
    h.d_step_ps = d_step_ps;
    h.t_w_ps = t_w_ps;
    h.counts.assign(n_points, 0);
    if (a_times.empty() || b_times.empty()) return h;

    const std::int64_t window_buckets = 2 * t_w_ps / d_step_ps;
    const bool bucketing_pays = n_points > 64 && window_buckets <= 8192;
    if (!bucketing_pays) {
        for (std::size_t p = 0; p < n_points; ++p)
            h.counts[p] = sweep_count(a_times, b_times, h.d_at(p), t_w_ps);
        return h;
    }

    // Blocked evaluation: bucket candidate pairs by delta = t_A - t_B so a
    // grid point only touches tags that can actually match there. One
    // bucket array per side holds the participating indices; a point
    // gathers its window's buckets, dedupes, and runs the normal sweep on
    // the subset, which matches the full sweep exactly because tags
    // without a partner in the window never match and never consume.
    constexpr std::size_t kBlock = 2048;
    constexpr std::size_t kDenseBlockPairLimit = 48'000'000;
    const auto n_buckets_per_block = static_cast<std::size_t>(window_buckets) + kBlock + 1;
    std::vector<std::vector<std::int32_t>> buckets_a(n_buckets_per_block);
    std::vector<std::vector<std::int32_t>> buckets_b(n_buckets_per_block);
    std::vector<std::int32_t> ai, bj;

    for (std::size_t p0 = 0; p0 < n_points; p0 += kBlock) {
        const std::size_t p1 = std::min(p0 + kBlock, n_points);
        const TimePs delta_lo = h.d_at(p0) - t_w_ps;
        const TimePs delta_hi = h.d_at(p1 - 1) + t_w_ps;

        // count candidates first so a dense block can fall back early
        std::size_t n_pairs = 0;
        {
            std::size_t j_lo = 0;
            for (std::size_t i = 0; i < a_times.size() && n_pairs <= kDenseBlockPairLimit; ++i) {
                while (j_lo < b_times.size() && b_times[j_lo] < a_times[i] - delta_hi) ++j_lo;
                for (std::size_t j = j_lo; j < b_times.size() && b_times[j] <= a_times[i] - delta_lo;
                     ++j)
                    ++n_pairs;
            }
        }
        if (n_pairs > kDenseBlockPairLimit) {
            for (std::size_t p = p0; p < p1; ++p)
                h.counts[p] = sweep_count(a_times, b_times, h.d_at(p), t_w_ps);
            continue;
        }

        const std::size_t used_buckets =
            static_cast<std::size_t>(window_buckets) + (p1 - p0) + 1;
        for (std::size_t k = 0; k < used_buckets; ++k) {
            buckets_a[k].clear();
            buckets_b[k].clear();
        }
        {
            std::size_t j_lo = 0;
            for (std::size_t i = 0; i < a_times.size(); ++i) {
                while (j_lo < b_times.size() && b_times[j_lo] < a_times[i] - delta_hi) ++j_lo;
                for (std::size_t j = j_lo;
                     j < b_times.size() && b_times[j] <= a_times[i] - delta_lo; ++j) {
                    const auto bucket =
                        static_cast<std::size_t>((a_times[i] - b_times[j] - delta_lo) / d_step_ps);
                    buckets_a[bucket].push_back(static_cast<std::int32_t>(i));
                }
            }
        }
        {
            std::size_t i_lo = 0;
            for (std::size_t j = 0; j < b_times.size(); ++j) {
                while (i_lo < a_times.size() && a_times[i_lo] < b_times[j] + delta_lo) ++i_lo;
                for (std::size_t i = i_lo;
                     i < a_times.size() && a_times[i] <= b_times[j] + delta_hi; ++i) {
                    const auto bucket =
                        static_cast<std::size_t>((a_times[i] - b_times[j] - delta_lo) / d_step_ps);
                    buckets_b[bucket].push_back(static_cast<std::int32_t>(j));
                }
            }
        }

        for (std::size_t p = p0; p < p1; ++p) {
            const std::size_t b_lo = p - p0;
            const std::size_t b_hi = b_lo + static_cast<std::size_t>(window_buckets);
            ai.clear();
            bj.clear();
            for (std::size_t k = b_lo; k <= b_hi; ++k)
                ai.insert(ai.end(), buckets_a[k].begin(), buckets_a[k].end());
            for (std::size_t k = b_lo; k <= b_hi; ++k)
                bj.insert(bj.end(), buckets_b[k].begin(), buckets_b[k].end());
            if (ai.empty() || bj.empty()) continue;
            std::sort(ai.begin(), ai.end());
            ai.erase(std::unique(ai.begin(), ai.end()), ai.end());
            std::sort(bj.begin(), bj.end());
            bj.erase(std::unique(bj.begin(), bj.end()), bj.end());
            h.counts[p] = sweep_count_subset(a_times, b_times, ai, bj, h.d_at(p), t_w_ps);
        }
    }
    return h;
}

PeakInfo find_peak(const DelayHistogram& h) {
    PeakInfo info;
    if (h.counts.empty()) return info;

    std::size_t best = h.counts.size();
    std::int64_t best_count = 0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        const std::int64_t c = h.counts[i];
        if (c <= 0) continue;
        if (best == h.counts.size() || c > best_count) {
            best = i;
            best_count = c;
            continue;
        }
        if (c == best_count) {
            const TimePs di = h.d_at(i), db = h.d_at(best);
            if (std::llabs(di) < std::llabs(db) || (std::llabs(di) == std::llabs(db) && di < db))
                best = i;
        }
    }
    if (best == h.counts.size()) return info;  // all-zero histogram: no peak

    info.found = true;
    info.d_peak_ps = h.d_at(best);
    info.peak_count = best_count;

    std::vector<std::int64_t> sorted(h.counts);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2),
                     sorted.end());
    const std::int64_t median = sorted[sorted.size() / 2];
    info.prominence = median > 0 ? static_cast<double>(best_count) / static_cast<double>(median)
                                 : std::numeric_limits<double>::infinity();

    // FWHM extent around the peak
    const auto above_half = [&](std::size_t i) { return 2 * h.counts[i] >= best_count; };
    std::size_t lo = best, hi = best;
    while (lo > 0 && above_half(lo - 1)) --lo;
    while (hi + 1 < h.counts.size() && above_half(hi + 1)) ++hi;
    info.width_ps = static_cast<TimePs>(hi - lo + 1) * h.d_step_ps;

    // local maxima at half height or more, outside the main peak's width
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        if (i >= lo && i <= hi) continue;
        const std::int64_t c = h.counts[i];
        if (c <= 0 || 2 * c < best_count) continue;
        // plateau-aware local maximum: strictly above the nearest differing
        // neighbour on each side, counted once at its left edge
        if (i > 0 && h.counts[i - 1] == c) continue;
        std::size_t r = i;
        while (r + 1 < h.counts.size() && h.counts[r + 1] == c) ++r;
        const bool left_ok = i == 0 || h.counts[i - 1] < c;
        const bool right_ok = r + 1 == h.counts.size() || h.counts[r + 1] < c;
        if (left_ok && right_ok) info.secondary_peaks.push_back(h.d_at(i));
    }
    return info;
}

PostselectSchedule default_schedule() {
    PostselectSchedule s;
    s.stages.push_back({100'000, 15'000'000'000LL, 100'000});  // 100 ns window over +-15 ms
    s.stages.push_back({2'000, 200'000, 2'000});               // 2 ns window over peak +-200 ns
    return s;
}

PostselectSchedule truncate_schedule(const PostselectSchedule& s, TimePs t_w_ps) {
    PostselectSchedule out;
    out.prominence_min = s.prominence_min;
    out.min_peak_counts = s.min_peak_counts;
    for (const ScheduleStage& st : s.stages) {
        out.stages.push_back(st);
        if (st.t_w_ps <= t_w_ps) break;
    }
    return out;
}

std::string PostselectOutcome::failure_message() const {
    if (converged) return {};
    std::ostringstream os;
    const StageResult& st = stages[failed_stage];
    os << "post-selection did not converge at stage " << failed_stage + 1 << " (t_w "
       << st.stage.t_w_ps << " ps): ";
    if (!st.peak.found)
        os << "histogram has no peak";
    else
        os << "peak " << st.peak.peak_count << " at d " << st.peak.d_peak_ps << " ps, prominence "
           << st.peak.prominence;
    return os.str();
}

PostselectOutcome iterate_postselect(std::span<const TimePs> a_times,
                                     std::span<const TimePs> b_times,
                                     const PostselectSchedule& schedule) {
    if (schedule.stages.empty()) throw std::invalid_argument("schedule has no stages");
    for (std::size_t s = 1; s < schedule.stages.size(); ++s)
        if (schedule.stages[s].t_w_ps >= schedule.stages[s - 1].t_w_ps)
            throw std::invalid_argument("schedule windows must strictly decrease");
    for (const ScheduleStage& st : schedule.stages)
        if (st.d_step_ps <= 0 || st.d_step_ps > st.t_w_ps || st.d_half_span_ps <= 0)
            throw std::invalid_argument("schedule stage requires 0 < d_step <= t_w and a span");

    PostselectOutcome out;
    TimePs center = 0;
    for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
        const ScheduleStage& st = schedule.stages[s];
        StageResult res;
        res.stage = st;
        res.hist = delay_histogram(a_times, b_times, center - st.d_half_span_ps,
                                   center + st.d_half_span_ps, st.d_step_ps, st.t_w_ps);
        res.peak = find_peak(res.hist);
        res.converged = res.peak.found && res.peak.prominence >= schedule.prominence_min &&
                        res.peak.peak_count >= schedule.min_peak_counts;
        out.stages.push_back(std::move(res));
        if (!out.stages.back().converged) {
            out.converged = false;
            out.failed_stage = s;
            return out;
        }
        center = out.stages.back().peak.d_peak_ps;
    }
    out.converged = true;
    out.d_final_ps = center;
    out.t_w_final_ps = schedule.stages.back().t_w_ps;
    out.pairs = extract_pairs(a_times, b_times, out.d_final_ps, out.t_w_final_ps);
    return out;
}

std::string write_histogram_csv(const DelayHistogram& h) {
    std::string out = "# t_w_ps: " + std::to_string(h.t_w_ps) + "\nd_ps,n_c\n";
    char buf[64];
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        char* p = buf;
        auto r1 = std::to_chars(p, p + 24, h.d_at(i));
        p = r1.ptr;
        *p++ = ',';
        auto r2 = std::to_chars(p, p + 24, h.counts[i]);
        p = r2.ptr;
        *p++ = '\n';
        out.append(buf, p);
    }
    return out;
}

std::string write_pairs_csv(const CoincidenceSet& set) {
    const bool with_pulse = set.method == MatchMethod::PulseMatch;
    std::string out = with_pulse ? "index_a,index_b,dt_ps,pulse_number\n" : "index_a,index_b,dt_ps\n";
    char buf[120];
    for (const PairRecord& pr : set.pairs) {
        char* p = buf;
        auto put = [&p](std::int64_t v) {
            auto r = std::to_chars(p, p + 24, v);
            p = r.ptr;
        };
        put(pr.index_a);
        *p++ = ',';
        put(pr.index_b);
        *p++ = ',';
        put(pr.dt_ps);
        if (with_pulse) {
            *p++ = ',';
            put(pr.pulse_number);
        }
        *p++ = '\n';
        out.append(buf, p);
    }
    return out;
}

}  // namespace pulsebell
