// Acceptance suite: one pass/fail line per criterion, exit 1 on any
// failure. Statistical criteria run at fixed seeds; every threshold is
// written out next to the check it gates.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>
#include <vector>

#include "pulsebell/bell.hpp"
#include "pulsebell/orchestrator.hpp"
#include "pulsebell/postselect.hpp"
#include "pulsebell/pulsematch.hpp"
#include "pulsebell/rng.hpp"
#include "pulsebell/sim.hpp"
#include "pulsebell/timetag.hpp"

using namespace pulsebell;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void report_error(int criterion, const std::string& what, const std::string& error) {
    report(criterion, false, what, "exception: " + error);
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// criteria 1-3: four reference-regime runs, both analyses

struct ReferenceRegimeResults {
    std::array<OutcomeCounts, 4> pulse_counts;
    std::array<OutcomeCounts, 4> post_counts;
    std::int64_t pulse_nc = 0;
    std::int64_t post_nc = 0;
    RecoveryStats pulse_recovery;
    RecoveryStats post_recovery;
    bool post_converged = true;
    double min_prominence = 1e9;
    std::int64_t singles_a_run0 = 0;
    std::int64_t singles_b_run0 = 0;
    double pulse_seconds = 0.0;  // simulate + pulse-match + tally time
};

ReferenceRegimeResults run_reference_regime() {
    ReferenceRegimeResults out;
    const AnalyzerSetting quad[4] = {{0, 22.5}, {0, 67.5}, {45, 22.5}, {45, 67.5}};
    auto offset_rng = substream(20230705, 900);
    std::uniform_real_distribution<double> off_ms(0.0, 10.0);
    const PostselectSchedule sched = truncate_schedule(default_schedule(), 100'000);

    for (int r = 0; r < 4; ++r) {
        SimConfig cfg = reference_regime_config();
        cfg.setting = quad[r];
        cfg.clock_a.start_offset_ps = static_cast<TimePs>(off_ms(offset_rng) * 1e9);
        cfg.clock_b.start_offset_ps = static_cast<TimePs>(off_ms(offset_rng) * 1e9);
        const std::uint64_t seed = 7000 + static_cast<std::uint64_t>(r);

        const auto t0 = std::chrono::steady_clock::now();
        const SimResult sim = simulate_run(cfg, seed);
        const StreamMatch match = match_streams(sim.a, sim.b);
        out.pulse_counts[r] = tally_outcomes(sim.a, sim.b, match.pairs, cfg.setting);
        out.pulse_counts[r].setting = cfg.setting;
        out.pulse_nc += static_cast<std::int64_t>(match.pairs.pairs.size());
        {
            const RecoveryStats s = recovery_by_tag_index(sim.truth, match.pairs);
            out.pulse_recovery.truth_pairs += s.truth_pairs;
            out.pulse_recovery.recovered += s.recovered;
            out.pulse_recovery.matched_total += s.matched_total;
        }
        const auto t1 = std::chrono::steady_clock::now();
        out.pulse_seconds += std::chrono::duration<double>(t1 - t0).count();

        if (r == 0) {
            for (const TruthEvent& e : sim.truth.events) {
                if (e.pulse_index < 0 || e.pulse_index >= cfg.n_run) continue;
                if (e.outcome_a) ++out.singles_a_run0;
                if (e.outcome_b) ++out.singles_b_run0;
            }
        }

        // classical post-selection on the same streams at T_w = 100 ns
        const auto det_a = sim.a.detection_indices();
        const auto det_b = sim.b.detection_indices();
        std::vector<TimePs> ta, tb;
        ta.reserve(det_a.size());
        tb.reserve(det_b.size());
        for (auto i : det_a) ta.push_back(sim.a.tags[static_cast<std::size_t>(i)].time_ps);
        for (auto i : det_b) tb.push_back(sim.b.tags[static_cast<std::size_t>(i)].time_ps);
        PostselectOutcome post = iterate_postselect(ta, tb, sched);
        if (!post.converged) {
            out.post_converged = false;
            continue;
        }
        out.min_prominence = std::min(out.min_prominence, post.stages[0].peak.prominence);
        for (PairRecord& p : post.pairs.pairs) {
            p.index_a = det_a[static_cast<std::size_t>(p.index_a)];
            p.index_b = det_b[static_cast<std::size_t>(p.index_b)];
        }
        out.post_counts[r] = tally_outcomes(sim.a, sim.b, post.pairs, cfg.setting);
        out.post_counts[r].setting = cfg.setting;
        out.post_nc += static_cast<std::int64_t>(post.pairs.pairs.size());
        {
            const RecoveryStats s = recovery_by_tag_index(sim.truth, post.pairs);
            out.post_recovery.truth_pairs += s.truth_pairs;
            out.post_recovery.recovered += s.recovered;
            out.post_recovery.matched_total += s.matched_total;
        }
    }
    return out;
}

ChshResult chsh_from(const std::array<OutcomeCounts, 4>& counts) {
    return chsh_S(correlation_E(counts[0]), correlation_E(counts[1]), correlation_E(counts[2]),
                  correlation_E(counts[3]));
}

// ---------------------------------------------------------------------------

void criteria_1_2_3() {
    const char* what1 = "reference-regime S via pulse matching, 2.772 +- 0.06, runtime < 60 s";
    const char* what2 = "post-selection at T_w=100 ns degrades S by >= 0.2";
    const char* what3 = "pulse matching recovers >= 99%, post-selection < 50%, ratio in (0,0.5)";
    try {
        const ReferenceRegimeResults r = run_reference_regime();

        const ChshResult pulse_s = chsh_from(r.pulse_counts);
        const double singles_dev_a = std::abs(static_cast<double>(r.singles_a_run0) - 115'861.0);
        const double singles_dev_b = std::abs(static_cast<double>(r.singles_b_run0) - 108'874.0);
        const bool singles_ok = singles_dev_a < 3.0 * std::sqrt(115'861.0) &&
                                singles_dev_b < 3.0 * std::sqrt(108'874.0);
        const bool s_ok = std::abs(pulse_s.s - 2.772) <= 0.06;
        const bool time_ok = r.pulse_seconds < 60.0;
        report(1, s_ok && time_ok && singles_ok, what1,
               "S=" + fmt(pulse_s.s) + "+-" + fmt(pulse_s.sigma_s) + ", singles run0 " +
                   std::to_string(r.singles_a_run0) + "/" + std::to_string(r.singles_b_run0) +
                   " vs 115861/108874, elapsed " + fmt(r.pulse_seconds, 1) + " s");

        if (!r.post_converged) {
            report(2, false, what2, "post-selection failed to converge at 100 ns");
            report(3, false, what3, "post-selection failed to converge at 100 ns");
            return;
        }
        const ChshResult post_s = chsh_from(r.post_counts);
        const double gap = pulse_s.s - post_s.s;
        report(2, gap >= 0.2, what2,
               "S_pulse=" + fmt(pulse_s.s) + " S_post=" + fmt(post_s.s) + " gap=" + fmt(gap) +
                   ", min stage-1 prominence " + fmt(r.min_prominence, 1));

        const double pulse_frac = r.pulse_recovery.recovery_fraction();
        const double post_frac = r.post_recovery.recovery_fraction();
        const double ratio =
            static_cast<double>(r.post_nc) / static_cast<double>(std::max<std::int64_t>(1, r.pulse_nc));
        const bool ok3 = pulse_frac >= 0.99 && post_frac < 0.5 && ratio > 0.0 && ratio < 0.5;
        report(3, ok3, what3,
               "pulse recovery " + fmt(pulse_frac) + " (" + std::to_string(r.pulse_recovery.recovered) +
                   "/" + std::to_string(r.pulse_recovery.truth_pairs) + "), post recovery " +
                   fmt(post_frac) + ", N_c ratio " + fmt(ratio) + " (" + std::to_string(r.post_nc) +
                   "/" + std::to_string(r.pulse_nc) + ")");
    } catch (const std::exception& e) {
        report_error(1, what1, e.what());
        report_error(2, what2, e.what());
        report_error(3, what3, e.what());
    }
}

void criterion_4() {
    const char* what = "start-offset recovery within one period over 100 draws; 9.54 ms pinned";
    try {
        // synthetic reconstruction of the quoted step counts
        const FrequencyPlan plan{490'000, 500'000, 1000, std::nullopt};
        const auto train_a = trigger_train(plan, 478'112, 20);
        const auto train_b = trigger_train(plan, 473'342, 20);
        const StartOffset quoted =
            start_offset(detect_step(train_a, plan), detect_step(train_b, plan), plan);
        const bool pinned_ok = quoted.offset_count_based_ps == 9'540'000'000LL &&
                               quoted.pulse_count_a == 478'113 && quoted.pulse_count_b == 473'343;

        SimConfig cfg = reference_regime_config();
        cfg.source = SourceParams{};  // triggers are all this criterion needs
        cfg.source.p_pair = 0.0;
        cfg.n_pre = 5'500;
        cfg.n_run = 60;

        auto rng = substream(424241, 4);
        std::uniform_real_distribution<double> off(-10e9, 10e9);  // ps
        TimePs worst = 0;
        bool all_ok = true;
        for (int i = 0; i < 100; ++i) {
            const auto injected = static_cast<TimePs>(off(rng));
            cfg.clock_a.start_offset_ps = injected < 0 ? -injected : 0;
            cfg.clock_b.start_offset_ps = injected > 0 ? injected : 0;
            const SimResult sim = simulate_run(cfg, 500 + static_cast<std::uint64_t>(i));
            const StartOffset got =
                start_offset(detect_step(sim.a.channel_times(Channel::Trigger), plan),
                             detect_step(sim.b.channel_times(Channel::Trigger), plan), plan);
            const TimePs err = std::llabs(got.offset_time_based_ps - injected);
            worst = std::max(worst, err);
            if (err > 2'000'000) all_ok = false;
        }
        report(4, pinned_ok && all_ok, what,
               "worst recovery error " + std::to_string(worst) + " ps, synthetic count diff " +
                   std::to_string(quoted.pulse_count_diff) + " -> " +
                   std::to_string(quoted.offset_count_based_ps) + " ps");
    } catch (const std::exception& e) {
        report_error(4, what, e.what());
    }
}

namespace oracle {
// independent O(n^2) greedy matcher, duplicated here on purpose
std::int64_t count(const std::vector<TimePs>& a, const std::vector<TimePs>& b, TimePs d,
                   TimePs t_w) {
    std::vector<bool> used(b.size(), false);
    std::int64_t n = 0;
    for (TimePs ta : a) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (used[j]) continue;
            const TimePs diff = ta - (b[j] + d);
            if (diff < -t_w) break;
            if (diff <= t_w) {
                used[j] = true;
                ++n;
                break;
            }
        }
    }
    return n;
}
}  // namespace oracle

void criterion_5() {
    const char* what = "coincidence_count equals the O(n^2) greedy oracle on 1000 instances";
    try {
        std::mt19937_64 rng(777001);
        std::uniform_int_distribution<TimePs> span(0, 3000);
        std::uniform_int_distribution<TimePs> d_dist(-600, 600);
        std::uniform_int_distribution<TimePs> w_dist(0, 250);
        int mismatches = 0;
        for (int iter = 0; iter < 1000; ++iter) {
            std::vector<TimePs> a(rng() % 200), b(rng() % 200);
            for (auto& t : a) t = span(rng);
            for (auto& t : b) t = span(rng);
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            const TimePs d = d_dist(rng), w = w_dist(rng);
            if (coincidence_count(a, b, d, w) != oracle::count(a, b, d, w)) ++mismatches;
        }
        report(5, mismatches == 0, what, std::to_string(mismatches) + " mismatches");
    } catch (const std::exception& e) {
        report_error(5, what, e.what());
    }
}

void criterion_6() {
    const char* what = "histogram argmax at the injected delay; flat on uncorrelated streams";
    try {
        std::mt19937_64 rng(606060);
        std::uniform_int_distribution<TimePs> span(0, 1'000'000'000);
        std::vector<TimePs> a(5000);
        for (auto& t : a) t = span(rng);
        std::sort(a.begin(), a.end());
        const TimePs shift = 7'000'000;
        std::vector<TimePs> b;
        for (TimePs t : a) b.push_back(t + shift);
        const DelayHistogram h = delay_histogram(a, b, -10'000'000, 10'000'000, 100'000, 50'000);
        const PeakInfo peak = find_peak(h);
        const bool argmax_ok = peak.found && std::llabs(peak.d_peak_ps - (-shift)) <= 100'000;

        std::vector<TimePs> u1(10'000), u2(10'000);
        for (auto& t : u1) t = span(rng);
        for (auto& t : u2) t = span(rng);
        std::sort(u1.begin(), u1.end());
        std::sort(u2.begin(), u2.end());
        const DelayHistogram hf = delay_histogram(u1, u2, -50'000, 50'000, 500, 500);
        const PeakInfo flat = find_peak(hf);
        const bool flat_ok = flat.found && flat.prominence < 2.0;
        report(6, argmax_ok && flat_ok, what,
               "argmax " + std::to_string(peak.d_peak_ps) + " vs " + std::to_string(-shift) +
                   ", uncorrelated prominence " + fmt(flat.prominence, 2));
    } catch (const std::exception& e) {
        report_error(6, what, e.what());
    }
}

void criterion_7() {
    const char* what = "simulated E at (0,22.5): 1/sqrt(2) at V=1 and 0 at V=0, 3 sigma";
    try {
        const int n = 100'000;
        double e[2];
        const double vis[2] = {1.0, 0.0};
        for (int k = 0; k < 2; ++k) {
            auto rng = substream(70707, static_cast<std::uint64_t>(k));
            std::int64_t same = 0;
            for (int i = 0; i < n; ++i) {
                const auto [oa, ob] = sample_outcomes({0.0, 22.5}, vis[k], rng);
                if (oa == ob) ++same;
            }
            e[k] = 2.0 * static_cast<double>(same) / n - 1.0;
        }
        const double target = 1.0 / std::sqrt(2.0);
        const double sig1 = std::sqrt((1.0 - target * target) / n);
        const double sig0 = std::sqrt(1.0 / n);
        const bool ok = std::abs(e[0] - target) < 3 * sig1 && std::abs(e[1]) < 3 * sig0;
        report(7, ok, what,
               "E(V=1)=" + fmt(e[0]) + " vs " + fmt(target) + ", E(V=0)=" + fmt(e[1]));
    } catch (const std::exception& e) {
        report_error(7, what, e.what());
    }
}

void criterion_8() {
    const char* what = "accidentals: same-pulse matches within 3 sigma of n*p_a*p_b ~ 2796";
    try {
        SimConfig cfg = reference_regime_config();
        cfg.n_pre = 500;
        cfg.source = SourceParams{};
        cfg.source.p_pair = 0.0;
        cfg.source.p_single_a = 115'861.0 / 4'511'169.0;
        cfg.source.p_single_b = 108'874.0 / 4'511'169.0;
        const SimResult sim = simulate_run(cfg, 888);
        const StreamMatch m = match_streams(sim.a, sim.b);
        const double expected =
            accidental_estimate(cfg.n_run, cfg.source.p_single_a, cfg.source.p_single_b);
        const double sigma = std::sqrt(expected);
        const auto got = static_cast<double>(m.pairs.pairs.size());
        report(8, std::abs(got - expected) < 3 * sigma, what,
               std::to_string(m.pairs.pairs.size()) + " matches vs " + fmt(expected, 1) + " +- " +
                   fmt(sigma, 1));
    } catch (const std::exception& e) {
        report_error(8, what, e.what());
    }
}

// matched pairs keyed by invariant identities (true emission times), so
// sets from runs with different trigger losses compare exactly
std::set<std::tuple<std::int64_t, TimePs, TimePs>> truth_keyed_pairs(const SimResult& sim,
                                                                     const CoincidenceSet& set) {
    std::map<std::int64_t, TimePs> true_a, true_b;
    for (const TruthEvent& e : sim.truth.events) {
        if (e.tag_index_a >= 0) true_a[e.tag_index_a] = e.true_time_a_ps;
        if (e.tag_index_b >= 0) true_b[e.tag_index_b] = e.true_time_b_ps;
    }
    std::set<std::tuple<std::int64_t, TimePs, TimePs>> keys;
    for (const PairRecord& p : set.pairs)
        keys.insert({p.pulse_number, true_a.at(p.index_a), true_b.at(p.index_b)});
    return keys;
}

void criterion_9() {
    const char* what = "1% trigger loss with chirp: numbering exact, coincidence set unchanged";
    try {
        SimConfig cfg = reference_regime_config();
        cfg.plan.chirp = ChirpSpec{1000, 1.0};
        cfg.n_pre = 5000;
        cfg.n_run = 1'000'000;
        cfg.clock_a.start_offset_ps = 2'000'000;
        cfg.clock_b.start_offset_ps = 7'000'000;

        SimConfig lossless = cfg;
        lossless.trigger_loss = 0.0;
        SimConfig lossy = cfg;
        lossy.trigger_loss = 0.01;

        const SimResult clean = simulate_run(lossless, 909);
        const SimResult dropped = simulate_run(lossy, 909);
        const StreamMatch m_clean = match_streams(clean.a, clean.b);
        const StreamMatch m_drop = match_streams(dropped.a, dropped.b);

        // numbering correctness: every assigned detection agrees with truth
        std::int64_t misnumbered = 0;
        for (const TagStream* stream : {&dropped.a, &dropped.b}) {
            const bool is_a = stream->station == Station::A;
            const auto det_idx = stream->detection_indices();
            std::vector<TimePs> times;
            for (auto i : det_idx) times.push_back(stream->tags[static_cast<std::size_t>(i)].time_ps);
            const auto& numbering = is_a ? m_drop.numbering_a : m_drop.numbering_b;
            const PulseAssignment assign = assign_pulses(times, numbering, cfg.plan);
            std::map<std::int64_t, std::int64_t> truth_map;
            for (const TruthEvent& e : dropped.truth.events) {
                const std::int64_t idx = is_a ? e.tag_index_a : e.tag_index_b;
                if (idx >= 0) truth_map[idx] = e.pulse_index;
            }
            for (std::size_t k = 0; k < det_idx.size(); ++k)
                if (assign.assigned(k) &&
                    assign.entries[k].pulse_number != truth_map.at(det_idx[k]))
                    ++misnumbered;
        }

        const auto keys_clean = truth_keyed_pairs(clean, m_clean.pairs);
        const auto keys_drop = truth_keyed_pairs(dropped, m_drop.pairs);
        const std::size_t recovered_pulses =
            m_drop.numbering_a.recovered_pulses.size() + m_drop.numbering_b.recovered_pulses.size();
        const bool ok = misnumbered == 0 && keys_clean == keys_drop && recovered_pulses > 10'000;
        report(9, ok, what,
               std::to_string(keys_clean.size()) + " pairs in both sets, " +
                   std::to_string(recovered_pulses) + " pulses bridged, " +
                   std::to_string(misnumbered) + " misnumbered");
    } catch (const std::exception& e) {
        report_error(9, what, e.what());
    }
}

void criterion_10() {
    const char* what = "drift up to 1e-6 / wander 10 us: pulse set exact, 2 ns window loses >50%";
    try {
        SimConfig base = reference_regime_config();
        base.n_pre = 3000;
        base.n_run = 1'000'000;
        base.clock_a = ClockModel{};
        base.clock_b = ClockModel{};
        base.clock_a.tag_jitter_sigma_ps = 2000;
        base.clock_b.tag_jitter_sigma_ps = 2000;

        const SimResult ref = simulate_run(base, 1010);
        const StreamMatch m_ref = match_streams(ref.a, ref.b);
        std::set<std::array<std::int64_t, 3>> ref_keys;
        for (const PairRecord& p : m_ref.pairs.pairs)
            ref_keys.insert({p.pulse_number, p.index_a, p.index_b});

        struct Variant {
            double rate_a, rate_b, wander_a_ps, wander_a_s, wander_b_ps, wander_b_s;
        };
        const Variant variants[] = {
            {1e-6, -1e-6, 0, 0, 0, 0},
            {0, 0, 10'000'000, 1.0, 0, 0},
            {6e-7, -6e-7, 5'000'000, 2.0, 3'000'000, 3.0},
        };
        bool sets_equal = true;
        std::size_t post_best = 0;
        for (const Variant& v : variants) {
            SimConfig cfg = base;
            cfg.clock_a.rate_error = v.rate_a;
            cfg.clock_b.rate_error = v.rate_b;
            cfg.clock_a.wander_amp_ps = v.wander_a_ps;
            cfg.clock_a.wander_period_s = v.wander_a_s;
            cfg.clock_b.wander_amp_ps = v.wander_b_ps;
            cfg.clock_b.wander_period_s = v.wander_b_s;
            const SimResult sim = simulate_run(cfg, 1010);
            const StreamMatch m = match_streams(sim.a, sim.b);
            std::set<std::array<std::int64_t, 3>> keys;
            for (const PairRecord& p : m.pairs.pairs)
                keys.insert({p.pulse_number, p.index_a, p.index_b});
            if (keys != ref_keys) sets_equal = false;

            // best-case 2 ns post-selection on the drifted streams: scan
            // the whole plausible delay range and keep the maximum
            const auto det_a = sim.a.detection_indices();
            const auto det_b = sim.b.detection_indices();
            std::vector<TimePs> ta, tb;
            for (auto i : det_a) ta.push_back(sim.a.tags[static_cast<std::size_t>(i)].time_ps);
            for (auto i : det_b) tb.push_back(sim.b.tags[static_cast<std::size_t>(i)].time_ps);
            const DelayHistogram h = delay_histogram(ta, tb, -25'000'000, 25'000'000, 2'000, 2'000);
            const PeakInfo peak = find_peak(h);
            post_best = std::max(post_best,
                                 peak.found ? static_cast<std::size_t>(peak.peak_count) : 0);
        }
        const bool post_ok =
            static_cast<double>(post_best) < 0.5 * static_cast<double>(ref_keys.size());
        report(10, sets_equal && post_ok, what,
               std::to_string(ref_keys.size()) + " reference pairs, best 2 ns window holds " +
                   std::to_string(post_best));
    } catch (const std::exception& e) {
        report_error(10, what, e.what());
    }
}

void criterion_11() {
    const char* what = "orchestrated end-to-end over both transports; missing Ready aborts cleanly";
    try {
        const fs::path dir = fs::temp_directory_path() / "pulsebell_acceptance_orch";
        fs::remove_all(dir);
        fs::create_directories(dir);

        RunScript script;
        script.sim.plan = {490'000, 500'000, 1000, std::nullopt};
        script.sim.source.p_pair = 0.1;
        script.sim.source.eta_a = 0.35;
        script.sim.source.eta_b = 0.35;
        script.sim.source.p_single_a = 0.001;
        script.sim.source.p_single_b = 0.001;
        script.sim.source.visibility = 0.9802;
        script.sim.clock_a.tag_jitter_sigma_ps = 2000;
        script.sim.clock_b.tag_jitter_sigma_ps = 2000;
        script.sim.clock_a.rate_error = 6e-8;
        script.sim.clock_b.rate_error = -6e-8;
        script.duration_s = 0.3;

        const AnalyzerSetting quad[4] = {{0, 22.5}, {0, 67.5}, {45, 22.5}, {45, 67.5}};
        bool transports_ok = true;
        double s_values[2] = {0, 0};
        for (int t = 0; t < 2; ++t) {
            const TransportKind kind = t == 0 ? TransportKind::Inproc : TransportKind::Socket;
            std::array<OutcomeCounts, 4> counts;
            for (int r = 0; r < 4; ++r) {
                RunScript rs = script;
                rs.sim.run_id = "acc" + std::to_string(r);
                rs.sim.setting = quad[r];
                const fs::path out = dir / ("t" + std::to_string(t));
                const RunOutcome outcome =
                    orchestrate(rs, 6000 + static_cast<std::uint64_t>(r), kind, out.string());
                if (!outcome.ok) {
                    transports_ok = false;
                    break;
                }
                const TagStream a = read_tag_file_from(outcome.file_a);
                const TagStream b = read_tag_file_from(outcome.file_b);
                const StreamMatch m = match_streams(a, b);  // no delay scan anywhere
                counts[r] = tally_outcomes(a, b, m.pairs, quad[r]);
                counts[r].setting = quad[r];
            }
            if (!transports_ok) break;
            s_values[t] = chsh_from(counts).s;
        }
        const bool s_ok = transports_ok && s_values[0] > 2.5 && s_values[1] > 2.5;

        // forced missing Ready
        RunScript abort_script = script;
        abort_script.sim.run_id = "accabort";
        abort_script.ready_timeout_s = 0.3;
        const fs::path abort_dir = dir / "abort";
        fs::create_directories(abort_dir);
        SimulatedLab lab(abort_script, 61);
        auto [gen_c, gen_a] = make_inproc_pair();
        auto [a_c, a_a] = make_inproc_pair();
        auto [b_c, b_a] = make_inproc_pair();
        std::thread gen([&lab, ep = std::move(gen_a)]() mutable { run_generator_agent(lab, *ep); });
        std::thread sta([&lab, &abort_dir, ep = std::move(a_a)]() mutable {
            run_station_agent(Station::A, lab, *ep, abort_dir.string());
        });
        std::thread stb([ep = std::move(b_a)]() mutable {
            while (auto m = ep->receive(std::chrono::milliseconds(100)))
                if (m->type == ControlMessage::Type::Abort) return;
        });
        const RunOutcome aborted = coordinator_run(abort_script, lab, *gen_c, *a_c, *b_c);
        gen_c.reset();
        a_c.reset();
        b_c.reset();
        gen.join();
        sta.join();
        stb.join();
        const fs::path partial = abort_dir / "accabort_A.tags.partial";
        bool abort_ok = !aborted.ok && aborted.missing_party == "B" && fs::exists(partial);
        if (abort_ok) {
            const TagStream p = read_tag_file_from(partial.string());
            abort_ok = !p.tags.empty();
        }

        report(11, s_ok && abort_ok, what,
               "S inproc " + fmt(s_values[0]) + ", socket " + fmt(s_values[1]) +
                   ", abort names B with partial file " + (abort_ok ? "closed" : "missing"));
    } catch (const std::exception& e) {
        report_error(11, what, e.what());
    }
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    criteria_1_2_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    criterion_11();
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d criteria failed; suite took %.1f s\n", g_failures, elapsed);
    return g_failures == 0 ? 0 : 1;
}
