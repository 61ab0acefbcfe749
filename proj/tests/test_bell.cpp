#include <doctest.h>

#include <cmath>
#include <random>

#include "pulsebell/bell.hpp"
#include "pulsebell/pulsematch.hpp"
#include "pulsebell/rng.hpp"
#include "pulsebell/sim.hpp"

using namespace pulsebell;

namespace {

OutcomeCounts counts_of(std::int64_t n11, std::int64_t n10, std::int64_t n01, std::int64_t n00) {
    OutcomeCounts c;
    c.n11 = n11;
    c.n10 = n10;
    c.n01 = n01;
    c.n00 = n00;
    return c;
}

}  // namespace

TEST_CASE("correlation_E pinned examples") {
    SUBCASE("perfect correlation") {
        const EValue v = correlation_E(counts_of(50, 0, 0, 50));
        CHECK(v.e == doctest::Approx(1.0));
        CHECK(v.sigma == doctest::Approx(0.0));
    }
    SUBCASE("symmetric counts") {
        const EValue v = correlation_E(counts_of(25, 25, 25, 25));
        CHECK(v.e == doctest::Approx(0.0));
        CHECK(v.sigma == doctest::Approx(0.1));
    }
    SUBCASE("empty counts rejected") {
        CHECK_THROWS_AS(correlation_E(counts_of(0, 0, 0, 0)), std::invalid_argument);
    }
}

TEST_CASE("correlation_E sigma matches a multinomial bootstrap within 5%") {
    const OutcomeCounts counts = counts_of(500, 120, 180, 400);
    const EValue v = correlation_E(counts);
    const std::int64_t n = counts.total();
    const double p[4] = {static_cast<double>(counts.n11) / n, static_cast<double>(counts.n10) / n,
                         static_cast<double>(counts.n01) / n, static_cast<double>(counts.n00) / n};

    auto rng = substream(31337, 1);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int draws = 10'000;
    double sum = 0.0, sum2 = 0.0;
    for (int d = 0; d < draws; ++d) {
        std::int64_t m[4] = {0, 0, 0, 0};
        for (std::int64_t i = 0; i < n; ++i) {
            const double u = uni(rng);
            if (u < p[0])
                ++m[0];
            else if (u < p[0] + p[1])
                ++m[1];
            else if (u < p[0] + p[1] + p[2])
                ++m[2];
            else
                ++m[3];
        }
        const double e = static_cast<double>(m[0] + m[3] - m[1] - m[2]) / static_cast<double>(n);
        sum += e;
        sum2 += e * e;
    }
    const double boot_sigma = std::sqrt(sum2 / draws - (sum / draws) * (sum / draws));
    CHECK(v.sigma == doctest::Approx(boot_sigma).epsilon(0.05));
}

TEST_CASE("expected_E pinned examples") {
    CHECK(expected_E({0.0, 0.0}, 1.0) == doctest::Approx(1.0));
    CHECK(expected_E({0.0, 45.0}, 0.73) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(expected_E({0.0, 22.5}, 0.9802) == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("chsh_S pinned examples") {
    const double r2 = 1.0 / std::sqrt(2.0);
    SUBCASE("ideal quantum value") {
        const ChshResult r = chsh_S({r2, 0}, {-r2, 0}, {r2, 0}, {r2, 0});
        CHECK(r.s == doctest::Approx(2.0 * std::sqrt(2.0)));
        CHECK(r.sigma_s == doctest::Approx(0.0));
    }
    SUBCASE("all-zero correlations") {
        const ChshResult r = chsh_S({0, 0}, {0, 0}, {0, 0}, {0, 0});
        CHECK(r.s == doctest::Approx(0.0));
    }
    SUBCASE("canonical angles at V=0.9802 reach the 2.772 contrast ceiling") {
        const double v = 0.9802;
        const EValue e_ab{expected_E({0.0, 22.5}, v), 0.0};
        const EValue e_abp{expected_E({0.0, 67.5}, v), 0.0};
        const EValue e_apb{expected_E({45.0, 22.5}, v), 0.0};
        const EValue e_apbp{expected_E({45.0, 67.5}, v), 0.0};
        const ChshResult r = chsh_S(e_ab, e_abp, e_apb, e_apbp);
        CHECK(r.s == doctest::Approx(2.0 * std::sqrt(2.0) * v).epsilon(1e-12));
        CHECK(r.s == doctest::Approx(2.772).epsilon(2e-4));
    }
    SUBCASE("sigma combines in quadrature") {
        const ChshResult r = chsh_S({0, 0.1}, {0, 0.1}, {0, 0.1}, {0, 0.1});
        CHECK(r.sigma_s == doctest::Approx(0.2));
    }
}

TEST_CASE("chsh properties on random counts") {
    std::mt19937_64 rng(5150);
    std::uniform_int_distribution<std::int64_t> dist(0, 2000);
    for (int iter = 0; iter < 300; ++iter) {
        OutcomeCounts c = counts_of(dist(rng), dist(rng), dist(rng), dist(rng));
        if (c.total() == 0) c.n11 = 1;
        const EValue v = correlation_E(c);
        CHECK(std::abs(v.e) <= 1.0);

        // scaling invariance
        OutcomeCounts scaled = counts_of(c.n11 * 7, c.n10 * 7, c.n01 * 7, c.n00 * 7);
        CHECK(correlation_E(scaled).e == doctest::Approx(v.e));

        // relabeling both stations leaves E unchanged; one station flips the sign
        CHECK(correlation_E(counts_of(c.n00, c.n01, c.n10, c.n11)).e == doctest::Approx(v.e));
        CHECK(correlation_E(counts_of(c.n10, c.n11, c.n00, c.n01)).e == doctest::Approx(-v.e));

        // |S| <= 4 for any four count sets
        OutcomeCounts c2 = counts_of(dist(rng) + 1, dist(rng), dist(rng), dist(rng));
        OutcomeCounts c3 = counts_of(dist(rng), dist(rng) + 1, dist(rng), dist(rng));
        OutcomeCounts c4 = counts_of(dist(rng), dist(rng), dist(rng) + 1, dist(rng));
        const ChshResult r =
            chsh_S(correlation_E(c), correlation_E(c2), correlation_E(c3), correlation_E(c4));
        CHECK(std::abs(r.s) <= 4.0);

        // applying the b <-> b' argument permutation twice restores S
        const EValue e1 = correlation_E(c), e2 = correlation_E(c2), e3 = correlation_E(c3),
                     e4 = correlation_E(c4);
        auto perm = [](std::array<EValue, 4> e) {
            return std::array<EValue, 4>{e[1], e[0], e[3], e[2]};
        };
        const auto twice = perm(perm({e1, e2, e3, e4}));
        const ChshResult back = chsh_S(twice[0], twice[1], twice[2], twice[3]);
        CHECK(back.s == doctest::Approx(r.s));
    }
}

TEST_CASE("accidental_estimate") {
    CHECK(accidental_estimate(1'000'000, 0.0, 0.5) == doctest::Approx(0.0));
    // rates from a 4,511,169-pulse run with 115,861 and 108,874 singles
    const double n = 4'511'169.0;
    const double est = accidental_estimate(4'511'169, 115'861.0 / n, 108'874.0 / n);
    // independent arithmetic: 115861 * 108874 / 4511169
    const double direct = 115'861.0 * 108'874.0 / n;
    CHECK(est == doctest::Approx(direct).epsilon(1e-12));
    CHECK(est == doctest::Approx(2796.2).epsilon(1e-4));
}

TEST_CASE("simulated E converges to expected_E as N grows") {
    for (const double v : {1.0, 0.6}) {
        const AnalyzerSetting setting{0.0, 22.5};
        for (const int n : {10'000, 100'000}) {
            auto rng = substream(808, static_cast<std::uint64_t>(n));
            std::int64_t same = 0;
            for (int i = 0; i < n; ++i) {
                const auto [a, b] = sample_outcomes(setting, v, rng);
                if (a == b) ++same;
            }
            const double e = 2.0 * static_cast<double>(same) / n - 1.0;
            const double expect = expected_E(setting, v);
            const double sigma = std::sqrt((1.0 - expect * expect) / n);
            CHECK(std::abs(e - expect) < 3.0 * sigma);
        }
    }
}

TEST_CASE("tally_outcomes classifies pairs by tag channels") {
    TagStream a, b;
    a.station = Station::A;
    b.station = Station::B;
    a.run_id = b.run_id = "r";
    a.plan = b.plan = {490'000, 500'000, 1000, std::nullopt};
    a.tags = {{100, Channel::Out1}, {200, Channel::Out0}, {300, Channel::Out1}};
    b.tags = {{110, Channel::Out1}, {210, Channel::Out1}, {310, Channel::Out0}};
    CoincidenceSet set;
    set.pairs = {{0, 0, -10, -1}, {1, 1, -10, -1}, {2, 2, -10, -1}};
    const OutcomeCounts c = tally_outcomes(a, b, set, {0.0, 22.5});
    CHECK(c.n11 == 1);
    CHECK(c.n01 == 1);
    CHECK(c.n10 == 1);
    CHECK(c.n00 == 0);
}

TEST_CASE("recovery accounting by tag index and by pulse") {
    GroundTruth truth;
    TruthEvent pair1;
    pair1.pulse_index = 5;
    pair1.origin = Origin::Pair;
    pair1.outcome_a = Outcome::One;
    pair1.outcome_b = Outcome::Zero;
    pair1.tag_index_a = 10;
    pair1.tag_index_b = 20;
    TruthEvent pair2 = pair1;
    pair2.pulse_index = 9;
    pair2.tag_index_a = 11;
    pair2.tag_index_b = 21;
    TruthEvent single;
    single.pulse_index = 7;
    single.origin = Origin::SingleA;
    single.outcome_a = Outcome::One;
    single.tag_index_a = 12;
    truth.events = {pair1, pair2, single};

    CoincidenceSet set;
    set.method = MatchMethod::PulseMatch;
    set.pairs = {{10, 20, 0, 5}, {12, 21, 0, 7}};

    const RecoveryStats by_idx = recovery_by_tag_index(truth, set);
    CHECK(by_idx.truth_pairs == 2);
    CHECK(by_idx.recovered == 1);
    CHECK(by_idx.matched_total == 2);
    CHECK(by_idx.recovery_fraction() == doctest::Approx(0.5));

    const RecoveryStats by_pulse = recovery_by_pulse(truth, set);
    CHECK(by_pulse.truth_pairs == 2);
    CHECK(by_pulse.recovered == 1);
}

TEST_CASE("compare_report: identical inputs give identical columns and full overlap") {
    CoincidenceSet set;
    set.method = MatchMethod::PulseMatch;
    set.pairs = {{1, 2, 0, 3}, {4, 5, 0, 6}};

    MethodSummary post;
    post.name = "postselect";
    post.n_c = 2;
    MethodSummary pulse;
    pulse.name = "pulsematch";
    pulse.n_c = 2;

    const CompareReport r = compare_report(post, pulse, {&set}, {&set});
    CHECK(r.pair_overlap == doctest::Approx(1.0));
    const std::string text = r.to_text();
    CHECK(text.find("n_c\t2\t2") != std::string::npos);
    CHECK(text.find("pair_overlap\t1.0000") != std::string::npos);
}

TEST_CASE("compare_report: disjoint sets overlap zero") {
    CoincidenceSet s1, s2;
    s1.pairs = {{1, 2, 0, 3}};
    s2.pairs = {{7, 8, 0, 9}};
    MethodSummary post, pulse;
    const CompareReport r = compare_report(post, pulse, {&s1}, {&s2});
    CHECK(r.pair_overlap == doctest::Approx(0.0));
}

TEST_CASE("manifest parsing") {
    const std::string text =
        "# four settings\n"
        "alpha_deg,beta_deg,file_a,file_b\n"
        "0,22.5,runs/ab_A.tags,runs/ab_B.tags\n"
        "45,67.5,runs/apbp_A.tags,runs/apbp_B.tags\n";
    const std::vector<ManifestRow> rows = read_manifest(text);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].setting.alpha_deg == 0.0);
    CHECK(rows[0].setting.beta_deg == 22.5);
    CHECK(rows[0].file_a == "runs/ab_A.tags");
    CHECK(rows[1].setting.alpha_deg == 45.0);
    CHECK(rows[1].file_b == "runs/apbp_B.tags");

    CHECK_THROWS(read_manifest("alpha,beta\n"));
    CHECK_THROWS(read_manifest("alpha_deg,beta_deg,file_a,file_b\n1,2,only_three\n"));
    CHECK_THROWS(read_manifest("alpha_deg,beta_deg,file_a,file_b\nx,2,a,b\n"));
    CHECK_THROWS(read_manifest(""));
}

TEST_CASE("clean run: both methods' pair sets overlap at least 95%") {
    SimConfig cfg;
    cfg.plan = {490'000, 500'000, 1000, std::nullopt};
    cfg.n_pre = 5000;
    cfg.n_run = 250'000;
    cfg.source.p_pair = 0.05;
    cfg.source.eta_a = 0.5;
    cfg.source.eta_b = 0.5;
    cfg.source.p_single_a = 0.001;
    cfg.source.p_single_b = 0.001;
    cfg.source.visibility = 0.9802;
    cfg.clock_a.tag_jitter_sigma_ps = 2000;
    cfg.clock_b.tag_jitter_sigma_ps = 2000;
    cfg.clock_a.start_offset_ps = 1'000'000;
    cfg.clock_b.start_offset_ps = 3'000'000;
    const SimResult sim = simulate_run(cfg, 515);

    const StreamMatch pulse = match_streams(sim.a, sim.b);

    const auto det_a = sim.a.detection_indices();
    const auto det_b = sim.b.detection_indices();
    std::vector<TimePs> ta, tb;
    for (auto i : det_a) ta.push_back(sim.a.tags[static_cast<std::size_t>(i)].time_ps);
    for (auto i : det_b) tb.push_back(sim.b.tags[static_cast<std::size_t>(i)].time_ps);
    PostselectOutcome post =
        iterate_postselect(ta, tb, truncate_schedule(default_schedule(), 100'000));
    REQUIRE(post.converged);
    for (PairRecord& p : post.pairs.pairs) {
        p.index_a = det_a[static_cast<std::size_t>(p.index_a)];
        p.index_b = det_b[static_cast<std::size_t>(p.index_b)];
    }

    MethodSummary ps, pm;
    const CompareReport r = compare_report(ps, pm, {&post.pairs}, {&pulse.pairs});
    CHECK(r.pair_overlap >= 0.95);
}

TEST_CASE("simulator accidentals with entanglement off match the estimate") {
    SimConfig cfg;
    cfg.plan = {490'000, 500'000, 1000, std::nullopt};
    cfg.n_pre = 500;
    cfg.n_run = 500'000;
    cfg.source.p_single_a = 0.0257;
    cfg.source.p_single_b = 0.0241;
    const SimResult r = simulate_run(cfg, 606);
    std::int64_t same_pulse = 0;
    std::map<std::int64_t, int> a_pulses, b_pulses;
    for (const TruthEvent& e : r.truth.events) {
        if (e.pulse_index < 0) continue;
        if (e.outcome_a) a_pulses[e.pulse_index] = 1;
        if (e.outcome_b) b_pulses[e.pulse_index] = 1;
    }
    for (const auto& [pulse, _] : a_pulses) same_pulse += b_pulses.count(pulse);
    const double expected =
        accidental_estimate(cfg.n_run, cfg.source.p_single_a, cfg.source.p_single_b);
    CHECK(std::abs(static_cast<double>(same_pulse) - expected) < 3.0 * std::sqrt(expected));
}
