#include "pulsebell/sim.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pulsebell/log.hpp"
#include "pulsebell/rng.hpp"

namespace pulsebell {

namespace {

// Sub-stream tags; dropout and trigger jitter are separate so toggling
// them never shifts the source or arm draws.
enum : std::uint64_t {
    kStreamSource = 1,
    kStreamArmA = 2,
    kStreamArmB = 3,
    kStreamDropA = 4,
    kStreamDropB = 5,
    kStreamTrigJitterA = 6,
    kStreamTrigJitterB = 7,
};

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

Channel outcome_channel(Outcome o) { return o == Outcome::One ? Channel::Out1 : Channel::Out0; }

const char* origin_name(Origin o) {
    switch (o) {
        case Origin::Pair: return "pair";
        case Origin::SingleA: return "single_a";
        case Origin::SingleB: return "single_b";
    }
    return "?";
}

std::optional<Origin> origin_from_name(std::string_view name) {
    if (name == "pair") return Origin::Pair;
    if (name == "single_a") return Origin::SingleA;
    if (name == "single_b") return Origin::SingleB;
    return std::nullopt;
}

TimePs ClockModel::to_local(TimePs true_time_ps) const {
    const TimePs rel = true_time_ps - start_offset_ps;
    assert(rel >= 0 && "station records nothing before its start");
    double correction = static_cast<double>(rel) * rate_error;
    if (wander_amp_ps != 0.0) {
        const double period_ps = wander_period_s * static_cast<double>(kPsPerSecond);
        correction += wander_amp_ps * std::sin(kTwoPi * static_cast<double>(rel) / period_ps);
    }
    return rel + static_cast<TimePs>(std::llround(correction));
}

std::int64_t GroundTruth::detected_pair_count() const {
    std::int64_t n = 0;
    for (const TruthEvent& e : events)
        if (e.origin == Origin::Pair && e.outcome_a && e.outcome_b && e.pulse_index >= 0) ++n;
    return n;
}

std::vector<TimePs> trigger_train(const FrequencyPlan& plan, std::int64_t n_pre,
                                  std::int64_t n_run) {
    ValidationReport pr = validate_plan(plan);
    if (!pr.ok()) throw std::invalid_argument("invalid plan: " + pr.to_string());
    if (n_pre < 1 || n_run < 1) throw std::invalid_argument("n_pre and n_run must be >= 1");

    std::vector<TimePs> times;
    times.reserve(static_cast<std::size_t>(n_pre + n_run));

    const TimePs pre_period = plan.pre_period_ps();
    for (std::int64_t i = 0; i < n_pre; ++i) times.push_back(i * pre_period);

    const TimePs step_time = n_pre * pre_period;
    if (!plan.chirp) {
        const TimePs run_period = plan.run_period_ps();
        for (std::int64_t k = 0; k < n_run; ++k) times.push_back(step_time + k * run_period);
        return times;
    }

    // Chirped run segment: pulse k fires when the integrated instantaneous
    // frequency reaches k. Phase origin is the step trigger.
    const double f0 = static_cast<double>(plan.freq_run_hz);
    const double depth = static_cast<double>(plan.chirp->depth_hz);
    const double period = plan.chirp->period_s;
    auto phase = [&](double t) {
        return f0 * t + depth * period / kTwoPi * (1.0 - std::cos(kTwoPi * t / period));
    };
    auto freq = [&](double t) { return f0 + depth * std::sin(kTwoPi * t / period); };

    times.push_back(step_time);
    double t_prev = 0.0;
    TimePs acc = step_time;
    for (std::int64_t k = 1; k < n_run; ++k) {
        double t = t_prev + 1.0 / freq(t_prev);
        for (int it = 0; it < 6; ++it) {
            const double err = phase(t) - static_cast<double>(k);
            if (std::abs(err) < 1e-13 * static_cast<double>(k)) break;
            t -= err / freq(t);
        }
        // accumulate rounded per-gap increments so each gap matches the
        // instantaneous period to the ps
        acc += static_cast<TimePs>(std::llround((t - t_prev) * static_cast<double>(kPsPerSecond)));
        times.push_back(acc);
        t_prev = t;
    }
    return times;
}

std::pair<Outcome, Outcome> sample_outcomes(const AnalyzerSetting& setting, double visibility,
                                            std::mt19937_64& rng) {
    if (visibility < 0.0 || visibility > 1.0)
        throw std::invalid_argument("visibility must be in [0,1]");
    const double delta = (setting.alpha_deg - setting.beta_deg) * std::numbers::pi / 180.0;
    const double corr = visibility * std::cos(2.0 * delta);
    const double p_same = 0.25 * (1.0 + corr);  // each of (1,1) and (0,0)
    const double p_diff = 0.25 * (1.0 - corr);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < p_same) return {Outcome::One, Outcome::One};
    if (u < p_same + p_diff) return {Outcome::One, Outcome::Zero};
    if (u < p_same + 2.0 * p_diff) return {Outcome::Zero, Outcome::One};
    return {Outcome::Zero, Outcome::Zero};
}

DropResult drop_triggers(std::span<const TimePs> train, double loss_prob, std::mt19937_64& rng,
                         std::int64_t protected_index) {
    if (loss_prob < 0.0 || loss_prob >= 1.0)
        throw std::invalid_argument("loss_prob must be in [0,1)");
    DropResult out;
    out.kept.reserve(train.size());
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const bool lost = uni(rng) < loss_prob;
        if (lost && static_cast<std::int64_t>(i) != protected_index)
            out.dropped_indices.push_back(static_cast<std::int64_t>(i));
        else
            out.kept.push_back(train[i]);
    }
    return out;
}

namespace {

void validate_source(const SourceParams& s) {
    auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in01(s.p_pair) || !in01(s.eta_a) || !in01(s.eta_b) || !in01(s.p_single_a) ||
        !in01(s.p_single_b) || !in01(s.visibility))
        throw std::invalid_argument("source probabilities must be in [0,1]");
    const double det_a = s.p_pair * s.eta_a + s.p_single_a;
    const double det_b = s.p_pair * s.eta_b + s.p_single_b;
    if (det_a > 0.1 || det_b > 0.1)
        log_warn("per-pulse detection probability exceeds 0.1 (A=%.3f, B=%.3f); accidental "
                 "coincidences will not be small",
                 det_a, det_b);
}

void validate_clock(const ClockModel& c, const char* which) {
    if (std::abs(c.rate_error) >= 1e-3)
        throw std::invalid_argument(std::string("clock ") + which + ": |rate_error| must be < 1e-3");
    if (c.wander_amp_ps != 0.0 && c.wander_period_s <= 0.0)
        throw std::invalid_argument(std::string("clock ") + which +
                                    ": wander_period_s must be positive when wander_amp_ps is set");
    if (c.tag_jitter_sigma_ps < 0.0 || c.trigger_jitter_sigma_ps < 0.0)
        throw std::invalid_argument(std::string("clock ") + which + ": jitter sigma must be >= 0");
}

struct DetRecord {
    TimePs true_time;
    TimePs jitter_ps;
    std::int64_t event_index;
    Outcome outcome;
};

// Build one station's tag vector from its trigger times and detection
// records; fills the per-event tag indices as it goes.
void assemble_station(const std::vector<TimePs>& trigger_true, const ClockModel& clock,
                      std::vector<DetRecord>& dets, std::mt19937_64& trig_rng,
                      std::vector<TruthEvent>& events, bool is_a, TagStream& out) {
    // trigger tags
    std::vector<TimePs> trig_local;
    trig_local.reserve(trigger_true.size());
    std::normal_distribution<double> trig_jitter(0.0, std::max(clock.trigger_jitter_sigma_ps, 1e-30));
    for (TimePs t : trigger_true) {
        if (t < clock.start_offset_ps) continue;
        TimePs local = clock.to_local(t);
        if (clock.trigger_jitter_sigma_ps > 0.0)
            local += static_cast<TimePs>(std::llround(trig_jitter(trig_rng)));
        if (local >= 0) trig_local.push_back(local);
    }
    std::sort(trig_local.begin(), trig_local.end());
    // trigger inter-arrivals must stay positive even under trigger jitter
    for (std::size_t i = 1; i < trig_local.size(); ++i)
        if (trig_local[i] <= trig_local[i - 1]) trig_local[i] = trig_local[i - 1] + 1;

    // detection tags, split by outcome channel, deduplicated within channel
    struct LocalDet {
        TimePs local;
        std::int64_t event_index;
        Outcome outcome;
    };
    std::vector<LocalDet> local_dets;
    local_dets.reserve(dets.size());
    for (const DetRecord& d : dets) {
        if (d.true_time < clock.start_offset_ps) continue;
        const TimePs local = clock.to_local(d.true_time) + d.jitter_ps;
        if (local < 0) continue;  // before the TDC's epoch
        local_dets.push_back({local, d.event_index, d.outcome});
    }
    for (int pass = 0; pass < 2; ++pass) {
        const Outcome want = pass == 0 ? Outcome::One : Outcome::Zero;
        TimePs prev = -1;
        std::vector<LocalDet*> chan;
        for (LocalDet& d : local_dets)
            if (d.outcome == want) chan.push_back(&d);
        std::sort(chan.begin(), chan.end(), [](const LocalDet* x, const LocalDet* y) {
            return x->local != y->local ? x->local < y->local : x->event_index < y->event_index;
        });
        for (LocalDet* d : chan) {
            if (d->local <= prev) d->local = prev + 1;
            prev = d->local;
        }
    }
    std::sort(local_dets.begin(), local_dets.end(), [](const LocalDet& x, const LocalDet& y) {
        if (x.local != y.local) return x.local < y.local;
        return x.outcome == Outcome::One && y.outcome == Outcome::Zero;
    });

    // merge triggers and detections; at equal times the trigger sorts first
    out.tags.clear();
    out.tags.reserve(trig_local.size() + local_dets.size());
    std::size_t ti = 0, di = 0;
    while (ti < trig_local.size() || di < local_dets.size()) {
        const bool take_trigger =
            di == local_dets.size() ||
            (ti < trig_local.size() && trig_local[ti] <= local_dets[di].local);
        if (take_trigger) {
            out.tags.push_back({trig_local[ti], Channel::Trigger});
            ++ti;
        } else {
            const LocalDet& d = local_dets[di];
            const auto tag_index = static_cast<std::int64_t>(out.tags.size());
            out.tags.push_back({d.local, outcome_channel(d.outcome)});
            if (is_a)
                events[static_cast<std::size_t>(d.event_index)].tag_index_a = tag_index;
            else
                events[static_cast<std::size_t>(d.event_index)].tag_index_b = tag_index;
            ++di;
        }
    }
}

}  // namespace

SimResult simulate_run(const SimConfig& cfg, std::uint64_t seed) {
    const std::vector<TimePs> train = trigger_train(cfg.plan, cfg.n_pre, cfg.n_run);
    SimResult result = simulate_with_train(train, cfg.n_pre, cfg, seed);
    result.truth.n_pre = cfg.n_pre;
    result.truth.n_run = cfg.n_run;
    return result;
}

SimResult simulate_with_train(std::span<const TimePs> train, std::int64_t step_index,
                              const SimConfig& cfg, std::uint64_t seed) {
    ValidationReport pr = validate_plan(cfg.plan);
    if (!pr.ok()) throw std::invalid_argument("invalid plan: " + pr.to_string());
    validate_source(cfg.source);
    validate_clock(cfg.clock_a, "A");
    validate_clock(cfg.clock_b, "B");
    if (cfg.trigger_loss < 0.0 || cfg.trigger_loss >= 1.0)
        throw std::invalid_argument("trigger_loss must be in [0,1)");
    if (cfg.clock_a.start_offset_ps < 0 || cfg.clock_b.start_offset_ps < 0)
        throw std::invalid_argument("start offsets must be >= 0 (the true timeline starts at the first pulse)");
    if (step_index < 0 || step_index >= static_cast<std::int64_t>(train.size()))
        throw std::invalid_argument("step_index out of range");

    const TimePs on_ps = cfg.plan.pulse_on_ps();

    auto src_rng = substream(seed, kStreamSource);
    auto arm_a_rng = substream(seed, kStreamArmA);
    auto arm_b_rng = substream(seed, kStreamArmB);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> jit_a(0.0, std::max(cfg.clock_a.tag_jitter_sigma_ps, 1e-30));
    std::normal_distribution<double> jit_b(0.0, std::max(cfg.clock_b.tag_jitter_sigma_ps, 1e-30));

    SimResult result;
    result.truth.n_pre = step_index;
    result.truth.n_run = static_cast<std::int64_t>(train.size()) - step_index;
    std::vector<TruthEvent>& events = result.truth.events;

    std::vector<DetRecord> dets_a, dets_b;
    const double expected_rate = cfg.source.p_pair * (cfg.source.eta_a + cfg.source.eta_b) +
                                 cfg.source.p_single_a + cfg.source.p_single_b + 1e-6;
    const auto reserve_n = static_cast<std::size_t>(
        std::min(2.0e8, static_cast<double>(train.size()) * expected_rate * 1.2));
    dets_a.reserve(reserve_n);
    dets_b.reserve(reserve_n);
    events.reserve(2 * reserve_n);

    auto draw_jitter = [](std::normal_distribution<double>& dist, std::mt19937_64& rng,
                          double sigma) -> TimePs {
        if (sigma <= 0.0) return 0;
        return static_cast<TimePs>(std::llround(dist(rng)));
    };

    for (std::size_t i = 0; i < train.size(); ++i) {
        const TimePs pulse_start = train[i];
        const std::int64_t pulse_index = static_cast<std::int64_t>(i) - step_index;

        // entangled pair
        if (uni(src_rng) < cfg.source.p_pair) {
            const TimePs emit = pulse_start + static_cast<TimePs>(uni(src_rng) * static_cast<double>(on_ps));
            const auto [oa, ob] = sample_outcomes(cfg.setting, cfg.source.visibility, src_rng);
            const bool det_a = uni(arm_a_rng) < cfg.source.eta_a;
            const bool det_b = uni(arm_b_rng) < cfg.source.eta_b;
            if (det_a || det_b) {
                TruthEvent e;
                e.pulse_index = pulse_index;
                e.origin = Origin::Pair;
                e.true_time_a_ps = emit;
                e.true_time_b_ps = emit;
                const auto event_index = static_cast<std::int64_t>(events.size());
                if (det_a) {
                    e.outcome_a = oa;
                    dets_a.push_back({emit, draw_jitter(jit_a, arm_a_rng, cfg.clock_a.tag_jitter_sigma_ps),
                                      event_index, oa});
                }
                if (det_b) {
                    e.outcome_b = ob;
                    dets_b.push_back({emit, draw_jitter(jit_b, arm_b_rng, cfg.clock_b.tag_jitter_sigma_ps),
                                      event_index, ob});
                }
                events.push_back(e);
            }
        }

        // uncorrelated singles
        if (cfg.source.p_single_a > 0.0 && uni(arm_a_rng) < cfg.source.p_single_a) {
            const TimePs t = pulse_start + static_cast<TimePs>(uni(arm_a_rng) * static_cast<double>(on_ps));
            const Outcome o = uni(arm_a_rng) < 0.5 ? Outcome::One : Outcome::Zero;
            TruthEvent e;
            e.pulse_index = pulse_index;
            e.origin = Origin::SingleA;
            e.true_time_a_ps = t;
            e.outcome_a = o;
            dets_a.push_back({t, draw_jitter(jit_a, arm_a_rng, cfg.clock_a.tag_jitter_sigma_ps),
                              static_cast<std::int64_t>(events.size()), o});
            events.push_back(e);
        }
        if (cfg.source.p_single_b > 0.0 && uni(arm_b_rng) < cfg.source.p_single_b) {
            const TimePs t = pulse_start + static_cast<TimePs>(uni(arm_b_rng) * static_cast<double>(on_ps));
            const Outcome o = uni(arm_b_rng) < 0.5 ? Outcome::One : Outcome::Zero;
            TruthEvent e;
            e.pulse_index = pulse_index;
            e.origin = Origin::SingleB;
            e.true_time_b_ps = t;
            e.outcome_b = o;
            dets_b.push_back({t, draw_jitter(jit_b, arm_b_rng, cfg.clock_b.tag_jitter_sigma_ps),
                              static_cast<std::int64_t>(events.size()), o});
            events.push_back(e);
        }
    }

    // independent trigger dropout per station, step trigger protected
    auto drop_a_rng = substream(seed, kStreamDropA);
    auto drop_b_rng = substream(seed, kStreamDropB);
    const std::int64_t protect = cfg.allow_step_loss ? -1 : step_index;
    std::vector<TimePs> train_a, train_b;
    if (cfg.trigger_loss > 0.0) {
        train_a = drop_triggers(train, cfg.trigger_loss, drop_a_rng, protect).kept;
        train_b = drop_triggers(train, cfg.trigger_loss, drop_b_rng, protect).kept;
    } else {
        train_a.assign(train.begin(), train.end());
        train_b.assign(train.begin(), train.end());
    }

    auto trig_a_rng = substream(seed, kStreamTrigJitterA);
    auto trig_b_rng = substream(seed, kStreamTrigJitterB);

    result.a.station = Station::A;
    result.a.run_id = cfg.run_id;
    result.a.plan = cfg.plan;
    result.b.station = Station::B;
    result.b.run_id = cfg.run_id;
    result.b.plan = cfg.plan;
    assemble_station(train_a, cfg.clock_a, dets_a, trig_a_rng, events, true, result.a);
    assemble_station(train_b, cfg.clock_b, dets_b, trig_b_rng, events, false, result.b);

    // drop the outcome label for detections whose tag fell outside the
    // station's recording window
    for (TruthEvent& e : events) {
        if (e.tag_index_a < 0) e.outcome_a.reset();
        if (e.tag_index_b < 0) e.outcome_b.reset();
    }
    std::erase_if(events, [](const TruthEvent& e) { return !e.outcome_a && !e.outcome_b; });

    return result;
}

SimConfig reference_regime_config() {
    SimConfig cfg;
    cfg.run_id = "reference";
    cfg.plan = {490'000, 500'000, 1000, std::nullopt};
    cfg.source.p_pair = 0.3154;
    cfg.source.eta_a = 0.08112;
    cfg.source.eta_b = 0.07621;
    cfg.source.p_single_a = 1e-4;
    cfg.source.p_single_b = 1e-4;
    cfg.source.visibility = 0.9802;
    cfg.n_pre = 24'500;  // 50 ms of pre-run pulses
    cfg.n_run = 4'511'169;
    // Relative drift spans a few pulse periods over a run, the regime
    // where a delay scan shows a broad main peak with secondary peaks at
    // whole-period offsets. Sub-period drift would leave the 100 ns
    // delay-scan extraction almost pure and hide the method's advantage.
    cfg.clock_a.rate_error = 3.5e-7;
    cfg.clock_b.rate_error = -3.5e-7;
    cfg.clock_a.wander_amp_ps = 600'000;
    cfg.clock_a.wander_period_s = 5.0;
    cfg.clock_b.wander_amp_ps = 450'000;
    cfg.clock_b.wander_period_s = 5.7;
    cfg.clock_a.tag_jitter_sigma_ps = 2000;
    cfg.clock_b.tag_jitter_sigma_ps = 2000;
    return cfg;
}

std::string write_ground_truth_csv(const GroundTruth& truth) {
    std::string out = "pulse_index,origin,outcome_a,outcome_b,true_time_a_ps,true_time_b_ps\n";
    char buf[160];
    for (const TruthEvent& e : truth.events) {
        char* p = buf;
        auto put_int = [&p](std::int64_t v) {
            auto r = std::to_chars(p, p + 24, v);
            p = r.ptr;
        };
        put_int(e.pulse_index);
        *p++ = ',';
        for (const char* s = origin_name(e.origin); *s; ++s) *p++ = *s;
        *p++ = ',';
        if (e.outcome_a) *p++ = *e.outcome_a == Outcome::One ? '1' : '0';
        *p++ = ',';
        if (e.outcome_b) *p++ = *e.outcome_b == Outcome::One ? '1' : '0';
        *p++ = ',';
        if (e.true_time_a_ps >= 0) put_int(e.true_time_a_ps);
        *p++ = ',';
        if (e.true_time_b_ps >= 0) put_int(e.true_time_b_ps);
        *p++ = '\n';
        out.append(buf, p);
    }
    return out;
}

GroundTruth read_ground_truth_csv(const std::string& text) {
    GroundTruth truth;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "pulse_index,origin,outcome_a,outcome_b,true_time_a_ps,true_time_b_ps")
                throw std::runtime_error("ground truth CSV: bad column header");
            continue;
        }
        if (line.empty()) continue;
        std::array<std::string, 6> fields;
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field >= fields.size())
                    throw std::runtime_error("ground truth CSV line " + std::to_string(line_no) +
                                             ": too many fields");
                fields[field++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (field != fields.size())
            throw std::runtime_error("ground truth CSV line " + std::to_string(line_no) +
                                     ": expected 6 fields");
        TruthEvent e;
        e.pulse_index = std::stoll(fields[0]);
        auto origin = origin_from_name(fields[1]);
        if (!origin)
            throw std::runtime_error("ground truth CSV line " + std::to_string(line_no) +
                                     ": unknown origin '" + fields[1] + "'");
        e.origin = *origin;
        auto parse_outcome = [&](const std::string& f) -> std::optional<Outcome> {
            if (f.empty()) return std::nullopt;
            if (f == "1") return Outcome::One;
            if (f == "0") return Outcome::Zero;
            throw std::runtime_error("ground truth CSV line " + std::to_string(line_no) +
                                     ": bad outcome '" + f + "'");
        };
        e.outcome_a = parse_outcome(fields[2]);
        e.outcome_b = parse_outcome(fields[3]);
        e.true_time_a_ps = fields[4].empty() ? -1 : std::stoll(fields[4]);
        e.true_time_b_ps = fields[5].empty() ? -1 : std::stoll(fields[5]);
        truth.events.push_back(e);
    }
    return truth;
}

static std::string format_double_kv(double v) {
    char buf[64];
    auto res = std::to_chars(std::begin(buf), std::end(buf), v);
    return std::string(buf, res.ptr);
}

SimConfig read_sim_config(const KeyValueConfig& kv, const std::set<std::string>& extra_allowed) {
    std::set<std::string> allowed = {
        "run_id", "freq_pre_hz", "freq_run_hz", "pulse_on_ns", "chirp_depth_hz", "chirp_period_s",
        "p_pair", "eta_a", "eta_b", "p_single_a", "p_single_b", "visibility",
        "alpha_deg", "beta_deg", "n_pre", "n_run", "trigger_loss", "allow_step_loss", "seed",
        "start_offset_ps_a", "rate_error_a", "wander_amp_ps_a", "wander_period_s_a",
        "tag_jitter_sigma_ps_a", "trigger_jitter_sigma_ps_a",
        "start_offset_ps_b", "rate_error_b", "wander_amp_ps_b", "wander_period_s_b",
        "tag_jitter_sigma_ps_b", "trigger_jitter_sigma_ps_b"};
    allowed.insert(extra_allowed.begin(), extra_allowed.end());
    kv.require_known_keys(allowed);

    SimConfig d;  // defaults
    SimConfig cfg;
    cfg.run_id = kv.get_string("run_id", d.run_id);
    cfg.plan.freq_pre_hz = kv.get_int("freq_pre_hz", d.plan.freq_pre_hz);
    cfg.plan.freq_run_hz = kv.get_int("freq_run_hz", d.plan.freq_run_hz);
    cfg.plan.pulse_on_ns = kv.get_int("pulse_on_ns", d.plan.pulse_on_ns);
    if (kv.has("chirp_depth_hz") != kv.has("chirp_period_s"))
        throw std::runtime_error("config: chirp_depth_hz and chirp_period_s must appear together");
    if (kv.has("chirp_depth_hz"))
        cfg.plan.chirp = ChirpSpec{kv.get_int("chirp_depth_hz"), kv.get_double("chirp_period_s")};
    cfg.source.p_pair = kv.get_double("p_pair", 0.0);
    cfg.source.eta_a = kv.get_double("eta_a", 1.0);
    cfg.source.eta_b = kv.get_double("eta_b", 1.0);
    cfg.source.p_single_a = kv.get_double("p_single_a", 0.0);
    cfg.source.p_single_b = kv.get_double("p_single_b", 0.0);
    cfg.source.visibility = kv.get_double("visibility", 1.0);
    cfg.setting.alpha_deg = kv.get_double("alpha_deg", 0.0);
    cfg.setting.beta_deg = kv.get_double("beta_deg", 0.0);
    cfg.n_pre = kv.get_int("n_pre", 1);
    cfg.n_run = kv.get_int("n_run", 1);
    cfg.trigger_loss = kv.get_double("trigger_loss", 0.0);
    cfg.allow_step_loss = kv.get_int("allow_step_loss", 0) != 0;
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

    auto read_clock = [&kv](const char* suffix) {
        ClockModel c;
        std::string s = suffix;
        c.start_offset_ps = kv.get_int("start_offset_ps_" + s, 0);
        c.rate_error = kv.get_double("rate_error_" + s, 0.0);
        c.wander_amp_ps = kv.get_double("wander_amp_ps_" + s, 0.0);
        c.wander_period_s = kv.get_double("wander_period_s_" + s, 0.0);
        c.tag_jitter_sigma_ps = kv.get_double("tag_jitter_sigma_ps_" + s, 0.0);
        c.trigger_jitter_sigma_ps = kv.get_double("trigger_jitter_sigma_ps_" + s, 0.0);
        return c;
    };
    cfg.clock_a = read_clock("a");
    cfg.clock_b = read_clock("b");
    return cfg;
}

SimConfig read_sim_config_file(const std::string& path) {
    return read_sim_config(KeyValueConfig::from_file(path));
}

std::string write_sim_config(const SimConfig& cfg) {
    std::ostringstream os;
    os << "run_id=" << cfg.run_id << "\n";
    os << "freq_pre_hz=" << cfg.plan.freq_pre_hz << "\n";
    os << "freq_run_hz=" << cfg.plan.freq_run_hz << "\n";
    os << "pulse_on_ns=" << cfg.plan.pulse_on_ns << "\n";
    if (cfg.plan.chirp) {
        os << "chirp_depth_hz=" << cfg.plan.chirp->depth_hz << "\n";
        os << "chirp_period_s=" << format_double_kv(cfg.plan.chirp->period_s) << "\n";
    }
    os << "p_pair=" << format_double_kv(cfg.source.p_pair) << "\n";
    os << "eta_a=" << format_double_kv(cfg.source.eta_a) << "\n";
    os << "eta_b=" << format_double_kv(cfg.source.eta_b) << "\n";
    os << "p_single_a=" << format_double_kv(cfg.source.p_single_a) << "\n";
    os << "p_single_b=" << format_double_kv(cfg.source.p_single_b) << "\n";
    os << "visibility=" << format_double_kv(cfg.source.visibility) << "\n";
    os << "alpha_deg=" << format_double_kv(cfg.setting.alpha_deg) << "\n";
    os << "beta_deg=" << format_double_kv(cfg.setting.beta_deg) << "\n";
    os << "n_pre=" << cfg.n_pre << "\n";
    os << "n_run=" << cfg.n_run << "\n";
    os << "trigger_loss=" << format_double_kv(cfg.trigger_loss) << "\n";
    os << "allow_step_loss=" << (cfg.allow_step_loss ? 1 : 0) << "\n";
    os << "seed=" << cfg.seed << "\n";
    auto write_clock = [&os](const ClockModel& c, const char* s) {
        os << "start_offset_ps_" << s << "=" << c.start_offset_ps << "\n";
        os << "rate_error_" << s << "=" << format_double_kv(c.rate_error) << "\n";
        os << "wander_amp_ps_" << s << "=" << format_double_kv(c.wander_amp_ps) << "\n";
        os << "wander_period_s_" << s << "=" << format_double_kv(c.wander_period_s) << "\n";
        os << "tag_jitter_sigma_ps_" << s << "=" << format_double_kv(c.tag_jitter_sigma_ps) << "\n";
        os << "trigger_jitter_sigma_ps_" << s << "=" << format_double_kv(c.trigger_jitter_sigma_ps)
           << "\n";
    };
    write_clock(cfg.clock_a, "a");
    write_clock(cfg.clock_b, "b");
    return os.str();
}

}  // namespace pulsebell
