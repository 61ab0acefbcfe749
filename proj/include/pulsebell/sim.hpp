#pragma once

// Seeded two-station experiment simulator: pulsed pair source with
// polarization correlations, per-arm detection, independent station
// clocks, and trigger dropout. Produces both stations' tag streams plus
// ground-truth labels for every recorded detection.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pulsebell/config.hpp"
#include "pulsebell/timetag.hpp"

namespace pulsebell {

struct SourceParams {
    double p_pair = 0.0;      // per on-pulse probability a pair reaches both analyzers
    double eta_a = 1.0;       // detection efficiency, arm A
    double eta_b = 1.0;       // detection efficiency, arm B
    double p_single_a = 0.0;  // per-pulse uncorrelated single detection, arm A
    double p_single_b = 0.0;
    double visibility = 1.0;  // polarization correlation contrast V
};

// Maps true time to a station's local timestamps. The station's epoch is
// its own recording start: start_offset_ps shifts the start, not the
// timestamps. Wander phase is anchored at the recording start so local
// times stay non-negative and monotone.
struct ClockModel {
    TimePs start_offset_ps = 0;          // recording start on the true timeline
    double rate_error = 0.0;             // fractional clock rate deviation
    double wander_amp_ps = 0.0;          // sinusoidal deviation amplitude
    double wander_period_s = 0.0;
    double tag_jitter_sigma_ps = 0.0;    // gaussian timestamp jitter, detections only
    double trigger_jitter_sigma_ps = 0.0;

    // Requires true_time_ps >= start_offset_ps.
    TimePs to_local(TimePs true_time_ps) const;
};

struct AnalyzerSetting {
    double alpha_deg = 0.0;
    double beta_deg = 0.0;

    bool operator==(const AnalyzerSetting&) const = default;
};

enum class Outcome : std::uint8_t { One, Zero };
enum class Origin : std::uint8_t { Pair, SingleA, SingleB };

Channel outcome_channel(Outcome o);
const char* origin_name(Origin o);
std::optional<Origin> origin_from_name(std::string_view name);

// One source event that produced at least one recorded detection.
// outcome_x is set iff a tag for that arm exists in the emitted stream.
struct TruthEvent {
    std::int64_t pulse_index = 0;  // 0 = first run-frequency pulse, pre-run negative
    Origin origin = Origin::Pair;
    std::optional<Outcome> outcome_a;
    std::optional<Outcome> outcome_b;
    TimePs true_time_a_ps = -1;
    TimePs true_time_b_ps = -1;
    std::int64_t tag_index_a = -1;  // position in stream A's tag vector (in memory only)
    std::int64_t tag_index_b = -1;
};

struct GroundTruth {
    std::int64_t n_pre = 0;
    std::int64_t n_run = 0;
    std::vector<TruthEvent> events;

    // Pair events with both tags recorded in the run window; the
    // denominator for coincidence-efficiency figures.
    std::int64_t detected_pair_count() const;
};

std::string write_ground_truth_csv(const GroundTruth& truth);
GroundTruth read_ground_truth_csv(const std::string& text);

// True trigger times: n_pre pre-frequency pulses followed by n_run run
// pulses, first pulse at t=0, step trigger at index n_pre. Gaps are the
// period rounded to integer ps; chirped run gaps follow the integrated
// instantaneous frequency.
std::vector<TimePs> trigger_train(const FrequencyPlan& plan, std::int64_t n_pre,
                                  std::int64_t n_run);

// Joint analyzer outcome for one pair: P(i,j) = (1 +/- V cos 2(alpha-beta))/4.
std::pair<Outcome, Outcome> sample_outcomes(const AnalyzerSetting& setting, double visibility,
                                            std::mt19937_64& rng);

struct DropResult {
    std::vector<TimePs> kept;
    std::vector<std::int64_t> dropped_indices;
};

// Removes each trigger independently with probability loss_prob;
// protected_index (if >= 0) is never removed.
DropResult drop_triggers(std::span<const TimePs> train, double loss_prob, std::mt19937_64& rng,
                         std::int64_t protected_index = -1);

struct SimConfig {
    std::string run_id = "run";
    FrequencyPlan plan{490'000, 500'000, 1000, std::nullopt};
    SourceParams source;
    ClockModel clock_a;
    ClockModel clock_b;
    AnalyzerSetting setting;
    std::int64_t n_pre = 1;
    std::int64_t n_run = 1;
    double trigger_loss = 0.0;
    bool allow_step_loss = false;  // stress option: permit losing the step trigger
    std::uint64_t seed = 1;
};

// Reference-run defaults: 490->500 kHz, 1 us pulses, rates that put
// ~115.9k/108.9k detections per arm and ~8.8k true coincidences into a
// 4,511,169-pulse run, V = 0.9802, 2 ns detection jitter, opposite-sign
// sub-ppm rate errors plus slow wander.
SimConfig reference_regime_config();

struct SimResult {
    TagStream a;
    TagStream b;
    GroundTruth truth;
};

SimResult simulate_run(const SimConfig& cfg, std::uint64_t seed);

// Same physics over an externally supplied trigger timeline; pulse 0 is
// train[step_index]. cfg.n_pre/n_run are ignored. Used by the run
// orchestrator, whose timeline includes the post-run frequency tail.
SimResult simulate_with_train(std::span<const TimePs> train, std::int64_t step_index,
                              const SimConfig& cfg, std::uint64_t seed);

// extra_allowed lets embedding configs (e.g. run scripts) share the file.
SimConfig read_sim_config(const KeyValueConfig& kv,
                          const std::set<std::string>& extra_allowed = {});
SimConfig read_sim_config_file(const std::string& path);
std::string write_sim_config(const SimConfig& cfg);

}  // namespace pulsebell
