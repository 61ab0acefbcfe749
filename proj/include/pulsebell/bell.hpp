#pragma once

// CHSH estimation from matched coincidences: correlation values E with
// multinomial uncertainties, the S statistic, accidental-rate estimates,
// and the post-selection vs pulse-matching comparison report.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pulsebell/postselect.hpp"
#include "pulsebell/sim.hpp"
#include "pulsebell/timetag.hpp"

namespace pulsebell {

struct OutcomeCounts {
    AnalyzerSetting setting;
    std::int64_t n11 = 0;
    std::int64_t n10 = 0;
    std::int64_t n01 = 0;
    std::int64_t n00 = 0;

    std::int64_t total() const { return n11 + n10 + n01 + n00; }
};

struct EValue {
    double e = 0.0;
    double sigma = 0.0;
};

// E = (n11 + n00 - n10 - n01) / N, sigma from multinomial propagation.
EValue correlation_E(const OutcomeCounts& counts);

// Model correlation for the |phi+> state: V * cos 2(alpha - beta).
double expected_E(const AnalyzerSetting& setting, double visibility);

struct ChshResult {
    // terms in S = E(a,b) - E(a,b') + E(a',b) + E(a',b')
    std::array<AnalyzerSetting, 4> settings_quad;  // (a,b), (a,b'), (a',b), (a',b')
    std::array<EValue, 4> e_values;
    double s = 0.0;
    double sigma_s = 0.0;
    std::string method;
};

ChshResult chsh_S(const EValue& e_ab, const EValue& e_abp, const EValue& e_apb,
                  const EValue& e_apbp);

// Expected same-pulse pairings of unrelated detections.
double accidental_estimate(std::int64_t n_pulses, double p_a, double p_b);

// Joint-outcome tally of a coincidence set; pair indices must refer to
// tag positions in the two streams.
OutcomeCounts tally_outcomes(const TagStream& a, const TagStream& b, const CoincidenceSet& set,
                             const AnalyzerSetting& setting);

std::string write_chsh_report(const ChshResult& r, const std::array<OutcomeCounts, 4>& counts);
std::string write_chsh_csv(const ChshResult& r, const std::array<OutcomeCounts, 4>& counts);

// Recovery of ground-truth detected pairs by a coincidence set, judged
// per pulse number: a matched pair is a true recovery when a pair event
// with both tags recorded sits in that pulse and the matched tag indices
// are exactly that event's tags.
struct RecoveryStats {
    std::int64_t truth_pairs = 0;     // denominator: detected pair events in the run window
    std::int64_t recovered = 0;       // matched pairs equal to a truth pair
    std::int64_t matched_total = 0;   // all matched pairs

    double recovery_fraction() const {
        return truth_pairs > 0 ? static_cast<double>(recovered) / static_cast<double>(truth_pairs)
                               : 0.0;
    }
};

// Exact judgement by tag indices (in-memory ground truth only).
RecoveryStats recovery_by_tag_index(const GroundTruth& truth, const CoincidenceSet& set);

// Judgement by pulse number, for ground truth reloaded from CSV; pairs
// without a pulse number count as matched but never as recovered.
RecoveryStats recovery_by_pulse(const GroundTruth& truth, const CoincidenceSet& set);

// One chsh/report input run: a setting and the two station files.
struct ManifestRow {
    AnalyzerSetting setting;
    std::string file_a;
    std::string file_b;
};

// CSV with header alpha_deg,beta_deg,file_a,file_b; '#' comments allowed.
std::vector<ManifestRow> read_manifest(const std::string& text);

struct MethodSummary {
    std::string name;
    std::int64_t n_c = 0;
    std::optional<ChshResult> chsh;
    std::optional<RecoveryStats> recovery;
};

struct CompareReport {
    MethodSummary postselect;
    MethodSummary pulsematch;
    double pair_overlap = 0.0;  // shared (index_a, index_b) pairs / union

    std::string to_text() const;
    std::string to_csv() const;
};

CompareReport compare_report(const MethodSummary& post, const MethodSummary& pulse,
                             const std::vector<const CoincidenceSet*>& post_sets,
                             const std::vector<const CoincidenceSet*>& pulse_sets);

}  // namespace pulsebell
