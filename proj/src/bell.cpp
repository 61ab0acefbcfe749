#include "pulsebell/bell.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

namespace pulsebell {

EValue correlation_E(const OutcomeCounts& counts) {
    const std::int64_t n = counts.total();
    if (n <= 0) throw std::invalid_argument("correlation_E requires at least one coincidence");
    if (counts.n11 < 0 || counts.n10 < 0 || counts.n01 < 0 || counts.n00 < 0)
        throw std::invalid_argument("outcome counts must be non-negative");
    EValue v;
    v.e = static_cast<double>(counts.n11 + counts.n00 - counts.n10 - counts.n01) /
          static_cast<double>(n);
    v.sigma = std::sqrt(std::max(0.0, 1.0 - v.e * v.e) / static_cast<double>(n));
    return v;
}

double expected_E(const AnalyzerSetting& setting, double visibility) {
    if (visibility < 0.0 || visibility > 1.0)
        throw std::invalid_argument("visibility must be in [0,1]");
    const double delta = (setting.alpha_deg - setting.beta_deg) * std::numbers::pi / 180.0;
    return visibility * std::cos(2.0 * delta);
}

ChshResult chsh_S(const EValue& e_ab, const EValue& e_abp, const EValue& e_apb,
                  const EValue& e_apbp) {
    ChshResult r;
    r.settings_quad = {AnalyzerSetting{0.0, 22.5}, AnalyzerSetting{0.0, 67.5},
                       AnalyzerSetting{45.0, 22.5}, AnalyzerSetting{45.0, 67.5}};
    r.e_values = {e_ab, e_abp, e_apb, e_apbp};
    r.s = e_ab.e - e_abp.e + e_apb.e + e_apbp.e;
    r.sigma_s = std::sqrt(e_ab.sigma * e_ab.sigma + e_abp.sigma * e_abp.sigma +
                          e_apb.sigma * e_apb.sigma + e_apbp.sigma * e_apbp.sigma);
    return r;
}

double accidental_estimate(std::int64_t n_pulses, double p_a, double p_b) {
    if (p_a < 0.0 || p_a > 1.0 || p_b < 0.0 || p_b > 1.0)
        throw std::invalid_argument("probabilities must be in [0,1]");
    if (n_pulses < 0) throw std::invalid_argument("n_pulses must be >= 0");
    return static_cast<double>(n_pulses) * p_a * p_b;
}

OutcomeCounts tally_outcomes(const TagStream& a, const TagStream& b, const CoincidenceSet& set,
                             const AnalyzerSetting& setting) {
    OutcomeCounts counts;
    counts.setting = setting;
    for (const PairRecord& p : set.pairs) {
        const Channel ca = a.tags.at(static_cast<std::size_t>(p.index_a)).channel;
        const Channel cb = b.tags.at(static_cast<std::size_t>(p.index_b)).channel;
        if (ca == Channel::Trigger || cb == Channel::Trigger)
            throw std::invalid_argument("coincidence pair references a trigger tag");
        const bool a1 = ca == Channel::Out1;
        const bool b1 = cb == Channel::Out1;
        if (a1 && b1)
            ++counts.n11;
        else if (a1)
            ++counts.n10;
        else if (b1)
            ++counts.n01;
        else
            ++counts.n00;
    }
    return counts;
}

RecoveryStats recovery_by_tag_index(const GroundTruth& truth, const CoincidenceSet& set) {
    RecoveryStats stats;
    stats.matched_total = static_cast<std::int64_t>(set.pairs.size());
    std::unordered_set<std::uint64_t> truth_pairs;
    for (const TruthEvent& e : truth.events) {
        if (e.origin != Origin::Pair || e.pulse_index < 0 || e.tag_index_a < 0 || e.tag_index_b < 0)
            continue;
        ++stats.truth_pairs;
        truth_pairs.insert(static_cast<std::uint64_t>(e.tag_index_a) << 32 |
                           static_cast<std::uint64_t>(e.tag_index_b));
    }
    for (const PairRecord& p : set.pairs) {
        if (p.index_a < 0 || p.index_b < 0) continue;
        const std::uint64_t key = static_cast<std::uint64_t>(p.index_a) << 32 |
                                  static_cast<std::uint64_t>(p.index_b);
        if (truth_pairs.count(key)) ++stats.recovered;
    }
    return stats;
}

RecoveryStats recovery_by_pulse(const GroundTruth& truth, const CoincidenceSet& set) {
    RecoveryStats stats;
    stats.matched_total = static_cast<std::int64_t>(set.pairs.size());
    std::unordered_set<std::int64_t> truth_pulses;
    for (const TruthEvent& e : truth.events) {
        if (e.origin != Origin::Pair || e.pulse_index < 0 || !e.outcome_a || !e.outcome_b) continue;
        ++stats.truth_pairs;
        truth_pulses.insert(e.pulse_index);
    }
    for (const PairRecord& p : set.pairs)
        if (p.pulse_number >= 0 && truth_pulses.count(p.pulse_number)) ++stats.recovered;
    return stats;
}

std::vector<ManifestRow> read_manifest(const std::string& text) {
    std::vector<ManifestRow> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "alpha_deg,beta_deg,file_a,file_b")
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": expected header alpha_deg,beta_deg,file_a,file_b");
            header_seen = true;
            continue;
        }
        std::array<std::string, 4> fields;
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field >= fields.size())
                    throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                             ": too many fields");
                fields[field++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (field != fields.size())
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 4 fields");
        ManifestRow row;
        try {
            row.setting.alpha_deg = std::stod(fields[0]);
            row.setting.beta_deg = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": bad angles '" + fields[0] + "," + fields[1] + "'");
        }
        row.file_a = fields[2];
        row.file_b = fields[3];
        if (row.file_a.empty() || row.file_b.empty())
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": empty file path");
        rows.push_back(std::move(row));
    }
    if (!header_seen) throw std::runtime_error("manifest is empty");
    return rows;
}

std::string write_chsh_report(const ChshResult& r, const std::array<OutcomeCounts, 4>& counts) {
    std::ostringstream os;
    os << "# chsh: S = E(a,b) - E(a,b') + E(a',b) + E(a',b')\n";
    if (!r.method.empty()) os << "# method: " << r.method << "\n";
    os.setf(std::ios::fixed);
    os.precision(4);
    for (std::size_t i = 0; i < 4; ++i) {
        const OutcomeCounts& c = counts[i];
        os << "E(alpha=" << c.setting.alpha_deg << ", beta=" << c.setting.beta_deg
           << ") = " << r.e_values[i].e << " +- " << r.e_values[i].sigma << "  (n11=" << c.n11
           << " n10=" << c.n10 << " n01=" << c.n01 << " n00=" << c.n00 << ")\n";
    }
    os << "S = " << r.s << " +- " << r.sigma_s << "\n";
    return os.str();
}

std::string write_chsh_csv(const ChshResult& r, const std::array<OutcomeCounts, 4>& counts) {
    std::ostringstream os;
    os << "alpha_deg,beta_deg,n11,n10,n01,n00,e,sigma_e\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (std::size_t i = 0; i < 4; ++i) {
        const OutcomeCounts& c = counts[i];
        os << c.setting.alpha_deg << "," << c.setting.beta_deg << "," << c.n11 << "," << c.n10
           << "," << c.n01 << "," << c.n00 << "," << r.e_values[i].e << "," << r.e_values[i].sigma
           << "\n";
    }
    os << "# s," << r.s << "\n# sigma_s," << r.sigma_s << "\n";
    return os.str();
}

namespace {

double pair_set_overlap(const std::vector<const CoincidenceSet*>& post_sets,
                        const std::vector<const CoincidenceSet*>& pulse_sets) {
    std::set<std::array<std::int64_t, 3>> post_pairs, pulse_pairs;
    for (std::size_t run = 0; run < post_sets.size(); ++run)
        for (const PairRecord& p : post_sets[run]->pairs)
            post_pairs.insert({static_cast<std::int64_t>(run), p.index_a, p.index_b});
    for (std::size_t run = 0; run < pulse_sets.size(); ++run)
        for (const PairRecord& p : pulse_sets[run]->pairs)
            pulse_pairs.insert({static_cast<std::int64_t>(run), p.index_a, p.index_b});
    if (post_pairs.empty() && pulse_pairs.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& key : post_pairs) inter += pulse_pairs.count(key);
    const std::size_t uni = post_pairs.size() + pulse_pairs.size() - inter;
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

void method_lines(std::ostringstream& os, const char* label,
                  const std::optional<double>& post_v, const std::optional<double>& pulse_v,
                  int precision) {
    os << label;
    os.setf(std::ios::fixed);
    os.precision(precision);
    if (post_v)
        os << *post_v;
    else
        os << "-";
    os << "\t";
    if (pulse_v)
        os << *pulse_v;
    else
        os << "-";
    os << "\n";
}

}  // namespace

CompareReport compare_report(const MethodSummary& post, const MethodSummary& pulse,
                             const std::vector<const CoincidenceSet*>& post_sets,
                             const std::vector<const CoincidenceSet*>& pulse_sets) {
    CompareReport r;
    r.postselect = post;
    r.pulsematch = pulse;
    r.pair_overlap = pair_set_overlap(post_sets, pulse_sets);
    return r;
}

std::string CompareReport::to_text() const {
    std::ostringstream os;
    os << "# method comparison (pair overlap = shared pairs / union of pairs)\n";
    os << "metric\t" << postselect.name << "\t" << pulsematch.name << "\n";
    os << "n_c\t" << postselect.n_c << "\t" << pulsematch.n_c << "\n";
    auto s_of = [](const MethodSummary& m) {
        return m.chsh ? std::optional<double>(m.chsh->s) : std::nullopt;
    };
    auto sig_of = [](const MethodSummary& m) {
        return m.chsh ? std::optional<double>(m.chsh->sigma_s) : std::nullopt;
    };
    auto rec_of = [](const MethodSummary& m) {
        return m.recovery ? std::optional<double>(m.recovery->recovery_fraction()) : std::nullopt;
    };
    method_lines(os, "s\t", s_of(postselect), s_of(pulsematch), 4);
    method_lines(os, "sigma_s\t", sig_of(postselect), sig_of(pulsematch), 4);
    method_lines(os, "truth_recovery\t", rec_of(postselect), rec_of(pulsematch), 4);
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "pair_overlap\t" << pair_overlap << "\n";
    return os.str();
}

std::string CompareReport::to_csv() const {
    std::ostringstream os;
    os << "metric,postselect,pulsematch\n";
    os << "n_c," << postselect.n_c << "," << pulsematch.n_c << "\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    auto cell = [&os](const std::optional<double>& v) {
        if (v)
            os << *v;
    };
    os << "s,";
    cell(postselect.chsh ? std::optional<double>(postselect.chsh->s) : std::nullopt);
    os << ",";
    cell(pulsematch.chsh ? std::optional<double>(pulsematch.chsh->s) : std::nullopt);
    os << "\nsigma_s,";
    cell(postselect.chsh ? std::optional<double>(postselect.chsh->sigma_s) : std::nullopt);
    os << ",";
    cell(pulsematch.chsh ? std::optional<double>(pulsematch.chsh->sigma_s) : std::nullopt);
    os << "\ntruth_recovery,";
    cell(postselect.recovery ? std::optional<double>(postselect.recovery->recovery_fraction())
                             : std::nullopt);
    os << ",";
    cell(pulsematch.recovery ? std::optional<double>(pulsematch.recovery->recovery_fraction())
                             : std::nullopt);
    os << "\npair_overlap," << pair_overlap << ",\n";
    return os.str();
}

}  // namespace pulsebell
