// pulsebell: simulate pulsed two-station Bell runs and compare classical
// delay-scan post-selection with frequency-step pulse matching.

#include <CLI11.hpp>

#include <array>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "pulsebell/bell.hpp"
#include "pulsebell/log.hpp"
#include "pulsebell/orchestrator.hpp"
#include "pulsebell/postselect.hpp"
#include "pulsebell/pulsematch.hpp"
#include "pulsebell/sim.hpp"
#include "pulsebell/timetag.hpp"

namespace fs = std::filesystem;
using namespace pulsebell;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAnalysis = 1;  // non-convergence, aborted run
constexpr int kExitInput = 2;     // bad flags, files, schemas

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AnalysisFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OutputDir {
    fs::path dir;
    bool force = false;

    fs::path target(const std::string& name) const {
        const fs::path p = dir / name;
        if (!force && fs::exists(p))
            throw InputError("refusing to overwrite " + p.string() + " (use --force)");
        return p;
    }
};

OutputDir make_out_dir(const std::string& out, bool force) {
    if (out.empty()) throw InputError("--out is required");
    fs::create_directories(out);
    return OutputDir{fs::path(out), force};
}

TagStream load_stream(const std::string& path) {
    if (!fs::exists(path)) throw InputError("no such file: " + path);
    try {
        return read_tag_file_from(path);
    } catch (const ParseError& e) {
        throw InputError(e.what());
    }
}

// ---------------------------------------------------------------------------
// schedule files

PostselectSchedule load_schedule(const std::string& path) {
    if (!fs::exists(path)) throw InputError("no such schedule file: " + path);
    const std::string text = read_text_file(path);
    PostselectSchedule sched;
    sched.stages.clear();
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line.rfind("# prominence_min:", 0) == 0) {
            sched.prominence_min = std::stod(line.substr(17));
            continue;
        }
        if (line.rfind("# min_counts:", 0) == 0) {
            sched.min_peak_counts = std::stoll(line.substr(13));
            continue;
        }
        if (line[0] == '#') continue;
        if (!header_seen) {
            if (line != "t_w_ps,d_half_span_ps,d_step_ps")
                throw InputError(path + ":" + std::to_string(line_no) +
                                 ": expected header t_w_ps,d_half_span_ps,d_step_ps");
            header_seen = true;
            continue;
        }
        ScheduleStage st;
        if (std::sscanf(line.c_str(), "%ld,%ld,%ld", &st.t_w_ps, &st.d_half_span_ps,
                        &st.d_step_ps) != 3)
            throw InputError(path + ":" + std::to_string(line_no) + ": malformed stage row");
        sched.stages.push_back(st);
    }
    if (sched.stages.empty()) throw InputError(path + ": schedule has no stages");
    return sched;
}

std::string schedule_to_text(const PostselectSchedule& s) {
    std::ostringstream os;
    os << "# pulsebell-schedule v1\n";
    os << "# prominence_min: " << s.prominence_min << "\n";
    os << "# min_counts: " << s.min_peak_counts << "\n";
    os << "t_w_ps,d_half_span_ps,d_step_ps\n";
    for (const ScheduleStage& st : s.stages)
        os << st.t_w_ps << "," << st.d_half_span_ps << "," << st.d_step_ps << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// shared analysis plumbing

struct DetectionView {
    std::vector<std::int64_t> tag_indices;
    std::vector<TimePs> times;
};

DetectionView detections_of(const TagStream& s) {
    DetectionView v;
    v.tag_indices = s.detection_indices();
    v.times.reserve(v.tag_indices.size());
    for (std::int64_t i : v.tag_indices) v.times.push_back(s.tags[static_cast<std::size_t>(i)].time_ps);
    return v;
}

// post-selection over two streams with pair indices remapped to tag positions
PostselectOutcome postselect_streams(const TagStream& a, const TagStream& b,
                                     const PostselectSchedule& sched) {
    const DetectionView da = detections_of(a);
    const DetectionView db = detections_of(b);
    PostselectOutcome out = iterate_postselect(da.times, db.times, sched);
    if (out.converged) {
        for (PairRecord& p : out.pairs.pairs) {
            p.index_a = da.tag_indices[static_cast<std::size_t>(p.index_a)];
            p.index_b = db.tag_indices[static_cast<std::size_t>(p.index_b)];
        }
    }
    return out;
}

// pulse numbers for arbitrary tag indices, from a completed stream match
std::map<std::int64_t, std::int64_t> pulse_by_tag(const TagStream& s, const PulseNumbering& num) {
    const DetectionView d = detections_of(s);
    const PulseAssignment assign = assign_pulses(d.times, num, s.plan);
    std::map<std::int64_t, std::int64_t> m;
    for (std::size_t i = 0; i < d.tag_indices.size(); ++i)
        if (assign.assigned(i)) m[d.tag_indices[i]] = assign.entries[i].pulse_number;
    return m;
}

struct RunAnalysis {
    ManifestRow row;
    TagStream a;
    TagStream b;
    StreamMatch pulse_match;
    std::optional<PostselectOutcome> postselect;  // when requested
    std::optional<GroundTruth> truth;             // when a truth CSV sits next to file_a
};

std::string truth_path_for(const std::string& file_a) {
    // <run_id>_A.tags -> <run_id>_truth.csv
    const std::string suffix = "_A.tags";
    if (file_a.size() > suffix.size() &&
        file_a.compare(file_a.size() - suffix.size(), suffix.size(), suffix) == 0)
        return file_a.substr(0, file_a.size() - suffix.size()) + "_truth.csv";
    return {};
}

std::vector<ManifestRow> load_manifest(const std::string& path) {
    if (!fs::exists(path)) throw InputError("no such manifest: " + path);
    std::vector<ManifestRow> rows;
    try {
        rows = read_manifest(read_text_file(path));
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
    // paths are relative to the manifest's directory
    const fs::path base = fs::path(path).parent_path();
    for (ManifestRow& r : rows) {
        if (fs::path(r.file_a).is_relative()) r.file_a = (base / r.file_a).string();
        if (fs::path(r.file_b).is_relative()) r.file_b = (base / r.file_b).string();
    }
    return rows;
}

// aggregate per-setting outcome counts across manifest rows
struct SettingsAggregate {
    std::array<OutcomeCounts, 4> counts;  // (a,b), (a,b'), (a',b), (a',b')
    double a_deg = 0, ap_deg = 0, b_deg = 0, bp_deg = 0;
    std::int64_t n_c = 0;
};

SettingsAggregate aggregate_counts(const std::vector<ManifestRow>& rows,
                                   const std::vector<OutcomeCounts>& per_row) {
    std::vector<double> alphas, betas;
    for (const ManifestRow& r : rows) {
        if (std::find(alphas.begin(), alphas.end(), r.setting.alpha_deg) == alphas.end())
            alphas.push_back(r.setting.alpha_deg);
        if (std::find(betas.begin(), betas.end(), r.setting.beta_deg) == betas.end())
            betas.push_back(r.setting.beta_deg);
    }
    if (alphas.size() != 2 || betas.size() != 2)
        throw InputError("manifest must cover exactly 2 alpha and 2 beta angles (got " +
                         std::to_string(alphas.size()) + " and " + std::to_string(betas.size()) +
                         ")");
    std::sort(alphas.begin(), alphas.end());
    std::sort(betas.begin(), betas.end());

    SettingsAggregate agg;
    agg.a_deg = alphas[0];
    agg.ap_deg = alphas[1];
    agg.b_deg = betas[0];
    agg.bp_deg = betas[1];
    agg.counts[0].setting = {agg.a_deg, agg.b_deg};
    agg.counts[1].setting = {agg.a_deg, agg.bp_deg};
    agg.counts[2].setting = {agg.ap_deg, agg.b_deg};
    agg.counts[3].setting = {agg.ap_deg, agg.bp_deg};

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const AnalyzerSetting& s = rows[i].setting;
        const std::size_t slot = (s.alpha_deg == agg.ap_deg ? 2 : 0) +
                                 (s.beta_deg == agg.bp_deg ? 1 : 0);
        agg.counts[slot].n11 += per_row[i].n11;
        agg.counts[slot].n10 += per_row[i].n10;
        agg.counts[slot].n01 += per_row[i].n01;
        agg.counts[slot].n00 += per_row[i].n00;
    }
    for (const OutcomeCounts& c : agg.counts) {
        if (c.total() == 0)
            throw InputError("no coincidences for setting (" + std::to_string(c.setting.alpha_deg) +
                             ", " + std::to_string(c.setting.beta_deg) + ")");
        agg.n_c += c.total();
    }
    return agg;
}

ChshResult chsh_of(const SettingsAggregate& agg, const std::string& method) {
    ChshResult r = chsh_S(correlation_E(agg.counts[0]), correlation_E(agg.counts[1]),
                          correlation_E(agg.counts[2]), correlation_E(agg.counts[3]));
    r.settings_quad = {agg.counts[0].setting, agg.counts[1].setting, agg.counts[2].setting,
                       agg.counts[3].setting};
    r.method = method;
    return r;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& out, bool force) {
    if (!fs::exists(config_path)) throw InputError("no such config: " + config_path);
    SimConfig cfg;
    try {
        cfg = read_sim_config_file(config_path);
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
    if (seed) cfg.seed = *seed;
    const OutputDir dir = make_out_dir(out, force);
    const fs::path path_a = dir.target(cfg.run_id + "_A.tags");
    const fs::path path_b = dir.target(cfg.run_id + "_B.tags");
    const fs::path path_t = dir.target(cfg.run_id + "_truth.csv");

    const SimResult r = simulate_run(cfg, cfg.seed);
    write_tag_file_to(r.a, path_a.string());
    write_tag_file_to(r.b, path_b.string());
    write_text_file(path_t.string(), write_ground_truth_csv(r.truth));

    std::cout << "simulated run '" << cfg.run_id << "' seed " << cfg.seed << "\n"
              << "  tags A: " << path_a.string() << " (" << r.a.tags.size() << " tags)\n"
              << "  tags B: " << path_b.string() << " (" << r.b.tags.size() << " tags)\n"
              << "  truth:  " << path_t.string() << " (" << r.truth.events.size() << " events)\n";
    return kExitOk;
}

int cmd_postselect(const std::string& file_a, const std::string& file_b,
                   const std::string& schedule_path, std::optional<TimePs> tw,
                   std::optional<TimePs> d_min, std::optional<TimePs> d_max,
                   std::optional<TimePs> d_step, const std::string& out, bool force) {
    const TagStream a = load_stream(file_a);
    const TagStream b = load_stream(file_b);
    const OutputDir dir = make_out_dir(out, force);

    const int grid_flags = (d_min ? 1 : 0) + (d_max ? 1 : 0) + (d_step ? 1 : 0);
    if (grid_flags != 0 && grid_flags != 3)
        throw InputError("--d-min-ps, --d-max-ps and --d-step-ps must be given together");
    if (grid_flags == 3 && !schedule_path.empty())
        throw InputError("an explicit delay grid cannot be combined with --schedule");

    PostselectSchedule sched;
    if (!schedule_path.empty()) {
        sched = load_schedule(schedule_path);
    } else if (grid_flags == 3) {
        if (!tw) throw InputError("--tw-ps is required with an explicit delay grid");
        ScheduleStage st;
        st.t_w_ps = *tw;
        st.d_step_ps = *d_step;
        st.d_half_span_ps = (*d_max - *d_min) / 2;
        sched.stages = {st};
        // explicit grid: single stage centered between the bounds
        const DetectionView da = detections_of(a);
        const DetectionView db = detections_of(b);
        DelayHistogram h = delay_histogram(da.times, db.times, *d_min, *d_max, *d_step, *tw);
        write_text_file(dir.target("histogram_stage1.csv").string(), write_histogram_csv(h));
        const PeakInfo peak = find_peak(h);
        if (!peak.found) {
            std::cout << "no coincidence peak in the scanned range\n";
            return kExitAnalysis;
        }
        CoincidenceSet pairs = extract_pairs(da.times, db.times, peak.d_peak_ps, *tw);
        for (PairRecord& p : pairs.pairs) {
            p.index_a = da.tag_indices[static_cast<std::size_t>(p.index_a)];
            p.index_b = db.tag_indices[static_cast<std::size_t>(p.index_b)];
        }
        write_text_file(dir.target("pairs.csv").string(), write_pairs_csv(pairs));
        std::ostringstream os;
        os << "d_peak_ps=" << peak.d_peak_ps << "\nt_w_ps=" << *tw << "\nn_c=" << pairs.pairs.size()
           << "\nprominence=" << peak.prominence << "\nwidth_ps=" << peak.width_ps
           << "\nsecondary_peaks=" << peak.secondary_peaks.size() << "\n";
        write_text_file(dir.target("summary.txt").string(), os.str());
        std::cout << os.str();
        return kExitOk;
    } else {
        sched = default_schedule();
        if (tw) sched = truncate_schedule(sched, *tw);
    }

    const PostselectOutcome outcome = postselect_streams(a, b, sched);
    for (std::size_t s = 0; s < outcome.stages.size(); ++s)
        write_text_file(dir.target("histogram_stage" + std::to_string(s + 1) + ".csv").string(),
                        write_histogram_csv(outcome.stages[s].hist));
    if (!outcome.converged) {
        write_text_file(dir.target("summary.txt").string(), outcome.failure_message() + "\n");
        std::cout << outcome.failure_message() << "\n";
        return kExitAnalysis;
    }
    write_text_file(dir.target("pairs.csv").string(), write_pairs_csv(outcome.pairs));
    std::ostringstream os;
    os << "d_final_ps=" << outcome.d_final_ps << "\nt_w_final_ps=" << outcome.t_w_final_ps
       << "\nn_c=" << outcome.pairs.pairs.size() << "\nstages=" << outcome.stages.size() << "\n";
    write_text_file(dir.target("summary.txt").string(), os.str());
    std::cout << os.str();
    return kExitOk;
}

int cmd_pulsematch(const std::string& file_a, const std::string& file_b, TimePs guard_ps,
                   TimePs bin_ps, const std::string& out, bool force) {
    const TagStream a = load_stream(file_a);
    const TagStream b = load_stream(file_b);
    const OutputDir dir = make_out_dir(out, force);
    StreamMatch m;
    try {
        m = match_streams(a, b, guard_ps);
    } catch (const NumberingError& e) {
        throw AnalysisFailure(std::string("pulse numbering failed: ") + e.what());
    } catch (const std::runtime_error& e) {
        throw AnalysisFailure(e.what());
    }

    write_text_file(dir.target("step_A.txt").string(), write_step_report(m.step_a));
    write_text_file(dir.target("step_B.txt").string(), write_step_report(m.step_b));
    write_text_file(dir.target("start_offset.txt").string(), write_start_offset_report(m.offset));
    write_text_file(dir.target("pairs.csv").string(), write_pairs_csv(m.pairs));
    write_text_file(dir.target("dt_histogram.csv").string(),
                    write_dt_histogram_csv(intra_pulse_histogram(m.pairs, bin_ps)));

    std::ostringstream os;
    os << "n_c=" << m.pairs.pairs.size() << "\nstep_index_a=" << m.step_a.step_trigger_index
       << "\nstep_index_b=" << m.step_b.step_trigger_index
       << "\npulse_count_a=" << m.offset.pulse_count_a
       << "\npulse_count_b=" << m.offset.pulse_count_b
       << "\noffset_count_based_ps=" << m.offset.offset_count_based_ps
       << "\noffset_time_based_ps=" << m.offset.offset_time_based_ps
       << "\nmulti_detection_pulses_a=" << m.pairs.multi_detection_pulses_a
       << "\nmulti_detection_pulses_b=" << m.pairs.multi_detection_pulses_b << "\n";
    write_text_file(dir.target("summary.txt").string(), os.str());
    std::cout << os.str();
    return kExitOk;
}

struct MethodRun {
    std::vector<CoincidenceSet> sets;
    std::vector<OutcomeCounts> per_row;
    std::int64_t n_c = 0;
};

MethodRun run_pulse_method(const std::vector<ManifestRow>& rows,
                           std::vector<RunAnalysis>* analyses) {
    MethodRun mr;
    for (const ManifestRow& row : rows) {
        RunAnalysis ra;
        ra.row = row;
        ra.a = load_stream(row.file_a);
        ra.b = load_stream(row.file_b);
        try {
            ra.pulse_match = match_streams(ra.a, ra.b);
        } catch (const std::runtime_error& e) {
            throw AnalysisFailure(std::string("pulse matching failed on ") + row.file_a + ": " +
                                  e.what());
        }
        mr.sets.push_back(ra.pulse_match.pairs);
        mr.per_row.push_back(tally_outcomes(ra.a, ra.b, ra.pulse_match.pairs, row.setting));
        mr.n_c += static_cast<std::int64_t>(ra.pulse_match.pairs.pairs.size());
        if (analyses) analyses->push_back(std::move(ra));
    }
    return mr;
}

int cmd_chsh(const std::string& manifest_path, const std::string& method, std::optional<TimePs> tw,
             const std::string& out, bool force) {
    const std::vector<ManifestRow> rows = load_manifest(manifest_path);
    const OutputDir dir = make_out_dir(out, force);

    MethodRun mr;
    if (method == "pulse") {
        mr = run_pulse_method(rows, nullptr);
    } else if (method == "postselect") {
        PostselectSchedule sched = default_schedule();
        if (tw) sched = truncate_schedule(sched, *tw);
        for (const ManifestRow& row : rows) {
            const TagStream a = load_stream(row.file_a);
            const TagStream b = load_stream(row.file_b);
            const PostselectOutcome outcome = postselect_streams(a, b, sched);
            if (!outcome.converged)
                throw AnalysisFailure(outcome.failure_message() + " (file " + row.file_a + ")");
            mr.sets.push_back(outcome.pairs);
            mr.per_row.push_back(tally_outcomes(a, b, outcome.pairs, row.setting));
            mr.n_c += static_cast<std::int64_t>(outcome.pairs.pairs.size());
        }
    } else {
        throw InputError("--method must be pulse or postselect");
    }

    const SettingsAggregate agg = aggregate_counts(rows, mr.per_row);
    const ChshResult r = chsh_of(agg, method);
    write_text_file(dir.target("chsh.txt").string(), write_chsh_report(r, agg.counts));
    write_text_file(dir.target("chsh.csv").string(), write_chsh_csv(r, agg.counts));
    std::cout << write_chsh_report(r, agg.counts);
    return kExitOk;
}

int cmd_report(const std::string& manifest_path, std::optional<TimePs> tw, const std::string& out,
               bool force) {
    const std::vector<ManifestRow> rows = load_manifest(manifest_path);
    const OutputDir dir = make_out_dir(out, force);

    std::vector<RunAnalysis> analyses;
    MethodRun pulse = run_pulse_method(rows, &analyses);

    // the post-selection comparison point defaults to the 100 ns stage
    PostselectSchedule sched = truncate_schedule(default_schedule(), tw.value_or(100'000));
    MethodRun post;
    bool post_converged = true;
    std::string post_failure;
    for (RunAnalysis& ra : analyses) {
        PostselectOutcome outcome = postselect_streams(ra.a, ra.b, sched);
        if (!outcome.converged) {
            post_converged = false;
            post_failure = outcome.failure_message();
            break;
        }
        post.sets.push_back(outcome.pairs);
        post.per_row.push_back(tally_outcomes(ra.a, ra.b, outcome.pairs, ra.row.setting));
        post.n_c += static_cast<std::int64_t>(outcome.pairs.pairs.size());
        ra.postselect = std::move(outcome);
    }

    // optional ground truth next to each run's A file
    RecoveryStats pulse_rec, post_rec;
    bool have_truth = !rows.empty();
    for (std::size_t i = 0; i < analyses.size() && have_truth; ++i) {
        const std::string tp = truth_path_for(analyses[i].row.file_a);
        if (tp.empty() || !fs::exists(tp)) {
            have_truth = false;
            break;
        }
        const GroundTruth truth = read_ground_truth_csv(read_text_file(tp));
        {
            const RecoveryStats s = recovery_by_pulse(truth, pulse.sets[i]);
            pulse_rec.truth_pairs += s.truth_pairs;
            pulse_rec.recovered += s.recovered;
            pulse_rec.matched_total += s.matched_total;
        }
        if (post_converged) {
            // annotate post-selection pairs with pulse numbers so the same
            // per-pulse judgement applies
            CoincidenceSet annotated = post.sets[i];
            const auto pa = pulse_by_tag(analyses[i].a, analyses[i].pulse_match.numbering_a);
            const auto pb = pulse_by_tag(analyses[i].b, analyses[i].pulse_match.numbering_b);
            for (PairRecord& p : annotated.pairs) {
                const auto ia = pa.find(p.index_a);
                const auto ib = pb.find(p.index_b);
                p.pulse_number =
                    ia != pa.end() && ib != pb.end() && ia->second == ib->second ? ia->second : -1;
            }
            const RecoveryStats s = recovery_by_pulse(truth, annotated);
            post_rec.truth_pairs += s.truth_pairs;
            post_rec.recovered += s.recovered;
            post_rec.matched_total += s.matched_total;
        }
    }

    MethodSummary post_summary, pulse_summary;
    post_summary.name = "postselect";
    pulse_summary.name = "pulsematch";
    pulse_summary.n_c = pulse.n_c;
    const SettingsAggregate pulse_agg = aggregate_counts(rows, pulse.per_row);
    pulse_summary.chsh = chsh_of(pulse_agg, "pulse");
    if (have_truth) pulse_summary.recovery = pulse_rec;

    std::vector<const CoincidenceSet*> post_ptrs, pulse_ptrs;
    for (const CoincidenceSet& s : pulse.sets) pulse_ptrs.push_back(&s);
    if (post_converged) {
        post_summary.n_c = post.n_c;
        const SettingsAggregate post_agg = aggregate_counts(rows, post.per_row);
        post_summary.chsh = chsh_of(post_agg, "postselect");
        if (have_truth) post_summary.recovery = post_rec;
        for (const CoincidenceSet& s : post.sets) post_ptrs.push_back(&s);
    }

    const CompareReport report = compare_report(post_summary, pulse_summary, post_ptrs, pulse_ptrs);
    std::string text = report.to_text();
    if (!post_converged)
        text += "# note: post-selection did not converge: " + post_failure + "\n";
    write_text_file(dir.target("report.txt").string(), text);
    write_text_file(dir.target("report.csv").string(), report.to_csv());
    std::cout << text;
    return kExitOk;
}

int cmd_orchestrate(const std::string& config_path, std::optional<std::uint64_t> seed,
                    const std::string& transport, const std::string& listen,
                    const std::string& out, bool force) {
    if (!fs::exists(config_path)) throw InputError("no such config: " + config_path);
    RunScript script;
    try {
        script = read_run_script_file(config_path);
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
    if (seed) script.sim.seed = *seed;
    TransportKind kind;
    if (transport == "inproc")
        kind = TransportKind::Inproc;
    else if (transport == "socket")
        kind = TransportKind::Socket;
    else
        throw InputError("--transport must be inproc or socket");

    const OutputDir dir = make_out_dir(out, force);
    const fs::path outcome_path = dir.target("outcome.txt");
    (void)dir.target(script.sim.run_id + "_A.tags");
    (void)dir.target(script.sim.run_id + "_B.tags");

    const RunOutcome outcome = orchestrate(script, script.sim.seed, kind, out, listen);
    std::ostringstream os;
    os << "ok=" << (outcome.ok ? 1 : 0) << "\n";
    if (!outcome.ok) {
        os << "abort_reason=" << outcome.abort_reason << "\n";
        os << "missing_party=" << outcome.missing_party << "\n";
    } else {
        os << "file_a=" << outcome.file_a << "\nfile_b=" << outcome.file_b << "\n";
    }
    std::int64_t set_freq = 0;
    for (const ControlMessage& m : outcome.sent)
        if (m.type == ControlMessage::Type::SetFrequency) ++set_freq;
    os << "set_frequency_commands=" << set_freq << "\n";
    write_text_file(outcome_path.string(), os.str());
    std::cout << os.str();
    return outcome.ok ? kExitOk : kExitAnalysis;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pulsed Bell-experiment simulator and coincidence analysis"};
    app.require_subcommand(1);

    std::string config_path, out_dir, schedule_path, manifest_path;
    std::string file_a, file_b;
    std::string method = "pulse";
    std::string transport = "inproc";
    std::string listen = "127.0.0.1:0";
    bool force = false;
    std::optional<std::uint64_t> seed;
    std::optional<TimePs> tw, d_min, d_max, d_step;
    TimePs guard_ps = kDefaultGuardPs;
    TimePs bin_ps = 2000;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_flag("--force", force, "overwrite existing outputs");
    };

    CLI::App* sim = app.add_subcommand("simulate", "generate a seeded two-station run");
    sim->add_option("--config", config_path, "run configuration (key=value)")->required();
    sim->add_option("--seed", seed, "override the config seed");
    add_common(sim);

    CLI::App* post = app.add_subcommand("postselect", "delay-scan coincidence post-selection");
    post->add_option("a_tags", file_a, "station A tag file")->required();
    post->add_option("b_tags", file_b, "station B tag file")->required();
    post->add_option("--schedule", schedule_path, "iteration schedule file");
    post->add_option("--tw-ps", tw, "coincidence window");
    post->add_option("--d-min-ps", d_min, "delay scan start");
    post->add_option("--d-max-ps", d_max, "delay scan end");
    post->add_option("--d-step-ps", d_step, "delay scan step");
    add_common(post);

    CLI::App* pulse = app.add_subcommand("pulsematch", "frequency-step pulse-number matching");
    pulse->add_option("a_tags", file_a, "station A tag file")->required();
    pulse->add_option("b_tags", file_b, "station B tag file")->required();
    pulse->add_option("--guard-ps", guard_ps, "assignment guard beyond the on-window");
    pulse->add_option("--bin-ps", bin_ps, "dt histogram bin");
    add_common(pulse);

    CLI::App* chsh = app.add_subcommand("chsh", "CHSH S from a four-setting manifest");
    chsh->add_option("--manifest", manifest_path, "runs manifest CSV")->required();
    chsh->add_option("--method", method, "pulse|postselect")
        ->check(CLI::IsMember({"pulse", "postselect"}));
    chsh->add_option("--tw-ps", tw, "post-selection window (postselect method)");
    add_common(chsh);

    CLI::App* report = app.add_subcommand("report", "compare both methods on the same runs");
    report->add_option("--manifest", manifest_path, "runs manifest CSV")->required();
    report->add_option("--tw-ps", tw, "post-selection comparison window (default 100 ns)");
    add_common(report);

    CLI::App* orch = app.add_subcommand("orchestrate", "run the coordinator/station protocol");
    orch->add_option("--config", config_path, "run script (key=value)")->required();
    orch->add_option("--seed", seed, "override the script seed");
    orch->add_option("--transport", transport, "inproc|socket")
        ->check(CLI::IsMember({"inproc", "socket"}));
    orch->add_option("--listen", listen, "socket transport listen address");
    add_common(orch);

    CLI::App* sched_cmd = app.add_subcommand("print-schedule", "print the default schedule");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitInput;
    }

    try {
        if (sim->parsed()) return cmd_simulate(config_path, seed, out_dir, force);
        if (post->parsed())
            return cmd_postselect(file_a, file_b, schedule_path, tw, d_min, d_max, d_step, out_dir,
                                  force);
        if (pulse->parsed()) return cmd_pulsematch(file_a, file_b, guard_ps, bin_ps, out_dir, force);
        if (chsh->parsed()) return cmd_chsh(manifest_path, method, tw, out_dir, force);
        if (report->parsed()) return cmd_report(manifest_path, tw, out_dir, force);
        if (orch->parsed())
            return cmd_orchestrate(config_path, seed, transport, listen, out_dir, force);
        if (sched_cmd->parsed()) {
            std::cout << schedule_to_text(default_schedule());
            return kExitOk;
        }
    } catch (const InputError& e) {
        log_error("%s", e.what());
        return kExitInput;
    } catch (const AnalysisFailure& e) {
        log_error("%s", e.what());
        return kExitAnalysis;
    } catch (const std::invalid_argument& e) {
        log_error("%s", e.what());
        return kExitInput;
    } catch (const std::exception& e) {
        log_error("%s", e.what());
        return kExitInput;
    }
    return kExitInput;
}
