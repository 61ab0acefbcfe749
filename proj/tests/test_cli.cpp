#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "pulsebell/sim.hpp"
#include "pulsebell/timetag.hpp"

namespace fs = std::filesystem;
using pulsebell::read_text_file;

namespace {

std::string binary() {
    const char* bin = std::getenv("PULSEBELL_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "PULSEBELL_BIN must point at the pulsebell binary");
    return bin;
}

int run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("pulsebell_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

std::string small_config(const std::string& run_id, double alpha, double beta, unsigned seed) {
    return "run_id=" + run_id +
           "\n"
           "freq_pre_hz=490000\nfreq_run_hz=500000\npulse_on_ns=1000\n"
           "p_pair=0.05\neta_a=0.5\neta_b=0.5\np_single_a=0.001\np_single_b=0.001\n"
           "visibility=0.9802\n"
           "alpha_deg=" +
           std::to_string(alpha) + "\nbeta_deg=" + std::to_string(beta) +
           "\n"
           "n_pre=6000\nn_run=120000\nseed=" +
           std::to_string(seed) +
           "\n"
           "start_offset_ps_a=1000000\nstart_offset_ps_b=4000000000\n"
           "rate_error_a=6e-8\nrate_error_b=-6e-8\n"
           "tag_jitter_sigma_ps_a=2000\ntag_jitter_sigma_ps_b=2000\n";
}

}  // namespace

TEST_CASE("input errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("simulate --config /nonexistent.cfg --out /tmp/x") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("simulate --bogus-flag 1") == 2);
    CHECK(run("chsh --manifest /nonexistent.csv --out /tmp/x") == 2);
}

TEST_CASE("simulate is deterministic and respects --force") {
    const fs::path dir = fresh_dir("sim");
    write_file(dir / "run.cfg", small_config("d", 0, 22.5, 12345));
    REQUIRE(run("simulate --config " + (dir / "run.cfg").string() + " --out " +
                (dir / "o1").string()) == 0);
    REQUIRE(run("simulate --config " + (dir / "run.cfg").string() + " --out " +
                (dir / "o2").string()) == 0);
    CHECK(read_text_file((dir / "o1/d_A.tags").string()) ==
          read_text_file((dir / "o2/d_A.tags").string()));
    CHECK(read_text_file((dir / "o1/d_B.tags").string()) ==
          read_text_file((dir / "o2/d_B.tags").string()));
    CHECK(read_text_file((dir / "o1/d_truth.csv").string()) ==
          read_text_file((dir / "o2/d_truth.csv").string()));

    // a different seed changes the bytes
    REQUIRE(run("simulate --config " + (dir / "run.cfg").string() + " --seed 999 --out " +
                (dir / "o3").string()) == 0);
    CHECK(read_text_file((dir / "o1/d_A.tags").string()) !=
          read_text_file((dir / "o3/d_A.tags").string()));

    // overwrite protection
    CHECK(run("simulate --config " + (dir / "run.cfg").string() + " --out " +
              (dir / "o1").string()) == 2);
    CHECK(run("simulate --config " + (dir / "run.cfg").string() + " --out " + (dir / "o1").string() +
              " --force") == 0);
}

TEST_CASE("simulate outputs pipe into both analyses, chsh and report") {
    const fs::path dir = fresh_dir("pipe");
    const struct {
        const char* id;
        double alpha, beta;
    } settings[] = {{"ab", 0, 22.5}, {"abp", 0, 67.5}, {"apb", 45, 22.5}, {"apbp", 45, 67.5}};
    std::string manifest = "alpha_deg,beta_deg,file_a,file_b\n";
    unsigned seed = 81;
    for (const auto& s : settings) {
        write_file(dir / (std::string(s.id) + ".cfg"), small_config(s.id, s.alpha, s.beta, seed++));
        REQUIRE(run("simulate --config " + (dir / (std::string(s.id) + ".cfg")).string() +
                    " --out " + (dir / "runs").string()) == 0);
        manifest += std::to_string(s.alpha) + "," + std::to_string(s.beta) + ",runs/" + s.id +
                    "_A.tags,runs/" + s.id + "_B.tags\n";
    }
    write_file(dir / "manifest.csv", manifest);

    // single-run analyses
    REQUIRE(run("pulsematch " + (dir / "runs/ab_A.tags").string() + " " +
                (dir / "runs/ab_B.tags").string() + " --out " + (dir / "pm").string()) == 0);
    CHECK(fs::exists(dir / "pm/pairs.csv"));
    CHECK(fs::exists(dir / "pm/step_A.txt"));
    CHECK(fs::exists(dir / "pm/start_offset.txt"));
    CHECK(fs::exists(dir / "pm/dt_histogram.csv"));

    REQUIRE(run("postselect " + (dir / "runs/ab_A.tags").string() + " " +
                (dir / "runs/ab_B.tags").string() + " --tw-ps 100000 --out " +
                (dir / "ps").string()) == 0);
    CHECK(fs::exists(dir / "ps/histogram_stage1.csv"));
    CHECK(fs::exists(dir / "ps/pairs.csv"));

    // explicit grid variant
    REQUIRE(run("postselect " + (dir / "runs/ab_A.tags").string() + " " +
                (dir / "runs/ab_B.tags").string() +
                " --tw-ps 100000 --d-min-ps 3500000000 --d-max-ps 4500000000 --d-step-ps 100000"
                " --out " +
                (dir / "ps_grid").string()) == 0);

    // aggregate analyses over the manifest
    REQUIRE(run("chsh --manifest " + (dir / "manifest.csv").string() + " --out " +
                (dir / "chsh_pulse").string()) == 0);
    CHECK(fs::exists(dir / "chsh_pulse/chsh.csv"));
    REQUIRE(run("chsh --manifest " + (dir / "manifest.csv").string() +
                " --method postselect --tw-ps 100000 --out " + (dir / "chsh_post").string()) == 0);
    REQUIRE(run("report --manifest " + (dir / "manifest.csv").string() + " --out " +
                (dir / "rep").string()) == 0);
    const std::string report = read_text_file((dir / "rep/report.txt").string());
    CHECK(report.find("pulsematch") != std::string::npos);
    CHECK(report.find("truth_recovery") != std::string::npos);
}

TEST_CASE("postselect on uncorrelated streams exits 1 with a stage report") {
    const fs::path dir = fresh_dir("noise");
    std::string cfg =
        "run_id=n\nfreq_pre_hz=490000\nfreq_run_hz=500000\npulse_on_ns=1000\n"
        "p_pair=0\np_single_a=0.02\np_single_b=0.02\nn_pre=3000\nn_run=150000\nseed=4\n";
    write_file(dir / "n.cfg", cfg);
    REQUIRE(run("simulate --config " + (dir / "n.cfg").string() + " --out " +
                (dir / "runs").string()) == 0);
    CHECK(run("postselect " + (dir / "runs/n_A.tags").string() + " " +
              (dir / "runs/n_B.tags").string() + " --tw-ps 100000 --out " +
              (dir / "ps").string()) == 1);
    CHECK(fs::exists(dir / "ps/summary.txt"));
    CHECK(read_text_file((dir / "ps/summary.txt").string()).find("did not converge") !=
          std::string::npos);
}

TEST_CASE("orchestrate runs over both transports from the CLI") {
    const fs::path dir = fresh_dir("orch");
    const std::string script =
        "run_id=oc\nfreq_pre_hz=490000\nfreq_run_hz=500000\npulse_on_ns=1000\n"
        "p_pair=0.05\neta_a=0.5\neta_b=0.5\nvisibility=0.9802\n"
        "tag_jitter_sigma_ps_a=2000\ntag_jitter_sigma_ps_b=2000\n"
        "duration_s=0.1\nseed=5\n";
    write_file(dir / "script.cfg", script);
    REQUIRE(run("orchestrate --config " + (dir / "script.cfg").string() + " --out " +
                (dir / "o1").string()) == 0);
    CHECK(fs::exists(dir / "o1/oc_A.tags"));
    CHECK(fs::exists(dir / "o1/oc_B.tags"));
    REQUIRE(run("orchestrate --config " + (dir / "script.cfg").string() +
                " --transport socket --listen 127.0.0.1:0 --out " + (dir / "o2").string()) == 0);
    CHECK(read_text_file((dir / "o1/oc_A.tags").string()) ==
          read_text_file((dir / "o2/oc_A.tags").string()));
    CHECK(read_text_file((dir / "o1/oc_B.tags").string()) ==
          read_text_file((dir / "o2/oc_B.tags").string()));
}

TEST_CASE("pulsematch CLI reproduces the 9.54 ms start offset from quoted step counts") {
    // streams whose step sits at local pulse counts 478113 and 473343
    const fs::path dir = fresh_dir("figtwo");
    const pulsebell::FrequencyPlan plan{490'000, 500'000, 1000, std::nullopt};
    for (const auto& [station, n_pre] :
         {std::pair<pulsebell::Station, std::int64_t>{pulsebell::Station::A, 478'112},
          std::pair<pulsebell::Station, std::int64_t>{pulsebell::Station::B, 473'342}}) {
        pulsebell::TagStream s;
        s.station = station;
        s.run_id = "fig2";
        s.plan = plan;
        const auto train = pulsebell::trigger_train(plan, n_pre, 20);
        for (pulsebell::TimePs t : train) s.tags.push_back({t, pulsebell::Channel::Trigger});
        const char code = station == pulsebell::Station::A ? 'A' : 'B';
        pulsebell::write_tag_file_to(s, (dir / (std::string("fig2_") + code + ".tags")).string());
    }
    REQUIRE(run("pulsematch " + (dir / "fig2_A.tags").string() + " " +
                (dir / "fig2_B.tags").string() + " --out " + (dir / "pm").string()) == 0);
    const std::string report = read_text_file((dir / "pm/start_offset.txt").string());
    CHECK(report.find("pulse_count_a=478113") != std::string::npos);
    CHECK(report.find("pulse_count_b=473343") != std::string::npos);
    CHECK(report.find("offset_count_based_ps=9540000000") != std::string::npos);
}

TEST_CASE("print-schedule shows the two default stages") {
    const std::string cmd = binary() + " print-schedule > /tmp/pulsebell_sched.txt 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const std::string text = read_text_file("/tmp/pulsebell_sched.txt");
    CHECK(text.find("100000,15000000000,100000") != std::string::npos);
    CHECK(text.find("2000,200000,2000") != std::string::npos);
}
