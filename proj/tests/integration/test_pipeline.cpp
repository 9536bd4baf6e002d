// End-to-end runs of the wavefit executable on generated WHO-style files.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "../support/daily_csv.hpp"
#include "wavefit/pipeline.hpp"

using namespace wavefit;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("wavefit_it_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(WAVEFIT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_file(p); }

/// The shipped six-country configuration pointed at a generated data file.
fs::path six_country_config(const std::string& tag, const fs::path& data, json edits = json::object()) {
    auto j = json::parse(slurp(fs::path(WAVEFIT_SOURCE_DIR) / "configs" / "omicron-2022.json"));
    j["data"]["path"] = data.string();
    j["output_dir"] = (scratch() / tag / "out").string();
    j.merge_patch(edits);
    const auto path = scratch() / tag / "config.json";
    write_file(path, j.dump(2));
    return path;
}

struct Generated {
    fs::path csv;
    std::vector<RegionData> weekly;
    synthetic::Problem problem;
};

const Generated& generated() {
    static const Generated g = [] {
        Generated out;
        out.problem = daily::positive_published_problem();
        out.csv = scratch() / "who_synthetic.csv";
        out.weekly = daily::write_six_country_csv(out.csv.string(), out.problem, 31);
        return out;
    }();
    return g;
}

/// One full run shared by the read-only checks below.
const fs::path& full_run() {
    static const fs::path out = [] {
        const auto cfg = six_country_config("full", generated().csv);
        const int code = cli("run --config " + cfg.string(), scratch() / "full" / "run.log");
        if (code != 0) ADD_FAILURE() << "run exited " << code << "\n" << slurp(scratch() / "full" / "run.log");
        return scratch() / "full" / "out";
    }();
    return out;
}

} // namespace

TEST(Pipeline, IngestReproducesTheWeeklyMeansAndErrors) {
    const auto cfg = six_country_config("ingest", generated().csv);
    ASSERT_EQ(cli("ingest --config " + cfg.string(), scratch() / "ingest" / "log"), 0)
        << slurp(scratch() / "ingest" / "log");
    const auto summary = read_json(scratch() / "ingest" / "out" / "ingest_summary.json");
    EXPECT_EQ(summary.at("cases_weeks"), 125);
    EXPECT_EQ(summary.at("deaths_weeks"), 113);

    const auto& cs = published::countries();
    for (std::size_t r = 0; r < cs.size(); ++r) {
        const auto& want = generated().weekly[r];
        for (const auto* w : {&want.cases, &want.deaths}) {
            std::istringstream in(slurp(weekly_path(scratch() / "ingest" / "out", cs[r].name, w->metric)));
            const auto got = read_weekly(in);
            ASSERT_EQ(got.points.size(), w->points.size()) << cs[r].name;
            for (std::size_t k = 0; k < got.points.size(); ++k) {
                EXPECT_EQ(got.points[k].t, w->points[k].t);
                EXPECT_NEAR(got.points[k].y, w->points[k].y, 1e-8 * std::abs(w->points[k].y));
                EXPECT_NEAR(got.points[k].sigma, w->points[k].sigma, 1e-7 * w->points[k].sigma);
            }
        }
    }
}

TEST(Pipeline, FullRunConvergesOnThePublishedShape) {
    const auto fit = fit_from_json(read_json(full_run() / "fit_result.json"));
    ASSERT_TRUE(fit.converged);
    EXPECT_EQ(fit.layout.size(), 64u);
    EXPECT_EQ(fit.ndf, 174);
    // Truth lies within a few standard deviations for every parameter.
    const auto truth = pack(fit.layout, generated().problem.truth, generated().problem.kernel);
    for (std::size_t j = 0; j < fit.layout.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        const double sd = std::sqrt(fit.covariance(i, i));
        EXPECT_LT(std::abs(fit.values(i) - truth(i)), 5.0 * sd) << fit.layout.label(j);
    }
    EXPECT_GT(chi2_prob(fit.chi2, fit.ndf), 1e-4);

    const auto report = slurp(full_run() / "report.txt");
    for (const char* needle : {"USA", "India", "Brazil", "France", "Germany", "UK", "CFR (%)", "mu (d)"})
        EXPECT_NE(report.find(needle), std::string::npos) << needle;
    for (const char* name : {"USA_cases.csv", "UK_deaths.csv", "kernel.csv"})
        EXPECT_TRUE(fs::exists(full_run() / "bands" / name)) << name;
    const auto manifest = read_json(full_run() / "manifest.json");
    EXPECT_TRUE(manifest.at("stages").contains("run"));
    EXPECT_EQ(manifest.at("rng").at("seed"), 20220425);
}

TEST(Pipeline, SeedAndFitAreByteIdenticalAcrossRuns) {
    full_run();
    const auto cfg = six_country_config("repeat", generated().csv);
    const auto log = scratch() / "repeat" / "log";
    ASSERT_EQ(cli("ingest --config " + cfg.string(), log), 0) << slurp(log);
    ASSERT_EQ(cli("seed --config " + cfg.string(), log), 0) << slurp(log);
    ASSERT_EQ(cli("fit --config " + cfg.string(), log), 0) << slurp(log);
    const auto out = scratch() / "repeat" / "out";
    for (const char* f : {"seed.json", "seed_table.txt", "fit_result.json", "report.txt", "report.json"})
        EXPECT_EQ(slurp(out / f), slurp(full_run() / f)) << f;
    EXPECT_EQ(slurp(out / "bands" / "France_deaths.csv"), slurp(full_run() / "bands" / "France_deaths.csv"));

    ASSERT_EQ(cli("report --config " + cfg.string(), log), 0) << slurp(log);
    EXPECT_EQ(slurp(log), slurp(full_run() / "report.txt"));
}

TEST(Pipeline, FitRefusesAStaleSeed) {
    const auto cfg = six_country_config("stale", generated().csv);
    const auto log = scratch() / "stale" / "log";
    ASSERT_EQ(cli("ingest --config " + cfg.string(), log), 0) << slurp(log);
    ASSERT_EQ(cli("seed --config " + cfg.string(), log), 0) << slurp(log);
    EXPECT_EQ(cli("fit --config " + cfg.string() + " --seed 7", log), 2);
    EXPECT_NE(slurp(log).find("rerun 'seed'"), std::string::npos) << slurp(log);
    EXPECT_EQ(cli("fit --config " + six_country_config("stale_missing", generated().csv).string(), log), 2);
}

TEST(Pipeline, FixedKernelDropsTwoParameters) {
    const auto cfg = six_country_config("fixed", generated().csv, {{"fit", {{"kernel_init", {{"alpha", 8.0}, {"beta", 0.51}}}}}});
    const auto log = scratch() / "fixed" / "log";
    ASSERT_EQ(cli("run --fixed-kernel --config " + cfg.string(), log), 0) << slurp(log);
    const auto fit = fit_from_json(read_json(scratch() / "fixed" / "out" / "fit_result.json"));
    EXPECT_EQ(fit.layout.size(), 62u);
    EXPECT_EQ(fit.ndf, 176);
    EXPECT_EQ(fit.kernel.alpha, 8.0);
    EXPECT_FALSE(fs::exists(scratch() / "fixed" / "out" / "bands" / "kernel.csv"));
    EXPECT_EQ(slurp(scratch() / "fixed" / "out" / "report.txt").find("alpha"), std::string::npos);
}

TEST(Pipeline, ExitCodes) {
    const auto log = scratch() / "codes.log";
    const auto empty = scratch() / "empty.csv";
    write_file(empty, "");
    EXPECT_EQ(cli("ingest --config " + six_country_config("empty", empty).string(), log), 3);
    EXPECT_NE(slurp(log).find("empty data file"), std::string::npos) << slurp(log);

    const auto bad = six_country_config("bad", generated().csv, {{"fit", {{"derivative_mode", "numeric"}}}});
    EXPECT_EQ(cli("ingest --config " + bad.string(), log), 2);

    const auto short_window = six_country_config("short", generated().csv);
    auto j = json::parse(slurp(short_window));
    j["regions"][0]["cutoff"] = "2021-11-25";
    write_file(short_window, j.dump());
    EXPECT_EQ(cli("ingest --config " + short_window.string(), log), 3);
    EXPECT_NE(slurp(log).find("shorter than one week"), std::string::npos) << slurp(log);
}

TEST(Pipeline, ThreeWeekToyRegion) {
    const auto dir = scratch() / "toy";
    std::string csv = "date,region,new_cases,new_deaths\n";
    for (int d = 0; d < 21; ++d)
        csv += format_date(add_days(parse_date("2022-01-01"), d)) + ",T," + std::to_string(100 + 10 * d) + "," +
               std::to_string(d % 3) + "\n";
    write_file(dir / "toy.csv", csv);
    const json cfg = {{"data", {{"path", (dir / "toy.csv").string()}}},
                      {"regions", {{{"name", "T"}, {"start", "2022-01-01"}, {"cutoff", "2022-01-21"}}}},
                      {"output_dir", (dir / "out").string()}};
    write_file(dir / "config.json", cfg.dump());
    const auto log = dir / "log";
    ASSERT_EQ(cli("ingest --config " + (dir / "config.json").string(), log), 0) << slurp(log);
    std::istringstream in(slurp(weekly_path(dir / "out", "T", Metric::cases)));
    const auto weekly = read_weekly(in);
    ASSERT_EQ(weekly.points.size(), 3u);
    EXPECT_EQ(weekly.points[0].t, 3.0);
    EXPECT_DOUBLE_EQ(weekly.points[0].y, 130.0);
    EXPECT_DOUBLE_EQ(weekly.points[2].y, 270.0);
    EXPECT_DOUBLE_EQ(weekly.points[1].sigma, std::sqrt(2800.0 / 6.0) / std::sqrt(7.0));
    std::istringstream din(slurp(weekly_path(dir / "out", "T", Metric::deaths)));
    EXPECT_EQ(read_weekly(din).points.size(), 1u);
}
