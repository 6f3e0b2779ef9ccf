#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "repeval/cli.hpp"
#include "repeval/testing/scripted_backend.hpp"
#include "repeval/testing/synthetic.hpp"
#include "support/temp.hpp"

using namespace repeval;
using repeval::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = REPEVAL_SOURCE_DIR;
const fs::path kBench = kSource / "fixtures" / "bench20";

int run_cli(std::vector<std::string> args, std::string* captured = nullptr) {
    args.insert(args.begin(), "repeval");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    std::streambuf* old = std::cout.rdbuf(sink.rdbuf());
    const int code = cli::run(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old);
    if (captured) *captured = sink.str();
    return code;
}

void copy_dir(const fs::path& from, const fs::path& to) {
    fs::create_directories(to);
    fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

// overwrite the response content of one cached stage-2 entry
std::string poison_one_stage2_entry(const fs::path& cache_dir) {
    for (const auto& entry : fs::recursive_directory_iterator(cache_dir)) {
        if (!entry.is_regular_file()) continue;
        ojson j = ojson::parse(read_file(entry.path()));
        const std::string user = j.at("request").at("messages").at(1).at("content");
        if (user.rfind("Below is a comparison", 0) != 0) continue;
        const std::string stage1 = j.at("response").at("content");
        if (stage1.find("NO ERRORS") != std::string::npos) continue;  // shared entry
        j["response"]["content"] = "total mush, not a judgment at all";
        write_file_atomic(entry.path(), j.dump(2) + "\n");
        return entry.path().string();
    }
    throw Error("no stage-2 cache entry found to poison");
}

std::string corpus_jsonl(int reports, std::uint64_t seed) {
    std::string out;
    for (const Report& r : testing::synthetic_reports(reports, seed))
        out += to_json(r).dump() + "\n";
    return out;
}

}  // namespace

TEST_CASE("cmd_judge runs the bundled fixture offline") {
    TempDir dir;
    const int code = run_cli({"judge", "--backend", "replay", "--cache-dir",
                              (kBench / "cache").string(), "--pairs",
                              (kBench / "pairs.jsonl").string(), "--out",
                              dir.file("judgments.jsonl").string(), "--summary",
                              dir.file("summary.json").string()});
    CHECK(code == cli::kExitOk);

    auto lines = read_jsonl(dir.file("judgments.jsonl"));
    REQUIRE(lines.size() == 20);
    for (const ojson& line : lines) {
        CHECK(line.contains("errors"));
        Judgment j = judgment_from_json(line);
        CHECK(validate_judgment(j).empty());
        CHECK(j.strategy == JudgeStrategy::two_stage);
    }
    ojson summary = ojson::parse(read_file(dir.file("summary.json")));
    CHECK(summary.at("pairs") == 20);
    CHECK(summary.at("failed") == 0);
    CHECK(summary.at("repaired") == 4);
    CHECK(summary.at("config").at("template_version") == "v1");
}

TEST_CASE("cmd_judge with a poisoned cache entry honors --strict") {
    TempDir dir;
    copy_dir(kBench / "cache", dir.file("cache"));
    poison_one_stage2_entry(dir.file("cache"));

    const std::vector<std::string> base = {
        "judge",  "--backend", "replay",
        "--cache-dir", dir.file("cache").string(),
        "--pairs", (kBench / "pairs.jsonl").string(),
        "--out",   dir.file("judgments.jsonl").string()};

    std::vector<std::string> strict = base;
    strict.push_back("--strict");
    CHECK(run_cli(strict) == cli::kExitPartial);

    CHECK(run_cli(base) == cli::kExitOk);  // non-strict reports and continues
    int failures = 0;
    for (const ojson& line : read_jsonl(dir.file("judgments.jsonl")))
        if (line.contains("error") && !line.contains("errors")) ++failures;
    CHECK(failures == 1);
}

TEST_CASE("live backend without an API key fails preflight with exit 2") {
    ::unsetenv("REPEVAL_API_KEY");
    TempDir dir;
    const int code = run_cli({"judge", "--backend", "live", "--base-url",
                              "http://127.0.0.1:1", "--pairs",
                              (kBench / "pairs.jsonl").string(), "--out",
                              dir.file("out.jsonl").string()});
    CHECK(code == cli::kExitConfig);
    CHECK_FALSE(fs::exists(dir.file("out.jsonl")));  // failed before any work
}

TEST_CASE("cmd_benchmark is byte-reproducible and matches its CSV") {
    TempDir dir;
    auto run_once = [&](const std::string& suffix) {
        const int code = run_cli({"benchmark", "--backend", "replay", "--cache-dir",
                                  (kBench / "cache").string(), "--pairs",
                                  (kBench / "pairs.jsonl").string(), "--annotations",
                                  (kBench / "annotations.csv").string(), "--report",
                                  dir.file("report" + suffix + ".json").string(), "--csv",
                                  dir.file("pairs" + suffix + ".csv").string()});
        REQUIRE(code == cli::kExitOk);
    };
    run_once("1");
    run_once("2");
    CHECK(read_file(dir.file("report1.json")) == read_file(dir.file("report2.json")));
    CHECK(read_file(dir.file("pairs1.csv")) == read_file(dir.file("pairs2.csv")));

    ojson report = ojson::parse(read_file(dir.file("report1.json")));
    CHECK(report.at("per_pair").size() == 20);
    CHECK(report.at("failures").empty());
    CHECK(report.at("config").at("strategy") == "two_stage");
}

TEST_CASE("cmd_benchmark rejects annotations for unknown pairs") {
    TempDir dir;
    std::string csv = read_file(kBench / "annotations.csv");
    csv += "ghost-pair,r0,0,0,0,0,0,0,0,0,0,0,0,0\n";
    write_file_atomic(dir.file("annotations.csv"), csv);
    std::ostringstream err_sink;
    std::streambuf* old = std::cerr.rdbuf(err_sink.rdbuf());
    const int code = run_cli({"benchmark", "--backend", "replay", "--cache-dir",
                              (kBench / "cache").string(), "--pairs",
                              (kBench / "pairs.jsonl").string(), "--annotations",
                              dir.file("annotations.csv").string(), "--report",
                              dir.file("report.json").string()});
    std::cerr.rdbuf(old);
    CHECK(code == cli::kExitConfig);
    CHECK(err_sink.str().find("ghost-pair") != std::string::npos);
}

TEST_CASE("cmd_agreement reports leave-one-out and pairwise taus") {
    TempDir dir;
    const int code = run_cli({"agreement", "--annotations",
                              (kBench / "annotations.csv").string(), "--out",
                              dir.file("agreement.json").string(), "--csv",
                              dir.file("agreement.csv").string()});
    CHECK(code == cli::kExitOk);
    ojson out = ojson::parse(read_file(dir.file("agreement.json")));
    REQUIRE(out.at("leave_one_out").size() == 6);
    for (const ojson& row : out.at("leave_one_out")) {
        CHECK(row.at("tau").is_number());
        CHECK(row.at("tau").get<double>() > 0.5);  // raters jitter around the same totals
        CHECK(row.at("n") == 20);
    }
    CHECK(out.at("pairwise").size() == 15);  // 6 choose 2
    const std::string csv = read_file(dir.file("agreement.csv"));
    CHECK(csv.find("rater_id,tau,n") != std::string::npos);
}

TEST_CASE("cmd_agreement on an incomplete grid exits 2 naming the missing cell") {
    TempDir dir;
    write_file_atomic(dir.file("annotations.csv"),
                      "pair_id,rater_id," +
                          [] {
                              std::string cols;
                              for (const std::string& c : annotation_count_columns())
                                  cols += (cols.empty() ? "" : ",") + c;
                              return cols;
                          }() +
                          "\n"
                          "p0,r0,1,0,0,0,0,0,0,0,0,0,0,0\n"
                          "p1,r0,0,1,0,0,0,0,0,0,0,0,0,0\n"
                          "p0,r1,1,0,0,0,0,0,0,0,0,0,0,0\n");
    std::ostringstream err_sink;
    std::streambuf* old = std::cerr.rdbuf(err_sink.rdbuf());
    const int code = run_cli({"agreement", "--annotations",
                              dir.file("annotations.csv").string(), "--out",
                              dir.file("agreement.json").string()});
    std::cerr.rdbuf(old);
    CHECK(code == cli::kExitConfig);
    CHECK(err_sink.str().find("rater r1") != std::string::npos);
    CHECK(err_sink.str().find("pair p1") != std::string::npos);
}

TEST_CASE("cmd_pair is deterministic for a fixed seed") {
    TempDir dir;
    write_file_atomic(dir.file("corpus.jsonl"), corpus_jsonl(30, 99));
    auto run_pairing = [&](const std::string& out) {
        return run_cli({"pair", "--input", dir.file("corpus.jsonl").string(), "--mode",
                        "random", "--count", "10", "--seed", "7", "--out",
                        dir.file(out).string()});
    };
    CHECK(run_pairing("a.jsonl") == cli::kExitOk);
    CHECK(run_pairing("b.jsonl") == cli::kExitOk);
    CHECK(read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl")));

    auto lines = read_jsonl(dir.file("a.jsonl"));
    REQUIRE(lines.size() == 11);  // manifest + 10 pairs
    CHECK(lines[0].contains("manifest"));
    CHECK(lines[0].at("manifest").at("seed") == 7);
    for (std::size_t i = 1; i < lines.size(); ++i)
        CHECK(lines[i].at("provenance") == "random");
}

TEST_CASE("cmd_pair bleu_top emits bleu-matched pairs") {
    TempDir dir;
    write_file_atomic(dir.file("corpus.jsonl"), corpus_jsonl(25, 123));
    const int code = run_cli({"pair", "--input", dir.file("corpus.jsonl").string(), "--mode",
                              "bleu_top", "--count", "5", "--seed", "3", "--out",
                              dir.file("pairs.jsonl").string()});
    CHECK(code == cli::kExitOk);
    auto lines = read_jsonl(dir.file("pairs.jsonl"));
    REQUIRE(lines.size() == 6);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        ReportPair p = pair_from_json(lines[i]);
        CHECK(p.provenance == Provenance::bleu_matched);
        CHECK(p.reference.id != p.candidate.id);
    }
}

TEST_CASE("cmd_screen replays verdicts and fails open on cache misses") {
    TempDir dir;
    // three pairs; record screen verdicts for only the first two
    Corpus corpus = testing::synthetic_corpus(8, 55);
    PairingSpec spec;
    spec.mode = PairingSpec::Mode::random;
    spec.count = 3;
    spec.seed = 2;
    auto pairs = make_pairs(corpus, spec);
    std::vector<ojson> lines;
    for (const ReportPair& p : pairs) lines.push_back(to_json(p));
    write_jsonl_atomic(dir.file("pairs.jsonl"), lines);

    testing::ScriptedBackend scripted;
    scripted.enqueue_content("KEEP both look usable");
    scripted.enqueue_content("REJECT: candidate is garbled");
    RecordingBackend recorder(scripted, dir.file("cache"));
    screen_pairs({pairs[0], pairs[1]}, recorder, TemplateSet::defaults_v1().screen, {});

    std::string stdout_text;
    const int code = run_cli({"screen", "--backend", "replay", "--cache-dir",
                              dir.file("cache").string(), "--pairs",
                              dir.file("pairs.jsonl").string(), "--out",
                              dir.file("kept.jsonl").string(), "--report",
                              dir.file("screen.json").string()},
                             &stdout_text);
    CHECK(code == cli::kExitPartial);  // one pair unscreened
    ojson report = ojson::parse(read_file(dir.file("screen.json")));
    CHECK(report.at("kept") == 2);  // pair 0 kept, pair 2 kept-but-unscreened
    REQUIRE(report.at("rejected").size() == 1);
    CHECK(report.at("rejected").at(0).at("reason") == "candidate is garbled");
    REQUIRE(report.at("unscreened").size() == 1);
    CHECK(report.at("unscreened").at(0) == pairs[2].pair_id);
    CHECK(read_jsonl(dir.file("kept.jsonl")).size() == 2);
}

TEST_CASE("cmd_export writes reparseable SFT records for every judgment") {
    TempDir dir;
    REQUIRE(run_cli({"judge", "--backend", "replay", "--cache-dir",
                     (kBench / "cache").string(), "--pairs",
                     (kBench / "pairs.jsonl").string(), "--out",
                     dir.file("judgments.jsonl").string()}) == cli::kExitOk);
    std::string stdout_text;
    const int code = run_cli({"export", "--pairs", (kBench / "pairs.jsonl").string(),
                              "--judgments", dir.file("judgments.jsonl").string(), "--out",
                              dir.file("sft.jsonl").string()},
                             &stdout_text);
    CHECK(code == cli::kExitOk);
    auto records = load_sft(dir.file("sft.jsonl"));
    REQUIRE(records.size() == 20);
    for (const SftRecord& r : records) {
        Judgment parsed = parse_judgment(r.completion, r.meta.pair_id, r.meta.model_id,
                                         r.meta.prompt_version, JudgeStrategy::two_stage);
        CHECK(validate_judgment(parsed).empty());
    }
}

TEST_CASE("cmd_plot emits the three series from a benchmark report") {
    TempDir dir;
    REQUIRE(run_cli({"benchmark", "--backend", "replay", "--cache-dir",
                     (kBench / "cache").string(), "--pairs",
                     (kBench / "pairs.jsonl").string(), "--annotations",
                     (kBench / "annotations.csv").string(), "--report",
                     dir.file("report.json").string()}) == cli::kExitOk);
    const int code = run_cli({"plot", "--report", dir.file("report.json").string(),
                              "--out-dir", dir.file("plots").string(), "--svg"});
    CHECK(code == cli::kExitOk);
    const std::string scatter = read_file(dir.file("plots") / "scatter.csv");
    CHECK(scatter.find("pair_id,judge_total,rater_mean") != std::string::npos);
    const std::string hist = read_file(dir.file("plots") / "error_hist.csv");
    CHECK(hist.find("bin_center,count") != std::string::npos);
    const std::string ba = read_file(dir.file("plots") / "bland_altman.csv");
    CHECK(ba.find("# loa_lower:") != std::string::npos);
    CHECK(ba.find("mean,diff") != std::string::npos);
    CHECK(read_file(dir.file("plots") / "scatter.svg").find("<svg") == 0);
    CHECK(read_file(dir.file("plots") / "bland_altman.svg").find("<svg") == 0);
}

TEST_CASE("cmd_plot computes bland-altman from a two-series score file") {
    TempDir dir;
    write_file_atomic(dir.file("scores.csv"),
                      "pair_id,a,b\np0,2,1\np1,4,1\np2,3,3\n");
    const int code = run_cli({"plot", "--scores", dir.file("scores.csv").string(),
                              "--out-dir", dir.file("plots").string()});
    CHECK(code == cli::kExitOk);
    const std::string ba = read_file(dir.file("plots") / "bland_altman.csv");
    CHECK(ba.find("# mean_diff:") != std::string::npos);
}

TEST_CASE("cmd_plot rejects an empty or unknown report") {
    TempDir dir;
    write_file_atomic(dir.file("empty.json"), R"({"per_pair": []})");
    CHECK(run_cli({"plot", "--report", dir.file("empty.json").string(), "--out-dir",
                   dir.file("plots").string()}) == cli::kExitConfig);
    write_file_atomic(dir.file("odd.json"), R"({"something": "else"})");
    CHECK(run_cli({"plot", "--report", dir.file("odd.json").string(), "--out-dir",
                   dir.file("plots").string()}) == cli::kExitConfig);
}

TEST_CASE("config precedence is flags over file over environment") {
    TempDir dir;
    write_file_atomic(dir.file("run.conf"),
                      "# fixture config\nmodel = file-model\nbase_url = http://from-file\n");
    ::setenv("REPEVAL_BASE_URL", "http://from-env", 1);

    std::string stdout_text;
    const int code = run_cli({"judge", "--config", dir.file("run.conf").string(), "--model",
                              "flag-model", "--backend", "replay", "--cache-dir",
                              (kBench / "cache").string(), "--pairs",
                              (kBench / "pairs.jsonl").string(), "--out",
                              dir.file("j.jsonl").string(), "--summary",
                              dir.file("s.json").string()},
                             &stdout_text);
    ::unsetenv("REPEVAL_BASE_URL");
    // flag-model renders different cache keys, so pairs fail; exit is still 0 without --strict
    CHECK(code == cli::kExitOk);
    ojson summary = ojson::parse(read_file(dir.file("s.json")));
    CHECK(summary.at("config").at("model") == "flag-model");
    CHECK(summary.at("config").at("base_url") == "http://from-file");
}

TEST_CASE("unknown config file keys are a configuration error") {
    TempDir dir;
    write_file_atomic(dir.file("run.conf"), "no_such_key = 1\n");
    CHECK(run_cli({"judge", "--config", dir.file("run.conf").string(), "--backend", "replay",
                   "--cache-dir", (kBench / "cache").string(), "--pairs",
                   (kBench / "pairs.jsonl").string(), "--out",
                   dir.file("j.jsonl").string()}) == cli::kExitConfig);
}

TEST_CASE("shipped data files match the built-in defaults") {
    CHECK(ojson::parse(read_file(kSource / "data" / "category_synonyms.json")) ==
          SynonymTable::defaults().to_json());
    const TemplateSet from_disk = TemplateSet::load_dir(kSource / "data" / "templates" / "v1");
    const TemplateSet builtin = TemplateSet::defaults_v1();
    CHECK(from_disk.system_text == builtin.system_text);
    CHECK(from_disk.single.body == builtin.single.body);
    CHECK(from_disk.compare.body == builtin.compare.body);
    CHECK(from_disk.count.body == builtin.count.body);
    CHECK(from_disk.screen.body == builtin.screen.body);
    CHECK(from_disk.version == "v1");
}
