#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "umlab/cli.hpp"
#include "umlab/checkpoint.hpp"
#include "umlab/datahub.hpp"
#include "umlab/evalkit.hpp"
#include "test_util.hpp"

#include <sstream>
#include <string>
#include <vector>

using namespace umlab;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "umlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("argument errors") {
    testutil::TempDir dir("cli_args");
    const Result none = run({});
    CHECK(none.code == 1);
    const Result missing = run({"eval", "--ckpt", dir.file("c")});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("--data") != std::string::npos);
    CHECK(run({"eval", "--ckpt", "a", "--data", "b", "--bogus"}).code == 1);
    CHECK(run({"synth", "--out", dir.file("d"), "--clusters", "0", "--per", "3", "--dim", "2", "--seed", "1"}).code == 1);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"--threads", "0", "synth"}).code == 1);
}

TEST_CASE("runtime errors") {
    testutil::TempDir dir("cli_runtime");
    testutil::write_text(dir.file("bad.umlv"), "not a dataset\n");
    testutil::write_text(dir.file("cfg"), "way = 4\n");
    const Result r = run({"train", "--config", dir.file("cfg"), "--data", dir.file("bad.umlv"), "--out", dir.file("c")});
    CHECK(r.code == 2);
    CHECK(r.err.find("error:") == 0);
    CHECK(run({"eval", "--ckpt", dir.file("nope"), "--data", dir.file("bad.umlv")}).code == 2);
    CHECK(run({"synth", "--out", dir.file("d"), "--clusters", "3", "--per", "3", "--dim", "2", "--seed", "1",
               "--holdout", "3", "--holdout-out", dir.file("h")})
              .code == 1);
}

TEST_CASE("synth, train, eval, probe and finetune") {
    testutil::TempDir dir("cli_flow");
    const auto base = dir.file("base.umlv");
    const auto novel = dir.file("novel.umlv");
    Result r = run({"synth", "--out", base, "--clusters", "12", "--per", "12", "--dim", "6", "--seed", "3", "--sep", "3",
                    "--holdout", "6", "--holdout-out", novel});
    REQUIRE(r.code == 0);
    const Dataset b = load_dataset(base);
    const Dataset n = load_dataset(novel);
    CHECK(b.rows() == 72);
    CHECK(n.rows() == 72);
    CHECK(n.num_classes() == 6);

    testutil::write_text(dir.file("cfg"),
                         "mode = hms+tsp\nway = 4\nanchors = 4\ntasks = 4\nepochs = 2\nepisodes_per_epoch = 3\n"
                         "hidden = 8\nembed_dim = 4\n");
    const auto ckpt = dir.file("model.ckpt");
    r = run({"train", "--config", dir.file("cfg"), "--data", base, "--out", ckpt});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("epoch mean_loss", 0) == 0);
    CHECK(load_checkpoint(ckpt).head.has_value());

    r = run({"train", "--config", dir.file("cfg"), "--data", base, "--out", ckpt, "--report", dir.file("log")});
    REQUIRE(r.code == 0);
    CHECK(r.out.empty());
    CHECK(testutil::read_text(dir.file("log")).rfind("epoch mean_loss", 0) == 0);

    const auto report = dir.file("report.txt");
    r = run({"--threads", "2", "eval", "--ckpt", ckpt, "--data", novel, "--tasks", "50", "--query", "5", "--report", report});
    REQUIRE(r.code == 0);
    const EvalReport er = read_report(report);
    CHECK(r.out == format_report(er));
    CHECK(er.num_tasks == 50);
    CHECK(er.N == 5);
    CHECK(er.Qe == 5);
    CHECK(r.out == format_report(evaluate_fsl(load_checkpoint(ckpt), n, 5, 1, 5, 50, MetricSpec{}, 0)));

    r = run({"probe", "--ckpt", ckpt, "--data", novel, "--folds", "3"});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("probe_accuracy: ", 0) == 0);

    testutil::write_text(dir.file("ft"), "way = 4\nanchors = 4\ntasks = 4\nepochs = 1\nepisodes_per_epoch = 2\n");
    r = run({"finetune", "--ckpt", ckpt, "--data", novel, "--ratio", "0.5", "--config", dir.file("ft"), "--out",
             dir.file("ft.ckpt")});
    REQUIRE(r.code == 0);
    CHECK(load_checkpoint(dir.file("ft.ckpt")).model.flatten() != load_checkpoint(ckpt).model.flatten());
}
