#include <doctest.h>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "laq/cli.hpp"
#include "laq/dataset_store.hpp"
#include "laq/errors.hpp"
#include "laq/experiment.hpp"
#include "support.hpp"

using namespace laq;
using namespace laq::cli;
using laq::testing::TempDir;
using laq::testing::read_text;
using laq::testing::write_text;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "laq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::size_t data_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::size_t rows = 0;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("#", 0) == 0) continue;
    if (!header) {
      header = true;
      continue;
    }
    ++rows;
  }
  return rows;
}

ExperimentFile parse(const std::string& text) {
  std::istringstream in(text);
  return parse_experiment(in, "test.exp");
}

std::string config_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("quadratic gd run writes one row per iterate") {
    TempDir dir("run");
    const auto o = invoke({"run", "--algorithm", "gd", "--model", "quadratic", "--p", "4",
                           "--iters", "10", "--seed", "1", "--out", dir.path().string()});
    REQUIRE(o.code == kExitOk);
    const std::string csv = read_text(dir / "gd_seed1.csv");
    CHECK(data_rows(csv) == 11);
    CHECK(csv.find("# algorithm=gd") != std::string::npos);
    CHECK(read_text(dir / "summary.txt").find("gd") != std::string::npos);
    CHECK(o.out.find("Communication #") != std::string::npos);
  }

  TEST_CASE("repeated runs give byte-identical csv files") {
    TempDir a("det-a"), b("det-b");
    const std::vector<std::string> common{"run", "--algorithm", "laq,slaq", "--model", "logistic",
                                          "--dataset", "synthetic", "--workers", "4",
                                          "--minibatch", "20", "--iters", "30", "--seed", "5",
                                          "--alpha", "0.5", "--bits", "3", "--bigD", "4",
                                          "--max-staleness", "10"};
    auto args_a = common, args_b = common;
    for (auto* args : {&args_a, &args_b}) {
      args->push_back("--cache-dir");
      args->push_back((args == &args_a ? a : b).path().string());
      args->push_back("--out");
      args->push_back((args == &args_a ? a : b).path().string());
    }
    REQUIRE(invoke(args_a).code == kExitOk);
    REQUIRE(invoke(args_b).code == kExitOk);
    for (const char* name : {"laq_seed5.csv", "slaq_seed5.csv"}) {
      const std::string first = read_text(a / name);
      CHECK_FALSE(first.empty());
      CHECK(first == read_text(b / name));
    }
  }

  TEST_CASE("flag beats file section beats file common beats default") {
    const auto file = parse("algorithm = gd, laq\nmodel = quadratic\nalpha = 0.05\nbits = 5\n"
                            "[laq]\nalpha = 0.03\n");
    auto plans = resolve(file, {});
    REQUIRE(plans.size() == 2);
    CHECK(plans[0].config.algorithm == Algorithm::gd);
    CHECK(plans[0].config.alpha == 0.05);
    CHECK(plans[1].config.alpha == 0.03);
    CHECK(plans[1].config.bits == 5);
    CHECK(plans[1].config.max_staleness == engine::RunConfig{}.max_staleness);

    plans = resolve(file, {{"alpha", "0.01"}});
    CHECK(plans[0].config.alpha == 0.01);
    CHECK(plans[1].config.alpha == 0.01);

    TempDir dir("prec");
    write_text(dir / "exp.txt", "algorithm = gd\nmodel = quadratic\np = 4\niters = 3\n");
    const auto o = invoke({"run", "--experiment", (dir / "exp.txt").string(), "--iters", "6",
                           "--out", dir.path().string()});
    REQUIRE(o.code == kExitOk);
    CHECK(data_rows(read_text(dir / "gd_seed1.csv")) == 7);
  }

  TEST_CASE("xi and recipe settings") {
    auto plan = resolve(parse("algorithm = laq\nmodel = quadratic\nbigD = 4\nxi = 0.1\n"), {})[0];
    CHECK(plan.config.xi == std::vector<double>(4, 0.1));
    plan = resolve(parse("algorithm = laq\nmodel = quadratic\nbigD = 2\nxi = 0.3, 0.1\n"), {})[0];
    CHECK(plan.config.xi == std::vector<double>{0.3, 0.1});
    plan = resolve(parse("algorithm = laq\nmodel = quadratic\nbigD = 5\nxi = recipe\n"
                         "alpha = recipe\n"),
                   {})[0];
    CHECK(plan.config.xi[0] == doctest::Approx(1.0 / 80.0));
    CHECK(plan.recipe_alpha);
    CHECK_THROWS_AS(resolve(parse("model = quadratic\nbigD = 3\nxi = 0.1, 0.2\n"), {}),
                    ConfigError);
    CHECK_THROWS_AS(resolve(parse("model = quadratic\nalgorithm = sgd\n"), {}), ConfigError);
  }

  TEST_CASE("experiment parse errors name the line") {
    CHECK(config_error("alpha = 0.1\nstepsize = 3\n").find("test.exp:2") != std::string::npos);
    CHECK(config_error("[laq]\nmodel = quadratic\n").find("test.exp:2") != std::string::npos);
    CHECK(config_error("[adam]\n").find("test.exp:1") != std::string::npos);
    CHECK(config_error("alpha = 0.1\nalpha = 0.2\n").find("test.exp:2") != std::string::npos);
    CHECK(config_error("alpha =\n").find("test.exp:1") != std::string::npos);
    CHECK(config_error("just words\n").find("test.exp:1") != std::string::npos);
    CHECK(config_error("# comment\n\nSeeds = 1,2\nmax-staleness = 4\n") == "no error");
    CHECK(normalize_key("Max-Staleness") == "max_staleness");
    CHECK(normalize_key("algorithms") == "algorithm");
  }

  TEST_CASE("presets carry the experiment parameters") {
    const auto names = preset_names();
    CHECK(std::find(names.begin(), names.end(), "paper-gd-suite") != names.end());
    const auto gd = resolve(preset("paper-gd-suite"), {});
    REQUIRE(gd.size() == 4);
    CHECK(gd[0].config.algorithm == Algorithm::gd);
    CHECK(gd[3].config.algorithm == Algorithm::laq);
    const auto& laq = gd[3].config;
    CHECK(laq.alpha == 0.02);
    CHECK(laq.bits == 3);
    CHECK(laq.xi == std::vector<double>(10, 0.08));
    CHECK(laq.max_staleness == 100);
    CHECK(gd[3].problem.workers == 10);
    CHECK(gd[3].problem.lambda == 0.01);
    CHECK(gd[3].problem.model == "logistic");
    CHECK(gd[3].problem.dataset == "mnist");

    const auto sgd = resolve(preset("paper-sgd-suite"), {});
    REQUIRE(sgd.size() == 2);
    CHECK(sgd[1].config.algorithm == Algorithm::slaq);
    CHECK(sgd[1].config.minibatch == 500);
    CHECK(sgd[1].config.alpha == 0.008);

    CHECK_THROWS_AS(preset("paper-adam-suite"), ConfigError);
    // The printed text parses back to the same description.
    std::istringstream in(preset_text("paper-gd-suite"));
    const auto again = parse_experiment(in, "preset");
    CHECK(again.common == preset("paper-gd-suite").common);
  }

  TEST_CASE("exit codes") {
    TempDir dir("exit");
    CHECK(invoke({"run", "--algorithm", "adam", "--model", "quadratic", "--out",
                  dir.path().string()})
              .code == kExitConfig);
    CHECK(invoke({"run", "--model", "quadratic", "--bits", "40", "--out", dir.path().string()})
              .code == kExitConfig);
    CHECK(invoke({"run", "--no-such-flag"}).code == kExitConfig);
    CHECK(invoke({}).code == kExitConfig);

    const auto diverged = invoke({"run", "--algorithm", "gd", "--model", "quadratic", "--alpha",
                                  "5", "--iters", "500", "--out", dir.path().string()});
    CHECK(diverged.code == kExitDivergence);
    CHECK(diverged.err.find("diverged") != std::string::npos);

    const auto missing = invoke({"run", "--algorithm", "gd", "--dataset", "mnist", "--cache-dir",
                                 (dir / "empty").string(), "--out", dir.path().string()});
    CHECK(missing.code == kExitData);
    CHECK(missing.err.find("laq dataset fetch mnist") != std::string::npos);

    CHECK(invoke({"verify", "nonsense"}).code == kExitConfig);
    CHECK(invoke({"verify", "gradients"}).code == kExitOk);
  }

  TEST_CASE("recipe warnings are advisory") {
    TempDir dir("warn");
    const auto o = invoke({"run", "--algorithm", "laq", "--model", "quadratic", "--iters", "5",
                           "--alpha", "0.02", "--out", dir.path().string()});
    CHECK(o.code == kExitOk);
    CHECK(o.err.find("warning") != std::string::npos);
  }

  TEST_CASE("dataset check against a fixture manifest") {
    TempDir dir("ds");
    std::filesystem::create_directories(dir / "toy");
    write_text(dir / "toy" / "a.bin", "abc");
    // Published SHA-256 test vector for "abc".
    const std::string abc = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
    CHECK(store::sha256_hex("abc") == abc);
    write_text(dir / "good.sha256", abc + "  a.bin\n");
    write_text(dir / "bad.sha256", std::string(64, '0') + "  a.bin\n");
    write_text(dir / "gone.sha256", abc + "  b.bin\n");

    const std::string cache = dir.path().string();
    auto ok = invoke({"dataset", "check", "toy", "--cache-dir", cache, "--manifest",
                      (dir / "good.sha256").string()});
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.find("OK") != std::string::npos);
    CHECK(invoke({"dataset", "check", "toy", "--cache-dir", cache, "--manifest",
                  (dir / "bad.sha256").string()})
              .code != kExitOk);
    CHECK(invoke({"dataset", "check", "toy", "--cache-dir", cache, "--manifest",
                  (dir / "gone.sha256").string()})
              .code != kExitOk);
    CHECK(invoke({"dataset", "check", "mnist", "--cache-dir", cache}).code != kExitOk);
    CHECK(invoke({"dataset", "check", "imagenet", "--cache-dir", cache}).code == kExitConfig);
  }

  TEST_CASE("manifest parsing") {
    std::istringstream in("# pinned\n\nABCDEF0123456789abcdef0123456789abcdef0123456789abcdef0123456789 *x.gz\n");
    const auto entries = store::parse_manifest(in);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].filename == "x.gz");
    CHECK(entries[0].sha256 == "abcdef0123456789abcdef0123456789abcdef0123456789abcdef0123456789");
    std::istringstream bad("nothex  x.gz\n");
    CHECK_THROWS_AS(store::parse_manifest(bad), DataError);
    CHECK(store::builtin_manifest("mnist").size() == 4);
    CHECK(store::builtin_manifest("ijcnn1").empty());
    CHECK(store::dataset_dir("cache", "mnist") == std::filesystem::path("cache") / "mnist");
  }
}
