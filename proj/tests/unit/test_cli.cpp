#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vslnet/cli.hpp"
#include "vslnet/config.hpp"

using namespace vslnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vslnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& f) {
  std::ifstream is(f, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vslnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& f, const std::string& text) { std::ofstream(f) << text; }

nlohmann::json last_json_line(const std::string& text) {
  std::istringstream is(text);
  std::string line, last;
  while (std::getline(is, line))
    if (!line.empty()) last = line;
  return nlohmann::json::parse(last);
}

}  // namespace

TEST_CASE("config json round trip and strict keys") {
  RunConfig c;
  c.model.variant = Variant::kNetL;
  c.model.scales = {8, 16};
  c.model.max_length = 32;
  c.model.extension_ratio = kInfiniteExtension;
  c.train.learning_rate = 3e-4;
  c.synth.seed = 99;
  c.data.dataset = "data";
  c.eval.thresholds = {0.1, 0.9};
  const auto j = to_json(c);
  CHECK(j.at("model").at("extension_ratio") == "inf");
  const auto back = run_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.model.scales == std::vector<std::size_t>{8, 16});

  try {
    model_config_from_json(nlohmann::json{{"dimm", 3}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dimm") != std::string::npos);
  }
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epochs", -1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"modle", {}}}), ConfigError);
  const auto partial = train_config_from_json(nlohmann::json{{"epochs", 3}});
  CHECK(partial.epochs == 3);
  CHECK(partial.batch_size == TrainConfig{}.batch_size);

  const auto dir = scratch("cfg");
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), DataError);
  write(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("help and usage errors") {
  auto r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("synth") != std::string::npos);
  CHECK(cli({"train", "--help"}).out.find("--resume") != std::string::npos);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"train", "--bogus"}).code == kExitUsage);
  r = cli({"train", "-o", scratch("nodata").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--dataset") != std::string::npos);

  const auto dir = scratch("usage");
  write(dir / "c.json", R"({"model":{"dim":10,"heads":3}})");
  r = cli({"train", "-c", (dir / "c.json").string(), "-d", (dir / "nowhere").string(), "-o",
           (dir / "run").string()});
  CHECK(r.code == kExitUsage);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("data errors exit with 2") {
  const auto dir = scratch("dataerr");
  auto r = cli({"train", "-d", (dir / "nowhere").string(), "-o", (dir / "run").string()});
  CHECK(r.code == kExitData);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  r = cli({"eval", "-d", (dir / "nowhere").string(), "-o", (dir / "run").string()});
  CHECK(r.code == kExitData);
}

TEST_CASE("synth is deterministic") {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(cli({"synth", "--seed", "7", "--samples", "200", "-o", a.string()}).code == kExitOk);
  REQUIRE(cli({"synth", "--seed", "7", "--samples", "200", "-o", b.string()}).code == kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 200 + 5);
  const auto synth = nlohmann::json::parse(slurp(a / "synth_config.json"));
  CHECK(synth.at("train_samples") == 160);
  CHECK(synth.at("val_samples") == 20);
}

TEST_CASE("train, predict and eval form a consistent pipeline") {
  const auto dir = scratch("pipeline");
  REQUIRE(cli({"synth", "--samples", "50", "-o", (dir / "data").string()}).code == kExitOk);
  write(dir / "run.json", R"({
    "model": {"variant": "vslnet", "dim": 16, "heads": 4, "max_length": 24, "dtype": "f64"},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.001}
  })");
  const std::string data = (dir / "data").string(), run = (dir / "run").string();
  const auto before = slurp(dir / "data" / "manifest.jsonl");

  auto r = cli({"train", "-c", (dir / "run.json").string(), "-d", data, "-o", run});
  REQUIRE(r.code == kExitOk);
  const auto summary = last_json_line(r.out);
  for (const char* f : {"config.json", "best.ckpt", "last.ckpt", "train_log.jsonl", "summary.json"})
    CHECK(fs::exists(dir / "run" / f));
  const auto resolved = nlohmann::json::parse(slurp(dir / "run" / "config.json"));
  CHECK(resolved.at("model").at("video_dim") == 32);
  CHECK(resolved.at("train").at("epochs") == 2);

  // The best epoch's validation mIoU is reproduced by evaluating best.ckpt on val.
  r = cli({"eval", "-d", data, "-o", run, "--split", "val"});
  REQUIRE(r.code == kExitOk);
  const auto ev = last_json_line(r.out);
  CHECK(ev.at("miou").get<double>() == summary.at("best_val_miou").get<double>());

  r = cli({"predict", "-d", data, "-o", run, "--split", "test"});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "run" / "predictions_test.jsonl"));
  const auto from_file = cli({"eval", "-d", data, "-o", run, "--split", "test", "--predictions",
                              (dir / "run" / "predictions_test.jsonl").string()});
  const auto from_ckpt = cli({"eval", "-d", data, "-o", run, "--split", "test"});
  CHECK(last_json_line(from_file.out).at("miou") == last_json_line(from_ckpt.out).at("miou"));

  // Re-running from the stored config reproduces the checkpoint bit for bit.
  r = cli({"train", "-c", (dir / "run" / "config.json").string(), "-o", (dir / "rerun").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(slurp(dir / "run" / "last.ckpt") == slurp(dir / "rerun" / "last.ckpt"));
  CHECK(slurp(dir / "data" / "manifest.jsonl") == before);

  // Resuming with a different config is refused.
  r = cli({"train", "-c", (dir / "run" / "config.json").string(), "-o", (dir / "resume").string(),
           "--lr", "0.5", "--resume", (dir / "run" / "last.ckpt").string()});
  CHECK(r.code == kExitUsage);
}

TEST_CASE("eval of a hand-written prediction file") {
  const auto dir = scratch("hand");
  REQUIRE(cli({"synth", "--samples", "30", "-o", (dir / "data").string()}).code == kExitOk);
  // Test split ids are s000027..s000029; read their ground truth back.
  std::vector<nlohmann::json> gt;
  std::ifstream manifest(dir / "data" / "manifest.jsonl");
  for (std::string line; std::getline(manifest, line);) {
    auto j = nlohmann::json::parse(line);
    if (j.at("split") == "test") gt.push_back(j);
  }
  REQUIRE(gt.size() == 3);
  // Predictions: exact, first half of the moment (IoU 1/2), and a disjoint interval.
  std::ostringstream lines;
  auto emit = [&](const nlohmann::json& g, double s, double e) {
    lines << nlohmann::json{{"id", g.at("id")}, {"start_index", 0},   {"end_index", 0},
                            {"start_time", s},  {"end_time", e},      {"probability", 1.0},
                            {"scale", 0}}
                 .dump()
          << '\n';
  };
  const double s0 = gt[0]["start"], e0 = gt[0]["end"];
  const double s1 = gt[1]["start"], e1 = gt[1]["end"];
  const double s2 = gt[2]["start"], e2 = gt[2]["end"];
  emit(gt[0], s0, e0);
  emit(gt[1], s1, s1 + (e1 - s1) / 2);
  const double d2 = gt[2]["duration"];
  const bool room_after = d2 - e2 > 1.0;
  emit(gt[2], room_after ? e2 + 0.5 : 0.0, room_after ? d2 : s2 / 2);
  write(dir / "p.jsonl", lines.str());

  const auto r = cli({"eval", "-d", (dir / "data").string(), "-o", (dir / "out").string(),
                      "--predictions", (dir / "p.jsonl").string()});
  REQUIRE(r.code == kExitOk);
  const auto j = last_json_line(r.out);
  const double half = ((s1 + (e1 - s1) / 2) - s1) / (e1 - s1);
  CHECK(std::abs(j.at("miou").get<double>() - (1.0 + half) / 3.0) <= 1e-12);
  CHECK(j.at("rank1").at("0.3") == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(j.at("rank1").at("0.5") == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(j.at("rank1").at("0.7") == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(fs::exists(dir / "out" / "eval_config.json"));
  CHECK(fs::exists(dir / "out" / "report_test" / "report.json"));

  write(dir / "short.jsonl", lines.str().substr(0, lines.str().find('\n') + 1));
  const auto bad = cli({"eval", "-d", (dir / "data").string(), "-o", (dir / "out").string(),
                        "--predictions", (dir / "short.jsonl").string()});
  CHECK(bad.code == kExitData);
  CHECK(bad.err.find(gt[1]["id"].get<std::string>()) != std::string::npos);
}
