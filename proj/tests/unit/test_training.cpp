#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "vslnet/checkpoint.hpp"
#include "vslnet/synthetic.hpp"
#include "vslnet/training.hpp"

using namespace vslnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vslnet_train_" + name);
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

Dataset small_dataset(const std::string& name, std::size_t train, std::size_t val) {
  SyntheticConfig s;
  s.train_samples = train;
  s.val_samples = val;
  s.test_samples = 0;
  const auto dir = scratch(name);
  generate_synthetic_dataset(s, dir);
  return load_dataset(dir);
}

ModelConfig small_model(Variant v, DType dtype) {
  ModelConfig m;
  m.variant = v;
  m.dim = 32;
  m.heads = 8;
  m.max_length = 48;
  m.video_dim = 32;
  m.query_dim = 32;
  m.dtype = dtype;
  if (v == Variant::kNetL) m.scales = {12, 24};
  return m;
}

}  // namespace

TEST_CASE("training config validation and fingerprint") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.dropout = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);

  const auto m = small_model(Variant::kBase, DType::kFloat32);
  TrainConfig a, b;
  b.learning_rate = 2e-4;
  CHECK(config_fingerprint(m, a) == config_fingerprint(m, a));
  CHECK(config_fingerprint(m, a) != config_fingerprint(m, b));
  auto m2 = m;
  m2.dim = 16;
  m2.heads = 4;
  CHECK(config_fingerprint(m, a) != config_fingerprint(m2, a));
}

TEST_CASE("training loss falls over five epochs") {
  const auto ds = small_dataset("falls", 200, 20);
  TrainConfig t;
  t.epochs = 5;
  t.learning_rate = 5e-4;
  t.patience = 10;
  const auto r = train(ds, small_model(Variant::kBase, DType::kFloat32), t);
  REQUIRE(r.history.size() == 5);
  MESSAGE("epoch 1 loss " << r.history[0].loss << ", epoch 5 loss " << r.history[4].loss);
  CHECK(r.history[4].loss < r.history[0].loss);
  for (const auto& h : r.history) {
    CHECK(std::isfinite(h.grad_norm));
    CHECK(h.qgh == 0.0);
  }
  CHECK(r.history[4].learning_rate < r.history[0].learning_rate);
}

TEST_CASE("same seed reproduces losses and checkpoints bit for bit") {
  const auto ds = small_dataset("determinism", 24, 6);
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 8;
  t.learning_rate = 1e-3;
  const auto m = small_model(Variant::kNet, DType::kFloat64);
  TrainOptions oa, ob;
  oa.output_dir = scratch("det_a");
  ob.output_dir = scratch("det_b");
  const auto a = train(ds, m, t, oa);
  const auto b = train(ds, m, t, ob);
  CHECK(a.history[0].loss == b.history[0].loss);
  CHECK(a.history[1].loss == b.history[1].loss);
  CHECK(slurp(oa.output_dir / "last.ckpt") == slurp(ob.output_dir / "last.ckpt"));
  CHECK(slurp(oa.output_dir / "best.ckpt") == slurp(ob.output_dir / "best.ckpt"));
  CHECK(slurp(oa.output_dir / "train_log.jsonl") == slurp(ob.output_dir / "train_log.jsonl"));

  t.seed = 2;
  const auto c = train(ds, m, t);
  CHECK(c.history[0].loss != a.history[0].loss);
}

TEST_CASE("early stopping with a frozen validation metric") {
  const auto ds = small_dataset("patience", 16, 4);
  TrainConfig t;
  t.epochs = 10;
  t.batch_size = 8;
  t.patience = 2;
  TrainOptions o;
  std::size_t calls = 0;
  o.validator = [&](const Model&, std::size_t) {
    ++calls;
    return 0.25;
  };
  const auto r = train(ds, small_model(Variant::kBase, DType::kFloat32), t, o);
  CHECK(r.stopped_early);
  CHECK(r.history.size() == 3);
  CHECK(calls == 3);
  CHECK(r.best_epoch == 1);
  CHECK(r.history[0].improved);
  CHECK_FALSE(r.history[1].improved);
  CHECK_FALSE(r.history[2].improved);
}

TEST_CASE("best checkpoint holds the best epoch's parameters") {
  const auto ds = small_dataset("best", 16, 4);
  TrainConfig t;
  t.epochs = 4;
  t.batch_size = 8;
  t.learning_rate = 1e-3;
  TrainOptions o;
  o.output_dir = scratch("best_out");
  const double scores[] = {0.1, 0.4, 0.3, 0.2};
  o.validator = [&](const Model&, std::size_t epoch) { return scores[epoch - 1]; };
  const auto m = small_model(Variant::kBase, DType::kFloat64);
  const auto r = train(ds, m, t, o);
  CHECK(r.best_epoch == 2);
  CHECK(r.best_miou == 0.4);
  const auto best = read_checkpoint(o.output_dir / "best.ckpt");
  CHECK(best.metadata.at("epoch") == 2);
  const auto reloaded = load_model(o.output_dir / "best.ckpt", m);
  for (std::size_t i = 0; i < r.model->params().size(); ++i) {
    CHECK(reloaded->params().entries()[i].second.values() ==
          r.model->params().entries()[i].second.values());
  }
  const auto last = read_checkpoint(o.output_dir / "last.ckpt");
  CHECK(last.metadata.at("epoch") == 4);
  CHECK(last.metadata.at("history").size() == 4);
}

TEST_CASE("resuming continues exactly where the run stopped") {
  const auto ds = small_dataset("resume", 16, 4);
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 8;
  t.learning_rate = 1e-3;
  const auto m = small_model(Variant::kBase, DType::kFloat64);

  TrainOptions straight;
  straight.output_dir = scratch("resume_straight");
  const auto full = train(ds, m, t, straight);

  // Two epochs of the same three-epoch schedule, then one more from last.ckpt.
  TrainOptions first;
  first.output_dir = scratch("resume_first");
  first.validator = [&](const Model& model, std::size_t epoch) {
    if (epoch == 2) throw std::runtime_error("interrupted");
    return split_miou(model, ds, "val");
  };
  CHECK_THROWS(train(ds, m, t, first));
  // The interrupted epoch never reached last.ckpt; rerun epoch 2 and 3 from epoch 1.
  TrainOptions second;
  second.output_dir = first.output_dir;
  second.resume_from = first.output_dir / "last.ckpt";
  const auto resumed = train(ds, m, t, second);
  REQUIRE(resumed.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) CHECK(resumed.history[e].loss == full.history[e].loss);
  CHECK(slurp(first.output_dir / "last.ckpt") == slurp(straight.output_dir / "last.ckpt"));

  TrainConfig other = t;
  other.learning_rate = 5e-4;
  try {
    train(ds, m, other, second);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("config") != std::string::npos);
  }
}

TEST_CASE("non-finite inputs abort with a numerical error") {
  SyntheticConfig s;
  s.train_samples = 4;
  s.val_samples = 1;
  s.test_samples = 0;
  const auto dir = scratch("nan");
  generate_synthetic_dataset(s, dir);
  auto raw = read_feature_file(dir / "features" / "v000000.bin");
  raw.values[3] = std::numeric_limits<float>::quiet_NaN();
  write_feature_file(dir / "features" / "v000000.bin", raw);
  const auto ds = load_dataset(dir);
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 2;
  try {
    train(ds, small_model(Variant::kBase, DType::kFloat32), t);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("s000000") != std::string::npos);
  }
}

TEST_CASE("mismatched input dims are a configuration error") {
  const auto ds = small_dataset("dims", 4, 1);
  auto m = small_model(Variant::kBase, DType::kFloat32);
  m.video_dim = 16;
  TrainConfig t;
  t.epochs = 1;
  CHECK_THROWS_AS(train(ds, m, t), ConfigError);
}

TEST_CASE("vslnet-l trains end to end") {
  const auto ds = small_dataset("netl", 8, 2);
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 4;
  const auto r = train(ds, small_model(Variant::kNetL, DType::kFloat32), t);
  REQUIRE(r.history.size() == 1);
  CHECK(r.history[0].npm > 0.0);
  CHECK(r.history[0].qgh > 0.0);
  CHECK(r.history[0].loss ==
        doctest::Approx(r.history[0].span + r.history[0].qgh + r.history[0].npm));
}
