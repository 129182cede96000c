#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "tad/common.hpp"
#include "tad/ops.hpp"
#include "tad/tape.hpp"
#include "tad/trainer.hpp"

using namespace tad;

namespace {

SynthSpec tiny_data_spec() {
  SynthSpec s;
  s.seed = 5;
  s.n_videos = 6;
  s.frames = 16;
  s.height = 8;
  s.width = 8;
  s.channels = 2;
  s.n_classes = 2;
  s.min_actions = 1;
  s.max_actions = 1;
  s.min_len = 4;
  s.max_len = 8;
  return s;
}

TadModel tiny_model(uint64_t seed = 3) {
  BackboneConfig bc;
  bc.depth = 1;
  bc.d_model = 16;
  bc.t_patch = 2;
  bc.h_patch = 4;
  bc.w_patch = 4;
  bc.frames = 16;
  bc.height = 8;
  bc.width = 8;
  bc.channels_in = 2;
  EstfConfig ac;
  ac.d_model = 16;
  ac.rank = 4;
  ac.d_state = 4;
  ac.pool_h = 2;
  ac.pool_w = 2;
  DetectorConfig dc;
  dc.n_classes = 2;
  dc.n_levels = 2;
  return TadModel::init(bc, ac, dc, seed);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * 8) == 0;
}

}  // namespace

TEST_CASE("learning rate schedule endpoints and shape") {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.warmup_steps = 10;
  const int64_t total = 100;
  CHECK(lr_at(cfg, 0, total) == 0.0);
  CHECK(lr_at(cfg, 10, total) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(cfg, total, total) == doctest::Approx(0.0).epsilon(1e-15));
  for (int64_t s = 1; s <= 10; ++s)
    CHECK(lr_at(cfg, s, total) > lr_at(cfg, s - 1, total));
  for (int64_t s = 11; s <= total; ++s)
    CHECK(lr_at(cfg, s, total) < lr_at(cfg, s - 1, total));

  cfg.warmup_steps = 0;
  CHECK(lr_at(cfg, 0, total) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(cfg, 0, 0) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("optimizer walks down a quadratic bowl") {
  Tensor x = Tensor::from_data({1}, {3.0});
  x.set_requires_grad(true);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({&x}, cfg);
  for (int i = 0; i < 300; ++i) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = op::mul(x, x);
    opt.zero_grad();
    tape.backward(loss);
    opt.step(0.05);
  }
  CHECK(std::abs(x.data()[0]) < 0.3);

  SUBCASE("decoupled decay shrinks weights even with tiny gradients") {
    Tensor w = Tensor::from_data({1}, {2.0});
    w.set_requires_grad(true);
    TrainConfig dcfg;
    dcfg.weight_decay = 0.5;
    AdamW dopt({&w}, dcfg);
    Tensor factor = Tensor::from_data({1}, {1e-12});
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      TapeScope scope(tape);
      Tensor loss = op::mul(w, factor);
      dopt.zero_grad();
      tape.backward(loss);
      dopt.step(0.1);
    }
    CHECK(std::abs(w.data()[0]) < 2.0 * std::pow(1.0 - 0.1 * 0.5, 19));
  }
}

TEST_CASE("short training run learns and logs") {
  SynthDataset data = generate(tiny_data_spec());
  TadModel model = tiny_model();
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.batch_size = 2;
  cfg.epochs = 4;
  cfg.warmup_steps = 3;
  cfg.shuffle_seed = 9;
  TrainResult res = train(model, data, cfg);

  CHECK(!res.aborted);
  REQUIRE(res.log.size() == 4);
  CHECK(res.steps_done == 4 * 3);
  double first = res.log.front().loss_cls + res.log.front().loss_reg;
  double last = res.log.back().loss_cls + res.log.back().loss_reg;
  CHECK(last < first);
  for (const auto& e : res.log) {
    CHECK(std::isfinite(e.loss_cls));
    CHECK(std::isfinite(e.loss_reg));
    CHECK(e.avg_map >= 0.0);
    CHECK(e.avg_map <= 1.0);
  }
  CHECK(res.report.labels.size() == 2);

  SUBCASE("csv log round trips through disk") {
    std::string path = "/tmp/tad_train_log.csv";
    write_train_log(res.log, path);
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "epoch,loss_cls,loss_reg,map50,avg_map");
    int rows = 0;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 4);
  }
}

TEST_CASE("training is bit deterministic") {
  SynthDataset data = generate(tiny_data_spec());
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.warmup_steps = 2;

  TadModel a = tiny_model(21);
  TadModel b = tiny_model(21);
  TrainResult ra = train(a, data, cfg);
  TrainResult rb = train(b, data, cfg);

  REQUIRE(ra.log.size() == rb.log.size());
  for (size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].loss_cls == rb.log[i].loss_cls);  // bitwise
    CHECK(ra.log[i].loss_reg == rb.log[i].loss_reg);
    CHECK(ra.log[i].avg_map == rb.log[i].avg_map);
  }
  auto na = a.named(), nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (size_t i = 0; i < na.size(); ++i) CHECK(same_bits(*na[i].second, *nb[i].second));
}

TEST_CASE("frozen backbone stays untouched by training") {
  SynthDataset data = generate(tiny_data_spec());
  TadModel model = tiny_model();
  std::vector<Tensor> before;
  for (const Tensor* t : model.backbone.all()) before.push_back(t->clone());
  TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.batch_size = 3;
  cfg.epochs = 2;
  train(model, data, cfg);
  auto after = model.backbone.all();
  REQUIRE(after.size() == before.size());
  for (size_t i = 0; i < after.size(); ++i) {
    CHECK(same_bits(*after[i], before[i]));
    CHECK(!after[i]->has_grad());
  }
}

TEST_CASE("non-finite loss aborts and rolls back") {
  SynthDataset data = generate(tiny_data_spec());
  TadModel model = tiny_model();
  std::vector<Tensor> init;
  auto named = model.named();
  for (auto& [name, t] : named) init.push_back(t->clone());
  TrainConfig cfg;
  cfg.lr = 1e30;  // guaranteed blow-up after the first update
  cfg.warmup_steps = 0;
  cfg.batch_size = 6;
  cfg.epochs = 3;
  TrainResult res = train(model, data, cfg);
  CHECK(res.aborted);
  CHECK(res.log.empty());  // no epoch completed
  auto now = model.named();
  for (size_t i = 0; i < now.size(); ++i) CHECK(same_bits(*now[i].second, init[i]));
}

TEST_CASE("training rejects mismatched datasets") {
  SynthDataset data = generate(tiny_data_spec());
  TadModel model = tiny_model();
  TrainConfig cfg;

  SUBCASE("class count") {
    SynthSpec s = tiny_data_spec();
    s.n_classes = 3;
    SynthDataset other = generate(s);
    CHECK_THROWS_AS(train(model, other, cfg), ConfigError);
  }
  SUBCASE("duration") {
    SynthSpec s = tiny_data_spec();
    s.frames = 32;
    s.max_len = 8;
    SynthDataset other = generate(s);
    CHECK_THROWS_AS(train(model, other, cfg), ConfigError);
  }
  SUBCASE("bad config") {
    cfg.lr = -1;
    CHECK_THROWS_AS(train(model, data, cfg), ConfigError);
  }
}

TEST_CASE("checkpoints round trip the full parameter set") {
  TadModel model = tiny_model(8);
  std::string dir = "/tmp/tad_ckpt_rt";
  std::filesystem::remove_all(dir);
  save_checkpoint(model, dir);
  CHECK(std::filesystem::exists(dir + "/manifest.json"));
  CHECK(std::filesystem::exists(dir + "/backbone.w_patch.tnsr"));
  CHECK(std::filesystem::exists(dir + "/head.cls_w.tnsr"));

  // reference copies, then perturb every parameter
  std::vector<Tensor> saved;
  auto named = model.named();
  for (auto& [name, t] : named) saved.push_back(t->clone());
  for (auto& [name, t] : named) t->mut_data()[0] += 1.0;
  load_checkpoint(model, dir);
  auto now = model.named();
  for (size_t i = 0; i < now.size(); ++i) CHECK(same_bits(*now[i].second, saved[i]));

  SUBCASE("mismatched architecture is refused") {
    BackboneConfig bc;
    bc.depth = 2;  // extra block: different parameter names
    bc.d_model = 16;
    bc.t_patch = 2;
    bc.h_patch = 4;
    bc.w_patch = 4;
    bc.frames = 16;
    bc.height = 8;
    bc.width = 8;
    bc.channels_in = 2;
    EstfConfig ac;
    ac.d_model = 16;
    ac.rank = 4;
    ac.d_state = 4;
    ac.pool_h = 2;
    ac.pool_w = 2;
    DetectorConfig dc;
    dc.n_classes = 2;
    dc.n_levels = 2;
    TadModel other = TadModel::init(bc, ac, dc, 1);
    CHECK_THROWS_AS(load_checkpoint(other, dir), ConfigError);
  }
  SUBCASE("missing checkpoint") {
    CHECK_THROWS_AS(load_checkpoint(model, "/tmp/definitely_no_ckpt"), IoError);
  }
}

TEST_CASE("predict produces evaluable output") {
  SynthDataset data = generate(tiny_data_spec());
  TadModel model = tiny_model();
  PredictionMap preds = predict(model, data);
  CHECK(preds.size() == data.videos.size());
  MetricReport rep = evaluate(preds, data.annos);  // validates labels/videos
  CHECK(rep.average_map >= 0.0);
}
