#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tad/bench.hpp"
#include "tad/common.hpp"

using namespace tad;

namespace {

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

AblationConfig tiny_ablation() {
  AblationConfig cfg;
  cfg.data.seed = 5;
  cfg.data.n_videos = 6;
  cfg.data.frames = 16;
  cfg.data.height = 8;
  cfg.data.width = 8;
  cfg.data.channels = 2;
  cfg.data.n_classes = 2;
  cfg.data.min_actions = 1;
  cfg.data.max_actions = 1;
  cfg.data.min_len = 4;
  cfg.data.max_len = 8;
  cfg.d_model = 16;
  cfg.depth = 1;
  cfg.rank = 4;
  cfg.d_state = 4;
  cfg.t_patch = 2;
  cfg.h_patch = 4;
  cfg.w_patch = 4;
  cfg.n_levels = 2;
  cfg.train.lr = 5e-3;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 2;
  cfg.train.warmup_steps = 4;
  cfg.bootstrap_samples = 50;
  cfg.bootstrap_seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("log-log slope recovers exact power laws") {
  std::vector<double> x = {64, 128, 256, 512};
  auto pow_law = [&](double c, double e) {
    std::vector<double> y;
    for (double v : x) y.push_back(c * std::pow(v, e));
    return y;
  };
  CHECK(loglog_slope(x, pow_law(3.0, 2.0)) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(loglog_slope(x, pow_law(0.5, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loglog_slope(x, pow_law(7.0, 1.5)) == doctest::Approx(1.5).epsilon(1e-12));

  CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), ConfigError);
  CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {1.0}), ConfigError);
  CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {1.0, -1.0}), ConfigError);
  CHECK_THROWS_AS(loglog_slope({2.0, 2.0}, {1.0, 3.0}), ConfigError);
}

TEST_CASE("scan scaling smoke run") {
  ScalingConfig cfg;
  cfg.lengths = {64, 128, 256};
  cfg.d_r = 4;
  cfg.d_s = 4;
  cfg.reps = 3;
  ScalingReport rep = scan_scaling(cfg);

  REQUIRE(rep.rows.size() == 6);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(rep.rows[i].module == "tb_ssm");
    CHECK(rep.rows[i + 3].module == "attention");
    CHECK(rep.rows[i].t_len == cfg.lengths[i]);
    CHECK(rep.rows[i + 3].t_len == cfg.lengths[i]);
  }
  for (const auto& r : rep.rows) {
    CHECK(r.median_ms >= 0.0);
    CHECK(r.peak_bytes > 0);
  }
  // scan memory grows linearly with T; attention streaming stays row-sized
  CHECK(double(rep.rows[1].peak_bytes) / double(rep.rows[0].peak_bytes) <= 2.6);
  CHECK(double(rep.rows[2].peak_bytes) / double(rep.rows[1].peak_bytes) <= 2.6);
  CHECK(rep.rows[1].peak_bytes > rep.rows[0].peak_bytes);
  CHECK(std::isfinite(rep.slope_tb_ssm));
  CHECK(std::isfinite(rep.slope_attention));

  std::string csv = rep.csv();
  CHECK(csv.rfind("module,T,median_ms,peak_bytes,timer_limited\n", 0) == 0);
  CHECK(count_lines(csv) == 7);
  CHECK(csv.find("tb_ssm,64,") != std::string::npos);
  CHECK(csv.find("attention,256,") != std::string::npos);

  SUBCASE("allocation footprint is reproducible") {
    ScalingReport again = scan_scaling(cfg);
    REQUIRE(again.rows.size() == rep.rows.size());
    for (size_t i = 0; i < rep.rows.size(); ++i) {
      CHECK(again.rows[i].module == rep.rows[i].module);
      CHECK(again.rows[i].t_len == rep.rows[i].t_len);
      CHECK(again.rows[i].peak_bytes == rep.rows[i].peak_bytes);
    }
  }

  SUBCASE("input validation") {
    ScalingConfig bad = cfg;
    bad.reps = 0;
    CHECK_THROWS_AS(scan_scaling(bad), ConfigError);
    bad = cfg;
    bad.lengths = {1};
    CHECK_THROWS_AS(scan_scaling(bad), ConfigError);
    bad = cfg;
    bad.d_r = 0;
    CHECK_THROWS_AS(scan_scaling(bad), ConfigError);
  }
}

TEST_CASE("ablation grid covers every variant") {
  AblationConfig cfg = tiny_ablation();
  AblationReport rep = ablation_run(cfg);

  const char* expected[] = {"full",       "no-spatial", "no-temporal",
                            "no-fusion",  "tied-A",     "mixer-none",
                            "mixer-attention", "mixer-tbssm"};
  REQUIRE(rep.rows.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(rep.rows[i].name == expected[i]);
    CHECK_FALSE(rep.rows[i].failed);
    CHECK(std::isfinite(rep.rows[i].map50));
    CHECK(std::isfinite(rep.rows[i].avg_map));
    CHECK(rep.rows[i].map50 >= 0.0);
    CHECK(rep.rows[i].map50 <= 1.0);
    CHECK(rep.rows[i].avg_map >= 0.0);
    CHECK(rep.rows[i].avg_map <= 1.0);
  }
  CHECK(std::isfinite(rep.asym_gap));
  CHECK(rep.asym_gap_lo <= rep.asym_gap_hi);

  SUBCASE("full row matches a standalone training run") {
    BackboneConfig bc;
    bc.depth = cfg.depth;
    bc.d_model = cfg.d_model;
    bc.t_patch = cfg.t_patch;
    bc.h_patch = cfg.h_patch;
    bc.w_patch = cfg.w_patch;
    bc.frames = cfg.data.frames;
    bc.height = cfg.data.height;
    bc.width = cfg.data.width;
    bc.channels_in = cfg.data.channels;
    EstfConfig ac;
    ac.d_model = cfg.d_model;
    ac.rank = cfg.rank;
    ac.d_state = cfg.d_state;
    DetectorConfig dc;
    dc.n_classes = cfg.data.n_classes;
    dc.n_levels = cfg.n_levels;
    dc.token_sec = double(cfg.t_patch) / kSynthFps;
    TadModel model = TadModel::init(bc, ac, dc, cfg.model_seed);
    SynthDataset data = generate(cfg.data);
    TrainResult res = train(model, data, cfg.train);
    REQUIRE_FALSE(res.aborted);
    CHECK(res.log.back().map50 == rep.rows[0].map50);
    CHECK(res.log.back().avg_map == rep.rows[0].avg_map);
  }

  SUBCASE("report renderings") {
    std::string md = rep.markdown();
    CHECK(md.find("| full |") != std::string::npos);
    CHECK(md.find("| tied-A |") != std::string::npos);
    CHECK(md.find("failed") == std::string::npos);
    CHECK(md.find("bootstrap") != std::string::npos);

    std::string csv = rep.csv();
    CHECK(csv.rfind("variant,map50,avg_map,failed\n", 0) == 0);
    CHECK(count_lines(csv) == 10);
    CHECK(csv.find("mixer-attention,") != std::string::npos);
    CHECK(csv.find("# asym_gap=") != std::string::npos);
  }
}

TEST_CASE("diverging variants are flagged, the run continues") {
  AblationConfig cfg = tiny_ablation();
  cfg.train.lr = 1e200;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 6;
  cfg.train.warmup_steps = 0;
  AblationReport rep = ablation_run(cfg);

  REQUIRE(rep.rows.size() == 8);
  for (const auto& r : rep.rows) CHECK(r.failed);
  CHECK(std::isfinite(rep.asym_gap));
  CHECK(rep.markdown().find("failed") != std::string::npos);
}
