#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tad/bench.hpp"
#include "tad/config.hpp"
#include "tad/detector.hpp"
#include "tad/estf.hpp"
#include "tad/gradcheck.hpp"
#include "tad/metrics.hpp"
#include "tad/ops.hpp"
#include "tad/postproc.hpp"
#include "tad/ssm.hpp"
#include "tad/synthdata.hpp"
#include "tad/trainer.hpp"

namespace {

using namespace tad;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text;
}

int run_synth(const std::string& spec_path, const std::string& out_dir,
              const std::optional<uint64_t>& seed) {
  SynthSpec spec = load_synth_spec(spec_path);
  if (seed) spec.seed = *seed;
  SynthDataset ds = generate(spec);
  save_dataset(ds, out_dir);
  std::printf("wrote %zu videos (%lld frames, %lldx%lldx%lld) to %s\n",
              ds.videos.size(), (long long)spec.frames, (long long)spec.height,
              (long long)spec.width, (long long)spec.channels, out_dir.c_str());
  std::printf("checksum %016llx\n", (unsigned long long)dataset_checksum(ds));
  return 0;
}

int run_train(const std::optional<std::string>& config_path,
              const std::optional<std::string>& data_dir,
              const std::string& out_dir, const std::optional<uint64_t>& seed) {
  RunConfig cfg;
  if (config_path) cfg = load_run_config(*config_path);
  if (seed) cfg.model.seed = *seed;

  SynthDataset ds;
  if (data_dir) {
    ds = load_dataset(*data_dir);
    std::printf("dataset: %zu videos from %s\n", ds.videos.size(),
                data_dir->c_str());
  } else {
    ds = generate(easy_preset());
    std::printf("dataset: bundled easy preset, %zu videos generated in-process\n",
                ds.videos.size());
  }

  TadModel model = build_model(cfg.model, ds);
  int64_t n_params = 0;
  for (auto& [name, t] : model.named()) n_params += shape_numel(t->shape());
  std::printf("model: d_model %lld, depth %lld, rank %lld, %lld levels, "
              "%lld trainable parameters\n",
              (long long)cfg.model.d_model, (long long)cfg.model.depth,
              (long long)cfg.model.rank, (long long)cfg.model.n_levels,
              (long long)n_params);

  TrainResult res = train(model, ds, cfg.train);
  for (const auto& e : res.log)
    std::printf("epoch %3lld  loss_cls %.4f  loss_reg %.4f  mAP@0.5 %.4f  "
                "avg mAP %.4f\n",
                (long long)e.epoch, e.loss_cls, e.loss_reg, e.map50, e.avg_map);

  save_checkpoint(model, out_dir);
  write_train_log(res.log, out_dir + "/train_log.csv");
  std::printf("checkpoint: %s (%lld optimizer steps)\n", out_dir.c_str(),
              (long long)res.steps_done);
  if (res.aborted) {
    std::fprintf(stderr, "training aborted on a non-finite loss; parameters "
                         "restored to the last finite epoch\n");
    return 2;
  }
  std::printf("%s", res.report.table().c_str());
  return 0;
}

int run_eval(const std::string& preds_path, const std::string& annos_path,
             const std::vector<double>& thresholds) {
  AnnotationSet annos = load_annotations(annos_path);
  PredictionMap preds = load_predictions(preds_path, annos);
  MetricReport rep = evaluate(preds, annos, thresholds);
  std::printf("%s", rep.table().c_str());
  return 0;
}

Tensor rand_range(std::mt19937_64& rng, const Shape& s, double lo, double hi) {
  Tensor t = Tensor::zeros(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t.mut_data()[i] = d(rng);
  return t;
}

CheckReport check_ssm(uint64_t seed) {
  std::mt19937_64 rng(seed);
  TbSsmParams p = TbSsmParams::init(3, 2, rng);
  Tensor x = rand_range(rng, {2, 6, 3}, -1, 1);
  Tensor w = rand_range(rng, {2, 6, 3}, -1, 1);
  std::vector<Tensor> inputs = {x};
  for (auto& [name, t] : p.named()) inputs.push_back(*t);
  CheckReport worst;
  worst.pass = true;
  for (DeltaMode mode : {DeltaMode::selective, DeltaMode::literal}) {
    CheckReport r = grad_check(
        [w, mode](const std::vector<Tensor>& in) {
          TbSsmParams q;
          q.d_r = 3;
          q.d_s = 2;
          size_t i = 1;
          for (auto& [name, t] : q.named()) *t = in[i++];
          SsmOptions o;
          o.delta = mode;
          return op::sum_all(op::mul(tb_ssm(in[0], q, o), w));
        },
        inputs);
    worst.pass = worst.pass && r.pass;
    worst.max_rel = std::max(worst.max_rel, r.max_rel);
  }
  return worst;
}

CheckReport check_estf(uint64_t seed) {
  std::mt19937_64 rng(seed);
  EstfConfig cfg;
  cfg.d_model = 6;
  cfg.rank = 3;
  cfg.d_state = 2;
  TokenGrid g{4, 2, 2};
  EstfParams p = EstfParams::init(cfg, rng);
  p.w_up = rand_range(rng, {cfg.rank, cfg.d_model}, -0.3, 0.3);
  Tensor x = rand_range(rng, {g.numel(), cfg.d_model}, -1, 1);
  Tensor wt = rand_range(rng, {g.numel(), cfg.d_model}, -1, 1);
  std::vector<Tensor> inputs = {x};
  for (auto& [name, t] : p.named()) inputs.push_back(*t);
  return grad_check(
      [&cfg, &g, wt](const std::vector<Tensor>& in) {
        EstfParams q;
        size_t i = 1;
        for (auto& [name, t] : q.named()) *t = in[i++];
        q.ssm.d_r = cfg.rank;
        q.ssm.d_s = cfg.d_state;
        return op::sum_all(op::mul(estf_forward(in[0], q, g, cfg), wt));
      },
      inputs);
}

CheckReport check_head(uint64_t seed) {
  std::mt19937_64 rng(seed);
  DetectorConfig cfg;
  cfg.n_classes = 2;
  cfg.n_levels = 2;
  cfg.token_sec = 1.0;
  std::vector<GroundTruthInstance> gts = {{0.5, 2.0, 0}, {1.0, 7.5, 1}};
  auto tg = assign_targets(gts, cfg, {8, 4});
  HeadParams p = HeadParams::init(4, 2, rng);
  Tensor base = rand_range(rng, {8, 4}, -1, 1);
  std::vector<Tensor> inputs = {base};
  for (auto& [name, t] : p.named()) inputs.push_back(*t);
  return grad_check(
      [&](const std::vector<Tensor>& in) {
        HeadParams q;
        size_t i = 1;
        for (auto& [name, t] : q.named()) *t = in[i++];
        PyramidFeatures pyr = build_pyramid(in[0], 2);
        return detection_loss(head_forward(pyr, q), tg, cfg).total;
      },
      inputs);
}

int run_gradcheck(const std::string& module, uint64_t seed) {
  struct Entry {
    const char* name;
    CheckReport (*fn)(uint64_t);
  };
  const Entry entries[] = {
      {"ssm", check_ssm}, {"estf", check_estf}, {"head", check_head}};
  bool all_pass = true;
  bool matched = false;
  for (const auto& e : entries) {
    if (module != "all" && module != e.name) continue;
    matched = true;
    CheckReport r = e.fn(seed + (&e - entries));
    std::printf("%-5s max rel err %.3e  (tol 1.0e-04)  %s\n", e.name, r.max_rel,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!matched)
    throw ConfigError("gradcheck: unknown module '" + module +
                      "', want ssm, estf, head or all");
  return all_pass ? 0 : 2;
}

int run_bench(const std::vector<int64_t>& lengths, int reps, uint64_t seed,
              const std::optional<std::string>& csv_path) {
  ScalingConfig cfg;
  cfg.lengths = lengths;
  cfg.reps = reps;
  cfg.seed = seed;
  ScalingReport rep = scan_scaling(cfg);
  std::printf("%s", rep.csv().c_str());
  std::printf("# slope tb_ssm %.4f, attention %.4f\n", rep.slope_tb_ssm,
              rep.slope_attention);
  if (csv_path) write_text(*csv_path, rep.csv());
  return 0;
}

int run_ablate(const std::optional<std::string>& config_path,
               const std::optional<uint64_t>& seed,
               const std::optional<std::string>& csv_path) {
  AblationConfig cfg;
  if (config_path) cfg = load_ablation_config(*config_path);
  if (seed) cfg.model_seed = *seed;
  AblationReport rep = ablation_run(cfg);
  std::printf("%s", rep.markdown().c_str());
  if (csv_path) write_text(*csv_path, rep.csv());
  return 0;  // diverged variants are reported in the table, not fatal
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal action detection on synthetic video"};
  app.name("tad");
  app.require_subcommand(0, 1);

  std::optional<uint64_t> seed;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "dataset spec JSON")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", seed, "override the spec seed");

  auto* train_cmd = app.add_subcommand("train", "train a detector");
  std::optional<std::string> train_config, train_data;
  std::string train_out = "ckpt";
  train_cmd->add_option("--config", train_config,
                        "run config JSON (default: full defaults)");
  train_cmd->add_option("--data", train_data,
                        "dataset directory (default: bundled easy preset)");
  train_cmd->add_option("--out", train_out, "checkpoint directory")
      ->capture_default_str();
  train_cmd->add_option("--seed", seed, "override the model init seed");

  auto* eval_cmd = app.add_subcommand("eval", "score predictions");
  std::string eval_preds, eval_annos;
  std::vector<double> thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};
  eval_cmd->add_option("--preds", eval_preds, "predictions JSON")->required();
  eval_cmd->add_option("--annos", eval_annos, "annotations JSON")->required();
  eval_cmd->add_option("--thresholds", thresholds, "tIoU thresholds")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--seed", seed, "unused; evaluation is deterministic");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string gc_module = "all";
  uint64_t gc_seed = 304;
  gc->add_option("--module", gc_module, "ssm, estf, head or all")
      ->capture_default_str();
  gc->add_option("--seed", gc_seed, "rng seed")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "runtime/memory scaling of mixers");
  std::vector<int64_t> bench_lengths;
  int bench_reps = 5;
  uint64_t bench_seed = 1;
  std::optional<std::string> bench_csv;
  bench->add_option("--lengths", bench_lengths,
                    "sequence lengths (default 1024..32768 doubling)")
      ->delimiter(',');
  bench->add_option("--reps", bench_reps, "timed repetitions per point")
      ->capture_default_str();
  bench->add_option("--seed", bench_seed, "rng seed")->capture_default_str();
  bench->add_option("--csv", bench_csv, "also write the CSV here");

  auto* ablate = app.add_subcommand("ablate", "component ablation grid");
  std::optional<std::string> ablate_config, ablate_csv;
  ablate->add_option("--config", ablate_config,
                     "ablation config JSON (default: bundled easy setting)");
  ablate->add_option("--seed", seed, "override the model init seed");
  ablate->add_option("--csv", ablate_csv, "also write the CSV here");

  if (argc < 2) {
    std::cout << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(synth_spec, synth_out, seed);
    if (train_cmd->parsed())
      return run_train(train_config, train_data, train_out, seed);
    if (eval_cmd->parsed()) return run_eval(eval_preds, eval_annos, thresholds);
    if (gc->parsed()) return run_gradcheck(gc_module, gc_seed);
    if (bench->parsed())
      return run_bench(bench_lengths, bench_reps, bench_seed, bench_csv);
    if (ablate->parsed()) return run_ablate(ablate_config, seed, ablate_csv);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::cout << app.help();
  return 1;
}
