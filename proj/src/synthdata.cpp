#include "tad/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>

#include "json.hpp"
#include "tad/common.hpp"
#include "tad/tensor_io.hpp"

namespace tad {

using nlohmann::json;

void SynthSpec::validate() const {
  auto bad = [](const std::string& m) { throw ConfigError("synth spec: " + m); };
  if (n_videos < 1) bad("need n_videos >= 1");
  if (frames < 4) bad("need frames >= 4");
  if (height < 4 || width < 4) bad("need height and width >= 4");
  if (channels < 1) bad("need channels >= 1");
  if (n_classes < 1) bad("need n_classes >= 1");
  if (min_actions < 0 || max_actions < min_actions)
    bad("need 0 <= min_actions <= max_actions");
  if (min_len < 2 || max_len < min_len) bad("need 2 <= min_len <= max_len");
  if (max_len > frames) bad("max_len exceeds the video length");
  if (!(onset_sharpness > 0) || !std::isfinite(onset_sharpness) ||
      !(offset_sharpness > 0) || !std::isfinite(offset_sharpness))
    bad("sharpness values must be finite and > 0");
}

std::vector<double> ramp_profile(int64_t len, double onset, double offset) {
  if (len < 1) throw ConfigError("ramp_profile: need len >= 1");
  std::vector<double> r(static_cast<size_t>(len));
  double half = double(len) / 2.0;
  for (int64_t t = 0; t < len; ++t) {
    double u = (double(t) + 0.5) / half;
    double v = (double(len - t) - 0.5) / half;
    r[static_cast<size_t>(t)] = std::min(1.0, std::min(onset * u, offset * v));
  }
  return r;
}

namespace {

double rd(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

int64_t ri(std::mt19937_64& rng, int64_t n) {
  return int64_t(rng() % uint64_t(n));
}

double tri_wave(double u, double span) {
  if (span <= 0) return 0.0;
  double q = std::fmod(u, 2.0 * span);
  if (q < 0) q += 2.0 * span;
  return q <= span ? q : 2.0 * span - q;
}

struct Segment {
  int64_t fs, fe;
  int64_t cls;
  double phase;  // starting point of the travel path, in [0,1)
};

void render_blob(double* frame, int64_t H, int64_t W, int64_t C, double cx,
                 double cy, double radius, double amp, int64_t cls) {
  // one clearly dominant channel per class so the easy set stays linearly
  // separable; classes past four still differ via band/speed/blink
  static const double mixes[4][3] = {{1.0, 0.15, 0.15},
                                     {0.15, 1.0, 0.15},
                                     {0.15, 0.15, 1.0},
                                     {0.7, 0.7, 0.7}};
  const double* mix = mixes[static_cast<size_t>(cls % 4)];
  double r2 = radius * radius;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double dx = double(x) - cx, dy = double(y) - cy;
      double d2 = (dx * dx + dy * dy) / r2;
      if (d2 >= 1.0) continue;
      double v = amp * (1.0 - d2);
      double* px = frame + (y * W + x) * C;
      for (int64_t c = 0; c < C; ++c) px[c] += v * mix[c % 3];
    }
}

struct Rendered {
  Tensor video;
  std::vector<Segment> segs;
};

Rendered render_video(const SynthSpec& spec, int64_t vid) {
  std::mt19937_64 rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * (uint64_t(vid) + 1)));
  const int64_t T = spec.frames, H = spec.height, W = spec.width, C = spec.channels;
  bool hard = spec.difficulty == Difficulty::hard;
  double noise_amp = hard ? 0.25 : 0.05;
  double base_amp = hard ? 0.7 : 1.3;

  Rendered out;
  out.video = Tensor::zeros({T, H, W, C});
  double* data = out.video.mut_data();
  for (int64_t i = 0; i < out.video.numel(); ++i)
    data[i] = (2.0 * rd(rng) - 1.0) * noise_amp;

  // non-overlapping placement with a one-frame gap: draw a length, then pick
  // uniformly among the start positions that still fit, carving the chosen
  // slot out of the free intervals; draws do not depend on the sharpness
  // knobs so matched specs share this stream exactly
  int64_t k = spec.min_actions + ri(rng, spec.max_actions - spec.min_actions + 1);
  std::vector<std::pair<int64_t, int64_t>> free_iv = {{0, T}};
  for (int64_t i = 0; i < k; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      int64_t len = spec.min_len + ri(rng, spec.max_len - spec.min_len + 1);
      int64_t feasible = 0;
      for (const auto& [a, b] : free_iv) feasible += std::max<int64_t>(0, b - a - len + 1);
      if (feasible == 0) continue;  // maybe a shorter draw fits
      int64_t pick = ri(rng, feasible);
      int64_t fs = -1;
      for (const auto& [a, b] : free_iv) {
        int64_t slots = std::max<int64_t>(0, b - a - len + 1);
        if (pick < slots) {
          fs = a + pick;
          break;
        }
        pick -= slots;
      }
      int64_t fe = fs + len;
      std::vector<std::pair<int64_t, int64_t>> next;
      for (const auto& [a, b] : free_iv) {
        if (fe <= a || fs >= b) {
          next.emplace_back(a, b);
          continue;
        }
        if (fs - 1 > a) next.emplace_back(a, fs - 1);
        if (fe + 1 < b) next.emplace_back(fe + 1, b);
      }
      free_iv = std::move(next);
      out.segs.push_back({fs, fe, ri(rng, spec.n_classes), rd(rng)});
      placed = true;
    }
    if (!placed)
      throw ConfigError("synth spec: cannot place " + std::to_string(k) +
                        " actions of " + std::to_string(spec.min_len) + ".." +
                        std::to_string(spec.max_len) + " frames in " +
                        std::to_string(T) + " frames");
  }
  std::sort(out.segs.begin(), out.segs.end(),
            [](const Segment& a, const Segment& b) { return a.fs < b.fs; });

  double radius = 0.22 * double(std::min(H, W));
  double margin = radius;
  double span = double(W - 1) - 2.0 * margin;
  for (const auto& s : out.segs) {
    int64_t len = s.fe - s.fs;
    std::vector<double> ramp =
        ramp_profile(len, spec.onset_sharpness, spec.offset_sharpness);
    // class identity: vertical band, travel speed, blink
    double cy = ((s.cls & 1) ? 0.72 : 0.28) * double(H - 1);
    double speed = ((s.cls >> 1) & 1) ? 1.1 : 0.45;
    bool blink = ((s.cls >> 2) & 1) != 0;
    for (int64_t t = s.fs; t < s.fe; ++t) {
      double amp = base_amp * ramp[static_cast<size_t>(t - s.fs)];
      if (blink && (((t - s.fs) >> 1) & 1)) amp *= 0.35;
      double cx = margin + tri_wave(s.phase * span + speed * double(t - s.fs), span);
      render_blob(data + t * H * W * C, H, W, C, cx, cy, radius, amp, s.cls);
    }
  }

  if (hard) {
    // unannotated single-frame flashes add false-positive pressure
    for (int d = 0; d < 2; ++d) {
      int64_t t = ri(rng, T);
      double cx = rd(rng) * double(W - 1);
      double cy = rd(rng) * double(H - 1);
      int64_t cls = ri(rng, spec.n_classes);
      render_blob(data + t * H * W * C, H, W, C, cx, cy, radius, 0.5 * base_amp,
                  cls);
    }
  }
  return out;
}

json parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path + ": cannot open");
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  SynthDataset ds;
  for (int64_t c = 0; c < spec.n_classes; ++c)
    ds.annos.labels.push_back("class_" + std::to_string(c));

  // per-video streams are independent, so videos render in parallel waves
  auto wave = static_cast<size_t>(worker_threads());
  std::vector<Rendered> rendered(static_cast<size_t>(spec.n_videos));
  for (int64_t base = 0; base < spec.n_videos; base += int64_t(wave)) {
    std::vector<std::future<Rendered>> futs;
    for (int64_t v = base; v < std::min(spec.n_videos, base + int64_t(wave)); ++v)
      futs.push_back(std::async(std::launch::async, render_video, spec, v));
    for (size_t i = 0; i < futs.size(); ++i)
      rendered[static_cast<size_t>(base) + i] = futs[i].get();
  }

  for (int64_t v = 0; v < spec.n_videos; ++v) {
    VideoAnnotations va;
    va.id = "v" + std::to_string(v);
    va.duration = double(spec.frames) / kSynthFps;
    va.fps = kSynthFps;
    for (const auto& s : rendered[static_cast<size_t>(v)].segs)
      va.annotations.push_back({double(s.fs) / kSynthFps, double(s.fe) / kSynthFps,
                                int(s.cls)});
    ds.annos.videos.push_back(std::move(va));
    ds.videos.push_back(std::move(rendered[static_cast<size_t>(v)].video));
  }
  ds.annos.validate();
  return ds;
}

AsymmetrySuite asymmetry_suite(const SynthSpec& base) {
  AsymmetrySuite suite;
  suite.sym_spec = base;
  suite.sym_spec.offset_sharpness = suite.sym_spec.onset_sharpness;
  suite.asym_spec = base;
  suite.asym_spec.onset_sharpness = 4.0 * base.onset_sharpness;
  suite.asym_spec.offset_sharpness = 0.5 * base.onset_sharpness;
  suite.symmetric = generate(suite.sym_spec);
  suite.asymmetric = generate(suite.asym_spec);
  return suite;
}

namespace {

struct Fnv1a {
  uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  void u64(uint64_t v) { bytes(&v, 8); }
  void d(double v) {
    uint64_t b;
    std::memcpy(&b, &v, 8);
    u64(b);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
};

}  // namespace

uint64_t dataset_checksum(const SynthDataset& ds) {
  Fnv1a f;
  f.u64(uint64_t(ds.videos.size()));
  for (const auto& v : ds.videos) {
    f.u64(uint64_t(v.rank()));
    for (int64_t e : v.shape()) f.u64(uint64_t(e));
    f.bytes(v.data(), static_cast<size_t>(v.numel()) * 8);
  }
  for (const auto& l : ds.annos.labels) f.str(l);
  for (const auto& v : ds.annos.videos) {
    f.str(v.id);
    f.d(v.duration);
    f.d(v.fps);
    for (const auto& a : v.annotations) {
      f.d(a.t_start);
      f.d(a.t_end);
      f.u64(uint64_t(a.label));
    }
  }
  return f.h;
}

void save_dataset(const SynthDataset& ds, const std::string& dir) {
  if (ds.videos.size() != ds.annos.videos.size())
    throw ConfigError("save_dataset: video count does not match the annotations");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create directory: " + ec.message());
  save_annotations(ds.annos, dir + "/annotations.json");
  for (size_t i = 0; i < ds.videos.size(); ++i)
    save_tensor(dir + "/" + ds.annos.videos[i].id + ".tnsr", ds.videos[i]);
}

SynthDataset load_dataset(const std::string& dir) {
  SynthDataset ds;
  ds.annos = load_annotations(dir + "/annotations.json");
  for (const auto& v : ds.annos.videos)
    ds.videos.push_back(load_tensor(dir + "/" + v.id + ".tnsr"));
  return ds;
}

SynthSpec load_synth_spec(const std::string& path) {
  json j = parse_file(path);
  if (!j.is_object()) throw IoError(path + ": /: expected an object");
  static const char* known[] = {"seed",        "n_videos",  "frames",
                                "height",      "width",     "channels",
                                "n_classes",   "actions",   "len_frames",
                                "difficulty",  "onset_sharpness",
                                "offset_sharpness"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw IoError(path + ": /" + it.key() + ": unknown key");
  }
  SynthSpec s;
  auto geti = [&](const char* key, int64_t& dst) {
    if (!j.count(key)) return;
    if (!j[key].is_number_integer())
      throw IoError(path + ": /" + key + ": expected an integer");
    dst = j[key].get<int64_t>();
  };
  auto getd = [&](const char* key, double& dst) {
    if (!j.count(key)) return;
    if (!j[key].is_number())
      throw IoError(path + ": /" + key + ": expected a number");
    dst = j[key].get<double>();
  };
  auto getpair = [&](const char* key, int64_t& lo, int64_t& hi) {
    if (!j.count(key)) return;
    const json& a = j[key];
    if (!a.is_array() || a.size() != 2 || !a[0].is_number_integer() ||
        !a[1].is_number_integer())
      throw IoError(path + ": /" + std::string(key) +
                    ": expected a [min, max] integer pair");
    lo = a[0].get<int64_t>();
    hi = a[1].get<int64_t>();
  };
  if (j.count("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      throw IoError(path + ": /seed: expected an integer");
    s.seed = j["seed"].get<uint64_t>();
  }
  geti("n_videos", s.n_videos);
  geti("frames", s.frames);
  geti("height", s.height);
  geti("width", s.width);
  geti("channels", s.channels);
  geti("n_classes", s.n_classes);
  getpair("actions", s.min_actions, s.max_actions);
  getpair("len_frames", s.min_len, s.max_len);
  if (j.count("difficulty")) {
    if (!j["difficulty"].is_string())
      throw IoError(path + ": /difficulty: expected a string");
    std::string d = j["difficulty"].get<std::string>();
    if (d == "easy")
      s.difficulty = Difficulty::easy;
    else if (d == "hard")
      s.difficulty = Difficulty::hard;
    else
      throw IoError(path + ": /difficulty: want 'easy' or 'hard', got '" + d + "'");
  }
  getd("onset_sharpness", s.onset_sharpness);
  getd("offset_sharpness", s.offset_sharpness);
  s.validate();
  return s;
}

void save_synth_spec(const SynthSpec& spec, const std::string& path) {
  spec.validate();
  json j;
  j["seed"] = spec.seed;
  j["n_videos"] = spec.n_videos;
  j["frames"] = spec.frames;
  j["height"] = spec.height;
  j["width"] = spec.width;
  j["channels"] = spec.channels;
  j["n_classes"] = spec.n_classes;
  j["actions"] = {spec.min_actions, spec.max_actions};
  j["len_frames"] = {spec.min_len, spec.max_len};
  j["difficulty"] = spec.difficulty == Difficulty::hard ? "hard" : "easy";
  j["onset_sharpness"] = spec.onset_sharpness;
  j["offset_sharpness"] = spec.offset_sharpness;
  std::ofstream f(path);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError(path + ": write failed");
}

SynthSpec easy_preset() {
  SynthSpec s;
  s.seed = 7;
  s.n_videos = 48;
  return s;
}

SynthSpec full_scale_preset() {
  SynthSpec s;
  s.seed = 1;
  s.n_videos = 1;
  s.frames = 768;
  s.height = 224;
  s.width = 224;
  s.channels = 3;
  s.n_classes = 4;
  s.min_actions = 2;
  s.max_actions = 5;
  s.min_len = 64;
  s.max_len = 256;
  return s;
}

}  // namespace tad
