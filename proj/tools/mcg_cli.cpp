// mcg: command-line front end (synth | train | eval | infer | bench).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcg/checkpoint.hpp"
#include "mcg/config.hpp"
#include "mcg/dataio.hpp"
#include "mcg/model.hpp"
#include "mcg/scan2d.hpp"
#include "mcg/train.hpp"
#include "mcg/visualize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

/// Config keys exposed as --kebab-case options. Only options the user
/// actually passed are returned by given(), so they overlay the config file.
class KeyOptions {
 public:
  explicit KeyOptions(CLI::App* app) : app_(app) {}

  void add(const std::string& key, const std::string& help) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    opts_.emplace_back(key, app_->add_option("--" + flag, values_[key], help));
  }

  void add_all(const std::set<std::string>& keys) {
    for (const auto& k : keys) add(k, "config key '" + k + "'");
  }

  mcg::KeyValues given() const {
    mcg::KeyValues kv;
    for (const auto& [k, o] : opts_)
      if (o->count() > 0) kv[k] = values_.at(k);
    return kv;
  }

 private:
  CLI::App* app_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> opts_;
};

/// --config accepts a key=value file or a manifest.json from an earlier run.
mcg::KeyValues read_config_file(const std::string& path) {
  if (path.empty()) return {};
  if (fs::path(path).extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw mcg::IoError("cannot read " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw mcg::ConfigError(path + ": " + e.what());
    }
    mcg::KeyValues kv;
    const json cfg = j.value("config", json::object());
    try {
      for (const auto& [k, v] : cfg.items()) kv[k] = v.get<std::string>();
    } catch (const json::exception& e) {
      throw mcg::ConfigError(path + ": " + e.what());
    }
    return kv;
  }
  return mcg::read_key_values(path);
}

/// defaults < file < flags. Keys outside `known` are rejected.
mcg::KeyValues resolve_config(const std::string& path, const mcg::KeyValues& flags, const std::set<std::string>& known) {
  mcg::KeyValues kv = read_config_file(path);
  for (const auto& [k, v] : flags) kv[k] = v;
  mcg::reject_unknown_keys(kv, known);
  return kv;
}

std::set<std::string> unite(std::initializer_list<const std::set<std::string>*> sets) {
  std::set<std::string> out;
  for (const auto* s : sets) out.insert(s->begin(), s->end());
  return out;
}

mcg::KeyValues merge(std::initializer_list<mcg::KeyValues> parts) {
  mcg::KeyValues out;
  for (const auto& p : parts) out.insert(p.begin(), p.end());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw mcg::IoError("cannot create directory " + dir.string());
}

/// Written before any long-running work. Artifact paths are relative to the
/// output directory so identical runs into different directories produce
/// identical manifests.
void write_manifest(const fs::path& out_dir, const std::string& command, std::uint64_t seed, const mcg::KeyValues& config,
                    const json& inputs, const std::vector<std::string>& artifacts) {
  ensure_dir(out_dir);
  json j;
  j["tool"] = "mcg";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = json::object();
  for (const auto& [k, v] : config) j["config"][k] = v;
  j["inputs"] = inputs;
  j["artifacts"] = artifacts;
  std::ofstream os(out_dir / "manifest.json", std::ios::trunc);
  if (!os) throw mcg::IoError("cannot write manifest in " + out_dir.string());
  os << j.dump(2) << "\n";
}

void add_layout_options(CLI::App* app, mcg::DatasetLayout& layout) {
  app->add_option("--dir-a", layout.t1_dir, "subdirectory with pre-change images")->capture_default_str();
  app->add_option("--dir-b", layout.t2_dir, "subdirectory with post-change images")->capture_default_str();
  app->add_option("--dir-label", layout.label_dir, "subdirectory with change masks")->capture_default_str();
}

json layout_json(const mcg::DatasetLayout& l) { return {{"a", l.t1_dir}, {"b", l.t2_dir}, {"label", l.label_dir}}; }

/// Model config stored next to a checkpoint.
std::string sidecar(const std::string& ckpt) { return ckpt + ".cfg"; }

mcg::ModelConfig model_for_checkpoint(const std::string& ckpt, const mcg::KeyValues& overrides) {
  if (!fs::exists(sidecar(ckpt))) throw mcg::IoError("missing model config " + sidecar(ckpt));
  mcg::KeyValues kv = mcg::read_key_values(sidecar(ckpt));
  mcg::reject_unknown_keys(kv, mcg::model_keys());
  for (const auto& [k, v] : overrides) kv[k] = v;
  mcg::ModelConfig mc;
  mcg::apply(mc, kv);
  mc.validate();
  return mc;
}

void print_metrics(std::ostream& os, const std::string& label, const mcg::Metrics& m) {
  os << label << " oa=" << m.oa << " precision=" << m.precision << " recall=" << m.recall << " f1=" << m.f1
     << " iou=" << m.iou << " kc=" << m.kc << "\n";
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, config;
  mcg::DatasetLayout layout;
};

int run_synth(const SynthArgs& a, const mcg::KeyValues& flags) {
  const auto kv = resolve_config(a.config, flags, mcg::synth_keys());
  mcg::SynthConfig sc;
  mcg::apply(sc, kv);
  sc.validate();
  const fs::path out(a.out);
  write_manifest(out, "synth", sc.seed, mcg::to_key_values(sc), {{"layout", layout_json(a.layout)}},
                 {a.layout.t1_dir + "/", a.layout.t2_dir + "/", a.layout.label_dir + "/"});
  for (std::size_t i = 0; i < sc.count; ++i) mcg::save_pair(mcg::generate_synthetic_one(sc, i), out.string(), a.layout);
  std::cout << "wrote " << sc.count << " pairs to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config, eval_data;
  bool no_flow = false, no_2ds = false;
  mcg::DatasetLayout layout;
};

int run_train(const TrainArgs& a, mcg::KeyValues flags) {
  if (a.no_flow) flags["use_flow"] = "false";
  if (a.no_2ds) flags["use_2ds"] = "false";
  const auto kv = resolve_config(a.config, flags, unite({&mcg::model_keys(), &mcg::train_keys()}));
  mcg::ModelConfig mc;
  mcg::TrainConfig tc;
  mcg::apply(mc, kv);
  mcg::apply(tc, kv);
  mc.validate();
  tc.validate();

  const fs::path out(a.out);
  json inputs{{"data", a.data}, {"layout", layout_json(a.layout)}};
  if (!a.eval_data.empty()) inputs["eval_data"] = a.eval_data;
  write_manifest(out, "train", tc.seed, merge({mcg::to_key_values(mc), mcg::to_key_values(tc)}), inputs,
                 {"model.ckpt", "model.ckpt.cfg", "train_log.csv"});

  const auto data = mcg::load_dataset(a.data, a.layout);
  mcg::ChangeDetector<float> model(mc, tc.seed);
  std::ofstream csv(out / "train_log.csv", std::ios::trunc);
  if (!csv) throw mcg::IoError("cannot write " + (out / "train_log.csv").string());
  const auto t0 = std::chrono::steady_clock::now();
  mcg::train(model, data, tc, &csv, [&](const mcg::TrainLogRow& r) {
    if (r.step % 100 == 0 || r.step == tc.steps) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << r.step << " loss " << r.loss << " batch_f1 " << r.batch_metrics.f1 << " (" << s << " s)\n";
    }
  });
  const std::string ckpt = (out / "model.ckpt").string();
  mcg::save_checkpoint(model.params(), ckpt);
  mcg::write_key_values(sidecar(ckpt), mcg::to_key_values(mc));
  std::cout << "checkpoint " << ckpt << " checksum " << model.params().checksum() << "\n";

  if (!a.eval_data.empty()) {
    const auto test = mcg::load_dataset(a.eval_data, a.layout);
    print_metrics(std::cout, "eval", mcg::metrics(mcg::evaluate(model, test).total));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt, pred_dir, out, config;
  bool overlays = true;
  mcg::DatasetLayout layout;
};

int run_eval(const EvalArgs& a, const mcg::KeyValues& flags) {
  if (a.ckpt.empty() == a.pred_dir.empty()) throw mcg::ConfigError("eval needs exactly one of --ckpt or --pred-dir");
  const auto kv = resolve_config(a.config, flags, mcg::model_keys());
  const fs::path out(a.out);
  json inputs{{"data", a.data}, {"layout", layout_json(a.layout)}};
  if (!a.ckpt.empty()) inputs["checkpoint"] = a.ckpt;
  if (!a.pred_dir.empty()) inputs["pred_dir"] = a.pred_dir;
  std::vector<std::string> artifacts{"metrics.csv"};
  if (a.overlays) artifacts.push_back("overlays/");

  std::vector<std::vector<std::uint8_t>> preds;
  std::vector<mcg::SamplePair> data;
  if (!a.ckpt.empty()) {
    const auto mc = model_for_checkpoint(a.ckpt, kv);
    write_manifest(out, "eval", 0, mcg::to_key_values(mc), inputs, artifacts);
    mcg::ChangeDetector<float> model(mc, 0);
    mcg::load_checkpoint(model.params(), a.ckpt);
    data = mcg::load_dataset(a.data, a.layout);
    preds = mcg::evaluate(model, data, true).predictions;
  } else {
    write_manifest(out, "eval", 0, kv, inputs, artifacts);
    data = mcg::load_dataset(a.data, a.layout);
    for (const auto& s : data) {
      const auto m = mcg::load_mask((fs::path(a.pred_dir) / (s.id + ".png")).string());
      if (m.height != s.height() || m.width != s.width()) throw mcg::ShapeError("prediction " + s.id + " has wrong extents");
      preds.push_back(m.data);
    }
  }

  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  if (!csv) throw mcg::IoError("cannot write metrics.csv");
  csv << "id,tp,tn,fp,fn,oa,precision,recall,f1,iou,kc\n";
  auto row = [&csv](const std::string& id, const mcg::ConfusionCounts& c) {
    const auto m = mcg::metrics(c);
    csv << id << ',' << c.tp << ',' << c.tn << ',' << c.fp << ',' << c.fn << ',' << m.oa << ',' << m.precision << ','
        << m.recall << ',' << m.f1 << ',' << m.iou << ',' << m.kc << '\n';
  };
  if (a.overlays) ensure_dir(out / "overlays");
  mcg::ConfusionCounts total;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto c = mcg::confusion(preds[i], data[i].label.data);
    total += c;
    row(data[i].id, c);
    if (a.overlays) {
      mcg::write_png((out / "overlays" / (data[i].id + ".png")).string(),
                     mcg::overlay(preds[i], data[i].label.data, data[i].height(), data[i].width()));
    }
  }
  row("ALL", total);
  print_metrics(std::cout, "aggregate", mcg::metrics(total));
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
  std::string ckpt, t1, t2, out, config;
  std::size_t tile = 0, stride = 0;
  bool emit_flow = false;
};

int run_infer(const InferArgs& a, const mcg::KeyValues& flags) {
  const auto kv = resolve_config(a.config, flags, mcg::model_keys());
  const auto mc = model_for_checkpoint(a.ckpt, kv);
  if (a.emit_flow && a.tile != 0) throw mcg::ConfigError("--emit-flow is only available without tiling");
  if (a.emit_flow && !mc.use_flow) throw mcg::ConfigError("--emit-flow needs a model with flow guidance enabled");
  std::vector<std::string> artifacts{"change.png"};
  if (a.emit_flow)
    for (int l = 3; l >= 1; --l) artifacts.push_back("flow_cfg" + std::to_string(l) + ".png");
  const fs::path out(a.out);
  write_manifest(out, "infer", 0, mcg::to_key_values(mc),
                 {{"checkpoint", a.ckpt}, {"t1", a.t1}, {"t2", a.t2}, {"tile", a.tile}, {"stride", a.stride}}, artifacts);

  mcg::ChangeDetector<float> model(mc, 0);
  mcg::load_checkpoint(model.params(), a.ckpt);
  const auto pair = mcg::load_pair(a.t1, a.t2);
  const std::size_t H = pair.height(), W = pair.width();
  mcg::NoGradGuard guard;
  mcg::Mask change(H, W);
  if (a.tile == 0) {
    const auto r = model.forward(pair.img_t1, pair.img_t2);
    change.data = mcg::ChangeDetector<float>::predict_mask(r);
    if (a.emit_flow) {
      for (std::size_t l = 0; l < r.flows.size(); ++l) {
        mcg::write_png((out / artifacts[l + 1]).string(), mcg::flow_to_color(r.flows[l]));
      }
    }
  } else {
    // Overlapping tiles: average the change probability, then threshold.
    const std::size_t stride = a.stride == 0 ? a.tile : a.stride;
    std::vector<double> prob(H * W, 0.0), hits(H * W, 0.0);
    const auto ys = mcg::tile_anchors(H, a.tile, stride), xs = mcg::tile_anchors(W, a.tile, stride);
    const auto tiles = mcg::tile(pair, a.tile, stride);
    std::size_t t = 0;
    for (auto oy : ys)
      for (auto ox : xs) {
        const auto r = model.forward(tiles[t].img_t1, tiles[t].img_t2);
        ++t;
        const auto& p = r.probs.value();
        const std::size_t TP = a.tile * a.tile;
        for (std::size_t y = 0; y < a.tile; ++y)
          for (std::size_t x = 0; x < a.tile; ++x) {
            prob[(oy + y) * W + ox + x] += p[TP + y * a.tile + x];
            hits[(oy + y) * W + ox + x] += 1;
          }
      }
    for (std::size_t k = 0; k < H * W; ++k) change.data[k] = prob[k] / hits[k] > 0.5 ? 1 : 0;
  }
  mcg::save_mask((out / "change.png").string(), change);
  std::cout << "change pixels " << change.positives() << " / " << H * W << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string out;
  std::vector<std::size_t> sizes{64, 128, 256, 512};
  std::vector<std::string> variants{"seq", "par", "selective"};
  std::vector<std::string> precisions{"f32", "f64"};
  std::size_t states = 4;
  std::size_t threads = 0;
  double min_time_ms = 100;
  bool warm = false;  // keep caches hot between repetitions
  std::uint64_t seed = 0;
};

/// Evicts the data caches by dirtying a buffer twice the last-level cache.
void evict_caches() {
  static std::vector<char> junk = [] {
    const long l3 = ::sysconf(_SC_LEVEL3_CACHE_SIZE);
    return std::vector<char>(std::max<std::size_t>(l3 > 0 ? 2 * static_cast<std::size_t>(l3) : 0, 64u << 20));
  }();
  for (std::size_t k = 0; k < junk.size(); k += 64) ++junk[k];
}

template <class T>
double time_variant(const std::string& variant, std::size_t n, const BenchArgs& a, std::mt19937_64& rng) {
  const std::size_t N = a.states;
  std::uniform_real_distribution<double> ua(0.5, 0.99), uu(-1.0, 1.0);
  std::function<void()> run;
  if (variant == "oracle") {
    mcg::Tensor<T> ab({n, n}), bx({n, n});
    for (std::size_t k = 0; k < ab.size(); ++k) ab[k] = static_cast<T>(ua(rng)), bx[k] = static_cast<T>(uu(rng));
    run = [ab, bx] { (void)mcg::scan2d::scan2d_oracle(ab, bx); };
  } else if (variant == "selective") {
    const std::size_t D = 1;
    mcg::Tensor<T> x({D, n, n}), dl({D, n, n}), la({D, N}), b({N, n, n}), c({N, n, n});
    for (auto* t : {&x, &b, &c})
      for (auto& v : t->vec()) v = static_cast<T>(uu(rng));
    for (auto& v : dl.vec()) v = static_cast<T>(0.05 + 0.1 * ua(rng));
    run = [=] {
      mcg::NoGradGuard g;
      (void)mcg::scan2d::selective_scan(mcg::Var<T>(x), mcg::Var<T>(dl), mcg::Var<T>(la), mcg::Var<T>(b), mcg::Var<T>(c));
    };
  } else {
    mcg::Tensor<T> ab({N, n, n}), bx({N, n, n}), c({N, n, n});
    for (std::size_t k = 0; k < ab.size(); ++k) {
      ab[k] = static_cast<T>(ua(rng));
      bx[k] = static_cast<T>(uu(rng));
      c[k] = static_cast<T>(uu(rng));
    }
    const std::size_t threads = a.threads == 0 ? mcg::hardware_threads() : a.threads;
    // seq reuses its output buffers so the timing covers the scan, not the allocator.
    auto out = std::make_shared<mcg::scan2d::Scan2dResult<T>>(
        mcg::scan2d::Scan2dResult<T>{mcg::Tensor<T>({n, n}), mcg::Tensor<T>({N, n, n}), mcg::Tensor<T>({N, n, n})});
    if (variant == "seq") run = [=] { mcg::scan2d::scan2d_forward_into(ab, bx, c, *out); };
    else run = [=] { (void)mcg::scan2d::scan2d_forward_parallel(ab, bx, c, threads); };
  }
  // Median of per-call times over enough repetitions to fill min_time_ms.
  // Unless warm, every call starts from evicted caches so all sizes are timed
  // from the same memory level; the eviction counts toward the budget.
  run();
  std::vector<double> ms;
  double spent = 0;
  while (spent < a.min_time_ms || ms.size() < 5) {
    const auto t_evict = std::chrono::steady_clock::now();
    if (!a.warm) evict_caches();
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    spent += std::chrono::duration<double, std::milli>(t1 - t_evict).count();
  }
  std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
  return ms[ms.size() / 2];
}

/// Least-squares slope of log(millis) against log(pixels).
double loglog_slope(const std::vector<double>& pixels, const std::vector<double>& millis) {
  const std::size_t n = pixels.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(pixels[i]), y = std::log(millis[i]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

int run_bench(const BenchArgs& a) {
  static const std::set<std::string> known{"seq", "par", "selective", "oracle"};
  for (const auto& v : a.variants)
    if (!known.contains(v)) throw mcg::ConfigError("unknown bench variant '" + v + "'");
  for (const auto& p : a.precisions)
    if (p != "f32" && p != "f64") throw mcg::ConfigError("precision must be f32 or f64");
  for (auto s : a.sizes) {
    if (s == 0) throw mcg::ConfigError("bench sizes must be positive");
    if (s * s > 1024 && std::count(a.variants.begin(), a.variants.end(), "oracle")) {
      throw mcg::ShapeError("oracle variant is limited to 1024 positions; size " + std::to_string(s) + " is too large");
    }
  }
  if (a.states == 0) throw mcg::ConfigError("--states must be positive");
  const fs::path out(a.out);
  std::ostringstream sizes;
  for (auto s : a.sizes) sizes << (sizes.tellp() > 0 ? "," : "") << s;
  write_manifest(out, "bench", a.seed,
                 {{"sizes", sizes.str()}, {"states", std::to_string(a.states)}, {"min_time_ms", std::to_string(a.min_time_ms)},
                  {"warm", a.warm ? "true" : "false"}},
                 json::object(), {"bench.csv", "bench_summary.txt"});
  std::ofstream csv(out / "bench.csv", std::ios::trunc), summary(out / "bench_summary.txt", std::ios::trunc);
  if (!csv || !summary) throw mcg::IoError("cannot write bench outputs in " + out.string());
  csv << "size,variant,precision,millis\n";
  std::mt19937_64 rng(a.seed);
  for (const auto& v : a.variants)
    for (const auto& p : a.precisions) {
      std::vector<double> px, ms;
      for (auto s : a.sizes) {
        const double t = p == "f32" ? time_variant<float>(v, s, a, rng) : time_variant<double>(v, s, a, rng);
        csv << s << ',' << v << ',' << p << ',' << t << '\n';
        px.push_back(static_cast<double>(s * s));
        ms.push_back(t);
      }
      if (px.size() >= 2) {
        std::ostringstream line;
        line << "slope variant=" << v << " precision=" << p << " slope=" << loglog_slope(px, ms) << "\n";
        std::cout << line.str();
        summary << line.str();
      }
    }
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const mcg::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const mcg::IoError*>(&e)) return 3;
  if (dynamic_cast<const mcg::ShapeError*>(&e)) return 4;
  if (dynamic_cast<const mcg::DivergedError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D-Mamba change detection with change-flow guidance"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic bi-temporal dataset");
  synth->add_option("--out", sa.out, "output dataset directory")->required();
  synth->add_option("--config", sa.config, "key=value file or manifest.json");
  add_layout_options(synth, sa.layout);
  KeyOptions synth_kv(synth);
  synth_kv.add_all(mcg::synth_keys());

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  train->add_option("--data", ta.data, "dataset directory")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--config", ta.config, "key=value file or manifest.json");
  train->add_option("--eval-data", ta.eval_data, "held-out dataset evaluated after training");
  train->add_flag("--no-flow", ta.no_flow, "replace flow-guided warps by bilinear upsampling");
  train->add_flag("--no-2ds", ta.no_2ds, "replace the 2D scan by a flattened 1D scan");
  add_layout_options(train, ta.layout);
  KeyOptions train_kv(train);
  train_kv.add_all(unite({&mcg::model_keys(), &mcg::train_keys()}));

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score predictions against labels");
  eval->add_option("--data", ea.data, "dataset directory")->required();
  eval->add_option("--ckpt", ea.ckpt, "checkpoint to run");
  eval->add_option("--pred-dir", ea.pred_dir, "directory of predicted masks <id>.png instead of a checkpoint");
  eval->add_option("--out", ea.out, "output directory")->required();
  eval->add_option("--config", ea.config, "model key overrides");
  eval->add_flag("!--no-overlays", ea.overlays, "skip overlay images");
  add_layout_options(eval, ea.layout);
  KeyOptions eval_kv(eval);
  eval_kv.add_all(mcg::model_keys());

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "predict a change map for one image pair");
  infer->add_option("--ckpt", ia.ckpt, "checkpoint")->required();
  infer->add_option("--t1", ia.t1, "pre-change image")->required();
  infer->add_option("--t2", ia.t2, "post-change image")->required();
  infer->add_option("--out", ia.out, "output directory")->required();
  infer->add_option("--config", ia.config, "model key overrides");
  infer->add_option("--tile", ia.tile, "tile size (0 = whole image, extents must be divisible by 32)");
  infer->add_option("--stride", ia.stride, "tile stride (default: tile size)");
  infer->add_flag("--emit-flow", ia.emit_flow, "write a flow colour map per decoder level");
  KeyOptions infer_kv(infer);
  infer_kv.add_all(mcg::model_keys());

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "time the 2D scan across sizes and precisions");
  bench->add_option("--out", ba.out, "output directory")->required();
  bench->add_option("--sizes", ba.sizes, "square map sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--variants", ba.variants, "seq, par, selective, oracle")->delimiter(',')->capture_default_str();
  bench->add_option("--precision", ba.precisions, "f32, f64")->delimiter(',')->capture_default_str();
  bench->add_option("--states", ba.states, "state planes per scan")->capture_default_str();
  bench->add_option("--threads", ba.threads, "worker threads for the parallel variant (0 = all)");
  bench->add_option("--min-time-ms", ba.min_time_ms, "time budget per measurement")->capture_default_str();
  bench->add_flag("--warm", ba.warm, "keep caches hot between repetitions instead of evicting them");
  bench->add_option("--seed", ba.seed, "input seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return run_synth(sa, synth_kv.given());
    if (*train) return run_train(ta, train_kv.given());
    if (*eval) return run_eval(ea, eval_kv.given());
    if (*infer) return run_infer(ia, infer_kv.given());
    if (*bench) return run_bench(ba);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
