// SPDX-License-Identifier: Apache-2.0
//
// hieredit: train / edit / bench / ablate-steps / selftest.
// Exit codes: 0 success, 2 usage or configuration, 3 numeric failure,
// 4 training divergence.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hieredit/bench/ablation.hpp"
#include "hieredit/bench/csv.hpp"
#include "hieredit/bench/runner.hpp"
#include "hieredit/bench/svg.hpp"
#include "hieredit/pipeline/config.hpp"
#include "hieredit/pipeline/edit.hpp"
#include "hieredit/pipeline/training.hpp"
#include "hieredit/region/io.hpp"
#include "hieredit/testing/checks.hpp"

namespace fs = std::filesystem;
using namespace hieredit;

namespace {

constexpr int kExitOk = 0, kExitUsage = 2, kExitNumeric = 3, kExitDivergence = 4;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

template <class T>
std::vector<T> parse_numbers(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& item : split(s)) {
    std::istringstream in(item);
    T v{};
    if (!(in >> v) || !in.eof()) throw UsageError(std::string("bad number '") + item + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string("empty list for ") + what);
  return out;
}

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
};

Config load_effective_config(const Globals& g) {
  std::string path = g.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("HIEREDIT_CONFIG")) path = env;
  }
  Config c = path.empty() ? Config{} : load_config(path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  validate_config(c);
  return c;
}

std::vector<Variant> parse_ablation(const std::string& list) {
  std::vector<Variant> out;
  for (const auto& group : split(list, ';')) out.push_back(ablated_variant(split(group, ',')));
  return out;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string out, resume, curve;
  long steps = -1;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  Config c = load_effective_config(g);
  if (a.steps >= 0) c.train.steps = static_cast<std::size_t>(a.steps);
  std::optional<Trainer> tr;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (ck.meta.count("data_seed") && ck.meta.at("data_seed") != std::to_string(c.train.data_seed)) {
      throw ConfigError("checkpoint was trained with data_seed " + ck.meta.at("data_seed") +
                        ", config has " + std::to_string(c.train.data_seed));
    }
    tr.emplace(c.train, std::move(ck));
  } else {
    tr.emplace(c.train);
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  const fs::path curve_path = a.curve.empty() ? out / "curve.csv" : fs::path(a.curve);
  CsvTable curve({"step", "loss", "grad_norm", "elapsed_s"});
  const auto t0 = std::chrono::steady_clock::now();
  while (static_cast<std::size_t>(tr->optimizer().step) < c.train.steps) {
    const StepReport r = tr->step();
    const long step = tr->optimizer().step;
    const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    curve.add({std::to_string(step), csv_number(r.loss), csv_number(r.grad_norm), csv_number(el)});
    if (c.log_every > 0 && step % static_cast<long>(c.log_every) == 0) {
      std::fprintf(stderr, "step %ld loss %.5f grad_norm %.4f %.1fs\n", step, r.loss, r.grad_norm, el);
    }
    if (c.checkpoint_every > 0 && step % static_cast<long>(c.checkpoint_every) == 0) tr->save(out);
  }
  tr->save(out);
  curve.save(curve_path);
  std::fprintf(stderr, "checkpoint written to %s (step %ld)\n", out.string().c_str(), tr->optimizer().step);
  return kExitOk;
}

// ---- edit -----------------------------------------------------------------

struct EditArgs {
  std::string checkpoint, image, proxy, synthetic, mask, bbox, control, out, report, ablate, instruction = "0,3", init;
  double sigma = 0.0;
  long seed = -1, threads = -1;
};

int cmd_edit(const Globals& g, const EditArgs& a) {
  if (a.proxy.empty() == a.synthetic.empty()) {
    throw UsageError("edit needs exactly one of --proxy or --synthetic");
  }
  Config c = load_effective_config(g);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  EditRequest req;
  req.config = c.edit;
  if (a.seed >= 0) req.config.seed = static_cast<std::uint64_t>(a.seed);
  if (a.threads >= 0) req.config.threads = static_cast<std::size_t>(a.threads);
  if (!a.init.empty()) {
    set_config(c, "edit.init", a.init);
    req.config.init = c.edit.init;
  }
  if (!a.ablate.empty()) {
    const auto v = parse_ablation(a.ablate);
    if (v.size() != 1) throw UsageError("edit takes a single --ablate group, e.g. lwa,fc");
    apply_variant(req.config, v.front());
  }
  req.source = load_image(a.image);
  if (!a.proxy.empty()) {
    req.proxy = load_image(a.proxy);
  } else {
    req.editor = synthetic_proxy_editor(load_image(a.synthetic), req.config.proxy_factor, a.sigma,
                                        req.config.seed);
  }
  if (!a.mask.empty()) req.user_mask = load_mask(a.mask);
  if (!a.bbox.empty()) {
    const auto v = parse_numbers<std::size_t>(a.bbox, "--bbox");
    if (v.size() != 4) throw UsageError("--bbox expects x0,y0,x1,y1");
    req.user_bbox = Bbox{v[0], v[1], v[2], v[3]};
  }
  if (!a.control.empty()) req.control = load_image(a.control);
  for (long id : parse_numbers<long>(a.instruction, "--instruction")) req.instruction.push_back(static_cast<std::int32_t>(id));

  const EditResult res = run_edit(req, ck.model);
  save_png(res.output, a.out);
  const std::string record = to_json(res).dump(2) + "\n";
  if (a.report.empty()) {
    std::cout << record;
  } else {
    save_text(record, a.report);
  }
  return kExitOk;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint, out_dir = "bench_out", resolutions, ratios, ablate;
  long reps = -1, steps = -1, threads = -1;
};

ModelParams bench_model(const std::string& checkpoint, const Config& c) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint).model;
  // Timing does not depend on the weights; an untrained model suffices.
  return init_model(c.train.model, c.train.seed, InitStyle::Random);
}

int cmd_bench(const Globals& g, const BenchArgs& a) {
  Config c = load_effective_config(g);
  if (!a.resolutions.empty()) c.bench.resolutions = parse_numbers<std::size_t>(a.resolutions, "--resolutions");
  if (!a.ratios.empty()) c.bench.edit_ratios = parse_numbers<double>(a.ratios, "--ratios");
  if (a.reps >= 0) c.bench.repetitions = static_cast<std::size_t>(a.reps);
  if (a.steps >= 0) c.bench.steps = static_cast<std::size_t>(a.steps);
  if (a.threads >= 0) c.edit.threads = static_cast<std::size_t>(a.threads);
  validate_config(c);
  const ModelParams model = bench_model(a.checkpoint, c);
  std::vector<Variant> variants{full_variant(), dense_variant()};
  if (!a.ablate.empty())
    for (auto& v : parse_ablation(a.ablate)) variants.push_back(v);

  const auto rows = run_bench(model, c.bench, c.edit, variants);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  CsvTable table(bench_header());
  for (const auto& r : rows) table.add(to_csv_row(r));
  table.save(dir / "bench.csv");

  CsvTable fits({"resolution", "variant", "slope_ms_per_ratio", "intercept_ms", "r2", "relative_slope"});
  for (std::size_t res : c.bench.resolutions) {
    std::vector<Series> series;
    for (const auto& v : variants) {
      Series s{v.name, {}, {}};
      for (const auto& r : rows)
        if (r.resolution == res && r.variant == v.name) {
          s.x.push_back(r.edit_ratio * 100.0);
          s.y.push_back(r.min_ms);
        }
      series.push_back(std::move(s));
      if (c.bench.edit_ratios.size() >= 2) {
        const TrendFit t = fit_trend(rows, res, v.name);
        fits.add({std::to_string(res), v.name, csv_number(t.fit.slope), csv_number(t.fit.intercept),
                  csv_number(t.fit.r2), csv_number(t.relative_slope)});
        std::fprintf(stderr, "%zupx %-10s slope %.3f ms/ratio  intercept %.3f ms  R2 %.4f\n", res, v.name.c_str(),
                     t.fit.slope, t.fit.intercept, t.fit.r2);
      }
    }
    const std::string name = "bench_" + std::to_string(res) + "px.svg";
    save_text(line_chart_svg(series, {"Sampling time vs edit ratio, " + std::to_string(res) + " px", "edit ratio (%)",
                                      "best-of-N sampling time (ms)"}),
              dir / name);
  }
  fits.save(dir / "fits.csv");
  std::fprintf(stderr, "wrote %s\n", (dir / "bench.csv").string().c_str());
  return kExitOk;
}

// ---- ablate-steps ---------------------------------------------------------

struct AblateArgs {
  std::string checkpoint, skips = "0,10,14,18,22,24", out = "ablate_steps.csv";
  long fixtures = 50, data_seed = 1001;
};

int cmd_ablate_steps(const Globals& g, const AblateArgs& a) {
  const Config c = load_effective_config(g);
  if (a.fixtures <= 0) throw UsageError("--fixtures must be positive");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  SyntheticOptions so = c.train.data;
  const auto data = synthetic_dataset(static_cast<std::uint64_t>(a.data_seed), static_cast<std::size_t>(a.fixtures), so);
  const SkipReport rep = ablate_steps(ck.model, data, parse_numbers<std::size_t>(a.skips, "--skips"), c.edit);
  CsvTable t({"skip", "executed_steps", "mean_mse", "median_sampling_ms", "knee"});
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    t.add({std::to_string(r.skip), std::to_string(r.executed), csv_number(r.mean_error), csv_number(r.median_ms),
           i == rep.knee_index ? "1" : "0"});
  }
  t.save(a.out);
  std::fprintf(stderr, "knee at skip %zu; error %s beyond it\n", rep.knee(),
               rep.increases_beyond_knee ? "rises" : "does not rise");
  return kExitOk;
}

// ---- selftest -------------------------------------------------------------

int cmd_selftest() {
  using namespace hieredit::checks;
  std::vector<CheckResult> rs;
  rs.push_back(run_check(1, "flop ratio", flop_ratio));
  rs.push_back(run_check(2, "windowed vs dense oracle", [](CheckResult& r) { sparse_dense_equivalence(r); }));
  rs.push_back(run_check(3, "feature cache", [](CheckResult& r) { feature_cache_equivalence(r); }));
  rs.push_back(run_check(4, "token integration", [](CheckResult& r) { token_integration(r); }));
  rs.push_back(run_check(5, "preservation (untrained model)", [](CheckResult& r) {
    ModelConfig mc = toy_model_config();
    mc.layers = 1;
    preservation(r, init_model(mc, 1, InitStyle::Random), 10);
  }));
  rs.push_back(run_check(7, "gradients", [](CheckResult& r) { gradient_correctness(r); }));
  rs.push_back(run_check(8, "linear-field sampling", rectified_flow));
  rs.push_back(run_check(10, "mask refinement", [](CheckResult& r) { mask_refinement(r); }));
  bool ok = true;
  for (const auto& r : rs) {
    std::printf("%s %-32s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok &= r.pass;
  }
  return ok ? kExitOk : kExitNumeric;
}

int classify(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const StageError& s) {
    if (s.cause()) return classify(s.cause());
    return kExitNumeric;
  } catch (const DivergenceError&) {
    return kExitDivergence;
  } catch (const UsageError&) {
    return kExitUsage;
  } catch (const ConfigError&) {
    return kExitUsage;
  } catch (const IoError&) {
    return kExitUsage;
  } catch (const DimensionError&) {
    return kExitUsage;
  } catch (const std::exception&) {
    return kExitNumeric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-aware hierarchical image editing toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  Globals g;
  app.add_option("--config", g.config_path, "key=value config file (default: $HIEREDIT_CONFIG)");
  app.add_option("--set", g.overrides, "override one config key, key=value (repeatable)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train the toy model on synthetic edits");
  train->add_option("--out", ta.out, "checkpoint directory")->required();
  train->add_option("--steps", ta.steps, "total optimizer steps (overrides train.steps)");
  train->add_option("--resume", ta.resume, "continue from this checkpoint directory");
  train->add_option("--curve", ta.curve, "training-curve CSV (default <out>/curve.csv)");

  EditArgs ea;
  auto* edit = app.add_subcommand("edit", "edit one image");
  edit->add_option("--checkpoint", ea.checkpoint, "checkpoint directory")->required();
  edit->add_option("--image", ea.image, "source image (PNG or PPM)")->required();
  edit->add_option("--proxy", ea.proxy, "edited low-resolution proxy image");
  edit->add_option("--synthetic", ea.synthetic, "full-resolution target; its downsample acts as the proxy editor");
  edit->add_option("--sigma", ea.sigma, "gaussian corruption of the synthetic proxy");
  edit->add_option("--mask", ea.mask, "user mask (non-zero pixels are editable)");
  edit->add_option("--bbox", ea.bbox, "user box x0,y0,x1,y1 in pixels");
  edit->add_option("--control", ea.control, "control image");
  edit->add_option("--out", ea.out, "output PNG")->required();
  edit->add_option("--report", ea.report, "result record path (JSON, default stdout)");
  edit->add_option("--ablate", ea.ablate, "components to switch off, e.g. lwa,fc,ti");
  edit->add_option("--instruction", ea.instruction, "instruction token ids, comma separated");
  edit->add_option("--init", ea.init, "intermediate or noise");
  edit->add_option("--seed", ea.seed, "sampling seed");
  edit->add_option("--threads", ea.threads, "attention threads");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "time sampling against edit ratio and resolution");
  bench->add_option("--checkpoint", ba.checkpoint, "checkpoint directory (default: untrained weights)");
  bench->add_option("--out-dir", ba.out_dir, "output directory for bench.csv, fits.csv and SVG charts");
  bench->add_option("--resolutions", ba.resolutions, "pixel sizes, comma separated");
  bench->add_option("--ratios", ba.ratios, "edit ratios in (0,1], comma separated");
  bench->add_option("--reps", ba.reps, "timed repetitions per point (>= 3)");
  bench->add_option("--steps", ba.steps, "sampling steps per run");
  bench->add_option("--threads", ba.threads, "attention threads");
  bench->add_option("--ablate", ba.ablate, "extra variants, groups separated by ';', e.g. 'lwa;fc;ti'");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate-steps", "reconstruction error against skipped steps");
  ablate->add_option("--checkpoint", aa.checkpoint, "checkpoint directory")->required();
  ablate->add_option("--skips", aa.skips, "skipped-step counts, comma separated");
  ablate->add_option("--fixtures", aa.fixtures, "number of synthetic fixtures");
  ablate->add_option("--data-seed", aa.data_seed, "fixture seed");
  ablate->add_option("--out", aa.out, "CSV output");

  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (*train) return cmd_train(g, ta);
    if (*edit) return cmd_edit(g, ea);
    if (*bench) return cmd_bench(g, ba);
    if (*ablate) return cmd_ablate_steps(g, aa);
    if (*selftest) return cmd_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hieredit: %s\n", e.what());
    return classify(std::current_exception());
  }
  return kExitUsage;
}
