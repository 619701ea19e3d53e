#include "pipeline/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "criteria/criteria.hpp"
#include "eval/bdrate.hpp"
#include "eval/plot.hpp"
#include "lic/checkpoint.hpp"
#include "pipeline/dataset.hpp"
#include "pipeline/trainer.hpp"
#include "prune/prune.hpp"
#include "util/csv.hpp"
#include "util/errors.hpp"
#include "util/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace licprune {

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lambda);
  return buf;
}

namespace {

using Clock = std::chrono::steady_clock;

double secs_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_json_file(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  json j;
  in >> j;
  return j;
}

void write_text_file(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

// Hashes cover only the config fields a stage actually consumes, so touching
// the eval set does not invalidate trained checkpoints.
json train_cfg_json(const ExperimentConfig& c) {
  return {{"preset", c.preset},
          {"n", c.n_channels},
          {"m", c.m_channels},
          {"train_dir", c.train_dir},
          {"epochs", c.baseline_epochs},
          {"steps", c.steps_per_epoch},
          {"batch", c.batch_size},
          {"crop", c.crop_size},
          {"lr", c.lr},
          {"sched", c.lr_schedule},
          {"seed", c.seed}};
}

uint64_t train_hash(const ExperimentConfig& c) {
  return fnv1a64_str(train_cfg_json(c).dump());
}

uint64_t compress_hash(const ExperimentConfig& c, bool with_quant) {
  json j = train_cfg_json(c);
  j["calib_dir"] = c.calib_dir.empty() ? c.train_dir : c.calib_dir;
  j["criteria_images"] = c.criteria_images;
  j["criteria_crop"] = c.criteria_crop;
  j["calib_images"] = c.calib_images;
  j["calib_crop"] = c.calib_crop;
  j["search"] = c.search.to_json();
  j["mode"] = c.prune_mode;
  j["filters_only"] = c.filters_only;
  j["ft_epochs"] = c.prune_finetune_epochs;
  if (with_quant) {
    j["pq"] = {{"pre", c.pq_pre_epochs},
               {"post", c.pq_post_epochs},
               {"weight_bits", c.weight_bits},
               {"act_bits", c.act_bits}};
  }
  return fnv1a64_str(j.dump());
}

std::string pruning_type(const json& info) {
  if (info.value("filters_only", false)) return "filters";
  if (info.value("mode", std::string()) == "nas") return "filters+channels+nas";
  return "filters+channels";
}

}  // namespace

RunManifest RunManifest::open(const fs::path& dir) {
  RunManifest m;
  m.dir_ = dir;
  fs::create_directories(dir);
  auto file = dir / "manifest.json";
  if (fs::exists(file)) {
    try {
      m.doc_ = read_json_file(file);
    } catch (const std::exception& e) {
      std::cerr << "warning: ignoring unreadable manifest: " << e.what() << "\n";
    }
  }
  if (!m.doc_.is_object()) m.doc_ = json::object();
  if (!m.doc_.contains("stages") || !m.doc_["stages"].is_object()) {
    m.doc_["stages"] = json::object();
  }
  return m;
}

bool RunManifest::stage_complete(const std::string& name, uint64_t config_hash) const {
  const auto& stages = doc_.at("stages");
  if (!stages.contains(name)) return false;
  const auto& s = stages.at(name);
  if (!s.value("complete", false)) return false;
  if (s.value("config_hash", std::string()) != hash_hex(config_hash)) return false;
  for (const auto& a : s.value("artifacts", std::vector<std::string>{})) {
    if (!fs::exists(a)) return false;
  }
  return true;
}

void RunManifest::mark_complete(const std::string& name, uint64_t config_hash,
                                const std::vector<fs::path>& artifacts, double seconds,
                                json info) {
  std::vector<std::string> paths;
  paths.reserve(artifacts.size());
  for (const auto& a : artifacts) paths.push_back(a.string());
  doc_["stages"][name] = {{"complete", true},
                          {"config_hash", hash_hex(config_hash)},
                          {"artifacts", paths},
                          {"seconds", seconds},
                          {"info", std::move(info)}};
  save();
}

json RunManifest::stage_info(const std::string& name) const {
  const auto& stages = doc_.at("stages");
  if (!stages.contains(name)) return json();
  return stages.at(name).value("info", json::object());
}

std::vector<std::string> RunManifest::stage_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : doc_.at("stages").items()) {
    (void)v;
    out.push_back(k);
  }
  return out;
}

std::vector<std::string> RunManifest::artifact_list() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : doc_.at("stages").items()) {
    (void)k;
    for (const auto& a : v.value("artifacts", std::vector<std::string>{}))
      out.push_back(a);
  }
  return out;
}

void RunManifest::set_config(const json& snapshot) {
  doc_["config"] = snapshot;
  doc_["config_hash"] = hash_hex(fnv1a64_str(snapshot.dump()));
}

void RunManifest::save() const {
  write_json_file(dir_ / "manifest.json", doc_);
}

Pipeline::Pipeline(const ExperimentConfig& cfg)
    : cfg_(cfg), out_(cfg.output_dir), manifest_(RunManifest::open(out_)) {
  cfg_.validate(false);  // data paths are checked by the stages that read them
  manifest_.set_config(cfg_.to_json());
  cfg_.save(out_ / "config.json");
  manifest_.save();
}

fs::path Pipeline::baseline_ckpt(double lambda) const {
  return out_ / "checkpoints" / ("baseline_" + lambda_tag(lambda) + ".ckpt");
}

fs::path Pipeline::variant_ckpt(const std::string& variant, double lambda) const {
  return out_ / "checkpoints" / (variant + "_" + lambda_tag(lambda) + ".ckpt");
}

fs::path Pipeline::curve_csv(const std::string& variant) const {
  return out_ / "curves" / (variant + ".csv");
}

CodecModel Pipeline::load_ckpt(const fs::path& p) const {
  return load_checkpoint(p).model;
}

std::vector<fs::path> Pipeline::train_baselines() {
  std::vector<fs::path> out;
  const uint64_t h = train_hash(cfg_);
  for (size_t i = 0; i < cfg_.lambdas.size(); ++i) {
    double lam = cfg_.lambdas[i];
    auto tag = lambda_tag(lam);
    auto name = "train:" + tag;
    auto ckpt = baseline_ckpt(lam);
    auto metrics = out_ / "metrics" / ("train_" + tag + ".csv");
    out.push_back(ckpt);
    if (manifest_.stage_complete(name, h)) continue;

    auto t0 = Clock::now();
    std::cerr << "[train] lambda=" << tag << "\n";
    torch::manual_seed(derive_seed(cfg_.seed, "init", i));
    CodecModel model(cfg_.codec());
    CropSampler sampler(cfg_.train_dir, cfg_.crop_size,
                        derive_seed(cfg_.seed, "train-data", i));
    TrainOpts opts;
    opts.steps = cfg_.baseline_epochs * cfg_.steps_per_epoch;
    opts.batch = cfg_.batch_size;
    opts.lr = cfg_.lr;
    opts.cosine = cfg_.lr_schedule == "cosine";
    opts.lambda = lam;
    opts.seed = derive_seed(cfg_.seed, "train", i);
    opts.log_every = cfg_.steps_per_epoch;
    opts.metrics_csv = metrics;
    opts.on_nan = NanPolicy::Throw;  // a diverged baseline is not worth keeping
    auto res = train_rd_loop(model, sampler, opts);

    CheckpointMeta meta;
    meta.step = res.steps_run;
    meta.lambda = lam;
    meta.seed = cfg_.seed;
    meta.stage_name = "baseline";
    save_checkpoint(ckpt, model, meta);

    manifest_.mark_complete(name, h, {ckpt, metrics}, secs_since(t0),
                            {{"final_loss", res.final_loss},
                             {"final_bpp", res.final_bpp},
                             {"final_psnr", res.final_psnr}});
  }
  return out;
}

CalibrationSet Pipeline::criteria_calibration() {
  auto dir = cfg_.calib_dir.empty() ? cfg_.train_dir : cfg_.calib_dir;
  CalibrationSet cs;
  for (auto& c : center_crops(dir, cfg_.criteria_images, cfg_.criteria_crop)) {
    cs.images.push_back(c.unsqueeze(0));
  }
  return cs;
}

CodecDeltaRdEvaluator::Data Pipeline::search_data(uint64_t seed) {
  auto dir = cfg_.calib_dir.empty() ? cfg_.train_dir : cfg_.calib_dir;
  CodecDeltaRdEvaluator::Data d;
  CropSampler sampler(dir, cfg_.calib_crop, derive_seed(seed, "search-train"));
  for (int64_t i = 0; i < 8; ++i) {
    d.train_batches.push_back(sampler.next_batch(cfg_.search.finetune_batch));
  }
  auto crops = center_crops(dir, std::max<int64_t>(cfg_.calib_images, 8), cfg_.calib_crop);
  for (size_t i = 0; i < crops.size(); i += 8) {
    auto last = std::min(crops.size(), i + 8);
    std::vector<torch::Tensor> chunk(crops.begin() + i, crops.begin() + last);
    d.eval_batches.push_back(torch::stack(chunk, 0));
  }
  return d;
}

Pipeline::PlanBundle Pipeline::make_plan(CodecModel model, double lambda) {
  PlanBundle b;
  auto calib = criteria_calibration();
  if (cfg_.prune_mode == "nas") {
    auto scfg = cfg_.search;
    scfg.seed = derive_seed(cfg_.seed, "search");
    CodecDeltaRdEvaluator eval(model, search_data(scfg.seed), lambda, scfg, calib);
    eval.compute_baseline();
    auto res = alpha_outer_search(model, scfg, eval);
    b.plan = res.plan;
    b.converged = res.trace.converged;
    b.trace = res.trace;
    b.masks = plan_masks(model, res.plan, eval);
  } else if (cfg_.prune_mode == "fixed") {
    b.plan = make_fixed_plan(model, cfg_.search.s_target, cfg_.filters_only,
                             cfg_.search.criterion);
    b.masks = build_masks(model, b.plan, calib);
  } else {
    throw std::invalid_argument("unknown prune mode: " + cfg_.prune_mode);
  }
  return b;
}

CompressOutcome Pipeline::run_compress(double lambda, const std::string& variant,
                                       bool with_quant) {
  auto tag = lambda_tag(lambda);
  auto name = "compress:" + variant + ":" + tag;
  const uint64_t h = compress_hash(cfg_, with_quant);

  auto ckpt_path = variant_ckpt(variant, lambda);
  auto stem = variant + "_" + tag;
  auto plan_path = out_ / "plans" / (stem + "_plan.json");
  auto sparsity_path = out_ / "reports" / (stem + "_sparsity.csv");
  auto imp_path = out_ / "reports" / (stem + "_importance.csv");
  auto size_json = out_ / "reports" / (stem + "_size.json");
  auto size_txt = out_ / "reports" / (stem + "_size.txt");
  auto eval_csv = out_ / "reports" / (stem + "_eval.csv");
  auto ft_csv = out_ / "metrics" / ("ft_" + stem + ".csv");

  if (manifest_.stage_complete(name, h)) {
    CompressOutcome o;
    o.checkpoint = ckpt_path;
    o.plan = PruningPlan::from_json(read_json_file(plan_path));
    auto info = manifest_.stage_info(name);
    o.achieved_s = info.value("achieved_s", 0.0);
    o.search_converged = info.value("converged", true);
    auto sj = read_json_file(size_json);
    o.size.bytes = sj.value("bytes", int64_t(0));
    o.size.baseline_bytes = sj.value("baseline_bytes", int64_t(0));
    o.size.compression_ratio = sj.value("compression_ratio", 0.0);
    o.size.breakdown = sj.value("breakdown", json::object());
    return o;
  }

  auto t0 = Clock::now();
  if (!fs::exists(baseline_ckpt(lambda))) {
    throw StateError("baseline checkpoint missing for lambda " + tag +
                     "; run train first");
  }
  std::cerr << "[" << (with_quant ? "joint-pq" : "prune") << "] " << variant
            << " lambda=" << tag << "\n";
  auto model = load_ckpt(baseline_ckpt(lambda));

  auto bundle = make_plan(model, lambda);
  write_json_file(plan_path, bundle.plan.to_json());
  std::vector<fs::path> artifacts{ckpt_path, plan_path, sparsity_path,
                                  imp_path,  size_json, size_txt,
                                  eval_csv,  ft_csv};
  if (bundle.trace) {
    auto trace_json = out_ / "plans" / (stem + "_trace.json");
    auto trace_txt = out_ / "plans" / (stem + "_trace.txt");
    write_json_file(trace_json, bundle.trace->to_json());
    write_text_file(trace_txt, bundle.trace->to_text());
    artifacts.push_back(trace_json);
    artifacts.push_back(trace_txt);
  }

  {
    auto calib = criteria_calibration();
    std::vector<ImportanceScores> all;
    for (const auto& id : model->prunable_ids()) {
      for (auto dir : {Direction::OutputMaps, Direction::InputMaps}) {
        all.push_back(compute_importance(model, id, dir, bundle.plan.criterion, calib));
      }
    }
    write_importance_csv(imp_path, all);
  }

  apply_masks(model, bundle.masks);

  int64_t pre_epochs = with_quant ? cfg_.pq_pre_epochs : cfg_.prune_finetune_epochs;
  CropSampler sampler(cfg_.train_dir, cfg_.crop_size,
                      derive_seed(cfg_.seed, variant + ":ft-data:" + tag));
  TrainOpts ft;
  ft.steps = pre_epochs * cfg_.steps_per_epoch;
  ft.batch = cfg_.batch_size;
  ft.lr = cfg_.lr;
  ft.cosine = cfg_.lr_schedule == "cosine";
  ft.lambda = lambda;
  ft.seed = derive_seed(cfg_.seed, variant + ":ft:" + tag);
  ft.log_every = cfg_.steps_per_epoch;
  ft.metrics_csv = ft_csv;
  ft.on_nan = NanPolicy::RestoreLastGood;
  train_rd_loop(model, sampler, ft);

  std::vector<StageLoss> stage_losses;
  auto stage_eval = search_data(derive_seed(cfg_.seed, "stage-eval")).eval_batches;
  auto record = [&](const std::string& st) {
    auto l = eval_rd(model, stage_eval, lambda);
    stage_losses.push_back({st, l.total.item<double>(), l.bpp.item<double>(),
                            mse_to_psnr(l.distortion.item<double>())});
  };
  record("post_prune");

  if (with_quant) {
    attach_quantization(model, cfg_.weight_bits, cfg_.act_bits);
    record("post_quant");
    auto qat_csv = out_ / "metrics" / ("qat_" + stem + ".csv");
    TrainOpts qat = ft;
    qat.steps = cfg_.pq_post_epochs * cfg_.steps_per_epoch;
    qat.seed = derive_seed(cfg_.seed, variant + ":qat:" + tag);
    qat.metrics_csv = qat_csv;
    train_rd_loop(model, sampler, qat);
    record("post_qat");
    artifacts.push_back(qat_csv);

    auto stages_csv = out_ / "reports" / (stem + "_stages.csv");
    CsvWriter w(stages_csv, {"stage", "loss", "bpp", "psnr"});
    for (const auto& s : stage_losses) {
      w.row({s.stage, fmt_double(s.loss), fmt_double(s.bpp), fmt_double(s.psnr)});
    }
    artifacts.push_back(stages_csv);
  }

  auto sp = sparsity(model);
  sp.write_csv(sparsity_path);
  double achieved_s = sp.sparsity;

  auto small = compact(model);
  auto size = model_size_bytes(small);
  write_json_file(size_json, {{"bytes", size.bytes},
                              {"baseline_bytes", size.baseline_bytes},
                              {"compression_ratio", size.compression_ratio},
                              {"breakdown", size.breakdown}});
  write_text_file(size_txt, size.to_text());

  CheckpointMeta meta;
  meta.lambda = lambda;
  meta.seed = cfg_.seed;
  meta.stage_name = variant;
  meta.extra = {{"plan", bundle.plan.to_json()},
                {"achieved_s", achieved_s},
                {"quantized", with_quant}};
  save_checkpoint(ckpt_path, small, meta);

  {
    auto images = load_eval_images(cfg_.eval_dir);
    CsvWriter w(eval_csv, {"image", "bpp", "psnr", "mse"});
    double sum_bpp = 0, sum_psnr = 0;
    for (size_t i = 0; i < images.size(); ++i) {
      auto ev = evaluate_image(small, images[i]);
      w.row({std::to_string(i), fmt_double(ev.bpp), fmt_double(ev.psnr),
             fmt_double(ev.mse)});
      sum_bpp += ev.bpp;
      sum_psnr += ev.psnr;
    }
    auto n = static_cast<double>(images.size());
    w.row({"mean", fmt_double(sum_bpp / n), fmt_double(sum_psnr / n), ""});
  }

  manifest_.mark_complete(
      name, h, artifacts, secs_since(t0),
      {{"achieved_s", achieved_s},
       {"converged", bundle.converged},
       {"mode", cfg_.prune_mode},
       {"filters_only", cfg_.filters_only},
       {"criterion", to_string(bundle.plan.criterion)},
       {"s_target", cfg_.search.s_target},
       {"quantized", with_quant},
       {"weight_bits", with_quant ? cfg_.weight_bits : 0},
       {"bytes", size.bytes},
       {"compression_ratio", size.compression_ratio},
       {"params_total", sp.model_params_total},
       {"params_after", sp.model_params_after}});

  CompressOutcome o;
  o.checkpoint = ckpt_path;
  o.plan = bundle.plan;
  o.achieved_s = achieved_s;
  o.search_converged = bundle.converged;
  o.size = size;
  o.stage_losses = stage_losses;
  return o;
}

CompressOutcome Pipeline::run_prune_pipeline(double lambda, const std::string& variant) {
  return run_compress(lambda, variant, false);
}

CompressOutcome Pipeline::run_joint_pq(double lambda, const std::string& variant) {
  if (!cfg_.quant_enabled) return run_compress(lambda, variant, false);
  return run_compress(lambda, variant, true);
}

OuterSearchResult Pipeline::search_only(double lambda) {
  auto tag = lambda_tag(lambda);
  auto name = "search:" + tag;
  const uint64_t h = compress_hash(cfg_, false);
  auto plan_path = out_ / "plans" / ("search_" + tag + "_plan.json");
  auto trace_json = out_ / "plans" / ("search_" + tag + "_trace.json");
  auto trace_txt = out_ / "plans" / ("search_" + tag + "_trace.txt");

  if (manifest_.stage_complete(name, h)) {
    OuterSearchResult res;
    res.plan = PruningPlan::from_json(read_json_file(plan_path));
    auto info = manifest_.stage_info(name);
    res.achieved_s = info.value("achieved_s", 0.0);
    res.trace.converged = info.value("converged", false);
    return res;
  }

  auto t0 = Clock::now();
  if (!fs::exists(baseline_ckpt(lambda))) {
    throw StateError("baseline checkpoint missing for lambda " + tag +
                     "; run train first");
  }
  auto model = load_ckpt(baseline_ckpt(lambda));
  auto scfg = cfg_.search;
  scfg.seed = derive_seed(cfg_.seed, "search");
  CodecDeltaRdEvaluator eval(model, search_data(scfg.seed), lambda, scfg,
                             criteria_calibration());
  eval.compute_baseline();
  auto res = alpha_outer_search(model, scfg, eval);

  write_json_file(plan_path, res.plan.to_json());
  write_json_file(trace_json, res.trace.to_json());
  write_text_file(trace_txt, res.trace.to_text());
  manifest_.mark_complete(name, h, {plan_path, trace_json, trace_txt}, secs_since(t0),
                          {{"achieved_s", res.achieved_s},
                           {"converged", res.trace.converged},
                           {"measurements", eval.measurements_done()},
                           {"cache_hits", eval.cache_hits()}});
  return res;
}

RdCurve Pipeline::evaluate_variant(const std::string& variant) {
  auto name = "eval:" + variant;
  const uint64_t h = cfg_.content_hash();
  auto csv = curve_csv(variant);
  if (manifest_.stage_complete(name, h)) {
    for (auto& c : read_curves_csv(csv)) {
      if (c.label == variant) return c;
    }
  }

  auto t0 = Clock::now();
  auto images = load_eval_images(cfg_.eval_dir);
  RdCurve curve;
  curve.label = variant;
  std::vector<fs::path> artifacts{csv};
  for (double lam : cfg_.lambdas) {
    auto tag = lambda_tag(lam);
    auto p = variant == "baseline" ? baseline_ckpt(lam) : variant_ckpt(variant, lam);
    if (!fs::exists(p)) {
      throw StateError("checkpoint missing: " + p.string());
    }
    auto model = load_ckpt(p);
    auto img_csv = out_ / "curves" / (variant + "_images_" + tag + ".csv");
    CsvWriter w(img_csv, {"image", "bpp", "psnr", "mse"});
    double sum_bpp = 0, sum_psnr = 0;
    for (size_t i = 0; i < images.size(); ++i) {
      auto ev = evaluate_image(model, images[i]);
      w.row({std::to_string(i), fmt_double(ev.bpp), fmt_double(ev.psnr),
             fmt_double(ev.mse)});
      sum_bpp += ev.bpp;
      sum_psnr += ev.psnr;
    }
    auto n = static_cast<double>(images.size());
    curve.points.push_back({lam, sum_bpp / n, sum_psnr / n});
    artifacts.push_back(img_csv);
  }
  std::sort(curve.points.begin(), curve.points.end(),
            [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
  write_curves_csv(csv, {curve});
  manifest_.mark_complete(name, h, artifacts, secs_since(t0),
                          {{"images", images.size()}, {"points", curve.points.size()}});
  return curve;
}

void Pipeline::write_report() {
  auto t0 = Clock::now();
  std::vector<RdCurve> curves;
  if (fs::is_directory(out_ / "curves")) {
    for (const auto& entry : fs::directory_iterator(out_ / "curves")) {
      auto fname = entry.path().filename().string();
      if (entry.path().extension() != ".csv") continue;
      if (fname.find("_images_") != std::string::npos) continue;
      for (auto& c : read_curves_csv(entry.path())) curves.push_back(c);
    }
  }
  std::sort(curves.begin(), curves.end(),
            [](const RdCurve& a, const RdCurve& b) { return a.label < b.label; });

  const RdCurve* baseline = nullptr;
  for (const auto& c : curves) {
    if (c.label == "baseline") baseline = &c;
  }
  auto bd_against_baseline = [&](const std::string& label) -> std::string {
    if (!baseline) return "absent";
    for (const auto& c : curves) {
      if (c.label != label) continue;
      try {
        return fmt_double(bd_rate_percent(*baseline, c), 4);
      } catch (const std::exception&) {
        return "n/a";
      }
    }
    return "absent";
  };

  // per-variant facts aggregated over lambdas from the compress stages
  struct VariantRow {
    json info;
    double sum_s = 0, sum_bytes = 0, sum_ratio = 0, sum_kept = 0;
    int n = 0;
    bool converged = true;
  };
  std::map<std::string, VariantRow> rows;
  for (const auto& sname : manifest_.stage_names()) {
    if (sname.rfind("compress:", 0) != 0) continue;
    auto rest = sname.substr(9);
    auto colon = rest.rfind(':');
    if (colon == std::string::npos) continue;
    auto variant = rest.substr(0, colon);
    auto info = manifest_.stage_info(sname);
    if (info.is_null()) continue;
    auto& r = rows[variant];
    r.info = info;
    r.sum_s += info.value("achieved_s", 0.0);
    r.sum_bytes += info.value("bytes", 0.0);
    r.sum_ratio += info.value("compression_ratio", 0.0);
    double total = info.value("params_total", 0.0);
    double after = info.value("params_after", 0.0);
    r.sum_kept += total > 0 ? after / total : 1.0;
    r.converged = r.converged && info.value("converged", true);
    ++r.n;
  }

  std::ostringstream rep;
  rep << "run: " << out_.string() << "\n\n";

  rep << "== pruning summary (vs baseline) ==\n";
  rep << "variant | type | criterion | S_target | S_achieved | param_reduction% | "
         "bd_rate%\n";
  if (rows.empty()) rep << "(absent)\n";
  for (const auto& [variant, r] : rows) {
    double n = r.n;
    rep << variant << " | " << pruning_type(r.info) << " | "
        << r.info.value("criterion", std::string("?")) << " | "
        << fmt_double(r.info.value("s_target", 0.0), 4) << " | "
        << fmt_double(r.sum_s / n, 4) << " | "
        << fmt_double((1.0 - r.sum_kept / n) * 100.0, 4) << " | "
        << bd_against_baseline(variant) << "\n";
  }
  rep << "\n== sparsity targets ==\n";
  rep << "variant | S_target | S_achieved | converged | bd_rate%\n";
  if (rows.empty()) rep << "(absent)\n";
  for (const auto& [variant, r] : rows) {
    rep << variant << " | " << fmt_double(r.info.value("s_target", 0.0), 4) << " | "
        << fmt_double(r.sum_s / r.n, 4) << " | " << (r.converged ? "yes" : "no")
        << " | " << bd_against_baseline(variant) << "\n";
  }

  rep << "\n== model size ==\n";
  rep << "variant | bits | bytes | ratio | bd_rate%\n";
  {
    CodecModel dense(cfg_.codec());
    auto sr = model_size_bytes(dense);
    rep << "baseline | 32 | " << sr.baseline_bytes << " | 1.0 | 0\n";
  }
  for (const auto& [variant, r] : rows) {
    int64_t bits = r.info.value("quantized", false) ? r.info.value("weight_bits", int64_t(0))
                                                    : int64_t(32);
    rep << variant << " | " << bits << " | "
        << fmt_double(r.sum_bytes / r.n, 10) << " | "
        << fmt_double(r.sum_ratio / r.n, 4) << " | " << bd_against_baseline(variant)
        << "\n";
  }

  auto report_txt = out_ / "report" / "report.txt";
  write_text_file(report_txt, rep.str());
  std::vector<fs::path> artifacts{report_txt};
  if (!curves.empty()) {
    auto svg = out_ / "report" / "rd_curves.svg";
    emit_plot(curves, svg);
    artifacts.push_back(svg);
    artifacts.push_back(fs::path(svg).replace_extension(".csv"));
  }
  manifest_.mark_complete("report", cfg_.content_hash(), artifacts, secs_since(t0),
                          {{"curves", curves.size()}});
}

}  // namespace licprune
