#include "pipeline/config.hpp"

#include <fstream>

#include "util/errors.hpp"
#include "util/rng.hpp"

namespace licprune {

CodecConfig ExperimentConfig::codec() const {
  auto c = CodecConfig::named(preset == "paper_like" ? "paper_like" : "desk");
  if (n_channels > 0) c.n_channels = n_channels;
  if (m_channels > 0) c.m_channels = m_channels;
  return c;
}

void ExperimentConfig::apply_preset_defaults() {
  const bool paper = preset == "paper_like";
  auto def = [](int64_t& v, int64_t d) {
    if (v == 0) v = d;
  };
  def(baseline_epochs, paper ? 90 : 8);
  def(steps_per_epoch, paper ? 5000 : 250);
  def(prune_finetune_epochs, paper ? 60 : 2);
  def(pq_pre_epochs, paper ? 20 : 1);
  def(pq_post_epochs, paper ? 40 : 2);
  def(batch_size, 16);
  def(crop_size, paper ? 256 : 64);
  def(calib_images, paper ? 250 : 32);
}

void ExperimentConfig::validate(bool check_paths) const {
  if (version != 1)
    throw std::invalid_argument("unsupported config version " + std::to_string(version));
  if (preset != "desk" && preset != "paper_like")
    throw std::invalid_argument("unknown preset: '" + preset + "'");
  if (lambdas.empty()) throw std::invalid_argument("lambda list is empty");
  for (double l : lambdas)
    if (l <= 0) throw std::invalid_argument("lambdas must be positive");
  if (crop_size % codec().divisibility() != 0)
    throw std::invalid_argument("crop_size must be divisible by " +
                                std::to_string(codec().divisibility()));
  if (calib_crop % codec().divisibility() != 0 ||
      criteria_crop % codec().divisibility() != 0)
    throw std::invalid_argument("calibration crops must be divisible by " +
                                std::to_string(codec().divisibility()));
  if (batch_size < 1 || baseline_epochs < 0 || steps_per_epoch < 1)
    throw std::invalid_argument("bad schedule settings");
  if (lr <= 0) throw std::invalid_argument("lr must be positive");
  if (lr_schedule != "cosine" && lr_schedule != "constant")
    throw std::invalid_argument("lr_schedule must be cosine|constant");
  if (prune_mode != "nas" && prune_mode != "fixed")
    throw std::invalid_argument("prune_mode must be nas|fixed");
  if (weight_bits < 2 || weight_bits > 16 || act_bits < 2 || act_bits > 16)
    throw std::invalid_argument("bit widths must be in [2,16]");
  search.validate();
  if (check_paths) {
    if (!std::filesystem::is_directory(train_dir))
      throw std::invalid_argument("train_dir does not exist: " + train_dir);
    if (!std::filesystem::is_directory(eval_dir))
      throw std::invalid_argument("eval_dir does not exist: " + eval_dir);
    if (!calib_dir.empty() && !std::filesystem::is_directory(calib_dir))
      throw std::invalid_argument("calib_dir does not exist: " + calib_dir);
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"version", version},
          {"preset", preset},
          {"data", {{"train_dir", train_dir}, {"calib_dir", calib_dir}, {"eval_dir", eval_dir}}},
          {"lambdas", lambdas},
          {"codec", {{"n_channels", n_channels}, {"m_channels", m_channels}}},
          {"schedule",
           {{"baseline_epochs", baseline_epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"prune_finetune_epochs", prune_finetune_epochs},
            {"pq_pre_epochs", pq_pre_epochs},
            {"pq_post_epochs", pq_post_epochs},
            {"batch_size", batch_size},
            {"crop_size", crop_size},
            {"lr", lr},
            {"lr_schedule", lr_schedule},
            {"seed", seed}}},
          {"search", search.to_json()},
          {"calibration",
           {{"criteria_images", criteria_images},
            {"criteria_crop", criteria_crop},
            {"calib_images", calib_images},
            {"calib_crop", calib_crop}}},
          {"prune", {{"mode", prune_mode}, {"filters_only", filters_only}}},
          {"quant",
           {{"enabled", quant_enabled},
            {"weight_bits", weight_bits},
            {"act_bits", act_bits}}},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.version = j.value("version", 1);
  c.preset = j.value("preset", c.preset);
  if (j.contains("data")) {
    auto& d = j.at("data");
    c.train_dir = d.value("train_dir", std::string());
    c.calib_dir = d.value("calib_dir", std::string());
    c.eval_dir = d.value("eval_dir", std::string());
  }
  if (j.contains("lambdas")) c.lambdas = j.at("lambdas").get<std::vector<double>>();
  if (j.contains("codec")) {
    c.n_channels = j.at("codec").value("n_channels", int64_t{0});
    c.m_channels = j.at("codec").value("m_channels", int64_t{0});
  }
  if (j.contains("schedule")) {
    auto& s = j.at("schedule");
    c.baseline_epochs = s.value("baseline_epochs", int64_t{0});
    c.steps_per_epoch = s.value("steps_per_epoch", int64_t{0});
    c.prune_finetune_epochs = s.value("prune_finetune_epochs", int64_t{0});
    c.pq_pre_epochs = s.value("pq_pre_epochs", int64_t{0});
    c.pq_post_epochs = s.value("pq_post_epochs", int64_t{0});
    c.batch_size = s.value("batch_size", int64_t{0});
    c.crop_size = s.value("crop_size", int64_t{0});
    c.lr = s.value("lr", c.lr);
    c.lr_schedule = s.value("lr_schedule", c.lr_schedule);
    c.seed = s.value("seed", c.seed);
  }
  // preset-flavored search defaults, overridable per field
  if (c.preset != "paper_like") {
    c.search.finetune_steps = 12;
    c.search.group_size = 4;
  } else {
    c.search.finetune_steps = 50;
    c.search.group_size = 8;
  }
  if (j.contains("search")) c.search = SearchConfig::from_json(j.at("search"), c.search);
  if (j.contains("calibration")) {
    auto& k = j.at("calibration");
    c.criteria_images = k.value("criteria_images", c.criteria_images);
    c.criteria_crop = k.value("criteria_crop", c.criteria_crop);
    c.calib_images = k.value("calib_images", int64_t{0});
    c.calib_crop = k.value("calib_crop", c.calib_crop);
  }
  if (j.contains("prune")) {
    c.prune_mode = j.at("prune").value("mode", c.prune_mode);
    c.filters_only = j.at("prune").value("filters_only", c.filters_only);
  }
  if (j.contains("quant")) {
    c.quant_enabled = j.at("quant").value("enabled", c.quant_enabled);
    c.weight_bits = j.at("quant").value("weight_bits", c.weight_bits);
    c.act_bits = j.at("quant").value("act_bits", c.act_bits);
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  c.apply_preset_defaults();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("config is not valid json: " + std::string(e.what()));
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::filesystem::path& file) const {
  if (!file.parent_path().empty()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write config: " + file.string());
  out << to_json().dump(2) << "\n";
}

uint64_t ExperimentConfig::content_hash() const {
  return fnv1a64_str(to_json().dump());
}

}  // namespace licprune
