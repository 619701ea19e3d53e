#include "criteria/criteria.hpp"

#include <algorithm>
#include <numeric>

#include "util/csv.hpp"
#include "util/errors.hpp"

namespace licprune {

Direction parse_direction(const std::string& s) {
  if (s == "output") return Direction::OutputMaps;
  if (s == "input") return Direction::InputMaps;
  throw std::invalid_argument("unknown direction: '" + s + "' (expected output|input)");
}

Criterion parse_criterion(const std::string& s) {
  if (s == "l2") return Criterion::L2;
  if (s == "hrank") return Criterion::HRank;
  if (s == "chip") return Criterion::Chip;
  throw std::invalid_argument("unknown criterion: '" + s + "' (expected l2|hrank|chip)");
}

std::string to_string(Direction d) {
  return d == Direction::OutputMaps ? "output" : "input";
}

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::L2: return "l2";
    case Criterion::HRank: return "hrank";
    case Criterion::Chip: return "chip";
  }
  return "?";
}

ImportanceScores l2_importance(const torch::Tensor& weights, Direction dir,
                               const std::string& layer_id) {
  if (weights.dim() != 4)
    throw StructuralError("l2 importance expects 4-axis weights, got " +
                          std::to_string(weights.dim()));
  ImportanceScores s;
  s.layer_id = layer_id;
  s.direction = dir;
  s.criterion = Criterion::L2;
  torch::NoGradGuard ng;
  auto w2 = weights.detach().to(torch::kFloat64).pow(2);
  torch::Tensor norms;
  if (dir == Direction::OutputMaps)
    norms = w2.sum({1, 2, 3}).sqrt();
  else
    norms = w2.sum({0, 2, 3}).sqrt();
  auto acc = norms.contiguous();
  const double* p = acc.data_ptr<double>();
  s.scores.assign(p, p + acc.numel());
  return s;
}

namespace {

void check_maps(const std::vector<torch::Tensor>& maps) {
  if (maps.empty()) throw std::invalid_argument("criterion needs at least one feature map");
  for (auto& m : maps) {
    if (m.dim() != 3) throw StructuralError("feature maps must be (C,H,W)");
    if (m.size(0) != maps.front().size(0))
      throw StructuralError("feature maps disagree on channel count");
  }
}

}  // namespace

ImportanceScores hrank_importance(const std::vector<torch::Tensor>& maps,
                                  const std::string& layer_id) {
  check_maps(maps);
  ImportanceScores s;
  s.layer_id = layer_id;
  s.direction = Direction::OutputMaps;
  s.criterion = Criterion::HRank;
  const int64_t C = maps.front().size(0);
  std::vector<double> acc(C, 0.0);
  torch::NoGradGuard ng;
  for (auto& m : maps) {
    auto sv = torch::linalg_svdvals(m.detach().to(torch::kFloat64));  // (C, min(H,W))
    auto smax = std::get<0>(sv.max(1, /*keepdim=*/true));
    auto rank = (sv > 1e-6 * smax).sum(1).to(torch::kFloat64).contiguous();
    const double* p = rank.data_ptr<double>();
    for (int64_t c = 0; c < C; ++c) acc[c] += p[c];
  }
  for (auto& v : acc) v /= static_cast<double>(maps.size());
  s.scores = std::move(acc);
  return s;
}

ImportanceScores chip_importance(const std::vector<torch::Tensor>& maps,
                                 const std::string& layer_id) {
  check_maps(maps);
  ImportanceScores s;
  s.layer_id = layer_id;
  s.direction = Direction::OutputMaps;
  s.criterion = Criterion::Chip;
  const int64_t C = maps.front().size(0);
  std::vector<double> acc(C, 0.0);
  torch::NoGradGuard ng;
  auto nuclear_from_gram = [](const torch::Tensor& g) {
    auto ev = torch::linalg_eigvalsh(g);
    return torch::sqrt(torch::clamp(ev, 0.0)).sum().item<double>();
  };
  for (auto& m : maps) {
    auto a = m.detach().to(torch::kFloat64).reshape({C, -1});
    auto g = torch::matmul(a, a.t());  // (C,C); dropping row c of a == dropping row+col c of g
    double full = nuclear_from_gram(g);
    for (int64_t c = 0; c < C; ++c) {
      std::vector<int64_t> keep;
      keep.reserve(C - 1);
      for (int64_t i = 0; i < C; ++i)
        if (i != c) keep.push_back(i);
      if (keep.empty()) {
        acc[c] += full;
        continue;
      }
      auto idx = torch::tensor(keep, torch::kLong);
      auto sub = g.index_select(0, idx).index_select(1, idx);
      // the true drop is >= 0; eigensolver noise may dip a hair below
      acc[c] += std::max(0.0, full - nuclear_from_gram(sub));
    }
  }
  for (auto& v : acc) v /= static_cast<double>(maps.size());
  s.scores = std::move(acc);
  return s;
}

ImportanceScores compute_importance(CodecModel model, const std::string& layer_id,
                                    Direction dir, Criterion crit,
                                    const CalibrationSet& calib) {
  auto st = model->stage(layer_id);
  if (crit == Criterion::L2) {
    auto w = st->weight_.detach();
    if (st->spec().kind == LayerKind::Deconv) w = w.transpose(0, 1);
    auto s = l2_importance(w, dir, layer_id);
    return s;
  }
  if (calib.images.empty())
    throw std::invalid_argument("data-driven criterion needs calibration images");
  torch::NoGradGuard ng;
  std::map<std::string, StageFeatures> sink;
  for (auto& img : calib.images)
    model->forward_collect(img, QuantMode::Round, {layer_id}, sink);
  auto& feats = sink[layer_id];
  auto& source = dir == Direction::OutputMaps ? feats.outputs : feats.inputs;
  std::vector<torch::Tensor> maps;
  for (auto& f : source)
    for (int64_t b = 0; b < f.size(0); ++b) maps.push_back(f[b]);
  auto s = crit == Criterion::HRank ? hrank_importance(maps, layer_id)
                                    : chip_importance(maps, layer_id);
  s.direction = dir;
  return s;
}

std::vector<int64_t> rank_channels(const ImportanceScores& s) {
  std::vector<int64_t> idx(s.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return s.scores[static_cast<size_t>(a)] < s.scores[static_cast<size_t>(b)];
  });
  return idx;
}

void write_importance_csv(const std::filesystem::path& path,
                          const std::vector<ImportanceScores>& all) {
  CsvWriter w(path);
  w.row({"layer_id", "direction", "criterion", "channel", "score"});
  for (auto& s : all)
    for (size_t c = 0; c < s.scores.size(); ++c)
      w.row({s.layer_id, to_string(s.direction), to_string(s.criterion),
             std::to_string(c), fmt_double(s.scores[c], 12)});
}

}  // namespace licprune
