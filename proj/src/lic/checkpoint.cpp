#include "lic/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "util/errors.hpp"

namespace licprune {
namespace {

constexpr char kMagic[8] = {'L', 'P', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kBool: return "bool";
    case torch::kInt64: return "int64";
    default: throw IoError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "bool") return torch::kBool;
  if (s == "int64") return torch::kInt64;
  throw IoError("unknown tensor dtype in checkpoint: " + s);
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint file");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, CodecModel model,
                     const CheckpointMeta& meta) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["codec_config"] = model->config().to_json();
  header["dtype"] = dtype_name(model->dtype());
  header["meta"] = {{"step", meta.step},
                    {"lambda", meta.lambda},
                    {"seed", meta.seed},
                    {"stage", meta.stage_name},
                    {"extra", meta.extra}};

  nlohmann::json compact = nlohmann::json::object();
  nlohmann::json quant = nlohmann::json::object();
  bool any_quant = false;
  for (auto& id : model->stage_ids()) {
    auto st = model->stage(id);
    if (st->compact())
      compact[id] = {{"kept_out", st->kept_out_indices()},
                     {"kept_in", st->kept_in_indices()}};
    if (st->quant_attached() && !any_quant) {
      any_quant = true;
      quant = {{"weight_bits", st->weight_quant()->bits_},
               {"act_bits", st->act_bits()}};
    }
  }
  header["structure"] = {{"compact", compact}, {"quant_attached", any_quant},
                         {"quant", quant}};

  // collect tensors (parameters then buffers, in registration order)
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  for (auto& p : model->named_parameters()) tensors.emplace_back(p.key(), p.value());
  for (auto& b : model->named_buffers()) tensors.emplace_back(b.key(), b.value());

  uint64_t offset = 0;
  nlohmann::json index = nlohmann::json::array();
  std::vector<torch::Tensor> flat;
  for (auto& [name, t] : tensors) {
    auto c = t.detach().contiguous().cpu();
    uint64_t nbytes = static_cast<uint64_t>(c.numel()) * c.element_size();
    index.push_back({{"name", name},
                     {"dtype", dtype_name(c.scalar_type())},
                     {"shape", c.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
    flat.push_back(c);
  }
  header["tensors"] = index;

  std::string hs = header.dump();
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<uint64_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto& c : flat)
    out.write(static_cast<const char*>(c.data_ptr()),
              static_cast<std::streamsize>(c.numel() * c.element_size()));
  if (!out) throw IoError("write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  uint32_t version = 0;
  read_pod(in, version);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  uint64_t hlen = 0;
  read_pod(in, hlen);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }

  auto cfg = CodecConfig::from_json(header.at("codec_config"));
  auto dtype = dtype_from_name(header.at("dtype").get<std::string>());
  LoadedCheckpoint lc;
  lc.model = CodecModel(cfg, dtype);

  const auto& st = header.at("structure");
  for (auto& [id, entry] : st.at("compact").items()) {
    lc.model->stage(id)->make_compact(entry.at("kept_out").get<std::vector<int64_t>>(),
                                      entry.at("kept_in").get<std::vector<int64_t>>());
  }
  if (st.value("quant_attached", false)) {
    auto wb = st.at("quant").at("weight_bits").get<int64_t>();
    auto ab = st.at("quant").at("act_bits").get<int64_t>();
    for (auto& id : lc.model->stage_ids()) lc.model->stage(id)->attach_quant(wb, ab);
  }

  auto params = lc.model->named_parameters();
  auto buffers = lc.model->named_buffers();
  const std::streampos data_start = in.tellg();
  torch::NoGradGuard ng;
  for (auto& entry : header.at("tensors")) {
    auto name = entry.at("name").get<std::string>();
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto dt = dtype_from_name(entry.at("dtype").get<std::string>());
    auto offset = entry.at("offset").get<uint64_t>();
    auto nbytes = entry.at("nbytes").get<uint64_t>();

    torch::Tensor* dst = params.find(name);
    if (!dst) dst = buffers.find(name);
    if (!dst) throw IoError("checkpoint tensor has no destination: " + name);
    if (dst->sizes().vec() != shape || dst->scalar_type() != dt)
      throw IoError("checkpoint tensor mismatch for " + name);

    auto buf = torch::empty(shape, torch::TensorOptions().dtype(dt));
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(static_cast<char*>(buf.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError("truncated checkpoint data at " + name);
    if (dst->scalar_type() == torch::kBool || dst->scalar_type() == torch::kInt64) {
      // structural buffers may legitimately change shape via set_data elsewhere
      dst->set_data(buf);
    } else {
      dst->copy_(buf);
    }
  }

  const auto& m = header.at("meta");
  lc.meta.step = m.value("step", int64_t{0});
  lc.meta.lambda = m.value("lambda", 0.0);
  lc.meta.seed = m.value("seed", uint64_t{0});
  lc.meta.stage_name = m.value("stage", std::string());
  lc.meta.extra = m.value("extra", nlohmann::json::object());
  return lc;
}

}  // namespace licprune
