#include "nlrn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace nlrn {

namespace {

constexpr char kMagic[8] = {'N', 'L', 'R', 'N', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderAlign = 256;

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  put_u32_le(out, bits);
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void save_tensor_file(const std::string& path, const TensorFile& file) {
  nlohmann::json header;
  header["config"] = nlohmann::json::object();
  for (const auto& [k, v] : file.config) header["config"][k] = v;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : file.tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", t.tensor.shape()}, {"dtype", "float32"}});
  }
  std::string header_str = header.dump();
  // Pad the header so the file size is independent of the digits in config
  // values (and the payload ends up aligned).
  header_str.resize((header_str.size() / kHeaderAlign + 1) * kHeaderAlign, ' ');

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32_le(out, static_cast<std::uint32_t>(header_str.size()));
  out += header_str;
  for (const auto& t : file.tensors) {
    for (std::size_t i = 0; i < t.tensor.size(); ++i) put_f32_le(out, t.tensor[i]);
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw IoError("checkpoint write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad checkpoint magic (expected NLRNCKPT): " + path);
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = get_u32_le(p + sizeof(kMagic));
  const std::size_t header_off = sizeof(kMagic) + 4;
  if (bytes.size() < header_off + header_len) throw IoError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_off, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }

  TensorFile file;
  if (header.contains("config")) {
    for (auto it = header["config"].begin(); it != header["config"].end(); ++it) {
      file.config[it.key()] = it.value().get<std::string>();
    }
  }
  std::size_t off = header_off + header_len;
  for (const auto& entry : header.at("tensors")) {
    NamedTensorData t;
    t.name = entry.at("name").get<std::string>();
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (entry.at("dtype").get<std::string>() != "float32") {
      throw IoError("unsupported tensor dtype in checkpoint: " + t.name);
    }
    std::size_t count = 1;
    for (int e : shape) count *= static_cast<std::size_t>(e);
    if (bytes.size() < off + count * 4) throw IoError("truncated checkpoint payload: " + path);
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<float>(get_u32_le(p + off + i * 4));
    }
    off += count * 4;
    t.tensor = DenseTensor<float>(std::move(shape), std::move(data));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

template <typename T>
void save_checkpoint(const std::string& path, NlrnParams<T>& params, const NlrnConfig& cfg) {
  TensorFile file;
  file.config["channels"] = std::to_string(cfg.channels);
  file.config["embed"] = std::to_string(cfg.embed);
  file.config["neighborhood"] = std::to_string(cfg.neighborhood);
  file.config["unroll"] = std::to_string(cfg.unroll);
  file.config["metric"] = metric_to_string(cfg.metric);
  file.config["metric_h"] = std::to_string(cfg.metric_h);
  file.config["propagate_corr"] = cfg.propagate_corr ? "1" : "0";
  for (const auto& nt : named_tensors(params)) {
    file.tensors.push_back({nt.name, nt.tensor->template cast<float>()});
  }
  save_tensor_file(path, file);
}

template <typename T>
std::pair<NlrnParams<T>, NlrnConfig> load_checkpoint(const std::string& path) {
  TensorFile file = load_tensor_file(path);
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = file.config.find(key);
    if (it == file.config.end()) throw IoError("checkpoint config missing field: " + key);
    return it->second;
  };
  NlrnConfig cfg;
  cfg.channels = std::stoi(need("channels"));
  cfg.embed = std::stoi(need("embed"));
  cfg.neighborhood = std::stoi(need("neighborhood"));
  cfg.unroll = std::stoi(need("unroll"));
  cfg.metric = metric_from_string(need("metric"));
  cfg.metric_h = std::stod(need("metric_h"));
  cfg.propagate_corr = need("propagate_corr") == "1";
  cfg.validate();

  NlrnParams<T> params = NlrnParams<T>::make(cfg);
  auto named = named_tensors(params);
  if (named.size() != file.tensors.size()) {
    throw IoError("checkpoint tensor count mismatch: expected " + std::to_string(named.size()) +
                  ", found " + std::to_string(file.tensors.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (file.tensors[i].name != named[i].name) {
      throw IoError("checkpoint tensor order mismatch at " + file.tensors[i].name);
    }
    if (file.tensors[i].tensor.shape() != named[i].tensor->shape()) {
      throw IoError("checkpoint tensor shape mismatch at " + named[i].name);
    }
    *named[i].tensor = file.tensors[i].tensor.template cast<T>();
  }
  return {std::move(params), cfg};
}

template void save_checkpoint(const std::string&, NlrnParams<float>&, const NlrnConfig&);
template void save_checkpoint(const std::string&, NlrnParams<double>&, const NlrnConfig&);
template std::pair<NlrnParams<float>, NlrnConfig> load_checkpoint(const std::string&);
template std::pair<NlrnParams<double>, NlrnConfig> load_checkpoint(const std::string&);

}  // namespace nlrn
