#include "vitcap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vitcap/config_json.hpp"

namespace vitcap {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'C', 'P', 'T'};

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const VisionTransformer<T>& model, const std::string& path) {
  nlohmann::json header;
  header["dtype"] = dtype_name<T>();
  header["config"] = model.config();
  nlohmann::json table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto* p : model.parameters()) {
    table.push_back({{"name", p->name()}, {"shape", p->shape()}, {"offset", offset}});
    offset += p->size() * sizeof(T);
  }
  header["tensors"] = std::move(table);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, 4);
  write_u32(out, checkpoint_format_version);
  write_u32(out, uint32_t(htext.size()));
  out.write(htext.data(), std::streamsize(htext.size()));
  for (const auto* p : model.parameters())
    out.write(reinterpret_cast<const char*>(p->value().data()),
              std::streamsize(p->size() * sizeof(T)));
  if (!out) throw IoError("write failed: " + path);
}

template <typename T>
VisionTransformer<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint file");
  const uint32_t version = read_u32(in, path);
  if (version != checkpoint_format_version)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t hlen = read_u32(in, path);
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), hlen)) throw IoError(path + ": truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad checkpoint header: " + e.what());
  }
  if (header.at("dtype").get<std::string>() != dtype_name<T>())
    throw IoError(path + ": checkpoint dtype " + header.at("dtype").get<std::string>() +
                  " does not match requested " + dtype_name<T>());
  const auto config = header.at("config").get<ModelConfig>();

  auto model = VisionTransformer<T>::build(config, 0);
  auto params = model.parameters();
  const auto& table = header.at("tensors");
  if (table.size() != params.size())
    throw IoError(path + ": checkpoint lists " + std::to_string(table.size()) +
                  " tensors, model has " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table.at(i);
    if (entry.at("name").get<std::string>() != params[i]->name())
      throw IoError(path + ": tensor name mismatch at index " + std::to_string(i));
    if (entry.at("shape").get<std::vector<size_t>>() != params[i]->shape())
      throw IoError(path + ": tensor shape mismatch for " + params[i]->name());
    auto vals = params[i]->value_mut();
    if (!in.read(reinterpret_cast<char*>(vals.data()),
                 std::streamsize(vals.size() * sizeof(T))))
      throw IoError(path + ": truncated checkpoint payload at " + params[i]->name());
  }
  return model;
}

template void save_checkpoint<float>(const VisionTransformer<float>&, const std::string&);
template void save_checkpoint<double>(const VisionTransformer<double>&, const std::string&);
template VisionTransformer<float> load_checkpoint<float>(const std::string&);
template VisionTransformer<double> load_checkpoint<double>(const std::string&);

}  // namespace vitcap
