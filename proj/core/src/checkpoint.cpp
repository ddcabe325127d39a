#include "gasnext/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "gasnext/error.hpp"
#include <nlohmann/json.hpp>

namespace gasnext {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<char, 8> kMagic = {'G', 'A', 'S', 'N', 'X', 'T', '\0', '\1'};

std::string dtype_name(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kInt32: return "i32";
    case torch::kUInt8: return "u8";
    default: throw CheckpointError("unsupported tensor dtype in archive");
  }
}

torch::Dtype dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "i32") return torch::kInt32;
  if (s == "u8") return torch::kUInt8;
  throw CheckpointError("unknown tensor dtype '" + s + "' in archive");
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated archive header");
  return v;
}

}  // namespace

void write_archive(const fs::path& path, const TensorArchive& archive) {
  ordered_json header;
  header["metadata"] = archive.metadata;
  uint64_t offset = 0;
  std::vector<torch::Tensor> payload;
  ordered_json tensors = ordered_json::array();
  for (const auto& [name, t] : archive.tensors) {
    auto c = t.detach().contiguous().cpu();
    const uint64_t nbytes = static_cast<uint64_t>(c.numel()) * c.element_size();
    tensors.push_back({{"name", name},
                       {"dtype", dtype_name(c.scalar_type())},
                       {"shape", c.sizes().vec()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(c);
  }
  header["tensors"] = tensors;
  ordered_json blobs = ordered_json::array();
  for (const auto& [name, data] : archive.blobs) {
    blobs.push_back({{"name", name}, {"offset", offset}, {"nbytes", data.size()}});
    offset += data.size();
  }
  header["blobs"] = blobs;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write archive '" + path.string() + "'");
    out.write(kMagic.data(), kMagic.size());
    put<uint32_t>(out, kArchiveVersion);
    put<uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& c : payload) {
      out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
    }
    for (const auto& [_, data] : archive.blobs) out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw CheckpointError("failed while writing archive '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

TensorArchive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open archive '" + path.string() + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw CheckpointError("'" + path.string() + "' is not a gasnext archive");
  const auto version = get<uint32_t>(in);
  if (version != kArchiveVersion) {
    throw CheckpointError("archive version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kArchiveVersion) + ")");
  }
  const auto header_len = get<uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated archive header");
  ordered_json header;
  try {
    header = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw CheckpointError(std::string("corrupt archive header: ") + e.what());
  }
  const auto base = in.tellg();

  TensorArchive archive;
  archive.metadata = header.at("metadata").get<std::string>();
  for (const auto& entry : header.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype").get<std::string>())));
    const auto nbytes = entry.at("nbytes").get<uint64_t>();
    if (nbytes != static_cast<uint64_t>(t.numel()) * t.element_size()) throw CheckpointError("tensor size mismatch");
    in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw CheckpointError("truncated tensor payload in '" + path.string() + "'");
    archive.tensors.emplace(entry.at("name").get<std::string>(), t);
  }
  for (const auto& entry : header.at("blobs")) {
    std::string data(entry.at("nbytes").get<uint64_t>(), '\0');
    in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    in.read(data.data(), static_cast<std::streamsize>(data.size()));
    if (!in) throw CheckpointError("truncated blob payload in '" + path.string() + "'");
    archive.blobs.emplace(entry.at("name").get<std::string>(), std::move(data));
  }
  return archive;
}

void export_parameters(const torch::nn::Module& module, const std::string& prefix, TensorArchive& out) {
  for (const auto& item : module.named_parameters(true)) {
    out.tensors[prefix + "." + item.key()] = item.value().detach().clone();
  }
}

void import_parameters(torch::nn::Module& module, const std::string& prefix, const TensorArchive& in) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(true)) {
    const std::string name = prefix + "." + item.key();
    auto it = in.tensors.find(name);
    if (it == in.tensors.end()) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
    auto& p = item.value();
    if (!it->second.sizes().equals(p.sizes()) || it->second.scalar_type() != p.scalar_type()) {
      throw CheckpointError("checkpoint parameter '" + name + "' has a different shape or dtype");
    }
    p.copy_(it->second);
  }
}

}  // namespace gasnext
