#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

namespace gasnext {

/// Versioned container of named tensors, opaque binary blobs, and a JSON
/// metadata string.
///
/// Layout (little-endian):
///   8 bytes  magic "GASNXT\0\1"
///   u32      format version
///   u64      header length, then the JSON header
///   payload  raw tensor bytes and blobs at the offsets listed in the header
///
/// Tensors are stored contiguous in their native dtype, so a round trip is
/// bit-exact.
struct TensorArchive {
  std::string metadata;  // JSON text
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> blobs;
};

inline constexpr uint32_t kArchiveVersion = 1;

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

/// Copies every named parameter of `module` into `out` under `prefix.`.
void export_parameters(const torch::nn::Module& module, const std::string& prefix, TensorArchive& out);
/// Restores parameters saved by export_parameters; every parameter must be
/// present with matching shape and dtype.
void import_parameters(torch::nn::Module& module, const std::string& prefix, const TensorArchive& in);

}  // namespace gasnext
