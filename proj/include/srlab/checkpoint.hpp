#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "srlab/models.hpp"
#include "srlab/optim.hpp"

namespace srlab {

// Binary layout (all integers little-endian):
//   "SRCKPT01" | u32 version | u32 count | count x tensor
//   [u32 count | count x tensor]            optimizer section, names "opt.*"
//   u32 CRC32 of every preceding byte
// tensor: u16 name length | name | u8 dtype | u8 rank | rank x u64 dims | raw values
// Model descriptions are stored as one-element f64 tensors named "spec.<key>".

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct CheckpointContents {
  NamedTensors tensors;    // parameters and spec.* entries
  NamedTensors optimizer;  // opt.* entries (may be empty)

  SpecMap spec() const;
};

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors,
                      const NamedTensors& optimizer = {});
CheckpointContents read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const Model& model, const std::filesystem::path& path, const Adam* optimizer = nullptr);

/// Rebuilds the model described in the file and loads every parameter.
/// When `optimizer` is given its state is restored from the opt.* section.
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, Adam* optimizer = nullptr);

struct PartialLoad {
  /// Only file parameters whose names start with this are read.
  std::string source_prefix;
  /// Replaces source_prefix in the name looked up in the model.
  std::string target_prefix;
};

/// Copies matching parameters into an existing model, leaving the rest
/// untouched. A selected name missing from the model is an error. Returns the
/// number of tensors loaded.
std::size_t load_parameters(Model& model, const std::filesystem::path& path, const PartialLoad& selection = {});

}  // namespace srlab
