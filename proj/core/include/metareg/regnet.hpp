#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "metareg/autodiff.hpp"
#include "metareg/volume.hpp"

namespace metareg {

// Encoder-decoder that maps (source, masked target) to a dense displacement
// field summed over resolution levels.
struct ArchConfig {
  Shape grid{32, 32, 32};
  int levels = 3;
  int base_channels = 8;  // doubles per level
  int kernel_size = 3;
  int head_kernel_size = 1;
  double leaky_slope = 0.2;
  bool zero_init_heads = true;

  int channels(int level) const { return base_channels << level; }
  void validate() const;  // throws ConfigError

  // Single-line "key=value;..." text used in checkpoints.
  std::string descriptor() const;
  static ArchConfig from_descriptor(const std::string& text);

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

template <class T>
struct BasicNetworkParams {
  ArchConfig arch;
  std::vector<NamedTensor<T>> tensors;  // canonical order, see init_params

  std::int64_t count() const;
  const Tensor<T>& at(const std::string& name) const;

  template <class U>
  BasicNetworkParams<U> cast() const {
    BasicNetworkParams<U> out{arch, {}};
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<U>()});
    return out;
  }

  friend bool operator==(const BasicNetworkParams&, const BasicNetworkParams&) = default;
};

using NetworkParams = BasicNetworkParams<float>;

NetworkParams init_params(const ArchConfig& arch, std::uint64_t seed);

template <class T>
std::int64_t count_params(const BasicNetworkParams<T>& params) {
  return params.count();
}

// Places every parameter on the tape as a named leaf.
template <class T>
std::vector<Var<T>> bind_params(Tape<T>& tape, const BasicNetworkParams<T>& params, bool requires_grad);

// source and target are [1,D,H,W]; returns the DDF [3,D,H,W] in mm.
template <class T>
Var<T> forward(const ArchConfig& arch, std::span<const Var<T>> params, Var<T> source, Var<T> target);

DisplacementField forward(const NetworkParams& params, const Volume& source, const Volume& target_masked);

// --- checkpoint --------------------------------------------------------------

struct Checkpoint {
  NetworkParams params;
  std::map<std::string, std::string> metadata;  // config_hash, episodes, seed, mode, ...

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the raw parameter bytes, hex encoded.
std::string params_hash(const NetworkParams& params);

}  // namespace metareg
