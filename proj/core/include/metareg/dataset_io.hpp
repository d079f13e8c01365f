#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metareg/phantom.hpp"

namespace metareg {

// Raw volume on disk: "<stem>.hdr" (text: dims, spacing, dtype f32le,
// channels) and "<stem>.raw" (flat little-endian float32, channel-major).
void write_raw(const std::string& stem, const Tensor<float>& data, double spacing);
Tensor<float> read_raw(const std::string& stem, double* spacing = nullptr);

void write_volume(const std::string& stem, const Volume& v);
Volume read_volume(const std::string& stem);

// One case per directory.
void write_task(const std::string& dir, const Task& task);
Task read_task(const std::string& dir);

struct ManifestEntry {
  std::string case_id;
  std::string split;  // "train" or "test"
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::string config_hash;
  std::uint64_t experiment_seed = 0;
  std::vector<ManifestEntry> cases;

  std::vector<std::string> split(const std::string& name) const;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline constexpr const char* kManifestFile = "manifest.txt";

void write_manifest(const std::string& dataset_dir, const Manifest& m);
Manifest read_manifest(const std::string& dataset_dir);

// Loads every case of a split in manifest order.
std::vector<Task> load_split(const std::string& dataset_dir, const std::string& split);

}  // namespace metareg
