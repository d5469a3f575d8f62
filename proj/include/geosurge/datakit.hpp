#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geosurge/fusion.hpp"
#include "geosurge/tensor.hpp"

namespace geosurge::datakit {

// ---- binary tensor records ("GSRG") ------------------------------------
//
// Little-endian record: magic "GSRG", u16 version (=1), u8 dtype, u8 rank,
// u64 dims[rank], payload. Many records may live in one file, addressed by
// byte offset.

enum class Dtype : uint8_t { kF32 = 1, kF64 = 2, kU8 = 3 };

size_t dtype_size(Dtype d);

struct TensorRecord {
  Dtype dtype = Dtype::kF32;
  std::vector<uint64_t> dims;
  std::vector<std::byte> payload;

  uint64_t element_count() const;
};

// Appends a record; returns its byte offset within the stream.
uint64_t append_record(std::ostream& out, const TensorRecord& rec);
TensorRecord read_record(std::istream& in, uint64_t offset, const std::string& file_label);

TensorRecord to_record(const autodiff::Tensor<float>& t);
TensorRecord to_record(const autodiff::Tensor<double>& t);
TensorRecord to_record(const fusion::SegMap& m);

autodiff::Tensor<float> record_to_f32(const TensorRecord& rec, const std::string& label);
autodiff::Tensor<double> record_to_f64(const TensorRecord& rec, const std::string& label);
fusion::SegMap record_to_segmap(const TensorRecord& rec, const std::string& label);

// Reads whichever floating dtype is stored and casts.
template <typename T>
autodiff::Tensor<T> record_to_matrix(const TensorRecord& rec, const std::string& label) {
  if (rec.dtype == Dtype::kF64) return record_to_f64(rec, label).template cast<T>();
  return record_to_f32(rec, label).template cast<T>();
}

// ---- manifests -----------------------------------------------------------

struct BlobRef {
  std::string file;
  uint64_t offset = 0;
};

struct ManifestRecord {
  std::string id;
  double lat = 0, lon = 0;
  BlobRef rgb_blob;
  uint64_t rgb_rows = 0, rgb_cols = 0;
  BlobRef seg_blob;
  uint64_t seg_h = 0, seg_w = 0;
  std::string split = "train";
  std::optional<int64_t> cluster;
};

// JSON-lines, one record per line. Duplicate ids are rejected.
std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, std::span<const ManifestRecord> records);

// ---- checkpoints ("GSCK") -------------------------------------------------
//
// magic "GSCK", u16 version (=1), u64 header length, JSON header, then GSRG
// records at header-relative offsets.

struct Checkpoint {
  nlohmann::json config;  // effective run configuration snapshot
  std::string hierarchy_hash;
  std::string precision;                            // "f32" | "f64"
  std::vector<std::vector<std::string>> geo_cells;  // per-level canonical ids
  std::map<std::string, TensorRecord> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Verifies that every (name, rows, cols) is present; reports all missing
// names in one error.
void check_expected_tensors(
    const Checkpoint& ckpt,
    std::span<const std::tuple<std::string, uint64_t, uint64_t>> expected);

// ---- hashing ---------------------------------------------------------------

std::string fnv1a64_hex(std::span<const std::byte> bytes);
std::string file_hash(const std::string& path);

// ---- dataset splitting ------------------------------------------------------

// Deterministic seeded assignment of split tags; fractions must sum to 1.
// Stratified per cluster when cluster ids are present.
void split_dataset(std::vector<ManifestRecord>& records,
                   std::span<const std::pair<std::string, double>> fractions, uint64_t seed);

// ---- synthetic data ----------------------------------------------------------

struct SyntheticConfig {
  size_t n_clusters = 50;
  size_t samples_per_cluster = 200;
  double noise_sigma = 0.1;  // feature noise; also the segmap pixel-flip rate
  size_t rgb_rows = 17;      // tokens per sample, CLS included
  size_t d_kv = 64;
  size_t seg_h = 28, seg_w = 28;
  size_t num_classes = 16;
  double geo_sigma_km = 50.0;  // geodesic jitter around the cluster center
  double holdout_fraction = 0.1;
  uint64_t seed = 7;

  void validate() const;
};

struct SyntheticPaths {
  std::string manifest;
  std::string blob;
  std::string truth_csv;
};

// Clustered geotagged features: tokens are a fixed linear map of the
// location's unit vector plus a cluster signature plus noise; seg maps carry
// a per-cluster pattern with pixel noise. Split tags train/query are
// assigned stratified by cluster.
SyntheticPaths generate_synthetic(const SyntheticConfig& cfg, const std::string& out_dir);

}  // namespace geosurge::datakit
