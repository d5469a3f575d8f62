#include "geosurge/datakit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "geosurge/error.hpp"
#include "geosurge/geodesy.hpp"
#include "geosurge/rng.hpp"

namespace geosurge::datakit {

namespace {

constexpr char kRecordMagic[4] = {'G', 'S', 'R', 'G'};
constexpr char kCheckpointMagic[4] = {'G', 'S', 'C', 'K'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kMaxRank = 4;

void store_le(uint64_t v, std::byte* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

uint64_t load_le(const std::byte* in, size_t n) {
  uint64_t v = 0;
  for (size_t i = 0; i < n; ++i) v |= static_cast<uint64_t>(in[i]) << (8 * i);
  return v;
}

std::string at_offset(const std::string& file, uint64_t offset) {
  return file + " @" + std::to_string(offset);
}

}  // namespace

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
    case Dtype::kU8: return 1;
  }
  throw DataError("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

uint64_t TensorRecord::element_count() const {
  uint64_t n = 1;
  for (uint64_t d : dims) n *= d;
  return n;
}

uint64_t append_record(std::ostream& out, const TensorRecord& rec) {
  if (rec.dims.empty() || rec.dims.size() > kMaxRank) {
    throw DataError("tensor record: rank must be 1.." + std::to_string(kMaxRank));
  }
  if (rec.payload.size() != rec.element_count() * dtype_size(rec.dtype)) {
    throw DataError("tensor record: payload length does not match shape");
  }
  uint64_t offset = static_cast<uint64_t>(out.tellp());
  out.write(kRecordMagic, 4);
  std::array<std::byte, 8> buf;
  store_le(kVersion, buf.data(), 2);
  out.write(reinterpret_cast<const char*>(buf.data()), 2);
  uint8_t dtype = static_cast<uint8_t>(rec.dtype);
  uint8_t rank = static_cast<uint8_t>(rec.dims.size());
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(rank));
  for (uint64_t d : rec.dims) {
    store_le(d, buf.data(), 8);
    out.write(reinterpret_cast<const char*>(buf.data()), 8);
  }
  out.write(reinterpret_cast<const char*>(rec.payload.data()),
            static_cast<std::streamsize>(rec.payload.size()));
  if (!out) throw DataError("tensor record: write failed");
  return offset;
}

TensorRecord read_record(std::istream& in, uint64_t offset, const std::string& file_label) {
  in.clear();
  in.seekg(0, std::ios::end);
  uint64_t file_size = static_cast<uint64_t>(in.tellg());
  auto need = [&](uint64_t pos, uint64_t n, const char* what) {
    if (pos + n > file_size) {
      throw DataError(std::string("truncated tensor record (") + what + ") at " +
                      at_offset(file_label, offset));
    }
  };
  need(offset, 8, "header");
  in.seekg(static_cast<std::streamoff>(offset));
  std::array<std::byte, 8> buf;
  in.read(reinterpret_cast<char*>(buf.data()), 4);
  if (std::memcmp(buf.data(), kRecordMagic, 4) != 0) {
    throw DataError("bad magic at " + at_offset(file_label, offset));
  }
  in.read(reinterpret_cast<char*>(buf.data()), 2);
  uint16_t version = static_cast<uint16_t>(load_le(buf.data(), 2));
  if (version != kVersion) {
    throw DataError("unsupported tensor record version " + std::to_string(version) + " at " +
                    at_offset(file_label, offset));
  }
  TensorRecord rec;
  int dtype = in.get();
  int rank = in.get();
  if (dtype < 1 || dtype > 3) {
    throw DataError("unknown dtype code " + std::to_string(dtype) + " at " +
                    at_offset(file_label, offset));
  }
  rec.dtype = static_cast<Dtype>(dtype);
  if (rank < 1 || rank > kMaxRank) {
    throw DataError("bad rank " + std::to_string(rank) + " at " + at_offset(file_label, offset));
  }
  need(offset + 8, static_cast<uint64_t>(rank) * 8, "dims");
  uint64_t elements = 1;
  for (int i = 0; i < rank; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), 8);
    uint64_t d = load_le(buf.data(), 8);
    // A valid payload occupies at least one byte per element, so any
    // dimension product beyond the file size is corrupt; checking each
    // factor keeps the product from overflowing.
    if (d == 0 || d > file_size || elements * d < elements || elements * d > file_size) {
      throw DataError("implausible dimension " + std::to_string(d) + " at " +
                      at_offset(file_label, offset));
    }
    rec.dims.push_back(d);
    elements *= d;
  }
  uint64_t payload_len = elements * dtype_size(rec.dtype);
  need(offset + 8 + static_cast<uint64_t>(rank) * 8, payload_len, "payload");
  rec.payload.resize(payload_len);
  in.read(reinterpret_cast<char*>(rec.payload.data()),
          static_cast<std::streamsize>(payload_len));
  if (!in) throw DataError("read failed at " + at_offset(file_label, offset));
  return rec;
}

namespace {

template <typename T>
TensorRecord matrix_record(const autodiff::Tensor<T>& t, Dtype dtype) {
  TensorRecord rec;
  rec.dtype = dtype;
  rec.dims = {t.rows(), t.cols()};
  rec.payload.resize(t.size() * sizeof(T));
  std::memcpy(rec.payload.data(), t.data(), rec.payload.size());
  return rec;
}

template <typename T>
autodiff::Tensor<T> matrix_from(const TensorRecord& rec, Dtype want, const std::string& label) {
  if (rec.dtype != want) {
    throw DataError(label + ": unexpected dtype code " +
                    std::to_string(static_cast<int>(rec.dtype)));
  }
  if (rec.dims.size() != 2) throw DataError(label + ": expected rank-2 record");
  autodiff::Tensor<T> t(rec.dims[0], rec.dims[1]);
  std::memcpy(t.data(), rec.payload.data(), rec.payload.size());
  return t;
}

}  // namespace

TensorRecord to_record(const autodiff::Tensor<float>& t) { return matrix_record(t, Dtype::kF32); }
TensorRecord to_record(const autodiff::Tensor<double>& t) { return matrix_record(t, Dtype::kF64); }

TensorRecord to_record(const fusion::SegMap& m) {
  TensorRecord rec;
  rec.dtype = Dtype::kU8;
  rec.dims = {m.h, m.w};
  rec.payload.resize(m.classes.size());
  std::memcpy(rec.payload.data(), m.classes.data(), m.classes.size());
  return rec;
}

autodiff::Tensor<float> record_to_f32(const TensorRecord& rec, const std::string& label) {
  return matrix_from<float>(rec, Dtype::kF32, label);
}
autodiff::Tensor<double> record_to_f64(const TensorRecord& rec, const std::string& label) {
  return matrix_from<double>(rec, Dtype::kF64, label);
}

fusion::SegMap record_to_segmap(const TensorRecord& rec, const std::string& label) {
  if (rec.dtype != Dtype::kU8 || rec.dims.size() != 2) {
    throw DataError(label + ": seg map record must be rank-2 u8");
  }
  fusion::SegMap m;
  m.h = rec.dims[0];
  m.w = rec.dims[1];
  m.classes.resize(rec.payload.size());
  std::memcpy(m.classes.data(), rec.payload.data(), rec.payload.size());
  return m;
}

// ---- manifests -----------------------------------------------------------

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::vector<ManifestRecord> out;
  std::set<std::string> seen;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
      ManifestRecord r;
      r.id = doc.at("id").get<std::string>();
      r.lat = doc.at("lat").get<double>();
      r.lon = doc.at("lon").get<double>();
      const auto& rgb = doc.at("rgb_blob");
      r.rgb_blob = {rgb.at("file").get<std::string>(), rgb.at("offset").get<uint64_t>()};
      r.rgb_rows = rgb.at("rows").get<uint64_t>();
      r.rgb_cols = rgb.at("cols").get<uint64_t>();
      const auto& seg = doc.at("seg_blob");
      r.seg_blob = {seg.at("file").get<std::string>(), seg.at("offset").get<uint64_t>()};
      r.seg_h = seg.at("H").get<uint64_t>();
      r.seg_w = seg.at("W").get<uint64_t>();
      if (doc.contains("split")) r.split = doc["split"].get<std::string>();
      if (doc.contains("cluster")) r.cluster = doc["cluster"].get<int64_t>();
      if (!seen.insert(r.id).second) {
        throw DataError(path + ":" + std::to_string(lineno) + ": duplicate id " + r.id);
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path, std::span<const ManifestRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const ManifestRecord& r : records) {
    nlohmann::json doc;
    doc["id"] = r.id;
    doc["lat"] = r.lat;
    doc["lon"] = r.lon;
    doc["rgb_blob"] = {{"file", r.rgb_blob.file},
                       {"offset", r.rgb_blob.offset},
                       {"rows", r.rgb_rows},
                       {"cols", r.rgb_cols}};
    doc["seg_blob"] = {{"file", r.seg_blob.file},
                       {"offset", r.seg_blob.offset},
                       {"H", r.seg_h},
                       {"W", r.seg_w}};
    doc["split"] = r.split;
    if (r.cluster) doc["cluster"] = *r.cluster;
    out << doc.dump() << "\n";
  }
  if (!out) throw DataError("manifest write failed: " + path);
}

// ---- checkpoints -----------------------------------------------------------

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["config"] = ckpt.config;
  header["hierarchy_hash"] = ckpt.hierarchy_hash;
  header["precision"] = ckpt.precision;
  header["geo_cells"] = ckpt.geo_cells;
  nlohmann::json entries = nlohmann::json::array();
  // Offsets are relative to the end of the header; records follow in name
  // order, which keeps the file deterministic.
  uint64_t offset = 0;
  for (const auto& [name, rec] : ckpt.tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = static_cast<int>(rec.dtype);
    e["dims"] = rec.dims;
    e["offset"] = offset;
    entries.push_back(std::move(e));
    offset += 8 + 8 * rec.dims.size() + rec.payload.size();
  }
  header["entries"] = std::move(entries);
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 4);
  std::array<std::byte, 8> buf;
  store_le(kVersion, buf.data(), 2);
  out.write(reinterpret_cast<const char*>(buf.data()), 2);
  store_le(header_str.size(), buf.data(), 8);
  out.write(reinterpret_cast<const char*>(buf.data()), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, rec] : ckpt.tensors) append_record(out, rec);
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  in.seekg(0, std::ios::end);
  uint64_t file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0);
  if (file_size < 14) throw DataError("truncated checkpoint " + path);
  std::array<std::byte, 8> buf;
  in.read(reinterpret_cast<char*>(buf.data()), 4);
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw DataError("bad magic in checkpoint " + path);
  }
  in.read(reinterpret_cast<char*>(buf.data()), 2);
  uint16_t version = static_cast<uint16_t>(load_le(buf.data(), 2));
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  in.read(reinterpret_cast<char*>(buf.data()), 8);
  uint64_t header_len = load_le(buf.data(), 8);
  if (14 + header_len > file_size) throw DataError("truncated checkpoint header in " + path);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  Checkpoint ckpt;
  uint64_t base = 14 + header_len;
  try {
    nlohmann::json header = nlohmann::json::parse(header_str);
    ckpt.config = header.at("config");
    ckpt.hierarchy_hash = header.at("hierarchy_hash").get<std::string>();
    ckpt.precision = header.at("precision").get<std::string>();
    ckpt.geo_cells = header.at("geo_cells").get<std::vector<std::vector<std::string>>>();
    for (const auto& e : header.at("entries")) {
      std::string name = e.at("name").get<std::string>();
      uint64_t offset = e.at("offset").get<uint64_t>();
      TensorRecord rec = read_record(in, base + offset, path);
      std::vector<uint64_t> dims = e.at("dims").get<std::vector<uint64_t>>();
      if (dims != rec.dims || static_cast<int>(rec.dtype) != e.at("dtype").get<int>()) {
        throw DataError("checkpoint entry " + name + " does not match its header in " + path);
      }
      ckpt.tensors.emplace(std::move(name), std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path + ": " + e.what());
  }
  return ckpt;
}

void check_expected_tensors(
    const Checkpoint& ckpt,
    std::span<const std::tuple<std::string, uint64_t, uint64_t>> expected) {
  std::vector<std::string> missing;
  for (const auto& [name, rows, cols] : expected) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      missing.push_back(name);
      continue;
    }
    const TensorRecord& rec = it->second;
    if (rec.dims.size() != 2 || rec.dims[0] != rows || rec.dims[1] != cols) {
      throw DataError("checkpoint tensor " + name + " has wrong shape");
    }
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing tensors:";
    for (const std::string& m : missing) msg += " " + m;
    throw DataError(msg);
  }
}

// ---- hashing -----------------------------------------------------------------

std::string fnv1a64_hex(std::span<const std::byte> bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (std::byte b : bytes) {
    h ^= static_cast<uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path + " for hashing");
  std::vector<std::byte> bytes;
  in.seekg(0, std::ios::end);
  bytes.resize(static_cast<size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return fnv1a64_hex(bytes);
}

// ---- splitting -----------------------------------------------------------------

void split_dataset(std::vector<ManifestRecord>& records,
                   std::span<const std::pair<std::string, double>> fractions, uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split: no fractions");
  double total = 0;
  for (const auto& [tag, f] : fractions) {
    if (f < 0) throw ConfigError("split: negative fraction for " + tag);
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  if (records.empty()) throw DataError("split: empty dataset");

  // Group by cluster when present; order groups deterministically.
  std::map<int64_t, std::vector<size_t>> groups;
  for (size_t i = 0; i < records.size(); ++i) {
    groups[records[i].cluster.value_or(0)].push_back(i);
  }
  for (auto& [cluster, idx] : groups) {
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return records[a].id < records[b].id; });
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(cluster) + 0x73706c69ULL));
    rng.shuffle(idx);
    double cum = 0;
    size_t start = 0;
    for (const auto& [tag, f] : fractions) {
      cum += f;
      size_t end = static_cast<size_t>(std::llround(cum * double(idx.size())));
      end = std::min(end, idx.size());
      for (size_t k = start; k < end; ++k) records[idx[k]].split = tag;
      start = end;
    }
    for (size_t k = start; k < idx.size(); ++k) records[idx[k]].split = fractions.back().first;
  }
}

// ---- synthetic generator ---------------------------------------------------------

void SyntheticConfig::validate() const {
  if (n_clusters == 0 || samples_per_cluster == 0) {
    throw ConfigError("synth: cluster and sample counts must be positive");
  }
  if (noise_sigma < 0) throw ConfigError("synth: noise_sigma must be >= 0");
  if (rgb_rows < 2) throw ConfigError("synth: rgb_rows must be >= 2");
  if (d_kv == 0) throw ConfigError("synth: d_kv must be positive");
  if (seg_h % fusion::kPatch != 0 || seg_w % fusion::kPatch != 0) {
    throw ConfigError("synth: seg dimensions must be multiples of 14");
  }
  if (num_classes == 0 || num_classes > 150) {
    throw ConfigError("synth: num_classes must be in 1..150");
  }
  if (holdout_fraction < 0 || holdout_fraction >= 1) {
    throw ConfigError("synth: holdout_fraction must be in [0, 1)");
  }
}

namespace {

struct Vec3 {
  double x, y, z;
};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

Vec3 normalized(const Vec3& a) {
  double n = std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z);
  return {a.x / n, a.y / n, a.z / n};
}

}  // namespace

SyntheticPaths generate_synthetic(const SyntheticConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  SyntheticPaths paths;
  paths.manifest = out_dir + "/manifest.jsonl";
  paths.blob = out_dir + "/features.bin";
  paths.truth_csv = out_dir + "/truth.csv";

  Rng rng(cfg.seed);

  // Cluster centers uniform on the sphere.
  std::vector<geodesy::GeoPoint> centers;
  for (size_t c = 0; c < cfg.n_clusters; ++c) {
    double z = rng.uniform(-1.0, 1.0);
    double lat = std::asin(z) * 180.0 / std::numbers::pi;
    centers.emplace_back(lat, rng.uniform(-180.0, 180.0));
  }
  // Fixed linear map from the location's unit vector to token space.
  autodiff::Tensor<double> w_map(cfg.d_kv, 3);
  for (size_t k = 0; k < w_map.size(); ++k) w_map[k] = rng.normal() / std::sqrt(3.0);
  // Per-cluster signature tokens.
  autodiff::Tensor<double> sig(cfg.n_clusters, cfg.d_kv);
  for (size_t k = 0; k < sig.size(); ++k) sig[k] = rng.normal();

  double sigma_rad = cfg.geo_sigma_km / geodesy::kEarthRadiusKm;
  double flip_p = std::min(0.75, cfg.noise_sigma);
  size_t pw = cfg.seg_w / fusion::kPatch;

  std::ofstream blob(paths.blob, std::ios::binary | std::ios::trunc);
  if (!blob) throw DataError("cannot write " + paths.blob);
  std::ofstream truth(paths.truth_csv, std::ios::trunc);
  if (!truth) throw DataError("cannot write " + paths.truth_csv);
  truth << "query_id,lat,lon\n";

  std::vector<ManifestRecord> manifest;
  char idbuf[32];
  char numbuf[64];
  size_t global = 0;
  for (size_t c = 0; c < cfg.n_clusters; ++c) {
    geodesy::UnitVec3 n = geodesy::UnitVec3::from_point(centers[c]);
    Vec3 center{n.x, n.y, n.z};
    // Tangent basis at the center.
    Vec3 ref = std::abs(center.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    Vec3 t1 = normalized(cross(center, ref));
    Vec3 t2 = cross(center, t1);
    for (size_t s = 0; s < cfg.samples_per_cluster; ++s, ++global) {
      double a = rng.normal() * sigma_rad;
      double b = rng.normal() * sigma_rad;
      Vec3 dir = normalized({center.x + a * t1.x + b * t2.x, center.y + a * t1.y + b * t2.y,
                             center.z + a * t1.z + b * t2.z});
      geodesy::GeoPoint loc = geodesy::UnitVec3{dir.x, dir.y, dir.z}.to_point();

      autodiff::Tensor<float> rgb(cfg.rgb_rows, cfg.d_kv);
      for (size_t r = 0; r < cfg.rgb_rows; ++r) {
        for (size_t j = 0; j < cfg.d_kv; ++j) {
          double base = w_map.at(j, 0) * dir.x + w_map.at(j, 1) * dir.y + w_map.at(j, 2) * dir.z;
          rgb.at(r, j) =
              static_cast<float>(base + sig.at(c, j) + rng.normal() * cfg.noise_sigma);
        }
      }
      fusion::SegMap seg;
      seg.h = cfg.seg_h;
      seg.w = cfg.seg_w;
      seg.classes.resize(cfg.seg_h * cfg.seg_w);
      for (size_t y = 0; y < cfg.seg_h; ++y) {
        for (size_t x = 0; x < cfg.seg_w; ++x) {
          size_t patch = (y / fusion::kPatch) * pw + (x / fusion::kPatch);
          uint8_t base = static_cast<uint8_t>(Rng::mix(c + 1, patch) % cfg.num_classes);
          seg.at(y, x) = rng.uniform() < flip_p
                             ? static_cast<uint8_t>(rng.below(cfg.num_classes))
                             : base;
        }
      }

      ManifestRecord rec;
      std::snprintf(idbuf, sizeof(idbuf), "c%03zu_s%06zu", c, global);
      rec.id = idbuf;
      rec.lat = loc.lat;
      rec.lon = loc.lon;
      rec.cluster = static_cast<int64_t>(c);
      rec.rgb_blob = {"features.bin", append_record(blob, to_record(rgb))};
      rec.rgb_rows = cfg.rgb_rows;
      rec.rgb_cols = cfg.d_kv;
      rec.seg_blob = {"features.bin", append_record(blob, to_record(seg))};
      rec.seg_h = cfg.seg_h;
      rec.seg_w = cfg.seg_w;
      manifest.push_back(std::move(rec));

      std::snprintf(numbuf, sizeof(numbuf), "%s,%.10f,%.10f\n", idbuf, loc.lat, loc.lon);
      truth << numbuf;
    }
  }
  blob.close();
  truth.close();

  std::vector<std::pair<std::string, double>> fractions = {
      {"train", 1.0 - cfg.holdout_fraction}, {"query", cfg.holdout_fraction}};
  split_dataset(manifest, fractions, Rng::mix(cfg.seed, 0x686f6c64ULL));
  write_manifest(paths.manifest, manifest);
  return paths;
}

}  // namespace geosurge::datakit
