#include "stragglers/dataio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "stragglers/digest.hpp"
#include "stragglers/rng.hpp"

namespace stragglers {

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(Source s) {
  switch (s) {
    case Source::mnist: return "mnist";
    case Source::kmnist: return "kmnist";
    case Source::fashion: return "fashion";
    case Source::cifar10: return "cifar10";
  }
  return "?";
}

Source source_from_string(const std::string& s) {
  if (s == "mnist") return Source::mnist;
  if (s == "kmnist") return Source::kmnist;
  if (s == "fashion") return Source::fashion;
  if (s == "cifar10") return Source::cifar10;
  throw std::invalid_argument("unknown dataset source: " + s);
}

IndexSet::IndexSet(std::vector<std::int64_t> members) : members_(std::move(members)) {
  std::sort(members_.begin(), members_.end());
  members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
}

bool IndexSet::contains(std::int64_t idx) const {
  return std::binary_search(members_.begin(), members_.end(), idx);
}

std::size_t IndexSet::intersection_size(const IndexSet& a, const IndexSet& b) {
  std::size_t n = 0;
  auto ia = a.members_.begin();
  auto ib = b.members_.begin();
  while (ia != a.members_.end() && ib != b.members_.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

IndexSet IndexSet::set_union(const IndexSet& a, const IndexSet& b) {
  std::vector<std::int64_t> merged;
  merged.reserve(a.size() + b.size());
  std::set_union(a.members_.begin(), a.members_.end(), b.members_.begin(), b.members_.end(),
                 std::back_inserter(merged));
  return IndexSet(std::move(merged));
}

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

IdxFile parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw IdxMagicError("IDX: file shorter than magic");
  const std::uint32_t magic = read_be32(bytes.data());
  // magic layout: 0x00 0x00 <type> <ndims>; only ubyte (0x08) payloads here
  if ((magic & 0xFFFF0000u) != 0 || ((magic >> 8) & 0xFFu) != 0x08u)
    throw IdxMagicError("IDX: bad magic " + std::to_string(magic));
  const std::uint32_t ndims = magic & 0xFFu;
  if (ndims == 0) throw IdxMagicError("IDX: zero-dimensional header");
  if (bytes.size() < 4 + 4ull * ndims) throw IdxTruncatedError("IDX: truncated dimension header");

  IdxFile idx;
  idx.magic = magic;
  idx.dims.resize(ndims);
  std::uint64_t total = 1;
  for (std::uint32_t d = 0; d < ndims; ++d) {
    idx.dims[d] = read_be32(bytes.data() + 4 + 4 * d);
    if (idx.dims[d] != 0 && total > std::numeric_limits<std::uint64_t>::max() / idx.dims[d])
      throw IdxDimensionError("IDX: dimension product overflows");
    total *= idx.dims[d];
  }
  if (total > (1ull << 33))
    throw IdxDimensionError("IDX: payload implausibly large (" + std::to_string(total) + " bytes)");
  const std::uint64_t have = bytes.size() - 4 - 4ull * ndims;
  if (have < total) throw IdxTruncatedError("IDX: truncated payload");
  idx.data.assign(bytes.begin() + 4 + 4 * ndims, bytes.begin() + 4 + 4 * ndims + total);
  return idx;
}

IdxFile load_idx(const std::filesystem::path& path) { return parse_idx(read_file(path)); }

std::vector<std::uint8_t> serialize_idx(const IdxFile& idx) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * idx.dims.size() + idx.data.size());
  write_be32(out, idx.magic);
  for (auto d : idx.dims) write_be32(out, d);
  out.insert(out.end(), idx.data.begin(), idx.data.end());
  return out;
}

RawDataset load_mnist_family(const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path, Source source,
                             Split split) {
  const IdxFile images = load_idx(images_path);
  const IdxFile labels = load_idx(labels_path);
  if (images.dims.size() != 3)
    throw IdxDimensionError("images file must be 3-dimensional, got " +
                            std::to_string(images.dims.size()));
  if (labels.dims.size() != 1)
    throw IdxDimensionError("labels file must be 1-dimensional, got " +
                            std::to_string(labels.dims.size()));
  const std::int64_t p = images.dims[0];
  const std::int64_t n = std::int64_t(images.dims[1]) * images.dims[2];
  if (std::int64_t(labels.dims[0]) != p)
    throw IdxDimensionError("image/label count mismatch");

  RawDataset raw;
  raw.source = source;
  raw.split = split;
  raw.images.resize(n, p);
  for (std::int64_t mu = 0; mu < p; ++mu)
    for (std::int64_t i = 0; i < n; ++i)
      raw.images(i, mu) = double(images.data[std::size_t(mu * n + i)]) / 255.0;
  raw.class_ids.resize(std::size_t(p));
  raw.source_index.resize(std::size_t(p));
  for (std::int64_t mu = 0; mu < p; ++mu) {
    const int cls = labels.data[std::size_t(mu)];
    if (cls > 9) throw IdxDimensionError("class id out of 0..9: " + std::to_string(cls));
    raw.class_ids[std::size_t(mu)] = cls;
    raw.source_index[std::size_t(mu)] = mu;
  }
  return raw;
}

RawDataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths, Split split) {
  constexpr std::int64_t kRecord = 3073;  // 1 label byte + 3x1024 pixel bytes
  constexpr std::int64_t kPlane = 1024;
  RawDataset raw;
  raw.source = Source::cifar10;
  raw.split = split;

  std::vector<std::vector<std::uint8_t>> files;
  std::int64_t total = 0;
  for (const auto& path : batch_paths) {
    files.push_back(read_file(path));
    if (files.back().size() % kRecord != 0)
      throw RecordSizeError("CIFAR-10 batch size " + std::to_string(files.back().size()) +
                            " is not a multiple of 3073: " + path.string());
    total += std::int64_t(files.back().size()) / kRecord;
  }

  raw.images.resize(kPlane, total);
  raw.class_ids.resize(std::size_t(total));
  raw.source_index.resize(std::size_t(total));
  std::int64_t mu = 0;
  for (const auto& bytes : files) {
    const std::int64_t records = std::int64_t(bytes.size()) / kRecord;
    for (std::int64_t r = 0; r < records; ++r, ++mu) {
      const std::uint8_t* rec = bytes.data() + r * kRecord;
      const int cls = rec[0];
      if (cls > 9) throw RecordSizeError("CIFAR-10 class id out of range: " + std::to_string(cls));
      raw.class_ids[std::size_t(mu)] = cls;
      raw.source_index[std::size_t(mu)] = mu;
      for (std::int64_t i = 0; i < kPlane; ++i) {
        const double grey =
            (double(rec[1 + i]) + double(rec[1 + kPlane + i]) + double(rec[1 + 2 * kPlane + i])) /
            (3.0 * 255.0);
        raw.images(i, mu) = grey;
      }
    }
  }
  return raw;
}

RawDataset load_raw(Source source, Split split, const std::filesystem::path& dir) {
  if (source == Source::cifar10) {
    std::vector<std::filesystem::path> paths;
    if (split == Split::train) {
      for (int b = 1; b <= 5; ++b) paths.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    } else {
      paths.push_back(dir / "test_batch.bin");
    }
    return load_cifar10(paths, split);
  }
  const std::string stem = split == Split::train ? "train" : "t10k";
  return load_mnist_family(dir / (stem + "-images-idx3-ubyte"), dir / (stem + "-labels-idx1-ubyte"),
                           source, split);
}

int binarize_parity(int class_id) {
  if (class_id < 0 || class_id > 9)
    throw std::out_of_range("class id out of 0..9: " + std::to_string(class_id));
  return class_id % 2 == 0 ? +1 : -1;
}

namespace {

Dataset standardize_rows(const RawDataset& raw, const std::vector<std::int64_t>& rows) {
  const std::int64_t p = std::int64_t(rows.size());
  if (p < 2) throw std::invalid_argument("standardize needs at least 2 examples");
  const std::int64_t n = raw.dim();

  Dataset ds;
  ds.split = raw.split;
  ds.source = raw.source;
  ds.inputs.resize(n, p);
  for (std::int64_t c = 0; c < p; ++c) ds.inputs.col(c) = raw.images.col(rows[std::size_t(c)]);

  // Population moments per pixel, over the set being standardized.
  for (std::int64_t i = 0; i < n; ++i) {
    const double mean = ds.inputs.row(i).mean();
    const double mean_sq = ds.inputs.row(i).array().square().mean();
    const double var = mean_sq - mean * mean;
    if (var > 0.0) {
      ds.inputs.row(i) = (ds.inputs.row(i).array() - mean) / std::sqrt(var);
    } else {
      ds.inputs.row(i).setZero();
    }
  }

  ds.labels.resize(p);
  ds.class_ids.resize(std::size_t(p));
  ds.source_index.resize(std::size_t(p));
  for (std::int64_t c = 0; c < p; ++c) {
    const int cls = raw.class_ids[std::size_t(rows[std::size_t(c)])];
    ds.labels[c] = binarize_parity(cls);
    ds.class_ids[std::size_t(c)] = cls;
    ds.source_index[std::size_t(c)] = raw.source_index[std::size_t(rows[std::size_t(c)])];
  }
  return ds;
}

}  // namespace

Dataset standardize(const RawDataset& raw) {
  std::vector<std::int64_t> rows(std::size_t(raw.count()));
  for (std::int64_t i = 0; i < raw.count(); ++i) rows[std::size_t(i)] = i;
  return standardize_rows(raw, rows);
}

Dataset standardize(const RawDataset& raw, const std::vector<std::int64_t>& subset_indices) {
  for (auto r : subset_indices)
    if (r < 0 || r >= raw.count())
      throw std::out_of_range("subset index out of range: " + std::to_string(r));
  return standardize_rows(raw, subset_indices);
}

RawDataset subsample(const RawDataset& raw, std::int64_t count, std::int64_t chunk) {
  if (count <= 0 || chunk < 0) throw std::invalid_argument("subsample: count/chunk must be positive");
  const std::int64_t lo = chunk * count;
  const std::int64_t hi = (chunk + 1) * count;
  if (hi > raw.count())
    throw std::out_of_range("subsample range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                            ") exceeds source size " + std::to_string(raw.count()));
  RawDataset out;
  out.split = raw.split;
  out.source = raw.source;
  out.images = raw.images.middleCols(lo, count);
  out.class_ids.assign(raw.class_ids.begin() + lo, raw.class_ids.begin() + hi);
  out.source_index.assign(raw.source_index.begin() + lo, raw.source_index.begin() + hi);
  return out;
}

Dataset randomize_labels(const Dataset& ds, std::uint64_t seed) {
  Dataset out = ds;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < out.labels.size(); ++i) out.labels[i] = rng.sign();
  return out;
}

Dataset add_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  Dataset out = ds;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (Eigen::Index c = 0; c < out.inputs.cols(); ++c)
    for (Eigen::Index i = 0; i < out.inputs.rows(); ++i) out.inputs(i, c) += sigma * rng.normal();
  return out;
}

Dataset prune(const Dataset& ds, const IndexSet& removed) {
  std::unordered_set<std::int64_t> present(ds.source_index.begin(), ds.source_index.end());
  for (auto idx : removed.members())
    if (!present.count(idx))
      throw std::out_of_range("prune: index " + std::to_string(idx) + " not in dataset");

  std::vector<std::int64_t> keep;
  keep.reserve(ds.source_index.size());
  for (std::int64_t c = 0; c < ds.count(); ++c)
    if (!removed.contains(ds.source_index[std::size_t(c)])) keep.push_back(c);

  Dataset out;
  out.split = ds.split;
  out.source = ds.source;
  const std::int64_t p = std::int64_t(keep.size());
  out.inputs.resize(ds.dim(), p);
  out.labels.resize(p);
  out.class_ids.resize(std::size_t(p));
  out.source_index.resize(std::size_t(p));
  for (std::int64_t c = 0; c < p; ++c) {
    out.inputs.col(c) = ds.inputs.col(keep[std::size_t(c)]);
    out.labels[c] = ds.labels[keep[std::size_t(c)]];
    out.class_ids[std::size_t(c)] = ds.class_ids[std::size_t(keep[std::size_t(c)])];
    out.source_index[std::size_t(c)] = ds.source_index[std::size_t(keep[std::size_t(c)])];
  }
  return out;
}

namespace {

constexpr char kCacheMagic[] = "STRGLAB.DSCACHE.v1\n";

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("dataset cache: truncated");
  return v;
}

}  // namespace

void write_dataset_cache(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCacheMagic, sizeof(kCacheMagic) - 1);
  put(out, std::int64_t(ds.count()));
  put(out, std::int64_t(ds.dim()));
  put(out, std::uint8_t(ds.source));
  put(out, std::uint8_t(ds.split));
  for (auto v : ds.source_index) put(out, v);
  for (Eigen::Index i = 0; i < ds.labels.size(); ++i) put(out, std::int8_t(ds.labels[i]));
  for (auto v : ds.class_ids) put(out, std::int32_t(v));
  out.write(reinterpret_cast<const char*>(ds.inputs.data()),
            std::streamsize(sizeof(double)) * ds.inputs.size());
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset read_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kCacheMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0)
    throw std::runtime_error("dataset cache: bad header in " + path.string());
  Dataset ds;
  const std::int64_t p = get<std::int64_t>(in);
  const std::int64_t n = get<std::int64_t>(in);
  ds.source = Source(get<std::uint8_t>(in));
  ds.split = Split(get<std::uint8_t>(in));
  ds.source_index.resize(std::size_t(p));
  for (auto& v : ds.source_index) v = get<std::int64_t>(in);
  ds.labels.resize(p);
  for (std::int64_t i = 0; i < p; ++i) ds.labels[i] = get<std::int8_t>(in);
  ds.class_ids.resize(std::size_t(p));
  for (auto& v : ds.class_ids) v = get<std::int32_t>(in);
  ds.inputs.resize(n, p);
  in.read(reinterpret_cast<char*>(ds.inputs.data()), std::streamsize(sizeof(double)) * n * p);
  if (!in) throw std::runtime_error("dataset cache: truncated inputs in " + path.string());
  return ds;
}

std::string dataset_digest(const Dataset& ds) {
  std::string bytes;
  auto mix = [&bytes](const void* data, std::size_t len) {
    bytes.append(static_cast<const char*>(data), len);
  };
  const std::int64_t p = ds.count(), n = ds.dim();
  mix(&p, sizeof(p));
  mix(&n, sizeof(n));
  mix(ds.inputs.data(), sizeof(double) * std::size_t(ds.inputs.size()));
  mix(ds.labels.data(), sizeof(int) * std::size_t(ds.labels.size()));
  mix(ds.source_index.data(), sizeof(std::int64_t) * ds.source_index.size());
  return fnv1a_hex(bytes.data(), bytes.size());
}

}  // namespace stragglers
