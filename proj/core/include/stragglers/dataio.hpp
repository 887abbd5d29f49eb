#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stragglers/dataset.hpp"

namespace stragglers {

struct IdxMagicError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IdxTruncatedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IdxDimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RecordSizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One IDX file: big-endian header (magic, dimension sizes) + ubyte payload.
struct IdxFile {
  std::uint32_t magic = 0;                 // 0x803 images, 0x801 labels
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;          // row-major, dims product bytes
};

IdxFile parse_idx(const std::vector<std::uint8_t>& bytes);
IdxFile load_idx(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_idx(const IdxFile& idx);

/// Pair an images file with a labels file from one of the MNIST-family sets.
RawDataset load_mnist_family(const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path,
                             Source source, Split split);

/// CIFAR-10 binary batches (3073-byte records); channels averaged to grey.
RawDataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths, Split split);

/// Convenience: locate the standard file names for a source under `dir`.
RawDataset load_raw(Source source, Split split, const std::filesystem::path& dir);

int binarize_parity(int class_id);

/// Per-pixel zero-mean unit-variance transform; statistics are taken over
/// the rows of `raw` itself. Zero-variance pixels map to 0.
Dataset standardize(const RawDataset& raw);
Dataset standardize(const RawDataset& raw, const std::vector<std::int64_t>& subset_indices);

/// Contiguous chunk [chunk*count, (chunk+1)*count) in source order.
RawDataset subsample(const RawDataset& raw, std::int64_t count, std::int64_t chunk = 0);

/// Each label independently resampled uniform on {-1,+1}; inputs untouched.
Dataset randomize_labels(const Dataset& ds, std::uint64_t seed);

/// Add iid N(0, sigma^2) noise to every input entry.
Dataset add_noise(const Dataset& ds, double sigma, std::uint64_t seed);

/// Remove the examples whose source_index is in `removed`, keeping order.
Dataset prune(const Dataset& ds, const IndexSet& removed);

/// Versioned flat binary dump so experiments can skip re-parsing.
void write_dataset_cache(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_cache(const std::filesystem::path& path);

/// FNV-1a digest of the standardized content; recorded in run manifests.
std::string dataset_digest(const Dataset& ds);

}  // namespace stragglers
