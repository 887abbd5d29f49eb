#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace stragglers {

enum class Split { train, test };
enum class Source { mnist, kmnist, fashion, cifar10 };

std::string to_string(Split s);
std::string to_string(Source s);
Source source_from_string(const std::string& s);

/// Images straight from the distribution files: intensities in [0,1],
/// original 10-way class ids, and the position of each row in its split.
struct RawDataset {
  Eigen::MatrixXd images;               // N x P, one column per example
  std::vector<int> class_ids;           // P values in 0..9
  std::vector<std::int64_t> source_index;  // position in the original split
  Split split = Split::train;
  Source source = Source::mnist;

  std::int64_t count() const { return images.cols(); }
  std::int64_t dim() const { return images.rows(); }
};

/// Standardized inputs with binary parity labels.
struct Dataset {
  Eigen::MatrixXd inputs;               // N x P, one column per example
  Eigen::VectorXi labels;               // P values in {-1,+1}
  std::vector<int> class_ids;           // original 10-way ids
  std::vector<std::int64_t> source_index;
  Split split = Split::train;
  Source source = Source::mnist;

  std::int64_t count() const { return inputs.cols(); }
  std::int64_t dim() const { return inputs.rows(); }
  bool empty() const { return inputs.cols() == 0; }
};

/// Sorted set of source_index values.
class IndexSet {
 public:
  IndexSet() = default;
  explicit IndexSet(std::vector<std::int64_t> members);

  bool contains(std::int64_t idx) const;
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  const std::vector<std::int64_t>& members() const { return members_; }

  static std::size_t intersection_size(const IndexSet& a, const IndexSet& b);
  static IndexSet set_union(const IndexSet& a, const IndexSet& b);

 private:
  std::vector<std::int64_t> members_;  // sorted, unique
};

}  // namespace stragglers
