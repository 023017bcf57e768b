#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mmal {

// One pool entry: two modality feature vectors plus a question-type tag. The
// ground-truth label is held by the Dataset, not here, so ordinary code never
// sees it; see Dataset::label.
struct PoolItem {
  int id = 0;
  Eigen::VectorXd features_a;
  Eigen::VectorXd features_b;
  std::string type;
};

// Immutable after construction. Labels live in a private store and every read
// through label() is counted per item, which lets the answer oracle audit that
// nothing besides an explicit query touched a hidden label.
class Dataset {
 public:
  Dataset(int dim_a, int dim_b, int num_classes, std::vector<std::string> type_set,
          std::vector<PoolItem> items, std::vector<int> labels);

  int size() const { return static_cast<int>(items_.size()); }
  int dim_a() const { return dim_a_; }
  int dim_b() const { return dim_b_; }
  int num_classes() const { return num_classes_; }
  const std::vector<std::string>& type_set() const { return type_set_; }

  const PoolItem& item(int id) const;
  const std::string& type_tag(int id) const { return item(id).type; }

  // Modality-A features with modality-B appended, the classifier input.
  Eigen::VectorXd fused_features(int id) const;

  // Fused features for several items, one column per id.
  Eigen::MatrixXd fused_features(std::span<const int> ids) const;

  // Ground-truth label in 1..J. Counted; the oracle treats reads of pool or
  // test-domain labels outside its own query path as violations.
  int label(int id) const;
  std::uint64_t label_reads(int id) const;

 private:
  int dim_a_;
  int dim_b_;
  int num_classes_;
  std::vector<std::string> type_set_;
  std::vector<PoolItem> items_;
  std::vector<int> labels_;
  mutable std::vector<std::uint64_t> label_read_counts_;

  friend void save_dataset(const Dataset& ds, const std::string& path);
};

struct SynthConfig {
  int n_items = 1000;
  int dim_a = 4;
  int dim_b = 4;
  int num_classes = 3;
  // Proportions must sum to 1. Type "binary" restricts labels to {1, 2}; any
  // other type uses the full label range.
  std::vector<std::pair<std::string, double>> type_mix = {{"binary", 0.5}, {"open", 0.5}};
  double label_noise = 0.0;      // per-item flip probability, flips stay in the type's label range
  double cluster_spread = 0.35;  // within-cluster feature stddev
  double centroid_scale = 2.0;   // scale of the per-class cluster centers
  std::uint64_t seed = 1;
};

// Per-class Gaussian clusters in the fused feature space, split back into the
// two modalities. Binary items draw their labels (and clusters) from {1, 2},
// so both types share those clusters and inform each other.
Dataset generate_synthetic(const SynthConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& path);

// Rejects malformed rows, dimension drift and out-of-range labels, naming the
// offending line. save/load round-trips bit-exactly.
Dataset load_dataset(const std::string& path);

struct DatasetSplit {
  std::vector<int> initial_train;
  std::vector<int> pool;
  std::vector<int> test_domain;  // unlabeled to the learner
  std::vector<int> eval_ids;     // labeled, accuracy reporting only
  std::string target_type;       // non-empty when test/eval are type-filtered
  std::string warning;           // e.g. the pool came out empty
};

void validate(const Dataset& ds, const DatasetSplit& split);

// Seeded disjoint split. With a target type, test-domain and evaluation ids
// all carry that type while train and pool stay unfiltered.
DatasetSplit make_split(const Dataset& ds, int n_train, int t_test, int n_eval,
                        const std::string& target_type, std::uint64_t seed);

// The restricted-pool baseline: pool cut down to the target type, everything
// else untouched. Idempotent; rejects a filter that empties the pool.
DatasetSplit cheat_filter(const Dataset& ds, const DatasetSplit& split, const std::string& target_type);

}  // namespace mmal
