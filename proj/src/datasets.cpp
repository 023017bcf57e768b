#include "mmal/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "mmal/rng.hpp"

namespace mmal {

namespace {

constexpr char kDatasetMagic[] = "mmal-dataset 1";

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void fail_line(const std::string& path, int line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

int type_index(const std::vector<std::string>& type_set, const std::string& tag) {
  for (std::size_t i = 0; i < type_set.size(); ++i) {
    if (type_set[i] == tag) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

Dataset::Dataset(int dim_a, int dim_b, int num_classes, std::vector<std::string> type_set,
                 std::vector<PoolItem> items, std::vector<int> labels)
    : dim_a_(dim_a),
      dim_b_(dim_b),
      num_classes_(num_classes),
      type_set_(std::move(type_set)),
      items_(std::move(items)),
      labels_(std::move(labels)) {
  if (dim_a_ < 1 || dim_b_ < 1) throw std::invalid_argument("feature dims must be >= 1");
  if (num_classes_ < 2) throw std::invalid_argument("need at least 2 classes");
  if (type_set_.empty()) throw std::invalid_argument("empty type set");
  if (std::set<std::string>(type_set_.begin(), type_set_.end()).size() != type_set_.size()) {
    throw std::invalid_argument("duplicate type tags");
  }
  if (items_.size() != labels_.size()) throw std::invalid_argument("items/labels size mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const PoolItem& it = items_[i];
    if (it.id != static_cast<int>(i)) throw std::invalid_argument("item ids must be 0..n-1 in order");
    if (it.features_a.size() != dim_a_ || it.features_b.size() != dim_b_) {
      throw std::invalid_argument("item " + std::to_string(it.id) + ": feature dimension drift");
    }
    if (type_index(type_set_, it.type) < 0) {
      throw std::invalid_argument("item " + std::to_string(it.id) + ": unknown type '" + it.type + "'");
    }
    if (labels_[i] < 1 || labels_[i] > num_classes_) {
      throw std::invalid_argument("item " + std::to_string(it.id) + ": label out of range");
    }
  }
  label_read_counts_.assign(items_.size(), 0);
}

const PoolItem& Dataset::item(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("item id out of range: " + std::to_string(id));
  return items_[static_cast<std::size_t>(id)];
}

Eigen::VectorXd Dataset::fused_features(int id) const {
  const PoolItem& it = item(id);
  Eigen::VectorXd x(dim_a_ + dim_b_);
  x.head(dim_a_) = it.features_a;
  x.tail(dim_b_) = it.features_b;
  return x;
}

Eigen::MatrixXd Dataset::fused_features(std::span<const int> ids) const {
  Eigen::MatrixXd x(dim_a_ + dim_b_, static_cast<long>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) x.col(static_cast<long>(i)) = fused_features(ids[i]);
  return x;
}

int Dataset::label(int id) const {
  const PoolItem& it = item(id);  // range check
  ++label_read_counts_[static_cast<std::size_t>(it.id)];
  return labels_[static_cast<std::size_t>(it.id)];
}

std::uint64_t Dataset::label_reads(int id) const {
  item(id);
  return label_read_counts_[static_cast<std::size_t>(id)];
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_items < 1) throw std::invalid_argument("n_items must be >= 1");
  if (cfg.dim_a < 1 || cfg.dim_b < 1) throw std::invalid_argument("feature dims must be >= 1");
  if (cfg.num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (cfg.type_mix.empty()) throw std::invalid_argument("empty type mix");
  if (cfg.label_noise < 0.0 || cfg.label_noise >= 1.0) throw std::invalid_argument("label_noise must be in [0, 1)");
  if (cfg.cluster_spread <= 0.0) throw std::invalid_argument("cluster_spread must be positive");
  double total = 0.0;
  std::vector<std::string> type_set;
  for (const auto& [tag, prop] : cfg.type_mix) {
    if (tag.empty()) throw std::invalid_argument("empty type tag");
    if (prop < 0.0) throw std::invalid_argument("negative type proportion");
    if (type_index(type_set, tag) >= 0) throw std::invalid_argument("duplicate type tag '" + tag + "'");
    type_set.push_back(tag);
    total += prop;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("type proportions must sum to 1");

  const int j = cfg.num_classes;
  const int dim = cfg.dim_a + cfg.dim_b;
  Rng rng(cfg.seed);

  Eigen::MatrixXd centroids(dim, j);
  for (int c = 0; c < j; ++c) {
    for (int d = 0; d < dim; ++d) centroids(d, c) = cfg.centroid_scale * rng.normal();
  }

  std::vector<PoolItem> items;
  std::vector<int> labels;
  items.reserve(cfg.n_items);
  labels.reserve(cfg.n_items);
  for (int i = 0; i < cfg.n_items; ++i) {
    const double u = rng.uniform01();
    double cum = 0.0;
    std::string tag = cfg.type_mix.back().first;
    for (const auto& [t, prop] : cfg.type_mix) {
      cum += prop;
      if (u < cum) {
        tag = t;
        break;
      }
    }
    const bool binary = tag == "binary";
    const int range = binary ? 2 : j;
    int label = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(range)));

    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) x(d) = centroids(d, label - 1) + cfg.cluster_spread * rng.normal();

    if (cfg.label_noise > 0.0 && rng.uniform01() < cfg.label_noise && range > 1) {
      // flip to a different label inside the type's range; features keep the
      // clean cluster so noise is genuine label noise
      const int shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(range - 1)));
      label = 1 + (label - 1 + shift) % range;
    }

    PoolItem it;
    it.id = i;
    it.features_a = x.head(cfg.dim_a);
    it.features_b = x.tail(cfg.dim_b);
    it.type = tag;
    items.push_back(std::move(it));
    labels.push_back(label);
  }
  return Dataset(cfg.dim_a, cfg.dim_b, j, std::move(type_set), std::move(items), std::move(labels));
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << kDatasetMagic << "\n";
  out << "dims " << ds.dim_a_ << " " << ds.dim_b_ << "\n";
  out << "classes " << ds.num_classes_ << "\n";
  out << "types " << ds.type_set_.size();
  for (const auto& t : ds.type_set_) out << " " << t;
  out << "\n";
  out << "items " << ds.items_.size() << "\n";
  for (std::size_t i = 0; i < ds.items_.size(); ++i) {
    const PoolItem& it = ds.items_[i];
    out << it.id << " " << it.type << " " << ds.labels_[i];
    for (long d = 0; d < it.features_a.size(); ++d) out << " " << fmt17(it.features_a(d));
    for (long d = 0; d < it.features_b.size(); ++d) out << " " << fmt17(it.features_b(d));
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  int line_no = 0;

  auto next_line = [&]() {
    if (!std::getline(in, line)) fail_line(path, line_no + 1, "unexpected end of file");
    ++line_no;
  };

  next_line();
  if (line != kDatasetMagic) fail_line(path, line_no, "bad magic, expected '" + std::string(kDatasetMagic) + "'");

  int dim_a = 0, dim_b = 0, num_classes = 0;
  {
    next_line();
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key >> dim_a >> dim_b) || key != "dims" || dim_a < 1 || dim_b < 1) {
      fail_line(path, line_no, "expected 'dims <a> <b>'");
    }
  }
  {
    next_line();
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key >> num_classes) || key != "classes" || num_classes < 2) {
      fail_line(path, line_no, "expected 'classes <J>'");
    }
  }
  std::vector<std::string> type_set;
  {
    next_line();
    std::istringstream ss(line);
    std::string key;
    int count = 0;
    if (!(ss >> key >> count) || key != "types" || count < 1) fail_line(path, line_no, "expected 'types <k> ...'");
    for (int i = 0; i < count; ++i) {
      std::string tag;
      if (!(ss >> tag)) fail_line(path, line_no, "expected " + std::to_string(count) + " type tags");
      type_set.push_back(tag);
    }
  }
  int n_items = 0;
  {
    next_line();
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key >> n_items) || key != "items" || n_items < 1) fail_line(path, line_no, "expected 'items <n>'");
  }

  std::vector<PoolItem> items;
  std::vector<int> labels;
  items.reserve(n_items);
  labels.reserve(n_items);
  for (int i = 0; i < n_items; ++i) {
    next_line();
    std::istringstream ss(line);
    PoolItem it;
    int label = 0;
    if (!(ss >> it.id >> it.type >> label)) fail_line(path, line_no, "malformed record");
    if (it.id != i) fail_line(path, line_no, "expected id " + std::to_string(i));
    if (type_index(type_set, it.type) < 0) fail_line(path, line_no, "unknown type '" + it.type + "'");
    if (label < 1 || label > num_classes) fail_line(path, line_no, "label out of range: " + std::to_string(label));
    it.features_a.resize(dim_a);
    it.features_b.resize(dim_b);
    for (int d = 0; d < dim_a; ++d) {
      if (!(ss >> it.features_a(d))) fail_line(path, line_no, "expected " + std::to_string(dim_a + dim_b) + " floats");
    }
    for (int d = 0; d < dim_b; ++d) {
      if (!(ss >> it.features_b(d))) fail_line(path, line_no, "expected " + std::to_string(dim_a + dim_b) + " floats");
    }
    std::string extra;
    if (ss >> extra) fail_line(path, line_no, "trailing tokens: '" + extra + "'");
    items.push_back(std::move(it));
    labels.push_back(label);
  }
  return Dataset(dim_a, dim_b, num_classes, std::move(type_set), std::move(items), std::move(labels));
}

void validate(const Dataset& ds, const DatasetSplit& split) {
  std::unordered_set<int> seen;
  auto check = [&](const std::vector<int>& ids, const char* name) {
    for (int id : ids) {
      if (id < 0 || id >= ds.size()) {
        throw std::invalid_argument(std::string(name) + " id out of range: " + std::to_string(id));
      }
      if (!seen.insert(id).second) {
        throw std::invalid_argument("id " + std::to_string(id) + " appears in two split sets");
      }
    }
  };
  check(split.initial_train, "initial_train");
  check(split.pool, "pool");
  check(split.test_domain, "test_domain");
  check(split.eval_ids, "eval");
  if (!split.target_type.empty()) {
    if (type_index(ds.type_set(), split.target_type) < 0) {
      throw std::invalid_argument("unknown target type '" + split.target_type + "'");
    }
    for (int id : split.test_domain) {
      if (ds.type_tag(id) != split.target_type) {
        throw std::invalid_argument("test-domain id " + std::to_string(id) + " escapes the target type");
      }
    }
    for (int id : split.eval_ids) {
      if (ds.type_tag(id) != split.target_type) {
        throw std::invalid_argument("eval id " + std::to_string(id) + " escapes the target type");
      }
    }
  }
}

DatasetSplit make_split(const Dataset& ds, int n_train, int t_test, int n_eval,
                        const std::string& target_type, std::uint64_t seed) {
  if (n_train < 1 || t_test < 1 || n_eval < 1) throw std::invalid_argument("split sizes must be >= 1");
  if (!target_type.empty() && type_index(ds.type_set(), target_type) < 0) {
    throw std::invalid_argument("unknown target type '" + target_type + "'");
  }
  if (n_train + t_test + n_eval > ds.size()) {
    throw std::invalid_argument("split sizes exceed dataset size");
  }

  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);

  DatasetSplit split;
  split.target_type = target_type;
  std::vector<char> taken(static_cast<std::size_t>(ds.size()), 0);

  auto grab = [&](int want, bool filtered, std::vector<int>& dst) {
    for (int id : order) {
      if (static_cast<int>(dst.size()) == want) break;
      if (taken[static_cast<std::size_t>(id)]) continue;
      if (filtered && ds.type_tag(id) != target_type) continue;
      taken[static_cast<std::size_t>(id)] = 1;
      dst.push_back(id);
    }
    if (static_cast<int>(dst.size()) != want) {
      throw std::invalid_argument("not enough items to fill the requested split");
    }
  };

  const bool filtered = !target_type.empty();
  grab(n_train, false, split.initial_train);
  grab(t_test, filtered, split.test_domain);
  grab(n_eval, filtered, split.eval_ids);
  for (int id : order) {
    if (!taken[static_cast<std::size_t>(id)]) split.pool.push_back(id);
  }

  std::sort(split.initial_train.begin(), split.initial_train.end());
  std::sort(split.pool.begin(), split.pool.end());
  std::sort(split.test_domain.begin(), split.test_domain.end());
  std::sort(split.eval_ids.begin(), split.eval_ids.end());
  if (split.pool.empty()) split.warning = "pool is empty: split sizes consumed the whole dataset";
  validate(ds, split);
  return split;
}

DatasetSplit cheat_filter(const Dataset& ds, const DatasetSplit& split, const std::string& target_type) {
  if (type_index(ds.type_set(), target_type) < 0) {
    throw std::invalid_argument("unknown target type '" + target_type + "'");
  }
  validate(ds, split);
  DatasetSplit out = split;
  out.pool.clear();
  for (int id : split.pool) {
    if (ds.type_tag(id) == target_type) out.pool.push_back(id);
  }
  if (out.pool.empty()) throw std::invalid_argument("filter would empty the pool");
  return out;
}

}  // namespace mmal
