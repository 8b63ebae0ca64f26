#pragma once

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "sleepstack/rng.hpp"

namespace sleepstack::baseline {

struct EmptyClass : DataError {
  explicit EmptyClass(const std::string& m) : DataError(m) {}
};

struct TreeConfig {
  int max_depth = 12;
  int min_leaf = 5;
};

// Binary CART node; leaves carry a class, internal nodes route on
// x[feature] < threshold to the left child.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf_class = -1;

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
public:
  std::vector<TreeNode> nodes;

  int predict(const std::vector<double>& x) const {
    int at = 0;
    while (!nodes[at].is_leaf()) {
      const auto& n = nodes[at];
      at = x[n.feature] < n.threshold ? n.left : n.right;
    }
    return nodes[at].leaf_class;
  }

  nlohmann::json to_json() const { return node_json(0); }

  static DecisionTree from_json(const nlohmann::json& j) {
    DecisionTree t;
    t.parse_node(j);
    return t;
  }

private:
  nlohmann::json node_json(int at) const {
    const auto& n = nodes[at];
    if (n.is_leaf()) return {{"leaf", n.leaf_class}};
    return {{"feature", n.feature},
            {"threshold", n.threshold},
            {"left", node_json(n.left)},
            {"right", node_json(n.right)}};
  }

  int parse_node(const nlohmann::json& j) {
    const int at = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (j.contains("leaf")) {
      nodes[at].leaf_class = j.at("leaf").get<int>();
    } else {
      nodes[at].feature = j.at("feature").get<int>();
      nodes[at].threshold = j.at("threshold").get<double>();
      const int l = parse_node(j.at("left"));
      const int r = parse_node(j.at("right"));
      nodes[at].left = l;
      nodes[at].right = r;
    }
    return at;
  }
};

namespace detail {

inline double gini(const std::vector<long long>& counts, long long n) {
  if (n == 0) return 0.0;
  double g = 1.0;
  for (long long c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    g -= p * p;
  }
  return g;
}

inline int majority_class(const std::vector<long long>& counts) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(counts.size()); ++c)
    if (counts[c] > counts[best]) best = c;  // ties keep the lowest index
  return best;
}

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // weighted child Gini
};

// Exhaustive greedy search: every feature, thresholds at midpoints of
// consecutive distinct sorted values; the lowest weighted Gini wins, with
// ties resolved toward the lower feature index and lower threshold.
inline SplitChoice best_split(const std::vector<std::vector<double>>& X,
                              const std::vector<int>& y,
                              const std::vector<int>& idx, int num_classes,
                              int min_leaf) {
  SplitChoice best;
  const int n = static_cast<int>(idx.size());
  const int n_features = static_cast<int>(X[idx[0]].size());
  std::vector<int> order(idx);
  for (int f = 0; f < n_features; ++f) {
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (X[a][f] != X[b][f]) return X[a][f] < X[b][f];
      return a < b;
    });
    std::vector<long long> left(num_classes, 0), right(num_classes, 0);
    for (int i : order) right[y[i]]++;
    for (int k = 0; k + 1 < n; ++k) {
      const int i = order[k];
      left[y[i]]++;
      right[y[i]]--;
      if (X[order[k]][f] == X[order[k + 1]][f]) continue;
      const long long nl = k + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double score = (static_cast<double>(nl) * gini(left, nl) +
                            static_cast<double>(nr) * gini(right, nr)) /
                           static_cast<double>(n);
      if (!best.found || score < best.score) {
        best.found = true;
        best.feature = f;
        best.threshold = 0.5 * (X[order[k]][f] + X[order[k + 1]][f]);
        best.score = score;
      }
    }
  }
  return best;
}

}  // namespace detail

// Greedy CART with Gini impurity. Stops at max depth, the min-leaf floor, or
// purity; rows with identical features but mixed labels become a forced
// majority leaf.
inline DecisionTree train_tree(const std::vector<std::vector<double>>& X,
                               const std::vector<int>& y, int num_classes,
                               const TreeConfig& cfg = {}) {
  if (X.size() != y.size() || X.empty()) throw UsageError("train_tree: bad inputs");
  DecisionTree tree;

  struct Job {
    std::vector<int> idx;
    int depth;
    int slot;
  };
  std::vector<Job> stack;
  std::vector<int> all(X.size());
  std::iota(all.begin(), all.end(), 0);
  tree.nodes.emplace_back();
  stack.push_back({std::move(all), 0, 0});

  while (!stack.empty()) {
    Job job = std::move(stack.back());
    stack.pop_back();
    std::vector<long long> counts(num_classes, 0);
    for (int i : job.idx) counts.at(y[i])++;
    auto& node = tree.nodes[job.slot];

    const bool pure =
        *std::max_element(counts.begin(), counts.end()) ==
        static_cast<long long>(job.idx.size());
    detail::SplitChoice split;
    if (!pure && job.depth < cfg.max_depth &&
        static_cast<int>(job.idx.size()) >= 2 * cfg.min_leaf) {
      split = detail::best_split(X, y, job.idx, num_classes, cfg.min_leaf);
    }
    if (!split.found) {
      node.leaf_class = detail::majority_class(counts);
      continue;
    }
    std::vector<int> li, ri;
    for (int i : job.idx) {
      (X[i][split.feature] < split.threshold ? li : ri).push_back(i);
    }
    const int l = static_cast<int>(tree.nodes.size());
    const int r = l + 1;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();  // may reallocate; re-index the parent below
    tree.nodes[job.slot].feature = split.feature;
    tree.nodes[job.slot].threshold = split.threshold;
    tree.nodes[job.slot].left = l;
    tree.nodes[job.slot].right = r;
    stack.push_back({std::move(ri), job.depth + 1, r});
    stack.push_back({std::move(li), job.depth + 1, l});
  }
  return tree;
}

class BaggingEnsemble {
public:
  int num_classes = 0;
  std::vector<DecisionTree> trees;
  // bootstrap descriptor: per tree, how many rows of each class its bag drew
  std::vector<std::vector<long long>> bag_class_counts;

  int predict(const std::vector<double>& x) const {
    std::vector<int> votes(num_classes, 0);
    for (const auto& t : trees) votes.at(t.predict(x))++;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (votes[c] > votes[best]) best = c;  // ties go to the lowest class
    return best;
  }

  nlohmann::json to_json() const {
    nlohmann::json trees_json = nlohmann::json::array();
    for (const auto& t : trees) trees_json.push_back(t.to_json());
    return {{"num_classes", num_classes},
            {"bag_class_counts", bag_class_counts},
            {"trees", trees_json}};
  }

  static BaggingEnsemble from_json(const nlohmann::json& j) {
    BaggingEnsemble e;
    e.num_classes = j.at("num_classes").get<int>();
    e.bag_class_counts =
        j.value("bag_class_counts", std::vector<std::vector<long long>>{});
    for (const auto& t : j.at("trees")) e.trees.push_back(DecisionTree::from_json(t));
    return e;
  }
};

// Balanced bagging: each bag draws n_min rows with replacement from every
// class (n_min = the smallest class count), so every tree trains on equal
// per-class counts regardless of the input imbalance.
inline BaggingEnsemble balanced_bagging_train(const std::vector<std::vector<double>>& X,
                                              const std::vector<int>& y,
                                              int num_classes, Rng& rng,
                                              int n_trees = 71,
                                              const TreeConfig& cfg = {}) {
  std::vector<std::vector<int>> by_class(num_classes);
  for (size_t i = 0; i < y.size(); ++i) by_class.at(y[i]).push_back(static_cast<int>(i));
  size_t n_min = SIZE_MAX;
  for (int c = 0; c < num_classes; ++c) {
    if (by_class[c].empty())
      throw EmptyClass("class " + std::to_string(c) + " has no rows");
    n_min = std::min(n_min, by_class[c].size());
  }

  BaggingEnsemble ens;
  ens.num_classes = num_classes;
  for (int t = 0; t < n_trees; ++t) {
    std::vector<std::vector<double>> bx;
    std::vector<int> by;
    std::vector<long long> bag(num_classes, 0);
    bx.reserve(n_min * num_classes);
    for (int c = 0; c < num_classes; ++c) {
      for (size_t k = 0; k < n_min; ++k) {
        const int i = by_class[c][rng.uniform_u64(by_class[c].size())];
        bx.push_back(X[i]);
        by.push_back(c);
        bag[c]++;
      }
    }
    ens.bag_class_counts.push_back(std::move(bag));
    ens.trees.push_back(train_tree(bx, by, num_classes, cfg));
  }
  return ens;
}

}  // namespace sleepstack::baseline
