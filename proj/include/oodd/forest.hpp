#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "oodd/errors.hpp"
#include "oodd/rng.hpp"
#include "oodd/tensor.hpp"

namespace oodd {

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(const double* x) const {
        int i = 0;
        while (nodes[i].feature >= 0) {
            i = x[nodes[i].feature] < nodes[i].threshold ? nodes[i].left : nodes[i].right;
        }
        return nodes[i].value;
    }
};

struct ForestConfig {
    int n_trees = 50;
    int max_depth = 12;
    int min_leaf = 5;
    bool bootstrap = true;
    int mtry = 0;            // 0 → round(sqrt(input dim))
    int sample_cap = 20000;  // training pairs per tree
    uint64_t seed = 0;

    bool operator==(const ForestConfig&) const = default;
};

namespace detail {

struct TreeBuilder {
    const Tensor2& x; // n × p
    const std::vector<double>& y;
    const ForestConfig& cfg;
    Rng& rng;
    int mtry;
    std::vector<TreeNode> nodes;
    std::vector<int> feature_pool;       // scratch for feature subsampling
    std::vector<std::pair<double, double>> sorted; // scratch (value, target)

    TreeBuilder(const Tensor2& x_, const std::vector<double>& y_, const ForestConfig& cfg_,
                Rng& rng_)
        : x(x_), y(y_), cfg(cfg_), rng(rng_) {
        mtry = cfg.mtry > 0 ? cfg.mtry
                            : std::max(1, static_cast<int>(std::lround(std::sqrt(
                                              static_cast<double>(x.cols)))));
        feature_pool.resize(x.cols);
        std::iota(feature_pool.begin(), feature_pool.end(), 0);
    }

    int build(std::vector<int>& idx, int lo, int hi, int depth) {
        const int n = hi - lo;
        double sum = 0.0, sumsq = 0.0;
        for (int i = lo; i < hi; ++i) {
            sum += y[idx[i]];
            sumsq += y[idx[i]] * y[idx[i]];
        }
        const double mean = sum / n;
        const double sse = sumsq - sum * mean;

        auto make_leaf = [&]() {
            nodes.push_back(TreeNode{-1, 0.0, -1, -1, mean});
            return static_cast<int>(nodes.size()) - 1;
        };
        if (depth >= cfg.max_depth || n < 2 * cfg.min_leaf || sse <= 1e-12) return make_leaf();

        // Random feature subset: partial Fisher-Yates over the feature pool.
        for (int k = 0; k < mtry; ++k) {
            const int j = k + static_cast<int>(rng.uniform_int(
                                  static_cast<uint64_t>(feature_pool.size() - k)));
            std::swap(feature_pool[k], feature_pool[j]);
        }

        int best_feature = -1;
        double best_threshold = 0.0, best_gain = 0.0;
        for (int k = 0; k < mtry; ++k) {
            const int f = feature_pool[k];
            sorted.clear();
            for (int i = lo; i < hi; ++i) sorted.emplace_back(x.at(idx[i], f), y[idx[i]]);
            std::sort(sorted.begin(), sorted.end());
            double lsum = 0.0, lsumsq = 0.0;
            for (int i = 0; i + 1 < n; ++i) {
                lsum += sorted[i].second;
                lsumsq += sorted[i].second * sorted[i].second;
                const int nl = i + 1, nr = n - nl;
                if (nl < cfg.min_leaf || nr < cfg.min_leaf) continue;
                if (sorted[i].first == sorted[i + 1].first) continue; // no strict threshold here
                const double rsum = sum - lsum, rsumsq = sumsq - lsumsq;
                const double child_sse =
                    (lsumsq - lsum * lsum / nl) + (rsumsq - rsum * rsum / nr);
                const double gain = sse - child_sse;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = 0.5 * (sorted[i].first + sorted[i + 1].first);
                }
            }
        }
        // Degenerate split (no variance reduction available): fall back to a leaf.
        if (best_feature < 0) return make_leaf();

        const int mid = static_cast<int>(
            std::partition(idx.begin() + lo, idx.begin() + hi,
                           [&](int i) { return x.at(i, best_feature) < best_threshold; }) -
            idx.begin());
        if (mid == lo || mid == hi) return make_leaf();

        const int node = static_cast<int>(nodes.size());
        nodes.push_back(TreeNode{best_feature, best_threshold, -1, -1, 0.0});
        nodes[node].left = build(idx, lo, mid, depth + 1);
        nodes[node].right = build(idx, mid, hi, depth + 1);
        return node;
    }
};

}  // namespace detail

/// Fits one CART regression tree on (x rows, y) with the given sample indices.
inline RegressionTree fit_tree(const Tensor2& x, const std::vector<double>& y,
                               std::vector<int> idx, const ForestConfig& cfg, Rng& rng) {
    if (x.rows != static_cast<int>(y.size())) throw ShapeMismatch("fit_tree: x rows vs y");
    if (idx.empty()) throw EmptyDataset("fit_tree: no samples");
    detail::TreeBuilder b(x, y, cfg, rng);
    b.build(idx, 0, static_cast<int>(idx.size()), 0); // root is pushed first, so it is node 0
    return RegressionTree{std::move(b.nodes)};
}

/// Per-target random forest: mean of n_trees CART regressors, each fit on a
/// bootstrap resample with random feature subsets per split.
struct Forest {
    std::vector<RegressionTree> trees;

    double predict(const double* x) const {
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(x);
        return s / static_cast<double>(trees.size());
    }
};

inline Forest fit_forest(const Tensor2& x, const std::vector<double>& y,
                         const ForestConfig& cfg) {
    Forest forest;
    const int n = x.rows;
    const int boot = std::min(cfg.sample_cap > 0 ? cfg.sample_cap : n, n);
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(mix_seed(cfg.seed, 0xF0u, static_cast<uint64_t>(t)));
        std::vector<int> idx;
        idx.reserve(boot);
        if (cfg.bootstrap) {
            for (int i = 0; i < boot; ++i) {
                idx.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n))));
            }
        } else {
            idx.resize(n);
            std::iota(idx.begin(), idx.end(), 0);
        }
        forest.trees.push_back(fit_tree(x, y, std::move(idx), cfg, rng));
    }
    return forest;
}

}  // namespace oodd
