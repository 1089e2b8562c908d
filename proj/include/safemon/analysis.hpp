#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "safemon/core.hpp"

namespace safemon::cart {

struct TreeParams {
    int max_depth = 3;
    int min_samples_leaf = 1;

    friend bool operator==(const TreeParams&, const TreeParams&) = default;
};

/// Internal nodes send x[feature] <= threshold left.
struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    std::size_t samples = 0;
    int depth = 0;

    bool leaf() const { return feature < 0; }
};

class RegressionTree {
public:
    RegressionTree() = default;
    RegressionTree(std::vector<Node> nodes, TreeParams params, std::size_t features);

    double predict(std::span<const double> x) const;
    Vector predict(const Matrix& X) const;
    /// Node index of the leaf reached by x.
    int leaf_of(std::span<const double> x) const;

    const std::vector<Node>& nodes() const { return nodes_; }
    const TreeParams& params() const { return params_; }
    std::size_t features() const { return features_; }
    int depth() const;
    std::size_t leaves() const;

private:
    std::vector<Node> nodes_;
    TreeParams params_;
    std::size_t features_ = 0;
};

/// Greedy squared-error CART; split candidates are midpoints between
/// consecutive distinct values; ties go to the lower feature index, then the
/// lower threshold.
RegressionTree fit_cart(const Matrix& X, const Vector& y, const TreeParams& params);

double mse(const Vector& y, const Vector& pred);
/// 1 - SSE / SST (0 when the target is constant and the fit is imperfect).
double r_squared(const Vector& y, const Vector& pred);

std::vector<TreeParams> default_tree_grid();

struct CvEntry {
    TreeParams params;
    double mean_mse = 0.0;
};

struct CvResult {
    RegressionTree tree;
    TreeParams best;
    double cv_mse = 0.0;
    double r2 = 0.0;
    std::vector<CvEntry> table;
};

/// k-fold CV over `grid` with seeded fold assignment; the lowest mean fold
/// MSE wins (earlier grid entry on ties) and is refit on all rows.
CvResult cross_validate(const Matrix& X, const Vector& y, const std::vector<TreeParams>& grid,
                        int k = 10, std::uint64_t seed = 1);

/// Half-open interval (lo, hi] on one feature.
struct Bound {
    int feature = 0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

struct Rule {
    std::vector<Bound> bounds; // ordered by feature, one per constrained feature
    double value = 0.0;
    std::size_t samples = 0;

    bool matches(std::span<const double> x) const;
    std::string render(const std::vector<std::string>& names) const;
};

/// One rule per leaf, left-to-right.
std::vector<Rule> extract_rules(const RegressionTree& tree);

void write_rules_json(const std::vector<Rule>& rules, const std::vector<std::string>& names,
                      std::ostream& out);

} // namespace safemon::cart
