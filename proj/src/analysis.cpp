#include "safemon/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace safemon::cart {

RegressionTree::RegressionTree(std::vector<Node> nodes, TreeParams params, std::size_t features)
    : nodes_(std::move(nodes)), params_(params), features_(features) {}

int RegressionTree::leaf_of(std::span<const double> x) const {
    require(!nodes_.empty(), "tree is not fitted");
    require(x.size() == features_, "feature vector has the wrong length");
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].leaf()) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return i;
}

double RegressionTree::predict(std::span<const double> x) const {
    return nodes_[static_cast<std::size_t>(leaf_of(x))].value;
}

Vector RegressionTree::predict(const Matrix& X) const {
    Vector out(X.rows());
    std::vector<double> row(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
        out(i) = predict(row);
    }
    return out;
}

int RegressionTree::depth() const {
    int d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
}

std::size_t RegressionTree::leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.leaf(); }));
}

namespace {

struct Builder {
    const Matrix& X;
    const Vector& y;
    TreeParams p;
    std::vector<Node> nodes;

    int build(std::vector<Eigen::Index>& idx, int depth) {
        const auto n = idx.size();
        double sum = 0.0;
        for (auto i : idx) sum += y(i);
        const int self = static_cast<int>(nodes.size());
        Node node;
        node.value = sum / static_cast<double>(n);
        node.samples = n;
        node.depth = depth;
        nodes.push_back(node);

        const auto min_leaf = static_cast<std::size_t>(p.min_samples_leaf);
        if (depth >= p.max_depth || n < 2 * min_leaf) return self;
        double sq = 0.0;
        for (auto i : idx) sq += y(i) * y(i);
        const double sse_parent = sq - sum * sum / static_cast<double>(n);
        if (sse_parent <= 1e-14 * std::max(1.0, sq)) return self;

        int best_f = -1;
        double best_thr = 0.0;
        double best_gain = 0.0;
        std::vector<Eigen::Index> order = idx;
        for (Eigen::Index f = 0; f < X.cols(); ++f) {
            std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
                return X(a, f) < X(b, f) || (X(a, f) == X(b, f) && a < b);
            });
            double ls = 0.0, lq = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const double v = y(order[i]);
                ls += v;
                lq += v * v;
                const std::size_t nl = i + 1, nr = n - nl;
                const double a = X(order[i], f), b = X(order[i + 1], f);
                if (a == b || nl < min_leaf || nr < min_leaf) continue;
                const double rs = sum - ls, rq = sq - lq;
                const double sse = (lq - ls * ls / static_cast<double>(nl)) + (rq - rs * rs / static_cast<double>(nr));
                const double gain = sse_parent - sse;
                if (gain > best_gain + 1e-12 * std::max(1.0, sse_parent)) {
                    best_gain = gain;
                    best_f = static_cast<int>(f);
                    best_thr = 0.5 * (a + b);
                }
            }
        }
        if (best_f < 0) return self;

        std::vector<Eigen::Index> left, right;
        for (auto i : idx) (X(i, best_f) <= best_thr ? left : right).push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        nodes[static_cast<std::size_t>(self)].feature = best_f;
        nodes[static_cast<std::size_t>(self)].threshold = best_thr;
        const int l = build(left, depth + 1);
        nodes[static_cast<std::size_t>(self)].left = l;
        const int r = build(right, depth + 1);
        nodes[static_cast<std::size_t>(self)].right = r;
        return self;
    }
};

} // namespace

RegressionTree fit_cart(const Matrix& X, const Vector& y, const TreeParams& params) {
    require(params.max_depth >= 0, "max_depth must be >= 0");
    require(params.min_samples_leaf >= 1, "min_samples_leaf must be >= 1");
    require(X.rows() == y.size(), "features and targets differ in length");
    require(X.rows() >= 2 * params.min_samples_leaf,
            fmt::format("need at least {} rows for min_samples_leaf={}", 2 * params.min_samples_leaf,
                        params.min_samples_leaf));
    require(X.allFinite() && y.allFinite(), "non-finite features or targets");
    Builder b{X, y, params, {}};
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(X.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    b.build(idx, 0);
    return RegressionTree(std::move(b.nodes), params, static_cast<std::size_t>(X.cols()));
}

double mse(const Vector& y, const Vector& pred) {
    require(y.size() == pred.size() && y.size() > 0, "mse: size mismatch");
    return (y - pred).squaredNorm() / static_cast<double>(y.size());
}

double r_squared(const Vector& y, const Vector& pred) {
    require(y.size() == pred.size() && y.size() > 0, "r_squared: size mismatch");
    const double sse = (y - pred).squaredNorm();
    const double sst = (y.array() - y.mean()).matrix().squaredNorm();
    if (sst <= 0.0) return sse <= 0.0 ? 1.0 : 0.0;
    return 1.0 - sse / sst;
}

std::vector<TreeParams> default_tree_grid() {
    std::vector<TreeParams> g;
    for (int d : {1, 2, 3, 4, 5, 6})
        for (int m : {1, 2, 5, 10, 20}) g.push_back({d, m});
    return g;
}

CvResult cross_validate(const Matrix& X, const Vector& y, const std::vector<TreeParams>& grid, int k,
                        std::uint64_t seed) {
    require(k >= 2, "k must be >= 2");
    require(X.rows() >= k, fmt::format("k = {} exceeds the {} rows", k, X.rows()));
    require(!grid.empty(), "empty tree grid");
    const auto n = static_cast<std::size_t>(X.rows());
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

    CvResult res;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : grid) {
        double total = 0.0;
        int used = 0;
        for (int f = 0; f < k; ++f) {
            std::vector<Eigen::Index> tr, te;
            for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? te : tr).push_back(static_cast<Eigen::Index>(i));
            if (tr.size() < 2 * static_cast<std::size_t>(p.min_samples_leaf)) continue;
            const Matrix Xtr = X(tr, Eigen::all);
            const Vector ytr = y(tr);
            const auto tree = fit_cart(Xtr, ytr, p);
            const Matrix Xte = X(te, Eigen::all);
            total += mse(y(te), tree.predict(Xte));
            ++used;
        }
        const double m = used > 0 ? total / used : std::numeric_limits<double>::infinity();
        res.table.push_back({p, m});
        if (m < best) {
            best = m;
            res.best = p;
        }
    }
    require(std::isfinite(best), "no tree configuration could be cross-validated");
    res.cv_mse = best;
    res.tree = fit_cart(X, y, res.best);
    res.r2 = r_squared(y, res.tree.predict(X));
    return res;
}

bool Rule::matches(std::span<const double> x) const {
    for (const auto& b : bounds) {
        const double v = x[static_cast<std::size_t>(b.feature)];
        if (!(v > b.lo && v <= b.hi)) return false;
    }
    return true;
}

std::string Rule::render(const std::vector<std::string>& names) const {
    std::string lhs;
    for (const auto& b : bounds) {
        const std::string name = static_cast<std::size_t>(b.feature) < names.size()
                                     ? names[static_cast<std::size_t>(b.feature)]
                                     : fmt::format("x{}", b.feature);
        std::string term;
        if (std::isinf(b.lo)) term = fmt::format("{} <= {:.4g}", name, b.hi);
        else if (std::isinf(b.hi)) term = fmt::format("{} > {:.4g}", name, b.lo);
        else term = fmt::format("{} in ({:.4g}, {:.4g}]", name, b.lo, b.hi);
        lhs += lhs.empty() ? term : " and " + term;
    }
    if (lhs.empty()) lhs = "always";
    return fmt::format("if {} then F3 = {:.4f} (n={})", lhs, value, samples);
}

std::vector<Rule> extract_rules(const RegressionTree& tree) {
    std::vector<Rule> out;
    const auto& nodes = tree.nodes();
    require(!nodes.empty(), "tree is not fitted");
    std::vector<Bound> box(tree.features());
    for (std::size_t f = 0; f < box.size(); ++f) box[f].feature = static_cast<int>(f);
    auto walk = [&](auto&& self, int i, std::vector<Bound> b) -> void {
        const Node& n = nodes[static_cast<std::size_t>(i)];
        if (n.leaf()) {
            Rule r;
            for (const auto& bd : b)
                if (!std::isinf(bd.lo) || !std::isinf(bd.hi)) r.bounds.push_back(bd);
            r.value = n.value;
            r.samples = n.samples;
            out.push_back(std::move(r));
            return;
        }
        auto l = b;
        auto& lb = l[static_cast<std::size_t>(n.feature)];
        lb.hi = std::min(lb.hi, n.threshold);
        self(self, n.left, std::move(l));
        auto& rb = b[static_cast<std::size_t>(n.feature)];
        rb.lo = std::max(rb.lo, n.threshold);
        self(self, n.right, std::move(b));
    };
    walk(walk, 0, box);
    return out;
}

void write_rules_json(const std::vector<Rule>& rules, const std::vector<std::string>& names,
                      std::ostream& out) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rules) {
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& b : r.bounds) {
            nlohmann::json p;
            p["feature"] = static_cast<std::size_t>(b.feature) < names.size()
                               ? names[static_cast<std::size_t>(b.feature)]
                               : fmt::format("x{}", b.feature);
            p["lo"] = std::isinf(b.lo) ? nlohmann::json(nullptr) : nlohmann::json(b.lo);
            p["hi"] = std::isinf(b.hi) ? nlohmann::json(nullptr) : nlohmann::json(b.hi);
            preds.push_back(p);
        }
        j.push_back({{"predicates", preds}, {"value", r.value}, {"samples", r.samples},
                     {"text", r.render(names)}});
    }
    out << j.dump(2) << '\n';
}

} // namespace safemon::cart
