#include <algorithm>
#include <cmath>
#include <numeric>

#include "convotd/downstream.hpp"

namespace convotd {

ClassificationMetrics classification_metrics(const std::vector<int>& gold, const std::vector<int>& predicted,
                                             int n_classes) {
    if (gold.size() != predicted.size()) throw InputError("gold and predicted lengths differ");
    if (gold.empty()) throw InputError("no items to score");
    if (n_classes < 1) throw InputError("n_classes must be positive");
    ClassificationMetrics m;
    m.confusion = Eigen::MatrixXi::Zero(n_classes, n_classes);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 0 || gold[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
            throw InputError("class id out of range");
        ++m.confusion(gold[i], predicted[i]);
    }
    m.accuracy = static_cast<double>(m.confusion.trace()) / static_cast<double>(gold.size());
    m.per_class_f1.assign(static_cast<std::size_t>(n_classes), 0.0);
    for (int k = 0; k < n_classes; ++k) {
        double tp = m.confusion(k, k);
        double pred = m.confusion.col(k).sum();
        double actual = m.confusion.row(k).sum();
        if (tp > 0) m.per_class_f1[static_cast<std::size_t>(k)] = 2 * tp / (pred + actual);
    }
    m.macro_f1 = std::accumulate(m.per_class_f1.begin(), m.per_class_f1.end(), 0.0) / n_classes;
    return m;
}

namespace {

double row_dot(const SparseRows& x, Eigen::Index r, const Vec& w) {
    double s = w(w.size() - 1);  // bias feature
    for (SparseRows::InnerIterator it(x, r); it; ++it) s += it.value() * w(it.col());
    return s;
}

void row_axpy(const SparseRows& x, Eigen::Index r, double a, Vec& w) {
    for (SparseRows::InnerIterator it(x, r); it; ++it) w(it.col()) += a * it.value();
    w(w.size() - 1) += a;
}

}  // namespace

void LinearSvm::fit(const SparseRows& x, const std::vector<int>& labels, int n_classes, std::uint64_t seed,
                    const SvmOptions& opt) {
    const Eigen::Index n = x.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw InputError("feature rows and labels differ in count");
    if (n == 0) throw InputError("no training rows");
    if (opt.c <= 0) throw InputError("SVM C must be positive");
    const Eigen::Index dim = x.cols() + 1;
    w_ = Mat::Zero(n_classes, dim);

    Vec qdiag(n);
    for (Eigen::Index i = 0; i < n; ++i) qdiag(i) = x.row(i).squaredNorm() + 1.0;

    for (int k = 0; k < n_classes; ++k) {
        Vec w = Vec::Zero(dim);
        Vec alpha = Vec::Zero(n);
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_rng(seed, "svm", static_cast<std::uint64_t>(k));
        for (int iter = 0; iter < opt.max_iterations; ++iter) {
            std::shuffle(order.begin(), order.end(), rng);
            double pg_max = -std::numeric_limits<double>::infinity();
            double pg_min = std::numeric_limits<double>::infinity();
            for (Eigen::Index i : order) {
                const double y = labels[static_cast<std::size_t>(i)] == k ? 1.0 : -1.0;
                const double g = y * row_dot(x, i, w) - 1.0;
                double pg = g;
                if (alpha(i) == 0) pg = std::min(g, 0.0);
                else if (alpha(i) == opt.c) pg = std::max(g, 0.0);
                pg_max = std::max(pg_max, pg);
                pg_min = std::min(pg_min, pg);
                if (pg == 0) continue;
                const double old = alpha(i);
                alpha(i) = std::clamp(old - g / qdiag(i), 0.0, opt.c);
                row_axpy(x, i, (alpha(i) - old) * y, w);
            }
            if (pg_max - pg_min < opt.tolerance) break;
        }
        w_.row(k) = w.transpose();
    }
}

Vec LinearSvm::scores(const SparseRows& x, Eigen::Index r) const {
    Vec s(w_.rows());
    for (Eigen::Index k = 0; k < w_.rows(); ++k) s(k) = row_dot(x, r, w_.row(k).transpose());
    return s;
}

std::vector<int> LinearSvm::predict(const SparseRows& x) const {
    if (x.cols() + 1 != w_.cols()) throw InputError("feature width differs from the trained classifier");
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) out[static_cast<std::size_t>(r)] = static_cast<int>(argmax(scores(x, r)));
    return out;
}

HoldoutSplit holdout_split(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw InputError("need at least two items for a held-out split");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(seed, "holdout");
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) / 10.0)));
    HoldoutSplit s;
    s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

namespace {

SparseRows select_rows(const SparseRows& x, const std::vector<std::size_t>& rows) {
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (SparseRows::InnerIterator it(x, static_cast<Eigen::Index>(rows[r])); it; ++it)
            trips.emplace_back(static_cast<int>(r), static_cast<int>(it.col()), it.value());
    SparseRows out(static_cast<Eigen::Index>(rows.size()), x.cols());
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

}  // namespace

ClassifierReport train_classifier(const SparseRows& features, const std::vector<int>& labels, int n_classes,
                                  std::uint64_t seed, const SvmOptions& options) {
    if (static_cast<std::size_t>(features.rows()) != labels.size())
        throw InputError("feature rows and labels differ in count");
    std::set<int> present(labels.begin(), labels.end());
    if (present.size() < 2) throw InputError("single-class input: a classifier needs at least two classes");
    auto split = holdout_split(labels.size(), seed);
    std::vector<int> y_train, y_test;
    for (auto i : split.train) y_train.push_back(labels[i]);
    for (auto i : split.test) y_test.push_back(labels[i]);
    LinearSvm svm;
    svm.fit(select_rows(features, split.train), y_train, n_classes, seed, options);
    ClassifierReport r;
    r.metrics = classification_metrics(y_test, svm.predict(select_rows(features, split.test)), n_classes);
    r.n_train = split.train.size();
    r.n_test = split.test.size();
    return r;
}

}  // namespace convotd
