#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoflow/kfold.hpp"
#include "echoflow/matrix.hpp"
#include "echoflow/rng.hpp"

namespace echoflow {

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t epochs = 300;
    double l2_lambda = 1e-4;
    std::size_t batch_size = 0;  // 0: full batch up to 4096 rows, then 4096
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (l2_lambda < 0) throw std::invalid_argument("l2_lambda must be non-negative");
    }
};

namespace detail {

inline void softmax_inplace(std::span<double> logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (auto& z : logits) {
        z = std::exp(z - m);
        sum += z;
    }
    for (auto& z : logits) z /= sum;
}

}  // namespace detail

// L2-regularized multinomial cross-entropy over already-scaled features.
// `weights` is C x (D+1) row-major with the bias in the last column; the bias
// is not penalized. Exposed so tests can finite-difference it directly.
inline double softmax_loss(const Matrix& x, const std::vector<int>& y,
                           const Matrix& weights, double l2_lambda) {
    std::size_t n = x.rows, d = x.cols, c = weights.rows;
    double loss = 0;
    std::vector<double> logits(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            double z = weights.at(k, d);
            for (std::size_t j = 0; j < d; ++j) z += weights.at(k, j) * x.at(i, j);
            logits[k] = z;
        }
        double m = *std::max_element(logits.begin(), logits.end());
        double lse = 0;
        for (double z : logits) lse += std::exp(z - m);
        lse = m + std::log(lse);
        loss += lse - logits[static_cast<std::size_t>(y[i])];
    }
    loss /= static_cast<double>(n);
    double reg = 0;
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < d; ++j) reg += weights.at(k, j) * weights.at(k, j);
    return loss + 0.5 * l2_lambda * reg;
}

// Analytic gradient of softmax_loss, same shape as `weights`.
inline Matrix softmax_gradient(const Matrix& x, const std::vector<int>& y,
                               const Matrix& weights, double l2_lambda) {
    std::size_t n = x.rows, d = x.cols, c = weights.rows;
    Matrix grad(c, d + 1);
    std::vector<double> p(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            double z = weights.at(k, d);
            for (std::size_t j = 0; j < d; ++j) z += weights.at(k, j) * x.at(i, j);
            p[k] = z;
        }
        detail::softmax_inplace(p);
        p[static_cast<std::size_t>(y[i])] -= 1.0;
        for (std::size_t k = 0; k < c; ++k) {
            for (std::size_t j = 0; j < d; ++j) grad.at(k, j) += p[k] * x.at(i, j);
            grad.at(k, d) += p[k];
        }
    }
    for (auto& g : grad.v) g /= static_cast<double>(n);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < d; ++j) grad.at(k, j) += l2_lambda * weights.at(k, j);
    return grad;
}

/// Multiclass softmax (logistic regression) model with a per-feature z-score
/// scaler fitted on the training fold.
struct SoftmaxModel {
    std::vector<std::string> classes;
    Matrix weights;                  // C x (D+1), bias last
    std::vector<double> scaler_mean;
    std::vector<double> scaler_std;  // 1.0 where training variance was zero

    std::size_t n_classes() const { return classes.size(); }
    std::size_t dim() const { return scaler_mean.size(); }

    std::vector<double> scale(std::span<const double> x) const {
        std::vector<double> s(x.size());
        for (std::size_t j = 0; j < x.size(); ++j)
            s[j] = (x[j] - scaler_mean[j]) / scaler_std[j];
        return s;
    }

    std::vector<double> predict_proba(std::span<const double> x) const {
        if (x.size() != dim()) throw std::invalid_argument("feature dimension mismatch");
        auto s = scale(x);
        std::vector<double> u(n_classes());
        for (std::size_t k = 0; k < n_classes(); ++k) {
            double z = weights.at(k, dim());
            for (std::size_t j = 0; j < dim(); ++j) z += weights.at(k, j) * s[j];
            u[k] = z;
        }
        detail::softmax_inplace(u);
        return u;
    }

    // (argmax class index, confidence beta = max probability); ties take the
    // lowest class index.
    std::pair<std::size_t, double> predict_with_confidence(std::span<const double> x) const {
        auto u = predict_proba(x);
        std::size_t best = 0;
        for (std::size_t k = 1; k < u.size(); ++k)
            if (u[k] > u[best]) best = k;
        return {best, u[best]};
    }

    nlohmann::json to_json() const {
        nlohmann::json w = nlohmann::json::array();
        for (std::size_t k = 0; k < weights.rows; ++k) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t j = 0; j < weights.cols; ++j) row.push_back(weights.at(k, j));
            w.push_back(std::move(row));
        }
        return {{"classes", classes},
                {"scaler", {{"mean", scaler_mean}, {"std", scaler_std}}},
                {"weights", std::move(w)}};
    }

    static SoftmaxModel from_json(const nlohmann::json& j) {
        SoftmaxModel m;
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.scaler_mean = j.at("scaler").at("mean").get<std::vector<double>>();
        m.scaler_std = j.at("scaler").at("std").get<std::vector<double>>();
        const auto& w = j.at("weights");
        m.weights = Matrix(w.size(), w.empty() ? 0 : w.at(0).size());
        for (std::size_t k = 0; k < m.weights.rows; ++k)
            for (std::size_t c = 0; c < m.weights.cols; ++c)
                m.weights.at(k, c) = w.at(k).at(c).get<double>();
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write model: " + path);
        out << to_json().dump(2) << "\n";
    }

    static SoftmaxModel load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open model: " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

// Mini-batch gradient descent on the regularized cross-entropy. Deterministic
// for a fixed seed. `loss_history` (optional) records the full-data loss after
// every epoch.
inline SoftmaxModel train(const Matrix& features, const std::vector<int>& labels,
                          const std::vector<std::string>& classes, const TrainConfig& cfg,
                          std::vector<double>* loss_history = nullptr) {
    cfg.validate();
    if (features.rows != labels.size())
        throw std::invalid_argument("feature/label row count mismatch");
    if (features.rows == 0) throw std::invalid_argument("empty training set");
    for (double v : features.v)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
    std::set<int> present(labels.begin(), labels.end());
    if (present.size() < 2) throw std::invalid_argument("training needs at least two classes");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes.size())
            throw std::invalid_argument("label index out of range");

    std::size_t n = features.rows, d = features.cols, c = classes.size();

    SoftmaxModel model;
    model.classes = classes;
    model.scaler_mean.assign(d, 0.0);
    model.scaler_std.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < n; ++i) mean += features.at(i, j);
        mean /= static_cast<double>(n);
        double var = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double dlt = features.at(i, j) - mean;
            var += dlt * dlt;
        }
        var /= static_cast<double>(n);
        if (var > 0) {
            model.scaler_mean[j] = mean;
            model.scaler_std[j] = std::sqrt(var);
        }
        // zero-variance features pass through unscaled
    }

    Matrix xs(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            xs.at(i, j) = (features.at(i, j) - model.scaler_mean[j]) / model.scaler_std[j];

    std::size_t batch = cfg.batch_size ? cfg.batch_size : (n <= 4096 ? n : 4096);
    batch = std::min(batch, n);

    model.weights = Matrix(c, d + 1);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    Matrix bx;
    std::vector<int> by;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n) std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            std::size_t len = std::min(batch, n - start);
            const Matrix* px = &xs;
            const std::vector<int>* py = &labels;
            if (len < n) {
                bx = Matrix(len, d);
                by.resize(len);
                for (std::size_t i = 0; i < len; ++i) {
                    std::size_t src = order[start + i];
                    std::copy(xs.row(src).begin(), xs.row(src).end(), bx.row(i).begin());
                    by[i] = labels[src];
                }
                px = &bx;
                py = &by;
            }
            Matrix grad = softmax_gradient(*px, *py, model.weights, cfg.l2_lambda);
            for (std::size_t i = 0; i < grad.v.size(); ++i)
                model.weights.v[i] -= cfg.learning_rate * grad.v[i];
        }
        if (loss_history)
            loss_history->push_back(softmax_loss(xs, labels, model.weights, cfg.l2_lambda));
    }
    return model;
}

inline double accuracy_on(const SoftmaxModel& model, const Matrix& features,
                          const std::vector<int>& labels,
                          const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    std::size_t hits = 0;
    for (auto r : rows) {
        auto [pred, conf] = model.predict_with_confidence(features.row(r));
        (void)conf;
        if (static_cast<int>(pred) == labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

struct EvalReport {
    double accuracy = 0;             // mean over folds
    double std_dev = 0;              // population std over fold accuracies
    std::vector<double> per_fold;
    Matrix confusion;                // row-normalized, rows = true class

    nlohmann::json to_json() const {
        nlohmann::json conf = nlohmann::json::array();
        for (std::size_t r = 0; r < confusion.rows; ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < confusion.cols; ++c) row.push_back(confusion.at(r, c));
            conf.push_back(std::move(row));
        }
        return {{"accuracy", accuracy},
                {"std", std_dev},
                {"per_fold", per_fold},
                {"confusion", std::move(conf)}};
    }
};

// Stratified k-fold evaluation; the scaler and weights are refit per fold and
// the confusion matrix pools all held-out predictions.
inline EvalReport kfold_evaluate(const Matrix& features, const std::vector<int>& labels,
                                 const std::vector<std::string>& classes, std::size_t k,
                                 const TrainConfig& cfg) {
    auto folds = stratified_kfold(labels, k, cfg.seed);
    std::size_t c = classes.size();
    Matrix counts(c, c);
    EvalReport report;

    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& fold = folds[f];
        Matrix train_x(fold.train.size(), features.cols);
        std::vector<int> train_y(fold.train.size());
        for (std::size_t i = 0; i < fold.train.size(); ++i) {
            std::copy(features.row(fold.train[i]).begin(), features.row(fold.train[i]).end(),
                      train_x.row(i).begin());
            train_y[i] = labels[fold.train[i]];
        }
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = detail::mix_seed(cfg.seed, f);
        auto model = train(train_x, train_y, classes, fold_cfg);

        std::size_t hits = 0;
        for (auto r : fold.test) {
            auto [pred, conf] = model.predict_with_confidence(features.row(r));
            (void)conf;
            counts.at(static_cast<std::size_t>(labels[r]), pred) += 1.0;
            if (static_cast<int>(pred) == labels[r]) ++hits;
        }
        report.per_fold.push_back(static_cast<double>(hits) /
                                  static_cast<double>(fold.test.size()));
    }

    double mean = 0;
    for (double a : report.per_fold) mean += a;
    mean /= static_cast<double>(report.per_fold.size());
    double var = 0;
    for (double a : report.per_fold) var += (a - mean) * (a - mean);
    report.accuracy = mean;
    report.std_dev = std::sqrt(var / static_cast<double>(report.per_fold.size()));

    report.confusion = Matrix(c, c);
    for (std::size_t r = 0; r < c; ++r) {
        double row_sum = 0;
        for (std::size_t j = 0; j < c; ++j) row_sum += counts.at(r, j);
        if (row_sum > 0)
            for (std::size_t j = 0; j < c; ++j)
                report.confusion.at(r, j) = counts.at(r, j) / row_sum;
    }
    return report;
}

}  // namespace echoflow
