/*
 * Copyright 2026 The pgekit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "pge/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include <Eigen/Dense>

#include "pge/error.hpp"
#include "pge/io.hpp"
#include "pge/train.hpp"

namespace pge {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void FeatureMatrix::validate() const {
    if (rows == 0 || cols == 0) throw InvalidArgument("feature matrix: empty");
    if (values.size() != rows * cols || labels.size() != rows) {
        throw InvalidArgument("feature matrix: storage does not match rows x cols");
    }
    if (rows < num_classes) throw InvalidArgument("feature matrix: fewer rows than classes");
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) {
        if (y >= num_classes) throw InvalidArgument("feature matrix: label out of range");
        ++counts[y];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) throw InvalidArgument("feature matrix: class " + std::to_string(c) + " has no rows");
    }
}

void PseudoLabelMatrix::validate() const {
    if (rows == 0 || cols == 0 || values.size() != rows * cols) {
        throw InvalidArgument("pseudo-label matrix: storage does not match rows x cols");
    }
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double p = at(r, c);
            if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("pseudo-label matrix: entry outside [0, 1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw InvalidArgument("pseudo-label matrix: row " + std::to_string(r) + " does not sum to 1");
        }
    }
}

PretrainedSource pretrain_source(const LabeledDataset& source, const ModelSpec& spec, const PretrainOptions& opt) {
    const ModelSpec model = spec.for_mode(LossMode::SupervisedCrossEntropy, source.num_classes);
    PretrainedSource out{init_params(model, InitSpec{InitDistribution::FanInScaledGaussian, opt.seed}), 0.0, 0};
    SgdOptions sgd;
    sgd.epochs = opt.epochs;
    sgd.batch_size = opt.batch_size;
    sgd.base_lr = opt.lr;
    sgd.seed = opt.seed;
    out.steps = train_sgd(out.state, source, sgd).steps;
    out.train_accuracy = accuracy(out.state, source);
    return out;
}

FeatureMatrix extract_features(const ModelState& source_model, const LabeledDataset& target) {
    const Tensor f = backbone_features(source_model, full_batch(target).inputs);
    FeatureMatrix out;
    out.rows = f.dim(0);
    out.cols = f.dim(1);
    out.values = f.storage();
    out.labels = target.labels;
    out.num_classes = target.num_classes;
    return out;
}

PseudoLabelMatrix pseudo_labels(const ModelState& source_model, const LabeledDataset& target) {
    const Tensor logits = head_outputs(source_model, full_batch(target).inputs);
    PseudoLabelMatrix out;
    out.rows = logits.dim(0);
    out.cols = logits.dim(1);
    out.values.resize(logits.size());
    for (std::size_t r = 0; r < out.rows; ++r) {
        double top = logits[r * out.cols];
        for (std::size_t c = 1; c < out.cols; ++c) top = std::max(top, logits[r * out.cols + c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < out.cols; ++c) {
            out.values[r * out.cols + c] = std::exp(logits[r * out.cols + c] - top);
            denom += out.values[r * out.cols + c];
        }
        for (std::size_t c = 0; c < out.cols; ++c) out.values[r * out.cols + c] /= denom;
    }
    return out;
}

std::vector<std::size_t> argmax_labels(const PseudoLabelMatrix& pseudo) {
    std::vector<std::size_t> out(pseudo.rows);
    for (std::size_t r = 0; r < pseudo.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < pseudo.cols; ++c) {
            if (pseudo.at(r, c) > pseudo.at(r, best)) best = c;
        }
        out[r] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// LEEP, NCE

double leep(const PseudoLabelMatrix& pseudo, std::span<const std::size_t> target_labels) {
    pseudo.validate();
    if (target_labels.size() != pseudo.rows) throw InvalidArgument("leep: one target label per row required");
    const std::size_t n = pseudo.rows, Z = pseudo.cols;
    const std::size_t Y = *std::max_element(target_labels.begin(), target_labels.end()) + 1;

    std::vector<double> joint(Y * Z, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t z = 0; z < Z; ++z) joint[target_labels[i] * Z + z] += pseudo.at(i, z);
    for (double& v : joint) v /= static_cast<double>(n);
    std::vector<double> marginal(Z, 0.0);
    for (std::size_t y = 0; y < Y; ++y)
        for (std::size_t z = 0; z < Z; ++z) marginal[z] += joint[y * Z + z];

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = target_labels[i];
        double p = 0.0;
        for (std::size_t z = 0; z < Z; ++z) {
            if (marginal[z] > 0.0) p += joint[y * Z + z] / marginal[z] * pseudo.at(i, z);
        }
        total += std::log(std::max(p, 1e-12));
    }
    return total / static_cast<double>(n);
}

double nce(std::span<const std::size_t> source_labels, std::span<const std::size_t> target_labels) {
    if (source_labels.empty()) throw InvalidArgument("nce: empty input");
    if (source_labels.size() != target_labels.size()) throw InvalidArgument("nce: label vectors differ in length");
    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    std::map<std::size_t, double> marginal;
    for (std::size_t i = 0; i < source_labels.size(); ++i) {
        joint[{source_labels[i], target_labels[i]}] += 1.0;
        marginal[source_labels[i]] += 1.0;
    }
    const auto n = static_cast<double>(source_labels.size());
    double score = 0.0;
    for (const auto& [key, count] : joint) score += count / n * std::log(count / marginal[key.first]);
    return score;
}

// ---------------------------------------------------------------------------
// H-score

namespace {

Matrix as_matrix(const FeatureMatrix& f) {
    return Eigen::Map<const Matrix>(f.values.data(), static_cast<Eigen::Index>(f.rows),
                                    static_cast<Eigen::Index>(f.cols));
}

}  // namespace

double hscore(const FeatureMatrix& features) {
    features.validate();
    if (features.cols > features.rows) throw InvalidArgument("hscore: needs d <= n");
    const auto n = static_cast<double>(features.rows);
    const auto d = static_cast<Eigen::Index>(features.cols);
    const Matrix F = as_matrix(features);
    const Eigen::RowVectorXd mu = F.colwise().mean();
    const Matrix centered = F.rowwise() - mu;
    Matrix cov_f = centered.transpose() * centered / n;

    Matrix class_means = Matrix::Zero(static_cast<Eigen::Index>(features.num_classes), d);
    std::vector<double> counts(features.num_classes, 0.0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        class_means.row(static_cast<Eigen::Index>(features.labels[i])) += F.row(static_cast<Eigen::Index>(i));
        counts[features.labels[i]] += 1.0;
    }
    Matrix g(static_cast<Eigen::Index>(features.rows), d);
    for (std::size_t c = 0; c < features.num_classes; ++c) class_means.row(static_cast<Eigen::Index>(c)) /= counts[c];
    for (std::size_t i = 0; i < features.rows; ++i) {
        g.row(static_cast<Eigen::Index>(i)) = class_means.row(static_cast<Eigen::Index>(features.labels[i])) - mu;
    }
    const Matrix cov_g = g.transpose() * g / n;

    const double lambda = 1e-8 * cov_f.trace() / static_cast<double>(d);
    cov_f.diagonal().array() += lambda;
    const Matrix solved = cov_f.ldlt().solve(cov_g);
    return std::max(0.0, solved.trace());
}

// ---------------------------------------------------------------------------
// LogME

namespace {

struct Spectrum {
    std::vector<double> sigma;  // squared singular values
    std::vector<double> proj2;  // (u_i . y)^2
    double residual = 0.0;      // ||y||^2 - sum proj2
    std::size_t n = 0;
    std::size_t d = 0;
};

Spectrum spectrum(const FeatureMatrix& features, std::span<const double> y) {
    if (y.size() != features.rows) throw InvalidArgument("logme: target length must equal row count");
    const Matrix F = as_matrix(features);
    Eigen::BDCSVD<Matrix> svd(F, Eigen::ComputeThinU);
    if (svd.info() != Eigen::Success) throw NumericError("logme: SVD failed");
    const Eigen::VectorXd s = svd.singularValues();
    if (s.size() == 0 || !(s(0) > 0.0) || !s.allFinite()) {
        throw NumericError("logme: degenerate feature matrix (no positive singular value)");
    }
    const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::VectorXd z = svd.matrixU().transpose() * yv;
    Spectrum sp;
    sp.n = features.rows;
    sp.d = features.cols;
    double captured = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        sp.sigma.push_back(s(i) * s(i));
        sp.proj2.push_back(z(i) * z(i));
        captured += z(i) * z(i);
    }
    sp.residual = std::max(0.0, yv.squaredNorm() - captured);
    return sp;
}

double evidence_from(const Spectrum& sp, double alpha, double beta) {
    const double t = alpha / beta;
    double m2 = 0.0, res2 = sp.residual, logdet = 0.0;
    for (std::size_t i = 0; i < sp.sigma.size(); ++i) {
        const double s = sp.sigma[i];
        m2 += s * sp.proj2[i] / ((t + s) * (t + s));
        res2 += sp.proj2[i] / ((1.0 + s / t) * (1.0 + s / t));
        logdet += std::log(alpha + beta * s);
    }
    logdet += static_cast<double>(sp.d - sp.sigma.size()) * std::log(alpha);
    const auto n = static_cast<double>(sp.n);
    const auto d = static_cast<double>(sp.d);
    const double ev = 0.5 * d * std::log(alpha) + 0.5 * n * std::log(beta) - 0.5 * alpha * m2 - 0.5 * beta * res2 -
                      0.5 * logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
    return ev / n;
}

}  // namespace

double logme_evidence(const FeatureMatrix& features, std::span<const double> y, double alpha, double beta) {
    if (!(alpha > 0.0 && beta > 0.0)) throw InvalidArgument("logme: alpha and beta must be positive");
    return evidence_from(spectrum(features, y), alpha, beta);
}

LogmeFit logme_fit(const FeatureMatrix& features, std::span<const double> y) {
    const Spectrum sp = spectrum(features, y);
    LogmeFit fit;
    fit.trace.push_back(evidence_from(sp, fit.alpha, fit.beta));
    const auto n = static_cast<double>(sp.n);
    for (std::size_t it = 0; it < 100; ++it) {
        const double t = fit.alpha / fit.beta;
        double gamma = 0.0, m2 = 0.0, res2 = sp.residual;
        for (std::size_t i = 0; i < sp.sigma.size(); ++i) {
            const double s = sp.sigma[i];
            gamma += s / (t + s);
            m2 += s * sp.proj2[i] / ((t + s) * (t + s));
            res2 += sp.proj2[i] / ((1.0 + s / t) * (1.0 + s / t));
        }
        if (!(m2 > 0.0) || !(res2 > 0.0)) break;  // exact fit or zero target: evidence is already maximal
        const double alpha = gamma / m2;
        const double beta = (n - gamma) / res2;
        if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha <= 0.0 || beta <= 0.0) {
            throw NumericError("logme: fixed-point iteration left the valid region");
        }
        const bool converged = std::abs(alpha - fit.alpha) <= 1e-6 * fit.alpha &&
                               std::abs(beta - fit.beta) <= 1e-6 * fit.beta;
        fit.alpha = alpha;
        fit.beta = beta;
        fit.iterations = it + 1;
        fit.trace.push_back(evidence_from(sp, alpha, beta));
        if (converged) break;
    }
    fit.evidence = fit.trace.back();
    return fit;
}

double logme(const FeatureMatrix& features) {
    features.validate();
    double total = 0.0;
    std::vector<double> y(features.rows);
    for (std::size_t c = 0; c < features.num_classes; ++c) {
        for (std::size_t i = 0; i < features.rows; ++i) y[i] = features.labels[i] == c ? 1.0 : 0.0;
        total += logme_fit(features, y).evidence;
    }
    return total / static_cast<double>(features.num_classes);
}

// ---------------------------------------------------------------------------
// GBC

double bhattacharyya_diagonal(std::span<const double> mean_a, std::span<const double> var_a,
                              std::span<const double> mean_b, std::span<const double> var_b) {
    double quad = 0.0, logdet = 0.0;
    for (std::size_t j = 0; j < mean_a.size(); ++j) {
        const double v = 0.5 * (var_a[j] + var_b[j]);
        const double dm = mean_a[j] - mean_b[j];
        quad += dm * dm / v;
        logdet += std::log(v) - 0.5 * (std::log(var_a[j]) + std::log(var_b[j]));
    }
    return 0.125 * quad + 0.5 * logdet;
}

double gbc(const FeatureMatrix& features) {
    features.validate();
    const std::size_t K = features.num_classes, d = features.cols;
    std::vector<std::vector<double>> means(K, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> vars(K, std::vector<double>(d, 0.0));
    std::vector<double> counts(K, 0.0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        counts[features.labels[i]] += 1.0;
        for (std::size_t j = 0; j < d; ++j) means[features.labels[i]][j] += features.at(i, j);
    }
    for (std::size_t c = 0; c < K; ++c) {
        if (counts[c] < 2.0) throw InvalidArgument("gbc: class " + std::to_string(c) + " has fewer than 2 samples");
        for (double& m : means[c]) m /= counts[c];
    }
    for (std::size_t i = 0; i < features.rows; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double z = features.at(i, j) - means[features.labels[i]][j];
            vars[features.labels[i]][j] += z * z;
        }
    for (std::size_t c = 0; c < K; ++c)
        for (double& v : vars[c]) v = std::max(v / counts[c], 1e-6);

    double score = 0.0;
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = a + 1; b < K; ++b) score -= std::exp(-bhattacharyya_diagonal(means[a], vars[a], means[b], vars[b]));
    return score;
}

// ---------------------------------------------------------------------------

std::string_view to_string(BaselineMetric metric) noexcept {
    switch (metric) {
        case BaselineMetric::Leep: return "leep";
        case BaselineMetric::Nce: return "nce";
        case BaselineMetric::HScore: return "hscore";
        case BaselineMetric::LogMe: return "logme";
        case BaselineMetric::Gbc: return "gbc";
    }
    return "unknown";
}

std::vector<BaselineMetric> all_baseline_metrics() {
    return {BaselineMetric::Leep, BaselineMetric::Nce, BaselineMetric::HScore, BaselineMetric::LogMe,
            BaselineMetric::Gbc};
}

BaselineMetric parse_baseline_metric(std::string_view text) {
    for (BaselineMetric m : all_baseline_metrics()) {
        if (to_string(m) == text) return m;
    }
    throw InvalidArgument("unknown metric '" + std::string(text) + "' (valid: leep, nce, hscore, logme, gbc)");
}

double baseline_score(BaselineMetric metric, const ModelState& source_model, const LabeledDataset& target) {
    switch (metric) {
        case BaselineMetric::Leep: return leep(pseudo_labels(source_model, target), target.labels);
        case BaselineMetric::Nce: return nce(argmax_labels(pseudo_labels(source_model, target)), target.labels);
        case BaselineMetric::HScore: return hscore(extract_features(source_model, target));
        case BaselineMetric::LogMe: return logme(extract_features(source_model, target));
        case BaselineMetric::Gbc: return gbc(extract_features(source_model, target));
    }
    throw InvalidArgument("unknown metric");
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& features) {
    std::string out = "label";
    for (std::size_t c = 0; c < features.cols; ++c) out += ",f" + std::to_string(c);
    out += '\n';
    char buf[32];
    for (std::size_t r = 0; r < features.rows; ++r) {
        out += std::to_string(features.labels[r]);
        for (std::size_t c = 0; c < features.cols; ++c) {
            std::snprintf(buf, sizeof buf, ",%.17g", features.at(r, c));
            out += buf;
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
    // Labels are written as dense 0..K-1 ids, so first-appearance re-indexing
    // would scramble them; parse them back by value instead.
    const LabeledDataset raw = load_csv(path, "label");
    const std::string text = read_file(path);
    FeatureMatrix out;
    out.rows = raw.size();
    out.cols = raw.feature_dim;
    out.values = raw.features;
    std::size_t pos = text.find('\n') + 1;
    for (std::size_t r = 0; r < out.rows; ++r) {
        while (pos < text.size() && (text[pos] == '\n' || text[pos] == '\r')) ++pos;
        const std::size_t comma = text.find(',', pos);
        out.labels.push_back(std::stoul(text.substr(pos, comma - pos)));
        pos = text.find('\n', comma);
        pos = pos == std::string::npos ? text.size() : pos + 1;
    }
    out.num_classes = out.labels.empty() ? 0 : *std::max_element(out.labels.begin(), out.labels.end()) + 1;
    return out;
}

}  // namespace pge
