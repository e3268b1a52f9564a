#include "umlab/datahub.hpp"

#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

namespace umlab {

int Dataset::num_classes() const {
    if (!labels || labels->empty()) return 0;
    return *std::max_element(labels->begin(), labels->end()) + 1;
}

std::vector<std::vector<int>> Dataset::rows_by_class() const {
    if (!labels) throw ParameterError("dataset has no labels");
    std::vector<std::vector<int>> out(static_cast<std::size_t>(num_classes()));
    for (int i = 0; i < rows(); ++i) out[static_cast<std::size_t>((*labels)[i])].push_back(i);
    return out;
}

void Dataset::validate() const {
    if (features.cols() < 1) throw ParameterError("dataset dimensionality must be >= 1");
    if (!labels) return;
    if (static_cast<Eigen::Index>(labels->size()) != features.rows())
        throw ParameterError("label count does not match row count");
    const int nc = num_classes();
    std::vector<int> seen(static_cast<std::size_t>(std::max(nc, 0)), 0);
    for (int y : *labels) {
        if (y < 0) throw ParameterError("negative label " + std::to_string(y));
        seen[static_cast<std::size_t>(y)] = 1;
    }
    for (int c = 0; c < nc; ++c)
        if (!seen[static_cast<std::size_t>(c)]) throw ParameterError("labels not contiguous: class " + std::to_string(c) + " missing");
}

AugmentPolicy AugmentPolicy::gaussian_noise(double sigma) {
    AugmentPolicy p;
    p.kind = Kind::gaussian_noise;
    p.noise_sigma = sigma;
    p.validate();
    return p;
}

AugmentPolicy AugmentPolicy::scale_jitter(double lo, double hi) {
    AugmentPolicy p;
    p.kind = Kind::scale_jitter;
    p.scale_lo = lo;
    p.scale_hi = hi;
    p.validate();
    return p;
}

AugmentPolicy AugmentPolicy::mask_dropout(double prob) {
    AugmentPolicy p;
    p.kind = Kind::mask_dropout;
    p.mask_prob = prob;
    p.validate();
    return p;
}

AugmentPolicy AugmentPolicy::compose(std::vector<AugmentPolicy> children) {
    AugmentPolicy p;
    p.kind = Kind::compose;
    p.children = std::move(children);
    p.validate();
    return p;
}

void AugmentPolicy::validate() const {
    switch (kind) {
    case Kind::gaussian_noise:
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ParameterError("noise_sigma must be >= 0");
        break;
    case Kind::scale_jitter:
        if (!(scale_lo > 0.0 && scale_lo <= scale_hi) || !std::isfinite(scale_hi))
            throw ParameterError("scale range must satisfy 0 < lo <= hi");
        break;
    case Kind::mask_dropout:
        if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw ParameterError("mask_prob must be in [0, 1)");
        break;
    case Kind::compose:
        for (const auto& c : children) c.validate();
        break;
    }
}

AugmentPolicy default_policy(const Dataset& data, double noise_factor, double scale_lo, double scale_hi,
                             double mask_prob) {
    double mean_std = 0.0;
    if (data.rows() > 1) {
        const RowVector mu = data.features.colwise().mean();
        const Matrix centered = data.features.rowwise() - mu;
        const RowVector var = centered.colwise().squaredNorm() / static_cast<double>(data.rows() - 1);
        mean_std = var.array().sqrt().mean();
    }
    return AugmentPolicy::compose({AugmentPolicy::gaussian_noise(noise_factor * mean_std),
                                   AugmentPolicy::scale_jitter(scale_lo, scale_hi),
                                   AugmentPolicy::mask_dropout(mask_prob)});
}

namespace {

void apply_policy(Vector& x, const AugmentPolicy& p, Stream& rng) {
    using Kind = AugmentPolicy::Kind;
    switch (p.kind) {
    case Kind::gaussian_noise:
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += p.noise_sigma * rng.normal();
        break;
    case Kind::scale_jitter:
        x *= rng.uniform(p.scale_lo, p.scale_hi);
        break;
    case Kind::mask_dropout:
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (rng.uniform() < p.mask_prob) x[i] = 0.0;
        break;
    case Kind::compose:
        for (const auto& c : p.children) apply_policy(x, c, rng);
        break;
    }
}

}  // namespace

Vector augment(const Eigen::Ref<const Vector>& x, const AugmentPolicy& policy, Stream& rng) {
    Vector out = x;
    apply_policy(out, policy, rng);
    return out;
}

Matrix synth_centers(int num_clusters, int dim, double cluster_sep, std::uint64_t seed) {
    Stream rng = Stream(seed).substream(0);
    Matrix centers(num_clusters, dim);
    for (int c = 0; c < num_clusters; ++c)
        for (int j = 0; j < dim; ++j) centers(c, j) = cluster_sep * rng.uniform();
    return centers;
}

Dataset synth_generate(int num_clusters, int per_cluster, int dim, double cluster_sep, double noise,
                       std::uint64_t seed) {
    if (num_clusters < 2) throw ParameterError("synth_generate: num_clusters must be >= 2");
    if (per_cluster < 1) throw ParameterError("synth_generate: per_cluster must be >= 1");
    if (dim < 2) throw ParameterError("synth_generate: dim must be >= 2");
    if (!(cluster_sep > 0.0)) throw ParameterError("synth_generate: cluster_sep must be > 0");
    if (!(noise > 0.0)) throw ParameterError("synth_generate: noise must be > 0");

    const Matrix centers = synth_centers(num_clusters, dim, cluster_sep, seed);
    Stream rng = Stream(seed).substream(1);
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(num_clusters) * per_cluster, dim);
    out.labels.emplace();
    out.labels->reserve(static_cast<std::size_t>(out.features.rows()));
    Eigen::Index r = 0;
    for (int c = 0; c < num_clusters; ++c) {
        for (int i = 0; i < per_cluster; ++i, ++r) {
            for (int j = 0; j < dim; ++j) out.features(r, j) = centers(c, j) + noise * rng.normal();
            out.labels->push_back(c);
        }
    }
    return out;
}

Dataset select_classes(const Dataset& data, std::span<const int> classes) {
    if (!data.labeled()) throw ParameterError("select_classes: dataset has no labels");
    const auto by_class = data.rows_by_class();
    std::vector<int> rows;
    std::vector<int> labels;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const int c = classes[k];
        if (c < 0 || c >= static_cast<int>(by_class.size())) throw ParameterError("select_classes: unknown class " + std::to_string(c));
        for (int r : by_class[static_cast<std::size_t>(c)]) {
            rows.push_back(r);
            labels.push_back(static_cast<int>(k));
        }
    }
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(rows[i]);
    out.labels = std::move(labels);
    return out;
}

Dataset strip_labels(const Dataset& data) {
    return Dataset{data.features, std::nullopt};
}

using detail::parse_number;
using detail::split_ws;

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());

    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw FormatError("empty file", lineno);
    const auto head = split_ws(line);
    long long num_rows = 0;
    int dim = 0;
    int has_labels = 0;
    if (head.size() != 4 || head[0] != "UMLV1" || !parse_number(head[1], num_rows) || !parse_number(head[2], dim) ||
        !parse_number(head[3], has_labels) || num_rows < 0 || dim < 1 || (has_labels != 0 && has_labels != 1))
        throw FormatError("malformed header, expected 'UMLV1 <num_rows> <D> <0|1>'", lineno);

    Dataset data;
    data.features.resize(num_rows, dim);
    std::vector<int> labels;
    std::vector<std::size_t> label_lines;
    const std::size_t expected = static_cast<std::size_t>(dim) + static_cast<std::size_t>(has_labels);
    for (long long r = 0; r < num_rows; ++r) {
        ++lineno;
        if (!std::getline(in, line))
            throw FormatError("header declares " + std::to_string(num_rows) + " rows, file has " + std::to_string(r), lineno);
        const auto toks = split_ws(line);
        if (toks.size() != expected)
            throw FormatError("expected " + std::to_string(expected) + " fields, found " + std::to_string(toks.size()), lineno);
        for (int j = 0; j < dim; ++j) {
            double v = 0.0;
            if (!parse_number(toks[static_cast<std::size_t>(j)], v)) throw FormatError("bad number '" + std::string(toks[static_cast<std::size_t>(j)]) + "'", lineno);
            data.features(r, j) = v;
        }
        if (has_labels) {
            int y = 0;
            if (!parse_number(toks.back(), y) || y < 0) throw FormatError("bad label '" + std::string(toks.back()) + "'", lineno);
            labels.push_back(y);
            label_lines.push_back(lineno);
        }
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (!split_ws(line).empty()) throw FormatError("trailing data after declared rows", lineno);
    }
    if (has_labels) {
        const int nc = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
        std::vector<char> seen(static_cast<std::size_t>(nc), 0);
        for (int y : labels) seen[static_cast<std::size_t>(y)] = 1;
        for (int c = 0; c < nc; ++c) {
            if (seen[static_cast<std::size_t>(c)]) continue;
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (labels[i] > c)
                    throw FormatError("labels not contiguous: class " + std::to_string(c) + " never occurs", label_lines[i]);
        }
        data.labels = std::move(labels);
    }
    return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    data.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "UMLV1 " << data.rows() << ' ' << data.dim() << ' ' << (data.labeled() ? 1 : 0) << '\n';
    for (int r = 0; r < data.rows(); ++r) {
        for (int j = 0; j < data.dim(); ++j) {
            if (j) out << ' ';
            out << format_g9(data.features(r, j));
        }
        if (data.labeled()) out << ' ' << (*data.labels)[static_cast<std::size_t>(r)];
        out << '\n';
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

MiniBatch make_pseudo_batch(const Dataset& data, int C, int K, int Q, const AugmentPolicy& policy, Stream& rng) {
    if (C < 1 || K < 1 || Q < 1) throw ParameterError("make_pseudo_batch: C, K, Q must be >= 1");
    if (C > data.rows())
        throw ParameterError("make_pseudo_batch: C=" + std::to_string(C) + " exceeds dataset rows " + std::to_string(data.rows()));
    MiniBatch b;
    b.C = C;
    b.K = K;
    b.Q = Q;
    const int per = K + Q;
    b.views.resize(static_cast<Eigen::Index>(C) * per, data.dim());
    b.pseudo_labels.reserve(static_cast<std::size_t>(C * per));
    b.anchor_ids.reserve(static_cast<std::size_t>(C * per));
    const std::vector<int> anchors = rng.choose(data.rows(), C);
    for (int c = 0; c < C; ++c) {
        const Vector x = data.features.row(anchors[static_cast<std::size_t>(c)]).transpose();
        for (int v = 0; v < per; ++v) {
            b.views.row(c * per + v) = augment(x, policy, rng).transpose();
            b.pseudo_labels.push_back(c);
            b.anchor_ids.push_back(anchors[static_cast<std::size_t>(c)]);
        }
    }
    return b;
}

}  // namespace umlab
