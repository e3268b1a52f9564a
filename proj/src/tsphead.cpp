#include "umlab/tsphead.hpp"

#include <cmath>
#include <string>

namespace umlab {

namespace {

constexpr double kLayerNormEps = 1e-5;

void row_softmax_inplace(Matrix& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
    }
}

template <typename F>
void for_each_block(TspLayer& layer, F&& f) {
    for (auto& w : layer.wq) f(w);
    for (auto& w : layer.wk) f(w);
    for (auto& w : layer.wv) f(w);
    f(layer.wo);
    f(layer.ln_gain);
    f(layer.ln_bias);
    f(layer.wl);
    f(layer.bl);
}

template <typename F>
void for_each_block(const TspLayer& layer, F&& f) {
    for_each_block(const_cast<TspLayer&>(layer), [&](const auto& b) { f(b); });
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double limit, Stream& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    return m;
}

}  // namespace

void TspHeadConfig::validate() const {
    if (heads < 1) throw ParameterError("tsp: heads must be >= 1");
    if (layers < 1) throw ParameterError("tsp: layers must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("tsp: dropout must be in [0, 1)");
}

TspHeadParams TspHeadParams::init(int d, const TspHeadConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (d < 1) throw ParameterError("tsp: d must be >= 1");
    TspHeadParams p;
    p.d = d;
    p.cfg = cfg;
    Stream rng = Stream(seed).substream(0x75B);
    const double limit = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 0; l < cfg.layers; ++l) {
        TspLayer layer;
        for (int h = 0; h < cfg.heads; ++h) layer.wq.push_back(uniform_matrix(d, d, limit, rng));
        for (int h = 0; h < cfg.heads; ++h) layer.wk.push_back(uniform_matrix(d, d, limit, rng));
        for (int h = 0; h < cfg.heads; ++h) layer.wv.push_back(uniform_matrix(d, d, limit, rng));
        layer.wo = uniform_matrix(static_cast<Eigen::Index>(cfg.heads) * d, d, limit, rng);
        layer.ln_gain = Vector::Ones(d);
        layer.ln_bias = Vector::Zero(d);
        layer.wl = cfg.identity_projection ? Matrix(Matrix::Identity(d, d)) : uniform_matrix(d, d, limit, rng);
        layer.bl = Vector::Zero(d);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

TspHeadParams TspHeadParams::identity(int d, bool residual) {
    TspHeadParams p;
    p.d = d;
    p.cfg.heads = 1;
    p.cfg.layers = 1;
    p.cfg.dropout = 0.0;
    p.cfg.layer_norm = false;
    p.cfg.residual = residual;
    p.cfg.identity_projection = true;
    TspLayer layer;
    const Matrix eye = Matrix::Identity(d, d);
    layer.wq = {eye};
    layer.wk = {eye};
    layer.wv = {residual ? Matrix(Matrix::Zero(d, d)) : eye};
    layer.wo = eye;
    layer.ln_gain = Vector::Ones(d);
    layer.ln_bias = Vector::Zero(d);
    layer.wl = eye;
    layer.bl = Vector::Zero(d);
    p.layers.push_back(std::move(layer));
    return p;
}

std::size_t TspHeadParams::size() const {
    std::size_t n = 0;
    for (const auto& layer : layers) for_each_block(layer, [&](const auto& b) { n += static_cast<std::size_t>(b.size()); });
    return n;
}

Vector TspHeadParams::flatten() const {
    Vector flat(static_cast<Eigen::Index>(size()));
    Eigen::Index off = 0;
    for (const auto& layer : layers)
        for_each_block(layer, [&](const auto& b) {
            flat.segment(off, b.size()) = b.template reshaped<Eigen::RowMajor>();
            off += b.size();
        });
    return flat;
}

void TspHeadParams::assign(const Eigen::Ref<const Vector>& flat) {
    if (static_cast<std::size_t>(flat.size()) != size()) throw ParameterError("tsp: flat parameter size mismatch");
    Eigen::Index off = 0;
    for (auto& layer : layers)
        for_each_block(layer, [&](auto& b) {
            b.template reshaped<Eigen::RowMajor>() = flat.segment(off, b.size());
            off += b.size();
        });
}

void TspHeadParams::validate() const {
    cfg.validate();
    if (static_cast<int>(layers.size()) != cfg.layers) throw ParameterError("tsp: layer count mismatch");
    for (const auto& layer : layers) {
        if (static_cast<int>(layer.wq.size()) != cfg.heads || static_cast<int>(layer.wk.size()) != cfg.heads ||
            static_cast<int>(layer.wv.size()) != cfg.heads)
            throw ParameterError("tsp: head count mismatch");
        for (int h = 0; h < cfg.heads; ++h)
            for (const Matrix* w : {&layer.wq[h], &layer.wk[h], &layer.wv[h]})
                if (w->rows() != d || w->cols() != d) throw ParameterError("tsp: projection must be d x d");
        if (layer.wo.rows() != static_cast<Eigen::Index>(cfg.heads) * d || layer.wo.cols() != d)
            throw ParameterError("tsp: output projection must be (H*d) x d");
        if (layer.ln_gain.size() != d || layer.ln_bias.size() != d || layer.wl.rows() != d || layer.wl.cols() != d ||
            layer.bl.size() != d)
            throw ParameterError("tsp: L parameters must have dimension d");
        bool finite = true;
        for_each_block(layer, [&](const auto& b) { finite = finite && b.allFinite(); });
        if (!finite) throw ParameterError("tsp: non-finite parameter");
    }
}

Vector attention_weights(const TspHeadParams& params, int head, const Eigen::Ref<const Vector>& x_emb,
                         const Matrix& set_embs) {
    if (head < 0 || head >= params.heads()) throw ParameterError("attention_weights: head out of range");
    if (set_embs.rows() < 1) throw ParameterError("attention_weights: empty set");
    const TspLayer& layer = params.layers.front();
    const RowVector q = x_emb.transpose() * layer.wq[static_cast<std::size_t>(head)];
    const Matrix k = set_embs * layer.wk[static_cast<std::size_t>(head)];
    Vector logits = (k * q.transpose()) / std::sqrt(static_cast<double>(params.d));
    return softmax(logits);
}

Matrix transform_set(const TspHeadParams& params, const Matrix& set_embs, const Stream& rng, bool training,
                     TspCache* cache) {
    if (set_embs.rows() < 1) throw ParameterError("transform_set: empty set");
    if (set_embs.cols() != params.d) throw ParameterError("transform_set: embedding dimension mismatch");
    const int H = params.heads();
    const Eigen::Index d = params.d;
    const Eigen::Index m = set_embs.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const bool drop = training && params.cfg.dropout > 0.0;

    if (cache) cache->layers.assign(params.layers.size(), {});
    Matrix x = set_embs;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const TspLayer& layer = params.layers[l];
        TspCache::Layer scratch;
        TspCache::Layer& c = cache ? cache->layers[l] : scratch;
        c.input = x;
        c.q.resize(static_cast<std::size_t>(H));
        c.k.resize(static_cast<std::size_t>(H));
        c.v.resize(static_cast<std::size_t>(H));
        c.attn.resize(static_cast<std::size_t>(H));
        c.concat.resize(m, H * d);
        for (int h = 0; h < H; ++h) {
            const auto hs = static_cast<std::size_t>(h);
            c.q[hs].noalias() = x * layer.wq[hs];
            c.k[hs].noalias() = x * layer.wk[hs];
            c.v[hs].noalias() = x * layer.wv[hs];
            c.attn[hs].noalias() = (c.q[hs] * c.k[hs].transpose()) * inv_sqrt_d;
            row_softmax_inplace(c.attn[hs]);
            c.concat.middleCols(h * d, d).noalias() = c.attn[hs] * c.v[hs];
        }
        c.z.noalias() = c.concat * layer.wo;
        if (params.cfg.residual) c.z += x;

        if (params.cfg.layer_norm) {
            c.xhat.resize(m, d);
            c.inv_std.resize(m);
            c.normed.resize(m, d);
            for (Eigen::Index i = 0; i < m; ++i) {
                const double mu = c.z.row(i).mean();
                const double var = (c.z.row(i).array() - mu).square().mean();
                c.inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
                c.xhat.row(i) = (c.z.row(i).array() - mu) * c.inv_std[i];
                c.normed.row(i) = c.xhat.row(i).cwiseProduct(layer.ln_gain.transpose()) + layer.ln_bias.transpose();
            }
        } else {
            c.normed = c.z;
        }

        if (drop) {
            Stream s = rng.substream(l);
            const double keep_scale = 1.0 / (1.0 - params.cfg.dropout);
            c.mask.resize(m, d);
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < d; ++j) c.mask(i, j) = s.uniform() < params.cfg.dropout ? 0.0 : keep_scale;
            c.dropped = c.normed.cwiseProduct(c.mask);
        } else {
            c.mask.resize(0, 0);
            c.dropped = c.normed;
        }

        x.noalias() = c.dropped * layer.wl;
        x.rowwise() += layer.bl.transpose();
    }
    return x;
}

Matrix tsp_backward(const TspHeadParams& params, const TspCache& cache, const Matrix& grad_psi,
                    Eigen::Ref<Vector> grad_params) {
    if (static_cast<std::size_t>(grad_params.size()) != params.size())
        throw ParameterError("tsp_backward: gradient buffer size mismatch");
    const int H = params.heads();
    const Eigen::Index d = params.d;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    // Offsets of each layer's block inside the flat vector.
    std::vector<Eigen::Index> layer_off(params.layers.size() + 1, 0);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Eigen::Index n = 0;
        for_each_block(params.layers[l], [&](const auto& b) { n += b.size(); });
        layer_off[l + 1] = layer_off[l] + n;
    }

    Matrix grad = grad_psi;
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const TspLayer& layer = params.layers[li];
        const TspCache::Layer& c = cache.layers[li];
        const Eigen::Index m = c.input.rows();

        std::vector<Matrix> dwq(static_cast<std::size_t>(H)), dwk(static_cast<std::size_t>(H)),
            dwv(static_cast<std::size_t>(H));
        Matrix dwl = c.dropped.transpose() * grad;
        Vector dbl = grad.colwise().sum().transpose();
        Matrix dnormed = grad * layer.wl.transpose();
        if (c.mask.size() > 0) dnormed = dnormed.cwiseProduct(c.mask);

        Vector dgain = Vector::Zero(d);
        Vector dbias = Vector::Zero(d);
        Matrix dz(m, d);
        if (params.cfg.layer_norm) {
            const double inv_d = 1.0 / static_cast<double>(d);
            for (Eigen::Index i = 0; i < m; ++i) {
                dgain += dnormed.row(i).cwiseProduct(c.xhat.row(i)).transpose();
                dbias += dnormed.row(i).transpose();
                const RowVector dxhat = dnormed.row(i).cwiseProduct(layer.ln_gain.transpose());
                const double mean_dxhat = dxhat.sum() * inv_d;
                const double mean_dxhat_xhat = dxhat.dot(c.xhat.row(i)) * inv_d;
                dz.row(i) = c.inv_std[i] * (dxhat.array() - mean_dxhat - c.xhat.row(i).array() * mean_dxhat_xhat).matrix();
            }
        } else {
            dz = dnormed;
        }

        Matrix dx = params.cfg.residual ? dz : Matrix(Matrix::Zero(m, d));
        const Matrix dwo = c.concat.transpose() * dz;
        const Matrix dconcat = dz * layer.wo.transpose();
        for (int h = 0; h < H; ++h) {
            const auto hs = static_cast<std::size_t>(h);
            const Matrix dout = dconcat.middleCols(h * d, d);
            const Matrix& a = c.attn[hs];
            const Matrix da = dout * c.v[hs].transpose();
            const Matrix dv = a.transpose() * dout;
            Matrix ds = a.cwiseProduct(da);
            const Vector rowsum = ds.rowwise().sum();
            ds -= a.cwiseProduct(rowsum.replicate(1, m));
            ds *= inv_sqrt_d;
            const Matrix dq = ds * c.k[hs];
            const Matrix dk = ds.transpose() * c.q[hs];
            dwq[hs] = c.input.transpose() * dq;
            dwk[hs] = c.input.transpose() * dk;
            dwv[hs] = c.input.transpose() * dv;
            dx.noalias() += dq * layer.wq[hs].transpose();
            dx.noalias() += dk * layer.wk[hs].transpose();
            dx.noalias() += dv * layer.wv[hs].transpose();
        }

        Eigen::Index off = layer_off[li];
        auto put = [&](const auto& b) {
            grad_params.segment(off, b.size()) += b.template reshaped<Eigen::RowMajor>();
            off += b.size();
        };
        for (const auto& b : dwq) put(b);
        for (const auto& b : dwk) put(b);
        for (const auto& b : dwv) put(b);
        put(dwo);
        put(dgain);
        put(dbias);
        put(dwl);
        put(dbl);
        grad = std::move(dx);
    }
    return grad;
}

TspLossAndGrad tsp_episode_loss(const std::vector<Task>& tasks, const Matrix& all_emb, const MetricSpec& metric,
                                const TspHeadParams& params, const Stream& rng, bool training, int threads,
                                const TransformedTaskLoss* inner) {
    const std::size_t T = tasks.size();
    std::vector<Vector> param_grads(T);
    LossAndGrad base = accumulate_tasks(
        tasks, all_emb.rows(), all_emb.cols(),
        [&](std::size_t t, Matrix& grad_local) {
            const Matrix local = gather_task_rows(tasks[t], all_emb);
            TspCache cache;
            const Matrix psi = transform_set(params, local, rng.substream(t), training, &cache);
            Matrix grad_psi;
            const double loss = inner ? (*inner)(t, tasks[t], psi, grad_psi)
                                      : local_task_loss(tasks[t], psi, metric, &grad_psi);
            param_grads[t] = Vector::Zero(static_cast<Eigen::Index>(params.size()));
            grad_local = tsp_backward(params, cache, grad_psi, param_grads[t]);
            return loss;
        },
        threads);

    TspLossAndGrad out;
    out.loss = base.loss;
    out.grad_emb = std::move(base.grad_emb);
    out.grad_params = Vector::Zero(static_cast<Eigen::Index>(params.size()));
    const double inv_t = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) out.grad_params += inv_t * param_grads[t];
    return out;
}

}  // namespace umlab
