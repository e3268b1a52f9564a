#include "umlab/trainer.hpp"

#include "text_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

namespace umlab {

namespace {

// Substream purposes within one episode.
constexpr std::uint64_t kPurposeBatch = 1;
constexpr std::uint64_t kPurposeSplit = 2;
constexpr std::uint64_t kPurposeHms = 3;
constexpr std::uint64_t kPurposeTsp = 4;

}  // namespace

TrainMode parse_mode(const std::string& name) {
    if (name == "baseline") return TrainMode::baseline;
    if (name == "hms") return TrainMode::hms;
    if (name == "tsphead") return TrainMode::tsphead;
    if (name == "hms+tsp") return TrainMode::hms_tsp;
    throw ParameterError("unknown mode '" + name + "' (expected baseline, hms, tsphead, hms+tsp)");
}

std::string mode_name(TrainMode mode) {
    switch (mode) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::hms: return "hms";
    case TrainMode::tsphead: return "tsphead";
    case TrainMode::hms_tsp: return "hms+tsp";
    }
    return "?";
}

void TrainConfig::validate() const {
    episode.validate();
    metric.validate();
    if (mode == TrainMode::hms || mode == TrainMode::hms_tsp) hms.validate();
    if (uses_head()) tsp.validate();
    if (epochs < 0 || episodes_per_epoch < 1) throw ParameterError("config: epochs must be >= 0 and episodes_per_epoch >= 1");
    if (!(lr_min >= 0.0) || !(optimizer.lr > lr_min)) throw ParameterError("config: need lr > lr_min >= 0");
    if (optimizer.kind == OptimizerConfig::Kind::adam &&
        !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 && optimizer.epsilon > 0.0))
        throw ParameterError("config: adam needs beta1, beta2 in [0, 1) and epsilon > 0");
    if (optimizer.kind == OptimizerConfig::Kind::sgd_momentum && !(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0))
        throw ParameterError("config: momentum must be in [0, 1)");
    if (embed_dim < 1) throw ParameterError("config: embed_dim must be >= 1");
    for (int h : hidden)
        if (h < 1) throw ParameterError("config: hidden sizes must be >= 1");
    AugmentPolicy::compose({AugmentPolicy::gaussian_noise(aug_noise), AugmentPolicy::scale_jitter(aug_scale_lo, aug_scale_hi),
                            AugmentPolicy::mask_dropout(aug_mask)});
}

ModelSpec TrainConfig::model_spec(int input_dim) const {
    ModelSpec spec;
    spec.layer_dims.push_back(input_dim);
    spec.layer_dims.insert(spec.layer_dims.end(), hidden.begin(), hidden.end());
    spec.layer_dims.push_back(embed_dim);
    spec.activation = activation;
    spec.seed = seed;
    return spec;
}

namespace {

bool parse_bool(std::string_view v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ParameterError("expected a boolean, got '" + std::string(v) + "'");
}

template <typename T>
T parse_value(std::string_view v) {
    T out{};
    if (!detail::parse_number(v, out)) throw ParameterError("bad number '" + std::string(v) + "'");
    return out;
}

std::vector<int> parse_int_list(std::string_view v) {
    std::vector<int> out;
    if (v == "none" || v.empty()) return out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const std::size_t comma = v.find(',', start);
        const std::string_view tok = detail::trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        out.push_back(parse_value<int>(tok));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

TrainConfig parse_train_config(std::istream& in, ConfigPurpose purpose) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view(line);
        if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = detail::trim(view);
        if (view.empty()) continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) throw FormatError("expected 'key = value'", lineno);
        const std::string key(detail::trim(view.substr(0, eq)));
        const std::string_view val = detail::trim(view.substr(eq + 1));
        if (!seen.insert(key).second) throw FormatError("duplicate key '" + key + "'", lineno);
        try {
            if (key == "mode") cfg.mode = parse_mode(std::string(val));
            else if (key == "way") cfg.episode.N = parse_value<int>(val);
            else if (key == "shot") cfg.episode.K = parse_value<int>(val);
            else if (key == "query") cfg.episode.Q = parse_value<int>(val);
            else if (key == "tasks") cfg.episode.T = parse_value<int>(val);
            else if (key == "anchors") cfg.episode.C = parse_value<int>(val);
            else if (key == "metric") cfg.metric.kind = MetricSpec::parse(std::string(val)).kind;
            else if (key == "tau") cfg.metric.tau = parse_value<double>(val);
            else if (key == "hms_neighbors") cfg.hms.M = parse_value<int>(val);
            else if (key == "hms_lambda_max") cfg.hms.lambda_max = parse_value<double>(val);
            else if (key == "tsp_heads") cfg.tsp.heads = parse_value<int>(val);
            else if (key == "tsp_layers") cfg.tsp.layers = parse_value<int>(val);
            else if (key == "tsp_dropout") cfg.tsp.dropout = parse_value<double>(val);
            else if (key == "tsp_layer_norm") cfg.tsp.layer_norm = parse_bool(val);
            else if (key == "tsp_residual") cfg.tsp.residual = parse_bool(val);
            else if (key == "tsp_identity_projection") cfg.tsp.identity_projection = parse_bool(val);
            else if (key == "optimizer") {
                if (val == "adam") cfg.optimizer.kind = OptimizerConfig::Kind::adam;
                else if (val == "sgd_momentum") cfg.optimizer.kind = OptimizerConfig::Kind::sgd_momentum;
                else throw ParameterError("unknown optimizer '" + std::string(val) + "' (expected adam or sgd_momentum)");
            }
            else if (key == "lr") cfg.optimizer.lr = parse_value<double>(val);
            else if (key == "beta1") cfg.optimizer.beta1 = parse_value<double>(val);
            else if (key == "beta2") cfg.optimizer.beta2 = parse_value<double>(val);
            else if (key == "epsilon") cfg.optimizer.epsilon = parse_value<double>(val);
            else if (key == "momentum") cfg.optimizer.momentum = parse_value<double>(val);
            else if (key == "epochs") cfg.epochs = parse_value<int>(val);
            else if (key == "episodes_per_epoch") cfg.episodes_per_epoch = parse_value<int>(val);
            else if (key == "lr_min") cfg.lr_min = parse_value<double>(val);
            else if (key == "seed") cfg.seed = parse_value<std::uint64_t>(val);
            else if (key == "hidden") cfg.hidden = parse_int_list(val);
            else if (key == "embed_dim") cfg.embed_dim = parse_value<int>(val);
            else if (key == "activation") cfg.activation = parse_activation(std::string(val));
            else if (key == "aug_noise") cfg.aug_noise = parse_value<double>(val);
            else if (key == "aug_scale_lo") cfg.aug_scale_lo = parse_value<double>(val);
            else if (key == "aug_scale_hi") cfg.aug_scale_hi = parse_value<double>(val);
            else if (key == "aug_mask") cfg.aug_mask = parse_value<double>(val);
            else throw FormatError("unknown key '" + key + "'", lineno);
        } catch (const ParameterError& e) {
            throw FormatError(key + ": " + e.what(), lineno);
        }
    }
    if (!seen.count("lr")) {
        if (purpose == ConfigPurpose::finetune)
            cfg.optimizer.lr = 1e-4;
        else if (cfg.optimizer.kind == OptimizerConfig::Kind::sgd_momentum)
            cfg.optimizer.lr = 0.03;
    }
    if (purpose == ConfigPurpose::finetune) {
        if (!seen.count("epochs")) cfg.epochs = 50;
        if (!seen.count("episodes_per_epoch")) cfg.episodes_per_epoch = 10;
    }
    try {
        cfg.validate();
    } catch (const ParameterError& e) {
        throw FormatError(e.what());
    }
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, ConfigPurpose purpose) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    return parse_train_config(in, purpose);
}

std::string format_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    std::string hidden;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(cfg.hidden[i]);
    out << "mode = " << mode_name(cfg.mode) << '\n'
        << "way = " << cfg.episode.N << '\n'
        << "shot = " << cfg.episode.K << '\n'
        << "query = " << cfg.episode.Q << '\n'
        << "tasks = " << cfg.episode.T << '\n'
        << "anchors = " << cfg.episode.C << '\n'
        << "metric = " << cfg.metric.name() << '\n'
        << "tau = " << format_g9(cfg.metric.tau) << '\n'
        << "hms_neighbors = " << cfg.hms.M << '\n'
        << "hms_lambda_max = " << format_g9(cfg.hms.lambda_max) << '\n'
        << "tsp_heads = " << cfg.tsp.heads << '\n'
        << "tsp_layers = " << cfg.tsp.layers << '\n'
        << "tsp_dropout = " << format_g9(cfg.tsp.dropout) << '\n'
        << "tsp_layer_norm = " << (cfg.tsp.layer_norm ? 1 : 0) << '\n'
        << "tsp_residual = " << (cfg.tsp.residual ? 1 : 0) << '\n'
        << "tsp_identity_projection = " << (cfg.tsp.identity_projection ? 1 : 0) << '\n'
        << "optimizer = " << (cfg.optimizer.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd_momentum") << '\n'
        << "lr = " << format_g9(cfg.optimizer.lr) << '\n'
        << "beta1 = " << format_g9(cfg.optimizer.beta1) << '\n'
        << "beta2 = " << format_g9(cfg.optimizer.beta2) << '\n'
        << "epsilon = " << format_g9(cfg.optimizer.epsilon) << '\n'
        << "momentum = " << format_g9(cfg.optimizer.momentum) << '\n'
        << "epochs = " << cfg.epochs << '\n'
        << "episodes_per_epoch = " << cfg.episodes_per_epoch << '\n'
        << "lr_min = " << format_g9(cfg.lr_min) << '\n'
        << "seed = " << cfg.seed << '\n'
        << "hidden = " << (hidden.empty() ? "none" : hidden) << '\n'
        << "embed_dim = " << cfg.embed_dim << '\n'
        << "activation = " << activation_name(cfg.activation) << '\n'
        << "aug_noise = " << format_g9(cfg.aug_noise) << '\n'
        << "aug_scale_lo = " << format_g9(cfg.aug_scale_lo) << '\n'
        << "aug_scale_hi = " << format_g9(cfg.aug_scale_hi) << '\n'
        << "aug_mask = " << format_g9(cfg.aug_mask) << '\n';
    return out.str();
}

double cosine_anneal(double lr0, double lr_min, long long t, long long T) {
    if (T < 1) throw ParameterError("cosine_anneal: T must be >= 1");
    if (t < 0 || t > T) throw ParameterError("cosine_anneal: t=" + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(T)));
}

Optimizer::Optimizer(const OptimizerConfig& cfg, std::size_t num_params)
    : cfg_(cfg), m_(Vector::Zero(static_cast<Eigen::Index>(num_params))) {
    if (cfg_.kind == OptimizerConfig::Kind::adam) v_ = Vector::Zero(static_cast<Eigen::Index>(num_params));
}

void Optimizer::step(Eigen::Ref<Vector> params, const Vector& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ParameterError("optimizer: size mismatch");
    ++steps_;
    if (cfg_.kind == OptimizerConfig::Kind::sgd_momentum) {
        m_ = cfg_.momentum * m_ + grads;
        params -= lr * m_;
        return;
    }
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
}

void write_train_report(const TrainReport& report, std::ostream& out) {
    out << "epoch mean_loss mean_grad_norm lr wall_seconds\n";
    for (const auto& r : report.epochs)
        out << r.epoch << ' ' << format_g9(r.mean_loss) << ' ' << format_g9(r.mean_grad_norm) << ' ' << format_g9(r.lr)
            << ' ' << format_g9(r.wall_seconds) << '\n';
}

Checkpoint initial_checkpoint(const TrainConfig& cfg, int input_dim) {
    Checkpoint ckpt;
    ckpt.model = init(cfg.model_spec(input_dim));
    if (cfg.uses_head()) ckpt.head = TspHeadParams::init(cfg.embed_dim, cfg.tsp, cfg.seed);
    return ckpt;
}

Trainer::Trainer(TrainConfig cfg, Checkpoint start, BatchSource source, int threads)
    : cfg_(std::move(cfg)),
      state_(std::move(start)),
      source_(std::move(source)),
      threads_(threads),
      optimizer_(cfg_.optimizer, 0) {
    cfg_.validate();
    if (cfg_.uses_head() && !state_.head) state_.head = TspHeadParams::init(state_.model.output_dim(), cfg_.tsp, cfg_.seed);
    if (cfg_.uses_head() && state_.head->d != state_.model.output_dim())
        throw ParameterError("head dimension does not match the embedding dimension");
    const Vector model_flat = state_.model.flatten();
    if (cfg_.uses_head()) {
        const Vector head_flat = state_.head->flatten();
        flat_.resize(model_flat.size() + head_flat.size());
        flat_ << model_flat, head_flat;
    } else {
        flat_ = model_flat;
    }
    optimizer_ = Optimizer(cfg_.optimizer, static_cast<std::size_t>(flat_.size()));
}

void Trainer::set_flat_params(const Vector& flat) {
    if (flat.size() != flat_.size()) throw ParameterError("trainer: flat parameter size mismatch");
    flat_ = flat;
    sync_from_flat();
}

void Trainer::sync_from_flat() {
    const auto n_model = static_cast<Eigen::Index>(state_.model.size());
    state_.model.assign(flat_.head(n_model));
    if (cfg_.uses_head()) state_.head->assign(flat_.tail(flat_.size() - n_model));
}

EpisodeStats Trainer::evaluate(const Matrix& views, const std::vector<Task>& tasks, const Stream& episode_rng) const {
    const Matrix emb = forward(state_.model, views);
    EpisodeStats stats;
    Matrix grad_emb;
    Vector head_grad;
    switch (cfg_.mode) {
    case TrainMode::baseline: {
        LossAndGrad lg = episode_loss(tasks, emb, cfg_.metric, threads_);
        stats.loss = lg.loss;
        grad_emb = std::move(lg.grad_emb);
        break;
    }
    case TrainMode::hms: {
        LossAndGrad lg = hms_episode_loss(tasks, emb, cfg_.metric, cfg_.hms, episode_rng.substream(kPurposeHms), threads_);
        stats.loss = lg.loss;
        grad_emb = std::move(lg.grad_emb);
        break;
    }
    case TrainMode::tsphead:
    case TrainMode::hms_tsp: {
        const Stream hms_rng = episode_rng.substream(kPurposeHms);
        const TransformedTaskLoss hms_inner = [&](std::size_t t, const Task& task, const Matrix& psi, Matrix& grad) {
            return hms_local_task_loss(task, psi, cfg_.metric, cfg_.hms, hms_rng, t, &grad);
        };
        TspLossAndGrad tl = tsp_episode_loss(tasks, emb, cfg_.metric, *state_.head, episode_rng.substream(kPurposeTsp),
                                             true, threads_, cfg_.mode == TrainMode::hms_tsp ? &hms_inner : nullptr);
        stats.loss = tl.loss;
        grad_emb = std::move(tl.grad_emb);
        head_grad = std::move(tl.grad_params);
        break;
    }
    }
    stats.grad_norm = grad_norm_diagnostic(grad_emb, referenced_rows(tasks));
    const Vector model_grad = backward(state_.model, views, grad_emb).params.flatten();
    if (cfg_.uses_head()) {
        stats.grad.resize(model_grad.size() + head_grad.size());
        stats.grad << model_grad, head_grad;
    } else {
        stats.grad = model_grad;
    }
    return stats;
}

EpisodeStats Trainer::run_episode(int epoch, int episode) {
    const long long total = static_cast<long long>(cfg_.epochs) * cfg_.episodes_per_epoch;
    const long long step = static_cast<long long>(epoch) * cfg_.episodes_per_epoch + episode;
    const double lr = cosine_anneal(cfg_.optimizer.lr, cfg_.lr_min, step, std::max(total, step + 1));

    const Stream base = Stream(cfg_.seed).substream(static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(episode));
    Stream batch_rng = base.substream(kPurposeBatch);
    const MiniBatch batch = source_(batch_rng);
    const std::vector<Task> tasks = ses_split(batch, cfg_.episode, base.substream(kPurposeSplit));

    EpisodeStats stats = evaluate(batch.views, tasks, base);
    stats.lr = lr;
    optimizer_.step(flat_, stats.grad, lr);
    sync_from_flat();
    ++episodes_;
    return stats;
}

TrainReport Trainer::run() {
    TrainReport report;
    for (int e = 0; e < cfg_.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = e;
        for (int k = 0; k < cfg_.episodes_per_epoch; ++k) {
            const EpisodeStats s = run_episode(e, k);
            if (k == 0) rec.lr = s.lr;
            rec.mean_loss += s.loss;
            rec.mean_grad_norm += s.grad_norm;
        }
        rec.mean_loss /= cfg_.episodes_per_epoch;
        rec.mean_grad_norm /= cfg_.episodes_per_epoch;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);
    }
    return report;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint out = state_;
    out.meta["mode"] = mode_name(cfg_.mode);
    out.meta["metric"] = cfg_.metric.name();
    out.meta["seed"] = std::to_string(cfg_.seed);
    out.meta["episodes"] = std::to_string(episodes_);
    return out;
}

std::pair<Checkpoint, TrainReport> train(const TrainConfig& cfg, const Dataset& data, int threads) {
    cfg.validate();
    if (data.rows() < cfg.episode.C)
        throw ParameterError("train: dataset has " + std::to_string(data.rows()) + " rows, need at least C=" +
                             std::to_string(cfg.episode.C));
    const AugmentPolicy policy = default_policy(data, cfg.aug_noise, cfg.aug_scale_lo, cfg.aug_scale_hi, cfg.aug_mask);
    const EpisodeConfig ep = cfg.episode;
    Trainer trainer(cfg, initial_checkpoint(cfg, data.dim()),
                    [&](Stream& rng) { return make_pseudo_batch(data, ep.C, ep.K, ep.Q, policy, rng); }, threads);
    TrainReport report = trainer.run();
    return {trainer.checkpoint(), std::move(report)};
}

Dataset retain_label_fraction(const Dataset& data, double ratio, int min_rows, std::uint64_t seed) {
    if (!data.labeled()) throw ParameterError("fine-tuning needs a labeled dataset");
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ParameterError("label_ratio must be in (0, 1]");
    const auto by_class = data.rows_by_class();
    Stream rng = Stream(seed).substream(0xF17E);
    std::vector<int> keep;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& rows = by_class[c];
        const int n = static_cast<int>(std::ceil(ratio * static_cast<double>(rows.size()) - 1e-9));
        if (n < min_rows)
            throw ParameterError("label_ratio leaves class " + std::to_string(c) + " with " + std::to_string(n) +
                                 " rows, need at least " + std::to_string(min_rows));
        std::vector<int> pick = rng.choose(static_cast<int>(rows.size()), n);
        std::sort(pick.begin(), pick.end());
        for (int i : pick) keep.push_back(rows[static_cast<std::size_t>(i)]);
    }
    std::sort(keep.begin(), keep.end());
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(keep.size()), data.dim());
    out.labels.emplace();
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(keep[i]);
        out.labels->push_back((*data.labels)[static_cast<std::size_t>(keep[i])]);
    }
    return out;
}

MiniBatch make_labeled_batch(const Dataset& data, const std::vector<std::vector<int>>& rows_by_class, int C, int K,
                             int Q, Stream& rng) {
    if (C > static_cast<int>(rows_by_class.size()))
        throw ParameterError("labeled batch: C=" + std::to_string(C) + " exceeds the " + std::to_string(rows_by_class.size()) +
                             " classes");
    MiniBatch b;
    b.C = C;
    b.K = K;
    b.Q = Q;
    const int per = K + Q;
    b.views.resize(static_cast<Eigen::Index>(C) * per, data.dim());
    const std::vector<int> classes = rng.choose(static_cast<int>(rows_by_class.size()), C);
    for (int c = 0; c < C; ++c) {
        const auto& rows = rows_by_class[static_cast<std::size_t>(classes[static_cast<std::size_t>(c)])];
        if (static_cast<int>(rows.size()) < per)
            throw ParameterError("labeled batch: class " + std::to_string(classes[static_cast<std::size_t>(c)]) + " has fewer than K+Q rows");
        const std::vector<int> pick = rng.choose(static_cast<int>(rows.size()), per);
        for (int v = 0; v < per; ++v) {
            const int r = rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(v)])];
            b.views.row(c * per + v) = data.features.row(r);
            b.pseudo_labels.push_back(c);
            b.anchor_ids.push_back(r);
        }
    }
    return b;
}

Checkpoint finetune(const Checkpoint& ckpt, const Dataset& labeled, double label_ratio, const TrainConfig& cfg,
                    int threads, TrainReport* report) {
    TrainConfig ft = cfg;
    ft.mode = TrainMode::baseline;
    ft.validate();
    const int per = ft.episode.K + ft.episode.Q;
    const Dataset kept = retain_label_fraction(labeled, label_ratio, per, ft.seed);
    const auto by_class = kept.rows_by_class();
    if (ft.episode.C > static_cast<int>(by_class.size()))
        throw ParameterError("finetune: C=" + std::to_string(ft.episode.C) + " exceeds the " + std::to_string(by_class.size()) +
                             " labeled classes");
    if (ckpt.model.input_dim() != labeled.dim()) throw ParameterError("finetune: checkpoint input dimension does not match data");

    Checkpoint start;
    start.model = ckpt.model;
    const EpisodeConfig ep = ft.episode;
    Trainer trainer(ft, start, [&](Stream& rng) { return make_labeled_batch(kept, by_class, ep.C, ep.K, ep.Q, rng); }, threads);
    TrainReport r = trainer.run();
    if (report) *report = std::move(r);
    Checkpoint out = ckpt;
    out.model = trainer.checkpoint().model;
    return out;
}

}  // namespace umlab
