#pragma once

#include "umlab/checkpoint.hpp"
#include "umlab/datahub.hpp"
#include "umlab/hms.hpp"
#include "umlab/sampler.hpp"
#include "umlab/simcore.hpp"
#include "umlab/tsphead.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace umlab {

enum class TrainMode { baseline, hms, tsphead, hms_tsp };

TrainMode parse_mode(const std::string& name);
std::string mode_name(TrainMode mode);

struct OptimizerConfig {
    enum class Kind { adam, sgd_momentum };
    Kind kind = Kind::adam;
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.9;
};

struct TrainConfig {
    TrainMode mode = TrainMode::baseline;
    EpisodeConfig episode;
    MetricSpec metric;
    HmsConfig hms;
    TspHeadConfig tsp;
    OptimizerConfig optimizer;
    int epochs = 20;
    int episodes_per_epoch = 100;
    double lr_min = 0.0;
    std::uint64_t seed = 0;

    // Embedding MLP: [D, hidden..., embed_dim].
    std::vector<int> hidden = {64};
    int embed_dim = 16;
    Activation activation = Activation::relu;

    // Augmentation: noise is relative to the mean per-feature std of the data.
    double aug_noise = 0.1;
    double aug_scale_lo = 0.8;
    double aug_scale_hi = 1.2;
    double aug_mask = 0.1;

    void validate() const;
    ModelSpec model_spec(int input_dim) const;
    bool uses_head() const { return mode == TrainMode::tsphead || mode == TrainMode::hms_tsp; }
};

enum class ConfigPurpose { train, finetune };

/// Flat `key = value` lines, `#` comments. Unknown keys are a FormatError.
/// When `lr` is absent it defaults to 0.03 for sgd_momentum, and to 0.0001
/// for fine-tuning. Fine-tuning also defaults to 50 epochs of 10 episodes.
TrainConfig parse_train_config(std::istream& in, ConfigPurpose purpose = ConfigPurpose::train);
TrainConfig load_train_config(const std::filesystem::path& path, ConfigPurpose purpose = ConfigPurpose::train);
/// Config text that parses back to `cfg`.
std::string format_train_config(const TrainConfig& cfg);

/// lr_min + (lr0 - lr_min) * (1 + cos(pi * t / T)) / 2 for 0 <= t <= T.
double cosine_anneal(double lr0, double lr_min, long long t, long long T);

class Optimizer {
public:
    Optimizer(const OptimizerConfig& cfg, std::size_t num_params);

    void step(Eigen::Ref<Vector> params, const Vector& grads, double lr);
    std::uint64_t steps() const { return steps_; }

private:
    OptimizerConfig cfg_;
    Vector m_;
    Vector v_;
    std::uint64_t steps_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_grad_norm = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
};

void write_train_report(const TrainReport& report, std::ostream& out);

struct EpisodeStats {
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    /// Flattened gradient applied this episode: model parameters, then head.
    Vector grad;
};

/// Initial checkpoint for cfg over D-dimensional input (head included when the mode uses one).
Checkpoint initial_checkpoint(const TrainConfig& cfg, int input_dim);

/// Owns the mutable parameters; one optimizer step per episode.
class Trainer {
public:
    using BatchSource = std::function<MiniBatch(Stream&)>;

    Trainer(TrainConfig cfg, Checkpoint start, BatchSource source, int threads = 1);

    /// One episode: minibatch, single forward, SES split, mode loss, backward, step.
    EpisodeStats run_episode(int epoch, int episode);
    TrainReport run();

    /// Current parameters (with metadata) as a checkpoint.
    Checkpoint checkpoint() const;
    std::uint64_t episodes_run() const { return episodes_; }
    std::uint64_t optimizer_steps() const { return optimizer_.steps(); }
    const TrainConfig& config() const { return cfg_; }

    /// Loss and flattened gradient for given views and tasks at the current
    /// parameters, without stepping. Exposed for gradient checks.
    EpisodeStats evaluate(const Matrix& views, const std::vector<Task>& tasks, const Stream& episode_rng) const;
    Vector flat_params() const { return flat_; }
    void set_flat_params(const Vector& flat);

private:
    void sync_from_flat();

    TrainConfig cfg_;
    Checkpoint state_;
    BatchSource source_;
    int threads_;
    Vector flat_;
    Optimizer optimizer_;
    std::uint64_t episodes_ = 0;
};

/// Unsupervised meta-training on `data` (labels, if any, are ignored).
std::pair<Checkpoint, TrainReport> train(const TrainConfig& cfg, const Dataset& data, int threads = 1);

/// Per class, keep ceil(ratio * rows) randomly chosen rows. Throws
/// ParameterError naming a class left with fewer than min_rows.
Dataset retain_label_fraction(const Dataset& data, double ratio, int min_rows, std::uint64_t seed);

/// C classes x per_class true-labeled rows, no augmentation; pseudo label =
/// position of the class in the batch.
MiniBatch make_labeled_batch(const Dataset& data, const std::vector<std::vector<int>>& rows_by_class, int C, int K,
                             int Q, Stream& rng);

/// Supervised episodic fine-tuning (SES + configured metric) from ckpt on a
/// label_ratio fraction of each class. The head section, if any, is carried
/// over unchanged.
Checkpoint finetune(const Checkpoint& ckpt, const Dataset& labeled, double label_ratio, const TrainConfig& cfg,
                    int threads = 1, TrainReport* report = nullptr);

}  // namespace umlab
