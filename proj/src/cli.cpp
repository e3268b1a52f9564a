#include "umlab/cli.hpp"

#include "umlab/checkpoint.hpp"
#include "umlab/datahub.hpp"
#include "umlab/evalkit.hpp"
#include "umlab/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace umlab::cli {

namespace {

struct SynthArgs {
    std::string out;
    int clusters = 0;
    int per = 0;
    int dim = 0;
    std::uint64_t seed = 0;
    double sep = 4.0;
    double noise = 1.0;
    int holdout = 0;
    std::string holdout_out;
};

struct TrainArgs {
    std::string config, data, out, report;
};

struct EvalArgs {
    std::string ckpt, data, report;
    int way = 5;
    int shot = 1;
    int query = 15;
    int tasks = 10000;
    std::string metric = "sns";
    double tau = 0.5;
    std::uint64_t seed = 0;
};

struct ProbeArgs {
    std::string ckpt, data;
    int folds = 10;
    std::uint64_t seed = 0;
};

struct FinetuneArgs {
    std::string ckpt, data, config, out;
    double ratio = 0.1;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
    if (a.holdout < 0 || a.holdout >= a.clusters) throw ParameterError("--holdout must be in [0, clusters)");
    if (a.holdout > 0 && a.holdout_out.empty()) throw ParameterError("--holdout requires --holdout-out");
    const Dataset all = synth_generate(a.clusters, a.per, a.dim, a.sep, a.noise, a.seed);
    if (a.holdout == 0) {
        save_dataset(all, a.out);
        out << "wrote " << all.rows() << " rows to " << a.out << '\n';
        return 0;
    }
    std::vector<int> base(static_cast<std::size_t>(a.clusters - a.holdout));
    std::vector<int> novel(static_cast<std::size_t>(a.holdout));
    std::iota(base.begin(), base.end(), 0);
    std::iota(novel.begin(), novel.end(), a.clusters - a.holdout);
    const Dataset b = select_classes(all, base);
    const Dataset n = select_classes(all, novel);
    save_dataset(b, a.out);
    save_dataset(n, a.holdout_out);
    out << "wrote " << b.rows() << " rows to " << a.out << " and " << n.rows() << " rows to " << a.holdout_out << '\n';
    return 0;
}

int do_train(const TrainArgs& a, int threads, std::ostream& out) {
    const TrainConfig cfg = load_train_config(a.config);
    const Dataset data = load_dataset(a.data);
    const auto [ckpt, report] = train(cfg, data, threads);
    save_checkpoint(ckpt, a.out);
    if (!a.report.empty()) {
        std::ofstream r(a.report, std::ios::binary);
        if (!r) throw FormatError("cannot write " + a.report);
        write_train_report(report, r);
    } else {
        write_train_report(report, out);
    }
    return 0;
}

int do_eval(const EvalArgs& a, int threads, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Dataset data = load_dataset(a.data);
    const MetricSpec metric = MetricSpec::parse(a.metric, a.tau);
    const EvalReport r = evaluate_fsl(ckpt, data, a.way, a.shot, a.query, a.tasks, metric, a.seed, threads);
    if (!a.report.empty()) write_report(r, a.report);
    out << format_report(r);
    return 0;
}

int do_probe(const ProbeArgs& a, int threads, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Dataset data = load_dataset(a.data);
    ProbeConfig cfg;
    cfg.folds = a.folds;
    const double acc = linear_probe(ckpt, data, cfg, a.seed, threads);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", acc);
    out << "probe_accuracy: " << buf << '\n';
    return 0;
}

int do_finetune(const FinetuneArgs& a, int threads, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Dataset data = load_dataset(a.data);
    const TrainConfig cfg = load_train_config(a.config, ConfigPurpose::finetune);
    TrainReport report;
    const Checkpoint tuned = finetune(ckpt, data, a.ratio, cfg, threads, &report);
    save_checkpoint(tuned, a.out);
    write_train_report(report, out);
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Unsupervised meta-learning toolkit", "umlab"};
    app.require_subcommand(1, 1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a Gaussian-cluster dataset");
    synth->add_option("--out", sa.out)->required();
    synth->add_option("--clusters", sa.clusters)->required()->check(CLI::PositiveNumber);
    synth->add_option("--per", sa.per)->required()->check(CLI::PositiveNumber);
    synth->add_option("--dim", sa.dim)->required()->check(CLI::PositiveNumber);
    synth->add_option("--seed", sa.seed)->required();
    synth->add_option("--sep", sa.sep, "Cluster center range")->capture_default_str();
    synth->add_option("--noise", sa.noise, "Per-coordinate noise std")->capture_default_str();
    synth->add_option("--holdout", sa.holdout, "Write the last n clusters to --holdout-out");
    synth->add_option("--holdout-out", sa.holdout_out);

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Unsupervised meta-training");
    trn->add_option("--config", ta.config)->required();
    trn->add_option("--data", ta.data)->required();
    trn->add_option("--out", ta.out)->required();
    trn->add_option("--report", ta.report, "Per-epoch log (stdout if omitted)");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Few-shot meta-test evaluation");
    ev->add_option("--ckpt", ea.ckpt)->required();
    ev->add_option("--data", ea.data)->required();
    ev->add_option("--way", ea.way)->capture_default_str();
    ev->add_option("--shot", ea.shot)->capture_default_str();
    ev->add_option("--query", ea.query)->capture_default_str();
    ev->add_option("--tasks", ea.tasks)->capture_default_str();
    ev->add_option("--metric", ea.metric)->capture_default_str();
    ev->add_option("--tau", ea.tau, "Cosine temperature")->capture_default_str();
    ev->add_option("--seed", ea.seed)->capture_default_str();
    ev->add_option("--report", ea.report);

    ProbeArgs pa;
    auto* pr = app.add_subcommand("probe", "Linear probe on frozen embeddings");
    pr->add_option("--ckpt", pa.ckpt)->required();
    pr->add_option("--data", pa.data)->required();
    pr->add_option("--folds", pa.folds)->capture_default_str();
    pr->add_option("--seed", pa.seed)->capture_default_str();

    FinetuneArgs fa;
    auto* ft = app.add_subcommand("finetune", "Supervised episodic fine-tuning");
    ft->add_option("--ckpt", fa.ckpt)->required();
    ft->add_option("--data", fa.data)->required();
    ft->add_option("--ratio", fa.ratio)->capture_default_str();
    ft->add_option("--config", fa.config)->required();
    ft->add_option("--out", fa.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return do_synth(sa, out);
        if (*trn) return do_train(ta, threads, out);
        if (*ev) return do_eval(ea, threads, out);
        if (*pr) return do_probe(pa, threads, out);
        return do_finetune(fa, threads, out);
    } catch (const ParameterError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace umlab::cli
