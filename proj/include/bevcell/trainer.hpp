#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bevcell/contrast.hpp"
#include "bevcell/encoder.hpp"
#include "bevcell/kitti_io.hpp"
#include "bevcell/point_cloud.hpp"

namespace bevcell::train {

/// Full pretraining configuration. JSON round trip uses these exact field
/// names (load_config / save_config).
struct TrainConfig {
    double lr_max = 1e-3;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int epochs = 1;
    int batch_size = 10;

    io::GapKind pairing = io::GapKind::Time;
    double delta_time = 0.7;   // seconds
    double delta_dist = 5.0;   // meters

    double cell_size = 0.2;    // b, meters
    int grid_size = 512;       // M
    double tau = 0.07;
    int n_samples = 4096;
    double occupancy_eps = 1e-6;
    contrast::AlignMode align_mode = contrast::AlignMode::Bilinear2D;

    std::uint64_t seed = 0;
    int hidden = 32;
    int dim = 16;
    bool center_input = false;
    double rate_hz = 10.0;     // timestamp synthesis when the data has no times file

    void validate() const;
};

TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& cfg);

/// One pretraining example: reference scan, second view, and the transform
/// registering b onto a.
struct PairSample {
    PointCloud a;
    PointCloud b;
    geom::RigidTransform rel;
};

/// AdamW first/second moments, shape-matched to the parameter list.
struct OptimizerState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::uint64_t step = 0;        // applied updates (bias correction)
    std::uint64_t sched_step = 0;  // schedule position (batches seen)
};

/// Decoupled-weight-decay Adam update, in place:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Initializes zero moments on first use; throws ContractError on shape
/// mismatch.
void adamw_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                OptimizerState& state, const TrainConfig& cfg, double lr);

/// lr = 0.5 * lr_max * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max);

struct StepRecord {
    std::uint64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    Index n_cells = 0;  // sampled (qualifying) cells across the batch
};

struct PretrainResult {
    enc::EncoderParams params;
    OptimizerState opt;
    std::vector<StepRecord> metrics;
    Index pairs_skipped = 0;
};

/// Checkpoint of a run in progress, for resuming.
struct ResumePoint {
    enc::EncoderParams params;
    OptimizerState opt;
};

/// One pair pushed through the full pipeline:
/// encode -> pool -> align -> sample -> loss (-> backward).
struct PairEvaluation {
    double loss = 0.0;
    Index n_cells = 0;
    std::vector<Matrix> grads;  // weights then biases; empty unless requested
};

/// Evaluate the pipeline on one pair. Cell sampling is driven by sample_seed
/// alone, so repeated calls (e.g. under parameter perturbation for finite
/// differences) contrast the same cells. Throws EmptyOverlapError when no
/// cell qualifies.
PairEvaluation evaluate_pair(const enc::EncoderParams& params, const PairSample& pair,
                             const TrainConfig& cfg, std::uint64_t sample_seed,
                             bool with_grad);

using EpochCallback =
    std::function<void(int epoch, const enc::EncoderParams&, const OptimizerState&)>;

/// The pretraining loop: per pair, encode both scans, pool both grids,
/// align per cfg.align_mode, sample cells and evaluate the contrastive
/// loss; gradients are averaged over the batch and applied with AdamW under
/// the cosine schedule. Pairs with empty overlap are skipped with a warning;
/// a run in which every pair is degenerate throws RunError. Bit-deterministic
/// in (pairs, cfg). on_epoch, when set, fires after each epoch (used for
/// checkpointing); resume continues a run from a saved (params, optimizer)
/// point at the epoch boundary encoded in its schedule step.
PretrainResult pretrain(const std::vector<PairSample>& pairs, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {},
                        const ResumePoint* resume = nullptr);

/// Metrics CSV: "#"-prefixed provenance echoing every numeric knob, a header
/// row, then one row per optimizer step. Fixed %.17g formatting keeps
/// identical runs byte-identical.
void write_metrics_csv(const std::filesystem::path& path, const TrainConfig& cfg,
                       const std::vector<StepRecord>& metrics);

/// Encoder checkpoint extended with an optimizer section (magic "ADMW",
/// step counter, then the moment tensors in layer order).
void save_train_checkpoint(const std::filesystem::path& path,
                           const enc::EncoderParams& params, const OptimizerState& opt);
void load_train_checkpoint(const std::filesystem::path& path,
                           enc::EncoderParams& params, OptimizerState& opt);

/// Assemble PairSamples from a KITTI-layout directory (velodyne/*.bin,
/// poses.txt, optional times.txt / calib.txt) per the config's pairing mode.
std::vector<PairSample> load_pair_dataset(const std::filesystem::path& data_dir,
                                          const TrainConfig& cfg);

/// End-to-end entry used by the CLI: load the dataset, pretrain, write
/// metrics.csv, per-epoch checkpoints and encoder_final.bin into out_dir.
/// resume_from, when given, restarts from that training checkpoint.
PretrainResult run_pretrain(const std::filesystem::path& data_dir,
                            const TrainConfig& cfg,
                            const std::filesystem::path& out_dir,
                            const std::optional<std::filesystem::path>& resume_from = {});

}  // namespace bevcell::train
