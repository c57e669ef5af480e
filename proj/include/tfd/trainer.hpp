#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tfd/losses.hpp"
#include "tfd/model.hpp"
#include "tfd/synth.hpp"

namespace tfd {

// ---- optimizer ---------------------------------------------------------------

/// Adam (no weight decay) with bias correction.
struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

/// Updates every trainable parameter from its gradient, then zeroes the
/// gradients. Throws ContractError if a trainable parameter has no gradient buffer.
void adam_step(ParamStore& store, AdamState& state);

// ---- training ----------------------------------------------------------------

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  TaskSet tasks;
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  std::size_t step = 0;  // 1-based
  double loss_total = 0.0;
  std::array<std::optional<double>, 3> task_loss;  // batch means (oscc, pnr, scod)
  std::array<std::optional<double>, 3> sigma2;     // exp(s_i) of enabled tasks
};

/// Called after the backward pass of each step, before the optimizer update,
/// so gradients can be inspected.
using StepObserver = std::function<void(std::size_t step, const ParamStore& params)>;

/// Seeded Fisher-Yates batch sampler: each epoch draws a fresh permutation of
/// the dataset from derive_seed(seed, "shuffle") and the epoch index.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  void reshuffle();

  std::size_t size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Joint fine-tuning of encoder, decoder and loss weights. Per step: sample a
/// batch, encode, decode with ground-truth keyframes, average each enabled
/// task loss over the clips it applies to (SCOD: state-change clips only),
/// combine with the uncertainty weighting, backpropagate, take an Adam step.
/// Throws NumericError naming the step and clip seed on a non-finite loss.
std::vector<TrainLogRow> train(Model& model, const std::vector<DatasetRecord>& data,
                               const TrainConfig& config, const StepObserver& observer = {});

/// Loss graph of one clip: encode, decode with the ground-truth keyframe and
/// combine the enabled task losses. Task loss i is multiplied by
/// `task_scale[i]` before weighting and the sigma regularizer by
/// `regularizer_scale`, which lets per-clip graphs sum to a batch mean.
struct ClipLossTerms {
  Var total;
  std::array<std::optional<Var>, 3> task_loss;  // unscaled
  Assignment match;                             // SCOD match, empty without SCOD
};

ClipLossTerms clip_loss(Graph& g, Model& model, const Tensor& frames, const ClipLabels& labels,
                        const TaskSet& tasks, const std::array<double, 3>& task_scale = {1, 1, 1},
                        double regularizer_scale = 1.0, const Assignment* fixed_match = nullptr);

// ---- evaluation ----------------------------------------------------------------

struct EvalReport {
  std::size_t clips = 0;
  std::size_t change_clips = 0;
  std::optional<double> oscc_accuracy;
  std::optional<double> pnr_error_frames;
  std::optional<double> pnr_error_seconds;
  std::optional<double> scod_mean_iou;
  std::array<std::optional<double>, 3> loss_mean;
};

/// Plain-value predictions of one clip.
struct ClipPrediction {
  std::optional<std::vector<double>> oscc_logits;
  std::optional<std::vector<double>> pnr_logits;
  std::vector<ScodValue> scod;
};

ClipPrediction to_values(const TaskPredictions& p);

/// Accumulates metrics clip by clip.
class EvalAccumulator {
 public:
  void add(const ClipPrediction& prediction, const ClipLabels& labels, std::size_t frames,
           double clip_duration_seconds);
  void add_losses(const std::array<std::optional<double>, 3>& losses);
  EvalReport report() const;

 private:
  std::size_t clips_ = 0;
  std::size_t change_clips_ = 0;
  std::size_t oscc_seen_ = 0;
  std::size_t oscc_correct_ = 0;
  std::size_t pnr_seen_ = 0;
  double pnr_error_sum_ = 0.0;
  double pnr_seconds_sum_ = 0.0;
  std::size_t scod_seen_ = 0;
  double iou_sum_ = 0.0;
  std::array<double, 3> loss_sum_{};
  std::array<std::size_t, 3> loss_count_{};
};

/// OSCC accuracy, PNR frame / second error and SCOD matched IoU with
/// inference-mode keyframes (argmax of PNR logits).
EvalReport evaluate(Model& model, const std::vector<DatasetRecord>& data);

// ---- checkpoints ---------------------------------------------------------------
//
// One UTF-8 JSON header line {name: {"shape": [...], "byte_offset": n}, ...}
// (plus a reserved "__meta__" entry), followed by the little-endian float64
// payload of every parameter in header order.

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     const std::string& meta_json = "{}");

struct Checkpoint {
  ParamStore params;
  std::string meta_json;
};

/// Throws CorruptionError when the payload length disagrees with the header.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- CSV -----------------------------------------------------------------------

/// "step,loss_total,loss_oscc,loss_pnr,loss_scod,sigma2_1,sigma2_2,sigma2_3" rows;
/// disabled tasks leave empty fields.
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows,
                     const std::string& header_comment);
/// "metric,value" rows.
void write_eval_report(const std::filesystem::path& path, const EvalReport& report,
                       const std::string& header_comment);
void write_eval_report(std::ostream& out, const EvalReport& report,
                       const std::string& header_comment);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace tfd
