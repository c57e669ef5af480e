#pragma once

#include <array>
#include <optional>

#include "tfd/assignment.hpp"
#include "tfd/decoder.hpp"
#include "tfd/synth.hpp"

namespace tfd {

/// OSCC class index of "state change"; "no change" is 1.
inline constexpr std::size_t kOsccChange = 0;

/// Two-class cross-entropy, -log softmax(logits)[label].
Var oscc_loss(Var oscc_logits, bool state_change);

/// Target distribution over frames: one-hot at the state-change frame, uniform otherwise.
struct PnrTarget {
  Tensor dist;  // [T]
};

PnrTarget make_pnr_target(const ClipLabels& labels, std::size_t frames);

/// KL(target || softmax(logits)) with 0 log 0 = 0.
Var pnr_loss(Var pnr_logits, const PnrTarget& target);

/// Generalized IoU of two (cx, cy, w, h) boxes. Throws DomainError on zero-area boxes.
double giou(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);
/// Differentiable GIoU of a predicted box [4] against a fixed target.
Var giou(Var predicted, const Box& target);

struct ScodWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
};

/// g x 8 matching cost: cls * (-p_class) + l1 * |b - b^|_1 + giou * (1 - GIoU).
CostMatrix scod_cost_matrix(const std::vector<ScodQuery>& queries, const ClipLabels& labels,
                            const ScodWeights& w = {});

/// Plain-value prediction of one SCOD query.
struct ScodValue {
  std::vector<double> class_logits;
  Box box;
};

CostMatrix scod_cost_matrix(const std::vector<ScodValue>& queries, const ClipLabels& labels,
                            const ScodWeights& w = {});
ScodValue to_value(const ScodQuery& q);

/// Set-prediction loss over the eight queries. Matched queries pay
/// cross-entropy + l1 * L1 + giou * (1 - GIoU); unmatched queries pay
/// cross-entropy against no-object. The match is computed with hungarian()
/// unless `fixed_match` is given, and is reported through `match_out`.
/// Gradients do not flow through the match. Requires at least one box.
Var scod_loss(const std::vector<ScodQuery>& queries, const ClipLabels& labels,
              const Assignment* fixed_match = nullptr, Assignment* match_out = nullptr,
              const ScodWeights& w = {});

/// Uncertainty-weighted sum over enabled tasks:
///   sum_i exp(-s_i)/2 * L_i + regularizer_scale * 1/2 * sum_i s_i,  s_i = log sigma_i^2.
/// A task contributes its weighted term only when its loss is present, and its
/// regularizer only when it is enabled. `log_sigma2` has shape [3]
/// (oscc, pnr, scod).
Var joint_loss(const std::array<std::optional<Var>, 3>& losses, Var log_sigma2,
               const TaskSet& enabled, double regularizer_scale = 1.0);

}  // namespace tfd
