#include "tfd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace tfd {

Var oscc_loss(Var oscc_logits, bool state_change) {
  if (oscc_logits.size() != 2) {
    throw DimensionError("OSCC logits must have 2 entries, got " + shape_str(oscc_logits.shape()));
  }
  return neg(pick(log_softmax(oscc_logits), state_change ? kOsccChange : 1 - kOsccChange));
}

PnrTarget make_pnr_target(const ClipLabels& labels, std::size_t frames) {
  if (frames == 0) throw ContractError("PNR target needs at least one frame");
  PnrTarget target{Tensor({frames}, 0.0)};
  if (labels.state_change) {
    if (!labels.pnr_frame) throw LabelError("state-change clip without pnr_frame");
    if (*labels.pnr_frame >= frames) {
      throw LabelError("pnr_frame " + std::to_string(*labels.pnr_frame) + " >= T = " +
                       std::to_string(frames));
    }
    target.dist[*labels.pnr_frame] = 1.0;
  } else {
    std::fill(target.dist.data().begin(), target.dist.data().end(),
              1.0 / static_cast<double>(frames));
  }
  return target;
}

Var pnr_loss(Var pnr_logits, const PnrTarget& target) {
  if (pnr_logits.size() != target.dist.size()) {
    throw DimensionError("PNR logits " + shape_str(pnr_logits.shape()) + " vs target " +
                         shape_str(target.dist.shape()));
  }
  Graph& g = *pnr_logits.graph;
  double neg_entropy = 0.0;
  for (double d : target.dist.data()) {
    if (d > 0.0) neg_entropy += d * std::log(d);
  }
  Var dist = g.constant(target.dist.reshaped(pnr_logits.shape()));
  Var cross = sum(mul(dist, log_softmax(pnr_logits)));
  return add_scalar(neg(cross), neg_entropy);
}

namespace {

struct Corners {
  double x0, y0, x1, y1;
};

Corners corners(const Box& b) {
  if (!(b.w > 0.0 && b.h > 0.0)) throw DomainError("degenerate box (non-positive extent)");
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

// Areas come from the corners so that identical boxes overlap exactly.
double area(const Corners& c) { return (c.x1 - c.x0) * (c.y1 - c.y0); }

}  // namespace

double iou(const Box& a, const Box& b) {
  const Corners p = corners(a), q = corners(b);
  const double iw = std::max(0.0, std::min(p.x1, q.x1) - std::max(p.x0, q.x0));
  const double ih = std::max(0.0, std::min(p.y1, q.y1) - std::max(p.y0, q.y0));
  const double inter = iw * ih;
  return inter / (area(p) + area(q) - inter);
}

double giou(const Box& a, const Box& b) {
  const Corners p = corners(a), q = corners(b);
  const double iw = std::max(0.0, std::min(p.x1, q.x1) - std::max(p.x0, q.x0));
  const double ih = std::max(0.0, std::min(p.y1, q.y1) - std::max(p.y0, q.y0));
  const double inter = iw * ih;
  const double uni = area(p) + area(q) - inter;
  const double hull = (std::max(p.x1, q.x1) - std::min(p.x0, q.x0)) *
                      (std::max(p.y1, q.y1) - std::min(p.y0, q.y0));
  return inter / uni - (hull - uni) / hull;
}

Var giou(Var predicted, const Box& target) {
  if (predicted.size() != 4) throw DimensionError("box must have 4 entries");
  const Corners q = corners(target);
  Graph& g = *predicted.graph;
  auto c = [&](double v) { return g.constant(Tensor::scalar(v)); };
  Var cx = pick(predicted, 0), cy = pick(predicted, 1), w = pick(predicted, 2), h = pick(predicted, 3);
  Var x0 = cx - 0.5 * w, x1 = cx + 0.5 * w, y0 = cy - 0.5 * h, y1 = cy + 0.5 * h;
  Var zero = c(0.0);
  Var iw = maximum(minimum(x1, c(q.x1)) - maximum(x0, c(q.x0)), zero);
  Var ih = maximum(minimum(y1, c(q.y1)) - maximum(y0, c(q.y0)), zero);
  Var inter = iw * ih;
  Var uni = ((x1 - x0) * (y1 - y0) + area(q)) - inter;
  Var hull = (maximum(x1, c(q.x1)) - minimum(x0, c(q.x0))) *
             (maximum(y1, c(q.y1)) - minimum(y0, c(q.y0)));
  return inter / uni - (hull - uni) / hull;
}

namespace {

Box box_of(Var v) {
  auto b = v.value();
  return {b[0], b[1], b[2], b[3]};
}

double class_prob(std::span<const double> l, std::size_t cls) {
  const double mx = *std::max_element(l.begin(), l.end());
  double z = 0.0;
  for (double x : l) z += std::exp(x - mx);
  return std::exp(l[cls] - mx) / z;
}

double l1(const Box& a, const Box& b) {
  return std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) +
         std::fabs(a.h - b.h);
}

}  // namespace

ScodValue to_value(const ScodQuery& q) {
  auto l = q.class_logits.value();
  return {std::vector<double>(l.begin(), l.end()), box_of(q.box)};
}

CostMatrix scod_cost_matrix(const std::vector<ScodValue>& queries, const ClipLabels& labels,
                            const ScodWeights& w) {
  CostMatrix m(labels.boxes.size(), queries.size());
  for (std::size_t r = 0; r < labels.boxes.size(); ++r) {
    const auto& gt = labels.boxes[r];
    for (std::size_t c = 0; c < queries.size(); ++c) {
      const Box& pred = queries[c].box;
      m.at(r, c) = w.cls * -class_prob(queries[c].class_logits, static_cast<std::size_t>(gt.cls)) +
                   w.l1 * l1(pred, gt.box) + w.giou * (1.0 - giou(pred, gt.box));
    }
  }
  return m;
}

CostMatrix scod_cost_matrix(const std::vector<ScodQuery>& queries, const ClipLabels& labels,
                            const ScodWeights& w) {
  std::vector<ScodValue> values;
  values.reserve(queries.size());
  for (const auto& q : queries) values.push_back(to_value(q));
  return scod_cost_matrix(values, labels, w);
}

Var scod_loss(const std::vector<ScodQuery>& queries, const ClipLabels& labels,
              const Assignment* fixed_match, Assignment* match_out, const ScodWeights& w) {
  if (labels.boxes.empty()) throw ContractError("SCOD loss needs at least one labeled box");
  if (queries.empty()) throw ContractError("SCOD loss needs predictions");
  Assignment match = fixed_match ? *fixed_match : hungarian(scod_cost_matrix(queries, labels, w));
  if (match.pairs.size() != labels.boxes.size()) {
    throw ContractError("match does not cover every labeled box");
  }
  std::vector<int> target_of(queries.size(), -1);
  for (const auto& [r, c] : match.pairs) target_of[c] = static_cast<int>(r);

  std::vector<Var> terms;
  terms.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    Var logp = log_softmax(queries[q].class_logits);
    if (target_of[q] < 0) {
      terms.push_back(neg(pick(logp, static_cast<std::size_t>(BoxClass::no_object))));
      continue;
    }
    const LabeledBox& gt = labels.boxes[static_cast<std::size_t>(target_of[q])];
    Graph& g = *queries[q].box.graph;
    Var target = g.constant(Tensor({4}, {gt.box.cx, gt.box.cy, gt.box.w, gt.box.h}));
    Var ce = neg(pick(logp, static_cast<std::size_t>(gt.cls)));
    Var box_l1 = sum(abs(queries[q].box - target));
    Var giou_term = add_scalar(neg(giou(queries[q].box, gt.box)), 1.0);
    terms.push_back(ce + w.l1 * box_l1 + w.giou * giou_term);
  }
  if (match_out) *match_out = std::move(match);
  return sum(stack(terms));
}

Var joint_loss(const std::array<std::optional<Var>, 3>& losses, Var log_sigma2,
               const TaskSet& enabled, double regularizer_scale) {
  if (log_sigma2.size() != 3) throw DimensionError("log_sigma2 must have 3 entries");
  const bool on[3] = {enabled.oscc, enabled.pnr, enabled.scod};
  std::vector<Var> terms;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    Var s = pick(log_sigma2, i);
    if (losses[i]) {
      if (!std::isfinite(losses[i]->item())) throw NumericError("non-finite task loss");
      terms.push_back(mul(scale(exp(neg(s)), 0.5), *losses[i]));
    }
    terms.push_back(scale(s, 0.5 * regularizer_scale));
  }
  if (terms.empty()) throw ConfigError("joint loss with no enabled task");
  return sum(stack(terms));
}

}  // namespace tfd
