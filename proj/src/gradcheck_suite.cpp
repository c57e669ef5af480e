#include "tfd/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <memory>

#include "tfd/attention.hpp"
#include "tfd/losses.hpp"
#include "tfd/model.hpp"
#include "tfd/rng.hpp"
#include "tfd/trainer.hpp"

namespace tfd {

namespace {

// Inputs live in a ParamStore so pointers stay valid while the builder runs.
struct Case {
  ParamStore store;
  LossBuilder loss;
  std::vector<std::unique_ptr<Model>> models;
  double eps = 1e-5;
  double tol = 1e-4;

  std::vector<GradCheckInput> inputs() {
    std::vector<GradCheckInput> out;
    for (auto& e : store) out.push_back({e.name, &e.tensor});
    return out;
  }
};

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Values with |v| in [lo, hi] and random sign, away from kinks at zero.
Tensor away_from_zero(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, hi);
  return t;
}

/// Scalar readout sum(out * w) with fixed random weights.
Var readout(Var out, Rng& rng) {
  Graph& g = *out.graph;
  return sum(mul(out, g.constant(uniform(rng, out.shape(), -1.0, 1.0))));
}

using UnaryOp = Var (*)(Var);

void unary_case(Case& c, Rng& rng, UnaryOp op, Tensor x) {
  c.store.add("x", std::move(x));
  const std::uint64_t s = rng.next();
  c.loss = [&c, op, s](Graph& g) {
    Rng r(s);
    return readout(op(g.param(c.store.at("x"))), r);
  };
}

using BinaryOp = Var (*)(Var, Var);

void binary_case(Case& c, Rng& rng, BinaryOp op, Tensor a, Tensor b) {
  c.store.add("a", std::move(a));
  c.store.add("b", std::move(b));
  const std::uint64_t s = rng.next();
  c.loss = [&c, op, s](Graph& g) {
    Rng r(s);
    return readout(op(g.param(c.store.at("a")), g.param(c.store.at("b"))), r);
  };
}

/// Unary structural op given as a closure over the input Var.
void shape_case(Case& c, Rng& rng, Tensor x, std::function<Var(Var)> op) {
  c.store.add("x", std::move(x));
  const std::uint64_t s = rng.next();
  c.loss = [&c, op, s](Graph& g) {
    Rng r(s);
    return readout(op(g.param(c.store.at("x"))), r);
  };
}

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.1, 0.4), h = rng.uniform(0.1, 0.4);
  return {rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
}

ClipLabels random_change_labels(Rng& rng, std::size_t frames) {
  ClipLabels l;
  l.state_change = true;
  l.pnr_frame = static_cast<std::size_t>(rng.below(frames));
  l.boxes.push_back({BoxClass::hand, random_box(rng)});
  if (rng.bernoulli(0.5)) l.boxes.push_back({BoxClass::object, random_box(rng)});
  return l;
}

ModelConfig tiny_config(EncoderKind kind) {
  ModelConfig m;
  m.encoder.kind = kind;
  m.encoder.height = 8;
  m.encoder.width = 8;
  m.encoder.grid = 2;
  m.encoder.model_width = 8;
  m.encoder.heads = 2;
  m.encoder.conv_channels = 4;
  m.encoder.adapter_hidden = 8;
  m.decoder.layers = 2;
  m.decoder.width = 8;
  m.decoder.heads = 2;
  m.decoder.frames = 4;
  m.decoder.patches = 4;
  m.decoder.mlp_hidden = 8;
  return m;
}

/// Central differences carry forward-pass roundoff of a few ulp(L), divided
/// by 2 eps. A non-zero analytic gradient below that noise over `tol` cannot
/// be resolved, so such draws are rejected (exact zeros are still checked).
bool resolvable(const LossBuilder& f, ParamStore& params, double eps, double tol) {
  params.set_trainable(true);
  params.zero_grads();
  double loss = 0.0;
  {
    Graph g;
    Var l = f(g);
    loss = l.item();
    g.backward(l);
  }
  const double ulp = std::nextafter(std::fabs(loss), INFINITY) - std::fabs(loss);
  const double floor = 8.0 * ulp / (2.0 * eps) / tol;
  bool ok = true;
  for (auto& e : params) {
    for (double v : e.tensor.grad()) {
      if (v != 0.0 && std::fabs(v) < floor) ok = false;
    }
  }
  params.zero_grads();
  return ok;
}

/// Joint loss through encode + decode of a random tiny clip; every model
/// parameter is checked with the Hungarian match held fixed. Draws are
/// repeated until every non-zero gradient is resolvable.
void decode_case(Case& c, Rng& rng, EncoderKind kind) {
  const TaskSet all = TaskSet::parse("oscc,pnr,scod");
  for (int attempt = 0; attempt < 200; ++attempt) {
    auto model = std::make_unique<Model>(tiny_config(kind), rng.next());
    // Unit-scale task tokens: with the 0.02 init, first-layer self-attention
    // gradients sit near 1e-7.
    for (double& v : model->params().at("dec.tokens").data()) v = rng.normal();
    for (double& v : model->log_sigma2().data()) v = rng.uniform(-0.5, 0.5);
    const std::size_t T = model->config().decoder.frames;
    auto frames = std::make_shared<Tensor>(uniform(rng, {T, 8, 8, 3}, 0.0, 1.0));
    auto labels = std::make_shared<ClipLabels>(random_change_labels(rng, T));
    Model* m = model.get();
    Assignment match;
    {
      Graph g;
      match = clip_loss(g, *m, *frames, *labels, all).match;
    }
    auto fixed = std::make_shared<Assignment>(match);
    LossBuilder loss = [m, frames, labels, fixed, all](Graph& g) {
      return clip_loss(g, *m, *frames, *labels, all, {1, 1, 1}, 1.0, fixed.get()).total;
    };
    if (!resolvable(loss, m->params(), c.eps, c.tol)) continue;
    c.models.push_back(std::move(model));
    c.loss = std::move(loss);
    return;
  }
  throw StateError("no well-conditioned decode point in 200 draws");
}

using Builder = std::function<void(Case&, Rng&)>;

const std::vector<std::pair<std::string, Builder>>& registry() {
  static const std::vector<std::pair<std::string, Builder>> cases = {
      {"matmul", [](Case& c, Rng& r) {
         binary_case(c, r, matmul, uniform(r, {3, 4}, -1, 1), uniform(r, {4, 2}, -1, 1));
       }},
      {"transpose", [](Case& c, Rng& r) { unary_case(c, r, transpose, uniform(r, {3, 4}, -1, 1)); }},
      {"add", [](Case& c, Rng& r) {
         binary_case(c, r, add, uniform(r, {3, 4}, -1, 1), uniform(r, {3, 4}, -1, 1));
       }},
      {"add_broadcast", [](Case& c, Rng& r) {
         binary_case(c, r, add, uniform(r, {3, 4}, -1, 1), uniform(r, {1}, -1, 1));
       }},
      {"sub", [](Case& c, Rng& r) {
         binary_case(c, r, sub, uniform(r, {3, 4}, -1, 1), uniform(r, {3, 4}, -1, 1));
       }},
      {"mul", [](Case& c, Rng& r) {
         binary_case(c, r, mul, uniform(r, {3, 4}, -1, 1), uniform(r, {3, 4}, -1, 1));
       }},
      {"mul_broadcast", [](Case& c, Rng& r) {
         binary_case(c, r, mul, uniform(r, {1}, -1, 1), uniform(r, {3, 4}, -1, 1));
       }},
      {"div", [](Case& c, Rng& r) {
         binary_case(c, r, div, uniform(r, {3, 4}, -1, 1), away_from_zero(r, {3, 4}, 0.5, 2.0));
       }},
      {"minimum", [](Case& c, Rng& r) {
         Tensor a = uniform(r, {3, 4}, -1, 1);
         Tensor b = a;
         for (double& v : b.data()) v += (r.bernoulli(0.5) ? 1 : -1) * r.uniform(0.05, 1.0);
         binary_case(c, r, minimum, std::move(a), std::move(b));
       }},
      {"maximum", [](Case& c, Rng& r) {
         Tensor a = uniform(r, {3, 4}, -1, 1);
         Tensor b = a;
         for (double& v : b.data()) v += (r.bernoulli(0.5) ? 1 : -1) * r.uniform(0.05, 1.0);
         binary_case(c, r, maximum, std::move(a), std::move(b));
       }},
      {"scale", [](Case& c, Rng& r) {
         const double k = r.uniform(-2, 2);
         shape_case(c, r, uniform(r, {3, 4}, -1, 1), [k](Var x) { return scale(x, k); });
       }},
      {"add_scalar", [](Case& c, Rng& r) {
         const double k = r.uniform(-2, 2);
         shape_case(c, r, uniform(r, {3, 4}, -1, 1), [k](Var x) { return add_scalar(x, k); });
       }},
      {"neg", [](Case& c, Rng& r) { unary_case(c, r, neg, uniform(r, {3, 4}, -1, 1)); }},
      {"relu", [](Case& c, Rng& r) { unary_case(c, r, relu, away_from_zero(r, {3, 4}, 0.05, 1)); }},
      {"gelu", [](Case& c, Rng& r) { unary_case(c, r, gelu, uniform(r, {4, 5}, -3, 3)); }},
      {"exp", [](Case& c, Rng& r) { unary_case(c, r, exp, uniform(r, {3, 4}, -2, 2)); }},
      {"log", [](Case& c, Rng& r) { unary_case(c, r, log, uniform(r, {3, 4}, 0.2, 3)); }},
      {"sigmoid", [](Case& c, Rng& r) { unary_case(c, r, sigmoid, uniform(r, {3, 4}, -4, 4)); }},
      {"abs", [](Case& c, Rng& r) { unary_case(c, r, abs, away_from_zero(r, {3, 4}, 0.05, 1)); }},
      {"square", [](Case& c, Rng& r) { unary_case(c, r, square, uniform(r, {3, 4}, -2, 2)); }},
      {"sum", [](Case& c, Rng& r) { unary_case(c, r, sum, uniform(r, {3, 4}, -1, 1)); }},
      {"mean", [](Case& c, Rng& r) { unary_case(c, r, mean, uniform(r, {3, 4}, -1, 1)); }},
      {"softmax_rows", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {3, 5}, -2, 2), [](Var x) { return softmax(x, 1); });
       }},
      {"softmax_cols", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {3, 5}, -2, 2), [](Var x) { return softmax(x, 0); });
       }},
      {"log_softmax", [](Case& c, Rng& r) { unary_case(c, r, log_softmax, uniform(r, {3, 5}, -2, 2)); }},
      {"layer_norm", [](Case& c, Rng& r) {
         c.store.add("x", uniform(r, {4, 6}, -2, 2));
         c.store.add("gain", uniform(r, {6}, 0.5, 1.5));
         c.store.add("bias", uniform(r, {6}, -0.5, 0.5));
         const std::uint64_t s = r.next();
         c.loss = [&c, s](Graph& g) {
           Rng rr(s);
           return readout(layer_norm(g.param(c.store.at("x")), g.param(c.store.at("gain")),
                                     g.param(c.store.at("bias"))),
                          rr);
         };
       }},
      {"reshape", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {3, 4}, -1, 1), [](Var x) { return reshape(x, {2, 6}); });
       }},
      {"add_bias", [](Case& c, Rng& r) {
         binary_case(c, r, add_bias, uniform(r, {3, 4}, -1, 1), uniform(r, {4}, -1, 1));
       }},
      {"gather_rows", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {5, 3}, -1, 1),
                    [](Var x) { return gather_rows(x, {0, 2, 2, 4}); });
       }},
      {"slice_rows", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {5, 3}, -1, 1), [](Var x) { return slice_rows(x, 1, 4); });
       }},
      {"concat_rows", [](Case& c, Rng& r) {
         binary_case(c, r,
                     [](Var a, Var b) {
                       const Var parts[] = {a, b};
                       return concat_rows(parts);
                     },
                     uniform(r, {2, 3}, -1, 1), uniform(r, {3, 3}, -1, 1));
       }},
      {"pool_rows", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {6, 3}, -1, 1), [](Var x) { return pool_rows(x, 2); });
       }},
      {"pick_stack", [](Case& c, Rng& r) {
         shape_case(c, r, uniform(r, {5}, -1, 1), [](Var x) {
           const Var parts[] = {pick(x, 3), pick(x, 0), pick(x, 3)};
           return stack(parts);
         });
       }},
      {"multi_head_attention", [](Case& c, Rng& r) {
         c.store.add("q", uniform(r, {4, 8}, -1, 1));
         c.store.add("k", uniform(r, {6, 8}, -1, 1));
         c.store.add("v", uniform(r, {6, 8}, -1, 1));
         const std::uint64_t s = r.next();
         c.loss = [&c, s](Graph& g) {
           Rng rr(s);
           return readout(multi_head_attention(g.param(c.store.at("q")), g.param(c.store.at("k")),
                                               g.param(c.store.at("v")), 2),
                          rr);
         };
       }},
      {"multi_head_attention_grouped", [](Case& c, Rng& r) {
         c.store.add("x", uniform(r, {6, 8}, -1, 1));
         const std::uint64_t s = r.next();
         c.loss = [&c, s](Graph& g) {
           Rng rr(s);
           Var x = g.param(c.store.at("x"));
           return readout(multi_head_attention(x, x, x, 4, 2), rr);
         };
       }},
      {"self_attention", [](Case& c, Rng& r) {
         c.store.add("tokens", uniform(r, {5, 8}, -1, 1));
         AttentionParams::create(c.store, "sa", 8, 2, r);
         const std::uint64_t s = r.next();
         c.loss = [&c, s](Graph& g) {
           Rng rr(s);
           const auto p = AttentionParams::bind(c.store, "sa", 2);
           return readout(self_attention(g.param(c.store.at("tokens")), p), rr);
         };
       }},
      {"cross_attention", [](Case& c, Rng& r) {
         c.store.add("memory", uniform(r, {6, 8}, -1, 1));
         c.store.add("queries", uniform(r, {3, 8}, -1, 1));
         AttentionParams::create(c.store, "ca", 8, 2, r);
         const std::uint64_t s = r.next();
         c.loss = [&c, s](Graph& g) {
           Rng rr(s);
           const auto p = AttentionParams::bind(c.store, "ca", 2);
           return readout(cross_attention(g.param(c.store.at("memory")),
                                          g.param(c.store.at("queries")), p),
                          rr);
         };
       }},
      {"oscc_loss", [](Case& c, Rng& r) {
         c.store.add("logits", uniform(r, {2}, -2, 2));
         const bool change = r.bernoulli(0.5);
         c.loss = [&c, change](Graph& g) { return oscc_loss(g.param(c.store.at("logits")), change); };
       }},
      {"pnr_loss", [](Case& c, Rng& r) {
         c.store.add("logits", uniform(r, {6}, -2, 2));
         ClipLabels l;
         l.state_change = r.bernoulli(0.5);
         if (l.state_change) {
           l.pnr_frame = static_cast<std::size_t>(r.below(6));
           l.boxes.push_back({BoxClass::hand, random_box(r)});
         }
         const PnrTarget target = make_pnr_target(l, 6);
         c.loss = [&c, target](Graph& g) { return pnr_loss(g.param(c.store.at("logits")), target); };
       }},
      {"giou", [](Case& c, Rng& r) {
         const Box p = random_box(r);
         c.store.add("box", Tensor({4}, {p.cx, p.cy, p.w, p.h}));
         const Box t = random_box(r);
         c.loss = [&c, t](Graph& g) { return giou(g.param(c.store.at("box")), t); };
       }},
      {"scod_loss", [](Case& c, Rng& r) {
         c.store.add("class_logits", uniform(r, {kScodQueries, kScodClasses}, -2, 2));
         c.store.add("box_logits", uniform(r, {kScodQueries, 4}, -1.5, 1.5));
         auto labels = std::make_shared<ClipLabels>(random_change_labels(r, 4));
         auto queries = [&c](Graph& g) {
           Var cls = g.param(c.store.at("class_logits"));
           Var box = sigmoid(g.param(c.store.at("box_logits")));
           std::vector<ScodQuery> q;
           for (std::size_t i = 0; i < kScodQueries; ++i) {
             q.push_back({reshape(slice_rows(cls, i, i + 1), {kScodClasses}),
                          reshape(slice_rows(box, i, i + 1), {4})});
           }
           return q;
         };
         Assignment match;
         {
           Graph g;
           scod_loss(queries(g), *labels, nullptr, &match);
         }
         auto fixed = std::make_shared<Assignment>(match);
         c.loss = [queries, labels, fixed](Graph& g) {
           return scod_loss(queries(g), *labels, fixed.get());
         };
       }},
      {"joint_loss", [](Case& c, Rng& r) {
         c.store.add("losses", uniform(r, {3}, 0.2, 3.0));
         c.store.add("log_sigma2", uniform(r, {3}, -1, 1));
         c.loss = [&c](Graph& g) {
           Var l = g.param(c.store.at("losses"));
           std::array<std::optional<Var>, 3> terms = {pick(l, 0), pick(l, 1), pick(l, 2)};
           return joint_loss(terms, g.param(c.store.at("log_sigma2")),
                             TaskSet::parse("oscc,pnr,scod"));
         };
       }},
      {"decode_per_frame_token",
       [](Case& c, Rng& r) { decode_case(c, r, EncoderKind::per_frame_token); }},
      {"decode_clip_token", [](Case& c, Rng& r) { decode_case(c, r, EncoderKind::clip_token); }},
      {"decode_conv_grid", [](Case& c, Rng& r) { decode_case(c, r, EncoderKind::conv_grid); }},
  };
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

GradCheckReport run_gradcheck_case(const std::string& name, std::uint64_t seed, double eps,
                                   double tol) {
  for (const auto& [n, build] : registry()) {
    if (n != name) continue;
    Case c;
    c.eps = eps;
    c.tol = tol;
    Rng rng(derive_seed(seed, name));
    build(c, rng);
    if (!c.models.empty()) {
      std::vector<GradCheckInput> inputs;
      for (auto& m : c.models) {
        for (auto& e : m->params()) inputs.push_back({e.name, &e.tensor});
      }
      return grad_check(c.loss, inputs, eps, tol);
    }
    return grad_check(c.loss, c.inputs(), eps, tol);
  }
  throw ContractError("unknown gradcheck case '" + name + "'");
}

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t repeats, double eps,
                                               double tol) {
  std::vector<GradCheckCase> out;
  for (std::size_t i = 0; i < repeats; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    for (const auto& name : gradcheck_case_names()) {
      out.push_back({name, s, run_gradcheck_case(name, s, eps, tol)});
    }
  }
  return out;
}

}  // namespace tfd
