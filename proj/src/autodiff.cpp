#include "tfd/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tfd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using StridedConst = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw ContractError("operands belong to different graphs");
  }
  return *a.graph;
}

std::size_t row_width(const Shape& s) {
  if (s.empty()) throw DimensionError("row op on a scalar");
  return s[0] == 0 ? 0 : shape_size(s) / s[0];
}

Shape tail(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

template <class F, class DF>
Var unary(std::string_view name, Var a, F f, DF df) {
  Graph& g = *a.graph;
  auto x = a.value();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return g.record(name, a.shape(), std::move(out), {a.id}, [df](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.needs_grad(in)) return;
    auto go = g.grad(self);
    auto x = g.value(in);
    auto y = g.value(self);
    auto gi = g.grad(in);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * df(x[i], y[i]);
  });
}

// dfa/dfb: partial derivative of the output w.r.t. each operand, given (x, y, out).
template <class F, class DA, class DB>
Var binary(std::string_view name, Var a, Var b, F f, DA dfa, DB dfb) {
  Graph& g = same_graph(a, b);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (nb == 1) {
    shape = a.shape();
  } else if (na == 1) {
    shape = b.shape();
  } else {
    throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcast-compatible");
  }
  const std::size_t n = shape_size(shape);
  const std::size_t sa = na == 1 ? 0 : 1;
  const std::size_t sb = nb == 1 ? 0 : 1;
  auto x = a.value();
  auto y = b.value();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i * sa], y[i * sb]);
  return g.record(name, std::move(shape), std::move(out), {a.id, b.id},
                  [sa, sb, dfa, dfb](Graph& g, std::size_t self) {
                    const std::size_t ia = g.inputs(self)[0];
                    const std::size_t ib = g.inputs(self)[1];
                    auto go = g.grad(self);
                    auto x = g.value(ia);
                    auto y = g.value(ib);
                    auto out = g.value(self);
                    if (g.needs_grad(ia)) {
                      auto ga = g.grad(ia);
                      for (std::size_t i = 0; i < go.size(); ++i)
                        ga[i * sa] += go[i] * dfa(x[i * sa], y[i * sb], out[i]);
                    }
                    if (g.needs_grad(ib)) {
                      auto gb = g.grad(ib);
                      for (std::size_t i = 0; i < go.size(); ++i)
                        gb[i * sb] += go[i] * dfb(x[i * sa], y[i * sb], out[i]);
                    }
                  });
}

}  // namespace

// ---- Var -------------------------------------------------------------------

const Shape& Var::shape() const { return graph->shape(id); }
std::size_t Var::size() const { return graph->value(id).size(); }
std::span<const double> Var::value() const { return graph->value(id); }

double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ContractError("item() on node of shape " + shape_str(shape()));
  return v[0];
}

Tensor Var::tensor() const {
  auto v = value();
  return Tensor(shape(), Buffer(v.begin(), v.end()));
}

// ---- Graph -----------------------------------------------------------------

Var Graph::constant(Tensor t) {
  Node n;
  n.op = "constant";
  n.shape = t.shape();
  n.value = std::move(t.storage());
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::param(Tensor& t) {
  Node n;
  n.op = "param";
  n.shape = t.shape();
  n.bound = &t;
  n.needs_grad = t.requires_grad();
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Shape shape, Buffer value,
                  std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.op = std::string(op);
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                             [this](std::size_t i) { return nodes_[i].needs_grad; });
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::span<double> Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

Tensor Graph::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.shape, 0.0);
  return Tensor(n.shape, n.grad);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  grad(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
  for (auto& n : nodes_) {
    if (n.bound == nullptr || !n.needs_grad || n.grad.empty()) continue;
    auto dst = n.bound->grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " do not agree");
  }
  const auto m = static_cast<Eigen::Index>(sa[0]);
  const auto k = static_cast<Eigen::Index>(sa[1]);
  const auto n = static_cast<Eigen::Index>(sb[1]);
  Buffer out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() =
      MapConstMat(a.value().data(), m, k) * MapConstMat(b.value().data(), k, n);
  return g.record("matmul", {sa[0], sb[1]}, std::move(out), {a.id, b.id},
                  [m, k, n](Graph& g, std::size_t self) {
                    const std::size_t ia = g.inputs(self)[0];
                    const std::size_t ib = g.inputs(self)[1];
                    MapConstMat dc(g.grad(self).data(), m, n);
                    if (g.needs_grad(ia)) {
                      MapMat(g.grad(ia).data(), m, k).noalias() +=
                          dc * MapConstMat(g.value(ib).data(), k, n).transpose();
                    }
                    if (g.needs_grad(ib)) {
                      MapMat(g.grad(ib).data(), k, n).noalias() +=
                          MapConstMat(g.value(ia).data(), m, k).transpose() * dc;
                    }
                  });
}

Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(s));
  const auto r = static_cast<Eigen::Index>(s[0]);
  const auto c = static_cast<Eigen::Index>(s[1]);
  Buffer out(a.size());
  MapMat(out.data(), c, r) = MapConstMat(a.value().data(), r, c).transpose();
  return a.graph->record("transpose", {s[1], s[0]}, std::move(out), {a.id},
                         [r, c](Graph& g, std::size_t self) {
                           const std::size_t in = g.inputs(self)[0];
                           MapMat(g.grad(in).data(), r, c) +=
                               MapConstMat(g.grad(self).data(), c, r).transpose();
                         });
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  for (double y : b.value()) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

// Ties route the gradient to the first operand.
Var minimum(Var a, Var b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Var maximum(Var a, Var b) {
  return binary(
      "maximum", a, b, [](double x, double y) { return std::max(x, y); },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Var scale(Var a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// tanh approximation:
//   gelu(x)  = 0.5 x (1 + tanh(u)),  u = sqrt(2/pi) (x + 0.044715 x^3)
//   gelu'(x) = 0.5 (1 + tanh(u)) + 0.5 x (1 - tanh(u)^2) sqrt(2/pi) (1 + 3 * 0.044715 x^2)
Var gelu(Var a) {
  // gelu(x) = 0.5 x (1 + tanh(u)), u = sqrt(2/pi) (x + 0.044715 x^3).
  // Evaluated through the identity 0.5 (1 + tanh(u)) = 1 / (1 + exp(-2u)).
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  Graph& g = *a.graph;
  auto in = a.value();
  const auto x = Eigen::Map<const Eigen::ArrayXd>(in.data(), static_cast<Eigen::Index>(in.size()));
  Buffer out(in.size());
  Eigen::Map<Eigen::ArrayXd>(out.data(), x.size()) =
      x / (1.0 + (-2.0 * kC * (x + kA * x.cube())).exp());
  return g.record("gelu", a.shape(), std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t src = g.inputs(self)[0];
    if (!g.needs_grad(src)) return;
    auto xv = g.value(src);
    const Eigen::Index n = static_cast<Eigen::Index>(xv.size());
    const auto x = Eigen::Map<const Eigen::ArrayXd>(xv.data(), n);
    const auto go = Eigen::Map<const Eigen::ArrayXd>(g.grad(self).data(), n);
    auto gi = Eigen::Map<Eigen::ArrayXd>(g.grad(src).data(), n);
    const Eigen::ArrayXd s = 1.0 / (1.0 + (-2.0 * kC * (x + kA * x.cube())).exp());
    gi += go * (s + 2.0 * kC * x * s * (1.0 - s) * (1.0 + 3.0 * kA * x.square()));
  });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- reductions / normalization ---------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  return a.graph->record("sum", {}, {s}, {a.id}, [](Graph& g, std::size_t self) {
    const double go = g.grad(self)[0];
    for (double& v : g.grad(g.inputs(self)[0])) v += go;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.size());
  return scale(sum(a), 1.0 / n);
}

Var softmax(Var x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto in = x.value();
  Buffer out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double mx = in[base];
      for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, in[base + t * inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        out[base + t * inner] = std::exp(in[base + t * inner] - mx);
        z += out[base + t * inner];
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= z;
    }
  }
  return x.graph->record(
      "softmax", s, std::move(out), {x.id}, [outer, inner, len](Graph& g, std::size_t self) {
        auto go = g.grad(self);
        auto y = g.value(self);
        auto gi = g.grad(g.inputs(self)[0]);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            double dot = 0.0;
            for (std::size_t t = 0; t < len; ++t) dot += go[base + t * inner] * y[base + t * inner];
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t i = base + t * inner;
              gi[i] += y[i] * (go[i] - dot);
            }
          }
        }
      });
}

Var log_softmax(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("log_softmax on a scalar");
  const std::size_t len = s.back();
  const std::size_t rows = x.size() / len;
  auto in = x.value();
  Buffer out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = in.data() + r * len;
    const double mx = *std::max_element(xi, xi + len);
    double z = 0.0;
    for (std::size_t t = 0; t < len; ++t) z += std::exp(xi[t] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t t = 0; t < len; ++t) out[r * len + t] = xi[t] - lse;
  }
  return x.graph->record("log_softmax", s, std::move(out), {x.id},
                         [rows, len](Graph& g, std::size_t self) {
                           auto go = g.grad(self);
                           auto y = g.value(self);
                           auto gi = g.grad(g.inputs(self)[0]);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double total = 0.0;
                             for (std::size_t t = 0; t < len; ++t) total += go[r * len + t];
                             for (std::size_t t = 0; t < len; ++t) {
                               const std::size_t i = r * len + t;
                               gi[i] += go[i] - std::exp(y[i]) * total;
                             }
                           }
                         });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain);
  same_graph(x, bias);
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = s.back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias of shape " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match width " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  auto in = x.value();
  auto ga = gain.value();
  auto be = bias.value();
  Buffer out(in.size());
  Buffer xhat(in.size());
  Buffer rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      xhat[i] = (xi[j] - mu) * rstd[r];
      out[i] = ga[j] * xhat[i] + be[j];
    }
  }
  return g.record(
      "layer_norm", s, std::move(out), {x.id, gain.id, bias.id},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, std::size_t self) {
        const auto& ins = g.inputs(self);
        auto go = g.grad(self);
        if (g.needs_grad(ins[1])) {
          auto gg = g.grad(ins[1]);
          for (std::size_t i = 0; i < go.size(); ++i) gg[i % d] += go[i] * xhat[i];
        }
        if (g.needs_grad(ins[2])) {
          auto gb = g.grad(ins[2]);
          for (std::size_t i = 0; i < go.size(); ++i) gb[i % d] += go[i];
        }
        if (g.needs_grad(ins[0])) {
          auto ga = g.value(ins[1]);
          auto gx = g.grad(ins[0]);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = go[r * d + j] * ga[j];
              m1 += dxh;
              m2 += dxh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t i = r * d + j;
              gx[i] += rstd[r] * (go[i] * ga[j] - m1 - xhat[i] * m2);
            }
          }
        }
      });
}

// ---- structural ------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto v = a.value();
  return a.graph->record("reshape", std::move(shape), Buffer(v.begin(), v.end()),
                         {a.id}, [](Graph& g, std::size_t self) {
                           auto go = g.grad(self);
                           auto gi = g.grad(g.inputs(self)[0]);
                           for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
                         });
}

Var add_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Shape& s = x.shape();
  if (s.empty() || bias.size() != s.back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(s));
  }
  const std::size_t d = s.back();
  auto in = x.value();
  auto b = bias.value();
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + b[i % d];
  return g.record("add_bias", s, std::move(out), {x.id, bias.id}, [d](Graph& g, std::size_t self) {
    const auto& ins = g.inputs(self);
    auto go = g.grad(self);
    if (g.needs_grad(ins[0])) {
      auto gx = g.grad(ins[0]);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (g.needs_grad(ins[1])) {
      auto gb = g.grad(ins[1]);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i % d] += go[i];
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Shape& s = x.shape();
  const std::size_t w = row_width(s);
  for (std::size_t r : rows) {
    if (r >= s[0]) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " +
                           shape_str(s));
    }
  }
  Shape shape = s;
  shape[0] = rows.size();
  auto in = x.value();
  Buffer out(rows.size() * w);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w,
                out.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return x.graph->record("gather_rows", std::move(shape), std::move(out), {x.id},
                         [w, rows = std::move(rows)](Graph& g, std::size_t self) {
                           auto go = g.grad(self);
                           auto gi = g.grad(g.inputs(self)[0]);
                           for (std::size_t i = 0; i < rows.size(); ++i)
                             for (std::size_t j = 0; j < w; ++j) gi[rows[i] * w + j] += go[i * w + j];
                         });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  if (begin > end || x.shape().empty() || end > x.shape()[0]) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return gather_rows(x, std::move(rows));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Graph& g = *parts[0].graph;
  const Shape rest = tail(parts[0].shape());
  Shape shape = parts[0].shape();
  shape[0] = 0;
  std::vector<std::size_t> ids;
  Buffer out;
  for (const Var& p : parts) {
    same_graph(parts[0], p);
    if (p.shape().empty() || tail(p.shape()) != rest) {
      throw DimensionError("concat_rows: " + shape_str(p.shape()) + " incompatible with " +
                           shape_str(parts[0].shape()));
    }
    shape[0] += p.shape()[0];
    ids.push_back(p.id);
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  return g.record("concat_rows", std::move(shape), std::move(out), std::move(ids),
                  [](Graph& g, std::size_t self) {
                    auto go = g.grad(self);
                    std::size_t offset = 0;
                    for (std::size_t in : g.inputs(self)) {
                      const std::size_t n = g.value(in).size();
                      if (g.needs_grad(in)) {
                        auto gi = g.grad(in);
                        for (std::size_t i = 0; i < n; ++i) gi[i] += go[offset + i];
                      }
                      offset += n;
                    }
                  });
}

Var pool_rows(Var x, std::size_t group) {
  const Shape& s = x.shape();
  if (group == 0 || s.empty() || s[0] % group != 0) {
    throw DimensionError("pool_rows: group " + std::to_string(group) + " does not divide " +
                         shape_str(s));
  }
  const std::size_t w = row_width(s);
  const std::size_t out_rows = s[0] / group;
  Shape shape = s;
  shape[0] = out_rows;
  auto in = x.value();
  const double inv = 1.0 / static_cast<double>(group);
  Buffer out(out_rows * w, 0.0);
  for (std::size_t r = 0; r < s[0]; ++r)
    for (std::size_t j = 0; j < w; ++j) out[(r / group) * w + j] += in[r * w + j] * inv;
  return x.graph->record("pool_rows", std::move(shape), std::move(out), {x.id},
                         [w, group, inv](Graph& g, std::size_t self) {
                           auto go = g.grad(self);
                           auto gi = g.grad(g.inputs(self)[0]);
                           for (std::size_t i = 0; i < gi.size(); ++i)
                             gi[i] += go[(i / w / group) * w + i % w] * inv;
                         });
}

Var pick(Var x, std::size_t index) {
  if (index >= x.size()) {
    throw DimensionError("pick: index " + std::to_string(index) + " out of range for " +
                         shape_str(x.shape()));
  }
  return x.graph->record("pick", {}, {x.value()[index]}, {x.id},
                         [index](Graph& g, std::size_t self) {
                           g.grad(g.inputs(self)[0])[index] += g.grad(self)[0];
                         });
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw ContractError("stack: no inputs");
  std::vector<std::size_t> ids;
  Buffer out;
  for (const Var& v : scalars) {
    same_graph(scalars[0], v);
    if (v.size() != 1) throw DimensionError("stack: expected scalars, got " + shape_str(v.shape()));
    ids.push_back(v.id);
    out.push_back(v.value()[0]);
  }
  return scalars[0].graph->record("stack", {out.size()}, std::move(out), std::move(ids),
                                  [](Graph& g, std::size_t self) {
                                    auto go = g.grad(self);
                                    const auto& ins = g.inputs(self);
                                    for (std::size_t i = 0; i < ins.size(); ++i)
                                      if (g.needs_grad(ins[i])) g.grad(ins[i])[0] += go[i];
                                  });
}

// ---- attention -------------------------------------------------------------

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, std::size_t groups,
                         Tensor* weights_out) {
  Graph& g = same_graph(q, k);
  same_graph(q, v);
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  if (sq.size() != 2 || sk.size() != 2 || v.shape() != sk || sq[1] != sk[1]) {
    throw DimensionError("attention: q " + shape_str(sq) + ", k " + shape_str(sk) + ", v " +
                         shape_str(v.shape()) + " are inconsistent");
  }
  const std::size_t D = sq[1];
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(D) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (groups == 0 || sq[0] % groups != 0 || sk[0] % groups != 0) {
    throw DimensionError("attention: " + std::to_string(groups) + " groups do not divide rows");
  }
  const auto n = static_cast<Eigen::Index>(sq[0] / groups);
  const auto m = static_cast<Eigen::Index>(sk[0] / groups);
  if (m == 0) throw ContractError("attention: empty memory");
  const auto dh = static_cast<Eigen::Index>(D / heads);
  const auto stride = static_cast<Eigen::Index>(D);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Buffer weights(groups * heads * static_cast<std::size_t>(n * m));
  Buffer out(q.size());
  const double* qp = q.value().data();
  const double* kp = k.value().data();
  const double* vp = v.value().data();
  RowMat scores(n, m);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qoff = gi * static_cast<std::size_t>(n) * D + h * dh;
      const std::size_t koff = gi * static_cast<std::size_t>(m) * D + h * dh;
      StridedConst qh(qp + qoff, n, dh, Eigen::OuterStride<>(stride));
      StridedConst kh(kp + koff, m, dh, Eigen::OuterStride<>(stride));
      StridedConst vh(vp + koff, m, dh, Eigen::OuterStride<>(stride));
      scores.noalias() = qh * kh.transpose();
      scores *= scale;
      MapMat a(weights.data() + (gi * heads + h) * static_cast<std::size_t>(n * m), n, m);
      for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = scores.row(r).maxCoeff();
        a.row(r) = (scores.row(r).array() - mx).exp();
        a.row(r) /= a.row(r).sum();
      }
      Strided(out.data() + qoff, n, dh, Eigen::OuterStride<>(stride)).noalias() = a * vh;
    }
  }
  if (weights_out != nullptr) {
    *weights_out = Tensor({groups, heads, static_cast<std::size_t>(n), static_cast<std::size_t>(m)},
                          weights);
  }
  return g.record(
      "attention", sq, std::move(out), {q.id, k.id, v.id},
      [groups, heads, n, m, dh, D, stride, scale, weights = std::move(weights)](Graph& g,
                                                                              std::size_t self) {
        const auto& ins = g.inputs(self);
        const bool need_q = g.needs_grad(ins[0]);
        const bool need_k = g.needs_grad(ins[1]);
        const bool need_v = g.needs_grad(ins[2]);
        const double* qp = g.value(ins[0]).data();
        const double* kp = g.value(ins[1]).data();
        const double* vp = g.value(ins[2]).data();
        const double* gop = g.grad(self).data();
        double* gq = need_q ? g.grad(ins[0]).data() : nullptr;
        double* gk = need_k ? g.grad(ins[1]).data() : nullptr;
        double* gv = need_v ? g.grad(ins[2]).data() : nullptr;
        RowMat da(n, m);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t qoff = gi * static_cast<std::size_t>(n) * D + h * dh;
            const std::size_t koff = gi * static_cast<std::size_t>(m) * D + h * dh;
            const Eigen::OuterStride<> os(stride);
            MapConstMat a(weights.data() + (gi * heads + h) * static_cast<std::size_t>(n * m), n, m);
            StridedConst dout(gop + qoff, n, dh, os);
            StridedConst qh(qp + qoff, n, dh, os);
            StridedConst kh(kp + koff, m, dh, os);
            StridedConst vh(vp + koff, m, dh, os);
            if (need_v) Strided(gv + koff, m, dh, os).noalias() += a.transpose() * dout;
            if (!need_q && !need_k) continue;
            da.noalias() = dout * vh.transpose();
            for (Eigen::Index r = 0; r < n; ++r) {
              const double dot = da.row(r).dot(a.row(r));
              da.row(r) = a.row(r).array() * (da.row(r).array() - dot);
            }
            da *= scale;
            if (need_q) Strided(gq + qoff, n, dh, os).noalias() += da * kh;
            if (need_k) Strided(gk + koff, m, dh, os).noalias() += da.transpose() * qh;
          }
        }
      });
}

}  // namespace tfd
