#include "tfd/attention.hpp"

#include <cmath>

namespace tfd {

AttentionParams::AttentionParams(Tensor* wq, Tensor* wk, Tensor* wv, Tensor* wo, std::size_t heads)
    : wq_(wq), wk_(wk), wv_(wv), wo_(wo), width_(wq->dim(0)), heads_(heads) {
  if (heads_ == 0 || width_ % heads_ != 0) {
    throw ConfigError("attention width " + std::to_string(width_) + " not divisible by " +
                      std::to_string(heads_) + " heads");
  }
  for (const Tensor* w : {wq_, wk_, wv_, wo_}) {
    if (w->shape() != Shape{width_, width_}) {
      throw ConfigError("attention projection has shape " + shape_str(w->shape()));
    }
  }
}

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix,
                                        std::size_t width, std::size_t heads, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const double sd = 1.0 / std::sqrt(static_cast<double>(width));
  for (const char* m : {".wq", ".wk", ".wv", ".wo"}) {
    store.add_normal(prefix + m, {width, width}, sd, rng);
  }
  return bind(store, prefix, heads);
}

AttentionParams AttentionParams::bind(ParamStore& store, const std::string& prefix,
                                      std::size_t heads) {
  return AttentionParams(&store.at(prefix + ".wq"), &store.at(prefix + ".wk"),
                         &store.at(prefix + ".wv"), &store.at(prefix + ".wo"), heads);
}

namespace {

Var attend(Var queries, Var memory, const AttentionParams& p, std::size_t groups,
           Tensor* weights_out) {
  Graph& g = *queries.graph;
  const std::size_t d = p.width();
  if (queries.shape().size() != 2 || queries.shape()[1] != d || memory.shape().size() != 2 ||
      memory.shape()[1] != d) {
    throw DimensionError("attention: queries " + shape_str(queries.shape()) + " / memory " +
                         shape_str(memory.shape()) + " do not match width " + std::to_string(d));
  }
  if (memory.shape()[0] == 0) throw ContractError("attention: empty memory");
  if (queries.shape()[0] == 0) throw ContractError("attention: no queries");
  Var q = matmul(queries, g.param(p.wq()));
  Var k = matmul(memory, g.param(p.wk()));
  Var v = matmul(memory, g.param(p.wv()));
  Var heads = multi_head_attention(q, k, v, p.heads(), groups, weights_out);
  return matmul(heads, g.param(p.wo()));
}

}  // namespace

Var self_attention(Var tokens, const AttentionParams& params, std::size_t groups,
                   Tensor* weights_out) {
  return attend(tokens, tokens, params, groups, weights_out);
}

Var cross_attention(Var memory, Var queries, const AttentionParams& params, Tensor* weights_out) {
  return attend(queries, memory, params, 1, weights_out);
}

PositionalEncoding::PositionalEncoding(std::size_t max_len, std::size_t width)
    : table_({max_len, width}) {
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t j = 0; j < width; ++j) {
      const double i2 = static_cast<double>(j - j % 2);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, i2 / static_cast<double>(width));
      table_.at(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
}

Tensor PositionalEncoding::rows(std::size_t offset, std::size_t n, std::size_t repeat,
                                bool tile) const {
  if (offset + n > max_len()) {
    throw ConfigError("positional encoding range [" + std::to_string(offset) + "," +
                      std::to_string(offset + n) + ") exceeds max_len " +
                      std::to_string(max_len()));
  }
  const std::size_t d = width();
  Tensor out({n * repeat, d});
  for (std::size_t r = 0; r < n * repeat; ++r) {
    const std::size_t src = offset + (tile ? r % n : r / repeat);
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = table_.at(src, j);
  }
  return out;
}

Var PositionalEncoding::encode(Var features, std::size_t offset) const {
  const Shape& s = features.shape();
  if (s.size() != 2 || s[1] != width()) {
    throw DimensionError("positional_encode: features " + shape_str(s) + " vs width " +
                         std::to_string(width()));
  }
  return add(features, features.graph->constant(rows(offset, s[0])));
}

}  // namespace tfd
