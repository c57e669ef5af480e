#pragma once

#include <string>

#include "tfd/autodiff.hpp"
#include "tfd/param_store.hpp"

namespace tfd {

/// Projection matrices of one multi-head attention block, living in a ParamStore
/// under `<prefix>.wq`, `.wk`, `.wv`, `.wo` (each [D, D], no biases).
class AttentionParams {
 public:
  /// Registers freshly initialized matrices (N(0, 1/D)).
  static AttentionParams create(ParamStore& store, const std::string& prefix, std::size_t width,
                                std::size_t heads, Rng& rng);
  /// Binds to matrices already present in `store`.
  static AttentionParams bind(ParamStore& store, const std::string& prefix, std::size_t heads);

  std::size_t width() const { return width_; }
  std::size_t heads() const { return heads_; }
  Tensor& wq() const { return *wq_; }
  Tensor& wk() const { return *wk_; }
  Tensor& wv() const { return *wv_; }
  Tensor& wo() const { return *wo_; }

 private:
  AttentionParams(Tensor* wq, Tensor* wk, Tensor* wv, Tensor* wo, std::size_t heads);

  Tensor* wq_;
  Tensor* wk_;
  Tensor* wv_;
  Tensor* wo_;
  std::size_t width_;
  std::size_t heads_;
};

/// Tokens [groups*n, D] attend to themselves within each group.
/// `weights_out`, when set, receives [groups, heads, n, n].
Var self_attention(Var tokens, const AttentionParams& params, std::size_t groups = 1,
                   Tensor* weights_out = nullptr);

/// Queries [q, D] attend over memory [m, D]; `weights_out` receives [1, heads, q, m].
Var cross_attention(Var memory, Var queries, const AttentionParams& params,
                    Tensor* weights_out = nullptr);

/// Fixed sinusoidal table: row p, column 2i -> sin(p / 10000^(2i/D)),
/// column 2i+1 -> cos(p / 10000^(2i/D)).
class PositionalEncoding {
 public:
  PositionalEncoding(std::size_t max_len, std::size_t width);

  std::size_t max_len() const { return table_.dim(0); }
  std::size_t width() const { return table_.dim(1); }
  const Tensor& table() const { return table_; }

  /// Rows [offset, offset + n) of the table, each repeated `repeat` times
  /// consecutively when `tile` is false, or the whole block tiled `repeat`
  /// times when `tile` is true.
  Tensor rows(std::size_t offset, std::size_t n, std::size_t repeat = 1, bool tile = true) const;

  /// features [n, D] + table[offset .. offset + n).
  Var encode(Var features, std::size_t offset = 0) const;

 private:
  Tensor table_;
};

}  // namespace tfd
