#pragma once

// Task fusion decoder: ten learnable task tokens refined by N layers of
//   f      = LN(z + SelfAttention(z))                     (all ten tokens)
//   z[0:2] = LN(f[0:2]  + CrossAttention(h_t, f[0:2]))    (OSCC, PNR)
//   z[2:]  = LN(f[2:10] + CrossAttention(h_s, f[2:10]))   (eight SCOD queries)
// followed by one two-layer MLP head per token.

#include <optional>
#include <string>
#include <vector>

#include "tfd/attention.hpp"
#include "tfd/features.hpp"
#include "tfd/param_store.hpp"

namespace tfd {

inline constexpr std::size_t kTaskTokens = 10;
inline constexpr std::size_t kScodQueries = 8;
inline constexpr std::size_t kScodClasses = 3;  // hand, object, no-object

struct TaskSet {
  bool oscc = true;
  bool pnr = true;
  bool scod = true;

  /// Comma-separated subset of {oscc, pnr, scod}; throws ConfigError otherwise.
  static TaskSet parse(const std::string& text);
  std::string str() const;
  bool empty() const { return !oscc && !pnr && !scod; }
  bool operator==(const TaskSet&) const = default;
};

struct DecoderConfig {
  std::size_t layers = 2;  // N
  std::size_t width = 64;  // D
  std::size_t heads = 4;
  std::size_t frames = 16;   // T
  std::size_t patches = 16;  // P
  std::size_t mlp_hidden = 128;
  TaskSet tasks;
  /// Unit-test switch: replaces the self-attention sublayer by the identity.
  bool self_attention = true;

  void validate() const;
};

enum class KeyframeMode { train, infer };

struct KeyframeSpec {
  KeyframeMode mode = KeyframeMode::train;
  std::optional<std::size_t> label_frame;
  bool no_change = false;
  std::optional<std::vector<double>> pnr_logits;

  static KeyframeSpec train(std::size_t frame);
  static KeyframeSpec train_no_change();
  /// Ground-truth keyframe for a labeled clip (middle frame when no change).
  static KeyframeSpec train(const std::optional<std::size_t>& pnr_frame);
  static KeyframeSpec infer(std::vector<double> pnr_logits);
  /// Inference without external logits: decode() first runs a pass on the
  /// middle frame and selects the keyframe from that pass's PNR logits.
  static KeyframeSpec infer_auto();
};

struct ScodQuery {
  Var class_logits;  // [3]: hand, object, no-object
  Var box;           // [4]: (cx, cy, w, h) in (0, 1)
};

class TaskPredictions {
 public:
  bool has_oscc() const { return oscc_.has_value(); }
  bool has_pnr() const { return pnr_.has_value(); }
  bool has_scod() const { return !scod_.empty(); }

  /// Each accessor throws ContractError when its task is disabled.
  Var oscc_logits() const;
  Var pnr_logits() const;
  const std::vector<ScodQuery>& scod() const;
  std::size_t keyframe_used() const { return keyframe_; }

 private:
  friend class TaskFusionDecoder;
  std::optional<Var> oscc_;
  std::optional<Var> pnr_;
  std::vector<ScodQuery> scod_;
  std::size_t keyframe_ = 0;
};

/// Attention probabilities of one decoder layer.
struct LayerAttention {
  Tensor self_attn;  // [heads, 10, 10]
  Tensor temporal;   // [heads, 2, T]
  Tensor spatial;    // [heads, 8, P]
};

struct KeyframeSelection {
  Var h_s;  // [P, D]
  std::size_t keyframe = 0;
};

/// Index of the largest value; lowest index wins ties.
std::size_t argmax(std::span<const double> values);

class TaskFusionDecoder {
 public:
  /// Registers all decoder parameters under "dec." in `store`.
  static void init_params(ParamStore& store, const DecoderConfig& config, Rng& rng);

  TaskFusionDecoder(ParamStore& store, DecoderConfig config);

  const DecoderConfig& config() const { return config_; }
  const PositionalEncoding& encoding() const { return encoding_; }

  /// h_t [T, D]: h_cls (per-frame) or frame-pooled h_total (clip-level), plus time encoding.
  Var build_temporal_memory(const ClipFeatures& features) const;
  /// h_s [P, D]: keyframe row of h_total plus spatial encoding.
  KeyframeSelection select_keyframe(const ClipFeatures& features, const KeyframeSpec& spec) const;

  TaskPredictions decode(const ClipFeatures& features, const KeyframeSpec& spec,
                         bool cache_attention = true);

  /// Attention of the most recent cached decode(), in layer order.
  const std::vector<LayerAttention>& export_attention() const;
  void clear_attention_cache() { cache_.reset(); }

  /// Name of the parameter holding head `token` (0-based) layer `part` ("w1", "b1", "w2", "b2").
  static std::string head_param(std::size_t token, const std::string& part);

 private:
  TaskPredictions run(const ClipFeatures& features, Var h_t, const KeyframeSelection& keyframe,
                      std::vector<LayerAttention>* cache);

  ParamStore* store_;
  DecoderConfig config_;
  PositionalEncoding encoding_;
  std::optional<std::vector<LayerAttention>> cache_;
};

}  // namespace tfd
