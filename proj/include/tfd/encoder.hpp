#pragma once

// Toy visual encoders producing ClipFeatures from raw clips.
//
//   per_frame_token  patch tokens + one class token per frame, one attention
//                    layer inside each frame   -> h_cls [T, D]
//   clip_token       one attention layer over all T*P patch tokens plus a
//                    single class token        -> h_cls [1, D]
//   conv_grid        two strided conv layers yielding a P-cell grid per frame,
//                    globally pooled for h_cls [T, D]; a two-layer transformer
//                    encoder adapter turns the grid cells into h_total
//
// All variants emit h_total [T, P, D]. Parameters live under "enc.".

#include <string>

#include "tfd/attention.hpp"
#include "tfd/features.hpp"
#include "tfd/param_store.hpp"

namespace tfd {

enum class EncoderKind { per_frame_token, clip_token, conv_grid };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& text);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::per_frame_token;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t grid = 4;  // patches per side; P = grid * grid
  std::size_t model_width = 64;
  std::size_t heads = 4;
  std::size_t conv_channels = 16;
  std::size_t adapter_hidden = 128;

  std::size_t patches() const { return grid * grid; }
  std::size_t patch_dim() const { return (height / grid) * (width / grid) * 3; }
  void validate() const;
};

class Encoder {
 public:
  static void init_params(ParamStore& store, const EncoderConfig& config, Rng& rng);

  Encoder(ParamStore& store, EncoderConfig config);

  const EncoderConfig& config() const { return config_; }

  /// frames [T, H, W, 3] -> [T*P, patch_h*patch_w*3], patches in row-major grid order.
  Tensor patchify(const Tensor& frames) const;

  /// Patch-level token embeddings [T*P, D] (spatial encoding included), i.e. the
  /// input of the encoder's attention layers.
  Var embed(Graph& g, const Tensor& frames) const;

  ClipFeatures encode(Graph& g, const Tensor& frames, double clip_duration_seconds = 8.0) const;

  /// Single-frame embedding [D] used by downstream policies: the frame class
  /// token (per_frame_token), pooled patch tokens (clip_token) or the pooled
  /// conv feature (conv_grid). `frame` is [1, H, W, 3].
  Var frame_embedding(Graph& g, const Tensor& frame) const;

 private:
  Var conv_features(Graph& g, const Tensor& frames) const;
  Var transformer_block(Graph& g, Var x, const std::string& prefix, std::size_t groups,
                        bool with_ffn) const;
  Tensor conv_im2col(const Tensor& frames) const;

  ParamStore* store_;
  EncoderConfig config_;
  PositionalEncoding encoding_;
};

}  // namespace tfd
