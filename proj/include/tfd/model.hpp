#pragma once

#include <memory>
#include <string>

#include "tfd/decoder.hpp"
#include "tfd/encoder.hpp"

namespace tfd {

/// Encoder + decoder configuration. Width and head count are shared.
struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  /// Desk-scale defaults: N=2, D=64, heads=4, T=16, P=16, mlp_hidden=128, 32x32 rasters.
  static ModelConfig desk_scale(EncoderKind kind = EncoderKind::per_frame_token);

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Owns the parameters of one encoder + decoder + loss-weighting model.
/// Parameter names: "enc.*", "dec.*" and "loss.log_sigma2" ([3], s_i = log sigma_i^2).
class Model {
 public:
  /// Fresh model with parameters drawn from `seed`.
  Model(ModelConfig config, std::uint64_t seed);
  /// Model around existing parameters (e.g. a loaded checkpoint); names and shapes must match.
  Model(ModelConfig config, const ParamStore& params);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const Encoder& encoder() const { return *encoder_; }
  TaskFusionDecoder& decoder() { return *decoder_; }
  Tensor& log_sigma2() { return store_->at("loss.log_sigma2"); }

  /// Enables the given tasks' heads (parameters are unaffected).
  void set_tasks(const TaskSet& tasks);

 private:
  void build();

  ModelConfig config_;
  std::unique_ptr<ParamStore> store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<TaskFusionDecoder> decoder_;
};

}  // namespace tfd
