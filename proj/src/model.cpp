#include "tfd/model.hpp"

#include "json.hpp"
#include "tfd/rng.hpp"

namespace tfd {

using nlohmann::json;

ModelConfig ModelConfig::desk_scale(EncoderKind kind) {
  ModelConfig c;
  c.encoder.kind = kind;
  return c;
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.model_width != decoder.width) {
    throw ConfigError("encoder width " + std::to_string(encoder.model_width) +
                      " differs from decoder width " + std::to_string(decoder.width));
  }
  if (encoder.patches() != decoder.patches) {
    throw ConfigError("encoder yields " + std::to_string(encoder.patches()) +
                      " patches but the decoder expects " + std::to_string(decoder.patches));
  }
}

std::string ModelConfig::to_json() const {
  json j = {
      {"encoder",
       {{"kind", to_string(encoder.kind)},
        {"height", encoder.height},
        {"width", encoder.width},
        {"grid", encoder.grid},
        {"model_width", encoder.model_width},
        {"heads", encoder.heads},
        {"conv_channels", encoder.conv_channels},
        {"adapter_hidden", encoder.adapter_hidden}}},
      {"decoder",
       {{"layers", decoder.layers},
        {"width", decoder.width},
        {"heads", decoder.heads},
        {"frames", decoder.frames},
        {"patches", decoder.patches},
        {"mlp_hidden", decoder.mlp_hidden},
        {"tasks", decoder.tasks.str()}}}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    const json& e = j.at("encoder");
    c.encoder.kind = parse_encoder_kind(e.at("kind").get<std::string>());
    c.encoder.height = e.at("height").get<std::size_t>();
    c.encoder.width = e.at("width").get<std::size_t>();
    c.encoder.grid = e.at("grid").get<std::size_t>();
    c.encoder.model_width = e.at("model_width").get<std::size_t>();
    c.encoder.heads = e.at("heads").get<std::size_t>();
    c.encoder.conv_channels = e.at("conv_channels").get<std::size_t>();
    c.encoder.adapter_hidden = e.at("adapter_hidden").get<std::size_t>();
    const json& d = j.at("decoder");
    c.decoder.layers = d.at("layers").get<std::size_t>();
    c.decoder.width = d.at("width").get<std::size_t>();
    c.decoder.heads = d.at("heads").get<std::size_t>();
    c.decoder.frames = d.at("frames").get<std::size_t>();
    c.decoder.patches = d.at("patches").get<std::size_t>();
    c.decoder.mlp_hidden = d.at("mlp_hidden").get<std::size_t>();
    c.decoder.tasks = TaskSet::parse(d.at("tasks").get<std::string>());
  } catch (const json::exception& ex) {
    throw ParseError(std::string("model config: ") + ex.what());
  }
  c.validate();
  return c;
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), store_(std::make_unique<ParamStore>()) {
  config_.validate();
  Rng enc_rng(derive_seed(seed, "encoder"));
  Rng dec_rng(derive_seed(seed, "decoder"));
  Encoder::init_params(*store_, config_.encoder, enc_rng);
  TaskFusionDecoder::init_params(*store_, config_.decoder, dec_rng);
  store_->add("loss.log_sigma2", Tensor({3}, 0.0));
  build();
}

Model::Model(ModelConfig config, const ParamStore& params)
    : Model(std::move(config), std::uint64_t{0}) {
  store_->assign_from(params);
}

void Model::build() {
  encoder_ = std::make_unique<Encoder>(*store_, config_.encoder);
  decoder_ = std::make_unique<TaskFusionDecoder>(*store_, config_.decoder);
}

void Model::set_tasks(const TaskSet& tasks) {
  config_.decoder.tasks = tasks;
  decoder_ = std::make_unique<TaskFusionDecoder>(*store_, config_.decoder);
}

}  // namespace tfd
