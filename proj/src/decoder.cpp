#include "tfd/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace tfd {

void ClipFeatures::validate(std::size_t expected_width) const {
  if (frames < 2) throw ConfigError("clip features need at least 2 frames");
  if (patches < 1) throw ConfigError("clip features need at least one patch");
  if (width != expected_width) {
    throw ConfigError("feature width " + std::to_string(width) + " does not match model width " +
                      std::to_string(expected_width));
  }
  const Shape total{frames, patches, width};
  if (h_total.shape() != total) {
    throw DimensionError("h_total has shape " + shape_str(h_total.shape()) + ", expected " +
                         shape_str(total));
  }
  const Shape& c = h_cls.shape();
  if (c.size() != 2 || c[1] != width || (c[0] != 1 && c[0] != frames)) {
    throw DimensionError("h_cls has shape " + shape_str(c) + "; expected [1 or T, D]");
  }
}

TaskSet TaskSet::parse(const std::string& text) {
  TaskSet t{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "oscc") {
      t.oscc = true;
    } else if (item == "pnr") {
      t.pnr = true;
    } else if (item == "scod") {
      t.scod = true;
    } else {
      throw ConfigError("unknown task '" + item + "' (expected oscc, pnr, scod)");
    }
  }
  if (t.empty()) throw ConfigError("at least one task must be enabled");
  return t;
}

std::string TaskSet::str() const {
  std::string out;
  auto append = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  append(oscc, "oscc");
  append(pnr, "pnr");
  append(scod, "scod");
  return out;
}

void DecoderConfig::validate() const {
  if (layers < 1) throw ConfigError("decoder needs at least one layer");
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (frames < 2 || patches < 1 || mlp_hidden < 1) throw ConfigError("invalid decoder sizes");
  if (tasks.empty()) throw ConfigError("at least one task must be enabled");
}

KeyframeSpec KeyframeSpec::train(std::size_t frame) {
  KeyframeSpec s;
  s.label_frame = frame;
  return s;
}

KeyframeSpec KeyframeSpec::train_no_change() {
  KeyframeSpec s;
  s.no_change = true;
  return s;
}

KeyframeSpec KeyframeSpec::train(const std::optional<std::size_t>& pnr_frame) {
  return pnr_frame ? train(*pnr_frame) : train_no_change();
}

KeyframeSpec KeyframeSpec::infer(std::vector<double> pnr_logits) {
  KeyframeSpec s;
  s.mode = KeyframeMode::infer;
  s.pnr_logits = std::move(pnr_logits);
  return s;
}

KeyframeSpec KeyframeSpec::infer_auto() {
  KeyframeSpec s;
  s.mode = KeyframeMode::infer;
  return s;
}

Var TaskPredictions::oscc_logits() const {
  if (!oscc_) throw ContractError("OSCC head is disabled");
  return *oscc_;
}

Var TaskPredictions::pnr_logits() const {
  if (!pnr_) throw ContractError("PNR head is disabled");
  return *pnr_;
}

const std::vector<ScodQuery>& TaskPredictions::scod() const {
  if (scod_.empty()) throw ContractError("SCOD heads are disabled");
  return scod_;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

std::size_t head_outputs(std::size_t token, const DecoderConfig& c) {
  if (token == 0) return 2;
  if (token == 1) return c.frames;
  return kScodClasses + 4;
}

bool head_enabled(std::size_t token, const TaskSet& tasks) {
  if (token == 0) return tasks.oscc;
  if (token == 1) return tasks.pnr;
  return tasks.scod;
}

std::string layer_prefix(std::size_t k) { return "dec.l" + std::to_string(k); }

void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t d) {
  store.add(prefix + ".g", Tensor({d}, 1.0));
  store.add(prefix + ".b", Tensor({d}, 0.0));
}

Var norm(Graph& g, ParamStore& store, const std::string& prefix, Var x) {
  return layer_norm(x, g.param(store.at(prefix + ".g")), g.param(store.at(prefix + ".b")));
}

}  // namespace

std::string TaskFusionDecoder::head_param(std::size_t token, const std::string& part) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dec.head%02zu.", token + 1);
  return buf + part;
}

void TaskFusionDecoder::init_params(ParamStore& store, const DecoderConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d = c.width;
  store.add_normal("dec.tokens", {kTaskTokens, d}, 0.02, rng);
  for (std::size_t k = 0; k < c.layers; ++k) {
    const std::string p = layer_prefix(k);
    AttentionParams::create(store, p + ".self", d, c.heads, rng);
    add_layer_norm(store, p + ".ln_self", d);
    AttentionParams::create(store, p + ".temporal", d, c.heads, rng);
    add_layer_norm(store, p + ".ln_temporal", d);
    AttentionParams::create(store, p + ".spatial", d, c.heads, rng);
    add_layer_norm(store, p + ".ln_spatial", d);
  }
  for (std::size_t i = 0; i < kTaskTokens; ++i) {
    const std::size_t out = head_outputs(i, c);
    store.add_normal(head_param(i, "w1"), {d, c.mlp_hidden}, 1.0 / std::sqrt(double(d)), rng);
    store.add(head_param(i, "b1"), Tensor({c.mlp_hidden}, 0.0));
    store.add_normal(head_param(i, "w2"), {c.mlp_hidden, out},
                     1.0 / std::sqrt(double(c.mlp_hidden)), rng);
    store.add(head_param(i, "b2"), Tensor({out}, 0.0));
  }
}

TaskFusionDecoder::TaskFusionDecoder(ParamStore& store, DecoderConfig config)
    : store_(&store),
      config_(std::move(config)),
      encoding_(std::max<std::size_t>({config_.frames, config_.patches, 64}), config_.width) {
  config_.validate();
}

Var TaskFusionDecoder::build_temporal_memory(const ClipFeatures& f) const {
  f.validate(config_.width);
  if (f.frames != config_.frames || f.patches != config_.patches) {
    throw ConfigError("features have T=" + std::to_string(f.frames) + ", P=" +
                      std::to_string(f.patches) + " but the decoder expects T=" +
                      std::to_string(config_.frames) + ", P=" + std::to_string(config_.patches));
  }
  Var per_frame = f.h_cls;
  if (f.h_cls.shape()[0] == 1) {
    per_frame = pool_rows(reshape(f.h_total, {f.frames * f.patches, f.width}), f.patches);
  }
  return encoding_.encode(per_frame, 0);
}

KeyframeSelection TaskFusionDecoder::select_keyframe(const ClipFeatures& f,
                                                     const KeyframeSpec& spec) const {
  std::size_t k = 0;
  if (spec.mode == KeyframeMode::train) {
    if (spec.label_frame) {
      k = *spec.label_frame;
    } else if (spec.no_change) {
      k = f.frames / 2;
    } else {
      throw ContractError("train-mode keyframe selection needs a label or a no-change marker");
    }
  } else {
    if (!spec.pnr_logits) throw ContractError("infer-mode keyframe selection needs PNR logits");
    if (spec.pnr_logits->size() != f.frames) {
      throw ContractError("PNR logits have length " + std::to_string(spec.pnr_logits->size()) +
                          ", expected " + std::to_string(f.frames));
    }
    k = argmax(*spec.pnr_logits);
  }
  if (k >= f.frames) {
    throw ContractError("keyframe " + std::to_string(k) + " outside clip of " +
                        std::to_string(f.frames) + " frames");
  }
  Var frame = reshape(gather_rows(f.h_total, {k}), {f.patches, f.width});
  return {encoding_.encode(frame, 0), k};
}

TaskPredictions TaskFusionDecoder::decode(const ClipFeatures& features, const KeyframeSpec& spec,
                                          bool cache_attention) {
  Var h_t = build_temporal_memory(features);
  cache_.reset();
  KeyframeSelection keyframe;
  if (spec.mode == KeyframeMode::infer && !spec.pnr_logits) {
    KeyframeSpec mid = KeyframeSpec::train_no_change();
    if (config_.tasks.pnr) {
      TaskPredictions first = run(features, h_t, select_keyframe(features, mid), nullptr);
      auto logits = first.pnr_logits().value();
      keyframe = select_keyframe(features,
                                 KeyframeSpec::infer(std::vector<double>(logits.begin(), logits.end())));
    } else {
      keyframe = select_keyframe(features, mid);
    }
  } else {
    keyframe = select_keyframe(features, spec);
  }
  std::vector<LayerAttention> cache;
  TaskPredictions out = run(features, h_t, keyframe, cache_attention ? &cache : nullptr);
  if (cache_attention) cache_ = std::move(cache);
  return out;
}

TaskPredictions TaskFusionDecoder::run(const ClipFeatures& features, Var h_t,
                                       const KeyframeSelection& keyframe,
                                       std::vector<LayerAttention>* cache) {
  Graph& g = *features.h_total.graph;
  ParamStore& s = *store_;
  const std::size_t heads = config_.heads;
  Var z = g.param(s.at("dec.tokens"));
  for (std::size_t k = 0; k < config_.layers; ++k) {
    const std::string p = layer_prefix(k);
    LayerAttention* rec = nullptr;
    if (cache) rec = &cache->emplace_back();
    Tensor w;
    Var f = z;
    if (config_.self_attention) {
      Var sa = self_attention(z, AttentionParams::bind(s, p + ".self", heads), 1, rec ? &w : nullptr);
      f = norm(g, s, p + ".ln_self", add(z, sa));
      if (rec) rec->self_attn = w.reshaped({heads, kTaskTokens, kTaskTokens});
    } else if (rec) {
      // Identity mixing.
      rec->self_attn = Tensor({heads, kTaskTokens, kTaskTokens});
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < kTaskTokens; ++i)
          rec->self_attn[(h * kTaskTokens + i) * kTaskTokens + i] = 1.0;
    }
    Var time_q = slice_rows(f, 0, 2);
    Var space_q = slice_rows(f, 2, kTaskTokens);
    Var ta = cross_attention(h_t, time_q, AttentionParams::bind(s, p + ".temporal", heads),
                             rec ? &w : nullptr);
    if (rec) rec->temporal = w.reshaped({heads, 2, config_.frames});
    Var sa = cross_attention(keyframe.h_s, space_q, AttentionParams::bind(s, p + ".spatial", heads),
                             rec ? &w : nullptr);
    if (rec) rec->spatial = w.reshaped({heads, kScodQueries, config_.patches});
    const Var parts[] = {norm(g, s, p + ".ln_temporal", add(time_q, ta)),
                         norm(g, s, p + ".ln_spatial", add(space_q, sa))};
    z = concat_rows(parts);
  }

  TaskPredictions out;
  out.keyframe_ = keyframe.keyframe;
  for (std::size_t i = 0; i < kTaskTokens; ++i) {
    if (!head_enabled(i, config_.tasks)) continue;
    Var token = slice_rows(z, i, i + 1);
    Var hidden = gelu(add_bias(matmul(token, g.param(s.at(head_param(i, "w1")))),
                               g.param(s.at(head_param(i, "b1")))));
    Var raw = add_bias(matmul(hidden, g.param(s.at(head_param(i, "w2")))),
                       g.param(s.at(head_param(i, "b2"))));
    raw = reshape(raw, {head_outputs(i, config_)});
    if (i == 0) {
      out.oscc_ = raw;
    } else if (i == 1) {
      out.pnr_ = raw;
    } else {
      out.scod_.push_back({gather_rows(raw, {0, 1, 2}), sigmoid(gather_rows(raw, {3, 4, 5, 6}))});
    }
  }
  return out;
}

const std::vector<LayerAttention>& TaskFusionDecoder::export_attention() const {
  if (!cache_) throw StateError("no cached forward pass to export attention from");
  return *cache_;
}

}  // namespace tfd
