#include "tfd/encoder.hpp"

#include <cmath>

namespace tfd {

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::per_frame_token:
      return "per_frame_token";
    case EncoderKind::clip_token:
      return "clip_token";
    case EncoderKind::conv_grid:
      return "conv_grid";
  }
  return "unknown";
}

EncoderKind parse_encoder_kind(const std::string& text) {
  if (text == "per_frame_token") return EncoderKind::per_frame_token;
  if (text == "clip_token") return EncoderKind::clip_token;
  if (text == "conv_grid") return EncoderKind::conv_grid;
  throw ConfigError("unknown encoder '" + text +
                    "' (expected per_frame_token, clip_token, conv_grid)");
}

void EncoderConfig::validate() const {
  if (grid == 0 || height % grid != 0 || width % grid != 0) {
    throw ConfigError("raster " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible into a " + std::to_string(grid) + "x" +
                      std::to_string(grid) + " patch grid");
  }
  if (kind == EncoderKind::conv_grid && (height % (2 * grid) != 0 || width % (2 * grid) != 0)) {
    throw ConfigError("conv_grid needs raster sides divisible by 2 * grid");
  }
  if (heads == 0 || model_width % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(model_width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

namespace {

void add_norm(ParamStore& store, const std::string& prefix, std::size_t d) {
  store.add(prefix + ".g", Tensor({d}, 1.0));
  store.add(prefix + ".b", Tensor({d}, 0.0));
}

Var norm(Graph& g, ParamStore& store, const std::string& prefix, Var x) {
  return layer_norm(x, g.param(store.at(prefix + ".g")), g.param(store.at(prefix + ".b")));
}

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void add_block(ParamStore& store, const std::string& prefix, const EncoderConfig& c, bool ffn,
               Rng& rng) {
  const std::size_t d = c.model_width;
  add_norm(store, prefix + ".ln1", d);
  AttentionParams::create(store, prefix + ".attn", d, c.heads, rng);
  if (ffn) {
    add_norm(store, prefix + ".ln2", d);
    store.add_normal(prefix + ".ffn.w1", {d, c.adapter_hidden}, fan_in_std(d), rng);
    store.add(prefix + ".ffn.b1", Tensor({c.adapter_hidden}, 0.0));
    store.add_normal(prefix + ".ffn.w2", {c.adapter_hidden, d}, fan_in_std(c.adapter_hidden), rng);
    store.add(prefix + ".ffn.b2", Tensor({d}, 0.0));
  }
}

}  // namespace

void Encoder::init_params(ParamStore& store, const EncoderConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d = c.model_width;
  if (c.kind == EncoderKind::conv_grid) {
    const std::size_t k1 = (c.height / (2 * c.grid)) * (c.width / (2 * c.grid)) * 3;
    store.add_normal("enc.conv1.w", {k1, c.conv_channels}, fan_in_std(k1), rng);
    store.add("enc.conv1.b", Tensor({c.conv_channels}, 0.0));
    store.add_normal("enc.conv2.w", {4 * c.conv_channels, d}, fan_in_std(4 * c.conv_channels), rng);
    store.add("enc.conv2.b", Tensor({d}, 0.0));
    add_block(store, "enc.adapter0", c, true, rng);
    add_block(store, "enc.adapter1", c, true, rng);
  } else {
    store.add_normal("enc.patch.w", {c.patch_dim(), d}, fan_in_std(c.patch_dim()), rng);
    store.add("enc.patch.b", Tensor({d}, 0.0));
    store.add_normal("enc.cls", {1, d}, 0.02, rng);
    add_block(store, "enc.block", c, false, rng);
  }
  add_norm(store, "enc.lnf", d);
}

Encoder::Encoder(ParamStore& store, EncoderConfig config)
    : store_(&store),
      config_(std::move(config)),
      encoding_(std::max<std::size_t>(config_.patches(), 64), config_.model_width) {
  config_.validate();
}

namespace {

void check_frames(const Tensor& frames, const EncoderConfig& c) {
  const Shape& s = frames.shape();
  if (s.size() != 4 || s[0] < 1 || s[1] != c.height || s[2] != c.width || s[3] != 3) {
    throw ConfigError("clip raster " + shape_str(s) + " does not match encoder input [T," +
                      std::to_string(c.height) + "," + std::to_string(c.width) + ",3]");
  }
}

}  // namespace

Tensor Encoder::patchify(const Tensor& frames) const {
  check_frames(frames, config_);
  const std::size_t T = frames.dim(0), H = config_.height, W = config_.width, G = config_.grid;
  const std::size_t ph = H / G, pw = W / G;
  const std::size_t P = G * G, pd = ph * pw * 3;
  Tensor out({T * P, pd});
  const double* src = frames.data().data();
  double* dst = out.data().data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t gy = 0; gy < G; ++gy)
      for (std::size_t gx = 0; gx < G; ++gx) {
        double* row = dst + (t * P + gy * G + gx) * pd;
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              row[(y * pw + x) * 3 + c] =
                  src[((t * H + gy * ph + y) * W + gx * pw + x) * 3 + c];
      }
  return out;
}

Tensor Encoder::conv_im2col(const Tensor& frames) const {
  check_frames(frames, config_);
  const std::size_t T = frames.dim(0), H = config_.height, W = config_.width, G = config_.grid;
  const std::size_t kh = H / (2 * G), kw = W / (2 * G);
  const std::size_t kd = kh * kw * 3;
  // Rows ordered (frame, output cell, 2x2 sub-cell) so that conv2's input for an
  // output cell is four consecutive rows.
  Tensor out({T * G * G * 4, kd});
  const double* src = frames.data().data();
  double* dst = out.data().data();
  std::size_t r = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t gy = 0; gy < G; ++gy)
      for (std::size_t gx = 0; gx < G; ++gx)
        for (std::size_t sy = 0; sy < 2; ++sy)
          for (std::size_t sx = 0; sx < 2; ++sx, ++r) {
            const std::size_t y0 = (2 * gy + sy) * kh, x0 = (2 * gx + sx) * kw;
            double* row = dst + r * kd;
            for (std::size_t y = 0; y < kh; ++y)
              for (std::size_t x = 0; x < kw; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                  row[(y * kw + x) * 3 + c] = src[((t * H + y0 + y) * W + x0 + x) * 3 + c];
          }
  return out;
}

Var Encoder::conv_features(Graph& g, const Tensor& frames) const {
  ParamStore& s = *store_;
  const std::size_t T = frames.dim(0), P = config_.patches();
  Var cells = g.constant(conv_im2col(frames));
  Var c1 = gelu(add_bias(matmul(cells, g.param(s.at("enc.conv1.w"))), g.param(s.at("enc.conv1.b"))));
  c1 = reshape(c1, {T * P, 4 * config_.conv_channels});
  return gelu(add_bias(matmul(c1, g.param(s.at("enc.conv2.w"))), g.param(s.at("enc.conv2.b"))));
}

Var Encoder::embed(Graph& g, const Tensor& frames) const {
  ParamStore& s = *store_;
  const std::size_t T = frames.dim(0), P = config_.patches();
  Var x;
  if (config_.kind == EncoderKind::conv_grid) {
    x = conv_features(g, frames);
  } else {
    Var patches = g.constant(patchify(frames));
    x = add_bias(matmul(patches, g.param(s.at("enc.patch.w"))), g.param(s.at("enc.patch.b")));
  }
  return add(x, g.constant(encoding_.rows(0, P, T, true)));
}

Var Encoder::transformer_block(Graph& g, Var x, const std::string& prefix, std::size_t groups,
                               bool with_ffn) const {
  ParamStore& s = *store_;
  Var attn = self_attention(norm(g, s, prefix + ".ln1", x),
                            AttentionParams::bind(s, prefix + ".attn", config_.heads), groups);
  Var y = add(x, attn);
  if (!with_ffn) return y;
  Var h = gelu(add_bias(matmul(norm(g, s, prefix + ".ln2", y), g.param(s.at(prefix + ".ffn.w1"))),
                        g.param(s.at(prefix + ".ffn.b1"))));
  Var f = add_bias(matmul(h, g.param(s.at(prefix + ".ffn.w2"))), g.param(s.at(prefix + ".ffn.b2")));
  return add(y, f);
}

ClipFeatures Encoder::encode(Graph& g, const Tensor& frames, double clip_duration_seconds) const {
  ParamStore& s = *store_;
  check_frames(frames, config_);
  const std::size_t T = frames.dim(0), P = config_.patches(), D = config_.model_width;
  ClipFeatures f;
  f.frames = T;
  f.patches = P;
  f.width = D;
  f.clip_duration_seconds = clip_duration_seconds;

  switch (config_.kind) {
    case EncoderKind::per_frame_token: {
      Var x = embed(g, frames);
      Var cls = gather_rows(g.param(s.at("enc.cls")), std::vector<std::size_t>(T, 0));
      const Var parts[] = {cls, x};
      Var all = concat_rows(parts);
      // Frame t: its class token followed by its P patch tokens.
      std::vector<std::size_t> order;
      order.reserve(T * (P + 1));
      for (std::size_t t = 0; t < T; ++t) {
        order.push_back(t);
        for (std::size_t j = 0; j < P; ++j) order.push_back(T + t * P + j);
      }
      Var y = transformer_block(g, gather_rows(all, std::move(order)), "enc.block", T, false);
      y = norm(g, s, "enc.lnf", y);
      std::vector<std::size_t> cls_rows, patch_rows;
      for (std::size_t t = 0; t < T; ++t) {
        cls_rows.push_back(t * (P + 1));
        for (std::size_t j = 0; j < P; ++j) patch_rows.push_back(t * (P + 1) + 1 + j);
      }
      f.h_cls = gather_rows(y, std::move(cls_rows));
      f.h_total = reshape(gather_rows(y, std::move(patch_rows)), {T, P, D});
      break;
    }
    case EncoderKind::clip_token: {
      const Var parts[] = {g.param(s.at("enc.cls")), embed(g, frames)};
      Var y = transformer_block(g, concat_rows(parts), "enc.block", 1, false);
      y = norm(g, s, "enc.lnf", y);
      f.h_cls = slice_rows(y, 0, 1);
      f.h_total = reshape(slice_rows(y, 1, 1 + T * P), {T, P, D});
      break;
    }
    case EncoderKind::conv_grid: {
      Var cells = conv_features(g, frames);
      f.h_cls = pool_rows(cells, P);
      Var x = add(cells, g.constant(encoding_.rows(0, P, T, true)));
      x = transformer_block(g, x, "enc.adapter0", T, true);
      x = transformer_block(g, x, "enc.adapter1", T, true);
      f.h_total = reshape(norm(g, s, "enc.lnf", x), {T, P, D});
      break;
    }
  }
  return f;
}

Var Encoder::frame_embedding(Graph& g, const Tensor& frame) const {
  if (frame.rank() != 4 || frame.dim(0) != 1) {
    throw ConfigError("frame_embedding expects a single frame [1,H,W,3], got " +
                      shape_str(frame.shape()));
  }
  const std::size_t D = config_.model_width, P = config_.patches();
  ClipFeatures f = encode(g, frame);
  if (config_.kind == EncoderKind::clip_token) {
    return reshape(pool_rows(reshape(f.h_total, {P, D}), P), {D});
  }
  return reshape(f.h_cls, {D});
}

}  // namespace tfd
