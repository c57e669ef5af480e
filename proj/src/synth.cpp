#include "tfd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "tfd/rng.hpp"

namespace tfd {

using nlohmann::json;

void ClipLabels::validate(std::size_t frames) const {
  if (state_change) {
    if (!pnr_frame) throw LabelError("state-change clip without pnr_frame");
    if (*pnr_frame >= frames) {
      throw LabelError("pnr_frame " + std::to_string(*pnr_frame) + " outside [0," +
                       std::to_string(frames) + ")");
    }
  } else if (pnr_frame || !boxes.empty()) {
    throw LabelError("no-change clip must have neither pnr_frame nor boxes");
  }
  if (boxes.size() > 2) throw LabelError("at most two boxes per clip");
  for (const auto& b : boxes) {
    if (b.cls == BoxClass::no_object) throw LabelError("box labeled no-object");
    const Box& x = b.box;
    for (double v : {x.cx, x.cy, x.w, x.h}) {
      if (!(v >= 0.0 && v <= 1.0)) throw LabelError("box coordinate outside [0,1]");
    }
    if (!(x.w > 0.0 && x.h > 0.0)) throw LabelError("box with non-positive extent");
  }
}

void SynthConfig::validate() const {
  if (frames < 2) throw ConfigError("clips need at least 2 frames");
  if (height < 8 || width < 8) throw ConfigError("rasters must be at least 8x8");
  if (!(p_change >= 0.0 && p_change <= 1.0)) throw ConfigError("p_change outside [0,1]");
  if (!(clip_duration_seconds > 0.0)) throw ConfigError("clip duration must be positive");
  if (!(noise >= 0.0)) throw ConfigError("noise level must be non-negative");
}

Box PixelRect::normalized(std::size_t width, std::size_t height) const {
  const double W = static_cast<double>(width);
  const double H = static_cast<double>(height);
  return {(x0 + 0.5 * w) / W, (y0 + 0.5 * h) / H, w / W, h / H};
}

std::uint64_t clip_seed(std::uint64_t seed_base, std::size_t index) {
  return derive_seed(seed_base, static_cast<std::uint64_t>(index));
}

namespace {

int randint(Rng& rng, int lo, int hi) {  // inclusive
  if (hi <= lo) return lo;
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

int scaled(double frac, std::size_t extent) {
  return std::max(2, static_cast<int>(std::lround(frac * static_cast<double>(extent))));
}

Rgb jitter(Rgb base, double amount, Rng& rng) {
  for (double& c : base) c = std::clamp(c + rng.uniform(-amount, amount), 0.0, 1.0);
  return base;
}

// Gap in pixels between two rectangles along the axis where they are farthest
// apart; negative when they overlap.
int gap(const PixelRect& a, const PixelRect& b) {
  const int gx = std::max(b.x0 - (a.x0 + a.w), a.x0 - (b.x0 + b.w));
  const int gy = std::max(b.y0 - (a.y0 + a.h), a.y0 - (b.y0 + b.h));
  return std::max(gx, gy);
}

PixelRect lerp(const PixelRect& a, const PixelRect& b, double t) {
  PixelRect r = a;
  r.x0 = static_cast<int>(std::lround(a.x0 + (b.x0 - a.x0) * t));
  r.y0 = static_cast<int>(std::lround(a.y0 + (b.y0 - a.y0) * t));
  return r;
}

}  // namespace

SceneScript make_script(std::uint64_t seed, const SynthConfig& config) {
  config.validate();
  Rng rng(derive_seed(seed, "script"));
  const int W = static_cast<int>(config.width);
  const int H = static_cast<int>(config.height);
  const std::size_t T = config.frames;

  SceneScript s;
  s.noise = config.noise;
  const bool change = rng.uniform() < config.p_change;
  const double g = rng.uniform(0.25, 0.45);
  s.background = jitter({g, g, g}, 0.03, rng);
  s.hand_color = jitter({0.85, 0.2, 0.2}, 0.05, rng);
  s.object_before = jitter({0.15, 0.3, 0.85}, 0.04, rng);
  s.object_after = jitter({0.9, 0.85, 0.15}, 0.04, rng);

  s.object.w = randint(rng, scaled(0.25, config.width), scaled(0.375, config.width));
  s.object.h = randint(rng, scaled(0.25, config.height), scaled(0.375, config.height));
  s.object.x0 = randint(rng, 1, W - 1 - s.object.w);
  s.object.y0 = randint(rng, 1, H - 1 - s.object.h);

  PixelRect hand;
  hand.w = randint(rng, scaled(0.22, config.width), scaled(0.31, config.width));
  hand.h = randint(rng, scaled(0.22, config.height), scaled(0.31, config.height));
  auto random_hand = [&]() {
    PixelRect r = hand;
    r.x0 = randint(rng, 0, W - hand.w);
    r.y0 = randint(rng, 0, H - hand.h);
    return r;
  };
  const PixelRect& obj = s.object;

  if (change) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.below(T - 1));
    s.change_frame = k;
    // Contact: the hand overlaps one side of the object by one pixel.
    std::vector<PixelRect> contacts;
    const int ymin = std::max(0, obj.y0 - hand.h / 2);
    const int ymax = std::min(H - hand.h, obj.y0 + obj.h - hand.h / 2);
    const int xmin = std::max(0, obj.x0 - hand.w / 2);
    const int xmax = std::min(W - hand.w, obj.x0 + obj.w - hand.w / 2);
    PixelRect c = hand;
    c.y0 = randint(rng, ymin, ymax);
    c.x0 = obj.x0 - hand.w + 1;  // left
    if (c.x0 >= 0) contacts.push_back(c);
    c.x0 = obj.x0 + obj.w - 1;  // right
    if (c.x0 + hand.w <= W) contacts.push_back(c);
    c = hand;
    c.x0 = randint(rng, xmin, xmax);
    c.y0 = obj.y0 - hand.h + 1;  // top
    if (c.y0 >= 0) contacts.push_back(c);
    c.y0 = obj.y0 + obj.h - 1;  // bottom
    if (c.y0 + hand.h <= H) contacts.push_back(c);
    if (contacts.empty()) throw ConfigError("raster too small for a hand-object contact");
    const PixelRect contact = contacts[rng.below(contacts.size())];

    PixelRect start = random_hand();
    for (int tries = 0; tries < 1000; ++tries) {
      const int travel = std::max(std::abs(start.x0 - contact.x0), std::abs(start.y0 - contact.y0));
      if (gap(start, obj) >= 1 && travel >= W / 5) break;
      start = random_hand();
    }
    s.hand.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      s.hand[t] = t >= k ? contact
                         : lerp(start, contact, static_cast<double>(t) / static_cast<double>(k));
    }
  } else {
    bool placed = false;
    for (int tries = 0; tries < 1000 && !placed; ++tries) {
      const PixelRect a = random_hand();
      const PixelRect b = random_hand();
      s.hand.resize(T);
      placed = true;
      for (std::size_t t = 0; t < T; ++t) {
        s.hand[t] = lerp(a, b, static_cast<double>(t) / static_cast<double>(T - 1));
        if (gap(s.hand[t], obj) < 2) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) {
      // Stationary hand in the corner farthest from the object.
      PixelRect best = hand;
      int best_gap = -W;
      for (int cx : {0, W - hand.w}) {
        for (int cy : {0, H - hand.h}) {
          PixelRect r = hand;
          r.x0 = cx;
          r.y0 = cy;
          if (gap(r, obj) > best_gap) {
            best_gap = gap(r, obj);
            best = r;
          }
        }
      }
      s.hand.assign(T, best);
    }
  }
  return s;
}

ClipLabels labels_from_script(const SceneScript& script, const SynthConfig& config) {
  ClipLabels labels;
  if (script.change_frame) {
    const std::size_t k = *script.change_frame;
    labels.state_change = true;
    labels.pnr_frame = k;
    labels.boxes.push_back({BoxClass::hand, script.hand[k].normalized(config.width, config.height)});
    labels.boxes.push_back({BoxClass::object, script.object.normalized(config.width, config.height)});
  }
  return labels;
}

Tensor render(const SceneScript& script, const SynthConfig& config, std::uint64_t seed) {
  const std::size_t T = config.frames, H = config.height, W = config.width;
  Tensor frames({T, H, W, 3});
  Rng rng(derive_seed(seed, "noise"));
  auto data = frames.data();
  auto paint = [&](std::size_t t, const PixelRect& r, const Rgb& color) {
    for (int y = std::max(0, r.y0); y < std::min<int>(static_cast<int>(H), r.y0 + r.h); ++y) {
      for (int x = std::max(0, r.x0); x < std::min<int>(static_cast<int>(W), r.x0 + r.w); ++x) {
        double* px = &data[((t * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)) * 3];
        for (int c = 0; c < 3; ++c) px[c] = color[static_cast<std::size_t>(c)];
      }
    }
  };
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < H * W; ++i) {
      for (std::size_t c = 0; c < 3; ++c) data[(t * H * W + i) * 3 + c] = script.background[c];
    }
    paint(t, script.hand[t], script.hand_color);
    const bool after = script.change_frame && t >= *script.change_frame;
    paint(t, script.object, after ? script.object_after : script.object_before);
    if (script.noise > 0.0) {
      for (std::size_t i = 0; i < H * W * 3; ++i) {
        double& v = data[t * H * W * 3 + i];
        v = std::clamp(v + script.noise * rng.normal(), 0.0, 1.0);
      }
    }
  }
  return frames;
}

SynthClip generate_clip(std::uint64_t seed, const SynthConfig& config) {
  SceneScript script = make_script(seed, config);
  SynthClip clip;
  clip.frames = render(script, config, seed);
  clip.labels = labels_from_script(script, config);
  clip.seed = seed;
  clip.clip_duration_seconds = config.clip_duration_seconds;
  clip.config = config;
  return clip;
}

// ---- dataset files -----------------------------------------------------------

namespace {

const char* class_name(BoxClass c) {
  switch (c) {
    case BoxClass::hand:
      return "hand";
    case BoxClass::object:
      return "object";
    default:
      return "no_object";
  }
}

BoxClass class_from(const std::string& s) {
  if (s == "hand") return BoxClass::hand;
  if (s == "object") return BoxClass::object;
  throw ParseError("unknown box class '" + s + "'");
}

json config_json(const SynthConfig& c) {
  return {{"frames", c.frames},           {"height", c.height},
          {"width", c.width},             {"p_change", c.p_change},
          {"clip_duration_seconds", c.clip_duration_seconds}, {"noise", c.noise}};
}

SynthConfig config_from(const json& j) {
  SynthConfig c;
  c.frames = j.at("frames").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.p_change = j.at("p_change").get<double>();
  c.clip_duration_seconds = j.at("clip_duration_seconds").get<double>();
  c.noise = j.at("noise").get<double>();
  return c;
}

json labels_json(const ClipLabels& l) {
  json boxes = json::array();
  for (const auto& b : l.boxes) {
    boxes.push_back({{"class", class_name(b.cls)}, {"box", {b.box.cx, b.box.cy, b.box.w, b.box.h}}});
  }
  return {{"state_change", l.state_change},
          {"pnr_frame", l.pnr_frame ? json(*l.pnr_frame) : json(nullptr)},
          {"boxes", boxes}};
}

ClipLabels labels_from(const json& j) {
  ClipLabels l;
  l.state_change = j.at("state_change").get<bool>();
  if (!j.at("pnr_frame").is_null()) l.pnr_frame = j.at("pnr_frame").get<std::size_t>();
  for (const auto& b : j.at("boxes")) {
    const auto& v = b.at("box");
    if (v.size() != 4) throw ParseError("box must have 4 coordinates");
    l.boxes.push_back({class_from(b.at("class").get<std::string>()),
                       {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(),
                        v[3].get<double>()}});
  }
  return l;
}

}  // namespace

std::vector<DatasetRecord> make_records(std::size_t count, std::uint64_t seed_base,
                                        const SynthConfig& config) {
  std::vector<DatasetRecord> records;
  records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    DatasetRecord r;
    r.seed = clip_seed(seed_base, i);
    r.config = config;
    r.labels = labels_from_script(make_script(r.seed, config), config);
    records.push_back(std::move(r));
  }
  return records;
}

void write_records(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                   const std::string& header_json) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  if (!header_json.empty()) {
    json header = json::parse(header_json);
    header["count"] = records.size();
    out << json{{"header", header}}.dump() << '\n';
  }
  for (const auto& r : records) {
    json line = {{"seed", r.seed}, {"config", config_json(r.config)}, {"labels", labels_json(r.labels)}};
    out << line.dump() << '\n';
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

void write_dataset(const std::filesystem::path& path, std::size_t count, std::uint64_t seed_base,
                   const SynthConfig& config, const std::string& header_json) {
  if (count < 1) throw ContractError("dataset count must be at least 1");
  write_records(path, make_records(count, seed_base, config), header_json);
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path.string() + "'");
  Dataset ds;
  std::optional<std::size_t> expected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (j.contains("header")) {
        if (line_no != 1) throw ParseError("header must be the first line");
        ds.header = j.at("header").dump();
        if (j.at("header").contains("count")) expected = j.at("header").at("count").get<std::size_t>();
        continue;
      }
      DatasetRecord r;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.config = config_from(j.at("config"));
      r.labels = labels_from(j.at("labels"));
      ds.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (expected && *expected != ds.records.size()) {
    throw ParseError(path.string() + ":" + std::to_string(line_no + 1) + ": expected " +
                     std::to_string(*expected) + " records, found " +
                     std::to_string(ds.records.size()));
  }
  if (ds.records.empty()) throw ParseError(path.string() + ": no records");
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    try {
      r.labels.validate(r.config.frames);
    } catch (const LabelError& e) {
      throw CorruptionError("record " + std::to_string(i) + ": " + e.what());
    }
    const ClipLabels regenerated = labels_from_script(make_script(r.seed, r.config), r.config);
    if (!(regenerated == r.labels)) {
      throw CorruptionError("record " + std::to_string(i) +
                            ": stored labels do not match labels regenerated from seed " +
                            std::to_string(r.seed));
    }
  }
  return ds;
}

}  // namespace tfd
