#include "tfd/bc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "tfd/rng.hpp"
#include "tfd/trainer.hpp"

namespace tfd {

using nlohmann::json;

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool boxes_overlap(const Vec2& g, const Vec2& c, double reach) {
  return std::fabs(g[0] - c[0]) < reach && std::fabs(g[1] - c[1]) < reach;
}

double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

}  // namespace

void EnvConfig::validate() const {
  if (horizon == 0) throw ConfigError("horizon must be positive");
  if (!(success_radius > 0.0)) throw ConfigError("success_radius must be positive");
  if (!(max_step > 0.0)) throw ConfigError("max_step must be positive");
  if (!(gripper_half > 0.0 && cube_half > 0.0)) throw ConfigError("object sizes must be positive");
  if (gripper_half + cube_half >= 0.5) throw ConfigError("gripper and cube too large for the arena");
  if (raster < 4) throw ConfigError("raster must be at least 4 pixels");
  for (double v : target) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("target outside [0,1]^2");
  }
}

ToyEnv::ToyEnv(EnvConfig config) : config_(config) {
  config_.validate();
  state_.target = config_.target;
}

const EnvState& ToyEnv::reset(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "env"));
  const double reach = config_.gripper_half + config_.cube_half;
  EnvState s;
  s.target = config_.target;
  do {
    s.gripper = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    s.cube = {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)};
  } while (boxes_overlap(s.gripper, s.cube, reach));
  state_ = s;
  t_ = 0;
  return state_;
}

void ToyEnv::set_state(const EnvState& s) {
  state_ = s;
  for (Vec2* p : {&state_.gripper, &state_.cube, &state_.target}) {
    (*p)[0] = clamp01((*p)[0]);
    (*p)[1] = clamp01((*p)[1]);
  }
  t_ = 0;
}

const EnvState& ToyEnv::step(Vec2 action) {
  const Vec2 a = clamp_action(action, config_.max_step);
  const Vec2 before = state_.gripper;
  const bool contact = overlapping();
  state_.gripper = {clamp01(before[0] + a[0]), clamp01(before[1] + a[1])};
  if (contact) {
    state_.cube[0] = clamp01(state_.cube[0] + state_.gripper[0] - before[0]);
    state_.cube[1] = clamp01(state_.cube[1] + state_.gripper[1] - before[1]);
  }
  ++t_;
  return state_;
}

bool ToyEnv::overlapping() const {
  return boxes_overlap(state_.gripper, state_.cube, config_.gripper_half + config_.cube_half);
}

bool ToyEnv::success() const {
  return distance(state_.cube, state_.target) <= config_.success_radius;
}

Tensor ToyEnv::render() const {
  const std::size_t R = config_.raster;
  Tensor img({1, R, R, 3}, 0.0);
  auto data = img.data();
  auto fill = [&](const Vec2& c, double half, const std::array<double, 3>& rgb) {
    auto lo = [&](double v) {
      return static_cast<std::size_t>(std::clamp(std::lround(v * R), 0L, static_cast<long>(R)));
    };
    const std::size_t x0 = lo(c[0] - half), x1 = lo(c[0] + half);
    const std::size_t y0 = lo(c[1] - half), y1 = lo(c[1] + half);
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) data[(y * R + x) * 3 + ch] = rgb[ch];
      }
    }
  };
  fill({0.5, 0.5}, 0.5, {0.35, 0.35, 0.35});
  fill(state_.cube, config_.cube_half, {0.15, 0.3, 0.85});
  fill(state_.gripper, config_.gripper_half, {0.85, 0.2, 0.2});
  return img;
}

Vec2 clamp_action(Vec2 a, double bound) {
  if (!std::isfinite(a[0]) || !std::isfinite(a[1])) return {0.0, 0.0};
  const double m = std::max(std::fabs(a[0]), std::fabs(a[1]));
  if (m <= bound) return a;
  return {a[0] / m * bound, a[1] / m * bound};
}

Vec2 expert_policy(const EnvState& s, const EnvConfig& config) {
  if (distance(s.cube, s.target) <= config.success_radius) return {0.0, 0.0};
  const double reach = config.gripper_half + config.cube_half;
  const Vec2 to_target = {s.target[0] - s.cube[0], s.target[1] - s.cube[1]};
  if (boxes_overlap(s.gripper, s.cube, reach)) return clamp_action(to_target, config.max_step);
  const double n = std::hypot(to_target[0], to_target[1]);
  const Vec2 u = {to_target[0] / n, to_target[1] / n};
  const double back = reach - 0.02;
  const Vec2 behind = {clamp01(s.cube[0] - u[0] * back), clamp01(s.cube[1] - u[1] * back)};
  return clamp_action({behind[0] - s.gripper[0], behind[1] - s.gripper[1]}, config.max_step);
}

std::vector<Demo> collect_demos(std::size_t count, std::uint64_t seed, const EnvConfig& env_config) {
  if (count == 0) throw ContractError("collect_demos needs count >= 1");
  std::vector<Demo> demos;
  ToyEnv env(env_config);
  for (std::uint64_t i = 0; demos.size() < count; ++i) {
    Demo demo;
    demo.seed = derive_seed(seed, i);
    env.reset(demo.seed);
    while (!env.done()) {
      Transition tr;
      const Tensor obs = env.render();
      tr.observation.assign(obs.data().begin(), obs.data().end());
      tr.proprio = env.state().gripper;
      tr.action = expert_policy(env.state(), env_config);
      env.step(tr.action);
      demo.steps.push_back(std::move(tr));
    }
    if (!env.success()) {
      std::cerr << "warning: expert failed on demo seed " << demo.seed << ", discarded\n";
      continue;
    }
    demos.push_back(std::move(demo));
  }
  return demos;
}

void write_demos(const std::filesystem::path& path, const std::vector<Demo>& demos,
                 const std::string& header_json) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  json header = json::parse(header_json.empty() ? "{}" : header_json);
  std::size_t transitions = 0;
  for (const Demo& d : demos) transitions += d.steps.size();
  header["demos"] = demos.size();
  header["transitions"] = transitions;
  out << json{{"header", header}}.dump() << '\n';
  for (std::size_t d = 0; d < demos.size(); ++d) {
    for (std::size_t t = 0; t < demos[d].steps.size(); ++t) {
      const Transition& tr = demos[d].steps[t];
      json line = {{"demo", d},
                   {"seed", demos[d].seed},
                   {"t", t},
                   {"proprio", tr.proprio},
                   {"action", tr.action},
                   {"observation", tr.observation}};
      out << line.dump() << '\n';
    }
  }
  if (!out) throw StateError("write failed: " + path.string());
}

std::vector<Demo> read_demos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open " + path.string());
  std::vector<Demo> demos;
  std::optional<std::size_t> expected;
  std::optional<std::size_t> expected_transitions;
  std::size_t transitions = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      if (j.contains("header")) {
        if (lineno != 1) throw ParseError(where + ": header must be the first line");
        expected = j["header"].at("demos").get<std::size_t>();
        if (j["header"].contains("transitions")) {
          expected_transitions = j["header"]["transitions"].get<std::size_t>();
        }
        continue;
      }
      const std::size_t d = j.at("demo").get<std::size_t>();
      const std::size_t t = j.at("t").get<std::size_t>();
      if (d == demos.size()) {
        demos.emplace_back();
        demos.back().seed = j.at("seed").get<std::uint64_t>();
      } else if (d + 1 != demos.size()) {
        throw ParseError(where + ": demo index " + std::to_string(d) + " out of order");
      }
      if (t != demos.back().steps.size()) {
        throw ParseError(where + ": step index " + std::to_string(t) + " out of order");
      }
      Transition tr;
      tr.proprio = j.at("proprio").get<Vec2>();
      tr.action = j.at("action").get<Vec2>();
      tr.observation = j.at("observation").get<std::vector<double>>();
      demos.back().steps.push_back(std::move(tr));
      ++transitions;
    } catch (const json::exception& ex) {
      throw ParseError(where + ": " + ex.what());
    }
  }
  if (expected && *expected != demos.size()) {
    throw CorruptionError(path.string() + ": header announces " + std::to_string(*expected) +
                          " demos, found " + std::to_string(demos.size()));
  }
  if (expected_transitions && *expected_transitions != transitions) {
    throw CorruptionError(path.string() + ": header announces " + std::to_string(*expected_transitions) +
                          " transitions, found " + std::to_string(transitions));
  }
  return demos;
}

Embedder make_embedder(const Model& model) {
  const Encoder* encoder = &model.encoder();
  return [encoder](const Tensor& frame) {
    Graph g;
    auto v = encoder->frame_embedding(g, frame).value();
    return std::vector<double>(v.begin(), v.end());
  };
}

Policy::Policy(std::size_t embedding_width, const BcConfig& config, double max_step)
    : embedding_width_(embedding_width), proprio_(config.proprio), max_step_(max_step) {
  if (config.hidden == 0) throw ConfigError("policy hidden width must be positive");
  Rng rng(derive_seed(config.seed, "policy"));
  const std::size_t in = input_width();
  params_.add_normal("bc.w1", {in, config.hidden}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  params_.add("bc.b1", Tensor({config.hidden}, 0.0));
  params_.add_normal("bc.w2", {config.hidden, 2},
                     1.0 / std::sqrt(static_cast<double>(config.hidden)), rng);
  params_.add("bc.b2", Tensor({2}, 0.0));
}

std::size_t Policy::input_width() const { return embedding_width_ + (proprio_ ? 2 : 0); }

std::vector<double> Policy::features(const std::vector<double>& embedding,
                                     const Vec2& proprio) const {
  if (embedding.size() != embedding_width_) {
    throw DimensionError("embedding has " + std::to_string(embedding.size()) + " entries, policy expects " +
                         std::to_string(embedding_width_));
  }
  std::vector<double> x = embedding;
  if (proprio_) {
    x.push_back(2.0 * proprio[0] - 1.0);
    x.push_back(2.0 * proprio[1] - 1.0);
  }
  return x;
}

Var Policy::forward(Graph& g, Var inputs) const {
  auto p = [&](const char* name) { return g.param(const_cast<Tensor&>(params_.at(name))); };
  Var h = gelu(add_bias(matmul(inputs, p("bc.w1")), p("bc.b1")));
  return add_bias(matmul(h, p("bc.w2")), p("bc.b2"));
}

Vec2 Policy::act(const std::vector<double>& embedding, const Vec2& proprio) const {
  const std::vector<double> x = features(embedding, proprio);
  Graph g;
  Var out = forward(g, g.constant(Tensor({1, x.size()}, x)));
  auto v = out.value();
  return clamp_action({v[0] * max_step_, v[1] * max_step_}, max_step_);
}

BcResult bc_train(const std::vector<Demo>& demos, const Embedder& embed,
                  std::size_t embedding_width, const BcConfig& config, const EnvConfig& env) {
  env.validate();
  if (demos.empty()) throw ContractError("bc_train needs demonstrations");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  BcResult result{Policy(embedding_width, config, env.max_step), {}};
  Policy& policy = result.policy;

  const std::size_t R = env.raster;
  std::vector<std::vector<double>> inputs;
  std::vector<Vec2> targets;
  for (const Demo& d : demos) {
    for (const Transition& tr : d.steps) {
      const Tensor frame({1, R, R, 3}, tr.observation);
      inputs.push_back(policy.features(embed(frame), tr.proprio));
      targets.push_back({tr.action[0] / env.max_step, tr.action[1] / env.max_step});
    }
  }
  if (inputs.empty()) throw ContractError("demonstrations contain no transitions");

  const std::size_t in = policy.input_width();
  BatchSampler sampler(inputs.size(), derive_seed(config.seed, "bc"));
  AdamState adam;
  adam.lr = config.lr;
  policy.params().set_trainable(true);
  policy.params().zero_grads();
  result.loss.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = sampler.next(config.batch_size);
    Tensor x({batch.size(), in}), y({batch.size(), 2});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::copy(inputs[batch[b]].begin(), inputs[batch[b]].end(), x.data().begin() + b * in);
      y[b * 2] = targets[batch[b]][0];
      y[b * 2 + 1] = targets[batch[b]][1];
    }
    Graph g;
    Var loss = mean(square(policy.forward(g, g.constant(std::move(x))) - g.constant(std::move(y))));
    if (!std::isfinite(loss.item())) {
      throw NumericError("non-finite BC loss at step " + std::to_string(step + 1));
    }
    result.loss.push_back(loss.item());
    g.backward(loss);
    adam_step(policy.params(), adam);
  }
  return result;
}

Controller policy_controller(const Policy& policy, const Embedder& embed) {
  return [&policy, embed](const ToyEnv& env) {
    return policy.act(embed(env.render()), env.state().gripper);
  };
}

Controller expert_controller() {
  return [](const ToyEnv& env) { return expert_policy(env.state(), env.config()); };
}

double bc_eval(const Controller& controller, std::size_t episodes, std::uint64_t seed,
               const EnvConfig& env_config) {
  if (episodes == 0) throw ContractError("bc_eval needs episodes >= 1");
  ToyEnv env(env_config);
  std::size_t successes = 0;
  for (std::size_t i = 0; i < episodes; ++i) {
    env.reset(derive_seed(seed, static_cast<std::uint64_t>(i)));
    while (!env.done()) env.step(controller(env));
    if (env.success()) ++successes;
  }
  return static_cast<double>(successes) / static_cast<double>(episodes);
}

BcComparison bc_compare(const Model& trained, const Model& baseline,
                        const std::vector<std::uint64_t>& seeds, std::size_t demo_count,
                        std::size_t episodes, const BcConfig& config, const EnvConfig& env) {
  if (seeds.empty()) throw ContractError("bc_compare needs at least one seed");
  if (trained.config().encoder.model_width != baseline.config().encoder.model_width) {
    throw ConfigError("encoders under comparison differ in width");
  }
  const std::size_t D = trained.config().encoder.model_width;
  BcComparison out;
  out.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    const auto demos = collect_demos(demo_count, derive_seed(seed, "demos"), env);
    BcConfig c = config;
    c.seed = seed;
    for (const Model* m : {&trained, &baseline}) {
      const Embedder embed = make_embedder(*m);
      const BcResult r = bc_train(demos, embed, D, c, env);
      const double rate = bc_eval(policy_controller(r.policy, embed), episodes,
                                  derive_seed(seed, "eval"), env);
      (m == &trained ? out.trained : out.baseline).push_back(rate);
    }
  }
  const double n = static_cast<double>(seeds.size());
  for (double v : out.trained) out.trained_mean += v / n;
  for (double v : out.baseline) out.baseline_mean += v / n;
  return out;
}

}  // namespace tfd
