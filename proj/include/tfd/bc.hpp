#pragma once

// Behavior cloning on a toy 2D push task, with a frozen visual encoder
// providing the observation features.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tfd/model.hpp"
#include "tfd/param_store.hpp"

namespace tfd {

using Vec2 = std::array<double, 2>;

struct EnvConfig {
  std::size_t horizon = 50;
  double success_radius = 0.05;
  double max_step = 0.05;
  double gripper_half = 0.12;  // half side of the square gripper
  double cube_half = 0.15;
  Vec2 target{0.5, 0.5};
  std::size_t raster = 32;

  void validate() const;
};

struct EnvState {
  Vec2 gripper{};
  Vec2 cube{};
  Vec2 target{};
};

/// Square gripper pushing a square cube towards a target. Positions are
/// clamped to [0,1]^2. When the gripper overlaps the cube at the start of a
/// step, the cube is displaced by the gripper's displacement; otherwise it
/// stays put.
class ToyEnv {
 public:
  explicit ToyEnv(EnvConfig config = {});

  /// Seeded start: gripper in [0.1,0.9]^2, cube in [0.25,0.75]^2, no initial overlap.
  const EnvState& reset(std::uint64_t seed);
  void set_state(const EnvState& s);
  /// Clamps the action to the step bounds and advances one step.
  const EnvState& step(Vec2 action);

  const EnvState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  std::size_t t() const { return t_; }
  bool overlapping() const;
  bool success() const;
  bool done() const { return success() || t_ >= config_.horizon; }

  /// [1, raster, raster, 3]: grey background, blue cube, red gripper on top.
  Tensor render() const;

 private:
  EnvConfig config_;
  EnvState state_;
  std::size_t t_ = 0;
};

/// Scales `a` down so that no component exceeds `bound` in magnitude.
Vec2 clamp_action(Vec2 a, double bound);

/// Scripted demonstrator: approach the side of the cube facing away from the
/// target, then carry it to the target. Zero action once solved.
Vec2 expert_policy(const EnvState& s, const EnvConfig& config);

struct Transition {
  std::vector<double> observation;  // flattened raster
  Vec2 proprio{};                   // gripper (x, y)
  Vec2 action{};
};

struct Demo {
  std::uint64_t seed = 0;
  std::vector<Transition> steps;
};

/// Expert rollouts from seeded starts (episode i uses derive_seed(seed, i)).
/// Failed rollouts are discarded with a warning on stderr and replaced.
std::vector<Demo> collect_demos(std::size_t count, std::uint64_t seed, const EnvConfig& env = {});

void write_demos(const std::filesystem::path& path, const std::vector<Demo>& demos,
                 const std::string& header_json);
std::vector<Demo> read_demos(const std::filesystem::path& path);

/// Frozen frame embedding; never records gradients into the encoder.
using Embedder = std::function<std::vector<double>(const Tensor& frame)>;
Embedder make_embedder(const Model& model);

struct BcConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t hidden = 64;
  bool proprio = true;
  std::uint64_t seed = 0;
};

/// Two-layer MLP [embedding | proprio] -> action, output clamped to the step bounds.
class Policy {
 public:
  Policy(std::size_t embedding_width, const BcConfig& config, double max_step);

  std::size_t input_width() const;
  bool uses_proprio() const { return proprio_; }
  double max_step() const { return max_step_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Network input for one observation.
  std::vector<double> features(const std::vector<double>& embedding, const Vec2& proprio) const;
  /// Unclamped network output in units of max_step, rows of `inputs` [N, input_width].
  Var forward(Graph& g, Var inputs) const;
  Vec2 act(const std::vector<double>& embedding, const Vec2& proprio) const;

 private:
  std::size_t embedding_width_;
  bool proprio_;
  double max_step_;
  ParamStore params_;
};

struct BcResult {
  Policy policy;
  std::vector<double> loss;  // per step
};

/// Adam on the mean squared action error over all demo transitions.
BcResult bc_train(const std::vector<Demo>& demos, const Embedder& embed,
                  std::size_t embedding_width, const BcConfig& config, const EnvConfig& env = {});

using Controller = std::function<Vec2(const ToyEnv& env)>;
Controller policy_controller(const Policy& policy, const Embedder& embed);
Controller expert_controller();

/// Fraction of `episodes` seeded rollouts (episode i from derive_seed(seed, i))
/// that put the cube within the success radius before the horizon.
double bc_eval(const Controller& controller, std::size_t episodes, std::uint64_t seed,
               const EnvConfig& env = {});

struct BcComparison {
  std::vector<std::uint64_t> seeds;
  std::vector<double> trained;  // per seed
  std::vector<double> baseline;
  double trained_mean = 0.0;
  double baseline_mean = 0.0;
  double gap() const { return trained_mean - baseline_mean; }
};

/// Same demos, policy seed and evaluation episodes for both encoders.
BcComparison bc_compare(const Model& trained, const Model& baseline,
                        const std::vector<std::uint64_t>& seeds, std::size_t demos,
                        std::size_t episodes, const BcConfig& config, const EnvConfig& env = {});

}  // namespace tfd
