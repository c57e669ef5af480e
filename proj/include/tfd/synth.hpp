#pragma once

// Procedural stand-in for egocentric hand-object clips.
//
// Each clip shows a hand (red rectangle) and an object (rectangle). In a
// state-change clip the hand travels to the object, touches it at
// `change_frame` and the object's color flips from its "before" state (blue)
// to its "after" state (yellow) from that frame on. In a no-change clip the
// hand drifts without ever touching the object and the object keeps its color.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tfd/tensor.hpp"

namespace tfd {

/// Normalized (cx, cy, w, h), all in [0, 1].
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const Box&) const = default;
};

enum class BoxClass : int { hand = 0, object = 1, no_object = 2 };

struct LabeledBox {
  BoxClass cls = BoxClass::hand;
  Box box;

  bool operator==(const LabeledBox&) const = default;
};

struct ClipLabels {
  bool state_change = false;
  std::optional<std::size_t> pnr_frame;
  std::vector<LabeledBox> boxes;

  /// Throws LabelError when the label invariants do not hold for `frames`.
  void validate(std::size_t frames) const;
  bool operator==(const ClipLabels&) const = default;
};

struct SynthConfig {
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  double p_change = 0.5;
  double clip_duration_seconds = 8.0;
  double noise = 0.03;

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

/// Integer pixel rectangle [x0, x0+w) x [y0, y0+h).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  Box normalized(std::size_t width, std::size_t height) const;
  bool operator==(const PixelRect&) const = default;
};

using Rgb = std::array<double, 3>;

struct SceneScript {
  std::vector<PixelRect> hand;  // per frame
  PixelRect object;
  std::optional<std::size_t> change_frame;
  Rgb background{};
  Rgb hand_color{};
  Rgb object_before{};
  Rgb object_after{};
  double noise = 0.0;
};

/// Minimum per-channel L1 distance between the object's before/after colors.
inline constexpr double kStateContrast = 1.2;

struct SynthClip {
  Tensor frames;  // [T, H, W, 3], values in [0, 1]
  ClipLabels labels;
  std::uint64_t seed = 0;
  double clip_duration_seconds = 8.0;
  SynthConfig config;
};

SceneScript make_script(std::uint64_t seed, const SynthConfig& config);
ClipLabels labels_from_script(const SceneScript& script, const SynthConfig& config);
Tensor render(const SceneScript& script, const SynthConfig& config, std::uint64_t seed);
SynthClip generate_clip(std::uint64_t seed, const SynthConfig& config);

/// Seed of the i-th clip of a dataset.
std::uint64_t clip_seed(std::uint64_t seed_base, std::size_t index);

// ---- dataset files -----------------------------------------------------------
//
// NDJSON. An optional first line {"header": {...}} carries provenance; every
// other line is {"seed": u64, "config": {...}, "labels": {...}}. Rasters are not
// stored: clips regenerate from (seed, config) and the regenerated labels must
// match the stored ones.

struct DatasetRecord {
  std::uint64_t seed = 0;
  SynthConfig config;
  ClipLabels labels;

  SynthClip clip() const { return generate_clip(seed, config); }
};

struct Dataset {
  std::string header;  // serialized header object, empty when absent
  std::vector<DatasetRecord> records;
};

std::vector<DatasetRecord> make_records(std::size_t count, std::uint64_t seed_base,
                                        const SynthConfig& config);
void write_dataset(const std::filesystem::path& path, std::size_t count, std::uint64_t seed_base,
                   const SynthConfig& config, const std::string& header_json = "");
void write_records(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                   const std::string& header_json = "");
/// Throws ParseError (with line number) on malformed lines and
/// CorruptionError (with record index) when regenerated labels differ.
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace tfd
