#include "tfd/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tfd/rng.hpp"

namespace tfd {

using ordered_json = nlohmann::ordered_json;

// ---- optimizer ---------------------------------------------------------------

void adam_step(ParamStore& store, AdamState& state) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& entry : store) {
    Tensor& p = entry.tensor;
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) throw ContractError("parameter '" + entry.name + "' has no gradient buffer");
    auto& [m, v] = state.moments[entry.name];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto value = p.data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      value[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
    p.zero_grad();
  }
}

// ---- training ----------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t dataset_size, std::uint64_t seed)
    : size_(dataset_size), seed_(derive_seed(seed, "shuffle")) {
  if (size_ == 0) throw ContractError("batch sampler over an empty dataset");
  order_.resize(size_);
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = 0; i < size_; ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, epoch_++));
  for (std::size_t i = size_ - 1; i > 0; --i) {
    std::swap(order_[i], order_[rng.below(i + 1)]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == size_) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

ClipLossTerms clip_loss(Graph& g, Model& model, const Tensor& frames, const ClipLabels& labels,
                        const TaskSet& tasks, const std::array<double, 3>& task_scale,
                        double regularizer_scale, const Assignment* fixed_match) {
  if (tasks.empty()) throw ConfigError("no task enabled");
  const std::size_t T = model.config().decoder.frames;
  ClipFeatures features = model.encoder().encode(g, frames);
  TaskPredictions pred = model.decoder().decode(features, KeyframeSpec::train(labels.pnr_frame),
                                                /*cache_attention=*/false);
  ClipLossTerms terms;
  if (tasks.oscc) terms.task_loss[0] = oscc_loss(pred.oscc_logits(), labels.state_change);
  if (tasks.pnr) terms.task_loss[1] = pnr_loss(pred.pnr_logits(), make_pnr_target(labels, T));
  if (tasks.scod && labels.state_change && !labels.boxes.empty()) {
    terms.task_loss[2] = scod_loss(pred.scod(), labels, fixed_match, &terms.match);
  }
  std::array<std::optional<Var>, 3> scaled;
  for (std::size_t i = 0; i < 3; ++i) {
    if (terms.task_loss[i]) scaled[i] = scale(*terms.task_loss[i], task_scale[i]);
  }
  terms.total = joint_loss(scaled, g.param(model.log_sigma2()), tasks, regularizer_scale);
  return terms;
}

std::vector<TrainLogRow> train(Model& model, const std::vector<DatasetRecord>& data,
                               const TrainConfig& config, const StepObserver& observer) {
  if (data.empty()) throw ContractError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(config.lr > 0.0)) throw ConfigError("lr must be positive");
  if (config.tasks.empty()) throw ConfigError("no task enabled");
  model.set_tasks(config.tasks);

  ParamStore& params = model.params();
  params.set_trainable(true);
  params.zero_grads();
  AdamState adam;
  adam.lr = config.lr;
  BatchSampler sampler(data.size(), config.seed);
  const bool on[3] = {config.tasks.oscc, config.tasks.pnr, config.tasks.scod};

  std::vector<TrainLogRow> log;
  log.reserve(config.steps);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto batch = sampler.next(config.batch_size);
    const double B = static_cast<double>(batch.size());
    std::size_t change = 0;
    for (std::size_t i : batch) change += data[i].labels.state_change ? 1 : 0;
    const std::array<double, 3> task_scale = {1.0 / B, 1.0 / B,
                                              change ? 1.0 / static_cast<double>(change) : 0.0};

    TrainLogRow row;
    row.step = step;
    const Tensor& s = model.log_sigma2();
    for (std::size_t i = 0; i < 3; ++i) {
      if (on[i]) row.sigma2[i] = std::exp(s[i]);
    }
    std::array<double, 3> sums{};
    std::array<std::size_t, 3> counts{};
    for (std::size_t idx : batch) {
      const DatasetRecord& rec = data[idx];
      const SynthClip clip = rec.clip();
      Graph g;
      ClipLossTerms terms;
      try {
        terms = clip_loss(g, model, clip.frames, rec.labels, config.tasks, task_scale, 1.0 / B);
      } catch (const NumericError&) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " on clip seed " +
                           std::to_string(rec.seed));
      }
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " on clip seed " +
                           std::to_string(rec.seed));
      }
      row.loss_total += total;
      for (std::size_t i = 0; i < 3; ++i) {
        if (terms.task_loss[i]) {
          sums[i] += terms.task_loss[i]->item();
          ++counts[i];
        }
      }
      g.backward(terms.total);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      if (on[i] && counts[i]) row.task_loss[i] = sums[i] / static_cast<double>(counts[i]);
    }
    if (observer) observer(step, params);
    adam_step(params, adam);
    log.push_back(row);
  }
  return log;
}

// ---- evaluation ----------------------------------------------------------------

ClipPrediction to_values(const TaskPredictions& p) {
  ClipPrediction out;
  auto copy = [](Var v) {
    auto s = v.value();
    return std::vector<double>(s.begin(), s.end());
  };
  if (p.has_oscc()) out.oscc_logits = copy(p.oscc_logits());
  if (p.has_pnr()) out.pnr_logits = copy(p.pnr_logits());
  if (p.has_scod()) {
    for (const auto& q : p.scod()) out.scod.push_back(to_value(q));
  }
  return out;
}

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void EvalAccumulator::add(const ClipPrediction& prediction, const ClipLabels& labels,
                          std::size_t frames, double clip_duration_seconds) {
  labels.validate(frames);
  ++clips_;
  if (labels.state_change) ++change_clips_;
  if (prediction.oscc_logits) {
    ++oscc_seen_;
    const bool predicted_change = argmax(*prediction.oscc_logits) == kOsccChange;
    if (predicted_change == labels.state_change) ++oscc_correct_;
  }
  if (!labels.state_change) return;
  if (prediction.pnr_logits) {
    const double err = std::fabs(static_cast<double>(argmax(*prediction.pnr_logits)) -
                                 static_cast<double>(*labels.pnr_frame));
    ++pnr_seen_;
    pnr_error_sum_ += err;
    pnr_seconds_sum_ += err * clip_duration_seconds / static_cast<double>(frames);
  }
  if (!prediction.scod.empty() && !labels.boxes.empty()) {
    const Assignment match = hungarian(scod_cost_matrix(prediction.scod, labels));
    double clip_iou = 0.0;
    for (const auto& [r, c] : match.pairs) {
      clip_iou += iou(prediction.scod[c].box, labels.boxes[r].box);
    }
    ++scod_seen_;
    iou_sum_ += clip_iou / static_cast<double>(match.pairs.size());
  }
}

void EvalAccumulator::add_losses(const std::array<std::optional<double>, 3>& losses) {
  for (std::size_t i = 0; i < 3; ++i) {
    if (losses[i]) {
      loss_sum_[i] += *losses[i];
      ++loss_count_[i];
    }
  }
}

EvalReport EvalAccumulator::report() const {
  EvalReport r;
  r.clips = clips_;
  r.change_clips = change_clips_;
  if (oscc_seen_) r.oscc_accuracy = static_cast<double>(oscc_correct_) / oscc_seen_;
  if (pnr_seen_) {
    r.pnr_error_frames = pnr_error_sum_ / static_cast<double>(pnr_seen_);
    r.pnr_error_seconds = pnr_seconds_sum_ / static_cast<double>(pnr_seen_);
  }
  if (scod_seen_) r.scod_mean_iou = iou_sum_ / static_cast<double>(scod_seen_);
  for (std::size_t i = 0; i < 3; ++i) {
    if (loss_count_[i]) r.loss_mean[i] = loss_sum_[i] / static_cast<double>(loss_count_[i]);
  }
  return r;
}

EvalReport evaluate(Model& model, const std::vector<DatasetRecord>& data) {
  if (data.empty()) throw ContractError("evaluation set is empty");
  const std::size_t T = model.config().decoder.frames;
  EvalAccumulator acc;
  for (const DatasetRecord& rec : data) {
    const SynthClip clip = rec.clip();
    Graph g;
    ClipFeatures features = model.encoder().encode(g, clip.frames, clip.clip_duration_seconds);
    TaskPredictions pred = model.decoder().decode(features, KeyframeSpec::infer_auto(), false);
    acc.add(to_values(pred), rec.labels, T, clip.clip_duration_seconds);

    std::array<std::optional<double>, 3> losses;
    if (pred.has_oscc()) losses[0] = oscc_loss(pred.oscc_logits(), rec.labels.state_change).item();
    if (pred.has_pnr()) {
      losses[1] = pnr_loss(pred.pnr_logits(), make_pnr_target(rec.labels, T)).item();
    }
    if (pred.has_scod() && rec.labels.state_change && !rec.labels.boxes.empty()) {
      losses[2] = scod_loss(pred.scod(), rec.labels).item();
    }
    acc.add_losses(losses);
  }
  return acc.report();
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     const std::string& meta_json) {
  ordered_json header = ordered_json::object();
  std::size_t offset = 0;
  for (const auto& entry : store) {
    if (entry.name == "__meta__") throw ContractError("parameter name '__meta__' is reserved");
    header[entry.name] = {{"shape", entry.tensor.shape()}, {"byte_offset", offset}};
    offset += entry.tensor.size() * sizeof(double);
  }
  try {
    header["__meta__"] = ordered_json::parse(meta_json);
  } catch (const nlohmann::json::exception& ex) {
    throw ContractError(std::string("checkpoint metadata is not JSON: ") + ex.what());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  out << header.dump() << '\n';
  for (const auto& entry : store) {
    for (double v : entry.tensor.data()) {
      unsigned char bytes[8];
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
      out.write(reinterpret_cast<const char*>(bytes), 8);
    }
  }
  if (!out) throw StateError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CorruptionError(path.string() + ": missing header");
  ordered_json header;
  try {
    header = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptionError(path.string() + ": bad header: " + ex.what());
  }
  if (!header.is_object()) throw CorruptionError(path.string() + ": header is not an object");
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  struct Item {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Item> items;
  Checkpoint ck;
  ck.meta_json = "{}";
  std::size_t expected = 0;
  try {
    for (const auto& [name, value] : header.items()) {
      if (name == "__meta__") {
        ck.meta_json = value.dump();
        continue;
      }
      Item it{name, value.at("shape").get<Shape>(), value.at("byte_offset").get<std::size_t>()};
      expected += shape_size(it.shape) * sizeof(double);
      items.push_back(std::move(it));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptionError(path.string() + ": bad header entry: " + ex.what());
  }
  if (payload.size() != expected) {
    throw CorruptionError(path.string() + ": payload has " + std::to_string(payload.size()) +
                          " bytes, header describes " + std::to_string(expected));
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.offset < b.offset; });
  for (const Item& it : items) {
    const std::size_t n = shape_size(it.shape);
    if (it.offset + n * sizeof(double) > payload.size()) {
      throw CorruptionError(path.string() + ": '" + it.name + "' runs past the payload");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(
                    static_cast<unsigned char>(payload[it.offset + 8 * i + static_cast<std::size_t>(b)]))
                << (8 * b);
      }
      std::memcpy(&values[i], &bits, 8);
    }
    ck.params.add(it.name, Tensor(it.shape, std::move(values)));
  }
  return ck;
}

// ---- CSV -----------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const std::string& header_comment) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  return out;
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows,
                     const std::string& header_comment) {
  auto out = open_csv(path, header_comment);
  out << "step,loss_total,loss_oscc,loss_pnr,loss_scod,sigma2_1,sigma2_2,sigma2_3\n";
  for (const auto& r : rows) {
    out << r.step << ',' << format_double(r.loss_total);
    for (const auto& v : r.task_loss) out << ',' << opt(v);
    for (const auto& v : r.sigma2) out << ',' << opt(v);
    out << '\n';
  }
}

void write_eval_report(std::ostream& out, const EvalReport& report,
                       const std::string& header_comment) {
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "metric,value\n";
  out << "clips," << report.clips << '\n';
  out << "change_clips," << report.change_clips << '\n';
  auto row = [&](const char* name, const std::optional<double>& v) {
    if (v) out << name << ',' << format_double(*v) << '\n';
  };
  row("oscc_accuracy", report.oscc_accuracy);
  row("pnr_error_frames", report.pnr_error_frames);
  row("pnr_error_seconds", report.pnr_error_seconds);
  row("scod_mean_iou", report.scod_mean_iou);
  row("loss_oscc", report.loss_mean[0]);
  row("loss_pnr", report.loss_mean[1]);
  row("loss_scod", report.loss_mean[2]);
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report,
                       const std::string& header_comment) {
  auto out = open_csv(path, "");
  write_eval_report(out, report, header_comment);
}

}  // namespace tfd
