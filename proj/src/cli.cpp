#include "tfd/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "tfd/bc.hpp"
#include "tfd/errors.hpp"
#include "tfd/gradcheck_suite.hpp"
#include "tfd/model.hpp"
#include "tfd/rng.hpp"
#include "tfd/synth.hpp"
#include "tfd/trainer.hpp"

namespace tfd {
namespace {

using ordered_json = nlohmann::ordered_json;

/// Invalid flag values detected after parsing; mapped to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Name of the step currently running, reported with any error.
struct Stage {
  std::string name = "arguments";
  void operator()(std::string next) { name = std::move(next); }
};

/// Serialized command, flags and version embedded in every output.
std::string run_config(const CLI::App& sub, std::uint64_t seed) {
  ordered_json flags = ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const std::string& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    flags[opt->get_lnames().front()] = value;
  }
  ordered_json j;
  j["tool"] = "tfd";
  j["version"] = kVersion;
  j["command"] = sub.get_name();
  j["seed"] = seed;
  j["flags"] = flags;
  return j.dump();
}

/// Writes to `path`, or to `fallback` when the path is empty.
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      stream_ = &fallback;
    } else {
      file_.open(path, std::ios::trunc);
      if (!file_) throw StateError("cannot write " + path);
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

struct LoadedModel {
  Model model;
  ordered_json meta;
};

LoadedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  ordered_json meta = ordered_json::parse(ck.meta_json);
  if (!meta.contains("model")) throw CorruptionError(path + ": checkpoint lacks a model config");
  ModelConfig config = ModelConfig::from_json(meta.at("model").dump());
  return {Model(config, ck.params), meta};
}

std::vector<DatasetRecord> load_data(const std::string& path) {
  Dataset ds = read_dataset(path);
  if (ds.records.empty()) throw ContractError(path + ": dataset is empty");
  return std::move(ds.records);
}

void check_clip_shape(const ModelConfig& mc, const SynthConfig& sc, const std::string& what) {
  if (mc.decoder.frames != sc.frames || mc.encoder.height != sc.height ||
      mc.encoder.width != sc.width) {
    throw ConfigError(what + ": clip shape " + std::to_string(sc.frames) + "x" +
                      std::to_string(sc.height) + "x" + std::to_string(sc.width) +
                      " does not match the model");
  }
}

bool parse_on_off(const std::string& v) { return v == "on"; }

std::vector<double> row_values(const Tensor& t, std::size_t row) {
  const std::size_t cols = t.shape().back();
  std::vector<double> out(cols);
  for (std::size_t c = 0; c < cols; ++c) out[c] = t.data()[row * cols + c];
  return out;
}

// ---- subcommands ---------------------------------------------------------------

struct GenData {
  std::size_t count = 2000;
  std::uint64_t seed = 0;
  std::string out;
  double p_change = 0.5;
  std::size_t frames = 16;
  double noise = 0.03;

  void add(CLI::App& app) {
    app.add_option("--count", count, "number of clips")->capture_default_str();
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    app.add_option("--out", out, "dataset path (NDJSON)")->required();
    app.add_option("--p-change", p_change, "fraction of state-change clips")->capture_default_str();
    app.add_option("--frames", frames, "frames per clip")->capture_default_str();
    app.add_option("--noise", noise, "pixel noise amplitude")->capture_default_str();
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    SynthConfig config;
    config.p_change = p_change;
    config.frames = frames;
    config.noise = noise;
    try {
      config.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    stage("generate");
    write_dataset(out, count, seed, config, run);
    os << "wrote " << count << " clips to " << out << '\n';
  }
};

struct ModelFlags {
  std::string encoder = "per_frame_token";
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;

  void add(CLI::App& app) {
    app.add_option("--encoder", encoder, "per_frame_token | clip_token | conv_grid")
        ->capture_default_str();
    app.add_option("--layers", layers, "decoder layers N")->capture_default_str();
    app.add_option("--width", width, "model width D")->capture_default_str();
    app.add_option("--heads", heads, "attention heads")->capture_default_str();
    app.add_option("--mlp-hidden", mlp_hidden, "head MLP width")->capture_default_str();
  }

  ModelConfig config(const TaskSet& tasks) const {
    ModelConfig c = ModelConfig::desk_scale(parse_encoder_kind(encoder));
    c.decoder.layers = layers;
    c.decoder.width = width;
    c.decoder.heads = heads;
    c.decoder.mlp_hidden = mlp_hidden;
    c.decoder.tasks = tasks;
    c.encoder.model_width = width;
    c.encoder.heads = heads;
    c.validate();
    return c;
  }
};

struct Train {
  std::string data;
  std::string out;
  std::string log;
  std::string tasks = "oscc,pnr,scod";
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  std::uint64_t seed = 0;
  ModelFlags model;

  void add(CLI::App& app) {
    app.add_option("--data", data, "training dataset (NDJSON)")->required();
    app.add_option("--out", out, "checkpoint path")->required();
    app.add_option("--log", log, "training log CSV")->required();
    app.add_option("--tasks", tasks, "enabled tasks")->capture_default_str();
    app.add_option("--steps", steps, "optimizer steps")->capture_default_str();
    app.add_option("--batch-size", batch_size, "clips per step")->capture_default_str();
    app.add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    model.add(app);
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    TrainConfig tc;
    ModelConfig mc;
    try {
      tc.tasks = TaskSet::parse(tasks);
      if (tc.tasks.empty()) throw ConfigError("--tasks must enable at least one task");
      if (batch_size == 0) throw ConfigError("--batch-size must be positive");
      if (!(lr > 0.0)) throw ConfigError("--lr must be positive");
      mc = model.config(tc.tasks);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    tc.steps = steps;
    tc.batch_size = batch_size;
    tc.lr = lr;
    tc.seed = seed;

    stage("load-data");
    const std::vector<DatasetRecord> records = load_data(data);
    const SynthConfig& sc = records.front().config;
    mc.decoder.frames = sc.frames;
    mc.encoder.height = sc.height;
    mc.encoder.width = sc.width;
    mc.validate();

    stage("train");
    Model m(mc, derive_seed(seed, "model"));
    const std::vector<TrainLogRow> rows = train(m, records, tc);

    stage("write-output");
    ordered_json meta;
    meta["run"] = ordered_json::parse(run);
    meta["model"] = ordered_json::parse(m.config().to_json());
    save_checkpoint(m.params(), out, meta.dump());
    write_train_log(log, rows, run);
    if (!rows.empty()) {
      os << "step " << rows.back().step << " loss_total " << format_double(rows.back().loss_total)
         << '\n';
    }
    os << "wrote " << out << " and " << log << '\n';
  }
};

struct Eval {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app.add_option("--data", data, "evaluation dataset (NDJSON)")->required();
    app.add_option("--out", out, "report CSV (stdout when omitted)");
    app.add_option("--seed", seed, "run seed (recorded only)")->capture_default_str();
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    stage("load-checkpoint");
    LoadedModel lm = load_model(checkpoint);
    stage("load-data");
    const std::vector<DatasetRecord> records = load_data(data);
    for (const auto& r : records) check_clip_shape(lm.model.config(), r.config, data);
    stage("evaluate");
    const EvalReport report = evaluate(lm.model, records);
    stage("write-output");
    if (out.empty()) {
      write_eval_report(os, report, run);
    } else {
      write_eval_report(out, report, run);
      os << "wrote " << out << '\n';
    }
  }
};

struct GradCheck {
  std::uint64_t seed = 1;
  std::size_t repeats = 3;
  double eps = 1e-5;
  double tol = 1e-4;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    app.add_option("--repeats", repeats, "seeded draws per case")->capture_default_str();
    app.add_option("--eps", eps, "finite-difference step")->capture_default_str();
    app.add_option("--tol", tol, "relative tolerance")->capture_default_str();
    app.add_option("--out", out, "report CSV (stdout when omitted)");
  }

  bool run(const std::string& run, Stage& stage, std::ostream& os) {
    if (repeats == 0 || !(eps > 0.0) || !(tol > 0.0)) {
      throw UsageError("--repeats, --eps and --tol must be positive");
    }
    stage("gradcheck");
    const std::vector<GradCheckCase> cases = run_gradcheck_suite(seed, repeats, eps, tol);
    stage("write-output");
    Output o(out, os);
    *o << "# " << run << '\n' << "case,seed,inputs,max_rel_error,passed\n";
    std::size_t failed = 0;
    for (const GradCheckCase& c : cases) {
      const bool ok = c.report.all_passed();
      failed += ok ? 0 : 1;
      *o << c.name << ',' << c.seed << ',' << c.report.entries.size() << ','
         << format_double(c.report.max_rel_error()) << ',' << (ok ? "pass" : "FAIL") << '\n';
    }
    if (!out.empty()) os << "wrote " << out << '\n';
    os << cases.size() - failed << '/' << cases.size() << " cases passed\n";
    return failed == 0;
  }
};

struct DumpAttention {
  std::string checkpoint;
  std::string data;
  std::size_t index = 0;
  std::string out;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app.add_option("--data", data, "dataset (NDJSON)")->required();
    app.add_option("--index", index, "clip index in the dataset")->capture_default_str();
    app.add_option("--out", out, "attention CSV")->required();
    app.add_option("--seed", seed, "run seed (recorded only)")->capture_default_str();
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    stage("load-checkpoint");
    LoadedModel lm = load_model(checkpoint);
    stage("load-data");
    const std::vector<DatasetRecord> records = load_data(data);
    if (index >= records.size()) {
      throw UsageError("--index " + std::to_string(index) + " out of range (" +
                       std::to_string(records.size()) + " clips)");
    }
    check_clip_shape(lm.model.config(), records[index].config, data);
    stage("decode");
    const SynthClip clip = records[index].clip();
    Graph g;
    ClipFeatures f = lm.model.encoder().encode(g, clip.frames, clip.clip_duration_seconds);
    const TaskPredictions pred = lm.model.decoder().decode(f, KeyframeSpec::infer_auto(), true);
    const auto& layers = lm.model.decoder().export_attention();

    stage("write-output");
    Output o(out, os);
    *o << "# " << run << '\n';
    *o << "# clip_seed=" << records[index].seed << " keyframe=" << pred.keyframe_used() << '\n';
    *o << "layer,block,head,query,key,weight\n";
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::pair<const char*, const Tensor*> blocks[] = {{"self", &layers[l].self_attn},
                                                              {"temporal", &layers[l].temporal},
                                                              {"spatial", &layers[l].spatial}};
      for (const auto& [name, t] : blocks) {
        const std::size_t H = t->shape()[0], Q = t->shape()[1], K = t->shape()[2];
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t q = 0; q < Q; ++q) {
            for (std::size_t k = 0; k < K; ++k) {
              *o << l << ',' << name << ',' << h << ',' << q << ',' << k << ','
                 << format_double(t->data()[(h * Q + q) * K + k]) << '\n';
            }
          }
        }
      }
    }
    os << "wrote " << out << '\n';
  }
};

struct ExportEmbeddings {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::size_t limit = 0;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app.add_option("--data", data, "dataset (NDJSON)")->required();
    app.add_option("--out", out, "embedding CSV")->required();
    app.add_option("--limit", limit, "export only the first clips (0 = all)")
        ->capture_default_str();
    app.add_option("--seed", seed, "run seed (recorded only)")->capture_default_str();
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    stage("load-checkpoint");
    LoadedModel lm = load_model(checkpoint);
    stage("load-data");
    const std::vector<DatasetRecord> records = load_data(data);
    const std::size_t n = limit == 0 ? records.size() : std::min(limit, records.size());
    for (std::size_t i = 0; i < n; ++i) check_clip_shape(lm.model.config(), records[i].config, data);

    stage("write-output");
    Output o(out, os);
    const std::size_t D = lm.model.config().decoder.width;
    *o << "# " << run << '\n' << "clip,clip_seed,state_change,frame,tag";
    for (std::size_t d = 0; d < D; ++d) *o << ",e" << d;
    *o << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      stage("encode");
      const DatasetRecord& rec = records[i];
      const SynthClip clip = rec.clip();
      Graph g;
      const ClipFeatures f = lm.model.encoder().encode(g, clip.frames, clip.clip_duration_seconds);
      const Tensor h = f.h_cls.tensor();
      const std::size_t rows = h.shape()[0];
      stage("write-output");
      for (std::size_t r = 0; r < rows; ++r) {
        std::string frame, tag;
        if (rows == 1) {
          tag = rec.labels.state_change ? "change" : "no_change";
        } else {
          frame = std::to_string(r);
          if (!rec.labels.state_change) {
            tag = "no_change";
          } else {
            tag = r < *rec.labels.pnr_frame ? "before" : "after";
          }
        }
        *o << i << ',' << rec.seed << ',' << (rec.labels.state_change ? 1 : 0) << ',' << frame
           << ',' << tag;
        for (double v : row_values(h, r)) *o << ',' << format_double(v);
        *o << '\n';
      }
    }
    os << "wrote " << n << " clips to " << out << '\n';
  }
};

struct BcDemos {
  std::size_t count = 25;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--count", count, "number of demonstrations")->capture_default_str();
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    app.add_option("--out", out, "demo path (NDJSON)")->required();
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    if (count == 0) throw UsageError("--count must be at least 1");
    stage("collect");
    const std::vector<Demo> demos = collect_demos(count, seed);
    stage("write-output");
    write_demos(out, demos, run);
    os << "wrote " << demos.size() << " demos to " << out << '\n';
  }
};

struct BcFlags {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t hidden = 64;
  std::string proprio = "on";

  void add(CLI::App& app) {
    app.add_option("--steps", steps, "policy optimizer steps")->capture_default_str();
    app.add_option("--batch-size", batch_size, "transitions per step")->capture_default_str();
    app.add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app.add_option("--hidden", hidden, "policy hidden width")->capture_default_str();
    app.add_option("--proprio", proprio, "append gripper position to the observation")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
  }

  BcConfig config(std::uint64_t seed) const {
    if (batch_size == 0 || hidden == 0 || !(lr > 0.0)) {
      throw UsageError("--batch-size, --hidden and --lr must be positive");
    }
    BcConfig c;
    c.steps = steps;
    c.batch_size = batch_size;
    c.lr = lr;
    c.hidden = hidden;
    c.proprio = parse_on_off(proprio);
    c.seed = seed;
    return c;
  }
};

struct BcTrain {
  std::string demos;
  std::string checkpoint;
  std::string out;
  std::string log;
  std::uint64_t seed = 0;
  BcFlags bc;

  void add(CLI::App& app) {
    app.add_option("--demos", demos, "demo file (NDJSON)")->required();
    app.add_option("--checkpoint", checkpoint, "frozen encoder checkpoint")->required();
    app.add_option("--out", out, "policy checkpoint")->required();
    app.add_option("--log", log, "per-step loss CSV");
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    bc.add(app);
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    const BcConfig config = bc.config(seed);
    stage("load-checkpoint");
    LoadedModel lm = load_model(checkpoint);
    stage("load-demos");
    const std::vector<Demo> ds = read_demos(demos);
    stage("bc-train");
    const std::size_t D = lm.model.config().encoder.model_width;
    const BcResult r = bc_train(ds, make_embedder(lm.model), D, config);
    stage("write-output");
    ordered_json meta;
    meta["run"] = ordered_json::parse(run);
    meta["policy"] = {{"embedding_width", D},
                      {"hidden", config.hidden},
                      {"proprio", config.proprio},
                      {"max_step", r.policy.max_step()}};
    save_checkpoint(r.policy.params(), out, meta.dump());
    if (!log.empty()) {
      std::ofstream f(log, std::ios::trunc);
      if (!f) throw StateError("cannot write " + log);
      f << "# " << run << '\n' << "step,loss\n";
      for (std::size_t i = 0; i < r.loss.size(); ++i) {
        f << i + 1 << ',' << format_double(r.loss[i]) << '\n';
      }
    }
    if (!r.loss.empty()) os << "final loss " << format_double(r.loss.back()) << '\n';
    os << "wrote " << out << '\n';
  }
};

struct BcEval {
  std::string policy;
  std::string checkpoint;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--policy", policy, "policy checkpoint")->required();
    app.add_option("--checkpoint", checkpoint, "frozen encoder checkpoint")->required();
    app.add_option("--episodes", episodes, "evaluation episodes")->capture_default_str();
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    app.add_option("--out", out, "result CSV (stdout when omitted)");
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    if (episodes == 0) throw UsageError("--episodes must be at least 1");
    stage("load-checkpoint");
    LoadedModel lm = load_model(checkpoint);
    stage("load-policy");
    Checkpoint pc = load_checkpoint(policy);
    const ordered_json meta = ordered_json::parse(pc.meta_json);
    if (!meta.contains("policy")) throw CorruptionError(policy + ": not a policy checkpoint");
    const ordered_json& pm = meta.at("policy");
    const std::size_t D = pm.at("embedding_width").get<std::size_t>();
    if (D != lm.model.config().encoder.model_width) {
      throw ShapeError(policy + ": policy expects " + std::to_string(D) +
                       "-wide embeddings, encoder produces " +
                       std::to_string(lm.model.config().encoder.model_width));
    }
    BcConfig bc;
    bc.hidden = pm.at("hidden").get<std::size_t>();
    bc.proprio = pm.at("proprio").get<bool>();
    Policy p(D, bc, pm.at("max_step").get<double>());
    p.params().assign_from(pc.params);
    stage("bc-eval");
    const double rate = bc_eval(policy_controller(p, make_embedder(lm.model)), episodes, seed);
    stage("write-output");
    Output o(out, os);
    *o << "# " << run << '\n' << "seed,episodes,success_rate\n"
       << seed << ',' << episodes << ',' << format_double(rate) << '\n';
    if (!out.empty()) os << "success_rate " << format_double(rate) << '\n';
  }
};

struct BcCompare {
  std::string checkpoint;
  std::size_t runs = 3;
  std::size_t demos = 25;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  std::string out;
  BcFlags bc;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "fine-tuned encoder checkpoint")->required();
    app.add_option("--runs", runs, "seeded repetitions")->capture_default_str();
    app.add_option("--demos", demos, "demonstrations per run")->capture_default_str();
    app.add_option("--episodes", episodes, "evaluation episodes per run")->capture_default_str();
    app.add_option("--seed", seed, "run seed")->capture_default_str();
    app.add_option("--out", out, "result CSV (stdout when omitted)");
    bc.add(app);
  }

  void run(const std::string& run, Stage& stage, std::ostream& os) {
    if (runs == 0 || demos == 0 || episodes == 0) {
      throw UsageError("--runs, --demos and --episodes must be at least 1");
    }
    const BcConfig config = bc.config(seed);
    stage("load-checkpoint");
    LoadedModel lm = load_model(checkpoint);
    const Model baseline(lm.model.config(), derive_seed(seed, "baseline-encoder"));
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < runs; ++i) seeds.push_back(derive_seed(seed, i));
    stage("bc-compare");
    const BcComparison r = bc_compare(lm.model, baseline, seeds, demos, episodes, config);
    stage("write-output");
    Output o(out, os);
    *o << "# " << run << '\n' << "seed,episodes,trained_success,baseline_success,gap\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      *o << seeds[i] << ',' << episodes << ',' << format_double(r.trained[i]) << ','
         << format_double(r.baseline[i]) << ',' << format_double(r.trained[i] - r.baseline[i])
         << '\n';
    }
    *o << "mean," << episodes << ',' << format_double(r.trained_mean) << ','
       << format_double(r.baseline_mean) << ',' << format_double(r.gap()) << '\n';
    if (!out.empty()) {
      os << "trained " << format_double(r.trained_mean) << " baseline "
         << format_double(r.baseline_mean) << " gap " << format_double(r.gap()) << '\n';
    }
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task fusion decoder: synthetic multitask training and downstream BC", "tfd"};
  app.set_version_flag("--version", std::string("tfd ") + kVersion);
  app.require_subcommand(1);
  app.get_formatter()->column_width(36);

  GenData gen_data;
  Train train_cmd;
  Eval eval_cmd;
  GradCheck gradcheck;
  DumpAttention dump_attention;
  ExportEmbeddings export_embeddings;
  BcDemos bc_demos;
  BcTrain bc_train_cmd;
  BcEval bc_eval_cmd;
  BcCompare bc_compare_cmd;

  CLI::App* s_gen = app.add_subcommand("gen-data", "generate a synthetic clip dataset");
  CLI::App* s_train = app.add_subcommand("train", "jointly fine-tune encoder and decoder");
  CLI::App* s_eval = app.add_subcommand("eval", "OSCC / PNR / SCOD metrics of a checkpoint");
  CLI::App* s_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  CLI::App* s_dump = app.add_subcommand("dump-attention", "decoder attention maps of one clip");
  CLI::App* s_emb = app.add_subcommand("export-embeddings", "encoder h_cls embeddings as CSV");
  CLI::App* s_demos = app.add_subcommand("bc-demos", "record expert demonstrations");
  CLI::App* s_bct = app.add_subcommand("bc-train", "behavior cloning on a frozen encoder");
  CLI::App* s_bce = app.add_subcommand("bc-eval", "success rate of a trained policy");
  CLI::App* s_bcc = app.add_subcommand("bc-compare", "fine-tuned vs random-init encoder A/B");

  gen_data.add(*s_gen);
  train_cmd.add(*s_train);
  eval_cmd.add(*s_eval);
  gradcheck.add(*s_gc);
  dump_attention.add(*s_dump);
  export_embeddings.add(*s_emb);
  bc_demos.add(*s_demos);
  bc_train_cmd.add(*s_bct);
  bc_eval_cmd.add(*s_bce);
  bc_compare_cmd.add(*s_bcc);

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  Stage stage;
  try {
    std::uint64_t seed = 0;
    if (CLI::Option* opt = sub->get_option_no_throw("--seed")) seed = opt->as<std::uint64_t>();
    const std::string run = run_config(*sub, seed);
    bool ok = true;
    if (sub == s_gen) gen_data.run(run, stage, out);
    if (sub == s_train) train_cmd.run(run, stage, out);
    if (sub == s_eval) eval_cmd.run(run, stage, out);
    if (sub == s_gc) ok = gradcheck.run(run, stage, out);
    if (sub == s_dump) dump_attention.run(run, stage, out);
    if (sub == s_emb) export_embeddings.run(run, stage, out);
    if (sub == s_demos) bc_demos.run(run, stage, out);
    if (sub == s_bct) bc_train_cmd.run(run, stage, out);
    if (sub == s_bce) bc_eval_cmd.run(run, stage, out);
    if (sub == s_bcc) bc_compare_cmd.run(run, stage, out);
    if (!ok) {
      err << "tfd " << command << ": gradcheck: at least one case exceeded the tolerance\n";
      return 2;
    }
    return 0;
  } catch (const UsageError& e) {
    err << "tfd " << command << ": " << stage.name << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "tfd " << command << ": " << stage.name << ": " << e.what() << '\n';
    return 2;
  }
}

}  // namespace tfd
