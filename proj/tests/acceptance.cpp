// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tfd/assignment.hpp"
#include "tfd/bc.hpp"
#include "tfd/errors.hpp"
#include "tfd/gradcheck_suite.hpp"
#include "tfd/losses.hpp"
#include "tfd/rng.hpp"
#include "tfd/trainer.hpp"

using namespace tfd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

template <class E, class F>
bool throws(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

// Desk-scale runs shared between criteria 5 and 7.
constexpr std::uint64_t kModelSeed = 1;
constexpr std::uint64_t kTrainDataSeed = 1000;
constexpr std::uint64_t kValDataSeed = 2000;
constexpr std::uint64_t kTrainSeed = 3;
constexpr std::uint64_t kBcSeed = 7;

std::optional<Model> g_per_frame;

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_correctness() {
  const double t0 = cpu_seconds();
  const auto cases = run_gradcheck_suite(1, 3, 1e-5, 1e-4);
  const double cpu = cpu_seconds() - t0;
  std::size_t failed = 0;
  double worst = 0;
  std::string first_fail;
  std::set<std::string> names;
  for (const auto& c : cases) {
    names.insert(c.name);
    worst = std::max(worst, c.report.max_rel_error());
    if (!c.report.all_passed()) {
      if (failed++ == 0) first_fail = c.name;
    }
  }
  Outcome o;
  o.pass = failed == 0 && cases.size() >= 100 && cpu <= 120.0;
  o.detail = std::to_string(cases.size()) + " cases over " + std::to_string(names.size()) +
             " checks, " + std::to_string(failed) + " failed" +
             (failed ? " (first: " + first_fail + ")" : "") + ", max rel error " + fmt("%.2e", worst) +
             ", cpu " + fmt("%.1f", cpu) + " s (limit 120)";
  return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome hungarian_oracle() {
  const double t0 = cpu_seconds();
  Rng rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t g = 1 + rng.below(7);
    const std::size_t q = g + rng.below(8 - g + 1);
    CostMatrix m(g, q);
    for (std::size_t r = 0; r < g; ++r) {
      for (std::size_t c = 0; c < q; ++c) m.at(r, c) = static_cast<double>(rng.below(21)) - 10.0;
    }
    if (hungarian(m).total_cost != brute_force_assign(m).total_cost) ++mismatches;
  }
  const double cpu = cpu_seconds() - t0;
  return {mismatches == 0 && cpu <= 10.0,
          "500 integer matrices, " + std::to_string(mismatches) + " mismatches, cpu " + fmt("%.2f", cpu) +
              " s (limit 10)"};
}

// ---- 3 ---------------------------------------------------------------------

Outcome loss_identities() {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  {
    Graph g;
    const double a = oscc_loss(g.constant(Tensor({2}, {0.3, 0.3})), true).item();
    const double b = oscc_loss(g.constant(Tensor({2}, {-2.0, -2.0})), false).item();
    check(std::fabs(a - std::log(2.0)) <= 1e-12 && std::fabs(b - std::log(2.0)) <= 1e-12, "oscc ln2");
  }
  {
    Graph g;
    const double kl = pnr_loss(g.constant(Tensor({16}, 3.7)), make_pnr_target(ClipLabels{}, 16)).item();
    check(std::fabs(kl) <= 1e-12, "pnr kl zero");
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      Tensor x({16});
      for (double& v : x.data()) v = rng.uniform(-5, 5);
      ClipLabels l;
      l.state_change = true;
      l.pnr_frame = rng.below(16);
      const double kl1 = pnr_loss(g.constant(x), make_pnr_target(l, 16)).item();
      long double z = 0;
      double m = x[0];
      for (double v : x.data()) m = std::max(m, v);
      for (double v : x.data()) z += std::exp(static_cast<long double>(v - m));
      const double nll = static_cast<double>(std::log(z) - static_cast<long double>(x[*l.pnr_frame] - m));
      check(std::fabs(kl1 - nll) <= 1e-12, "pnr nll");
    }
  }
  {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      const Box b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
      check(giou(b, b) == 1.0, "giou identical");
    }
  }
  {
    Rng rng(7);
    ClipLabels labels;
    labels.state_change = true;
    labels.pnr_frame = 3;
    labels.boxes = {{BoxClass::hand, {0.3, 0.4, 0.2, 0.25}}, {BoxClass::object, {0.6, 0.55, 0.3, 0.2}}};
    for (int i = 0; i < 50; ++i) {
      Graph g;
      std::vector<ScodQuery> q;
      for (std::size_t k = 0; k < kScodQueries; ++k) {
        Tensor logits({3}), box({4});
        for (double& v : logits.data()) v = rng.uniform(-2, 2);
        for (double& v : box.data()) v = rng.uniform(0.1, 0.9);
        q.push_back({g.constant(logits), g.constant(box)});
      }
      std::vector<std::size_t> perm(kScodQueries);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t k = perm.size() - 1; k > 0; --k) std::swap(perm[k], perm[rng.below(k + 1)]);
      std::vector<ScodQuery> qp;
      for (std::size_t k : perm) qp.push_back(q[k]);
      check(std::fabs(scod_loss(q, labels).item() - scod_loss(qp, labels).item()) <= 1e-12,
            "scod permutation");
    }
  }
  std::set<std::string> unique(bad.begin(), bad.end());
  std::string detail = "oscc ln2, pnr kl/nll, giou identity, scod permutation";
  for (const auto& u : unique) detail += "; failed: " + u;
  return {bad.empty(), detail};
}

// ---- 4 ---------------------------------------------------------------------

Outcome uncertainty_stationarity() {
  const double t0 = cpu_seconds();
  Tensor s({3}, 0.0);
  s.set_requires_grad(true);
  const std::array<double, 3> L{1, 4, 9};
  for (int step = 0; step < 2000; ++step) {
    s.zero_grad();
    Graph g;
    std::array<std::optional<Var>, 3> l;
    for (std::size_t k = 0; k < 3; ++k) l[k] = g.constant(Tensor::scalar(L[k]));
    g.backward(joint_loss(l, g.param(s), TaskSet{}));
    for (std::size_t k = 0; k < 3; ++k) s[k] -= 0.1 * s.grad()[k];
  }
  const double cpu = cpu_seconds() - t0;
  bool ok = cpu <= 5.0;
  std::string detail = "sigma2 =";
  for (std::size_t k = 0; k < 3; ++k) {
    const double v = std::exp(s[k]);
    ok = ok && std::fabs(v - L[k]) <= 0.01 * L[k];
    detail += " " + fmt("%.6f", v);
  }
  detail += " (target 1, 4, 9 within 1%), cpu " + fmt("%.3f", cpu) + " s (limit 5)";
  return {ok, detail};
}

// ---- 5 ---------------------------------------------------------------------

Outcome synthetic_training() {
  const auto train_set = make_records(2000, kTrainDataSeed, SynthConfig{});
  const auto val_set = make_records(500, kValDataSeed, SynthConfig{});
  bool ok = true;
  std::string detail;
  for (EncoderKind kind : {EncoderKind::per_frame_token, EncoderKind::clip_token, EncoderKind::conv_grid}) {
    const double t0 = cpu_seconds();
    Model model(ModelConfig::desk_scale(kind), kModelSeed);
    TrainConfig tc;
    tc.seed = kTrainSeed;
    const auto log = train(model, train_set, tc);
    const EvalReport r = evaluate(model, val_set);
    const double cpu = cpu_seconds() - t0;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      first += log[i].loss_total / 100.0;
      last += log[log.size() - 100 + i].loss_total / 100.0;
    }
    const bool pass = *r.oscc_accuracy >= 0.90 && *r.pnr_error_frames <= 1.5 && *r.scod_mean_iou >= 0.5 &&
                      last < first && cpu <= 900.0;
    ok = ok && pass;
    detail += (detail.empty() ? "" : "; ") + to_string(kind) + (pass ? " ok" : " FAIL") +
              " oscc " + fmt("%.3f", *r.oscc_accuracy) + " pnr " + fmt("%.3f", *r.pnr_error_frames) +
              " frames (" + fmt("%.3f", *r.pnr_error_seconds) + " s) iou " + fmt("%.3f", *r.scod_mean_iou) +
              " loss " + fmt("%.3f", first) + "->" + fmt("%.3f", last) + " cpu " + fmt("%.0f", cpu) + " s";
    if (kind == EncoderKind::per_frame_token) g_per_frame.emplace(std::move(model));
  }
  detail += " (thresholds oscc>=0.90 pnr<=1.5 iou>=0.5, cpu<=900 s each)";
  return {ok, detail};
}

// ---- 6 ---------------------------------------------------------------------

Outcome ablation_wiring() {
  const auto data = make_records(2000, kTrainDataSeed, SynthConfig{});
  const std::set<std::size_t> inspect = {1, 100, 1000};
  bool ok = true;
  std::string detail;
  for (const char* spec : {"oscc,pnr", "scod"}) {
    const TaskSet tasks = TaskSet::parse(spec);
    const bool on[3] = {tasks.oscc, tasks.pnr, tasks.scod};
    Model model(ModelConfig::desk_scale(), kModelSeed);
    TrainConfig tc;
    tc.steps = 1000;
    tc.batch_size = 8;
    tc.tasks = tasks;
    tc.seed = kTrainSeed;
    std::size_t inspected = 0, nonzero = 0;
    const auto log = train(model, data, tc, [&](std::size_t step, const ParamStore& params) {
      if (!inspect.count(step)) return;
      ++inspected;
      for (std::size_t token = 0; token < 2 + kScodQueries; ++token) {
        if (on[std::min<std::size_t>(token, 2)]) continue;
        for (const char* part : {"w1", "b1", "w2", "b2"}) {
          for (double v : params.at(TaskFusionDecoder::head_param(token, part)).grad()) nonzero += v != 0.0;
        }
      }
      const auto sg = params.at("loss.log_sigma2").grad();
      for (std::size_t i = 0; i < 3; ++i) nonzero += !on[i] && sg[i] != 0.0;
    });
    bool sigma_ok = true;
    for (const auto& row : log) {
      for (std::size_t i = 0; i < 3; ++i) sigma_ok = sigma_ok && row.sigma2[i].has_value() == on[i];
    }
    const bool pass = log.size() == 1000 && inspected == 3 && nonzero == 0 && sigma_ok;
    ok = ok && pass;
    detail += (detail.empty() ? "" : "; ") + std::string("--tasks ") + spec + (pass ? " ok" : " FAIL") +
              " (" + std::to_string(nonzero) + " nonzero disabled-head gradients at steps 1/100/1000)";
  }
  return {ok, detail};
}

// ---- 7 ---------------------------------------------------------------------

Outcome downstream_ab() {
  if (!g_per_frame) {
    Model model(ModelConfig::desk_scale(), kModelSeed);
    TrainConfig tc;
    tc.seed = kTrainSeed;
    train(model, make_records(2000, kTrainDataSeed, SynthConfig{}), tc);
    g_per_frame.emplace(std::move(model));
  }
  const Model baseline(ModelConfig::desk_scale(), derive_seed(kBcSeed, "baseline-encoder"));
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 3; ++i) seeds.push_back(derive_seed(kBcSeed, i));
  const double t0 = cpu_seconds();
  const BcComparison c = bc_compare(*g_per_frame, baseline, seeds, 25, 100, BcConfig{});
  const double cpu = cpu_seconds() - t0;
  std::string detail = "trained " + fmt("%.3f", c.trained_mean) + " vs random-init " +
                       fmt("%.3f", c.baseline_mean) + ", gap " + fmt("%+.3f", c.gap()) + " [per seed:";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    detail += " " + fmt("%.2f", c.trained[i]) + "/" + fmt("%.2f", c.baseline[i]);
  }
  detail += "], cpu " + fmt("%.0f", cpu) + " s (limit 600)";
  return {c.gap() > 0.0 && cpu <= 600.0, detail};
}

// ---- 8 ---------------------------------------------------------------------

Outcome determinism_persistence() {
  const fs::path dir = fs::temp_directory_path() / "tfd_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };

  SynthConfig sc;
  sc.frames = 4;
  sc.height = 16;
  sc.width = 16;
  write_dataset(dir / "a.ndjson", 50, 9, sc, R"({"run":"acceptance"})");
  write_dataset(dir / "b.ndjson", 50, 9, sc, R"({"run":"acceptance"})");
  check(slurp(dir / "a.ndjson") == slurp(dir / "b.ndjson"), "dataset bytes");
  const Dataset ds = read_dataset(dir / "a.ndjson");
  const auto expect = make_records(50, 9, sc);
  bool same = ds.records.size() == expect.size();
  for (std::size_t i = 0; same && i < expect.size(); ++i) {
    same = ds.records[i].seed == expect[i].seed && ds.records[i].labels == expect[i].labels &&
           generate_clip(ds.records[i].seed, sc).frames.storage() == expect[i].clip().frames.storage();
  }
  check(same, "dataset round trip");

  ModelConfig mc;
  mc.encoder.height = 16;
  mc.encoder.width = 16;
  mc.encoder.model_width = 16;
  mc.encoder.heads = 2;
  mc.decoder.width = 16;
  mc.decoder.heads = 2;
  mc.decoder.frames = 4;
  mc.decoder.mlp_hidden = 16;
  TrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 4;
  tc.seed = 5;
  for (const char* name : {"run1", "run2"}) {
    Model m(mc, 3);
    const auto log = train(m, ds.records, tc);
    save_checkpoint(m.params(), dir / (std::string(name) + ".ckpt"), mc.to_json());
    write_train_log(dir / (std::string(name) + ".csv"), log, "acceptance");
  }
  check(slurp(dir / "run1.ckpt") == slurp(dir / "run2.ckpt"), "checkpoint bytes");
  check(slurp(dir / "run1.csv") == slurp(dir / "run2.csv"), "log bytes");
  {
    Model m(mc, 3);
    train(m, ds.records, tc);
    check(load_checkpoint(dir / "run1.ckpt").params.identical(m.params()), "checkpoint round trip");
  }

  const std::string ckpt = slurp(dir / "run1.ckpt");
  spit(dir / "trunc.ckpt", ckpt.substr(0, ckpt.size() - 3));
  check(throws<CorruptionError>([&] { load_checkpoint(dir / "trunc.ckpt"); }), "truncated checkpoint");
  {
    ModelConfig other = mc;
    other.decoder.mlp_hidden = 8;
    check(throws<ShapeError>([&] { Model(other, load_checkpoint(dir / "run1.ckpt").params); }),
          "mismatched checkpoint");
  }
  const std::string text = slurp(dir / "a.ndjson");
  spit(dir / "cut.ndjson", text.substr(0, text.size() - 40));
  check(throws<ParseError>([&] { read_dataset(dir / "cut.ndjson"); }), "truncated dataset");
  {
    auto tampered = expect;
    for (auto& r : tampered) {
      if (r.labels.state_change) {
        r.labels.boxes[0].box.cx += 1.0 / 64.0;
        break;
      }
    }
    write_records(dir / "tampered.ndjson", tampered);
    check(throws<CorruptionError>([&] { read_dataset(dir / "tampered.ndjson"); }), "tampered dataset");
  }
  write_demos(dir / "demos.ndjson", collect_demos(2, 4), "{}");
  const std::string demos = slurp(dir / "demos.ndjson");
  spit(dir / "demos_short.ndjson", demos.substr(0, demos.rfind('\n', demos.size() - 2) + 1));
  check(throws<CorruptionError>([&] { read_demos(dir / "demos_short.ndjson"); }), "truncated demos");
  fs::remove_all(dir);

  std::string detail = "datasets, checkpoints and logs bit-identical; round trips exact; 5 corruption cases";
  for (const auto& b : bad) detail += "; failed: " + b;
  return {bad.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"hungarian oracle equivalence", hungarian_oracle},
      {"loss identities", loss_identities},
      {"uncertainty-weighting stationarity", uncertainty_stationarity},
      {"synthetic multitask training", synthetic_training},
      {"ablation wiring", ablation_wiring},
      {"downstream A/B", downstream_ab},
      {"determinism and persistence", determinism_persistence},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %zu %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
