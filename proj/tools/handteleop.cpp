// handteleop: dataset generation, training, evaluation, inference and replay
// from one binary. Configuration precedence: built-in defaults < --config file < flags.
// Exit status: 0 success, 1 runtime failure, 2 bad arguments or configuration.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "handteleop/checkpoint.hpp"
#include "handteleop/config.hpp"
#include "handteleop/data.hpp"
#include "handteleop/errors.hpp"
#include "handteleop/evaluation.hpp"
#include "handteleop/io.hpp"
#include "handteleop/teleop.hpp"
#include "handteleop/training.hpp"

namespace ht = handteleop;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

// Marks an argument problem detected after parsing; reported with exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ht::config::RunConfig resolve(const Common& c) {
  auto rc = c.config_path.empty() ? ht::config::RunConfig{} : ht::config::load_run_config(c.config_path);
  if (c.seed) rc.seed = *c.seed;
  rc.propagate_seed();
  return rc;
}

std::vector<std::string> g_argv;

void write_resolved(const fs::path& dir, const std::string& command, const ht::config::RunConfig& rc,
                    json extra = json::object()) {
  fs::create_directories(dir);
  json j{{"command", command}, {"argv", g_argv}, {"config", ht::config::to_json(rc)}};
  if (!extra.empty()) j["arguments"] = std::move(extra);
  ht::io::write_text(dir / "resolved_config.json", j.dump(2) + "\n");
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed for all randomness (overrides the configuration)");
}

template <typename T>
void apply(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::optional<int> n;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  auto rc = resolve(a.common);
  apply(a.n, rc.dataset_size);
  if (rc.dataset_size < 1) throw UsageError("--n must be >= 1");
  const auto m = ht::data::generate_dataset(rc.dataset, rc.dataset_size, rc.seed, a.out);
  write_resolved(a.out, "dataset generate", rc, {{"out", a.out}});
  const auto ds = ht::data::Dataset::open(a.out);
  std::printf("wrote %d samples to %s (train %zu, val %zu, test %zu)\n", m.sample_count, a.out.c_str(),
              ds.indices(ht::data::Split::kTrain).size(), ds.indices(ht::data::Split::kVal).size(),
              ds.indices(ht::data::Split::kTest).size());
  return 0;
}

struct ValidateArgs {
  std::string data;
  std::string out;
};

int run_validate(const ValidateArgs& a) {
  const auto report = ht::data::validate_dataset(a.data);
  const auto j = report.to_json();
  if (!a.out.empty()) ht::io::write_text(a.out, j.dump(2) + "\n");
  std::printf("%s\n", j.dump().c_str());
  if (!report.ok()) {
    std::fprintf(stderr, "error: %d invariant violation(s) in %s\n", report.total(), a.data.c_str());
    return 1;
  }
  return 0;
}

struct ConvertArgs {
  Common common;
  std::string src;
  std::string out;
};

int run_convert(const ConvertArgs& a) {
  const auto rc = resolve(a.common);
  const auto r = ht::data::convert_external(a.src, a.out, rc.dataset);
  write_resolved(a.out, "dataset convert", rc, {{"src", a.src}, {"out", a.out}});
  std::printf("converted %d samples (%d non-frontal views discarded, keypoints %s)\n", r.samples, r.discarded_views,
              r.keypoints_recomputed ? "recomputed" : "read");
  return 0;
}

struct SplitArgs {
  Common common;
  std::string data;
  std::optional<double> train, val, test;
};

int run_split(const SplitArgs& a) {
  auto rc = resolve(a.common);
  apply(a.train, rc.dataset.split.train);
  apply(a.val, rc.dataset.split.val);
  apply(a.test, rc.dataset.split.test);
  ht::data::resplit_dataset(a.data, rc.dataset.split, rc.seed);
  const auto ds = ht::data::Dataset::open(a.data);
  std::printf("train %zu, val %zu, test %zu\n", ds.indices(ht::data::Split::kTrain).size(),
              ds.indices(ht::data::Split::kVal).size(), ds.indices(ht::data::Split::kTest).size());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string out;
  std::optional<std::int64_t> steps;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<std::string> variant;
  std::optional<std::string> arch;
  std::optional<double> lambda_recon, lambda_joint;
  std::optional<std::int64_t> checkpoint_every, validate_every;
  std::string resume;
  int log_every = 100;
};

int run_train(const TrainArgs& a) {
  auto rc = resolve(a.common);
  auto& t = rc.train;
  apply(a.steps, t.steps);
  apply(a.batch_size, t.batch_size);
  apply(a.lr, t.adam.learning_rate);
  if (a.variant) t.variant = ht::model::parse_variant(*a.variant);
  if (a.arch) t.arch = ht::model::ArchConfig::preset(*a.arch);
  apply(a.lambda_recon, t.lambda_recon);
  apply(a.lambda_joint, t.lambda_joint);
  apply(a.checkpoint_every, t.checkpoint_every);
  apply(a.validate_every, t.validate_every);
  t.validate();

  const auto ds = ht::data::Dataset::open(a.data);
  write_resolved(a.out, "train", rc, {{"data", a.data}, {"out", a.out}, {"resume", a.resume}});
  ht::training::TrainOptions opt;
  if (!a.resume.empty()) opt.resume_from = a.resume;
  opt.on_step = [&](const ht::training::StepRecord& r) {
    if (a.log_every > 0 && (r.step % a.log_every == 0 || r.step == t.steps)) {
      std::printf("step %lld  l_recon %.6g  l_joint %.6g  l_hand %.6g  %.0f ms\n", static_cast<long long>(r.step),
                  r.l_recon, r.l_joint, r.l_hand, r.wall_ms);
      std::fflush(stdout);
    }
  };
  const auto res = ht::training::train(t, ds, a.out, opt);
  std::printf("final checkpoint %s\n", res.final_checkpoint.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::vector<std::string> checkpoints;
  std::vector<std::string> expect;
  std::string data;
  std::string split = "test";
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const auto rc = resolve(a.common);
  if (!a.expect.empty() && a.expect.size() != a.checkpoints.size())
    throw UsageError("--expect must be given once per --checkpoint");
  const auto ds = ht::data::Dataset::open(a.data);
  const auto split = ht::data::parse_split(a.split);

  // An expected variant pins the architecture hash: the checkpoint's own layer sizes with that variant.
  std::vector<std::uint64_t> hashes;
  for (std::size_t i = 0; i < a.expect.size(); ++i) {
    const auto m = ht::checkpoint::read_manifest(a.checkpoints[i]);
    const auto arch = ht::model::arch_from_json(m.at("architecture"));
    hashes.push_back(ht::model::architecture_hash(arch, ht::model::parse_variant(a.expect[i])));
  }
  std::vector<fs::path> paths(a.checkpoints.begin(), a.checkpoints.end());
  const auto reports = ht::evaluation::compare_variants(paths, ds, split, rc.eval, hashes);
  ht::evaluation::emit_report(reports, a.out);
  write_resolved(a.out, "eval", rc, {{"checkpoints", a.checkpoints}, {"data", a.data}, {"split", a.split}});
  for (const auto& label : ht::evaluation::ranking(reports))
    for (const auto& r : reports)
      if (r.label == label)
        std::printf("%-20s mean joint error %.5f rad over %d frames\n", r.label.c_str(), r.mean_joint_error,
                    r.sample_count());
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> images;
  std::string data;
  std::string split = "test";
  std::string out;
};

int run_infer(const InferArgs& a) {
  const auto ck = ht::checkpoint::load(a.checkpoint);
  const auto layout = ht::kinematics::JointLayout::shadow_robot();
  if (!a.images.empty()) {
    ht::io::CsvTable t;
    t.header = {"image"};
    for (const auto& e : layout.entries()) t.header.push_back(e.name);
    for (const auto& path : a.images) {
      const auto img = ht::data::decode_image(ht::io::read_png16(path));
      const auto q = ck.network.infer_joints(img, layout);
      std::vector<std::string> row{path};
      for (double v : q.values()) row.push_back(ht::io::format_angle(v));
      t.rows.push_back(std::move(row));
    }
    if (a.out.empty()) {
      for (const auto& row : t.rows) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) line += (i ? "," : "") + row[i];
        std::printf("%s\n", line.c_str());
      }
    } else {
      ht::io::write_csv(a.out, t);
    }
    return 0;
  }
  if (a.data.empty()) throw UsageError("give --image or --data");
  if (a.out.empty()) throw UsageError("--out is required with --data");
  const auto ds = ht::data::Dataset::open(a.data);
  const auto idx = ds.indices(ht::data::parse_split(a.split));
  const auto p = ht::evaluation::predict(ck.network, ds, idx, ht::evaluation::dataset_robot_hand(ds).layout);
  ht::evaluation::write_predictions(a.out, p, ht::evaluation::dataset_robot_hand(ds).layout);
  std::printf("wrote %zu predictions to %s\n", p.joints.size(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ReplayArgs {
  Common common;
  std::string trajectory;
  std::string checkpoint;
  std::string out;
  std::optional<double> duration, delta1, delta2, arm_rate, hand_rate, velocity_limit;
  bool realtime = false;
};

int run_replay(const ReplayArgs& a) {
  auto rc = resolve(a.common);
  apply(a.duration, rc.replay_duration);
  apply(a.delta1, rc.teleop.delta1);
  apply(a.delta2, rc.teleop.delta2);
  apply(a.arm_rate, rc.teleop.arm_rate);
  apply(a.hand_rate, rc.teleop.hand_rate);
  apply(a.velocity_limit, rc.teleop.velocity_limit);
  rc.teleop.validate();

  const auto traj = ht::teleop::read_trajectory(a.trajectory);
  std::optional<ht::checkpoint::Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = ht::checkpoint::load(a.checkpoint);
  const auto layout = ht::kinematics::JointLayout::shadow_robot();
  ht::teleop::ReplayOptions opt;
  opt.duration = rc.replay_duration;
  opt.ik = rc.ik;
  opt.realtime = a.realtime;
  const auto log = ht::teleop::run_replay(traj, ck ? &ck->network : nullptr, rc.arm_chain, layout, rc.teleop, opt);
  ht::teleop::write_log(a.out, log, layout);

  double worst_pos = 0.0, final_pos = 0.0;
  for (const auto& r : log.arm) worst_pos = std::max(worst_pos, r.position_error);
  if (!log.arm.empty()) final_pos = log.arm.back().position_error;
  const json summary{{"arm_ticks", log.arm.size()},
                     {"hand_ticks", log.hand.size()},
                     {"events", log.events.size()},
                     {"max_position_error_m", worst_pos},
                     {"final_position_error_m", final_pos}};
  ht::io::write_text(fs::path(a.out) / "summary.json", summary.dump(2) + "\n");
  write_resolved(a.out, "teleop replay", rc,
                 {{"trajectory", a.trajectory}, {"checkpoint", a.checkpoint}, {"realtime", a.realtime}});
  std::printf("%zu arm ticks, %zu hand ticks, %zu events, final wrist error %.3g m\n", log.arm.size(),
              log.hand.size(), log.events.size(), final_pos);
  return 0;
}

struct SynthArgs {
  Common common;
  std::string data;
  std::string out;
  double seconds = 10.0;
};

int run_synth(const SynthArgs& a) {
  const auto rc = resolve(a.common);
  if (!(a.seconds > 0.0)) throw UsageError("--seconds must be > 0");
  const auto ds = ht::data::Dataset::open(a.data);
  const auto t = ht::teleop::synthesize_trajectory(ds, rc.arm_chain, a.out, a.seconds, rc.seed, rc.teleop);
  write_resolved(a.out, "teleop synth", rc, {{"data", a.data}, {"seconds", a.seconds}});
  std::printf("wrote %zu arm samples and %zu hand images to %s\n", t.arm.size(), t.hand.size(), a.out.c_str());
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<ht::evaluation::MetricReport> all;
  for (const auto& dir : a.inputs)
    for (auto& r : ht::evaluation::load_report(dir)) all.push_back(std::move(r));
  ht::evaluation::make_labels_unique(all);
  ht::evaluation::emit_report(all, a.out);
  for (const auto& l : ht::evaluation::ranking(all)) std::printf("%s\n", l.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Hand-arm teleoperation from depth images: data, training, evaluation, replay", "handteleop"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "Synthetic paired datasets");
  dataset->require_subcommand(1);

  GenerateArgs gen;
  auto* gen_cmd = dataset->add_subcommand("generate", "Render a paired human/robot dataset");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--n", gen.n, "Number of samples (overrides dataset.size)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  ValidateArgs val;
  auto* val_cmd = dataset->add_subcommand("validate", "Check every dataset invariant");
  val_cmd->add_option("--data", val.data, "Dataset directory")->required();
  val_cmd->add_option("--out", val.out, "Write the JSON report here");

  ConvertArgs conv;
  auto* conv_cmd = dataset->add_subcommand("convert", "Import an external capture directory");
  add_common(conv_cmd, conv.common);
  conv_cmd->add_option("--src", conv.src, "External layout directory")->required();
  conv_cmd->add_option("--out", conv.out, "Output dataset directory")->required();

  SplitArgs spl;
  auto* spl_cmd = dataset->add_subcommand("split", "Recompute the train/val/test partition");
  add_common(spl_cmd, spl.common);
  spl_cmd->add_option("--data", spl.data, "Dataset directory")->required();
  spl_cmd->add_option("--train", spl.train, "Train fraction");
  spl_cmd->add_option("--val", spl.val, "Validation fraction");
  spl_cmd->add_option("--test", spl.test, "Test fraction");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a model variant");
  add_common(tr_cmd, tr.common);
  tr_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  tr_cmd->add_option("--out", tr.out, "Run directory")->required();
  tr_cmd->add_option("--steps", tr.steps, "Step budget");
  tr_cmd->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  tr_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  tr_cmd->add_option("--variant", tr.variant, "transteleop | no_stn | robotonly");
  tr_cmd->add_option("--arch", tr.arch, "Architecture preset: full | desk");
  tr_cmd->add_option("--lambda-recon", tr.lambda_recon, "Reconstruction loss weight");
  tr_cmd->add_option("--lambda-joint", tr.lambda_joint, "Joint loss weight");
  tr_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in steps (0: final only)");
  tr_cmd->add_option("--validate-every", tr.validate_every, "Validation cadence in steps (0: never)");
  tr_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingDirectory);
  tr_cmd->add_option("--log-every", tr.log_every, "Print losses every N steps (0: quiet)");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Score checkpoints on a split and write the report");
  add_common(ev_cmd, ev.common);
  ev_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint directory (repeatable)")->required();
  ev_cmd->add_option("--expect", ev.expect, "Required variant per checkpoint (repeatable)");
  ev_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  ev_cmd->add_option("--split", ev.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  ev_cmd->add_option("--out", ev.out, "Report directory")->required();

  InferArgs inf;
  auto* inf_cmd = app.add_subcommand("infer", "Joint angles from depth images");
  inf_cmd->add_option("--checkpoint", inf.checkpoint, "Checkpoint directory")->required();
  inf_cmd->add_option("--image", inf.images, "96x96 16-bit depth PNG (repeatable)");
  inf_cmd->add_option("--data", inf.data, "Dataset directory (instead of --image)");
  inf_cmd->add_option("--split", inf.split, "Split to predict with --data")
      ->check(CLI::IsMember({"train", "val", "test"}));
  inf_cmd->add_option("--out", inf.out, "Output CSV");

  auto* teleop_cmd = app.add_subcommand("teleop", "Simulated hand-arm teleoperation");
  teleop_cmd->require_subcommand(1);
  ReplayArgs rep;
  auto* rep_cmd = teleop_cmd->add_subcommand("replay", "Replay a recorded trajectory through the controllers");
  add_common(rep_cmd, rep.common);
  rep_cmd->add_option("--trajectory", rep.trajectory, "Trajectory directory (arm.csv, hand.csv)")->required();
  rep_cmd->add_option("--checkpoint", rep.checkpoint, "Model for the hand channel (omit for arm only)");
  rep_cmd->add_option("--out", rep.out, "Log directory")->required();
  rep_cmd->add_option("--duration", rep.duration, "Seconds to simulate (0: recorded span)");
  rep_cmd->add_option("--delta1", rep.delta1, "Feedforward gain");
  rep_cmd->add_option("--delta2", rep.delta2, "Feedback gain");
  rep_cmd->add_option("--arm-rate", rep.arm_rate, "Arm loop rate, Hz");
  rep_cmd->add_option("--hand-rate", rep.hand_rate, "Hand loop rate, Hz");
  rep_cmd->add_option("--velocity-limit", rep.velocity_limit, "Joint speed limit, rad/s");
  rep_cmd->add_flag("--realtime", rep.realtime, "Pace ticks against the wall clock");

  SynthArgs syn;
  auto* syn_cmd = teleop_cmd->add_subcommand("synth", "Write a synthetic replay trajectory");
  add_common(syn_cmd, syn.common);
  syn_cmd->add_option("--data", syn.data, "Dataset supplying the hand images")->required();
  syn_cmd->add_option("--out", syn.out, "Trajectory directory")->required();
  syn_cmd->add_option("--seconds", syn.seconds, "Length in seconds");

  ReportArgs rpt;
  auto* rpt_cmd = app.add_subcommand("report", "Merge evaluation outputs into one report");
  rpt_cmd->add_option("--in", rpt.inputs, "Evaluation output directory (repeatable)")->required();
  rpt_cmd->add_option("--out", rpt.out, "Report directory")->required();

  // Usage text for the deepest subcommand named on the command line.
  const auto usage = [&] {
    const CLI::App* deepest = &app;
    for (const CLI::App* cur = &app;;) {
      const auto used = cur->get_subcommands();
      if (used.empty()) break;
      cur = deepest = used.front();
    }
    return deepest->help();
  };
  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->check_name(argv[1]);
    if (!known) {
      std::fprintf(stderr, "error: unknown subcommand '%s'\n\n%s", argv[1], app.help().c_str());
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), usage().c_str());
    return 2;
  }

  try {
    if (*gen_cmd) return run_generate(gen);
    if (*val_cmd) return run_validate(val);
    if (*conv_cmd) return run_convert(conv);
    if (*spl_cmd) return run_split(spl);
    if (*tr_cmd) return run_train(tr);
    if (*ev_cmd) return run_eval(ev);
    if (*inf_cmd) return run_infer(inf);
    if (*rep_cmd) return run_replay(rep);
    if (*syn_cmd) return run_synth(syn);
    if (*rpt_cmd) return run_report(rpt);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\nRun with --help for usage.\n", e.what());
    return 2;
  } catch (const ht::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
