#include "handteleop/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "handteleop/errors.hpp"
#include "handteleop/evaluation.hpp"
#include "handteleop/io.hpp"
#include "handteleop/json_io.hpp"

namespace handteleop::training {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(std::vector<nn::Param<T>*> params, AdamSettings settings) : params_(std::move(params)), settings_(settings) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = settings_.learning_rate, eps = settings_.epsilon;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    p->ensure_grad();
    T* w = p->value.data.data();
    const T* g = p->grad.data.data();
    T* m = m_[k].data.data();
    T* v = v_[k].data.data();
    const auto n = static_cast<std::int64_t>(p->value.size());
#pragma omp parallel for schedule(static) if (n > 65536)
    for (std::int64_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

template <typename T>
void Adam<T>::restore(std::int64_t t, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) throw ContractError("optimizer state size mismatch");
  for (std::size_t k = 0; k < params_.size(); ++k)
    if (m[k].shape != params_[k]->value.shape || v[k].shape != params_[k]->value.shape)
      throw ContractError("optimizer state shape mismatch for " + params_[k]->name);
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  const auto& a = adam;
  if (!(a.learning_rate > 0.0) || !std::isfinite(a.learning_rate)) throw ConfigError("learning rate must be > 0");
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(a.beta2 >= 0.0 && a.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(a.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (steps < 1) throw ConfigError("step budget must be >= 1");
  if (!(lambda_recon >= 0.0) || !(lambda_joint >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (checkpoint_every < 0 || validate_every < 0) throw ConfigError("cadences must be >= 0");
  if (!(weight_sigma > 0.0)) throw ConfigError("weight-map sigma must be > 0");
  if (!(weight_floor >= 0.0 && weight_floor < 1.0)) throw ConfigError("weight-map floor must lie in [0, 1)");
  arch.validate();
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"lambda_recon", c.lambda_recon},
          {"lambda_joint", c.lambda_joint},
          {"seed", c.seed},
          {"variant", std::string(model::to_string(c.variant))},
          {"arch", model::to_json(c.arch)},
          {"checkpoint_every", c.checkpoint_every},
          {"validate_every", c.validate_every},
          {"weight_sigma", c.weight_sigma},
          {"weight_floor", c.weight_floor}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  static const std::set<std::string> known{"learning_rate", "beta1",      "beta2",           "epsilon",
                                           "batch_size",    "steps",      "lambda_recon",    "lambda_joint",
                                           "seed",          "variant",    "arch",            "checkpoint_every",
                                           "validate_every", "weight_sigma", "weight_floor"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown training key '" + k + "'");
  TrainConfig c;
  using json_io::get;
  if (j.contains("learning_rate")) c.adam.learning_rate = get<double>(j, "learning_rate");
  if (j.contains("beta1")) c.adam.beta1 = get<double>(j, "beta1");
  if (j.contains("beta2")) c.adam.beta2 = get<double>(j, "beta2");
  if (j.contains("epsilon")) c.adam.epsilon = get<double>(j, "epsilon");
  if (j.contains("batch_size")) c.batch_size = get<int>(j, "batch_size");
  if (j.contains("steps")) c.steps = get<std::int64_t>(j, "steps");
  if (j.contains("lambda_recon")) c.lambda_recon = get<double>(j, "lambda_recon");
  if (j.contains("lambda_joint")) c.lambda_joint = get<double>(j, "lambda_joint");
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed");
  if (j.contains("variant")) c.variant = model::parse_variant(get<std::string>(j, "variant"));
  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    c.arch = a.is_string() ? model::ArchConfig::preset(a.get<std::string>()) : model::arch_from_json(a);
  }
  if (j.contains("checkpoint_every")) c.checkpoint_every = get<std::int64_t>(j, "checkpoint_every");
  if (j.contains("validate_every")) c.validate_every = get<std::int64_t>(j, "validate_every");
  if (j.contains("weight_sigma")) c.weight_sigma = get<double>(j, "weight_sigma");
  if (j.contains("weight_floor")) c.weight_floor = get<double>(j, "weight_floor");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Logs

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string ms3(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

void write_step_log(const fs::path& path, const std::vector<StepRecord>& records) {
  io::CsvTable t{{"step", "l_recon", "l_joint", "l_hand", "wall_ms"}, {}};
  for (const auto& r : records)
    t.rows.push_back({std::to_string(r.step), g17(r.l_recon), g17(r.l_joint), g17(r.l_hand), ms3(r.wall_ms)});
  io::write_csv(path, t);
}

std::vector<StepRecord> read_step_log(const fs::path& path) {
  const auto t = io::read_csv(path);
  const auto cs = t.column("step"), cr = t.column("l_recon"), cj = t.column("l_joint"), ch = t.column("l_hand"),
             cw = t.column("wall_ms");
  std::vector<StepRecord> out;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw FormatError("malformed row in " + path.string());
    out.push_back({io::parse_int(row[cs], "step"), io::parse_double(row[cr], "l_recon"),
                   io::parse_double(row[cj], "l_joint"), io::parse_double(row[ch], "l_hand"),
                   io::parse_double(row[cw], "wall_ms")});
  }
  return out;
}

void write_validation_log(const fs::path& path, const std::vector<ValidationRecord>& records) {
  io::CsvTable t{{"step", "samples", "mean_joint_error", "frac_angle_below_0.1", "frac_dist_below_20mm"}, {}};
  for (const auto& r : records)
    t.rows.push_back({std::to_string(r.step), std::to_string(r.samples), g17(r.mean_joint_error),
                      g17(r.frac_angle_below_01), g17(r.frac_dist_below_20mm)});
  io::write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Schedule

BatchSchedule::BatchSchedule(std::vector<std::size_t> pool, int batch_size, std::uint64_t seed)
    : pool_(std::move(pool)), batch_size_(batch_size), seed_(seed) {
  if (pool_.empty()) throw ContractError("no training samples");
  if (batch_size_ < 1) throw ContractError("batch size must be >= 1");
}

const std::vector<std::size_t>& BatchSchedule::epoch_order(std::int64_t epoch) {
  if (epoch != cached_epoch_) {
    order_ = pool_;
    std::mt19937_64 rng(seed_ ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
    // Fisher-Yates with our own index draws so the order does not depend on the
    // standard library's shuffle implementation
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order_[i - 1], order_[j]);
    }
    cached_epoch_ = epoch;
  }
  return order_;
}

std::vector<std::size_t> BatchSchedule::batch(std::int64_t step) {
  if (step < 1) throw ContractError("steps are numbered from 1");
  const auto n = static_cast<std::int64_t>(pool_.size());
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size_));
  for (int k = 0; k < batch_size_; ++k) {
    const std::int64_t pos = (step - 1) * batch_size_ + k;
    out.push_back(epoch_order(pos / n)[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct Batch {
  Tensor<float> inputs;
  Tensor<float> targets;
  Tensor<float> alpha;
  Tensor<float> joints;
  std::vector<kinematics::JointVector> truth;
};

Batch assemble(const data::Dataset& dataset, const std::vector<std::size_t>& idx, const TrainConfig& config,
               bool need_targets) {
  const int n = static_cast<int>(idx.size());
  constexpr int px = imaging::kPixelCount;
  Batch b;
  b.inputs = Tensor<float>({n, 1, imaging::kImageSize, imaging::kImageSize});
  if (need_targets) {
    b.targets = Tensor<float>({n, 1, imaging::kImageSize, imaging::kImageSize});
    b.alpha = Tensor<float>({n, px});
  }
  b.joints = Tensor<float>({n, kinematics::kRobotJointCount});
  b.truth.resize(static_cast<std::size_t>(n));
  std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    try {
      const auto s = dataset.load(idx[i]);
      const auto in = evaluation::model_input(s, config.variant).pixels();
      std::copy(in.begin(), in.end(), b.inputs.data.begin() + static_cast<std::ptrdiff_t>(i) * px);
      if (need_targets) {
        const auto t = s.robot_image.pixels();
        std::copy(t.begin(), t.end(), b.targets.data.begin() + static_cast<std::ptrdiff_t>(i) * px);
        const auto w = imaging::build_weight_map(s.keypoints, config.weight_sigma, config.weight_floor);
        for (int p = 0; p < px; ++p) b.alpha.data[static_cast<std::size_t>(i) * px + p] = static_cast<float>(w.alpha[p]);
      }
      if (s.joints.size() != kinematics::kRobotJointCount) throw ContractError("sample has no robot joints");
      for (int j = 0; j < kinematics::kRobotJointCount; ++j)
        b.joints.data[static_cast<std::size_t>(i) * kinematics::kRobotJointCount + j] = static_cast<float>(s.joints[j]);
      b.truth[i] = s.joints;
    } catch (const std::exception& e) {
      errors[i] = "sample index " + std::to_string(idx[i]) + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IntegrityError(e);
  return b;
}

std::string step_dir_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%07lld", static_cast<long long>(step));
  return buf;
}

void require_finite(double v, const char* term, std::int64_t step) {
  if (!std::isfinite(v)) throw NumericalFailure("step " + std::to_string(step) + ": " + term + " is not finite");
}

ValidationRecord validate_model(const model::Network<float>& net, const data::Dataset& dataset,
                                const std::vector<std::size_t>& val, std::int64_t step) {
  const auto hand = evaluation::dataset_robot_hand(dataset);
  const auto p = evaluation::predict(net, dataset, val, hand.layout);
  std::vector<kinematics::JointVector> gts;
  for (auto i : val) gts.push_back(dataset.joints(i));
  ValidationRecord r;
  r.step = step;
  r.samples = static_cast<int>(val.size());
  const auto pj = evaluation::per_joint_error(p.joints, gts);
  r.mean_joint_error = std::accumulate(pj.begin(), pj.end(), 0.0) / static_cast<double>(pj.size());
  const double ta[] = {0.1}, td[] = {20.0};
  r.frac_angle_below_01 = evaluation::angle_curve(p.joints, gts, ta)[0];
  r.frac_dist_below_20mm = evaluation::distance_curve(p.joints, gts, td, hand)[0];
  return r;
}

}  // namespace

TrainResult train(const TrainConfig& config, const data::Dataset& dataset, const fs::path& out_dir,
                  const TrainOptions& options) {
  config.validate();
  if (dataset.size() == 0) throw ContractError("dataset is empty");
  auto pool = options.train_indices ? *options.train_indices : dataset.indices(data::Split::kTrain);
  if (pool.empty()) throw ContractError("no training samples in the dataset");
  for (auto i : pool)
    if (i >= dataset.size()) throw ContractError("training index out of range");
  const auto val = dataset.indices(data::Split::kVal);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());

  model::Network<float> net(config.arch, config.variant, config.seed);
  std::int64_t start = 0;
  TrainLog log;
  std::optional<checkpoint::AdamState> restored;
  if (options.resume_from) {
    auto c = checkpoint::load(*options.resume_from, net.architecture_hash());
    if (!c.adam) throw IncompatibleCheckpoint("checkpoint " + options.resume_from->string() + " has no optimizer state");
    net = std::move(c.network);
    restored = std::move(c.adam);
    start = c.step;
    if (start >= config.steps)
      throw ConfigError("checkpoint is at step " + std::to_string(start) + ", budget is " + std::to_string(config.steps));
    if (fs::exists(out_dir / "train_log.csv"))
      for (const auto& r : read_step_log(out_dir / "train_log.csv"))
        if (r.step <= start) log.steps.push_back(r);
  }
  Adam<float> adam(net.parameters(), config.adam);
  if (restored) adam.restore(restored->step, std::move(restored->m), std::move(restored->v));

  const bool decoder = net.has_decoder();
  BatchSchedule schedule(std::move(pool), config.batch_size, config.seed ^ 0x5851f42d4c957f2dULL);
  const json config_json = to_json(config);
  const auto save = [&](const fs::path& dir, std::int64_t step) {
    checkpoint::AdamState a{adam.settings(), adam.steps(), adam.first_moments(), adam.second_moments()};
    checkpoint::save(dir, {&net, &a, step, config.seed, config_json});
  };

  for (std::int64_t step = start + 1; step <= config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = assemble(dataset, schedule.batch(step), config, decoder);
    net.zero_grad();
    model::BatchLoss<float> loss;
    try {
      const auto out = net.forward_train(batch.inputs);
      loss = model::batch_loss(out, batch.targets, batch.alpha, batch.joints, config.lambda_recon, config.lambda_joint);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("step " + std::to_string(step) + ": " + e.what());
    }
    require_finite(loss.recon, "l_recon", step);
    require_finite(loss.joint, "l_joint", step);
    require_finite(loss.total, "l_hand", step);
    net.backward(loss.d_joints, loss.d_recon.empty() ? nullptr : &loss.d_recon);
    for (const auto* p : net.parameters())
      if (!p->grad.all_finite())
        throw NumericalFailure("step " + std::to_string(step) + ": gradient of l_hand is not finite in " + p->name);
    adam.step();
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.steps.push_back({step, loss.recon, loss.joint, loss.total, wall});
    if (options.on_step) options.on_step(log.steps.back());

    if (config.validate_every > 0 && step % config.validate_every == 0 && !val.empty())
      log.validation.push_back(validate_model(net, dataset, val, step));
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      save(out_dir / "checkpoints" / step_dir_name(step), step);
      write_step_log(out_dir / "train_log.csv", log.steps);
    }
  }

  TrainResult result;
  result.final_checkpoint = out_dir / "final";
  save(result.final_checkpoint, config.steps);
  write_step_log(out_dir / "train_log.csv", log.steps);
  write_validation_log(out_dir / "validation_log.csv", log.validation);
  result.log = std::move(log);
  return result;
}

}  // namespace handteleop::training
