#include "handteleop/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "handteleop/checkpoint.hpp"
#include "handteleop/errors.hpp"
#include "handteleop/io.hpp"
#include "handteleop/json_io.hpp"
#include "handteleop/parallel.hpp"

namespace handteleop::evaluation {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_pairs(std::span<const JointVector> preds, std::span<const JointVector> gts) {
  if (preds.empty()) throw ContractError("no frames to evaluate");
  if (preds.size() != gts.size())
    throw ContractError("prediction/ground-truth count mismatch: " + std::to_string(preds.size()) + " vs " +
                        std::to_string(gts.size()));
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].size() != gts[i].size() || preds[i].size() == 0)
      throw ContractError("frame " + std::to_string(i) + ": joint vector length mismatch");
}

void check_thresholds(std::span<const double> t) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (!(t[i] >= t[i - 1])) throw ContractError("thresholds must be sorted ascending");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// --- SVG plots -------------------------------------------------------------

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Frame {
  double left = 70, right = 590, top = 40, bottom = 330;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (right - left); }
  double py(double y) const { return bottom - (y - y0) / (y1 - y0) * (bottom - top); }
};

void svg_open(std::ostringstream& o, const std::string& title, const Frame& f, const std::string& xlabel,
              const std::string& ylabel) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"400\" data-x-min=\"" << fmt(f.x0)
    << "\" data-x-max=\"" << fmt(f.x1) << "\" data-y-min=\"" << fmt(f.y0) << "\" data-y-max=\"" << fmt(f.y1)
    << "\">\n<rect width=\"760\" height=\"400\" fill=\"white\"/>\n";
  o << "<text x=\"" << (f.left + f.right) / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<text x=\"" << (f.left + f.right) / 2 << "\" y=\"" << f.bottom + 50
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
  o << "<text transform=\"translate(18," << (f.top + f.bottom) / 2
    << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(ylabel)
    << "</text>\n";
  o << "<line x1=\"" << f.left << "\" y1=\"" << f.bottom << "\" x2=\"" << f.right << "\" y2=\"" << f.bottom
    << "\" stroke=\"black\"/>\n<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\""
    << f.bottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 5.0;
    o << "<line x1=\"" << f.left - 4 << "\" y1=\"" << f.py(y) << "\" x2=\"" << f.right << "\" y2=\"" << f.py(y)
      << "\" stroke=\"#ddd\"/>\n<text x=\"" << f.left - 8 << "\" y=\"" << f.py(y) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(y) << "</text>\n";
  }
}

void legend(std::ostringstream& o, const std::vector<MetricReport>& reports, const Frame& f) {
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const double y = f.top + 10 + 18 * static_cast<double>(i);
    o << "<rect x=\"" << f.right + 15 << "\" y=\"" << y - 8 << "\" width=\"12\" height=\"12\" fill=\""
      << kPalette[i % 8] << "\"/>\n<text x=\"" << f.right + 32 << "\" y=\"" << y + 2
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(reports[i].label) << "</text>\n";
  }
}

std::string curve_svg(const std::vector<MetricReport>& reports, bool angle) {
  const auto& xs = angle ? reports.front().angle_thresholds : reports.front().distance_thresholds_mm;
  Frame f;
  f.x0 = xs.front();
  f.x1 = xs.back() > xs.front() ? xs.back() : xs.front() + 1.0;
  std::ostringstream o;
  svg_open(o, angle ? "Maximum joint angle error" : "Maximum keypoint distance error", f,
           angle ? "threshold (rad)" : "threshold (mm)", "fraction of frames");
  for (int i = 0; i <= 6; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 6.0;
    o << "<text x=\"" << f.px(x) << "\" y=\"" << f.bottom + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(x) << "</text>\n";
  }
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto& ys = angle ? reports[r].angle_curve : reports[r].distance_curve;
    o << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[r % 8] << "\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) o << f.px(xs[i]) << ',' << f.py(ys[i]) << ' ';
    o << "\"/>\n";
  }
  legend(o, reports, f);
  o << "</svg>\n";
  return o.str();
}

std::string bar_svg(const std::vector<MetricReport>& reports) {
  const auto& names = reports.front().joint_names;
  double top = 0.0;
  for (const auto& r : reports)
    for (double v : r.per_joint_error) top = std::max(top, v);
  Frame f;
  f.x0 = 0;
  f.x1 = static_cast<double>(names.size());
  f.y1 = top > 0 ? top * 1.1 : 1.0;
  std::ostringstream o;
  svg_open(o, "Mean absolute error per joint", f, "", "error (rad)");
  const double slot = (f.right - f.left) / std::max<double>(1.0, f.x1);
  const double w = slot * 0.8 / static_cast<double>(reports.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    for (std::size_t r = 0; r < reports.size(); ++r) {
      const double v = reports[r].per_joint_error[j];
      const double x = f.left + slot * (static_cast<double>(j) + 0.1) + w * static_cast<double>(r);
      o << "<rect x=\"" << x << "\" y=\"" << f.py(v) << "\" width=\"" << w << "\" height=\"" << f.bottom - f.py(v)
        << "\" fill=\"" << kPalette[r % 8] << "\"/>\n";
    }
    const double cx = f.left + slot * (static_cast<double>(j) + 0.5);
    o << "<text transform=\"translate(" << cx << ',' << f.bottom + 8
      << ") rotate(60)\" font-family=\"sans-serif\" font-size=\"9\">" << escape(names[j]) << "</text>\n";
  }
  legend(o, reports, f);
  o << "</svg>\n";
  return o.str();
}

io::CsvTable curve_table(const std::vector<MetricReport>& reports, bool angle) {
  io::CsvTable t;
  t.header = {angle ? "threshold_rad" : "threshold_mm"};
  for (const auto& r : reports) t.header.push_back(r.label);
  const auto& xs = angle ? reports.front().angle_thresholds : reports.front().distance_thresholds_mm;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<std::string> row{fmt(xs[i])};
    for (const auto& r : reports) row.push_back(fmt(angle ? r.angle_curve[i] : r.distance_curve[i]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace

std::vector<double> threshold_grid(double start, double stop, double step) {
  if (!(step > 0.0) || !(stop >= start) || !std::isfinite(start) || !std::isfinite(stop))
    throw ConfigError("threshold grid needs step > 0 and stop >= start");
  std::vector<double> out;
  const auto n = static_cast<long long>(std::floor((stop - start) / step + 0.5));
  for (long long i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
  return out;
}

std::vector<double> default_angle_thresholds() { return threshold_grid(0.0, 0.6, 0.01); }
std::vector<double> default_distance_thresholds_mm() { return threshold_grid(0.0, 50.0, 1.0); }

std::vector<double> max_angle_errors(std::span<const JointVector> preds, std::span<const JointVector> gts) {
  check_pairs(preds, gts);
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double m = 0.0;
    for (int j = 0; j < preds[i].size(); ++j) m = std::max(m, std::abs(preds[i][j] - gts[i][j]));
    out[i] = m;
  }
  return out;
}

std::vector<double> max_keypoint_errors_mm(std::span<const JointVector> preds, std::span<const JointVector> gts,
                                           const kinematics::HandSkeleton& skeleton) {
  check_pairs(preds, gts);
  const auto n = static_cast<std::int64_t>(preds.size());
  std::vector<double> out(preds.size());
  std::vector<std::string> errors(preds.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      const auto a = kinematics::forward_keypoints(preds[i], skeleton);
      const auto b = kinematics::forward_keypoints(gts[i], skeleton);
      double m = 0.0;
      for (int k = 0; k < kinematics::kKeypointCount; ++k) m = std::max(m, (a[k] - b[k]).norm());
      out[i] = 1000.0 * m;
    } catch (const std::exception& e) {
      errors[i] = "frame " + std::to_string(i) + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw ContractError(e);
  return out;
}

std::vector<double> fraction_below(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty()) throw ContractError("no frames to evaluate");
  check_thresholds(thresholds);
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(static_cast<double>(below) / static_cast<double>(sorted.size()));
  }
  return out;
}

std::vector<double> angle_curve(std::span<const JointVector> preds, std::span<const JointVector> gts,
                                std::span<const double> thresholds) {
  return fraction_below(max_angle_errors(preds, gts), thresholds);
}

std::vector<double> distance_curve(std::span<const JointVector> preds, std::span<const JointVector> gts,
                                   std::span<const double> thresholds_mm, const kinematics::HandSkeleton& skeleton) {
  return fraction_below(max_keypoint_errors_mm(preds, gts, skeleton), thresholds_mm);
}

std::vector<double> per_joint_error(std::span<const JointVector> preds, std::span<const JointVector> gts) {
  check_pairs(preds, gts);
  const int m = preds.front().size();
  std::vector<double> sum(static_cast<std::size_t>(m), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != m) throw ContractError("frames disagree on joint count");
    for (int j = 0; j < m; ++j) sum[j] += std::abs(preds[i][j] - gts[i][j]);
  }
  for (auto& s : sum) s /= static_cast<double>(preds.size());
  return sum;
}

void EvalConfig::validate() const {
  if (angle_thresholds.empty() || distance_thresholds_mm.empty()) throw ConfigError("threshold grids must be non-empty");
  for (const auto* g : {&angle_thresholds, &distance_thresholds_mm})
    for (std::size_t i = 1; i < g->size(); ++i)
      if (!((*g)[i] > (*g)[i - 1])) throw ConfigError("threshold grids must be strictly ascending");
  if (batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
}

json to_json(const EvalConfig& c) {
  return {{"angle_thresholds", c.angle_thresholds},
          {"distance_thresholds_mm", c.distance_thresholds_mm},
          {"batch_size", c.batch_size}};
}

EvalConfig eval_from_json(const json& j) {
  EvalConfig c;
  // either explicit lists or {start, stop, step} objects
  const auto grid = [&](const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_object())
      out = threshold_grid(json_io::get<double>(v, "start"), json_io::get<double>(v, "stop"),
                           json_io::get<double>(v, "step"));
    else
      out = json_io::get<std::vector<double>>(j, key);
  };
  grid("angle_thresholds", c.angle_thresholds);
  grid("distance_thresholds_mm", c.distance_thresholds_mm);
  if (j.contains("batch_size")) c.batch_size = json_io::get<int>(j, "batch_size");
  c.validate();
  return c;
}

json to_json(const MetricReport& r) {
  return {{"label", r.label},
          {"variant", r.variant},
          {"sample_count", r.sample_count()},
          {"frame_ids", r.frame_ids},
          {"joint_names", r.joint_names},
          {"angle_thresholds", r.angle_thresholds},
          {"angle_curve", r.angle_curve},
          {"distance_thresholds_mm", r.distance_thresholds_mm},
          {"distance_curve", r.distance_curve},
          {"per_joint_error", r.per_joint_error},
          {"mean_joint_error", r.mean_joint_error}};
}

MetricReport report_from_json(const json& j) {
  MetricReport r;
  try {
    r.label = j.at("label").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.frame_ids = j.at("frame_ids").get<std::vector<int>>();
    r.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    r.angle_thresholds = j.at("angle_thresholds").get<std::vector<double>>();
    r.angle_curve = j.at("angle_curve").get<std::vector<double>>();
    r.distance_thresholds_mm = j.at("distance_thresholds_mm").get<std::vector<double>>();
    r.distance_curve = j.at("distance_curve").get<std::vector<double>>();
    r.per_joint_error = j.at("per_joint_error").get<std::vector<double>>();
    r.mean_joint_error = j.at("mean_joint_error").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metric report: ") + e.what());
  }
  return r;
}

MetricReport make_report(std::string label, std::string variant, std::vector<int> frame_ids,
                         std::span<const JointVector> preds, std::span<const JointVector> gts,
                         const kinematics::HandSkeleton& skeleton, const EvalConfig& config) {
  config.validate();
  if (frame_ids.size() != preds.size()) throw ContractError("frame id count does not match prediction count");
  MetricReport r;
  r.label = std::move(label);
  r.variant = std::move(variant);
  r.frame_ids = std::move(frame_ids);
  for (const auto& e : skeleton.layout.entries()) r.joint_names.push_back(e.name);
  r.angle_thresholds = config.angle_thresholds;
  r.distance_thresholds_mm = config.distance_thresholds_mm;
  r.angle_curve = angle_curve(preds, gts, r.angle_thresholds);
  r.distance_curve = distance_curve(preds, gts, r.distance_thresholds_mm, skeleton);
  r.per_joint_error = per_joint_error(preds, gts);
  if (r.per_joint_error.size() != r.joint_names.size()) throw ContractError("joint count does not match the skeleton");
  r.mean_joint_error = std::accumulate(r.per_joint_error.begin(), r.per_joint_error.end(), 0.0) /
                       static_cast<double>(r.per_joint_error.size());
  return r;
}

const imaging::DepthImage& model_input(const data::PairedSample& sample, model::Variant variant) {
  return variant == model::Variant::kRobotOnly ? sample.robot_image : sample.human_image;
}

Predictions predict(const model::Network<float>& net, const data::Dataset& dataset,
                    std::span<const std::size_t> indices, const kinematics::JointLayout& layout, int batch_size) {
  if (batch_size < 1) throw ContractError("batch size must be >= 1");
  Predictions out;
  const std::size_t n = indices.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n - start);
    std::vector<data::PairedSample> samples(count);
    std::vector<std::string> errors(count);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(count); ++i) {
      try {
        samples[i] = dataset.load(indices[start + i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw IntegrityError(e);
    std::vector<const imaging::DepthImage*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&model_input(s, net.variant()));
    const auto raw = net.infer_joints_raw(model::to_batch<float>(ptrs));
    const int m = raw.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> v(static_cast<std::size_t>(m));
      for (int j = 0; j < m; ++j) v[j] = raw.data[i * static_cast<std::size_t>(m) + j];
      out.sample_ids.push_back(samples[i].sample_id);
      out.joints.push_back(kinematics::clamp_to_limits(JointVector(std::move(v)), layout));
    }
  }
  return out;
}

void write_predictions(const fs::path& path, const Predictions& p, const kinematics::JointLayout& layout) {
  io::CsvTable t;
  t.header = {"sample_id"};
  for (const auto& e : layout.entries()) t.header.push_back(e.name);
  for (std::size_t i = 0; i < p.sample_ids.size(); ++i) {
    if (p.joints[i].size() != layout.count()) throw ContractError("prediction length does not match the joint layout");
    std::vector<std::string> row{std::to_string(p.sample_ids[i])};
    for (double v : p.joints[i].values()) row.push_back(io::format_angle(v));
    t.rows.push_back(std::move(row));
  }
  io::write_csv(path, t);
}

Predictions read_predictions(const fs::path& path, const kinematics::JointLayout& layout) {
  const auto t = io::read_csv(path);
  std::vector<std::size_t> cols;
  const auto id_col = t.column("sample_id");
  for (const auto& e : layout.entries()) cols.push_back(t.column(e.name));
  Predictions p;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.header.size())
      throw FormatError(path.string() + " row " + std::to_string(r + 2) + ": expected " +
                        std::to_string(t.header.size()) + " fields");
    p.sample_ids.push_back(static_cast<int>(io::parse_int(row[id_col], "sample_id")));
    std::vector<double> v;
    for (auto c : cols) {
      const double a = io::parse_double(row[c], "joint angle");
      if (!std::isfinite(a)) throw FormatError(path.string() + " row " + std::to_string(r + 2) + ": non-finite angle");
      v.push_back(a);
    }
    p.joints.emplace_back(std::move(v));
  }
  return p;
}

kinematics::HandSkeleton dataset_robot_hand(const data::Dataset& dataset) {
  const auto& gen = dataset.manifest().generator;
  return gen ? gen->robot_hand : kinematics::HandSkeleton::shadow_robot();
}

MetricReport score(const Predictions& p, const data::Dataset& dataset, const std::string& label,
                   const std::string& variant, const EvalConfig& config) {
  if (p.sample_ids.size() != p.joints.size()) throw ContractError("prediction ids and joints differ in length");
  std::unordered_map<int, std::size_t> where;
  for (std::size_t i = 0; i < dataset.size(); ++i) where.emplace(dataset.sample_id(i), i);
  std::vector<JointVector> gts;
  for (int id : p.sample_ids) {
    const auto it = where.find(id);
    if (it == where.end()) throw ContractError("predicted sample " + std::to_string(id) + " is not in the dataset");
    gts.push_back(dataset.joints(it->second));
  }
  return make_report(label, variant, p.sample_ids, p.joints, gts, dataset_robot_hand(dataset), config);
}

Evaluated evaluate_checkpoint(const fs::path& path, const data::Dataset& dataset, data::Split split,
                              const EvalConfig& config, std::uint64_t expected_hash) {
  config.validate();
  const auto ckpt = expected_hash ? checkpoint::load(path, expected_hash) : checkpoint::load(path);
  const auto indices = dataset.indices(split);
  if (indices.empty()) throw ContractError("split '" + std::string(data::to_string(split)) + "' is empty");
  const auto hand = dataset_robot_hand(dataset);
  Evaluated e;
  e.predictions = predict(ckpt.network, dataset, indices, hand.layout, config.batch_size);
  const std::string variant(model::to_string(ckpt.network.variant()));
  e.report = score(e.predictions, dataset, variant, variant, config);
  return e;
}

std::vector<MetricReport> compare_variants(const std::vector<fs::path>& checkpoints, const data::Dataset& dataset,
                                           data::Split split, const EvalConfig& config,
                                           const std::vector<std::uint64_t>& expected_hashes) {
  if (checkpoints.empty()) throw ContractError("no checkpoints to compare");
  if (!expected_hashes.empty() && expected_hashes.size() != checkpoints.size())
    throw ContractError("one expected hash per checkpoint");
  std::vector<MetricReport> out;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    auto e = evaluate_checkpoint(checkpoints[i], dataset, split, config, expected_hashes.empty() ? 0 : expected_hashes[i]);
    if (!out.empty() && e.report.frame_ids != out.front().frame_ids)
      throw IntegrityError("variant " + e.report.label + " was evaluated on a different frame set");
    out.push_back(std::move(e.report));
  }
  make_labels_unique(out);
  return out;
}

void make_labels_unique(std::vector<MetricReport>& reports) {
  std::set<std::string> used;
  for (auto& r : reports) {
    if (used.insert(r.label).second) continue;
    const std::string base = r.label;
    for (int k = 2;; ++k) {
      r.label = base + "#" + std::to_string(k);
      if (used.insert(r.label).second) break;
    }
  }
}

std::vector<std::string> ranking(const std::vector<MetricReport>& reports) {
  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return reports[a].mean_joint_error < reports[b].mean_joint_error; });
  std::vector<std::string> out;
  for (auto i : order) out.push_back(reports[i].label);
  return out;
}

void emit_report(const std::vector<MetricReport>& reports, const fs::path& dir) {
  if (reports.empty()) throw ContractError("no reports to emit");
  for (const auto& r : reports)
    if (r.angle_thresholds != reports.front().angle_thresholds ||
        r.distance_thresholds_mm != reports.front().distance_thresholds_mm ||
        r.joint_names != reports.front().joint_names)
      throw ContractError("reports use different threshold grids or joint sets");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());

  json j;
  j["reports"] = json::array();
  for (const auto& r : reports) j["reports"].push_back(to_json(r));
  j["ranking"] = ranking(reports);
  io::write_text(dir / "report.json", j.dump(2) + "\n");

  io::write_csv(dir / "angle_curve.csv", curve_table(reports, true));
  io::write_csv(dir / "distance_curve.csv", curve_table(reports, false));
  io::CsvTable pj;
  pj.header = {"joint"};
  for (const auto& r : reports) pj.header.push_back(r.label);
  for (std::size_t k = 0; k < reports.front().joint_names.size(); ++k) {
    std::vector<std::string> row{reports.front().joint_names[k]};
    for (const auto& r : reports) row.push_back(fmt(r.per_joint_error[k]));
    pj.rows.push_back(std::move(row));
  }
  {
    std::vector<std::string> row{"mean"};
    for (const auto& r : reports) row.push_back(fmt(r.mean_joint_error));
    pj.rows.push_back(std::move(row));
  }
  io::write_csv(dir / "per_joint_error.csv", pj);

  io::write_text(dir / "angle_curve.svg", curve_svg(reports, true));
  io::write_text(dir / "distance_curve.svg", curve_svg(reports, false));
  io::write_text(dir / "per_joint_error.svg", bar_svg(reports));
}

std::vector<MetricReport> load_report(const fs::path& dir) {
  const auto path = dir / "report.json";
  if (!fs::exists(path)) throw IntegrityError("no report at " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw FormatError("malformed " + path.string() + ": " + e.what());
  }
  if (!j.contains("reports") || !j["reports"].is_array()) throw FormatError(path.string() + " has no reports");
  std::vector<MetricReport> out;
  for (const auto& r : j["reports"]) out.push_back(report_from_json(r));
  return out;
}

}  // namespace handteleop::evaluation
