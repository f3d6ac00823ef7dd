#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/harness.hpp"
#include "hermite_flow/snapshot.hpp"

namespace hermite_flow {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 30.0;
constexpr double kBottom = 50.0;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Axis {
  double lo, hi;
  bool log;
  double pixel_lo, pixel_hi;

  double map(double v) const {
    const double a = log ? std::log10(lo) : lo;
    const double b = log ? std::log10(hi) : hi;
    const double x = log ? std::log10(v) : v;
    return pixel_lo + (x - a) / (b - a) * (pixel_hi - pixel_lo);
  }
};

std::string header(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                  "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " +
                  num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" +
       title + "</text>\n";
  return s;
}

std::string frame(const Axis& x, const Axis& y, const std::string& xlabel,
                  const std::string& ylabel) {
  std::string s = "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" +
                  num(kWidth - kLeft - kRight) + "\" height=\"" +
                  num(kHeight - kTop - kBottom) + "\" fill=\"none\" stroke=\"black\"/>\n";
  auto ticks = [](const Axis& a) {
    std::vector<double> t;
    if (a.log) {
      for (double e = std::floor(std::log10(a.lo)); e <= std::ceil(std::log10(a.hi)); e += 1.0) {
        const double v = std::pow(10.0, e);
        if (v >= a.lo * (1 - 1e-12) && v <= a.hi * (1 + 1e-12)) t.push_back(v);
      }
    } else {
      for (int i = 0; i <= 5; ++i) t.push_back(a.lo + (a.hi - a.lo) * i / 5.0);
    }
    return t;
  };
  for (double v : ticks(x)) {
    const double px = x.map(v);
    s += "<line x1=\"" + num(px) + "\" y1=\"" + num(kHeight - kBottom) + "\" x2=\"" + num(px) +
         "\" y2=\"" + num(kHeight - kBottom + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(px) + "\" y=\"" + num(kHeight - kBottom + 18) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + num(v) + "</text>\n";
  }
  for (double v : ticks(y)) {
    const double py = y.map(v);
    s += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py) + "\" x2=\"" + num(kLeft) +
         "\" y2=\"" + num(py) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py + 4) +
         "\" text-anchor=\"end\" font-size=\"11\">" + num(v) + "</text>\n";
  }
  s += "<text x=\"" + num((kLeft + kWidth - kRight) / 2) + "\" y=\"" + num(kHeight - 10) +
       "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((kTop + kHeight - kBottom) / 2) +
       "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
       num((kTop + kHeight - kBottom) / 2) + ")\">" + ylabel + "</text>\n";
  return s;
}

std::string polyline(const std::vector<std::pair<double, double>>& pts, const Axis& x,
                     const Axis& y, const std::string& color, const std::string& cls) {
  std::string s = "<polyline class=\"" + cls + "\" fill=\"none\" stroke=\"" + color +
                  "\" stroke-width=\"1.5\" points=\"";
  bool first = true;
  for (const auto& [a, b] : pts) {
    if (!first) s += ' ';
    s += num(x.map(a)) + "," + num(y.map(b));
    first = false;
  }
  return s + "\"/>\n";
}

double t_max(const RunArtifact& run) {
  return std::max(2.0, static_cast<double>(run.log.records.back().t));
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

std::string loss_svg(const RunArtifact& run) {
  std::vector<std::pair<double, double>> pts;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& r : run.log.records) {
    if (r.t < 1) continue;
    const double v = 2.0 * r.loss;
    if (!(v > 0.0)) continue;
    pts.emplace_back(static_cast<double>(r.t), v);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Staircase: sum of a^2 over directions not yet past their predicted time,
  // plus the directions no neuron was matched to.
  const double matched = [&] {
    double s = 0.0;
    for (double a : run.strengths) s += a * a;
    return s;
  }();
  double start = 0.0;
  const TeacherModel teacher = run.config.teacher();
  for (double a : teacher.a()) start += a * a;
  const double plateau = std::max(0.0, start - matched);
  std::vector<std::pair<double, double>> stairs;
  for (std::size_t p = 0; p < run.thresholds.size(); ++p)
    if (std::isfinite(run.thresholds[p]))
      stairs.emplace_back(run.thresholds[p], run.strengths[p] * run.strengths[p]);
  std::sort(stairs.begin(), stairs.end());
  hi = std::max(hi, start);
  double level = start;
  for (const auto& s : stairs) {
    level -= s.second;
    if (level > 1e-12) lo = std::min(lo, level);
  }
  if (!std::isfinite(lo)) lo = 1e-3;
  if (plateau > 1e-12) lo = std::min(lo, plateau);
  lo = std::max(lo * 0.8, 1e-12);
  hi = hi * 1.25;

  const double tmax = t_max(run);
  const Axis x{1.0, tmax, true, kLeft, kWidth - kRight};
  const Axis y{lo, hi, true, kHeight - kBottom, kTop};

  std::string s = header(run.label + ": loss");
  s += frame(x, y, "t", "2 L(t)");
  s += polyline(pts, x, y, kPalette[0], "loss");

  // Step path; data-steps lists the x positions of the drops.
  std::string data, path;
  level = start;
  double cur_x = 1.0;
  auto clamp_y = [&](double v) { return y.map(std::max(v, lo)); };
  path += "M" + num(x.map(cur_x)) + "," + num(clamp_y(level));
  for (const auto& st : stairs) {
    if (!data.empty()) data += ' ';
    data += num(st.first);
    const double px = std::clamp(st.first, 1.0, tmax);
    path += " H" + num(x.map(px));
    level -= st.second;
    path += " V" + num(clamp_y(level));
  }
  path += " H" + num(x.map(tmax));
  s += "<path class=\"staircase\" data-steps=\"" + data +
       "\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"4 3\" d=\"" + path + "\"/>\n";
  return s + "</svg>\n";
}

std::string overlaps_svg(const RunArtifact& run) {
  const double tmax = t_max(run);
  const Axis x{1.0, tmax, true, kLeft, kWidth - kRight};
  const Axis y{0.0, 1.0, false, kHeight - kBottom, kTop};
  std::string s = header(run.label + ": matched overlaps");
  s += frame(x, y, "t", "vbar^2");
  const std::size_t K = run.log.records.empty() ? 0 : run.log.records.front().diag_overlaps.size();
  for (std::size_t p = 0; p < K; ++p) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : run.log.records)
      if (r.t >= 1) pts.emplace_back(static_cast<double>(r.t), std::clamp(r.diag_overlaps[p], 0.0, 1.0));
    s += polyline(pts, x, y, kPalette[p % 10], "overlap p" + std::to_string(p + 1));
  }
  return s + "</svg>\n";
}

std::vector<std::filesystem::path> emit_plots(const Report& report,
                                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  if (report.runs.empty()) {
    const auto path = dir / "trajectory.csv";
    write_file(path, "t,loss,max_irrelevant,max_unused_norm\n");
    files.push_back(path);
    return files;
  }
  for (const auto& run : report.runs) {
    const auto csv = dir / (run.label + ".csv");
    write_file(csv, trajectory_csv(run.log));
    files.push_back(csv);

    nlohmann::json thresholds = nlohmann::json::array();
    for (double t : run.thresholds)
      thresholds.push_back(std::isfinite(t) ? nlohmann::json(t) : nlohmann::json("unbounded"));
    const nlohmann::json sidecar = {{"config", run_config_to_json(run.config)},
                                    {"selection", run.log.selection.to_json()},
                                    {"vbar2_init", run.log.vbar2_init},
                                    {"predicted_times", thresholds},
                                    {"strengths", run.strengths}};
    const auto js = dir / (run.label + ".json");
    write_file(js, sidecar.dump(2) + "\n");
    files.push_back(js);

    if (run.log.records.empty()) continue;
    const auto loss = dir / (run.label + "_loss.svg");
    write_file(loss, loss_svg(run));
    files.push_back(loss);
    const auto ov = dir / (run.label + "_overlaps.svg");
    write_file(ov, overlaps_svg(run));
    files.push_back(ov);
  }
  return files;
}

std::string init_gaps_csv(const GapDistribution& g) {
  std::string s = "delta,empirical_freq,cauchy_bound\n";
  char buf[96];
  for (std::size_t i = 0; i < g.deltas.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", g.deltas[i], g.empirical_freq[i],
                  g.cauchy_bound[i]);
    s += buf;
  }
  return s;
}

std::vector<std::filesystem::path> write_outputs(const Report& report,
                                                 const std::filesystem::path& dir) {
  auto files = emit_plots(report, dir);
  for (const auto& run : report.runs) {
    const auto path = dir / (run.label + "_final.hfsnap");
    write_snapshot(path, run.config.teacher(), run.log.final_state);
    files.push_back(path);
  }
  if (report.gaps) {
    const auto path = dir / "init_gaps.csv";
    write_file(path, init_gaps_csv(*report.gaps));
    files.push_back(path);
  }
  const auto rep = dir / "report.json";
  write_file(rep, report.to_json().dump(2) + "\n");
  files.push_back(rep);
  return files;
}

}  // namespace hermite_flow
