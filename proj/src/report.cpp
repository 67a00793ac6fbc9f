#include "closenas/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace closenas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v, int precision = 4) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string comment_text(const std::string& s) {
  std::string out = s;
  for (std::size_t p = out.find("--"); p != std::string::npos; p = out.find("--")) out.replace(p, 2, "- -");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ReportError("cannot write " + path.string());
  f << text;
  if (!f) throw ReportError("write failed for " + path.string());
}

RankingReport report_from_json(const json& j) {
  RankingReport r;
  r.kendalls_tau = j.at("kendalls_tau").get<double>();
  for (const auto& [k, v] : j.at("p_at_topk").items()) r.p_at_topk[std::stoi(k)] = v.get<double>();
  r.rd_by_group = j.at("rd_by_group").get<std::vector<double>>();
  r.rd_group_sizes = j.at("rd_group_sizes").get<std::vector<int>>();
  r.n_architectures = j.at("n_architectures").get<int>();
  return r;
}

std::vector<CurvePoint> curve_from_json(const json& a) {
  std::vector<CurvePoint> out;
  for (const auto& j : a) out.push_back({j.at("epoch").get<int>(), j.at("blocks").get<int>(), report_from_json(j)});
  return out;
}

void check_hash(const json& j, const std::string& expected, const fs::path& file) {
  if (!j.contains("config_hash") || j["config_hash"] != expected) {
    throw ReportError(file.string() + " carries config hash " +
                      (j.contains("config_hash") ? j["config_hash"].dump() : std::string("(none)")) +
                      ", expected " + expected + "; refusing mixed-hash inputs");
  }
}

std::string run_label(const ExperimentConfig& c) {
  const auto& s = c.train.supernet;
  std::string label(variant_name(s.variant));
  if (s.variant == SupernetVariant::closenet) {
    if (s.assignment == AssignmentPolicy::random) label += " random";
    if (!c.train.wit) label += " -WIT";
    if (!c.train.srt) label += " -SRT";
    if (c.train.schedule.switch_epochs.empty()) label += " K=" + std::to_string(s.initial_blocks);
  }
  return label;
}

struct Frame {
  double left = 70, right = 170, top = 40, bottom = 55, width = 720, height = 420;
  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string svg_header(const Frame& f, const std::string& title, const std::string& comment) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  if (!comment.empty()) s << "<!-- " << comment_text(comment) << " -->\n";
  s << "<desc>" << escape_xml(comment) << "</desc>\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << f.left + f.plot_w() / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << escape_xml(title) << "</text>\n";
  return s.str();
}

std::string axes(const Frame& f, const std::string& xl, const std::string& yl, double y0, double y1) {
  std::ostringstream s;
  const double x0p = f.left, y0p = f.top + f.plot_h();
  s << "<line x1=\"" << x0p << "\" y1=\"" << y0p << "\" x2=\"" << x0p + f.plot_w() << "\" y2=\"" << y0p
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << x0p << "\" y1=\"" << f.top << "\" x2=\"" << x0p << "\" y2=\"" << y0p
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y0 + (y1 - y0) * i / 4.0;
    const double y = y0p - f.plot_h() * i / 4.0;
    s << "<line x1=\"" << x0p - 4 << "\" y1=\"" << y << "\" x2=\"" << x0p << "\" y2=\"" << y << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << x0p - 7 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(v, 2) << "</text>\n";
  }
  s << "<text x=\"" << f.left + f.plot_w() / 2 << "\" y=\"" << f.height - 12 << "\" text-anchor=\"middle\">"
    << escape_xml(xl) << "</text>\n";
  s << "<text transform=\"translate(18," << f.top + f.plot_h() / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape_xml(yl) << "</text>\n";
  return s.str();
}

std::string legend(const Frame& f, const std::vector<Series>& series) {
  std::ostringstream s;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = f.top + 10 + 18.0 * i;
    const double x = f.width - f.right + 12;
    s << "<rect x=\"" << x << "\" y=\"" << y - 8 << "\" width=\"14\" height=\"8\" fill=\"" << kPalette[i % 8]
      << "\"/>\n";
    s << "<text x=\"" << x + 20 << "\" y=\"" << y << "\">" << escape_xml(series[i].name) << "</text>\n";
  }
  return s.str();
}

std::pair<double, double> padded_range(double lo, double hi) {
  if (!(lo <= hi)) return {0.0, 1.0};
  if (hi - lo < 1e-9) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  Frame f;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : chart.series) {
    for (double x : s.x) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    for (double y : s.y) {
      if (std::isfinite(y)) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  }
  for (double m : chart.markers) xmin = std::min(xmin, m), xmax = std::max(xmax, m);
  if (!(xmin <= xmax)) xmin = 0, xmax = 1;
  if (xmax - xmin < 1e-9) xmin -= 1, xmax += 1;
  const auto [y0, y1] = padded_range(ymin, ymax);
  auto px = [&](double x) { return f.left + (x - xmin) / (xmax - xmin) * f.plot_w(); };
  auto py = [&](double y) { return f.top + f.plot_h() - (y - y0) / (y1 - y0) * f.plot_h(); };

  std::ostringstream s;
  s << svg_header(f, chart.title, chart.comment) << axes(f, chart.x_label, chart.y_label, y0, y1);
  for (int i = 0; i <= 4; ++i) {
    const double v = xmin + (xmax - xmin) * i / 4.0;
    s << "<text x=\"" << num(px(v), 1) << "\" y=\"" << f.top + f.plot_h() + 16 << "\" text-anchor=\"middle\">"
      << num(v, 0) << "</text>\n";
  }
  for (double m : chart.markers) {
    s << "<line x1=\"" << num(px(m), 2) << "\" y1=\"" << f.top << "\" x2=\"" << num(px(m), 2) << "\" y2=\""
      << f.top + f.plot_h() << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";
  }
  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const auto& ser = chart.series[i];
    std::ostringstream pts;
    for (std::size_t k = 0; k < std::min(ser.x.size(), ser.y.size()); ++k) {
      if (!std::isfinite(ser.y[k])) continue;
      pts << num(px(ser.x[k]), 2) << "," << num(py(ser.y[k]), 2) << " ";
    }
    s << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[i % 8] << "\" points=\"" << pts.str()
      << "\"/>\n";
    for (std::size_t k = 0; k < std::min(ser.x.size(), ser.y.size()); ++k) {
      if (!std::isfinite(ser.y[k])) continue;
      s << "<circle cx=\"" << num(px(ser.x[k]), 2) << "\" cy=\"" << num(py(ser.y[k]), 2) << "\" r=\"2.5\" fill=\""
        << kPalette[i % 8] << "\"/>\n";
    }
  }
  s << legend(f, chart.series) << "</svg>\n";
  return s.str();
}

std::string render_svg(const BarChart& chart) {
  Frame f;
  double ymin = 0.0, ymax = 0.0;
  for (const auto& s : chart.series) {
    for (double y : s.y) {
      if (std::isfinite(y)) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  }
  const auto [y0, y1] = padded_range(ymin, ymax);
  auto py = [&](double y) { return f.top + f.plot_h() - (y - y0) / (y1 - y0) * f.plot_h(); };
  const std::size_t nc = std::max<std::size_t>(chart.categories.size(), 1);
  const std::size_t ns = std::max<std::size_t>(chart.series.size(), 1);
  const double slot = f.plot_w() / nc;
  const double bar = slot * 0.8 / ns;

  std::ostringstream s;
  s << svg_header(f, chart.title, chart.comment) << axes(f, chart.x_label, chart.y_label, y0, y1);
  s << "<line x1=\"" << f.left << "\" y1=\"" << num(py(0), 2) << "\" x2=\"" << f.left + f.plot_w() << "\" y2=\""
    << num(py(0), 2) << "\" stroke=\"gray\"/>\n";
  for (std::size_t c = 0; c < chart.categories.size(); ++c) {
    s << "<text x=\"" << num(f.left + slot * (c + 0.5), 2) << "\" y=\"" << f.top + f.plot_h() + 16
      << "\" text-anchor=\"middle\">" << escape_xml(chart.categories[c]) << "</text>\n";
    for (std::size_t i = 0; i < chart.series.size(); ++i) {
      if (c >= chart.series[i].y.size() || !std::isfinite(chart.series[i].y[c])) continue;
      const double v = chart.series[i].y[c];
      const double x = f.left + slot * c + slot * 0.1 + bar * i;
      const double top = std::min(py(v), py(0)), h = std::abs(py(v) - py(0));
      s << "<rect class=\"bar\" x=\"" << num(x, 2) << "\" y=\"" << num(top, 2) << "\" width=\"" << num(bar, 2)
        << "\" height=\"" << num(h, 2) << "\" fill=\"" << kPalette[i % 8] << "\"/>\n";
    }
  }
  s << legend(f, chart.series) << "</svg>\n";
  return s.str();
}

fs::path run_directory(const ExperimentConfig& config) { return fs::path(config.output_dir) / config.hash(); }

fs::path oracle_path(const ExperimentConfig& config) {
  return fs::path(config.output_dir) / ("oracle-" + config.oracle_hash()) / "oracle.csv";
}

void write_json_file(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ReportError("missing " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ReportError("malformed " + path.string() + ": " + e.what());
  }
}

std::string write_config_artifact(const fs::path& dir, const ExperimentConfig& config) {
  fs::create_directories(dir);
  const auto h = config.hash();
  write_json_file(dir / "config.json", {{"config_hash", h}, {"config", config.to_json()}});
  return h;
}

void write_train_artifacts(const fs::path& dir, const ExperimentConfig& config, const TrainOutcome& outcome) {
  fs::create_directories(dir);
  json j{{"config_hash", config.hash()},
         {"variant", variant_name(config.train.supernet.variant)},
         {"history", history_to_json(outcome.history)},
         {"switches", switches_to_json(outcome.switches)},
         {"curve", curve_to_json(outcome.curve)}};
  write_json_file(dir / "train.json", j);
}

void write_rank_artifact(const fs::path& dir, const ExperimentConfig& config, const std::vector<CurvePoint>& curve) {
  fs::create_directories(dir);
  write_json_file(dir / "rank.json", {{"config_hash", config.hash()}, {"curve", curve_to_json(curve)}});
}

void write_scores(const fs::path& path, const std::string& config_hash, const std::vector<CellArchitecture>& archs,
                  const std::vector<double>& scores, int epoch) {
  if (archs.size() != scores.size()) throw std::invalid_argument("scores not aligned with architectures");
  std::ostringstream s;
  s << "# config_hash=" << config_hash << "\narch,score,epoch\n";
  for (std::size_t i = 0; i < archs.size(); ++i)
    s << csv_quote(archs[i].to_string()) << "," << num(scores[i], 8) << "," << epoch << "\n";
  write_text(path, s.str());
}

std::vector<std::pair<std::string, double>> read_scores(const fs::path& path, const std::string& expected_hash) {
  std::ifstream f(path);
  if (!f) throw ReportError("missing score dump " + path.string());
  std::string line;
  std::string hash;
  std::vector<std::pair<std::string, double>> out;
  bool header = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      hash = line.substr(14);
      continue;
    }
    if (!header) {
      if (line != "arch,score,epoch") throw ReportError("unexpected header in " + path.string());
      header = true;
      continue;
    }
    const auto cols = split_csv_row(line);
    if (cols.size() != 3) throw ReportError("malformed row in " + path.string());
    out.emplace_back(cols[0], std::stod(cols[1]));
  }
  if (hash != expected_hash) {
    throw ReportError(path.string() + " carries config hash " + (hash.empty() ? "(none)" : hash) + ", expected " +
                      expected_hash + "; refusing mixed-hash inputs");
  }
  return out;
}

RunArtifacts load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ReportError("run directory " + dir.string() + " does not exist");
  if (fs::is_empty(dir)) throw ReportError("run directory " + dir.string() + " is empty");
  RunArtifacts run;
  run.dir = dir;
  const auto cj = read_json_file(dir / "config.json");
  run.config = ExperimentConfig::from_json(cj.at("config"));
  run.config_hash = run.config.hash();
  check_hash(cj, run.config_hash, dir / "config.json");
  if (dir.filename() != run.config_hash) {
    throw ReportError("run directory name " + dir.filename().string() + " does not match config hash " +
                      run.config_hash);
  }
  run.label = run_label(run.config);

  const auto tj = read_json_file(dir / "train.json");
  check_hash(tj, run.config_hash, dir / "train.json");
  run.history = tj.at("history");
  run.switches = tj.at("switches");
  run.curve = curve_from_json(tj.at("curve"));
  if (fs::exists(dir / "rank.json")) {
    const auto rj = read_json_file(dir / "rank.json");
    check_hash(rj, run.config_hash, dir / "rank.json");
    run.curve = curve_from_json(rj.at("curve"));
  }
  if (run.curve.empty()) throw ReportError(dir.string() + " has no ranking curve; run `rank` first");

  // The oracle sits next to the run directories of the same output root.
  const auto opath = dir.parent_path() / ("oracle-" + run.config.oracle_hash()) / "oracle.csv";
  if (!fs::exists(opath)) throw ReportError("missing oracle table " + opath.string());
  const auto oracle = GroundTruthTable::load(opath);
  if (oracle.meta.count("oracle_hash") && oracle.meta.at("oracle_hash") != run.config.oracle_hash()) {
    throw ReportError(opath.string() + " was built for a different oracle configuration");
  }

  const auto scores = read_scores(dir / "scores.csv", run.config_hash);
  std::vector<CellArchitecture> archs;
  std::vector<double> est;
  for (const auto& [a, v] : scores) {
    archs.push_back(CellArchitecture::parse(a));
    est.push_back(v);
  }
  if (archs.empty()) throw ReportError(dir.string() + "/scores.csv is empty");
  try {
    run.final_report = make_report(archs, est, oracle, run.config.spec(), run.config.eval.k_percents);
  } catch (const std::invalid_argument& e) {
    throw ReportError(std::string("score dump does not match the oracle: ") + e.what());
  }
  return run;
}

void emit_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ReportError("no run directories given");
  std::vector<RunArtifacts> runs;
  std::set<std::string> seen;
  for (const auto& d : run_dirs) {
    runs.push_back(load_run(d));
    if (!seen.insert(runs.back().config_hash).second) throw ReportError("run " + d.string() + " listed twice");
  }
  // Disambiguate identical labels by hash prefix.
  std::map<std::string, int> label_count;
  for (const auto& r : runs) ++label_count[r.label];
  for (auto& r : runs) {
    if (label_count[r.label] > 1) r.label += " [" + r.config_hash.substr(0, 6) + "]";
  }

  std::string hashes;
  for (const auto& r : runs) hashes += (hashes.empty() ? "" : ";") + r.config_hash;
  const std::string stamp = "config_hash=" + hashes;

  json summary{{"config_hashes", json::array()}, {"runs", json::array()}};
  std::ostringstream curve_csv, rd_csv, train_csv, switch_csv;
  curve_csv << "# " << stamp << "\nconfig_hash,label,epoch,blocks,kendalls_tau,p_at_top5\n";
  rd_csv << "# " << stamp << "\nconfig_hash,label,group,size,mean_rd\n";
  train_csv << "# " << stamp << "\nconfig_hash,label,epoch,blocks,lr,loss,accuracy,switched\n";
  switch_csv << "# " << stamp << "\nconfig_hash,label,epoch,max_abs_change\n";

  LineChart kd{"Kendall tau vs epoch", "epoch", "Kendall tau", {}, {}, stamp};
  LineChart p5{"P@top5% vs epoch", "epoch", "P@top5%", {}, {}, stamp};
  LineChart wit{"Training accuracy around curriculum switches", "epoch", "training accuracy", {}, {}, stamp};
  BarChart rd{"Ranking difference by complexity group", "complexity group (low to high)", "mean true - estimated rank",
              {"G1", "G2", "G3", "G4", "G5"}, {}, stamp};
  std::set<double> markers;

  for (const auto& r : runs) {
    summary["config_hashes"].push_back(r.config_hash);
    json sw = json::array();
    for (const auto& s : r.switches) sw.push_back({{"epoch", s.at("epoch")}, {"max_abs_change", s.at("max_abs_change")}});
    summary["runs"].push_back({{"config_hash", r.config_hash},
                               {"label", r.label},
                               {"variant", variant_name(r.config.train.supernet.variant)},
                               {"final", r.final_report.to_json()},
                               {"curve", curve_to_json(r.curve)},
                               {"switches", sw}});

    Series sk{r.label, {}, {}}, sp{r.label, {}, {}};
    for (const auto& p : r.curve) {
      const double top5 = p.report.p_at_topk.count(5) ? p.report.p_at_topk.at(5) : NAN;
      curve_csv << r.config_hash << "," << csv_quote(r.label) << "," << p.epoch << "," << p.blocks << ","
                << num(p.report.kendalls_tau, 6) << "," << num(top5, 6) << "\n";
      sk.x.push_back(p.epoch);
      sk.y.push_back(p.report.kendalls_tau);
      sp.x.push_back(p.epoch);
      sp.y.push_back(top5);
    }
    kd.series.push_back(sk);
    p5.series.push_back(sp);

    if (r.final_report.rd_by_group.size() != 5) throw ReportError("expected 5 complexity groups");
    Series sr{r.label, {}, {}};
    for (std::size_t g = 0; g < 5; ++g) {
      rd_csv << r.config_hash << "," << csv_quote(r.label) << "," << g + 1 << "," << r.final_report.rd_group_sizes[g] << ","
             << num(r.final_report.rd_by_group[g], 4) << "\n";
      sr.x.push_back(static_cast<double>(g + 1));
      sr.y.push_back(r.final_report.rd_by_group[g]);
    }
    rd.series.push_back(sr);

    Series sa{r.label, {}, {}};
    for (const auto& h : r.history) {
      train_csv << r.config_hash << "," << csv_quote(r.label) << "," << h.at("epoch").get<int>() << ","
                << h.at("blocks").get<int>() << "," << num(h.at("lr").get<double>(), 6) << ","
                << num(h.at("loss").get<double>(), 6) << "," << num(h.at("accuracy").get<double>(), 6) << ","
                << (h.at("switched").get<bool>() ? 1 : 0) << "\n";
      sa.x.push_back(h.at("epoch").get<int>());
      sa.y.push_back(h.at("accuracy").get<double>());
      if (h.at("switched").get<bool>()) markers.insert(h.at("epoch").get<int>());
    }
    wit.series.push_back(sa);
    for (const auto& s : r.switches) {
      switch_csv << r.config_hash << "," << csv_quote(r.label) << "," << s.at("epoch").get<int>() << ","
                 << num(s.at("max_abs_change").get<double>(), 8) << "\n";
    }
  }
  wit.markers.assign(markers.begin(), markers.end());

  const std::map<std::string, std::string> files{
      {"summary.json", summary.dump(2) + "\n"},
      {"curve.csv", curve_csv.str()},
      {"rd_by_complexity.csv", rd_csv.str()},
      {"train_history.csv", train_csv.str()},
      {"switch_probes.csv", switch_csv.str()},
      {"kd_vs_epoch.svg", render_svg(kd)},
      {"p_top5_vs_epoch.svg", render_svg(p5)},
      {"rd_by_complexity.svg", render_svg(rd)},
      {"wit_drop.svg", render_svg(wit)},
  };

  // Stage into a sibling directory, then swap it in.
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    for (const auto& [name, text] : files) write_text(staging / name, text);
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(out);
  fs::rename(staging, out);
}

}  // namespace closenas
