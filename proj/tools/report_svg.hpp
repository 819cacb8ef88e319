#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvprior/error.hpp"

// Static SVG rendering of evaluation and protocol CSVs. Output depends only
// on the CSV contents; numbers are printed with fixed precision.
namespace mvprior::cli {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("CSV has no column '" + name + "'");
    return std::size_t(it - header.begin());
  }
  double number(std::size_t row, const std::string& name) const {
    const std::string& cell = rows[row][column(name)];
    try {
      return std::stod(cell);
    } catch (const std::exception&) {
      throw FormatError("CSV cell '" + cell + "' in column " + name + " is not a number");
    }
  }
  const std::string& text(std::size_t row, const std::string& name) const {
    return rows[row][column(name)];
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty CSV");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size())
      throw FormatError(path + ": row width differs from header");
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#17becf", "#8c564b", "#e377c2"};
  return colors[i % 8];
}

// Axis frame for a unit-square plot placed at (x0, y0) with size w x h.
struct Panel {
  double x0, y0, w, h;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }

  void frame(std::ostream& os, const std::string& title, const std::string& xlabel,
             const std::string& ylabel, const std::vector<double>& xticks) const {
    os << "<g class=\"panel\">\n";
    os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(w)
       << "\" height=\"" << num(h) << "\" fill=\"none\" stroke=\"#000\"/>\n";
    os << "<text x=\"" << num(x0 + w / 2) << "\" y=\"" << num(y0 - 10)
       << "\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
    os << "<text x=\"" << num(x0 + w / 2) << "\" y=\"" << num(y0 + h + 36)
       << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
    os << "<text x=\"" << num(x0 - 40) << "\" y=\"" << num(y0 + h / 2)
       << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 " << num(x0 - 40)
       << ' ' << num(y0 + h / 2) << ")\">" << escape(ylabel) << "</text>\n";
    for (double t : xticks)
      os << "<text x=\"" << num(px(t)) << "\" y=\"" << num(y0 + h + 16)
         << "\" text-anchor=\"middle\" font-size=\"10\">" << num(t) << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
      const double v = ymin + (ymax - ymin) * i / 4.0;
      os << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py(v) + 3)
         << "\" text-anchor=\"end\" font-size=\"10\">" << num(v) << "</text>\n";
    }
    os << "</g>\n";
  }
};

inline void open(std::ostream& os, double w, double h) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\""
     << num(h) << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
}

inline void legend(std::ostream& os, double x, double y, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double yy = y + 16.0 * double(i);
    os << "<line x1=\"" << num(x) << "\" y1=\"" << num(yy) << "\" x2=\"" << num(x + 18)
       << "\" y2=\"" << num(yy) << "\" stroke=\"" << palette(i) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(x + 24) << "\" y=\"" << num(yy + 4) << "\" font-size=\"11\">"
       << escape(names[i]) << "</text>\n";
  }
}

}  // namespace svg

// PR curves from pr.csv (columns iou, rank, score, recall, precision), one
// series per iou threshold.
inline std::string render_pr_svg(const CsvTable& pr) {
  std::map<double, std::vector<std::pair<double, double>>> series;
  for (std::size_t r = 0; r < pr.rows.size(); ++r)
    series[pr.number(r, "iou")].emplace_back(pr.number(r, "recall"), pr.number(r, "precision"));
  std::ostringstream os;
  svg::open(os, 480, 420);
  svg::Panel p{70, 40, 300, 300};
  p.frame(os, "Precision / recall", "recall", "precision", {0, 0.25, 0.5, 0.75, 1});
  std::vector<std::string> names;
  std::size_t i = 0;
  for (const auto& [iou, pts] : series) {
    names.push_back("iou " + svg::num(iou));
    os << "<polyline class=\"series\" data-iou=\"" << svg::num(iou) << "\" fill=\"none\" stroke=\""
       << svg::palette(i++) << "\" stroke-width=\"2\" points=\"";
    for (const auto& [rc, pc] : pts) os << svg::num(p.px(rc)) << ',' << svg::num(p.py(pc)) << ' ';
    os << "\"/>\n";
  }
  svg::legend(os, 380, 60, names);
  os << "</svg>\n";
  return os.str();
}

// Confusion heatmap from confusion.csv (columns iou, truth, predicted, count),
// rows normalized; only the first iou in the file is drawn.
inline std::string render_confusion_svg(const CsvTable& conf, const std::string& title) {
  if (conf.rows.empty()) throw FormatError("confusion CSV has no rows");
  const double iou0 = conf.number(0, "iou");
  int views = 0;
  std::map<std::pair<int, int>, double> cells;
  for (std::size_t r = 0; r < conf.rows.size(); ++r) {
    if (conf.number(r, "iou") != iou0) continue;
    const int t = int(conf.number(r, "truth")), p = int(conf.number(r, "predicted"));
    views = std::max({views, t + 1, p + 1});
    cells[{t, p}] += conf.number(r, "count");
  }
  std::vector<double> row_sum(std::size_t(views), 0.0);
  for (const auto& [k, c] : cells) row_sum[std::size_t(k.first)] += c;
  const double size = 320.0, cell = size / std::max(views, 1);
  std::ostringstream os;
  svg::open(os, size + 120, size + 110);
  os << "<text x=\"" << svg::num(60 + size / 2) << "\" y=\"24\" text-anchor=\"middle\" "
     << "font-size=\"14\">" << svg::escape(title) << "</text>\n";
  for (int t = 0; t < views; ++t)
    for (int p = 0; p < views; ++p) {
      const auto it = cells.find({t, p});
      const double c = it == cells.end() ? 0.0 : it->second;
      const double frac = row_sum[std::size_t(t)] > 0 ? c / row_sum[std::size_t(t)] : 0.0;
      const int shade = int(std::lround(255.0 * (1.0 - frac)));
      os << "<rect class=\"cell\" data-truth=\"" << t << "\" data-predicted=\"" << p
         << "\" x=\"" << svg::num(60 + p * cell) << "\" y=\"" << svg::num(40 + t * cell)
         << "\" width=\"" << svg::num(cell) << "\" height=\"" << svg::num(cell) << "\" fill=\"rgb("
         << shade << ',' << shade << ",255)\" stroke=\"#888\"/>\n";
    }
  os << "<text x=\"" << svg::num(60 + size / 2) << "\" y=\"" << svg::num(40 + size + 30)
     << "\" text-anchor=\"middle\" font-size=\"12\">predicted bin</text>\n";
  os << "<text x=\"30\" y=\"" << svg::num(40 + size / 2) << "\" text-anchor=\"middle\" "
     << "font-size=\"12\" transform=\"rotate(-90 30 " << svg::num(40 + size / 2)
     << ")\">true bin</text>\n";
  os << "</svg>\n";
  return os.str();
}

// Mean AP (left) and VP (right) against k from summary.csv (columns method,
// k, iou, measure, mean, std, n); one series per method, first iou only.
inline std::string render_kshot_svg(const CsvTable& summary) {
  if (summary.rows.empty()) throw FormatError("summary CSV has no rows");
  const double iou0 = summary.number(0, "iou");
  std::vector<std::string> methods;
  std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>> data;
  std::set<double> ks;
  for (std::size_t r = 0; r < summary.rows.size(); ++r) {
    if (summary.number(r, "iou") != iou0) continue;
    const std::string& m = summary.text(r, "method");
    const std::string& measure = summary.text(r, "measure");
    if (measure != "ap" && measure != "vp") continue;
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    const double k = summary.number(r, "k");
    ks.insert(k);
    data[measure][m].emplace_back(k, summary.number(r, "mean"));
  }
  const double kmin = ks.empty() ? 0 : *ks.begin(), kmax = ks.empty() ? 1 : *ks.rbegin();
  std::ostringstream os;
  svg::open(os, 820, 420);
  const char* measures[] = {"ap", "vp"};
  const char* titles[] = {"Localization (AP)", "Viewpoint (VP)"};
  for (int pi = 0; pi < 2; ++pi) {
    svg::Panel p{70.0 + 360.0 * pi, 40, 280, 300};
    p.xmin = kmin;
    p.xmax = kmax > kmin ? kmax : kmin + 1;
    p.frame(os, titles[pi], "training examples per view (k)", measures[pi],
            std::vector<double>(ks.begin(), ks.end()));
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      auto pts = data[measures[pi]][methods[mi]];
      std::sort(pts.begin(), pts.end());
      os << "<polyline class=\"series\" data-measure=\"" << measures[pi] << "\" data-method=\""
         << svg::escape(methods[mi]) << "\" fill=\"none\" stroke=\"" << svg::palette(mi)
         << "\" stroke-width=\"2\" points=\"";
      for (const auto& [k, v] : pts) os << svg::num(p.px(k)) << ',' << svg::num(p.py(v)) << ' ';
      os << "\"/>\n";
    }
  }
  svg::legend(os, 720, 60, methods);
  os << "</svg>\n";
  return os.str();
}

}  // namespace mvprior::cli
