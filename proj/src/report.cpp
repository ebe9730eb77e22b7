// Copyright 2026 The bfkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bfkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "bfkit/error.hpp"

namespace bfkit::report {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 20;
constexpr double kTop = 40;
constexpr double kBottom = 50;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct Frame {
  double x_lo, x_hi, y_lo, y_hi;
  double px(double x) const {
    return kLeft + (x - x_lo) / (x_hi - x_lo) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    return kHeight - kBottom - (y - y_lo) / (y_hi - y_lo) * (kHeight - kTop - kBottom);
  }
};

void open_svg(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << fixed(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(title) << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, const std::string& x_label,
          const std::string& y_label) {
  const double x0 = kLeft;
  const double y0 = kHeight - kBottom;
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << kWidth - kRight << "\" y2=\""
     << y0 << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y_lo + (f.y_hi - f.y_lo) * i / 4.0;
    const double xv = f.x_lo + (f.x_hi - f.x_lo) * i / 4.0;
    os << "<text x=\"" << x0 - 5 << "\" y=\"" << fixed(f.py(yv) + 4)
       << "\" text-anchor=\"end\">" << format_number(yv) << "</text>\n";
    os << "<text x=\"" << fixed(f.px(xv)) << "\" y=\"" << y0 + 15
       << "\" text-anchor=\"middle\">" << format_number(xv) << "</text>\n";
  }
  os << "<text x=\"" << fixed((kLeft + kWidth - kRight) / 2) << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\">" << escape_xml(x_label) << "</text>\n";
  os << "<text x=\"15\" y=\"" << fixed((kTop + kHeight - kBottom) / 2)
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
     << fixed((kTop + kHeight - kBottom) / 2) << ")\">" << escape_xml(y_label) << "</text>\n";
}

// Pads a degenerate range so the frame has nonzero extent.
void widen(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", value == 0.0 ? 0.0 : value);
  return buf;
}

void write_csv_row(std::ostream& out, std::span<const std::string> fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out << ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n\r") == std::string::npos) {
      out << f;
      continue;
    }
    out << '"';
    for (char c : f) {
      if (c == '"') out << '"';
      out << c;
    }
    out << '"';
  }
  out << '\n';
}

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool at_line_start = true;
  bool comment = false;
  bool any = false;
  char c;
  auto end_record = [&] {
    if (any || !field.empty() || !record.empty()) {
      record.push_back(field);
      records.push_back(record);
    }
    record.clear();
    field.clear();
    any = false;
    at_line_start = true;
  };
  while (in.get(c)) {
    if (comment) {
      if (c == '\n') {
        comment = false;
        at_line_start = true;
      }
      continue;
    }
    if (at_line_start && c == '#' && records.empty()) {
      comment = true;
      continue;
    }
    at_line_start = false;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get(c);
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(field);
      field.clear();
      any = true;
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", records.size() + 1);
  end_record();
  if (records.empty()) throw ParseError("empty CSV input", 1);
  table.header = records.front();
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() != table.header.size()) {
      throw ParseError("CSV row has " + std::to_string(records[i].size()) + " fields, header has " +
                           std::to_string(table.header.size()),
                       i + 1);
    }
    table.rows.push_back(std::move(records[i]));
  }
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_csv(in);
}

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, std::span<const Series> series) {
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  widen(x_lo, x_hi);
  widen(y_lo, y_hi);
  const Frame f{x_lo, x_hi, y_lo, y_hi};

  std::ostringstream os;
  open_svg(os, title);
  axes(os, f, x_label, y_label);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (s.dashed) os << " stroke-dasharray=\"4 3\"";
    os << " points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!first) os << ' ';
      os << fixed(f.px(s.x[i])) << ',' << fixed(f.py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 5 << "\" y=\"" << kTop + 14 * (k + 1)
       << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape_xml(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart(const std::string& title, const std::string& y_label,
                      std::span<const std::pair<std::string, double>> bars) {
  double y_hi = 0.0;
  for (const auto& [label, v] : bars) {
    if (std::isfinite(v)) y_hi = std::max(y_hi, v);
  }
  if (y_hi <= 0.0) y_hi = 1.0;
  const Frame f{0.0, static_cast<double>(std::max<std::size_t>(bars.size(), 1)), 0.0, y_hi};

  std::ostringstream os;
  open_svg(os, title);
  const double y0 = kHeight - kBottom;
  os << "<line x1=\"" << kLeft << "\" y1=\"" << y0 << "\" x2=\"" << kWidth - kRight
     << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y_hi * i / 4.0;
    os << "<text x=\"" << kLeft - 5 << "\" y=\"" << fixed(f.py(yv) + 4)
       << "\" text-anchor=\"end\">" << format_number(yv) << "</text>\n";
  }
  os << "<text x=\"15\" y=\"" << fixed((kTop + y0) / 2)
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " << fixed((kTop + y0) / 2) << ")\">"
     << escape_xml(y_label) << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::isfinite(bars[i].second) ? std::max(0.0, bars[i].second) : 0.0;
    const double x = f.px(static_cast<double>(i) + 0.15);
    const double w = f.px(static_cast<double>(i) + 0.85) - x;
    os << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(f.py(v)) << "\" width=\"" << fixed(w)
       << "\" height=\"" << fixed(y0 - f.py(v)) << "\" fill=\""
       << kPalette[i % std::size(kPalette)] << "\"/>\n";
    os << "<text x=\"" << fixed(x + w / 2) << "\" y=\"" << y0 + 15
       << "\" text-anchor=\"middle\">" << escape_xml(bars[i].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string histogram(const std::string& title, const std::string& x_label,
                      std::span<const double> values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw ParameterError("histogram: bad bin specification");
  std::vector<double> counts(bins, 0.0);
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    counts[std::clamp(b, 0, bins - 1)] += 1.0;
  }
  std::vector<std::pair<std::string, double>> bars;
  for (int b = 0; b < bins; ++b) {
    bars.emplace_back(format_number(lo + (hi - lo) * b / bins), counts[b]);
  }
  return bar_chart(title + " (" + x_label + ")", "count", bars);
}

std::string heatmap(const std::string& title, std::span<const std::string> row_labels,
                    std::span<const std::string> col_labels,
                    const std::vector<std::vector<double>>& values) {
  std::ostringstream os;
  open_svg(os, title);
  const double left = 140;
  const double top = kTop + 20;
  const double cw = (kWidth - left - kRight) / std::max<std::size_t>(col_labels.size(), 1);
  const double ch = (kHeight - top - 20) / std::max<std::size_t>(row_labels.size(), 1);
  for (std::size_t c = 0; c < col_labels.size(); ++c) {
    os << "<text x=\"" << fixed(left + cw * (c + 0.5)) << "\" y=\"" << fixed(top - 5)
       << "\" text-anchor=\"middle\">" << escape_xml(col_labels[c]) << "</text>\n";
  }
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    os << "<text x=\"" << fixed(left - 5) << "\" y=\"" << fixed(top + ch * (r + 0.5) + 4)
       << "\" text-anchor=\"end\">" << escape_xml(row_labels[r]) << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double v = r < values.size() && c < values[r].size() ? values[r][c] : NAN;
      if (!std::isfinite(v)) continue;
      const double t = std::clamp(v, -1.0, 1.0);
      // Blue for negative, red for positive, white at zero.
      const int fade = static_cast<int>(std::lround(255 * (1.0 - std::abs(t))));
      char color[16];
      if (t >= 0) {
        std::snprintf(color, sizeof(color), "#ff%02x%02x", fade, fade);
      } else {
        std::snprintf(color, sizeof(color), "#%02x%02xff", fade, fade);
      }
      os << "<rect x=\"" << fixed(left + cw * c) << "\" y=\"" << fixed(top + ch * r)
         << "\" width=\"" << fixed(cw) << "\" height=\"" << fixed(ch) << "\" fill=\"" << color
         << "\" stroke=\"white\"/>\n";
      os << "<text x=\"" << fixed(left + cw * (c + 0.5)) << "\" y=\""
         << fixed(top + ch * (r + 0.5) + 4) << "\" text-anchor=\"middle\">" << fixed(v)
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << contents;
  if (!out) throw Error("write failed: " + path);
}

}  // namespace bfkit::report
