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

#pragma once

// CSV and SVG emitters for the CLI. CSV is the canonical output; the SVG
// charts are for eyeballing and use only basic primitives.

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bfkit::report {

// Shortest "%.12g" rendering; "nan" and "inf" for non-finite values.
std::string format_number(double value);

void write_csv_row(std::ostream& out, std::span<const std::string> fields);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of `column` in the header, or -1.
  int column(const std::string& name) const;
};

// Reads RFC 4180-style CSV. Lines starting with '#' before the header are
// treated as comments.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, std::span<const Series> series);

std::string bar_chart(const std::string& title, const std::string& y_label,
                      std::span<const std::pair<std::string, double>> bars);

std::string histogram(const std::string& title, const std::string& x_label,
                      std::span<const double> values, int bins, double lo, double hi);

// Cells colored on a diverging scale over [-1, 1]; NaN cells are left blank.
std::string heatmap(const std::string& title, std::span<const std::string> row_labels,
                    std::span<const std::string> col_labels,
                    const std::vector<std::vector<double>>& values);

void write_text_file(const std::string& path, const std::string& contents);

}  // namespace bfkit::report
