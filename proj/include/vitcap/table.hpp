#pragma once

#include <span>
#include <string>
#include <vector>

// The whitespace-separated table format the plots consume: a fixed header
// line `determination loss val_loss`, then one space-separated row per
// record, determination ascending.

namespace vitcap {

// Shortest decimal string that parses back to exactly the same double.
// Plain fixed notation (with a dot) for magnitudes in [1e-3, 1e6); scientific
// notation only outside that range.
std::string format_float(double v);

struct DataRow {
  double determination = 0.0;
  double loss = 0.0;
  double val_loss = 0.0;
};

inline const char* data_header() { return "determination loss val_loss"; }

// Writes header + rows; rows must be determination-ascending.
void write_data_file(const std::string& path, std::span<const DataRow> rows);

// Strict inverse of write_data_file (header checked, every field parsed).
std::vector<DataRow> parse_data_file(const std::string& path);

}  // namespace vitcap
