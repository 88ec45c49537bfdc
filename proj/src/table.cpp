#include "vitcap/table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vitcap/errors.hpp"

namespace vitcap {

std::string format_float(double v) {
  if (!std::isfinite(v)) throw NonFiniteError("format_float: value is not finite");
  char buf[64];
  const double mag = std::fabs(v);
  const bool fixed = v == 0.0 || (mag >= 1e-3 && mag < 1e6);
  const auto res = fixed ? std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed)
                         : std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general);
  std::string s(buf, res.ptr);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos)
    s += ".0";
  return s;
}

void write_data_file(const std::string& path, std::span<const DataRow> rows) {
  for (size_t i = 1; i < rows.size(); ++i)
    if (rows[i].determination < rows[i - 1].determination)
      throw Error("data file rows must be determination-ascending");
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
  if (!out) throw IoError("cannot write " + path);
  out << data_header() << '\n';
  for (const auto& r : rows)
    out << format_float(r.determination) << ' ' << format_float(r.loss) << ' '
        << format_float(r.val_loss) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<DataRow> parse_data_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty data file");
  if (line != data_header())
    throw IoError(path + ": bad header '" + line + "', expected '" + data_header() + "'");
  std::vector<DataRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    DataRow r;
    if (!(ls >> r.determination >> r.loss >> r.val_loss))
      throw IoError(path + ": malformed row at line " + std::to_string(lineno));
    std::string extra;
    if (ls >> extra) throw IoError(path + ": trailing fields at line " + std::to_string(lineno));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace vitcap
