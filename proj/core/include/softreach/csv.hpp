#ifndef SOFTREACH_CSV_HPP_
#define SOFTREACH_CSV_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace softreach::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  // 1-based source line of each row, for error messages
  std::vector<std::size_t> lines;
};

// Numeric CSV with a header line. Throws FormatError on ragged rows or
// unparsable cells. When expected_header is non-empty it must match exactly.
// source names the input in error messages.
Table read(std::istream& in, const std::vector<std::string>& expected_header = {},
           const std::string& source = "csv");
Table read_file(const std::filesystem::path& path,
                const std::vector<std::string>& expected_header = {});

// Shortest decimal form that round-trips a double.
std::string format_number(double value);

void write_row(std::ostream& out, const std::vector<std::string>& cells);

}  // namespace softreach::csv

#endif  // SOFTREACH_CSV_HPP_
