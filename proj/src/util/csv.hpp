#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace licprune {

// Minimal CSV writer/reader. Fields are written verbatim (callers must not
// embed commas/newlines); numbers are formatted by the caller.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  ~CsvWriter();
  void row(const std::vector<std::string>& fields);
  void flush();

 private:
  struct Impl;
  Impl* impl_;
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

std::string fmt_double(double v, int precision = 9);

}  // namespace licprune
