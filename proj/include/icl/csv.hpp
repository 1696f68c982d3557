#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace icl {

// Traceability stamp written as the first line of every artifact:
//   # iclab version=1 seed=<seed> config_hash=<hex>
struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline constexpr int kArtifactVersion = 1;

// 17 significant digits, '.' separator; round-trips any double.
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);

class CsvTable {
 public:
  CsvTable(std::vector<std::string> header, Provenance provenance);

  void add_row(std::vector<std::string> cells);
  std::size_t rows() const { return rows_.size(); }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  Provenance provenance_;
  std::vector<std::vector<std::string>> rows_;
};

// Writes to a sibling temporary and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace icl
