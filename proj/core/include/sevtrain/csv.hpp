#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sevtrain {

// Minimal CSV table: header row plus string cells. Values containing commas,
// quotes or newlines are quoted on write and unquoted on read.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_string() const;
  static CsvTable parse(const std::string& text);

  void save(const std::filesystem::path& p) const;
  static CsvTable load(const std::filesystem::path& p);

  // Column index by header name; throws if absent.
  std::size_t col(const std::string& name) const;
};

}  // namespace sevtrain
