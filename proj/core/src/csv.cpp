#include "sevtrain/csv.hpp"

#include <sstream>
#include <stdexcept>

#include "sevtrain/util.hpp"

namespace sevtrain {

namespace {

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}

void append_cell(std::string& out, const std::string& cell) {
  if (!needs_quoting(cell)) {
    out += cell;
    return;
  }
  out += '"';
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

void append_row(std::string& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    append_cell(out, row[i]);
  }
  out += '\n';
}

std::vector<std::string> parse_line(const std::string& text, std::size_t& pos) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (; pos < text.size(); ++pos) {
    char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          cur += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\n') {
      ++pos;
      break;
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

}  // namespace

std::string CsvTable::to_string() const {
  std::string out;
  append_row(out, header);
  for (const auto& r : rows) append_row(out, r);
  return out;
}

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  std::size_t pos = 0;
  if (pos < text.size()) t.header = parse_line(text, pos);
  while (pos < text.size()) {
    auto row = parse_line(text, pos);
    if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
    t.rows.push_back(std::move(row));
  }
  return t;
}

void CsvTable::save(const std::filesystem::path& p) const {
  write_text_file(p, to_string());
}

CsvTable CsvTable::load(const std::filesystem::path& p) {
  return parse(read_text_file(p));
}

std::size_t CsvTable::col(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw std::runtime_error("csv: no column named '" + name + "'");
}

}  // namespace sevtrain
