#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Small CSV writer/reader with RFC-style quoting (fields containing commas,
// quotes or newlines are quoted; embedded quotes doubled).

namespace lksvd {

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path) {
    if (!f_) throw std::runtime_error("csv: cannot write " + path);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) f_ << ",";
      f_ << csv_escape(fields[i]);
    }
    f_ << "\n";
  }

 private:
  std::ofstream f_;
};

inline std::vector<std::vector<std::string>> csv_parse(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  const auto end_field = [&] {
    row.push_back(field);
    field.clear();
  };
  const auto end_row = [&] {
    end_field();
    rows.push_back(row);
    row.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        continue;
      }
      field += c;
      ++i;
    } else if (c == '"') {
      quoted = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\n') {
      end_row();
      ++i;
    } else if (c == '\r') {
      ++i;
    } else {
      field += c;
      ++i;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

inline std::vector<std::vector<std::string>> csv_load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("csv: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return csv_parse(text);
}

}  // namespace lksvd
