#pragma once

// Configuration, CSV and file plumbing for the command-line front end.
// Configs are JSON; every schema error is reported as "file:line: message"
// using a location index built from the raw text.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "orbitcurv/errors.hpp"

namespace orbitcurv::io {

using Json = nlohmann::json;

/// Shortest round-trip decimal form of a double; "nan"/"inf" for non-finite values.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Line of the first character of every value in a JSON text, keyed by a
/// dotted path such as "certify.sampler.thetas[1]". The text must be valid JSON.
class LocationIndex {
 public:
  LocationIndex() = default;
  explicit LocationIndex(std::string_view text) : text_(text) {
    skip_ws();
    if (pos_ < text_.size()) value("");
    text_ = {};
  }

  int line_of(const std::string& path) const {
    auto it = lines_.find(path);
    return it == lines_.end() ? 1 : it->second;
  }

  /// Line of the key itself inside its parent object (same as the value line
  /// for the usual one-key-per-line layout).
  int key_line_of(const std::string& path) const {
    auto it = key_lines_.find(path);
    return it == key_lines_.end() ? line_of(path) : it->second;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '\n') ++line_;
      if (c != ' ' && c != '\t' && c != '\r' && c != '\n') break;
      ++pos_;
    }
  }
  std::string string_token() {
    std::string out;
    ++pos_;  // opening quote
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') {
        ++pos_;
        if (pos_ < text_.size()) out.push_back(text_[pos_]);
        ++pos_;
        continue;
      }
      out.push_back(text_[pos_++]);
    }
    ++pos_;  // closing quote
    return out;
  }
  void value(const std::string& path) {
    skip_ws();
    lines_[path] = line_;
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const int kl = line_;
        const std::string key = string_token();
        const std::string child = path.empty() ? key : path + "." + key;
        key_lines_[child] = kl;
        skip_ws();
        ++pos_;  // ':'
        value(child);
        skip_ws();
        if (text_[pos_] == ',') {
          ++pos_;
          skip_ws();
        }
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      std::size_t idx = 0;
      while (pos_ < text_.size() && text_[pos_] != ']') {
        value(path + "[" + std::to_string(idx++) + "]");
        skip_ws();
        if (text_[pos_] == ',') {
          ++pos_;
          skip_ws();
        }
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size()) {
        const char d = text_[pos_];
        if (d == ',' || d == ']' || d == '}' || d == ' ' || d == '\n' || d == '\t' || d == '\r') break;
        ++pos_;
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
  std::map<std::string, int> key_lines_;
};

/// Parsed config document with source locations.
struct ConfigDocument {
  std::string source;  // file name used in messages
  std::string text;
  Json root;
  LocationIndex where;

  [[noreturn]] void fail(const std::string& path, const std::string& message) const {
    std::ostringstream os;
    os << source << ":" << where.line_of(path) << ": " << (path.empty() ? "" : path + ": ") << message;
    throw ConfigError(os.str());
  }
};

inline ConfigDocument parse_config_text(std::string text, std::string source) {
  ConfigDocument doc;
  doc.source = std::move(source);
  doc.text = std::move(text);
  try {
    doc.root = Json::parse(doc.text);
  } catch (const Json::parse_error& e) {
    // Byte offset -> line number.
    const std::size_t off = std::min<std::size_t>(e.byte, doc.text.size());
    const int line = 1 + static_cast<int>(std::count(doc.text.begin(),
                                                     doc.text.begin() + static_cast<std::ptrdiff_t>(off > 0 ? off - 1 : 0),
                                                     '\n'));
    std::string what = e.what();
    const auto p = what.find("syntax error");
    if (p != std::string::npos) what = what.substr(p);
    std::ostringstream os;
    os << doc.source << ":" << line << ": malformed JSON: " << what;
    throw ConfigError(os.str());
  }
  if (!doc.root.is_object()) {
    throw ConfigError(doc.source + ":1: config must be a JSON object");
  }
  doc.where = LocationIndex(doc.text);
  return doc;
}

inline ConfigDocument load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError(file.string() + ":1: cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), file.string());
}

/// Typed, location-aware view of one JSON object in a config document.
/// Every key read is remembered; `finish()` rejects the rest as unknown.
class ConfigNode {
 public:
  ConfigNode(const ConfigDocument& doc, const Json& value, std::string path)
      : doc_(&doc), value_(&value), path_(std::move(path)) {
    if (!value_->is_object()) doc_->fail(path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return value_->contains(key); }

  std::string child_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    doc_->fail(key.empty() ? path_ : child_path(key), message);
  }

  std::optional<ConfigNode> child(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return ConfigNode(*doc_, value_->at(key), child_path(key));
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail("", "missing required key '" + key + "'");
    }
    const Json& v = value_->at(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  std::optional<double> optional_number(const std::string& key) {
    if (!has(key)) {
      seen_.insert(key);
      return std::nullopt;
    }
    return number(key);
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail("", "missing required key '" + key + "'");
    }
    const Json& v = value_->at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t min_value) {
    const std::int64_t v = integer(key, static_cast<std::int64_t>(fallback));
    if (v < static_cast<std::int64_t>(min_value)) {
      fail(key, "must be >= " + std::to_string(min_value));
    }
    return static_cast<std::size_t>(v);
  }

  bool boolean(const std::string& key, bool fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const Json& v = value_->at(key);
    if (!v.is_boolean()) fail(key, "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail("", "missing required key '" + key + "'");
    }
    const Json& v = value_->at(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed,
                     std::optional<std::string> fallback = std::nullopt) {
    const std::string v = text(key, std::move(fallback));
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "unknown value '" + v + "' (expected one of: " + list + ")");
    }
    return v;
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
    seen_.insert(key);
    if (!has(key)) {
      if (fallback) return *fallback;
      fail("", "missing required key '" + key + "'");
    }
    const Json& v = value_->at(key);
    if (!v.is_array()) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) {
        doc_->fail(child_path(key) + "[" + std::to_string(i) + "]", "expected a number");
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  /// Fails at the element `key[i]`.
  [[noreturn]] void fail_element(const std::string& key, std::size_t i, const std::string& message) const {
    doc_->fail(child_path(key) + "[" + std::to_string(i) + "]", message);
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return value_->at(key);
  }

  void finish() const {
    for (auto it = value_->begin(); it != value_->end(); ++it) {
      if (!seen_.count(it.key())) {
        std::ostringstream os;
        os << doc_->source << ":" << doc_->where.key_line_of(child_path(it.key())) << ": "
           << child_path(it.key()) << ": unknown key";
        throw ConfigError(os.str());
      }
    }
  }

 private:
  const ConfigDocument* doc_;
  const Json* value_;
  std::string path_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------

/// Minimal CSV table builder with deterministic number formatting.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    row_strings(header);
  }
  template <class... T>
  void row(const T&... cells) {
    if (sizeof...(cells) != columns_) throw ShapeError("csv row has the wrong number of cells");
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << "\n";
  }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  std::string str() const { return out_.str(); }

 private:
  static std::string cell(double x) { return format_double(x); }
  static std::string cell(float x) { return format_double(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(bool b) { return b ? "1" : "0"; }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I v) { return std::to_string(v); }

  std::size_t columns_;
  std::ostringstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<int> lines;  // source line of each row
};

/// Reads a numeric CSV. A first row that does not parse as numbers is a header.
/// Errors are reported as "file:line: message".
inline CsvTable read_numeric_csv(const std::filesystem::path& file, std::size_t columns) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file.string() + ":1: cannot open CSV file");
  CsvTable t;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) {
      const auto b = c.find_first_not_of(" \t");
      const auto e = c.find_last_not_of(" \t");
      cells.push_back(b == std::string::npos ? "" : c.substr(b, e - b + 1));
    }
    if (cells.size() != columns) {
      throw ConfigError(file.string() + ":" + std::to_string(ln) + ": expected " +
                        std::to_string(columns) + " columns, found " + std::to_string(cells.size()));
    }
    std::vector<double> vals;
    bool numeric = true;
    for (const auto& s : cells) {
      double v = 0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        numeric = false;
        break;
      }
      vals.push_back(v);
    }
    if (!numeric) {
      if (t.rows.empty() && t.header.empty()) {
        t.header = cells;
        continue;
      }
      throw ConfigError(file.string() + ":" + std::to_string(ln) + ": non-numeric cell");
    }
    t.rows.push_back(std::move(vals));
    t.lines.push_back(ln);
  }
  return t;
}

// ---------------------------------------------------------------------------

/// Writes `content` to `file` through a temporary sibling and a rename.
inline void atomic_write(const std::filesystem::path& file, const std::string& content) {
  namespace fs = std::filesystem;
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot rename " + tmp.string() + " to " + file.string());
  }
}

/// Output files staged in memory and committed together, so a failed run
/// leaves no partial results behind.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) {
    for (auto& f : files_) {
      if (f.first == name) {
        f.second = std::move(content);
        return;
      }
    }
    files_.emplace_back(name, std::move(content));
  }
  void add_json(const std::string& name, const Json& j) { add(name, j.dump(2) + "\n"); }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& f : files_) n.push_back(f.first);
    return n;
  }
  const std::filesystem::path& dir() const { return dir_; }

  void commit() const {
    for (const auto& [name, content] : files_) atomic_write(dir_ / name, content);
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

inline std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace orbitcurv::io
