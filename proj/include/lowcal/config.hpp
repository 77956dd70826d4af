#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lowcal {

/// Error for malformed files of any of the toolkit's formats. The message
/// names the offending file and, for text formats, the line.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` configuration file. '#' starts a comment, blank lines
/// are ignored, later keys override earlier ones.
class KvFile {
 public:
  KvFile() = default;

  static KvFile parse_file(const std::string& path);
  static KvFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::string origin_ = "<empty>";
  std::map<std::string, std::string> values_;

  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

}  // namespace lowcal
