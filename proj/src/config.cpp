#include "lowcal/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace lowcal {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

KvFile KvFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

KvFile KvFile::parse_string(const std::string& text, const std::string& origin) {
  KvFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    kv.values_[key] = value;
  }
  return kv;
}

bool KvFile::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KvFile::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KvFile::require_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(key, "missing required key");
  return it->second;
}

double KvFile::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (trim(it->second.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  fail(key, "expected a number, got `" + it->second + "`");
}

long long KvFile::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (trim(it->second.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  fail(key, "expected an integer, got `" + it->second + "`");
}

bool KvFile::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(key, "expected a boolean, got `" + v + "`");
}

std::vector<double> KvFile::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::istringstream in(it->second);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) fail(key, "expected whitespace-separated numbers, got `" + it->second + "`");
  return out;
}

std::vector<int> KvFile::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::istringstream in(it->second);
  std::vector<int> out;
  long long v;
  while (in >> v) out.push_back(static_cast<int>(v));
  if (!in.eof()) fail(key, "expected whitespace-separated integers, got `" + it->second + "`");
  return out;
}

void KvFile::set(const std::string& key, const std::string& value) { values_[key] = value; }

void KvFile::fail(const std::string& key, const std::string& what) const {
  throw FormatError(origin_ + ": key `" + key + "`: " + what);
}

}  // namespace lowcal
