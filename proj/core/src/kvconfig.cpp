#include "impose/kvconfig.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "impose/errors.hpp"

namespace impose {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("config: cannot open '" + path + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

KvConfig KvConfig::from_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config: line " + std::to_string(lineno) + " has no '=': '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty()) {
      throw FormatError("config: line " + std::to_string(lineno) + " has an empty key");
    }
    cfg.set(key, trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KvConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw FormatError("config: missing required key '" + key + "'");
  }
  return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  char* end = nullptr;
  errno = 0;
  const double parsed = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty() || errno == ERANGE) {
    throw FormatError("config: key '" + key + "': '" + v + "' is not a number");
  }
  return parsed;
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  char* end = nullptr;
  errno = 0;
  const long long parsed = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty() || errno == ERANGE) {
    throw FormatError("config: key '" + key + "': '" + v + "' is not an integer");
  }
  return parsed;
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  char* end = nullptr;
  errno = 0;
  const unsigned long long parsed = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty() || v[0] == '-' || errno == ERANGE) {
    throw FormatError("config: key '" + key + "': '" + v + "' is not an unsigned integer");
  }
  return parsed;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw FormatError("config: key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::pair<std::string, std::string>> KvConfig::items() const {
  return {values_.begin(), values_.end()};
}

std::string KvConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) {
    out << k << " = " << v << "\n";
  }
  return out.str();
}

}  // namespace impose
