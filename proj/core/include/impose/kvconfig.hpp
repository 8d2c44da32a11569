#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace impose {

// Flat key=value configuration: one `key = value` pair per line, `#` starts a
// comment, later assignments win. Values keep their raw text; typed getters
// parse on demand and fail loudly on malformed input.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig from_file(const std::string& path);
  static KvConfig from_text(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Sorted key/value pairs; `to_text` is the canonical dump embedded into
  // reports for provenance.
  std::vector<std::pair<std::string, std::string>> items() const;
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace impose
