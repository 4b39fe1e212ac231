#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace sfv {

// Ordered key=value table. Text form: one `key=value` per line, `#` starts a
// comment, surrounding whitespace is trimmed.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  std::string dump() const;
  void merge(const KeyValues& overrides);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);

  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Shortest decimal form that round-trips the double exactly.
std::string format_double(double v);

}  // namespace sfv
