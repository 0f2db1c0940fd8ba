#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dpfb::flatcfg {

// One parsed value. Arrays hold scalars only; nesting is rejected at parse.
struct Value {
  enum class Kind { kString, kInt, kFloat, kBool, kArray };
  Kind kind = Kind::kString;
  std::string str;              // kString
  std::uint64_t magnitude = 0;  // kInt, absolute value
  bool negative = false;        // kInt
  double num = 0.0;             // kFloat
  bool flag = false;            // kBool
  std::vector<Value> items;     // kArray
  int line = 0;
};

// Flat "key = value" config file. The grammar is a TOML subset:
//
//   * bare dotted keys  [A-Za-z0-9_.-]+  (dots carry no table semantics)
//   * values: "quoted strings" (escapes \" \\ \n \t \r), integers, floats
//     (inf, +inf, -inf, nan accepted), true/false, and single-line arrays
//     of those scalars
//   * '#' starts a comment outside strings; blank lines are ignored
//
// There are no [table] headers, no multi-line values, no digit underscores.
// Duplicate keys are an error. Syntax and type errors throw ParameterError
// with "name:line N:" prefixes; an unreadable file throws IoError.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& name);

  bool has(const std::string& key) const;

  // Scalar getters. The no-fallback forms throw ParameterError when the key
  // is missing; all forms throw on a type mismatch. get_double accepts
  // integer values, get_int does not accept floats.
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Array getters return an empty vector for `key = []`; a missing key is an
  // error for the no-fallback forms. get_double_list accepts integer elements.
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key) const;
  std::vector<std::uint64_t> get_u64_list(
      const std::string& key, const std::vector<std::uint64_t>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  // Typo guard: throws ParameterError listing every key not in `known`.
  void check_unknown(const std::vector<std::string>& known) const;

  std::vector<std::string> keys() const;  // insertion order
  const std::string& name() const { return name_; }

 private:
  const Value& require(const std::string& key) const;
  const Value* find(const std::string& key) const;
  [[noreturn]] void type_error(const std::string& key, const Value& v,
                               const std::string& wanted) const;

  std::string name_;
  std::vector<std::pair<std::string, Value>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dpfb::flatcfg
