#include "dpfb/flatcfg.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "dpfb/error.hpp"

namespace dpfb::flatcfg {

namespace {

[[noreturn]] void fail(const std::string& name, int line, const std::string& msg) {
  throw ParameterError(name + ":line " + std::to_string(line) + ": " + msg);
}

bool key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
}

void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

// Removes a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& name, int line, const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;  // escape validity is checked by the string parser
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return s.substr(0, i);
    }
  }
  if (in_string) fail(name, line, "unterminated string");
  return s;
}

std::string parse_quoted(const std::string& name, int line, const std::string& s,
                         std::size_t& i) {
  ++i;  // opening quote
  std::string out;
  while (i < s.size()) {
    char c = s[i];
    if (c == '"') {
      ++i;
      return out;
    }
    if (c == '\\') {
      ++i;
      if (i >= s.size()) fail(name, line, "unterminated string");
      switch (s[i]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default:
          fail(name, line, std::string("invalid escape '\\") + s[i] + "' in string");
      }
      ++i;
    } else {
      out += c;
      ++i;
    }
  }
  fail(name, line, "unterminated string");
}

bool token_end(char c) {
  return c == ' ' || c == '\t' || c == ',' || c == ']';
}

Value parse_scalar(const std::string& name, int line, const std::string& s,
                   std::size_t& i) {
  Value v;
  v.line = line;
  if (s[i] == '"') {
    v.kind = Value::Kind::kString;
    v.str = parse_quoted(name, line, s, i);
    return v;
  }
  std::size_t start = i;
  while (i < s.size() && !token_end(s[i])) ++i;
  std::string tok = s.substr(start, i - start);
  if (tok.empty()) fail(name, line, "expected a value");
  if (tok == "true" || tok == "false") {
    v.kind = Value::Kind::kBool;
    v.flag = (tok == "true");
    return v;
  }
  std::string body = tok;
  bool neg = false;
  if (body[0] == '+' || body[0] == '-') {
    neg = (body[0] == '-');
    body = body.substr(1);
  }
  if (body == "inf") {
    v.kind = Value::Kind::kFloat;
    v.num = neg ? -std::numeric_limits<double>::infinity()
                : std::numeric_limits<double>::infinity();
    return v;
  }
  if (body == "nan") {
    v.kind = Value::Kind::kFloat;
    v.num = std::numeric_limits<double>::quiet_NaN();
    return v;
  }
  bool is_float = body.find_first_of(".eE") != std::string::npos;
  if (is_float) {
    double d = 0.0;
    auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), d);
    if (ec != std::errc() || p != body.data() + body.size())
      fail(name, line, "malformed value '" + tok + "'");
    v.kind = Value::Kind::kFloat;
    v.num = neg ? -d : d;
    return v;
  }
  std::uint64_t mag = 0;
  auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), mag);
  if (ec == std::errc::result_out_of_range)
    fail(name, line, "integer out of range: '" + tok + "'");
  if (ec != std::errc() || p != body.data() + body.size() || body.empty())
    fail(name, line, "malformed value '" + tok + "'");
  v.kind = Value::Kind::kInt;
  v.magnitude = mag;
  v.negative = neg && mag != 0;
  return v;
}

Value parse_value(const std::string& name, int line, const std::string& s,
                  std::size_t& i) {
  if (s[i] != '[') return parse_scalar(name, line, s, i);
  Value arr;
  arr.kind = Value::Kind::kArray;
  arr.line = line;
  ++i;
  skip_ws(s, i);
  while (true) {
    if (i >= s.size()) fail(name, line, "unterminated array");
    if (s[i] == ']') {
      ++i;
      return arr;
    }
    if (s[i] == '[') fail(name, line, "nested arrays are not supported");
    if (s[i] == ',') fail(name, line, "expected a value before ','");
    arr.items.push_back(parse_scalar(name, line, s, i));
    skip_ws(s, i);
    if (i < s.size() && s[i] == ',') {
      ++i;
      skip_ws(s, i);
    } else if (i < s.size() && s[i] != ']') {
      fail(name, line, "expected ',' or ']' in array");
    }
  }
}

std::string kind_name(Value::Kind k) {
  switch (k) {
    case Value::Kind::kString: return "a string";
    case Value::Kind::kInt: return "an integer";
    case Value::Kind::kFloat: return "a float";
    case Value::Kind::kBool: return "a boolean";
    case Value::Kind::kArray: return "an array";
  }
  return "unknown";
}

std::int64_t to_int(const std::string& name, int line, const std::string& key,
                    const Value& v) {
  constexpr std::uint64_t kMax = static_cast<std::uint64_t>(
      std::numeric_limits<std::int64_t>::max());
  if (v.negative) {
    if (v.magnitude > kMax + 1)
      fail(name, line, "key '" + key + "': integer out of range");
    return static_cast<std::int64_t>(-static_cast<std::int64_t>(v.magnitude - 1) - 1);
  }
  if (v.magnitude > kMax) fail(name, line, "key '" + key + "': integer out of range");
  return static_cast<std::int64_t>(v.magnitude);
}

double int_as_double(const Value& v) {
  double d = static_cast<double>(v.magnitude);
  return v.negative ? -d : d;
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& name) {
  Config cfg;
  cfg.name_ = name;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string line = strip_comment(name, line_no, raw);
    std::size_t i = 0;
    skip_ws(line, i);
    if (i >= line.size()) continue;
    if (line[i] == '[')
      fail(name, line_no, "table headers are not supported; use dotted keys");
    std::size_t key_start = i;
    while (i < line.size() && key_char(line[i])) ++i;
    std::string key = line.substr(key_start, i - key_start);
    if (key.empty())
      fail(name, line_no, "expected a key, got '" + line.substr(i, 1) + "'");
    skip_ws(line, i);
    if (i >= line.size() || line[i] != '=')
      fail(name, line_no, "expected '=' after key '" + key + "'");
    ++i;
    skip_ws(line, i);
    if (i >= line.size()) fail(name, line_no, "missing value for key '" + key + "'");
    Value v = parse_value(name, line_no, line, i);
    skip_ws(line, i);
    if (i < line.size())
      fail(name, line_no, "trailing characters after value for key '" + key + "'");
    auto it = cfg.index_.find(key);
    if (it != cfg.index_.end())
      fail(name, line_no,
           "duplicate key '" + key + "' (already set on line " +
               std::to_string(cfg.entries_[it->second].second.line) + ")");
    cfg.index_[key] = cfg.entries_.size();
    cfg.entries_.emplace_back(key, std::move(v));
  }
  return cfg;
}

bool Config::has(const std::string& key) const { return index_.count(key) != 0; }

const Value* Config::find(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Value& Config::require(const std::string& key) const {
  const Value* v = find(key);
  if (!v) throw ParameterError(name_ + ": missing required key '" + key + "'");
  return *v;
}

void Config::type_error(const std::string& key, const Value& v,
                        const std::string& wanted) const {
  fail(name_, v.line, "key '" + key + "' is " + kind_name(v.kind) + ", expected " + wanted);
}

std::string Config::get_string(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kString) type_error(key, v, "a string");
  return v.str;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return find(key) ? get_string(key) : fallback;
}

std::int64_t Config::get_int(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kInt) type_error(key, v, "an integer");
  return to_int(name_, v.line, key, v);
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  return find(key) ? get_int(key) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kInt) type_error(key, v, "an integer");
  if (v.negative) fail(name_, v.line, "key '" + key + "' must not be negative");
  return v.magnitude;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  return find(key) ? get_u64(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind == Value::Kind::kFloat) return v.num;
  if (v.kind == Value::Kind::kInt) return int_as_double(v);
  type_error(key, v, "a number");
}

double Config::get_double(const std::string& key, double fallback) const {
  return find(key) ? get_double(key) : fallback;
}

bool Config::get_bool(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kBool) type_error(key, v, "a boolean");
  return v.flag;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  return find(key) ? get_bool(key) : fallback;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) type_error(key, v, "an array");
  std::vector<double> out;
  out.reserve(v.items.size());
  for (std::size_t k = 0; k < v.items.size(); ++k) {
    const Value& e = v.items[k];
    if (e.kind == Value::Kind::kFloat) {
      out.push_back(e.num);
    } else if (e.kind == Value::Kind::kInt) {
      out.push_back(int_as_double(e));
    } else {
      fail(name_, v.line,
           "element " + std::to_string(k) + " of '" + key + "' is not a number");
    }
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
  return find(key) ? get_double_list(key) : fallback;
}

std::vector<std::int64_t> Config::get_int_list(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) type_error(key, v, "an array");
  std::vector<std::int64_t> out;
  out.reserve(v.items.size());
  for (std::size_t k = 0; k < v.items.size(); ++k) {
    const Value& e = v.items[k];
    if (e.kind != Value::Kind::kInt)
      fail(name_, v.line,
           "element " + std::to_string(k) + " of '" + key + "' is not an integer");
    out.push_back(to_int(name_, v.line, key, e));
  }
  return out;
}

std::vector<std::uint64_t> Config::get_u64_list(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) type_error(key, v, "an array");
  std::vector<std::uint64_t> out;
  out.reserve(v.items.size());
  for (std::size_t k = 0; k < v.items.size(); ++k) {
    const Value& e = v.items[k];
    if (e.kind != Value::Kind::kInt || e.negative)
      fail(name_, v.line,
           "element " + std::to_string(k) + " of '" + key +
               "' is not a non-negative integer");
    out.push_back(e.magnitude);
  }
  return out;
}

std::vector<std::uint64_t> Config::get_u64_list(
    const std::string& key, const std::vector<std::uint64_t>& fallback) const {
  return find(key) ? get_u64_list(key) : fallback;
}

std::vector<std::string> Config::get_string_list(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) type_error(key, v, "an array");
  std::vector<std::string> out;
  out.reserve(v.items.size());
  for (std::size_t k = 0; k < v.items.size(); ++k) {
    const Value& e = v.items[k];
    if (e.kind != Value::Kind::kString)
      fail(name_, v.line,
           "element " + std::to_string(k) + " of '" + key + "' is not a string");
    out.push_back(e.str);
  }
  return out;
}

void Config::check_unknown(const std::vector<std::string>& known) const {
  std::set<std::string> ok(known.begin(), known.end());
  std::vector<std::string> extra;
  for (const auto& [key, value] : entries_)
    if (!ok.count(key)) extra.push_back(key);
  if (extra.empty()) return;
  std::string msg = name_ + ": unknown key";
  if (extra.size() > 1) msg += "s";
  msg += ": ";
  for (std::size_t i = 0; i < extra.size(); ++i) {
    if (i) msg += ", ";
    msg += "'" + extra[i] + "'";
  }
  throw ParameterError(msg);
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [key, value] : entries_) out.push_back(key);
  return out;
}

}  // namespace dpfb::flatcfg
