#include "dpfb/flatcfg.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "dpfb/error.hpp"

using dpfb::flatcfg::Config;

namespace {

Config parse(const std::string& text) { return Config::parse_string(text, "cfg"); }

}  // namespace

TEST_CASE("flatcfg parses every value kind") {
  Config cfg = parse(
      "title = \"warm start\"   # trailing comment\n"
      "\n"
      "# full-line comment\n"
      "cohort.n_patients = 2500\n"
      "train.learning_rate = 3e-3\n"
      "neg = -12\n"
      "plain = 0.5\n"
      "fairness_ci = false\n"
      "flag = true\n"
      "epsilon_targets = [0.5, 2, 8, inf]\n"
      "seeds = [1, 2, 3]\n"
      "strategies = [\"cold\", \"warm_matched\"]\n"
      "empty = []\n");

  CHECK(cfg.get_string("title") == "warm start");
  CHECK(cfg.get_int("cohort.n_patients") == 2500);
  CHECK(cfg.get_double("train.learning_rate") == doctest::Approx(3e-3));
  CHECK(cfg.get_int("neg") == -12);
  CHECK(cfg.get_double("plain") == 0.5);
  CHECK_FALSE(cfg.get_bool("fairness_ci"));
  CHECK(cfg.get_bool("flag"));

  std::vector<double> eps = cfg.get_double_list("epsilon_targets");
  REQUIRE(eps.size() == 4);
  CHECK(eps[0] == 0.5);
  CHECK(eps[1] == 2.0);  // integer element promoted
  CHECK(std::isinf(eps[3]));
  CHECK(eps[3] > 0);

  CHECK(cfg.get_u64_list("seeds") == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(cfg.get_int_list("seeds") == std::vector<std::int64_t>{1, 2, 3});
  CHECK(cfg.get_string_list("strategies") ==
        std::vector<std::string>{"cold", "warm_matched"});
  CHECK(cfg.get_double_list("empty").empty());

  CHECK(cfg.keys().front() == "title");
  CHECK(cfg.keys().back() == "empty");
  CHECK(cfg.has("flag"));
  CHECK_FALSE(cfg.has("missing"));
}

TEST_CASE("flatcfg numeric edge cases") {
  Config cfg = parse(
      "big = 18446744073709551615\n"
      "imin = -9223372036854775808\n"
      "imax = 9223372036854775807\n"
      "minus_inf = -inf\n"
      "plus_inf = +inf\n"
      "not_num = nan\n"
      "sci = 1E5\n"
      "zero = -0\n");

  CHECK(cfg.get_u64("big") == std::numeric_limits<std::uint64_t>::max());
  CHECK_THROWS_AS((void)cfg.get_int("big"), dpfb::ParameterError);
  CHECK(cfg.get_int("imin") == std::numeric_limits<std::int64_t>::min());
  CHECK_THROWS_WITH_AS((void)cfg.get_u64("imin"),
                       doctest::Contains("must not be negative"),
                       dpfb::ParameterError);
  CHECK(cfg.get_int("imax") == std::numeric_limits<std::int64_t>::max());
  CHECK(cfg.get_double("minus_inf") == -std::numeric_limits<double>::infinity());
  CHECK(cfg.get_double("plus_inf") == std::numeric_limits<double>::infinity());
  CHECK(std::isnan(cfg.get_double("not_num")));
  CHECK(cfg.get_double("sci") == 1e5);
  CHECK(cfg.get_int("zero") == 0);
  CHECK(cfg.get_u64("zero") == 0);
}

TEST_CASE("flatcfg strings: escapes and comment chars inside quotes") {
  Config cfg = parse(
      "path = \"out/report #7.json\"\n"
      "esc = \"a\\\"b\\\\c\\nd\\te\\rf\"\n");
  CHECK(cfg.get_string("path") == "out/report #7.json");
  CHECK(cfg.get_string("esc") == "a\"b\\c\nd\te\rf");
}

TEST_CASE("flatcfg fallbacks") {
  Config cfg = parse("present = 3\n");
  CHECK(cfg.get_int("present", 9) == 3);
  CHECK(cfg.get_int("absent", 9) == 9);
  CHECK(cfg.get_double("absent", 1.5) == 1.5);
  CHECK(cfg.get_string("absent", "d") == "d");
  CHECK(cfg.get_bool("absent", true));
  CHECK(cfg.get_u64("absent", 7) == 7);
  CHECK(cfg.get_double_list("absent", {1.0, 2.0}) == std::vector<double>{1.0, 2.0});
  CHECK(cfg.get_u64_list("absent", {4}) == std::vector<std::uint64_t>{4});
  // fallback forms still type-check a present key
  CHECK_THROWS_AS((void)cfg.get_string("present", "d"), dpfb::ParameterError);
}

TEST_CASE("flatcfg syntax errors carry line numbers") {
  CHECK_THROWS_WITH_AS(parse("a = 1\na = 2\n"),
                       doctest::Contains("cfg:line 2: duplicate key 'a' (already set on line 1)"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("[section]\n"),
                       doctest::Contains("table headers are not supported"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a 1\n"), doctest::Contains("expected '=' after key 'a'"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a =\n"), doctest::Contains("missing value for key 'a'"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = \"open\n"), doctest::Contains("unterminated string"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = \"bad\\q\"\n"),
                       doctest::Contains("invalid escape '\\q'"), dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = [[1]]\n"),
                       doctest::Contains("nested arrays are not supported"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = [1,\n"), doctest::Contains("unterminated array"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = [1 2]\n"),
                       doctest::Contains("expected ',' or ']' in array"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = [,1]\n"),
                       doctest::Contains("expected a value before ','"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = zzz\n"), doctest::Contains("malformed value 'zzz'"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = 1.2.3\n"), doctest::Contains("malformed value"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = 99999999999999999999999999\n"),
                       doctest::Contains("integer out of range"), dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("a = 1 extra\n"),
                       doctest::Contains("trailing characters after value"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(parse("= 1\n"), doctest::Contains("expected a key"),
                       dpfb::ParameterError);
}

TEST_CASE("flatcfg type errors and missing keys name the offender") {
  Config cfg = parse("s = \"x\"\nn = 4\narr = [1]\n");
  CHECK_THROWS_WITH_AS((void)cfg.get_int("s"),
                       doctest::Contains("key 's' is a string, expected an integer"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)cfg.get_string("n"), doctest::Contains("expected a string"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)cfg.get_bool("n"), doctest::Contains("expected a boolean"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)cfg.get_double("s"), doctest::Contains("expected a number"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)cfg.get_double_list("n"),
                       doctest::Contains("expected an array"), dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)cfg.get_double("missing"),
                       doctest::Contains("cfg: missing required key 'missing'"),
                       dpfb::ParameterError);

  Config mixed = parse("a = [1, \"x\"]\nb = [1, 2.5]\nc = [-1]\n");
  CHECK_THROWS_WITH_AS((void)mixed.get_double_list("a"),
                       doctest::Contains("element 1 of 'a' is not a number"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)mixed.get_int_list("b"),
                       doctest::Contains("element 1 of 'b' is not an integer"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)mixed.get_u64_list("c"),
                       doctest::Contains("element 0 of 'c' is not a non-negative integer"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS((void)mixed.get_string_list("b"),
                       doctest::Contains("is not a string"), dpfb::ParameterError);
}

TEST_CASE("flatcfg check_unknown flags typos") {
  Config cfg = parse("alpha = 1\nbeta = 2\ngamma = 3\n");
  CHECK_NOTHROW(cfg.check_unknown({"alpha", "beta", "gamma", "unused"}));
  CHECK_THROWS_WITH_AS(cfg.check_unknown({"alpha"}),
                       doctest::Contains("cfg: unknown keys: 'beta', 'gamma'"),
                       dpfb::ParameterError);
  CHECK_THROWS_WITH_AS(cfg.check_unknown({"alpha", "gamma"}),
                       doctest::Contains("cfg: unknown key: 'beta'"),
                       dpfb::ParameterError);
}

TEST_CASE("flatcfg parse_file handles CRLF and missing files") {
  CHECK_THROWS_WITH_AS(Config::parse_file("/nonexistent/x.toml"),
                       doctest::Contains("cannot open config file"), dpfb::IoError);

  std::string path = "flatcfg_crlf_test.toml";
  {
    std::ofstream out(path, std::ios::binary);
    out << "a = 1\r\nb = \"two\"\r\n";
  }
  Config cfg = Config::parse_file(path);
  CHECK(cfg.get_int("a") == 1);
  CHECK(cfg.get_string("b") == "two");
  CHECK(cfg.name() == path);
  std::remove(path.c_str());
}
