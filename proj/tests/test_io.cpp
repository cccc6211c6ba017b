#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <stdexcept>

#include "cpfc/io.hpp"
#include "cpfc/parallel.hpp"

using namespace cpfc;

TEST_CASE("csv cells are split and trimmed") {
  const auto cells = split_csv_line(" a , b,,c\r");
  REQUIRE(cells.size() == 4);
  CHECK(cells[0] == "a");
  CHECK(cells[1] == "b");
  CHECK(cells[2].empty());
  CHECK(cells[3] == "c");
}

TEST_CASE("numbers parse strictly") {
  CHECK(parse_number("1e6") == 1e6);
  CHECK(parse_number(" +0.25 ") == 0.25);
  CHECK(parse_number("-3") == -3.0);
  CHECK_THROWS(parse_number(""));
  CHECK_THROWS(parse_number("1.5x"));
  CHECK_THROWS(parse_number("inf"));
  CHECK_THROWS(parse_number("nan"));
}

TEST_CASE("formatted numbers round-trip exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> ex(-300, 300);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(mant(rng), ex(rng));
    CHECK(parse_number(format_number(v)) == v);
  }
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_number(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("parallel_for visits every index once") {
  for (std::size_t threads : {1u, 3u}) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, threads);
    for (auto& h : hits) CHECK(h.load() == 1);
  }
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  std::atomic<int> ran{0};
  try {
    parallel_for(
        50,
        [&](std::size_t i) {
          ++ran;
          if (i == 7 || i == 31) throw std::runtime_error(std::to_string(i));
        },
        4);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "7");
  }
  CHECK(ran.load() == 50);
}

TEST_CASE("thread count honours the environment") {
  setenv("ADN_CPFC_THREADS", "3", 1);
  CHECK(default_thread_count() == 3);
  unsetenv("ADN_CPFC_THREADS");
  CHECK(default_thread_count() >= 1);
}
