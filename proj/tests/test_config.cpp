#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "dpmkit/config.hpp"

using dpmkit::Config;

TEST_CASE("config parses flat key = value pairs with sections and comments") {
  const char* text =
      "# comment\n"
      "seed = 11\n"
      "spt.oiou_threshold = 0.3\n"
      "train.out_dir = runs/a b\n"
      "\n"
      "flag = true\n"
      "hmg.gate = 2, 4\n";
  Config cfg = Config::parse(text);
  REQUIRE(cfg.get_int("seed", 0) == 11);
  REQUIRE(cfg.get_double("spt.oiou_threshold", 0) == Catch::Approx(0.3));
  REQUIRE(cfg.get_str("train.out_dir") == "runs/a b");
  REQUIRE(cfg.get_bool("flag", false));
  REQUIRE(cfg.get_int_list("hmg.gate", {}) == std::vector<int>{2, 4});
  REQUIRE(cfg.get_int("missing", 42) == 42);
}

TEST_CASE("config rejects lines without '='") {
  REQUIRE_THROWS_AS(Config::parse("bad line\n"), dpmkit::Error);
}

TEST_CASE("DPMKIT_SEED overrides config seed") {
  Config cfg = Config::parse("seed = 5\n");
  REQUIRE(cfg.seed() == 5);
  setenv("DPMKIT_SEED", "99", 1);
  REQUIRE(cfg.seed() == 99);
  unsetenv("DPMKIT_SEED");
  REQUIRE(cfg.seed() == 5);
}
