#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <random>

#include "dpmkit/archive.hpp"

using namespace dpmkit;

TEST_CASE("archive round-trips a single f32 array") {
  ArchiveEntry e;
  e.name = "w";
  e.dtype = "f32";
  e.shape = {2, 3};
  e.data = {1.0, 2.5, -3.0, 0.0, 0.5, 7.0};

  const std::string bytes = serialize_archive({e});
  auto back = deserialize_archive(bytes);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].name == "w");
  REQUIRE(back[0].shape == std::vector<int>{2, 3});
  REQUIRE(back[0].data == e.data);  // values representable exactly in f32
}

TEST_CASE("archive round-trip of many random f64 entries is bit-exact") {
  std::mt19937_64 rng(42);
  std::vector<ArchiveEntry> entries;
  for (int i = 0; i < 50; ++i) {
    ArchiveEntry e;
    e.name = "p" + std::to_string(i);
    e.dtype = "f64";
    std::uniform_int_distribution<int> d(1, 6);
    e.shape = {d(rng), d(rng)};
    std::normal_distribution<double> g;
    e.data.resize(size_t(e.shape[0]) * e.shape[1]);
    for (auto& v : e.data) v = g(rng);
    entries.push_back(std::move(e));
  }
  const std::string b1 = serialize_archive(entries);
  auto back = deserialize_archive(b1);
  const std::string b2 = serialize_archive(back);
  REQUIRE(b1 == b2);  // byte-identical, so payload hashes agree too
  for (size_t i = 0; i < entries.size(); ++i) {
    REQUIRE(back[i].data == entries[i].data);
  }
}

TEST_CASE("archive rejects malformed input with a position") {
  ArchiveEntry e;
  e.name = "x";
  e.dtype = "f64";
  e.shape = {1, 2};
  e.data = {1.0, 2.0};
  std::string bytes = serialize_archive({e});

  SECTION("truncated payload") {
    bytes.resize(bytes.size() - 4);
    try {
      deserialize_archive(bytes);
      FAIL("expected throw");
    } catch (const Error& err) {
      REQUIRE(err.kind() == ErrorKind::io);
      REQUIRE(std::string(err.what()).find("truncated") != std::string::npos);
    }
  }
  SECTION("trailing bytes") {
    bytes += "zz";
    try {
      deserialize_archive(bytes);
      FAIL("expected throw");
    } catch (const Error& err) {
      REQUIRE(std::string(err.what()).find("trailing") != std::string::npos);
    }
  }
  SECTION("header length overruns file") {
    bytes[0] = char(0xff);
    REQUIRE_THROWS_AS(deserialize_archive(bytes), Error);
  }
}

TEST_CASE("archive rejects duplicate names") {
  ArchiveEntry e;
  e.name = "dup";
  e.dtype = "f64";
  e.shape = {1, 1};
  e.data = {1.0};
  REQUIRE_THROWS_AS(serialize_archive({e, e}), Error);
}

TEST_CASE("archive file write/read") {
  ArchiveEntry e = entry_from_mat("m", Mat::filled(2, 2, {1, 2, 3, 4}));
  const std::string path = "test_archive_tmp.bin";
  write_archive({e}, path);
  auto back = read_archive(path);
  REQUIRE(mat_from_entry(back[0]).a == std::vector<double>{1, 2, 3, 4});
  std::remove(path.c_str());
}
