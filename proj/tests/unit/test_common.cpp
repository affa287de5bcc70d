#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/common/sha256.hpp"
#include "hamil/common/text_format.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace hamil;

TEST_CASE("sha256 matches published test vectors") {
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string_view("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("mix_seed is deterministic and spreads streams") {
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(mix_seed(7, s));
  CHECK(seen.size() == 1000);
  CHECK(mix_seed(7, 1, 2) != mix_seed(7, 2, 1));
  Rng a(5), b(5);
  CHECK(rng_digest(a) == rng_digest(b));
  a();
  CHECK(rng_digest(a) != rng_digest(b));
}

TEST_CASE("key value documents parse comments, duplicates and equals") {
  const auto doc = KeyValueDoc::parse("# comment\nalpha 1\nbeta  two words \nalpha 3\n");
  CHECK(doc.at("alpha") == "1");
  CHECK(doc.at("beta") == "two words");
  CHECK(doc.all("alpha").size() == 2);
  CHECK_FALSE(doc.has("gamma"));
  CHECK_THROWS_AS(doc.at("gamma"), CorruptHeader);
  CHECK(KeyValueDoc::parse(doc.str()).entries() == doc.entries());

  const auto eq = KeyValueDoc::parse("lr = 0.001\nepochs=5\n", true);
  CHECK(eq.at("lr") == "0.001");
  CHECK(eq.at("epochs") == "5");
}

TEST_CASE("strict numeric parsing") {
  CHECK(parse_int("42", "x") == 42);
  CHECK(parse_int("-7", "x") == -7);
  CHECK_THROWS_AS(parse_int("4x", "x"), InvalidInput);
  CHECK_THROWS_AS(parse_int("", "x"), InvalidInput);
  CHECK(parse_double("1e-4", "x") == 1e-4);
  CHECK_THROWS_AS(parse_double("abc", "x"), InvalidInput);
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5})
    CHECK(parse_double(format_double(v), "x") == v);
}

TEST_CASE("file helpers round trip and report missing files") {
  testing_util::TempDir dir("common");
  const std::string path = (dir / "f.txt").string();
  write_text_file(path, std::string("a\0b", 3));
  CHECK(read_text_file(path) == std::string("a\0b", 3));
  CHECK(read_binary_file(path).size() == 3);
  CHECK_THROWS_AS(read_text_file((dir / "missing").string()), NotFound);
}

TEST_CASE("errors carry stable kind tags") {
  CHECK(ConfigError("x").kind() == "configuration_error");
  CHECK(TruncatedPayload("x").kind() == "truncated_payload");
  CHECK(NumericFailure("layer", "boom").where() == "layer");
  CHECK_THROWS_AS(require(false, "nope"), ContractViolation);
}
