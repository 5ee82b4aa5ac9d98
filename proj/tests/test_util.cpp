#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "repsnet/rng.hpp"
#include "repsnet/serialize.hpp"

using namespace repsnet;

TEST_CASE("rng streams are reproducible and seed-sensitive") {
    Rng a(123), b(123), c(124);
    bool all_eq = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_eq = all_eq && x == y;
        any_diff = any_diff || x != z;
    }
    REQUIRE(all_eq);
    REQUIRE(any_diff);
}

TEST_CASE("uniform stays inside the half-open unit interval") {
    Rng rng(9);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("uniform_int covers the range and rejects empty ranges") {
    Rng rng(4);
    std::set<uint64_t> seen;
    for (int i = 0; i < 400; ++i) seen.insert(rng.uniform_int(6));
    REQUIRE(seen == std::set<uint64_t>({0, 1, 2, 3, 4, 5}));
    REQUIRE_THROWS_AS(rng.uniform_int(0), ContractError);
}

TEST_CASE("normal draws have plausible moments") {
    Rng rng(1);
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 0.05));
    REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 0.05));
}

TEST_CASE("shuffle is a permutation and depends on the seed") {
    std::vector<int> base = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<int> x = base, y = base;
    Rng a(5), b(6);
    a.shuffle(x);
    b.shuffle(y);
    std::vector<int> xs = x, ys = y;
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    REQUIRE(xs == base);
    REQUIRE(ys == base);
    REQUIRE(x != y);
}

TEST_CASE("binary scalar round trips are exact") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "repsnet_util_roundtrip.bin";
    {
        std::ofstream out(path, std::ios::binary);
        io::write_magic(out, "RNIX");
        io::write_u32(out, 0xDEADBEEFu);
        io::write_u64(out, 0x0123456789ABCDEFull);
        io::write_f64(out, -0.1);
        io::write_f64(out, 5e-324); // smallest subnormal survives bit-for-bit
        io::write_string(out, "quadrant report");
    }
    {
        std::ifstream in(path, std::ios::binary);
        io::expect_magic(in, "RNIX", "index file");
        REQUIRE(io::read_u32(in) == 0xDEADBEEFu);
        REQUIRE(io::read_u64(in) == 0x0123456789ABCDEFull);
        REQUIRE(io::read_f64(in) == -0.1);
        REQUIRE(io::read_f64(in) == 5e-324);
        REQUIRE(io::read_string(in) == "quadrant report");
    }
    {
        std::ifstream in(path, std::ios::binary);
        REQUIRE_THROWS_AS(io::expect_magic(in, "RSNC", "checkpoint"), IoError);
    }
    fs::remove(path);
}

TEST_CASE("truncated reads fail loudly") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "repsnet_util_truncated.bin";
    {
        std::ofstream out(path, std::ios::binary);
        io::write_u32(out, 7);
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE_THROWS_AS(io::read_u64(in), IoError);
    fs::remove(path);
}

TEST_CASE("seed mixing separates streams") {
    REQUIRE(mix_seed(1, 2) != mix_seed(2, 1));
    REQUIRE(mix_seed(0, 0) != 0);
    Rng a(mix_seed(42, 0)), b(mix_seed(42, 1));
    REQUIRE(a.next_u64() != b.next_u64());
}
