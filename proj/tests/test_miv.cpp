#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "demseg/miv_io.hpp"
#include "demseg/rng.hpp"

using namespace demseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "demseg_miv_test";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Volume random_volume(Rng& rng) {
    Volume v;
    v.shape = {static_cast<int>(rng.uniform_int(1, 4)), static_cast<int>(rng.uniform_int(1, 9)),
               static_cast<int>(rng.uniform_int(1, 9))};
    v.spacing = {rng.uniform(0.5, 12.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)};
    v.data.resize(v.shape.count());
    for (float& f : v.data) f = static_cast<float>(rng.normal(0.0, 100.0));
    return v;
}

LabelMap random_labels(Rng& rng) {
    LabelMap m;
    m.shape = {static_cast<int>(rng.uniform_int(1, 4)), static_cast<int>(rng.uniform_int(1, 9)),
               static_cast<int>(rng.uniform_int(1, 9))};
    m.spacing = {rng.uniform(0.5, 12.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)};
    m.data.resize(m.shape.count());
    for (auto& b : m.data) b = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
    return m;
}

}  // namespace

TEST_CASE("f32 volume round trip is bit exact") {
    Rng rng(11);
    const fs::path p = temp_file("vol.miv");
    for (int i = 0; i < 25; ++i) {
        const Volume v = random_volume(rng);
        write_miv(v, p);
        const Volume r = read_miv_volume(p);
        CHECK(r.shape == v.shape);
        CHECK(r.spacing == v.spacing);
        REQUIRE(r.data.size() == v.data.size());
        // compare representations, not values, so NaN-free bit identity holds
        CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("u8 label round trip") {
    Rng rng(12);
    const fs::path p = temp_file("lab.miv");
    for (int i = 0; i < 25; ++i) {
        const LabelMap m = random_labels(rng);
        write_miv(m, p);
        const LabelMap r = read_miv_labels(p);
        CHECK(r.shape == m.shape);
        CHECK(r.spacing == m.spacing);
        CHECK(r.data == m.data);
    }
}

TEST_CASE("variant reader returns the declared dtype") {
    Rng rng(13);
    const fs::path pv = temp_file("var_v.miv");
    const fs::path pl = temp_file("var_l.miv");
    write_miv(random_volume(rng), pv);
    write_miv(random_labels(rng), pl);
    CHECK(std::holds_alternative<Volume>(read_miv(pv)));
    CHECK(std::holds_alternative<LabelMap>(read_miv(pl)));
    CHECK_THROWS_AS(read_miv_labels(pv), MivError);
    CHECK_THROWS_AS(read_miv_volume(pl), MivError);
}

TEST_CASE("file layout: magic line then a JSON header line") {
    Volume v;
    v.shape = {1, 1, 2};
    v.spacing = {10.0, 1.458, 1.458};
    v.data = {1.0f, -2.0f};
    const fs::path p = temp_file("layout.miv");
    write_miv(v, p);
    const std::vector<char> bytes = read_bytes(p);
    REQUIRE(bytes.size() > 5);
    CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "MIV1\n");
    const auto header_end = std::find(bytes.begin() + 5, bytes.end(), '\n');
    REQUIRE(header_end != bytes.end());
    const std::string header(bytes.begin() + 5, header_end);
    CHECK(header.find("\"shape\":[1,1,2]") != std::string::npos);
    CHECK(header.find("\"dtype\":\"f32\"") != std::string::npos);
    // payload is exactly 8 bytes of little-endian floats
    CHECK(bytes.end() - (header_end + 1) == 8);
}

TEST_CASE("malformed files are rejected") {
    Rng rng(14);
    const Volume v = random_volume(rng);
    const fs::path p = temp_file("bad.miv");

    write_miv(v, p);
    std::vector<char> good = read_bytes(p);

    SUBCASE("bad magic") {
        std::vector<char> bytes = good;
        bytes[0] = 'X';
        write_bytes(p, bytes);
        CHECK_THROWS_AS(read_miv(p), MivError);
    }
    SUBCASE("truncated payload") {
        std::vector<char> bytes = good;
        bytes.pop_back();
        write_bytes(p, bytes);
        CHECK_THROWS_AS(read_miv(p), MivError);
    }
    SUBCASE("trailing bytes") {
        std::vector<char> bytes = good;
        bytes.push_back(0);
        write_bytes(p, bytes);
        CHECK_THROWS_AS(read_miv(p), MivError);
    }
    SUBCASE("header is not JSON") {
        std::vector<char> bytes{'M', 'I', 'V', '1', '\n', 'h', 'i', '\n'};
        write_bytes(p, bytes);
        CHECK_THROWS_AS(read_miv(p), MivError);
    }
    SUBCASE("unknown dtype") {
        std::string s = "MIV1\n{\"shape\":[1,1,1],\"spacing\":[1.0,1.0,1.0],\"dtype\":\"f64\"}\n";
        std::vector<char> bytes(s.begin(), s.end());
        for (int i = 0; i < 8; ++i) bytes.push_back(0);
        write_bytes(p, bytes);
        CHECK_THROWS_AS(read_miv(p), MivError);
    }
    SUBCASE("label payload with out-of-range value") {
        std::string s = "MIV1\n{\"shape\":[1,1,1],\"spacing\":[1.0,1.0,1.0],\"dtype\":\"u8\"}\n";
        std::vector<char> bytes(s.begin(), s.end());
        bytes.push_back(7);
        write_bytes(p, bytes);
        CHECK_THROWS_AS(read_miv(p), MivError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_miv(temp_file("does_not_exist.miv")), MivError);
    }
}

TEST_CASE("writes are deterministic") {
    Rng rng(15);
    const Volume v = random_volume(rng);
    const fs::path a = temp_file("det_a.miv");
    const fs::path b = temp_file("det_b.miv");
    write_miv(v, a);
    write_miv(v, b);
    CHECK(read_bytes(a) == read_bytes(b));
}
