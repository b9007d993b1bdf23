#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "msk/matrix_io.hpp"

namespace fs = std::filesystem;
using namespace msk;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("msk_io_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

}  // namespace

TEST_CASE("read_matrix_csv parses plain matrices") {
    TempDir dir;
    write_text(dir.file("m.csv"), "1,2\n3,4\n");
    DenseMatrix m = read_matrix_csv(dir.file("m.csv"));
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 2);
    CHECK(m(0, 0) == 1.0);
    CHECK(m(0, 1) == 2.0);
    CHECK(m(1, 0) == 3.0);
    CHECK(m(1, 1) == 4.0);

    write_text(dir.file("one.csv"), "0\n");
    DenseMatrix one = read_matrix_csv(dir.file("one.csv"));
    REQUIRE(one.rows() == 1);
    REQUIRE(one.cols() == 1);
    CHECK(one(0, 0) == 0.0);
}

TEST_CASE("read_matrix_csv rejects malformed input") {
    TempDir dir;
    write_text(dir.file("ragged.csv"), "1,2\n3\n");
    try {
        read_matrix_csv(dir.file("ragged.csv"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }

    write_text(dir.file("junk.csv"), "1,abc\n");
    CHECK_THROWS_AS(read_matrix_csv(dir.file("junk.csv")), ParseError);

    write_text(dir.file("nan.csv"), "1,nan\n");
    CHECK_THROWS_AS(read_matrix_csv(dir.file("nan.csv")), ParseError);

    write_text(dir.file("inf.csv"), "inf\n");
    CHECK_THROWS_AS(read_matrix_csv(dir.file("inf.csv")), ParseError);

    CHECK_THROWS_AS(read_matrix_csv(dir.file("missing.csv")), IoError);

    write_text(dir.file("empty.csv"), "");
    CHECK_THROWS_AS(read_matrix_csv(dir.file("empty.csv")), IoError);
}

TEST_CASE("matrix csv round trip is bit exact") {
    TempDir dir;
    DenseMatrix m(2, 2, {1, 2, 3, 4});
    write_matrix_csv(m, dir.file("m.csv"));
    DenseMatrix back = read_matrix_csv(dir.file("m.csv"));
    REQUIRE(back.same_shape(m));
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(back.data()[i] == m.data()[i]);
    }

    DenseMatrix tenth(1, 1, {0.1});
    write_matrix_csv(tenth, dir.file("t.csv"));
    CHECK(read_matrix_csv(dir.file("t.csv"))(0, 0) == 0.1);

    // random doubles across magnitudes survive the 17-digit format
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> mant(-1.0, 1.0);
    std::uniform_int_distribution<int> expo(-20, 20);
    DenseMatrix r(8, 5);
    for (double& v : r.data()) v = mant(rng) * std::pow(10.0, expo(rng));
    write_matrix_csv(r, dir.file("r.csv"));
    DenseMatrix rb = read_matrix_csv(dir.file("r.csv"));
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(rb.data()[i] == r.data()[i]);
    }
}

TEST_CASE("write_matrix_csv reports I/O failure") {
    DenseMatrix m(1, 1, {1.0});
    CHECK_THROWS_AS(write_matrix_csv(m, "/nonexistent_dir_msk/m.csv"), IoError);
}

TEST_CASE("tensor3 block format") {
    TempDir dir;
    write_text(dir.file("t.csv"), "1,2\n3,4\n\n5,6\n7,8\n");
    DenseTensor3 t = read_tensor3(dir.file("t.csv"));
    REQUIRE(t.channels() == 2);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 2);
    CHECK(t(0, 0, 0) == 1.0);
    CHECK(t(1, 1, 1) == 8.0);

    write_text(dir.file("single.csv"), "1,2\n3,4\n");
    CHECK(read_tensor3(dir.file("single.csv")).channels() == 1);

    write_text(dir.file("bad.csv"), "1,2\n3,4\n\n5,6\n7,8\n9,10\n");
    CHECK_THROWS_AS(read_tensor3(dir.file("bad.csv")), IoError);

    write_text(dir.file("empty.csv"), "");
    CHECK_THROWS_AS(read_tensor3(dir.file("empty.csv")), IoError);
}

TEST_CASE("tensor3 round trip") {
    TempDir dir;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    DenseTensor3 t(3, 4, 3);
    for (double& v : t.data()) v = u(rng);
    write_tensor3(t, dir.file("t.csv"));
    DenseTensor3 back = read_tensor3(dir.file("t.csv"));
    REQUIRE(back.channels() == 3);
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(back.data()[i] == t.data()[i]);
    }
}

TEST_CASE("DenseMatrix constructor enforces invariants") {
    CHECK_THROWS_AS(DenseMatrix(2, 2, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(DenseMatrix(1, 1, {std::nan("")}), std::invalid_argument);
}
