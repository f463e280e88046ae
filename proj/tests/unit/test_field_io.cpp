#include <doctest.h>

#include <sstream>

#include "qtat/field_io.hpp"

using namespace qtat;

namespace {

std::string bytes(std::initializer_list<int> b) {
    std::string s;
    for (int c : b) s.push_back(static_cast<char>(c));
    return s;
}

}  // namespace

TEST_CASE("QTAF1 real layout is bit-exact") {
    Grid g(2, 3, 0.5);
    RealField f(g, std::vector<double>{1.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    std::ostringstream os;
    qtaf::write(os, f);
    std::string expect = std::string("QTAF") + bytes({1, 2, 0}) + bytes({3, 0, 0, 0, 3, 0, 0, 0}) +
                         bytes({0, 0, 0, 0, 0, 0, 0xE0, 0x3F}) +   // 0.5
                         bytes({0, 0, 0, 0, 0, 0, 0xF0, 0x3F}) +   // 1.0
                         bytes({0, 0, 0, 0, 0, 0, 0x00, 0xC0}) +   // -2.0
                         bytes({0, 0, 0, 0, 0, 0, 0xE0, 0x3F});    // 0.5
    for (int i = 0; i < 6; ++i) expect += bytes({0, 0, 0, 0, 0, 0, 0, 0});
    CHECK(os.str() == expect);
}

TEST_CASE("QTAF1 complex layout interleaves re and im") {
    Grid g(2, 3, 1.0);
    std::vector<complexd> v(9);
    v[0] = {1.0, -2.0};
    ComplexField f(g, v);
    std::ostringstream os;
    qtaf::write(os, f);
    const std::string s = os.str();
    REQUIRE(s.size() == 4 + 3 + 8 + 8 + 9 * 16);
    CHECK(s[6] == 1);
    CHECK(s.substr(15, 8) == bytes({0, 0, 0, 0, 0, 0, 0xF0, 0x3F}));
    CHECK(s.substr(23, 8) == bytes({0, 0, 0, 0, 0, 0, 0xF0, 0x3F}));
    CHECK(s.substr(31, 8) == bytes({0, 0, 0, 0, 0, 0, 0x00, 0xC0}));
}

TEST_CASE("QTAF1 round trip in 2D and 3D") {
    Grid g(3, 4, 0.25);
    auto f = ComplexField::sample(g, [](const auto &x) { return complexd(x[0] + 2 * x[1], x[2] - 0.1); });
    std::stringstream ss;
    qtaf::write(ss, f);
    auto back = std::get<ComplexField>(qtaf::read(ss));
    CHECK(back.grid() == g);
    CHECK(back.values() == f.values());

    Grid g2(2, 7, 0.5);
    auto r = RealField::sample(g2, [](const auto &x) { return std::exp(x[0]) / 3.0; });
    std::stringstream s2;
    qtaf::write(s2, r);
    CHECK(std::get<RealField>(qtaf::read(s2)).values() == r.values());
}

TEST_CASE("QTAF1 rejects malformed input") {
    std::istringstream bad("QTAX");
    CHECK_THROWS_AS(qtaf::read(bad), ConfigError);
    std::istringstream ver(std::string("QTAF") + bytes({2, 2, 0}));
    CHECK_THROWS_AS(qtaf::read(ver), ConfigError);
    Grid g(2, 3, 0.5);
    std::ostringstream os;
    qtaf::write(os, RealField(g, 1.0));
    std::istringstream cut(os.str().substr(0, os.str().size() - 3));
    CHECK_THROWS_AS(qtaf::read(cut), ConfigError);
    CHECK_THROWS_AS(qtaf::load("/nonexistent/field.qtaf"), FileNotFoundError);
}
