#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "oamsim/field.hpp"
#include "oamsim/modes.hpp"

using namespace oamsim;

namespace {
const GridSpec kGrid = make_grid(256, 0.04, 633e-9);
const double kWaist = 0.0025;
}  // namespace

TEST_CASE("fundamental mode is a Gaussian peaked on axis") {
    ComplexField f = oam_field({0, kWaist}, kGrid);
    double peak = 0.0;
    int px = -1, py = -1;
    for (int iy = 0; iy < kGrid.n; ++iy)
        for (int ix = 0; ix < kGrid.n; ++ix)
            if (std::norm(f.at(ix, iy)) > peak) {
                peak = std::norm(f.at(ix, iy));
                px = ix;
                py = iy;
            }
    CHECK(px == kGrid.n / 2);
    CHECK(py == kGrid.n / 2);
}

TEST_CASE("vortex modes have an on-axis null") {
    ComplexField f = oam_field({2, kWaist}, kGrid);
    double peak = 0.0;
    for (const cxd& a : f.amplitude) peak = std::max(peak, std::abs(a));
    CHECK(std::abs(f.at(kGrid.n / 2, kGrid.n / 2)) < 1e-8 * peak);
}

TEST_CASE("ring radius of ell = 3 matches waist * sqrt(|ell|/2)") {
    ComplexField f = oam_field({3, kWaist}, kGrid);
    // peak intensity radius along +x
    double best = 0.0, rbest = 0.0;
    for (int ix = kGrid.n / 2; ix < kGrid.n; ++ix) {
        const double i = std::norm(f.at(ix, kGrid.n / 2));
        if (i > best) {
            best = i;
            rbest = kGrid.coord(ix);
        }
    }
    CHECK(rbest == doctest::Approx(kWaist * std::sqrt(1.5)).epsilon(0.02));
}

TEST_CASE("mode generation rejects under-resolved grids") {
    CHECK_THROWS(oam_field({0, 3.5 * kGrid.pitch()}, kGrid));
    CHECK_NOTHROW(oam_field({0, 9.0 * kGrid.pitch()}, kGrid));
}

TEST_CASE("basis fields are unit power and OAM members are orthogonal") {
    EncodingSpace space = build_space(2, 1, kWaist, BasisKind::OAM);
    std::vector<ComplexField> fields;
    for (int ell : space.members()) fields.push_back(oam_field({ell, kWaist}, kGrid));
    for (std::size_t i = 0; i < fields.size(); ++i) {
        CHECK(power(fields[i]) == doctest::Approx(1.0).epsilon(1e-6));
        for (std::size_t j = i + 1; j < fields.size(); ++j)
            CHECK(std::abs(overlap(fields[i], fields[j])) < 1e-6);
    }
}

TEST_CASE("angular state j = 0 has equal real coefficients 1/sqrt(5)") {
    EncodingSpace space = build_space(2, 1, kWaist, BasisKind::OAM);
    ComplexField a0 = ang_field(0, space, kGrid);
    for (int ell : space.members()) {
        const cxd c = overlap(oam_field({ell, kWaist}, kGrid), a0);
        CHECK(c.real() == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-6));
        CHECK(std::abs(c.imag()) < 1e-6);
    }
}

TEST_CASE("OAM and ANG bases are mutually unbiased for d = 5") {
    EncodingSpace space = build_space(2, 1, kWaist, BasisKind::OAM);
    for (int j = 0; j < 5; ++j) {
        ComplexField aj = ang_field(j, space, kGrid);
        CHECK(power(aj) == doctest::Approx(1.0).epsilon(1e-6));
        for (int ell : space.members())
            CHECK(std::norm(overlap(oam_field({ell, kWaist}, kGrid), aj)) ==
                  doctest::Approx(0.2).epsilon(1e-5));
    }
}

TEST_CASE("angular states are orthonormal, all 25 pairs") {
    EncodingSpace space = build_space(2, 1, kWaist, BasisKind::OAM);
    std::vector<ComplexField> a;
    for (int j = 0; j < 5; ++j) a.push_back(ang_field(j, space, kGrid));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            const double m = std::abs(overlap(a[i], a[j]));
            if (i == j)
                CHECK(m == doctest::Approx(1.0).epsilon(1e-6));
            else
                CHECK(m < 1e-6);
        }
}

TEST_CASE("angular coefficients are periodic in j with period d") {
    // exp(-i 2 pi (j+d) ell / d) = exp(-i 2 pi j ell / d): state j = 1 equals
    // the superposition built with phase index j = 1 + d.
    EncodingSpace space = build_space(2, 1, kWaist, BasisKind::OAM);
    ComplexField a1 = ang_field(1, space, kGrid);
    ComplexField wrapped(kGrid);
    const int d = space.dimension();
    for (int ell : space.members()) {
        ComplexField mode = oam_field({ell, kWaist}, kGrid);
        const cxd c =
            std::polar(1.0 / std::sqrt(5.0), -2.0 * std::numbers::pi * (1 + d) * ell / d);
        for (std::size_t i = 0; i < wrapped.amplitude.size(); ++i)
            wrapped.amplitude[i] += c * mode.amplitude[i];
    }
    CHECK(std::norm(overlap(a1, wrapped)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ang_field rejects out-of-range j and spacing > 1") {
    EncodingSpace space = build_space(2, 1, kWaist, BasisKind::OAM);
    CHECK_THROWS(ang_field(-1, space, kGrid));
    CHECK_THROWS(ang_field(5, space, kGrid));
    EncodingSpace spaced = build_space(4, 2, kWaist, BasisKind::OAM);
    CHECK_THROWS(ang_field(0, spaced, kGrid));
}

TEST_CASE("encoding space construction") {
    EncodingSpace s1 = build_space(2, 1, kWaist, BasisKind::OAM);
    CHECK(s1.dimension() == 5);
    CHECK(s1.members() == std::vector<int>{-2, -1, 0, 1, 2});

    EncodingSpace s2 = build_space(4, 2, kWaist, BasisKind::OAM);
    CHECK(s2.dimension() == 5);
    CHECK(s2.members() == std::vector<int>{-4, -2, 0, 2, 4});

    EncodingSpace s3 = build_space(4, 4, kWaist, BasisKind::OAM);
    CHECK(s3.dimension() == 3);
    CHECK(s3.members() == std::vector<int>{-4, 0, 4});

    CHECK_THROWS(build_space(3, 2, kWaist, BasisKind::OAM));  // L not divisible
    CHECK_THROWS(build_space(0, 1, kWaist, BasisKind::OAM));
    CHECK_THROWS(build_space(2, 2, kWaist, BasisKind::ANG));  // ANG needs spacing 1
}

TEST_CASE("hybrid polarization ancilla") {
    EncodingSpace spatial = build_space(2, 1, kWaist, BasisKind::OAM);
    HybridSpace h = hybrid_space(spatial, 0.9823);
    CHECK(h.joint_dimension() == 10);
    CHECK(h.joint_fidelity(0.8) == doctest::Approx(0.78584).epsilon(1e-9));
    CHECK(hybrid_space(spatial, 1.0).joint_fidelity(0.8) == doctest::Approx(0.8));
    CHECK_THROWS(hybrid_space(spatial, 0.4));
    CHECK_THROWS(hybrid_space(spatial, 1.1));
}
