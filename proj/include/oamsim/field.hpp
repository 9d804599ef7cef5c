#pragma once

#include <complex>
#include <utility>
#include <vector>

namespace oamsim {

using cxd = std::complex<double>;

// Uniform square sampling grid shared by every optics stage.
// Coordinates are centered: x(i) = (i - n/2) * pitch.
struct GridSpec {
    int n = 0;            // samples per side, power of two >= 64
    double extent = 0.0;  // physical side length [m]
    double wavelength = 0.0;  // [m]

    double pitch() const { return extent / n; }
    double coord(int i) const { return (i - n / 2) * pitch(); }
    double wavenumber() const;
    bool operator==(const GridSpec&) const = default;
};

GridSpec make_grid(int n, double extent, double wavelength);

// Sampled scalar complex field, row-major amplitude[iy * n + ix].
struct ComplexField {
    GridSpec grid;
    std::vector<cxd> amplitude;

    ComplexField() = default;
    explicit ComplexField(const GridSpec& g) : grid(g), amplitude(static_cast<std::size_t>(g.n) * g.n) {}

    cxd& at(int ix, int iy) { return amplitude[static_cast<std::size_t>(iy) * grid.n + ix]; }
    const cxd& at(int ix, int iy) const { return amplitude[static_cast<std::size_t>(iy) * grid.n + ix]; }
};

// Real-valued map on the same grid (phase screens, wavefronts, DM surfaces).
struct RealMap {
    GridSpec grid;
    std::vector<double> values;

    RealMap() = default;
    explicit RealMap(const GridSpec& g) : grid(g), values(static_cast<std::size_t>(g.n) * g.n, 0.0) {}

    double& at(int ix, int iy) { return values[static_cast<std::size_t>(iy) * grid.n + ix]; }
    double at(int ix, int iy) const { return values[static_cast<std::size_t>(iy) * grid.n + ix]; }
};

struct Aperture {
    double diameter = 0.0;            // [m]
    double center_x = 0.0, center_y = 0.0;  // [m]
};

double power(const ComplexField& f);
cxd overlap(const ComplexField& a, const ComplexField& b);
ComplexField normalized(const ComplexField& f);

// Angular-spectrum (exact transfer function) propagation. Throws if the grid
// cannot support the requested distance without wrap-around.
ComplexField propagate(const ComplexField& f, double distance);

ComplexField apply_aperture(const ComplexField& f, const Aperture& a);

std::pair<double, double> centroid(const ComplexField& f);

// Multiply the field by exp(i * phase).
ComplexField apply_phase(const ComplexField& f, const RealMap& phase);

double fresnel_number_product(double d_tx, double d_rx, double length, double wavelength);

}  // namespace oamsim
