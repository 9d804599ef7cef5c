#include "oamsim/field.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "oamsim/fft.hpp"

namespace oamsim {

double GridSpec::wavenumber() const { return 2.0 * std::numbers::pi / wavelength; }

GridSpec make_grid(int n, double extent, double wavelength) {
    if (n < 64 || (n & (n - 1)) != 0)
        throw std::invalid_argument("make_grid: n must be a power of two >= 64");
    if (extent <= 0.0 || wavelength <= 0.0)
        throw std::invalid_argument("make_grid: extent and wavelength must be positive");
    return GridSpec{n, extent, wavelength};
}

double power(const ComplexField& f) {
    const double pa = f.grid.pitch() * f.grid.pitch();
    double s = 0.0;
    for (const cxd& a : f.amplitude) s += std::norm(a);
    return s * pa;
}

cxd overlap(const ComplexField& a, const ComplexField& b) {
    if (!(a.grid == b.grid)) throw std::invalid_argument("overlap: grid mismatch");
    const double pa = a.grid.pitch() * a.grid.pitch();
    cxd s = 0.0;
    for (std::size_t i = 0; i < a.amplitude.size(); ++i)
        s += std::conj(a.amplitude[i]) * b.amplitude[i];
    return s * pa;
}

ComplexField normalized(const ComplexField& f) {
    double p = power(f);
    if (p <= 0.0) throw std::invalid_argument("normalized: zero-power field");
    ComplexField out = f;
    const double s = 1.0 / std::sqrt(p);
    for (cxd& a : out.amplitude) a *= s;
    return out;
}

ComplexField propagate(const ComplexField& f, double distance) {
    if (distance < 0.0) throw std::invalid_argument("propagate: negative distance");
    if (distance == 0.0) return f;
    const GridSpec& g = f.grid;
    // Transfer-function sampling bound: beyond z_max the quadratic phase of
    // the angular-spectrum kernel aliases at the grid Nyquist frequency.
    const double z_max = g.n * g.pitch() * g.pitch() / g.wavelength;
    if (distance > z_max) {
        const double required_extent = std::sqrt(g.n * g.wavelength * distance);
        std::ostringstream msg;
        msg << "propagate: distance " << distance << " m exceeds aliasing bound " << z_max
            << " m for this grid; need extent >= " << required_extent << " m at n = " << g.n;
        throw std::invalid_argument(msg.str());
    }

    ComplexField out = f;
    fft::forward2d(out.amplitude, g.n);
    const double k = g.wavenumber();
    const double k2 = k * k;
    const double two_pi = 2.0 * std::numbers::pi;
    for (int iy = 0; iy < g.n; ++iy) {
        const double fy = fft::bin_freq(iy, g.n, g.pitch());
        const double ky = two_pi * fy;
        for (int ix = 0; ix < g.n; ++ix) {
            const double fx = fft::bin_freq(ix, g.n, g.pitch());
            const double kx = two_pi * fx;
            const double arg = k2 - kx * kx - ky * ky;
            cxd h = 0.0;  // evanescent components do not propagate
            if (arg > 0.0) {
                const double kz = std::sqrt(arg);
                h = std::polar(1.0, kz * distance);
            }
            out.at(ix, iy) *= h;
        }
    }
    fft::inverse2d(out.amplitude, g.n);
    return out;
}

ComplexField apply_aperture(const ComplexField& f, const Aperture& a) {
    if (a.diameter <= 0.0) throw std::invalid_argument("apply_aperture: non-positive diameter");
    ComplexField out = f;
    const GridSpec& g = f.grid;
    const double r2 = 0.25 * a.diameter * a.diameter;
    for (int iy = 0; iy < g.n; ++iy) {
        const double dy = g.coord(iy) - a.center_y;
        for (int ix = 0; ix < g.n; ++ix) {
            const double dx = g.coord(ix) - a.center_x;
            if (dx * dx + dy * dy > r2) out.at(ix, iy) = 0.0;
        }
    }
    return out;
}

std::pair<double, double> centroid(const ComplexField& f) {
    const GridSpec& g = f.grid;
    double sx = 0.0, sy = 0.0, st = 0.0;
    for (int iy = 0; iy < g.n; ++iy) {
        for (int ix = 0; ix < g.n; ++ix) {
            const double w = std::norm(f.at(ix, iy));
            sx += w * g.coord(ix);
            sy += w * g.coord(iy);
            st += w;
        }
    }
    if (st <= 0.0) throw std::invalid_argument("centroid: zero-power field");
    return {sx / st, sy / st};
}

ComplexField apply_phase(const ComplexField& f, const RealMap& phase) {
    if (!(f.grid == phase.grid)) throw std::invalid_argument("apply_phase: grid mismatch");
    ComplexField out = f;
    for (std::size_t i = 0; i < out.amplitude.size(); ++i)
        out.amplitude[i] *= std::polar(1.0, phase.values[i]);
    return out;
}

double fresnel_number_product(double d_tx, double d_rx, double length, double wavelength) {
    if (d_tx <= 0.0 || d_rx <= 0.0 || length <= 0.0 || wavelength <= 0.0)
        throw std::invalid_argument("fresnel_number_product: all arguments must be positive");
    return d_tx * d_rx / (4.0 * wavelength * length);
}

}  // namespace oamsim
