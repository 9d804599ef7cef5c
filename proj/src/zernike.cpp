#include "oamsim/zernike.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace oamsim {

double ZernikeCoeffs::rms_no_piston() const {
    double s = 0.0;
    for (std::size_t i = 1; i < coeffs.size(); ++i) s += coeffs[i] * coeffs[i];
    return std::sqrt(s);
}

std::pair<int, int> noll_to_nm(int noll_j) {
    if (noll_j < 1) throw std::invalid_argument("noll_to_nm: Noll index starts at 1");
    const int n = static_cast<int>((-1.0 + std::sqrt(8.0 * (noll_j - 1) + 1.0)) / 2.0);
    const int p = noll_j - n * (n + 1) / 2;  // 1-based position within the order
    const int k = n % 2;
    int m = ((p + k) / 2) * 2 - k;
    if (m != 0) m *= (noll_j % 2 == 0) ? 1 : -1;
    return {n, m};
}

namespace {

double radial_poly(int n, int m, double rho) {
    // R_n^m via the factorial sum; orders used here are small enough that
    // doubles hold the coefficients exactly.
    double sum = 0.0;
    for (int s = 0; s <= (n - m) / 2; ++s) {
        double c = (s % 2 == 0) ? 1.0 : -1.0;
        c *= std::tgamma(n - s + 1.0);
        c /= std::tgamma(s + 1.0) * std::tgamma((n + m) / 2 - s + 1.0) * std::tgamma((n - m) / 2 - s + 1.0);
        sum += c * std::pow(rho, n - 2 * s);
    }
    return sum;
}

}  // namespace

double zernike_polar(int noll_j, double rho, double theta) {
    auto [n, m] = noll_to_nm(noll_j);
    const int am = std::abs(m);
    const double r = radial_poly(n, am, rho);
    if (m == 0) return std::sqrt(n + 1.0) * r;
    const double norm = std::sqrt(2.0 * (n + 1.0));
    return norm * r * (m > 0 ? std::cos(am * theta) : std::sin(am * theta));
}

RealMap zernike_eval(int noll_j, const GridSpec& grid, double pupil_diameter) {
    if (pupil_diameter > grid.extent)
        throw std::invalid_argument("zernike_eval: pupil exceeds grid extent");
    RealMap map(grid);
    const double radius = 0.5 * pupil_diameter;
    for (int iy = 0; iy < grid.n; ++iy) {
        const double y = grid.coord(iy);
        for (int ix = 0; ix < grid.n; ++ix) {
            const double x = grid.coord(ix);
            const double r = std::hypot(x, y);
            if (r > radius) continue;
            map.at(ix, iy) = zernike_polar(noll_j, r / radius, std::atan2(y, x));
        }
    }
    return map;
}

ZernikeCoeffs zernike_fit(const RealMap& phase, const Aperture& pupil, int n_terms) {
    if (n_terms < 1) throw std::invalid_argument("zernike_fit: n_terms must be >= 1");
    const GridSpec& g = phase.grid;
    if (pupil.diameter / g.pitch() < 16.0)
        throw std::invalid_argument("zernike_fit: pupil sampled by fewer than 16 pixels across");

    std::vector<int> px, py;
    const double radius = 0.5 * pupil.diameter;
    for (int iy = 0; iy < g.n; ++iy) {
        const double y = g.coord(iy) - pupil.center_y;
        for (int ix = 0; ix < g.n; ++ix) {
            const double x = g.coord(ix) - pupil.center_x;
            if (x * x + y * y <= radius * radius) {
                px.push_back(ix);
                py.push_back(iy);
            }
        }
    }
    const int npix = static_cast<int>(px.size());
    if (npix < 4 * n_terms)
        throw std::invalid_argument("zernike_fit: degenerate pupil, too few samples");

    Eigen::MatrixXd basis(npix, n_terms);
    Eigen::VectorXd rhs(npix);
    for (int i = 0; i < npix; ++i) {
        const double x = g.coord(px[i]) - pupil.center_x;
        const double y = g.coord(py[i]) - pupil.center_y;
        const double rho = std::hypot(x, y) / radius;
        const double theta = std::atan2(y, x);
        for (int j = 1; j <= n_terms; ++j) basis(i, j - 1) = zernike_polar(j, rho, theta);
        rhs(i) = phase.at(px[i], py[i]);
    }
    Eigen::VectorXd sol = (basis.transpose() * basis).ldlt().solve(basis.transpose() * rhs);

    ZernikeCoeffs c;
    c.coeffs.assign(sol.data(), sol.data() + n_terms);
    return c;
}

RealMap zernike_reconstruct(const ZernikeCoeffs& c, const GridSpec& grid, double pupil_diameter) {
    RealMap map(grid);
    const double radius = 0.5 * pupil_diameter;
    for (int iy = 0; iy < grid.n; ++iy) {
        const double y = grid.coord(iy);
        for (int ix = 0; ix < grid.n; ++ix) {
            const double x = grid.coord(ix);
            const double r = std::hypot(x, y);
            if (r > radius) continue;
            const double rho = r / radius;
            const double theta = std::atan2(y, x);
            double v = 0.0;
            for (int j = 1; j <= c.n_terms(); ++j) v += c[j] * zernike_polar(j, rho, theta);
            map.at(ix, iy) = v;
        }
    }
    return map;
}

RealMap remove_tip_tilt(const RealMap& phase, const Aperture& pupil) {
    ZernikeCoeffs low = zernike_fit(phase, pupil, 3);
    RealMap out = phase;
    const GridSpec& g = phase.grid;
    const double radius = 0.5 * pupil.diameter;
    for (int iy = 0; iy < g.n; ++iy) {
        const double y = g.coord(iy) - pupil.center_y;
        for (int ix = 0; ix < g.n; ++ix) {
            const double x = g.coord(ix) - pupil.center_x;
            const double r = std::hypot(x, y);
            if (r > radius) continue;
            const double rho = r / radius;
            const double theta = std::atan2(y, x);
            double v = 0.0;
            for (int j = 1; j <= 3; ++j) v += low[j] * zernike_polar(j, rho, theta);
            out.at(ix, iy) -= v;
        }
    }
    return out;
}

}  // namespace oamsim
