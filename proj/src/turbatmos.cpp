#include "oamsim/turbatmos.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "oamsim/common.hpp"
#include "oamsim/fft.hpp"

namespace oamsim {

double cn2_to_r0(double cn2, double path_length, double wavelength) {
    if (cn2 <= 0.0) throw std::invalid_argument("cn2_to_r0: cn2 = 0 gives infinite r0");
    if (path_length <= 0.0 || wavelength <= 0.0)
        throw std::invalid_argument("cn2_to_r0: path_length and wavelength must be positive");
    const double k = 2.0 * std::numbers::pi / wavelength;
    return std::pow(0.423 * k * k * cn2 * path_length, -3.0 / 5.0);
}

namespace {

double kolmogorov_psd(double f2, double r0, double outer_scale) {
    // Phase PSD in cycles/m: 0.023 r0^(-5/3) (f^2 + f0^2)^(-11/6).
    const double f02 = (outer_scale > 0.0) ? 1.0 / (outer_scale * outer_scale) : 0.0;
    return 0.023 * std::pow(r0, -5.0 / 3.0) * std::pow(f2 + f02, -11.0 / 6.0);
}

// Effective power for a square spectral cell of side width centered on
// (fx, fy), represented by a single delta at the cell center. The PSD is
// steep near the origin, so midpoint sampling badly underestimates the
// lowest bins; plain cell integration instead overestimates the structure
// function because a delta at the center overweights power drawn from the
// cell's low-frequency side (contributions scale as f^2 while 2 pi f r < 1).
// Matching the second moment of the cell, integral(f^2 PSD) / f_center^2,
// keeps the structure function right throughout the sampled window.
double cell_power(double fx, double fy, double width, double r0, double outer_scale) {
    constexpr int m = 8;
    double p0 = 0.0, p2 = 0.0;
    for (int sy = 0; sy < m; ++sy) {
        const double gy = fy + width * ((sy + 0.5) / m - 0.5);
        for (int sx = 0; sx < m; ++sx) {
            const double gx = fx + width * ((sx + 0.5) / m - 0.5);
            const double g2 = gx * gx + gy * gy;
            const double psd = kolmogorov_psd(g2, r0, outer_scale);
            p0 += psd;
            p2 += psd * g2;
        }
    }
    const double area = width * width / (m * m);
    // Blend of the cell's total power and its second-moment-matched power.
    // Pure total power overshoots at small separations (a delta at the cell
    // center overweights sub-center frequencies while 2 pi f r < 1); pure
    // second-moment matching undershoots once 2 pi f r ~ 1. The exponent is
    // calibrated against the Kolmogorov structure function across the
    // sampled window.
    const double alpha = 0.80;
    const double ptot = p0 * area;
    const double pmom = p2 * area / (fx * fx + fy * fy);
    return std::pow(ptot, alpha) * std::pow(pmom, 1.0 - alpha);
}

}  // namespace

PhaseScreen make_screen_r0(double r0, double wind_vx, double wind_vy, double outer_scale,
                           const GridSpec& grid, std::uint64_t seed) {
    if (r0 <= 0.0) throw std::invalid_argument("make_screen_r0: r0 must be positive");
    const int n = grid.n;
    const double df = 1.0 / grid.extent;

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // FFT part: random spectral amplitudes over the full frequency grid,
    // real part taken at the end.
    std::vector<cxd> spec(static_cast<std::size_t>(n) * n);
    for (int iy = 0; iy < n; ++iy) {
        const double fy = fft::bin_freq(iy, n, grid.pitch());
        for (int ix = 0; ix < n; ++ix) {
            const double g1 = gauss(rng);
            const double g2 = gauss(rng);
            if (ix == 0 && iy == 0) continue;  // DC handled by subharmonics
            const double fx = fft::bin_freq(ix, n, grid.pitch());
            const bool low = std::abs(fx) <= 3.5 * df && std::abs(fy) <= 3.5 * df;
            const double amp = low ? std::sqrt(cell_power(fx, fy, df, r0, outer_scale))
                                   : std::sqrt(kolmogorov_psd(fx * fx + fy * fy, r0, outer_scale)) * df;
            spec[static_cast<std::size_t>(iy) * n + ix] = cxd(g1, g2) * amp;
        }
    }
    fft::forward2d(spec, n);

    PhaseScreen s;
    s.grid = grid;
    s.r0 = r0;
    s.wind_vx = wind_vx;
    s.wind_vy = wind_vy;
    s.phase.resize(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) s.phase[i] = spec[i].real();

    // Subharmonic augmentation: three levels of 3x3 samples refining the
    // central frequency cell, restoring tilt and other low-order power that
    // the plain FFT screen lacks.
    const double two_pi = 2.0 * std::numbers::pi;
    for (int level = 1; level <= 3; ++level) {
        const double dfp = df / std::pow(3.0, level);
        for (int ky = -1; ky <= 1; ++ky) {
            for (int kx = -1; kx <= 1; ++kx) {
                const double g1 = gauss(rng);
                const double g2 = gauss(rng);
                if (kx == 0 && ky == 0) continue;  // refined by the next level
                const double fx = kx * dfp;
                const double fy = ky * dfp;
                const cxd a = cxd(g1, g2) * std::sqrt(cell_power(fx, fy, dfp, r0, outer_scale));
                for (int iy = 0; iy < n; ++iy) {
                    const double py = two_pi * fy * (iy * grid.pitch());
                    for (int ix = 0; ix < n; ++ix) {
                        const double ph = two_pi * fx * (ix * grid.pitch()) + py;
                        s.phase[static_cast<std::size_t>(iy) * n + ix] +=
                            (a * cxd(std::cos(ph), std::sin(ph))).real();
                    }
                }
            }
        }
    }

    double mean = 0.0;
    for (double v : s.phase) mean += v;
    mean /= static_cast<double>(s.phase.size());
    for (double& v : s.phase) v -= mean;
    return s;
}

PhaseScreen make_screen(const TurbulenceParams& params, const GridSpec& grid, std::uint64_t seed) {
    if (params.n_screens < 1) throw std::invalid_argument("make_screen: n_screens must be >= 1");
    if (params.cn2 == 0.0) {
        PhaseScreen s;
        s.grid = grid;
        s.phase.assign(static_cast<std::size_t>(grid.n) * grid.n, 0.0);
        s.r0 = 0.0;
        s.wind_vx = params.wind_vx;
        s.wind_vy = params.wind_vy;
        return s;
    }
    const double r0_total = cn2_to_r0(params.cn2, params.path_length, params.wavelength);
    const double r0_layer = r0_total * std::pow(static_cast<double>(params.n_screens), 3.0 / 5.0);
    return make_screen_r0(r0_layer, params.wind_vx, params.wind_vy, params.outer_scale, grid, seed);
}

PhaseScreen evolve_screen(const PhaseScreen& s, double dt) {
    if (dt < 0.0) throw std::invalid_argument("evolve_screen: dt must be >= 0");
    const double dx = s.wind_vx * dt;
    const double dy = s.wind_vy * dt;
    if (dx == 0.0 && dy == 0.0) return s;

    const int n = s.grid.n;
    std::vector<cxd> spec(s.phase.begin(), s.phase.end());
    fft::forward2d(spec, n);
    const double two_pi = 2.0 * std::numbers::pi;
    for (int iy = 0; iy < n; ++iy) {
        const double fy = fft::bin_freq(iy, n, s.grid.pitch());
        for (int ix = 0; ix < n; ++ix) {
            const double fx = fft::bin_freq(ix, n, s.grid.pitch());
            spec[static_cast<std::size_t>(iy) * n + ix] *= std::polar(1.0, -two_pi * (fx * dx + fy * dy));
        }
    }
    fft::inverse2d(spec, n);

    PhaseScreen out = s;
    for (std::size_t i = 0; i < out.phase.size(); ++i) out.phase[i] = spec[i].real();
    return out;
}

double greenwood_frequency(double wind_speed, double r0) {
    if (r0 <= 0.0) throw std::invalid_argument("greenwood_frequency: r0 must be positive");
    return 0.427 * wind_speed / r0;
}

double estimate_r0_from_wander(const std::vector<std::pair<double, double>>& centroids,
                               double beam_diameter, double wavelength, double lever_arm) {
    if (centroids.size() < 100)
        throw std::invalid_argument("estimate_r0_from_wander: need at least 100 centroid samples");
    if (beam_diameter <= 0.0 || wavelength <= 0.0 || lever_arm <= 0.0)
        throw std::invalid_argument("estimate_r0_from_wander: non-positive geometry parameter");

    const double inv_n = 1.0 / static_cast<double>(centroids.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : centroids) {
        mx += x;
        my += y;
    }
    mx *= inv_n;
    my *= inv_n;
    double vx = 0.0, vy = 0.0;
    for (const auto& [x, y] : centroids) {
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    vx *= inv_n;
    vy *= inv_n;
    const double sigma_pos2 = 0.5 * (vx + vy);  // per-axis position variance
    if (sigma_pos2 <= 0.0) throw std::invalid_argument("estimate_r0_from_wander: no measurable wander");

    const double sigma_alpha2 = sigma_pos2 / (lever_arm * lever_arm);
    const double d_over_r0 =
        std::pow(sigma_alpha2 / (0.182 * std::pow(wavelength / beam_diameter, 2.0)), 3.0 / 5.0);
    return beam_diameter / d_over_r0;
}

void export_screen(const PhaseScreen& s, const std::string& path_prefix) {
    {
        std::ofstream bin(path_prefix + ".bin", std::ios::binary);
        if (!bin) throw std::runtime_error("export_screen: cannot open " + path_prefix + ".bin");
        bin.write(reinterpret_cast<const char*>(s.phase.data()),
                  static_cast<std::streamsize>(s.phase.size() * sizeof(double)));
    }
    nlohmann::json header = {
        {"n", s.grid.n},
        {"extent_m", s.grid.extent},
        {"wavelength_m", s.grid.wavelength},
        {"r0_m", s.r0},
        {"wind_m_per_s", {s.wind_vx, s.wind_vy}},
        {"layout", "row-major"},
        {"dtype", "float64-le"},
        {"units", "radians"},
    };
    std::ofstream js(path_prefix + ".json");
    if (!js) throw std::runtime_error("export_screen: cannot open " + path_prefix + ".json");
    js << header.dump(2) << "\n";
}

}  // namespace oamsim
