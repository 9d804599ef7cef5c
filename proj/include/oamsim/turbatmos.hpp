#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oamsim/field.hpp"

namespace oamsim {

struct TurbulenceParams {
    double cn2 = 0.0;          // structure constant [m^-2/3]
    double path_length = 0.0;  // [m]
    double wavelength = 0.0;   // [m]
    double wind_vx = 0.0, wind_vy = 0.0;  // [m/s]
    int n_screens = 1;
    double outer_scale = 0.0;  // von Karman L0 [m]; <= 0 means infinite (Kolmogorov)
};

// One frozen-flow turbulence layer.
struct PhaseScreen {
    GridSpec grid;
    std::vector<double> phase;  // radians, row-major, piston removed
    double r0 = 0.0;            // layer Fried parameter [m]; 0 marks a null screen
    double wind_vx = 0.0, wind_vy = 0.0;

    double at(int ix, int iy) const { return phase[static_cast<std::size_t>(iy) * grid.n + ix]; }
};

// Plane-wave, uniform-path Fried parameter.
double cn2_to_r0(double cn2, double path_length, double wavelength);

// FFT-synthesized Kolmogorov screen with subharmonic low-frequency
// augmentation. The layer r0 is the per-screen value derived from params
// (total path split evenly over n_screens). cn2 == 0 yields a flat screen.
PhaseScreen make_screen(const TurbulenceParams& params, const GridSpec& grid, std::uint64_t seed);

// Same synthesis for a directly specified layer r0.
PhaseScreen make_screen_r0(double r0, double wind_vx, double wind_vy, double outer_scale,
                           const GridSpec& grid, std::uint64_t seed);

// Taylor frozen-flow translation by wind * dt (subpixel, spectral shift).
PhaseScreen evolve_screen(const PhaseScreen& s, double dt);

double greenwood_frequency(double wind_speed, double r0);

// Invert the one-axis tilt-variance relation
//   sigma_alpha^2 = 0.182 (D/r0)^(5/3) (lambda/D)^2
// from a receiver-plane centroid series; lever_arm converts displacement to
// angle (alpha = x / lever_arm).
double estimate_r0_from_wander(const std::vector<std::pair<double, double>>& centroids,
                               double beam_diameter, double wavelength, double lever_arm);

// Debug export: <path>.bin (row-major float64 LE) + <path>.json header.
void export_screen(const PhaseScreen& s, const std::string& path_prefix);

}  // namespace oamsim
