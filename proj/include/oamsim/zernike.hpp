#pragma once

#include <vector>

#include "oamsim/field.hpp"

namespace oamsim {

// Noll-indexed coefficients, radians RMS per mode; coeffs[0] is piston (j=1).
struct ZernikeCoeffs {
    std::vector<double> coeffs;

    double operator[](int noll_j) const { return coeffs.at(static_cast<std::size_t>(noll_j) - 1); }
    int n_terms() const { return static_cast<int>(coeffs.size()); }
    // RMS of the represented wavefront, piston excluded (modes are orthonormal).
    double rms_no_piston() const;
};

// Noll j -> (radial order n, azimuthal order m); m < 0 selects the sine mode.
std::pair<int, int> noll_to_nm(int noll_j);

// Z_j at polar coordinates (rho in [0,1], theta), Noll-normalized so that
// the disc average of Z_j^2 is 1.
double zernike_polar(int noll_j, double rho, double theta);

// Z_j sampled on the grid over a centered pupil, zero outside.
RealMap zernike_eval(int noll_j, const GridSpec& grid, double pupil_diameter);

// Least-squares projection of a phase map onto the first n_terms Noll modes
// over the pupil samples.
ZernikeCoeffs zernike_fit(const RealMap& phase, const Aperture& pupil, int n_terms);

// Sum of c_j * Z_j over a centered pupil of the given diameter.
RealMap zernike_reconstruct(const ZernikeCoeffs& c, const GridSpec& grid, double pupil_diameter);

// Subtract the fitted piston, tip and tilt (Noll 1..3) components.
RealMap remove_tip_tilt(const RealMap& phase, const Aperture& pupil);

}  // namespace oamsim
