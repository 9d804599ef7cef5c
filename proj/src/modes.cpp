#include "oamsim/modes.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace oamsim {

std::vector<int> EncodingSpace::members() const {
    std::vector<int> m;
    for (int ell = -max_ell; ell <= max_ell; ell += spacing) m.push_back(ell);
    return m;
}

ComplexField oam_field(const ModeSpec& spec, const GridSpec& grid) {
    if (spec.waist <= 0.0) throw std::invalid_argument("oam_field: waist must be positive");
    if (2.0 * spec.waist / grid.pitch() < 8.0)
        throw std::invalid_argument("oam_field: grid under-resolves the waist (< 8 samples across)");

    ComplexField f(grid);
    const double w = spec.waist;
    const int l = spec.ell;
    const int al = std::abs(l);
    for (int iy = 0; iy < grid.n; ++iy) {
        const double y = grid.coord(iy);
        for (int ix = 0; ix < grid.n; ++ix) {
            const double x = grid.coord(ix);
            const double r = std::hypot(x, y);
            const double radial = std::pow(r * std::numbers::sqrt2 / w, al) * std::exp(-r * r / (w * w));
            const double theta = std::atan2(y, x);
            f.at(ix, iy) = std::polar(radial, l * theta);
        }
    }
    return normalized(f);
}

ComplexField ang_field(int j, const EncodingSpace& space, const GridSpec& grid) {
    if (space.spacing != 1)
        throw std::invalid_argument("ang_field: ANG basis is defined only for spacing 1");
    const int d = space.dimension();
    if (j < 0 || j >= d) throw std::invalid_argument("ang_field: j out of range [0, d)");

    ComplexField f(grid);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int ell = -space.max_ell; ell <= space.max_ell; ++ell) {
        const double phase = -2.0 * std::numbers::pi * j * ell / (2.0 * space.max_ell + 1.0);
        const cxd c = std::polar(inv_sqrt_d, phase);
        ComplexField mode = oam_field({ell, space.waist}, grid);
        for (std::size_t i = 0; i < f.amplitude.size(); ++i)
            f.amplitude[i] += c * mode.amplitude[i];
    }
    return f;
}

EncodingSpace build_space(int max_ell, int spacing, double waist, BasisKind kind) {
    if (max_ell < 1) throw std::invalid_argument("build_space: L must be >= 1");
    if (spacing < 1) throw std::invalid_argument("build_space: spacing must be >= 1");
    if (max_ell % spacing != 0)
        throw std::invalid_argument("build_space: L must be divisible by spacing");
    if (waist <= 0.0) throw std::invalid_argument("build_space: waist must be positive");
    if (kind == BasisKind::ANG && spacing != 1)
        throw std::invalid_argument("build_space: ANG basis requires spacing 1");
    return EncodingSpace{kind, max_ell, spacing, waist};
}

HybridSpace hybrid_space(const EncodingSpace& spatial, double pol_fidelity) {
    if (pol_fidelity < 0.5 || pol_fidelity > 1.0)
        throw std::invalid_argument("hybrid_space: pol_fidelity must lie in [0.5, 1]");
    return HybridSpace{spatial, pol_fidelity};
}

}  // namespace oamsim
