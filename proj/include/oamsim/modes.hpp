#pragma once

#include <vector>

#include "oamsim/field.hpp"

namespace oamsim {

// Laguerre-Gauss mode with radial order p = 0 at its waist plane.
struct ModeSpec {
    int ell = 0;       // OAM quantum number
    double waist = 0;  // 1/e^2 amplitude waist radius [m]
};

enum class BasisKind { OAM, ANG };

// A set {-L, -L+spacing, ..., L} of OAM modes sharing one waist.
struct EncodingSpace {
    BasisKind basis_kind = BasisKind::OAM;
    int max_ell = 0;   // L
    int spacing = 1;
    double waist = 0;  // [m]

    int dimension() const { return 2 * (max_ell / spacing) + 1; }
    std::vector<int> members() const;
};

// Spatial encoding extended by a two-dimensional polarization ancilla,
// reduced to a scalar fidelity parameter.
struct HybridSpace {
    EncodingSpace spatial;
    double pol_fidelity = 1.0;

    int joint_dimension() const { return 2 * spatial.dimension(); }
    double joint_fidelity(double spatial_fidelity) const { return spatial_fidelity * pol_fidelity; }
};

// Unit-power LG_{0,ell} field at the waist plane.
ComplexField oam_field(const ModeSpec& spec, const GridSpec& grid);

// Angular (ANG) basis state |j>: equal-weight superposition of the OAM
// members with coefficients (1/sqrt d) exp(-i 2 pi j ell / (2L+1)).
// Defined only for spacing 1, where it is mutually unbiased with OAM.
ComplexField ang_field(int j, const EncodingSpace& space, const GridSpec& grid);

EncodingSpace build_space(int max_ell, int spacing, double waist, BasisKind kind);

HybridSpace hybrid_space(const EncodingSpace& spatial, double pol_fidelity);

}  // namespace oamsim
