#pragma once

#include <functional>
#include <vector>

#include "oamsim/modes.hpp"

namespace oamsim {

// d x d conditional detection-probability matrix. Rows are renormalized
// (post-selected on detection); raw detected fractions live in efficiency.
struct CrosstalkMatrix {
    int dim = 0;
    BasisKind basis_kind = BasisKind::OAM;
    std::vector<std::vector<double>> p;   // p[i][j] = P(detect j | prepared i)
    std::vector<double> efficiency;       // raw detected-power fraction per prepared state
    std::vector<bool> row_flagged;        // rows with zero detected power

    bool any_flagged() const;
};

struct FidelityStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> series;
    double threshold = 0.0;
    double fraction_above_threshold = 0.0;
};

FidelityStats make_fidelity_stats(std::vector<double> series, double threshold);

using ChannelFn = std::function<ComplexField(const ComplexField&)>;

// Crosstalk from explicit received fields against reference (projective
// measurement) states. reference[j] must be unit power.
CrosstalkMatrix crosstalk(const std::vector<ComplexField>& received,
                          const std::vector<ComplexField>& reference, BasisKind kind);

// Convenience form: prepare every basis state of the space on the grid, pass
// it through the channel, and project onto the ideal basis states.
CrosstalkMatrix crosstalk(const EncodingSpace& space, const GridSpec& grid, const ChannelFn& channel);

// Mean diagonal; QSER = 1 - fidelity.
double fidelity(const CrosstalkMatrix& m);

// Secret-key rate per sifted symbol: r = log2(d) - 2 h_d(e), with
// h_d(e) = -e log2(e/(d-1)) - (1-e) log2(1-e).
double key_rate(int d, double error_rate);

// F_th = 1 - e_th where e_th is the zero crossing of key_rate(d, .).
double fidelity_threshold(int d);

enum class FidelityModel {
    A,  // F = 1 - [1 + c x^2]^(-1/2), as printed
    B,  // F = [1 + c x^2]^(-1/2), complement matching the measured trend
};

// Reference value quoted for the no-turbulence OAM fidelity model.
inline constexpr double kReferenceModelCoefficient = 3.404;

double eval_fidelity_model(FidelityModel model, double c, double d_over_r0);

// Least-squares fit of the single coefficient c to (D/r0, F) points.
double fit_fidelity_model(const std::vector<std::pair<double, double>>& points, FidelityModel model);

struct SecurityVerdict {
    int dimension = 0;
    double threshold = 0.0;
    double mean_fidelity = 0.0;
    bool secure = false;
};

enum class StrategyKind { None, Spacing, Hybrid };

struct Strategy {
    StrategyKind kind = StrategyKind::None;
    int spacing = 1;            // Spacing strategy
    double pol_fidelity = 1.0;  // Hybrid strategy
};

struct StrategyResult {
    FidelityStats stats;
    SecurityVerdict verdict;
};

// Evaluate a mitigation strategy over an ensemble of crosstalk matrices.
// The Spacing strategy expects the ensemble to have been re-simulated under
// the spaced encoding with paired seeds; it is scored at its own dimension.
// The Hybrid strategy rescales fidelities by pol_fidelity and doubles d.
StrategyResult evaluate_strategy(const std::vector<CrosstalkMatrix>& ensemble, const Strategy& strategy);

}  // namespace oamsim
