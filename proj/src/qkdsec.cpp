#include "oamsim/qkdsec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oamsim {

bool CrosstalkMatrix::any_flagged() const {
    return std::any_of(row_flagged.begin(), row_flagged.end(), [](bool b) { return b; });
}

FidelityStats make_fidelity_stats(std::vector<double> series, double threshold) {
    FidelityStats s;
    s.series = std::move(series);
    s.threshold = threshold;
    if (s.series.empty()) return s;
    double sum = 0.0;
    int above = 0;
    for (double f : s.series) {
        sum += f;
        if (f > threshold) ++above;
    }
    s.mean = sum / static_cast<double>(s.series.size());
    double var = 0.0;
    for (double f : s.series) var += (f - s.mean) * (f - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(s.series.size()));
    s.fraction_above_threshold = static_cast<double>(above) / static_cast<double>(s.series.size());
    return s;
}

CrosstalkMatrix crosstalk(const std::vector<ComplexField>& received,
                          const std::vector<ComplexField>& reference, BasisKind kind) {
    if (received.size() != reference.size() || received.empty())
        throw std::invalid_argument("crosstalk: received/reference size mismatch");
    const int d = static_cast<int>(received.size());

    CrosstalkMatrix m;
    m.dim = d;
    m.basis_kind = kind;
    m.p.assign(d, std::vector<double>(d, 0.0));
    m.efficiency.assign(d, 0.0);
    m.row_flagged.assign(d, false);

    for (int i = 0; i < d; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < d; ++j) {
            const double pij = std::norm(overlap(reference[j], received[i]));
            m.p[i][j] = pij;
            row_sum += pij;
        }
        m.efficiency[i] = row_sum;
        if (row_sum <= 0.0) {
            m.row_flagged[i] = true;
            continue;
        }
        for (int j = 0; j < d; ++j) m.p[i][j] /= row_sum;
    }
    return m;
}

CrosstalkMatrix crosstalk(const EncodingSpace& space, const GridSpec& grid, const ChannelFn& channel) {
    std::vector<ComplexField> prepared, reference;
    if (space.basis_kind == BasisKind::OAM) {
        for (int ell : space.members()) {
            ComplexField f = oam_field({ell, space.waist}, grid);
            reference.push_back(f);
            prepared.push_back(std::move(f));
        }
    } else {
        for (int j = 0; j < space.dimension(); ++j) {
            ComplexField f = ang_field(j, space, grid);
            reference.push_back(f);
            prepared.push_back(std::move(f));
        }
    }
    std::vector<ComplexField> received;
    received.reserve(prepared.size());
    for (const ComplexField& f : prepared) received.push_back(channel(f));
    return crosstalk(received, reference, space.basis_kind);
}

double fidelity(const CrosstalkMatrix& m) {
    if (m.any_flagged()) throw std::invalid_argument("fidelity: matrix has flagged (undetected) rows");
    double s = 0.0;
    for (int i = 0; i < m.dim; ++i) s += m.p[i][i];
    return s / static_cast<double>(m.dim);
}

double key_rate(int d, double error_rate) {
    if (d < 2) throw std::invalid_argument("key_rate: d must be >= 2");
    const double e_max = static_cast<double>(d - 1) / d;
    if (error_rate < 0.0 || error_rate > e_max)
        throw std::invalid_argument("key_rate: error rate outside [0, (d-1)/d]");
    const double log2d = std::log2(static_cast<double>(d));
    if (error_rate == 0.0) return log2d;
    const double e = error_rate;
    const double h = -e * std::log2(e / (d - 1)) - (1.0 - e) * std::log2(1.0 - e);
    return log2d - 2.0 * h;
}

double fidelity_threshold(int d) {
    if (d < 2) throw std::invalid_argument("fidelity_threshold: d must be >= 2");
    double lo = 0.0, hi = static_cast<double>(d - 1) / d;
    // key_rate is positive at e = 0 and negative at e = (d-1)/d.
    for (int iter = 0; iter < 100; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (key_rate(d, mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 1.0 - 0.5 * (lo + hi);
}

double eval_fidelity_model(FidelityModel model, double c, double d_over_r0) {
    const double base = 1.0 / std::sqrt(1.0 + c * d_over_r0 * d_over_r0);
    return (model == FidelityModel::A) ? 1.0 - base : base;
}

double fit_fidelity_model(const std::vector<std::pair<double, double>>& points, FidelityModel model) {
    if (points.size() < 3) throw std::invalid_argument("fit_fidelity_model: need at least 3 points");
    auto sse = [&](double log_c) {
        const double c = std::exp(log_c);
        double s = 0.0;
        for (const auto& [x, f] : points) {
            const double r = eval_fidelity_model(model, c, x) - f;
            s += r * r;
        }
        return s;
    };
    // Single-parameter fit; golden-section over a wide log range.
    double lo = std::log(1e-6), hi = std::log(1e6);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    double fa = sse(a), fb = sse(b);
    for (int iter = 0; iter < 200; ++iter) {
        if (fa < fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = sse(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = sse(b);
        }
    }
    const double c = std::exp(0.5 * (lo + hi));
    if (!std::isfinite(c)) throw std::runtime_error("fit_fidelity_model: fit did not converge");
    return c;
}

StrategyResult evaluate_strategy(const std::vector<CrosstalkMatrix>& ensemble, const Strategy& strategy) {
    if (ensemble.empty()) throw std::invalid_argument("evaluate_strategy: empty ensemble");
    const int base_d = ensemble.front().dim;
    for (const CrosstalkMatrix& m : ensemble)
        if (m.dim != base_d) throw std::invalid_argument("evaluate_strategy: inconsistent ensemble dimensions");

    int d = base_d;
    double scale = 1.0;
    switch (strategy.kind) {
        case StrategyKind::None:
        case StrategyKind::Spacing:
            // Spacing ensembles are already simulated at their own dimension.
            break;
        case StrategyKind::Hybrid:
            if (strategy.pol_fidelity < 0.5 || strategy.pol_fidelity > 1.0)
                throw std::invalid_argument("evaluate_strategy: pol_fidelity outside [0.5, 1]");
            d = 2 * base_d;
            scale = strategy.pol_fidelity;
            break;
    }

    const double threshold = fidelity_threshold(d);
    std::vector<double> series;
    series.reserve(ensemble.size());
    for (const CrosstalkMatrix& m : ensemble) series.push_back(scale * fidelity(m));

    StrategyResult r;
    r.stats = make_fidelity_stats(std::move(series), threshold);
    r.verdict = SecurityVerdict{d, threshold, r.stats.mean, r.stats.mean > threshold};
    return r;
}

}  // namespace oamsim
