#include "oamsim/aoloop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "oamsim/fft.hpp"
#include "oamsim/modes.hpp"

namespace oamsim {

namespace {

double influence_sigma(const DmConfig& cfg) {
    if (cfg.coupling <= 0.0 || cfg.coupling >= 1.0)
        throw std::invalid_argument("DmConfig: coupling must lie in (0, 1)");
    return cfg.pitch / std::sqrt(2.0 * std::log(1.0 / cfg.coupling));
}

// Cell-averaged Zernike gradients on the unit disc, shared per geometry.
struct WfsGeometry {
    Eigen::MatrixXd gx, gy;     // cells x (n_terms - 1), gradients wrt unit-radius coords
    std::vector<bool> covered;  // cell overlaps the pupil disc
};

const WfsGeometry& wfs_geometry(int n_lenslets, int n_terms) {
    static std::mutex mtx;
    static std::map<std::pair<int, int>, WfsGeometry> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_pair(n_lenslets, n_terms);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    WfsGeometry geo;
    const int cells = n_lenslets * n_lenslets;
    geo.gx.setZero(cells, n_terms - 1);
    geo.gy.setZero(cells, n_terms - 1);
    geo.covered.assign(cells, false);

    const int sub = 6;  // sample points per cell side
    const double cell = 2.0 / n_lenslets;  // unit-disc coordinates
    const double eps = 1e-5;
    for (int cy = 0; cy < n_lenslets; ++cy) {
        for (int cx = 0; cx < n_lenslets; ++cx) {
            const int c = cy * n_lenslets + cx;
            int count = 0;
            Eigen::VectorXd sx = Eigen::VectorXd::Zero(n_terms - 1);
            Eigen::VectorXd sy = Eigen::VectorXd::Zero(n_terms - 1);
            for (int py = 0; py < sub; ++py) {
                for (int px = 0; px < sub; ++px) {
                    const double x = -1.0 + (cx + (px + 0.5) / sub) * cell;
                    const double y = -1.0 + (cy + (py + 0.5) / sub) * cell;
                    if (x * x + y * y > 1.0) continue;
                    ++count;
                    for (int j = 2; j <= n_terms; ++j) {
                        auto eval = [&](double xx, double yy) {
                            return zernike_polar(j, std::hypot(xx, yy), std::atan2(yy, xx));
                        };
                        sx(j - 2) += (eval(x + eps, y) - eval(x - eps, y)) / (2.0 * eps);
                        sy(j - 2) += (eval(x, y + eps) - eval(x, y - eps)) / (2.0 * eps);
                    }
                }
            }
            if (count > 0) {
                geo.covered[c] = true;
                geo.gx.row(c) = sx.transpose() / count;
                geo.gy.row(c) = sy.transpose() / count;
            }
        }
    }
    return cache.emplace(key, std::move(geo)).first->second;
}

}  // namespace

WfsMeasurement wfs_measure(const ComplexField& beacon, const WfsConfig& cfg, Rng& rng) {
    if (cfg.n_lenslets < 4) throw std::invalid_argument("wfs_measure: need at least 4 lenslets per side");
    if (cfg.pupil_diameter <= 0.0) throw std::invalid_argument("wfs_measure: pupil_diameter not set");
    const GridSpec& g = beacon.grid;
    const int nl = cfg.n_lenslets;
    const int cells = nl * nl;
    const double half = 0.5 * cfg.pupil_diameter;
    const double cell = cfg.pupil_diameter / nl;

    std::vector<double> num_x(cells, 0.0), num_y(cells, 0.0), inten(cells, 0.0);
    const double inv2p = 1.0 / (2.0 * g.pitch());
    for (int iy = 1; iy < g.n - 1; ++iy) {
        const double y = g.coord(iy);
        if (y < -half || y >= half) continue;
        const int cy = static_cast<int>((y + half) / cell);
        for (int ix = 1; ix < g.n - 1; ++ix) {
            const double x = g.coord(ix);
            if (x < -half || x >= half) continue;
            const int cx = static_cast<int>((x + half) / cell);
            const int c = std::min(cy, nl - 1) * nl + std::min(cx, nl - 1);
            const cxd f = beacon.at(ix, iy);
            const cxd dfdx = (beacon.at(ix + 1, iy) - beacon.at(ix - 1, iy)) * inv2p;
            const cxd dfdy = (beacon.at(ix, iy + 1) - beacon.at(ix, iy - 1)) * inv2p;
            // I * dphi/dx = Im(conj(f) * df/dx); exact local phase gradient weight.
            num_x[c] += std::imag(std::conj(f) * dfdx);
            num_y[c] += std::imag(std::conj(f) * dfdy);
            inten[c] += std::norm(f);
        }
    }

    double mean_inten = 0.0;
    for (double v : inten) mean_inten += v;
    mean_inten /= cells;
    if (mean_inten <= 0.0) throw std::invalid_argument("wfs_measure: beacon carries no power");

    WfsMeasurement m;
    m.n_lenslets = nl;
    m.pupil_diameter = cfg.pupil_diameter;
    m.slopes_x.assign(cells, 0.0);
    m.slopes_y.assign(cells, 0.0);
    m.valid.assign(cells, false);
    std::normal_distribution<double> noise(0.0, cfg.slope_noise_rms > 0.0 ? cfg.slope_noise_rms : 1.0);
    int n_valid = 0;
    for (int c = 0; c < cells; ++c) {
        // Keep the draw count independent of validity so seeds stay aligned.
        const double nx = cfg.slope_noise_rms > 0.0 ? noise(rng) : 0.0;
        const double ny = cfg.slope_noise_rms > 0.0 ? noise(rng) : 0.0;
        if (inten[c] < 0.01 * mean_inten) continue;
        m.valid[c] = true;
        ++n_valid;
        m.slopes_x[c] = num_x[c] / inten[c] + nx;
        m.slopes_y[c] = num_y[c] / inten[c] + ny;
    }
    if (n_valid == 0) throw std::invalid_argument("wfs_measure: all subapertures invalid");
    return m;
}

ZernikeCoeffs reconstruct(const WfsMeasurement& m, int n_terms) {
    if (n_terms < 2) throw std::invalid_argument("reconstruct: n_terms must be >= 2");
    const WfsGeometry& geo = wfs_geometry(m.n_lenslets, n_terms);
    const int cells = m.n_lenslets * m.n_lenslets;

    std::vector<int> rows;
    for (int c = 0; c < cells; ++c)
        if (m.valid[c] && geo.covered[c]) rows.push_back(c);
    if (static_cast<int>(rows.size()) < n_terms)
        throw std::invalid_argument("reconstruct: slope system is rank-deficient (too few valid subapertures)");

    const double radius = 0.5 * m.pupil_diameter;
    const int nr = static_cast<int>(rows.size());
    Eigen::MatrixXd a(2 * nr, n_terms - 1);
    Eigen::VectorXd b(2 * nr);
    for (int i = 0; i < nr; ++i) {
        const int c = rows[i];
        // Physical slope [rad/m] = unit-disc gradient / pupil radius.
        a.row(i) = geo.gx.row(c) / radius;
        a.row(nr + i) = geo.gy.row(c) / radius;
        b(i) = m.slopes_x[c];
        b(nr + i) = m.slopes_y[c];
    }
    Eigen::VectorXd sol = (a.transpose() * a).ldlt().solve(a.transpose() * b);

    ZernikeCoeffs coeffs;
    coeffs.coeffs.assign(n_terms, 0.0);
    for (int j = 2; j <= n_terms; ++j) coeffs.coeffs[j - 1] = sol(j - 2);
    return coeffs;
}

std::vector<std::pair<double, double>> dm_actuator_positions(const DmConfig& cfg) {
    if (cfg.n_act < 2) throw std::invalid_argument("DmConfig: n_act must be >= 2");
    std::vector<std::pair<double, double>> pos;
    const double half = 0.5 * (cfg.n_act - 1) * cfg.pitch;
    for (int iy = 0; iy < cfg.n_act; ++iy) {
        for (int ix = 0; ix < cfg.n_act; ++ix) {
            const bool corner = (ix == 0 || ix == cfg.n_act - 1) && (iy == 0 || iy == cfg.n_act - 1);
            if (corner) continue;
            pos.emplace_back(ix * cfg.pitch - half, iy * cfg.pitch - half);
        }
    }
    return pos;
}

RealMap dm_surface(const DmState& state, const DmConfig& cfg, const GridSpec& grid) {
    const auto pos = dm_actuator_positions(cfg);
    if (state.commands.size() != pos.size())
        throw std::invalid_argument("dm_surface: command count does not match actuator count");
    const double sigma = influence_sigma(cfg);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    RealMap map(grid);
    for (std::size_t a = 0; a < pos.size(); ++a) {
        const double cmd = state.commands[a];
        if (cmd == 0.0) continue;
        for (int iy = 0; iy < grid.n; ++iy) {
            const double dy = grid.coord(iy) - pos[a].second;
            for (int ix = 0; ix < grid.n; ++ix) {
                const double dx = grid.coord(ix) - pos[a].first;
                map.at(ix, iy) += cmd * std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
    }
    return map;
}

DmState dm_fit(const RealMap& target_phase, const DmConfig& cfg, const Aperture& pupil) {
    const auto pos = dm_actuator_positions(cfg);
    const GridSpec& g = target_phase.grid;
    const double sigma = influence_sigma(cfg);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double radius = 0.5 * pupil.diameter;

    std::vector<std::pair<int, int>> pix;
    for (int iy = 0; iy < g.n; ++iy) {
        const double y = g.coord(iy) - pupil.center_y;
        for (int ix = 0; ix < g.n; ++ix) {
            const double x = g.coord(ix) - pupil.center_x;
            if (x * x + y * y <= radius * radius) pix.emplace_back(ix, iy);
        }
    }
    if (pix.size() < pos.size()) throw std::invalid_argument("dm_fit: pupil under-samples the actuator grid");

    Eigen::MatrixXd a(pix.size(), pos.size());
    Eigen::VectorXd b(pix.size());
    for (std::size_t i = 0; i < pix.size(); ++i) {
        const double x = g.coord(pix[i].first);
        const double y = g.coord(pix[i].second);
        for (std::size_t k = 0; k < pos.size(); ++k) {
            const double dx = x - pos[k].first;
            const double dy = y - pos[k].second;
            a(i, k) = std::exp(-(dx * dx + dy * dy) * inv2s2);
        }
        b(i) = target_phase.at(pix[i].first, pix[i].second);
    }
    Eigen::VectorXd sol = (a.transpose() * a).ldlt().solve(a.transpose() * b);

    DmState st;
    st.commands.resize(pos.size());
    for (std::size_t k = 0; k < pos.size(); ++k) {
        double c = sol(k);
        if (std::abs(c) > cfg.stroke_limit) {
            c = std::copysign(cfg.stroke_limit, c);
            st.saturated = true;
        }
        st.commands[k] = c;
    }
    return st;
}

namespace {

double erf_inv(double r) {
    r = std::clamp(r, -0.999999, 0.999999);
    // Newton iteration on erf(t) - r, started from a logit-like guess.
    double t = 0.886226925 * r;  // sqrt(pi)/2 * r, exact slope at 0
    for (int i = 0; i < 60; ++i) {
        const double err = std::erf(t) - r;
        const double deriv = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-t * t);
        const double step = err / deriv;
        t -= step;
        if (std::abs(step) < 1e-14) break;
    }
    return t;
}

}  // namespace

std::pair<double, double> quadcell_measure(const ComplexField& beam, double noise_rms, Rng& rng) {
    const GridSpec& g = beam.grid;
    // Moments of the spot, iteratively windowed to the core (a field stop in
    // front of the detector). Without the stop, halo light from residual
    // aberrations inflates the width estimate and with it the responsivity,
    // which can push the tip-tilt loop gain past its stability margin.
    double total = 0.0, rx = 0.0, ry = 0.0, mx = 0.0, my = 0.0, wx = 0.0, wy = 0.0;
    for (int pass = 0; pass < 3; ++pass) {
        const bool windowed = pass > 0;
        const double cxp = mx, cyp = my;
        const double hx = 1.5 * wx, hy = 1.5 * wy;  // 3 sigma
        double t = 0.0, sx = 0.0, sy = 0.0, cx = 0.0, cy = 0.0, vx = 0.0, vy = 0.0;
        for (int iy = 0; iy < g.n; ++iy) {
            const double y = g.coord(iy);
            if (windowed && std::abs(y - cyp) > hy) continue;
            for (int ix = 0; ix < g.n; ++ix) {
                const double x = g.coord(ix);
                if (windowed && std::abs(x - cxp) > hx) continue;
                const double w = std::norm(beam.at(ix, iy));
                t += w;
                cx += w * x;
                cy += w * y;
                vx += w * (x - cxp) * (x - cxp);
                vy += w * (y - cyp) * (y - cyp);
                // Pixels on a split line share half-half between the halves.
                sx += w * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
                sy += w * (y > 0.0 ? 1.0 : (y < 0.0 ? -1.0 : 0.0));
            }
        }
        if (t <= 0.0) {
            if (pass == 0) throw std::invalid_argument("quadcell_measure: zero-power beam");
            break;  // window collapsed; keep the previous pass's moments
        }
        total = t;
        rx = sx;
        ry = sy;
        mx = cx / t;
        my = cy / t;
        // Gaussian spot: per-axis variance = w^2/4.
        wx = 2.0 * std::sqrt(vx / t);
        wy = 2.0 * std::sqrt(vy / t);
    }
    double ex = (wx / std::numbers::sqrt2) * erf_inv(rx / total);
    double ey = (wy / std::numbers::sqrt2) * erf_inv(ry / total);
    if (noise_rms > 0.0) {
        std::normal_distribution<double> noise(0.0, noise_rms);
        ex += noise(rng);
        ey += noise(rng);
    }
    return {ex, ey};
}

SteeringAngles tip_tilt_step(std::pair<double, double> measured, double lever_arm,
                             const SteeringAngles& state, double gain) {
    if (lever_arm <= 0.0) throw std::invalid_argument("tip_tilt_step: lever arm must be positive");
    SteeringAngles out = state;
    out.theta_x += gain * measured.first / lever_arm;
    out.theta_y += gain * measured.second / lever_arm;
    return out;
}

ComplexField focal_plane_field(const ComplexField& pupil_field, double focal_length) {
    const GridSpec& g = pupil_field.grid;
    const int n = g.n;
    const int h = n / 2;
    // fftshift-conjugated transform so that centered coordinates map to
    // centered focal coordinates.
    ComplexField tmp(g);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            tmp.at(ix, iy) = pupil_field.at((ix + h) % n, (iy + h) % n);
    fft::forward2d(tmp.amplitude, n);
    ComplexField out;
    out.grid = GridSpec{n, g.wavelength * focal_length / g.pitch(), g.wavelength};
    out.amplitude.resize(tmp.amplitude.size());
    const double scale = g.pitch() * g.pitch() / (g.wavelength * focal_length);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            out.at(ix, iy) = tmp.at((ix + h) % n, (iy + h) % n) * scale;
    return out;
}

void write_telemetry_csv(const Telemetry& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_telemetry_csv: cannot open " + path);
    out << "frame,time_s,residual_rms_rad,centroid_x_m,centroid_y_m,saturated_actuators\n";
    for (const TelemetryFrame& f : t.frames) {
        out << f.frame << ',' << f.time_s << ',' << f.residual_rms_rad << ',' << f.centroid_x_m << ','
            << f.centroid_y_m << ',' << f.saturated_actuators << '\n';
    }
}

AoSystem::AoSystem(const AoConfig& cfg, const GridSpec& grid)
    : cfg_(cfg), grid_(grid), correction_phase_(grid) {
    if (cfg_.wfs.pupil_diameter <= 0.0)
        throw std::invalid_argument("AoSystem: wfs.pupil_diameter not set");
    if (cfg_.loop.latency_frames < 1)
        throw std::invalid_argument("AoSystem: latency_frames must be >= 1");
    if (cfg_.loop.gain <= 0.0 || cfg_.loop.gain > 1.0)
        throw std::invalid_argument("AoSystem: gain must lie in (0, 1]");
    if (cfg_.wfs.n_terms > cfg_.wfs.n_lenslets * cfg_.wfs.n_lenslets)
        throw std::invalid_argument("AoSystem: n_terms exceeds the subaperture count");
    if (cfg_.loop.loop_rate > cfg_.wfs.frame_rate + 1e-9)
        throw std::invalid_argument("AoSystem: loop_rate exceeds the WFS frame rate");

    const auto pos = dm_actuator_positions(cfg_.dm);
    const int n_act = static_cast<int>(pos.size());

    // Per-actuator influence maps, reused every frame.
    influence_.reserve(pos.size());
    for (int a = 0; a < n_act; ++a) {
        DmState poke;
        poke.commands.assign(pos.size(), 0.0);
        poke.commands[a] = 1.0;
        influence_.push_back(dm_surface(poke, cfg_.dm, grid_));
    }

    // Modal control matrix: least-squares DM commands reproducing each
    // reconstructed Zernike mode over the sensed pupil.
    const Aperture pupil{cfg_.wfs.pupil_diameter, 0.0, 0.0};
    const int n_terms = cfg_.wfs.n_terms;
    modal_control_.setZero(n_act, n_terms - 1);
    DmConfig unclamped = cfg_.dm;
    unclamped.stroke_limit = std::numeric_limits<double>::infinity();
    for (int j = 2; j <= n_terms; ++j) {
        RealMap zj = zernike_eval(j, grid_, cfg_.wfs.pupil_diameter);
        DmState fit = dm_fit(zj, unclamped, pupil);
        for (int a = 0; a < n_act; ++a) modal_control_(a, j - 2) = fit.commands[a];
    }

    applied_dm_.commands.assign(pos.size(), 0.0);
}

ComplexField AoSystem::beacon_input() const {
    if (cfg_.beacon_waist <= 0.0) throw std::invalid_argument("AoSystem: beacon_waist not set");
    return oam_field({0, cfg_.beacon_waist}, grid_);
}

ComplexField AoSystem::apply_correction(const ComplexField& f) const {
    ComplexField out = f;
    const double k = grid_.wavenumber();
    for (int iy = 0; iy < grid_.n; ++iy) {
        const double y = grid_.coord(iy);
        for (int ix = 0; ix < grid_.n; ++ix) {
            const double x = grid_.coord(ix);
            const double tilt = -k * (steering_.theta_x * x + steering_.theta_y * y);
            out.at(ix, iy) *= std::polar(1.0, correction_phase_.at(ix, iy) + tilt);
        }
    }
    return out;
}

void AoSystem::observe(const ComplexField& corrected_beacon, Rng& rng) {
    Pending next;
    next.dm = applied_dm_;
    next.steering = steering_;

    TelemetryFrame tf;
    tf.frame = frame_;
    tf.time_s = frame_ / cfg_.loop.loop_rate;

    if (cfg_.loop.enable_tip_tilt) {
        ComplexField focal = focal_plane_field(corrected_beacon, cfg_.pd_lever_arm);
        auto disp = quadcell_measure(focal, cfg_.pd_noise_rms, rng);
        tf.centroid_x_m = disp.first;
        tf.centroid_y_m = disp.second;
        next.steering = tip_tilt_step(disp, cfg_.pd_lever_arm, steering_, cfg_.loop.tip_tilt_gain);
    }

    WfsMeasurement meas = wfs_measure(corrected_beacon, cfg_.wfs, rng);
    ZernikeCoeffs coeffs = reconstruct(meas, cfg_.wfs.n_terms);
    tf.residual_rms_rad = coeffs.rms_no_piston();

    if (cfg_.loop.enable_high_order) {
        Eigen::VectorXd c(cfg_.wfs.n_terms - 1);
        for (int j = 2; j <= cfg_.wfs.n_terms; ++j) c(j - 2) = coeffs[j];
        // Tip/tilt belongs to the steering stage; driving it through the DM
        // as well stacks two integrators on one error and destabilizes both.
        if (cfg_.loop.enable_tip_tilt) c(0) = c(1) = 0.0;
        Eigen::VectorXd delta = modal_control_ * (-c);
        int saturated = 0;
        for (std::size_t a = 0; a < next.dm.commands.size(); ++a) {
            double cmd = next.dm.commands[a] + cfg_.loop.gain * delta(static_cast<int>(a));
            if (std::abs(cmd) > cfg_.dm.stroke_limit) {
                cmd = std::copysign(cfg_.dm.stroke_limit, cmd);
                ++saturated;
            }
            next.dm.commands[a] = cmd;
        }
        next.dm.saturated = saturated > 0;
        tf.saturated_actuators = saturated;
    }

    pending_.push_back(std::move(next));
    telemetry_.frames.push_back(tf);
    ++frame_;
}

void AoSystem::commit() {
    if (static_cast<int>(pending_.size()) < cfg_.loop.latency_frames) return;
    applied_dm_ = pending_.front().dm;
    steering_ = pending_.front().steering;
    pending_.pop_front();
    rebuild_correction_phase();
}

void AoSystem::rebuild_correction_phase() {
    std::fill(correction_phase_.values.begin(), correction_phase_.values.end(), 0.0);
    for (std::size_t a = 0; a < applied_dm_.commands.size(); ++a) {
        const double cmd = applied_dm_.commands[a];
        if (cmd == 0.0) continue;
        const std::vector<double>& inf = influence_[a].values;
        for (std::size_t i = 0; i < correction_phase_.values.size(); ++i)
            correction_phase_.values[i] += cmd * inf[i];
    }
}

Telemetry run_closed_loop(TurbulenceChannel& channel, const AoConfig& cfg, double duration,
                          std::uint64_t seed) {
    AoSystem ao(cfg, channel.grid());
    Rng rng(seed);
    const ComplexField beacon0 = ao.beacon_input();
    const double dt = 1.0 / cfg.loop.loop_rate;
    const int frames = static_cast<int>(std::llround(duration * cfg.loop.loop_rate));
    for (int k = 0; k < frames; ++k) {
        channel.advance(dt);
        ComplexField received = channel.transmit(beacon0);
        ComplexField corrected = ao.apply_correction(received);
        ao.observe(corrected, rng);
        ao.commit();
    }
    return ao.telemetry();
}

}  // namespace oamsim
