#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "oamsim/common.hpp"
#include "oamsim/field.hpp"
#include "oamsim/zernike.hpp"

namespace oamsim {

struct WfsConfig {
    int n_lenslets = 23;          // per side across the pupil
    int n_terms = 15;             // Zernike terms reconstructed (Noll, incl. piston slot)
    double frame_rate = 500.0;    // [Hz]
    double slope_noise_rms = 0.0; // [rad/m] per subaperture, per axis
    double pupil_diameter = 0.0;  // [m] sensed pupil (beacon / DM footprint)
};

struct WfsMeasurement {
    int n_lenslets = 0;
    double pupil_diameter = 0.0;
    std::vector<double> slopes_x, slopes_y;  // [rad/m], one per subaperture cell
    std::vector<bool> valid;
};

struct DmConfig {
    int n_act = 6;               // actuators per side, four corners removed
    double pitch = 0.0;          // [m]
    double coupling = 0.15;      // influence value at the neighboring actuator
    double stroke_limit = 50.0;  // [rad] of phase

    int total_actuators() const { return n_act * n_act - 4; }
};

struct DmState {
    std::vector<double> commands;  // [rad], one per actuator
    bool saturated = false;
};

struct LoopConfig {
    double gain = 0.3;
    double loop_rate = 500.0;  // [Hz]
    int latency_frames = 1;
    double tip_tilt_gain = 0.5;
    bool enable_tip_tilt = true;
    bool enable_high_order = true;
};

struct SteeringAngles {
    double theta_x = 0.0, theta_y = 0.0;  // [rad]
};

// Photon-budget coupling of WFS speed and accuracy: running the sensor
// faster leaves less light per frame, so slope noise grows as the square
// root of the rate ratio (doubling the rate multiplies noise by sqrt 2).
inline double slope_noise_for_rate(double base_noise, double base_rate, double rate) {
    if (base_rate <= 0.0 || rate <= 0.0)
        throw std::invalid_argument("slope_noise_for_rate: rates must be positive");
    return base_noise * std::sqrt(rate / base_rate);
}

// Per-subaperture intensity-weighted mean phase gradients of the beacon,
// plus Gaussian measurement noise. Throws if every subaperture is dark.
WfsMeasurement wfs_measure(const ComplexField& beacon, const WfsConfig& cfg, Rng& rng);

// Least-squares slope-to-Zernike solve; piston is unobservable and set to 0.
ZernikeCoeffs reconstruct(const WfsMeasurement& m, int n_terms);

// Actuator positions on the DM footprint, row-major with corners removed.
std::vector<std::pair<double, double>> dm_actuator_positions(const DmConfig& cfg);

RealMap dm_surface(const DmState& state, const DmConfig& cfg, const GridSpec& grid);

// Least-squares commands minimizing RMS(target - surface) over the pupil;
// commands are clamped to the stroke limit with the saturation flag set.
DmState dm_fit(const RealMap& target_phase, const DmConfig& cfg, const Aperture& pupil);

// Quad-cell position estimate from a focal-spot intensity pattern. The
// transfer curve is inverted assuming a Gaussian spot whose radius is taken
// from the pattern's second moments; large displacements clip.
std::pair<double, double> quadcell_measure(const ComplexField& beam, double noise_rms, Rng& rng);

// Integrator update of the steering state toward cancelling the measured
// focal-plane displacement; lever_arm maps displacement to angle.
SteeringAngles tip_tilt_step(std::pair<double, double> measured, double lever_arm,
                             const SteeringAngles& state, double gain);

// Field in the focal plane of a lens with the given focal length (grid pitch
// rescales to lambda * f / extent).
ComplexField focal_plane_field(const ComplexField& pupil_field, double focal_length);

struct TelemetryFrame {
    int frame = 0;
    double time_s = 0.0;
    double residual_rms_rad = 0.0;
    double centroid_x_m = 0.0, centroid_y_m = 0.0;
    int saturated_actuators = 0;
};

struct Telemetry {
    std::vector<TelemetryFrame> frames;
};

void write_telemetry_csv(const Telemetry& t, const std::string& path);

struct AoConfig {
    WfsConfig wfs;
    DmConfig dm;
    LoopConfig loop;
    double beacon_waist = 0.0;   // [m]
    double pd_lever_arm = 0.2;   // [m] focal length of the quad-cell leg
    double pd_noise_rms = 0.0;   // [m] position noise on the quad cell
};

// Abstract turbulent channel driven frame by frame.
class TurbulenceChannel {
  public:
    virtual ~TurbulenceChannel() = default;
    virtual void advance(double dt) = 0;
    virtual ComplexField transmit(const ComplexField& input) const = 0;
    virtual const GridSpec& grid() const = 0;
};

// Adapter for tests and simple experiments.
class FunctionChannel : public TurbulenceChannel {
  public:
    FunctionChannel(GridSpec g, std::function<ComplexField(const ComplexField&)> fn,
                    std::function<void(double)> adv = {})
        : grid_(g), fn_(std::move(fn)), adv_(std::move(adv)) {}
    void advance(double dt) override {
        if (adv_) adv_(dt);
    }
    ComplexField transmit(const ComplexField& input) const override { return fn_(input); }
    const GridSpec& grid() const override { return grid_; }

  private:
    GridSpec grid_;
    std::function<ComplexField(const ComplexField&)> fn_;
    std::function<void(double)> adv_;
};

// Stateful closed-loop controller: FSM tip-tilt stage plus modal
// WFS -> Zernike -> DM stage with an integrator and frame latency.
class AoSystem {
  public:
    AoSystem(const AoConfig& cfg, const GridSpec& grid);

    // Correction currently applied (FSM tilt phase + DM surface phase).
    ComplexField apply_correction(const ComplexField& f) const;

    // Measure the corrected beacon and queue the next command update.
    // Commands computed at frame k become active latency_frames later.
    void observe(const ComplexField& corrected_beacon, Rng& rng);

    // Activate the oldest pending command set; call once per frame.
    void commit();

    const Telemetry& telemetry() const { return telemetry_; }
    const DmState& dm_state() const { return applied_dm_; }
    const SteeringAngles& steering() const { return steering_; }
    const AoConfig& config() const { return cfg_; }
    ComplexField beacon_input() const;

  private:
    struct Pending {
        DmState dm;
        SteeringAngles steering;
    };

    void rebuild_correction_phase();

    AoConfig cfg_;
    GridSpec grid_;
    Eigen::MatrixXd modal_control_;            // actuator commands per Zernike mode
    std::vector<RealMap> influence_;           // per-actuator surface maps
    DmState applied_dm_;
    SteeringAngles steering_;
    std::deque<Pending> pending_;
    RealMap correction_phase_;
    Telemetry telemetry_;
    int frame_ = 0;
};

// Drive the AO chain over a channel for the given duration at loop_rate.
Telemetry run_closed_loop(TurbulenceChannel& channel, const AoConfig& cfg, double duration,
                          std::uint64_t seed);

}  // namespace oamsim
