#include "oamsim/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "oamsim/common.hpp"

namespace oamsim {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key))
            throw std::invalid_argument("scenario: unknown key \"" + key + "\" in " + ctx);
    }
}

}  // namespace

double LinkScenario::layer_r0() const {
    if (d_over_r0 > 0.0) {
        if (beam_diameter <= 0.0)
            throw std::invalid_argument("scenario: d_over_r0 requires beam_diameter");
        return (beam_diameter / d_over_r0) *
               std::pow(static_cast<double>(turbulence.n_screens), 3.0 / 5.0);
    }
    if (turbulence.cn2 <= 0.0) return 0.0;  // turbulence off
    return cn2_to_r0(turbulence.cn2, turbulence.path_length, turbulence.wavelength) *
           std::pow(static_cast<double>(turbulence.n_screens), 3.0 / 5.0);
}

void LinkScenario::validate() const {
    if (grid.n == 0) throw std::invalid_argument("scenario: grid not set");
    if (tx_waist <= 0.0) throw std::invalid_argument("scenario: tx_waist must be positive");
    if (n_realizations < 1 || frames_per_realization < 1)
        throw std::invalid_argument("scenario: need at least one realization and frame");

    double total = 0.0;
    std::vector<int> screen_refs;
    for (const PathElement& e : path) {
        switch (e.kind) {
            case PathElement::Kind::Propagate: total += e.distance; break;
            case PathElement::Kind::Screen: screen_refs.push_back(e.layer); break;
            case PathElement::Kind::Stop: break;
        }
    }
    if (std::abs(total - link_length) > 1e-9 * std::max(1.0, link_length))
        throw std::invalid_argument("scenario: path distances do not sum to link_length");
    std::vector<int> sorted = screen_refs;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(static_cast<std::size_t>(turbulence.n_screens));
    for (int i = 0; i < turbulence.n_screens; ++i) expect[static_cast<std::size_t>(i)] = i;
    if (sorted != expect)
        throw std::invalid_argument("scenario: each screen layer must be referenced exactly once");
    if (!measure_oam && !measure_ang)
        throw std::invalid_argument("scenario: at least one basis must be measured");
    if (pol_fidelity < 0.5 || pol_fidelity > 1.0)
        throw std::invalid_argument("scenario: pol_fidelity outside [0.5, 1]");
}

LinkScenario preset(const std::string& name) {
    LinkScenario s;
    if (name == "lab") {
        // Short indoor link; four co-located screens at the turbulence cell,
        // turbulence level set through D/r0 directly.
        s.name = "lab";
        s.grid = make_grid(256, 0.04, 633e-9);
        s.tx_waist = 2.5e-3;
        s.beam_diameter = 5.0e-3;
        s.link_length = 3.3;
        s.path = {
            {PathElement::Kind::Propagate, 1.5, 0, {}},
            {PathElement::Kind::Screen, 0.0, 0, {}},
            {PathElement::Kind::Screen, 0.0, 1, {}},
            {PathElement::Kind::Screen, 0.0, 2, {}},
            {PathElement::Kind::Screen, 0.0, 3, {}},
            {PathElement::Kind::Propagate, 1.8, 0, {}},
            {PathElement::Kind::Stop, 0.0, 0, Aperture{0.0508, 0.0, 0.0}},
        };
        s.turbulence = TurbulenceParams{0.0, 3.3, 633e-9, 0.08, 0.06, 4, 0.0};
        s.d_over_r0 = 0.884;
        s.encoding = build_space(2, 1, s.tx_waist, BasisKind::OAM);
        s.measure_oam = true;
        s.measure_ang = false;
        s.ao.enabled = false;
        s.ao.config.wfs = WfsConfig{23, 15, 500.0, 20.0, 0.010};
        s.ao.config.dm = DmConfig{6, 0.002, 0.15, 50.0};
        s.ao.config.loop = LoopConfig{0.3, 500.0, 1, 0.5, true, true};
        s.ao.config.beacon_waist = 5.0e-3;
        s.ao.config.pd_lever_arm = 0.2;
        s.ao.config.pd_noise_rms = 0.0;
        s.n_realizations = 50;
        s.frames_per_realization = 1;
        s.warmup_frames = 0;
        s.seed = 1;
        return s;
    }
    if (name == "campus") {
        // 340 m one-way path with five distributed screens and a finite
        // collection aperture; turbulence level set through Cn^2.
        s.name = "campus";
        s.grid = make_grid(2048, 0.8, 633e-9);
        s.tx_waist = 2.3e-3;
        s.beam_diameter = 0.0762;
        s.link_length = 340.0;
        s.path = {
            {PathElement::Kind::Propagate, 34.0, 0, {}},
            {PathElement::Kind::Screen, 0.0, 0, {}},
            {PathElement::Kind::Propagate, 68.0, 0, {}},
            {PathElement::Kind::Screen, 0.0, 1, {}},
            {PathElement::Kind::Propagate, 68.0, 0, {}},
            {PathElement::Kind::Screen, 0.0, 2, {}},
            {PathElement::Kind::Propagate, 68.0, 0, {}},
            {PathElement::Kind::Screen, 0.0, 3, {}},
            {PathElement::Kind::Propagate, 68.0, 0, {}},
            {PathElement::Kind::Screen, 0.0, 4, {}},
            {PathElement::Kind::Propagate, 34.0, 0, {}},
            {PathElement::Kind::Stop, 0.0, 0, Aperture{0.0762, 0.0, 0.0}},
        };
        s.turbulence = TurbulenceParams{1.9e-14, 340.0, 633e-9, 2.0, 0.5, 5, 0.0};
        s.d_over_r0 = 0.0;
        s.encoding = build_space(3, 1, s.tx_waist, BasisKind::OAM);
        s.measure_oam = true;
        s.measure_ang = false;
        s.ao.enabled = false;
        s.ao.config.wfs = WfsConfig{23, 15, 500.0, 20.0, 0.0762};
        s.ao.config.dm = DmConfig{12, 0.0762 / 11.0, 0.15, 50.0};
        s.ao.config.loop = LoopConfig{0.3, 500.0, 1, 0.5, true, true};
        s.ao.config.beacon_waist = 2.3e-3;
        s.ao.config.pd_lever_arm = 0.2;
        s.ao.config.pd_noise_rms = 0.0;
        s.n_realizations = 10;
        s.frames_per_realization = 1;
        s.warmup_frames = 0;
        s.seed = 1;
        s.nf_metadata = 4.89;
        return s;
    }
    throw std::invalid_argument("preset: unknown scenario \"" + name + "\" (expected lab or campus)");
}

json scenario_to_json(const LinkScenario& s) {
    json j;
    j["name"] = s.name;
    j["grid"] = {{"n", s.grid.n}, {"extent_m", s.grid.extent}, {"wavelength_m", s.grid.wavelength}};
    j["tx_waist_m"] = s.tx_waist;
    j["beam_diameter_m"] = s.beam_diameter;
    j["link_length_m"] = s.link_length;
    json path = json::array();
    for (const PathElement& e : s.path) {
        switch (e.kind) {
            case PathElement::Kind::Propagate:
                path.push_back({{"type", "propagate"}, {"distance_m", e.distance}});
                break;
            case PathElement::Kind::Screen:
                path.push_back({{"type", "screen"}, {"layer", e.layer}});
                break;
            case PathElement::Kind::Stop:
                path.push_back({{"type", "aperture"},
                                {"diameter_m", e.aperture.diameter},
                                {"center_x_m", e.aperture.center_x},
                                {"center_y_m", e.aperture.center_y}});
                break;
        }
    }
    j["path"] = path;
    j["turbulence"] = {{"cn2", s.turbulence.cn2},
                       {"path_length_m", s.turbulence.path_length},
                       {"wavelength_m", s.turbulence.wavelength},
                       {"wind_vx", s.turbulence.wind_vx},
                       {"wind_vy", s.turbulence.wind_vy},
                       {"n_screens", s.turbulence.n_screens},
                       {"outer_scale_m", s.turbulence.outer_scale},
                       {"d_over_r0", s.d_over_r0}};
    j["encoding"] = {{"kind", s.encoding.basis_kind == BasisKind::OAM ? "OAM" : "ANG"},
                     {"max_ell", s.encoding.max_ell},
                     {"spacing", s.encoding.spacing},
                     {"waist_m", s.encoding.waist}};
    j["pol_fidelity"] = s.pol_fidelity;
    j["measure_oam"] = s.measure_oam;
    j["measure_ang"] = s.measure_ang;
    j["ao"] = {{"enabled", s.ao.enabled},
               {"wfs",
                {{"n_lenslets", s.ao.config.wfs.n_lenslets},
                 {"n_terms", s.ao.config.wfs.n_terms},
                 {"frame_rate_hz", s.ao.config.wfs.frame_rate},
                 {"slope_noise_rms", s.ao.config.wfs.slope_noise_rms},
                 {"pupil_diameter_m", s.ao.config.wfs.pupil_diameter}}},
               {"dm",
                {{"n_act", s.ao.config.dm.n_act},
                 {"pitch_m", s.ao.config.dm.pitch},
                 {"coupling", s.ao.config.dm.coupling},
                 {"stroke_limit_rad", s.ao.config.dm.stroke_limit}}},
               {"loop",
                {{"gain", s.ao.config.loop.gain},
                 {"loop_rate_hz", s.ao.config.loop.loop_rate},
                 {"latency_frames", s.ao.config.loop.latency_frames},
                 {"tip_tilt_gain", s.ao.config.loop.tip_tilt_gain},
                 {"enable_tip_tilt", s.ao.config.loop.enable_tip_tilt},
                 {"enable_high_order", s.ao.config.loop.enable_high_order}}},
               {"beacon_waist_m", s.ao.config.beacon_waist},
               {"pd_lever_arm_m", s.ao.config.pd_lever_arm},
               {"pd_noise_rms_m", s.ao.config.pd_noise_rms}};
    j["n_realizations"] = s.n_realizations;
    j["frames_per_realization"] = s.frames_per_realization;
    j["warmup_frames"] = s.warmup_frames;
    j["seed"] = s.seed;
    j["nf_metadata"] = s.nf_metadata;
    return j;
}

LinkScenario scenario_from_json(const json& j) {
    check_keys(j,
               {"name", "grid", "tx_waist_m", "beam_diameter_m", "link_length_m", "path", "turbulence",
                "encoding", "pol_fidelity", "measure_oam", "measure_ang", "ao", "n_realizations",
                "frames_per_realization", "warmup_frames", "seed", "nf_metadata"},
               "scenario");
    LinkScenario s;
    s.name = j.at("name").get<std::string>();
    const json& jg = j.at("grid");
    check_keys(jg, {"n", "extent_m", "wavelength_m"}, "grid");
    s.grid = make_grid(jg.at("n").get<int>(), jg.at("extent_m").get<double>(),
                       jg.at("wavelength_m").get<double>());
    s.tx_waist = j.at("tx_waist_m").get<double>();
    s.beam_diameter = j.at("beam_diameter_m").get<double>();
    s.link_length = j.at("link_length_m").get<double>();
    for (const json& je : j.at("path")) {
        check_keys(je, {"type", "distance_m", "layer", "diameter_m", "center_x_m", "center_y_m"},
                   "path element");
        PathElement e;
        const std::string type = je.at("type").get<std::string>();
        if (type == "propagate") {
            e.kind = PathElement::Kind::Propagate;
            e.distance = je.at("distance_m").get<double>();
        } else if (type == "screen") {
            e.kind = PathElement::Kind::Screen;
            e.layer = je.at("layer").get<int>();
        } else if (type == "aperture") {
            e.kind = PathElement::Kind::Stop;
            e.aperture.diameter = je.at("diameter_m").get<double>();
            e.aperture.center_x = je.value("center_x_m", 0.0);
            e.aperture.center_y = je.value("center_y_m", 0.0);
        } else {
            throw std::invalid_argument("scenario: unknown path element type \"" + type + "\"");
        }
        s.path.push_back(e);
    }
    const json& jt = j.at("turbulence");
    check_keys(jt,
               {"cn2", "path_length_m", "wavelength_m", "wind_vx", "wind_vy", "n_screens",
                "outer_scale_m", "d_over_r0"},
               "turbulence");
    s.turbulence.cn2 = jt.at("cn2").get<double>();
    s.turbulence.path_length = jt.at("path_length_m").get<double>();
    s.turbulence.wavelength = jt.at("wavelength_m").get<double>();
    s.turbulence.wind_vx = jt.at("wind_vx").get<double>();
    s.turbulence.wind_vy = jt.at("wind_vy").get<double>();
    s.turbulence.n_screens = jt.at("n_screens").get<int>();
    s.turbulence.outer_scale = jt.value("outer_scale_m", 0.0);
    s.d_over_r0 = jt.value("d_over_r0", 0.0);
    const json& je = j.at("encoding");
    check_keys(je, {"kind", "max_ell", "spacing", "waist_m"}, "encoding");
    const std::string kind = je.at("kind").get<std::string>();
    if (kind != "OAM" && kind != "ANG")
        throw std::invalid_argument("scenario: encoding kind must be OAM or ANG");
    s.encoding = build_space(je.at("max_ell").get<int>(), je.at("spacing").get<int>(),
                             je.at("waist_m").get<double>(),
                             kind == "OAM" ? BasisKind::OAM : BasisKind::ANG);
    s.pol_fidelity = j.value("pol_fidelity", 1.0);
    s.measure_oam = j.value("measure_oam", true);
    s.measure_ang = j.value("measure_ang", false);
    const json& ja = j.at("ao");
    check_keys(ja, {"enabled", "wfs", "dm", "loop", "beacon_waist_m", "pd_lever_arm_m", "pd_noise_rms_m"},
               "ao");
    s.ao.enabled = ja.at("enabled").get<bool>();
    const json& jw = ja.at("wfs");
    check_keys(jw, {"n_lenslets", "n_terms", "frame_rate_hz", "slope_noise_rms", "pupil_diameter_m"},
               "ao.wfs");
    s.ao.config.wfs = WfsConfig{jw.at("n_lenslets").get<int>(), jw.at("n_terms").get<int>(),
                                jw.at("frame_rate_hz").get<double>(),
                                jw.at("slope_noise_rms").get<double>(),
                                jw.at("pupil_diameter_m").get<double>()};
    const json& jd = ja.at("dm");
    check_keys(jd, {"n_act", "pitch_m", "coupling", "stroke_limit_rad"}, "ao.dm");
    s.ao.config.dm = DmConfig{jd.at("n_act").get<int>(), jd.at("pitch_m").get<double>(),
                              jd.at("coupling").get<double>(), jd.at("stroke_limit_rad").get<double>()};
    const json& jl = ja.at("loop");
    check_keys(jl,
               {"gain", "loop_rate_hz", "latency_frames", "tip_tilt_gain", "enable_tip_tilt",
                "enable_high_order"},
               "ao.loop");
    s.ao.config.loop = LoopConfig{jl.at("gain").get<double>(),
                                  jl.at("loop_rate_hz").get<double>(),
                                  jl.at("latency_frames").get<int>(),
                                  jl.at("tip_tilt_gain").get<double>(),
                                  jl.value("enable_tip_tilt", true),
                                  jl.value("enable_high_order", true)};
    s.ao.config.beacon_waist = ja.at("beacon_waist_m").get<double>();
    s.ao.config.pd_lever_arm = ja.at("pd_lever_arm_m").get<double>();
    s.ao.config.pd_noise_rms = ja.value("pd_noise_rms_m", 0.0);
    s.n_realizations = j.at("n_realizations").get<int>();
    s.frames_per_realization = j.at("frames_per_realization").get<int>();
    s.warmup_frames = j.value("warmup_frames", 0);
    s.seed = j.at("seed").get<std::uint64_t>();
    s.nf_metadata = j.value("nf_metadata", 0.0);
    s.validate();
    return s;
}

LinkScenario load_scenario(const std::string& path_or_preset) {
    if (path_or_preset == "lab" || path_or_preset == "campus") return preset(path_or_preset);
    std::ifstream in(path_or_preset);
    if (!in) throw std::runtime_error("load_scenario: cannot open " + path_or_preset);
    json j = json::parse(in);
    return scenario_from_json(j);
}

ChannelInstance::ChannelInstance(const LinkScenario& s, std::uint64_t seed)
    : grid_(s.grid), path_(s.path) {
    const double r0 = s.layer_r0();
    for (int layer = 0; layer < s.turbulence.n_screens; ++layer) {
        if (r0 <= 0.0) {
            PhaseScreen flat;
            flat.grid = grid_;
            flat.phase.assign(static_cast<std::size_t>(grid_.n) * grid_.n, 0.0);
            flat.wind_vx = s.turbulence.wind_vx;
            flat.wind_vy = s.turbulence.wind_vy;
            screens_.push_back(std::move(flat));
        } else {
            screens_.push_back(make_screen_r0(r0, s.turbulence.wind_vx, s.turbulence.wind_vy,
                                              s.turbulence.outer_scale, grid_,
                                              mix_seed(seed, static_cast<std::uint64_t>(layer))));
        }
    }
}

void ChannelInstance::advance(double dt) {
    for (PhaseScreen& s : screens_) s = evolve_screen(s, dt);
}

ComplexField ChannelInstance::transmit(const ComplexField& input) const {
    ComplexField f = input;
    for (const PathElement& e : path_) {
        switch (e.kind) {
            case PathElement::Kind::Propagate:
                f = propagate(f, e.distance);
                break;
            case PathElement::Kind::Screen: {
                const PhaseScreen& scr = screens_.at(static_cast<std::size_t>(e.layer));
                for (std::size_t i = 0; i < f.amplitude.size(); ++i)
                    f.amplitude[i] *= std::polar(1.0, scr.phase[i]);
                break;
            }
            case PathElement::Kind::Stop:
                f = apply_aperture(f, e.aperture);
                break;
        }
    }
    return f;
}

ComplexField ChannelInstance::transmit_ideal(const ComplexField& input) const {
    ComplexField f = input;
    for (const PathElement& e : path_) {
        switch (e.kind) {
            case PathElement::Kind::Propagate:
                f = propagate(f, e.distance);
                break;
            case PathElement::Kind::Screen:
                break;
            case PathElement::Kind::Stop:
                f = apply_aperture(f, e.aperture);
                break;
        }
    }
    return f;
}

namespace {

struct BasisSet {
    BasisKind kind;
    std::vector<ComplexField> prepared;   // unit power at the transmitter
    std::vector<ComplexField> reference;  // unit-power projective states at the receiver
};

BasisSet make_basis_set(BasisKind kind, const EncodingSpace& space, const ChannelInstance& ch,
                        const GridSpec& grid) {
    BasisSet b;
    b.kind = kind;
    if (kind == BasisKind::OAM) {
        for (int ell : space.members()) b.prepared.push_back(oam_field({ell, space.waist}, grid));
    } else {
        for (int j = 0; j < space.dimension(); ++j) b.prepared.push_back(ang_field(j, space, grid));
    }
    // Projective measurement matched to the aligned, turbulence-free system.
    for (const ComplexField& f : b.prepared) b.reference.push_back(normalized(ch.transmit_ideal(f)));
    return b;
}

}  // namespace

RunReport run_scenario(const LinkScenario& s) {
    s.validate();

    RunReport report;
    report.scenario_name = s.name;
    report.config_echo = scenario_to_json(s);
    report.seed = s.seed;

    const int d = s.encoding.dimension();
    const double threshold = fidelity_threshold(d);

    std::vector<BasisSet> bases;
    {
        // Reference states only need the turbulence-free path; any seed works.
        ChannelInstance ref_ch(s, mix_seed(s.seed, 0));
        if (s.measure_oam) bases.push_back(make_basis_set(BasisKind::OAM, s.encoding, ref_ch, s.grid));
        if (s.measure_ang) bases.push_back(make_basis_set(BasisKind::ANG, s.encoding, ref_ch, s.grid));
    }

    struct Accum {
        std::vector<double> fid_series;
        std::vector<std::vector<double>> matrix_sum;
        std::vector<double> eff_sum;
        int count = 0;
    };
    std::map<BasisKind, Accum> accum;
    for (const BasisSet& b : bases) {
        Accum a;
        a.matrix_sum.assign(d, std::vector<double>(d, 0.0));
        a.eff_sum.assign(d, 0.0);
        accum[b.kind] = a;
    }
    std::vector<double> mub_series;

    const std::vector<int> members = s.encoding.members();
    std::vector<std::vector<double>> mode_eff_samples(members.size());
    double residual_sum = 0.0;
    int residual_count = 0;

    const double dt = 1.0 / s.ao.config.loop.loop_rate;
    const int total_frames = s.warmup_frames + s.frames_per_realization;

    for (int r = 0; r < s.n_realizations; ++r) {
        ChannelInstance ch(s, mix_seed(s.seed, static_cast<std::uint64_t>(r) + 1));
        std::unique_ptr<AoSystem> ao;
        Rng ao_rng(mix_seed(s.seed, 0x40000000ULL + static_cast<std::uint64_t>(r)));
        ComplexField beacon0;
        if (s.ao.enabled) {
            ao = std::make_unique<AoSystem>(s.ao.config, s.grid);
            beacon0 = ao->beacon_input();
        }

        for (int k = 0; k < total_frames; ++k) {
            ch.advance(dt);
            if (ao) {
                ComplexField b = ao->apply_correction(ch.transmit(beacon0));
                ao->observe(b, ao_rng);
            }
            if (k >= s.warmup_frames) {
                double frame_oam = -1.0, frame_ang = -1.0;
                for (const BasisSet& b : bases) {
                    std::vector<ComplexField> received;
                    received.reserve(b.prepared.size());
                    for (const ComplexField& f : b.prepared) {
                        ComplexField out = ch.transmit(f);
                        if (ao) out = ao->apply_correction(out);
                        received.push_back(std::move(out));
                    }
                    CrosstalkMatrix m = crosstalk(received, b.reference, b.kind);
                    const double fid = fidelity(m);
                    Accum& a = accum[b.kind];
                    a.fid_series.push_back(fid);
                    for (int i = 0; i < d; ++i) {
                        a.eff_sum[static_cast<std::size_t>(i)] += m.efficiency[static_cast<std::size_t>(i)];
                        for (int jj = 0; jj < d; ++jj)
                            a.matrix_sum[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)] +=
                                m.p[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)];
                    }
                    ++a.count;
                    if (b.kind == BasisKind::OAM) {
                        frame_oam = fid;
                        for (std::size_t i = 0; i < received.size(); ++i)
                            mode_eff_samples[i].push_back(power(received[i]));
                    } else {
                        frame_ang = fid;
                    }
                }
                if (frame_oam >= 0.0 && frame_ang >= 0.0)
                    mub_series.push_back(0.5 * (frame_oam + frame_ang));
                if (ao) {
                    residual_sum += ao->telemetry().frames.back().residual_rms_rad;
                    ++residual_count;
                }
            }
            if (ao) ao->commit();
        }
        if (r == 0 && ao) report.telemetry = ao->telemetry();
    }

    for (const BasisSet& b : bases) {
        Accum& a = accum[b.kind];
        BasisResult res;
        res.stats = make_fidelity_stats(a.fid_series, threshold);
        res.mean_crosstalk.assign(d, std::vector<double>(d, 0.0));
        res.mean_efficiency.assign(d, 0.0);
        for (int i = 0; i < d; ++i) {
            res.mean_efficiency[static_cast<std::size_t>(i)] = a.eff_sum[static_cast<std::size_t>(i)] / a.count;
            for (int jj = 0; jj < d; ++jj)
                res.mean_crosstalk[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)] =
                    a.matrix_sum[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)] / a.count;
        }
        report.per_basis[b.kind == BasisKind::OAM ? "oam" : "ang"] = std::move(res);
    }
    if (!mub_series.empty()) {
        BasisResult res;
        res.stats = make_fidelity_stats(mub_series, threshold);
        report.per_basis["mub"] = std::move(res);
    }

    report.efficiency_modes = members;
    for (std::size_t i = 0; i < members.size(); ++i) {
        const std::vector<double>& v = mode_eff_samples[i];
        double mean = 0.0, var = 0.0;
        if (!v.empty()) {
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(v.size());
        }
        report.efficiency_mean.push_back(mean);
        report.efficiency_std.push_back(std::sqrt(var));
    }

    const std::string verdict_basis = report.per_basis.count("mub") ? "mub"
                                      : s.measure_oam              ? "oam"
                                                                   : "ang";
    const double mean_fid = report.per_basis.at(verdict_basis).stats.mean;
    report.verdict = SecurityVerdict{d, threshold, mean_fid, mean_fid > threshold};
    if (s.pol_fidelity < 1.0) {
        const int dj = 2 * d;
        const double tj = fidelity_threshold(dj);
        const double fj = mean_fid * s.pol_fidelity;
        report.hybrid_verdict = SecurityVerdict{dj, tj, fj, fj > tj};
    }
    if (residual_count > 0) report.mean_residual_rms = residual_sum / residual_count;
    return report;
}

std::pair<double, double> mode_efficiency(const LinkScenario& s, int ell) {
    s.validate();
    ComplexField mode = oam_field({ell, s.tx_waist}, s.grid);
    std::vector<double> samples;
    const double dt = 1.0 / s.ao.config.loop.loop_rate;
    for (int r = 0; r < s.n_realizations; ++r) {
        ChannelInstance ch(s, mix_seed(s.seed, static_cast<std::uint64_t>(r) + 1));
        for (int k = 0; k < s.frames_per_realization; ++k) {
            ch.advance(dt);
            samples.push_back(power(ch.transmit(mode)));
        }
    }
    double mean = 0.0, var = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(samples.size());
    for (double x : samples) var += (x - mean) * (x - mean);
    var /= static_cast<double>(samples.size());
    return {mean, std::sqrt(var)};
}

namespace {

json verdict_to_json(const SecurityVerdict& v) {
    return {{"dimension", v.dimension},
            {"fidelity_threshold", v.threshold},
            {"mean_fidelity", v.mean_fidelity},
            {"secure", v.secure}};
}

json stats_to_json(const FidelityStats& s) {
    return {{"mean", s.mean},
            {"std", s.stddev},
            {"threshold", s.threshold},
            {"fraction_above_threshold", s.fraction_above_threshold},
            {"n_samples", s.series.size()}};
}

}  // namespace

json report_to_json(const RunReport& r, bool include_timestamp) {
    json j;
    if (include_timestamp) {
        const auto now = std::chrono::system_clock::now();
        j["timestamp_unix_s"] =
            std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    }
    j["scenario"] = r.scenario_name;
    j["seed"] = r.seed;
    j["config"] = r.config_echo;
    json bases;
    for (const auto& [name, res] : r.per_basis) {
        json b;
        b["fidelity"] = stats_to_json(res.stats);
        b["series"] = res.stats.series;
        if (!res.mean_crosstalk.empty()) {
            b["mean_crosstalk"] = res.mean_crosstalk;
            b["mean_efficiency"] = res.mean_efficiency;
        }
        bases[name] = b;
    }
    j["bases"] = bases;
    j["mode_efficiency"] = {{"ell", r.efficiency_modes},
                            {"mean", r.efficiency_mean},
                            {"std", r.efficiency_std}};
    j["verdict"] = verdict_to_json(r.verdict);
    if (r.hybrid_verdict) j["hybrid_verdict"] = verdict_to_json(*r.hybrid_verdict);
    j["mean_residual_rms_rad"] = r.mean_residual_rms;
    return j;
}

void emit_report(const RunReport& r, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("emit_report: cannot create directory " + dir);

    {
        std::ofstream out(fs::path(dir) / "report.json");
        if (!out) throw std::runtime_error("emit_report: cannot write " + dir + "/report.json");
        out << report_to_json(r).dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "fidelity_series.csv");
        if (!out) throw std::runtime_error("emit_report: cannot write " + dir + "/fidelity_series.csv");
        std::vector<std::string> names;
        for (const auto& [name, _] : r.per_basis) names.push_back(name);
        out << "index";
        for (const std::string& n : names) out << ',' << n;
        out << '\n';
        std::size_t rows = 0;
        for (const auto& [_, res] : r.per_basis) rows = std::max(rows, res.stats.series.size());
        for (std::size_t i = 0; i < rows; ++i) {
            out << i;
            for (const std::string& n : names) {
                const auto& series = r.per_basis.at(n).stats.series;
                out << ',';
                if (i < series.size()) out << series[i];
            }
            out << '\n';
        }
    }
    for (const auto& [name, res] : r.per_basis) {
        if (res.mean_crosstalk.empty()) continue;
        std::ofstream out(fs::path(dir) / ("crosstalk_" + name + ".csv"));
        if (!out) throw std::runtime_error("emit_report: cannot write crosstalk_" + name + ".csv");
        for (const auto& row : res.mean_crosstalk) {
            for (std::size_t jj = 0; jj < row.size(); ++jj) out << (jj ? "," : "") << row[jj];
            out << '\n';
        }
    }
    write_telemetry_csv(r.telemetry, (fs::path(dir) / "telemetry.csv").string());
}

}  // namespace oamsim
