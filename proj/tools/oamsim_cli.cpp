#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oamsim/harness.hpp"

namespace {

using oamsim::LinkScenario;

std::vector<std::pair<double, double>> read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::pair<double, double>> points;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double x, f;
        if (row >> x >> f) points.emplace_back(x, f);
        // non-numeric rows (headers) are skipped
    }
    if (points.empty()) throw std::runtime_error("no numeric rows in " + path);
    return points;
}

int cmd_run(const std::string& scenario, std::uint64_t seed, bool seed_set, const std::string& out) {
    LinkScenario s = oamsim::load_scenario(scenario);
    if (seed_set) s.seed = seed;
    oamsim::RunReport r = oamsim::run_scenario(s);
    oamsim::emit_report(r, out);
    const auto& v = r.verdict;
    std::cout << "scenario " << s.name << " seed " << s.seed << ": mean fidelity " << v.mean_fidelity
              << " vs threshold " << v.threshold << " (d=" << v.dimension << ") -> "
              << (v.secure ? "secure" : "insecure") << "\n";
    if (r.hybrid_verdict) {
        const auto& h = *r.hybrid_verdict;
        std::cout << "hybrid: joint fidelity " << h.mean_fidelity << " vs threshold " << h.threshold
                  << " (d=" << h.dimension << ") -> " << (h.secure ? "secure" : "insecure") << "\n";
    }
    std::cout << "report written to " << out << "\n";
    return 0;
}

int cmd_sweep(const std::string& scenario, std::uint64_t seed, bool seed_set, const std::string& out,
              const std::string& param, const std::vector<double>& values) {
    if (param != "d_over_r0") throw std::runtime_error("sweep: unsupported parameter " + param);
    if (values.empty()) throw std::runtime_error("sweep: no values given");
    LinkScenario base = oamsim::load_scenario(scenario);
    if (seed_set) base.seed = seed;

    std::filesystem::create_directories(out);
    std::ofstream summary(std::filesystem::path(out) / "sweep.csv");
    summary << "d_over_r0,mean_fidelity,std_fidelity,threshold,secure\n";
    for (double v : values) {
        LinkScenario s = base;
        s.d_over_r0 = v;
        std::ostringstream tag;
        tag << param << "_" << v;
        oamsim::RunReport r = oamsim::run_scenario(s);
        oamsim::emit_report(r, (std::filesystem::path(out) / tag.str()).string());
        const std::string basis = r.per_basis.count("mub") ? "mub"
                                  : r.per_basis.count("oam") ? "oam"
                                                             : "ang";
        const auto& st = r.per_basis.at(basis).stats;
        summary << v << ',' << st.mean << ',' << st.stddev << ',' << r.verdict.threshold << ','
                << (r.verdict.secure ? 1 : 0) << '\n';
        std::cout << param << " = " << v << ": mean fidelity " << st.mean << " (std " << st.stddev
                  << ")\n";
    }
    std::cout << "sweep summary written to " << out << "/sweep.csv\n";
    return 0;
}

int cmd_threshold(int d) {
    const double f = oamsim::fidelity_threshold(d);
    std::cout << "d = " << d << ": fidelity threshold " << f * 100.0 << "% (error threshold "
              << (1.0 - f) * 100.0 << "%)\n";
    return 0;
}

int cmd_fit(const std::string& input, const std::string& model_name) {
    oamsim::FidelityModel model;
    if (model_name == "A")
        model = oamsim::FidelityModel::A;
    else if (model_name == "B")
        model = oamsim::FidelityModel::B;
    else
        throw std::runtime_error("fit: model must be A or B");
    const auto points = read_points_csv(input);
    const double c = oamsim::fit_fidelity_model(points, model);
    double sse = 0.0;
    for (const auto& [x, f] : points) {
        const double r = oamsim::eval_fidelity_model(model, c, x) - f;
        sse += r * r;
    }
    std::cout << "model " << model_name << ": c = " << c << " (rms residual "
              << std::sqrt(sse / points.size()) << ", " << points.size() << " points, reference c = "
              << oamsim::kReferenceModelCoefficient << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OAM free-space QKD link simulator"};
    app.require_subcommand(1);

    std::string scenario, out = "out", param = "d_over_r0", input, model = "A";
    std::uint64_t seed = 0;
    std::vector<double> values;
    int d = 5;

    auto* run = app.add_subcommand("run", "Run one scenario and write a report");
    run->add_option("--scenario", scenario, "Scenario JSON file or preset name (lab, campus)")
        ->required();
    auto* run_seed = run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out, "Output directory");

    auto* sweep = app.add_subcommand("sweep", "Run a scenario across parameter values");
    sweep->add_option("--scenario", scenario, "Scenario JSON file or preset name")->required();
    auto* sweep_seed = sweep->add_option("--seed", seed, "Override the scenario seed");
    sweep->add_option("--out", out, "Output directory");
    sweep->add_option("--param", param, "Swept parameter (d_over_r0)");
    sweep->add_option("--values", values, "Values to sweep")->required()->delimiter(',');

    auto* thr = app.add_subcommand("threshold", "Print the security fidelity threshold");
    thr->add_option("--d", d, "Encoding dimension")->required();

    auto* fit = app.add_subcommand("fit", "Fit the fidelity-vs-turbulence model to CSV data");
    fit->add_option("--input", input, "CSV with d_over_r0,fidelity rows")->required();
    fit->add_option("--model", model, "Model variant: A or B");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(scenario, seed, run_seed->count() > 0, out);
        if (sweep->parsed())
            return cmd_sweep(scenario, seed, sweep_seed->count() > 0, out, param, values);
        if (thr->parsed()) return cmd_threshold(d);
        if (fit->parsed()) return cmd_fit(input, model);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
