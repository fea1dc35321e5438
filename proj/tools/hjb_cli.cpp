// Command-line driver for the cell problems, convergence studies and effective solves.

#include "config.hpp"
#include "hjb/experiments.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <random>

using namespace hjb;
using tools::ConfigError;
using tools::Settings;
using json = nlohmann::ordered_json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_unconverged = 1;
constexpr int exit_usage = 2;

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string out;
    unsigned seed = 0;
};

Settings resolve(std::map<std::string, std::string> defaults, const CommonArgs& args)
{
    Settings s(std::move(defaults));
    if (!args.config_file.empty()) s.load_file(args.config_file);
    for (const auto& o : args.overrides) s.apply_override(o);
    return s;
}

json settings_json(const Settings& s)
{
    json j = json::object();
    for (const auto& [k, v] : s.values()) j[k] = v;
    return j;
}

json certificate_json(const CordesCertificate& c)
{
    return {{"lambda", c.lambda}, {"delta", c.delta}, {"margin", c.margin}, {"samples", c.sample_description}};
}

void emit(const json& j, const std::string& out)
{
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(out);
    if (!f) throw ConfigError("cannot write '" + out + "'");
    f << j.dump(2) << '\n';
}

int report_failures(const std::vector<std::string>& failures)
{
    if (failures.empty()) return exit_ok;
    std::cerr << json({{"failures", failures}}).dump() << '\n';
    return exit_unconverged;
}

std::map<std::string, std::string> cell_defaults()
{
    return {{"family", "fo-benchmark"}, {"s", "0.5,0.5"},  {"p", "0,0"},        {"R", "-2,1,1,-3"},
            {"sigma", "0.01"},          {"N", "16"},       {"tol", "1e-10"},    {"certificate_samples", "128"}};
}

CellProblemSpec cell_spec(const Settings& s, CordesCertificate& cert)
{
    CellProblemSpec spec;
    spec.family = find_family(s.str("family"));
    cert = select_lambda(spec.family, SampleGrid::lattice(s.integer("certificate_samples"), spec.family.controls.values()));
    spec.certificate = cert;
    spec.s = s.vec("s");
    spec.p = s.vec("p");
    spec.R = s.mat("R");
    spec.sigma = s.real("sigma");
    return spec;
}

int cmd_check_cordes(const CommonArgs& args)
{
    const Settings s = resolve({{"family", "fo-benchmark"}, {"samples", "128"}, {"random_samples", "0"}}, args);
    const auto t0 = std::chrono::steady_clock::now();
    const CoefficientFamily family = find_family(s.str("family"));
    SampleGrid grid = SampleGrid::lattice(s.integer("samples"), family.controls.values());
    std::mt19937 rng(args.seed);
    std::uniform_real_distribution<Scalar> unit(0.0, 1.0);
    for (int k = 0; k < s.integer("random_samples"); ++k) grid.y_points.emplace_back(unit(rng), unit(rng));
    const CordesCertificate cert = select_lambda(family, grid);
    const Scalar slack = cordes_slack(family, cert.lambda, cert.delta, grid);
    const Scalar secs = std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
    emit({{"config", settings_json(s)},
          {"seed", args.seed},
          {"certificate", certificate_json(cert)},
          {"slack", slack},
          {"seconds", secs}},
         args.out);
    return (cert.delta > 0 && slack >= 0) ? exit_ok : exit_unconverged;
}

int cmd_cell_solve(const CommonArgs& args, bool value_only)
{
    const Settings s = resolve(cell_defaults(), args);
    CordesCertificate cert;
    const CellProblemSpec spec = cell_spec(s, cert);
    try {
        const EffectiveSample smp = solve_cell(spec, s.integer("N"), s.real("tol"));
        json j = {{"value", smp.value}, {"eta", smp.eta.eta}, {"iterations", smp.corrector.iterations}};
        if (!value_only) {
            j["sqrt_eta"] = smp.eta.sqrt_eta();
            j["eta_terms"] = {{"bellman", smp.eta.term_F}, {"rot", smp.eta.term_rot}, {"gap", smp.eta.term_gap}};
            j["residual"] = smp.corrector.residual();
            j["config"] = settings_json(s);
            j["certificate"] = certificate_json(cert);
            if (!args.out.empty()) {
                std::ofstream f(args.out + ".u.csv");
                write_csv(smp.corrector.u, f);
                j["corrector_csv"] = args.out + ".u.csv";
            }
        }
        emit(j, args.out);
        return exit_ok;
    } catch (const SolverError& e) {
        return report_failures({e.what()});
    }
}

int finish_record(const ConvergenceRecord& rec, const std::string& out, const std::string& fallback)
{
    const std::string path = out.empty() ? fallback : out;
    write_outputs(rec, path);
    write_csv(rec, std::cout);
    std::cout << "# wrote " << path << " and " << path << ".json\n";
    return report_failures(rec.failures);
}

int cmd_convergence_h(const CommonArgs& args)
{
    auto d = cell_defaults();
    d.erase("N");
    d["N"] = "4,8,16,32,64";
    const Settings s = resolve(d, args);
    Exp1HConfig c;
    c.family = s.str("family");
    c.R = s.mat("R");
    c.s = s.vec("s");
    c.p = s.vec("p");
    c.sigma = s.real("sigma");
    c.n_list = s.integers("N");
    c.tol = s.real("tol");
    c.certificate_samples = s.integer("certificate_samples");
    return finish_record(run_exp1_h(c), args.out, "exp1_h.csv");
}

int cmd_convergence_sigma(const CommonArgs& args)
{
    auto d = cell_defaults();
    d["N"] = "32";
    d["sigma"] = "4,2,1,0.5,0.25,0.125,0.0625,0.03125,0.015625";
    d["floor_ratio"] = "0.9";
    const Settings s = resolve(d, args);
    Exp1SigmaConfig c;
    c.family = s.str("family");
    c.R = s.mat("R");
    c.s = s.vec("s");
    c.p = s.vec("p");
    c.sigmas = s.reals("sigma");
    c.n = s.integer("N");
    c.tol = s.real("tol");
    c.floor_ratio = s.real("floor_ratio");
    c.certificate_samples = s.integer("certificate_samples");
    return finish_record(run_exp1_sigma(c), args.out, "exp1_sigma.csv");
}

std::map<std::string, std::string> solver_defaults()
{
    return {{"rel_tol", "1e-8"}, {"grad_tol", "1e-12"}, {"max_iterations", "100"}, {"max_evaluations", "2000"}};
}

LeastSquaresOptions solver_options(const Settings& s)
{
    LeastSquaresOptions o;
    o.rel_tol = s.real("rel_tol");
    o.grad_tol = s.real("grad_tol");
    o.max_iterations = s.integer("max_iterations");
    o.max_evaluations = s.integer("max_evaluations");
    return o;
}

HamiltonianMode parse_mode(const std::string& m)
{
    if (m == "exact") return HamiltonianMode::exact;
    if (m == "cell") return HamiltonianMode::cell;
    throw ConfigError("mode must be 'exact' or 'cell', got '" + m + "'");
}

int write_solution(const EffectiveSolution& sol, const Settings& s, const std::string& out, const std::string& fallback)
{
    const std::string path = out.empty() ? fallback : out;
    {
        std::ofstream f(path);
        if (!f) throw ConfigError("cannot write '" + path + "'");
        write_csv(sol.u, f);
    }
    {
        std::ofstream f(path + ".htilde.csv");
        write_csv(sol.htilde, f);
    }
    {
        std::ofstream f(path + ".trace.jsonl");
        for (std::size_t k = 0; k < sol.objective_trace.size(); ++k) {
            f << json({{"iteration", k}, {"objective", sol.objective_trace[k]}}).dump() << '\n';
        }
    }
    const json summary = {{"config", settings_json(s)},
                          {"objective", sol.objective},
                          {"evaluations", sol.evaluations},
                          {"iterations", sol.iterations},
                          {"converged", sol.converged},
                          {"message", sol.message},
                          {"solution_csv", path}};
    std::ofstream(path + ".json") << summary.dump(2) << '\n';
    std::cout << summary.dump(2) << '\n';
    return sol.converged ? exit_ok : report_failures({sol.message});
}

int cmd_effective_solve(const CommonArgs& args)
{
    auto d = solver_defaults();
    d.insert({{"family", "fo-benchmark"}, {"omega_N", "8"}, {"cell_N", "4"}, {"sigma", "0.1"}, {"mode", "exact"},
              {"cell_tol", "1e-10"}});
    const Settings s = resolve(d, args);
    TwoScaleConfig c;
    c.family = s.str("family");
    c.omega_n = s.integer("omega_N");
    c.cell_n = s.integer("cell_N");
    c.sigma = s.real("sigma");
    c.mode = parse_mode(s.str("mode"));
    c.cell_tol = s.real("cell_tol");
    const auto o = solver_options(s);
    c.rel_tol = o.rel_tol;
    c.grad_tol = o.grad_tol;
    c.max_iterations = o.max_iterations;
    c.max_evaluations = o.max_evaluations;
    return write_solution(solve_effective(c), s, args.out, "effective.csv");
}

int cmd_eps_solve(const CommonArgs& args)
{
    auto d = solver_defaults();
    d.insert({{"family", "fo-benchmark"}, {"eps", "0.1"}, {"N", "64"}});
    const Settings s = resolve(d, args);
    const auto sol = solve_eps_problem(s.real("eps"), s.integer("N"), find_family(s.str("family")), solver_options(s));
    return write_solution(sol, s, args.out, "eps.csv");
}

int cmd_exp2(const CommonArgs& args)
{
    auto d = solver_defaults();
    d.insert({{"family", "fo-benchmark"}, {"omega_N", "2,4,8"}, {"cell_N", "4"}, {"sigma", "0.1"}, {"eps", "0.1"},
              {"reference_N", "64"}, {"mode", "exact"}, {"cell_tol", "1e-10"}, {"certificate_samples", "128"}});
    const Settings s = resolve(d, args);
    Exp2Config c;
    c.family = s.str("family");
    c.omega_n = s.integers("omega_N");
    c.cell_n = s.integer("cell_N");
    c.sigma = s.real("sigma");
    c.eps = s.real("eps");
    c.reference_n = s.integer("reference_N");
    c.mode = parse_mode(s.str("mode"));
    c.options = solver_options(s);
    c.cell_tol = s.real("cell_tol");
    c.certificate_samples = s.integer("certificate_samples");
    return finish_record(run_exp2(c), args.out, "exp2.csv");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Mixed FEM for periodic HJB cell problems and two-scale effective solves"};
    app.require_subcommand(1);
    app.footer(
        "Settings come from --config (lines 'key = value') and --set key=value overrides.\n"
        "Exit codes: 0 all solves converged, 1 some solve failed (failure list as JSON on stderr), 2 usage error.\n"
        "Convergence CSVs: first column is the refinement parameter (h = sqrt(2)/N or sigma), then the metric\n"
        "columns and a converged flag; '#' lines give the slope convention d log(metric)/d log(parameter)\n"
        "and the fitted slopes. A JSON sidecar <out>.json holds the resolved configuration, the Cordes\n"
        "certificate, slopes, diagnostics and wall times.\n"
        "Solution CSVs: vertex,x,y,value.");

    CommonArgs args;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_file, "key = value settings file")->check(CLI::ExistingFile);
        sub->add_option("--set", args.overrides, "override one setting, key=value (repeatable)");
        sub->add_option("--out", args.out, "output path");
        sub->add_option("--seed", args.seed, "seed for any random sampling");
    };

    auto* cordes = app.add_subcommand("check-cordes", "certify lambda, delta on a sample grid; JSON output");
    auto* cell = app.add_subcommand("cell-solve", "solve one cell problem; JSON with value, eta, iterations");
    auto* hbar = app.add_subcommand("hbar", "H_{sigma,h}(s, p, R); JSON {value, eta, iterations}");
    auto* conv_h = app.add_subcommand("convergence-h", "relative H error and sqrt(eta) versus h (CSV columns: h, N, H, "
                                                       "rel_error, eta, sqrt_eta, iterations, converged)");
    auto* conv_s = app.add_subcommand("convergence-sigma", "relative H error versus sigma (CSV columns: sigma, N, H, "
                                                           "rel_error, eta, sqrt_eta, iterations, converged)");
    auto* eff = app.add_subcommand("effective-solve", "least-squares solve of the effective problem; vertex CSV, "
                                                      "htilde CSV, objective trace as JSON lines");
    auto* eps = app.add_subcommand("eps-solve", "least-squares solve of the oscillating problem; same outputs");
    auto* exp2 = app.add_subcommand("exp2", "effective solves versus an oscillating reference (CSV columns: h, N, "
                                            "rel_L2, rel_Linf, objective, evaluations, converged)");
    for (auto* sub : {cordes, cell, hbar, conv_h, conv_s, eff, eps, exp2}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*cordes) return cmd_check_cordes(args);
        if (*cell) return cmd_cell_solve(args, false);
        if (*hbar) return cmd_cell_solve(args, true);
        if (*conv_h) return cmd_convergence_h(args);
        if (*conv_s) return cmd_convergence_sigma(args);
        if (*eff) return cmd_effective_solve(args);
        if (*eps) return cmd_eps_solve(args);
        if (*exp2) return cmd_exp2(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return exit_usage;
    } catch (const SolverError& e) {
        return report_failures({e.what()});
    }
    return exit_usage;
}
