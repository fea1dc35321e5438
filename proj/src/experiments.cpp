#include "hjb/experiments.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace hjb {

namespace {

using Clock = std::chrono::steady_clock;

Scalar seconds_since(Clock::time_point t0) { return std::chrono::duration<Scalar>(Clock::now() - t0).count(); }

std::string fmt(Scalar v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt_matrix(const Mat2& m)
{
    return fmt(m(0, 0)) + "," + fmt(m(0, 1)) + "," + fmt(m(1, 0)) + "," + fmt(m(1, 1));
}

template <typename T>
std::string fmt_list(const std::vector<T>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(static_cast<Scalar>(v[i]));
    return out;
}

CordesCertificate certify(const CoefficientFamily& family, int samples)
{
    return select_lambda(family, SampleGrid::lattice(samples, family.controls.values()));
}

void require_exact(const std::string& family)
{
    if (!has_exact_H(family)) throw std::invalid_argument("experiment needs a benchmark family, got '" + family + "'");
}

} // namespace

Scalar estimate_rate(const std::vector<std::pair<Scalar, Scalar>>& rows)
{
    if (rows.size() < 2) throw std::invalid_argument("estimate_rate: need at least two rows");
    Scalar sx = 0, sy = 0;
    for (const auto& [p, v] : rows) {
        if (!(p > 0) || !(v > 0)) {
            throw std::invalid_argument("estimate_rate: parameters and values must be positive, got (" + fmt(p) + ", " +
                                        fmt(v) + ")");
        }
        sx += std::log(p);
        sy += std::log(v);
    }
    const auto n = static_cast<Scalar>(rows.size());
    const Scalar mx = sx / n, my = sy / n;
    Scalar sxx = 0, sxy = 0;
    for (const auto& [p, v] : rows) {
        const Scalar dx = std::log(p) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(v) - my);
    }
    if (sxx == 0) throw std::invalid_argument("estimate_rate: parameters must not all coincide");
    return sxy / sxx;
}

std::size_t ConvergenceRecord::column_index(const std::string& name) const
{
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) return i;
    }
    throw std::out_of_range("ConvergenceRecord: no column '" + name + "'");
}

std::vector<Scalar> ConvergenceRecord::column(const std::string& name) const
{
    const std::size_t k = column_index(name);
    std::vector<Scalar> out;
    for (const auto& r : rows) out.push_back(r.values[k]);
    return out;
}

std::optional<Scalar> ConvergenceRecord::slope(const std::string& name) const
{
    const auto it = slopes.find(name);
    if (it == slopes.end()) return std::nullopt;
    return it->second;
}

std::optional<Scalar> ConvergenceRecord::diagnostic(const std::string& name) const
{
    for (const auto& [k, v] : diagnostics) {
        if (k == name) return v;
    }
    return std::nullopt;
}

bool ConvergenceRecord::monotone_decreasing(const std::string& name) const
{
    const auto c = column(name);
    for (std::size_t i = 1; i < c.size(); ++i) {
        if (!(c[i] < c[i - 1])) return false;
    }
    return true;
}

void fit_slopes(ConvergenceRecord& record)
{
    record.slopes.clear();
    record.fit_end = std::min(record.fit_end, record.rows.size());
    record.no_slope = record.fit_end < record.fit_begin + 2;
    if (record.no_slope) return;
    for (const auto& name : record.rate_columns) {
        const std::size_t k = record.column_index(name);
        std::vector<std::pair<Scalar, Scalar>> pts;
        for (std::size_t i = record.fit_begin; i < record.fit_end; ++i) {
            pts.emplace_back(record.rows[i].parameter, record.rows[i].values[k]);
        }
        record.slopes[name] = estimate_rate(pts);
    }
}

void write_csv(const ConvergenceRecord& record, std::ostream& out)
{
    out << "# experiment=" << record.experiment << "; slope = d log(metric) / d log(" << record.parameter_name
        << "), fitted over rows [" << record.fit_begin << ", " << record.fit_end << ")\n";
    out << record.parameter_name;
    for (const auto& c : record.columns) out << ',' << c;
    out << ",converged\n";
    out << std::setprecision(17);
    for (const auto& r : record.rows) {
        out << r.parameter;
        for (Scalar v : r.values) out << ',' << v;
        out << ',' << (r.converged ? 1 : 0) << '\n';
    }
    for (const auto& name : record.rate_columns) {
        out << "# slope " << name << " = ";
        if (const auto s = record.slope(name)) {
            out << *s << '\n';
        } else {
            out << "none (fewer than two rows)\n";
        }
    }
}

std::string sidecar_json(const ConvergenceRecord& record)
{
    nlohmann::ordered_json j;
    j["experiment"] = record.experiment;
    j["parameter"] = record.parameter_name;
    j["slope_convention"] = "d log(metric) / d log(" + record.parameter_name + ")";
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : record.config) cfg[k] = v;
    j["config"] = cfg;
    if (record.certificate) {
        j["certificate"] = {{"lambda", record.certificate->lambda},
                            {"delta", record.certificate->delta},
                            {"margin", record.certificate->margin},
                            {"samples", record.certificate->sample_description}};
    } else {
        j["certificate"] = nullptr;
    }
    j["fit_rows"] = {record.fit_begin, record.fit_end};
    nlohmann::ordered_json slopes = nlohmann::ordered_json::object();
    for (const auto& name : record.rate_columns) {
        const auto s = record.slope(name);
        slopes[name] = s ? nlohmann::ordered_json(*s) : nlohmann::ordered_json(nullptr);
    }
    j["slopes"] = slopes;
    nlohmann::ordered_json diag = nlohmann::ordered_json::object();
    for (const auto& [k, v] : record.diagnostics) diag[k] = v;
    j["diagnostics"] = diag;
    nlohmann::ordered_json times = nlohmann::ordered_json::array();
    for (const auto& r : record.rows) times.push_back({{record.parameter_name, r.parameter}, {"seconds", r.seconds}});
    j["timings"] = times;
    j["failures"] = record.failures;
    return j.dump(2);
}

void write_outputs(const ConvergenceRecord& record, const std::string& path)
{
    std::ofstream csv(path);
    if (!csv) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_csv(record, csv);
    std::ofstream side(path + ".json");
    if (!side) throw std::runtime_error("cannot open '" + path + ".json' for writing");
    side << sidecar_json(record) << '\n';
}

Mat2 reference_hessian()
{
    Mat2 r;
    r << -2, 1, 1, -3;
    return r;
}

ConvergenceRecord run_exp1_h(const Exp1HConfig& config)
{
    require_exact(config.family);
    if (config.n_list.empty()) throw std::invalid_argument("run_exp1_h: empty N list");
    const CoefficientFamily family = find_family(config.family);
    const CordesCertificate cert = certify(family, config.certificate_samples);
    const Scalar exact = exact_H(config.R, config.family);

    ConvergenceRecord rec;
    rec.experiment = "exp1_h";
    rec.parameter_name = "h";
    rec.columns = {"N", "H", "rel_error", "eta", "sqrt_eta", "iterations"};
    rec.rate_columns = {"rel_error", "sqrt_eta"};
    rec.certificate = cert;
    rec.config = {{"family", config.family}, {"R", fmt_matrix(config.R)}, {"s", fmt(config.s(0)) + "," + fmt(config.s(1))},
                  {"p", fmt(config.p(0)) + "," + fmt(config.p(1))}, {"sigma", fmt(config.sigma)},
                  {"N", fmt_list(config.n_list)}, {"tol", fmt(config.tol)}};
    rec.diagnostics.emplace_back("exact_H", exact);

    for (int n : config.n_list) {
        const auto t0 = Clock::now();
        CellProblemSpec spec;
        spec.s = config.s;
        spec.p = config.p;
        spec.R = config.R;
        spec.sigma = config.sigma;
        spec.family = family;
        spec.certificate = cert;
        ConvergenceRow row;
        row.parameter = std::sqrt(2.0) / n;
        try {
            const EffectiveSample smp = solve_cell(spec, n, config.tol);
            row.values = {static_cast<Scalar>(n), smp.value, std::abs(smp.value - exact) / std::abs(exact), smp.eta.eta,
                          smp.eta.sqrt_eta(), static_cast<Scalar>(smp.corrector.iterations)};
        } catch (const SolverError& e) {
            row.converged = false;
            row.values.assign(rec.columns.size(), std::nan(""));
            row.values[0] = n;
            rec.failures.push_back("N=" + std::to_string(n) + ": " + e.what());
        }
        row.seconds = seconds_since(t0);
        rec.rows.push_back(std::move(row));
    }
    rec.fit_begin = 0;
    rec.fit_end = rec.failures.empty() ? rec.rows.size() : 0;
    fit_slopes(rec);
    return rec;
}

ConvergenceRecord run_exp1_sigma(const Exp1SigmaConfig& config)
{
    require_exact(config.family);
    if (config.sigmas.empty()) throw std::invalid_argument("run_exp1_sigma: empty sigma list");
    for (std::size_t i = 1; i < config.sigmas.size(); ++i) {
        if (!(config.sigmas[i] < config.sigmas[i - 1])) {
            throw std::invalid_argument("run_exp1_sigma: sigma list must be strictly decreasing");
        }
    }
    const CoefficientFamily family = find_family(config.family);
    const CordesCertificate cert = certify(family, config.certificate_samples);
    const Scalar exact = exact_H(config.R, config.family);

    ConvergenceRecord rec;
    rec.experiment = "exp1_sigma";
    rec.parameter_name = "sigma";
    rec.columns = {"N", "H", "rel_error", "eta", "sqrt_eta", "iterations"};
    rec.rate_columns = {"rel_error"};
    rec.certificate = cert;
    rec.config = {{"family", config.family}, {"R", fmt_matrix(config.R)}, {"s", fmt(config.s(0)) + "," + fmt(config.s(1))},
                  {"p", fmt(config.p(0)) + "," + fmt(config.p(1))}, {"N", std::to_string(config.n)},
                  {"sigma", fmt_list(config.sigmas)}, {"tol", fmt(config.tol)}, {"floor_ratio", fmt(config.floor_ratio)}};
    rec.diagnostics.emplace_back("exact_H", exact);

    for (Scalar sigma : config.sigmas) {
        const auto t0 = Clock::now();
        CellProblemSpec spec;
        spec.s = config.s;
        spec.p = config.p;
        spec.R = config.R;
        spec.sigma = sigma;
        spec.family = family;
        spec.certificate = cert;
        ConvergenceRow row;
        row.parameter = sigma;
        try {
            const EffectiveSample smp = solve_cell(spec, config.n, config.tol);
            row.values = {static_cast<Scalar>(config.n), smp.value, std::abs(smp.value - exact) / std::abs(exact),
                          smp.eta.eta, smp.eta.sqrt_eta(), static_cast<Scalar>(smp.corrector.iterations)};
        } catch (const SolverError& e) {
            row.converged = false;
            row.values.assign(rec.columns.size(), std::nan(""));
            rec.failures.push_back("sigma=" + fmt(sigma) + ": " + e.what());
        }
        row.seconds = seconds_since(t0);
        rec.rows.push_back(std::move(row));
    }

    // Pre-floor regime: stop before the first row that fails to reduce the error by the ratio.
    const auto err = rec.column("rel_error");
    std::size_t end = err.empty() ? 0 : 1;
    while (end < err.size() && std::isfinite(err[end]) && err[end] <= config.floor_ratio * err[end - 1]) ++end;
    rec.fit_begin = 0;
    rec.fit_end = rec.failures.empty() ? end : 0;
    fit_slopes(rec);
    rec.diagnostics.emplace_back("pre_floor_rows", static_cast<Scalar>(rec.fit_end));

    // Diagnostic only: distance to the smallest-sigma value, which removes the sigma-independent mesh error.
    if (rec.failures.empty() && rec.rows.size() >= 3) {
        const auto hs = rec.column("H");
        std::vector<std::pair<Scalar, Scalar>> pts;
        for (std::size_t i = 0; i + 1 < rec.rows.size(); ++i) {
            const Scalar d = std::abs(hs[i] - hs.back());
            if (d > 0) pts.emplace_back(rec.rows[i].parameter, d);
        }
        if (pts.size() >= 2) rec.diagnostics.emplace_back("floor_subtracted_slope", estimate_rate(pts));
    }
    return rec;
}

std::pair<Scalar, Scalar> relative_errors(const FeFunction& coarse, const FeFunction& fine)
{
    const Mesh& mesh = fine.fs().mesh();
    if (fine.fs().degree() != 1 || fine.fs().components() != 1) {
        throw std::invalid_argument("relative_errors: reference must be scalar P1");
    }
    VectorX diff(mesh.num_vertices());
    VectorX ref(mesh.num_vertices());
    for (Index v = 0; v < mesh.num_vertices(); ++v) {
        ref(v) = fine.coeffs(v);
        diff(v) = ref(v) - evaluate(coarse, mesh.vertex(v)).value(0);
    }
    const SparseMatrix m = assemble_mass(fine.fs());
    const Scalar l2 = std::sqrt(diff.dot(m * diff) / ref.dot(m * ref));
    const Scalar linf = diff.cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff();
    return {l2, linf};
}

ConvergenceRecord run_exp2(const Exp2Config& config, const EffectiveSolution* reference)
{
    if (config.omega_n.empty()) throw std::invalid_argument("run_exp2: empty mesh list");
    const CoefficientFamily family = find_family(config.family);
    if (config.mode == HamiltonianMode::exact) require_exact(config.family);

    ConvergenceRecord rec;
    rec.experiment = "exp2";
    rec.parameter_name = "h";
    rec.columns = {"N", "rel_L2", "rel_Linf", "objective", "evaluations"};
    rec.rate_columns = {"rel_L2", "rel_Linf"};
    rec.config = {{"family", config.family},
                  {"omega_N", fmt_list(config.omega_n)},
                  {"cell_N", std::to_string(config.cell_n)},
                  {"sigma", fmt(config.sigma)},
                  {"eps", fmt(config.eps)},
                  {"reference_N", std::to_string(config.reference_n)},
                  {"mode", config.mode == HamiltonianMode::exact ? "exact" : "cell"},
                  {"rel_tol", fmt(config.options.rel_tol)},
                  {"grad_tol", fmt(config.options.grad_tol)},
                  {"max_iterations", std::to_string(config.options.max_iterations)},
                  {"max_evaluations", std::to_string(config.options.max_evaluations)}};

    const auto t_ref = Clock::now();
    EffectiveSolution own;
    if (!reference) {
        own = solve_eps_problem(config.eps, config.reference_n, family, config.options);
        reference = &own;
    } else if (reference->u.fs().mesh().subdivisions() != config.reference_n) {
        throw std::invalid_argument("run_exp2: supplied reference lives on the wrong mesh");
    }
    rec.diagnostics.emplace_back("reference_objective", reference->objective);
    rec.diagnostics.emplace_back("reference_seconds", seconds_since(t_ref));
    if (!reference->converged) rec.failures.push_back("reference: " + reference->message);

    CordesCertificate cert;
    if (config.mode == HamiltonianMode::cell) {
        cert = certify(family, config.certificate_samples);
        rec.certificate = cert;
    }
    for (int n : config.omega_n) {
        const auto t0 = Clock::now();
        TwoScaleConfig tc;
        tc.omega_n = n;
        tc.cell_n = config.cell_n;
        tc.sigma = config.sigma;
        tc.mode = config.mode;
        tc.family = config.family;
        tc.rel_tol = config.options.rel_tol;
        tc.grad_tol = config.options.grad_tol;
        tc.max_iterations = config.options.max_iterations;
        tc.max_evaluations = config.options.max_evaluations;
        tc.cell_tol = config.cell_tol;
        const EffectiveSolution sol = solve_effective(tc, family, cert);
        const auto [l2, linf] = relative_errors(sol.u, reference->u);
        ConvergenceRow row;
        row.parameter = std::sqrt(2.0) / n;
        row.values = {static_cast<Scalar>(n), l2, linf, sol.objective, static_cast<Scalar>(sol.evaluations)};
        row.converged = sol.converged;
        if (!sol.converged) rec.failures.push_back("N=" + std::to_string(n) + ": " + sol.message);
        row.seconds = seconds_since(t0);
        rec.rows.push_back(std::move(row));
    }
    rec.fit_begin = 0;
    rec.fit_end = rec.rows.size();
    fit_slopes(rec);
    return rec;
}

} // namespace hjb
