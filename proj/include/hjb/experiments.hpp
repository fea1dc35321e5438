#ifndef HJB_EXPERIMENTS_HPP
#define HJB_EXPERIMENTS_HPP

#include "hjb/effective.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hjb {

/// Least-squares slope of log(value) against log(parameter).
/// Throws invalid_argument for fewer than two rows or nonpositive entries.
Scalar estimate_rate(const std::vector<std::pair<Scalar, Scalar>>& rows);

struct ConvergenceRow {
    Scalar parameter = 0;
    /// Aligned with ConvergenceRecord::columns.
    std::vector<Scalar> values;
    bool converged = true;
    /// Wall time; kept out of the CSV so reruns are byte-identical.
    Scalar seconds = 0;
};

struct ConvergenceRecord {
    std::string experiment;
    /// Slopes are d log(metric) / d log(parameter); positive means the metric vanishes as the parameter does.
    std::string parameter_name;
    std::vector<std::string> columns;
    std::vector<ConvergenceRow> rows;
    std::vector<std::string> rate_columns;
    std::map<std::string, Scalar> slopes;
    /// Half-open row range used for the fit.
    std::size_t fit_begin = 0;
    std::size_t fit_end = 0;
    /// Fewer than two rows in the fit range: no slopes.
    bool no_slope = false;
    /// Extra labelled scalars (reference values, diagnostic fits).
    std::vector<std::pair<std::string, Scalar>> diagnostics;
    /// Resolved configuration, printed into the sidecar.
    std::vector<std::pair<std::string, std::string>> config;
    std::optional<CordesCertificate> certificate;
    std::vector<std::string> failures;

    std::size_t column_index(const std::string& name) const;
    std::vector<Scalar> column(const std::string& name) const;
    std::optional<Scalar> slope(const std::string& name) const;
    std::optional<Scalar> diagnostic(const std::string& name) const;
    bool all_converged() const { return failures.empty(); }
    /// True when the column strictly decreases along the rows.
    bool monotone_decreasing(const std::string& name) const;
};

/// Fits every rate column over [fit_begin, fit_end).
void fit_slopes(ConvergenceRecord& record);

void write_csv(const ConvergenceRecord& record, std::ostream& out);
/// Writes `path` (CSV) and `path + ".json"` (sidecar with configuration, certificate, slopes, timings).
void write_outputs(const ConvergenceRecord& record, const std::string& path);
std::string sidecar_json(const ConvergenceRecord& record);

/// Matrix argument used in the h- and sigma-studies.
Mat2 reference_hessian();

struct Exp1HConfig {
    std::string family = "fo-benchmark";
    Mat2 R = reference_hessian();
    Vec2 s = Vec2(0.5, 0.5);
    Vec2 p = Vec2::Zero();
    Scalar sigma = 0.01;
    std::vector<int> n_list{4, 8, 16, 32, 64};
    Scalar tol = 1e-10;
    int certificate_samples = 128;
};

struct Exp1SigmaConfig {
    std::string family = "fo-benchmark";
    Mat2 R = reference_hessian();
    Vec2 s = Vec2(0.5, 0.5);
    Vec2 p = Vec2::Zero();
    int n = 32;
    /// Descending. Default 2^2 ... 2^-6.
    std::vector<Scalar> sigmas{4, 2, 1, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625};
    Scalar tol = 1e-10;
    /// The pre-floor regime ends before the first row whose error ratio to its predecessor exceeds this.
    Scalar floor_ratio = 0.9;
    int certificate_samples = 128;
};

struct Exp2Config {
    std::string family = "fo-benchmark";
    std::vector<int> omega_n{2, 4, 8};
    int cell_n = 4;
    Scalar sigma = 0.1;
    Scalar eps = 0.1;
    int reference_n = 64;
    HamiltonianMode mode = HamiltonianMode::exact;
    LeastSquaresOptions options;
    Scalar cell_tol = 1e-10;
    int certificate_samples = 128;
};

ConvergenceRecord run_exp1_h(const Exp1HConfig& config);
ConvergenceRecord run_exp1_sigma(const Exp1SigmaConfig& config);
/// Optionally reuses a precomputed reference solution (must match eps and reference_n).
ConvergenceRecord run_exp2(const Exp2Config& config, const EffectiveSolution* reference = nullptr);

/// Relative L2 and max-norm distances of a coarse P1 function from a fine one, measured at fine vertices.
std::pair<Scalar, Scalar> relative_errors(const FeFunction& coarse, const FeFunction& fine);

} // namespace hjb

#endif
