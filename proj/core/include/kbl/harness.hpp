#pragma once

#include "kbl/diagnostics.hpp"
#include "kbl/farfield.hpp"
#include "kbl/nonlinear_driver.hpp"
#include "kbl/slab_solver.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kbl {

inline constexpr int kConfigSchemaVersion = 1;
const char* software_version() noexcept;

/// Flat key = value run configuration. Keys are listed by config_keys().
struct RunConfig {
    int schema_version = kConfigSchemaVersion;

    int n = 10;
    double v_max = 5.0;
    bool stagger = true;

    int sphere_polar = 4;
    int sphere_azimuth = 8;
    std::string interpolation = "maxwellian_ratio";

    double d = 8.0;
    int n_x = 160;

    double p_E0 = 1.0;
    double epsilon = 0.0;
    double beta = 3.0;
    double varpi = 0.0;
    double sigma0 = 0.5;

    double tol = 1e-9;
    int max_iter = 500;
    std::string method = "gmres";
    int gmres_restart = 40;
    bool coarse = true;
    std::string sampling = "left_edge";

    double nl_tol = 1e-9;
    int nl_max_iter = 40;
    double delta_max = 1.0;

    std::string case_name = "zero_data";
    double amplitude = 1.0;
    double source_decay = 0.5;
    std::vector<double> d_list{4.0, 6.0, 8.0, 10.0};
    std::vector<int> nx_list{40, 80, 160, 320};
    std::string manufactured = "exp_decay";

    std::string output_dir = "kbl_out";
    bool write_fields = true;
    bool record_timing = false;
    unsigned seed = 20240611;

    /// Canonical (key, value) pairs in key order.
    std::vector<std::pair<std::string, std::string>> echo() const;
    std::string to_text() const;

    WeightSpec weight() const { return {beta, varpi}; }
    CollisionOptions collision() const;
    SlabSolverOptions solver() const;
};

std::vector<std::string> config_keys();
std::vector<std::string> case_names();

/// Parses and validates; every violation is collected into one ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Sets one key from text; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Re-validates cross-field constraints.
void validate_config(const RunConfig& cfg);

struct ManufacturedCase {
    LinearSlabProblem problem;
    Eigen::MatrixXd exact;  // edge samples of the exact solution
};

/// Registered names: "zero", "exp_decay" (exp(-x) times a smooth
/// microscopic profile) and "exp_decay_nperp" (the same with a profile
/// orthogonal to N and v3 N, so the source lies in N-perp exactly).
ManufacturedCase manufactured_case(const std::string& name, const SlabGrid& slab, const LinearizedOperator& op,
                                   double p_E0 = 1.0);

/// Smooth microscopic velocity profile used by the generic cases.
NodeValues generic_source_profile(const MaxwellianContext& ctx);
/// Smooth incoming wall data with zero net mass flux.
NodeValues generic_wall_data(const MaxwellianContext& ctx);
/// profile * exp(-rate x) at every edge.
Eigen::MatrixXd decaying_source(const NodeValues& profile, const SlabGrid& slab, double rate);

struct CsvTable {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

std::string format_number(double v);
std::string render_csv(const CsvTable& t);
/// Writes each table to dir/name.csv; returns the paths written.
std::vector<std::string> export_csv(const std::vector<CsvTable>& tables, const std::string& dir);

CsvTable field_table(const std::string& name, const Eigen::MatrixXd& edges, const SlabGrid& slab,
                     const MaxwellianContext& ctx, const WeightSpec& weight);
CsvTable moment_table(const std::string& name, const Eigen::MatrixXd& edges, const SlabGrid& slab,
                      const MaxwellianContext& ctx);
CsvTable farfield_table(const std::vector<FarFieldState>& states);

/// Output directory: absolute paths are used as given; relative ones are
/// placed under $KBL_OUTPUT_ROOT when it is set.
std::string resolve_output_dir(const std::string& dir);

struct RunOutcome {
    bool pass = false;
    std::string case_name;
    std::string failure;
    SolveReport report;
    std::optional<FarFieldState> farfield;
    std::optional<DecayFit> decay;
    double conservation_drift = 0.0;
    std::vector<std::string> files;
    std::string manifest;  // JSON text, also written to manifest.json
};

/// Dispatches on cfg.case_name; module errors are reported in the outcome.
RunOutcome run_case(const RunConfig& cfg);

}  // namespace kbl
