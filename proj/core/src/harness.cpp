#include "kbl/harness.hpp"

#include "kbl/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#ifndef KBL_VERSION
#define KBL_VERSION "0.0.0"
#endif

namespace kbl {

namespace {

using Index = Eigen::Index;
using json = nlohmann::json;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(out)) throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    return out;
}

long parse_long(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long out = 0;
    try {
        out = std::stol(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    const long x = parse_long(key, v);
    if (x < -2147483647L || x > 2147483647L) throw ConfigError(key + ": integer out of range");
    return int(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (k) out += ",";
        if constexpr (std::is_same_v<T, double>) {
            out += format_number(xs[k]);
        } else {
            out += std::to_string(xs[k]);
        }
    }
    return out;
}

struct KeySpec {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define KBL_DOUBLE(name, member)                                                                       \
    {name, {[](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); },              \
            [](const RunConfig& c) { return format_number(c.member); }}}
#define KBL_INT(name, member)                                                                          \
    {name, {[](RunConfig& c, const std::string& v) { c.member = parse_int(name, v); },                 \
            [](const RunConfig& c) { return std::to_string(c.member); }}}
#define KBL_BOOL(name, member)                                                                         \
    {name, {[](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); },                \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define KBL_STRING(name, member)                                                                       \
    {name, {[](RunConfig& c, const std::string& v) { c.member = v; },                                  \
            [](const RunConfig& c) { return c.member; }}}

const std::map<std::string, KeySpec>& key_table() {
    static const std::map<std::string, KeySpec> table = {
        KBL_INT("schema_version", schema_version),
        KBL_INT("grid.n", n),
        KBL_DOUBLE("grid.v_max", v_max),
        KBL_BOOL("grid.stagger", stagger),
        KBL_INT("collision.sphere_polar", sphere_polar),
        KBL_INT("collision.sphere_azimuth", sphere_azimuth),
        KBL_STRING("collision.interpolation", interpolation),
        KBL_DOUBLE("slab.d", d),
        KBL_INT("slab.n_x", n_x),
        KBL_DOUBLE("physics.p_E0", p_E0),
        KBL_DOUBLE("physics.epsilon", epsilon),
        KBL_DOUBLE("physics.beta", beta),
        KBL_DOUBLE("physics.varpi", varpi),
        KBL_DOUBLE("physics.sigma0", sigma0),
        KBL_DOUBLE("solver.tol", tol),
        KBL_INT("solver.max_iter", max_iter),
        KBL_STRING("solver.method", method),
        KBL_INT("solver.gmres_restart", gmres_restart),
        KBL_BOOL("solver.coarse", coarse),
        KBL_STRING("solver.sampling", sampling),
        KBL_DOUBLE("nonlinear.tol", nl_tol),
        KBL_INT("nonlinear.max_iter", nl_max_iter),
        KBL_DOUBLE("nonlinear.delta_max", delta_max),
        KBL_STRING("case.name", case_name),
        KBL_DOUBLE("case.amplitude", amplitude),
        KBL_DOUBLE("case.source_decay", source_decay),
        {"case.d_list",
         {[](RunConfig& c, const std::string& v) {
              c.d_list.clear();
              for (const auto& s : split_list(v)) c.d_list.push_back(parse_double("case.d_list", s));
          },
          [](const RunConfig& c) { return join(c.d_list); }}},
        {"case.nx_list",
         {[](RunConfig& c, const std::string& v) {
              c.nx_list.clear();
              for (const auto& s : split_list(v)) c.nx_list.push_back(parse_int("case.nx_list", s));
          },
          [](const RunConfig& c) { return join(c.nx_list); }}},
        KBL_STRING("case.manufactured", manufactured),
        KBL_STRING("output.dir", output_dir),
        KBL_BOOL("output.write_fields", write_fields),
        KBL_BOOL("output.record_timing", record_timing),
        {"seed",
         {[](RunConfig& c, const std::string& v) {
              const long s = parse_long("seed", v);
              if (s < 0 || s > 4294967295L) throw ConfigError("seed: must be in [0, 2^32)");
              c.seed = unsigned(s);
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
    };
    return table;
}

#undef KBL_DOUBLE
#undef KBL_INT
#undef KBL_BOOL
#undef KBL_STRING

std::vector<std::string> validation_errors(const RunConfig& c) {
    std::vector<std::string> e;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) e.push_back(msg);
    };
    need(c.schema_version == kConfigSchemaVersion,
         "schema_version: unsupported version " + std::to_string(c.schema_version) + " (expected " +
             std::to_string(kConfigSchemaVersion) + ")");
    need(c.n >= 4, "grid.n: must be >= 4");
    need(c.v_max > 0.0, "grid.v_max: must be positive");
    need(c.sphere_polar >= 1, "collision.sphere_polar: must be >= 1");
    need(c.sphere_azimuth >= 4 && c.sphere_azimuth % 4 == 0, "collision.sphere_azimuth: must be a positive multiple of 4");
    try {
        (void)interpolation_mode_from_string(c.interpolation);
    } catch (const ConfigError& ex) {
        e.push_back(std::string("collision.interpolation: ") + ex.what());
    }
    need(c.d > 0.0, "slab.d: must be positive");
    need(c.n_x >= 1, "slab.n_x: must be >= 1");
    need(c.p_E0 > 0.0, "physics.p_E0: must be positive");
    need(c.epsilon >= 0.0, "physics.epsilon: must be >= 0");
    need(c.beta >= 3.0, "physics.beta: the weight exponent must satisfy beta >= 3");
    need(c.varpi >= 0.0 && c.varpi < 0.125, "physics.varpi: the weight must satisfy 0 <= varpi < 1/8");
    need(c.sigma0 > 0.0 && c.sigma0 < 1.0, "physics.sigma0: must lie in (0, 1)");
    need(c.tol > 0.0, "solver.tol: must be positive");
    need(c.max_iter >= 1, "solver.max_iter: must be >= 1");
    need(c.method == "gmres" || c.method == "source_iteration", "solver.method: expected gmres or source_iteration");
    need(c.gmres_restart >= 1, "solver.gmres_restart: must be >= 1");
    need(c.sampling == "left_edge" || c.sampling == "cell_average", "solver.sampling: expected left_edge or cell_average");
    need(c.nl_tol > 0.0, "nonlinear.tol: must be positive");
    need(c.nl_max_iter >= 1, "nonlinear.max_iter: must be >= 1");
    need(c.delta_max > 0.0, "nonlinear.delta_max: must be positive");
    const auto names = case_names();
    need(std::find(names.begin(), names.end(), c.case_name) != names.end(), "case.name: unknown case '" + c.case_name + "'");
    need(c.source_decay > 0.0, "case.source_decay: must be positive");
    bool inc = !c.d_list.empty();
    for (std::size_t k = 0; k < c.d_list.size(); ++k) {
        if (!(c.d_list[k] > 0.0) || (k > 0 && !(c.d_list[k] > c.d_list[k - 1]))) inc = false;
    }
    need(inc, "case.d_list: must be a nonempty increasing list of positive lengths");
    bool nx_ok = c.nx_list.size() >= 2;
    for (std::size_t k = 0; k < c.nx_list.size(); ++k) {
        if (c.nx_list[k] < 1 || (k > 0 && c.nx_list[k] <= c.nx_list[k - 1])) nx_ok = false;
    }
    need(nx_ok, "case.nx_list: must be an increasing list of at least two cell counts");
    need(c.manufactured == "zero" || c.manufactured == "exp_decay" || c.manufactured == "exp_decay_nperp",
         "case.manufactured: expected zero, exp_decay or exp_decay_nperp");
    need(!c.output_dir.empty(), "output.dir: must not be empty");
    return e;
}

[[noreturn]] void throw_aggregated(const std::vector<std::string>& errors) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
}

// Owns the velocity grid, the Maxwellian context and the operators with
// stable addresses, since each refers to the previous one.
struct Setup {
    std::unique_ptr<VelocityGrid> grid;
    std::unique_ptr<MaxwellianContext> ctx;
    std::unique_ptr<LinearizedOperator> op;
    std::unique_ptr<TransportFunctionals> fun;
    std::unique_ptr<CollisionQuadrature> quad;
    CoercivityResult c0;

    explicit Setup(const RunConfig& c, bool with_quadrature) {
        grid = std::make_unique<VelocityGrid>(build_grid(c.n, c.v_max, c.stagger));
        ctx = std::make_unique<MaxwellianContext>(*grid);
        op = std::make_unique<LinearizedOperator>(assemble_operator(*ctx, c.collision()));
        fun = std::make_unique<TransportFunctionals>(transport_functionals(*op));
        if (with_quadrature) quad = std::make_unique<CollisionQuadrature>(*ctx, c.collision());
        c0 = estimate_c0(*op);
    }
};

json operator_json(const Setup& s) {
    const LinearizedOperator& op = *s.op;
    json j;
    j["grid_signature"] = s.grid->signature();
    j["velocity_nodes"] = s.grid->size();
    j["sphere"] = op.sphere_description();
    j["interpolation"] = to_string(op.interpolation());
    j["kappa1"] = s.fun->kappas.kappa1;
    j["kappa1_alt"] = s.fun->kappas.kappa1_alt;
    j["kappa2"] = s.fun->kappas.kappa2;
    j["c0_estimate"] = s.c0.c0;
    j["c0_converged"] = s.c0.converged;
    j["null_space_defect"] = op.null_space_defect();
    j["raw_null_space_defect"] = op.raw_defects().null_space_max;
    j["raw_symmetry_defect"] = op.raw_defects().symmetry;
    j["symmetry_defect"] = op.symmetry_defect();
    j["wall_normalization"] = s.ctx->wall_normalization();
    j["nu_min"] = op.nu().minCoeff();
    j["nu_max"] = op.nu().maxCoeff();
    return j;
}

json report_json(const SolveReport& r, bool timing) {
    json j;
    j["method"] = r.method;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    j["residual_history"] = r.residual_history;
    j["final_update"] = r.final_update;
    j["contraction"] = r.contraction;
    j["wall_bc_defect"] = r.wall_bc_defect;
    j["specular_defect"] = r.specular_defect;
    j["min_abs_v3"] = r.min_abs_v3;
    if (timing) j["seconds"] = r.seconds;
    return j;
}

json decay_json(const DecayFit& f) {
    json j;
    j["identically_zero"] = f.identically_zero;
    j["sigma_fit"] = f.sigma_fit;
    j["r_squared"] = f.r_squared;
    j["window"] = {f.x_lo, f.x_hi};
    j["points_used"] = f.points_used;
    j["floor_rel"] = f.floor_rel;
    j["monotone"] = f.monotone;
    return j;
}

json farfield_json(const FarFieldState& s) {
    json j;
    j["phi"] = s.phi;
    j["b_inf"] = s.b_inf;
    j["c_inf"] = s.c_inf;
    j["d_used"] = s.d_used;
    j["normalization"] = s.normalization;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    out.close();
    if (!out) throw IoError("failed writing '" + path + "'");
}

SlabSolverOptions linear_options(const RunConfig& c) { return c.solver(); }

FarFieldConfig farfield_config(const RunConfig& c, double d, int n_x) {
    FarFieldConfig f;
    f.d = d;
    f.n_x = n_x;
    f.p_E0 = c.p_E0;
    f.solver = linear_options(c);
    return f;
}

struct CaseResult {
    bool pass = false;
    std::string failure;
    SolveReport report;
    std::optional<FarFieldState> farfield;
    std::optional<DecayFit> decay;
    double drift = 0.0;
    std::vector<CsvTable> tables;
    json extra = json::object();
};

CaseResult case_check_operator(const RunConfig& c, const Setup& s) {
    CaseResult out;
    const LinearizedOperator& op = *s.op;
    json ids = json::array();
    bool moments_ok = true;
    for (const auto& m : s.ctx->verify_gaussian_moments()) {
        const bool ok = std::abs(m.defect) <= 1e-3 * std::max(1.0, std::abs(m.expected));
        moments_ok = moments_ok && ok;
        ids.push_back({{"label", m.label}, {"computed", m.computed}, {"expected", m.expected}, {"pass", ok}});
    }
    const Kappas& k = s.fun->kappas;
    const bool kappa_ok = k.kappa1 > 0 && k.kappa2 > 0 && std::abs(k.kappa1 - k.kappa1_alt) <= 0.01 * k.kappa1;
    const bool null_ok = op.null_space_defect() <= 1e-12;
    const bool sym_ok = op.symmetry_defect() <= 1e-8;
    const bool c0_ok = s.c0.c0 > 0.0;
    out.pass = moments_ok && kappa_ok && null_ok && sym_ok && c0_ok;
    if (!out.pass) {
        out.failure = std::string("operator checks failed:") + (moments_ok ? "" : " moments") + (kappa_ok ? "" : " kappa") +
                      (null_ok ? "" : " null_space") + (sym_ok ? "" : " symmetry") + (c0_ok ? "" : " c0");
    }
    out.extra["moment_identities"] = ids;
    out.report.converged = true;
    out.report.method = "check_operator";

    CsvTable nu{"nu", {"v1", "v2", "v3", "nu"}, {}};
    for (std::size_t i = 0; i < s.grid->size(); ++i) {
        const Vec3& v = s.grid->node(i);
        nu.rows.push_back({v[0], v[1], v[2], op.nu()[Index(i)]});
    }
    out.tables.push_back(std::move(nu));
    (void)c;
    return out;
}

void add_field_tables(CaseResult& out, const RunConfig& c, const std::string& name, const Eigen::MatrixXd& edges,
                      const SlabGrid& slab, const MaxwellianContext& ctx) {
    if (c.write_fields) out.tables.push_back(field_table(name, edges, slab, ctx, c.weight()));
    out.tables.push_back(moment_table("moments", edges, slab, ctx));
}

CaseResult case_linear(const RunConfig& c, const Setup& s, bool zero) {
    CaseResult out;
    const MaxwellianContext& ctx = *s.ctx;
    const SlabGrid slab = make_slab(c.d, c.n_x);
    LinearSlabProblem p;
    p.p_E0 = c.p_E0;
    p.epsilon = c.epsilon;
    if (!zero) {
        p.g = c.amplitude * decaying_source(generic_source_profile(ctx), slab, c.source_decay);
        p.r = c.amplitude * generic_wall_data(ctx);
    }
    LinearSolveResult res = solve_linear_slab(p, slab, *s.op, linear_options(c));
    out.report = res.report;
    const ConservationReport cons = conservation_report(res.field.edges, p.g, ctx);
    out.drift = cons.max_drift;
    if (zero) {
        const double sup = res.field.edges.cwiseAbs().maxCoeff();
        out.pass = res.report.converged && sup <= 1e-12;
        if (!out.pass) out.failure = "zero data produced a nonzero field";
    } else {
        out.pass = res.report.converged;
        if (!out.pass) out.failure = "linear solve did not converge";
        const Eigen::MatrixXd layer = res.field.edges.colwise() - res.field.far_trace();
        out.decay = fit_decay_rate(layer, slab, ctx.weight_values(c.weight()));
    }
    add_field_tables(out, c, "fields", res.field.edges, slab, ctx);
    return out;
}

CaseResult case_mms(const RunConfig& c, const Setup& s) {
    CaseResult out;
    CsvTable t{"mms", {"n_x", "dx", "error"}, {}};
    std::vector<double> hs, errs;
    for (int nx : c.nx_list) {
        const SlabGrid slab = make_slab(c.d, nx);
        ManufacturedCase m = manufactured_case(c.manufactured, slab, *s.op, c.p_E0);
        m.problem.epsilon = c.epsilon;
        LinearSolveResult res = solve_linear_slab(m.problem, slab, *s.op, linear_options(c));
        const double err = (res.field.edges - m.exact).cwiseAbs().maxCoeff();
        t.rows.push_back({double(nx), slab.dx(), err});
        hs.push_back(slab.dx());
        errs.push_back(err);
        out.report = res.report;
        if (!res.report.converged) {
            out.failure = "manufactured solve did not converge at n_x = " + std::to_string(nx);
            out.tables.push_back(std::move(t));
            return out;
        }
    }
    out.tables.push_back(std::move(t));
    if (c.manufactured == "zero") {
        out.pass = *std::max_element(errs.begin(), errs.end()) <= 1e-12;
        out.extra["order"] = nullptr;
        return out;
    }
    const OrderFit f = fit_convergence_order(hs, errs);
    out.extra["order"] = f.order;
    out.extra["order_r_squared"] = f.r_squared;
    out.extra["error_ratios"] = f.ratios;
    out.pass = f.order >= 0.8 && f.order <= 1.2;
    if (!out.pass) out.failure = "observed order " + format_number(f.order) + " outside [0.8, 1.2]";
    return out;
}

CaseResult case_farfield(const RunConfig& c, const Setup& s, bool with_study) {
    CaseResult out;
    const MaxwellianContext& ctx = *s.ctx;
    const NodeValues prof = generic_source_profile(ctx);
    const NodeValues r = c.amplitude * generic_wall_data(ctx);
    const FarFieldConfig fc = farfield_config(c, c.d, c.n_x);
    const SlabGrid slab = make_slab(c.d, c.n_x);
    const Eigen::MatrixXd g = c.amplitude * decaying_source(prof, slab, c.source_decay);
    FarFieldResult res = far_field_G(g, r, *s.op, *s.fun, fc);
    out.report = res.report;
    out.farfield = res.state;
    const NodeValues w = ctx.weight_values(c.weight());
    out.decay = fit_decay_rate(res.tilde_f.edges, slab, w);
    out.drift = conservation_report(res.barf.edges, g, ctx).max_drift;
    out.extra["bar_tail"] = res.bar_tail;
    out.extra["tilde_tail"] = res.tilde_tail;
    out.extra["wall_mass_z"] = res.z;
    out.pass = res.report.converged && res.tilde_tail <= 0.1 * res.bar_tail;
    if (!out.pass) out.failure = "corrected tail is not below 0.1 of the uncorrected tail";
    add_field_tables(out, c, "fields", res.tilde_f.edges, slab, ctx);

    std::vector<FarFieldState> states;
    if (with_study) {
        const double amp = c.amplitude, rate = c.source_decay;
        const SourceFn gf = [&prof, amp, rate](double x) { return NodeValues(amp * prof * std::exp(-rate * x)); };
        const DStudy st = d_convergence_study(gf, r, c.d_list, *s.op, *s.fun, fc);
        for (const auto& row : st.rows) states.push_back(row.state);
        out.extra["d_gaps"] = st.gaps;
        out.extra["d_gaps_decreasing"] = st.gaps_decreasing;
        out.extra["d_log_gap_slope"] = st.log_gap_slope;
        out.extra["d_geometric_ratio"] = st.geometric_ratio;
        if (c.case_name == "d_study") {
            out.pass = st.gaps_decreasing && st.geometric_ratio < 1.0;
            if (!out.pass) out.failure = "phi(d) gaps are not strictly decreasing";
        }
    } else {
        states.push_back(res.state);
    }
    out.tables.push_back(farfield_table(states));
    return out;
}

CaseResult case_nonlinear(const RunConfig& c, const Setup& s) {
    CaseResult out;
    const MaxwellianContext& ctx = *s.ctx;
    const SlabGrid slab = make_slab(c.d, c.n_x);
    NonlinearProblem p;
    p.S = c.amplitude * decaying_source(generic_source_profile(ctx), slab, c.source_decay);
    p.R = c.amplitude * generic_wall_data(ctx);
    p.p_E0 = c.p_E0;
    p.weight = c.weight();
    p.sigma0 = c.sigma0;
    NonlinearConfig nc;
    nc.farfield = farfield_config(c, c.d, c.n_x);
    nc.tol = c.nl_tol;
    nc.max_iter = c.nl_max_iter;
    nc.delta_max = c.delta_max;
    NonlinearResult res = solve_nonlinear(p, *s.quad, *s.op, *s.fun, nc);
    out.report = res.report;
    out.farfield = res.state;
    out.decay = fit_decay_rate(res.f.edges, slab, ctx.weight_values(c.weight()));
    out.extra["delta"] = res.delta;
    out.pass = res.report.converged;
    if (!out.pass) out.failure = "Picard iteration did not reach the tolerance";
    CsvTable h{"history", {"j", "diff", "ratio", "b1_inf", "b2_inf", "c_inf", "gamma_defect_raw"}, {}};
    for (const auto& st : res.history) {
        h.rows.push_back({double(st.j), st.diff, st.ratio, st.state.b_inf[0], st.state.b_inf[1], st.state.c_inf,
                          st.gamma_defect_raw});
    }
    out.tables.push_back(std::move(h));
    add_field_tables(out, c, "fields", res.f.edges, slab, ctx);
    out.tables.push_back(farfield_table({res.state}));
    return out;
}

// Deletes the files listed by an earlier manifest in dir so reruns leave an
// identical tree; unrelated files are kept.
void remove_previous_outputs(const std::string& dir) {
    const std::filesystem::path mpath = std::filesystem::path(dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) return;
    json old;
    try {
        in >> old;
    } catch (const json::exception&) {
        return;
    }
    if (!old.contains("files") || !old["files"].is_array()) return;
    std::error_code ec;
    for (const auto& f : old["files"]) {
        if (!f.is_string()) continue;
        const std::filesystem::path name = f.get<std::string>();
        if (name.has_parent_path()) continue;
        std::filesystem::remove(std::filesystem::path(dir) / name, ec);
    }
    std::filesystem::remove(mpath, ec);
}

}  // namespace

const char* software_version() noexcept { return KBL_VERSION; }

CollisionOptions RunConfig::collision() const {
    CollisionOptions o;
    o.sphere_polar = sphere_polar;
    o.sphere_azimuth = sphere_azimuth;
    o.interpolation = interpolation_mode_from_string(interpolation);
    return o;
}

SlabSolverOptions RunConfig::solver() const {
    SlabSolverOptions o;
    o.tol = tol;
    o.max_iter = max_iter;
    o.method = slab_method_from_string(method);
    o.gmres_restart = gmres_restart;
    o.coarse_correction = coarse;
    o.sampling = sampling == "cell_average" ? SourceSampling::CellAverage : SourceSampling::LeftEdge;
    o.weight = weight();
    return o;
}

std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, spec] : key_table()) out.emplace_back(k, spec.get(*this));
    return out;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : echo()) out += k + " = " + v + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& kv : key_table()) out.push_back(kv.first);
    return out;
}

std::vector<std::string> case_names() {
    return {"check_operator", "zero_data", "linear_generic", "mms_linear", "farfield_generic", "d_study",
            "nonlinear_generic"};
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& t = key_table();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown key '" + key + "'");
    it->second.set(cfg, value);
}

void validate_config(const RunConfig& cfg) {
    const auto errors = validation_errors(cfg);
    if (!errors.empty()) throw_aggregated(errors);
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::vector<std::string> errors;
    std::map<std::string, int> seen;
    bool has_schema = false;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) {
            errors.push_back(where + "expected 'key = value'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (seen.count(key)) {
            errors.push_back(where + "duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
            continue;
        }
        seen[key] = lineno;
        if (key == "schema_version") has_schema = true;
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            errors.push_back(where + e.what());
        }
    }
    if (!has_schema) errors.push_back("schema_version: missing (expected " + std::to_string(kConfigSchemaVersion) + ")");
    for (auto& e : validation_errors(cfg)) {
        if (!has_schema && e.rfind("schema_version", 0) == 0) continue;
        errors.push_back(std::move(e));
    }
    if (!errors.empty()) throw_aggregated(errors);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

NodeValues generic_source_profile(const MaxwellianContext& ctx) {
    return ctx.project_out(ctx.sample_with([](const Vec3& v) {
        return (v[0] * v[2] + 0.5 * v[2] * v[2] * v[2] - 0.3 * v[1] * v[1] + 0.2 * v[0]) * std::sqrt(maxwellian(v));
    }));
}

NodeValues generic_wall_data(const MaxwellianContext& ctx) {
    NodeValues h = ctx.sample_with([](const Vec3& v) {
        return (0.7 + v[0] + 0.4 * v[1] - 0.3 * v[2] * v[2] + 0.2 * v[0] * v[2]) * std::sqrt(maxwellian(v));
    });
    NodeValues r = remove_wall_flux(ctx, h);
    for (std::size_t i : ctx.grid().negative_v3()) r[Index(i)] = 0.0;
    return r;
}

Eigen::MatrixXd decaying_source(const NodeValues& profile, const SlabGrid& slab, double rate) {
    Eigen::MatrixXd g(profile.size(), slab.n_edges());
    for (int k = 0; k < slab.n_edges(); ++k) g.col(k) = profile * std::exp(-rate * slab.x_nodes[std::size_t(k)]);
    return g;
}

ManufacturedCase manufactured_case(const std::string& name, const SlabGrid& slab, const LinearizedOperator& op,
                                   double p_E0) {
    const MaxwellianContext& ctx = op.context();
    const VelocityGrid& grid = ctx.grid();
    const Index N = Index(grid.size());
    ManufacturedCase out;
    out.problem.p_E0 = p_E0;
    if (name == "zero") {
        out.exact = Eigen::MatrixXd::Zero(N, slab.n_edges());
        out.problem.far_inflow_override = NodeValues::Zero(N);
        return out;
    }
    if (name != "exp_decay" && name != "exp_decay_nperp") throw ConfigError("unknown manufactured case '" + name + "'");

    NodeValues psi = ctx.sample_with([](const Vec3& v) {
        return (v[2] + 0.5 * v[0] * v[2] + 0.3 * v[2] * v[2] * v[2] + 0.2 * v[1]) * std::sqrt(maxwellian(v));
    });
    if (name == "exp_decay") {
        psi = ctx.project_out(psi);
    } else {
        // Remove span{chi_k, v3 chi_k} so that <v3 psi, chi_k> = 0 as well.
        const InvariantBasis& X = ctx.invariant_basis();
        std::vector<NodeValues> basis;
        for (int k = 0; k < 5; ++k) {
            basis.push_back(X.col(k));
            NodeValues t(N);
            for (Index i = 0; i < N; ++i) t[i] = grid.node(std::size_t(i))[2] * X(i, k);
            basis.push_back(t);
        }
        std::vector<NodeValues> ortho;
        for (auto b : basis) {
            const double n0 = ctx.norm(b);
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& q : ortho) b -= ctx.inner(q, b) * q;
            }
            const double nb = ctx.norm(b);
            if (nb > 1e-10 * n0) ortho.push_back(b / nb);
        }
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& q : ortho) psi -= ctx.inner(q, psi) * q;
        }
    }
    NodeValues shape(N);
    const NodeValues Lpsi = op.apply_L(psi);
    for (Index i = 0; i < N; ++i) shape[i] = -grid.node(std::size_t(i))[2] * psi[i] + p_E0 * Lpsi[i];
    if (name == "exp_decay_nperp") shape = ctx.project_out(shape);

    out.exact.resize(N, slab.n_edges());
    out.problem.g.resize(N, slab.n_edges());
    for (int k = 0; k < slab.n_edges(); ++k) {
        const double e = std::exp(-slab.x_nodes[std::size_t(k)]);
        out.exact.col(k) = e * psi;
        out.problem.g.col(k) = e * shape;
    }
    const NodeValues f0 = out.exact.col(0);
    out.problem.r = f0 - ctx.pgamma(f0);
    for (std::size_t i : grid.negative_v3()) out.problem.r[Index(i)] = 0.0;
    out.problem.far_inflow_override = NodeValues(out.exact.col(slab.n_x));
    return out;
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string render_csv(const CsvTable& t) {
    std::string out;
    for (std::size_t k = 0; k < t.header.size(); ++k) {
        if (k) out += ',';
        out += t.header[k];
    }
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out += ',';
            out += format_number(row[k]);
        }
        out += '\n';
    }
    return out;
}

std::vector<std::string> export_csv(const std::vector<CsvTable>& tables, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    std::vector<std::string> out;
    for (const auto& t : tables) {
        const std::string path = (std::filesystem::path(dir) / (t.name + ".csv")).string();
        write_text(path, render_csv(t));
        out.push_back(path);
    }
    return out;
}

CsvTable field_table(const std::string& name, const Eigen::MatrixXd& edges, const SlabGrid& slab,
                     const MaxwellianContext& ctx, const WeightSpec& weight) {
    CsvTable t{name, {"x", "v1", "v2", "v3", "f", "wf"}, {}};
    const NodeValues w = ctx.weight_values(weight);
    const VelocityGrid& g = ctx.grid();
    t.rows.reserve(std::size_t(edges.size()));
    for (Index k = 0; k < edges.cols(); ++k) {
        for (Index i = 0; i < edges.rows(); ++i) {
            const Vec3& v = g.node(std::size_t(i));
            t.rows.push_back({slab.x_nodes[std::size_t(k)], v[0], v[1], v[2], edges(i, k), w[i] * edges(i, k)});
        }
    }
    return t;
}

CsvTable moment_table(const std::string& name, const Eigen::MatrixXd& edges, const SlabGrid& slab,
                      const MaxwellianContext& ctx) {
    CsvTable t{name, {"x", "mass_flux", "mom1", "mom2", "mom3", "energy_flux"}, {}};
    const Eigen::MatrixXd m = flux_moments(ctx, edges);
    for (Index k = 0; k < m.rows(); ++k) {
        t.rows.push_back({slab.x_nodes[std::size_t(k)], m(k, 0), m(k, 1), m(k, 2), m(k, 3), m(k, 4)});
    }
    return t;
}

CsvTable farfield_table(const std::vector<FarFieldState>& states) {
    CsvTable t{"farfield", {"d", "phi0", "phi1", "phi2", "phi3", "b1_inf", "b2_inf", "c_inf"}, {}};
    for (const auto& s : states) {
        t.rows.push_back({s.d_used, s.phi[0], s.phi[1], s.phi[2], s.phi[3], s.b_inf[0], s.b_inf[1], s.c_inf});
    }
    return t;
}

std::string resolve_output_dir(const std::string& dir) {
    const std::filesystem::path p(dir);
    if (p.is_absolute()) return p.string();
    if (const char* root = std::getenv("KBL_OUTPUT_ROOT"); root && *root) return (std::filesystem::path(root) / p).string();
    return p.string();
}

RunOutcome run_case(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    RunOutcome out;
    out.case_name = cfg.case_name;
    json manifest;
    manifest["software"] = {{"name", "kbl"}, {"version", software_version()}};
    manifest["schema_version"] = kConfigSchemaVersion;
    json echo = json::object();
    for (const auto& [k, v] : cfg.echo()) echo[k] = v;
    manifest["config"] = echo;
    manifest["case"] = cfg.case_name;

    const std::string dir = resolve_output_dir(cfg.output_dir);
    remove_previous_outputs(dir);
    try {
        validate_config(cfg);
        const bool nonlinear = cfg.case_name == "nonlinear_generic";
        const Setup s(cfg, nonlinear);
        manifest["operator"] = operator_json(s);
        CaseResult res;
        if (cfg.case_name == "check_operator") {
            res = case_check_operator(cfg, s);
        } else if (cfg.case_name == "zero_data") {
            res = case_linear(cfg, s, true);
        } else if (cfg.case_name == "linear_generic") {
            res = case_linear(cfg, s, false);
        } else if (cfg.case_name == "mms_linear") {
            res = case_mms(cfg, s);
        } else if (cfg.case_name == "farfield_generic") {
            res = case_farfield(cfg, s, true);
        } else if (cfg.case_name == "d_study") {
            res = case_farfield(cfg, s, true);
        } else {
            res = case_nonlinear(cfg, s);
        }
        out.pass = res.pass;
        out.failure = res.failure;
        out.report = res.report;
        out.farfield = res.farfield;
        out.decay = res.decay;
        out.conservation_drift = res.drift;
        manifest["report"] = report_json(res.report, cfg.record_timing);
        manifest["conservation_drift"] = res.drift;
        manifest["decay_fit"] = res.decay ? decay_json(*res.decay) : json(nullptr);
        manifest["farfield"] = res.farfield ? farfield_json(*res.farfield) : json(nullptr);
        manifest["results"] = res.extra;
        out.files = export_csv(res.tables, dir);
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        out.pass = false;
        out.failure = e.what();
        manifest["error"] = e.what();
        if (const auto* se = dynamic_cast<const SmallnessError*>(&e)) manifest["delta"] = se->delta();
    }
    manifest["pass"] = out.pass;
    manifest["failure"] = out.failure;
    json files = json::array();
    for (const auto& f : out.files) files.push_back(std::filesystem::path(f).filename().string());
    manifest["files"] = files;
    if (cfg.record_timing) {
        manifest["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    out.manifest = manifest.dump(2) + "\n";
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    const std::string mpath = (std::filesystem::path(dir) / "manifest.json").string();
    write_text(mpath, out.manifest);
    out.files.push_back(mpath);
    return out;
}

}  // namespace kbl
