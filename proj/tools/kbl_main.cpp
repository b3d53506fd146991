#include "kbl/errors.hpp"
#include "kbl/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<int> n;
    std::optional<double> d;
    std::optional<int> n_x;
    std::optional<std::string> out;
    bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("-c,--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", c.sets, "override one key, e.g. --set slab.d=10")->allow_extra_args(false);
    sub->add_option("--n", c.n, "velocity nodes per axis (grid.n)");
    sub->add_option("--d", c.d, "slab length (slab.d)");
    sub->add_option("--nx", c.n_x, "slab cells (slab.n_x)");
    sub->add_option("-o,--out", c.out, "output directory (output.dir)");
    sub->add_flag("-q,--quiet", c.quiet, "print only the PASS/FAIL line");
}

kbl::RunConfig build_config(const Common& c, const std::string& case_name) {
    kbl::RunConfig cfg = c.config_path.empty() ? kbl::RunConfig{} : kbl::load_config(c.config_path);
    if (!case_name.empty()) cfg.case_name = case_name;
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw kbl::ConfigError("--set expects key=value, got '" + kv + "'");
        kbl::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.n) cfg.n = *c.n;
    if (c.d) cfg.d = *c.d;
    if (c.n_x) cfg.n_x = *c.n_x;
    if (c.out) cfg.output_dir = *c.out;
    kbl::validate_config(cfg);
    return cfg;
}

void print_summary(const kbl::RunOutcome& o) {
    const auto& r = o.report;
    std::printf("case            %s\n", o.case_name.c_str());
    std::printf("method          %s\n", r.method.c_str());
    std::printf("converged       %s after %d iterations\n", r.converged ? "yes" : "no", r.iterations);
    if (o.farfield) {
        const auto& s = *o.farfield;
        std::printf("b_inf           %.10g %.10g\n", s.b_inf[0], s.b_inf[1]);
        std::printf("c_inf           %.10g\n", s.c_inf);
    }
    if (o.decay && !o.decay->identically_zero) {
        std::printf("decay fit       sigma %.6g  r2 %.6f\n", o.decay->sigma_fit, o.decay->r_squared);
    }
    std::printf("flux drift      %.3e\n", o.conservation_drift);
    for (const auto& f : o.files) std::printf("wrote           %s\n", f.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Steady half-space kinetic boundary layer solver"};
    app.set_version_flag("--version", std::string(kbl::software_version()));
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        const char* case_name;
    };
    const std::vector<Sub> subs = {
        {"check-operator", "moment identities, null space, kappa and c0", "check_operator"},
        {"solve-linear", "linear slab problem with generic data", "linear_generic"},
        {"solve-farfield", "far-field state and corrected layer", "farfield_generic"},
        {"solve-nonlinear", "Picard iteration for the weakly nonlinear problem", "nonlinear_generic"},
        {"d-study", "far-field state across slab lengths", "d_study"},
        {"mms", "manufactured-solution refinement study", "mms_linear"},
        {"run", "run the case named in the configuration", ""},
    };
    std::vector<Common> opts(subs.size());
    std::vector<CLI::App*> apps;
    bool zero = false;
    for (std::size_t k = 0; k < subs.size(); ++k) {
        CLI::App* sub = app.add_subcommand(subs[k].name, subs[k].help);
        add_common(sub, opts[k]);
        if (std::string(subs[k].name) == "solve-linear") sub->add_flag("--zero", zero, "use zero data (case zero_data)");
        apps.push_back(sub);
    }
    bool show_keys = false;
    CLI::App* keys = app.add_subcommand("config", "print every configuration key with its default");
    keys->add_flag("--keys-only", show_keys, "print key names only");

    CLI11_PARSE(app, argc, argv);

    if (keys->parsed()) {
        const kbl::RunConfig def;
        if (show_keys) {
            for (const auto& k : kbl::config_keys()) std::cout << k << "\n";
        } else {
            std::cout << def.to_text();
        }
        return 0;
    }

    for (std::size_t k = 0; k < subs.size(); ++k) {
        if (!apps[k]->parsed()) continue;
        std::string case_name = subs[k].case_name;
        if (zero && case_name == "linear_generic") case_name = "zero_data";
        try {
            const kbl::RunConfig cfg = build_config(opts[k], case_name);
            const kbl::RunOutcome out = kbl::run_case(cfg);
            if (!opts[k].quiet) print_summary(out);
            std::printf("%s %s%s%s\n", out.pass ? "PASS" : "FAIL", out.case_name.c_str(), out.failure.empty() ? "" : ": ",
                        out.failure.c_str());
            return out.pass ? 0 : 1;
        } catch (const kbl::ConfigError& e) {
            std::fprintf(stderr, "configuration error: %s\n", e.what());
            return 2;
        } catch (const kbl::IoError& e) {
            std::fprintf(stderr, "output error: %s\n", e.what());
            return 3;
        }
    }
    return 1;
}
