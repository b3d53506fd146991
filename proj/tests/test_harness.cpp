#include "kbl/errors.hpp"
#include "kbl/harness.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "support.hpp"

using namespace kbl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
    return out;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("kbl_harness_" + name);
    fs::remove_all(p);
    return p;
}

RunConfig small(const std::string& case_name, const fs::path& dir) {
    RunConfig c;
    c.n = 6;
    c.d = 4.0;
    c.n_x = 20;
    c.case_name = case_name;
    c.output_dir = dir.string();
    return c;
}

std::string error_text(const std::string& cfg) {
    try {
        (void)parse_config(cfg);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_SUITE("harness") {
TEST_CASE("minimal config fills defaults and round-trips") {
    const RunConfig c = parse_config("schema_version = 1\n");
    const RunConfig def;
    CHECK(c.echo() == def.echo());
    const RunConfig back = parse_config(c.to_text());
    CHECK(back.echo() == c.echo());
    RunConfig odd;
    odd.d = 0.1 + 0.2;
    odd.d_list = {1.0 / 3.0, 1.5, 2.25};
    odd.d_list.push_back(7.0);
    CHECK(parse_config(odd.to_text()).d == odd.d);
    CHECK(parse_config(odd.to_text()).d_list == odd.d_list);
    CHECK(config_keys().size() == def.echo().size());
}

TEST_CASE("comments and whitespace") {
    const RunConfig c = parse_config("# run\n  schema_version=1  \n\ngrid.n = 12 # finer\nslab.d=10\n");
    CHECK(c.n == 12);
    CHECK(c.d == 10.0);
}

TEST_CASE("violations are aggregated and named") {
    const std::string e = error_text("schema_version = 1\nphysics.varpi = 0.2\nbogus.key = 3\ngrid.n = two\n");
    CHECK(e.find("varpi") != std::string::npos);
    CHECK(e.find("1/8") != std::string::npos);
    CHECK(e.find("bogus.key") != std::string::npos);
    CHECK(e.find("grid.n") != std::string::npos);
    CHECK(e.find("3 problems") != std::string::npos);
    CHECK(error_text("grid.n = 8\n").find("schema_version") != std::string::npos);
    CHECK(error_text("schema_version = 2\n").find("unsupported") != std::string::npos);
    CHECK(error_text("schema_version = 1\nslab.d = 3\nslab.d = 4\n").find("duplicate") != std::string::npos);
    CHECK(error_text("schema_version = 1\nphysics.beta = 2\n").find("beta") != std::string::npos);
    CHECK(error_text("schema_version = 1\ncase.d_list = 6,4\n").find("d_list") != std::string::npos);
    CHECK(error_text("schema_version = 1\nno equals sign\n").find("line 2") != std::string::npos);
    RunConfig c;
    CHECK_THROWS_AS(set_config_value(c, "nope", "1"), ConfigError);
    set_config_value(c, "physics.varpi", "0.125");
    CHECK_THROWS_AS(validate_config(c), ConfigError);
}

TEST_CASE("number formatting keeps 17 significant digits") {
    const double x = 0.1 + 0.2;
    CHECK(std::stod(format_number(x)) == x);
    CHECK(format_number(1.0) == "1");
    CHECK(render_csv({"t", {"a", "b"}, {}}) == "a,b\n");
    CHECK(render_csv({"t", {"a", "b"}, {{1.0, 0.5}}}) == "a,b\n1,0.5\n");
}

TEST_CASE("manufactured cases") {
    const auto& b = test::bundle(6);
    const SlabGrid slab = make_slab(3.0, 12);
    const ManufacturedCase z = manufactured_case("zero", slab, *b.op);
    CHECK(test::sup(z.exact) == 0.0);
    CHECK(z.problem.g.size() == 0);
    const ManufacturedCase m = manufactured_case("exp_decay_nperp", slab, *b.op);
    for (int k = 0; k < slab.n_edges(); ++k) CHECK(b.ctx->invariant_moments(m.problem.g.col(k)).cwiseAbs().maxCoeff() < 1e-12);
    const ManufacturedCase e = manufactured_case("exp_decay", slab, *b.op);
    CHECK(b.ctx->invariant_moments(e.exact.col(0)).cwiseAbs().maxCoeff() < 1e-13);
    for (std::size_t i : b.grid->negative_v3()) CHECK(e.problem.r[Eigen::Index(i)] == 0.0);
    CHECK_THROWS_AS(manufactured_case("sine", slab, *b.op), ConfigError);
}

TEST_CASE("zero_data run writes all-zero fields and a manifest") {
    const fs::path dir = scratch_dir("zero");
    const RunOutcome o = run_case(small("zero_data", dir));
    CHECK(o.pass);
    CHECK(o.report.iterations == 1);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m["pass"] == true);
    CHECK(m["operator"].contains("kappa1"));
    CHECK(m["operator"].contains("c0_estimate"));
    CHECK(m["operator"]["grid_signature"] == build_grid(6, 5.0).signature());
    CHECK(m["config"]["case.name"] == "zero_data");
    CHECK_FALSE(m["report"].contains("seconds"));
    std::istringstream fields(slurp(dir / "fields.csv"));
    std::string line;
    std::getline(fields, line);
    CHECK(line == "x,v1,v2,v3,f,wf");
    while (std::getline(fields, line)) CHECK(line.substr(line.rfind(',', line.rfind(',') - 1)) == ",0,0");
    CHECK(slurp(dir / "moments.csv").rfind("x,mass_flux,mom1,mom2,mom3,energy_flux\n", 0) == 0);
}

TEST_CASE("identical configs give byte-identical trees") {
    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    RunConfig c = small("farfield_generic", a);
    c.d_list = {3.0, 4.0};
    (void)run_case(c);
    const auto first = tree(a);
    (void)run_case(c);
    CHECK(tree(a) == first);
    c.output_dir = b.string();
    (void)run_case(c);
    auto second = tree(b);
    // Only the echoed output directory differs.
    auto ma = nlohmann::json::parse(first.at("manifest.json"));
    auto mb = nlohmann::json::parse(second.at("manifest.json"));
    ma["config"].erase("output.dir");
    mb["config"].erase("output.dir");
    CHECK(ma == mb);
    for (const auto& [name, text] : first) {
        if (name != "manifest.json") CHECK(second.at(name) == text);
    }
}

TEST_CASE("d_study emits one far-field row per length") {
    const fs::path dir = scratch_dir("dstudy");
    RunConfig c = small("d_study", dir);
    c.d_list = {3.0, 4.0, 5.0};
    const RunOutcome o = run_case(c);
    CHECK(o.farfield.has_value());
    std::istringstream ff(slurp(dir / "farfield.csv"));
    std::string line;
    int rows = -1;
    while (std::getline(ff, line)) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("mms_linear case reports the observed order") {
    const fs::path dir = scratch_dir("mms");
    RunConfig c = small("mms_linear", dir);
    c.nx_list = {40, 80};
    const RunOutcome o = run_case(c);
    CHECK(o.pass);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m["results"]["order"].get<double>() == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("module errors become structured failures") {
    const fs::path dir = scratch_dir("fail");
    RunConfig c = small("nonlinear_generic", dir);
    c.amplitude = 100.0;
    const RunOutcome o = run_case(c);
    CHECK_FALSE(o.pass);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m.contains("error"));
    CHECK(m["delta"].get<double>() > 1.0);
}

TEST_CASE("relative output directories honour the root variable") {
    setenv("KBL_OUTPUT_ROOT", "/tmp/kbl_root", 1);
    CHECK(resolve_output_dir("runs/a") == "/tmp/kbl_root/runs/a");
    CHECK(resolve_output_dir("/abs/b") == "/abs/b");
    unsetenv("KBL_OUTPUT_ROOT");
    CHECK(resolve_output_dir("runs/a") == "runs/a");
}
}
