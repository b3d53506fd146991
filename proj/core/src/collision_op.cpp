#include "kbl/collision_op.hpp"

#include "kbl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace kbl {

namespace {

using Index = Eigen::Index;

struct Corners {
    std::array<std::size_t, 8> node;
    std::array<double, 8> weight;
    int size = 0;
};

}  // namespace

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    if (n < 1) throw ConfigError("gauss_legendre: need at least one node");
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int k = 0; k < n; ++k) {
        double z = std::cos(std::numbers::pi * (k + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int m = 2; m <= n; ++m) {
                const double p2 = ((2.0 * m - 1.0) * z * p1 - (m - 1.0) * p0) / m;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) {
                p1 = z;
                p0 = 1.0;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        x[k] = z;
        w[k] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    std::reverse(x.begin(), x.end());
    std::reverse(w.begin(), w.end());
}

SphereRule SphereRule::hemisphere_product(int n_polar, int n_azimuth) {
    if (n_polar < 1) throw ConfigError("sphere rule: n_polar must be >= 1");
    if (n_azimuth < 4 || n_azimuth % 4 != 0) {
        throw ConfigError("sphere rule: n_azimuth must be a positive multiple of 4");
    }
    if (2 * n_polar * n_azimuth < 26) {
        throw ConfigError("sphere rule: fewer than 26 effective nodes on the full sphere");
    }
    std::vector<double> x, w;
    gauss_legendre(n_polar, x, w);
    SphereRule r;
    r.n_polar = n_polar;
    r.n_azimuth = n_azimuth;
    const double dphi = 2.0 * std::numbers::pi / n_azimuth;
    for (int p = 0; p < n_polar; ++p) {
        const double c = 0.5 * (x[p] + 1.0);
        const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int a = 0; a < n_azimuth; ++a) {
            const double phi = (a + 0.5) * dphi;
            r.nodes.push_back({s * std::cos(phi), s * std::sin(phi), c});
            r.weights.push_back(0.5 * w[p] * dphi * 2.0);
        }
    }
    return r;
}

std::string SphereRule::description() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "hemisphere GL%d x azimuth %d (%zu nodes, %zu effective)", n_polar,
                  n_azimuth, size(), 2 * size());
    return buf;
}

const char* to_string(InterpolationMode m) noexcept {
    switch (m) {
        case InterpolationMode::Trilinear: return "trilinear";
        case InterpolationMode::MaxwellianWeighted: return "maxwellian_weighted";
        case InterpolationMode::MaxwellianRatio: return "maxwellian_ratio";
    }
    return "?";
}

InterpolationMode interpolation_mode_from_string(const std::string& s) {
    if (s == "trilinear") return InterpolationMode::Trilinear;
    if (s == "maxwellian_weighted") return InterpolationMode::MaxwellianWeighted;
    if (s == "maxwellian_ratio") return InterpolationMode::MaxwellianRatio;
    throw ConfigError("unknown interpolation mode '" + s + "' (trilinear | maxwellian_weighted)");
}

// Per (index difference, sphere node): lattice shift of v' relative to v
// (u' uses the negated shift relative to u) and the kernel |(v-u).omega|.
struct CollisionQuadrature::Table {
    int n = 0;
    int span = 0;  // 2n - 1
    double h = 0.0;
    double lo_limit = 0.0;  // lattice coordinate range that lies inside the box
    double hi_limit = 0.0;
    std::size_t n_sphere = 0;
    std::vector<std::array<double, 3>> shift;
    std::vector<double> kernel;    // |(v-u).omega| (dimensional)
    std::vector<double> kernel_sum;  // sum_s omega_s |(v-u).omega_s| per difference

    std::size_t diff_index(const std::array<int, 3>& a, const std::array<int, 3>& b) const noexcept {
        const int d0 = a[0] - b[0] + n - 1;
        const int d1 = a[1] - b[1] + n - 1;
        const int d2 = a[2] - b[2] + n - 1;
        return (static_cast<std::size_t>(d0) * span + d1) * span + d2;
    }

    // Trilinear corners at lattice position base + shift (sign = +1 or -1).
    void corners(const std::array<int, 3>& base, const std::array<double, 3>& sh, double sign,
                 Corners& out) const noexcept {
        out.size = 0;
        int lo[3];
        double t[3];
        for (int d = 0; d < 3; ++d) {
            const double pos = base[d] + sign * sh[d];
            if (pos < lo_limit || pos > hi_limit) return;
            const double f = std::floor(pos);
            lo[d] = static_cast<int>(f);
            t[d] = pos - f;
        }
        for (int c = 0; c < 8; ++c) {
            int idx[3];
            double wt = 1.0;
            bool ok = true;
            for (int d = 0; d < 3; ++d) {
                const int bit = (c >> (2 - d)) & 1;
                idx[d] = lo[d] + bit;
                wt *= bit ? t[d] : 1.0 - t[d];
                if (idx[d] < 0 || idx[d] >= n) ok = false;
            }
            if (!ok || wt == 0.0) continue;
            out.node[out.size] = (static_cast<std::size_t>(idx[0]) * n + idx[1]) * n + idx[2];
            out.weight[out.size] = wt;
            ++out.size;
        }
    }
};

CollisionQuadrature::CollisionQuadrature(const MaxwellianContext& ctx, const CollisionOptions& opts)
    : ctx_(&ctx), opts_(opts), sphere_(SphereRule::hemisphere_product(opts.sphere_polar, opts.sphere_azimuth)),
      table_(std::make_unique<Table>()) {
    const VelocityGrid& g = ctx.grid();
    Table& t = *table_;
    t.n = g.n_per_axis();
    t.span = 2 * t.n - 1;
    t.h = g.spacing();
    const double half = g.stagger_offset() / t.h;
    t.lo_limit = -half;
    t.hi_limit = t.n - 1 + half;
    t.n_sphere = sphere_.size();
    const std::size_t n_diff = static_cast<std::size_t>(t.span) * t.span * t.span;
    t.shift.resize(n_diff * t.n_sphere);
    t.kernel.resize(n_diff * t.n_sphere);
    t.kernel_sum.assign(n_diff, 0.0);
    for (int a = 0; a < t.span; ++a) {
        for (int b = 0; b < t.span; ++b) {
            for (int c = 0; c < t.span; ++c) {
                const std::size_t dix = (static_cast<std::size_t>(a) * t.span + b) * t.span + c;
                const double D[3] = {double(a - t.n + 1), double(b - t.n + 1), double(c - t.n + 1)};
                double ksum = 0.0;
                for (std::size_t s = 0; s < t.n_sphere; ++s) {
                    const Vec3& om = sphere_.nodes[s];
                    const double proj = D[0] * om[0] + D[1] * om[1] + D[2] * om[2];
                    // v' = v - (g.omega) omega, in lattice units.
                    t.shift[dix * t.n_sphere + s] = {-proj * om[0], -proj * om[1], -proj * om[2]};
                    const double B = std::abs(proj) * t.h;
                    t.kernel[dix * t.n_sphere + s] = B;
                    ksum += sphere_.weights[s] * B;
                }
                t.kernel_sum[dix] = ksum;
            }
        }
    }
}

CollisionQuadrature::~CollisionQuadrature() = default;
CollisionQuadrature::CollisionQuadrature(CollisionQuadrature&&) noexcept = default;
CollisionQuadrature& CollisionQuadrature::operator=(CollisionQuadrature&&) noexcept = default;

NodeValues CollisionQuadrature::collision_frequency() const {
    const VelocityGrid& g = ctx_->grid();
    const Table& t = *table_;
    const std::size_t N = g.size();
    const NodeValues& w = g.weights();
    const NodeValues& mu = ctx_->mu();
    NodeValues nu = NodeValues::Zero(static_cast<Index>(N));
    for (std::size_t i = 0; i < N; ++i) {
        const auto ki = g.lattice_index(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            acc += w[Index(j)] * mu[Index(j)] * t.kernel_sum[t.diff_index(ki, g.lattice_index(j))];
        }
        nu[Index(i)] = acc;
    }
    return nu;
}

Eigen::MatrixXd CollisionQuadrature::assemble_raw_K() const {
    const VelocityGrid& g = ctx_->grid();
    const Table& t = *table_;
    const std::size_t N = g.size();
    if (N > opts_.max_nodes) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "dense K assembly refused: %zu velocity nodes exceed the cap of %zu "
                      "(K alone would need %.1f MB); lower n_per_axis or raise max_nodes",
                      N, opts_.max_nodes, double(N) * double(N) * 8.0 / 1e6);
        throw ConfigError(buf);
    }
    const NodeValues& w = g.weights();
    const NodeValues& mu = ctx_->mu();
    const NodeValues& smu = ctx_->sqrt_mu();
    const NodeValues inv_smu = smu.cwiseInverse();
    const bool mw = opts_.interpolation == InterpolationMode::MaxwellianWeighted;
    const bool ratio = opts_.interpolation == InterpolationMode::MaxwellianRatio;
    const double vmax = g.v_max();
    const double off = g.stagger_offset();

    Eigen::MatrixXd K(static_cast<Index>(N), static_cast<Index>(N));
    std::vector<double> row(N);
    std::vector<std::array<int, 3>> lat(N);
    for (std::size_t i = 0; i < N; ++i) lat[i] = g.lattice_index(i);
    Corners cv, cu;
    auto mu_at = [&](const std::array<int, 3>& base, const std::array<double, 3>& sh, double sign) {
        double r2 = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double x = -vmax + off + (base[d] + sign * sh[d]) * t.h;
            r2 += x * x;
        }
        return std::pow(2.0 * std::numbers::pi, -1.5) * std::exp(-0.5 * r2);
    };

    for (std::size_t i = 0; i < N; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        const auto& ki = lat[i];
        for (std::size_t j = 0; j < N; ++j) {
            const auto& kj = lat[j];
            const std::size_t dix = t.diff_index(ki, kj);
            // K1: loss-type term.
            row[j] -= w[Index(j)] * std::sqrt(mu[Index(i)] * mu[Index(j)]) * t.kernel_sum[dix];
            const double base_w = w[Index(j)];
            for (std::size_t s = 0; s < t.n_sphere; ++s) {
                const std::size_t e = dix * t.n_sphere + s;
                const double B = t.kernel[e];
                if (B == 0.0) continue;
                const auto& sh = t.shift[e];
                t.corners(ki, sh, 1.0, cv);   // v'
                t.corners(kj, sh, -1.0, cu);  // u'
                const double W = base_w * sphere_.weights[s] * B;
                if (ratio) {
                    const double c = W * mu[Index(j)] * smu[Index(i)];
                    double sv = 0.0, su = 0.0;
                    for (int k = 0; k < cv.size; ++k) sv += cv.weight[k] * smu[Index(cv.node[k])];
                    for (int k = 0; k < cu.size; ++k) su += cu.weight[k] * smu[Index(cu.node[k])];
                    for (int k = 0; k < cv.size; ++k) row[cv.node[k]] += c * cv.weight[k] / sv;
                    for (int k = 0; k < cu.size; ++k) row[cu.node[k]] += c * cu.weight[k] / su;
                } else if (mw) {
                    const double c = W * mu[Index(j)] * smu[Index(i)];
                    for (int k = 0; k < cv.size; ++k) row[cv.node[k]] += c * cv.weight[k] * inv_smu[Index(cv.node[k])];
                    for (int k = 0; k < cu.size; ++k) row[cu.node[k]] += c * cu.weight[k] * inv_smu[Index(cu.node[k])];
                } else {
                    if (cv.size > 0) {
                        const double c = W * std::sqrt(mu[Index(j)] * mu_at(kj, sh, -1.0));
                        for (int k = 0; k < cv.size; ++k) row[cv.node[k]] += c * cv.weight[k];
                    }
                    if (cu.size > 0) {
                        const double c = W * std::sqrt(mu[Index(j)] * mu_at(ki, sh, 1.0));
                        for (int k = 0; k < cu.size; ++k) row[cu.node[k]] += c * cu.weight[k];
                    }
                }
            }
        }
        for (std::size_t c = 0; c < N; ++c) K(Index(i), Index(c)) = row[c];
    }
    return K;
}

Eigen::MatrixXd CollisionQuadrature::gamma_columns(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g) const {
    const VelocityGrid& grid = ctx_->grid();
    const Table& t = *table_;
    const std::size_t N = grid.size();
    if (std::size_t(f.rows()) != N || std::size_t(g.rows()) != N || f.cols() != g.cols()) {
        throw PreconditionError("gamma: argument shapes do not match the velocity grid");
    }
    const Index M = f.cols();
    const NodeValues& w = grid.weights();
    const NodeValues& mu = ctx_->mu();
    const NodeValues& smu = ctx_->sqrt_mu();
    const bool mw = opts_.interpolation == InterpolationMode::MaxwellianWeighted;
    const bool ratio = opts_.interpolation == InterpolationMode::MaxwellianRatio;
    const bool weighted = mw || ratio;

    // Interpolated quantity: f / sqrt(mu) (weighted), f (ratio) or sqrt(mu) f (plain).
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMat rf(static_cast<Index>(N), M), rg(static_cast<Index>(N), M);
    for (Index i = 0; i < Index(N); ++i) {
        const double s = mw ? 1.0 / smu[i] : (ratio ? 1.0 : smu[i]);
        rf.row(i) = f.row(i) * s;
        rg.row(i) = g.row(i) * s;
    }

    std::vector<std::array<int, 3>> lat(N);
    for (std::size_t i = 0; i < N; ++i) lat[i] = grid.lattice_index(i);

    Eigen::MatrixXd out(static_cast<Index>(N), M);
    Eigen::ArrayXd acc(M), a(M), b(M);
    Eigen::ArrayXd loss_rate(M);
    Corners cv, cu;
    for (std::size_t i = 0; i < N; ++i) {
        const auto& ki = lat[i];
        acc.setZero();
        loss_rate.setZero();
        for (std::size_t j = 0; j < N; ++j) {
            const auto& kj = lat[j];
            const std::size_t dix = t.diff_index(ki, kj);
            loss_rate += (w[Index(j)] * t.kernel_sum[dix] * smu[Index(j)]) * f.row(Index(j)).transpose().array();
            const double pair = weighted ? w[Index(j)] * mu[Index(j)] : w[Index(j)];
            for (std::size_t s = 0; s < t.n_sphere; ++s) {
                const std::size_t e = dix * t.n_sphere + s;
                const double B = t.kernel[e];
                if (B == 0.0) continue;
                const auto& sh = t.shift[e];
                t.corners(ki, sh, 1.0, cv);
                if (cv.size == 0) continue;
                t.corners(kj, sh, -1.0, cu);
                if (cu.size == 0) continue;
                a = cu.weight[0] * rf.row(Index(cu.node[0])).transpose().array();
                for (int k = 1; k < cu.size; ++k) a += cu.weight[k] * rf.row(Index(cu.node[k])).transpose().array();
                b = cv.weight[0] * rg.row(Index(cv.node[0])).transpose().array();
                for (int k = 1; k < cv.size; ++k) b += cv.weight[k] * rg.row(Index(cv.node[k])).transpose().array();
                double norm = 1.0;
                if (ratio) {
                    double su = 0.0, sv = 0.0;
                    for (int k = 0; k < cu.size; ++k) su += cu.weight[k] * smu[Index(cu.node[k])];
                    for (int k = 0; k < cv.size; ++k) sv += cv.weight[k] * smu[Index(cv.node[k])];
                    norm = 1.0 / (su * sv);
                }
                acc += (pair * sphere_.weights[s] * B * norm) * a * b;
            }
        }
        const double scale = weighted ? smu[Index(i)] : 1.0 / smu[Index(i)];
        out.row(Index(i)) = (scale * acc - loss_rate * g.row(Index(i)).transpose().array()).matrix().transpose();
    }
    return out;
}

NodeValues CollisionQuadrature::gamma(const NodeValues& f, const NodeValues& g) const {
    Eigen::MatrixXd F = f;
    Eigen::MatrixXd G = g;
    return gamma_columns(F, G).col(0);
}

NodeValues CollisionQuadrature::q_loss(const NodeValues& F1, const NodeValues& F2) const {
    const VelocityGrid& grid = ctx_->grid();
    const Table& t = *table_;
    const std::size_t N = grid.size();
    const NodeValues& w = grid.weights();
    NodeValues out(static_cast<Index>(N));
    for (std::size_t i = 0; i < N; ++i) {
        const auto ki = grid.lattice_index(i);
        double rate = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            rate += w[Index(j)] * t.kernel_sum[t.diff_index(ki, grid.lattice_index(j))] * F1[Index(j)];
        }
        out[Index(i)] = rate * F2[Index(i)];
    }
    return out;
}

NodeValues CollisionQuadrature::q_gain(const NodeValues& F1, const NodeValues& F2) const {
    // Q = sqrt(mu) Gamma(F1 / sqrt(mu), F2 / sqrt(mu)); the loss part is added back.
    const NodeValues& smu = ctx_->sqrt_mu();
    const NodeValues f1 = F1.cwiseQuotient(smu);
    const NodeValues f2 = F2.cwiseQuotient(smu);
    return smu.cwiseProduct(gamma(f1, f2)) + q_loss(F1, F2);
}

NodeValues apply_Q(const CollisionQuadrature& q, const NodeValues& F1, const NodeValues& F2) {
    const NodeValues& smu = q.context().sqrt_mu();
    return smu.cwiseProduct(q.gamma(F1.cwiseQuotient(smu), F2.cwiseQuotient(smu)));
}

NodeValues gamma_bilinear(const CollisionQuadrature& q, const NodeValues& f, const NodeValues& g) {
    return q.gamma(f, g);
}

// ---------------------------------------------------------------------------

namespace {

double max_abs_rel_asym(const Eigen::MatrixXd& WK) {
    const double scale = WK.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (WK - WK.transpose()).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

LinearizedOperator::LinearizedOperator(const MaxwellianContext& ctx, NodeValues nu, Eigen::MatrixXd raw_K,
                                       std::string sphere_description, InterpolationMode mode)
    : ctx_(&ctx), nu_(std::move(nu)), sphere_(std::move(sphere_description)), mode_(mode) {
    const Index N = nu_.size();
    if (raw_K.rows() != N || raw_K.cols() != N || Index(ctx.size()) != N) {
        throw PreconditionError("linearized operator: size mismatch between nu, K and the grid");
    }
    if (!raw_K.allFinite() || !nu_.allFinite()) throw NumericalError("linearized operator: non-finite entries");
    const NodeValues& w = ctx.weights();
    const InvariantBasis& X = ctx.invariant_basis();

    // Raw diagnostics.
    {
        Eigen::MatrixXd L0 = -raw_K;
        L0.diagonal() += nu_;
        const double knorm = raw_K.cwiseAbs().rowwise().sum().maxCoeff();
        for (int k = 0; k < 5; ++k) {
            const NodeValues r = L0 * X.col(k);
            raw_.null_space[k] = r.cwiseAbs().maxCoeff() / (knorm * X.col(k).cwiseAbs().maxCoeff());
            raw_.null_space_max = std::max(raw_.null_space_max, raw_.null_space[k]);
        }
        raw_.symmetry = max_abs_rel_asym(w.asDiagonal() * raw_K);
    }

    // Self-adjoint part in the weighted inner product.
    const NodeValues winv = w.cwiseInverse();
    Eigen::MatrixXd Ks = 0.5 * (raw_K + winv.asDiagonal() * raw_K.transpose() * w.asDiagonal());
    raw_K.resize(0, 0);
    Eigen::MatrixXd L0 = -Ks;
    L0.diagonal() += nu_;
    Ks.resize(0, 0);

    // L = (I - P) L0 (I - P) with P = X X^T W.
    const Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();  // 5 x N
    const Eigen::MatrixXd L0X = L0 * X;                          // N x 5
    const Eigen::MatrixXd XtWL0 = XtW * L0;                      // 5 x N
    const Eigen::MatrixXd core = XtW * L0X;                      // 5 x 5
    L_ = L0;
    L_.noalias() -= L0X * XtW;
    L_.noalias() -= X * XtWL0;
    L_.noalias() += X * (core * XtW);
    L0.resize(0, 0);
    // Restore exact weighted symmetry lost to rounding.
    L_ = 0.5 * (L_ + winv.asDiagonal() * L_.transpose() * w.asDiagonal());

    K_ = -L_;
    K_.diagonal() += nu_;

    Eigen::MatrixXd S = w.asDiagonal() * L_;
    const Eigen::MatrixXd WX = w.asDiagonal() * X;
    S.noalias() += WX * WX.transpose();
    S = 0.5 * (S + S.transpose());
    shifted_.compute(S);
    if (shifted_.info() != Eigen::Success) {
        throw SolverError("linearized operator: L + P is not positive definite; the quadrature is too coarse");
    }
}

NodeValues LinearizedOperator::apply_L(const NodeValues& f) const { return L_ * f; }

Eigen::MatrixXd LinearizedOperator::apply_L_columns(const Eigen::MatrixXd& f) const { return L_ * f; }

Eigen::MatrixXd LinearizedOperator::apply_K_columns(const Eigen::MatrixXd& f) const { return K_ * f; }

NodeValues LinearizedOperator::solve_Linv(const NodeValues& y) const {
    const double ny = ctx_->norm(y);
    if (ny == 0.0) return NodeValues::Zero(y.size());
    const double npy = ctx_->invariant_moments(y).norm();
    if (npy > 1e-8 * ny) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "solve_Linv: right-hand side not orthogonal to the null space (|Py|/|y| = %.3e)",
                      npy / ny);
        throw PreconditionError(buf);
    }
    NodeValues rhs = ctx_->weights().cwiseProduct(y);
    NodeValues x = shifted_.solve(rhs);
    x = ctx_->project_out(x);
    const NodeValues r = L_ * x - y;
    // One step of iterative refinement.
    const NodeValues dx = ctx_->project_out(shifted_.solve(ctx_->weights().cwiseProduct(ctx_->project_out(r))));
    x -= dx;
    const double res = ctx_->norm(L_ * x - y);
    if (!(res <= 1e-10 * ny)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "solve_Linv: residual %.3e exceeds 1e-10 relative", res / ny);
        throw SolverError(buf);
    }
    return x;
}

NodeValues LinearizedOperator::solve_Linv_projected(const NodeValues& y) const {
    return solve_Linv(ctx_->project_out(y));
}

double LinearizedOperator::symmetry_defect() const {
    return max_abs_rel_asym(ctx_->weights().asDiagonal() * K_);
}

double LinearizedOperator::null_space_defect() const {
    double m = 0.0;
    const InvariantBasis& X = ctx_->invariant_basis();
    for (int k = 0; k < 5; ++k) m = std::max(m, (L_ * X.col(k)).cwiseAbs().maxCoeff());
    return m;
}

LinearizedOperator assemble_operator(const MaxwellianContext& ctx, const CollisionOptions& opts) {
    CollisionQuadrature q(ctx, opts);
    NodeValues nu = q.collision_frequency();
    Eigen::MatrixXd K = q.assemble_raw_K();
    return LinearizedOperator(ctx, std::move(nu), std::move(K), q.sphere().description(), opts.interpolation);
}

NodeValues collision_frequency(const MaxwellianContext& ctx, const CollisionOptions& opts) {
    return CollisionQuadrature(ctx, opts).collision_frequency();
}

NodeValues apply_L(const LinearizedOperator& op, const NodeValues& f) { return op.apply_L(f); }

NodeValues solve_Linv(const LinearizedOperator& op, const NodeValues& y) { return op.solve_Linv(y); }

Kappas kappas(const LinearizedOperator& op, const MomentFunctionals& fun) {
    const MaxwellianContext& ctx = op.context();
    Kappas k;
    const NodeValues a31 = ctx.project_out(fun.A[2][0]);
    const NodeValues a32 = ctx.project_out(fun.A[2][1]);
    const NodeValues b3 = ctx.project_out(fun.B[2]);
    k.kappa1 = ctx.inner(a31, op.solve_Linv(a31));
    k.kappa1_alt = ctx.inner(a32, op.solve_Linv(a32));
    k.kappa2 = ctx.inner(b3, op.solve_Linv(b3));
    if (!(k.kappa1 > 0.0) || !(k.kappa1_alt > 0.0) || !(k.kappa2 > 0.0)) {
        throw NumericalError("kappas: non-positive transport coefficient; the operator is broken");
    }
    return k;
}

TransportFunctionals transport_functionals(const LinearizedOperator& op) {
    const MaxwellianContext& ctx = op.context();
    TransportFunctionals t;
    t.moments = ctx.moment_functionals();
    t.Linv_A31 = op.solve_Linv_projected(t.moments.A[2][0]);
    t.Linv_A32 = op.solve_Linv_projected(t.moments.A[2][1]);
    t.Linv_B3 = op.solve_Linv_projected(t.moments.B[2]);
    t.kappas = kappas(op, t.moments);
    return t;
}

CoercivityResult estimate_c0(const LinearizedOperator& op, double tol, int max_iter) {
    const MaxwellianContext& ctx = op.context();
    const NodeValues& nu = op.nu();
    const Index N = nu.size();
    std::mt19937_64 rng(20240611ULL);
    std::normal_distribution<double> gauss;
    NodeValues g(N);
    for (Index i = 0; i < N; ++i) g[i] = gauss(rng) * ctx.sqrt_mu()[i];
    g = ctx.project_out(g);
    CoercivityResult res;
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= max_iter; ++it) {
        g /= std::sqrt(ctx.inner(g, nu.cwiseProduct(g)));
        const double rq = ctx.inner(g, op.apply_L(g));
        res.iterations = it;
        res.c0 = rq;
        if (std::abs(prev - rq) <= tol * std::abs(rq)) {
            res.converged = true;
            break;
        }
        prev = rq;
        g = op.solve_Linv(ctx.project_out(nu.cwiseProduct(g)));
    }
    res.mode = g;
    if (!(res.c0 > 0.0)) throw NumericalError("coercivity estimate is not positive; the operator is broken");
    return res;
}

}  // namespace kbl
