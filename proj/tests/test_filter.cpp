#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "oracles.hpp"
#include "problems.hpp"
#include "s2t/filter.hpp"

using namespace s2t;
using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;

namespace {

DisturbanceSpec spec4() { return {Eigen::VectorXd::Constant(4, 0.75), Eigen::VectorXd::Constant(4, 1.5)}; }

// KKT residuals of min |u - u_nom|^2 s.t. lo <= u <= hi, a^T u >= b at (u, mu).
struct Kkt {
    double stationarity = 0.0;
    double primal = 0.0;
    double complementarity = 0.0;
};

Kkt kkt_residuals(const Vec2& u, double mu, const Vec2& u_nom, const ControlBox<2>& box, const Vec2& a, double b) {
    Kkt k;
    const double tol = 1e-12;
    for (int j = 0; j < 2; ++j) {
        // u - u_nom - mu a = nu_lo - nu_hi with nu >= 0 only on active faces.
        const double r = u[j] - u_nom[j] - mu * a[j];
        double res = std::abs(r);
        if (u[j] >= box.hi[j] - tol) res = std::max(0.0, r);
        if (u[j] <= box.lo[j] + tol) res = std::max(0.0, -r);
        k.stationarity = std::max(k.stationarity, res);
        k.primal = std::max({k.primal, box.lo[j] - u[j], u[j] - box.hi[j]});
    }
    k.primal = std::max(k.primal, b - a.dot(u));
    k.complementarity = std::abs(mu * (a.dot(u) - b));
    if (mu < 0.0) k.primal = std::max(k.primal, -mu);
    return k;
}

// Double-integrator tubes for filter_step tests: t_max 2, d_max 0.1, ddot_max 0.2.
struct DiTubes {
    DisturbanceSpec spec{Eigen::VectorXd::Constant(2, 0.1), Eigen::VectorXd::Constant(2, 0.2)};
    TubeSet rate, bound;
    LinearModel<2, 1> model = double_integrator(1.0);

    DiTubes() {
        auto pb = problems::double_integrator_game(0.05);
        pb.settings.archive_samples = 20;
        for (double m : {0.5, 1.0}) {
            rate.push_back(std::make_shared<const ValueTube>(solve_member(Parameterization::FixedRate, m, pb, spec)));
        }
        for (double m : {0.0, 1.0}) {
            bound.push_back(std::make_shared<const ValueTube>(solve_member(Parameterization::FixedBound, m, pb, spec)));
        }
    }

    FilterConfig config(FilterMode mode) const {
        return {mode == FilterMode::SpaceToTime ? rate : bound, 1.0, mode, spec, 2.0};
    }
};

const DiTubes& di_tubes() {
    static const DiTubes t;
    return t;
}

}  // namespace

TEST(FilterMode, Names) {
    for (auto m : {FilterMode::SpaceToTime, FilterMode::NaiveEnsemble, FilterMode::WorstCase}) {
        EXPECT_EQ(filter_mode_from_string(to_string(m)), m);
    }
    EXPECT_THROW(filter_mode_from_string("dr"), ConfigError);
}

TEST(TReturn, Examples) {
    const auto s = spec4();
    EXPECT_DOUBLE_EQ(t_return(s.d_max, Eigen::VectorXd::Constant(4, 1.0), s, 5.0), 0.0);
    EXPECT_DOUBLE_EQ(t_return(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Constant(4, 1.5), s, 5.0), 0.5);
    // per-dimension quotients 0.5, 0.2, 0.4, 0.3
    Eigen::VectorXd rate(4);
    rate << 1.5, 0.75 / 0.2, 0.75 / 0.4, 0.75 / 0.3;
    EXPECT_NEAR(t_return(Eigen::VectorXd::Zero(4), rate, s, 5.0), 0.2, 1e-15);
    EXPECT_DOUBLE_EQ(t_return(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Constant(4, 0.01), s, 5.0), 5.0);
    EXPECT_THROW(t_return(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), s, 5.0), Error);
}

TEST(TReturn, NonIncreasingInMagnitude) {
    const auto s = spec4();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 2000; ++t) {
        Eigen::VectorXd d(4), r(4);
        for (int i = 0; i < 4; ++i) {
            d[i] = 0.7 * u(rng);
            r[i] = 0.15 + 1.35 * u(rng);
        }
        const double base = t_return(d, r, s, 5.0);
        for (int i = 0; i < 4; ++i) {
            Eigen::VectorXd dp = d;
            dp[i] += 1e-4;
            EXPECT_LE(t_return(dp, r, s, 5.0), base + 1e-15);
        }
    }
}

TEST(SelectMember, Examples) {
    const std::vector<double> p{0.3, 0.6, 0.9, 1.2, 1.5};
    EXPECT_EQ(select_member(p, 0.0), 0u);
    EXPECT_EQ(select_member(p, 0.61), 2u);
    EXPECT_EQ(select_member(p, 0.6), 1u);
    EXPECT_EQ(select_member(p, 9.0), 4u);
    EXPECT_EQ(select_member({0.0, 0.25, 0.5, 0.75, 1.0}, 0.0), 0u);
}

TEST(Qp, MatchesDenseOracle) {
    PlanarQuadModel m;
    const auto& box = m.control_box();
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int instances = 0, corrected = 0;
    while (instances < 100) {
        const Vec2 u_nom(-0.4 + 0.8 * u(rng), 4.0 + 12.0 * u(rng));
        const Vec2 a(-3.0 + 6.0 * u(rng), -1.0 + 2.0 * u(rng));
        // Offsets put the halfspace boundary through the box most of the time.
        const Vec2 probe(box.lo[0] + box.width()[0] * u(rng), box.lo[1] + box.width()[1] * u(rng));
        const double b = a.dot(probe) + (u(rng) - 0.3);
        const auto sol = project_box_halfspace<2>(u_nom, box, a, b);
        const auto ref = oracle::dense_qp(u_nom, box.lo, box.hi, a, b);
        if (!ref.feasible) continue;
        ++instances;
        ASSERT_NE(sol.status, QpStatus::FallbackOptimal);
        corrected += sol.status == QpStatus::Corrected;
        EXPECT_TRUE(box.contains(sol.u));
        EXPECT_GE(a.dot(sol.u), b - 1e-9);
        const double obj = (sol.u - u_nom).squaredNorm();
        EXPECT_LE(obj, ref.objective + 1e-12);
        EXPECT_GE(obj, ref.objective - ref.cell_gap);
        const auto k = kkt_residuals(sol.u, sol.multiplier, u_nom, box, a, b);
        EXPECT_LE(k.stationarity, 1e-8);
        EXPECT_LE(k.primal, 1e-8);
        EXPECT_LE(k.complementarity, 1e-8);
    }
    EXPECT_GT(corrected, 30);
}

TEST(Qp, KktOnManyCorrectedSteps) {
    PlanarQuadModel m;
    const auto& box = m.control_box();
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int corrected = 0;
    for (int t = 0; t < 20000; ++t) {
        const Vec2 u_nom(0.5 * u(rng), 9.81 + 6.0 * u(rng));
        const Vec2 a(3.0 * u(rng), u(rng));
        const double b = a.dot(Vec2(0.25 * u(rng), 9.81 + 4.0 * u(rng)));
        const auto sol = project_box_halfspace<2>(u_nom, box, a, b);
        if (sol.status != QpStatus::Corrected) continue;
        ++corrected;
        const auto k = kkt_residuals(sol.u, sol.multiplier, u_nom, box, a, b);
        ASSERT_LE(k.stationarity, 1e-8);
        ASSERT_LE(k.primal, 1e-8);
        ASSERT_LE(k.complementarity, 1e-8);
    }
    EXPECT_GT(corrected, 1000);
}

TEST(CbfQp, InactiveConstraintKeepsNominal) {
    PlanarQuadModel m;
    const Vec2 hover(0.0, PlanarQuadModel::kGravity);
    const auto out = cbf_qp(m, hover, 0.8, 0.0, Vec4::Zero(), Vec4::Zero(), Vec4::Constant(0.75), 1.0);
    EXPECT_EQ(out.u_star, hover);
    EXPECT_FALSE(out.intervened);
    EXPECT_EQ(out.qp_status, QpStatus::NominalFeasible);
}

TEST(CbfQp, MinimalIntervention) {
    PlanarQuadModel m;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int feasible_nominal = 0;
    for (int t = 0; t < 2000; ++t) {
        const Vec4 grad(u(rng), u(rng), u(rng), u(rng));
        const Vec4 x(2 * u(rng), 1 + u(rng), u(rng), u(rng));
        const Vec2 u_nom(0.2 * u(rng), 9.81 + 3.0 * u(rng));
        const double v = u(rng), dvdt = 0.1 * u(rng);
        const Vec4 eta = Vec4::Constant(0.3);
        const auto [a, b] = barrier_halfspace(m, x, v, dvdt, grad, eta, 1.0);
        const auto out = cbf_qp(m, u_nom, v, dvdt, grad, x, eta, 1.0);
        EXPECT_TRUE(m.control_box().contains(out.u_star));
        if (a.dot(u_nom) >= b) {
            ++feasible_nominal;
            EXPECT_EQ(out.u_star, u_nom);
            EXPECT_FALSE(out.intervened);
        } else if (out.qp_status == QpStatus::Corrected) {
            EXPECT_GE(a.dot(out.u_star), b - 1e-9);
            EXPECT_TRUE(out.intervened);
        }
    }
    EXPECT_GT(feasible_nominal, 100);
}

TEST(CbfQp, BarrierRowMatchesMinOverDisturbanceBox) {
    PlanarQuadModel m;
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const Vec4 grad(u(rng), u(rng), u(rng), u(rng));
        const Vec4 x(u(rng), u(rng), u(rng), u(rng));
        const Vec4 eta(0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng), 0.5, 0.2);
        const Vec2 uu(0.25 * u(rng), 9.81 + 4 * u(rng));
        const double v = u(rng), dvdt = u(rng);
        const auto [a, b] = barrier_halfspace(m, x, v, dvdt, grad, eta, 2.0);
        // Brute-force min over the 16 vertices of the eta box.
        double worst = INFINITY;
        for (int k = 0; k < 16; ++k) {
            Vec4 d;
            for (int i = 0; i < 4; ++i) d[i] = (k >> i & 1) ? eta[i] : -eta[i];
            worst = std::min(worst, dvdt + grad.dot(flow(m, x, uu, d)) + 2.0 * v);
        }
        EXPECT_NEAR(a.dot(uu) - b, worst, 1e-10);
    }
}

TEST(CbfQp, InfeasibleFallsBackToOptimalControl) {
    PlanarQuadModel m;
    const Vec4 grad(0.0, 1.0, 0.0, 1.0);
    const Vec4 x(0.0, 0.5, 0.0, 0.0);
    const Vec2 hover(0.0, PlanarQuadModel::kGravity);
    const auto out = cbf_qp(m, hover, -100.0, 0.0, grad, x, Vec4::Constant(0.75), 1.0);
    EXPECT_EQ(out.qp_status, QpStatus::FallbackOptimal);
    EXPECT_EQ(out.u_star, optimal_control(m, grad, x));
    EXPECT_THROW(cbf_qp(m, hover, NAN, 0.0, grad, x, Vec4::Zero(), 1.0), NumericalError);
}

TEST(FilterConfig, Validation) {
    const auto& t = di_tubes();
    EXPECT_NO_THROW(t.config(FilterMode::SpaceToTime).validate());
    EXPECT_NO_THROW(t.config(FilterMode::NaiveEnsemble).validate());
    auto bad = t.config(FilterMode::SpaceToTime);
    bad.tubes = t.bound;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = t.config(FilterMode::NaiveEnsemble);
    std::swap(bad.tubes[0], bad.tubes[1]);
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = t.config(FilterMode::WorstCase);
    bad.gamma = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = t.config(FilterMode::WorstCase);
    bad.t_max = 3.0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(FilterStep, FloorRateQueriesFullHorizon) {
    const auto& t = di_tubes();
    const auto cfg = t.config(FilterMode::SpaceToTime);
    const DisturbanceEstimator::Estimate est{Eigen::VectorXd::Zero(2), t.spec.d_max / cfg.t_max};
    const auto q = plan_query(cfg, est);
    EXPECT_DOUBLE_EQ(q.t_return, cfg.t_max);
    EXPECT_DOUBLE_EQ(q.tau, cfg.t_max);
    EXPECT_EQ(q.member, 0u);
}

TEST(FilterStep, QueryPlanPerMode) {
    const auto& t = di_tubes();
    DisturbanceEstimator::Estimate est{Eigen::VectorXd::Constant(2, 0.02), Eigen::VectorXd::Constant(2, 0.15)};
    const auto ours = plan_query(t.config(FilterMode::SpaceToTime), est);
    EXPECT_EQ(ours.member, 1u);  // 0.15 / 0.2 exceeds the 0.5 member
    EXPECT_NEAR(ours.t_return, 0.08 / 0.15, 1e-15);
    EXPECT_NEAR(ours.eta_bound[0], std::max(0.0, 0.1 - ours.tau * 0.2), 1e-15);
    const auto naive = plan_query(t.config(FilterMode::NaiveEnsemble), est);
    EXPECT_EQ(naive.member, 1u);
    EXPECT_DOUBLE_EQ(naive.tau, 2.0);
    EXPECT_DOUBLE_EQ(naive.eta_bound[0], 0.1);
    est.d_bar.setZero();
    EXPECT_EQ(plan_query(t.config(FilterMode::NaiveEnsemble), est).member, 0u);
    EXPECT_DOUBLE_EQ(plan_query(t.config(FilterMode::NaiveEnsemble), est).eta_bound[1], 0.0);
    const auto worst = plan_query(t.config(FilterMode::WorstCase), est);
    EXPECT_EQ(worst.member, 1u);
    EXPECT_EQ(worst.eta_bound, t.spec.d_max);
}

TEST(FilterStep, EtaNeverExceedsDmax) {
    const auto& t = di_tubes();
    const auto cfg = t.config(FilterMode::SpaceToTime);
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 5000; ++k) {
        DisturbanceEstimator::Estimate est{Eigen::VectorXd(2), Eigen::VectorXd(2)};
        for (int i = 0; i < 2; ++i) {
            est.d_bar[i] = 0.1 * u(rng);
            est.rate_bar[i] = 0.05 + 0.15 * u(rng);
        }
        const auto q = plan_query(cfg, est);
        EXPECT_TRUE((q.eta_bound.array() <= t.spec.d_max.array()).all());
        EXPECT_TRUE((q.eta_bound.array() >= 0.0).all());
        EXPECT_LE(q.tau, cfg.t_max);
    }
}

TEST(FilterStep, DeepInsideTargetKeepsNominal) {
    const auto& t = di_tubes();
    const Eigen::Vector2d x(0.0, 0.0);
    const Eigen::Matrix<double, 1, 1> u_nom(0.0);
    for (auto mode : {FilterMode::SpaceToTime, FilterMode::NaiveEnsemble, FilterMode::WorstCase}) {
        const auto cfg = t.config(mode);
        const DisturbanceEstimator::Estimate est{Eigen::VectorXd::Zero(2), t.spec.d_max / cfg.t_max};
        const auto out = filter_step(cfg, t.model, x, est, u_nom);
        ASSERT_GT(out.value, 0.1);
        // Slack of the barrier row at u_nom, bounded below without the QP.
        const auto q = plan_query(cfg, est);
        const std::vector<double> xs{0.0, 0.0};
        const auto s = sample(*cfg.tubes[q.member], xs, q.tau);
        const double gnorm = std::hypot(s.grad[0], s.grad[1]);
        const double f_plus_bound = x.norm() + q.eta_bound.norm();
        EXPECT_GT(cfg.gamma * s.value - std::abs(s.dvdt) - gnorm * f_plus_bound, 0.0);
        EXPECT_EQ(out.u_star, u_nom);
        EXPECT_FALSE(out.intervened);
    }
}

TEST(FilterStep, DeterministicAndInBox) {
    const auto& t = di_tubes();
    const auto cfg = t.config(FilterMode::SpaceToTime);
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        const Eigen::Vector2d x(0.95 * u(rng), 1.5 * u(rng));
        const Eigen::Matrix<double, 1, 1> u_nom(2.0 * u(rng));
        DisturbanceEstimator::Estimate est{Eigen::VectorXd::Constant(2, 0.05 + 0.05 * u(rng)),
                                           Eigen::VectorXd::Constant(2, 0.1 + 0.05 * u(rng))};
        const auto a = filter_step(cfg, t.model, x, est, u_nom);
        const auto b = filter_step(cfg, t.model, x, est, u_nom);
        EXPECT_EQ(a.u_star, b.u_star);
        EXPECT_EQ(a.value, b.value);
        EXPECT_EQ(a.member_index, b.member_index);
        EXPECT_TRUE(t.model.control_box().contains(a.u_star));
    }
}
