#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "problems.hpp"
#include "s2t/hjr.hpp"

using namespace s2t;

namespace {

using Model2 = LinearModel<2, 1>;

// Double integrator with a disturbance on both rows, failure |x1| >= 1, target
// a small box; cheap enough for many solves.
ReachAvoidProblem<Model2> small_game(double horizon = 1.0) {
    auto pb = problems::double_integrator_game(0.1);
    pb.horizon = horizon;
    pb.settings.archive_samples = 10;
    return pb;
}

DisturbanceSpec small_spec() { return {Eigen::VectorXd::Constant(2, 0.4), Eigen::VectorXd::Constant(2, 1.0)}; }

// V(x, tau_k) at archive node k for every grid point.
std::span<const double> slice(const ValueTube& t, std::size_t k) { return t.slice(k); }

}  // namespace

TEST(Solver, WholeSpaceTargetIsFixedPoint) {
    auto pb = small_game();
    pb.constraint = [](std::span<const double>) { return 1.0; };
    pb.target = [](std::span<const double>) { return 1.0; };
    const auto tube = solve_reach_avoid(pb);
    for (double v : tube.values()) EXPECT_EQ(v, 1.0);
}

TEST(Solver, FailureSetIsAbsorbing) {
    auto pb = small_game();
    pb.disturbance = FixedBound{Eigen::VectorXd::Constant(2, 0.2)};
    const auto tube = solve_reach_avoid(pb);
    const auto avoid = solve_avoid(pb);
    for (std::size_t p = 0; p < pb.grid.size(); ++p) {
        const auto x = pb.grid.point(p);
        const double g = pb.constraint(x);
        for (std::size_t k = 0; k < tube.slice_count(); ++k) {
            if (g <= 0.0) {
                EXPECT_EQ(tube.at(k, p), std::min(g, pb.target(x)));
                EXPECT_EQ(avoid.at(k, p), g);
            }
            EXPECT_LE(tube.at(k, p), g);
            EXPECT_LE(avoid.at(k, p), g);
        }
    }
}

TEST(Solver, TerminalSlice) {
    auto pb = small_game();
    const auto tube = solve_reach_avoid(pb);
    const auto avoid = solve_avoid(pb);
    for (std::size_t p = 0; p < pb.grid.size(); ++p) {
        const auto x = pb.grid.point(p);
        EXPECT_EQ(tube.at(0, p), std::min(pb.target(x), pb.constraint(x)));
        EXPECT_EQ(avoid.at(0, p), pb.constraint(x));
    }
    EXPECT_EQ(tube.taus().front(), 0.0);
    EXPECT_NEAR(tube.max_tau(), pb.horizon, 1e-15);
}

TEST(Solver, StaticAvoidKeepsConstant) {
    Eigen::Matrix<double, 1, 1> zero = Eigen::Matrix<double, 1, 1>::Zero();
    LinearModel<1, 1> still(zero, zero, ControlBox<1>(zero, zero));
    ReachAvoidProblem<LinearModel<1, 1>> pb{still, RectGrid({0.0}, {1.0}, {11}),
                                            [](std::span<const double>) { return 0.7; }, nullptr,
                                            FixedBound{Eigen::VectorXd::Zero(1)}, 1.0, {}};
    const auto tube = solve_avoid(pb);
    for (double v : tube.values()) EXPECT_EQ(v, 0.7);
}

TEST(Solver, TimeMonotonicity) {
    auto pb = small_game(1.5);
    pb.disturbance = FixedBound{Eigen::VectorXd::Constant(2, 0.3)};
    const auto ra = solve_reach_avoid(pb);
    const auto av = solve_avoid(pb);
    for (std::size_t k = 1; k < ra.slice_count(); ++k) {
        for (std::size_t p = 0; p < pb.grid.size(); ++p) {
            EXPECT_GE(ra.at(k, p), ra.at(k - 1, p));
            EXPECT_LE(av.at(k, p), av.at(k - 1, p));
        }
    }
}

TEST(Solver, LargerDisturbanceNeverIncreasesValue) {
    auto pb = small_game();
    pb.settings.dissipation_bound = Eigen::VectorXd::Constant(2, 0.5);
    auto small = pb, large = pb;
    small.disturbance = FixedBound{Eigen::VectorXd::Constant(2, 0.1)};
    large.disturbance = FixedBound{Eigen::VectorXd::Constant(2, 0.5)};
    const auto vs = solve_reach_avoid(small);
    const auto vl = solve_reach_avoid(large);
    std::size_t strictly = 0;
    for (std::size_t i = 0; i < vs.values().size(); ++i) {
        EXPECT_GE(vs.values()[i], vl.values()[i]);
        strictly += vs.values()[i] > vl.values()[i];
    }
    EXPECT_GT(strictly, 0u);
}

TEST(Solver, ZeroRateScheduleEqualsFixedMaxBound) {
    auto pb = small_game();
    const auto spec = small_spec();
    auto fixed = pb;
    fixed.disturbance = FixedBound{spec.d_max};
    auto rate = pb;
    rate.disturbance = RateSchedule{{Eigen::VectorXd::Zero(2), spec.d_max}};
    const auto a = solve_reach_avoid(fixed);
    const auto b = solve_reach_avoid(rate);
    ASSERT_EQ(a.values().size(), b.values().size());
    for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-10);
    const auto members = solve_ensemble(EnsembleSpec{Parameterization::FixedRate, {0.0}}, pb, spec);
    ASSERT_EQ(members.size(), 1u);
    for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], members[0].values()[i], 1e-10);
}

TEST(Solver, RefusesCflViolation) {
    auto pb = small_game();
    SolveInfo info;
    (void)solve_reach_avoid(pb, &info);
    pb.settings.dt = 2.5 * info.dt;
    try {
        (void)solve_reach_avoid(pb);
        FAIL() << "expected a CFL error";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("CFL"), std::string::npos);
    }
    pb.settings.dt = 0.5 * info.dt;
    EXPECT_NO_THROW((void)solve_reach_avoid(pb));
}

TEST(Solver, RejectsBadInput) {
    auto pb = small_game();
    auto nan_pb = pb;
    nan_pb.constraint = [](std::span<const double> x) { return x[0] > 0.5 ? NAN : 1.0; };
    EXPECT_THROW(solve_reach_avoid(nan_pb), NumericalError);
    auto no_target = pb;
    no_target.target = nullptr;
    EXPECT_THROW(solve_reach_avoid(no_target), ConfigError);
    EXPECT_NO_THROW(solve_avoid(no_target));
    auto neg = pb;
    neg.horizon = -1.0;
    EXPECT_THROW(solve_reach_avoid(neg), ConfigError);
    auto cfl = pb;
    cfl.settings.cfl = 1.5;
    EXPECT_THROW(solve_reach_avoid(cfl), ConfigError);
}

TEST(Solver, ParallelSweepIsBitIdentical) {
    auto pb = small_game();
    pb.disturbance = FixedBound{Eigen::VectorXd::Constant(2, 0.2)};
    const auto serial = solve_reach_avoid(pb);
    pb.settings.jobs = 3;
    const auto parallel = solve_reach_avoid(pb);
    EXPECT_EQ(serial.values(), parallel.values());
}

TEST(Ensemble, SpecValidation) {
    EXPECT_THROW(EnsembleSpec({Parameterization::FixedBound, {0.5, 0.4, 1.0}}).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec({Parameterization::FixedBound, {0.0, 0.5}}).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec({Parameterization::None, {1.0}}).validate(), ConfigError);
    const auto ours = EnsembleSpec::evenly_spaced(Parameterization::FixedRate, 5, false);
    const std::vector<double> want{0.2, 0.4, 0.6, 0.8, 1.0};
    ASSERT_EQ(ours.multipliers.size(), 5u);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(ours.multipliers[i], want[i], 1e-15);
    const auto naive = EnsembleSpec::evenly_spaced(Parameterization::FixedBound, 5, true);
    EXPECT_EQ(naive.multipliers.front(), 0.0);
    EXPECT_EQ(naive.multipliers.back(), 1.0);
}

TEST(Ensemble, NaiveMembersNestPointwise) {
    auto pb = small_game();
    const auto tubes =
        solve_ensemble(EnsembleSpec::evenly_spaced(Parameterization::FixedBound, 3, true), pb, small_spec());
    ASSERT_EQ(tubes.size(), 3u);
    for (std::size_t m = 1; m < tubes.size(); ++m) {
        EXPECT_EQ(tubes[m].meta().kind, Parameterization::FixedBound);
        for (std::size_t i = 0; i < tubes[m].values().size(); ++i) {
            EXPECT_GE(tubes[m - 1].values()[i], tubes[m].values()[i]);
        }
    }
}

// At equal time-to-go a faster-shrinking box is a weaker adversary, so values
// grow with the member rate.
TEST(Ensemble, RateMembersOrderedAtEqualTimeToGo) {
    auto pb = small_game();
    const auto tubes =
        solve_ensemble(EnsembleSpec::evenly_spaced(Parameterization::FixedRate, 4, false), pb, small_spec());
    for (std::size_t m = 1; m < tubes.size(); ++m) {
        for (std::size_t i = 0; i < tubes[m].values().size(); ++i) {
            EXPECT_LE(tubes[m - 1].values()[i], tubes[m].values()[i]);
        }
    }
}

// At a fixed present disturbance level d, member k is queried at
// tau_k = (d_max - d) / rate_k. A faster member faces a larger disturbance at
// every elapsed time and has less time to reach the target, so its value is
// no larger.
TEST(Ensemble, RateMembersNestAtFixedDisturbanceLevel) {
    auto pb = small_game(2.0);
    pb.settings.archive_samples = 20;  // tau nodes every 0.1
    const auto spec = small_spec();   // d_max 0.4, ddot_max 1
    const auto tubes = solve_ensemble(EnsembleSpec{Parameterization::FixedRate, {0.25, 0.5, 1.0}}, pb, spec);
    // d = 0.2: taus 0.8, 0.4, 0.2; d = 0.3: taus 0.4, 0.2, 0.1.
    std::size_t checked = 0;
    for (double d : {0.2, 0.3}) {
        for (std::size_t m = 1; m < tubes.size(); ++m) {
            const double ta = (0.4 - d) / tubes[m - 1].meta().multiplier;
            const double tb = (0.4 - d) / tubes[m].meta().multiplier;
            const auto ka = static_cast<std::size_t>(std::lround(ta / 0.1));
            const auto kb = static_cast<std::size_t>(std::lround(tb / 0.1));
            ASSERT_NEAR(tubes[m].taus()[kb], tb, 1e-12);
            ASSERT_NEAR(tubes[m - 1].taus()[ka], ta, 1e-12);
            const auto va = slice(tubes[m - 1], ka);
            const auto vb = slice(tubes[m], kb);
            for (std::size_t p = 0; p < va.size(); ++p) EXPECT_LE(vb[p], va[p] + 1e-10);
            ++checked;
        }
    }
    EXPECT_EQ(checked, 4u);
}

TEST(Ensemble, SharedStepAcrossMembers) {
    auto pb = small_game();
    std::vector<SolveInfo> infos;
    (void)solve_ensemble(EnsembleSpec::evenly_spaced(Parameterization::FixedBound, 3, true), pb, small_spec(), &infos);
    ASSERT_EQ(infos.size(), 3u);
    EXPECT_EQ(infos[0].dt, infos[2].dt);
    EXPECT_EQ(infos[0].steps, infos[2].steps);
}

TEST(Oracle, DoubleIntegratorMatchesGameTree) {
    const auto pb = problems::double_integrator_game();
    const auto tube = solve_reach_avoid(pb);
    oracle::DoubleIntegratorGame game;
    int agree = 0, total = 0, far_disagreements = 0;
    const double h0 = pb.grid.spacing(0), h1 = pb.grid.spacing(1);
    for (int i = 0; i <= 20; ++i) {
        for (int j = 0; j <= 20; ++j) {
            const std::vector<double> x{-1.0 + 0.1 * i, -1.0 + 0.1 * j};
            const bool dp = interpolate(tube, x, pb.horizon) > 0.0;
            const bool tree = game.wins(x[0], x[1]);
            ++total;
            if (dp == tree) {
                ++agree;
                continue;
            }
            // A disagreement must sit within one cell of the boundary, as seen
            // by either the solver (sign change of V) or the tree (outcome flip).
            double lo = INFINITY, hi = -INFINITY;
            bool flips = false;
            for (int a = -1; a <= 1; ++a) {
                for (int b = -1; b <= 1; ++b) {
                    const std::vector<double> y{x[0] + a * h0, x[1] + b * h1};
                    const double v = interpolate(tube, y, pb.horizon);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                    flips = flips || game.wins(y[0], y[1]) != tree;
                }
            }
            if (!(lo <= 0.0 && hi >= 0.0) && !flips) ++far_disagreements;
        }
    }
    EXPECT_GE(agree, static_cast<int>(std::ceil(0.95 * total)));
    EXPECT_EQ(far_disagreements, 0);
}

// Errors against the exact transport solution and the PDE residual
// dV/dt + H(grad V) both shrink over three halvings of h (dt follows the CFL bound).
TEST(Refinement, SmoothTransportConverges) {
    std::vector<double> value_err, residual;
    for (std::size_t n : {21u, 41u, 81u, 161u}) {
        auto pb = problems::transport_problem(n);
        const auto tube = solve_reach_avoid(pb);
        double ev = 0.0, er = 0.0;
        for (double x1 = -1.5; x1 <= 0.5 + 1e-9; x1 += 0.1) {
            for (double x2 = -1.5; x2 <= 1.5 + 1e-9; x2 += 0.1) {
                for (double tau : {0.2, 0.3, 0.4}) {
                    const std::vector<double> x{x1, x2};
                    ev = std::max(ev, std::abs(interpolate(tube, x, tau) - problems::Transport::exact(x1, x2, tau)));
                    const auto s = sample(tube, x, tau);
                    const Eigen::Vector2d grad(s.grad[0], s.grad[1]);
                    Eigen::Vector2d bound(0.25, 0.0);
                    const double h = hamiltonian(pb.model, grad, Eigen::Vector2d(x1, x2), bound);
                    er = std::max(er, std::abs(s.dvdt + h));
                }
            }
        }
        value_err.push_back(ev);
        residual.push_back(er);
    }
    for (std::size_t i = 1; i < value_err.size(); ++i) {
        EXPECT_LT(value_err[i], value_err[i - 1]) << "level " << i;
        EXPECT_LT(residual[i], residual[i - 1]) << "level " << i;
    }
}
