// Double integrator x1' = x2, x2' = u + d. Solves a small reach-avoid tube,
// prints its zero level set, then filters a controller that drives at the wall.

#include <iomanip>
#include <iostream>
#include <memory>

#include "s2t/filter.hpp"
#include "s2t/hjr.hpp"

using namespace s2t;

int main() {
    const auto model = double_integrator(1.0);
    ReachAvoidProblem<LinearModel<2, 1>> pb{model,
                                            RectGrid({-1.5, -2.0}, {1.5, 2.0}, {61, 81}),
                                            [](std::span<const double> x) { return 1.0 - std::abs(x[0]); },
                                            [](std::span<const double> x) {
                                                return std::min(0.2 - std::abs(x[0]), 0.2 - std::abs(x[1]));
                                            },
                                            FixedBound{Eigen::VectorXd::Zero(2)},
                                            2.0,
                                            {}};
    pb.settings.archive_samples = 20;
    const DisturbanceSpec spec(Eigen::Vector2d(0.0, 0.2), Eigen::Vector2d(0.0, 0.4));

    SolveInfo info;
    auto tube = std::make_shared<const ValueTube>(solve_member(Parameterization::FixedBound, 1.0, pb, spec, &info));
    std::cout << "solved " << info.steps << " steps of dt " << info.dt << "\n\n";

    // '#' where the state can reach the target box within 2 s.
    for (int j = 20; j >= -20; j -= 2) {
        std::cout << std::setw(5) << std::fixed << std::setprecision(1) << 0.1 * j << ' ';
        for (int i = -30; i <= 30; ++i) {
            const std::vector<double> x{0.05 * i, 0.1 * j};
            std::cout << (interpolate(*tube, x, 2.0) > 0.0 ? '#' : '.');
        }
        std::cout << '\n';
    }

    FilterConfig cfg{{tube}, 1.0, FilterMode::WorstCase, spec, 2.0};
    cfg.validate();
    Eigen::Vector2d x(0.0, 0.0);
    const DisturbanceEstimator::Estimate est{Eigen::Vector2d::Zero(), Eigen::Vector2d(0.0, 0.1)};
    std::cout << "\n   t      x1      x2   u_nom  u_star\n";
    for (int k = 0; k <= 120; ++k) {
        const Eigen::Matrix<double, 1, 1> u_nom(1.0);
        const auto out = filter_step(cfg, model, x, est, u_nom);
        if (k % 10 == 0) {
            std::cout << std::setprecision(2) << std::setw(5) << 0.025 * k << std::setprecision(3) << std::setw(8) << x[0]
                      << std::setw(8) << x[1] << std::setw(8) << u_nom[0] << std::setw(8) << out.u_star[0] << '\n';
        }
        const double d = 0.2 * std::sin(0.5 * k);
        x += 0.025 * Eigen::Vector2d(x[1], out.u_star[0] + d);
    }
    std::cout << "final x1 = " << x[0] << " (wall at 1.0)\n";
    return 0;
}
