#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace fibsim {

/// Fills `residuals` (already weighted) for the parameter vector.
using ResidualFunction = std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residuals)>;

struct LeastSquaresOptions {
    int max_iterations = 200;
    double step_tolerance = 1e-10;   // relative parameter step
    double initial_damping = 1e-3;   // scaled by the largest diagonal of J^T J
    double difference_step = 1e-6;   // relative central-difference step
    /// Per-parameter magnitude floor for the difference step; empty means 1e-6 for all.
    Eigen::VectorXd parameter_scales;
};

struct LeastSquaresResult {
    Eigen::VectorXd params;
    Eigen::VectorXd residuals;
    /// (J^T J)^-1 at the solution, i.e. the covariance when residuals are normalized by true sigmas.
    Eigen::MatrixXd covariance;
    double chi2 = 0.0;
    int dof = 0;
    int iterations = 0;
    bool converged = false;
    bool covariance_ok = false;
    std::string message;

    double reduced_chi2() const { return dof > 0 ? chi2 / dof : 0.0; }
};

/// Central-difference Jacobian of the residual vector.
Eigen::MatrixXd finite_difference_jacobian(const ResidualFunction& f, Eigen::Index n_residuals,
                                           const Eigen::VectorXd& params, double relative_step = 1e-6,
                                           const Eigen::VectorXd& scales = {});

/// Levenberg-Marquardt with Marquardt diagonal scaling and finite-difference Jacobians.
/// Stops when the relative parameter step drops below the tolerance or after max_iterations.
LeastSquaresResult solve_least_squares(const ResidualFunction& f, Eigen::Index n_residuals,
                                       const Eigen::VectorXd& initial, const LeastSquaresOptions& options = {});

}  // namespace fibsim
