#include "fibsim/least_squares.hpp"

#include "fibsim/error.hpp"

#include <algorithm>
#include <cmath>

namespace fibsim {

Eigen::MatrixXd finite_difference_jacobian(const ResidualFunction& f, Eigen::Index n_residuals,
                                           const Eigen::VectorXd& params, double relative_step,
                                           const Eigen::VectorXd& scales) {
    const Eigen::Index n = params.size();
    Eigen::MatrixXd jac(n_residuals, n);
    Eigen::VectorXd plus(n_residuals), minus(n_residuals);
    Eigen::VectorXd p = params;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double floor = scales.size() == n ? scales[j] : 1e-6;
        const double h = relative_step * std::max(std::abs(params[j]), floor);
        p[j] = params[j] + h;
        f(p, plus);
        p[j] = params[j] - h;
        f(p, minus);
        p[j] = params[j];
        jac.col(j) = (plus - minus) / (2.0 * h);
    }
    return jac;
}

LeastSquaresResult solve_least_squares(const ResidualFunction& f, Eigen::Index n_residuals,
                                       const Eigen::VectorXd& initial, const LeastSquaresOptions& options) {
    const Eigen::Index n = initial.size();
    if (n == 0) throw FitError("least squares: no parameters");
    if (n_residuals < n) throw FitError("least squares: fewer residuals than parameters");

    LeastSquaresResult out;
    out.params = initial;
    out.residuals.resize(n_residuals);
    f(out.params, out.residuals);
    if (!out.residuals.allFinite()) throw FitError("least squares: residuals not finite at the initial guess");
    out.chi2 = out.residuals.squaredNorm();
    out.dof = static_cast<int>(n_residuals - n);

    auto jacobian = [&](const Eigen::VectorXd& p) {
        return finite_difference_jacobian(f, n_residuals, p, options.difference_step, options.parameter_scales);
    };

    Eigen::MatrixXd jac = jacobian(out.params);
    Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::VectorXd grad = jac.transpose() * out.residuals;
    double lambda = options.initial_damping * std::max(jtj.diagonal().maxCoeff(), 1e-300);
    double nu = 2.0;
    Eigen::VectorXd trial(n_residuals);

    for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
        if (out.chi2 == 0.0) {
            out.converged = true;
            break;
        }
        Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-12 * std::max(jtj.diagonal().maxCoeff(), 1e-300));
        Eigen::MatrixXd damped = jtj;
        damped.diagonal() += lambda * diag;
        const Eigen::VectorXd step = damped.ldlt().solve(-grad);
        if (!step.allFinite()) {
            out.message = "singular normal equations";
            break;
        }
        const Eigen::VectorXd candidate = out.params + step;
        f(candidate, trial);
        const double chi2_new = trial.allFinite() ? trial.squaredNorm() : INFINITY;
        const double predicted = step.dot(lambda * diag.cwiseProduct(step) - grad);
        const double rho = predicted > 0.0 ? (out.chi2 - chi2_new) / predicted : -1.0;
        if (rho > 0.0 && chi2_new <= out.chi2) {
            out.params = candidate;
            out.residuals = trial;
            out.chi2 = chi2_new;
            jac = jacobian(out.params);
            jtj = jac.transpose() * jac;
            grad = jac.transpose() * out.residuals;
            lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
            nu = 2.0;
            // Only accepted steps count: a rejected, heavily damped step is short for the wrong reason.
            const double tol = options.step_tolerance;
            if (step.norm() <= tol * (out.params.norm() + tol)) {
                out.converged = true;
                break;
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if (!std::isfinite(lambda) || lambda > 1e300) {
                // No downhill direction left at machine precision: we are at the minimum.
                out.converged = true;
                break;
            }
        }
    }
    if (!out.converged && out.message.empty()) out.message = "iteration limit reached";

    // Covariance from the pseudo-inverse; a rank-deficient J^T J marks it unreliable.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jtj, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = 1e-12 * sv[0];
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
    out.covariance_ok = sv[0] > 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sv[i] > cutoff && sv[i] > 0.0) {
            inv[i] = 1.0 / sv[i];
        } else {
            out.covariance_ok = false;
        }
    }
    out.covariance = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    return out;
}

}  // namespace fibsim
