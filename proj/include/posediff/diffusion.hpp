#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Core>

#include "posediff/errors.hpp"

namespace posediff {

/// Linear-beta DDPM schedule over timesteps t = 1..T (stored 0-based).
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    explicit NoiseSchedule(Eigen::VectorXd betas);

    int steps() const { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_[index(t)]; }
    double alpha(int t) const { return alpha_[index(t)]; }
    /// Cumulative product of alpha up to t; 1 at t = 0.
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[index(t)]; }

    const Eigen::VectorXd& betas() const { return beta_; }
    const Eigen::VectorXd& alphas() const { return alpha_; }
    const Eigen::VectorXd& alpha_bars() const { return alpha_bar_; }

    void check_timestep(int t) const {
        if (t < 1 || t > steps())
            throw Error(ErrorCode::InvalidTimestep, "timestep " + std::to_string(t) + " outside [1, " +
                                                        std::to_string(steps()) + "]");
    }

private:
    Eigen::Index index(int t) const {
        check_timestep(t);
        return t - 1;
    }

    Eigen::VectorXd beta_, alpha_, alpha_bar_;
};

/// Betas linearly spaced from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

/// CSV with header "t,beta,alpha,alpha_bar", shortest round-trip number formatting.
std::string schedule_csv(const NoiseSchedule& schedule);
void write_schedule_csv(const NoiseSchedule& schedule, const std::filesystem::path& path);

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Diffusion latent: arbitrary-shaped grid plus the timestep it belongs to.
template <typename Scalar>
struct LatentState {
    Matrix<Scalar> values;
    int timestep = 0;
};

template <typename Scalar, typename Rng>
Matrix<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix<Scalar> out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(dist(rng));
    return out;
}

template <typename A, typename B>
void check_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorCode::ShapeMismatch, "operand shapes differ");
}

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
template <typename D0, typename DE>
LatentState<typename D0::Scalar> q_sample(const Eigen::MatrixBase<D0>& x0, int t, const Eigen::MatrixBase<DE>& eps,
                                          const NoiseSchedule& schedule) {
    using Scalar = typename D0::Scalar;
    schedule.check_timestep(t);
    check_same_shape(x0, eps);
    const double abar = schedule.alpha_bar(t);
    LatentState<Scalar> out;
    out.values = static_cast<Scalar>(std::sqrt(abar)) * x0 + static_cast<Scalar>(std::sqrt(1.0 - abar)) * eps;
    out.timestep = t;
    return out;
}

/// Per-pixel data statistics of x_0 (same layout as the latent).
template <typename Scalar>
struct DataPrior {
    Matrix<Scalar> mean;
    Matrix<Scalar> variance;
};

/// Noise estimate under an independent Gaussian prior per element:
/// sqrt(1 - abar) * (x_t - sqrt(abar) * mean) / (abar * variance + 1 - abar).
/// `x_t` may stack several samples row-wise over the prior's rows.
template <typename Scalar>
Matrix<Scalar> prior_noise_estimate(const NoiseSchedule& schedule, int t, const Matrix<Scalar>& x_t,
                                    const DataPrior<Scalar>& prior) {
    const Eigen::Index rows = prior.mean.rows();
    if (x_t.cols() != prior.mean.cols() || rows == 0 || x_t.rows() % rows != 0)
        throw Error(ErrorCode::ShapeMismatch, "latent does not match the data prior");
    const double abar = schedule.alpha_bar(t);
    const Scalar root = static_cast<Scalar>(std::sqrt(abar));
    const Matrix<Scalar> gain =
        (static_cast<Scalar>(std::sqrt(1.0 - abar)) /
         (static_cast<Scalar>(abar) * prior.variance.array() + static_cast<Scalar>(1.0 - abar)))
            .matrix();
    Matrix<Scalar> out(x_t.rows(), x_t.cols());
    for (Eigen::Index r = 0; r < x_t.rows(); r += rows)
        out.middleRows(r, rows) = (gain.array() * (x_t.middleRows(r, rows) - root * prior.mean).array()).matrix();
    return out;
}

/// Mean squared error over all elements, accumulated in double.
template <typename DA, typename DB>
double training_loss(const Eigen::MatrixBase<DA>& eps, const Eigen::MatrixBase<DB>& eps_pred) {
    check_same_shape(eps, eps_pred);
    const auto diff = (eps.template cast<double>() - eps_pred.template cast<double>()).eval();
    return diff.squaredNorm() / static_cast<double>(diff.size());
}

/// mu = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t).
template <typename DX, typename DE>
Matrix<typename DX::Scalar> posterior_mean(const Eigen::MatrixBase<DX>& x_t, int t,
                                           const Eigen::MatrixBase<DE>& eps_pred, const NoiseSchedule& schedule) {
    using Scalar = typename DX::Scalar;
    schedule.check_timestep(t);
    check_same_shape(x_t, eps_pred);
    const double alpha = schedule.alpha(t);
    const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double scale = 1.0 / std::sqrt(alpha);
    // Accumulated in double and rounded once.
    return (scale * (x_t.template cast<double>() - coef * eps_pred.template cast<double>())).template cast<Scalar>();
}

/// One ancestral step with the variance fixed to beta_t. `z` must be zero at t = 1.
template <typename DX, typename DE, typename DZ>
LatentState<typename DX::Scalar> p_sample_step(const Eigen::MatrixBase<DX>& x_t, int t,
                                               const Eigen::MatrixBase<DE>& eps_pred,
                                               const Eigen::MatrixBase<DZ>& z, const NoiseSchedule& schedule) {
    using Scalar = typename DX::Scalar;
    schedule.check_timestep(t);
    check_same_shape(x_t, z);
    if (t == 1 && !z.isZero(0))
        throw Error(ErrorCode::FinalStepNoise, "noise must be zero on the final step");
    LatentState<Scalar> out;
    out.values = posterior_mean(x_t, t, eps_pred, schedule) + static_cast<Scalar>(std::sqrt(schedule.beta(t))) * z;
    out.timestep = t - 1;
    return out;
}

/// Ancestral sampling from x_T ~ N(0, I). `predict_noise(x_t, t)` returns the
/// noise estimate for the whole latent. The result is clamped to [0, 1]
/// unless `clamp` is false.
template <typename Scalar, typename Denoiser>
Matrix<Scalar> sample(Denoiser&& predict_noise, const NoiseSchedule& schedule, Eigen::Index rows,
                      Eigen::Index cols, std::uint64_t seed, bool clamp = true) {
    std::mt19937_64 rng(seed);
    Matrix<Scalar> x = standard_normal<Scalar>(rows, cols, rng);
    for (int t = schedule.steps(); t >= 1; --t) {
        Matrix<Scalar> eps = predict_noise(static_cast<const Matrix<Scalar>&>(x), t);
        Matrix<Scalar> z = t > 1 ? standard_normal<Scalar>(rows, cols, rng) : Matrix<Scalar>::Zero(rows, cols);
        x = p_sample_step(x, t, eps, z, schedule).values;
        if (!x.allFinite())
            throw Error(ErrorCode::DivergedSampling, "non-finite latent at timestep " + std::to_string(t));
    }
    if (clamp) x = x.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    return x;
}

}  // namespace posediff
