#include "posediff/diffusion.hpp"

#include <array>
#include <charconv>
#include <fstream>

namespace posediff {

NoiseSchedule::NoiseSchedule(Eigen::VectorXd betas) : beta_(std::move(betas)) {
    if (beta_.size() < 1) throw Error(ErrorCode::InvalidSchedule, "schedule needs at least one step");
    if ((beta_.array() <= 0.0).any() || (beta_.array() >= 1.0).any())
        throw Error(ErrorCode::InvalidSchedule, "betas must lie in (0, 1)");
    alpha_ = (1.0 - beta_.array()).matrix();
    alpha_bar_.resize(beta_.size());
    double running = 1.0;
    for (Eigen::Index i = 0; i < beta_.size(); ++i) {
        running *= alpha_[i];
        alpha_bar_[i] = running;
    }
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw Error(ErrorCode::InvalidSchedule, "T must be at least 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw Error(ErrorCode::InvalidSchedule, "require 0 < beta_start <= beta_end < 1");
    Eigen::VectorXd betas(steps);
    for (int i = 0; i < steps; ++i) {
        const double u = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        betas[i] = beta_start + u * (beta_end - beta_start);
    }
    return NoiseSchedule(std::move(betas));
}

namespace {

std::string shortest(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

}  // namespace

std::string schedule_csv(const NoiseSchedule& schedule) {
    std::string out = "t,beta,alpha,alpha_bar\n";
    for (int t = 1; t <= schedule.steps(); ++t) {
        out += std::to_string(t) + "," + shortest(schedule.beta(t)) + "," + shortest(schedule.alpha(t)) + "," +
               shortest(schedule.alpha_bar(t)) + "\n";
    }
    return out;
}

void write_schedule_csv(const NoiseSchedule& schedule, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    out << schedule_csv(schedule);
}

}  // namespace posediff
