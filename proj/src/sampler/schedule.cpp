#include <epirefine/sampler/schedule.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace epirefine::sampler {

using nlohmann::ordered_json;

NoiseSchedule NoiseSchedule::linear(int t_train, double beta_start, double beta_end,
                                    int t_sample) {
  if (t_train < 1) throw Error("NoiseSchedule: t_train must be positive");
  if (t_sample < 1 || t_sample > t_train)
    throw Error("NoiseSchedule: t_sample must be in [1, t_train]");
  NoiseSchedule s;
  s.t_train = t_train;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.alpha_bar.assign(static_cast<std::size_t>(t_train) + 1, 1.0);
  for (int t = 1; t <= t_train; ++t) {
    const double beta =
        t_train == 1 ? beta_start
                     : beta_start + (beta_end - beta_start) * (t - 1) / (t_train - 1);
    s.alpha_bar[static_cast<std::size_t>(t)] =
        s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
  }
  s.sample_steps.reserve(static_cast<std::size_t>(t_sample));
  for (int k = 1; k <= t_sample; ++k)
    s.sample_steps.push_back(static_cast<int>(std::llround(
        static_cast<double>(k) * t_train / static_cast<double>(t_sample))));
  return s;
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t < 0 || t >= static_cast<int>(alpha_bar.size()))
    throw Error("NoiseSchedule: step index out of range");
  return alpha_bar[static_cast<std::size_t>(t)];
}

int NoiseSchedule::previous_step(int t) const {
  const auto it = std::lower_bound(sample_steps.begin(), sample_steps.end(), t);
  if (it == sample_steps.end() || *it != t)
    throw Error("NoiseSchedule: t is not a sampled step");
  return it == sample_steps.begin() ? 0 : *(it - 1);
}

std::string NoiseSchedule::to_json() const {
  ordered_json j;
  j["T_train"] = t_train;
  j["beta_start"] = beta_start;
  j["beta_end"] = beta_end;
  j["sample_steps"] = sample_steps;
  return j.dump(2);
}

NoiseSchedule NoiseSchedule::from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  NoiseSchedule s = linear(j.at("T_train").get<int>(), j.at("beta_start").get<double>(),
                           j.at("beta_end").get<double>(), 1);
  s.sample_steps = j.at("sample_steps").get<std::vector<int>>();
  if (s.sample_steps.empty() || !std::is_sorted(s.sample_steps.begin(), s.sample_steps.end()) ||
      s.sample_steps.front() < 1 || s.sample_steps.back() > s.t_train)
    throw Error("NoiseSchedule: invalid sample_steps");
  return s;
}

diffcore::Tensor ddim_step(const diffcore::Tensor& z_t, const diffcore::Tensor& eps_hat,
                           int t, const NoiseSchedule& schedule) {
  using namespace diffcore;
  const int t_prev = schedule.previous_step(t);
  const double abar_t = schedule.alpha_bar_at(t);
  const double abar_prev = schedule.alpha_bar_at(t_prev);
  const double s_t = std::sqrt(abar_t), s_prev = std::sqrt(abar_prev);
  const double n_t = std::sqrt(1.0 - abar_t), n_prev = std::sqrt(1.0 - abar_prev);
  Tensor pred_x0 = scalar_mul(sub(z_t, scalar_mul(eps_hat, n_t)), 1.0 / s_t);
  return add(scalar_mul(pred_x0, s_prev), scalar_mul(eps_hat, n_prev));
}

}  // namespace epirefine::sampler
