#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmtpp/events.hpp"

namespace mmtpp {

enum class ModelVariant { Poisson, ExpHawkes };

std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& s);

// Multivariate intensity model.
//
// Poisson:   lambda_e(t) = base_e
// ExpHawkes: lambda_e(t) = base_e + sum_{t_j < t} alpha(e, e_j) exp(-beta (t - t_j))
//
// The branching matrix of the Hawkes kernel is alpha / beta, so the process is
// stationary when spectral_radius(alpha) / beta < 1.
struct IntensityModel {
  ModelVariant variant = ModelVariant::Poisson;
  int type_count = 1;
  Eigen::VectorXd base;        // rates (Poisson) or background mu (Hawkes)
  Eigen::MatrixXd excitation;  // alpha, type_count x type_count; empty for Poisson
  double decay = 1.0;          // beta; unused for Poisson

  static IntensityModel poisson(const std::vector<double>& rates);
  static IntensityModel hawkes(const Eigen::VectorXd& mu, const Eigen::MatrixXd& alpha,
                               double beta);

  // Throws InvalidArgument on negative, non-finite or mis-shaped parameters.
  void validate() const;
  double branching_ratio() const;  // spectral_radius(alpha) / beta, 0 for Poisson
  bool stable() const { return branching_ratio() < 1.0; }

  // Flat natural parameters: base, then alpha row-major, then beta.
  Eigen::Index parameter_count() const;
  Eigen::VectorXd parameters() const;
  IntensityModel with_parameters(const Eigen::VectorXd& theta) const;

  bool operator==(const IntensityModel& o) const;
};

struct LogLikReport {
  double total = 0.0;
  std::vector<double> time_terms;  // log p(t_i | H)
  std::vector<double> type_terms;  // log p(e_i | H, t_i)
  double survival_term = 0.0;      // log P(no event in (t_N, T] | H)
  bool unstable = false;           // evaluated on a non-stationary Hawkes model
};

LogLikReport loglik(const IntensityModel& model, const EventSequence& seq);

struct LogLikGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;  // d loglik / d parameters(), same layout
};

LogLikGradient loglik_gradient(const IntensityModel& model, const EventSequence& seq);

struct FitConfig {
  int max_iters = 5000;
  double grad_tol = 1e-7;  // on the per-event objective, in softplus coordinates
  double initial_step = 1.0;
  unsigned threads = 0;    // 0 = hardware concurrency
};

struct FitTrace {
  std::vector<double> loglik;  // total log-likelihood after each accepted step
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

struct FitResult {
  IntensityModel model;
  FitTrace trace;
};

// Gradient ascent with Armijo backtracking on softplus-reparameterised
// parameters. When init is null a moment-based starting point is used.
FitResult fit_mle(std::span<const EventSequence> seqs, ModelVariant variant,
                  const IntensityModel* init = nullptr, const FitConfig& config = {});

// Ogata thinning on (0, horizon].
EventSequence simulate(const IntensityModel& model, double horizon, std::uint64_t seed);

// Conditional quantities for the next event after the first `prefix` events
// of seq. s is the elapsed time since the last of those events (or since 0).
double predictive_density(const IntensityModel& model, const EventSequence& seq,
                          std::size_t prefix, double s);
double survival_probability(const IntensityModel& model, const EventSequence& seq,
                            std::size_t prefix, double s);

struct NextEventPrediction {
  double interval = 0.0;  // E[t_next - t_last | H]
  int type_id = 0;        // argmax_e lambda_e(t_last + interval)
};

NextEventPrediction next_event_predict(const IntensityModel& model,
                                       const EventSequence& seq, std::size_t prefix);

nlohmann::json model_to_json(const IntensityModel& model);
IntensityModel model_from_json(const nlohmann::json& j);
void save_model(const IntensityModel& model, const std::filesystem::path& path);
IntensityModel load_model(const std::filesystem::path& path);

}  // namespace mmtpp
