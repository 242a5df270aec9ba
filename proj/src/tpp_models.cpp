#include "mmtpp/tpp_models.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "mmtpp/quadrature.hpp"

namespace mmtpp {

std::string to_string(ModelVariant v) {
  return v == ModelVariant::Poisson ? "poisson" : "hawkes";
}

ModelVariant model_variant_from_string(const std::string& s) {
  if (s == "poisson") return ModelVariant::Poisson;
  if (s == "hawkes") return ModelVariant::ExpHawkes;
  throw Error(ErrorCode::InvalidArgument,
              fmt::format("unknown model variant '{}' (expected poisson or hawkes)", s));
}

IntensityModel IntensityModel::poisson(const std::vector<double>& rates) {
  IntensityModel m;
  m.variant = ModelVariant::Poisson;
  m.type_count = static_cast<int>(rates.size());
  m.base = Eigen::Map<const Eigen::VectorXd>(rates.data(), m.type_count);
  m.validate();
  return m;
}

IntensityModel IntensityModel::hawkes(const Eigen::VectorXd& mu, const Eigen::MatrixXd& alpha,
                                      double beta) {
  IntensityModel m;
  m.variant = ModelVariant::ExpHawkes;
  m.type_count = static_cast<int>(mu.size());
  m.base = mu;
  m.excitation = alpha;
  m.decay = beta;
  m.validate();
  return m;
}

void IntensityModel::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (type_count < 1) fail("model needs at least one event type");
  if (base.size() != type_count) fail("base vector length does not match type_count");
  if (!base.allFinite() || (base.array() < 0.0).any()) fail("base rates must be finite and >= 0");
  if (variant == ModelVariant::Poisson) {
    if ((base.array() <= 0.0).any()) fail("Poisson rates must be > 0");
    return;
  }
  if (excitation.rows() != type_count || excitation.cols() != type_count) {
    fail("excitation matrix must be type_count x type_count");
  }
  if (!excitation.allFinite() || (excitation.array() < 0.0).any()) {
    fail("excitation entries must be finite and >= 0");
  }
  if (!std::isfinite(decay) || decay <= 0.0) fail("decay must be finite and > 0");
}

double IntensityModel::branching_ratio() const {
  if (variant == ModelVariant::Poisson) return 0.0;
  const Eigen::VectorXcd ev = excitation.eigenvalues();
  return ev.cwiseAbs().maxCoeff() / decay;
}

Eigen::Index IntensityModel::parameter_count() const {
  if (variant == ModelVariant::Poisson) return type_count;
  return type_count + type_count * type_count + 1;
}

Eigen::VectorXd IntensityModel::parameters() const {
  Eigen::VectorXd theta(parameter_count());
  theta.head(type_count) = base;
  if (variant == ModelVariant::ExpHawkes) {
    Eigen::Index k = type_count;
    for (int e = 0; e < type_count; ++e)
      for (int f = 0; f < type_count; ++f) theta[k++] = excitation(e, f);
    theta[k] = decay;
  }
  return theta;
}

IntensityModel IntensityModel::with_parameters(const Eigen::VectorXd& theta) const {
  if (theta.size() != parameter_count()) {
    throw Error(ErrorCode::InvalidArgument, "parameter vector has the wrong length");
  }
  IntensityModel m = *this;
  m.base = theta.head(type_count);
  if (variant == ModelVariant::ExpHawkes) {
    Eigen::Index k = type_count;
    for (int e = 0; e < type_count; ++e)
      for (int f = 0; f < type_count; ++f) m.excitation(e, f) = theta[k++];
    m.decay = theta[k];
  }
  return m;
}

bool IntensityModel::operator==(const IntensityModel& o) const {
  return variant == o.variant && type_count == o.type_count && base == o.base &&
         excitation == o.excitation && decay == o.decay;
}

namespace {

// Single pass over a sequence with the recursive exponential-kernel state
//   R_k(t) = sum_{t_j < t, e_j = k} exp(-beta (t - t_j)),   D_k = dR_k / dbeta.
// Poisson models take the same path with no excitation, which keeps a Hawkes
// model with alpha = 0 bit-identical to its Poisson counterpart.
struct Pass {
  const IntensityModel& m;
  bool hawkes;
  bool want_grad;
  Eigen::VectorXd R, D, col_sum;
  Eigen::VectorXd grad;
  double mu_total;

  Pass(const IntensityModel& model, bool grad_on)
      : m(model), hawkes(model.variant == ModelVariant::ExpHawkes), want_grad(grad_on) {
    const int E = m.type_count;
    R = Eigen::VectorXd::Zero(E);
    D = Eigen::VectorXd::Zero(E);
    if (hawkes) col_sum = m.excitation.colwise().sum().transpose();
    if (want_grad) grad = Eigen::VectorXd::Zero(m.parameter_count());
    mu_total = m.base.sum();
  }

  Eigen::Index alpha_index(int e, int k) const { return m.type_count + e * m.type_count + k; }
  Eigen::Index beta_index() const { return m.type_count + m.type_count * m.type_count; }

  // Integral of the total intensity over (p, p + dt]; advances the state to p + dt.
  double compensate(double dt) {
    double c = mu_total * dt;
    if (want_grad) grad.head(m.type_count).array() -= dt;
    if (!hawkes) return c;
    const double beta = m.decay;
    const double q = std::exp(-beta * dt);
    const double g = (1.0 - q) / beta;
    c += col_sum.dot(R) * g;
    if (want_grad) {
      const double dg = dt * q / beta - g / beta;
      for (int e = 0; e < m.type_count; ++e)
        for (int k = 0; k < m.type_count; ++k) grad[alpha_index(e, k)] -= R[k] * g;
      grad[beta_index()] -= col_sum.dot(D) * g + col_sum.dot(R) * dg;
    }
    D = q * (D - dt * R);
    R *= q;
    return c;
  }

  double intensity(int e) const {
    double lam = m.base[e];
    if (hawkes) lam += m.excitation.row(e).dot(R);
    return lam;
  }

  double total_intensity() const {
    double lam = 0.0;
    for (int e = 0; e < m.type_count; ++e) lam += intensity(e);
    return lam;
  }

  // d log lambda_e / d theta at the current state, accumulated into grad.
  void add_log_intensity_grad(int e, double lam) {
    grad[e] += 1.0 / lam;
    if (!hawkes) return;
    for (int k = 0; k < m.type_count; ++k) grad[alpha_index(e, k)] += R[k] / lam;
    grad[beta_index()] += m.excitation.row(e).dot(D) / lam;
  }

  void jump(int e) {
    if (hawkes) R[e] += 1.0;
  }
};

LogLikReport evaluate(const IntensityModel& model, const EventSequence& seq,
                      Eigen::VectorXd* grad_out) {
  if (seq.type_count > model.type_count) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("sequence has {} types but the model only {}", seq.type_count,
                            model.type_count));
  }
  require_valid(seq);
  Pass pass(model, grad_out != nullptr);
  LogLikReport rep;
  rep.unstable = !model.stable();
  rep.time_terms.reserve(seq.size());
  rep.type_terms.reserve(seq.size());
  double prev = 0.0;
  for (const Event& ev : seq.events) {
    const double comp = pass.compensate(ev.time - prev);
    const double lam_total = pass.total_intensity();
    const double lam = pass.intensity(ev.type_id);
    rep.time_terms.push_back(std::log(lam_total) - comp);
    rep.type_terms.push_back(std::log(lam) - std::log(lam_total));
    if (pass.want_grad) pass.add_log_intensity_grad(ev.type_id, lam);
    pass.jump(ev.type_id);
    prev = ev.time;
  }
  rep.survival_term = -pass.compensate(seq.horizon - prev);
  double total = 0.0;
  for (double v : rep.time_terms) total += v;
  for (double v : rep.type_terms) total += v;
  rep.total = total + rep.survival_term;
  if (grad_out) *grad_out = std::move(pass.grad);
  return rep;
}

double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double softplus_inv(double theta) {
  const double t = std::max(theta, 1e-10);
  return t > 30.0 ? t : t + std::log(-std::expm1(-t));
}

struct Objective {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// Sum of per-sequence log-likelihoods (and gradients). Work is spread over
// threads but results are combined in sequence order, so the sum is
// bit-identical for any thread count.
Objective sum_loglik(const IntensityModel& model, std::span<const EventSequence> seqs,
                     bool want_grad, unsigned threads) {
  std::vector<double> values(seqs.size());
  std::vector<Eigen::VectorXd> grads(want_grad ? seqs.size() : 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seqs.size(); i = next++) {
      values[i] = evaluate(model, seqs[i], want_grad ? &grads[i] : nullptr).total;
    }
  };
  const unsigned n_threads =
      std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(seqs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  Objective out;
  if (want_grad) out.grad = Eigen::VectorXd::Zero(model.parameter_count());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.value += values[i];
    if (want_grad) out.grad += grads[i];
  }
  return out;
}

IntensityModel default_init(std::span<const EventSequence> seqs, ModelVariant variant,
                            int type_count) {
  double total_time = 0.0;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(type_count);
  for (const auto& s : seqs) {
    total_time += s.horizon;
    for (const auto& ev : s.events) counts[ev.type_id] += 1.0;
  }
  const Eigen::VectorXd rates = counts.cwiseMax(0.5) / total_time;
  if (variant == ModelVariant::Poisson) {
    return IntensityModel::poisson(std::vector<double>(rates.data(), rates.data() + type_count));
  }
  const Eigen::MatrixXd alpha =
      Eigen::MatrixXd::Constant(type_count, type_count, 0.5 / type_count);
  return IntensityModel::hawkes(0.5 * rates, alpha, 1.0);
}

}  // namespace

LogLikReport loglik(const IntensityModel& model, const EventSequence& seq) {
  model.validate();
  return evaluate(model, seq, nullptr);
}

LogLikGradient loglik_gradient(const IntensityModel& model, const EventSequence& seq) {
  model.validate();
  LogLikGradient out;
  out.value = evaluate(model, seq, &out.gradient).total;
  return out;
}

FitResult fit_mle(std::span<const EventSequence> seqs, ModelVariant variant,
                  const IntensityModel* init, const FitConfig& config) {
  std::size_t n_events = 0;
  int type_count = 1;
  for (const auto& s : seqs) {
    require_valid(s);
    n_events += s.size();
    type_count = std::max(type_count, s.type_count);
  }
  if (n_events == 0) {
    throw Error(ErrorCode::InvalidArgument, "fitting needs at least one nonempty sequence");
  }
  IntensityModel model = init ? *init : default_init(seqs, variant, type_count);
  model.validate();
  if (model.variant != variant) {
    throw Error(ErrorCode::InvalidArgument, "initial model has a different variant");
  }
  if (!model.stable()) {
    throw Error(ErrorCode::UnstableModel,
                fmt::format("initial branching ratio {:.4f} >= 1", model.branching_ratio()));
  }
  const unsigned threads =
      config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  const double scale = 1.0 / static_cast<double>(n_events);

  const Eigen::VectorXd theta0 = model.parameters();
  Eigen::VectorXd u = theta0.unaryExpr(&softplus_inv);
  auto model_at = [&](const Eigen::VectorXd& uu) {
    return model.with_parameters(uu.unaryExpr(&softplus));
  };
  auto objective = [&](const Eigen::VectorXd& uu, bool want_grad) {
    Objective o = sum_loglik(model_at(uu), seqs, want_grad, threads);
    if (want_grad) o.grad = o.grad.cwiseProduct(uu.unaryExpr(&sigmoid));
    return o;
  };

  Objective cur = objective(u, true);
  if (!std::isfinite(cur.value) || !cur.grad.allFinite()) {
    throw Error(ErrorCode::DivergedOptimization, "log-likelihood is not finite at the start");
  }
  FitTrace trace;
  trace.loglik.push_back(cur.value);
  double step = config.initial_step;
  for (int it = 0; it < config.max_iters; ++it) {
    const Eigen::VectorXd g = cur.grad * scale;
    trace.grad_norm = g.norm();
    if (trace.grad_norm < config.grad_tol) {
      trace.converged = true;
      break;
    }
    bool accepted = false;
    while (step > 1e-14) {
      const Eigen::VectorXd cand = u + step * g;
      const Objective next = objective(cand, true);
      if (std::isfinite(next.value) && next.grad.allFinite() &&
          next.value * scale >= cur.value * scale + 1e-4 * step * g.squaredNorm()) {
        u = cand;
        cur = next;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further ascent at machine precision
    trace.loglik.push_back(cur.value);
    trace.iterations = it + 1;
    step = std::min(step * 2.0, 1e6);
  }
  if (!cur.grad.allFinite() || !u.allFinite()) {
    throw Error(ErrorCode::DivergedOptimization, "parameters diverged");
  }
  FitResult res{model_at(u), std::move(trace)};
  if (!res.model.stable()) {
    throw Error(ErrorCode::UnstableModel,
                fmt::format("fitted branching ratio {:.4f} >= 1", res.model.branching_ratio()));
  }
  return res;
}

EventSequence simulate(const IntensityModel& model, double horizon, std::uint64_t seed) {
  model.validate();
  if (!model.stable()) {
    throw Error(ErrorCode::UnstableModel,
                fmt::format("branching ratio {:.4f} >= 1", model.branching_ratio()));
  }
  if (!std::isfinite(horizon) || horizon <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "horizon must be finite and > 0");
  }
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  EventSequence seq;
  seq.horizon = horizon;
  seq.type_count = model.type_count;
  Pass state(model, false);
  double t = 0.0;
  while (true) {
    const double bound = state.total_intensity();  // intensity only decays until the next event
    if (!(bound > 0.0)) break;
    const double w = -std::log1p(-uniform()) / bound;
    if (t + w > horizon) break;
    state.compensate(w);
    t += w;
    const double lam = state.total_intensity();
    if (uniform() * bound > lam) continue;
    if (!seq.empty() && t <= seq.events.back().time) continue;
    double pick = uniform() * lam;
    int type = model.type_count - 1;
    for (int e = 0; e < model.type_count; ++e) {
      pick -= state.intensity(e);
      if (pick < 0.0) {
        type = e;
        break;
      }
    }
    seq.events.push_back({t, type, "", std::nullopt});
    state.jump(type);
  }
  return seq;
}

namespace {

// Predictive quantities from the state right after the last history event:
// lambda(s) = mu + c exp(-beta s),  Lambda(s) = mu s + c (1 - exp(-beta s)) / beta.
struct Predictive {
  const IntensityModel& m;
  Eigen::VectorXd excite;  // per-type excitation at s = 0
  double mu = 0.0;
  double c = 0.0;

  Predictive(const IntensityModel& model, const EventSequence& seq, std::size_t prefix)
      : m(model) {
    model.validate();
    if (prefix > seq.size()) {
      throw Error(ErrorCode::InvalidArgument, "history prefix longer than the sequence");
    }
    Pass pass(model, false);
    double prev = 0.0;
    for (std::size_t i = 0; i < prefix; ++i) {
      pass.compensate(seq.events[i].time - prev);
      pass.jump(seq.events[i].type_id);
      prev = seq.events[i].time;
    }
    mu = pass.mu_total;
    excite = Eigen::VectorXd::Zero(model.type_count);
    if (pass.hawkes) excite = model.excitation * pass.R;
    c = excite.sum();
  }

  double decay() const { return m.variant == ModelVariant::ExpHawkes ? m.decay : 1.0; }
  double rate(double s) const { return mu + c * std::exp(-decay() * s); }
  double rate(int e, double s) const { return m.base[e] + excite[e] * std::exp(-decay() * s); }
  double cumulative(double s) const {
    return mu * s + c * (-std::expm1(-decay() * s)) / decay();
  }
  double survival(double s) const { return std::exp(-cumulative(s)); }
  double density(double s) const { return rate(s) * survival(s); }
};

}  // namespace

double predictive_density(const IntensityModel& model, const EventSequence& seq,
                          std::size_t prefix, double s) {
  if (s < 0.0) return 0.0;
  return Predictive(model, seq, prefix).density(s);
}

double survival_probability(const IntensityModel& model, const EventSequence& seq,
                            std::size_t prefix, double s) {
  if (s <= 0.0) return 1.0;
  return Predictive(model, seq, prefix).survival(s);
}

NextEventPrediction next_event_predict(const IntensityModel& model, const EventSequence& seq,
                                       std::size_t prefix) {
  if (!model.stable()) {
    throw Error(ErrorCode::UnstableModel,
                fmt::format("branching ratio {:.4f} >= 1", model.branching_ratio()));
  }
  const Predictive p(model, seq, prefix);
  if (!(p.rate(0.0) > 0.0)) {
    throw Error(ErrorCode::QuadratureFailure, "zero intensity: no next event is expected");
  }
  // Integrate s f(s) over (0, cut] in geometrically growing panels so that mass
  // concentrated near zero is resolved, then close the tail analytically with
  // the background rate that remains once the excitation has decayed.
  const double cut = model.variant == ModelVariant::ExpHawkes ? 50.0 / model.decay
                                                               : 50.0 / p.mu;
  double upper = 1.0 / p.rate(0.0);
  while (upper < cut && p.cumulative(upper) < 46.0) upper *= 2.0;
  upper = std::min(upper, cut);
  const double s_tail = p.survival(upper);
  const double rate_tail = p.rate(upper);
  if (s_tail > 1e-300 && !(p.mu > 0.0)) {
    throw Error(ErrorCode::QuadratureFailure,
                "defective predictive distribution: the next event may never occur");
  }
  auto integrand = [&](double s) { return s * p.density(s); };
  double mean = 0.0;
  double lo = 0.0;
  double hi = std::min(upper, 1.0 / p.rate(0.0));
  while (lo < upper) {
    mean += integrate_adaptive(integrand, lo, hi, 1e-10).value;
    lo = hi;
    hi = std::min(upper, 2.0 * hi);
  }
  if (s_tail > 0.0) mean += s_tail * (upper + 1.0 / rate_tail);
  if (!std::isfinite(mean)) {
    throw Error(ErrorCode::QuadratureFailure, "expected interval is not finite");
  }
  NextEventPrediction out;
  out.interval = mean;
  double best = -1.0;
  for (int e = 0; e < model.type_count; ++e) {
    const double r = p.rate(e, mean);
    if (r > best) {
      best = r;
      out.type_id = e;
    }
  }
  return out;
}

nlohmann::json model_to_json(const IntensityModel& model) {
  nlohmann::json j;
  j["variant"] = to_string(model.variant);
  j["type_count"] = model.type_count;
  j["base"] = std::vector<double>(model.base.data(), model.base.data() + model.base.size());
  if (model.variant == ModelVariant::ExpHawkes) {
    nlohmann::json rows = nlohmann::json::array();
    for (int e = 0; e < model.type_count; ++e) {
      std::vector<double> row(model.type_count);
      for (int k = 0; k < model.type_count; ++k) row[k] = model.excitation(e, k);
      rows.push_back(row);
    }
    j["excitation"] = rows;
    j["decay"] = model.decay;
  }
  return j;
}

IntensityModel model_from_json(const nlohmann::json& j) {
  try {
    const auto variant = model_variant_from_string(j.at("variant").get<std::string>());
    const auto base = j.at("base").get<std::vector<double>>();
    if (variant == ModelVariant::Poisson) return IntensityModel::poisson(base);
    const int E = static_cast<int>(base.size());
    const auto rows = j.at("excitation").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd alpha(E, E);
    if (static_cast<int>(rows.size()) != E) {
      throw Error(ErrorCode::SchemaError, "excitation must have one row per type");
    }
    for (int e = 0; e < E; ++e) {
      if (static_cast<int>(rows[e].size()) != E) {
        throw Error(ErrorCode::SchemaError, "excitation must be square");
      }
      for (int k = 0; k < E; ++k) alpha(e, k) = rows[e][k];
    }
    return IntensityModel::hawkes(Eigen::Map<const Eigen::VectorXd>(base.data(), E), alpha,
                                  j.at("decay").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, fmt::format("bad model JSON: {}", e.what()));
  }
}

void save_model(const IntensityModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << model_to_json(model).dump(2) << "\n";
}

IntensityModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot read {}", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: {}", path.string(), e.what()));
  }
  return model_from_json(j);
}

}  // namespace mmtpp
