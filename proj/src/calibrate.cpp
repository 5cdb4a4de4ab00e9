#include "semcal/calibrate.hpp"

#include <fstream>
#include <numeric>

#include "semcal/rng.hpp"

namespace semcal {

using nlohmann::json;

std::vector<Eigen::VectorXd> apply_per_token_temps(const std::vector<Eigen::VectorXd>& logit_sequence,
                                                   std::span<const double> taus) {
  if (taus.size() != logit_sequence.size())
    throw ValidationError("per-token temperatures: expected " + std::to_string(logit_sequence.size()) +
                          " temperatures, got " + std::to_string(taus.size()));
  std::vector<Eigen::VectorXd> out;
  out.reserve(logit_sequence.size());
  for (std::size_t t = 0; t < taus.size(); ++t) out.push_back(apply_temperature(logit_sequence[t], taus[t]));
  return out;
}

void LossSpec::validate() const {
  if (kind == LossKind::ss) {
    if (!ss_alpha || *ss_alpha < 0.0 || *ss_alpha > 1.0)
      throw ValidationError("selective smoothing needs ss_alpha in [0, 1]");
  } else if (ss_alpha) {
    throw ValidationError("ss_alpha is only meaningful for the selective smoothing loss");
  }
}

namespace {

Eigen::Index argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

void check_target(Eigen::Index size, int y) {
  if (y < 0 || y >= size) throw ValidationError("target index out of range");
}

}  // namespace

double nll_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int y) {
  check_target(probs.size(), y);
  if (probs(y) <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(probs(y));
}

double ss_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int y, double ss_alpha) {
  check_target(probs.size(), y);
  if (ss_alpha < 0.0 || ss_alpha > 1.0) throw ValidationError("ss_alpha must lie in [0, 1]");
  if (argmax_lowest(probs) == y) {
    if (ss_alpha == 1.0) return 0.0;
    return (1.0 - ss_alpha) * nll_loss(probs, y);
  }
  if (ss_alpha == 0.0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (probs(j) <= 0.0) return std::numeric_limits<double>::infinity();
    sum -= std::log(probs(j));
  }
  return ss_alpha / static_cast<double>(probs.size()) * sum;
}

TokenLoss token_loss_and_grad(const Eigen::Ref<const Eigen::VectorXd>& u, int y, const LossSpec& loss) {
  check_target(u.size(), y);
  const Eigen::VectorXd logp = log_softmax(u);
  const Eigen::VectorXd p = logp.unaryExpr(ScalarExp{});
  TokenLoss out;
  out.grad = p;
  const bool smoothing = loss.kind == LossKind::ss;
  const double a = smoothing ? loss.ss_alpha.value_or(0.0) : 0.0;
  if (!smoothing || argmax_lowest(u) == y) {
    const double scale = smoothing ? 1.0 - a : 1.0;
    out.loss = -scale * logp(y);
    out.grad(y) -= 1.0;
    out.grad *= scale;
  } else {
    const double V = static_cast<double>(u.size());
    out.loss = -a / V * logp.sum();
    out.grad = (a * (p.array() - 1.0 / V)).matrix();
  }
  return out;
}

double tau_gradient(const Eigen::Ref<const Eigen::VectorXd>& logits, int y, double tau) {
  check_target(logits.size(), y);
  if (!(tau > 0)) throw ValidationError("temperature must be > 0");
  const Eigen::VectorXd p = apply_temperature(logits, tau);
  return (logits(y) - p.dot(logits)) / (tau * tau);
}

PlattGradient platt_gradient(const Eigen::Ref<const Eigen::VectorXd>& logits, int y, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& b, const LossSpec& loss) {
  if (w.size() != logits.size() || b.size() != logits.size())
    throw ValidationError("diagonal Platt parameters must match the logit dimension");
  const Eigen::VectorXd u = w.cwiseProduct(logits) + b;
  TokenLoss tl = token_loss_and_grad(u, y, loss);
  return PlattGradient{tl.grad.cwiseProduct(logits), tl.grad, tl.loss};
}

const std::vector<double>& PerTokenTemperatures::lookup(const std::string& prompt_id, std::size_t sample) const {
  auto it = taus.find(prompt_id);
  if (it != taus.end()) {
    auto jt = it->second.find(sample);
    if (jt != it->second.end()) return jt->second;
  }
  throw ValidationError("no per-token temperatures for " + prompt_id + " sample " + std::to_string(sample));
}

std::string method_name(const CalibrationParams& p) {
  struct Visitor {
    std::string operator()(const ScalarTemperature&) const { return "ts"; }
    std::string operator()(const DiagonalAffine&) const { return "platt"; }
    std::string operator()(const PerTokenTemperatures&) const { return "per_token"; }
  };
  return std::visit(Visitor{}, p);
}

OptimConfig OptimConfig::temperature_defaults() { return OptimConfig{}; }

OptimConfig OptimConfig::platt_defaults() {
  OptimConfig c;
  c.learning_rate = 1e-5;
  c.grad_clip_norm = 1.0;
  return c;
}

void OptimConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ValidationError("warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (grad_clip_norm && !(*grad_clip_norm > 0)) throw ValidationError("grad_clip_norm must be > 0");
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (!(initial_tau > 0)) throw ValidationError("initial_tau must be > 0");
  loss.validate();
}

double scheduled_learning_rate(const OptimConfig& cfg, long step, long steps_per_epoch) {
  const long total = steps_per_epoch * cfg.epochs;
  const long warmup = static_cast<long>(std::llround(cfg.warmup_fraction * static_cast<double>(steps_per_epoch)));
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (cfg.schedule == Schedule::constant || total <= warmup) return cfg.learning_rate;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::size_t TokenDataset::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.targets.size();
  return n;
}

TokenDataset make_token_dataset(const std::vector<PromptRecord>& records, bool allow_topk) {
  TokenDataset data;
  for (const auto& r : records) {
    for (std::size_t si = 0; si < r.samples.size(); ++si) {
      const auto& s = r.samples[si];
      TokenSequence seq;
      for (const auto& st : s.steps) {
        if (st.logits) {
          seq.logits.push_back(*st.logits);
          seq.targets.push_back(st.token_id);
        } else if (st.topk && allow_topk) {
          const auto& tk = *st.topk;
          Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(tk.values.data(), static_cast<Eigen::Index>(tk.values.size()));
          auto it = std::find(tk.ids.begin(), tk.ids.end(), st.token_id);
          int target;
          if (it != tk.ids.end()) {
            target = static_cast<int>(it - tk.ids.begin());
          } else {
            // Target outside the stored support: recover its logit up to the
            // unknown tail mass from the stored log-probability.
            z.conservativeResize(z.size() + 1);
            z(z.size() - 1) = st.logprob + logsumexp(z.head(z.size() - 1));
            target = static_cast<int>(z.size() - 1);
          }
          seq.logits.push_back(std::move(z));
          seq.targets.push_back(target);
          data.truncated = true;
        } else {
          throw ValidationError("no usable logits for " + r.prompt_id + " sample " + std::to_string(si));
        }
      }
      data.sequences.push_back(std::move(seq));
    }
  }
  return data;
}

namespace {

class Optimizer {
 public:
  Optimizer(const OptimConfig& cfg, Eigen::Index dim)
      : cfg_(cfg), m_(Eigen::VectorXd::Zero(dim)), v_(Eigen::VectorXd::Zero(dim)) {}

  void step(Eigen::VectorXd& theta, Eigen::VectorXd grad, double lr) {
    if (cfg_.grad_clip_norm) {
      const double norm = grad.norm();
      if (norm > *cfg_.grad_clip_norm) grad *= *cfg_.grad_clip_norm / norm;
    }
    if (cfg_.weight_decay > 0.0) theta *= 1.0 - lr * cfg_.weight_decay;
    if (cfg_.algorithm == Algorithm::sgd) {
      theta -= lr * grad;
      return;
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t_;
    m_ = beta1 * m_ + (1.0 - beta1) * grad;
    v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    theta.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

 private:
  const OptimConfig& cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

// Shared epoch/batch loop. `batch_grad` accumulates the summed loss and
// gradient over a batch's tokens and returns the token count.
template <typename BatchGrad, typename EpochLoss>
long run_optimizer(const TokenDataset& data, const OptimConfig& cfg, Eigen::VectorXd& theta, BatchGrad&& batch_grad,
                   EpochLoss&& epoch_loss, std::vector<double>& trace) {
  const std::size_t n = data.sequences.size();
  const long steps_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);
  Optimizer opt(cfg, theta.size());
  trace.push_back(epoch_loss(theta));
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      double loss = 0.0;
      std::size_t tokens = 0;
      for (std::size_t q = start; q < end; ++q) tokens += batch_grad(data.sequences[order[q]], theta, grad, loss);
      if (tokens == 0) continue;
      loss /= static_cast<double>(tokens);
      grad /= static_cast<double>(tokens);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw DivergenceError("calibration loss diverged at step " + std::to_string(step), step);
      opt.step(theta, grad, scheduled_learning_rate(cfg, step, steps_per_epoch));
      ++step;
    }
    trace.push_back(epoch_loss(theta));
  }
  return step;
}

}  // namespace

double dataset_loss(const TokenDataset& data, const CalibrationParams& params, const LossSpec& loss) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& seq : data.sequences) {
    for (std::size_t t = 0; t < seq.targets.size(); ++t) {
      const auto& z = seq.logits[t];
      Eigen::VectorXd u;
      if (const auto* s = std::get_if<ScalarTemperature>(&params)) {
        u = z / s->tau;
      } else if (const auto* d = std::get_if<DiagonalAffine>(&params)) {
        u = d->w.cwiseProduct(z) + d->b;
      } else {
        throw ValidationError("dataset_loss supports scalar and diagonal parameters only");
      }
      sum += token_loss_and_grad(u, seq.targets[t], loss).loss;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

FitResult fit_temperature(const TokenDataset& train, const OptimConfig& cfg) {
  cfg.validate();
  if (train.token_count() == 0) throw ValidationError("temperature fitting needs at least one token");
  Eigen::VectorXd theta(1);
  theta(0) = std::log(cfg.initial_tau);
  FitResult result;
  auto batch_grad = [&](const TokenSequence& seq, const Eigen::VectorXd& th, Eigen::VectorXd& grad, double& loss) {
    const double tau = std::exp(th(0));
    for (std::size_t t = 0; t < seq.targets.size(); ++t) {
      const Eigen::VectorXd u = seq.logits[t] / tau;
      const TokenLoss tl = token_loss_and_grad(u, seq.targets[t], cfg.loss);
      loss += tl.loss;
      // u = z exp(-theta)  =>  d loss / d theta = -grad · u
      grad(0) -= tl.grad.dot(u);
    }
    return seq.targets.size();
  };
  auto epoch_loss = [&](const Eigen::VectorXd& th) {
    return dataset_loss(train, ScalarTemperature{std::exp(th(0))}, cfg.loss);
  };
  result.steps = run_optimizer(train, cfg, theta, batch_grad, epoch_loss, result.trace);
  result.params = ScalarTemperature{std::exp(theta(0))};
  result.approximate = train.truncated;
  return result;
}

FitResult fit_platt(const TokenDataset& train, const OptimConfig& cfg) {
  cfg.validate();
  if (train.truncated) throw ValidationError("diagonal Platt scaling requires dense logits; top-K input is unsupported");
  if (train.token_count() == 0) throw ValidationError("Platt fitting needs at least one token");
  Eigen::Index V = -1;
  for (const auto& seq : train.sequences)
    for (const auto& z : seq.logits) {
      if (V >= 0 && z.size() != V) throw ValidationError("Platt fitting needs a fixed vocabulary size");
      V = z.size();
    }
  Eigen::VectorXd theta(2 * V);
  theta.head(V).setOnes();
  theta.tail(V).setZero();
  auto batch_grad = [&](const TokenSequence& seq, const Eigen::VectorXd& th, Eigen::VectorXd& grad, double& loss) {
    const Eigen::VectorXd w = th.head(V), b = th.tail(V);
    for (std::size_t t = 0; t < seq.targets.size(); ++t) {
      const PlattGradient g = platt_gradient(seq.logits[t], seq.targets[t], w, b, cfg.loss);
      loss += g.loss;
      grad.head(V) += g.w;
      grad.tail(V) += g.b;
    }
    return seq.targets.size();
  };
  auto epoch_loss = [&](const Eigen::VectorXd& th) {
    return dataset_loss(train, DiagonalAffine{th.head(V), th.tail(V)}, cfg.loss);
  };
  FitResult result;
  result.steps = run_optimizer(train, cfg, theta, batch_grad, epoch_loss, result.trace);
  result.params = DiagonalAffine{theta.head(V), theta.tail(V)};
  return result;
}

Selection sweep_and_select(const std::vector<Candidate>& candidates,
                           const std::function<double(const Candidate&)>& validation_brier) {
  if (candidates.empty()) throw ValidationError("hyperparameter sweep needs at least one candidate");
  Selection sel;
  for (const auto& c : candidates) sel.brier.push_back(validation_brier(c));
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double bi = sel.brier[i], bb = sel.brier[sel.index];
    if (bi < bb || (bi == bb && candidates[i].config.learning_rate < candidates[sel.index].config.learning_rate))
      sel.index = i;
  }
  return sel;
}

std::vector<LossSpec> loss_grid() {
  std::vector<LossSpec> g{LossSpec::nll()};
  for (double a : {0.1, 0.25, 0.5, 0.75}) g.push_back(LossSpec::selective_smoothing(a));
  return g;
}

std::vector<OptimConfig> temperature_grid(const OptimConfig& base) {
  std::vector<OptimConfig> out;
  for (const auto& loss : loss_grid()) {
    OptimConfig c = base;
    c.loss = loss;
    out.push_back(c);
  }
  return out;
}

std::vector<OptimConfig> platt_grid(const OptimConfig& base) {
  std::vector<OptimConfig> out;
  for (double wd : {0.0, 0.01}) {
    for (auto c : temperature_grid(base)) {
      c.weight_decay = wd;
      out.push_back(c);
    }
  }
  return out;
}

const std::vector<double>& default_measure_alphas() {
  static const std::vector<double> alphas = {0.5, 0.75, 1.25};
  return alphas;
}

namespace {

double step_logprob_scalar(const TokenStep& st, double tau, const std::string& where) {
  if (st.logits) return log_softmax((*st.logits / tau).eval())(st.token_id);
  if (st.topk) {
    // Identity temperature: the stored value is exact, the truncated softmax is not.
    if (tau == 1.0) return st.logprob;
    const auto& tk = *st.topk;
    Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(tk.values.data(), static_cast<Eigen::Index>(tk.values.size()));
    auto it = std::find(tk.ids.begin(), tk.ids.end(), st.token_id);
    Eigen::Index target;
    if (it != tk.ids.end()) {
      target = it - tk.ids.begin();
    } else {
      z.conservativeResize(z.size() + 1);
      z(z.size() - 1) = st.logprob + logsumexp(z.head(z.size() - 1));
      target = z.size() - 1;
    }
    return log_softmax((z / tau).eval())(target);
  }
  if (tau == 1.0) return st.logprob;
  throw ValidationError("missing logits for " + where);
}

}  // namespace

Eigen::VectorXd recompute_logliks(const PromptRecord& record, const CalibrationParams& params) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(record.m()));
  for (std::size_t si = 0; si < record.m(); ++si) {
    const auto& s = record.samples[si];
    if (s.steps.empty()) throw ValidationError("zero-length sample in " + record.prompt_id);
    const std::string where = record.prompt_id + " sample " + std::to_string(si);
    double sum = 0.0;
    if (const auto* sc = std::get_if<ScalarTemperature>(&params)) {
      if (!(sc->tau > 0)) throw ValidationError("temperature must be > 0");
      for (const auto& st : s.steps) sum += step_logprob_scalar(st, sc->tau, where);
    } else if (const auto* d = std::get_if<DiagonalAffine>(&params)) {
      for (const auto& st : s.steps) {
        if (!st.logits) throw ValidationError("diagonal Platt needs dense logits: " + where);
        sum += log_softmax((d->w.cwiseProduct(*st.logits) + d->b).eval())(st.token_id);
      }
    } else {
      const auto& taus = std::get<PerTokenTemperatures>(params).lookup(record.prompt_id, si);
      if (taus.size() != s.steps.size())
        throw ValidationError("per-token temperature count differs from step count: " + where);
      for (std::size_t t = 0; t < s.steps.size(); ++t) {
        if (!(taus[t] > 0)) throw ValidationError("per-token temperatures must be > 0: " + where);
        sum += step_logprob_scalar(s.steps[t], taus[t], where);
      }
    }
    out(static_cast<Eigen::Index>(si)) = sum / static_cast<double>(s.steps.size());
  }
  return out;
}

namespace {

json loss_to_json(const LossSpec& l) {
  return json{{"kind", l.kind == LossKind::nll ? "nll" : "ss"},
              {"ss_alpha", l.ss_alpha ? json(*l.ss_alpha) : json(nullptr)}};
}

LossSpec loss_from_json(const json& j) {
  LossSpec l;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "nll") {
    l.kind = LossKind::nll;
  } else if (kind == "ss") {
    l.kind = LossKind::ss;
  } else {
    throw ValidationError("unknown loss kind '" + kind + "'");
  }
  if (auto it = j.find("ss_alpha"); it != j.end() && !it->is_null()) l.ss_alpha = it->get<double>();
  l.validate();
  return l;
}

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json optim_to_json(const OptimConfig& c) {
  return json{{"algorithm", c.algorithm == Algorithm::adamw ? "adamw" : "sgd"},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"warmup_fraction", c.warmup_fraction},
              {"schedule", c.schedule == Schedule::cosine ? "cosine" : "constant"},
              {"weight_decay", c.weight_decay},
              {"grad_clip_norm", c.grad_clip_norm ? json(*c.grad_clip_norm) : json(nullptr)},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"initial_tau", c.initial_tau},
              {"loss", loss_to_json(c.loss)}};
}

OptimConfig optim_from_json(const json& j, OptimConfig c) {
  if (auto it = j.find("algorithm"); it != j.end()) {
    const auto a = it->get<std::string>();
    if (a == "adamw") {
      c.algorithm = Algorithm::adamw;
    } else if (a == "sgd") {
      c.algorithm = Algorithm::sgd;
    } else {
      throw ValidationError("unknown optimizer '" + a + "'");
    }
  }
  if (auto it = j.find("schedule"); it != j.end()) {
    const auto s = it->get<std::string>();
    if (s == "cosine") {
      c.schedule = Schedule::cosine;
    } else if (s == "constant") {
      c.schedule = Schedule::constant;
    } else {
      throw ValidationError("unknown schedule '" + s + "'");
    }
  }
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (auto it = j.find("grad_clip_norm"); it != j.end())
    c.grad_clip_norm = it->is_null() ? std::nullopt : std::optional<double>(it->get<double>());
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.initial_tau = j.value("initial_tau", c.initial_tau);
  if (auto it = j.find("loss"); it != j.end()) c.loss = loss_from_json(*it);
  c.validate();
  return c;
}

json params_to_json(const ParamsFile& f) {
  json j;
  j["method"] = method_name(f.params);
  j["tau"] = nullptr;
  j["w"] = nullptr;
  j["b"] = nullptr;
  j["per_token"] = nullptr;
  if (const auto* s = std::get_if<ScalarTemperature>(&f.params)) {
    j["tau"] = s->tau;
  } else if (const auto* d = std::get_if<DiagonalAffine>(&f.params)) {
    j["w"] = vec_json(d->w);
    j["b"] = vec_json(d->b);
  } else {
    json pt = json::object();
    for (const auto& [pid, samples] : std::get<PerTokenTemperatures>(f.params).taus)
      for (const auto& [idx, taus] : samples) pt[pid][std::to_string(idx)] = taus;
    j["per_token"] = std::move(pt);
  }
  j["loss"] = loss_to_json(f.loss);
  j["optim"] = optim_to_json(f.optim);
  j["trace"] = f.trace;
  return j;
}

ParamsFile params_from_json(const json& j) {
  ParamsFile f;
  const auto method = j.at("method").get<std::string>();
  if (method == "ts") {
    const double tau = j.at("tau").get<double>();
    if (!(tau > 0)) throw ValidationError("params file: tau must be > 0");
    f.params = ScalarTemperature{tau};
  } else if (method == "platt") {
    DiagonalAffine d{json_vec(j.at("w")), json_vec(j.at("b"))};
    if (d.w.size() != d.b.size()) throw ValidationError("params file: w and b lengths differ");
    f.params = std::move(d);
  } else if (method == "per_token") {
    PerTokenTemperatures pt;
    for (const auto& [pid, samples] : j.at("per_token").items()) {
      for (const auto& [idx, taus] : samples.items()) {
        auto v = taus.get<std::vector<double>>();
        for (double t : v)
          if (!(t > 0)) throw ValidationError("params file: per-token temperatures must be > 0");
        pt.taus[pid][static_cast<std::size_t>(std::stoul(idx))] = std::move(v);
      }
    }
    f.params = std::move(pt);
  } else {
    throw ValidationError("params file: unknown method '" + method + "'");
  }
  if (auto it = j.find("loss"); it != j.end() && !it->is_null()) f.loss = loss_from_json(*it);
  if (auto it = j.find("optim"); it != j.end() && !it->is_null()) f.optim = optim_from_json(*it, OptimConfig{});
  if (auto it = j.find("trace"); it != j.end() && !it->is_null()) f.trace = it->get<std::vector<double>>();
  return f;
}

void write_params_file(const std::filesystem::path& path, const ParamsFile& f) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write params file " + path.string());
  out << params_to_json(f).dump(2) << '\n';
}

ParamsFile read_params_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read params file " + path.string());
  try {
    return params_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("params file " + path.string() + ": " + e.what());
  }
}

}  // namespace semcal
