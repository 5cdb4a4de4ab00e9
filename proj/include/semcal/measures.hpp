#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "semcal/entailment.hpp"
#include "semcal/error.hpp"
#include "semcal/records.hpp"

namespace semcal {

// The seven semantic confidence measures.
enum class Measure { esc, lsc, mlsc, bsc, tsc, icsc, gsc };

std::string to_string(Measure m);          // "E-SC", "L-SC", ...
Measure measure_from_string(const std::string& s);  // throws ValidationError
bool measure_uses_alpha(Measure m);
const std::vector<Measure>& all_measures();

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Elementwise std::exp. Eigen's packet exp can differ from the scalar one in
// the last bit, so equal inputs in different lanes could come out unequal.
struct ScalarExp {
  template <typename Scalar>
  Scalar operator()(Scalar x) const {
    return std::exp(x);
  }
};

// Probability vector over a prompt's clusters, held in log domain.
template <typename Scalar = double>
struct SemanticDistribution {
  Measure measure = Measure::esc;
  VectorX<Scalar> log_probs;
  std::optional<Scalar> alpha;

  Eigen::Index k() const { return log_probs.size(); }
  VectorX<Scalar> probs() const { return log_probs.unaryExpr(ScalarExp{}); }
};

using SemanticDistributiond = SemanticDistribution<double>;

// log(sum(exp(x))) with max subtraction. -inf for an all -inf input.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar mx = x.maxCoeff();
  if (!std::isfinite(static_cast<double>(mx))) return mx;
  return mx + std::log((x.array() - mx).exp().sum());
}

// Mean per-token log-probability of the stored tokens. Throws on a zero-length sample.
double length_normalized_loglik(const SampleGeneration& sample);

// Length-normalized log-likelihood of every sample of a record, in sample order.
Eigen::VectorXd stored_logliks(const PromptRecord& record);

namespace detail {

template <typename Scalar>
SemanticDistribution<Scalar> normalize(Measure m, VectorX<Scalar> scores, std::optional<Scalar> alpha = {}) {
  const Scalar lse = logsumexp(scores);
  SemanticDistribution<Scalar> d;
  d.measure = m;
  d.log_probs = (scores.array() - lse).matrix();
  d.alpha = alpha;
  return d;
}

// Per-cluster sums over members: log s(C) = logsumexp of member logliks,
// and the plain sum of member logliks (log of the cluster likelihood product).
template <typename Scalar>
struct ClusterAggregates {
  VectorX<Scalar> log_size;
  VectorX<Scalar> log_sum_lik;  // log s(C_i)
  VectorX<Scalar> sum_loglik;   // sum of member logliks
  VectorX<Scalar> inner_entropy;
};

template <typename Scalar>
ClusterAggregates<Scalar> aggregate(const ClusterSet& clusters, const VectorX<Scalar>& logliks, bool need_entropy) {
  if (static_cast<std::size_t>(logliks.size()) != clusters.m())
    throw ValidationError("one length-normalized log-likelihood per sample is required");
  if (clusters.k == 0) throw ValidationError("semantic measures need at least one cluster");
  const auto members = clusters.members();
  const Eigen::Index k = static_cast<Eigen::Index>(clusters.k);
  ClusterAggregates<Scalar> a;
  a.log_size.resize(k);
  a.log_sum_lik.resize(k);
  a.sum_loglik.resize(k);
  if (need_entropy) a.inner_entropy.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& mem = members[static_cast<std::size_t>(c)];
    VectorX<Scalar> l(static_cast<Eigen::Index>(mem.size()));
    for (std::size_t q = 0; q < mem.size(); ++q) l(static_cast<Eigen::Index>(q)) = logliks(static_cast<Eigen::Index>(mem[q]));
    a.log_size(c) = std::log(static_cast<Scalar>(mem.size()));
    a.log_sum_lik(c) = logsumexp(l);
    a.sum_loglik(c) = l.sum();
    if (need_entropy) {
      // Entropy of the within-cluster distribution p(y_j) ∝ exp(loglik_j).
      const VectorX<Scalar> logp = (l.array() - a.log_sum_lik(c)).matrix();
      Scalar h = 0;
      for (Eigen::Index q = 0; q < logp.size(); ++q) {
        if (std::isfinite(static_cast<double>(logp(q)))) h -= std::exp(logp(q)) * logp(q);
      }
      a.inner_entropy(c) = h;
    }
  }
  return a;
}

template <typename Scalar>
void check_alpha(Scalar alpha) {
  if (!(alpha > Scalar(0)) || !std::isfinite(static_cast<double>(alpha)))
    throw ValidationError("alpha must be a positive finite number");
}

}  // namespace detail

// p_i = |C_i| / m. Ignores likelihoods entirely.
template <typename Scalar = double>
SemanticDistribution<Scalar> esc(const ClusterSet& clusters) {
  if (clusters.k == 0) throw ValidationError("semantic measures need at least one cluster");
  const auto sizes = clusters.sizes();
  VectorX<Scalar> scores(static_cast<Eigen::Index>(sizes.size()));
  const Scalar log_m = std::log(static_cast<Scalar>(clusters.m()));
  for (std::size_t c = 0; c < sizes.size(); ++c)
    scores(static_cast<Eigen::Index>(c)) = std::log(static_cast<Scalar>(sizes[c])) - log_m;
  return detail::normalize<Scalar>(Measure::esc, std::move(scores));
}

// p_i ∝ sum over members of exp(loglik).
template <typename Scalar>
SemanticDistribution<Scalar> lsc(const ClusterSet& clusters, const VectorX<Scalar>& logliks) {
  auto a = detail::aggregate(clusters, logliks, false);
  return detail::normalize<Scalar>(Measure::lsc, std::move(a.log_sum_lik));
}

// p_i ∝ mean over members of exp(loglik).
template <typename Scalar>
SemanticDistribution<Scalar> mlsc(const ClusterSet& clusters, const VectorX<Scalar>& logliks) {
  auto a = detail::aggregate(clusters, logliks, false);
  return detail::normalize<Scalar>(Measure::mlsc, (a.log_sum_lik - a.log_size).eval());
}

// Posterior with the E-SC prior and the product of member likelihoods.
template <typename Scalar>
SemanticDistribution<Scalar> bsc(const ClusterSet& clusters, const VectorX<Scalar>& logliks) {
  auto a = detail::aggregate(clusters, logliks, false);
  const Scalar log_m = std::log(static_cast<Scalar>(clusters.m()));
  VectorX<Scalar> scores = (a.sum_loglik.array() + (a.log_size.array() - log_m)).matrix();
  return detail::normalize<Scalar>(Measure::bsc, std::move(scores));
}

// Tempered B-SC posterior: (likelihood * prior)^(1/alpha).
template <typename Scalar>
SemanticDistribution<Scalar> tsc(const ClusterSet& clusters, const VectorX<Scalar>& logliks, Scalar alpha) {
  detail::check_alpha(alpha);
  auto a = detail::aggregate(clusters, logliks, false);
  const Scalar log_m = std::log(static_cast<Scalar>(clusters.m()));
  VectorX<Scalar> scores = ((a.sum_loglik.array() + (a.log_size.array() - log_m)) / alpha).matrix();
  return detail::normalize<Scalar>(Measure::tsc, std::move(scores), alpha);
}

// L-SC score penalized by exp(-H) of the within-cluster likelihood distribution.
template <typename Scalar>
SemanticDistribution<Scalar> icsc(const ClusterSet& clusters, const VectorX<Scalar>& logliks) {
  auto a = detail::aggregate(clusters, logliks, true);
  return detail::normalize<Scalar>(Measure::icsc, (a.log_sum_lik - a.inner_entropy).eval());
}

// Gibbs posterior: prior * exp(-alpha * energy), energy = -sum of member logliks.
template <typename Scalar>
SemanticDistribution<Scalar> gsc(const ClusterSet& clusters, const VectorX<Scalar>& logliks, Scalar alpha) {
  detail::check_alpha(alpha);
  auto a = detail::aggregate(clusters, logliks, false);
  const Scalar log_m = std::log(static_cast<Scalar>(clusters.m()));
  VectorX<Scalar> scores = ((a.log_size.array() - log_m) + alpha * a.sum_loglik.array()).matrix();
  return detail::normalize<Scalar>(Measure::gsc, std::move(scores), alpha);
}

// Dispatch by measure id. alpha is required for T-SC and G-SC and ignored otherwise.
template <typename Scalar>
SemanticDistribution<Scalar> compute_measure(Measure m, const ClusterSet& clusters, const VectorX<Scalar>& logliks,
                                             std::optional<Scalar> alpha = {}) {
  switch (m) {
    case Measure::esc:
      return esc<Scalar>(clusters);
    case Measure::lsc:
      return lsc(clusters, logliks);
    case Measure::mlsc:
      return mlsc(clusters, logliks);
    case Measure::bsc:
      return bsc(clusters, logliks);
    case Measure::tsc:
      if (!alpha) throw ValidationError("T-SC requires alpha");
      return tsc(clusters, logliks, *alpha);
    case Measure::icsc:
      return icsc(clusters, logliks);
    case Measure::gsc:
      if (!alpha) throw ValidationError("G-SC requires alpha");
      return gsc(clusters, logliks, *alpha);
  }
  throw ValidationError("unknown measure");
}

// Shannon entropy in nats, 0 log 0 = 0.
template <typename Scalar>
Scalar semantic_entropy(const SemanticDistribution<Scalar>& d) {
  Scalar h = 0;
  for (Eigen::Index i = 0; i < d.log_probs.size(); ++i) {
    const Scalar lp = d.log_probs(i);
    if (std::isfinite(static_cast<double>(lp))) h -= std::exp(lp) * lp;
  }
  return h;
}

// Index of the most probable cluster; ties go to the lowest id.
template <typename Scalar>
std::size_t top_cluster(const SemanticDistribution<Scalar>& d) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < d.log_probs.size(); ++i)
    if (d.log_probs(i) > d.log_probs(best)) best = i;
  return static_cast<std::size_t>(best);
}

// One line of the measure output file.
nlohmann::json measure_record_json(const std::string& prompt_id, const SemanticDistributiond& d);

}  // namespace semcal
