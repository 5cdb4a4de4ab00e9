#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "semcal/error.hpp"
#include "semcal/measures.hpp"
#include "semcal/records.hpp"

namespace semcal {

// ---------------------------------------------------------------------------
// Softmax kernels

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  const Scalar mx = z.maxCoeff();
  VectorX<Scalar> shifted = (z.array() - mx).matrix();
  const Scalar lse = std::log(shifted.array().exp().sum());
  return (shifted.array() - lse).matrix();
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> e = (z.array() - z.maxCoeff()).matrix().unaryExpr(ScalarExp{});
  return e / e.sum();
}

// softmax(z / tau).
template <typename Derived>
VectorX<typename Derived::Scalar> apply_temperature(const Eigen::MatrixBase<Derived>& logits,
                                                    typename Derived::Scalar tau) {
  if (!(tau > 0)) throw ValidationError("temperature must be > 0");
  return softmax((logits / tau).eval());
}

// softmax(w ⊙ z + b).
template <typename DerivedZ, typename DerivedW, typename DerivedB>
VectorX<typename DerivedZ::Scalar> apply_platt(const Eigen::MatrixBase<DerivedZ>& logits,
                                               const Eigen::MatrixBase<DerivedW>& w,
                                               const Eigen::MatrixBase<DerivedB>& b) {
  if (w.size() != logits.size() || b.size() != logits.size())
    throw ValidationError("diagonal Platt parameters must match the logit dimension");
  return softmax((w.cwiseProduct(logits) + b).eval());
}

// Position-wise temperature: step t is divided by taus[t].
std::vector<Eigen::VectorXd> apply_per_token_temps(const std::vector<Eigen::VectorXd>& logit_sequence,
                                                   std::span<const double> taus);

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { nll, ss };

struct LossSpec {
  LossKind kind = LossKind::nll;
  std::optional<double> ss_alpha;  // present iff kind == ss

  static LossSpec nll() { return {}; }
  static LossSpec selective_smoothing(double alpha) { return {LossKind::ss, alpha}; }
  void validate() const;
};

// -log probs[y]. Returns +infinity when probs[y] == 0.
double nll_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int y);

// Selective smoothing: (1-a)·NLL when argmax(probs) == y, else the mean
// negative log-probability over the vocabulary scaled by a. Argmax ties go to
// the lowest index.
double ss_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int y, double ss_alpha);

struct TokenLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;  // d loss / d (pre-softmax logits)
};

// Loss and its gradient with respect to the transformed logits u, where the
// token distribution is softmax(u).
TokenLoss token_loss_and_grad(const Eigen::Ref<const Eigen::VectorXd>& u, int y, const LossSpec& loss);

// d NLL / d tau for softmax(z / tau): (z_y - E_p[z]) / tau^2.
double tau_gradient(const Eigen::Ref<const Eigen::VectorXd>& logits, int y, double tau);

struct PlattGradient {
  Eigen::VectorXd w;
  Eigen::VectorXd b;
  double loss = 0.0;
};

// Loss and diagonal-Platt gradients for one token.
PlattGradient platt_gradient(const Eigen::Ref<const Eigen::VectorXd>& logits, int y, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& b, const LossSpec& loss = LossSpec::nll());

// ---------------------------------------------------------------------------
// Parameters

struct ScalarTemperature {
  double tau = 1.0;
};

struct DiagonalAffine {
  Eigen::VectorXd w;
  Eigen::VectorXd b;

  static DiagonalAffine identity(Eigen::Index vocab) {
    return {Eigen::VectorXd::Ones(vocab), Eigen::VectorXd::Zero(vocab)};
  }
};

// Externally produced per-step temperatures, keyed by prompt and sample index.
struct PerTokenTemperatures {
  std::map<std::string, std::map<std::size_t, std::vector<double>>> taus;

  const std::vector<double>& lookup(const std::string& prompt_id, std::size_t sample) const;
};

using CalibrationParams = std::variant<ScalarTemperature, DiagonalAffine, PerTokenTemperatures>;

std::string method_name(const CalibrationParams& p);  // "ts", "platt", "per_token"

// ---------------------------------------------------------------------------
// Fitting

enum class Algorithm { adamw, sgd };
enum class Schedule { cosine, constant };

struct OptimConfig {
  Algorithm algorithm = Algorithm::adamw;
  double learning_rate = 1e-4;
  int epochs = 2;
  double warmup_fraction = 0.1;  // of the first epoch's steps
  Schedule schedule = Schedule::cosine;
  double weight_decay = 0.0;
  std::optional<double> grad_clip_norm;
  std::size_t batch_size = 32;  // sequences
  std::uint64_t seed = 0;
  double initial_tau = 1.0;
  LossSpec loss;

  // Scalar temperature scaling defaults: AdamW, lr 1e-4, 2 epochs, cosine
  // schedule with 10% linear warmup, initial tau 1.
  static OptimConfig temperature_defaults();
  // Diagonal Platt defaults: as above with lr 1e-5 and gradient clipping at 1.
  static OptimConfig platt_defaults();

  void validate() const;
};

// Learning rate at a global step: linear warmup over the first
// warmup_fraction of epoch one, then cosine annealing to zero (or constant).
double scheduled_learning_rate(const OptimConfig& cfg, long step, long steps_per_epoch);

// One generated sequence prepared for fitting: per-step logits and the
// realized token index into them.
struct TokenSequence {
  std::vector<Eigen::VectorXd> logits;
  std::vector<int> targets;
};

struct TokenDataset {
  std::vector<TokenSequence> sequences;
  bool truncated = false;  // top-K approximation in use
  std::size_t token_count() const;
};

// Extracts every sample of every record. Dense logits are used as is; with
// allow_topk, steps that only carry top-K logits are reduced to the top-K
// support (plus the target) and the dataset is flagged as truncated.
TokenDataset make_token_dataset(const std::vector<PromptRecord>& records, bool allow_topk = true);

struct FitResult {
  CalibrationParams params;
  std::vector<double> trace;  // mean training loss at initialization, then after each epoch
  long steps = 0;
  bool approximate = false;
};

// Gradient descent on log tau minimizing the batch-mean per-token loss.
FitResult fit_temperature(const TokenDataset& train, const OptimConfig& cfg);

// Diagonal Platt scaling from w = 1, b = 0. Requires dense logits.
FitResult fit_platt(const TokenDataset& train, const OptimConfig& cfg);

// Mean per-token loss of a dataset under parameters (scalar or diagonal).
double dataset_loss(const TokenDataset& data, const CalibrationParams& params, const LossSpec& loss);

// ---------------------------------------------------------------------------
// Hyperparameter selection

struct Candidate {
  OptimConfig config;
  CalibrationParams params;
  std::optional<double> measure_alpha;  // T-SC / G-SC alpha paired with this candidate
};

struct Selection {
  std::size_t index = 0;
  std::vector<double> brier;  // per candidate
};

// Picks the candidate with the lowest validation Brier score; ties go to the
// lower learning rate, then to the earlier candidate.
Selection sweep_and_select(const std::vector<Candidate>& candidates,
                           const std::function<double(const Candidate&)>& validation_brier);

// The swept loss settings: NLL plus selective smoothing at
// alpha in {0.1, 0.25, 0.5, 0.75}.
std::vector<LossSpec> loss_grid();
std::vector<OptimConfig> temperature_grid(const OptimConfig& base);
std::vector<OptimConfig> platt_grid(const OptimConfig& base);  // x weight decay {0, 0.01}
const std::vector<double>& default_measure_alphas();            // {0.5, 0.75, 1.25}

// ---------------------------------------------------------------------------
// Bridging into the semantic measures

// Length-normalized log-likelihood of each sample with token probabilities
// recomputed under `params`. Dense logits give exact values; top-K logits
// fall back to the truncated softmax. Without logits, only the identity
// temperature is allowed and the stored log-probabilities are used.
Eigen::VectorXd recompute_logliks(const PromptRecord& record, const CalibrationParams& params);

// ---------------------------------------------------------------------------
// Params file

struct ParamsFile {
  CalibrationParams params;
  LossSpec loss;
  OptimConfig optim;
  std::vector<double> trace;
};

nlohmann::json params_to_json(const ParamsFile& f);
ParamsFile params_from_json(const nlohmann::json& j);
void write_params_file(const std::filesystem::path& path, const ParamsFile& f);
ParamsFile read_params_file(const std::filesystem::path& path);

nlohmann::json optim_to_json(const OptimConfig& c);
OptimConfig optim_from_json(const nlohmann::json& j, OptimConfig base);

}  // namespace semcal
