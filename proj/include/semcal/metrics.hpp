#pragma once

#include <span>
#include <string>
#include <vector>

#include "semcal/error.hpp"

namespace semcal {

struct ScoredExample {
  double confidence = 0.0;  // in [0, 1]
  bool correct = false;
  std::string prompt_id;
};

enum class BinScheme { equal_width, equal_mass };

struct ReliabilityBin {
  std::size_t count = 0;
  double confidence = 0.0;  // mean confidence in the bin (0 when empty)
  double accuracy = 0.0;    // mean correctness in the bin (0 when empty)
};

// Equal-width bins over [0, 1], last bin closed on the right; or equal-mass
// bins over the (confidence, prompt_id)-sorted examples, with the first
// n mod M bins one example larger.
std::vector<ReliabilityBin> reliability_bins(std::span<const ScoredExample> xs, std::size_t bins, BinScheme scheme);

double ece(std::span<const ScoredExample> xs, std::size_t bins = 10);
double ace(std::span<const ScoredExample> xs, std::size_t bins = 10);

// P(conf_pos > conf_neg) + 0.5·P(tie). Throws UndefinedMetric on single-class input.
double auroc(std::span<const ScoredExample> xs);

double brier(std::span<const ScoredExample> xs);

struct BrierDecomposition {
  double calibration = 0.0;
  double resolution = 0.0;
  double uncertainty = 0.0;
};

// Grouping by exactly equal confidence: brier = calibration - resolution + uncertainty.
BrierDecomposition brier_decomposition(std::span<const ScoredExample> xs);

// Least-squares nondecreasing fit of correctness against confidence.
// Examples with equal confidence are pooled first, so they always receive
// the same fitted value. Output is in input order.
std::vector<double> pav_isotonic(std::span<const ScoredExample> xs);

struct CorpResult {
  double s_p = 0.0;
  double s_ptilde = 0.0;
  double s_r = 0.0;
  double mcb = 0.0;
  double dsc = 0.0;
  double unc = 0.0;
  std::vector<double> recalibrated;
  double reference = 0.0;
};

CorpResult corp(std::span<const ScoredExample> xs);

struct SelectivePoint {
  double rejection = 0.0;
  double accuracy = 0.0;
  std::size_t kept = 0;
};

// For each rejection rate, accuracy over the ceil((1 - rate)·n) most
// confident examples (ties by prompt_id).
std::vector<SelectivePoint> selective_accuracy(std::span<const ScoredExample> xs, std::span<const double> rejection_grid);

std::vector<double> default_rejection_grid();  // 0, 0.1, ..., 0.9

// Throws UndefinedMetric when either side has zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

}  // namespace semcal
