#include "semcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace semcal {

namespace {

void require_nonempty(std::span<const ScoredExample> xs, const char* what) {
  if (xs.empty()) throw ValidationError(std::string(what) + " of an empty set is undefined");
  for (const auto& x : xs)
    if (!(x.confidence >= 0.0 && x.confidence <= 1.0))
      throw ValidationError("confidence " + std::to_string(x.confidence) + " for " + x.prompt_id +
                            " is outside [0, 1]");
}

// Ascending confidence, ties by prompt_id, then input position.
std::vector<std::size_t> ascending_order(std::span<const ScoredExample> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (xs[a].confidence != xs[b].confidence) return xs[a].confidence < xs[b].confidence;
    return xs[a].prompt_id < xs[b].prompt_id;
  });
  return idx;
}

double weighted_gap(const std::vector<ReliabilityBin>& bins, std::size_t n) {
  double total = 0.0;
  for (const auto& b : bins)
    if (b.count) total += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy - b.confidence);
  return total;
}

}  // namespace

std::vector<ReliabilityBin> reliability_bins(std::span<const ScoredExample> xs, std::size_t bins, BinScheme scheme) {
  require_nonempty(xs, "binning");
  if (bins == 0) throw ValidationError("bin count must be >= 1");
  std::vector<ReliabilityBin> out(bins);
  auto add = [&](std::size_t b, const ScoredExample& x) {
    ++out[b].count;
    out[b].confidence += x.confidence;
    out[b].accuracy += x.correct ? 1.0 : 0.0;
  };
  if (scheme == BinScheme::equal_width) {
    for (const auto& x : xs) {
      auto b = static_cast<std::size_t>(std::floor(x.confidence * static_cast<double>(bins)));
      add(std::min(b, bins - 1), x);
    }
  } else {
    const auto order = ascending_order(xs);
    const std::size_t n = xs.size(), base = n / bins, extra = n % bins;
    std::size_t pos = 0;
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t size = base + (b < extra ? 1 : 0);
      for (std::size_t k = 0; k < size; ++k) add(b, xs[order[pos++]]);
    }
  }
  for (auto& b : out) {
    if (!b.count) continue;
    b.confidence /= static_cast<double>(b.count);
    b.accuracy /= static_cast<double>(b.count);
  }
  return out;
}

double ece(std::span<const ScoredExample> xs, std::size_t bins) {
  return weighted_gap(reliability_bins(xs, bins, BinScheme::equal_width), xs.size());
}

double ace(std::span<const ScoredExample> xs, std::size_t bins) {
  return weighted_gap(reliability_bins(xs, bins, BinScheme::equal_mass), xs.size());
}

double auroc(std::span<const ScoredExample> xs) {
  require_nonempty(xs, "AUROC");
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a].confidence < xs[b].confidence; });
  // Mann-Whitney with midranks for ties.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && xs[idx[j]].confidence == xs[idx[i]].confidence) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k)
      if (xs[idx[k]].correct) pos_rank_sum += midrank, ++n_pos;
    i = j;
  }
  const std::size_t n_neg = xs.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("AUROC is undefined when only one class is present");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double brier(std::span<const ScoredExample> xs) {
  require_nonempty(xs, "Brier score");
  double s = 0.0;
  for (const auto& x : xs) {
    const double d = x.confidence - (x.correct ? 1.0 : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(xs.size());
}

BrierDecomposition brier_decomposition(std::span<const ScoredExample> xs) {
  require_nonempty(xs, "Brier decomposition");
  const auto order = ascending_order(xs);
  const double n = static_cast<double>(xs.size());
  double base = 0.0;
  for (const auto& x : xs) base += x.correct ? 1.0 : 0.0;
  base /= n;
  BrierDecomposition d;
  d.uncertainty = base * (1.0 - base);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double hits = 0.0;
    while (j < order.size() && xs[order[j]].confidence == xs[order[i]].confidence) {
      hits += xs[order[j]].correct ? 1.0 : 0.0;
      ++j;
    }
    const double count = static_cast<double>(j - i), freq = hits / count, conf = xs[order[i]].confidence;
    d.calibration += count / n * (conf - freq) * (conf - freq);
    d.resolution += count / n * (freq - base) * (freq - base);
    i = j;
  }
  return d;
}

std::vector<double> pav_isotonic(std::span<const ScoredExample> xs) {
  require_nonempty(xs, "isotonic regression");
  const auto order = ascending_order(xs);
  struct Block {
    double sum;
    double weight;
    std::size_t first, last;  // positions in `order`
  };
  std::vector<Block> stack;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < order.size() && xs[order[j]].confidence == xs[order[i]].confidence) {
      sum += xs[order[j]].correct ? 1.0 : 0.0;
      ++j;
    }
    stack.push_back({sum, static_cast<double>(j - i), i, j});
    while (stack.size() > 1) {
      Block& top = stack.back();
      Block& prev = stack[stack.size() - 2];
      if (prev.sum / prev.weight <= top.sum / top.weight) break;
      prev.sum += top.sum;
      prev.weight += top.weight;
      prev.last = top.last;
      stack.pop_back();
    }
    i = j;
  }
  std::vector<double> fitted(xs.size());
  for (const auto& b : stack)
    for (std::size_t k = b.first; k < b.last; ++k) fitted[order[k]] = b.sum / b.weight;
  return fitted;
}

CorpResult corp(std::span<const ScoredExample> xs) {
  CorpResult r;
  r.recalibrated = pav_isotonic(xs);
  const double n = static_cast<double>(xs.size());
  for (const auto& x : xs) r.reference += x.correct ? 1.0 : 0.0;
  r.reference /= n;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double y = xs[i].correct ? 1.0 : 0.0;
    r.s_p += (xs[i].confidence - y) * (xs[i].confidence - y);
    r.s_ptilde += (r.recalibrated[i] - y) * (r.recalibrated[i] - y);
    r.s_r += (r.reference - y) * (r.reference - y);
  }
  r.s_p /= n;
  r.s_ptilde /= n;
  r.s_r /= n;
  r.mcb = r.s_p - r.s_ptilde;
  r.dsc = r.s_r - r.s_ptilde;
  r.unc = r.s_r;
  return r;
}

std::vector<SelectivePoint> selective_accuracy(std::span<const ScoredExample> xs, std::span<const double> rejection_grid) {
  require_nonempty(xs, "selective accuracy");
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (xs[a].confidence != xs[b].confidence) return xs[a].confidence > xs[b].confidence;
    return xs[a].prompt_id < xs[b].prompt_id;
  });
  std::vector<SelectivePoint> out;
  const double n = static_cast<double>(xs.size());
  for (double rho : rejection_grid) {
    if (!(rho >= 0.0 && rho < 1.0)) throw ValidationError("rejection rates must lie in [0, 1)");
    // The epsilon keeps e.g. (1 - 1/3)·3 from rounding up to 3.
    const auto kept = static_cast<std::size_t>(std::ceil((1.0 - rho) * n - 1e-9));
    double hits = 0.0;
    for (std::size_t k = 0; k < kept; ++k) hits += xs[idx[k]].correct ? 1.0 : 0.0;
    out.push_back({rho, hits / static_cast<double>(kept), kept});
  }
  return out;
}

std::vector<double> default_rejection_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(i / 10.0);
  return g;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("pearson: length mismatch");
  if (xs.size() < 2) throw ValidationError("pearson needs at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetric("pearson correlation is undefined for a constant input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace semcal
