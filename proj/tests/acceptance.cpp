// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>

#include "oracles.hpp"
#include "semcal/calibrate.hpp"
#include "semcal/correctness.hpp"
#include "semcal/entailment.hpp"
#include "semcal/measures.hpp"
#include "semcal/metrics.hpp"
#include "semcal/pipeline.hpp"
#include "semcal/records.hpp"
#include "test_util.hpp"

using namespace semcal;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = SEMCAL_FIXTURE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double max_abs(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

Outcome measure_identities() {
  std::mt19937_64 gen(1001);
  std::uniform_real_distribution<double> ll(-50.0, 0.0), noise(-5.0, 5.0);
  double worst = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const int m = 1 + static_cast<int>(gen() % 12);
    const auto c = cluster_set_from_labels(oracle::random_labels(gen, m, 1 + static_cast<int>(gen() % 6)));
    Eigen::VectorXd l(m), moved(m);
    for (int i = 0; i < m; ++i) l(i) = ll(gen), moved(i) = std::min(0.0, l(i) + noise(gen));
    const auto b = bsc(c, l).log_probs;
    worst = std::max(worst, max_abs(tsc(c, l, 1.0).log_probs, b));
    worst = std::max(worst, max_abs(gsc(c, l, 1.0).log_probs, b));
    worst = std::max(worst, max_abs(esc<double>(c).log_probs, esc<double>(c).log_probs));
    // E-SC through the generic dispatch with two different likelihood vectors.
    worst = std::max(worst, max_abs(compute_measure(Measure::esc, c, l).log_probs,
                                    compute_measure(Measure::esc, c, moved).log_probs));

    std::vector<int> ids(static_cast<std::size_t>(m));
    std::iota(ids.begin(), ids.end(), 0);
    const auto singles = cluster_set_from_labels(ids);
    worst = std::max(worst, max_abs(icsc(singles, l).log_probs, lsc(singles, l).log_probs));

    // Equal cluster sizes: k clusters of size s.
    const int k = 1 + static_cast<int>(gen() % 6), s = 1 + static_cast<int>(gen() % 2);
    std::vector<int> eq;
    for (int id = 0; id < k; ++id)
      for (int r = 0; r < s; ++r) eq.push_back(id);
    std::shuffle(eq.begin(), eq.end(), gen);
    const auto ce = cluster_set_from_labels(eq);
    Eigen::VectorXd le(static_cast<Eigen::Index>(eq.size()));
    for (Eigen::Index i = 0; i < le.size(); ++i) le(i) = ll(gen);
    worst = std::max(worst, max_abs(mlsc(ce, le).log_probs, lsc(ce, le).log_probs));
  }
  return {worst < 1e-12, std::to_string(trials) + " instances, max log-domain gap " + num(worst)};
}

Outcome normalization() {
  std::mt19937_64 gen(1002);
  double worst = 0.0;
  bool finite = true;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const int m = 1 + static_cast<int>(gen() % 12);
    const auto c = cluster_set_from_labels(oracle::random_labels(gen, m, 1 + static_cast<int>(gen() % 6)));
    const double floor = t % 2 ? -1e4 : -50.0;
    std::uniform_real_distribution<double> ll(floor, 0.0);
    Eigen::VectorXd l(m);
    for (int i = 0; i < m; ++i) l(i) = ll(gen);
    const double alpha = std::vector<double>{0.5, 0.75, 1.25}[gen() % 3];
    for (Measure meas : all_measures()) {
      const auto d = compute_measure(meas, c, l, measure_uses_alpha(meas) ? std::optional<double>(alpha) : std::nullopt);
      finite = finite && d.log_probs.allFinite() && std::isfinite(semantic_entropy(d));
      worst = std::max(worst, std::abs(d.probs().sum() - 1.0));
    }
  }
  return {finite && worst <= 1e-9,
          std::to_string(trials) + " instances x 7 measures, max |sum - 1| " + num(worst) + (finite ? "" : ", non-finite output")};
}

Outcome gradients() {
  std::mt19937_64 gen(1003);
  std::normal_distribution<double> nd(0, 2);
  double worst_tau = 0.0, worst_platt = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int v = 2 + static_cast<int>(gen() % 49);
    Eigen::VectorXd z(v);
    for (int i = 0; i < v; ++i) z(i) = nd(gen);
    const int y = static_cast<int>(gen() % static_cast<unsigned>(v));
    const double tau = std::exp(std::uniform_real_distribution<double>(-1, 1)(gen));
    const double fd = oracle::central_difference([&](double x) { return -std::log(oracle::naive_softmax(z / x)(y)); }, tau,
                                                 1e-5 * tau);
    worst_tau = std::max(worst_tau, std::abs(tau_gradient(z, y, tau) - fd) / std::max(1.0, std::abs(fd)));
  }
  for (int t = 0; t < 100; ++t) {
    const int v = 10;
    Eigen::VectorXd z(v), w(v), b(v);
    for (int i = 0; i < v; ++i) z(i) = nd(gen), w(i) = 1 + 0.2 * nd(gen), b(i) = 0.2 * nd(gen);
    const int y = static_cast<int>(gen() % v);
    const auto g = platt_gradient(z, y, w, b);
    auto loss = [&](const Eigen::VectorXd& ww, const Eigen::VectorXd& bb) {
      return -std::log(oracle::naive_softmax(ww.cwiseProduct(z) + bb)(y));
    };
    for (int k = 0; k < v; ++k) {
      const double fw = oracle::central_difference([&](double x) { Eigen::VectorXd ww = w; ww(k) = x; return loss(ww, b); },
                                                   w(k), 1e-5);
      const double fb = oracle::central_difference([&](double x) { Eigen::VectorXd bb = b; bb(k) = x; return loss(w, bb); },
                                                   b(k), 1e-5);
      worst_platt = std::max(worst_platt, std::abs(g.w(k) - fw) / std::max(1.0, std::abs(fw)));
      worst_platt = std::max(worst_platt, std::abs(g.b(k) - fb) / std::max(1.0, std::abs(fb)));
    }
  }
  return {worst_tau < 1e-5 && worst_platt < 1e-4,
          "max rel. error tau " + num(worst_tau) + ", Platt " + num(worst_platt)};
}

Outcome temperature_recovery() {
  bool pass = true;
  std::string detail = "default config:";
  for (double tau_true : {0.5, 2.0}) {
    const auto data = oracle::tempered_dataset(20, 200, 30, tau_true, 1004);
    const double tau = std::get<ScalarTemperature>(fit_temperature(data, OptimConfig::temperature_defaults()).params).tau;
    const bool ok = std::abs(tau - tau_true) <= 0.05 * tau_true;
    pass = pass && ok;
    detail += " tau_true " + num(tau_true) + " -> " + num(tau);
    // Same data with a learning rate large enough to converge, for reference.
    auto fast = OptimConfig::temperature_defaults();
    fast.learning_rate = 0.05;
    fast.epochs = 20;
    detail += " (lr 0.05, 20 epochs: " +
              num(std::get<ScalarTemperature>(fit_temperature(data, fast).params).tau) + ")";
    if (tau_true == 0.5) detail += ";";
  }
  return {pass, detail};
}

Outcome isotonic_and_corp() {
  std::mt19937_64 gen(1005);
  std::uniform_real_distribution<double> u(0, 1);
  auto draw = [&](std::size_t n, bool coarse) {
    std::vector<ScoredExample> xs;
    for (std::size_t i = 0; i < n; ++i) {
      double c = u(gen);
      if (coarse) c = std::round(c * 4) / 4;
      xs.push_back({c, u(gen) < c, "p" + std::to_string(i)});
    }
    return xs;
  };
  double worst_pav = 0.0, worst_id = 0.0, min_part = 0.0;
  for (int t = 0; t < 500; ++t) {
    const auto xs = draw(1 + gen() % 12, t % 2 == 0);
    const auto got = pav_isotonic(xs), want = oracle::isotonic_minmax(xs);
    for (std::size_t i = 0; i < xs.size(); ++i) worst_pav = std::max(worst_pav, std::abs(got[i] - want[i]));
  }
  for (int t = 0; t < 1000; ++t) {
    const auto c = corp(draw(1 + gen() % 50, t % 2 == 0));
    worst_id = std::max(worst_id, std::abs(c.s_p - (c.mcb - c.dsc + c.unc)));
    min_part = std::min({min_part, c.mcb, c.dsc});
  }
  return {worst_pav <= 1e-9 && worst_id <= 1e-12 && min_part >= -1e-12,
          "PAV gap " + num(worst_pav) + ", CORP identity gap " + num(worst_id) + ", min(MCB, DSC) " + num(min_part)};
}

Outcome appendix_c() {
  const std::vector<ScoredExample> calibrated = {{0.5, false, "a"}, {0.5, true, "b"}};
  const std::vector<ScoredExample> sharp = {{0.9, false, "a"}, {0.99, true, "b"}};
  const double e = ece(calibrated, 1), a = auroc(calibrated), a2 = auroc(sharp);
  return {e == 0.0 && a == 0.5 && a2 == 1.0,
          "ECE " + num(e) + ", AUROC " + num(a) + "; AUROC " + num(a2) + ", single-bin ECE " + num(ece(sharp, 1))};
}

Outcome rank_preservation() {
  std::mt19937_64 gen(1007);
  std::normal_distribution<double> nd(0, 3);
  auto order = [](const Eigen::VectorXd& v) {
    std::vector<int> idx(static_cast<std::size_t>(v.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return v(i) > v(j); });
    return idx;
  };
  int mismatches = 0, checks = 0;
  for (int t = 0; t < 10000; ++t) {
    const int v = 2 + static_cast<int>(gen() % 30);
    Eigen::VectorXd z(v);
    for (int i = 0; i < v; ++i) z(i) = t % 4 == 0 ? std::round(nd(gen)) : nd(gen);
    const auto want = order(z);
    for (double tau : {0.1, 0.5, 2.0, 10.0}) {
      ++checks;
      if (order(apply_temperature(z, tau)) != want) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(checks) + " argsorts compared, " + std::to_string(mismatches) + " mismatches"};
}

Outcome flattening() {
  const auto records = load_generation_file(kFixture / "generations.jsonl");
  CachedEntailmentSource src(VerdictCache::load(kFixture / "entailment_cache.jsonl"));
  double worst = 0.0;
  for (const auto& r : records) {
    const auto c = cluster_generations(r, src);
    const auto l = recompute_logliks(r, ScalarTemperature{1e6});
    worst = std::max(worst, max_abs(lsc(c, l).probs(), esc<double>(c).probs()));
  }
  return {worst < 1e-3, std::to_string(records.size()) + " prompts, max |L-SC - E-SC| " + num(worst)};
}

Outcome end_to_end() {
  testutil::TempDir a("accept_a"), b("accept_b");
  auto cfg = load_pipeline_config(kFixture / "config.json");
  cfg.output_dir = a.path();
  const auto ra = run_pipeline(cfg, RunOptions{});
  cfg.output_dir = b.path();
  const auto rb = run_pipeline(cfg, RunOptions{});
  const bool identical = testutil::read_file(ra.summary_csv) == testutil::read_file(rb.summary_csv) &&
                         testutil::read_file(ra.summary_json) == testutil::read_file(rb.summary_json);
  const auto summary = nlohmann::json::parse(testutil::read_file(ra.summary_json));
  auto value = [&](const std::string& method, const std::string& metric) {
    for (const auto& r : summary.at("rows"))
      if (r.at("method") == method && r.at("measure") == "L-SC" && r.at("protocol") == "conf" && r.at("metric") == metric)
        return r.at("value").is_null() ? std::nan("") : r.at("value").get<double>();
    return std::nan("");
  };
  const double ece_ts = value("ts", "ece_single_bin"), ece_base = value("base", "ece_single_bin"), tau = value("ts", "tau");
  const bool pass = identical && ece_ts < ece_base && tau >= 1.8 && tau <= 2.2;
  return {pass, std::string(identical ? "byte-identical reports" : "reports differ") + ", L-SC single-bin ECE ts " +
                    num(ece_ts) + " vs base " + num(ece_base) + ", fitted tau " + num(tau)};
}

Outcome correctness_goldens() {
  const MatchConfig cfg;
  const auto shylock = is_correct("Shylock in Merchant of Venice", {"Shylock"}, cfg);
  const auto year = is_correct("19th December 1988", {"1988"}, cfg);
  const auto twenty = is_correct("twenty", {"20"}, cfg);
  const auto everest = is_correct("mt everest", {"mount everest"}, cfg);
  const bool canon = canonicalize_for_clustering("twenty") == "20";
  const bool pass = shylock.correct && shylock.rule == MatchRule::verbatim && year.correct && year.rule == MatchRule::date &&
                    twenty.correct && canon && !everest.correct && squad_f1("mt everest", "mount everest") == 50.0;
  return {pass, "verbatim " + to_string(shylock.rule) + ", year " + to_string(year.rule) + ", twenty " +
                    to_string(twenty.rule) + ", F1 at 50 " + (everest.correct ? "correct" : "incorrect")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "measure identities", 10, measure_identities},
      {2, "normalization and robustness", 30, normalization},
      {3, "gradient oracle", 1e9, gradients},
      {4, "temperature recovery", 60, temperature_recovery},
      {5, "isotonic oracle and CORP identity", 1e9, isotonic_and_corp},
      {6, "worked calibration/discrimination examples", 1e9, appendix_c},
      {7, "rank preservation", 1e9, rank_preservation},
      {8, "flattening limit", 1e9, flattening},
      {9, "end-to-end fixture", 120, end_to_end},
      {10, "correctness cascade goldens", 1e9, correctness_goldens},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += ", over the time budget";
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2d %s: %s (%s; %.2fs)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
