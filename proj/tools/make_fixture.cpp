// Writes the bundled toy corpus: generations with dense logits that are
// over-sharpened by a known temperature, plus a complete verdict cache.
//
// Every sample answers with one content token (step 0) followed by a few
// tail tokens. Tokens are drawn from softmax(z) while the stored logits are
// tau_true * z, so temperature scaling should recover tau_true. The second
// token picks a surface variant of the answer so clustering has to consult
// the cache instead of matching identical strings.
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "semcal/calibrate.hpp"
#include "semcal/entailment.hpp"
#include "semcal/records.hpp"
#include "semcal/rng.hpp"

namespace {

const std::vector<std::string> kWords = {"paris",  "london", "rome", "berlin", "madrid",
                                         "vienna", "lisbon", "oslo", "dublin", "prague"};
constexpr int kJunkToken = 10;  // step-0 tokens >= this give a non-answer

int draw(semcal::Rng& rng, const Eigen::VectorXd& probs) {
  double u = rng.uniform01(), acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

std::string answer_for(int content, int second, int variant_token) {
  if (content >= kJunkToken) return "i am not sure";
  std::string w = kWords[static_cast<std::size_t>(content)];
  return second == variant_token ? w + " city" : w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the toy calibration fixture"};
  std::string out_dir;
  std::uint64_t seed = 20240607;
  int prompts = 20, m = 10, vocab = 50;
  double tau_true = 2.0;
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--seed", seed);
  app.add_option("--prompts", prompts);
  app.add_option("--m", m);
  app.add_option("--vocab", vocab);
  app.add_option("--tau", tau_true, "Over-sharpening applied to the stored logits");
  CLI11_PARSE(app, argc, argv);
  if (vocab <= kJunkToken + 2) {
    std::cerr << "vocab too small\n";
    return 2;
  }

  semcal::Rng rng(seed);
  std::vector<semcal::PromptRecord> records;
  auto cache = std::make_shared<semcal::VerdictCache>();
  const semcal::DirectedVerdict yes{semcal::NliLabel::entailment, std::array<double, 3>{0.92, 0.05, 0.03}};
  const semcal::DirectedVerdict no{semcal::NliLabel::contradiction, std::array<double, 3>{0.03, 0.07, 0.90}};

  for (int p = 0; p < prompts; ++p) {
    semcal::PromptRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "toy-%02d", p);
    r.prompt_id = id;
    r.question = "Which capital is described in toy question " + std::to_string(p) + "?";
    r.vocab_size = vocab;
    r.generation_temperature = 1.0;

    // Step-0 logits: a favourite answer with a prompt-specific margin.
    Eigen::VectorXd z0 = Eigen::VectorXd::Constant(vocab, -3.0);
    for (int w = 0; w < kJunkToken; ++w) z0(w) = 0.6 * rng.normal();
    const int favourite = static_cast<int>(rng.uniform_index(kJunkToken));
    z0(favourite) += 1.5 + 2.0 * rng.uniform01();
    const Eigen::VectorXd p0 = semcal::softmax(z0);

    int gold = draw(rng, p0);
    while (gold >= kJunkToken) gold = draw(rng, p0);
    r.gold_answers = {kWords[static_cast<std::size_t>(gold)]};
    Eigen::Index best = 0;
    z0.maxCoeff(&best);
    r.greedy_answer = kWords[static_cast<std::size_t>(best)];

    const int variant_token = kJunkToken + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(vocab - kJunkToken)));
    std::vector<int> content(static_cast<std::size_t>(m));
    for (int s = 0; s < m; ++s) {
      semcal::SampleGeneration g;
      const int len = 3 + static_cast<int>(rng.uniform_index(4));
      int first = -1, second = -1;
      for (int t = 0; t < len; ++t) {
        Eigen::VectorXd z;
        if (t == 0) {
          z = z0;
        } else {
          z = Eigen::VectorXd(vocab);
          for (int v = 0; v < vocab; ++v) z(v) = rng.normal();
          z(kJunkToken + (p + t) % (vocab - kJunkToken)) += 3.0;
        }
        const int y = draw(rng, semcal::softmax(z));
        Eigen::VectorXd stored = (tau_true * z).unaryExpr(&round4);
        semcal::TokenStep st;
        st.token_id = y;
        st.logprob = semcal::log_softmax(stored)(y);
        st.logits = std::move(stored);
        g.steps.push_back(std::move(st));
        if (t == 0) first = y;
        if (t == 1) second = y;
      }
      g.answer_text = answer_for(first, second, variant_token);
      g.raw_text = g.answer_text + "\n";
      content[static_cast<std::size_t>(s)] = first >= kJunkToken ? kJunkToken : first;
      r.samples.push_back(std::move(g));
    }
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) {
        const bool same = content[static_cast<std::size_t>(i)] == content[static_cast<std::size_t>(j)];
        cache->insert({r.prompt_id, static_cast<std::size_t>(i), static_cast<std::size_t>(j)},
                      same ? semcal::EntailmentVerdict{yes, yes} : semcal::EntailmentVerdict{no, no});
      }
    records.push_back(std::move(r));
  }

  const auto issues = semcal::validate_corpus(records);
  if (!issues.empty()) {
    std::cerr << "generated corpus is invalid: " << issues.front().code << " " << issues.front().message << '\n';
    return 1;
  }
  std::filesystem::create_directories(out_dir);
  semcal::write_generation_file(std::filesystem::path(out_dir) / "generations.jsonl", records);
  cache->persist(std::filesystem::path(out_dir) / "entailment_cache.jsonl");
  std::cerr << "wrote " << records.size() << " prompts and " << cache->size() << " verdicts to " << out_dir << '\n';
  return 0;
}
