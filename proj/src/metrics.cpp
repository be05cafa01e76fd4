#include "abcgrpo/metrics.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

double pass_at_k(int n, int c, int k) {
  if (n < 1) throw InvalidInput("pass_at_k: n must be positive");
  if (c < 0 || c > n) throw InvalidInput("pass_at_k: c must lie in [0, n]");
  if (k < 1 || k > n) throw InvalidInput("pass_at_k: k must lie in [1, n]");
  if (c == 0) return 0.0;
  if (k == 1) return static_cast<double>(c) / static_cast<double>(n);
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  double miss = 1.0;
  for (int i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

double avg_at_n(std::span<const EvalSample> samples) {
  if (samples.empty()) throw InvalidInput("avg_at_n needs at least one sample");
  const int n = samples.front().n;
  double sum = 0.0;
  for (const auto& s : samples) {
    if (s.n != n) throw InvalidInput("avg_at_n requires a uniform sample count");
    if (s.n < 1 || s.c < 0 || s.c > s.n) throw InvalidInput("eval sample violates 0 <= c <= n");
    sum += static_cast<double>(s.c) / static_cast<double>(s.n);
  }
  return sum / static_cast<double>(samples.size());
}

EvalReport evaluate_policy(const PolicySnapshot& snapshot, const Task& task, std::size_t problems, int n,
                           std::span<const int> ks, std::uint64_t seed) {
  if (problems == 0) throw InvalidInput("evaluation needs at least one problem");
  if (n < 1) throw InvalidInput("evaluation needs n >= 1");
  for (int k : ks) {
    if (k < 1 || k > n) throw InvalidInput("every k must lie in [1, n]");
  }
  EvalReport report;
  report.problem_count = problems;
  report.n = n;
  report.ks.assign(ks.begin(), ks.end());
  report.samples.reserve(problems);

  for (std::size_t p = 0; p < problems; ++p) {
    RngStream prompt_rng(derive_seed(seed, {stream_tag::kEval, p, 0}));
    RngStream sample_rng(derive_seed(seed, {stream_tag::kEval, p, 1}));
    const TokenSeq prompt = task.sample_prompt(prompt_rng);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      const TokenSeq seq = sample_sequence(snapshot.params(), prompt, task.episode_len(), sample_rng);
      correct += task.reward(prompt, seq) > 0.0 ? 1 : 0;
    }
    report.samples.push_back({p, n, correct});
  }

  report.avg_at_n = avg_at_n(report.samples);
  for (int k : ks) {
    double sum = 0.0;
    for (const auto& s : report.samples) sum += pass_at_k(s.n, s.c, k);
    report.pass_at_k.push_back(sum / static_cast<double>(problems));
  }
  return report;
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "eval_report.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (dir / "eval_report.csv").string());
    csv << "problem_count,n,avg_at_n";
    for (int k : report.ks) csv << ",pass@" << k;
    csv << '\n';
    csv << report.problem_count << ',' << report.n << ',' << nlohmann::json(report.avg_at_n).dump();
    for (double v : report.pass_at_k) csv << ',' << nlohmann::json(v).dump();
    csv << '\n';
  }
  nlohmann::ordered_json meta;
  meta["problem_count"] = report.problem_count;
  meta["n"] = report.n;
  meta["ks"] = report.ks;
  meta["estimator"] = "unbiased: pass@k = 1 - C(n-c,k)/C(n,k), averaged over problems";
  meta["avg_at_n"] = "mean over problems of c/n";
  nlohmann::ordered_json per_problem = nlohmann::ordered_json::array();
  for (const auto& s : report.samples) per_problem.push_back({{"problem_id", s.problem_id}, {"n", s.n}, {"c", s.c}});
  meta["problems"] = std::move(per_problem);
  std::ofstream js(dir / "eval_report.json", std::ios::binary | std::ios::trunc);
  if (!js) throw IoError("cannot write " + (dir / "eval_report.json").string());
  js << meta.dump(2) << '\n';
}

}  // namespace abcgrpo
