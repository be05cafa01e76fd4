#include "abcgrpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "abcgrpo/advantage.hpp"
#include "abcgrpo/envs.hpp"
#include "abcgrpo/error.hpp"
#include "abcgrpo/format.hpp"
#include "abcgrpo/objective.hpp"

namespace abcgrpo {

namespace {

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06zu.ckpt", step);
  return buf;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_comparable(const TrainConfig& a, const TrainConfig& b) {
  TrainConfig a2 = a;
  a2.mode = b.mode;
  a2.clip = b.clip;
  a2.seed = b.seed;
  if (!(a2 == b)) throw InvalidInput("compared configurations may differ only in mode and clip thresholds");
}

}  // namespace

std::int64_t StepTelemetry::clip_events() const {
  return std::accumulate(quadrant_counts.begin(), quadrant_counts.end(), std::int64_t{0});
}

std::array<double, 4> StepTelemetry::quadrant_shares() const {
  std::array<double, 4> s{};
  const auto total = clip_events();
  if (total == 0) return s;
  for (std::size_t q = 0; q < 4; ++q) s[q] = static_cast<double>(quadrant_counts[q]) / static_cast<double>(total);
  return s;
}

nlohmann::ordered_json to_json(const StepTelemetry& t) {
  nlohmann::ordered_json j;
  j["step"] = t.step;
  j["objective"] = t.objective;
  j["grad_norm"] = t.grad_norm;
  j["entropy"] = t.entropy;
  j["clip_fraction"] = t.clip_fraction;
  j["active_clip_fraction"] = t.active_clip_fraction;
  j["quadrant_counts"] = {{"Q1", t.quadrant_counts[0]},
                          {"Q2", t.quadrant_counts[1]},
                          {"Q3", t.quadrant_counts[2]},
                          {"Q4", t.quadrant_counts[3]}};
  j["mean_reward"] = t.mean_reward;
  j["misattribution_rate"] = t.misattribution_rate;
  j["degenerate_group_count"] = t.degenerate_group_count;
  j["token_count"] = t.token_count;
  j["ratio_overflow_count"] = t.ratio_overflow_count;
  if (t.eval) {
    nlohmann::ordered_json e;
    e["avg_at_n"] = t.eval->avg_at_n;
    e["n"] = t.eval->n;
    nlohmann::ordered_json pk;
    for (std::size_t i = 0; i < t.eval->ks.size(); ++i) pk[std::to_string(t.eval->ks[i])] = t.eval->pass_at_k[i];
    e["pass_at_k"] = std::move(pk);
    j["eval"] = std::move(e);
  }
  return j;
}

StepTelemetry telemetry_from_json(const nlohmann::json& j) {
  StepTelemetry t;
  try {
    t.step = j.at("step").get<std::size_t>();
    t.objective = j.at("objective").get<double>();
    t.grad_norm = j.at("grad_norm").get<double>();
    t.entropy = j.at("entropy").get<double>();
    t.clip_fraction = j.at("clip_fraction").get<double>();
    t.active_clip_fraction = j.at("active_clip_fraction").get<double>();
    const auto& q = j.at("quadrant_counts");
    t.quadrant_counts = {q.at("Q1").get<std::int64_t>(), q.at("Q2").get<std::int64_t>(),
                         q.at("Q3").get<std::int64_t>(), q.at("Q4").get<std::int64_t>()};
    t.mean_reward = j.at("mean_reward").get<double>();
    t.misattribution_rate = j.at("misattribution_rate").get<double>();
    t.degenerate_group_count = j.at("degenerate_group_count").get<std::size_t>();
    t.token_count = j.at("token_count").get<std::size_t>();
    t.ratio_overflow_count = j.at("ratio_overflow_count").get<std::size_t>();
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      EvalPoint p;
      p.avg_at_n = e.at("avg_at_n").get<double>();
      p.n = e.at("n").get<int>();
      std::vector<std::pair<int, double>> ks;
      for (auto it = e.at("pass_at_k").begin(); it != e.at("pass_at_k").end(); ++it) {
        ks.emplace_back(std::stoi(it.key()), it.value().get<double>());
      }
      std::sort(ks.begin(), ks.end());
      for (auto& [k, v] : ks) {
        p.ks.push_back(k);
        p.pass_at_k.push_back(v);
      }
      t.eval = std::move(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed telemetry record: ") + e.what());
  }
  return t;
}

std::vector<StepTelemetry> read_telemetry(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl, std::ios::binary);
  if (!in) throw IoError("cannot read telemetry: " + jsonl.string());
  std::vector<StepTelemetry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(telemetry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInput("telemetry line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

JsonlSink::JsonlSink(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open telemetry sink: " + path.string());
}

void JsonlSink::write(const StepTelemetry& t) {
  out_ << to_json(t).dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing telemetry to " + path_.string());
}

TrainerState initial_state(const TrainConfig& config) {
  TrainerState s{PolicyParams::initialized(config.policy_shape(), config.seed, config.init_scale), {}, 0};
  if (config.momentum > 0.0) s.velocity.assign(s.policy.num_params(), 0.0);
  return s;
}

StepResult run_step(TrainerState& state, const TrainConfig& config) {
  const Task task = config.task.make();
  const PolicySnapshot snapshot(state.policy);
  const std::size_t step = state.step;
  StepResult out;
  StepTelemetry& tel = out.telemetry;
  tel.step = step;

  if (config.eval.every > 0 && step % config.eval.every == 0) {
    const auto rep = evaluate_policy(snapshot, task, config.eval.problems, config.eval.n, config.eval.ks, config.seed);
    tel.eval = EvalPoint{rep.avg_at_n, rep.n, rep.ks, rep.pass_at_k};
  }

  // Rollouts from the snapshot.
  TokenBatch batch;
  std::vector<Context> contexts;
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  MisattributionCount mis;
  for (std::size_t p = 0; p < config.prompts_per_batch; ++p) {
    RngStream prompt_rng(derive_seed(config.seed, {stream_tag::kPrompt, step, p}));
    RngStream rollout_rng(derive_seed(config.seed, {stream_tag::kRollout, step, p}));
    GroupRollout g;
    g.prompt_id = p;
    g.prompt = task.sample_prompt(prompt_rng);
    g.sequences = sample_group(snapshot, g.prompt, config.group_size, task.episode_len(), rollout_rng);
    for (const auto& rec : score_group(task, p, g.prompt, g.sequences)) g.rewards.push_back(rec.reward);
    g.advantages = group_advantages(g.rewards, config.normalize_std);
    for (const auto& seq : g.sequences) {
      g.logprobs_old.push_back(logprob(snapshot.params(), g.prompt, seq));
      for (std::size_t t = 0; t < seq.size(); ++t) contexts.push_back(snapshot->context_at(g.prompt, seq, t));
    }
    for (double r : g.rewards) reward_sum += r;
    reward_count += g.rewards.size();
    if (g.degenerate()) ++tel.degenerate_group_count;
    const auto c = count_misattributed(task, g);
    mis.misattributed += c.misattributed;
    mis.tokens += c.tokens;
    append_batch(batch, broadcast_to_tokens(g, p));
  }
  tel.mean_reward = reward_sum / static_cast<double>(reward_count);
  tel.misattribution_rate =
      mis.tokens == 0 ? 0.0 : static_cast<double>(mis.misattributed) / static_cast<double>(mis.tokens);
  tel.entropy = entropy(snapshot.params(), contexts);
  tel.token_count = batch.size();

  // One update per shard, ratios always against the snapshot.
  const Surrogate kind = surrogate_for(config.mode);
  double objective_sum = 0.0;
  double grad_norm_sum = 0.0;
  std::size_t shards_used = 0;
  std::size_t active_clipped = 0;
  bool first = true;
  for (const TokenBatch& shard : shard_by_sequence(batch, config.minibatches)) {
    if (shard.empty()) continue;
    SurrogateGradient sg;
    try {
      sg = surrogate_gradient(kind, shard, state.policy, config.clip);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("step " + std::to_string(step) + ": " + e.what(), e.record());
    }
    const SurrogateResult& res = sg.result;
    if (first) {
      for (std::size_t i = 0; i < shard.size(); ++i) {
        out.first_minibatch_max_log_ratio =
            std::max(out.first_minibatch_max_log_ratio, std::abs(std::log(res.ratios[i])));
      }
      first = false;
    }
    for (std::size_t i = 0; i < shard.size(); ++i) {
      const double r = res.ratios[i];
      const double adv = shard.records[i].adv;
      if (was_clipped(r, adv, config.clip, ClipMode::ABC)) tel.quadrant_counts[index_of(quadrant_of(r, adv))] += 1;
    }
    active_clipped += res.clipped();
    tel.ratio_overflow_count += res.overflow_count;
    objective_sum += res.objective * static_cast<double>(shard.sequence_count());
    grad_norm_sum += l2_norm(sg.gradient);
    ++shards_used;

    if (config.momentum > 0.0) {
      for (std::size_t j = 0; j < sg.gradient.size(); ++j) {
        state.velocity[j] = config.momentum * state.velocity[j] + sg.gradient[j];
      }
      apply_update(state.policy, state.velocity, config.lr);
    } else {
      apply_update(state.policy, sg.gradient, config.lr);
    }
  }

  const double n_tokens = static_cast<double>(batch.size());
  tel.objective = objective_sum / static_cast<double>(batch.sequence_count());
  tel.grad_norm = shards_used == 0 ? 0.0 : grad_norm_sum / static_cast<double>(shards_used);
  tel.clip_fraction = static_cast<double>(tel.clip_events()) / n_tokens;
  tel.active_clip_fraction = static_cast<double>(active_clipped) / n_tokens;
  state.step += 1;
  return out;
}

std::vector<StepTelemetry> train_in_memory(const TrainConfig& config, TrainerState* final_state) {
  config.validate();
  TrainerState state = initial_state(config);
  std::vector<StepTelemetry> out;
  out.reserve(config.steps);
  for (std::size_t s = 0; s < config.steps; ++s) out.push_back(run_step(state, config).telemetry);
  if (final_state) *final_state = std::move(state);
  return out;
}

RunArtifacts train(const RunConfig& run, const std::filesystem::path& dir, std::span<TelemetrySink* const> extra_sinks) {
  const TrainConfig& config = run.train;
  config.validate();
  RunArtifacts art;
  art.dir = dir.empty() ? run.output_dir : dir;
  if (art.dir.empty()) throw ConfigError("output_dir", "no output directory given");
  std::filesystem::create_directories(art.dir / "checkpoints");

  {
    RunConfig copy = run;
    copy.output_dir = art.dir;
    std::ofstream cfg(art.dir / "config.json", std::ios::binary | std::ios::trunc);
    if (!cfg) throw IoError("cannot write " + (art.dir / "config.json").string());
    cfg << to_json(copy).dump(2) << '\n';
  }

  JsonlSink sink(art.dir / "telemetry.jsonl");
  TrainerState state = initial_state(config);
  auto checkpoint = [&](std::size_t step) {
    auto path = art.dir / "checkpoints" / checkpoint_name(step);
    save_checkpoint(state.policy, path);
    art.checkpoints.push_back(path);
  };
  checkpoint(0);

  for (std::size_t s = 0; s < config.steps; ++s) {
    StepTelemetry t = run_step(state, config).telemetry;
    sink.write(t);
    for (TelemetrySink* extra : extra_sinks) extra->write(t);
    art.telemetry.push_back(std::move(t));
    const std::size_t done = s + 1;
    if (done == config.steps || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0)) checkpoint(done);
  }

  nlohmann::ordered_json report;
  report["mode"] = std::string(to_string(config.mode));
  report["seed"] = config.seed;
  report["steps"] = config.steps;
  if (!art.telemetry.empty()) {
    const auto& first = art.telemetry.front();
    const auto& last = art.telemetry.back();
    report["initial_mean_reward"] = first.mean_reward;
    report["final_mean_reward"] = last.mean_reward;
    report["initial_entropy"] = first.entropy;
    report["final_entropy"] = last.entropy;
    const auto shares = mean_quadrant_shares(art.telemetry);
    report["mean_quadrant_shares"] = {{"Q1", shares[0]}, {"Q2", shares[1]}, {"Q3", shares[2]}, {"Q4", shares[3]}};
  }
  nlohmann::ordered_json ckpts = nlohmann::ordered_json::array();
  for (const auto& c : art.checkpoints) ckpts.push_back(c.filename().string());
  report["checkpoints"] = std::move(ckpts);
  std::ofstream rep(art.dir / "report.json", std::ios::binary | std::ios::trunc);
  if (!rep) throw IoError("cannot write " + (art.dir / "report.json").string());
  rep << report.dump(2) << '\n';
  return art;
}

std::array<double, 4> mean_quadrant_shares(std::span<const StepTelemetry> series) {
  std::array<double, 4> sum{};
  std::size_t n = 0;
  for (const auto& t : series) {
    if (t.clip_events() == 0) continue;
    const auto s = t.quadrant_shares();
    for (std::size_t q = 0; q < 4; ++q) sum[q] += s[q];
    ++n;
  }
  if (n > 0) {
    for (double& v : sum) v /= static_cast<double>(n);
  }
  return sum;
}

namespace {

struct MetricDef {
  std::string name;
  std::function<std::optional<double>(std::span<const StepTelemetry>)> extract;
};

std::optional<double> last_eval(std::span<const StepTelemetry> s, int k) {
  for (auto it = s.rbegin(); it != s.rend(); ++it) {
    if (!it->eval) continue;
    if (k == 0) return it->eval->avg_at_n;
    for (std::size_t i = 0; i < it->eval->ks.size(); ++i) {
      if (it->eval->ks[i] == k) return it->eval->pass_at_k[i];
    }
    return std::nullopt;
  }
  return std::nullopt;
}

std::vector<MetricDef> comparison_metrics(const TrainConfig& config) {
  std::vector<MetricDef> defs;
  defs.push_back({"final_entropy", [](std::span<const StepTelemetry> s) -> std::optional<double> {
                    if (s.empty()) return std::nullopt;
                    return s.back().entropy;
                  }});
  defs.push_back({"final_mean_reward", [](std::span<const StepTelemetry> s) -> std::optional<double> {
                    // Mean over the last tenth of the run to damp rollout noise.
                    if (s.empty()) return std::nullopt;
                    const std::size_t tail = std::max<std::size_t>(1, s.size() / 10);
                    double sum = 0.0;
                    for (std::size_t i = s.size() - tail; i < s.size(); ++i) sum += s[i].mean_reward;
                    return sum / static_cast<double>(tail);
                  }});
  defs.push_back({"mean_q4_clip_share", [](std::span<const StepTelemetry> s) -> std::optional<double> {
                    return mean_quadrant_shares(s)[3];
                  }});
  if (config.eval.every > 0) {
    defs.push_back({"final_avg_at_n", [](std::span<const StepTelemetry> s) { return last_eval(s, 0); }});
    for (int k : config.eval.ks) {
      defs.push_back({"final_pass@" + std::to_string(k), [k](std::span<const StepTelemetry> s) { return last_eval(s, k); }});
    }
  }
  return defs;
}

}  // namespace

ComparisonReport compare_runs(const TrainConfig& a, const TrainConfig& b, std::span<const std::uint64_t> seeds) {
  check_comparable(a, b);
  if (seeds.empty()) throw InvalidInput("compare_runs needs at least one seed");
  ComparisonReport rep;
  rep.config_a = a;
  rep.config_b = b;
  for (std::uint64_t seed : seeds) {
    TrainConfig ca = a;
    TrainConfig cb = b;
    ca.seed = seed;
    cb.seed = seed;
    SeedComparison sc{seed, train_in_memory(ca), train_in_memory(cb)};
    if (sc.a.size() != sc.b.size()) throw InvalidInput("compared runs have different step counts");
    rep.runs.push_back(std::move(sc));
  }
  if (seeds.size() < kMinSeedsForSummary) {
    rep.notes.push_back("warning: only " + std::to_string(seeds.size()) +
                        " seed(s); win counts are not meaningful below " + std::to_string(kMinSeedsForSummary));
  }

  for (const MetricDef& def : comparison_metrics(a)) {
    MetricComparison m;
    m.metric = def.name;
    std::size_t counted = 0;
    for (const auto& run : rep.runs) {
      const auto va = def.extract(run.a);
      const auto vb = def.extract(run.b);
      if (!va || !vb) continue;
      if (*va > *vb) {
        ++m.wins_a;
      } else if (*vb > *va) {
        ++m.wins_b;
      } else {
        ++m.ties;
      }
      m.mean_delta += *vb - *va;
      ++counted;
    }
    if (counted > 0) m.mean_delta /= static_cast<double>(counted);
    rep.metrics.push_back(std::move(m));
  }
  return rep;
}

void write_comparison(const ComparisonReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& ks = report.config_a.eval.ks;
  const bool with_eval = report.config_a.eval.every > 0;

  for (const auto& run : report.runs) {
    const auto path = dir / ("seed_" + std::to_string(run.seed) + ".csv");
    std::ofstream csv(path, std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + path.string());
    csv << "step,entropy_a,entropy_b,mean_reward_a,mean_reward_b";
    for (const char* side : {"a", "b"}) {
      for (int q = 1; q <= 4; ++q) csv << ",q" << q << "_share_" << side;
    }
    if (with_eval) {
      csv << ",avg_at_n_a,avg_at_n_b";
      for (int k : ks) csv << ",pass@" << k << "_a,pass@" << k << "_b";
    }
    csv << '\n';
    for (std::size_t i = 0; i < run.a.size(); ++i) {
      const auto& ta = run.a[i];
      const auto& tb = run.b[i];
      csv << ta.step << ',' << format_double(ta.entropy) << ',' << format_double(tb.entropy) << ','
          << format_double(ta.mean_reward) << ',' << format_double(tb.mean_reward);
      for (const StepTelemetry* t : {&ta, &tb}) {
        for (double s : t->quadrant_shares()) csv << ',' << format_double(s);
      }
      if (with_eval) {
        auto cell = [&](const StepTelemetry& t, int k) -> std::string {
          if (!t.eval) return "";
          if (k == 0) return format_double(t.eval->avg_at_n);
          for (std::size_t j = 0; j < t.eval->ks.size(); ++j) {
            if (t.eval->ks[j] == k) return format_double(t.eval->pass_at_k[j]);
          }
          return "";
        };
        csv << ',' << cell(ta, 0) << ',' << cell(tb, 0);
        for (int k : ks) csv << ',' << cell(ta, k) << ',' << cell(tb, k);
      }
      csv << '\n';
    }
  }

  std::ostringstream txt;
  txt << "comparison: a=" << to_string(report.config_a.mode) << " b=" << to_string(report.config_b.mode) << '\n';
  txt << "seeds:";
  for (const auto& run : report.runs) txt << ' ' << run.seed;
  txt << '\n';
  for (const auto& note : report.notes) txt << note << '\n';
  for (const auto& m : report.metrics) {
    txt << m.metric << ": a wins " << m.wins_a << ", b wins " << m.wins_b << ", ties " << m.ties
        << ", mean delta (b - a) " << format_double(m.mean_delta) << '\n';
  }
  {
    std::ofstream out(dir / "summary.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write summary.txt");
    out << txt.str();
  }

  nlohmann::ordered_json j;
  j["mode_a"] = std::string(to_string(report.config_a.mode));
  j["mode_b"] = std::string(to_string(report.config_b.mode));
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (const auto& run : report.runs) seeds.push_back(run.seed);
  j["seeds"] = std::move(seeds);
  j["notes"] = report.notes;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
  for (const auto& m : report.metrics) {
    metrics.push_back({{"metric", m.metric},
                       {"wins_a", m.wins_a},
                       {"wins_b", m.wins_b},
                       {"ties", m.ties},
                       {"mean_delta", m.mean_delta}});
  }
  j["metrics"] = std::move(metrics);
  std::ofstream out(dir / "summary.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write summary.json");
  out << j.dump(2) << '\n';
}

}  // namespace abcgrpo
