#include "abcgrpo/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

namespace {

using nlohmann::json;

// Reads the members of one JSON object and rejects the ones nobody asked for.
class ObjectReader {
public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

  const json* find(const std::string& name) {
    seen_.insert(name);
    auto it = obj_.find(name);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  void integer(const std::string& name, T& out, long long min_value) {
    if (const json* v = find(name)) {
      if (!v->is_number_integer()) throw ConfigError(key(name), "expected an integer");
      const long long x = v->get<long long>();
      if (x < min_value) throw ConfigError(key(name), "must be >= " + std::to_string(min_value));
      out = static_cast<T>(x);
    }
  }

  void number(const std::string& name, double& out) {
    if (const json* v = find(name)) {
      if (v->is_number()) {
        out = v->get<double>();
      } else if (v->is_string() && (v->get<std::string>() == "inf" || v->get<std::string>() == "infinity")) {
        out = kInfinity;
      } else {
        throw ConfigError(key(name), "expected a number");
      }
    }
  }

  void boolean(const std::string& name, bool& out) {
    if (const json* v = find(name)) {
      if (!v->is_boolean()) throw ConfigError(key(name), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& name, std::string& out) {
    if (const json* v = find(name)) {
      if (!v->is_string()) throw ConfigError(key(name), "expected a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

nlohmann::ordered_json eps_to_json(double v) {
  return std::isinf(v) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(v);
}

}  // namespace

Task TaskConfig::make() const {
  return kind == TaskKind::LastToken ? Task::last_token(vocab_size, episode_len)
                                     : Task::needle(vocab_size, episode_len, needle_pos);
}

void TrainConfig::validate() const {
  try {
    (void)task.make();
  } catch (const InvalidInput& e) {
    throw ConfigError("task", e.what());
  }
  try {
    clip.validate(mode);
  } catch (const InvalidInput& e) {
    throw ConfigError("train.clip", e.what());
  }
  if (context_len < 1) throw ConfigError("policy.context_len", "must be >= 1");
  if (hidden < 0) throw ConfigError("policy.hidden", "must be >= 0");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ConfigError("policy.init_scale", "must be >= 0");
  if (group_size < 2) throw ConfigError("train.group_size", "must be >= 2");
  if (prompts_per_batch < 1) throw ConfigError("train.prompts_per_batch", "must be >= 1");
  if (minibatches < 1) throw ConfigError("train.minibatches", "must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive and finite");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (eval.every > 0) {
    if (eval.problems < 1) throw ConfigError("eval.problems", "must be >= 1");
    if (eval.n < 1) throw ConfigError("eval.n", "must be >= 1");
    for (int k : eval.ks) {
      if (k < 1 || k > eval.n) throw ConfigError("eval.ks", "every k must lie in [1, n]");
    }
  }
}

RunConfig parse_run_config(const json& doc) {
  RunConfig rc;
  TrainConfig& tc = rc.train;
  ObjectReader root(doc, "");

  std::string out_dir;
  root.string("output_dir", out_dir);
  rc.output_dir = out_dir;
  root.integer("seed", tc.seed, 0);
  if (const json* seeds = root.find("seeds")) {
    if (!seeds->is_array()) throw ConfigError("seeds", "expected an array of integers");
    for (const auto& s : *seeds) {
      if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("seeds", "expected nonnegative integers");
      rc.seeds.push_back(s.get<std::uint64_t>());
    }
  }

  if (const json* t = root.find("task")) {
    ObjectReader r(*t, "task");
    std::string kind = to_string(tc.task.kind);
    r.string("kind", kind);
    try {
      tc.task.kind = task_kind_from_string(kind);
    } catch (const InvalidInput& e) {
      throw ConfigError("task.kind", e.what());
    }
    r.integer("vocab_size", tc.task.vocab_size, 2);
    r.integer("episode_len", tc.task.episode_len, 1);
    r.integer("needle_pos", tc.task.needle_pos, 0);
    r.finish();
  }

  if (const json* p = root.find("policy")) {
    ObjectReader r(*p, "policy");
    r.integer("context_len", tc.context_len, 1);
    r.integer("hidden", tc.hidden, 0);
    r.number("init_scale", tc.init_scale);
    r.finish();
  }

  if (const json* t = root.find("train")) {
    ObjectReader r(*t, "train");
    std::string mode = std::string(to_string(tc.mode));
    r.string("mode", mode);
    try {
      tc.mode = clip_mode_from_string(mode);
    } catch (const InvalidInput& e) {
      throw ConfigError("train.mode", e.what());
    }
    r.integer("group_size", tc.group_size, 0);
    r.integer("prompts_per_batch", tc.prompts_per_batch, 0);
    r.integer("minibatches", tc.minibatches, 0);
    r.integer("steps", tc.steps, 0);
    r.number("lr", tc.lr);
    r.number("momentum", tc.momentum);
    r.boolean("normalize_std", tc.normalize_std);
    r.integer("checkpoint_every", tc.checkpoint_every, 0);
    if (const json* c = r.find("clip")) {
      ObjectReader cr(*c, "train.clip");
      cr.number("eps1", tc.clip.eps1);
      cr.number("eps2", tc.clip.eps2);
      cr.number("eps3", tc.clip.eps3);
      cr.number("eps4", tc.clip.eps4);
      cr.number("grpo_eps", tc.clip.grpo_eps);
      cr.finish();
    }
    r.finish();
  }

  if (const json* e = root.find("eval")) {
    ObjectReader r(*e, "eval");
    r.integer("every", tc.eval.every, 0);
    r.integer("problems", tc.eval.problems, 0);
    r.integer("n", tc.eval.n, 0);
    if (const json* ks = r.find("ks")) {
      if (!ks->is_array()) throw ConfigError("eval.ks", "expected an array of integers");
      tc.eval.ks.clear();
      for (const auto& k : *ks) {
        if (!k.is_number_integer()) throw ConfigError("eval.ks", "expected integers");
        tc.eval.ks.push_back(k.get<int>());
      }
    }
    r.finish();
  }
  root.finish();
  tc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& config) {
  const TrainConfig& tc = config.train;
  nlohmann::ordered_json j;
  j["output_dir"] = config.output_dir.string();
  j["seed"] = tc.seed;
  j["seeds"] = config.seeds;
  j["task"] = {{"kind", to_string(tc.task.kind)},
               {"vocab_size", tc.task.vocab_size},
               {"episode_len", tc.task.episode_len},
               {"needle_pos", tc.task.needle_pos}};
  j["policy"] = {{"context_len", tc.context_len}, {"hidden", tc.hidden}, {"init_scale", tc.init_scale}};
  nlohmann::ordered_json train;
  train["mode"] = std::string(to_string(tc.mode));
  train["group_size"] = tc.group_size;
  train["prompts_per_batch"] = tc.prompts_per_batch;
  train["minibatches"] = tc.minibatches;
  train["steps"] = tc.steps;
  train["lr"] = tc.lr;
  train["momentum"] = tc.momentum;
  train["normalize_std"] = tc.normalize_std;
  train["checkpoint_every"] = tc.checkpoint_every;
  train["clip"] = {{"eps1", eps_to_json(tc.clip.eps1)},
                   {"eps2", eps_to_json(tc.clip.eps2)},
                   {"eps3", eps_to_json(tc.clip.eps3)},
                   {"eps4", eps_to_json(tc.clip.eps4)},
                   {"grpo_eps", eps_to_json(tc.clip.grpo_eps)}};
  j["train"] = std::move(train);
  j["eval"] = {{"every", tc.eval.every}, {"problems", tc.eval.problems}, {"n", tc.eval.n}, {"ks", tc.eval.ks}};
  return j;
}

}  // namespace abcgrpo
