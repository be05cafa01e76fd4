#include "abcgrpo/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

namespace {

constexpr int kCheckpointFormatVersion = 1;

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

PolicyParams::PolicyParams(PolicyShape shape) : shape_(shape) {
  if (shape.vocab_size < 2) throw InvalidInput("vocab_size must be at least 2");
  if (shape.context_len < 1) throw InvalidInput("context_len must be at least 1");
  if (shape.hidden < 0) throw InvalidInput("hidden must be nonnegative");
  const std::size_t v = static_cast<std::size_t>(shape.vocab_size);
  const std::size_t d = input_dim();
  const std::size_t h = static_cast<std::size_t>(shape.hidden);
  weights_.assign(h == 0 ? v * d + v : h * d + h + v * h + v, 0.0);
}

PolicyParams PolicyParams::initialized(PolicyShape shape, std::uint64_t seed, double scale) {
  PolicyParams p(shape);
  RngStream rng(derive_seed(seed, {stream_tag::kInit}));
  for (double& w : p.weights_) w = rng.uniform(-scale, scale);
  return p;
}

std::size_t PolicyParams::input_dim() const {
  return context_slots() * static_cast<std::size_t>(shape_.vocab_size + 1);
}

PolicyParams::Layout PolicyParams::layout() const {
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  const std::size_t h = static_cast<std::size_t>(shape_.hidden);
  const std::size_t d = input_dim();
  if (h == 0) return {0, 0, 0, v * d};  // W lives at w2, b at b2
  return {0, h * d, h * d + h, h * d + h + v * h};
}

void PolicyParams::check_token(Token token) const {
  if (token < 0 || token >= shape_.vocab_size) {
    throw InvalidInput("token " + std::to_string(token) + " outside vocabulary of size " +
                       std::to_string(shape_.vocab_size));
  }
}

Context PolicyParams::context_at(std::span<const Token> prompt, std::span<const Token> seq, std::size_t t) const {
  const std::size_t k = static_cast<std::size_t>(shape_.context_len);
  Context ctx(k + 1, bos());
  if (!prompt.empty()) ctx[0] = prompt.back();
  for (std::size_t i = 0; i < k && i < t; ++i) ctx[k - i] = seq[t - 1 - i];
  return ctx;
}

void PolicyParams::forward(std::span<const Token> ctx, std::span<double> hidden, std::span<double> out) const {
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  const std::size_t h = static_cast<std::size_t>(shape_.hidden);
  const std::size_t d = input_dim();
  const std::size_t width = v + 1;
  if (ctx.size() != context_slots()) throw InvalidInput("context length mismatch");
  const Layout L = layout();

  if (h == 0) {
    for (std::size_t o = 0; o < v; ++o) {
      double acc = weights_[L.b2 + o];
      const double* row = &weights_[o * d];
      for (std::size_t s = 0; s < ctx.size(); ++s) acc += row[s * width + static_cast<std::size_t>(ctx[s])];
      out[o] = acc;
    }
    return;
  }

  for (std::size_t j = 0; j < h; ++j) {
    double acc = weights_[L.b1 + j];
    const double* row = &weights_[L.w1 + j * d];
    for (std::size_t s = 0; s < ctx.size(); ++s) acc += row[s * width + static_cast<std::size_t>(ctx[s])];
    hidden[j] = std::tanh(acc);
  }
  for (std::size_t o = 0; o < v; ++o) {
    double acc = weights_[L.b2 + o];
    const double* row = &weights_[L.w2 + o * h];
    for (std::size_t j = 0; j < h; ++j) acc += row[j] * hidden[j];
    out[o] = acc;
  }
}

void PolicyParams::logits(std::span<const Token> ctx, std::span<double> out) const {
  std::vector<double> hidden(static_cast<std::size_t>(shape_.hidden));
  forward(ctx, hidden, out);
}

std::vector<double> PolicyParams::log_probs(std::span<const Token> ctx) const {
  std::vector<double> l(static_cast<std::size_t>(shape_.vocab_size));
  logits(ctx, l);
  const double lse = log_sum_exp(l);
  for (double& x : l) x -= lse;
  return l;
}

std::vector<double> PolicyParams::probs(std::span<const Token> ctx) const {
  auto p = log_probs(ctx);
  for (double& x : p) x = std::exp(x);
  return p;
}

double PolicyParams::logprob_token(std::span<const Token> ctx, Token token) const {
  check_token(token);
  return log_probs(ctx)[static_cast<std::size_t>(token)];
}

double PolicyParams::accumulate_grad_logprob(std::span<const Token> ctx, Token token, double scale,
                                             std::span<double> grad) const {
  check_token(token);
  if (grad.size() != weights_.size()) throw InvalidInput("gradient buffer has the wrong size");
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  const std::size_t h = static_cast<std::size_t>(shape_.hidden);
  const std::size_t d = input_dim();
  const std::size_t width = v + 1;
  const Layout L = layout();

  std::vector<double> hidden(h);
  std::vector<double> z(v);
  forward(ctx, hidden, z);
  const double lse = log_sum_exp(z);
  const double lp = z[static_cast<std::size_t>(token)] - lse;

  // z becomes scale * (onehot(token) - p).
  for (std::size_t o = 0; o < v; ++o) z[o] = -scale * std::exp(z[o] - lse);
  z[static_cast<std::size_t>(token)] += scale;

  if (h == 0) {
    for (std::size_t o = 0; o < v; ++o) {
      grad[L.b2 + o] += z[o];
      double* row = &grad[o * d];
      for (std::size_t s = 0; s < ctx.size(); ++s) row[s * width + static_cast<std::size_t>(ctx[s])] += z[o];
    }
    return lp;
  }

  std::vector<double> dpre(h, 0.0);
  for (std::size_t o = 0; o < v; ++o) {
    grad[L.b2 + o] += z[o];
    const double* wrow = &weights_[L.w2 + o * h];
    double* grow = &grad[L.w2 + o * h];
    for (std::size_t j = 0; j < h; ++j) {
      grow[j] += z[o] * hidden[j];
      dpre[j] += wrow[j] * z[o];
    }
  }
  for (std::size_t j = 0; j < h; ++j) {
    const double g = dpre[j] * (1.0 - hidden[j] * hidden[j]);
    grad[L.b1 + j] += g;
    double* row = &grad[L.w1 + j * d];
    for (std::size_t s = 0; s < ctx.size(); ++s) row[s * width + static_cast<std::size_t>(ctx[s])] += g;
  }
  return lp;
}

std::vector<double> logprob(const PolicyParams& policy, std::span<const Token> prompt, std::span<const Token> seq) {
  std::vector<double> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out[t] = policy.logprob_token(policy.context_at(prompt, seq, t), seq[t]);
  }
  return out;
}

std::vector<double> grad_logprob(const PolicyParams& policy, std::span<const Token> prompt,
                                 std::span<const Token> seq, std::size_t token_index) {
  if (token_index >= seq.size()) throw InvalidInput("token_index out of range");
  std::vector<double> g(policy.num_params(), 0.0);
  policy.accumulate_grad_logprob(policy.context_at(prompt, seq, token_index), seq[token_index], 1.0, g);
  return g;
}

double entropy(const PolicyParams& policy, std::span<const Context> contexts) {
  if (contexts.empty()) throw InvalidInput("entropy needs at least one context");
  double total = 0.0;
  for (const Context& ctx : contexts) {
    double h = 0.0;
    for (double lp : policy.log_probs(ctx)) h -= std::exp(lp) * lp;
    total += h;
  }
  return total / static_cast<double>(contexts.size());
}

Token sample_token(std::span<const double> probs, RngStream& rng) {
  const double u = rng.uniform();
  double cdf = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    cdf += probs[v];
    if (u < cdf) return static_cast<Token>(v);
  }
  // Rounding left cdf slightly below 1; fall back to the last nonzero entry.
  for (std::size_t v = probs.size(); v > 0; --v) {
    if (probs[v - 1] > 0.0) return static_cast<Token>(v - 1);
  }
  return 0;
}

TokenSeq sample_sequence(const PolicyParams& policy, std::span<const Token> prompt, std::size_t episode_len,
                         RngStream& rng) {
  TokenSeq seq;
  seq.reserve(episode_len);
  for (std::size_t t = 0; t < episode_len; ++t) {
    const auto p = policy.probs(policy.context_at(prompt, seq, t));
    seq.push_back(sample_token(p, rng));
  }
  return seq;
}

std::vector<TokenSeq> sample_group(const PolicySnapshot& snapshot, std::span<const Token> prompt, std::size_t group_size,
                                   std::size_t episode_len, RngStream& rng) {
  if (group_size < 2) throw InvalidInput("group size must be at least 2");
  if (episode_len < 1) throw InvalidInput("episode length must be at least 1");
  std::vector<TokenSeq> out;
  out.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) out.push_back(sample_sequence(snapshot.params(), prompt, episode_len, rng));
  return out;
}

void apply_update(PolicyParams& policy, std::span<const double> gradient, double lr) {
  if (gradient.size() != policy.num_params()) throw InvalidInput("gradient size does not match parameters");
  if (!std::isfinite(lr)) throw InvalidInput("learning rate must be finite");
  auto w = policy.mutable_weights();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double next = w[i] + lr * gradient[i];
    if (!std::isfinite(next)) throw NumericalFailure("non-finite parameter update", i);
  }
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += lr * gradient[i];
  policy.bump_version();
}

void save_checkpoint(const PolicyParams& policy, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["format"] = "abcgrpo-policy";
  header["format_version"] = kCheckpointFormatVersion;
  header["vocab_size"] = policy.shape().vocab_size;
  header["context_len"] = policy.shape().context_len;
  header["hidden"] = policy.shape().hidden;
  header["version"] = policy.version();
  header["num_weights"] = policy.num_params();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << header.dump() << '\n';
  char buf[64];
  for (double w : policy.weights()) {
    auto res = std::to_chars(buf, buf + sizeof(buf), w);
    out.write(buf, res.ptr - buf);
    out.put('\n');
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("checkpoint is empty: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("bad checkpoint header: " + std::string(e.what()));
  }
  if (header.value("format", "") != "abcgrpo-policy" || header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw InvalidInput("unsupported checkpoint format in " + path.string());
  }
  PolicyShape shape{header.at("vocab_size").get<int>(), header.at("context_len").get<int>(),
                    header.at("hidden").get<int>()};
  PolicyParams p(shape);
  if (header.at("num_weights").get<std::size_t>() != p.num_params()) {
    throw InvalidInput("checkpoint weight count does not match its shape");
  }
  auto w = p.mutable_weights();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::getline(in, line)) throw InvalidInput("checkpoint truncated at weight " + std::to_string(i));
    auto res = std::from_chars(line.data(), line.data() + line.size(), w[i]);
    if (res.ec != std::errc() || !std::isfinite(w[i])) {
      throw InvalidInput("bad weight on line " + std::to_string(i + 2));
    }
  }
  p.set_version(header.at("version").get<std::uint64_t>());
  return p;
}

}  // namespace abcgrpo
