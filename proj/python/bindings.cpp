// Python bindings for the core library.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "abcgrpo/advantage.hpp"
#include "abcgrpo/clip.hpp"
#include "abcgrpo/config.hpp"
#include "abcgrpo/envs.hpp"
#include "abcgrpo/error.hpp"
#include "abcgrpo/metrics.hpp"
#include "abcgrpo/objective.hpp"
#include "abcgrpo/policy.hpp"
#include "abcgrpo/trainer.hpp"

namespace py = pybind11;
using namespace abcgrpo;

namespace {

// Converts through the JSON text form; used for telemetry and configs.
py::object to_python(const nlohmann::ordered_json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

RunConfig run_config_from(const py::object& obj) {
  if (py::isinstance<py::str>(obj)) return load_run_config(obj.cast<std::string>());
  RunConfig rc = parse_run_config(from_python(obj));
  rc.train.validate();
  return rc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Clipped group-relative policy optimization: objectives, gradients, toy tasks and a trainer";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<DegenerateGroup>(m, "DegenerateGroup", base.ptr());
  py::register_exception<NumericalFailure>(m, "NumericalFailure", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.attr("INFINITY") = kInfinity;

  py::enum_<ClipMode>(m, "ClipMode").value("GRPO", ClipMode::GRPO).value("ABC", ClipMode::ABC);
  py::enum_<Quadrant>(m, "Quadrant")
      .value("Q1", Quadrant::Q1)
      .value("Q2", Quadrant::Q2)
      .value("Q3", Quadrant::Q3)
      .value("Q4", Quadrant::Q4);

  py::class_<ClipConfig>(m, "ClipConfig")
      .def(py::init([](double eps1, double eps2, double eps3, double eps4, double grpo_eps) {
             return ClipConfig{eps1, eps2, eps3, eps4, grpo_eps};
           }),
           py::arg("eps1") = 0.2, py::arg("eps2") = 0.2, py::arg("eps3") = 0.2, py::arg("eps4") = 0.2,
           py::arg("grpo_eps") = 0.2)
      .def_static("uniform", &ClipConfig::uniform, py::arg("eps"))
      .def_static("grpo_equivalent", &ClipConfig::grpo_equivalent, py::arg("eps"))
      .def_readwrite("eps1", &ClipConfig::eps1)
      .def_readwrite("eps2", &ClipConfig::eps2)
      .def_readwrite("eps3", &ClipConfig::eps3)
      .def_readwrite("eps4", &ClipConfig::eps4)
      .def_readwrite("grpo_eps", &ClipConfig::grpo_eps)
      .def("validate", &ClipConfig::validate, py::arg("mode"))
      .def("eps_max", &ClipConfig::eps_max)
      .def("__repr__", [](const ClipConfig& c) {
        return "ClipConfig(eps1=" + std::to_string(c.eps1) + ", eps2=" + std::to_string(c.eps2) +
               ", eps3=" + std::to_string(c.eps3) + ", eps4=" + std::to_string(c.eps4) +
               ", grpo_eps=" + std::to_string(c.grpo_eps) + ")";
      });

  m.def("ratio_from_logprobs", [](double lp_new, double lp_old) {
    const Ratio r = ratio_from_logprobs(lp_new, lp_old);
    return py::make_tuple(r.value, r.overflow);
  }, py::arg("logp_new"), py::arg("logp_old"), "Returns (ratio, overflowed).");
  m.def("clip_abc", &clip_abc, py::arg("ratio"), py::arg("adv"), py::arg("cfg"));
  m.def("clip_grpo_term", &clip_grpo_term, py::arg("ratio"), py::arg("adv"), py::arg("eps"));
  m.def("quadrant_of", &quadrant_of, py::arg("ratio"), py::arg("adv"));
  m.def("was_clipped", &was_clipped, py::arg("ratio"), py::arg("adv"), py::arg("cfg"), py::arg("mode"));
  m.def("gradient_bound", &gradient_bound, py::arg("a_max"), py::arg("cfg"), py::arg("g_max"));

  m.def("group_advantages",
        [](const std::vector<double>& rewards, bool normalize_std) { return group_advantages(rewards, normalize_std); },
        py::arg("rewards"), py::arg("normalize_std") = false);

  m.def("pass_at_k", &pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
  m.def("avg_at_n", [](const std::vector<std::pair<int, int>>& n_c) {
    std::vector<EvalSample> samples;
    for (std::size_t i = 0; i < n_c.size(); ++i) samples.push_back({i, n_c[i].first, n_c[i].second});
    return avg_at_n(samples);
  }, py::arg("samples"), "Mean of c/n over (n, c) pairs.");

  py::class_<PolicyShape>(m, "PolicyShape")
      .def(py::init([](int v, int k, int h) { return PolicyShape{v, k, h}; }), py::arg("vocab_size") = 16,
           py::arg("context_len") = 2, py::arg("hidden") = 32)
      .def_readwrite("vocab_size", &PolicyShape::vocab_size)
      .def_readwrite("context_len", &PolicyShape::context_len)
      .def_readwrite("hidden", &PolicyShape::hidden);

  py::class_<PolicyParams>(m, "Policy")
      .def(py::init<PolicyShape>(), py::arg("shape"))
      .def_static("initialized", &PolicyParams::initialized, py::arg("shape"), py::arg("seed"), py::arg("scale") = 0.01)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const PolicyParams& p, const std::filesystem::path& path) { save_checkpoint(p, path); })
      .def_property_readonly("shape", &PolicyParams::shape)
      .def_property_readonly("version", &PolicyParams::version)
      .def_property_readonly("num_params", &PolicyParams::num_params)
      .def_property(
          "weights", [](const PolicyParams& p) { return std::vector<double>(p.weights().begin(), p.weights().end()); },
          [](PolicyParams& p, const std::vector<double>& w) {
            if (w.size() != p.num_params()) throw InvalidInput("weight vector has the wrong size");
            std::copy(w.begin(), w.end(), p.mutable_weights().begin());
          })
      .def("logprob", [](const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& seq) {
        return logprob(p, prompt, seq);
      }, py::arg("prompt"), py::arg("sequence"))
      .def("grad_logprob", [](const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& seq, std::size_t t) {
        return grad_logprob(p, prompt, seq, t);
      }, py::arg("prompt"), py::arg("sequence"), py::arg("token_index"))
      .def("probs", [](const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& seq, std::size_t t) {
        return p.probs(p.context_at(prompt, seq, t));
      }, py::arg("prompt"), py::arg("sequence"), py::arg("token_index"),
         "Next-token distribution at position token_index.")
      .def("sample_group", [](const PolicyParams& p, const TokenSeq& prompt, std::size_t g, std::size_t t,
                              std::uint64_t seed) {
        RngStream rng(seed);
        return sample_group(PolicySnapshot(p), prompt, g, t, rng);
      }, py::arg("prompt"), py::arg("group_size"), py::arg("episode_len"), py::arg("seed"))
      .def("apply_update", [](PolicyParams& p, const std::vector<double>& g, double lr) { apply_update(p, g, lr); },
           py::arg("gradient"), py::arg("lr"));

  py::class_<Task>(m, "Task")
      .def_static("last_token", &Task::last_token, py::arg("vocab_size"), py::arg("episode_len"))
      .def_static("needle", &Task::needle, py::arg("vocab_size"), py::arg("episode_len"), py::arg("needle_pos"))
      .def_property_readonly("name", &Task::name)
      .def_property_readonly("vocab_size", &Task::vocab_size)
      .def_property_readonly("episode_len", &Task::episode_len)
      .def_property_readonly("critical_position", &Task::critical_position)
      .def("target", &Task::target, py::arg("prompt"))
      .def("reward", [](const Task& t, const TokenSeq& prompt, const TokenSeq& seq) { return t.reward(prompt, seq); },
           py::arg("prompt"), py::arg("sequence"))
      .def("misattribution_by_sequence",
           [](const Task& t, const TokenSeq& prompt, const std::vector<TokenSeq>& seqs) {
             GroupRollout g;
             g.prompt = prompt;
             g.sequences = seqs;
             for (const auto& r : score_group(t, 0, prompt, seqs)) g.rewards.push_back(r.reward);
             g.advantages = group_advantages(g.rewards);
             return misattribution_by_sequence(t, g);
           },
           py::arg("prompt"), py::arg("sequences"),
           "Scores the group, computes advantages and returns each sequence's misattribution rate.");

  m.def("load_config", [](const std::string& path) { return to_python(to_json(load_run_config(path))); },
        py::arg("path"), "Parses, validates and returns the fully resolved run config.");

  m.def("train_in_memory", [](const py::object& config) {
    const RunConfig rc = run_config_from(config);
    std::vector<StepTelemetry> series;
    {
      py::gil_scoped_release release;
      series = train_in_memory(rc.train);
    }
    py::list out;
    for (const auto& t : series) out.append(to_python(to_json(t)));
    return out;
  }, py::arg("config"), "Trains from a config path or dict and returns the telemetry as a list of dicts.");

  m.def("train", [](const py::object& config, const std::filesystem::path& out_dir) {
    const RunConfig rc = run_config_from(config);
    py::gil_scoped_release release;
    return train(rc, out_dir).dir;
  }, py::arg("config"), py::arg("out_dir"), "Trains and writes the run directory; returns its path.");

  m.def("evaluate", [](const PolicyParams& policy, const Task& task, std::size_t problems, int n,
                       const std::vector<int>& ks, std::uint64_t seed) {
    const EvalReport rep = evaluate_policy(PolicySnapshot(policy), task, problems, n, ks, seed);
    py::dict out;
    out["avg_at_n"] = rep.avg_at_n;
    py::dict pk;
    for (std::size_t i = 0; i < rep.ks.size(); ++i) pk[py::int_(rep.ks[i])] = rep.pass_at_k[i];
    out["pass_at_k"] = pk;
    return out;
  }, py::arg("policy"), py::arg("task"), py::arg("problems"), py::arg("n"), py::arg("ks"), py::arg("seed"));
}
