#include "abcgrpo/report.hpp"

#include <fstream>

#include "abcgrpo/config.hpp"
#include "abcgrpo/error.hpp"
#include "abcgrpo/format.hpp"
#include "abcgrpo/trainer.hpp"

namespace abcgrpo {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& run_dir,
                                                   const std::filesystem::path& out_dir) {
  const auto telemetry_path = run_dir / "telemetry.jsonl";
  if (!std::filesystem::exists(telemetry_path)) throw IoError("missing telemetry: " + telemetry_path.string());
  const auto series = read_telemetry(telemetry_path);

  std::vector<int> ks;
  if (std::filesystem::exists(run_dir / "config.json")) {
    ks = load_run_config(run_dir / "config.json").train.eval.ks;
  } else {
    for (const auto& t : series) {
      if (t.eval) {
        ks = t.eval->ks;
        break;
      }
    }
  }

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  {
    auto path = out_dir / "entropy.csv";
    auto out = open_csv(path);
    out << "step,entropy\n";
    for (const auto& t : series) out << t.step << ',' << format_double(t.entropy) << '\n';
    written.push_back(path);
  }
  {
    auto path = out_dir / "reward.csv";
    auto out = open_csv(path);
    out << "step,mean_reward\n";
    for (const auto& t : series) out << t.step << ',' << format_double(t.mean_reward) << '\n';
    written.push_back(path);
  }
  {
    auto path = out_dir / "quadrant_share.csv";
    auto out = open_csv(path);
    out << "step,q1,q2,q3,q4\n";
    for (const auto& t : series) {
      out << t.step;
      for (double s : t.quadrant_shares()) out << ',' << format_double(s);
      out << '\n';
    }
    written.push_back(path);
  }
  {
    auto path = out_dir / "pass_at_k.csv";
    auto out = open_csv(path);
    out << "step,avg_at_n";
    for (int k : ks) out << ",pass@" << k;
    out << '\n';
    for (const auto& t : series) {
      out << t.step << ',';
      if (t.eval) out << format_double(t.eval->avg_at_n);
      for (int k : ks) {
        out << ',';
        if (!t.eval) continue;
        for (std::size_t j = 0; j < t.eval->ks.size(); ++j) {
          if (t.eval->ks[j] == k) out << format_double(t.eval->pass_at_k[j]);
        }
      }
      out << '\n';
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace abcgrpo
