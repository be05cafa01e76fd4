#pragma once

#include <filesystem>
#include <vector>

namespace abcgrpo {

/// Turns a run directory's telemetry.jsonl into one CSV per panel:
///   entropy.csv         step,entropy
///   reward.csv          step,mean_reward
///   quadrant_share.csv  step,q1,q2,q3,q4 (shares of clip events, zeros when none)
///   pass_at_k.csv       step,avg_at_n,pass@k... (blank cells on steps without eval)
/// Every file has one data row per telemetry line. Returns the written paths.
std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& run_dir,
                                                   const std::filesystem::path& out_dir);

}  // namespace abcgrpo
