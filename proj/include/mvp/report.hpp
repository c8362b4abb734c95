#pragma once

#include "mvp/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace mvp {

// All artifacts end with a summary line "mean,half_width,n,seed,config_digest"
// so every CSV carries its seed and config digest. Reals are printed as fixed
// 6-decimal values; output is byte-stable for identical inputs.
inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string eval_report_csv(const EvalReport& r) {
  std::string s = "task,way,shot,accuracy,lr,alpha\n";
  for (const auto& row : r.rows)
    s += std::to_string(row.task) + "," + std::to_string(row.way) + "," +
         std::to_string(row.shot) + "," + format_real(row.accuracy) + "," +
         format_real(row.lr) + "," + format_real(row.alpha) + "\n";
  s += format_real(r.mean) + "," + format_real(r.half_width) + "," + std::to_string(r.n_tasks) +
       "," + std::to_string(r.seed) + "," + r.config_digest + "\n";
  return s;
}

inline std::string trace_csv(const std::vector<TraceRow>& trace, std::uint64_t seed,
                             const std::string& digest) {
  std::string s = "episode,way,shot,loss\n";
  double sum = 0.0;
  for (const auto& row : trace) {
    s += std::to_string(row.episode) + "," + std::to_string(row.way) + "," +
         std::to_string(row.shot) + "," + format_real(row.loss) + "\n";
    sum += row.loss;
  }
  const int n = static_cast<int>(trace.size());
  const double mean = n > 0 ? sum / n : 0.0;
  double hw = 0.0;
  if (n > 1) {
    double ss = 0.0;
    for (const auto& row : trace) ss += (row.loss - mean) * (row.loss - mean);
    hw = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
  }
  s += format_real(mean) + "," + format_real(hw) + "," + std::to_string(n) + "," +
       std::to_string(seed) + "," + digest + "\n";
  return s;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows, std::uint64_t seed,
                             const std::string& digest) {
  std::string s = "shot,batch,rpr_mean_s,pixel_mean_s\n";
  double sum = 0.0;
  for (const auto& row : rows) {
    s += std::to_string(row.shot) + "," + std::to_string(row.batch) + "," +
         format_real(row.rpr_mean_s) + "," + format_real(row.pixel_mean_s) + "\n";
    sum += row.rpr_mean_s;
  }
  const int n = static_cast<int>(rows.size());
  s += format_real(n > 0 ? sum / n : 0.0) + ",0.000000," + std::to_string(n) + "," +
       std::to_string(seed) + "," + digest + "\n";
  return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mvp
