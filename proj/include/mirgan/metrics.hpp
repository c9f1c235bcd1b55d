#pragma once

// Training metrics schema and byte-stable CSV output. Doubles are printed
// with shortest round-trip formatting ('.' decimal point, no locale), so two
// runs producing equal values produce equal bytes. Absent optionals become
// empty fields; ablations use that to drop whole columns.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

namespace mirgan {

struct MetricsRow {
  long step = 0;
  std::optional<double> l_rec;
  std::optional<double> l_d;
  std::optional<double> l_g;
  std::optional<double> l_mim;
  std::optional<double> total_phase_b;
  std::optional<double> mean_d_on_inv;
  std::optional<double> mean_d_on_audio;
  std::optional<double> mean_d_on_visual;
  std::optional<double> grad_norm_d;
  std::optional<double> grad_norm_rest;
  std::optional<double> val_ter_clean;
  std::optional<double> val_ter_noisy;
};

inline constexpr const char* kMetricsHeader =
    "step,L_rec,L_D,L_G,L_MIM,total_phaseB,mean_D_on_inv,mean_D_on_audio,"
    "mean_D_on_visual,grad_norm_D,grad_norm_rest,val_TER_clean,val_TER_noisy";

// Shortest decimal string that round-trips to the same double.
std::string format_double(double v);

// RFC-4180 quoting: wraps a field containing comma, quote, or newline.
std::string csv_escape(const std::string& field);

std::string metrics_row_csv(const MetricsRow& row);

// Parses one data line back into a row (used by resume and by tests).
MetricsRow parse_metrics_row(const std::string& line);

class MetricsWriter {
 public:
  // append=false truncates and writes the header; append=true expects the
  // header to exist already.
  MetricsWriter(const std::filesystem::path& path, bool append);
  void write(const MetricsRow& row);
  void flush();

 private:
  std::ofstream out_;
};

}  // namespace mirgan
