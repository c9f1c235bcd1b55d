#include "mirgan/metrics.hpp"

#include "mirgan/core.hpp"

#include <charconv>
#include <sstream>
#include <vector>

namespace mirgan {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> parse_opt(const std::string& field, const char* name) {
  if (field.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw FormatError(std::string("metrics: bad ") + name + " value '" + field + "'");
  return v;
}

}  // namespace

std::string metrics_row_csv(const MetricsRow& r) {
  std::string out = std::to_string(r.step);
  for (const auto* f : {&r.l_rec, &r.l_d, &r.l_g, &r.l_mim, &r.total_phase_b,
                        &r.mean_d_on_inv, &r.mean_d_on_audio, &r.mean_d_on_visual,
                        &r.grad_norm_d, &r.grad_norm_rest, &r.val_ter_clean,
                        &r.val_ter_noisy}) {
    out += ',';
    out += opt_field(*f);
  }
  return out;
}

MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 13)
    throw FormatError("metrics: expected 13 fields, got " + std::to_string(fields.size()));

  MetricsRow r;
  {
    long step = 0;
    auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), step);
    if (res.ec != std::errc() || res.ptr != fields[0].data() + fields[0].size())
      throw FormatError("metrics: bad step value '" + fields[0] + "'");
    r.step = step;
  }
  r.l_rec = parse_opt(fields[1], "L_rec");
  r.l_d = parse_opt(fields[2], "L_D");
  r.l_g = parse_opt(fields[3], "L_G");
  r.l_mim = parse_opt(fields[4], "L_MIM");
  r.total_phase_b = parse_opt(fields[5], "total_phaseB");
  r.mean_d_on_inv = parse_opt(fields[6], "mean_D_on_inv");
  r.mean_d_on_audio = parse_opt(fields[7], "mean_D_on_audio");
  r.mean_d_on_visual = parse_opt(fields[8], "mean_D_on_visual");
  r.grad_norm_d = parse_opt(fields[9], "grad_norm_D");
  r.grad_norm_rest = parse_opt(fields[10], "grad_norm_rest");
  r.val_ter_clean = parse_opt(fields[11], "val_TER_clean");
  r.val_ter_noisy = parse_opt(fields[12], "val_TER_noisy");
  return r;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) {
  if (append) {
    if (!std::filesystem::exists(path))
      throw InputError("metrics: cannot append, " + path.string() + " does not exist");
    out_.open(path, std::ios::app);
  } else {
    out_.open(path, std::ios::trunc);
  }
  if (!out_) throw InputError("metrics: cannot open " + path.string());
  if (!append) out_ << kMetricsHeader << '\n';
}

void MetricsWriter::write(const MetricsRow& row) { out_ << metrics_row_csv(row) << '\n'; }

void MetricsWriter::flush() { out_.flush(); }

}  // namespace mirgan
