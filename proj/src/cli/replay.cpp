#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hitmdp/cli/cli.h"
#include "hitmdp/vmoc/trainer.h"

namespace hitmdp::cli {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& s, bool& ok) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  ok = ec == std::errc() && ptr == end && !s.empty();
  return v;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::vector<double> trailing_mean(const std::vector<double>& x, int window) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t n = std::min<std::size_t>(i + 1, window);
    double sum = 0.0;
    for (std::size_t j = i + 1 - n; j <= i; ++j) sum += x[j];
    out[i] = sum / static_cast<double>(n);
  }
  return out;
}

MetricsSummary replay_metrics(const std::string& path, int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics file: " + path);
  std::vector<std::string> header = split_csv(vmoc::kMetricsHeader);
  const std::size_t cols = header.size();

  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw std::runtime_error(path + ":1: empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != vmoc::kMetricsHeader)
    throw std::runtime_error(path + ":1: header must be " + std::string(vmoc::kMetricsHeader));

  std::vector<std::vector<double>> raw(cols);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == EOF) break;
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty row");
    }
    std::vector<std::string> f = split_csv(line);
    if (f.size() != cols)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(cols) + " fields, got " + std::to_string(f.size()));
    for (std::size_t c = 0; c < cols; ++c) {
      bool ok = false;
      double v = parse_number(f[c], ok);
      if (!ok)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad value '" + f[c] +
                                 "' in column " + header[c]);
      raw[c].push_back(v);
    }
  }
  if (raw[0].empty()) throw std::runtime_error(path + ": no data rows");

  MetricsSummary s;
  s.rows = static_cast<int>(raw[0].size());
  s.window = window;
  std::vector<std::vector<double>> sm(cols);
  sm[0] = raw[0];
  for (std::size_t c = 1; c < cols; ++c) sm[c] = trailing_mean(raw[c], window);

  s.final_step = static_cast<long>(raw[0].back());
  s.final_return = raw[1].back();
  s.final_return_smoothed = sm[1].back();
  auto best = std::max_element(sm[1].begin(), sm[1].end());
  s.best_return_smoothed = *best;
  s.best_step = static_cast<long>(raw[0][best - sm[1].begin()]);
  for (std::size_t c = 3; c < cols; ++c) s.series.push_back({header[c], sm[c].front(), sm[c].back()});

  s.smoothed.assign(s.rows, std::vector<double>(cols));
  for (int r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) s.smoothed[r][c] = sm[c][r];
  return s;
}

std::string format_summary(const MetricsSummary& s) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-24s %d (window %d)\n", "rows", s.rows, s.window);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-24s %ld\n", "final step", s.final_step);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-24s %14s\n", "final return", fmt(s.final_return).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-24s %14s\n", "final return (smoothed)",
                fmt(s.final_return_smoothed).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-24s %14s  at step %ld\n", "best return (smoothed)",
                fmt(s.best_return_smoothed).c_str(), s.best_step);
  out += buf;
  std::snprintf(buf, sizeof buf, "\n%-24s %14s %14s %14s\n", "series", "first", "final", "change");
  out += buf;
  for (const SeriesSummary& r : s.series) {
    std::snprintf(buf, sizeof buf, "%-24s %14s %14s %14s\n", r.name.c_str(), fmt(r.first).c_str(),
                  fmt(r.final).c_str(), fmt(r.final - r.first).c_str());
    out += buf;
  }
  return out;
}

nlohmann::json to_json(const MetricsSummary& s) {
  nlohmann::json j;
  j["rows"] = s.rows;
  j["window"] = s.window;
  j["final_step"] = s.final_step;
  j["final_return"] = s.final_return;
  j["final_return_smoothed"] = s.final_return_smoothed;
  j["best_return_smoothed"] = s.best_return_smoothed;
  j["best_step"] = s.best_step;
  nlohmann::json series = nlohmann::json::object();
  for (const SeriesSummary& r : s.series)
    series[r.name] = {{"first", r.first}, {"final", r.final}, {"change", r.final - r.first}};
  j["series"] = series;
  return j;
}

}  // namespace hitmdp::cli
