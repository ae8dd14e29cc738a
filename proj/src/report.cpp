#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <system_error>
#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

#include "crowdflow/harness.hpp"
#include "detail.hpp"

namespace crowdflow {

namespace {

constexpr const char* kVersion = "0.1.0";

nlohmann::json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.parent_path() / fmt::format(".{}.tmp-{}", path.filename().string(), ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out << content;
    out.flush();
    if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error(fmt::format("cannot rename into '{}': {}", path.string(), ec.message()));
  }
}

}  // namespace

std::string report_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["experiment"] = std::string(to_string(report.kind));
  j["config_hash"] = report.config_hash;
  j["versions"] = {{"crowdflow", kVersion}, {"compiler", __VERSION__}, {"cxx_standard", __cplusplus}};
  auto& crit = j["criteria"] = nlohmann::json::array();
  for (const auto& c : report.criteria)
    crit.push_back({{"id", c.id},
                    {"description", c.description},
                    {"value", number_json(c.value)},
                    {"threshold", number_json(c.threshold)},
                    {"pass", c.pass}});
  j["pass"] = report.all_pass();
  auto& metrics = j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : report.metrics) metrics[k] = number_json(v);
  auto& notes = j["notes"] = nlohmann::json::object();
  for (const auto& [k, v] : report.notes) notes[k] = v;
  auto& tables = j["tables"] = nlohmann::json::array();
  for (const auto& t : report.tables) tables.push_back(t.name + ".csv");
  return j.dump(2) + "\n";
}

std::string table_csv(const Table& table) {
  std::string out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) out += (c ? "," : "") + table.columns[c];
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + detail::num(row[c]);
    out += '\n';
  }
  return out;
}

std::string table_svg(const Table& table, bool log_x, bool log_y) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  const auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
  const auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  const auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!log_x || x > 0) && (!log_y || y > 0);
  };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& row : table.rows)
    for (std::size_t c = 1; c < row.size(); ++c)
      if (usable(row[0], row[c])) {
        x0 = std::min(x0, tx(row[0]));
        x1 = std::max(x1, tx(row[0]));
        y0 = std::min(y0, ty(row[c]));
        y1 = std::max(y1, ty(row[c]));
      }
  if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };

  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n"
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
      W, H, W, H, W / 2, table.name, L, T, W - L - R, H - T - B);
  const auto label = [](double v, bool log) { return fmt::format("{:.3g}", log ? std::pow(10.0, v) : v); };
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0;
    const double fy = y0 + (y1 - y0) * k / 4.0;
    const double sx = L + (W - L - R) * k / 4.0;
    const double sy = H - B - (H - T - B) * k / 4.0;
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                       sx, H - B + 16, label(fx, log_x));
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                       L - 6, sy + 4, label(fy, log_y));
  }
  if (!table.columns.empty())
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
                       W / 2, H - 12, table.columns[0]);
  for (std::size_t c = 1; c < table.columns.size(); ++c) {
    const char* color = kColors[(c - 1) % 6];
    std::string pts;
    for (const auto& row : table.rows)
      if (c < row.size() && usable(row[0], row[c])) pts += fmt::format("{:.2f},{:.2f} ", px(row[0]), py(row[c]));
    if (!pts.empty())
      svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, pts);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>\n",
                       L + 8, T + 14 * c, color, table.columns[c]);
  }
  svg += "</svg>\n";
  return svg;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& out_dir, bool plots) {
  std::filesystem::create_directories(out_dir);
  for (const auto& t : report.tables) {
    write_atomic(out_dir / (t.name + ".csv"), table_csv(t));
    if (plots) {
      const bool logs = t.name == "converge_m" || t.name == "converge_h";
      write_atomic(out_dir / (t.name + ".svg"), table_svg(t, logs, logs || t.name == "longtime"));
    }
  }
  for (const auto& a : report.artifacts) write_atomic(out_dir / a.file_name, a.content);
  // Written last so its presence marks a complete output directory.
  write_atomic(out_dir / "report.json", report_json(report));
}

}  // namespace crowdflow
