#include "bret/objectives.hpp"

#include <fstream>
#include <stdexcept>

#include "bret/data.hpp"

namespace bret {

namespace {
constexpr const char* kHeader = "# bret-metrics-v1\tstep\tloss_enc\tloss_dec\tloss_total";
}

void save_metrics_log(const std::string& path, const PretrainMetricsLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << kHeader << '\n';
  for (const auto& e : log.entries)
    out << e.step << '\t' << format_double(e.loss_enc) << '\t' << format_double(e.loss_dec)
        << '\t' << format_double(e.loss_total) << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
}

PretrainMetricsLog load_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw std::runtime_error(path + ": missing metrics header");
  PretrainMetricsLog log;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    PretrainLogEntry e;
    size_t p1 = line.find('\t');
    size_t p2 = p1 == std::string::npos ? std::string::npos : line.find('\t', p1 + 1);
    size_t p3 = p2 == std::string::npos ? std::string::npos : line.find('\t', p2 + 1);
    if (p3 == std::string::npos || line.find('\t', p3 + 1) != std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      e.step = std::stoi(line.substr(0, p1));
      e.loss_enc = std::stod(line.substr(p1 + 1, p2 - p1 - 1));
      e.loss_dec = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
      e.loss_total = std::stod(line.substr(p3 + 1));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record");
    }
    if (!log.entries.empty() && e.step <= log.entries.back().step)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": steps not increasing");
    log.entries.push_back(e);
  }
  return log;
}

}  // namespace bret
