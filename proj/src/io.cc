#include "pwcf/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace pwcf::io {
namespace {

constexpr int kColumns = 12;

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

[[noreturn]] void Malformed(int line, const std::string& why) {
  throw Error(ErrorCode::kIo, fmt::format("record CSV line {}: {}", line, why));
}

double ParseReal(const std::string& s, int line, const char* column) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    Malformed(line, fmt::format("bad {} '{}'", column, s));
  }
  return v;
}

long ParseInt(const std::string& s, int line, const char* column) {
  char* end = nullptr;
  errno = 0;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    Malformed(line, fmt::format("bad {} '{}'", column, s));
  }
  return v;
}

}  // namespace

std::string FormatReal(double v) {
  if (std::isnan(v)) return "";
  return fmt::format("{:.17g}", v);
}

void WriteRecords(std::ostream& out, const std::vector<PerturbationRecord>& records,
                  bool timings) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    const bool max_loss = r.formulation == attacks::Formulation::kMaxLoss;
    out << r.sample_id << ',' << attacks::ToString(r.solver) << ','
        << (max_loss ? folding::ToString(r.loss) : "none") << ',' << r.metric << ','
        << (max_loss ? FormatReal(r.eps) : "") << ',' << FormatReal(r.objective_or_radius) << ','
        << FormatReal(r.violation) << ',' << FormatReal(r.stationarity) << ','
        << (r.attack_success ? 1 : 0) << ',' << FormatReal(r.sparsity) << ',' << r.iterations
        << ',' << (timings ? FormatReal(r.wall_time_ms) : "") << '\n';
  }
}

std::string FormatRecords(const std::vector<PerturbationRecord>& records, bool timings) {
  std::ostringstream ss;
  WriteRecords(ss, records, timings);
  return ss.str();
}

std::vector<PerturbationRecord> ParseRecords(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, "record CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordHeader) Malformed(1, "unexpected header");
  std::vector<PerturbationRecord> out;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = SplitCsv(line);
    if (static_cast<int>(f.size()) != kColumns) {
      Malformed(number, fmt::format("expected {} fields, got {}", kColumns, f.size()));
    }
    PerturbationRecord r;
    r.sample_id = static_cast<int>(ParseInt(f[0], number, "sample_id"));
    try {
      r.solver = attacks::SolverTagFromString(f[1]);
      if (f[2] == "none") {
        r.formulation = attacks::Formulation::kMinRadius;
        if (!f[4].empty()) Malformed(number, "min-radius row with eps");
      } else {
        r.formulation = attacks::Formulation::kMaxLoss;
        r.loss = folding::LossKindFromString(f[2]);
      }
      attacks::Metric::Parse(f[3]);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kIo) throw;
      Malformed(number, e.what());
    }
    r.metric = f[3];
    r.eps = r.formulation == attacks::Formulation::kMaxLoss ? ParseReal(f[4], number, "eps") : 0.0;
    r.objective_or_radius = ParseReal(f[5], number, "objective_or_radius");
    r.violation = ParseReal(f[6], number, "violation");
    r.stationarity = ParseReal(f[7], number, "stationarity");
    if (f[8] != "0" && f[8] != "1") Malformed(number, "attack_success must be 0 or 1");
    r.attack_success = f[8] == "1";
    r.sparsity = ParseReal(f[9], number, "sparsity");
    r.iterations = static_cast<int>(ParseInt(f[10], number, "iterations"));
    r.wall_time_ms = ParseReal(f[11], number, "wall_time_ms");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PerturbationRecord> ParseRecords(const std::string& text) {
  std::istringstream ss(text);
  return ParseRecords(ss);
}

void WriteDeltas(std::ostream& out, const std::vector<PerturbationRecord>& records) {
  Eigen::Index n = 0;
  for (const auto& r : records) n = std::max(n, r.delta.size());
  out << "sample_id,solver_tag,eps";
  for (Eigen::Index i = 0; i < n; ++i) out << ",d" << i;
  out << '\n';
  for (const auto& r : records) {
    out << r.sample_id << ',' << attacks::ToString(r.solver) << ','
        << (r.formulation == attacks::Formulation::kMaxLoss ? FormatReal(r.eps) : "");
    for (Eigen::Index i = 0; i < n; ++i) {
      out << ',' << (i < r.delta.size() ? FormatReal(r.delta[i]) : "");
    }
    out << '\n';
  }
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, const std::string& contents) {
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path));
  out << contents;
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write to '{}' failed", path));
}

std::uint64_t Fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string Hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

}  // namespace pwcf::io
