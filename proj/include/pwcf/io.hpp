#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pwcf/attacks.hpp"

namespace pwcf::io {

using attacks::PerturbationRecord;

inline constexpr const char* kRecordHeader =
    "sample_id,solver_tag,loss,metric,eps,objective_or_radius,violation,stationarity,"
    "attack_success,sparsity,iterations,wall_time_ms";

// Reals are printed with 17 significant digits; NaN is an empty field.
// Min-radius rows carry loss "none" and an empty eps. wall_time_ms is left
// empty unless `timings` is set, so reruns are byte-identical.
void WriteRecords(std::ostream& out, const std::vector<PerturbationRecord>& records,
                  bool timings = false);
std::string FormatRecords(const std::vector<PerturbationRecord>& records, bool timings = false);

// Inverse of WriteRecords. x_prime and delta stay empty. Throws kIo with the
// offending line on malformed input.
std::vector<PerturbationRecord> ParseRecords(std::istream& in);
std::vector<PerturbationRecord> ParseRecords(const std::string& text);

// sample_id,solver_tag,eps,d0,...,d{n-1}
void WriteDeltas(std::ostream& out, const std::vector<PerturbationRecord>& records);

std::string FormatReal(double v);

std::string ReadFile(const std::string& path);
// Creates parent directories.
void WriteFile(const std::string& path, const std::string& contents);

// FNV-1a, 64 bit.
std::uint64_t Fnv1a(const std::string& bytes);
std::string Hex(std::uint64_t v);

}  // namespace pwcf::io
