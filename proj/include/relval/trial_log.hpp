#pragma once

// JSONL trial log: one TrialRecord per line, schema-versioned.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "relval/cogmodel.hpp"

namespace relval {

inline constexpr int kLogSchemaVersion = 1;

struct TrialRecord {
  std::string task;
  std::string style;
  std::string agent;
  int run = 0;
  Phase phase = Phase::training;
  int trial = 0;                 // index within the phase
  std::optional<int> context;    // training: context id
  std::optional<int> pair;       // transfer: index into the canonical pair enumeration
  std::vector<char> offered;     // letters, listed order
  std::vector<std::string> options;  // option ids, listed order
  char first = 'A';
  std::optional<char> choice;
  std::optional<std::string> choice_option;
  std::vector<double> outcomes;  // training only, aligned with `options`
  std::string reply;
  std::string prompt_hash;
  std::optional<std::string> prompt;
  int attempts = 1;
  std::optional<long long> latency_ms;
  std::string provider_meta;
  std::string timestamp;

  bool valid() const { return choice.has_value(); }
};

std::string to_json_line(const TrialRecord& r);
// Throws SchemaError (with a migration hint on version mismatch).
TrialRecord parse_json_line(const std::string& line);

std::vector<TrialRecord> read_log(const std::filesystem::path& path);
std::vector<TrialRecord> read_logs(const std::vector<std::filesystem::path>& paths);

// Groups records by run (ascending) keeping trial order; option indices
// follow the sorted set of option ids found in the records.
ChoiceData to_choice_data(const std::vector<TrialRecord>& records);

std::string utc_timestamp();

}  // namespace relval
