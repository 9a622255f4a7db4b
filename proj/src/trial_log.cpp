#include "relval/trial_log.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>

#include "relval/error.hpp"

namespace relval {

using ojson = nlohmann::ordered_json;

std::string to_json_line(const TrialRecord& r) {
  ojson j;
  j["schema_version"] = kLogSchemaVersion;
  j["task"] = r.task;
  j["style"] = r.style;
  j["agent"] = r.agent;
  j["run"] = r.run;
  j["phase"] = std::string(phase_name(r.phase));
  j["trial"] = r.trial;
  if (r.context) j["context"] = *r.context;
  if (r.pair) j["pair"] = *r.pair;
  ojson letters = ojson::array();
  for (char c : r.offered) letters.push_back(std::string(1, c));
  j["offered"] = letters;
  j["options"] = r.options;
  j["first"] = std::string(1, r.first);
  j["choice"] = r.choice ? ojson(std::string(1, *r.choice)) : ojson(nullptr);
  j["choice_option"] = r.choice_option ? ojson(*r.choice_option) : ojson(nullptr);
  j["valid"] = r.valid();
  if (r.phase == Phase::training) j["outcomes"] = r.outcomes;
  j["reply"] = r.reply;
  j["prompt_hash"] = r.prompt_hash;
  if (r.prompt) j["prompt"] = *r.prompt;
  j["attempts"] = r.attempts;
  if (r.latency_ms) j["latency_ms"] = *r.latency_ms;
  if (!r.provider_meta.empty()) j["provider"] = ojson::parse(r.provider_meta);
  j["timestamp"] = r.timestamp;
  return j.dump();
}

namespace {

char one_letter(const ojson& v, const char* field) {
  const auto s = v.get<std::string>();
  if (s.size() != 1) throw SchemaError(std::string("log field '") + field + "' must be a single letter");
  return s[0];
}

}  // namespace

TrialRecord parse_json_line(const std::string& line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const ojson::exception& e) {
    throw SchemaError(std::string("log line is not JSON: ") + e.what());
  }
  if (!j.contains("schema_version")) throw SchemaError("log line lacks schema_version");
  const int version = j["schema_version"].get<int>();
  if (version != kLogSchemaVersion)
    throw SchemaError("log schema_version " + std::to_string(version) + " is not supported (this build reads " +
                      std::to_string(kLogSchemaVersion) +
                      "); regenerate the log with this version or convert it with a matching release first");
  try {
    TrialRecord r;
    r.task = j.at("task").get<std::string>();
    r.style = j.at("style").get<std::string>();
    r.agent = j.value("agent", "");
    r.run = j.at("run").get<int>();
    r.phase = parse_phase(j.at("phase").get<std::string>());
    r.trial = j.at("trial").get<int>();
    if (j.contains("context")) r.context = j["context"].get<int>();
    if (j.contains("pair")) r.pair = j["pair"].get<int>();
    for (const auto& l : j.at("offered")) r.offered.push_back(one_letter(l, "offered"));
    r.options = j.at("options").get<std::vector<std::string>>();
    if (r.options.size() != r.offered.size()) throw SchemaError("log fields 'offered' and 'options' differ in length");
    r.first = one_letter(j.at("first"), "first");
    if (!j.at("choice").is_null()) r.choice = one_letter(j["choice"], "choice");
    if (!j.at("choice_option").is_null()) r.choice_option = j["choice_option"].get<std::string>();
    if (j.contains("outcomes")) r.outcomes = j["outcomes"].get<std::vector<double>>();
    if (r.phase == Phase::training && r.outcomes.size() != r.options.size())
      throw SchemaError("training record needs one outcome per offered option");
    r.reply = j.value("reply", "");
    r.prompt_hash = j.value("prompt_hash", "");
    if (j.contains("prompt")) r.prompt = j["prompt"].get<std::string>();
    r.attempts = j.value("attempts", 1);
    if (j.contains("latency_ms")) r.latency_ms = j["latency_ms"].get<long long>();
    if (j.contains("provider")) r.provider_meta = j["provider"].dump();
    r.timestamp = j.value("timestamp", "");
    return r;
  } catch (const ojson::exception& e) {
    throw SchemaError(std::string("malformed log record: ") + e.what());
  }
}

std::vector<TrialRecord> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open log " + path.string());
  std::vector<TrialRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TrialRecord> read_logs(const std::vector<std::filesystem::path>& paths) {
  std::vector<TrialRecord> all;
  for (const auto& p : paths) {
    auto part = read_log(p);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

ChoiceData to_choice_data(const std::vector<TrialRecord>& records) {
  ChoiceData data;
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.options.begin(), r.options.end());
  data.option_ids.assign(ids.begin(), ids.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.option_ids.size(); ++i) index[data.option_ids[i]] = i;

  std::map<int, RunChoices> runs;
  for (const auto& r : records) {
    if (r.options.size() < 2 || r.options.size() > 3) throw SchemaError("records must offer 2 or 3 options");
    ChoiceTrial t;
    t.phase = r.phase;
    t.n_offered = r.options.size();
    for (std::size_t k = 0; k < t.n_offered; ++k) {
      t.offered[k] = index.at(r.options[k]);
      if (r.phase == Phase::training) t.outcomes[k] = r.outcomes.at(k);
      if (r.choice && r.offered[k] == *r.choice) t.chosen = static_cast<int>(k);
    }
    auto& run = runs[r.run];
    run.run = r.run;
    run.trials.push_back(t);
  }
  for (auto& [id, run] : runs) data.runs.push_back(std::move(run));
  return data;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace relval
