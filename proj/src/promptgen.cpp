#include "relval/promptgen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>

#include "relval/error.hpp"
#include "relval/rng.hpp"

namespace relval {

std::string_view variant_name(PromptVariant v) {
  return v == PromptVariant::standard ? "standard" : "comparisons";
}

PromptVariant parse_variant(std::string_view s) {
  if (s == "standard") return PromptVariant::standard;
  if (s == "comparisons") return PromptVariant::comparisons;
  throw ConfigError("unknown prompt style '" + std::string(s) + "' (expected standard or comparisons)");
}

std::string_view mode_name(PromptMode m) { return m == PromptMode::chat ? "chat" : "completion"; }

PromptMode parse_mode(std::string_view s) {
  if (s == "chat") return PromptMode::chat;
  if (s == "completion") return PromptMode::completion;
  throw ConfigError("unknown prompt mode '" + std::string(s) + "' (expected chat or completion)");
}

LetterAssignment assign_letters(std::size_t n_options, Rng& rng) {
  if (n_options > 10) throw Error("at most 10 options can be lettered A-J");
  LetterAssignment letters(n_options);
  for (std::size_t i = 0; i < n_options; ++i) letters[i] = static_cast<char>('A' + i);
  rng.shuffle(std::span<char>(letters));
  return letters;
}

std::string render_instructions(std::string_view task_name) {
  if (task_name == "B2018")
    return "The aim of this task is to maximize your payoffs.\n"
           "There are several slot machines that deliver wins and losses with different probabilities.\n"
           "On each round, you will be asked which of two slot machines you wish to play.\n"
           "Seeking monetary rewards and avoiding monetary losses are equally important.\n"
           "Your total payoff will be the cumulative sum of the money you win across all rounds of the game.";
  if (task_name == "V2023")
    return "You are playing a game that involves choosing between different slot machines.\n"
           "Each slot machine gives 1 point with a particular probability, otherwise 0 points.\n"
           "Some slot machines have a higher probability of reward than others.\n"
           "The goal is to maximize your total payoff over the course of several rounds.\n"
           "Your total payoff will be the cumulative sum of the points you win across all rounds of the game.";
  if (task_name == "HW2023a")
    return "You are playing a game with the goal of winning as much money as possible over the course of "
           "several rounds.\n"
           "In each round, you will be asked which of two slot machines you wish to play.\n"
           "Some slot machines win more money than others on average.\n"
           "Your total payoff will be the cumulative sum of the money you win across all rounds of the game.\n"
           "Remember that your goal is to maximize your total payoff.";
  if (task_name == "BP2023")
    return "In this task, you will be given information about several slot machines in order to decide which "
           "ones you want to play.\n"
           "Some slot machines win more money than others on average.\n"
           "On each trial, you will be asked to choose between two or three different slot machines.\n"
           "Your goal is to make choices that maximize your total payoffs. In other words, you should try to win "
           "as much money as possible.\n"
           "Your total payoff will be the cumulative sum of the money you win across all rounds of the game.";
  if (task_name == "HW2023b")
    return "In this task, you will be given information about several slot machines in order to decide which "
           "ones you want to play.\n"
           "Some slot machines win more money than others on average.\n"
           "Your goal is to make choices that maximize your total payoffs. In other words, you should try to win "
           "as much money as possible.\n"
           "Your total payoff will be the cumulative sum of the money you win across all rounds of the game.";
  throw ConfigError("no instructions for task '" + std::string(task_name) + "'");
}

std::string format_outcome(double value, const Currency& currency) {
  double v = round_to_decimals(value, currency.decimals);
  if (v == 0.0) v = 0.0;  // drops negative zero
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", currency.decimals, std::abs(v));
  const std::string sign = v < 0.0 ? "-" : "";
  if (!currency.symbol.empty()) return sign + currency.symbol + buf;
  const bool singular = std::abs(v) == 1.0;
  return sign + buf + " " + (singular ? currency.unit : currency.unit_plural);
}

namespace {

std::string machine(char letter) { return std::string("slot machine ") + letter; }

std::string machine_list(const std::vector<char>& letters) {
  if (letters.size() == 1) return machine(letters[0]);
  if (letters.size() == 2) return machine(letters[0]) + " and " + machine(letters[1]);
  std::string out;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (i > 0) out += ", ";
    if (i + 1 == letters.size()) out += "and ";
    out += machine(letters[i]);
  }
  return out;
}

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

// Outcomes grouped by equal value, best group first; listed order kept within groups.
std::string comparison_sentences(const std::vector<RoundOutcome>& outcomes) {
  std::vector<double> values;
  for (const auto& o : outcomes) values.push_back(o.reward);
  std::sort(values.begin(), values.end(), std::greater<>());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  std::vector<std::vector<char>> groups;
  for (double v : values) {
    std::vector<char> g;
    for (const auto& o : outcomes)
      if (o.reward == v) g.push_back(o.letter);
    groups.push_back(std::move(g));
  }

  std::string out;
  auto add = [&](const std::string& sentence) {
    if (!out.empty()) out += ' ';
    out += capitalized(sentence) + ".";
  };
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].size() > 1) add(machine_list(groups[i]) + " delivered the same outcome");
    if (i + 1 < groups.size()) add(machine_list(groups[i]) + " delivered more than " + machine_list(groups[i + 1]));
  }
  return out;
}

}  // namespace

std::string render_history(const OutcomeHistory& history, PromptStyle style) {
  if (history.rounds.empty()) return "";
  std::string out = "Outcomes of previous rounds:";
  int round_no = 0;
  for (const auto& round : history.rounds) {
    out += "\nRound " + std::to_string(++round_no) + ":";
    for (const auto& o : round.outcomes)
      out += " " + capitalized(machine(o.letter)) + " delivered " + format_outcome(o.reward, history.currency) + ".";
    if (style.variant == PromptVariant::comparisons) out += " " + comparison_sentences(round.outcomes);
  }
  return out;
}

ChoiceQuery render_choice_query_in_order(std::span<const char> listed, PromptMode mode) {
  if (listed.size() < 2 || listed.size() > 3) throw Error("a choice offers two or three slot machines");
  std::set<char> seen(listed.begin(), listed.end());
  if (seen.size() != listed.size()) throw Error("duplicate letters in choice query");

  ChoiceQuery q;
  q.listed.assign(listed.begin(), listed.end());
  q.first = q.listed.front();
  q.text = "You now face a choice between " + machine_list(q.listed) + ".\n";
  q.text += "Your goal is to maximize your total payoff.\n";
  if (mode == PromptMode::chat)
    q.text +=
        "Which slot machine do you choose? Give your answer like this: I would choose slot machine _. "
        "Do not explain why.";
  else
    q.text += "Q: Which slot machine do you choose?\nA: I would choose slot machine";
  return q;
}

ChoiceQuery render_choice_query(std::span<const char> letters, std::uint64_t order_seed, PromptMode mode) {
  std::vector<char> order(letters.begin(), letters.end());
  Rng rng(order_seed);
  rng.shuffle(std::span<char>(order));
  return render_choice_query_in_order(order, mode);
}

std::string assemble_prompt(std::string_view instructions, std::string_view history_text,
                            std::string_view query_text) {
  std::string out(instructions);
  out += "\n\n";
  if (!history_text.empty()) {
    out += history_text;
    out += "\n\n";
  }
  out += query_text;
  return out;
}

ParsedChoice parse_choice(std::string_view raw, std::span<const char> offered) {
  static const std::regex pattern(R"(i\s+would\s+choose\s+slot\s+machine\s*[:\s"'`*\[\(]*([a-z])(?![a-z0-9]))",
                                  std::regex::icase | std::regex::ECMAScript);
  ParsedChoice out;
  out.raw = std::string(raw);
  std::set<char> found;
  for (std::sregex_iterator it(out.raw.begin(), out.raw.end(), pattern), end; it != end; ++it)
    found.insert(static_cast<char>(std::toupper(static_cast<unsigned char>((*it)[1].str()[0]))));
  if (found.size() != 1) return out;
  const char letter = *found.begin();
  if (std::find(offered.begin(), offered.end(), letter) != offered.end()) out.letter = letter;
  return out;
}

std::string format_reply(char letter) { return std::string("I would choose slot machine ") + letter + "."; }

std::string text_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string prompt_format_hash() {
  OutcomeHistory h;
  h.currency = Currency{"dollars", "$", "", "", 2};
  h.rounds = {{1, {{'A', 27.0}, {'B', 18.0}}}, {2, {{'C', 5.0}, {'D', 5.0}, {'E', -1.5}}}};
  std::string all;
  const std::array<char, 2> letters{'A', 'B'};
  for (auto v : {PromptVariant::standard, PromptVariant::comparisons})
    for (auto m : {PromptMode::chat, PromptMode::completion})
      all += assemble_prompt(render_instructions("HW2023a"), render_history(h, {v, m}),
                             render_choice_query_in_order(letters, m).text);
  return text_hash(all);
}

}  // namespace relval
