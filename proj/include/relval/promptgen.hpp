#pragma once

// Natural-language rendering of the bandit task and parsing of replies.
//
// Wording of outcome lines and comparison sentences is frozen by the golden
// files under tests/fixtures/prompts. The standard style must never contain
// comparative language; only the comparisons style adds it.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relval/taskdef.hpp"

namespace relval {

class Rng;

enum class PromptVariant { standard, comparisons };
// completion mode ends the prompt mid-sentence for raw pretrained models.
enum class PromptMode { chat, completion };

struct PromptStyle {
  PromptVariant variant = PromptVariant::standard;
  PromptMode mode = PromptMode::chat;
};

std::string_view variant_name(PromptVariant v);
PromptVariant parse_variant(std::string_view s);
std::string_view mode_name(PromptMode m);
PromptMode parse_mode(std::string_view s);

struct RoundOutcome {
  char letter = 'A';
  double reward = 0.0;
};

struct HistoryRound {
  int context_id = 0;
  std::vector<RoundOutcome> outcomes;  // in the order the machines were listed that round
};

struct OutcomeHistory {
  Currency currency;
  std::vector<HistoryRound> rounds;
};

// letters[option index]; a random permutation of the first n letters of A-J.
using LetterAssignment = std::vector<char>;
LetterAssignment assign_letters(std::size_t n_options, Rng& rng);

// Verbatim task instructions. Throws ConfigError for an unknown task name.
std::string render_instructions(std::string_view task_name);

std::string format_outcome(double value, const Currency& currency);

std::string render_history(const OutcomeHistory& history, PromptStyle style);

struct ChoiceQuery {
  std::string text;
  std::vector<char> listed;  // letters in the order they appear in the text
  char first = 'A';
};

// Throws Error on fewer than 2, more than 3, or duplicate letters.
ChoiceQuery render_choice_query(std::span<const char> letters, std::uint64_t order_seed,
                                PromptMode mode = PromptMode::chat);
ChoiceQuery render_choice_query_in_order(std::span<const char> listed, PromptMode mode = PromptMode::chat);

// instructions, blank line, history (if any), blank line, query.
std::string assemble_prompt(std::string_view instructions, std::string_view history_text,
                            std::string_view query_text);

struct ParsedChoice {
  std::string raw;
  std::optional<char> letter;  // empty = invalid
  bool valid() const { return letter.has_value(); }
};

ParsedChoice parse_choice(std::string_view raw, std::span<const char> offered);

// Reply a conforming agent would give.
std::string format_reply(char letter);

// Stable 64-bit FNV-1a digest, hex-encoded.
std::string text_hash(std::string_view text);

// Digest of a canonical rendering in every style; changes iff any prompt wording changes.
std::string prompt_format_hash();

}  // namespace relval
