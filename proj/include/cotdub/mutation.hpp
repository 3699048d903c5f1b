#pragma once

// Single-edit corruptions of a canonically rendered trace. They operate on the
// raw text with plain string search, independent of the parser.

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cotdub/cot_trace.hpp"

namespace cotdub {

enum class Mutation { delete_tag, swap_blocks, duplicate_block, remove_step, blank_section };

inline constexpr std::array<Mutation, 5> kAllMutations{Mutation::delete_tag, Mutation::swap_blocks,
                                                       Mutation::duplicate_block, Mutation::remove_step,
                                                       Mutation::blank_section};

inline std::string_view to_string(Mutation m) {
  switch (m) {
    case Mutation::delete_tag: return "delete_tag";
    case Mutation::swap_blocks: return "swap_blocks";
    case Mutation::duplicate_block: return "duplicate_block";
    case Mutation::remove_step: return "remove_step";
    case Mutation::blank_section: return "blank_section";
  }
  return "?";
}

namespace detail {

struct BlockSpan {
  std::size_t begin;          // offset of the opening tag
  std::size_t end;            // one past the closing tag
  std::size_t content_begin;  // one past the opening tag
  std::size_t content_end;    // offset of the closing tag
};

inline BlockSpan locate_block(std::string_view text, Section s) {
  const std::string open = open_tag(s);
  const std::string close = close_tag(s);
  const std::size_t b = text.find(open);
  const std::size_t c = text.find(close);
  if (b == std::string_view::npos || c == std::string_view::npos || c < b) {
    throw std::invalid_argument("apply_mutation: input is not a canonical trace");
  }
  return {b, c + close.size(), b + open.size(), c};
}

}  // namespace detail

/// Applies one mutation to a canonical trace. `choice` selects the target
/// (tag, block pair, block, step or section) modulo the number of targets.
inline std::string apply_mutation(std::string_view canonical, Mutation m, std::size_t choice) {
  std::string text(canonical);
  switch (m) {
    case Mutation::delete_tag: {
      const Section s = kSections[(choice % 8) / 2];
      const std::string tag = (choice % 2) ? close_tag(s) : open_tag(s);
      const std::size_t pos = text.find(tag);
      if (pos == std::string::npos) throw std::invalid_argument("apply_mutation: tag not found");
      text.erase(pos, tag.size());
      return text;
    }
    case Mutation::swap_blocks: {
      const std::size_t i = choice % 3;
      const auto a = detail::locate_block(text, kSections[i]);
      const auto b = detail::locate_block(text, kSections[i + 1]);
      const std::string first = text.substr(a.begin, a.end - a.begin);
      const std::string between = text.substr(a.end, b.begin - a.end);
      const std::string second = text.substr(b.begin, b.end - b.begin);
      return text.substr(0, a.begin) + second + between + first + text.substr(b.end);
    }
    case Mutation::duplicate_block: {
      const auto a = detail::locate_block(text, kSections[choice % 4]);
      const std::string block = text.substr(a.begin, a.end - a.begin);
      text.insert(a.end, "\n" + block);
      return text;
    }
    case Mutation::remove_step: {
      const std::string prefix = "Step " + std::to_string(choice % kReasoningSteps + 1) + ". ";
      const auto r = detail::locate_block(text, Section::reasoning);
      const std::size_t pos = text.find(prefix, r.content_begin);
      if (pos == std::string::npos || pos > r.content_end) {
        throw std::invalid_argument("apply_mutation: step not found");
      }
      std::size_t nl = text.find('\n', pos);
      nl = (nl == std::string::npos) ? text.size() : nl + 1;
      text.erase(pos, nl - pos);
      return text;
    }
    case Mutation::blank_section: {
      const auto a = detail::locate_block(text, kSections[choice % 4]);
      text.replace(a.content_begin, a.content_end - a.content_begin, " ");
      return text;
    }
  }
  return text;
}

}  // namespace cotdub
