#pragma once

// Four-tag reasoning trace: data model, canonical renderer, strict parser and
// format validator.
//
// Canonical text form:
//
//   <SUMMARY>summary</SUMMARY>
//   <CAPTION>caption</CAPTION>
//   <REASONING>
//   Step 1. ...
//   Step 2. ...
//   Step 3. ...
//   Step 4. ...
//   </REASONING>
//   <CONCLUSION>scene=<v>; gender=<v>; age=<v>; emotion=<v></CONCLUSION>
//
// Each tag appears exactly once, blocks appear in this order, and only
// whitespace may sit between blocks.

#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cotdub/labels.hpp"

namespace cotdub {

inline constexpr std::size_t kReasoningSteps = 4;

struct ReasoningStep {
  int index = 0;
  std::string text;

  friend bool operator==(const ReasoningStep&, const ReasoningStep&) = default;
};

struct CoTTrace {
  std::string summary;
  std::string caption;
  std::vector<ReasoningStep> reasoning_steps;
  Conclusion conclusion;

  friend bool operator==(const CoTTrace&, const CoTTrace&) = default;
};

enum class ViolationCode {
  missing_tag,
  unclosed_tag,
  misordered_tag,
  duplicate_tag,
  wrong_step_count,
  empty_section,
  stray_text,
  bad_conclusion,
};

inline std::string_view to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::missing_tag: return "missing_tag";
    case ViolationCode::unclosed_tag: return "unclosed_tag";
    case ViolationCode::misordered_tag: return "misordered_tag";
    case ViolationCode::duplicate_tag: return "duplicate_tag";
    case ViolationCode::wrong_step_count: return "wrong_step_count";
    case ViolationCode::empty_section: return "empty_section";
    case ViolationCode::stray_text: return "stray_text";
    case ViolationCode::bad_conclusion: return "bad_conclusion";
  }
  return "?";
}

struct Violation {
  ViolationCode code;
  std::size_t location = 0;  // byte offset into the checked text
  std::string message;
};

struct FormatReport {
  std::vector<Violation> violations;

  bool is_valid() const { return violations.empty(); }

  bool has(ViolationCode code) const {
    for (const auto& v : violations) {
      if (v.code == code) return true;
    }
    return false;
  }

  std::size_t count(ViolationCode code) const {
    std::size_t n = 0;
    for (const auto& v : violations) n += v.code == code ? 1 : 0;
    return n;
  }
};

using ParseResult = std::variant<CoTTrace, FormatReport>;

struct FormatCheck {
  bool f_true = false;
  FormatReport report;
};

enum class Section { summary, caption, reasoning, conclusion };

inline constexpr std::array<Section, 4> kSections{Section::summary, Section::caption, Section::reasoning,
                                                  Section::conclusion};

inline constexpr std::string_view section_name(Section s) {
  switch (s) {
    case Section::summary: return "SUMMARY";
    case Section::caption: return "CAPTION";
    case Section::reasoning: return "REASONING";
    case Section::conclusion: return "CONCLUSION";
  }
  return "";
}

inline std::string open_tag(Section s) { return "<" + std::string(section_name(s)) + ">"; }
inline std::string close_tag(Section s) { return "</" + std::string(section_name(s)) + ">"; }

namespace detail {

inline bool is_blank(std::string_view s) {
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline bool contains_tag_markup(std::string_view s) {
  for (Section sec : kSections) {
    if (s.find(open_tag(sec)) != std::string_view::npos || s.find(close_tag(sec)) != std::string_view::npos) {
      return true;
    }
  }
  return false;
}

struct TagToken {
  Section section;
  bool closing;
  std::size_t offset;
  std::size_t length;
};

inline std::vector<TagToken> scan_tags(std::string_view text) {
  std::vector<TagToken> out;
  for (std::size_t pos = text.find('<'); pos != std::string_view::npos; pos = text.find('<', pos + 1)) {
    for (Section sec : kSections) {
      const std::string open = open_tag(sec);
      const std::string close = close_tag(sec);
      if (text.compare(pos, open.size(), open) == 0) {
        out.push_back({sec, false, pos, open.size()});
        break;
      }
      if (text.compare(pos, close.size(), close) == 0) {
        out.push_back({sec, true, pos, close.size()});
        break;
      }
    }
  }
  return out;
}

inline std::optional<Conclusion> parse_conclusion_line(std::string_view content) {
  std::string_view line = trim(content);
  if (line.find('\n') != std::string_view::npos) return std::nullopt;
  Conclusion out;
  std::size_t axis_i = 0;
  while (true) {
    const std::size_t semi = line.find(';');
    std::string_view part = trim(line.substr(0, semi));
    if (axis_i >= kAllAxes.size()) return std::nullopt;
    const LabelAxis axis = kAllAxes[axis_i];
    const std::size_t eq = part.find('=');
    if (eq == std::string_view::npos) return std::nullopt;
    if (trim(part.substr(0, eq)) != axis_key(axis)) return std::nullopt;
    auto idx = find_label(axis, trim(part.substr(eq + 1)));
    if (!idx) return std::nullopt;
    out.set(axis, *idx);
    ++axis_i;
    if (semi == std::string_view::npos) break;
    line = line.substr(semi + 1);
  }
  if (axis_i != kAllAxes.size()) return std::nullopt;
  return out;
}

inline std::string render_conclusion(const Conclusion& c) {
  std::string out;
  for (std::size_t i = 0; i < kAllAxes.size(); ++i) {
    if (i) out += "; ";
    out += axis_key(kAllAxes[i]);
    out += '=';
    out += label_name(kAllAxes[i], c.index(kAllAxes[i]));
  }
  return out;
}

// Parses "Step k. text" (leading/trailing whitespace already trimmed).
inline std::optional<ReasoningStep> parse_step_line(std::string_view line) {
  constexpr std::string_view prefix = "Step ";
  if (line.substr(0, prefix.size()) != prefix) return std::nullopt;
  std::size_t i = prefix.size();
  int k = 0;
  const std::size_t digits_begin = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i])) && i - digits_begin < 6) {
    k = k * 10 + (line[i] - '0');
    ++i;
  }
  if (i == digits_begin || i >= line.size() || line[i] != '.') return std::nullopt;
  return ReasoningStep{k, std::string(trim(line.substr(i + 1)))};
}

}  // namespace detail

/// Returns a description of the first violated CoTTrace invariant, if any.
inline std::optional<std::string> trace_invariant_violation(const CoTTrace& t) {
  auto check_text = [](std::string_view what, std::string_view s, bool single_line) -> std::optional<std::string> {
    if (detail::is_blank(s)) return std::string(what) + " must be non-empty";
    if (detail::trim(s) != s) return std::string(what) + " must not have leading or trailing whitespace";
    if (detail::contains_tag_markup(s)) return std::string(what) + " must not contain tag markup";
    if (single_line && s.find('\n') != std::string_view::npos) return std::string(what) + " must be a single line";
    return std::nullopt;
  };
  if (auto e = check_text("summary", t.summary, false)) return e;
  if (auto e = check_text("caption", t.caption, false)) return e;
  if (t.reasoning_steps.size() != kReasoningSteps) {
    return "reasoning_steps must have exactly 4 entries, got " + std::to_string(t.reasoning_steps.size());
  }
  for (std::size_t i = 0; i < t.reasoning_steps.size(); ++i) {
    const auto& step = t.reasoning_steps[i];
    if (step.index != static_cast<int>(i) + 1) {
      return "reasoning step at position " + std::to_string(i + 1) + " has index " + std::to_string(step.index);
    }
    if (auto e = check_text("reasoning step " + std::to_string(i + 1), step.text, true)) return e;
  }
  return std::nullopt;
}

/// Renders a trace in canonical form. Throws std::invalid_argument naming the
/// violated invariant.
inline std::string render_trace(const CoTTrace& t) {
  if (auto err = trace_invariant_violation(t)) throw std::invalid_argument("render_trace: " + *err);
  std::string out;
  out += open_tag(Section::summary) + t.summary + close_tag(Section::summary) + "\n";
  out += open_tag(Section::caption) + t.caption + close_tag(Section::caption) + "\n";
  out += open_tag(Section::reasoning) + "\n";
  for (const auto& step : t.reasoning_steps) {
    out += "Step " + std::to_string(step.index) + ". " + step.text + "\n";
  }
  out += close_tag(Section::reasoning) + "\n";
  out += open_tag(Section::conclusion) + detail::render_conclusion(t.conclusion) + close_tag(Section::conclusion);
  return out;
}

/// Parses text against the canonical grammar. Returns the trace, or a report
/// with at least one violation; never throws.
inline ParseResult parse_trace(std::string_view text) {
  using detail::TagToken;
  FormatReport report;
  auto add = [&](ViolationCode code, std::size_t loc, std::string msg) {
    report.violations.push_back({code, loc, std::move(msg)});
  };

  const std::vector<TagToken> tokens = detail::scan_tags(text);

  // Phase 1: each tag exactly once.
  for (Section sec : kSections) {
    std::vector<const TagToken*> opens, closes;
    for (const auto& tok : tokens) {
      if (tok.section != sec) continue;
      (tok.closing ? closes : opens).push_back(&tok);
    }
    const std::string name(section_name(sec));
    if (opens.empty() && closes.empty()) {
      add(ViolationCode::missing_tag, text.size(), "tag pair <" + name + "> is missing");
    } else if (opens.size() > 1 || closes.size() > 1) {
      const TagToken* second = opens.size() > 1 ? opens[1] : closes[1];
      add(ViolationCode::duplicate_tag, second->offset, "tag <" + name + "> appears more than once");
    } else if (closes.empty()) {
      add(ViolationCode::unclosed_tag, opens[0]->offset, "<" + name + "> is never closed");
    } else if (opens.empty()) {
      add(ViolationCode::missing_tag, closes[0]->offset, "</" + name + "> has no opening tag");
    }
  }
  if (!report.is_valid()) return report;

  // Phase 2: canonical order O1 C1 O2 C2 O3 C3 O4 C4.
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Section want_sec = kSections[i / 2];
    const bool want_close = (i % 2) == 1;
    if (tokens[i].section != want_sec || tokens[i].closing != want_close) {
      add(ViolationCode::misordered_tag, tokens[i].offset,
          "expected " + (want_close ? close_tag(want_sec) : open_tag(want_sec)) + " at this position");
      return report;
    }
  }

  // Phase 3: nothing but whitespace outside blocks.
  auto check_gap = [&](std::size_t begin, std::size_t end) {
    std::string_view gap = text.substr(begin, end - begin);
    if (!detail::is_blank(gap)) {
      std::size_t off = 0;
      while (std::isspace(static_cast<unsigned char>(gap[off]))) ++off;
      add(ViolationCode::stray_text, begin + off, "text outside tag pairs");
    }
  };
  check_gap(0, tokens[0].offset);
  for (std::size_t b = 1; b < kSections.size(); ++b) {
    const auto& prev_close = tokens[2 * b - 1];
    check_gap(prev_close.offset + prev_close.length, tokens[2 * b].offset);
  }
  check_gap(tokens.back().offset + tokens.back().length, text.size());

  // Phase 4: section contents.
  CoTTrace trace;
  for (std::size_t b = 0; b < kSections.size(); ++b) {
    const Section sec = kSections[b];
    const auto& open = tokens[2 * b];
    const std::size_t begin = open.offset + open.length;
    std::string_view content = text.substr(begin, tokens[2 * b + 1].offset - begin);
    const std::string name(section_name(sec));
    if (detail::is_blank(content)) {
      add(ViolationCode::empty_section, begin, name + " section is empty");
      continue;
    }
    switch (sec) {
      case Section::summary: trace.summary = std::string(detail::trim(content)); break;
      case Section::caption: trace.caption = std::string(detail::trim(content)); break;
      case Section::conclusion: {
        auto parsed = detail::parse_conclusion_line(content);
        if (!parsed) {
          add(ViolationCode::bad_conclusion, begin,
              "conclusion must read 'scene=<v>; gender=<v>; age=<v>; emotion=<v>' with known labels");
        } else {
          trace.conclusion = *parsed;
        }
        break;
      }
      case Section::reasoning: {
        std::size_t line_begin = 0;
        bool line_error = false;
        while (line_begin <= content.size()) {
          std::size_t nl = content.find('\n', line_begin);
          if (nl == std::string_view::npos) nl = content.size();
          std::string_view line = detail::trim(content.substr(line_begin, nl - line_begin));
          if (!line.empty()) {
            auto step = detail::parse_step_line(line);
            if (!step) {
              add(ViolationCode::stray_text, begin + line_begin, "reasoning line is not of the form 'Step k. ...'");
              line_error = true;
            } else if (step->text.empty()) {
              add(ViolationCode::empty_section, begin + line_begin,
                  "reasoning step " + std::to_string(step->index) + " is empty");
              line_error = true;
            } else {
              trace.reasoning_steps.push_back(std::move(*step));
            }
          }
          line_begin = nl + 1;
        }
        if (line_error) break;
        if (trace.reasoning_steps.size() != kReasoningSteps) {
          add(ViolationCode::wrong_step_count, begin,
              "expected 4 reasoning steps, found " + std::to_string(trace.reasoning_steps.size()));
          break;
        }
        for (std::size_t i = 0; i < kReasoningSteps; ++i) {
          if (trace.reasoning_steps[i].index != static_cast<int>(i) + 1) {
            add(ViolationCode::misordered_tag, begin,
                "reasoning step " + std::to_string(i + 1) + " is numbered " +
                    std::to_string(trace.reasoning_steps[i].index));
            break;
          }
        }
        break;
      }
    }
  }
  if (!report.is_valid()) return report;
  return trace;
}

/// f_true = 1 iff the text parses under the canonical grammar.
inline FormatCheck validate_format(std::string_view text) {
  ParseResult r = parse_trace(text);
  if (std::holds_alternative<CoTTrace>(r)) return {true, {}};
  return {false, std::get<FormatReport>(std::move(r))};
}

inline const Conclusion& extract_answer(const CoTTrace& trace) { return trace.conclusion; }

}  // namespace cotdub
