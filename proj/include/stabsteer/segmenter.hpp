#ifndef STABSTEER_SEGMENTER_HPP
#define STABSTEER_SEGMENTER_HPP

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "core.hpp"
#include "errors.hpp"

namespace stabsteer {

enum class MatchMode { word_boundary, substring };

inline std::string_view to_string(MatchMode mode) noexcept {
    return mode == MatchMode::word_boundary ? "word-boundary" : "substring";
}

inline MatchMode match_mode_from_string(std::string_view name) {
    if (name == "word-boundary") return MatchMode::word_boundary;
    if (name == "substring") return MatchMode::substring;
    throw ConfigError("unknown match mode '" + std::string(name) + "'");
}

namespace detail {

inline char ascii_lower(char c) noexcept {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
    return out;
}

inline bool is_word_char(char c) noexcept {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) != 0 || c == '_' || u >= 0x80;
}

inline bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool matches_at(std::string_view lower, std::size_t pos, std::string_view term, MatchMode mode) {
    if (term.empty() || pos + term.size() > lower.size() || lower.compare(pos, term.size(), term) != 0) {
        return false;
    }
    if (mode == MatchMode::substring) {
        return true;
    }
    const bool left_ok = pos == 0 || !is_word_char(lower[pos - 1]) || !is_word_char(term.front());
    const std::size_t after = pos + term.size();
    const bool right_ok = after == lower.size() || !is_word_char(lower[after]) || !is_word_char(term.back());
    return left_ok && right_ok;
}

/// Leftmost-longest, non-overlapping occurrence count of any term.
inline std::size_t count_terms(std::string_view lower, std::vector<std::string> terms, MatchMode mode) {
    std::sort(terms.begin(), terms.end(), [](const std::string& a, const std::string& b) {
        return a.size() != b.size() ? a.size() > b.size() : a < b;
    });
    std::size_t count = 0;
    std::size_t pos = 0;
    while (pos < lower.size()) {
        std::size_t advance = 1;
        for (const auto& t : terms) {
            if (matches_at(lower, pos, t, mode)) {
                ++count;
                advance = t.size();
                break;
            }
        }
        pos += advance;
    }
    return count;
}

inline bool contains_any(std::string_view lower, const std::vector<std::string>& terms, MatchMode mode) {
    for (const auto& t : terms) {
        for (std::size_t pos = lower.find(t); pos != std::string_view::npos; pos = lower.find(t, pos + 1)) {
            if (matches_at(lower, pos, t, mode)) {
                return true;
            }
        }
    }
    return false;
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace detail

/// Keyword rules that decide whether a paragraph is a behavior boundary.
struct KeywordLexicon {
    std::vector<std::string> reflection_terms;
    std::vector<std::string> transition_terms;
    MatchMode match_mode = MatchMode::word_boundary;

    static KeywordLexicon defaults() {
        return KeywordLexicon{
            {"wait", "verify", "check", "re-check", "double-check", "make sure", "hmm", "mistake"},
            {"alternatively", "instead", "another approach", "let's try", "switch"},
            MatchMode::word_boundary,
        };
    }

    void validate() const {
        if (reflection_terms.empty() || transition_terms.empty()) {
            throw ConfigError("lexicon term lists must be nonempty");
        }
        for (const auto* list : {&reflection_terms, &transition_terms}) {
            for (const auto& t : *list) {
                if (t.empty()) {
                    throw ConfigError("lexicon contains an empty term");
                }
                if (detail::to_lower(t) != t) {
                    throw ConfigError("lexicon term '" + t + "' is not lowercase");
                }
            }
        }
        for (const auto& t : reflection_terms) {
            if (std::find(transition_terms.begin(), transition_terms.end(), t) != transition_terms.end()) {
                throw ConfigError("term '" + t + "' appears in both reflection and transition lists");
            }
        }
    }

    /// Stable provenance hash over the mode and both term lists.
    std::string hash() const {
        std::string canon = "mode=" + std::string(to_string(match_mode)) + "\nreflection=";
        for (const auto& t : reflection_terms) {
            canon += t;
            canon += '\x1f';
        }
        canon += "\ntransition=";
        for (const auto& t : transition_terms) {
            canon += t;
            canon += '\x1f';
        }
        return detail::fnv1a_hex(canon);
    }
};

/// Paragraph delimiter. The default splits on runs of one or more blank lines.
struct SegmentRules {
    std::string delimiter_pattern = R"(\r?\n(?:[ \t]*\r?\n)+)";

    const std::regex& regex() const {
        if (!compiled_ || compiled_pattern_ != delimiter_pattern) {
            try {
                compiled_ = std::regex(delimiter_pattern, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                throw ConfigError("bad delimiter pattern '" + delimiter_pattern + "': " + e.what());
            }
            compiled_pattern_ = delimiter_pattern;
        }
        return *compiled_;
    }

private:
    mutable std::optional<std::regex> compiled_;
    mutable std::string compiled_pattern_;
};

struct ThinkBlock {
    CharRange span;
    bool found_open = false;
    bool unclosed = false;
};

/// Locates the reasoning block: the span between the first `<think>` and the
/// next `</think>`. Without an opening tag the span starts at 0 and ends at the
/// first closing tag, or at the end of the text when neither tag is present.
/// An opening tag with no closing tag extends to the end and sets `unclosed`.
inline ThinkBlock extract_think_block(std::string_view raw) {
    constexpr std::string_view open = "<think>";
    constexpr std::string_view close = "</think>";
    ThinkBlock block;
    const auto open_pos = raw.find(open);
    if (open_pos == std::string_view::npos) {
        const auto close_pos = raw.find(close);
        block.span = {0, close_pos == std::string_view::npos ? raw.size() : close_pos};
        return block;
    }
    block.found_open = true;
    const std::size_t begin = open_pos + open.size();
    const auto close_pos = raw.find(close, begin);
    if (close_pos == std::string_view::npos) {
        block.unclosed = true;
        block.span = {begin, raw.size()};
    } else {
        block.span = {begin, close_pos};
    }
    return block;
}

/// Splits `text[span]` into paragraphs. Ranges are absolute offsets into
/// `text`, trimmed of surrounding whitespace; whitespace-only pieces are dropped.
inline std::vector<Paragraph> segment_span(std::string_view text, CharRange span, const SegmentRules& rules = {}) {
    std::vector<Paragraph> out;
    const std::string region(text.substr(span.begin, span.size()));

    auto emit = [&](std::size_t b, std::size_t e) {
        while (b < e && detail::is_space(region[b])) ++b;
        while (e > b && detail::is_space(region[e - 1])) --e;
        if (b == e) {
            return;
        }
        Paragraph p;
        p.index = out.size();
        p.range = {span.begin + b, span.begin + e};
        p.text = region.substr(b, e - b);
        out.push_back(std::move(p));
    };

    std::size_t cursor = 0;
    const auto& re = rules.regex();
    for (auto it = std::sregex_iterator(region.begin(), region.end(), re); it != std::sregex_iterator(); ++it) {
        const auto pos = static_cast<std::size_t>(it->position());
        const auto len = static_cast<std::size_t>(it->length());
        if (len == 0) {
            continue;
        }
        emit(cursor, pos);
        cursor = pos + len;
    }
    emit(cursor, region.size());
    return out;
}

inline std::vector<Paragraph> segment_trace(std::string_view text, const SegmentRules& rules = {}) {
    return segment_span(text, {0, text.size()}, rules);
}

/// The text between consecutive paragraphs (plus leading and trailing gaps);
/// interleaving these with the paragraph texts reproduces `text[span]`.
inline std::vector<std::string> paragraph_separators(std::string_view text, CharRange span,
                                                     const std::vector<Paragraph>& paragraphs) {
    std::vector<std::string> gaps;
    std::size_t cursor = span.begin;
    for (const auto& p : paragraphs) {
        gaps.emplace_back(text.substr(cursor, p.range.begin - cursor));
        cursor = p.range.end;
    }
    gaps.emplace_back(text.substr(cursor, span.end - cursor));
    return gaps;
}

inline std::string reconstruct(std::string_view text, CharRange span, const std::vector<Paragraph>& paragraphs) {
    const auto gaps = paragraph_separators(text, span, paragraphs);
    std::string out = gaps.front();
    for (std::size_t i = 0; i < paragraphs.size(); ++i) {
        out += text.substr(paragraphs[i].range.begin, paragraphs[i].range.size());
        out += gaps[i + 1];
    }
    return out;
}

/// Reflection wins over transition; no match means execution.
inline SegmentKind classify_paragraph(std::string_view paragraph, const KeywordLexicon& lexicon) {
    const auto lower = detail::to_lower(paragraph);
    if (detail::contains_any(lower, lexicon.reflection_terms, lexicon.match_mode)) {
        return SegmentKind::reflection;
    }
    if (detail::contains_any(lower, lexicon.transition_terms, lexicon.match_mode)) {
        return SegmentKind::transition;
    }
    return SegmentKind::execution;
}

struct BoundaryPartition {
    std::vector<std::size_t> behavior;
    std::vector<std::size_t> execution;
};

inline BoundaryPartition partition_boundaries(const std::vector<SegmentKind>& labels) {
    BoundaryPartition part;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (is_behavior(labels[i]) ? part.behavior : part.execution).push_back(i);
    }
    return part;
}

inline BoundaryPartition partition_boundaries(const TraceRecord& trace) {
    std::vector<SegmentKind> labels;
    labels.reserve(trace.paragraphs.size());
    for (const auto& p : trace.paragraphs) {
        labels.push_back(p.kind);
    }
    return partition_boundaries(labels);
}

inline std::size_t count_reflection_keywords(std::string_view text, const KeywordLexicon& lexicon) {
    return detail::count_terms(detail::to_lower(text), lexicon.reflection_terms, lexicon.match_mode);
}

inline std::size_t word_count(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (char c : text) {
        if (detail::is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}

/// Contents of the last `\boxed{...}` group, brace-aware. Escaped braces
/// (`\{`, `\}`) do not count toward nesting.
inline std::optional<std::string> extract_boxed_answer(std::string_view text) {
    constexpr std::string_view tag = "\\boxed";
    std::optional<std::string> last;
    std::size_t pos = text.find(tag);
    while (pos != std::string_view::npos) {
        std::size_t i = pos + tag.size();
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
        if (i >= text.size() || text[i] != '{') {
            pos = text.find(tag, pos + tag.size());
            continue;
        }
        const std::size_t content_begin = i + 1;
        int depth = 1;
        std::size_t j = content_begin;
        for (; j < text.size() && depth > 0; ++j) {
            if (text[j] == '\\' && j + 1 < text.size() && (text[j + 1] == '{' || text[j + 1] == '}')) {
                ++j;
            } else if (text[j] == '{') {
                ++depth;
            } else if (text[j] == '}') {
                --depth;
            }
        }
        if (depth != 0) {
            throw ParseError("unbalanced braces after \\boxed at offset " + std::to_string(pos));
        }
        last = std::string(text.substr(content_begin, j - 1 - content_begin));
        pos = text.find(tag, j);
    }
    return last;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && detail::is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && detail::is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline bool exact_match(std::string_view predicted, std::string_view gold) {
    return trim(predicted) == trim(gold);
}

struct SegmentedTrace {
    TraceRecord trace;
    bool unclosed_think = false;
};

/// Runs think-block extraction, segmentation and classification on one trace.
inline SegmentedTrace segment_record(std::string question_id, std::string raw_text, const KeywordLexicon& lexicon,
                                     const SegmentRules& rules = {}) {
    SegmentedTrace out;
    auto& tr = out.trace;
    tr.question_id = std::move(question_id);
    tr.raw_text = std::move(raw_text);
    const auto block = extract_think_block(tr.raw_text);
    out.unclosed_think = block.unclosed;
    tr.think_span = block.span;
    tr.paragraphs = segment_span(tr.raw_text, block.span, rules);
    for (auto& p : tr.paragraphs) {
        p.kind = classify_paragraph(p.text, lexicon);
    }
    return out;
}

inline std::string make_boundary_id(std::string_view question_id, std::size_t paragraph_index) {
    return std::string(question_id) + ":" + std::to_string(paragraph_index);
}

/// One boundary record per behavior paragraph; the prefix ends where the
/// paragraph starts.
inline std::vector<BoundaryRecord> detect_boundaries(const TraceRecord& trace) {
    std::vector<BoundaryRecord> out;
    for (const auto& p : trace.paragraphs) {
        if (!is_behavior(p.kind)) {
            continue;
        }
        BoundaryRecord b;
        b.boundary_id = make_boundary_id(trace.question_id, p.index);
        b.question_id = trace.question_id;
        b.paragraph_index = p.index;
        b.prefix_end = p.range.begin;
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace stabsteer

#endif
