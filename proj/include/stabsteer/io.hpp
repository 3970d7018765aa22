#ifndef STABSTEER_IO_HPP
#define STABSTEER_IO_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "errors.hpp"
#include "segmenter.hpp"
#include "stability.hpp"
#include "subspace.hpp"

namespace stabsteer {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// HSV1 binary matrix format:
//   "HSV1" | u32 rows | u32 cols | u32 layer | rows*cols f32, row-major.
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> hsv_magic = {'H', 'S', 'V', '1'};

struct HsvMatrix {
    Matrix values;
    std::uint32_t layer = 0;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw IngestError("truncated " + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

inline void write_hsv(std::ostream& out, const Matrix& m, std::uint32_t layer) {
    out.write(hsv_magic.data(), 4);
    detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    detail::put_u32(out, layer);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const float f = static_cast<float>(m(r, c));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::put_u32(out, bits);
        }
    }
}

inline HsvMatrix read_hsv(std::istream& in, const std::string& what = "HSV1 stream") {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != hsv_magic) {
        throw IngestError(what + ": bad magic, expected HSV1");
    }
    HsvMatrix m;
    const auto rows = detail::get_u32(in, what);
    const auto cols = detail::get_u32(in, what);
    m.layer = detail::get_u32(in, what);
    m.values.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) {
            const std::uint32_t bits = detail::get_u32(in, what);
            float f;
            std::memcpy(&f, &bits, 4);
            if (!std::isfinite(f)) {
                throw IngestError(what + ": non-finite value at row " + std::to_string(r));
            }
            m.values(r, c) = f;
        }
    }
    return m;
}

inline void write_hsv(const std::filesystem::path& path, const Matrix& m, std::uint32_t layer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open '" + path.string() + "' for writing");
    write_hsv(out, m, layer);
}

inline HsvMatrix read_hsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    auto m = read_hsv(in, path.string());
    if (in.peek() != std::char_traits<char>::eof()) {
        throw IngestError(path.string() + ": trailing bytes after HSV1 payload");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open '" + path.string() + "' for writing");
    out << content;
}

/// Calls `fn(line_number, object)` for each nonblank line; malformed lines
/// raise IngestError naming the line.
inline void for_each_jsonl(std::istream& in, const std::string& name,
                           const std::function<void(std::size_t, const json&)>& fn) {
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IngestError(name + ":" + std::to_string(no) + ": " + e.what());
        }
        if (!j.is_object()) {
            throw IngestError(name + ":" + std::to_string(no) + ": expected a JSON object");
        }
        try {
            fn(no, j);
        } catch (const json::exception& e) {
            throw IngestError(name + ":" + std::to_string(no) + ": " + e.what());
        }
    }
}

inline void for_each_jsonl(const std::filesystem::path& path, const std::function<void(std::size_t, const json&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    for_each_jsonl(in, path.string(), fn);
}

inline std::string dump_json(const json& j) {
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// traces.jsonl: {question_id, text, subject?, gold_answer?}
// ---------------------------------------------------------------------------

struct TraceInput {
    std::string question_id;
    std::string text;
    std::optional<std::string> subject;
    std::optional<std::string> gold_answer;
};

inline std::vector<TraceInput> read_traces(std::istream& in, const std::string& name) {
    std::vector<TraceInput> out;
    for_each_jsonl(in, name, [&](std::size_t, const json& j) {
        TraceInput t;
        t.question_id = j.at("question_id").get<std::string>();
        t.text = j.at("text").get<std::string>();
        if (j.contains("subject") && !j["subject"].is_null()) t.subject = j["subject"].get<std::string>();
        if (j.contains("gold_answer") && !j["gold_answer"].is_null()) {
            t.gold_answer = j["gold_answer"].get<std::string>();
        }
        out.push_back(std::move(t));
    });
    return out;
}

inline std::vector<TraceInput> read_traces(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    return read_traces(in, path.string());
}

inline json trace_to_json(const TraceInput& t) {
    json j = {{"question_id", t.question_id}, {"text", t.text}};
    if (t.subject) j["subject"] = *t.subject;
    if (t.gold_answer) j["gold_answer"] = *t.gold_answer;
    return j;
}

// ---------------------------------------------------------------------------
// segments.jsonl: one labeled trace per line plus its boundaries.
// ---------------------------------------------------------------------------

inline json segment_to_json(const SegmentedTrace& seg, const std::string& lexicon_hash) {
    const auto& tr = seg.trace;
    json paragraphs = json::array();
    for (const auto& p : tr.paragraphs) {
        paragraphs.push_back({{"index", p.index},
                              {"begin", p.range.begin},
                              {"end", p.range.end},
                              {"label", std::string(to_string(p.kind))}});
    }
    json boundaries = json::array();
    for (const auto& b : detect_boundaries(tr)) {
        boundaries.push_back(
            {{"boundary_id", b.boundary_id}, {"paragraph_index", b.paragraph_index}, {"prefix_end", b.prefix_end}});
    }
    json j = {{"question_id", tr.question_id},
              {"think_span", {tr.think_span.begin, tr.think_span.end}},
              {"unclosed_think", seg.unclosed_think},
              {"paragraphs", std::move(paragraphs)},
              {"boundaries", std::move(boundaries)},
              {"lexicon_hash", lexicon_hash}};
    if (tr.subject) j["subject"] = *tr.subject;
    return j;
}

/// A segments.jsonl record: paragraph labels without the raw text.
struct SegmentRecord {
    TraceRecord trace;
    std::vector<BoundaryRecord> boundaries;
    std::string lexicon_hash;
};

inline std::vector<SegmentRecord> read_segments(const std::filesystem::path& path) {
    std::vector<SegmentRecord> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        SegmentRecord s;
        s.trace.question_id = j.at("question_id").get<std::string>();
        const auto& span = j.at("think_span");
        s.trace.think_span = {span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()};
        if (j.contains("subject")) s.trace.subject = j["subject"].get<std::string>();
        for (const auto& p : j.at("paragraphs")) {
            Paragraph para;
            para.index = p.at("index").get<std::size_t>();
            para.range = {p.at("begin").get<std::size_t>(), p.at("end").get<std::size_t>()};
            para.kind = segment_kind_from_string(p.at("label").get<std::string>());
            if (para.index != s.trace.paragraphs.size()) {
                throw IngestError(path.string() + ":" + std::to_string(line) + ": paragraph indices out of order");
            }
            s.trace.paragraphs.push_back(std::move(para));
        }
        for (const auto& b : j.at("boundaries")) {
            BoundaryRecord br;
            br.boundary_id = b.at("boundary_id").get<std::string>();
            br.question_id = s.trace.question_id;
            br.paragraph_index = b.at("paragraph_index").get<std::size_t>();
            br.prefix_end = b.at("prefix_end").get<std::size_t>();
            if (br.paragraph_index >= s.trace.paragraphs.size() ||
                !is_behavior(s.trace.paragraphs[br.paragraph_index].kind)) {
                throw IngestError(path.string() + ":" + std::to_string(line) + ": boundary '" + br.boundary_id +
                                  "' does not point at a behavior paragraph");
            }
            s.boundaries.push_back(std::move(br));
        }
        s.lexicon_hash = j.value("lexicon_hash", "");
        out.push_back(std::move(s));
    });
    return out;
}

// ---------------------------------------------------------------------------
// continuations.jsonl: {boundary_id, samples, temperature, top_p, max_new_tokens}
// ---------------------------------------------------------------------------

inline json continuation_to_json(const ContinuationRecord& r) {
    return {{"boundary_id", r.boundary_id},
            {"samples", r.samples},
            {"temperature", r.sampling_meta.temperature},
            {"top_p", r.sampling_meta.top_p},
            {"max_new_tokens", r.sampling_meta.max_new_tokens}};
}

inline std::vector<ContinuationRecord> read_continuations(const std::filesystem::path& path) {
    std::vector<ContinuationRecord> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        ContinuationRecord r;
        r.boundary_id = j.at("boundary_id").get<std::string>();
        r.samples = j.at("samples").get<std::vector<std::string>>();
        if (r.samples.empty()) {
            throw IngestError(path.string() + ":" + std::to_string(line) + ": boundary '" + r.boundary_id +
                              "' has no samples");
        }
        r.sampling_meta.temperature = j.value("temperature", 0.7);
        r.sampling_meta.top_p = j.value("top_p", 0.95);
        r.sampling_meta.max_new_tokens = j.value("max_new_tokens", 128);
        out.push_back(std::move(r));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Lexicon file (JSON): {"reflection": [...], "transition": [...], "match_mode": "word-boundary"}
// ---------------------------------------------------------------------------

inline KeywordLexicon lexicon_from_json(const json& j) {
    KeywordLexicon lex;
    try {
        lex.reflection_terms = j.at("reflection").get<std::vector<std::string>>();
        lex.transition_terms = j.at("transition").get<std::vector<std::string>>();
        lex.match_mode = match_mode_from_string(j.value("match_mode", std::string("word-boundary")));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad lexicon: ") + e.what());
    }
    lex.validate();
    return lex;
}

inline json lexicon_to_json(const KeywordLexicon& lex) {
    return {{"reflection", lex.reflection_terms},
            {"transition", lex.transition_terms},
            {"match_mode", std::string(to_string(lex.match_mode))}};
}

inline KeywordLexicon read_lexicon(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return lexicon_from_json(j);
}

// ---------------------------------------------------------------------------
// Stability report (JSON)
// ---------------------------------------------------------------------------

inline json report_to_json(const StabilityReport& r) {
    json scores = json::object();
    for (const auto& [id, s] : r.scores) {
        scores[id] = {{"hits", s.hits}, {"samples", s.samples}, {"score", s.value()}};
    }
    json thresholds = json::array();
    for (const auto& t : r.per_threshold) {
        thresholds.push_back({{"tau", t.tau}, {"count", t.count}, {"mean", t.mean ? json(*t.mean) : json(nullptr)}});
    }
    return {{"samples_per_boundary", r.samples_per_boundary},
            {"num_scored", r.scores.size()},
            {"mean", r.mean},
            {"zero_count", r.zero_count},
            {"nonzero_count", r.nonzero_count()},
            {"histogram", r.histogram},
            {"unstable_fraction", r.unstable_fraction(0.8)},
            {"max_standard_error", r.samples_per_boundary > 0 ? json(max_standard_error(r.samples_per_boundary))
                                                              : json(nullptr)},
            {"per_threshold", std::move(thresholds)},
            {"scores", std::move(scores)},
            {"unscored", r.unscored},
            {"orphan_records", r.orphan_records}};
}

inline StabilityReport report_from_json(const json& j) {
    try {
        std::map<std::string, BoundaryScore> scores;
        for (const auto& [id, s] : j.at("scores").items()) {
            BoundaryScore b{s.at("hits").get<int>(), s.at("samples").get<int>()};
            if (b.samples < 1 || b.hits < 0 || b.hits > b.samples) {
                throw IngestError("invalid score record for '" + id + "'");
            }
            scores[id] = b;
        }
        auto r = make_report(std::move(scores), j.at("samples_per_boundary").get<int>());
        r.unscored = j.value("unscored", std::vector<std::string>{});
        r.orphan_records = j.value("orphan_records", std::vector<std::string>{});
        return r;
    } catch (const json::exception& e) {
        throw IngestError(std::string("bad stability report: ") + e.what());
    }
}

inline StabilityReport read_report(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IngestError(path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Steering vector file: "SVEC1\n" | one-line JSON metadata | HSV1 (1 x D)
// Subspace file:        "SUBS1\n" | one-line JSON metadata | HSV1 centroid (1 x D)
//                       | HSV1 basis (K x D, one basis vector per row) | HSV1 singular values (1 x K)
// ---------------------------------------------------------------------------

inline json vector_metadata(const SteeringVector& v) {
    json j = {{"method", std::string(to_string(v.method))},
              {"layer", v.layer},
              {"dim", v.direction.size()},
              {"problems_used", v.params.problems_used},
              {"problems_total", v.params.problems_total},
              {"boundaries_used", v.params.boundaries_used},
              {"tau", v.params.tau ? json(*v.params.tau) : json(nullptr)},
              {"rank", v.params.rank ? json(*v.params.rank) : json(nullptr)},
              {"seed", v.params.seed ? json(*v.params.seed) : json(nullptr)}};
    return j;
}

/// Writes a vector file; `extra` keys (e.g. provenance hashes) are merged into the header.
inline void write_vector(std::ostream& out, const SteeringVector& v, const json& extra = json::object()) {
    json meta = vector_metadata(v);
    for (const auto& [k, val] : extra.items()) meta[k] = val;
    out << "SVEC1\n" << meta.dump() << "\n";
    write_hsv(out, Matrix(v.direction.transpose()), static_cast<std::uint32_t>(v.layer));
}

struct VectorFile {
    SteeringVector vector;
    json metadata;
};

inline VectorFile read_vector(std::istream& in, const std::string& what = "vector file") {
    std::string magic, header;
    if (!std::getline(in, magic) || magic != "SVEC1" || !std::getline(in, header)) {
        throw IngestError(what + ": bad header, expected SVEC1");
    }
    VectorFile f;
    try {
        f.metadata = json::parse(header);
        f.vector.method = vector_method_from_string(f.metadata.at("method").get<std::string>());
        f.vector.params.problems_used = f.metadata.value("problems_used", std::size_t{0});
        f.vector.params.problems_total = f.metadata.value("problems_total", std::size_t{0});
        f.vector.params.boundaries_used = f.metadata.value("boundaries_used", std::size_t{0});
        if (!f.metadata["tau"].is_null()) f.vector.params.tau = f.metadata["tau"].get<double>();
        if (!f.metadata["rank"].is_null()) f.vector.params.rank = f.metadata["rank"].get<int>();
        if (!f.metadata["seed"].is_null()) f.vector.params.seed = f.metadata["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw IngestError(what + ": " + e.what());
    }
    const auto m = read_hsv(in, what);
    if (m.values.rows() != 1) throw IngestError(what + ": direction must be a single row");
    f.vector.direction = m.values.row(0).transpose();
    f.vector.layer = static_cast<int>(m.layer);
    return f;
}

inline void write_vector(const std::filesystem::path& path, const SteeringVector& v, const json& extra = json::object()) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open '" + path.string() + "' for writing");
    write_vector(out, v, extra);
}

inline VectorFile read_vector(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    return read_vector(in, path.string());
}

inline void write_subspace(std::ostream& out, const ContentSubspace& s, int layer, const json& extra = json::object()) {
    json meta = {{"dim", s.dim()}, {"rank", s.rank()}, {"layer", layer}};
    for (const auto& [k, val] : extra.items()) meta[k] = val;
    out << "SUBS1\n" << meta.dump() << "\n";
    const auto lay = static_cast<std::uint32_t>(layer);
    write_hsv(out, Matrix(s.centroid.transpose()), lay);
    write_hsv(out, Matrix(s.basis.transpose()), lay);
    write_hsv(out, Matrix(s.singular_values.transpose()), lay);
}

struct SubspaceFile {
    ContentSubspace subspace;
    int layer = 0;
    json metadata;
};

inline SubspaceFile read_subspace(std::istream& in, const std::string& what = "subspace file") {
    std::string magic, header;
    if (!std::getline(in, magic) || magic != "SUBS1" || !std::getline(in, header)) {
        throw IngestError(what + ": bad header, expected SUBS1");
    }
    SubspaceFile f;
    try {
        f.metadata = json::parse(header);
        f.layer = f.metadata.value("layer", 0);
    } catch (const json::exception& e) {
        throw IngestError(what + ": " + e.what());
    }
    const auto centroid = read_hsv(in, what);
    const auto basis = read_hsv(in, what);
    const auto sv = read_hsv(in, what);
    if (centroid.values.rows() != 1 || basis.values.cols() != centroid.values.cols() || sv.values.rows() != 1 ||
        sv.values.cols() != basis.values.rows()) {
        throw IngestError(what + ": inconsistent subspace blocks");
    }
    f.subspace.centroid = centroid.values.row(0).transpose();
    f.subspace.basis = basis.values.transpose();
    f.subspace.singular_values = sv.values.row(0).transpose();
    return f;
}

inline void write_subspace(const std::filesystem::path& path, const ContentSubspace& s, int layer,
                           const json& extra = json::object()) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open '" + path.string() + "' for writing");
    write_subspace(out, s, layer, extra);
}

inline SubspaceFile read_subspace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path.string() + "'");
    return read_subspace(in, path.string());
}

// ---------------------------------------------------------------------------
// Flat key = value config files (TOML-style subset): one assignment per line,
// '#' comments, optional double quotes around string values.
// ---------------------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config(std::istream& in, const std::string& name) {
    ConfigMap out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        bool quoted = false;
        std::size_t cut = line.size();
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                cut = i;
                break;
            }
        }
        const auto body = trim(std::string_view(line).substr(0, cut));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(name + ":" + std::to_string(no) + ": expected key = value");
        }
        const std::string key(trim(body.substr(0, eq)));
        std::string value(trim(body.substr(eq + 1)));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key.empty()) throw ConfigError(name + ":" + std::to_string(no) + ": empty key");
        if (!out.emplace(key, value).second) {
            throw ConfigError(name + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

inline ConfigMap read_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    return parse_config(in, path.string());
}

/// Canonical hash of a config: sorted key=value lines.
inline std::string config_hash(const ConfigMap& cfg) {
    std::string canon;
    for (const auto& [k, v] : cfg) canon += k + "=" + v + "\n";
    return detail::fnv1a_hex(canon);
}

inline double config_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
    }
}

inline long long config_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
    }
}

} // namespace stabsteer

#endif
