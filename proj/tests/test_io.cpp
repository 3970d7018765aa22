#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "stabsteer/io.hpp"

using namespace stabsteer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("stabsteer-io-" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

} // namespace

TEST(Hsv, LittleEndianBytes) {
    Matrix m(1, 2);
    m << 1.0, -2.0;
    std::ostringstream out;
    write_hsv(out, m, 7);
    const std::string expect("HSV1\x01\0\0\0\x02\0\0\0\x07\0\0\0\0\0\x80\x3f\0\0\0\xc0", 24);
    EXPECT_EQ(out.str(), expect);
}

TEST(Hsv, RoundTripIsBitExactForFloats) {
    std::mt19937_64 rng(71);
    std::normal_distribution<float> nd;
    Matrix m(5, 9);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<double>(nd(rng) * 1e3f);  // float-representable
    const auto dir = temp_dir("hsv");
    write_hsv(dir / "a.hsv", m, 20);
    const auto back = read_hsv(dir / "a.hsv");
    EXPECT_EQ(back.layer, 20u);
    EXPECT_EQ(back.values, m);
    write_hsv(dir / "b.hsv", back.values, 20);
    EXPECT_EQ(read_text(dir / "a.hsv"), read_text(dir / "b.hsv"));
    EXPECT_EQ(fs::file_size(dir / "a.hsv"), 16u + 4u * 45u);
    const auto empty = Matrix(0, 4);
    write_hsv(dir / "e.hsv", empty, 1);
    EXPECT_EQ(read_hsv(dir / "e.hsv").values.cols(), 4);
}

TEST(Hsv, MalformedInputRejected) {
    std::istringstream bad_magic(std::string("HSV2\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0", 20));
    EXPECT_THROW(read_hsv(bad_magic), IngestError);
    std::istringstream truncated(std::string("HSV1\x01\0\0\0\x02\0\0\0\0\0\0\0\0\0\0\0", 20));
    EXPECT_THROW(read_hsv(truncated), IngestError);
    std::istringstream nan(std::string("HSV1\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\xc0\x7f", 20));
    EXPECT_THROW(read_hsv(nan), IngestError);

    const auto dir = temp_dir("hsv-bad");
    write_text(dir / "t.hsv", std::string("HSV1\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0\0", 21));
    EXPECT_THROW(read_hsv(dir / "t.hsv"), IngestError);
    EXPECT_THROW(read_hsv(dir / "missing.hsv"), IngestError);
}

TEST(Jsonl, ErrorsCarryLineNumbers) {
    std::istringstream in("{\"question_id\": \"a\", \"text\": \"x\"}\n\n{\"question_id\": 3, \"text\": \"y\"}\n");
    try {
        read_traces(in, "traces.jsonl");
        FAIL() << "expected IngestError";
    } catch (const IngestError& e) {
        EXPECT_NE(std::string(e.what()).find("traces.jsonl:3"), std::string::npos) << e.what();
    }
    std::istringstream broken("{\"question_id\": \"a\", \"text\": \"x\"}\n{oops\n");
    try {
        read_traces(broken, "t");
        FAIL() << "expected IngestError";
    } catch (const IngestError& e) {
        EXPECT_NE(std::string(e.what()).find("t:2"), std::string::npos) << e.what();
    }
    std::istringstream array("[1,2]\n");
    EXPECT_THROW(read_traces(array, "t"), IngestError);
    std::istringstream latin1(std::string("{\"question_id\": \"a\", \"text\": \"caf\xe9\"}\n"));
    EXPECT_THROW(read_traces(latin1, "t"), IngestError);
    std::istringstream missing("{\"question_id\": \"a\"}\n");
    EXPECT_THROW(read_traces(missing, "t"), IngestError);
}

TEST(Jsonl, TraceRoundTrip) {
    TraceInput t{"q-1", "line one\r\n\r\nline \"two\" \xce\xb1", std::string("algebra"), std::nullopt};
    std::istringstream in(trace_to_json(t).dump() + "\n");
    const auto back = read_traces(in, "t");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].question_id, t.question_id);
    EXPECT_EQ(back[0].text, t.text);
    EXPECT_EQ(back[0].subject, t.subject);
    EXPECT_FALSE(back[0].gold_answer.has_value());
}

TEST(Continuations, RoundTripAndEmptySamples) {
    const auto dir = temp_dir("cont");
    ContinuationRecord r;
    r.boundary_id = "q:1";
    r.samples = {"Wait, no.", "Then 4."};
    write_text(dir / "c.jsonl", continuation_to_json(r).dump() + "\n");
    const auto back = read_continuations(dir / "c.jsonl");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].boundary_id, "q:1");
    EXPECT_EQ(back[0].samples, r.samples);
    write_text(dir / "e.jsonl", "{\"boundary_id\": \"q:1\", \"samples\": []}\n");
    EXPECT_THROW(read_continuations(dir / "e.jsonl"), IngestError);
}

TEST(Lexicon, JsonRoundTripAndErrors) {
    const auto lex = KeywordLexicon::defaults();
    const auto back = lexicon_from_json(lexicon_to_json(lex));
    EXPECT_EQ(back.hash(), lex.hash());
    EXPECT_EQ(back.reflection_terms, lex.reflection_terms);
    EXPECT_THROW(lexicon_from_json(json{{"reflection", {"wait"}}}), ConfigError);
    EXPECT_THROW(lexicon_from_json(json{{"reflection", {"wait"}}, {"transition", {"wait"}}}), ConfigError);
}

TEST(Report, JsonRoundTrip) {
    const auto r = make_report({{"a:1", {3, 10}}, {"a:2", {0, 10}}, {"b:4", {10, 10}}}, 10);
    const json j = report_to_json(r);
    EXPECT_EQ(j["num_scored"], 3);
    EXPECT_EQ(j["zero_count"], 1);
    EXPECT_EQ(j["samples_per_boundary"], 10);
    EXPECT_DOUBLE_EQ(j["mean"].get<double>(), 1.3 / 3.0);
    const auto back = report_from_json(j);
    EXPECT_EQ(back.scores.size(), 3u);
    EXPECT_EQ(back.scores.at("a:1").hits, 3);
    EXPECT_DOUBLE_EQ(back.mean, r.mean);
    EXPECT_EQ(back.histogram, r.histogram);
    EXPECT_EQ(report_to_json(back), j);
}

TEST(VectorFileFormat, RoundTrip) {
    SteeringVector v;
    v.direction = Vector::Zero(4);
    v.direction << 0.5, -0.5, 0.5, 0.5;
    v.layer = 20;
    v.method = VectorMethod::combined;
    v.params.tau = 0.8;
    v.params.rank = 4;
    v.params.problems_used = 3;
    v.params.problems_total = 5;
    v.params.boundaries_used = 7;
    std::stringstream buf;
    write_vector(buf, v, json{{"config_hash", "abc"}});
    const std::string bytes = buf.str();
    EXPECT_EQ(bytes.rfind("SVEC1\n", 0), 0u);
    const auto f = read_vector(buf);
    EXPECT_EQ(f.vector.direction, v.direction);
    EXPECT_EQ(f.vector.method, VectorMethod::combined);
    EXPECT_EQ(f.vector.layer, 20);
    EXPECT_EQ(*f.vector.params.tau, 0.8);
    EXPECT_EQ(*f.vector.params.rank, 4);
    EXPECT_FALSE(f.vector.params.seed.has_value());
    EXPECT_EQ(f.vector.params.boundaries_used, 7u);
    EXPECT_EQ(f.metadata["config_hash"], "abc");
    std::istringstream bad("SVEC2\n{}\n");
    EXPECT_THROW(read_vector(bad), IngestError);
}

TEST(SubspaceFileFormat, RoundTrip) {
    ContentSubspace s;
    s.basis = Eigen::MatrixXd::Zero(3, 2);
    s.basis(0, 0) = 1.0;
    s.basis(2, 1) = 1.0;
    s.centroid = Vector::Zero(3);
    s.centroid << 0.25, -1.0, 2.0;
    s.singular_values = Vector::Zero(2);
    s.singular_values << 3.0, 1.5;
    std::stringstream buf;
    write_subspace(buf, s, 12, json{{"questions", 9}});
    const auto f = read_subspace(buf);
    EXPECT_EQ(f.layer, 12);
    EXPECT_EQ(f.subspace.basis, s.basis);
    EXPECT_EQ(f.subspace.centroid, s.centroid);
    EXPECT_EQ(f.subspace.singular_values, s.singular_values);
    EXPECT_EQ(f.metadata["questions"], 9);
}

TEST(Config, ParsesCommentsQuotesAndErrors) {
    std::istringstream in("# header\nlayer = 20\nprompt = \"a # not comment\"  # trailing\n\n  tau=0.8\n");
    const auto m = parse_config(in, "c");
    EXPECT_EQ(m.size(), 3u);
    EXPECT_EQ(m.at("layer"), "20");
    EXPECT_EQ(m.at("prompt"), "a # not comment");
    EXPECT_EQ(m.at("tau"), "0.8");
    std::istringstream dup("a = 1\na = 2\n");
    EXPECT_THROW(parse_config(dup, "c"), ConfigError);
    std::istringstream noeq("a 1\n");
    EXPECT_THROW(parse_config(noeq, "c"), ConfigError);
    std::istringstream nokey(" = 1\n");
    EXPECT_THROW(parse_config(nokey, "c"), ConfigError);
    EXPECT_THROW(config_double("tau", "0.8x"), ConfigError);
    EXPECT_THROW(config_int("rank", "4.5"), ConfigError);
    EXPECT_EQ(config_int("rank", "-3"), -3);
}

TEST(Config, HashIgnoresOrderButNotValues) {
    std::istringstream a("x = 1\ny = 2\n"), b("y = 2\n# c\nx = 1\n"), c("x = 1\ny = 3\n");
    const auto ha = config_hash(parse_config(a, "a"));
    EXPECT_EQ(ha, config_hash(parse_config(b, "b")));
    EXPECT_NE(ha, config_hash(parse_config(c, "c")));
    EXPECT_EQ(ha.size(), 16u);
}
