#include "hitea/corpus.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace hitea;
using namespace hitea::corpus;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

CorpusSpec small_spec(uint64_t seed = 7, int n = 16, double frac = 0.5) {
  CorpusSpec s;
  s.num_videos = n;
  s.temporal_fraction = frac;
  s.seed = seed;
  return s;
}

bool clips_equal(const VideoClip& a, const VideoClip& b) {
  return a.id == b.id && a.caption == b.caption && a.pair_id == b.pair_id &&
         a.split == b.split && a.frames.rows() == b.frames.rows() &&
         (a.frames - b.frames).cwiseAbs().maxCoeff() == 0.0 && a.moments.size() == b.moments.size();
}

}  // namespace

TEST_CASE("tokenize maps words and marks content positions") {
  Vocabulary v = default_vocabulary();
  TokenizedText t = tokenize("square moves right", v);
  CHECK(t.n_content == 3);
  std::vector<int> expect = {v.cls, v.id_of("square"), v.id_of("moves"), v.id_of("right"), v.sep};
  CHECK(t.token_ids == expect);
  CHECK(t.content_mask == std::vector<bool>{false, true, true, true, false});
}

TEST_CASE("tokenize rejects empty captions and unknown words") {
  Vocabulary v = default_vocabulary();
  CHECK_THROWS_AS(tokenize("", v), data_error);
  CHECK_THROWS_AS(tokenize("   ", v), data_error);
  CHECK_THROWS_MATCHES(tokenize("square jumps", v), data_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("jumps")));
}

TEST_CASE("generation is deterministic in the seed") {
  auto a = generate_corpus(small_spec(7));
  auto b = generate_corpus(small_spec(7));
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(clips_equal(a[i], b[i]));
  auto c = generate_corpus(small_spec(8));
  bool all_same = true;
  for (size_t i = 0; i < a.size(); ++i) all_same = all_same && clips_equal(a[i], c[i]);
  CHECK_FALSE(all_same);
}

TEST_CASE("temporal_fraction 0 gives a purely static corpus") {
  auto clips = generate_corpus(small_spec(3, 10, 0.0));
  REQUIRE(clips.size() == 10);
  for (const auto& c : clips) {
    CHECK(c.split == Split::Static);
    CHECK(c.pair_id.empty());
    CHECK(c.moments.size() == 1);
  }
}

TEST_CASE("512 videos at fraction 0.5 form 128 sibling pairs") {
  auto clips = generate_corpus(small_spec(1, 512, 0.5));
  REQUIRE(clips.size() == 512);
  int n_temporal = 0;
  std::map<std::string, const VideoClip*> by_id;
  for (const auto& c : clips) by_id[c.id] = &c;
  std::set<std::string> seen;
  int n_pairs = 0;
  for (const auto& c : clips) {
    if (c.split != Split::Temporal) continue;
    ++n_temporal;
    REQUIRE_FALSE(c.pair_id.empty());
    REQUIRE(by_id.count(c.pair_id) == 1);
    CHECK(by_id.at(c.pair_id)->pair_id == c.id);
    if (!seen.count(c.id)) {
      seen.insert(c.id);
      seen.insert(c.pair_id);
      ++n_pairs;
    }
  }
  CHECK(n_temporal == 256);
  CHECK(n_pairs == 128);
}

TEST_CASE("sibling pairs reverse moment order but share the frame multiset") {
  auto clips = generate_corpus(small_spec(11, 64, 0.5));
  std::map<std::string, const VideoClip*> by_id;
  for (const auto& c : clips) by_id[c.id] = &c;
  int checked = 0;
  for (const auto& c : clips) {
    if (c.split != Split::Temporal || c.id > c.pair_id) continue;
    const VideoClip& s = *by_id.at(c.pair_id);
    CHECK(c.caption != s.caption);
    REQUIRE(c.moments.size() == 2);
    REQUIRE(s.moments.size() == 2);
    CHECK(c.moments[0].shape == s.moments[1].shape);
    CHECK(c.moments[0].action == s.moments[1].action);
    CHECK(c.moments[1].shape == s.moments[0].shape);
    CHECK(c.moments[1].action == s.moments[0].action);

    // ordered sequences differ
    CHECK((c.frames - s.frames).cwiseAbs().maxCoeff() > 0.0);

    // frame multisets agree: sort rows lexicographically and compare
    auto sorted_rows = [](const Mat& m) {
      std::vector<std::vector<double>> rows;
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<size_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<size_t>(k)] = m(r, k);
        rows.push_back(std::move(row));
      }
      std::sort(rows.begin(), rows.end());
      return rows;
    };
    CHECK(sorted_rows(c.frames) == sorted_rows(s.frames));
    ++checked;
  }
  CHECK(checked == 16);
}

TEST_CASE("captions are reconstructible from moments and round-trip the tokenizer") {
  auto clips = generate_corpus(small_spec(5, 48, 0.5));
  Vocabulary v = default_vocabulary();
  for (const auto& c : clips) {
    CHECK(caption_from_moments(c.moments) == c.caption);
    TokenizedText t = tokenize(c.caption, v);
    CHECK(detokenize(t.token_ids, v) == c.caption);
    CHECK(t.n_content >= 1);
    int mask_count = 0;
    for (bool b : t.content_mask) mask_count += b ? 1 : 0;
    CHECK(mask_count == t.n_content);
  }
}

TEST_CASE("static clips are constant over time") {
  auto clips = generate_corpus(small_spec(9, 12, 0.0));
  for (const auto& c : clips) {
    for (Eigen::Index f = 1; f < c.frames.rows(); ++f)
      CHECK((c.frames.row(f) - c.frames.row(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.frames.maxCoeff() <= 1.0);
    CHECK(c.frames.minCoeff() >= 0.0);
  }
}

TEST_CASE("invalid specs name the violated field") {
  CorpusSpec s = small_spec();
  s.num_videos = 1;
  CHECK_THROWS_MATCHES(generate_corpus(s), config_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("num_videos")));
  s = small_spec();
  s.temporal_fraction = 1.5;
  CHECK_THROWS_MATCHES(generate_corpus(s), config_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("temporal_fraction")));
  s = small_spec();
  s.frames_per_clip = 1;
  CHECK_THROWS_AS(generate_corpus(s), config_error);
}

TEST_CASE("dataset file round-trips and is byte-stable") {
  CorpusSpec spec = small_spec(21, 8, 0.5);
  auto clips = generate_corpus(spec);
  std::string p1 = temp_path("hitea_corpus_a.jsonl");
  std::string p2 = temp_path("hitea_corpus_b.jsonl");
  write_dataset(clips, spec, p1);
  write_dataset(clips, spec, p2);
  CHECK(file_fingerprint(p1) == file_fingerprint(p2));

  Dataset ds = read_dataset(p1);
  REQUIRE(ds.clips.size() == clips.size());
  for (size_t i = 0; i < clips.size(); ++i) CHECK(clips_equal(ds.clips[i], clips[i]));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("truncated dataset reports the failing record") {
  CorpusSpec spec = small_spec(3, 6, 0.5);
  auto clips = generate_corpus(spec);
  std::string p = temp_path("hitea_corpus_trunc.jsonl");
  write_dataset(clips, spec, p);

  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  in.close();
  {
    std::ofstream out(p, std::ios::trunc);
    for (size_t i = 0; i + 2 < lines.size(); ++i) out << lines[i] << '\n';
  }
  CHECK_THROWS_MATCHES(read_dataset(p), parse_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("record 4")));
  std::remove(p.c_str());
}

TEST_CASE("out-of-range frame values are rejected") {
  CorpusSpec spec = small_spec(3, 4, 0.0);
  auto clips = generate_corpus(spec);
  clips[1].frames(0, 0) = 1.5;
  std::string p = temp_path("hitea_corpus_range.jsonl");
  write_dataset(clips, spec, p);
  CHECK_THROWS_MATCHES(read_dataset(p), data_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("record 1")));
  std::remove(p.c_str());
}
