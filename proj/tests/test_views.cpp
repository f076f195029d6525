#include "hitea/views.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <set>

using namespace hitea;
using namespace hitea::views;

TEST_CASE("rho 1 keeps the whole clip") {
  Rng rng(1);
  auto [s, e] = truncate_short_view(64, 1.0, rng);
  CHECK(s == 0);
  CHECK(e == 64);
}

TEST_CASE("rho 1/8 of 64 raw frames is an 8-frame segment") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto [s, e] = truncate_short_view(64, 0.125, rng);
    CHECK(e - s == 8);
    CHECK(s >= 0);
    CHECK(e <= 64);
  }
}

TEST_CASE("short-view starts cover every valid offset") {
  std::set<int> starts;
  for (int seed = 0; seed < 10000; ++seed) {
    Rng rng(static_cast<uint64_t>(seed));
    starts.insert(truncate_short_view(64, 0.125, rng).first);
  }
  CHECK(starts.size() == 57);
  CHECK(*starts.begin() == 0);
  CHECK(*starts.rbegin() == 56);
}

TEST_CASE("rho out of range is a configuration error") {
  Rng rng(3);
  CHECK_THROWS_AS(truncate_short_view(64, 0.0, rng), config_error);
  CHECK_THROWS_AS(truncate_short_view(64, 1.5, rng), config_error);
  CHECK_THROWS_AS(truncate_short_view(64, 0.001, rng), config_error);  // empty segment
}

TEST_CASE("uniform sampling takes bin centers") {
  Rng rng(4);
  CHECK(sample_frames(0, 8, 8, rng, SamplingMode::Uniform) ==
        std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(sample_frames(0, 64, 8, rng, SamplingMode::Uniform) ==
        std::vector<int>{4, 12, 20, 28, 36, 44, 52, 60});
}

TEST_CASE("uniform sampling is rng-independent") {
  Rng r1(100), r2(999);
  auto a = sample_frames(5, 37, 8, r1, SamplingMode::Uniform);
  auto b = sample_frames(5, 37, 8, r2, SamplingMode::Uniform);
  CHECK(a == b);
  // and consumes no randomness
  CHECK(r1.next_u64() == Rng(100).next_u64());
}

TEST_CASE("random-sparse draws are strictly increasing inside the range") {
  for (int seed = 0; seed < 200; ++seed) {
    Rng rng(static_cast<uint64_t>(seed));
    auto idx = sample_frames(3, 61, 8, rng, SamplingMode::RandomSparse);
    REQUIRE(idx.size() == 8);
    CHECK(idx.front() >= 3);
    CHECK(idx.back() < 61);
    for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
  }
}

TEST_CASE("ranges shorter than the sample count repeat indices in order") {
  Rng rng(5);
  auto idx = sample_frames(10, 13, 8, rng, SamplingMode::Uniform);
  REQUIRE(idx.size() == 8);
  for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] >= idx[i - 1]);
  CHECK(idx.front() == 10);
  CHECK(idx.back() == 12);
  auto r = sample_frames(10, 13, 8, rng, SamplingMode::RandomSparse);
  for (size_t i = 1; i < r.size(); ++i) CHECK(r[i] >= r[i - 1]);
}

TEST_CASE("view pairs respect their invariants over many seeds") {
  corpus::CorpusSpec spec;
  spec.num_videos = 2;
  spec.temporal_fraction = 1.0;
  spec.seed = 17;
  auto clips = corpus::generate_corpus(spec);
  ViewConfig cfg;
  for (int seed = 0; seed < 1000; ++seed) {
    Rng rng(static_cast<uint64_t>(seed));
    ViewPair vp = make_view_pair(clips[0], cfg, rng);
    CHECK(vp.long_frames.rows() == cfg.frames_per_view);
    CHECK(vp.short_frames.rows() == cfg.frames_per_view);
    CHECK(vp.segment_end - vp.segment_start == 8);
    CHECK(vp.segment_start >= 0);
    CHECK(vp.segment_end <= 64);
    for (size_t i = 1; i < vp.long_indices.size(); ++i)
      CHECK(vp.long_indices[i] > vp.long_indices[i - 1]);
    for (size_t i = 0; i < vp.short_indices.size(); ++i) {
      CHECK(vp.short_indices[i] >= vp.segment_start);
      CHECK(vp.short_indices[i] < vp.segment_end);
      if (i > 0) CHECK(vp.short_indices[i] > vp.short_indices[i - 1]);
    }
  }
}

TEST_CASE("uniform mode enumerates an exact-width segment") {
  corpus::CorpusSpec spec;
  spec.num_videos = 2;
  spec.temporal_fraction = 0.0;
  spec.seed = 3;
  auto clips = corpus::generate_corpus(spec);
  ViewConfig cfg;
  cfg.mode = SamplingMode::Uniform;
  Rng rng(9);
  ViewPair vp = make_view_pair(clips[0], cfg, rng);
  for (size_t i = 0; i < vp.short_indices.size(); ++i)
    CHECK(vp.short_indices[i] == vp.segment_start + static_cast<int>(i));
}
