#pragma once

#include "hitea/common.hpp"

#include "json.hpp"

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

// Synthetic temporal video-text corpus: 16x16 single-channel clips of moving
// 3x3 primitives. The temporal split holds sibling pairs that share the same
// two moments in opposite order ("square moves right then circle moves up"
// vs the reverse), so frame order is the only signal that separates them.
// The static split holds motionless attribute scenes whose 64 frames are all
// identical, making it order-free by construction.

namespace hitea::corpus {

namespace json_ns = nlohmann;

// ---- vocabulary ----

struct Vocabulary {
  std::vector<std::string> words;  // index = token id
  std::map<std::string, int> ids;
  int pad = -1, cls = -1, sep = -1, mask = -1;

  int id_of(const std::string& w) const {
    auto it = ids.find(w);
    return it == ids.end() ? -1 : it->second;
  }
  bool is_special(int id) const { return id == pad || id == cls || id == sep || id == mask; }
  int size() const { return static_cast<int>(words.size()); }

  // token ids of content (non-special) words, for MLM random replacement
  std::vector<int> content_ids() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (!is_special(i)) out.push_back(i);
    return out;
  }
};

inline Vocabulary make_vocabulary(const std::vector<std::string>& words) {
  Vocabulary v;
  v.words = words;
  for (size_t i = 0; i < words.size(); ++i) {
    if (v.ids.count(words[i]))
      throw config_error("vocab: duplicate word '" + words[i] + "'");
    v.ids[words[i]] = static_cast<int>(i);
  }
  v.pad = v.id_of("[PAD]");
  v.cls = v.id_of("[CLS]");
  v.sep = v.id_of("[SEP]");
  v.mask = v.id_of("[MASK]");
  if (v.pad < 0 || v.cls < 0 || v.sep < 0 || v.mask < 0)
    throw config_error("vocab: missing special token ([PAD]/[CLS]/[SEP]/[MASK])");
  if (v.size() - 4 < 8) throw config_error("vocab: needs at least 8 content words");
  return v;
}

inline std::vector<std::string> default_words() {
  return {
      "[PAD]", "[CLS]", "[SEP]", "[MASK]",
      // shapes
      "square", "circle", "bar", "cross", "ring", "tee",
      // motion
      "moves", "left", "right", "up", "down", "then",
      // static attributes
      "a", "is", "shown", "high", "middle", "low", "center", "dim", "bright",
      // prompts and questions
      "video", "of", "what", "happens", "first",
  };
}

inline Vocabulary default_vocabulary() { return make_vocabulary(default_words()); }

// ---- tokenization ----

struct TokenizedText {
  std::vector<int> token_ids;        // [CLS] w_1..w_N [SEP] (PAD only as suffix)
  std::vector<bool> content_mask;    // true exactly at caption word positions
  int n_content = 0;
};

inline TokenizedText tokenize(const std::string& caption, const Vocabulary& vocab) {
  std::istringstream ss(caption);
  std::vector<std::string> parts;
  std::string w;
  while (ss >> w) parts.push_back(w);
  if (parts.empty()) throw data_error("tokenize: empty caption");
  TokenizedText t;
  t.token_ids.push_back(vocab.cls);
  t.content_mask.push_back(false);
  for (const auto& p : parts) {
    int id = vocab.id_of(p);
    if (id < 0) throw data_error("tokenize: word '" + p + "' not in vocabulary");
    t.token_ids.push_back(id);
    t.content_mask.push_back(true);
  }
  t.token_ids.push_back(vocab.sep);
  t.content_mask.push_back(false);
  t.n_content = static_cast<int>(parts.size());
  return t;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) throw data_error("detokenize: id out of range");
    if (id == vocab.cls || id == vocab.pad || id == vocab.mask) continue;
    if (id == vocab.sep) break;
    if (!out.empty()) out += ' ';
    out += vocab.words[static_cast<size_t>(id)];
  }
  return out;
}

// ---- scene description ----

enum class Shape { Square, Circle, Bar, Cross, Ring, Tee };
enum class Action { MoveLeft, MoveRight, MoveUp, MoveDown, Still };

constexpr int kNumShapes = 6;
constexpr int kNumMoveActions = 4;

inline const char* shape_word(Shape s) {
  switch (s) {
    case Shape::Square: return "square";
    case Shape::Circle: return "circle";
    case Shape::Bar: return "bar";
    case Shape::Cross: return "cross";
    case Shape::Ring: return "ring";
    case Shape::Tee: return "tee";
  }
  return "";
}

inline const char* action_word(Action a) {
  switch (a) {
    case Action::MoveLeft: return "left";
    case Action::MoveRight: return "right";
    case Action::MoveUp: return "up";
    case Action::MoveDown: return "down";
    case Action::Still: return "still";
  }
  return "";
}

inline Shape shape_from_word(const std::string& w) {
  for (int i = 0; i < kNumShapes; ++i)
    if (w == shape_word(static_cast<Shape>(i))) return static_cast<Shape>(i);
  throw parse_error("unknown shape '" + w + "'");
}

inline Action action_from_word(const std::string& w) {
  for (int i = 0; i < 5; ++i)
    if (w == action_word(static_cast<Action>(i))) return static_cast<Action>(i);
  throw parse_error("unknown action '" + w + "'");
}

// One atomic moment: a shape performing an action over [t0, t1) raw frames.
// Still moments carry the attribute fields used by the static caption.
struct Moment {
  Shape shape = Shape::Square;
  Action action = Action::Still;
  int t0 = 0, t1 = 0;
  int vpos = 1, hpos = 1;   // 0..2 grid cell, Still only
  double shade = 1.0;       // pixel value, Still only
};

inline const std::array<const char*, 3>& vpos_words() {
  static const std::array<const char*, 3> w = {"high", "middle", "low"};
  return w;
}
inline const std::array<const char*, 3>& hpos_words() {
  static const std::array<const char*, 3> w = {"left", "center", "right"};
  return w;
}
inline const char* shade_word(double s) { return s < 0.75 ? "dim" : "bright"; }

inline std::string moment_clause(const Moment& m) {
  if (m.action == Action::Still) {
    std::string out = "a ";
    out += shade_word(m.shade);
    out += ' ';
    out += shape_word(m.shape);
    out += " is shown ";
    out += vpos_words()[static_cast<size_t>(m.vpos)];
    out += ' ';
    out += hpos_words()[static_cast<size_t>(m.hpos)];
    return out;
  }
  std::string out = shape_word(m.shape);
  out += " moves ";
  out += action_word(m.action);
  return out;
}

// Fixed template grammar; captions are reconstructible from moments.
inline std::string caption_from_moments(const std::vector<Moment>& moments) {
  if (moments.empty()) throw contract_error("caption_from_moments: no moments");
  std::string out = moment_clause(moments[0]);
  for (size_t i = 1; i < moments.size(); ++i) {
    out += " then ";
    out += moment_clause(moments[i]);
  }
  return out;
}

// ---- clip container ----

enum class Split { Temporal, Static };

inline const char* split_name(Split s) { return s == Split::Temporal ? "temporal" : "static"; }

struct VideoClip {
  std::string id;
  Mat frames;  // T_raw x (C*H*W), row per frame, values in [0,1]
  std::string caption;
  std::vector<Moment> moments;
  Split split = Split::Static;
  std::string pair_id;  // empty when no order-reversed sibling exists
};

// ---- corpus spec ----

struct CorpusSpec {
  int num_videos = 64;
  int frames_per_clip = 64;  // T_raw; default 64 so a 1/8 short view is 8 frames
  int frame_h = 16;
  int frame_w = 16;
  int channels = 1;
  std::vector<std::string> vocab = default_words();
  double temporal_fraction = 0.5;
  uint64_t seed = 0;

  void validate() const {
    if (num_videos < 2) throw config_error("corpus spec: num_videos must be >= 2");
    if (frames_per_clip < 2) throw config_error("corpus spec: frames_per_clip must be >= 2");
    if (frame_h < 8 || frame_w < 8) throw config_error("corpus spec: frame_h/frame_w must be >= 8");
    if (channels != 1) throw config_error("corpus spec: channels must be 1");
    if (temporal_fraction < 0.0 || temporal_fraction > 1.0)
      throw config_error("corpus spec: temporal_fraction must be in [0, 1]");
    make_vocabulary(vocab);  // throws config_error on bad vocab
  }
};

// ---- renderer ----

// 3x3 pixel stamps.
inline const std::array<std::array<int, 9>, kNumShapes>& shape_stamps() {
  static const std::array<std::array<int, 9>, kNumShapes> stamps = {{
      {1, 1, 1, 1, 1, 1, 1, 1, 1},  // square
      {0, 1, 0, 1, 1, 1, 0, 1, 0},  // circle (diamond approximation)
      {0, 1, 0, 0, 1, 0, 0, 1, 0},  // bar
      {1, 0, 1, 0, 1, 0, 1, 0, 1},  // cross
      {1, 1, 1, 1, 0, 1, 1, 1, 1},  // ring
      {1, 1, 1, 0, 1, 0, 0, 1, 0},  // tee
  }};
  return stamps;
}

inline void stamp_shape(Mat& clip, int t, int H, int W, Shape s, int cy, int cx, double shade) {
  const auto& st = shape_stamps()[static_cast<size_t>(s)];
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (!st[static_cast<size_t>((dy + 1) * 3 + (dx + 1))]) continue;
      int y = cy + dy, x = cx + dx;
      if (y < 0 || y >= H || x < 0 || x >= W) continue;
      clip(t, y * W + x) = std::max(clip(t, y * W + x), shade);
    }
  }
}

// Renders one moment into clip rows [m.t0, m.t1). Motion trajectories depend
// only on the local frame offset, so a moment renders the same frame multiset
// wherever it sits in the clip; sibling clips therefore differ only in order.
inline void render_moment(Mat& clip, const Moment& m, int H, int W) {
  int span = m.t1 - m.t0;
  if (span <= 0) throw contract_error("render_moment: empty span");
  const int lo = 2, hi = std::min(H, W) - 3;  // stamp center travel range
  for (int f = 0; f < span; ++f) {
    double u = span == 1 ? 0.0 : static_cast<double>(f) / static_cast<double>(span - 1);
    int cy = H / 2, cx = W / 2;
    double shade = 1.0;
    switch (m.action) {
      case Action::MoveRight: cx = lo + static_cast<int>(std::lround(u * (hi - lo))); break;
      case Action::MoveLeft: cx = hi - static_cast<int>(std::lround(u * (hi - lo))); break;
      case Action::MoveDown: cy = lo + static_cast<int>(std::lround(u * (hi - lo))); break;
      case Action::MoveUp: cy = hi - static_cast<int>(std::lround(u * (hi - lo))); break;
      case Action::Still: {
        const std::array<int, 3> cells = {3, H / 2, H - 3};
        cy = cells[static_cast<size_t>(m.vpos)];
        cx = std::array<int, 3>{3, W / 2, W - 3}[static_cast<size_t>(m.hpos)];
        shade = m.shade;
        break;
      }
    }
    stamp_shape(clip, m.t0 + f, H, W, m.shape, cy, cx, shade);
  }
}

inline Mat render_clip(const std::vector<Moment>& moments, int T, int H, int W) {
  Mat clip = Mat::Zero(T, H * W);
  for (const Moment& m : moments) render_moment(clip, m, H, W);
  return clip;
}

// ---- generation ----

namespace detail {

struct MomentKind {
  Shape shape;
  Action action;
};

inline std::vector<MomentKind> moving_moment_kinds() {
  std::vector<MomentKind> out;
  for (int s = 0; s < kNumShapes; ++s)
    for (int a = 0; a < kNumMoveActions; ++a)
      out.push_back({static_cast<Shape>(s), static_cast<Action>(a)});
  return out;
}

}  // namespace detail

inline std::vector<VideoClip> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const int T = spec.frames_per_clip;
  const int H = spec.frame_h, W = spec.frame_w;

  int n_temporal = static_cast<int>(std::lround(spec.temporal_fraction * spec.num_videos));
  if (n_temporal % 2 != 0) --n_temporal;  // siblings come in pairs
  if (n_temporal < 0) n_temporal = 0;
  const int n_pairs = n_temporal / 2;
  const int n_static = spec.num_videos - n_temporal;

  Rng plan_rng(derive_seed(spec.seed, 0xc0de));

  // Unordered pairs of distinct moving moments, drawn without replacement
  // while capacity lasts so temporal captions stay unique.
  const auto kinds = detail::moving_moment_kinds();
  std::vector<std::pair<int, int>> all_pairs;
  for (size_t i = 0; i < kinds.size(); ++i)
    for (size_t j = i + 1; j < kinds.size(); ++j)
      all_pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));

  std::vector<std::pair<int, int>> chosen;
  while (static_cast<int>(chosen.size()) < n_pairs) {
    std::vector<std::pair<int, int>> pool = all_pairs;
    plan_rng.shuffle(pool);
    for (const auto& p : pool) {
      if (static_cast<int>(chosen.size()) == n_pairs) break;
      chosen.push_back(p);
    }
  }

  std::vector<VideoClip> clips;
  clips.reserve(static_cast<size_t>(spec.num_videos));
  const int t_half = T / 2;

  char buf[32];
  for (int p = 0; p < n_pairs; ++p) {
    auto [ia, ib] = chosen[static_cast<size_t>(p)];
    if (plan_rng.below(2) == 1) std::swap(ia, ib);
    Moment first{kinds[static_cast<size_t>(ia)].shape, kinds[static_cast<size_t>(ia)].action, 0, t_half};
    Moment second{kinds[static_cast<size_t>(ib)].shape, kinds[static_cast<size_t>(ib)].action, t_half, T};

    std::snprintf(buf, sizeof(buf), "t%04d", 2 * p);
    std::string id_a = buf;
    std::snprintf(buf, sizeof(buf), "t%04d", 2 * p + 1);
    std::string id_b = buf;

    VideoClip a;
    a.id = id_a;
    a.split = Split::Temporal;
    a.pair_id = id_b;
    a.moments = {first, second};
    a.caption = caption_from_moments(a.moments);
    a.frames = render_clip(a.moments, T, H, W);

    VideoClip b;
    b.id = id_b;
    b.split = Split::Temporal;
    b.pair_id = id_a;
    b.moments = {Moment{second.shape, second.action, 0, t_half},
                 Moment{first.shape, first.action, t_half, T}};
    b.caption = caption_from_moments(b.moments);
    b.frames = render_clip(b.moments, T, H, W);

    clips.push_back(std::move(a));
    clips.push_back(std::move(b));
  }

  for (int s = 0; s < n_static; ++s) {
    Rng rng(derive_seed(spec.seed, 0x57a7, static_cast<uint64_t>(s)));
    Moment m;
    m.shape = static_cast<Shape>(rng.below(kNumShapes));
    m.action = Action::Still;
    m.t0 = 0;
    m.t1 = T;
    m.vpos = static_cast<int>(rng.below(3));
    m.hpos = static_cast<int>(rng.below(3));
    m.shade = rng.below(2) == 0 ? 0.5 : 1.0;
    std::snprintf(buf, sizeof(buf), "s%04d", s);
    VideoClip c;
    c.id = buf;
    c.split = Split::Static;
    c.moments = {m};
    c.caption = caption_from_moments(c.moments);
    c.frames = render_clip(c.moments, T, H, W);
    clips.push_back(std::move(c));
  }

  return clips;
}

// ---- dataset file format: "hitea-corpus/1" ----
// Line-delimited JSON. The first line is a header carrying the schema
// version, counts and vocabulary; each following line is one clip.

inline json_ns::json moment_to_json(const Moment& m) {
  json_ns::json j;
  j["shape"] = shape_word(m.shape);
  j["action"] = action_word(m.action);
  j["t0"] = m.t0;
  j["t1"] = m.t1;
  if (m.action == Action::Still) {
    j["vpos"] = m.vpos;
    j["hpos"] = m.hpos;
    j["shade"] = m.shade;
  }
  return j;
}

inline Moment moment_from_json(const json_ns::json& j) {
  Moment m;
  m.shape = shape_from_word(j.at("shape").get<std::string>());
  m.action = action_from_word(j.at("action").get<std::string>());
  m.t0 = j.at("t0").get<int>();
  m.t1 = j.at("t1").get<int>();
  if (m.action == Action::Still) {
    m.vpos = j.at("vpos").get<int>();
    m.hpos = j.at("hpos").get<int>();
    m.shade = j.at("shade").get<double>();
  }
  return m;
}

struct Dataset {
  CorpusSpec spec;  // geometry + vocab as recorded in the header
  std::vector<VideoClip> clips;
};

inline void write_dataset(const std::vector<VideoClip>& clips, const CorpusSpec& spec,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("write_dataset: cannot open '" + path + "'");
  const Vocabulary vocab = make_vocabulary(spec.vocab);

  json_ns::json header;
  header["format"] = "hitea-corpus/1";
  header["num_videos"] = clips.size();
  header["frames_per_clip"] = spec.frames_per_clip;
  header["frame_h"] = spec.frame_h;
  header["frame_w"] = spec.frame_w;
  header["channels"] = spec.channels;
  header["vocab"] = spec.vocab;
  out << header.dump() << '\n';

  const int H = spec.frame_h, W = spec.frame_w;
  for (const VideoClip& c : clips) {
    json_ns::json j;
    j["id"] = c.id;
    j["split"] = split_name(c.split);
    if (c.pair_id.empty())
      j["pair_id"] = nullptr;
    else
      j["pair_id"] = c.pair_id;
    j["caption"] = c.caption;
    j["token_ids"] = tokenize(c.caption, vocab).token_ids;
    json_ns::json moments = json_ns::json::array();
    for (const Moment& m : c.moments) moments.push_back(moment_to_json(m));
    j["moments"] = std::move(moments);

    // frames as T x C x H x W nested arrays
    json_ns::json frames = json_ns::json::array();
    for (Eigen::Index f = 0; f < c.frames.rows(); ++f) {
      json_ns::json chans = json_ns::json::array();
      json_ns::json rows = json_ns::json::array();
      for (int y = 0; y < H; ++y) {
        json_ns::json row = json_ns::json::array();
        for (int x = 0; x < W; ++x) row.push_back(c.frames(f, y * W + x));
        rows.push_back(std::move(row));
      }
      chans.push_back(std::move(rows));
      frames.push_back(std::move(chans));
    }
    j["frames"] = std::move(frames);
    out << j.dump() << '\n';
  }
  if (!out) throw data_error("write_dataset: I/O failure writing '" + path + "'");
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("read_dataset: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw parse_error("read_dataset: missing header line");

  json_ns::json header;
  try {
    header = json_ns::json::parse(line);
  } catch (const json_ns::json::exception& e) {
    throw parse_error(std::string("read_dataset: bad header: ") + e.what());
  }
  if (header.value("format", "") != std::string("hitea-corpus/1"))
    throw parse_error("read_dataset: unsupported format (want hitea-corpus/1)");

  Dataset ds;
  ds.spec.num_videos = header.at("num_videos").get<int>();
  ds.spec.frames_per_clip = header.at("frames_per_clip").get<int>();
  ds.spec.frame_h = header.at("frame_h").get<int>();
  ds.spec.frame_w = header.at("frame_w").get<int>();
  ds.spec.channels = header.at("channels").get<int>();
  ds.spec.vocab = header.at("vocab").get<std::vector<std::string>>();
  const Vocabulary vocab = make_vocabulary(ds.spec.vocab);

  const int T = ds.spec.frames_per_clip, H = ds.spec.frame_h, W = ds.spec.frame_w;
  for (int r = 0; r < ds.spec.num_videos; ++r) {
    if (!std::getline(in, line))
      throw parse_error("read_dataset: truncated file at record " + std::to_string(r));
    json_ns::json j;
    try {
      j = json_ns::json::parse(line);
    } catch (const json_ns::json::exception& e) {
      throw parse_error("read_dataset: record " + std::to_string(r) + ": " + e.what());
    }
    try {
      VideoClip c;
      c.id = j.at("id").get<std::string>();
      std::string sp = j.at("split").get<std::string>();
      if (sp == "temporal")
        c.split = Split::Temporal;
      else if (sp == "static")
        c.split = Split::Static;
      else
        throw data_error("unknown split '" + sp + "'");
      if (!j.at("pair_id").is_null()) c.pair_id = j.at("pair_id").get<std::string>();
      c.caption = j.at("caption").get<std::string>();
      for (const auto& mj : j.at("moments")) c.moments.push_back(moment_from_json(mj));

      const auto& frames = j.at("frames");
      if (static_cast<int>(frames.size()) != T)
        throw data_error("frames: expected " + std::to_string(T) + " frames, got " +
                         std::to_string(frames.size()));
      c.frames = Mat::Zero(T, H * W);
      for (int f = 0; f < T; ++f) {
        const auto& chan = frames.at(static_cast<size_t>(f)).at(0);
        for (int y = 0; y < H; ++y) {
          const auto& row = chan.at(static_cast<size_t>(y));
          for (int x = 0; x < W; ++x) {
            double v = row.at(static_cast<size_t>(x)).get<double>();
            if (v < 0.0 || v > 1.0)
              throw data_error("frames: value " + std::to_string(v) + " out of range [0,1]");
            c.frames(f, y * W + x) = v;
          }
        }
      }

      // token_ids must agree with the caption under the recorded vocab
      auto ids = j.at("token_ids").get<std::vector<int>>();
      TokenizedText ref = tokenize(c.caption, vocab);
      if (ids != ref.token_ids) throw data_error("token_ids do not match caption");
      ds.clips.push_back(std::move(c));
    } catch (const data_error& e) {
      throw data_error("read_dataset: record " + std::to_string(r) + ": " + e.what());
    } catch (const json_ns::json::exception& e) {
      throw parse_error("read_dataset: record " + std::to_string(r) + ": " + e.what());
    }
  }
  return ds;
}

inline uint64_t file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("file_fingerprint: cannot open '" + path + "'");
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

}  // namespace hitea::corpus
