#pragma once

#include "hitea/corpus.hpp"
#include "hitea/nn.hpp"

#include "json.hpp"

#include <fstream>
#include <optional>

// Toy-scale video-language model: patch/transformer video encoder with
// learned spatial and temporal positions, transformer text encoder, a fusion
// encoder over the concatenated video+text sequence, an autoregressive text
// decoder, and the projection/prediction/contrastive/matching heads.

namespace hitea::model {

using ad::Tape;
using ad::Var;
using corpus::TokenizedText;

struct ModelConfig {
  int hidden_dim = 64;
  int video_layers = 2;
  int text_layers = 2;
  int fusion_layers = 2;
  int decoder_layers = 1;
  int heads = 4;
  int patch_size = 16;
  int max_text_len = 12;  // token positions incl. [CLS]/[SEP]
  int vocab_size = 0;
  int frames_per_view = 8;  // T_s
  int frame_h = 16, frame_w = 16, channels = 1;
  int ffn_dim = 0;  // 0 -> 2 * hidden_dim
  // Replaces temporal position information and temporal attention with
  // frame-mean pooling; the shuffle harness uses this as a control.
  bool order_invariant_ablation = false;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 2 * hidden_dim; }
  int patches_per_frame() const { return (frame_h / patch_size) * (frame_w / patch_size); }
  int video_tokens() const {  // M
    return order_invariant_ablation ? patches_per_frame()
                                    : frames_per_view * patches_per_frame();
  }

  void validate() const {
    if (hidden_dim < 4 || hidden_dim % heads != 0)
      throw config_error("model config: hidden_dim must be divisible by heads");
    if (hidden_dim % 4 != 0) throw config_error("model config: hidden_dim must be divisible by 4");
    if (frame_h % patch_size != 0 || frame_w % patch_size != 0)
      throw config_error("model config: patch_size must divide frame_h and frame_w");
    if (vocab_size < 5) throw config_error("model config: vocab_size must cover the vocabulary");
    if (max_text_len < 4) throw config_error("model config: max_text_len too small");
    if (video_layers < 1 || text_layers < 1 || fusion_layers < 1 || decoder_layers < 1)
      throw config_error("model config: layer counts must be >= 1");
    if (frames_per_view < 1) throw config_error("model config: frames_per_view must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"hidden_dim", c.hidden_dim},
                     {"video_layers", c.video_layers},
                     {"text_layers", c.text_layers},
                     {"fusion_layers", c.fusion_layers},
                     {"decoder_layers", c.decoder_layers},
                     {"heads", c.heads},
                     {"patch_size", c.patch_size},
                     {"max_text_len", c.max_text_len},
                     {"vocab_size", c.vocab_size},
                     {"frames_per_view", c.frames_per_view},
                     {"frame_h", c.frame_h},
                     {"frame_w", c.frame_w},
                     {"channels", c.channels},
                     {"ffn_dim", c.ffn_dim},
                     {"order_invariant_ablation", c.order_invariant_ablation}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.video_layers = j.at("video_layers").get<int>();
  c.text_layers = j.at("text_layers").get<int>();
  c.fusion_layers = j.at("fusion_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.max_text_len = j.at("max_text_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.frames_per_view = j.at("frames_per_view").get<int>();
  c.frame_h = j.at("frame_h").get<int>();
  c.frame_w = j.at("frame_w").get<int>();
  c.channels = j.at("channels").get<int>();
  c.ffn_dim = j.value("ffn_dim", 0);
  c.order_invariant_ablation = j.at("order_invariant_ablation").get<bool>();
}

// Unimodal and fused embeddings in evaluation form (plain matrices).
struct VideoEmbeddings {
  Vec cls;     // v_cls
  Mat tokens;  // M x D
};
struct TextEmbeddings {
  Vec cls;     // w_cls
  Mat tokens;  // N x D, content positions only
};
struct FusedEmbeddings {
  Vec video_cls;  // text-guided video CLS
  Mat sequence;   // (M + Nsel + 2) x D
};

// Packed text batch: ids padded to a common length, PAD only as suffix.
struct TextBatch {
  std::vector<int> flat_ids;   // B*L token ids
  std::vector<int> valid;      // tokens before padding (incl CLS/SEP)
  std::vector<int> n_content;  // caption words per sample
  int B = 0, L = 0;

  int row(int s, int pos) const { return s * L + pos; }

  static TextBatch make(const std::vector<TokenizedText>& texts, int pad_id, int max_len) {
    TextBatch tb;
    tb.B = static_cast<int>(texts.size());
    int longest = 0;
    for (const auto& t : texts) longest = std::max(longest, static_cast<int>(t.token_ids.size()));
    if (longest > max_len)
      throw contract_error("TextBatch: sequence of length " + std::to_string(longest) +
                           " exceeds max_text_len " + std::to_string(max_len));
    tb.L = longest;
    tb.flat_ids.assign(static_cast<size_t>(tb.B) * tb.L, pad_id);
    for (int s = 0; s < tb.B; ++s) {
      const auto& ids = texts[static_cast<size_t>(s)].token_ids;
      for (size_t p = 0; p < ids.size(); ++p) tb.flat_ids[static_cast<size_t>(tb.row(s, static_cast<int>(p)))] = ids[p];
      tb.valid.push_back(static_cast<int>(ids.size()));
      tb.n_content.push_back(texts[static_cast<size_t>(s)].n_content);
    }
    return tb;
  }
};

struct SeqOut {
  Var rows;  // (B*L) x D
  int B = 0;
  int L = 0;
  int cls_row(int s) const { return s * L; }
};

// Text rows prepared as a fusion input: [w_cls, selected words...], padded.
struct FusionTextSide {
  Var rows;                // (B*Lsel) x D
  int Lsel = 0;            // 1 + max selected word count
  std::vector<int> valid;  // 1 + per-sample selected count
};

class HiteaModel {
 public:
  ModelConfig cfg;
  nn::ParamStore params;

  HiteaModel(const ModelConfig& config, uint64_t seed) : cfg(config) {
    cfg.validate();
    build_params();
    init_params(seed);
  }

  // ---- graph builders (batched, tape-based) ----

  SeqOut video_graph(const nn::Bound& bp, Var frames, int B) const {
    Tape& t = *frames.tape;
    const int T = cfg.frames_per_view, P = cfg.patches_per_frame(), D = cfg.hidden_dim;
    if (t.val(frames).rows() != static_cast<Eigen::Index>(B) * T ||
        t.val(frames).cols() != cfg.channels * cfg.frame_h * cfg.frame_w)
      throw contract_error("video_graph: frame tensor shape mismatch");

    Var x = nn::patchify(frames, cfg.channels, cfg.frame_h, cfg.frame_w, cfg.patch_size);
    x = ad::add_rowvec(ad::matmul(x, bp[vid_patch_.w]), bp[vid_patch_.b]);
    std::vector<int> sp_map(static_cast<size_t>(B) * T * P);
    for (size_t r = 0; r < sp_map.size(); ++r) sp_map[r] = static_cast<int>(r % static_cast<size_t>(P));
    x = nn::add_positional(x, bp[vid_pos_spatial_], sp_map);

    int L;
    if (cfg.order_invariant_ablation) {
      x = ad::mean_over_frames(x, B, T, P);
      L = 1 + P;
    } else {
      std::vector<int> tm_map(static_cast<size_t>(B) * T * P);
      for (size_t r = 0; r < tm_map.size(); ++r)
        tm_map[r] = static_cast<int>((r / static_cast<size_t>(P)) % static_cast<size_t>(T));
      x = nn::add_positional(x, bp[vid_pos_temporal_], tm_map);
      L = 1 + T * P;
    }
    Var cls = nn::tile_rows(bp[vid_cls_], B);
    x = ad::interleave_rows(cls, x, B, 1, L - 1);
    for (const auto& blk : vid_blocks_) x = nn::encoder_block(bp, x, B, L, nullptr, cfg.heads, blk);
    x = nn::layernorm(bp, x, vid_lnf_);
    (void)D;
    return SeqOut{x, B, L};
  }

  SeqOut text_graph(const nn::Bound& bp, const TextBatch& tb) const {
    Tape& t = *bp.tape;
    (void)t;
    Var x = ad::gather_rows(bp[txt_emb_], tb.flat_ids);
    std::vector<int> pos_map(tb.flat_ids.size());
    for (size_t r = 0; r < pos_map.size(); ++r) pos_map[r] = static_cast<int>(r % static_cast<size_t>(tb.L));
    x = nn::add_positional(x, bp[txt_pos_], pos_map);
    Mat bias = nn::pad_key_bias(tb.B, tb.L, tb.L, tb.valid);
    for (const auto& blk : txt_blocks_)
      x = nn::encoder_block(bp, x, tb.B, tb.L, &bias, cfg.heads, blk);
    x = nn::layernorm(bp, x, txt_lnf_);
    return SeqOut{x, tb.B, tb.L};
  }

  // Full text side for fusion: [w_cls, w_1..w_N] per sample (SEP/PAD dropped).
  FusionTextSide text_side_full(const SeqOut& text, const TextBatch& tb) const {
    int max_n = 0;
    for (int n : tb.n_content) max_n = std::max(max_n, n);
    FusionTextSide side;
    side.Lsel = 1 + max_n;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(tb.B) * side.Lsel);
    for (int s = 0; s < tb.B; ++s) {
      idx.push_back(text.cls_row(s));
      for (int k = 0; k < max_n; ++k)
        idx.push_back(k < tb.n_content[static_cast<size_t>(s)] ? tb.row(s, 1 + k) : -1);
      side.valid.push_back(1 + tb.n_content[static_cast<size_t>(s)]);
    }
    side.rows = ad::gather_rows(text.rows, idx);
    return side;
  }

  // Selected-word subset side (Eq.-style calibration): [w_cls, w_k | k in K].
  // `selected` holds per-sample word indices in 0..N-1 original order.
  FusionTextSide text_side_subset(const SeqOut& text, const TextBatch& tb,
                                  const std::vector<std::vector<int>>& selected) const {
    int max_k = 0;
    for (const auto& s : selected) max_k = std::max(max_k, static_cast<int>(s.size()));
    if (max_k == 0) throw contract_error("text_side_subset: empty word subset");
    FusionTextSide side;
    side.Lsel = 1 + max_k;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(tb.B) * side.Lsel);
    for (int s = 0; s < tb.B; ++s) {
      const auto& sel = selected[static_cast<size_t>(s)];
      if (sel.empty()) throw contract_error("text_side_subset: sample without selected words");
      idx.push_back(text.cls_row(s));
      for (int k = 0; k < max_k; ++k) {
        if (k < static_cast<int>(sel.size())) {
          int w = sel[static_cast<size_t>(k)];
          if (w < 0 || w >= tb.n_content[static_cast<size_t>(s)])
            throw contract_error("text_side_subset: selected index out of range");
          idx.push_back(tb.row(s, 1 + w));
        } else {
          idx.push_back(-1);
        }
      }
      side.valid.push_back(1 + static_cast<int>(sel.size()));
    }
    side.rows = ad::gather_rows(text.rows, idx);
    return side;
  }

  // Fusion over [video tokens; text side]; both modalities attend jointly.
  SeqOut fuse_graph(const nn::Bound& bp, const SeqOut& video, const FusionTextSide& text_side) const {
    Var xv = ad::add_rowvec(video.rows, bp[fus_mod_v_]);
    Var xt = ad::add_rowvec(text_side.rows, bp[fus_mod_t_]);
    int L = video.L + text_side.Lsel;
    Var x = ad::interleave_rows(xv, xt, video.B, video.L, text_side.Lsel);
    Mat bias = nn::fused_key_bias(video.B, L, video.L, text_side.valid);
    for (const auto& blk : fus_blocks_)
      x = nn::encoder_block(bp, x, video.B, L, &bias, cfg.heads, blk);
    x = nn::layernorm(bp, x, fus_lnf_);
    return SeqOut{x, video.B, L};
  }

  // Decoder over input token ids, cross-attending to memory rows.
  // Returns next-token logits, one row per input position.
  Var decode_graph(const nn::Bound& bp, Var memory, int Lm, const Mat* mem_bias,
                   const std::vector<int>& flat_input_ids, int B, int Ld) const {
    if (Ld > cfg.max_text_len)
      throw contract_error("decode_graph: prefix length exceeds max_text_len");
    Var x = ad::gather_rows(bp[txt_emb_], flat_input_ids);
    std::vector<int> pos_map(flat_input_ids.size());
    for (size_t r = 0; r < pos_map.size(); ++r) pos_map[r] = static_cast<int>(r % static_cast<size_t>(Ld));
    x = nn::add_positional(x, bp[dec_pos_], pos_map);
    Mat causal = nn::causal_bias(B, Ld);
    for (const auto& blk : dec_blocks_)
      x = nn::decoder_block(bp, x, B, Ld, &causal, memory, Lm, mem_bias, cfg.heads, blk);
    x = nn::layernorm(bp, x, dec_lnf_);
    return nn::linear(bp, x, dec_lm_);
  }

  // ---- heads ----

  Var project_g(const nn::Bound& bp, Var x) const {  // projection MLP g
    Var h = nn::linear(bp, x, g1_);
    h = ad::layernorm_rows(h, bp[g_ln_.g], bp[g_ln_.b]);
    h = ad::relu(h);
    return nn::linear(bp, h, g2_);
  }

  Var predict_h(const nn::Bound& bp, Var x) const {  // prediction MLP h, D/4 bottleneck
    Var h = nn::linear(bp, x, h1_);
    h = ad::layernorm_rows(h, bp[h_ln_.g], bp[h_ln_.b]);
    h = ad::relu(h);
    return nn::linear(bp, h, h2_);
  }

  Var vtc_video_proj(const nn::Bound& bp, Var cls_rows) const {
    return ad::l2_normalize_rows(nn::linear(bp, cls_rows, vtc_v_));
  }
  Var vtc_text_proj(const nn::Bound& bp, Var cls_rows) const {
    return ad::l2_normalize_rows(nn::linear(bp, cls_rows, vtc_t_));
  }
  Var vtm_logits(const nn::Bound& bp, Var fused_cls_rows) const {
    return nn::linear(bp, fused_cls_rows, vtm_);
  }
  Var mlm_logits(const nn::Bound& bp, Var rows) const { return nn::linear(bp, rows, mlm_); }

  Var log_tau(const nn::Bound& bp) const { return bp[log_tau_]; }
  double tau_value() const { return std::exp(params.at(log_tau_).value(0, 0)); }
  int log_tau_id() const { return log_tau_; }
  int h_bottleneck_dim() const { return static_cast<int>(params.at(h1_.w).value.cols()); }

  // ---- evaluation wrappers (single item, no gradients) ----

  VideoEmbeddings encode_video(const Mat& frames) const {
    if (frames.rows() != cfg.frames_per_view ||
        frames.cols() != cfg.channels * cfg.frame_h * cfg.frame_w)
      throw contract_error("encode_video: frame tensor shape mismatch");
    Tape t;
    auto bp = nn::bind(t, const_cast<nn::ParamStore&>(params), false);
    SeqOut out = video_graph(bp, ad::constant(t, frames), 1);
    const Mat& rows = t.val(out.rows);
    VideoEmbeddings e;
    e.cls = rows.row(0).transpose();
    e.tokens = rows.bottomRows(out.L - 1);
    return e;
  }

  TextEmbeddings encode_text(const TokenizedText& text) const {
    Tape t;
    auto bp = nn::bind(t, const_cast<nn::ParamStore&>(params), false);
    TextBatch tb = TextBatch::make({text}, pad_id_placeholder(), cfg.max_text_len);
    SeqOut out = text_graph(bp, tb);
    const Mat& rows = t.val(out.rows);
    TextEmbeddings e;
    e.cls = rows.row(0).transpose();
    e.tokens = rows.middleRows(1, text.n_content);
    return e;
  }

  // subset: word indices in 0..N-1; empty optional means the full text.
  FusedEmbeddings fuse(const Mat& video_frames, const TokenizedText& text,
                       const std::optional<std::vector<int>>& subset = std::nullopt) const {
    Tape t;
    auto bp = nn::bind(t, const_cast<nn::ParamStore&>(params), false);
    SeqOut video = video_graph(bp, ad::constant(t, video_frames), 1);
    TextBatch tb = TextBatch::make({text}, pad_id_placeholder(), cfg.max_text_len);
    SeqOut txt = text_graph(bp, tb);
    FusionTextSide side =
        subset ? text_side_subset(txt, tb, {*subset}) : text_side_full(txt, tb);
    SeqOut fused = fuse_graph(bp, video, side);
    FusedEmbeddings f;
    const Mat& rows = t.val(fused.rows);
    f.video_cls = rows.row(0).transpose();
    f.sequence = rows;
    return f;
  }

  // Next-token logits for a prefix, conditioned on memory rows (video tokens
  // or a fused sequence). Causal: row i sees prefix positions <= i only.
  Mat decode(const Mat& memory, const std::vector<int>& prefix_ids) const {
    if (prefix_ids.empty()) throw contract_error("decode: empty prefix");
    if (static_cast<int>(prefix_ids.size()) > cfg.max_text_len)
      throw contract_error("decode: prefix longer than max_text_len");
    Tape t;
    auto bp = nn::bind(t, const_cast<nn::ParamStore&>(params), false);
    Var mem = ad::constant(t, memory);
    Var logits = decode_graph(bp, mem, static_cast<int>(memory.rows()), nullptr, prefix_ids, 1,
                              static_cast<int>(prefix_ids.size()));
    return t.val(logits);
  }

  Vec project(const Vec& x) const {
    Tape t;
    auto bp = nn::bind(t, const_cast<nn::ParamStore&>(params), false);
    return t.val(project_g(bp, ad::constant(t, x.transpose()))).row(0).transpose();
  }
  Vec predict(const Vec& x) const {
    Tape t;
    auto bp = nn::bind(t, const_cast<nn::ParamStore&>(params), false);
    return t.val(predict_h(bp, ad::constant(t, x.transpose()))).row(0).transpose();
  }

  // ---- checkpoint I/O: "hitea-ckpt/1" ----

  void save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "hitea-ckpt/1";
    j["config"] = cfg;
    nlohmann::json p;
    for (const auto& prm : params.items()) {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < prm.value.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < prm.value.cols(); ++c) row.push_back(prm.value(r, c));
        rows.push_back(std::move(row));
      }
      p[prm.name] = std::move(rows);
    }
    j["params"] = std::move(p);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("checkpoint save: cannot open '" + path + "'");
    out << j.dump();
    if (!out) throw data_error("checkpoint save: I/O failure for '" + path + "'");
  }

  static HiteaModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint load: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(std::string("checkpoint load: ") + e.what());
    }
    if (j.value("format", "") != std::string("hitea-ckpt/1"))
      throw parse_error("checkpoint load: unsupported format (want hitea-ckpt/1)");
    ModelConfig cfg = j.at("config").get<ModelConfig>();
    HiteaModel m(cfg, 0);
    const auto& p = j.at("params");
    for (auto& prm : m.params.items()) {
      if (!p.contains(prm.name)) throw parse_error("checkpoint load: missing param " + prm.name);
      const auto& rows = p.at(prm.name);
      if (static_cast<Eigen::Index>(rows.size()) != prm.value.rows())
        throw parse_error("checkpoint load: shape mismatch for " + prm.name);
      for (Eigen::Index r = 0; r < prm.value.rows(); ++r) {
        const auto& row = rows.at(static_cast<size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != prm.value.cols())
          throw parse_error("checkpoint load: shape mismatch for " + prm.name);
        for (Eigen::Index c = 0; c < prm.value.cols(); ++c)
          prm.value(r, c) = row.at(static_cast<size_t>(c)).get<double>();
      }
    }
    return m;
  }

 private:
  // [PAD] is vocabulary id 0 across this project's vocabularies; only used
  // when padding single-sample batches where the value never matters.
  int pad_id_placeholder() const { return 0; }

  nn::LinearP vid_patch_;
  int vid_cls_ = -1, vid_pos_spatial_ = -1, vid_pos_temporal_ = -1;
  std::vector<nn::BlockP> vid_blocks_;
  nn::LayerNormP vid_lnf_;

  int txt_emb_ = -1, txt_pos_ = -1;
  std::vector<nn::BlockP> txt_blocks_;
  nn::LayerNormP txt_lnf_;

  int fus_mod_v_ = -1, fus_mod_t_ = -1;
  std::vector<nn::BlockP> fus_blocks_;
  nn::LayerNormP fus_lnf_;

  int dec_pos_ = -1;
  std::vector<nn::DecBlockP> dec_blocks_;
  nn::LayerNormP dec_lnf_;
  nn::LinearP dec_lm_;

  nn::LinearP mlm_, vtc_v_, vtc_t_, vtm_;
  nn::LinearP g1_, g2_, h1_, h2_;
  nn::LayerNormP g_ln_, h_ln_;
  int log_tau_ = -1;

  nn::LinearP add_linear(const std::string& name, int in, int out) {
    nn::LinearP p;
    p.w = params.add(name + ".w", in, out);
    p.b = params.add(name + ".b", 1, out, true);
    return p;
  }
  nn::LayerNormP add_ln(const std::string& name, int dim) {
    nn::LayerNormP p;
    p.g = params.add(name + ".g", 1, dim, true);
    p.b = params.add(name + ".b", 1, dim, true);
    return p;
  }
  nn::BlockP add_block(const std::string& prefix) {
    const int D = cfg.hidden_dim, F = cfg.ffn();
    nn::BlockP b;
    b.ln1 = add_ln(prefix + ".ln1", D);
    b.qkv = add_linear(prefix + ".qkv", D, 3 * D);
    b.out = add_linear(prefix + ".out", D, D);
    b.ln2 = add_ln(prefix + ".ln2", D);
    b.ffn1 = add_linear(prefix + ".ffn1", D, F);
    b.ffn2 = add_linear(prefix + ".ffn2", F, D);
    return b;
  }
  nn::DecBlockP add_dec_block(const std::string& prefix) {
    const int D = cfg.hidden_dim, F = cfg.ffn();
    nn::DecBlockP b;
    b.ln1 = add_ln(prefix + ".ln1", D);
    b.qkv = add_linear(prefix + ".qkv", D, 3 * D);
    b.out = add_linear(prefix + ".out", D, D);
    b.lnx = add_ln(prefix + ".lnx", D);
    b.xq = add_linear(prefix + ".xq", D, D);
    b.xk = add_linear(prefix + ".xk", D, D);
    b.xv = add_linear(prefix + ".xv", D, D);
    b.xo = add_linear(prefix + ".xo", D, D);
    b.ln2 = add_ln(prefix + ".ln2", D);
    b.ffn1 = add_linear(prefix + ".ffn1", D, F);
    b.ffn2 = add_linear(prefix + ".ffn2", F, D);
    return b;
  }

  void build_params() {
    const int D = cfg.hidden_dim;
    const int patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels;
    vid_patch_ = add_linear("vid.patch", patch_dim, D);
    vid_cls_ = params.add("vid.cls", 1, D, true);
    vid_pos_spatial_ = params.add("vid.pos_spatial", cfg.patches_per_frame(), D, true);
    vid_pos_temporal_ = params.add("vid.pos_temporal", cfg.frames_per_view, D, true);
    for (int l = 0; l < cfg.video_layers; ++l)
      vid_blocks_.push_back(add_block("vid.l" + std::to_string(l)));
    vid_lnf_ = add_ln("vid.lnf", D);

    txt_emb_ = params.add("txt.emb", cfg.vocab_size, D);
    txt_pos_ = params.add("txt.pos", cfg.max_text_len, D, true);
    for (int l = 0; l < cfg.text_layers; ++l)
      txt_blocks_.push_back(add_block("txt.l" + std::to_string(l)));
    txt_lnf_ = add_ln("txt.lnf", D);

    fus_mod_v_ = params.add("fus.mod_v", 1, D, true);
    fus_mod_t_ = params.add("fus.mod_t", 1, D, true);
    for (int l = 0; l < cfg.fusion_layers; ++l)
      fus_blocks_.push_back(add_block("fus.l" + std::to_string(l)));
    fus_lnf_ = add_ln("fus.lnf", D);

    dec_pos_ = params.add("dec.pos", cfg.max_text_len, D, true);
    for (int l = 0; l < cfg.decoder_layers; ++l)
      dec_blocks_.push_back(add_dec_block("dec.l" + std::to_string(l)));
    dec_lnf_ = add_ln("dec.lnf", D);
    dec_lm_ = add_linear("dec.lm", D, cfg.vocab_size);

    mlm_ = add_linear("mlm", D, cfg.vocab_size);
    vtc_v_ = add_linear("vtc.v", D, D);
    vtc_t_ = add_linear("vtc.t", D, D);
    vtm_ = add_linear("vtm", D, 2);

    g1_ = add_linear("siam.g1", D, D);
    g_ln_ = add_ln("siam.g.ln", D);
    g2_ = add_linear("siam.g2", D, D);
    h1_ = add_linear("siam.h1", D, D / 4);
    h_ln_ = add_ln("siam.h.ln", D / 4);
    h2_ = add_linear("siam.h2", D / 4, D);

    log_tau_ = params.add("log_tau", 1, 1, true);
  }

  void init_params(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1417ULL));
    for (auto& p : params.items()) {
      if (p.name == "log_tau") {
        p.value(0, 0) = std::log(0.07);  // temperature initialization
      } else if (p.name.ends_with(".g")) {
        p.value.setOnes();  // layer-norm gains
      } else if (p.name.ends_with(".b")) {
        p.value.setZero();  // biases and layer-norm shifts
      } else {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = 0.02 * rng.normal();
      }
    }
  }
};

}  // namespace hitea::model
