#pragma once

#include "hitea/model.hpp"

// The pre-training objective stack. Every loss is built onto a tape so one
// backward pass differentiates the whole step. Discrete choices (mined word
// sets, sampled hard negatives, masking plans, prefix lengths) are drawn
// first and treated as constants, which keeps the losses piecewise smooth
// and lets the finite-difference oracles hold them fixed.

namespace hitea::objectives {

using ad::Tape;
using ad::Var;
using corpus::TokenizedText;
using corpus::Vocabulary;
using model::HiteaModel;
using model::SeqOut;
using model::TextBatch;

struct LossFlags {
  bool vtc = true, vtm = true, mlm = true, prefix_lm = true, cme = true, mtre = true;

  bool any_base() const { return vtc || vtm || mlm || prefix_lm; }
  bool operator==(const LossFlags&) const = default;
};

struct ObjectiveConfig {
  int positive_words = 5;   // K
  double mask_ratio = 0.15;
  int queue_capacity = 1024;
  LossFlags flags;
};

struct LossBundle {
  double cme = 0, mtre = 0, vtc = 0, vtm = 0, mlm = 0, prefix_lm = 0, total = 0;

  double term_sum() const { return cme + mtre + vtc + vtm + mlm + prefix_lm; }
  void check() const {
    if (std::abs(total - term_sum()) > 1e-9)
      throw contract_error("LossBundle: total does not equal the sum of its terms");
    if (cme < 0 || vtc < 0 || vtm < 0 || mlm < 0 || prefix_lm < 0)
      throw contract_error("LossBundle: negative loss term");
    if (mtre < -1.0 - 1e-9 || mtre > 1.0 + 1e-9)
      throw contract_error("LossBundle: mtre outside [-1, 1]");
    if (!std::isfinite(total)) throw contract_error("LossBundle: non-finite total");
  }
};

// ---- positive word mining (Eq.-style ranking by cosine similarity) ----

struct PositiveWordSet {
  std::vector<int> indices;      // K: selected word indices in original text order
  std::vector<int> permutation;  // pi: all indices, similarity descending, stable
  int k = 0;                     // |K| = min(K, N)
};

inline PositiveWordSet mine_positive_words(const Mat& words, const Vec& v_cls, int k_max) {
  const int n = static_cast<int>(words.rows());
  if (n < 1) throw contract_error("mine_positive_words: no candidate words");
  if (k_max < 1) throw contract_error("mine_positive_words: K must be >= 1");
  double vn = v_cls.norm();
  if (vn < 1e-12) throw contract_error("mine_positive_words: zero-norm video vector");
  std::vector<double> sim(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double wn = words.row(i).norm();
    if (wn < 1e-12) throw contract_error("mine_positive_words: zero-norm word vector");
    sim[static_cast<size_t>(i)] = words.row(i).dot(v_cls) / (wn * vn);
  }
  PositiveWordSet out;
  out.permutation.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.permutation[static_cast<size_t>(i)] = i;
  // stable: ties keep the lower original index first
  std::stable_sort(out.permutation.begin(), out.permutation.end(),
                   [&](int a, int b) { return sim[static_cast<size_t>(a)] > sim[static_cast<size_t>(b)]; });
  out.k = std::min(k_max, n);
  out.indices.assign(out.permutation.begin(), out.permutation.begin() + out.k);
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

// ---- MoCo-style negative queue (FIFO ring of unit-norm projections) ----

class NegativeQueue {
 public:
  explicit NegativeQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 0) throw config_error("NegativeQueue: negative capacity");
    video_ = Mat::Zero(capacity, dim);
    text_ = Mat::Zero(capacity, dim);
  }

  int size() const { return size_; }
  int capacity() const { return capacity_; }

  Mat video() const { return video_.topRows(size_); }
  Mat text() const { return text_.topRows(size_); }

  // Pushes detached unit-norm projections after the step's loss is computed.
  void push(const Mat& video_proj, const Mat& text_proj) {
    if (capacity_ == 0) return;
    if (video_proj.rows() != text_proj.rows() || video_proj.cols() != dim_ ||
        text_proj.cols() != dim_)
      throw contract_error("NegativeQueue: projection shape mismatch");
    for (Eigen::Index r = 0; r < video_proj.rows(); ++r) {
      double nv = video_proj.row(r).norm(), nt = text_proj.row(r).norm();
      if (std::abs(nv - 1.0) > 1e-6 || std::abs(nt - 1.0) > 1e-6)
        throw contract_error("NegativeQueue: entries must be unit-norm");
      video_.row(cursor_) = video_proj.row(r);
      text_.row(cursor_) = text_proj.row(r);
      cursor_ = (cursor_ + 1) % capacity_;
      size_ = std::min(size_ + 1, capacity_);
    }
  }

 private:
  int capacity_ = 0, dim_ = 0, size_ = 0, cursor_ = 0;
  Mat video_, text_;
};

// ---- individual losses (graph builders) ----

inline Var inv_tau_of(Tape& t, Var log_tau) { return ad::exp_elem(ad::neg(log_tau)); }

// Validating helper for callers that hold a raw temperature.
inline Var inv_tau_from(Tape& t, double tau) {
  if (tau <= 0.0) throw contract_error("temperature must be positive");
  return ad::scalar(t, 1.0 / tau);
}

// Softmax over the N in-text words, positives averaged over the mined set.
// v_cls: (B x D) short-view video CLS rows; words[b]: (N_b x D).
inline Var cme_loss(Tape& t, Var v_cls, const std::vector<Var>& words,
                    const std::vector<std::vector<int>>& ksets, Var inv_tau) {
  const int B = static_cast<int>(words.size());
  if (B < 1) throw contract_error("cme_loss: empty batch");
  Var acc = ad::scalar(t, 0.0);
  for (int s = 0; s < B; ++s) {
    const auto& kset = ksets[static_cast<size_t>(s)];
    if (kset.empty()) throw contract_error("cme_loss: empty positive set");
    Var v = ad::slice_rows(v_cls, s, 1);
    Var wn = ad::l2_normalize_rows(words[static_cast<size_t>(s)]);
    Var vn = ad::l2_normalize_rows(v);
    Var logits = ad::scale_by(ad::matmul_nt(vn, wn), inv_tau);  // 1 x N
    Var tiled = nn::tile_rows(logits, static_cast<int>(kset.size()));
    Var ce = ad::cross_entropy_rows(tiled, kset);
    acc = ad::add(acc, ad::mean_all(ce));
  }
  return ad::scale(acc, 1.0 / B);
}

// D(p, z) = -cos(p, sg(z)), mean over batch rows.
inline Var negative_cosine_sg(Tape& t, Var p, Var z) {
  Var pn = ad::l2_normalize_rows(p);
  Var zn = ad::l2_normalize_rows(ad::stopgrad(z));
  return ad::neg(ad::mean_all(ad::dot_rows(pn, zn)));
}

// Symmetrized loss over given projections/predictions:
// 0.5 [ D(p_long, sg(z_short)) + D(p_short, sg(z_long)) ].
inline Var mtre_symmetric(Tape& t, Var p_l, Var z_l, Var p_s, Var z_s) {
  return ad::scale(ad::add(negative_cosine_sg(t, p_l, z_s), negative_cosine_sg(t, p_s, z_l)), 0.5);
}

// MTRE over fused video CLS rows of the two views, through the shared
// projection head g and prediction head h. When frozen z values are given
// they replace the sg(z) branches; the loss and its gradient are unchanged
// at the point where they were recorded, which is what lets the
// finite-difference oracle respect the stop-gradient semantics.
inline Var mtre_loss(Tape& t, const HiteaModel& m, const nn::Bound& bp, Var fused_short_cls,
                     Var fused_long_cls, const Mat* frozen_z_s = nullptr,
                     const Mat* frozen_z_l = nullptr) {
  Var z_l = m.project_g(bp, fused_long_cls);
  Var z_s = m.project_g(bp, fused_short_cls);
  Var p_l = m.predict_h(bp, z_l);
  Var p_s = m.predict_h(bp, z_s);
  Var sg_z_l = frozen_z_l ? ad::constant(t, *frozen_z_l) : ad::stopgrad(z_l);
  Var sg_z_s = frozen_z_s ? ad::constant(t, *frozen_z_s) : ad::stopgrad(z_s);
  return ad::scale(
      ad::add(negative_cosine_sg(t, p_l, sg_z_s), negative_cosine_sg(t, p_s, sg_z_l)), 0.5);
}

// InfoNCE both ways over in-batch plus queued negatives. Projections must be
// unit-norm rows. The queue is read here and updated by the caller afterwards.
inline Var vtc_loss(Tape& t, Var video_proj, Var text_proj, Var inv_tau,
                    const NegativeQueue* queue) {
  const int B = static_cast<int>(t.val(video_proj).rows());
  if (B < 1) throw contract_error("vtc_loss: empty batch");
  std::vector<int> targets(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) targets[static_cast<size_t>(i)] = i;

  auto direction = [&](Var anchors, Var positives, const Mat& queued) {
    Var logits = ad::matmul_nt(anchors, positives);  // B x B
    if (queued.rows() > 0)
      logits = ad::concat_cols(logits, ad::matmul_nt(anchors, ad::constant(t, queued)));
    return ad::mean_all(ad::cross_entropy_rows(ad::scale_by(logits, inv_tau), targets));
  };
  Var v2t = direction(video_proj, text_proj, queue ? queue->text() : Mat());
  Var t2v = direction(text_proj, video_proj, queue ? queue->video() : Mat());
  return ad::scale(ad::add(v2t, t2v), 0.5);
}

// Hard-negative sampling for VTM: negative j for anchor i drawn with
// probability softmax_j(sim(i,j)/tau), j != i.
struct VtmPlan {
  std::vector<int> neg_text;   // per video: index of the sampled negative text
  std::vector<int> neg_video;  // per text: index of the sampled negative video
};

inline VtmPlan sample_vtm_negatives(const Mat& sim, double tau, Rng& rng) {
  const int B = static_cast<int>(sim.rows());
  if (B < 2) throw contract_error("vtm: batch of at least 2 required for negatives");
  if (tau <= 0.0) throw contract_error("vtm: temperature must be positive");
  auto draw_row = [&](const Vec& row, int skip) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < B; ++j)
      if (j != skip) mx = std::max(mx, row(j) / tau);
    double z = 0.0;
    for (int j = 0; j < B; ++j)
      if (j != skip) z += std::exp(row(j) / tau - mx);
    double u = rng.uniform() * z;
    double c = 0.0;
    int last = -1;
    for (int j = 0; j < B; ++j) {
      if (j == skip) continue;
      c += std::exp(row(j) / tau - mx);
      last = j;
      if (u < c) return j;
    }
    return last;
  };
  VtmPlan plan;
  for (int i = 0; i < B; ++i) plan.neg_text.push_back(draw_row(sim.row(i).transpose(), i));
  for (int j = 0; j < B; ++j) plan.neg_video.push_back(draw_row(sim.col(j), j));
  return plan;
}

// Two-way classification on fused video CLS rows: matched pairs labeled 1,
// both hard negatives labeled 0; mean over the 3B decisions.
inline Var vtm_loss(Tape& t, const HiteaModel& m, const nn::Bound& bp, Var pos_cls,
                    Var neg_text_cls, Var neg_video_cls) {
  const int B = static_cast<int>(t.val(pos_cls).rows());
  Var all = ad::concat_rows({pos_cls, neg_text_cls, neg_video_cls});
  Var logits = m.vtm_logits(bp, all);
  std::vector<int> labels(static_cast<size_t>(3 * B), 0);
  for (int i = 0; i < B; ++i) labels[static_cast<size_t>(i)] = 1;
  return ad::mean_all(ad::cross_entropy_rows(logits, labels));
}

// ---- masking / prefix plans ----

struct MlmPlan {
  // per sample: content positions to corrupt, replacement token ids, and the
  // original ids to predict
  std::vector<std::vector<int>> positions;
  std::vector<std::vector<int>> replacement;
  int total = 0;
};

inline MlmPlan sample_mlm_plan(const std::vector<TokenizedText>& texts, const Vocabulary& vocab,
                               double mask_ratio, Rng& rng) {
  if (mask_ratio <= 0.0 || mask_ratio > 1.0)
    throw contract_error("mlm: mask_ratio must be in (0, 1]");
  auto content = vocab.content_ids();
  MlmPlan plan;
  for (const auto& text : texts) {
    std::vector<int> pos, rep;
    for (int i = 0; i < text.n_content; ++i) {
      if (rng.uniform() >= mask_ratio) continue;
      double r = rng.uniform();
      int orig = text.token_ids[static_cast<size_t>(1 + i)];
      if (r < 0.8)
        rep.push_back(vocab.mask);
      else if (r < 0.9)
        rep.push_back(content[rng.below(content.size())]);
      else
        rep.push_back(orig);  // kept, still predicted
      pos.push_back(i);
      ++plan.total;
    }
    plan.positions.push_back(std::move(pos));
    plan.replacement.push_back(std::move(rep));
  }
  return plan;
}

inline std::vector<int> sample_prefix_lengths(const std::vector<TokenizedText>& texts, Rng& rng) {
  std::vector<int> out;
  for (const auto& text : texts) {
    int len = static_cast<int>(text.token_ids.size());
    if (len < 2) throw contract_error("prefix_lm: sequence of at least 2 tokens required");
    out.push_back(1 + static_cast<int>(rng.below(static_cast<uint64_t>(len - 1))));
  }
  return out;
}

// ---- full step ----

// All discrete choices for one step; an empty optional field means "draw".
struct StepPlans {
  std::vector<std::vector<int>> ksets;  // mined positive words per sample
  MlmPlan mlm;
  std::vector<int> prefix_len;
  VtmPlan vtm;
  bool fixed = false;  // when true, use the stored plans instead of drawing
};

struct StepInput {
  Mat long_frames;   // (B*T_s) x (C*H*W)
  Mat short_frames;  // (B*T_s) x (C*H*W)
  std::vector<TokenizedText> texts;
};

struct StepResult {
  Var total;
  LossBundle bundle;
  StepPlans plans;
};

// Builds the full objective graph for one batch. The queue (optional) is
// consulted for VTC negatives and updated with this batch's detached
// projections after the loss is assembled.
inline StepResult total_loss(Tape& t, const HiteaModel& m, const nn::Bound& bp,
                             const StepInput& in, const Vocabulary& vocab,
                             const ObjectiveConfig& cfg, NegativeQueue* queue, Rng& rng,
                             const StepPlans* fixed = nullptr) {
  const int B = static_cast<int>(in.texts.size());
  if (B < 1) throw contract_error("total_loss: empty batch");
  if ((cfg.flags.vtm || cfg.flags.vtc) && B < 2)
    throw contract_error("total_loss: vtc/vtm need a batch of at least 2");
  const auto& flags = cfg.flags;

  StepResult res;
  res.plans.fixed = true;

  // plans that do not depend on the forward pass
  if (flags.mlm)
    res.plans.mlm = fixed ? fixed->mlm : sample_mlm_plan(in.texts, vocab, cfg.mask_ratio, rng);
  if (flags.prefix_lm)
    res.plans.prefix_len = fixed ? fixed->prefix_len : sample_prefix_lengths(in.texts, rng);

  // unimodal graphs
  Var long_frames = ad::constant(t, in.long_frames);
  SeqOut video_long = m.video_graph(bp, long_frames, B);
  TextBatch tb = TextBatch::make(in.texts, vocab.pad, m.cfg.max_text_len);
  SeqOut text = m.text_graph(bp, tb);

  std::vector<int> vcls_rows(static_cast<size_t>(B)), tcls_rows(static_cast<size_t>(B));
  for (int s = 0; s < B; ++s) {
    vcls_rows[static_cast<size_t>(s)] = video_long.cls_row(s);
    tcls_rows[static_cast<size_t>(s)] = text.cls_row(s);
  }
  Var inv_tau = inv_tau_of(t, m.log_tau(bp));
  const double tau_now = m.tau_value();

  SeqOut video_short;
  bool need_short = flags.cme || flags.mtre;
  if (need_short) video_short = m.video_graph(bp, ad::constant(t, in.short_frames), B);

  // per-sample content word rows from the clean text encoder
  std::vector<Var> word_rows;
  if (need_short) {
    for (int s = 0; s < B; ++s) {
      int n = tb.n_content[static_cast<size_t>(s)];
      std::vector<int> idx(static_cast<size_t>(n));
      for (int k = 0; k < n; ++k) idx[static_cast<size_t>(k)] = tb.row(s, 1 + k);
      word_rows.push_back(ad::gather_rows(text.rows, idx));
    }
    if (fixed) {
      res.plans.ksets = fixed->ksets;
    } else {
      for (int s = 0; s < B; ++s) {
        Vec v = t.val(video_short.rows).row(video_short.cls_row(s)).transpose();
        auto mined = mine_positive_words(t.val(word_rows[static_cast<size_t>(s)]), v, cfg.positive_words);
        res.plans.ksets.push_back(mined.indices);
      }
    }
  }

  Var zero = ad::scalar(t, 0.0);
  Var l_vtc = zero, l_vtm = zero, l_mlm = zero, l_plm = zero, l_cme = zero, l_mtre = zero;

  // VTC (and the similarity matrix VTM samples from)
  Var video_proj, text_proj;
  if (flags.vtc || flags.vtm) {
    video_proj = m.vtc_video_proj(bp, ad::gather_rows(video_long.rows, vcls_rows));
    text_proj = m.vtc_text_proj(bp, ad::gather_rows(text.rows, tcls_rows));
  }
  if (flags.vtc) l_vtc = vtc_loss(t, video_proj, text_proj, inv_tau, queue);

  // shared full-text fusion pass (MTRE long branch and VTM positive)
  SeqOut fused_full;
  bool need_full_fusion = flags.vtm || flags.mtre;
  if (need_full_fusion) {
    auto side = m.text_side_full(text, tb);
    fused_full = m.fuse_graph(bp, video_long, side);
  }
  auto fused_cls = [&](const SeqOut& f) {
    std::vector<int> idx(static_cast<size_t>(B));
    for (int s = 0; s < B; ++s) idx[static_cast<size_t>(s)] = f.cls_row(s);
    return ad::gather_rows(f.rows, idx);
  };

  if (flags.vtm) {
    res.plans.vtm = fixed ? fixed->vtm
                          : sample_vtm_negatives(
                                t.val(video_proj) * t.val(text_proj).transpose(), tau_now, rng);
    // negative text side: text of sample neg_text[s] fused with video s
    auto permuted_side = [&](const std::vector<int>& perm) {
      int max_n = 0;
      for (int s = 0; s < B; ++s) max_n = std::max(max_n, tb.n_content[static_cast<size_t>(perm[static_cast<size_t>(s)])]);
      model::FusionTextSide side;
      side.Lsel = 1 + max_n;
      std::vector<int> idx;
      for (int s = 0; s < B; ++s) {
        int j = perm[static_cast<size_t>(s)];
        idx.push_back(text.cls_row(j));
        for (int k = 0; k < max_n; ++k)
          idx.push_back(k < tb.n_content[static_cast<size_t>(j)] ? tb.row(j, 1 + k) : -1);
        side.valid.push_back(1 + tb.n_content[static_cast<size_t>(j)]);
      }
      side.rows = ad::gather_rows(text.rows, idx);
      return side;
    };
    SeqOut fused_neg_text = m.fuse_graph(bp, video_long, permuted_side(res.plans.vtm.neg_text));

    // negative video side: video of sample neg_video[s] fused with text s
    std::vector<int> vperm_rows;
    for (int s = 0; s < B; ++s) {
      int j = res.plans.vtm.neg_video[static_cast<size_t>(s)];
      for (int r = 0; r < video_long.L; ++r) vperm_rows.push_back(j * video_long.L + r);
    }
    SeqOut video_perm{ad::gather_rows(video_long.rows, vperm_rows), B, video_long.L};
    SeqOut fused_neg_video = m.fuse_graph(bp, video_perm, m.text_side_full(text, tb));

    l_vtm = vtm_loss(t, m, bp, fused_cls(fused_full), fused_cls(fused_neg_text),
                     fused_cls(fused_neg_video));
  }

  if (flags.cme)
    l_cme = cme_loss(t, ad::gather_rows(video_short.rows, [&] {
              std::vector<int> idx(static_cast<size_t>(B));
              for (int s = 0; s < B; ++s) idx[static_cast<size_t>(s)] = video_short.cls_row(s);
              return idx;
            }()),
            word_rows, res.plans.ksets, inv_tau);

  if (flags.mtre) {
    auto side = m.text_side_subset(text, tb, res.plans.ksets);
    SeqOut fused_short = m.fuse_graph(bp, video_short, side);
    l_mtre = mtre_loss(t, m, bp, fused_cls(fused_short), fused_cls(fused_full));
  }

  if (flags.mlm) {
    std::vector<TokenizedText> corrupted = in.texts;
    for (int s = 0; s < B; ++s) {
      const auto& pos = res.plans.mlm.positions[static_cast<size_t>(s)];
      const auto& rep = res.plans.mlm.replacement[static_cast<size_t>(s)];
      for (size_t k = 0; k < pos.size(); ++k)
        corrupted[static_cast<size_t>(s)].token_ids[static_cast<size_t>(1 + pos[k])] = rep[k];
    }
    if (res.plans.mlm.total == 0) {
      l_mlm = zero;  // empty corruption set contributes 0
    } else {
      TextBatch ctb = TextBatch::make(corrupted, vocab.pad, m.cfg.max_text_len);
      SeqOut ctext = m.text_graph(bp, ctb);
      SeqOut cfused = m.fuse_graph(bp, video_long, m.text_side_full(ctext, ctb));
      std::vector<int> rows;
      std::vector<int> targets;
      for (int s = 0; s < B; ++s) {
        for (int p : res.plans.mlm.positions[static_cast<size_t>(s)]) {
          rows.push_back(s * cfused.L + video_long.L + 1 + p);
          targets.push_back(in.texts[static_cast<size_t>(s)].token_ids[static_cast<size_t>(1 + p)]);
        }
      }
      Var logits = m.mlm_logits(bp, ad::gather_rows(cfused.rows, rows));
      l_mlm = ad::mean_all(ad::cross_entropy_rows(logits, targets));
    }
  }

  if (flags.prefix_lm) {
    int ld = 0;
    for (const auto& text : in.texts) ld = std::max(ld, static_cast<int>(text.token_ids.size()) - 1);
    std::vector<int> flat(static_cast<size_t>(B) * ld, vocab.pad);
    std::vector<int> targets(static_cast<size_t>(B) * ld, -1);
    int n_pred = 0;
    for (int s = 0; s < B; ++s) {
      const auto& ids = in.texts[static_cast<size_t>(s)].token_ids;
      int len = static_cast<int>(ids.size());
      int lp = res.plans.prefix_len[static_cast<size_t>(s)];
      for (int r = 0; r < len - 1; ++r) flat[static_cast<size_t>(s * ld + r)] = ids[static_cast<size_t>(r)];
      for (int r = lp - 1; r < len - 1; ++r) {
        targets[static_cast<size_t>(s * ld + r)] = ids[static_cast<size_t>(r + 1)];
        ++n_pred;
      }
    }
    Var logits = m.decode_graph(bp, video_long.rows, video_long.L, nullptr, flat, B, ld);
    Var ce = ad::cross_entropy_rows(logits, targets);
    l_plm = ad::scale(ad::sum_all(ce), 1.0 / std::max(1, n_pred));
  }

  Var total = zero;
  for (Var v : {l_vtc, l_vtm, l_mlm, l_plm, l_cme, l_mtre}) total = ad::add(total, v);
  res.total = total;
  res.bundle.vtc = t.val(l_vtc)(0, 0);
  res.bundle.vtm = t.val(l_vtm)(0, 0);
  res.bundle.mlm = t.val(l_mlm)(0, 0);
  res.bundle.prefix_lm = t.val(l_plm)(0, 0);
  res.bundle.cme = t.val(l_cme)(0, 0);
  res.bundle.mtre = t.val(l_mtre)(0, 0);
  res.bundle.total = t.val(total)(0, 0);
  res.bundle.check();

  // queue update happens strictly after the loss uses the previous contents
  if (queue && flags.vtc) queue->push(t.val(video_proj), t.val(text_proj));
  return res;
}

}  // namespace hitea::objectives
