#pragma once

// Finite-difference oracle over whole objective terms: rebuilds the loss with
// frozen plans while each parameter entry is perturbed, and compares against
// the tape gradients. Shared between the unit tests and the acceptance suite.

#include "hitea/objectives.hpp"
#include "hitea/views.hpp"

namespace hitea::testing {

using namespace hitea;
using objectives::LossFlags;
using objectives::NegativeQueue;
using objectives::ObjectiveConfig;
using objectives::StepInput;
using objectives::StepPlans;

struct MicroSetup {
  model::ModelConfig cfg;
  corpus::Vocabulary vocab;
  StepInput input;
  ObjectiveConfig ocfg;
  NegativeQueue queue{0, 1};

  static MicroSetup make(LossFlags flags, uint64_t seed = 404) {
    MicroSetup s;
    s.vocab = corpus::default_vocabulary();
    s.cfg.hidden_dim = 8;
    s.cfg.heads = 2;
    s.cfg.video_layers = 1;
    s.cfg.text_layers = 1;
    s.cfg.fusion_layers = 1;
    s.cfg.decoder_layers = 1;
    s.cfg.patch_size = 16;
    s.cfg.frames_per_view = 2;  // T_s = 2
    s.cfg.max_text_len = 6;     // N <= 4
    s.cfg.vocab_size = s.vocab.size();

    Rng rng(seed);
    const int B = 2;
    const int fdim = s.cfg.channels * s.cfg.frame_h * s.cfg.frame_w;
    s.input.long_frames = Mat(B * s.cfg.frames_per_view, fdim);
    s.input.short_frames = Mat(B * s.cfg.frames_per_view, fdim);
    for (Eigen::Index i = 0; i < s.input.long_frames.size(); ++i)
      s.input.long_frames(i) = rng.uniform();
    for (Eigen::Index i = 0; i < s.input.short_frames.size(); ++i)
      s.input.short_frames(i) = rng.uniform();
    s.input.texts = {corpus::tokenize("square moves right", s.vocab),
                     corpus::tokenize("circle moves up then", s.vocab)};

    s.ocfg.positive_words = 2;
    s.ocfg.mask_ratio = 0.5;  // make masking likely on 3-4 word captions
    s.ocfg.flags = flags;

    // a few pre-seeded queue entries exercise the queued-negative logits
    s.queue = NegativeQueue(4, s.cfg.hidden_dim);
    Mat qv(3, s.cfg.hidden_dim), qt(3, s.cfg.hidden_dim);
    for (Eigen::Index i = 0; i < qv.size(); ++i) qv(i) = rng.normal();
    for (Eigen::Index i = 0; i < qt.size(); ++i) qt(i) = rng.normal();
    for (int r = 0; r < 3; ++r) {
      qv.row(r) /= qv.row(r).norm();
      qt.row(r) /= qt.row(r).norm();
    }
    s.queue.push(qv, qt);
    return s;
  }
};

struct OracleReport {
  double max_rel_err = 0.0;
  int checked = 0;
  std::string worst_param;
};

// Checks d(term)/d(theta) for every parameter tensor, sampling at most
// `per_tensor` entries of each (strided, deterministic).
inline OracleReport check_loss_gradients(MicroSetup& s, uint64_t model_seed, int per_tensor = 8,
                                         double h = 1e-5) {
  model::HiteaModel m(s.cfg, model_seed);
  Rng plan_rng(9090);

  // freeze every discrete choice with one preliminary pass
  StepPlans plans;
  {
    ad::Tape t;
    auto bp = nn::bind(t, m.params, false);
    NegativeQueue q = s.queue;
    plans = objectives::total_loss(t, m, bp, s.input, s.vocab, s.ocfg, &q, plan_rng).plans;
  }

  auto eval = [&]() {
    ad::Tape t;
    auto bp = nn::bind(t, m.params, false);
    NegativeQueue q = s.queue;
    Rng r(1);
    return objectives::total_loss(t, m, bp, s.input, s.vocab, s.ocfg, &q, r, &plans).bundle.total;
  };

  std::vector<Mat> grads(static_cast<size_t>(m.params.size()));
  {
    ad::Tape t;
    auto bp = nn::bind(t, m.params, true);
    NegativeQueue q = s.queue;
    Rng r(1);
    auto res = objectives::total_loss(t, m, bp, s.input, s.vocab, s.ocfg, &q, r, &plans);
    t.backward(res.total);
    bp.collect_grads(grads);
  }

  OracleReport rep;
  for (int pi = 0; pi < m.params.size(); ++pi) {
    auto& prm = m.params.at(pi);
    Eigen::Index n = prm.value.size();
    Eigen::Index stride = std::max<Eigen::Index>(1, n / per_tensor);
    for (Eigen::Index k = 0; k < n; k += stride) {
      double orig = prm.value(k);
      prm.value(k) = orig + h;
      double fp = eval();
      prm.value(k) = orig - h;
      double fm = eval();
      prm.value(k) = orig;
      double num = (fp - fm) / (2 * h);
      double ana = grads[static_cast<size_t>(pi)](k);
      double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
      double e = std::abs(num - ana) / denom;
      if (std::abs(ana) < 1e-9 && std::abs(num) < 1e-7) e = 0.0;
      if (e > rep.max_rel_err) {
        rep.max_rel_err = e;
        rep.worst_param = prm.name;
      }
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace hitea::testing
