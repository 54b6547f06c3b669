// Optimizer, schedule, training loop, evaluation harness, and run
// manifests.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "punet/corpus.hpp"
#include "punet/train.hpp"

using namespace punet;

namespace {

// Small corpus for harness tests: one or two short words per utterance.
CorpusConfig small_corpus_cfg() {
  CorpusConfig cfg;
  cfg.train_count = 24;
  cfg.dev_count = 6;
  cfg.test_count = 6;
  cfg.max_words = 2;
  cfg.max_syllables = 1;
  cfg.min_char_frames = 3;
  cfg.max_char_frames = 4;
  cfg.seed = 4242;
  return cfg;
}

ModelConfig small_model_cfg() {
  ModelConfig cfg;
  cfg.d_a = 16;
  cfg.d_k = 16;
  cfg.d_ff = 32;
  cfg.h = 2;
  cfg.conv_kernel = 3;
  cfg.K = 4;
  cfg.d_l = 8;
  cfg.n_update = 2;
  cfg.n_predictor = 1;
  cfg.n_decoder = 1;
  cfg.d_v = 10;
  cfg.audio_bins = 65;
  cfg.dec_max_len = 48;
  cfg.lm_d = 16;
  cfg.lm_ff = 32;
  cfg.lm_h = 2;
  cfg.lm_blocks = 1;
  return cfg;
}

// f_idx(w) = (w - idx)^2 as a pure-attention loss.
SampleLossFn quadratic_loss(ParamStore& params) {
  return [&params](i64 idx, Rng&) {
    Tensor w = params.get("w");
    Tensor c = Tensor::full({1}, static_cast<double>(idx), false);
    Tensor diff = sub(w, c);
    Tensor sq = mul(diff, diff);
    CtcLoss none;
    none.nll = Tensor::zeros({1});
    return hybrid_loss(none, sq, 0.0);
  };
}

}  // namespace

TEST_CASE("warmup schedule hits the peak exactly and decays as a square root") {
  CHECK(noam_lr(300, 300, 2e-4) == 2e-4);
  CHECK(noam_lr(1, 300, 2e-4) == doctest::Approx(2e-4 / 300).epsilon(1e-15));
  CHECK(noam_lr(150, 300, 2e-4) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(noam_lr(1200, 300, 2e-4) == doctest::Approx(1e-4).epsilon(1e-15));
  for (i64 s = 2; s <= 300; ++s)
    CHECK(noam_lr(s, 300, 1e-3) > noam_lr(s - 1, 300, 1e-3));
  for (i64 s = 301; s <= 400; ++s)
    CHECK(noam_lr(s, 300, 1e-3) < noam_lr(s - 1, 300, 1e-3));
  CHECK_THROWS(noam_lr(0, 300, 1e-3));
  CHECK_THROWS(noam_lr(1, 0, 1e-3));
  CHECK_THROWS(noam_lr(1, 300, 0.0));
}

TEST_CASE("adam follows the hand recursion and skips gradient-free params") {
  ParamStore params;
  params.declare("w", Tensor::from_data({2}, {1.0, -2.0}, true));
  params.declare("unused", Tensor::from_data({1}, {5.0}, true));
  Adam adam;
  const double lr = 0.1;
  const AdamConfig ac;

  // Hand-tracked state.
  double w[2] = {1.0, -2.0};
  double m[2] = {0.0, 0.0}, v[2] = {0.0, 0.0};
  const double grads[2][2] = {{3.0, -1.0}, {1.0, 1.0}};

  for (int t = 1; t <= 2; ++t) {
    params.zero_grads();
    Tensor c = Tensor::from_data({2}, {grads[t - 1][0], grads[t - 1][1]},
                                 false);
    backward(sum_all(mul(params.get("w"), c)));
    adam.step(params, lr);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = ac.beta1 * m[i] + (1.0 - ac.beta1) * g;
      v[i] = ac.beta2 * v[i] + (1.0 - ac.beta2) * g * g;
      const double mhat = m[i] / (1.0 - std::pow(ac.beta1, t));
      const double vhat = v[i] / (1.0 - std::pow(ac.beta2, t));
      w[i] -= lr * mhat / (std::sqrt(vhat) + ac.eps);
      CHECK(params.get("w").data()[i] == doctest::Approx(w[i]).epsilon(1e-14));
    }
    CHECK(params.get("unused").data()[0] == 5.0);
  }
  CHECK(adam.steps() == 2);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  ParamStore params;
  params.declare("a", Tensor::from_data({2}, {1.0, 1.0}, true));
  params.declare("b", Tensor::from_data({1}, {1.0}, true));
  params.zero_grads();
  // Gradients {3,0} and {4}: global norm 5.
  backward(sum_all(mul(params.get("a"),
                       Tensor::from_data({2}, {3.0, 0.0}, false))));
  backward(sum_all(mul(params.get("b"),
                       Tensor::from_data({1}, {4.0}, false))));
  CHECK(clip_gradients(params, 0.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(params.get("a").grad()[0] == 3.0);  // measuring does not touch them
  CHECK(clip_gradients(params, 1.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(params.get("a").grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(params.get("b").grad()[0] == doctest::Approx(0.8).epsilon(1e-12));
  // Already inside the bound: untouched.
  CHECK(clip_gradients(params, 10.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(params.get("a").grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("the noise table covers all seven outcomes deterministically") {
  Rng rng(99);
  std::set<std::string> seen;
  for (int i = 0; i < 2000; ++i) {
    const SnrDb s = draw_snr(rng);
    seen.insert(s.has_value() ? std::to_string(*s) : "none");
  }
  CHECK(seen.size() == 7);
  CHECK(seen.count("none") == 1);

  Rng a(7), b(7);
  for (int i = 0; i < 50; ++i) CHECK(draw_snr(a) == draw_snr(b));
}

TEST_CASE("training on a quadratic is exact in its first step") {
  ParamStore params;
  params.declare("w", Tensor::from_data({1}, {2.0}, true));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.warmup = 300;
  cfg.peak_lr = 1e-3;
  cfg.clip_norm = 0.0;
  TrainLog log = run_training(params, 4, quadratic_loss(params), cfg);
  REQUIRE(log.steps.size() == 1);
  // Mean of (2-0)^2, (2-1)^2, (2-2)^2, (2-3)^2 regardless of order.
  CHECK(log.steps[0].total == 1.5);
  CHECK(log.steps[0].att == 1.5);
  CHECK(log.steps[0].ctc == 0.0);
  // Mean gradient: (4 + 2 + 0 - 2) / 4 = 1.
  CHECK(log.steps[0].grad_norm == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(log.steps[0].lr == doctest::Approx(1e-3 / 300).epsilon(1e-15));
  CHECK(params.get("w").data()[0] < 2.0);  // moved toward the targets
}

TEST_CASE("reruns with identical inputs are bit-identical") {
  auto run = [](std::uint64_t seed) {
    ParamStore params;
    params.declare("w", Tensor::from_data({1}, {2.0}, true));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 2;
    cfg.seed = seed;
    TrainLog log = run_training(params, 6, quadratic_loss(params), cfg);
    return std::make_pair(log.first_losses(10), params.get("w").data()[0]);
  };
  auto [losses1, w1] = run(11);
  auto [losses2, w2] = run(11);
  REQUIRE(losses1.size() == 9);
  for (std::size_t i = 0; i < losses1.size(); ++i)
    CHECK(losses1[i] == losses2[i]);
  CHECK(w1 == w2);
  // A different seed shuffles differently, so step losses diverge.
  auto [losses3, w3] = run(12);
  bool any_diff = false;
  for (std::size_t i = 0; i < losses1.size(); ++i)
    any_diff = any_diff || losses1[i] != losses3[i];
  CHECK(any_diff);
}

TEST_CASE("curriculum orders the first epoch shortest first") {
  ParamStore params;
  params.declare("w", Tensor::from_data({1}, {2.0}, true));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 1;
  cfg.curriculum = true;
  // Index 3 has the shortest length, so the first step sees f_3(2) = 1.
  const std::vector<i64> lengths = {9, 8, 7, 1};
  TrainLog log =
      run_training(params, 4, quadratic_loss(params), cfg, DevMetricFn(),
                   lengths);
  REQUIRE(log.steps.size() == 4);
  CHECK(log.steps[0].total == 1.0);
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.lambda = 1.5;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.label_smoothing = 1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.babble_voices = 1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("language model pretraining reduces dev NLL deterministically") {
  const Corpus corpus = synth_corpus(small_corpus_cfg());
  const ModelConfig mc = small_model_cfg();
  const CharLM lm(mc, corpus.meta.vocab);

  auto run = [&]() {
    ParamStore params;
    Rng rng(5);
    lm.declare(params, rng);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;
    cfg.warmup = 6;
    cfg.peak_lr = 3e-3;
    cfg.label_smoothing = 0.0;
    TrainLog log = pretrain_lm(params, lm, corpus, cfg);
    return log;
  };
  TrainLog log = run();
  REQUIRE(log.steps.size() == 9);
  REQUIRE(log.dev_curve.size() == 3);
  CHECK(log.dev_curve.back() < log.dev_curve.front());
  CHECK(log.steps.back().total < log.steps.front().total);

  TrainLog again = run();
  for (std::size_t i = 0; i < log.steps.size(); ++i)
    CHECK(log.steps[i].total == again.steps[i].total);
  for (std::size_t i = 0; i < log.dev_curve.size(); ++i)
    CHECK(log.dev_curve[i] == again.dev_curve[i]);
}

TEST_CASE("eval audio is deterministic in its seeds") {
  const Corpus corpus = synth_corpus(small_corpus_cfg());
  const BabbleSource babble(corpus.train, 4);
  const StftConfig stft_cfg = corpus.meta.cfg.stft;
  const Utterance& utt = corpus.dev[0];

  Tensor a = eval_audio(utt, stft_cfg, 5.0, &babble, 123);
  Tensor b = eval_audio(utt, stft_cfg, 5.0, &babble, 123);
  REQUIRE(a.shape() == b.shape());
  for (i64 i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

  Tensor c = eval_audio(utt, stft_cfg, 5.0, &babble, 124);
  bool differs = false;
  for (i64 i = 0; i < a.numel(); ++i)
    differs = differs || a.data()[i] != c.data()[i];
  CHECK(differs);

  // Clean path needs no babble and ignores the seed.
  Tensor clean = eval_audio(utt, stft_cfg, SnrDb(), nullptr, 0);
  CHECK(clean.shape() == a.shape());
  CHECK_THROWS(eval_audio(utt, stft_cfg, 5.0, nullptr, 0));
}

TEST_CASE("lipreading smoke run and greedy evaluation closure") {
  const Corpus corpus = synth_corpus(small_corpus_cfg());
  const ModelConfig mc = small_model_cfg();
  const LipModel model(mc);
  ParamStore params;
  Rng rng(21);
  model.declare(params, rng);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.limit_train = 8;
  cfg.limit_dev = 4;
  cfg.warmup = 10;
  TrainLog log = pretrain_lip(params, model, corpus, cfg);
  REQUIRE(log.steps.size() == 2);
  for (const StepRecord& s : log.steps) {
    CHECK(std::isfinite(s.total));
    CHECK(std::isfinite(s.ctc));
    CHECK(s.grad_norm > 0.0);
  }
  REQUIRE(log.dev_curve.size() == 1);
  CHECK(log.dev_curve[0] >= 0.0);

  const Recognizer rec = make_recognizer(params, model);
  EvalOptions opt;
  opt.greedy_ctc = true;
  opt.limit = 4;
  EvalReport rep = evaluate_split(rec, corpus.dev, corpus.meta.cfg.stft,
                                  corpus.meta.vocab, opt);
  REQUIRE(rep.records.size() == 4);
  auto [cer, wer] = rates_from_records(rep.records);
  CHECK(cer == rep.cer);
  CHECK(wer == rep.wer);
  CHECK(rep.cer >= 0.0);
  for (const EvalRecord& r : rep.records) CHECK(!r.ref_text.empty());
}

TEST_CASE("noisy augmented fine-tune is deterministic end to end") {
  const Corpus corpus = synth_corpus(small_corpus_cfg());
  const ModelConfig mc = small_model_cfg();
  const PUNet model(mc, FusionPlan::parse("early1", mc.n_update));

  auto run = [&]() {
    ParamStore params;
    Rng rng(31);
    model.declare(params, rng);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 2;
    cfg.limit_train = 4;
    cfg.limit_dev = 2;
    cfg.warmup = 10;
    cfg.noisy = true;
    cfg.augment = true;
    return train_punet(params, model, corpus, cfg);
  };
  TrainLog log = run();
  TrainLog again = run();
  REQUIRE(log.steps.size() == 2);
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    CHECK(std::isfinite(log.steps[i].total));
    CHECK(log.steps[i].total == again.steps[i].total);
    CHECK(log.steps[i].grad_norm == again.steps[i].grad_norm);
  }
}

TEST_CASE("beam evaluation over a tiny model produces coherent records") {
  const Corpus corpus = synth_corpus(small_corpus_cfg());
  const ModelConfig mc = small_model_cfg();
  const FeatConcatModel model(mc);
  ParamStore params;
  Rng rng(41);
  model.declare(params, rng);

  const Recognizer rec = make_recognizer(params, model);
  EvalOptions opt;
  opt.limit = 2;
  opt.decode.beam = 2;
  opt.decode.gamma = 0.3;
  opt.decode.psi = 0.0;
  opt.decode.max_len_ratio = 0.4;
  EvalReport rep = evaluate_split(rec, corpus.dev, corpus.meta.cfg.stft,
                                  corpus.meta.vocab, opt);
  REQUIRE(rep.records.size() == 2);
  for (const EvalRecord& r : rep.records) CHECK(std::isfinite(r.joint));

  // psi > 0 without a language model is rejected.
  EvalOptions bad = opt;
  bad.decode.psi = 0.5;
  CHECK_THROWS(evaluate_split(rec, corpus.dev, corpus.meta.cfg.stft,
                              corpus.meta.vocab, bad));
  // Noisy decode without a babble pool is rejected.
  EvalOptions noisy = opt;
  noisy.snr = 0.0;
  CHECK_THROWS(evaluate_split(rec, corpus.dev, corpus.meta.cfg.stft,
                              corpus.meta.vocab, noisy));
}

TEST_CASE("representation profile spans the grid and stays in range") {
  const Corpus corpus = synth_corpus(small_corpus_cfg());
  const ModelConfig mc = small_model_cfg();
  const FeatConcatModel model(mc);
  ParamStore params;
  Rng rng(51);
  model.declare(params, rng);

  const Recognizer rec = make_recognizer(params, model);
  const BabbleSource babble(corpus.train, 4);
  const std::vector<double> grid = {20.0, 0.0};
  SimilarityProfile p = representation_profile(
      rec, corpus.dev, corpus.meta.cfg.stft, grid, babble, 9, 2);
  CHECK(p.snr_db == grid);
  REQUIRE(p.theta.size() == 2);
  CHECK(p.utterances == 2);
  for (double t : p.theta) {
    CHECK(t >= -1.0);
    CHECK(t <= 1.0);
  }

  // Audio-free recognizers cannot be profiled.
  const LipModel lip(mc);
  ParamStore lip_params;
  Rng lrng(52);
  lip.declare(lip_params, lrng);
  const Recognizer lip_rec = make_recognizer(lip_params, lip);
  CHECK_THROWS(representation_profile(lip_rec, corpus.dev,
                                      corpus.meta.cfg.stft, grid, babble, 9,
                                      1));
}

TEST_CASE("fnv1a64 reproduces the published reference digests") {
  CHECK(fnv1a64(std::string()) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ULL);
}

TEST_CASE("corpus fingerprints identify content") {
  CorpusConfig cfg = small_corpus_cfg();
  cfg.train_count = 4;
  cfg.dev_count = 2;
  cfg.test_count = 2;
  const Corpus a = synth_corpus(cfg);
  const Corpus b = synth_corpus(cfg);
  CHECK(corpus_fingerprint(a) == corpus_fingerprint(b));
  cfg.seed = 999;
  const Corpus c = synth_corpus(cfg);
  CHECK(corpus_fingerprint(a) != corpus_fingerprint(c));
}

TEST_CASE("run manifests round-trip through text and disk") {
  RunManifest m;
  m.set("command", "train");
  m.set_int("seed", 42);
  m.set_double("peak_lr", 1e-3);
  m.set("losses.first10", join_g17({1.5, 0.25, 1.0 / 3.0}));
  m.set("command", "pretrain");  // replacement keeps position and uniqueness

  const std::string body = m.text();
  RunManifest back = RunManifest::parse(body);
  CHECK(back.get("command") == "pretrain");
  CHECK(back.get("seed") == "42");
  CHECK(back.text() == body);

  // %.17g strings recover the exact doubles.
  CHECK(std::stod(back.get("peak_lr")) == 1e-3);
  std::vector<double> losses;
  {
    std::istringstream in(back.get("losses.first10"));
    double v;
    while (in >> v) losses.push_back(v);
  }
  REQUIRE(losses.size() == 3);
  CHECK(losses[0] == 1.5);
  CHECK(losses[1] == 0.25);
  CHECK(losses[2] == 1.0 / 3.0);

  const std::string path = "test_manifest_tmp.txt";
  m.save(path);
  RunManifest loaded = RunManifest::load(path);
  CHECK(loaded.text() == body);
  std::remove(path.c_str());

  CHECK_THROWS(m.get("absent"));
  CHECK_THROWS(m.set("bad=key", "x"));
  CHECK_THROWS(RunManifest::parse("no separator\n"));
  CHECK_THROWS(RunManifest::load("does_not_exist_anywhere.txt"));
}
