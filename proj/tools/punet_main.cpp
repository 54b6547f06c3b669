// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. All substance lives in the library's cmd_*
// functions; this file only maps argv onto their argument structs and turns
// any failure into a single machine-parsable "error: ..." line.
#include <cstdio>
#include <exception>

#include "CLI11.hpp"
#include "punet/cli.hpp"

namespace {

void add_common(CLI::App* cmd, punet::CliCommon* common) {
  cmd->add_option("--seed", common->seed, "master random seed")
      ->capture_default_str();
  cmd->add_option("--config", common->config_path,
                  "key = value configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", common->out, "output directory")->required();
  cmd->add_flag("--force", common->force,
                "reuse a non-empty output directory / clear a stale lock");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"predict-and-update audio-visual speech recognition"};
  app.require_subcommand(1);

  punet::GenDataArgs gen;
  auto* c_gen =
      app.add_subcommand("gen-data", "synthesize the audio-visual corpus");
  add_common(c_gen, &gen.common);

  punet::PretrainArgs pre;
  auto* c_pre =
      app.add_subcommand("pretrain", "pretrain one stream on the corpus");
  add_common(c_pre, &pre.common);
  c_pre->add_option("--mode", pre.mode, "lip | asr | lm")->required();
  c_pre->add_option("--data", pre.data, "corpus directory")->required();

  punet::TrainArgs tr;
  auto* c_tr = app.add_subcommand(
      "train", "train a fusion model (predict-and-update or concat)");
  add_common(c_tr, &tr.common);
  c_tr->add_option("--data", tr.data, "corpus directory")->required();
  c_tr->add_option("--preset", tr.preset,
                   "none | all | early[N] | middle[N] | late[N] | concat")
      ->capture_default_str();
  c_tr->add_option("--asr-init", tr.asr_init,
                   "audio pretrain run directory or checkpoint");
  c_tr->add_option("--lip-init", tr.lip_init,
                   "lipreading pretrain run directory or checkpoint");

  punet::EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "decode a split and score CER/WER");
  add_common(c_ev, &ev.common);
  c_ev->add_option("--data", ev.data, "corpus directory")->required();
  c_ev->add_option("--model", ev.model, "run directory to evaluate")
      ->required();
  c_ev->add_option("--split", ev.split, "train | dev | test")
      ->capture_default_str();
  c_ev->add_option("--snr", ev.snr, "'clean' or a decibel value")
      ->capture_default_str();
  c_ev->add_option("--lm", ev.lm, "language-model run directory");
  c_ev->add_option("--limit", ev.limit, "utterance cap, 0 = whole split")
      ->capture_default_str();
  c_ev->add_option("--noise-seed", ev.noise_seed, "evaluation noise seed")
      ->capture_default_str();
  c_ev->add_option("--voices", ev.voices, "babble voices")
      ->capture_default_str();
  c_ev->add_flag("--greedy", ev.greedy,
                 "best-path CTC decoding instead of beam search");

  punet::AblateArgs ab;
  auto* c_ab = app.add_subcommand(
      "ablate", "sweep fusion presets, FE slots and K, then tabulate CER");
  add_common(c_ab, &ab.common);
  c_ab->add_option("--data", ab.data, "corpus directory")->required();
  c_ab->add_option("--asr-init", ab.asr_init,
                   "audio pretrain run directory or checkpoint");
  c_ab->add_option("--lip-init", ab.lip_init,
                   "lipreading pretrain run directory or checkpoint");
  c_ab->add_option("--presets", ab.presets, "fusion presets to sweep")
      ->delimiter(',');
  c_ab->add_option("--slots", ab.slots, "FE slots to sweep")->delimiter(',');
  c_ab->add_option("--ks", ab.ks, "subspace counts to sweep")->delimiter(',');
  c_ab->add_option("--snr", ab.snr, "noisy evaluation point in dB")
      ->capture_default_str();
  c_ab->add_option("--limit", ab.limit, "utterance cap per evaluation")
      ->capture_default_str();
  c_ab->add_option("--noise-seed", ab.noise_seed, "evaluation noise seed")
      ->capture_default_str();
  c_ab->add_option("--voices", ab.voices, "babble voices")
      ->capture_default_str();
  bool beam = false;
  c_ab->add_flag("--beam", beam, "beam-search decoding instead of best-path");

  punet::AnalyzeArgs an;
  auto* c_an = app.add_subcommand(
      "analyze", "profile clean-vs-noisy representation similarity");
  add_common(c_an, &an.common);
  c_an->add_option("--data", an.data, "corpus directory")->required();
  c_an->add_option("--models", an.models, "run directories to profile")
      ->required()
      ->delimiter(',');
  c_an->add_option("--grid", an.grid, "descending SNR grid in dB")
      ->delimiter(',');
  c_an->add_option("--limit", an.limit, "utterance cap, 0 = whole split")
      ->capture_default_str();
  c_an->add_option("--noise-seed", an.noise_seed, "evaluation noise seed")
      ->capture_default_str();
  c_an->add_option("--voices", an.voices, "babble voices")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (*c_gen) punet::cmd_gen_data(gen);
    if (*c_pre) punet::cmd_pretrain(pre);
    if (*c_tr) punet::cmd_train(tr);
    if (*c_ev) punet::cmd_eval(ev);
    if (*c_ab) {
      ab.greedy = !beam;
      punet::cmd_ablate(ab);
    }
    if (*c_an) punet::cmd_analyze(an);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
