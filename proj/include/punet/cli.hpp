// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "punet/corpus.hpp"
#include "punet/decoding.hpp"
#include "punet/model.hpp"
#include "punet/train.hpp"

namespace punet {

// ---- config plumbing ----
//
// One flat key = value file configures a run. Bare keys overlay the model
// configuration; dotted prefixes route to the other sections:
//   corpus.train_count = 500      -> CorpusConfig.train_count
//   train.epochs = 4              -> TrainConfig.epochs
//   decode.beam = 8               -> DecodeConfig.beam
//   d_a = 32                      -> ModelConfig.d_a
// Unknown keys in any section are rejected.

struct ConfigSections {
  std::map<std::string, std::string> model, corpus, train, decode;
};

ConfigSections split_config(const std::map<std::string, std::string>& kv);

CorpusConfig corpus_config_from_kv(const std::map<std::string, std::string>& kv,
                                   CorpusConfig base = CorpusConfig());
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv,
                                 TrainConfig base = TrainConfig());
DecodeConfig decode_config_from_kv(const std::map<std::string, std::string>& kv,
                                   DecodeConfig base = DecodeConfig());

// Full resolved snapshots, one "prefix.key = value" line per field, in
// declaration order. `model_config_kv` emits bare keys.
std::string model_config_kv(const ModelConfig& cfg);
std::string corpus_config_kv(const CorpusConfig& cfg, const std::string& prefix = "corpus.");
std::string train_config_kv(const TrainConfig& cfg, const std::string& prefix = "train.");
std::string decode_config_kv(const DecodeConfig& cfg, const std::string& prefix = "decode.");

// "clean" or a decibel number ("0", "-5", "12.5").
SnrDb parse_snr(const std::string& text);
std::string snr_to_string(SnrDb snr);

// ---- output-directory bookkeeping ----

// Creates `dir` (and parents) when missing; an existing non-empty
// directory is rejected unless `force` is set.
void prepare_out_dir(const std::string& dir, bool force);

// Exclusive `<dir>/.lock` marker so only one run writes a directory at a
// time. A leftover lock from a crashed run is cleared by `force`.
class DirLock {
 public:
  DirLock(const std::string& dir, bool force);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  bool owned_ = false;
};

// ---- command arguments ----

struct CliCommon {
  std::uint64_t seed = 1;
  std::string config_path;  // optional key = value file
  std::string out;          // output directory (required)
  bool force = false;
};

struct GenDataArgs {
  CliCommon common;
};

struct PretrainArgs {
  CliCommon common;
  std::string mode;  // lip | asr | lm
  std::string data;  // corpus directory or manifest.tsv path
};

struct TrainArgs {
  CliCommon common;
  std::string data;
  std::string preset = "early";  // fusion preset, or "concat"
  std::string asr_init;          // run dir or .ckpt path; may be empty
  std::string lip_init;
};

struct EvalArgs {
  CliCommon common;
  std::string data;
  std::string model;          // run dir written by pretrain / train
  std::string split = "test";
  std::string snr = "clean";  // "clean" or dB value
  std::string lm;             // LM run dir; required when decode.psi > 0
  i64 limit = 0;
  std::uint64_t noise_seed = 77;
  i64 voices = 6;       // babble voices when snr is a decibel value
  bool greedy = false;  // best-path CTC decode instead of beam search
};

struct AblateArgs {
  CliCommon common;
  std::string data;
  std::string asr_init;  // shared pretrained inits; may be empty
  std::string lip_init;
  std::vector<std::string> presets;  // empty = the configured fusion plan
  std::vector<std::string> slots;    // empty = the configured fe_slot
  std::vector<i64> ks;               // empty = the configured K
  std::string snr = "0";             // noisy evaluation point
  i64 limit = 0;                     // test utterances per evaluation
  std::uint64_t noise_seed = 77;
  i64 voices = 6;
  bool greedy = true;  // best-path decoding keeps the sweep affordable
};

struct AnalyzeArgs {
  CliCommon common;
  std::string data;
  std::vector<std::string> models;        // run dirs
  std::vector<double> grid = {20.0, 15.0, 10.0, 5.0, 0.0, -5.0};
  i64 limit = 0;
  std::uint64_t noise_seed = 77;
  i64 voices = 6;
};

// ---- commands ----
//
// Each command writes its artifacts plus exactly one <out>/manifest.txt
// and returns the manifest. Failures throw; the binary maps them to a
// single machine-parsable "error: ..." line and a nonzero exit.
//
// gen-data   corpus files (manifest.tsv, meta.bin, utt/) into --out.
// pretrain   model.ckpt + config.kv for one stream (lip | asr | lm).
// train      model.ckpt + config.kv for a fusion model (P&U or concat).
// eval       records.tsv (one row per utterance) + corpus-level CER/WER.
// ablate     table.tsv over presets x FE slots x K at one noisy SNR.
// analyze    profiles.tsv of clean-vs-noisy representation cosines.

RunManifest cmd_gen_data(const GenDataArgs& args);
RunManifest cmd_pretrain(const PretrainArgs& args);
RunManifest cmd_train(const TrainArgs& args);
RunManifest cmd_eval(const EvalArgs& args);
RunManifest cmd_ablate(const AblateArgs& args);
RunManifest cmd_analyze(const AnalyzeArgs& args);

// ---- model-directory loading ----

// A model reconstructed from a run directory's config.kv + model.ckpt.
// Exactly one of the component slots is engaged, matching `kind`.
struct LoadedModel {
  std::string kind;  // lip | asr | lm | punet | concat
  ModelConfig cfg;
  ParamStore params;
  std::optional<LipModel> lip;
  std::optional<AsrModel> asr;
  std::optional<PUNet> punet;
  std::optional<FeatConcatModel> concat;
  std::optional<CharLM> lm;
};

LoadedModel load_model_dir(const std::string& dir, const Vocabulary& vocab);

// Recognizer over the loaded model; rejects kind == "lm". The closures
// reference `model`, which must stay in place while they are used.
Recognizer recognizer_for(const LoadedModel& model);

// Next-token scorer for a loaded character LM; rejects other kinds.
StepScorer lm_scorer_for(const LoadedModel& model);

// Resolve a --data value: a directory means <dir>/manifest.tsv.
std::string resolve_corpus_manifest(const std::string& path);
// Resolve an init/model path: a directory means <dir>/model.ckpt.
std::string resolve_ckpt_path(const std::string& path);

}  // namespace punet
