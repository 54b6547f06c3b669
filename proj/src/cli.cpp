// SPDX-License-Identifier: Apache-2.0
#include "punet/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "punet/config.hpp"

namespace punet {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

class WallTimer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(Clock::now() - t0_).count();
  }

 private:
  Clock::time_point t0_ = Clock::now();
};

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", s);
  return buf;
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  fail("config: key '" + key + "' expects a boolean (0/1/true/false), got '" +
       value + "'");
}

// Overlay reader that tracks which keys were consumed so leftovers can be
// rejected with the section-qualified name.
class KvReader {
 public:
  KvReader(const std::map<std::string, std::string>& kv, std::string prefix)
      : kv_(kv), prefix_(std::move(prefix)) {}

  void take(const std::string& key, i64& field) {
    if (kv_.count(key)) {
      field = kv_int(kv_, key, field);
      used_.insert(key);
    }
  }
  void take(const std::string& key, double& field) {
    if (kv_.count(key)) {
      field = kv_double(kv_, key, field);
      used_.insert(key);
    }
  }
  void take(const std::string& key, std::string& field) {
    if (kv_.count(key)) {
      field = kv_string(kv_, key, field);
      used_.insert(key);
    }
  }
  void take(const std::string& key, bool& field) {
    auto it = kv_.find(key);
    if (it != kv_.end()) {
      field = parse_bool(it->second, prefix_ + key);
      used_.insert(key);
    }
  }

  void finish() const {
    for (const auto& [key, value] : kv_)
      require(used_.count(key) > 0,
              "config: unknown key '" + prefix_ + key + "'");
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::string prefix_;
  std::set<std::string> used_;
};

// Emits "prefix.key = value" lines in the order of the put calls.
class KvWriter {
 public:
  explicit KvWriter(std::string prefix) : prefix_(std::move(prefix)) {}

  void put(const std::string& key, i64 v) { line(key, std::to_string(v)); }
  void put(const std::string& key, double v) { line(key, format_g17(v)); }
  void put(const std::string& key, const std::string& v) { line(key, v); }
  void put_bool(const std::string& key, bool v) { line(key, v ? "1" : "0"); }

  const std::string& text() const { return text_; }

 private:
  void line(const std::string& key, const std::string& value) {
    text_ += prefix_ + key + " = " + value + "\n";
  }
  std::string prefix_, text_;
};

std::map<std::string, std::string> load_config(const std::string& path) {
  if (path.empty()) return {};
  return load_kv_file(path);
}

void reject_section(const std::map<std::string, std::string>& section,
                    const std::string& command, const std::string& name) {
  if (section.empty()) return;
  fail(command + ": config section '" + name +
       "' is not used by this command (first key: '" +
       section.begin()->first + "')");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write " + path);
  out << text;
  out.close();
  require(bool(out), "write failed for " + path);
}

void embed_config(RunManifest& m, const std::string& kv_text) {
  for (const auto& [key, value] : parse_kv_text(kv_text))
    m.set("config." + key, value);
}

// Fusion preset stems accepted by train / ablate; count errors for a valid
// stem (e.g. early9 on a 6-block stack) surface from FusionPlan::parse.
bool valid_fusion_stem(const std::string& preset) {
  if (preset == "none" || preset == "all") return true;
  for (const char* stem : {"early", "middle", "late"}) {
    const std::string s(stem);
    if (preset.rfind(s, 0) == 0) {
      const std::string rest = preset.substr(s.size());
      if (std::all_of(rest.begin(), rest.end(),
                      [](unsigned char c) { return std::isdigit(c); }))
        return true;
    }
  }
  return false;
}

const char* kValidPresets =
    "none, all, early[N], middle[N], late[N], concat";

std::string snr_label(double db) { return format_g17(db) + "dB"; }

std::string join_strings(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out;
}

std::string join_ints(const std::vector<i64>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(parts[i]);
  }
  return out;
}

// Shared by eval and ablate: decode one split and return the report.
EvalReport run_eval(const Recognizer& rec, const Corpus& corpus,
                    const std::string& split, const DecodeConfig& dc,
                    SnrDb snr, const BabbleSource* babble,
                    std::uint64_t noise_seed, i64 limit, bool greedy,
                    const StepScorer& lm_fn) {
  EvalOptions opt;
  opt.decode = dc;
  opt.snr = snr;
  opt.babble = babble;
  opt.noise_seed = noise_seed;
  opt.limit = limit;
  opt.greedy_ctc = greedy;
  return evaluate_split(rec, corpus.split(split), corpus.meta.cfg.stft,
                        corpus.meta.vocab, opt, lm_fn);
}

std::string records_tsv(const std::vector<EvalRecord>& records) {
  std::string text = "id\tref\thyp\tjoint\tctc\tdec\tlm\ttruncated\n";
  for (const EvalRecord& r : records) {
    text += r.id + "\t" + r.ref_text + "\t" + r.hyp_text + "\t" +
            format_g17(r.joint) + "\t" + format_g17(r.ctc) + "\t" +
            format_g17(r.dec) + "\t" + format_g17(r.lm) + "\t" +
            (r.truncated ? "1" : "0") + "\n";
  }
  return text;
}

}  // namespace

// ---- config plumbing ----

ConfigSections split_config(const std::map<std::string, std::string>& kv) {
  ConfigSections out;
  for (const auto& [key, value] : kv) {
    if (key.rfind("corpus.", 0) == 0)
      out.corpus[key.substr(7)] = value;
    else if (key.rfind("train.", 0) == 0)
      out.train[key.substr(6)] = value;
    else if (key.rfind("decode.", 0) == 0)
      out.decode[key.substr(7)] = value;
    else
      out.model[key] = value;
  }
  return out;
}

CorpusConfig corpus_config_from_kv(const std::map<std::string, std::string>& kv,
                                   CorpusConfig base) {
  CorpusConfig cfg = base;
  KvReader r(kv, "corpus.");
  r.take("train_count", cfg.train_count);
  r.take("dev_count", cfg.dev_count);
  r.take("test_count", cfg.test_count);
  r.take("min_words", cfg.min_words);
  r.take("max_words", cfg.max_words);
  r.take("min_syllables", cfg.min_syllables);
  r.take("max_syllables", cfg.max_syllables);
  r.take("min_char_frames", cfg.min_char_frames);
  r.take("max_char_frames", cfg.max_char_frames);
  r.take("silence_frames", cfg.silence_frames);
  r.take("visual_lead", cfg.visual_lead);
  r.take("d_v", cfg.d_v);
  r.take("visual_noise", cfg.visual_noise);
  r.take("audio_noise", cfg.audio_noise);
  r.take("partials", cfg.partials);
  r.take("freq_lo_hz", cfg.freq_lo_hz);
  r.take("freq_hi_hz", cfg.freq_hi_hz);
  r.take("amp_lo", cfg.amp_lo);
  r.take("amp_hi", cfg.amp_hi);
  r.take("sample_rate", cfg.stft.sample_rate);
  r.take("window_ms", cfg.stft.window_ms);
  r.take("hop_ms", cfg.stft.hop_ms);
  r.take("log_floor", cfg.stft.log_floor);
  r.finish();
  return cfg;
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv,
                                 TrainConfig base) {
  TrainConfig cfg = base;
  KvReader r(kv, "train.");
  r.take("epochs", cfg.epochs);
  r.take("batch", cfg.batch);
  r.take("warmup", cfg.warmup);
  r.take("peak_lr", cfg.peak_lr);
  r.take("lambda", cfg.lambda);
  r.take("label_smoothing", cfg.label_smoothing);
  r.take("clip_norm", cfg.clip_norm);
  r.take("noisy", cfg.noisy);
  r.take("augment", cfg.augment);
  r.take("time_masks", cfg.spec_aug.time_masks);
  r.take("max_time_mask", cfg.spec_aug.max_time_mask);
  r.take("freq_masks", cfg.spec_aug.freq_masks);
  r.take("max_freq_mask", cfg.spec_aug.max_freq_mask);
  r.take("max_warp", cfg.spec_aug.max_warp);
  r.take("curriculum", cfg.curriculum);
  r.take("babble_voices", cfg.babble_voices);
  r.take("limit_train", cfg.limit_train);
  r.take("limit_dev", cfg.limit_dev);
  r.finish();
  return cfg;
}

DecodeConfig decode_config_from_kv(const std::map<std::string, std::string>& kv,
                                   DecodeConfig base) {
  DecodeConfig cfg = base;
  KvReader r(kv, "decode.");
  r.take("beam", cfg.beam);
  r.take("gamma", cfg.gamma);
  r.take("psi", cfg.psi);
  r.take("max_len_ratio", cfg.max_len_ratio);
  r.finish();
  return cfg;
}

std::string model_config_kv(const ModelConfig& cfg) {
  KvWriter w("");
  w.put("vocab", cfg.vocab);
  w.put("d_a", cfg.d_a);
  w.put("d_k", cfg.d_k);
  w.put("d_ff", cfg.d_ff);
  w.put("h", cfg.h);
  w.put("conv_kernel", cfg.conv_kernel);
  w.put("dropout", cfg.dropout);
  w.put("K", cfg.K);
  w.put("d_l", cfg.d_l);
  w.put("fe_slot", cfg.fe_slot);
  w.put("n_update", cfg.n_update);
  w.put("n_predictor", cfg.n_predictor);
  w.put("n_decoder", cfg.n_decoder);
  w.put("d_v", cfg.d_v);
  w.put("audio_bins", cfg.audio_bins);
  w.put("dec_max_len", cfg.dec_max_len);
  w.put("lm_d", cfg.lm_d);
  w.put("lm_ff", cfg.lm_ff);
  w.put("lm_h", cfg.lm_h);
  w.put("lm_blocks", cfg.lm_blocks);
  w.put("lm_max_len", cfg.lm_max_len);
  w.put("fusion", cfg.fusion);
  return w.text();
}

std::string corpus_config_kv(const CorpusConfig& cfg,
                             const std::string& prefix) {
  KvWriter w(prefix);
  w.put("train_count", cfg.train_count);
  w.put("dev_count", cfg.dev_count);
  w.put("test_count", cfg.test_count);
  w.put("min_words", cfg.min_words);
  w.put("max_words", cfg.max_words);
  w.put("min_syllables", cfg.min_syllables);
  w.put("max_syllables", cfg.max_syllables);
  w.put("min_char_frames", cfg.min_char_frames);
  w.put("max_char_frames", cfg.max_char_frames);
  w.put("silence_frames", cfg.silence_frames);
  w.put("visual_lead", cfg.visual_lead);
  w.put("d_v", cfg.d_v);
  w.put("visual_noise", cfg.visual_noise);
  w.put("audio_noise", cfg.audio_noise);
  w.put("partials", cfg.partials);
  w.put("freq_lo_hz", cfg.freq_lo_hz);
  w.put("freq_hi_hz", cfg.freq_hi_hz);
  w.put("amp_lo", cfg.amp_lo);
  w.put("amp_hi", cfg.amp_hi);
  w.put("sample_rate", cfg.stft.sample_rate);
  w.put("window_ms", cfg.stft.window_ms);
  w.put("hop_ms", cfg.stft.hop_ms);
  w.put("log_floor", cfg.stft.log_floor);
  return w.text();
}

std::string train_config_kv(const TrainConfig& cfg, const std::string& prefix) {
  KvWriter w(prefix);
  w.put("epochs", cfg.epochs);
  w.put("batch", cfg.batch);
  w.put("warmup", cfg.warmup);
  w.put("peak_lr", cfg.peak_lr);
  w.put("lambda", cfg.lambda);
  w.put("label_smoothing", cfg.label_smoothing);
  w.put("clip_norm", cfg.clip_norm);
  w.put_bool("noisy", cfg.noisy);
  w.put_bool("augment", cfg.augment);
  w.put("time_masks", cfg.spec_aug.time_masks);
  w.put("max_time_mask", cfg.spec_aug.max_time_mask);
  w.put("freq_masks", cfg.spec_aug.freq_masks);
  w.put("max_freq_mask", cfg.spec_aug.max_freq_mask);
  w.put("max_warp", cfg.spec_aug.max_warp);
  w.put_bool("curriculum", cfg.curriculum);
  w.put("babble_voices", cfg.babble_voices);
  w.put("limit_train", cfg.limit_train);
  w.put("limit_dev", cfg.limit_dev);
  return w.text();
}

std::string decode_config_kv(const DecodeConfig& cfg,
                             const std::string& prefix) {
  KvWriter w(prefix);
  w.put("beam", cfg.beam);
  w.put("gamma", cfg.gamma);
  w.put("psi", cfg.psi);
  w.put("max_len_ratio", cfg.max_len_ratio);
  return w.text();
}

SnrDb parse_snr(const std::string& text) {
  if (text == "clean") return SnrDb();
  require(!text.empty(), "snr must be 'clean' or a decibel value");
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  require(end == text.c_str() + text.size(),
          "snr must be 'clean' or a decibel value, got '" + text + "'");
  return v;
}

std::string snr_to_string(SnrDb snr) {
  return snr.has_value() ? format_g17(*snr) : "clean";
}

// ---- output-directory bookkeeping ----

void prepare_out_dir(const std::string& dir, bool force) {
  require(!dir.empty(), "an output directory is required (--out)");
  const fs::path p(dir);
  if (fs::exists(p)) {
    require(fs::is_directory(p), dir + " exists and is not a directory");
    const bool empty = fs::directory_iterator(p) == fs::directory_iterator();
    require(empty || force,
            "output directory " + dir +
                " is not empty (pass --force to reuse it)");
  } else {
    std::error_code ec;
    fs::create_directories(p, ec);
    require(!ec, "cannot create output directory " + dir + ": " + ec.message());
  }
}

DirLock::DirLock(const std::string& dir, bool force) : path_(dir + "/.lock") {
  if (force) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  require(f != nullptr, "output directory " + dir +
                            " is locked by another run (remove " + path_ +
                            " or pass --force)");
  std::fputs("punet\n", f);
  std::fclose(f);
  owned_ = true;
}

DirLock::~DirLock() {
  if (owned_) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

// ---- path resolution and model loading ----

std::string resolve_corpus_manifest(const std::string& path) {
  require(!path.empty(), "a corpus path is required (--data)");
  if (fs::is_directory(path)) return path + "/manifest.tsv";
  return path;
}

std::string resolve_ckpt_path(const std::string& path) {
  require(!path.empty(), "a checkpoint path is required");
  if (fs::is_directory(path)) return path + "/model.ckpt";
  return path;
}

LoadedModel load_model_dir(const std::string& dir, const Vocabulary& vocab) {
  require(!dir.empty(), "a model run directory is required");
  require(fs::is_directory(dir), dir + " is not a run directory");
  const std::string cfg_path = dir + "/config.kv";
  const std::string ckpt_path = dir + "/model.ckpt";
  require(fs::exists(cfg_path), dir + " has no config.kv");
  require(fs::exists(ckpt_path), dir + " has no model.ckpt");

  auto kv = load_kv_file(cfg_path);
  const auto kind_it = kv.find("kind");
  require(kind_it != kv.end(), cfg_path + " lacks the 'kind' entry");

  LoadedModel out;
  out.kind = kind_it->second;
  kv.erase("kind");
  const ConfigSections sec = split_config(kv);
  out.cfg = model_config_from_kv(sec.model);

  Rng rng(1);  // placeholder values; the checkpoint overwrites them all
  if (out.kind == "lip") {
    out.lip.emplace(out.cfg);
    out.lip->declare(out.params, rng);
  } else if (out.kind == "asr") {
    out.asr.emplace(out.cfg);
    out.asr->declare(out.params, rng);
  } else if (out.kind == "punet") {
    out.punet.emplace(out.cfg,
                      FusionPlan::parse(out.cfg.fusion, out.cfg.n_update));
    out.punet->declare(out.params, rng);
  } else if (out.kind == "concat") {
    out.concat.emplace(out.cfg);
    out.concat->declare(out.params, rng);
  } else if (out.kind == "lm") {
    out.lm.emplace(out.cfg, vocab);
    out.lm->declare(out.params, rng);
  } else {
    fail(cfg_path + ": unknown model kind '" + out.kind + "'");
  }

  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  ckpt.load_params_into(out.params);
  return out;
}

Recognizer recognizer_for(const LoadedModel& model) {
  if (model.kind == "lip") return make_recognizer(model.params, *model.lip);
  if (model.kind == "asr") return make_recognizer(model.params, *model.asr);
  if (model.kind == "punet")
    return make_recognizer(model.params, *model.punet);
  if (model.kind == "concat")
    return make_recognizer(model.params, *model.concat);
  fail("model kind '" + model.kind + "' is not a recognizer");
}

StepScorer lm_scorer_for(const LoadedModel& model) {
  require(model.kind == "lm",
          "model kind '" + model.kind + "' is not a language model");
  return make_lm_scorer(model.params, *model.lm);
}

// ---- commands ----

RunManifest cmd_gen_data(const GenDataArgs& args) {
  WallTimer timer;
  const auto kv = load_config(args.common.config_path);
  const ConfigSections sec = split_config(kv);
  reject_section(sec.model, "gen-data", "model");
  reject_section(sec.train, "gen-data", "train");
  reject_section(sec.decode, "gen-data", "decode");

  CorpusConfig ccfg = corpus_config_from_kv(sec.corpus);
  ccfg.seed = args.common.seed;
  make_corpus_meta(ccfg);  // validates before touching the disk

  prepare_out_dir(args.common.out, args.common.force);
  DirLock lock(args.common.out, args.common.force);

  const Corpus corpus = synth_corpus(ccfg);
  save_corpus(corpus, args.common.out);
  const std::string cfg_text = corpus_config_kv(ccfg);
  write_text_file(args.common.out + "/config.kv", cfg_text);

  RunManifest m;
  m.set("command", "gen-data");
  m.set_int("seed", static_cast<i64>(args.common.seed));
  m.set_int("counts.train", static_cast<i64>(corpus.train.size()));
  m.set_int("counts.dev", static_cast<i64>(corpus.dev.size()));
  m.set_int("counts.test", static_cast<i64>(corpus.test.size()));
  m.set_int("vocab.size", corpus.meta.vocab.size());
  m.set("data.fingerprint", hex16(corpus_fingerprint(corpus)));
  embed_config(m, cfg_text);
  m.set("wall.seconds", format_seconds(timer.seconds()));
  m.save(args.common.out + "/manifest.txt");
  return m;
}

RunManifest cmd_pretrain(const PretrainArgs& args) {
  WallTimer timer;
  require(args.mode == "lip" || args.mode == "asr" || args.mode == "lm",
          "pretrain: mode must be lip, asr or lm (got '" + args.mode + "')");
  const auto kv = load_config(args.common.config_path);
  const ConfigSections sec = split_config(kv);
  reject_section(sec.corpus, "pretrain", "corpus");
  reject_section(sec.decode, "pretrain", "decode");

  const ModelConfig mc = model_config_from_kv(sec.model);
  TrainConfig tc = train_config_from_kv(sec.train);
  tc.seed = args.common.seed;
  tc.validate();

  const std::string data = resolve_corpus_manifest(args.data);
  const Corpus corpus = load_corpus(data);

  prepare_out_dir(args.common.out, args.common.force);
  DirLock lock(args.common.out, args.common.force);

  ParamStore params;
  Rng rng(mix_seed(args.common.seed ^ fnv1a64("pretrain/" + args.mode)));
  TrainLog log;
  i64 n_params = 0;
  if (args.mode == "lip") {
    const LipModel model(mc);
    model.declare(params, rng);
    n_params = model.param_count();
    log = pretrain_lip(params, model, corpus, tc);
  } else if (args.mode == "asr") {
    const AsrModel model(mc);
    model.declare(params, rng);
    n_params = model.param_count();
    log = pretrain_asr(params, model, corpus, tc);
  } else {
    const CharLM model(mc, corpus.meta.vocab);
    model.declare(params, rng);
    n_params = model.param_count();
    log = pretrain_lm(params, model, corpus, tc);
  }

  Checkpoint ckpt;
  ckpt.put_params(params);
  ckpt.put_int("meta.optimizer_steps", static_cast<i64>(log.steps.size()));
  ckpt.put_int("meta.seed", static_cast<i64>(args.common.seed));
  ckpt.save(args.common.out + "/model.ckpt");

  const std::string cfg_text =
      "kind = " + args.mode + "\n" + model_config_kv(mc) + train_config_kv(tc);
  write_text_file(args.common.out + "/config.kv", cfg_text);

  RunManifest m;
  m.set("command", "pretrain");
  m.set("mode", args.mode);
  m.set_int("seed", static_cast<i64>(args.common.seed));
  m.set("data", data);
  m.set("data.fingerprint", hex16(corpus_fingerprint(corpus)));
  embed_config(m, cfg_text);
  m.set_int("params.count", n_params);
  m.set_int("optimizer.steps", static_cast<i64>(log.steps.size()));
  m.set("losses.first10", join_g17(log.first_losses()));
  m.set("dev.curve", join_g17(log.dev_curve));
  m.set("checkpoint", "model.ckpt");
  m.set("wall.seconds", format_seconds(timer.seconds()));
  m.save(args.common.out + "/manifest.txt");
  return m;
}

RunManifest cmd_train(const TrainArgs& args) {
  WallTimer timer;
  const bool is_concat = args.preset == "concat";
  require(is_concat || valid_fusion_stem(args.preset),
          "train: preset '" + args.preset +
              "' unknown; valid presets: " + std::string(kValidPresets));
  require(args.asr_init.empty() == args.lip_init.empty(),
          "train: pass both --asr-init and --lip-init, or neither for random "
          "initialization");

  const auto kv = load_config(args.common.config_path);
  const ConfigSections sec = split_config(kv);
  reject_section(sec.corpus, "train", "corpus");
  reject_section(sec.decode, "train", "decode");

  ModelConfig mc = model_config_from_kv(sec.model);
  FusionPlan plan;
  if (!is_concat) {
    plan = FusionPlan::parse(args.preset, mc.n_update);  // count errors here
    mc.fusion = args.preset;
  }
  TrainConfig tc = train_config_from_kv(sec.train);
  tc.seed = args.common.seed;
  tc.validate();

  const std::string data = resolve_corpus_manifest(args.data);
  const Corpus corpus = load_corpus(data);

  prepare_out_dir(args.common.out, args.common.force);
  DirLock lock(args.common.out, args.common.force);

  ParamStore params;
  Rng rng(mix_seed(args.common.seed ^ fnv1a64("train/" + args.preset)));
  TrainLog log;
  i64 n_params = 0;
  if (is_concat) {
    const FeatConcatModel model(mc);
    model.declare(params, rng);
    n_params = model.param_count();
    if (!args.asr_init.empty())
      init_concat_from_pretrained(
          params, model, Checkpoint::load(resolve_ckpt_path(args.asr_init)),
          Checkpoint::load(resolve_ckpt_path(args.lip_init)));
    log = train_concat(params, model, corpus, tc);
  } else {
    const PUNet model(mc, plan);
    model.declare(params, rng);
    n_params = model.param_count();
    if (!args.asr_init.empty())
      init_from_pretrained(
          params, model, Checkpoint::load(resolve_ckpt_path(args.asr_init)),
          Checkpoint::load(resolve_ckpt_path(args.lip_init)));
    log = train_punet(params, model, corpus, tc);
  }

  Checkpoint ckpt;
  ckpt.put_params(params);
  ckpt.put_int("meta.optimizer_steps", static_cast<i64>(log.steps.size()));
  ckpt.put_int("meta.seed", static_cast<i64>(args.common.seed));
  ckpt.save(args.common.out + "/model.ckpt");

  const std::string kind = is_concat ? "concat" : "punet";
  const std::string cfg_text =
      "kind = " + kind + "\n" + model_config_kv(mc) + train_config_kv(tc);
  write_text_file(args.common.out + "/config.kv", cfg_text);

  RunManifest m;
  m.set("command", "train");
  m.set("preset", args.preset);
  m.set_int("seed", static_cast<i64>(args.common.seed));
  m.set("data", data);
  m.set("data.fingerprint", hex16(corpus_fingerprint(corpus)));
  if (!args.asr_init.empty()) {
    m.set("init.asr", resolve_ckpt_path(args.asr_init));
    m.set("init.lip", resolve_ckpt_path(args.lip_init));
  }
  embed_config(m, cfg_text);
  m.set_int("params.count", n_params);
  m.set_int("optimizer.steps", static_cast<i64>(log.steps.size()));
  m.set("losses.first10", join_g17(log.first_losses()));
  m.set("dev.curve", join_g17(log.dev_curve));
  m.set("checkpoint", "model.ckpt");
  m.set("wall.seconds", format_seconds(timer.seconds()));
  m.save(args.common.out + "/manifest.txt");
  return m;
}

RunManifest cmd_eval(const EvalArgs& args) {
  WallTimer timer;
  const auto kv = load_config(args.common.config_path);
  const ConfigSections sec = split_config(kv);
  reject_section(sec.model, "eval", "model");
  reject_section(sec.corpus, "eval", "corpus");
  reject_section(sec.train, "eval", "train");

  DecodeConfig dc = decode_config_from_kv(sec.decode);
  dc.validate();
  const SnrDb snr = parse_snr(args.snr);
  require(args.limit >= 0, "eval: --limit must be >= 0");
  if (snr.has_value())
    require(args.voices >= 2, "eval: babble needs at least 2 voices");
  if (dc.psi > 0.0 && !args.greedy)
    require(!args.lm.empty(),
            "eval: decode.psi > 0 needs --lm <run dir> (or set decode.psi "
            "= 0)");

  const std::string data = resolve_corpus_manifest(args.data);
  const Corpus corpus = load_corpus(data);
  const LoadedModel model = load_model_dir(args.model, corpus.meta.vocab);
  require(model.kind != "lm",
          "eval: " + args.model +
              " holds a language model; pass a recognizer run directory");
  const Recognizer rec = recognizer_for(model);

  std::optional<LoadedModel> lm_model;
  StepScorer lm_fn;
  if (!args.lm.empty()) {
    lm_model = load_model_dir(args.lm, corpus.meta.vocab);
    require(lm_model->kind == "lm",
            "eval: --lm must point at a language-model run (got kind '" +
                lm_model->kind + "')");
    lm_fn = lm_scorer_for(*lm_model);
  }

  prepare_out_dir(args.common.out, args.common.force);
  DirLock lock(args.common.out, args.common.force);

  std::optional<BabbleSource> babble;
  if (snr.has_value()) babble.emplace(corpus.train, args.voices);

  const EvalReport report =
      run_eval(rec, corpus, args.split, dc, snr, babble ? &*babble : nullptr,
               args.noise_seed, args.limit, args.greedy, lm_fn);
  const auto [cer_again, wer_again] = rates_from_records(report.records);
  require(cer_again == report.cer && wer_again == report.wer,
          "internal: summary does not match the per-utterance records");

  const std::string records = records_tsv(report.records);
  write_text_file(args.common.out + "/records.tsv", records);

  RunManifest m;
  m.set("command", "eval");
  m.set_int("seed", static_cast<i64>(args.common.seed));
  m.set("model", args.model);
  m.set("model.kind", model.kind);
  if (!args.lm.empty()) m.set("lm", args.lm);
  m.set("data", data);
  m.set("data.fingerprint", hex16(corpus_fingerprint(corpus)));
  m.set("split", args.split);
  m.set("snr", snr_to_string(snr));
  m.set_int("noise.seed", static_cast<i64>(args.noise_seed));
  m.set_int("noise.voices", args.voices);
  m.set_int("limit", args.limit);
  m.set("decode.mode", args.greedy ? "greedy-ctc" : "beam");
  embed_config(m, decode_config_kv(dc));
  m.set_int("records.count", static_cast<i64>(report.records.size()));
  m.set_int("metrics.char_edits", report.char_edits);
  m.set_int("metrics.char_total", report.char_total);
  m.set_int("metrics.word_edits", report.word_edits);
  m.set_int("metrics.word_total", report.word_total);
  m.set("metrics.cer", format_g17(report.cer));
  m.set("metrics.wer", format_g17(report.wer));
  m.set("records", "records.tsv");
  m.set("records.fnv1a", hex16(fnv1a64(records)));
  m.set("wall.seconds", format_seconds(timer.seconds()));
  m.save(args.common.out + "/manifest.txt");
  return m;
}

RunManifest cmd_ablate(const AblateArgs& args) {
  WallTimer timer;
  const auto kv = load_config(args.common.config_path);
  const ConfigSections sec = split_config(kv);
  reject_section(sec.corpus, "ablate", "corpus");

  ModelConfig mc = model_config_from_kv(sec.model);
  TrainConfig tc = train_config_from_kv(sec.train);
  tc.seed = args.common.seed;
  tc.validate();
  DecodeConfig dc = decode_config_from_kv(sec.decode);
  dc.validate();

  std::vector<std::string> presets =
      args.presets.empty() ? std::vector<std::string>{mc.fusion}
                           : args.presets;
  std::vector<std::string> slots =
      args.slots.empty() ? std::vector<std::string>{mc.fe_slot} : args.slots;
  std::vector<i64> ks = args.ks.empty() ? std::vector<i64>{mc.K} : args.ks;
  for (const std::string& p : presets)
    require(valid_fusion_stem(p),
            "ablate: preset '" + p + "' unknown; valid presets: none, all, "
            "early[N], middle[N], late[N]");
  for (const std::string& s : slots)
    require(s == "first" || s == "second" || s == "both",
            "ablate: fe slot '" + s + "' unknown; valid slots: first, "
            "second, both");
  for (const i64 k : ks) {
    require(k >= 1, "ablate: K must be >= 1");
    require(mc.d_ff % k == 0, "ablate: d_ff=" + std::to_string(mc.d_ff) +
                                  " is not divisible by K=" +
                                  std::to_string(k));
  }
  const i64 combos = static_cast<i64>(presets.size()) *
                     static_cast<i64>(slots.size()) *
                     static_cast<i64>(ks.size());
  require(combos >= 1, "ablate: the sweep is empty");
  const SnrDb point = parse_snr(args.snr);
  require(point.has_value(), "ablate: --snr must be a decibel value");
  require(args.asr_init.empty() == args.lip_init.empty(),
          "ablate: pass both --asr-init and --lip-init, or neither");

  const std::string data = resolve_corpus_manifest(args.data);
  const Corpus corpus = load_corpus(data);

  std::optional<Checkpoint> asr_ckpt, lip_ckpt;
  if (!args.asr_init.empty()) {
    asr_ckpt = Checkpoint::load(resolve_ckpt_path(args.asr_init));
    lip_ckpt = Checkpoint::load(resolve_ckpt_path(args.lip_init));
  }

  prepare_out_dir(args.common.out, args.common.force);
  DirLock lock(args.common.out, args.common.force);

  const BabbleSource babble(corpus.train, args.voices);
  std::string table =
      "preset\tfe_slot\tK\td_l\tparams\tcer_clean\tcer_noisy\n";
  i64 rows = 0;
  for (const std::string& preset : presets) {
    for (const std::string& slot : slots) {
      for (const i64 k : ks) {
        ModelConfig mc2 = mc;
        mc2.fusion = preset;
        mc2.fe_slot = slot;
        mc2.K = k;
        mc2.d_l = mc.d_ff / k;
        const FusionPlan plan = FusionPlan::parse(preset, mc2.n_update);
        const PUNet net(mc2, plan);
        ParamStore params;
        Rng rng(mix_seed(args.common.seed ^
                         fnv1a64("ablate/" + preset + "/" + slot + "/" +
                                 std::to_string(k))));
        net.declare(params, rng);
        if (asr_ckpt) init_from_pretrained(params, net, *asr_ckpt, *lip_ckpt);
        TrainConfig tc2 = tc;  // identical seed across combinations
        train_punet(params, net, corpus, tc2);
        const Recognizer rec = make_recognizer(params, net);
        const EvalReport clean_rep =
            run_eval(rec, corpus, "test", dc, SnrDb(), nullptr,
                     args.noise_seed, args.limit, args.greedy, StepScorer());
        const EvalReport noisy_rep =
            run_eval(rec, corpus, "test", dc, point, &babble, args.noise_seed,
                     args.limit, args.greedy, StepScorer());
        table += preset + "\t" + slot + "\t" + std::to_string(k) + "\t" +
                 std::to_string(mc2.d_l) + "\t" +
                 std::to_string(net.param_count()) + "\t" +
                 format_g17(clean_rep.cer) + "\t" +
                 format_g17(noisy_rep.cer) + "\n";
        ++rows;
      }
    }
  }
  write_text_file(args.common.out + "/table.tsv", table);

  RunManifest m;
  m.set("command", "ablate");
  m.set_int("seed", static_cast<i64>(args.common.seed));
  m.set("data", data);
  m.set("data.fingerprint", hex16(corpus_fingerprint(corpus)));
  if (!args.asr_init.empty()) {
    m.set("init.asr", resolve_ckpt_path(args.asr_init));
    m.set("init.lip", resolve_ckpt_path(args.lip_init));
  }
  m.set("sweep.presets", join_strings(presets));
  m.set("sweep.slots", join_strings(slots));
  m.set("sweep.ks", join_ints(ks));
  m.set("snr", snr_to_string(point));
  m.set_int("noise.seed", static_cast<i64>(args.noise_seed));
  m.set_int("noise.voices", args.voices);
  m.set_int("limit", args.limit);
  m.set("decode.mode", args.greedy ? "greedy-ctc" : "beam");
  embed_config(m, model_config_kv(mc) + train_config_kv(tc) +
                      decode_config_kv(dc));
  m.set_int("table.rows", rows);
  m.set("table", "table.tsv");
  m.set("table.fnv1a", hex16(fnv1a64(table)));
  m.set("wall.seconds", format_seconds(timer.seconds()));
  m.save(args.common.out + "/manifest.txt");
  return m;
}

RunManifest cmd_analyze(const AnalyzeArgs& args) {
  WallTimer timer;
  const auto kv = load_config(args.common.config_path);
  require(kv.empty(), "analyze: config file keys are not used");
  require(!args.models.empty(),
          "analyze: pass at least one --model run directory");
  require(!args.grid.empty(), "analyze: the SNR grid is empty");

  const std::string data = resolve_corpus_manifest(args.data);
  const Corpus corpus = load_corpus(data);

  prepare_out_dir(args.common.out, args.common.force);
  DirLock lock(args.common.out, args.common.force);

  const BabbleSource babble(corpus.train, args.voices);
  const std::vector<Utterance>& utts = corpus.split("test");
  const StftConfig& stft_cfg = corpus.meta.cfg.stft;

  std::string table = "model\tkind\tclean";
  for (const double g : args.grid) table += "\t" + snr_label(g);
  table += "\n";

  RunManifest m;
  m.set("command", "analyze");
  m.set_int("seed", static_cast<i64>(args.common.seed));
  m.set("data", data);
  m.set("data.fingerprint", hex16(corpus_fingerprint(corpus)));
  m.set("grid", join_g17(args.grid));
  m.set_int("noise.seed", static_cast<i64>(args.noise_seed));
  m.set_int("noise.voices", args.voices);
  m.set_int("limit", args.limit);
  m.set_int("models.count", static_cast<i64>(args.models.size()));

  for (std::size_t i = 0; i < args.models.size(); ++i) {
    const std::string& dir = args.models[i];
    const LoadedModel model = load_model_dir(dir, corpus.meta.vocab);
    require(model.kind != "lm" && model.kind != "lip",
            "analyze: " + dir + " holds a " + model.kind +
                " model, which has no audio pathway to profile");
    const Recognizer rec = recognizer_for(model);

    const i64 n = args.limit > 0
                      ? std::min<i64>(args.limit, (i64)utts.size())
                      : (i64)utts.size();
    require(n > 0, "analyze: the test split is empty");
    double clean_sum = 0.0;
    for (i64 j = 0; j < n; ++j) {
      const Tensor audio =
          eval_audio(utts[j], stft_cfg, SnrDb(), nullptr, args.noise_seed);
      const Tensor visual = prep_visual(utts[j].visual);
      const UtteranceScores scores = rec.encode(audio, visual);
      clean_sum += cosine_frames(scores.memory, scores.memory).mean;
    }
    const double clean = clean_sum / static_cast<double>(n);

    const SimilarityProfile prof = representation_profile(
        rec, utts, stft_cfg, args.grid, babble, args.noise_seed, args.limit);

    table += dir + "\t" + model.kind + "\t" + format_g17(clean);
    for (const double t : prof.theta) table += "\t" + format_g17(t);
    table += "\n";

    const std::string key = "profile." + std::to_string(i);
    m.set(key + ".model", dir);
    m.set(key + ".kind", model.kind);
    m.set(key + ".clean", format_g17(clean));
    m.set(key + ".theta", join_g17(prof.theta));
  }

  write_text_file(args.common.out + "/profiles.tsv", table);
  m.set("profiles", "profiles.tsv");
  m.set("profiles.fnv1a", hex16(fnv1a64(table)));
  m.set("wall.seconds", format_seconds(timer.seconds()));
  m.save(args.common.out + "/manifest.txt");
  return m;
}

}  // namespace punet
