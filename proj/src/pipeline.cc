// Copyright 2026 The duet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "duet/pipeline.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "duet/binary_io.h"
#include "duet/checkpoint.h"

namespace duet {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kCorpusStream = 2;
constexpr std::uint64_t kSampleStream = 3;
constexpr std::uint64_t kQuantizerStream = 5;
constexpr std::uint64_t kAnalyzeStream = 6;

template <typename F>
auto with_precision(Precision p, F&& f) {
  if (p == Precision::kFloat64) return f(double{});
  return f(float{});
}

void write_config(const fs::path& path, const RunConfig& cfg) {
  write_file_atomic(path, config_to_json(cfg) + "\n");
}

fs::path config_path_for(const fs::path& out) {
  fs::path p = out;
  p += ".config.json";
  return p;
}

void ensure_dir(const fs::path& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

void check_dim(const Corpus& corpus, const RunConfig& cfg) {
  if (corpus.input_dim != cfg.model.encoder.input_dim) {
    throw ConfigError("corpus frames have " + std::to_string(corpus.input_dim) +
                      " dimensions but the model expects " +
                      std::to_string(cfg.model.encoder.input_dim));
  }
}

template <typename T>
TrainResult run_training(TrainState<T>& st, const Corpus& corpus, const RunConfig& cfg, Phase phase,
                         std::int64_t total, const fs::path& out_dir, std::ostream& log) {
  ensure_dir(out_dir);
  write_config(out_dir / "config.json", cfg);
  TrainResult result;
  result.metrics = out_dir / "metrics.csv";
  result.checkpoint = out_dir / "checkpoint.duet";
  std::ofstream metrics(result.metrics, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics.string());
  metrics << metrics_header(phase == Phase::kPretrain ? cfg.model.encoder.top_k : 0) << "\n";
  const std::int64_t every = std::max<std::int64_t>(1, total / 20);
  train_loop(st, corpus, cfg, phase, total, [&](const StepMetrics& m) {
    metrics << metrics_row(m) << "\n";
    result.trace.push_back(m);
    if (m.step % every == 0 || m.step == total) {
      log << phase_name(phase) << " step " << m.step << "/" << total << "  loss " << m.loss_total
          << "  enc " << m.loss_encoder << "  dec " << m.loss_decoder << "  lr " << m.lr
          << "  |g| " << m.grad_norm << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && m.step % cfg.train.checkpoint_every == 0 && m.step < total) {
      save_checkpoint(out_dir / ("checkpoint_" + std::to_string(m.step) + ".duet"),
                      to_checkpoint(st, cfg, phase));
    }
  });
  metrics.close();
  if (!metrics) throw std::runtime_error("failed writing " + result.metrics.string());
  save_checkpoint(result.checkpoint, to_checkpoint(st, cfg, phase));
  log << "wrote " << result.checkpoint.string() << "\n";
  return result;
}

template <typename T>
Quantizer ensure_quantizer(const TrainState<T>& st, const RunConfig& cfg, const Corpus& corpus,
                           std::ostream& log) {
  if (st.quantizer) return *st.quantizer;
  Rng rng = Rng(cfg.seed).derive(kQuantizerStream);
  Quantizer q = fit_quantizer(st.params, cfg, corpus, rng);
  log << "quantizer: semantic layer " << q.semantic_layer << ", k=" << q.semantic.k();
  if (q.residual) log << ", residual k=" << q.residual->k();
  log << "\n";
  return q;
}

Corpus corpus_for(const RunConfig& cfg, const std::optional<fs::path>& path, const NormStats& stats) {
  if (path && !path->empty()) return load_normalized(*path, stats);
  return prepare_corpus(cfg, &stats, nullptr);
}

}  // namespace

Corpus prepare_corpus(const RunConfig& cfg, const NormStats* stats, NormStats* stats_out) {
  Corpus corpus;
  if (!cfg.data.path.empty()) {
    corpus = read_corpus(cfg.data.path);
  } else {
    Rng rng = Rng(cfg.seed).derive(kCorpusStream);
    corpus = generate_corpus(cfg.data.corpus, rng);
  }
  check_dim(corpus, cfg);
  if (stats) {
    apply_stats(corpus, *stats);
    if (stats_out) *stats_out = *stats;
  } else {
    NormStats computed = normalize(corpus);
    if (stats_out) *stats_out = std::move(computed);
  }
  return corpus;
}

Corpus load_normalized(const fs::path& path, const NormStats& stats) {
  Corpus corpus = read_corpus(path);
  if (corpus.input_dim != static_cast<int>(stats.mean.size())) {
    throw ConfigError(path.string() + ": frames have " + std::to_string(corpus.input_dim) +
                      " dimensions but the checkpoint expects " + std::to_string(stats.mean.size()));
  }
  apply_stats(corpus, stats);
  return corpus;
}

TrainResult cmd_pretrain(const RunConfig& cfg, const fs::path& out_dir,
                         const std::optional<fs::path>& resume, std::ostream& log) {
  cfg.validate();
  return with_precision(cfg.precision, [&](auto tag) {
    using T = decltype(tag);
    TrainState<T> st;
    Corpus corpus;
    if (resume) {
      const Checkpoint ckpt = load_checkpoint(*resume, architecture_hash(cfg));
      if (checkpoint_phase(ckpt) != Phase::kPretrain) {
        throw ConfigError("resume: " + resume->string() + " is not a pretraining checkpoint");
      }
      st = from_checkpoint<T>(ckpt, cfg);
      corpus = prepare_corpus(cfg, &st.norm, nullptr);
      log << "resuming at step " << st.step << "\n";
    } else {
      st = init_state<T>(cfg);
      corpus = prepare_corpus(cfg, nullptr, &st.norm);
    }
    log << "corpus: " << corpus.utterances.size() << " utterances, " << corpus.total_frames()
        << " frames\n";
    return run_training(st, corpus, cfg, Phase::kPretrain, cfg.train.total_steps, out_dir, log);
  });
}

TrainResult cmd_finetune(const RunConfig& cfg, const fs::path& base, const fs::path& out_dir,
                         std::ostream& log) {
  cfg.validate();
  const Phase target = cfg.finetune.mode == FinetuneMode::kTts ? Phase::kTts : Phase::kTokenize;
  return with_precision(cfg.precision, [&](auto tag) {
    using T = decltype(tag);
    const Checkpoint ckpt = load_checkpoint(base, architecture_hash(cfg));
    const Phase from = checkpoint_phase(ckpt);
    if (from != Phase::kPretrain && from != target) {
      throw ConfigError(std::string("finetune: mode ") + phase_name(target) +
                        " cannot start from a " + phase_name(from) + " checkpoint");
    }
    TrainState<T> st = from_checkpoint<T>(ckpt, cfg);
    const Corpus corpus = prepare_corpus(cfg, &st.norm, nullptr);
    if (target == Phase::kTokenize && cfg.finetune.quantize) {
      st.quantizer = ensure_quantizer(st, cfg, corpus, log);
    }
    reset_optimizer(st);
    return run_training(st, corpus, cfg, target, cfg.finetune.total_steps, out_dir, log);
  });
}

SampleReport cmd_sample(const RunConfig& cfg, const fs::path& checkpoint,
                        const std::optional<fs::path>& condition, const fs::path& out,
                        std::ostream& log) {
  cfg.validate();
  const SolverConfig solver{cfg.sample.step, cfg.sample.guidance, cfg.sample.form};
  solver.validate();
  if (cfg.sample.count < 1) throw ConfigError("sample.count must be >= 1");
  return with_precision(cfg.precision, [&](auto tag) {
    using T = decltype(tag);
    const Checkpoint ckpt = load_checkpoint(checkpoint, architecture_hash(cfg));
    const Phase phase = checkpoint_phase(ckpt);
    const TrainState<T> st = from_checkpoint<T>(ckpt, cfg);
    const bool have_condition = condition && !condition->empty();
    if (phase != Phase::kPretrain && !have_condition) {
      throw ConfigError(std::string("sample: a ") + phase_name(phase) +
                        " checkpoint needs a condition file");
    }
    Rng rng = Rng(cfg.seed).derive(kSampleStream);
    const int dx = cfg.model.decoder.input_dim;
    Corpus result;
    result.input_dim = dx;
    result.n_phones = cfg.data.corpus.n_phones;
    result.n_speakers = cfg.data.corpus.n_speakers;
    SampleReport report;

    auto emit = [&](Tensor<T> x, const Tensor<T>* original, const MaskSpec* region,
                    std::vector<std::int64_t> phones, std::int64_t speaker) {
      if (original && region) {
        for (std::int64_t i = 0; i < x.dim(0); ++i) {
          if (region->contains(i)) continue;
          std::copy(original->row(i).begin(), original->row(i).end(), x.row(i).begin());
        }
      }
      denormalize(x, st.norm);
      Utterance u;
      u.frames = x.template cast<float>();
      u.phones = std::move(phones);
      u.speaker = speaker;
      result.utterances.push_back(std::move(u));
    };

    if (phase == Phase::kTokenize) {
      if (!st.quantizer) throw FormatError("tokenize checkpoint without a quantizer");
      std::ifstream in(*condition);
      if (!in) throw ConfigError("cannot open token file " + condition->string());
      const TokenFile tokens = read_tokens(in);
      if (tokens.codebook_sizes != st.quantizer->codebook_sizes()) {
        throw ConfigError("token file codebooks do not match the checkpoint quantizer");
      }
      if (tokens.utterances.empty()) throw ConfigError("token file holds no utterances");
      result.has_labels = false;
      for (int n = 0; n < cfg.sample.count; ++n) {
        const auto& streams = tokens.utterances[static_cast<std::size_t>(n) % tokens.utterances.size()];
        const auto length = static_cast<std::int64_t>(streams.at(0).size());
        Graph<T> g(false);
        Binder<T> bind(g, st.params);
        ConditionSet<T> cs;
        cs.z = g.value(dequantize(bind, *st.quantizer, streams));
        const auto gen = generate(st.params, cfg.model, cs, solver, length, rng);
        report.nfe = gen.nfe;
        report.decoder_passes = gen.decoder_passes;
        emit(gen.x, nullptr, nullptr, {}, 0);
      }
    } else if (have_condition) {
      const Corpus cond = load_normalized(*condition, st.norm);
      if (cond.utterances.empty()) throw ConfigError("condition corpus holds no utterances");
      if (phase == Phase::kTts && !cond.has_labels) {
        throw ConfigError("sample: tts conditioning needs phone labels in the condition corpus");
      }
      result.has_labels = cond.has_labels;
      for (int n = 0; n < cfg.sample.count; ++n) {
        const Utterance& u = cond.utterances[static_cast<std::size_t>(n) % cond.utterances.size()];
        const std::int64_t length = u.length();
        const Tensor<T> x = u.frames.template cast<T>();
        ConditionSet<T> cs;
        cs.prompt = x;
        if (phase == Phase::kTts) {
          const auto keep = std::clamp<std::int64_t>(
              std::llround(cfg.sample.prompt_fraction * static_cast<double>(length)), 0, length - 1);
          std::vector<std::int64_t> idx;
          for (std::int64_t i = keep; i < length; ++i) idx.push_back(i);
          cs.region = MaskSpec::from_indices(length, idx);
          cs.phones = u.phones;
          cs.null_region = true;
        } else {
          cs.region = sample_mask(length, cfg.data.mask_prob, cfg.data.mask_span, rng);
          cs.null_region = false;
        }
        const auto gen = generate(st.params, cfg.model, cs, solver, length, rng);
        report.nfe = gen.nfe;
        report.decoder_passes = gen.decoder_passes;
        emit(gen.x, &x, &cs.region, u.phones, u.speaker);
      }
    } else {
      result.has_labels = false;
      const std::int64_t length = (cfg.data.corpus.min_length + cfg.data.corpus.max_length) / 2;
      for (int n = 0; n < cfg.sample.count; ++n) {
        ConditionSet<T> cs;
        const auto gen = generate(st.params, cfg.model, cs, solver, length, rng);
        report.nfe = gen.nfe;
        report.decoder_passes = gen.decoder_passes;
        emit(gen.x, nullptr, nullptr, {}, 0);
      }
    }
    report.samples = static_cast<int>(result.utterances.size());
    ensure_dir(out.parent_path());
    write_corpus(out, result);
    write_config(config_path_for(out), cfg);
    log << "samples " << report.samples << "\n"
        << "nfe " << report.nfe << " per sample (step " << solver.step << ", " << solver.steps()
        << " midpoint steps)\n"
        << "decoder passes " << report.decoder_passes << " per sample\n"
        << "wrote " << out.string() << "\n";
    return report;
  });
}

TokenizeReport cmd_tokenize(const RunConfig& cfg, const fs::path& checkpoint,
                            const std::optional<fs::path>& corpus_path, const fs::path& out,
                            std::ostream& log) {
  cfg.validate();
  return with_precision(cfg.precision, [&](auto tag) {
    using T = decltype(tag);
    const Checkpoint ckpt = load_checkpoint(checkpoint, architecture_hash(cfg));
    const TrainState<T> st = from_checkpoint<T>(ckpt, cfg);
    const Corpus corpus = corpus_for(cfg, corpus_path, st.norm);
    check_dim(corpus, cfg);
    const Quantizer q = ensure_quantizer(st, cfg, corpus, log);
    TokenFile file;
    file.frame_rate = q.frame_rate;
    file.codebook_sizes = q.codebook_sizes();
    TokenizeReport report;
    for (const auto& u : corpus.utterances) {
      const auto layers = encoder_layers(st.params, cfg.model.encoder, u.frames.template cast<T>());
      file.utterances.push_back(quantize_tokens(layers, st.params, q));
      report.frames += u.length();
    }
    std::ostringstream text;
    write_tokens(text, file);
    ensure_dir(out.parent_path());
    write_file_atomic(out, text.str());
    write_config(config_path_for(out), cfg);
    report.semantic_layer = q.semantic_layer;
    report.codebook_sizes = file.codebook_sizes;
    report.frame_rate = q.frame_rate;
    report.bitrate = bitrate(file.codebook_sizes, q.frame_rate);
    log << "utterances " << file.utterances.size() << ", frames " << report.frames << "\n"
        << "streams " << file.codebook_sizes.size() << " (codebooks";
    for (int k : file.codebook_sizes) log << " " << k;
    log << ") at " << q.frame_rate << " Hz\n"
        << "bitrate " << report.bitrate << " bps\n"
        << "wrote " << out.string() << "\n";
    return report;
  });
}

std::string mi_report_csv(const MIReport& report) {
  std::ostringstream s;
  s << std::setprecision(9);
  s << "layer,phone_mi,speaker_mi,unit_entropy\n";
  auto row = [&](const std::string& name, const LayerMI& m) {
    s << name << "," << m.phone_mi << "," << m.speaker_mi << "," << m.unit_entropy << "\n";
  };
  row("raw", report.raw);
  for (const auto& m : report.layers) row(std::to_string(m.layer), m);
  return s.str();
}

MIReport cmd_analyze(const RunConfig& cfg, const fs::path& checkpoint,
                     const std::optional<fs::path>& corpus_path, const fs::path& out,
                     std::ostream& log) {
  cfg.validate();
  if (cfg.analyze.k < 1) throw ConfigError("analyze.k must be >= 1");
  return with_precision(cfg.precision, [&](auto tag) {
    using T = decltype(tag);
    const Checkpoint ckpt = load_checkpoint(checkpoint, architecture_hash(cfg));
    const TrainState<T> st = from_checkpoint<T>(ckpt, cfg);
    const Corpus corpus = corpus_for(cfg, corpus_path, st.norm);
    check_dim(corpus, cfg);
    if (!corpus.has_labels) throw ConfigError("analyze: the corpus has no phone or speaker labels");
    const auto layers = stacked_layers(st.params, cfg.model.encoder, corpus);
    Rng rng = Rng(cfg.seed).derive(kAnalyzeStream);
    const MIReport report =
        analyze_layers(corpus.stacked().template cast<T>(), layers, corpus.frame_phones(),
                       corpus.frame_speakers(), cfg.analyze.k, rng);
    ensure_dir(out.parent_path());
    write_file_atomic(out, mi_report_csv(report));
    write_config(config_path_for(out), cfg);
    log << std::fixed << std::setprecision(4);
    log << "H(phone) " << report.phone_entropy << " bits, H(speaker) " << report.speaker_entropy
        << " bits, k=" << cfg.analyze.k << "\n";
    log << std::left << std::setw(8) << "layer" << std::right << std::setw(12) << "phone MI"
        << std::setw(12) << "speaker MI" << std::setw(12) << "H(unit)" << "\n";
    auto row = [&](const std::string& name, const LayerMI& m) {
      log << std::left << std::setw(8) << name << std::right << std::setw(12) << m.phone_mi
          << std::setw(12) << m.speaker_mi << std::setw(12) << m.unit_entropy << "\n";
    };
    row("raw", report.raw);
    for (const auto& m : report.layers) row(std::to_string(m.layer), m);
    log.unsetf(std::ios::floatfield);
    log << std::setprecision(6) << "wrote " << out.string() << "\n";
    return report;
  });
}

void cmd_gen_corpus(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.data.corpus.validate();
  Rng rng = Rng(cfg.seed).derive(kCorpusStream);
  const Corpus corpus = generate_corpus(cfg.data.corpus, rng);
  ensure_dir(out.parent_path());
  write_corpus(out, corpus);
  write_config(config_path_for(out), cfg);
  log << "utterances " << corpus.utterances.size() << ", frames " << corpus.total_frames() << "\n"
      << "wrote " << out.string() << "\n";
}

template <typename T>
double resynthesis_mse(const ParameterStore<T>& params, const RunConfig& cfg, const Corpus& corpus,
                       const SolverConfig& solver, Rng& rng) {
  const int d = corpus.input_dim;
  const Tensor<float> all = corpus.stacked();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  std::vector<double> var(static_cast<std::size_t>(d), 0.0);
  const double n = static_cast<double>(all.dim(0));
  for (std::int64_t i = 0; i < all.dim(0); ++i) {
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += all(i, j) / n;
  }
  for (std::int64_t i = 0; i < all.dim(0); ++i) {
    for (int j = 0; j < d; ++j) {
      const double c = all(i, j) - mean[static_cast<std::size_t>(j)];
      var[static_cast<std::size_t>(j)] += c * c / n;
    }
  }
  double err = 0.0;
  std::int64_t count = 0;
  for (const auto& u : corpus.utterances) {
    const std::int64_t length = u.length();
    ConditionSet<T> cs;
    cs.prompt = u.frames.template cast<T>();
    cs.region = sample_mask(length, cfg.data.mask_prob, cfg.data.mask_span, rng);
    cs.null_region = false;
    const auto gen = generate(params, cfg.model, cs, solver, length, rng);
    for (auto i : cs.region.indices()) {
      for (int j = 0; j < d; ++j) {
        const double diff = static_cast<double>(gen.x(i, j)) - u.frames(i, j);
        err += diff * diff / std::max(var[static_cast<std::size_t>(j)], 1e-12);
      }
      ++count;
    }
  }
  return count > 0 ? err / (static_cast<double>(count) * d) : 0.0;
}

template double resynthesis_mse<float>(const ParameterStore<float>&, const RunConfig&, const Corpus&,
                                       const SolverConfig&, Rng&);
template double resynthesis_mse<double>(const ParameterStore<double>&, const RunConfig&,
                                        const Corpus&, const SolverConfig&, Rng&);

}  // namespace duet
