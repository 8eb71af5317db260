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

#include "duet/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "duet/decoder.h"
#include "duet/model.h"
#include "duet/sampler.h"

namespace duet {

namespace {

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

template <typename T>
Tensor<T> standard_normal(Shape shape, Rng& rng) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.values()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
void accumulate(GradMap<T>& into, GradMap<T>&& item) {
  for (auto& [name, g] : item) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, std::move(g));
      continue;
    }
    auto dst = it->second.values();
    const auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

double perplexity(const std::vector<std::int64_t>& labels) {
  if (labels.empty()) return 0.0;
  std::map<std::int64_t, double> counts;
  for (auto l : labels) counts[l] += 1.0;
  double h = 0.0;
  const double n = static_cast<double>(labels.size());
  for (const auto& [l, c] : counts) h -= c / n * std::log(c / n);
  return std::exp(h);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

[[noreturn]] void fail_non_finite(const StepMetrics& m, const std::string& what) {
  std::ostringstream s;
  s << "non-finite " << what << " at step " << m.step << " (lr=" << fmt(m.lr)
    << ", encoder loss=" << fmt(m.loss_encoder) << ", decoder loss=" << fmt(m.loss_decoder)
    << ", grad norm=" << fmt(m.grad_norm) << ")";
  throw TrainingError(s.str());
}

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kPretrain: return "pretrain";
    case Phase::kTts: return "tts";
    case Phase::kTokenize: return "tokenize";
  }
  return "pretrain";
}

Phase phase_from_name(const std::string& name) {
  if (name == "pretrain") return Phase::kPretrain;
  if (name == "tts") return Phase::kTts;
  if (name == "tokenize") return Phase::kTokenize;
  throw FormatError("unknown training phase \"" + name + "\"");
}

double lr_at(std::int64_t step, std::int64_t total, std::int64_t warmup, double peak) {
  if (total < 1 || warmup < 0 || warmup >= total) {
    throw ConfigError("lr schedule: need 0 <= warmup < total");
  }
  step = std::clamp<std::int64_t>(step, 0, total);
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::int64_t step, double lr, double beta1, double beta2, double eps) {
  if (param.shape() != grad.shape() || m.shape() != grad.shape() || v.shape() != grad.shape()) {
    throw ConfigError("adam_update: shape mismatch " + shape_string(param.shape()) + " vs " +
                      shape_string(grad.shape()));
  }
  if (step < 1) throw ConfigError("adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::int64_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
  }
}

template <typename T>
double global_norm(const GradMap<T>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    for (T v : g.values()) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(s);
}

template <typename T>
double clip_gradients(GradMap<T>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!(norm > max_norm) || !std::isfinite(norm)) return norm;
  const T scale = static_cast<T>(max_norm / norm);
  for (auto& [name, g] : grads) {
    for (auto& v : g.values()) v *= scale;
  }
  return norm;
}

template <typename T>
TrainState<T> init_state(const RunConfig& cfg) {
  cfg.validate();
  TrainState<T> s;
  s.rng = Rng(cfg.seed);
  Rng init = s.rng.derive(1);
  s.params = init_model<T>(cfg.model, init);
  s.teacher = make_teacher(s.params);
  for (int k = 0; k < cfg.model.encoder.top_k; ++k) {
    s.codebooks.push_back(
        Codebook::random(cfg.model.encoder.codebook_size, cfg.model.encoder.blocks.d, init));
  }
  reset_optimizer(s);
  return s;
}

template <typename T>
void reset_optimizer(TrainState<T>& state) {
  state.adam_m = ParameterStore<T>();
  state.adam_v = ParameterStore<T>();
  for (const auto& [name, value] : state.params.entries()) {
    state.adam_m.add(name, Tensor<T>(value.shape()));
    state.adam_v.add(name, Tensor<T>(value.shape()));
  }
  state.step = 0;
}

std::function<bool(std::string_view)> trainable_predicate(Phase phase, const RunConfig& cfg) {
  if (phase == Phase::kPretrain) return [](std::string_view) { return true; };
  const bool encoder = phase == Phase::kTts && cfg.finetune.resolved_train_encoder();
  return [encoder](std::string_view name) {
    if (starts_with(name, "decoder.") || starts_with(name, "proj.") || starts_with(name, "cond.")) {
      return true;
    }
    return encoder && starts_with(name, "encoder.");
  };
}

template <typename T>
StepMetrics train_step(TrainState<T>& st, const Corpus& corpus, const RunConfig& cfg, Phase phase) {
  const ModelConfig& mc = cfg.model;
  const bool pre = phase == Phase::kPretrain;
  if (corpus.input_dim != mc.encoder.input_dim) {
    throw ConfigError("corpus input_dim " + std::to_string(corpus.input_dim) +
                      " differs from the model's " + std::to_string(mc.encoder.input_dim));
  }
  const std::int64_t total = pre ? cfg.train.total_steps : cfg.finetune.total_steps;
  const std::int64_t warmup = pre ? cfg.train.warmup_steps : cfg.finetune.warmup_steps;
  const double peak = pre ? cfg.train.peak_lr : cfg.finetune.resolved_lr();
  StepMetrics out;
  out.step = st.step + 1;
  out.lr = lr_at(st.step, total, warmup, peak);

  const Batch batch = make_batch(corpus, cfg.data.batch_size, cfg.data.max_frames,
                                 pre ? cfg.data.mask_prob : 0.0, cfg.data.mask_span, st.rng);
  const auto trainable = trainable_predicate(phase, cfg);
  const int dx = mc.decoder.input_dim;
  const double sigma = mc.decoder.sigma_min;
  GradMap<T> grads;
  auto run_item = [&](Graph<T>& g, Binder<T>& bind, NodeId loss) {
    const double value = static_cast<double>(g.value(loss).item());
    if (!std::isfinite(value)) fail_non_finite(out, "loss");
    accumulate(grads, bind.collect(g.backward(loss)));
  };

  std::vector<TeacherTargets<T>> targets;
  if (pre) {
    for (const auto& item : batch.items) {
      targets.push_back(teacher_labels(st.teacher, mc.encoder, item.frames.cast<T>(),
                                       std::span<const Codebook>(st.codebooks)));
    }
    const double masked = static_cast<double>(batch.masked_frames());
    const double enc_norm = mc.encoder.top_k * masked;
    const double dec_norm = dx * masked;
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      const BatchItem& item = batch.items[b];
      const Tensor<T> x = item.frames.cast<T>();
      Graph<T> g;
      Binder<T> bind(g, st.params, trainable);
      const auto layers = encoder_forward(bind, mc.encoder, g.constant(x), &item.mask);
      const NodeId le = encoder_loss(bind, mc.encoder, layers.back(), targets[b].labels, item.mask, enc_norm);
      const Tensor<T> x0 = standard_normal<T>(x.shape(), st.rng);
      const double t = sample_time(TimeSampling::kUniform, st.rng);
      const FlowSample<T> fs = ot_path(x0, x, t, sigma);
      ConditionSet<T> none;
      const std::vector<std::int64_t> null_phones(static_cast<std::size_t>(x.dim(0)), mc.decoder.n_phones);
      const NodeId cond = g.add(condition_from_layers(bind, mc.decoder, std::span<const NodeId>(layers)),
                                phone_embedding(bind, mc.decoder, null_phones));
      const NodeId v = decoder_forward(bind, mc.decoder, g.constant(fs.phi), t, cond);
      const NodeId ld = cfm_loss(g, v, fs.u, item.mask, dec_norm);
      out.loss_encoder += static_cast<double>(g.value(le).item());
      out.loss_decoder += static_cast<double>(g.value(ld).item());
      run_item(g, bind, g.add(le, g.scale(ld, mc.lambda)));
    }
    out.loss_total = out.loss_encoder + mc.lambda * out.loss_decoder;
  } else if (phase == Phase::kTts) {
    if (!corpus.has_labels) throw ConfigError("tts fine-tuning needs phone labels in the corpus");
    std::vector<MaskSpec> regions;
    std::vector<bool> dropped;
    double covered = 0.0;
    for (const auto& item : batch.items) {
      regions.push_back(prompt_mask(item.frames.dim(0), cfg.finetune.prompt_min, cfg.finetune.prompt_max, st.rng));
      dropped.push_back(st.rng.bernoulli(cfg.finetune.condition_dropout));
      covered += static_cast<double>(regions.back().count());
      out.dropped += dropped.back() ? 1 : 0;
    }
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      const BatchItem& item = batch.items[b];
      const Tensor<T> x = item.frames.cast<T>();
      Graph<T> g;
      Binder<T> bind(g, st.params, trainable);
      ConditionSet<T> cs;
      cs.phones = item.phones;
      cs.prompt = x;
      cs.region = regions[b];
      cs.null_region = true;
      cs.dropped = dropped[b];
      const NodeId cond = build_condition(bind, mc, cs, x.dim(0));
      const Tensor<T> x0 = standard_normal<T>(x.shape(), st.rng);
      const double t = sample_time(cfg.finetune.time_sampling, st.rng);
      const FlowSample<T> fs = ot_path(x0, x, t, sigma);
      const NodeId v = decoder_forward(bind, mc.decoder, g.constant(fs.phi), t, cond);
      const NodeId ld = cfm_loss(g, v, fs.u, regions[b], dx * covered);
      out.loss_decoder += static_cast<double>(g.value(ld).item());
      run_item(g, bind, ld);
    }
    out.loss_total = out.loss_decoder;
  } else {
    if (cfg.finetune.quantize && !st.quantizer) {
      throw ConfigError("tokenize fine-tuning needs a fitted quantizer");
    }
    double frames = 0.0;
    for (const auto& item : batch.items) frames += static_cast<double>(item.frames.dim(0));
    for (const auto& item : batch.items) {
      const Tensor<T> x = item.frames.cast<T>();
      const auto layer_values = encoder_layers(st.params, mc.encoder, x);
      Graph<T> g;
      Binder<T> bind(g, st.params, trainable);
      NodeId z = -1;
      if (cfg.finetune.quantize) {
        z = dequantize(bind, *st.quantizer, quantize_tokens(layer_values, st.params, *st.quantizer));
      } else {
        std::vector<NodeId> layers;
        for (const auto& lv : layer_values) layers.push_back(g.constant(lv));
        z = condition_from_layers(bind, mc.decoder, std::span<const NodeId>(layers));
      }
      const std::vector<std::int64_t> null_phones(static_cast<std::size_t>(x.dim(0)), mc.decoder.n_phones);
      const NodeId cond = g.add(z, phone_embedding(bind, mc.decoder, null_phones));
      const Tensor<T> x0 = standard_normal<T>(x.shape(), st.rng);
      const double t = sample_time(cfg.finetune.time_sampling, st.rng);
      const FlowSample<T> fs = ot_path(x0, x, t, sigma);
      const NodeId v = decoder_forward(bind, mc.decoder, g.constant(fs.phi), t, cond);
      const NodeId ld = cfm_loss(g, v, fs.u, MaskSpec::all(x.dim(0)), dx * frames);
      out.loss_decoder += static_cast<double>(g.value(ld).item());
      run_item(g, bind, ld);
    }
    out.loss_total = out.loss_decoder;
  }

  const double clip = cfg.train.clip_norm;
  out.grad_norm = clip_gradients(grads, clip);
  if (!std::isfinite(out.grad_norm)) fail_non_finite(out, "gradient norm");

  ++st.step;
  for (auto& [name, g] : grads) {
    adam_update(st.params.get_mut(name), g, st.adam_m.get_mut(name), st.adam_v.get_mut(name),
                st.step, out.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.eps);
  }

  if (pre) {
    TeacherSchedule schedule{cfg.train.teacher_start, cfg.train.teacher_end, cfg.teacher_ramp_steps()};
    out.teacher_decay = schedule.decay_at(st.step - 1);
    ema_update(st.teacher, st.params, out.teacher_decay);
    const std::int64_t d = mc.encoder.blocks.d;
    const std::int64_t masked = batch.masked_frames();
    for (int k = 0; k < mc.encoder.top_k; ++k) {
      Tensor<T> points(Shape{masked, d});
      std::vector<std::int64_t> labels;
      labels.reserve(static_cast<std::size_t>(masked));
      std::int64_t r = 0;
      for (std::size_t b = 0; b < batch.items.size(); ++b) {
        const auto& out_k = targets[b].outputs[static_cast<std::size_t>(k)];
        const auto& lab_k = targets[b].labels[static_cast<std::size_t>(k)];
        for (auto i : batch.items[b].mask.indices()) {
          std::copy(out_k.row(i).begin(), out_k.row(i).end(), points.row(r).begin());
          labels.push_back(lab_k[static_cast<std::size_t>(i)]);
          ++r;
        }
      }
      st.codebooks[static_cast<std::size_t>(k)].update(points, labels, mc.encoder.codebook_decay);
      out.perplexity.push_back(perplexity(labels));
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> stacked_layers(const ParameterStore<T>& params, const EncoderConfig& cfg,
                                      const Corpus& corpus) {
  const std::int64_t n = corpus.total_frames();
  const std::int64_t d = cfg.blocks.d;
  std::vector<Tensor<T>> out(static_cast<std::size_t>(cfg.blocks.layers), Tensor<T>(Shape{n, d}));
  std::int64_t r = 0;
  for (const auto& u : corpus.utterances) {
    const auto layers = encoder_layers(params, cfg, u.frames.cast<T>());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      std::copy(layers[i].values().begin(), layers[i].values().end(), out[i].data() + r * d);
    }
    r += u.length();
  }
  return out;
}

template <typename T>
Quantizer fit_quantizer(const ParameterStore<T>& params, const RunConfig& cfg,
                        const Corpus& corpus, Rng& rng) {
  const auto layers = stacked_layers(params, cfg.model.encoder, corpus);
  Quantizer q;
  q.frame_rate = cfg.tokenize.frame_rate;
  int semantic = cfg.tokenize.semantic_layer;
  if (semantic < 0) {
    if (!corpus.has_labels) {
      throw ConfigError("choosing the semantic layer needs phone labels; set tokenize.semantic_layer");
    }
    const auto report = analyze_layers(corpus.stacked().cast<T>(), layers, corpus.frame_phones(),
                                       corpus.frame_speakers(), cfg.tokenize.k, rng);
    semantic = select_semantic_layer(report);
  }
  q.semantic_layer = semantic;
  q.semantic = kmeans_fit(layers[static_cast<std::size_t>(semantic)], cfg.tokenize.k,
                          cfg.tokenize.max_iter, rng);
  q.semantic.layer = semantic;
  if (cfg.tokenize.residual) {
    q.residual = kmeans_fit(residual_input(layers, params, semantic), cfg.tokenize.residual_k,
                            cfg.tokenize.max_iter, rng);
  }
  return q;
}

std::string metrics_header(int top_k) {
  std::string h = "step,lr,loss_total,loss_encoder,loss_decoder,grad_norm,teacher_decay";
  for (int k = 0; k < top_k; ++k) h += ",perplexity_" + std::to_string(k);
  return h;
}

std::string metrics_row(const StepMetrics& m) {
  std::string r = std::to_string(m.step) + "," + fmt(m.lr) + "," + fmt(m.loss_total) + "," +
                  fmt(m.loss_encoder) + "," + fmt(m.loss_decoder) + "," + fmt(m.grad_norm) + "," +
                  fmt(m.teacher_decay);
  for (double p : m.perplexity) r += "," + fmt(p);
  return r;
}

template <typename T>
void train_loop(TrainState<T>& state, const Corpus& corpus, const RunConfig& cfg, Phase phase,
                std::int64_t total, const std::function<void(const StepMetrics&)>& on_step) {
  while (state.step < total) {
    const StepMetrics m = train_step(state, corpus, cfg, phase);
    if (on_step) on_step(m);
  }
}

template <typename T>
Checkpoint to_checkpoint(const TrainState<T>& st, const RunConfig& cfg, Phase phase) {
  Checkpoint c;
  c.config_hash = architecture_hash(cfg);
  c.put_bytes("meta.config", config_to_json(cfg));
  c.put_bytes("meta.phase", phase_name(phase));
  c.put("norm.mean", Tensor<double>::vector(st.norm.mean));
  c.put("norm.std", Tensor<double>::vector(st.norm.stddev));
  for (const auto& [name, v] : st.params.entries()) c.put("param." + name, v);
  for (const auto& [name, v] : st.teacher.entries()) c.put("teacher." + name, v);
  for (const auto& [name, v] : st.adam_m.entries()) c.put("adam.m." + name, v);
  for (const auto& [name, v] : st.adam_v.entries()) c.put("adam.v." + name, v);
  for (std::size_t k = 0; k < st.codebooks.size(); ++k) {
    const std::string base = "codebook." + std::to_string(k);
    c.put(base + ".sums", st.codebooks[k].sums());
    c.put(base + ".counts", Tensor<double>::vector(st.codebooks[k].counts()));
  }
  if (st.quantizer) {
    const Quantizer& q = *st.quantizer;
    c.put_i64("quant.info", {q.semantic_layer, q.residual ? 1 : 0});
    c.put("quant.frame_rate", Tensor<double>::scalar(q.frame_rate));
    c.put("quant.semantic", q.semantic.centroids);
    if (q.residual) c.put("quant.residual", q.residual->centroids);
  }
  c.rng_state = st.rng.state();
  c.step = st.step;
  return c;
}

Phase checkpoint_phase(const Checkpoint& ckpt) { return phase_from_name(ckpt.get_bytes("meta.phase")); }

RunConfig checkpoint_config(const Checkpoint& ckpt) {
  return config_from_json(ckpt.get_bytes("meta.config"));
}

template <typename T>
TrainState<T> from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg) {
  if (ckpt.config_hash != architecture_hash(cfg)) {
    throw FormatError("checkpoint architecture does not match the configuration (model settings differ)");
  }
  TrainState<T> st;
  auto load_store = [&](const std::string& prefix, ParameterStore<T>& store) {
    for (const auto& name : ckpt.names(prefix)) store.add(name.substr(prefix.size()), ckpt.get<T>(name));
  };
  load_store("param.", st.params);
  load_store("teacher.", st.teacher);
  load_store("adam.m.", st.adam_m);
  load_store("adam.v.", st.adam_v);
  if (st.params.size() == 0) throw FormatError("checkpoint holds no parameters");
  for (int k = 0; k < cfg.model.encoder.top_k; ++k) {
    const std::string base = "codebook." + std::to_string(k);
    const auto counts = ckpt.get<double>(base + ".counts");
    st.codebooks.emplace_back(ckpt.get<double>(base + ".sums"),
                              std::vector<double>(counts.values().begin(), counts.values().end()));
  }
  if (ckpt.has("quant.info")) {
    const auto info = ckpt.get_i64("quant.info");
    Quantizer q;
    q.semantic_layer = static_cast<int>(info.at(0));
    q.frame_rate = ckpt.get<double>("quant.frame_rate").item();
    q.semantic.centroids = ckpt.get<double>("quant.semantic");
    q.semantic.layer = q.semantic_layer;
    if (info.at(1)) {
      KMeansModel r;
      r.centroids = ckpt.get<double>("quant.residual");
      q.residual = std::move(r);
    }
    st.quantizer = std::move(q);
  }
  const auto mean = ckpt.get<double>("norm.mean");
  const auto sd = ckpt.get<double>("norm.std");
  st.norm.mean.assign(mean.values().begin(), mean.values().end());
  st.norm.stddev.assign(sd.values().begin(), sd.values().end());
  st.rng.restore(ckpt.rng_state);
  st.step = ckpt.step;
  return st;
}

#define DUET_INSTANTIATE(T)                                                                      \
  template void adam_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,             \
                               std::int64_t, double, double, double, double);                    \
  template double global_norm<T>(const GradMap<T>&);                                             \
  template double clip_gradients<T>(GradMap<T>&, double);                                        \
  template TrainState<T> init_state<T>(const RunConfig&);                                        \
  template void reset_optimizer<T>(TrainState<T>&);                                              \
  template StepMetrics train_step<T>(TrainState<T>&, const Corpus&, const RunConfig&, Phase);    \
  template std::vector<Tensor<T>> stacked_layers<T>(const ParameterStore<T>&,                    \
                                                    const EncoderConfig&, const Corpus&);        \
  template Quantizer fit_quantizer<T>(const ParameterStore<T>&, const RunConfig&, const Corpus&, \
                                      Rng&);                                                     \
  template void train_loop<T>(TrainState<T>&, const Corpus&, const RunConfig&, Phase,            \
                              std::int64_t, const std::function<void(const StepMetrics&)>&);     \
  template Checkpoint to_checkpoint<T>(const TrainState<T>&, const RunConfig&, Phase);           \
  template TrainState<T> from_checkpoint<T>(const Checkpoint&, const RunConfig&);

DUET_INSTANTIATE(float)
DUET_INSTANTIATE(double)

}  // namespace duet
