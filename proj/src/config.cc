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

#include "duet/config.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "duet/binary_io.h"
#include "json.hpp"

namespace duet {

using Json = nlohmann::ordered_json;

double FinetuneConfig::resolved_lr() const {
  if (lr >= 0.0) return lr;
  return mode == FinetuneMode::kTts ? 1e-5 : 1e-4;
}

bool FinetuneConfig::resolved_train_encoder() const {
  if (train_encoder >= 0) return train_encoder != 0;
  return mode == FinetuneMode::kTts;
}

void RunConfig::validate() const {
  data.corpus.validate();
  if (data.max_frames < 1) throw ConfigError("data.max_frames must be >= 1");
  if (data.batch_size < 1) throw ConfigError("data.batch_size must be >= 1");
  if (!(data.mask_prob > 0.0 && data.mask_prob <= 1.0)) {
    throw ConfigError("data.mask_prob must be in (0, 1]");
  }
  if (data.mask_span < 1) throw ConfigError("data.mask_span must be >= 1");
  model.validate();
  if (model.encoder.input_dim != data.corpus.input_dim) {
    throw ConfigError("model input size differs from data.input_dim");
  }
  if (model.decoder.n_phones != data.corpus.n_phones) {
    throw ConfigError("model phone vocabulary differs from data.n_phones");
  }
  auto check_schedule = [](const char* name, std::int64_t total, std::int64_t warmup) {
    if (total < 1) throw ConfigError(std::string(name) + ".total_steps must be >= 1");
    if (warmup < 0 || warmup >= total) {
      throw ConfigError(std::string(name) + ".warmup_steps must be in [0, total_steps)");
    }
  };
  check_schedule("train", train.total_steps, train.warmup_steps);
  check_schedule("finetune", finetune.total_steps, finetune.warmup_steps);
  if (!(train.peak_lr > 0.0)) throw ConfigError("train.peak_lr must be positive");
  if (!(train.clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0 && train.beta2 >= 0.0 && train.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(train.eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(train.teacher_start >= 0.0 && train.teacher_start <= train.teacher_end &&
        train.teacher_end <= 1.0)) {
    throw ConfigError("train: need 0 <= teacher_start <= teacher_end <= 1");
  }
  if (!(train.teacher_ramp > 0.0 && train.teacher_ramp <= 1.0)) {
    throw ConfigError("train.teacher_ramp must be in (0, 1]");
  }
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (finetune.mode == FinetuneMode::kTokenize && finetune.train_encoder == 1) {
    throw ConfigError("finetune.train_encoder: the encoder is frozen in tokenize mode");
  }
  if (!(finetune.condition_dropout >= 0.0 && finetune.condition_dropout <= 1.0)) {
    throw ConfigError("finetune.condition_dropout must be in [0, 1]");
  }
  if (!(finetune.prompt_min >= 0.0 && finetune.prompt_min <= finetune.prompt_max &&
        finetune.prompt_max <= 1.0)) {
    throw ConfigError("finetune: need 0 <= prompt_min <= prompt_max <= 1");
  }
  if (tokenize.k < 1 || tokenize.residual_k < 1) throw ConfigError("tokenize.k must be >= 1");
  if (!(tokenize.frame_rate > 0.0)) throw ConfigError("tokenize.frame_rate must be positive");
  if (tokenize.max_iter < 1) throw ConfigError("tokenize.max_iter must be >= 1");
  if (tokenize.semantic_layer < -1 || tokenize.semantic_layer >= model.encoder.blocks.layers) {
    throw ConfigError("tokenize.semantic_layer must be -1 or a valid encoder layer");
  }
  if (analyze.k < 1) throw ConfigError("analyze.k must be >= 1");
  SolverConfig solver{sample.step, sample.guidance, sample.form};
  solver.validate();
  if (sample.count < 1) throw ConfigError("sample.count must be >= 1");
  if (!(sample.prompt_fraction >= 0.0 && sample.prompt_fraction < 1.0)) {
    throw ConfigError("sample.prompt_fraction must be in [0, 1)");
  }
}

std::int64_t RunConfig::teacher_ramp_steps() const {
  return std::max<std::int64_t>(
      1, std::llround(train.teacher_ramp * static_cast<double>(train.total_steps)));
}

namespace {

void sync_derived(RunConfig& c) {
  c.model.encoder.input_dim = c.data.corpus.input_dim;
  c.model.decoder.input_dim = c.data.corpus.input_dim;
  c.model.decoder.n_phones = c.data.corpus.n_phones;
  c.model.decoder.encoder_layers = c.model.encoder.blocks.layers;
}

const char* precision_name(Precision p) { return p == Precision::kFloat32 ? "float32" : "float64"; }
const char* mode_name(FinetuneMode m) { return m == FinetuneMode::kTts ? "tts" : "tokenize"; }
const char* time_name(TimeSampling t) {
  return t == TimeSampling::kUniform ? "uniform" : "logit_normal";
}
const char* form_name(GuidanceForm f) {
  return f == GuidanceForm::kInterpolate ? "interpolate" : "extrapolate";
}

Json model_json(const RunConfig& c) {
  const auto& e = c.model.encoder;
  const auto& dc = c.model.decoder;
  return Json{{"d", e.blocks.d},
              {"heads", e.blocks.heads},
              {"ffn", e.blocks.ffn},
              {"encoder_layers", e.blocks.layers},
              {"decoder_layers", dc.blocks.layers},
              {"conv_kernel", e.blocks.conv_kernel},
              {"conv_groups", e.blocks.conv_groups},
              {"use_alibi", e.blocks.use_alibi},
              {"unet_skips", dc.blocks.use_unet_skips},
              {"codebook_size", e.codebook_size},
              {"top_k", e.top_k},
              {"codebook_decay", e.codebook_decay},
              {"lambda", c.model.lambda},
              {"sigma_min", dc.sigma_min}};
}

Json to_json(const RunConfig& c) {
  const auto& p = c.data.corpus;
  Json j;
  j["seed"] = c.seed;
  j["precision"] = precision_name(c.precision);
  j["data"] = Json{{"path", c.data.path},
                   {"input_dim", p.input_dim},
                   {"n_phones", p.n_phones},
                   {"n_speakers", p.n_speakers},
                   {"n_utterances", p.n_utterances},
                   {"min_length", p.min_length},
                   {"max_length", p.max_length},
                   {"mean_segment", p.mean_segment},
                   {"prototype_scale", p.prototype_scale},
                   {"speaker_scale", p.speaker_scale},
                   {"noise_scale", p.noise_scale},
                   {"max_frames", c.data.max_frames},
                   {"batch_size", c.data.batch_size},
                   {"mask_prob", c.data.mask_prob},
                   {"mask_span", c.data.mask_span}};
  j["model"] = model_json(c);
  const auto& t = c.train;
  j["train"] = Json{{"total_steps", t.total_steps},     {"warmup_steps", t.warmup_steps},
                    {"peak_lr", t.peak_lr},             {"clip_norm", t.clip_norm},
                    {"beta1", t.beta1},                 {"beta2", t.beta2},
                    {"eps", t.eps},                     {"teacher_start", t.teacher_start},
                    {"teacher_end", t.teacher_end},     {"teacher_ramp", t.teacher_ramp},
                    {"checkpoint_every", t.checkpoint_every}};
  const auto& f = c.finetune;
  j["finetune"] = Json{{"mode", mode_name(f.mode)},
                       {"total_steps", f.total_steps},
                       {"warmup_steps", f.warmup_steps},
                       {"lr", f.lr},
                       {"train_encoder", f.train_encoder},
                       {"condition_dropout", f.condition_dropout},
                       {"prompt_min", f.prompt_min},
                       {"prompt_max", f.prompt_max},
                       {"time_sampling", time_name(f.time_sampling)},
                       {"quantize", f.quantize}};
  const auto& k = c.tokenize;
  j["tokenize"] = Json{{"k", k.k},
                       {"residual", k.residual},
                       {"residual_k", k.residual_k},
                       {"frame_rate", k.frame_rate},
                       {"max_iter", k.max_iter},
                       {"semantic_layer", k.semantic_layer}};
  j["analyze"] = Json{{"k", c.analyze.k}};
  const auto& s = c.sample;
  j["sample"] = Json{{"step", s.step},
                     {"guidance", s.guidance},
                     {"guidance_form", form_name(s.form)},
                     {"count", s.count},
                     {"prompt_fraction", s.prompt_fraction}};
  return j;
}

// Reads the keys of one JSON object, rejecting unknown ones.
class Section {
 public:
  Section(const Json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(where() + ": expected an object");
  }

  Section child(const std::string& key) {
    if (!j_ || !j_->contains(key)) return Section(nullptr, join(key));
    used_.insert(key);
    return Section(&(*j_)[key], join(key));
  }

  void get(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(join(key) + ": expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(join(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(join(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  template <typename I>
    requires std::is_integral_v<I>
  void get(const std::string& key, I& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(join(key) + ": expected an integer");
      if constexpr (std::is_unsigned_v<I>) {
        if (v->is_number_unsigned()) {
          out = static_cast<I>(v->get<std::uint64_t>());
        } else {
          const auto x = v->get<std::int64_t>();
          if (x < 0) throw ConfigError(join(key) + ": expected a non-negative integer");
          out = static_cast<I>(x);
        }
      } else {
        const auto x = v->get<std::int64_t>();
        if (x < std::numeric_limits<I>::min() || x > std::numeric_limits<I>::max()) {
          throw ConfigError(join(key) + ": integer out of range");
        }
        out = static_cast<I>(x);
      }
    }
  }
  template <typename E>
  void get_enum(const std::string& key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    std::string s;
    if (!find(key)) return;
    get(key, s);
    for (const auto& [n, e] : names) {
      if (s == n) {
        out = e;
        return;
      }
    }
    std::string allowed;
    for (const auto& [n, e] : names) allowed += std::string(allowed.empty() ? "" : ", ") + n;
    throw ConfigError(join(key) + ": unknown value \"" + s + "\" (expected one of " + allowed + ")");
  }

  void finish() const {
    if (!j_) return;
    for (const auto& [key, value] : j_->items()) {
      if (!used_.count(key)) throw ConfigError("unknown config key " + join(key));
    }
  }

 private:
  const Json* find(const std::string& key) {
    if (!j_ || !j_->contains(key)) return nullptr;
    used_.insert(key);
    return &(*j_)[key];
  }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const Json* j_;
  std::string path_;
  std::set<std::string> used_;
};

RunConfig from_json(const Json& j) {
  RunConfig c = default_config();
  Section root(&j, "");
  root.get("seed", c.seed);
  root.get_enum("precision", c.precision,
                {{"float32", Precision::kFloat32}, {"float64", Precision::kFloat64}});

  Section data = root.child("data");
  auto& p = c.data.corpus;
  data.get("path", c.data.path);
  data.get("input_dim", p.input_dim);
  data.get("n_phones", p.n_phones);
  data.get("n_speakers", p.n_speakers);
  data.get("n_utterances", p.n_utterances);
  data.get("min_length", p.min_length);
  data.get("max_length", p.max_length);
  data.get("mean_segment", p.mean_segment);
  data.get("prototype_scale", p.prototype_scale);
  data.get("speaker_scale", p.speaker_scale);
  data.get("noise_scale", p.noise_scale);
  data.get("max_frames", c.data.max_frames);
  data.get("batch_size", c.data.batch_size);
  data.get("mask_prob", c.data.mask_prob);
  data.get("mask_span", c.data.mask_span);
  data.finish();

  Section model = root.child("model");
  auto& e = c.model.encoder;
  auto& dc = c.model.decoder;
  model.get("d", e.blocks.d);
  model.get("heads", e.blocks.heads);
  model.get("ffn", e.blocks.ffn);
  model.get("encoder_layers", e.blocks.layers);
  model.get("decoder_layers", dc.blocks.layers);
  model.get("conv_kernel", e.blocks.conv_kernel);
  model.get("conv_groups", e.blocks.conv_groups);
  model.get("use_alibi", e.blocks.use_alibi);
  model.get("unet_skips", dc.blocks.use_unet_skips);
  model.get("codebook_size", e.codebook_size);
  model.get("top_k", e.top_k);
  model.get("codebook_decay", e.codebook_decay);
  model.get("lambda", c.model.lambda);
  model.get("sigma_min", dc.sigma_min);
  model.finish();
  dc.blocks.d = e.blocks.d;
  dc.blocks.heads = e.blocks.heads;
  dc.blocks.ffn = e.blocks.ffn;
  dc.blocks.use_alibi = e.blocks.use_alibi;
  dc.blocks.conv_kernel = e.blocks.conv_kernel;
  dc.blocks.conv_groups = e.blocks.conv_groups;

  Section train = root.child("train");
  auto& t = c.train;
  train.get("total_steps", t.total_steps);
  train.get("warmup_steps", t.warmup_steps);
  train.get("peak_lr", t.peak_lr);
  train.get("clip_norm", t.clip_norm);
  train.get("beta1", t.beta1);
  train.get("beta2", t.beta2);
  train.get("eps", t.eps);
  train.get("teacher_start", t.teacher_start);
  train.get("teacher_end", t.teacher_end);
  train.get("teacher_ramp", t.teacher_ramp);
  train.get("checkpoint_every", t.checkpoint_every);
  train.finish();

  Section ft = root.child("finetune");
  auto& f = c.finetune;
  ft.get_enum("mode", f.mode, {{"tts", FinetuneMode::kTts}, {"tokenize", FinetuneMode::kTokenize}});
  ft.get("total_steps", f.total_steps);
  ft.get("warmup_steps", f.warmup_steps);
  ft.get("lr", f.lr);
  ft.get("train_encoder", f.train_encoder);
  ft.get("condition_dropout", f.condition_dropout);
  ft.get("prompt_min", f.prompt_min);
  ft.get("prompt_max", f.prompt_max);
  ft.get_enum("time_sampling", f.time_sampling,
              {{"uniform", TimeSampling::kUniform}, {"logit_normal", TimeSampling::kLogitNormal}});
  ft.get("quantize", f.quantize);
  ft.finish();

  Section tok = root.child("tokenize");
  tok.get("k", c.tokenize.k);
  tok.get("residual", c.tokenize.residual);
  tok.get("residual_k", c.tokenize.residual_k);
  tok.get("frame_rate", c.tokenize.frame_rate);
  tok.get("max_iter", c.tokenize.max_iter);
  tok.get("semantic_layer", c.tokenize.semantic_layer);
  tok.finish();

  Section an = root.child("analyze");
  an.get("k", c.analyze.k);
  an.finish();

  Section smp = root.child("sample");
  smp.get("step", c.sample.step);
  smp.get("guidance", c.sample.guidance);
  smp.get_enum("guidance_form", c.sample.form,
               {{"interpolate", GuidanceForm::kInterpolate},
                {"extrapolate", GuidanceForm::kExtrapolate}});
  smp.get("count", c.sample.count);
  smp.get("prompt_fraction", c.sample.prompt_fraction);
  smp.finish();

  root.finish();
  sync_derived(c);
  c.validate();
  return c;
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.model.decoder.blocks = c.model.encoder.blocks;
  c.model.decoder.blocks.layers = 2;
  c.model.decoder.blocks.use_unet_skips = true;
  sync_derived(c);
  return c;
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) {
  return from_json(parse_json(text, "config is not valid JSON"));
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return cfg;
  Json j = to_json(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override \"" + o + "\" must have the form key.path=value");
    }
    const std::string path = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(text);
    } catch (const Json::parse_error&) {
      value = text;
    }
    Json* node = &j;
    std::stringstream parts(path);
    std::string part;
    std::vector<std::string> keys;
    while (std::getline(parts, part, '.')) keys.push_back(part);
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      if (!node->is_object() || !node->contains(keys[i])) {
        throw ConfigError("unknown config key " + path);
      }
      node = &(*node)[keys[i]];
    }
    if (!node->is_object() || !node->contains(keys.back())) {
      throw ConfigError("unknown config key " + path);
    }
    (*node)[keys.back()] = value;
  }
  return from_json(j);
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_overrides(config_from_json(ss.str()), overrides);
}

std::uint64_t architecture_hash(const RunConfig& cfg) {
  Json j{{"precision", precision_name(cfg.precision)},
         {"input_dim", cfg.data.corpus.input_dim},
         {"n_phones", cfg.data.corpus.n_phones},
         {"model", model_json(cfg)}};
  j["model"].erase("lambda");
  j["model"].erase("codebook_decay");
  return fnv1a(j.dump());
}

}  // namespace duet
