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

#include "duet/sampler.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace duet {

void SolverConfig::validate() const {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("solver: step must be in (0, 1]");
  const double n = std::round(1.0 / step);
  if (std::abs(n * step - 1.0) > 1e-9) {
    throw ConfigError("solver: 1/step must be an integer, got step=" + std::to_string(step));
  }
  if (!std::isfinite(guidance)) throw ConfigError("solver: guidance must be finite");
}

int SolverConfig::steps() const {
  validate();
  return static_cast<int>(std::lround(1.0 / step));
}

bool SolverConfig::guided() const {
  return form == GuidanceForm::kInterpolate ? guidance != 1.0 : guidance != 0.0;
}

template <typename T>
SolveResult<T> midpoint_solve(const FieldFn<T>& field, const Tensor<T>& x0, double h) {
  SolverConfig check;
  check.step = h;
  const int n = check.steps();
  SolveResult<T> r{x0, 0};
  const T half = static_cast<T>(h / 2.0);
  const T full = static_cast<T>(h);
  for (int s = 0; s < n; ++s) {
    const double t = s * h;
    const Tensor<T> k1 = field(r.x, t);
    Tensor<T> mid = r.x;
    for (std::int64_t i = 0; i < mid.size(); ++i) mid[i] += half * k1[i];
    const Tensor<T> k2 = field(mid, t + h / 2.0);
    r.evaluations += 2;
    if (k1.shape() != x0.shape() || k2.shape() != x0.shape()) {
      throw ConfigError("midpoint_solve: field returned " + shape_string(k2.shape()) +
                        " for state " + shape_string(x0.shape()));
    }
    for (std::int64_t i = 0; i < r.x.size(); ++i) r.x[i] += full * k2[i];
  }
  return r;
}

template <typename T>
Tensor<T> cfg_field(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double alpha,
                    GuidanceForm form) {
  if (v_cond.shape() != v_uncond.shape()) {
    throw ConfigError("cfg_field: " + shape_string(v_cond.shape()) + " vs " +
                      shape_string(v_uncond.shape()));
  }
  Tensor<T> out(v_cond.shape());
  const T a = static_cast<T>(alpha);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = form == GuidanceForm::kInterpolate
                 ? v_uncond[i] + a * (v_cond[i] - v_uncond[i])
                 : (T{1} + a) * v_cond[i] - a * v_uncond[i];
  }
  return out;
}

MaskSpec prompt_mask(std::int64_t length, double lo, double hi, Rng& rng) {
  if (length < 1) throw ConfigError("prompt_mask: empty sequence");
  if (!(lo >= 0.0 && lo <= hi && hi <= 1.0)) {
    throw ConfigError("prompt_mask: need 0 <= lo <= hi <= 1");
  }
  const double f = lo + (hi - lo) * rng.uniform();
  const std::int64_t n =
      std::clamp<std::int64_t>(std::llround(f * static_cast<double>(length)), 1, length);
  const std::int64_t start = rng.uniform_int(0, length - n);
  MaskSpec m = MaskSpec::none(length);
  m.span = static_cast<int>(n);
  m.starts = {start};
  for (std::int64_t i = start; i < start + n; ++i) m.indicator[static_cast<std::size_t>(i)] = 1;
  return m;
}

template <typename T>
NodeId build_condition(Binder<T>& bind, const ModelConfig& cfg, const ConditionSet<T>& cond,
                       std::int64_t length) {
  auto& g = bind.graph();
  const int d = cfg.decoder.blocks.d;
  auto all_null = [&] { return g.add(g.constant(Tensor<T>(Shape{length, d})), bind("cond.null_z")); };
  NodeId z = -1;
  if (cond.dropped) {
    z = all_null();
  } else if (cond.z.rank() == 2) {
    if (cond.z.shape() != Shape{length, d}) {
      throw ConfigError("condition: representation " + shape_string(cond.z.shape()) +
                        " for length " + std::to_string(length));
    }
    z = g.constant(cond.z);
  } else if (cond.prompt.rank() == 2) {
    if (cond.prompt.dim(0) != length) {
      throw ConfigError("condition: prompt length " + std::to_string(cond.prompt.dim(0)) +
                        " differs from " + std::to_string(length));
    }
    const bool masked = cond.region.length == length;
    const auto layers =
        encoder_forward(bind, cfg.encoder, g.constant(cond.prompt), masked ? &cond.region : nullptr);
    z = condition_from_layers(bind, cfg.decoder, std::span<const NodeId>(layers));
    if (masked && cond.null_region) z = null_condition(bind, z, cond.region);
  } else {
    z = all_null();
  }
  std::vector<std::int64_t> phones;
  if (cond.dropped || cond.phones.empty()) {
    phones.assign(static_cast<std::size_t>(length), cfg.decoder.n_phones);
  } else {
    if (static_cast<std::int64_t>(cond.phones.size()) != length) {
      throw ConfigError("condition: " + std::to_string(cond.phones.size()) +
                        " condition tokens for length " + std::to_string(length));
    }
    phones = cond.phones;
  }
  return g.add(z, phone_embedding(bind, cfg.decoder, phones));
}

template <typename T>
GenerateResult<T> generate(const ParameterStore<T>& params, const ModelConfig& cfg,
                           const ConditionSet<T>& cond, const SolverConfig& solver,
                           std::int64_t length, Rng& rng) {
  solver.validate();
  if (!params.contains("decoder.out.w")) throw ConfigError("generate: decoder weights missing");
  auto frozen = [](std::string_view) { return false; };
  auto condition_value = [&](const ConditionSet<T>& c) {
    Graph<T> g(false);
    Binder<T> bind(g, params, frozen);
    return g.value(build_condition(bind, cfg, c, length));
  };
  const Tensor<T> c_cond = condition_value(cond);
  Tensor<T> c_uncond;
  const bool guided = solver.guided();
  if (guided) {
    ConditionSet<T> none;
    none.dropped = true;
    c_uncond = condition_value(none);
  }
  Tensor<T> x0(Shape{length, cfg.decoder.input_dim});
  for (std::int64_t i = 0; i < x0.size(); ++i) x0[i] = static_cast<T>(rng.normal());

  GenerateResult<T> out;
  auto decode = [&](const Tensor<T>& x, double t, const Tensor<T>& c) {
    Graph<T> g(false);
    Binder<T> bind(g, params, frozen);
    ++out.decoder_passes;
    return g.value(decoder_forward(bind, cfg.decoder, g.constant(x), t, g.constant(c)));
  };
  FieldFn<T> field = [&](const Tensor<T>& x, double t) {
    Tensor<T> vc = decode(x, t, c_cond);
    if (!guided) return vc;
    return cfg_field(vc, decode(x, t, c_uncond), solver.guidance, solver.form);
  };
  auto solved = midpoint_solve(field, x0, solver.step);
  out.x = std::move(solved.x);
  out.nfe = solved.evaluations;
  return out;
}

#define DUET_INSTANTIATE(T)                                                                  \
  template SolveResult<T> midpoint_solve<T>(const FieldFn<T>&, const Tensor<T>&, double);    \
  template Tensor<T> cfg_field<T>(const Tensor<T>&, const Tensor<T>&, double, GuidanceForm); \
  template NodeId build_condition<T>(Binder<T>&, const ModelConfig&, const ConditionSet<T>&, \
                                     std::int64_t);                                          \
  template GenerateResult<T> generate<T>(const ParameterStore<T>&, const ModelConfig&,       \
                                         const ConditionSet<T>&, const SolverConfig&,        \
                                         std::int64_t, Rng&);

DUET_INSTANTIATE(float)
DUET_INSTANTIATE(double)

}  // namespace duet
