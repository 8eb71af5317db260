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

// Acceptance suite. Prints one [PASS]/[FAIL] line per criterion and exits
// non-zero when any criterion fails.
//
//   duet_acceptance [--work DIR] [--only N]...

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "duet/binary_io.h"
#include "duet/pipeline.h"
#include "test_util.h"

namespace fs = std::filesystem;

namespace duet {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_work;

// 1. Codebook update and OT path endpoints.
Outcome codebook_and_path() {
  std::ostringstream d;
  bool ok = true;
  // Two assignments to codeword 0 and none to codeword 1, gamma = 0.9:
  // s0 = 0.9 * 2 + 0.1 * (1 + 3) = 2.2, n0 = 0.9 * 1 + 0.1 * 2 = 1.1,
  // s1 = 0.9 * (-1) = -0.9, n1 = 0.9 * 2 = 1.8.
  Codebook cb(Tensor<double>(Shape{2, 1}, std::vector<double>{2.0, -1.0}), {1.0, 2.0});
  cb.update(Tensor<double>(Shape{2, 1}, std::vector<double>{1.0, 3.0}),
            std::vector<std::int64_t>{0, 0}, 0.9);
  const double expect[] = {2.2, 1.1, -0.9, 1.8, 2.2 / 1.1, -0.9 / 1.8};
  const double got[] = {cb.sums()[0], cb.counts()[0], cb.sums()[1],
                        cb.counts()[1], cb.codewords()[0], cb.codewords()[1]};
  double worst = 0.0;
  for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(expect[i] - got[i]));
  ok &= worst <= 1e-12;
  d << "codebook max err " << fmt("%.2e", worst);

  Rng rng(11);
  const auto x0 = testing::random_tensor<double>({16, 8}, rng);
  const auto x1 = testing::random_tensor<double>({16, 8}, rng);
  const double sigma = 1e-5;
  const bool start_exact = ot_path(x0, x1, 0.0, sigma).phi == x0;
  const auto end = ot_path(x0, x1, 1.0, sigma).phi;
  double err = 0.0, n0 = 0.0;
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    err += (end[i] - x1[i]) * (end[i] - x1[i]);
    n0 += x0[i] * x0[i];
  }
  const bool end_ok = std::sqrt(err) <= sigma * std::sqrt(n0) * (1 + 1e-12);
  ok &= start_exact && end_ok;
  d << ", phi_0 exact " << (start_exact ? "yes" : "no") << ", |phi_1-x_1| " << fmt("%.3e", std::sqrt(err))
    << " <= " << fmt("%.3e", sigma * std::sqrt(n0));
  return {ok, d.str()};
}

// 2. Joint loss gradient against central differences.
Outcome joint_gradient() {
  Rng rng(21);
  const ModelConfig mc = testing::tiny_model(1);
  const auto params = init_model<double>(mc, rng);
  const std::int64_t len = 6;
  const auto x = testing::random_tensor<double>({len, 4}, rng);
  const auto x0 = testing::random_tensor<double>({len, 4}, rng);
  const MaskSpec mask = MaskSpec::from_indices(len, std::vector<std::int64_t>{1, 2, 4});
  std::vector<std::vector<std::int64_t>> labels(2);
  for (auto& l : labels) {
    for (int i = 0; i < len; ++i) l.push_back(rng.uniform_int(0, mc.encoder.codebook_size - 1));
  }
  const double t = 0.37;
  const auto fs = ot_path(x0, x, t, mc.decoder.sigma_min);
  const std::vector<std::int64_t> null_phones(len, mc.decoder.n_phones);
  const auto res = testing::check_gradients(params, [&](Binder<double>& b) {
    auto& g = b.graph();
    const auto layers = encoder_forward(b, mc.encoder, g.constant(x), &mask);
    const NodeId le = encoder_loss(b, mc.encoder, layers.back(), labels, mask);
    const NodeId cond = g.add(condition_from_layers(b, mc.decoder, std::span<const NodeId>(layers)),
                              phone_embedding(b, mc.decoder, null_phones));
    const NodeId v = decoder_forward(b, mc.decoder, g.constant(fs.phi), t, cond);
    return g.add(le, g.scale(cfm_loss(g, v, fs.u, mask), 0.25));
  });
  return {res.max_rel <= 1e-4, "max relative error " + fmt("%.3e", res.max_rel) + " over " +
                                   std::to_string(res.checked) + " parameters (worst " + res.worst + ")"};
}

// 3. Midpoint order and NFE accounting.
Outcome solver_order() {
  const FieldFn<double> decay = [](const Tensor<double>& x, double) {
    Tensor<double> v = x;
    for (auto& e : v.values()) e = -e;
    return v;
  };
  const auto x0 = Tensor<double>::vector({1.0});
  std::vector<double> err;
  for (double h : {0.25, 0.125, 0.0625}) {
    err.push_back(std::abs(midpoint_solve(decay, x0, h).x[0] - std::exp(-1.0)));
  }
  const double o1 = std::log2(err[0] / err[1]), o2 = std::log2(err[1] / err[2]);
  const int nfe32 = SolverConfig{0.0625, 1.9}.nfe(), nfe8 = SolverConfig{0.25, 1.0}.nfe();
  const bool ok = o1 >= 1.8 && o1 <= 2.2 && o2 >= 1.8 && o2 <= 2.2 && nfe32 == 32 && nfe8 == 8;
  return {ok, "orders " + fmt("%.3f", o1) + ", " + fmt("%.3f", o2) + "; NFE " + std::to_string(nfe32) +
                  " (h=0.0625), " + std::to_string(nfe8) + " (h=0.25)"};
}

// 4. Decoder-only flow matching on a two-component Gaussian mixture.
Outcome gaussian_mixture() {
  const double mu[2][2] = {{2.0, 1.0}, {-1.5, -2.0}};
  const double weight0 = 0.3, sd = 0.4;
  Rng rng(41);
  ModelConfig mc = testing::tiny_model(2);
  mc.encoder.input_dim = mc.decoder.input_dim = 2;
  mc.encoder.blocks.d = mc.decoder.blocks.d = 32;
  mc.encoder.blocks.ffn = mc.decoder.blocks.ffn = 64;
  auto params = init_model<double>(mc, rng);
  ParameterStore<double> m, v;
  for (const auto& [name, p] : params.entries()) {
    m.add(name, Tensor<double>(p.shape()));
    v.add(name, Tensor<double>(p.shape()));
  }
  const auto trainable = [](std::string_view n) { return n.rfind("encoder.", 0) != 0; };
  auto draw = [&](Rng& r) {
    const int c = r.uniform() < weight0 ? 0 : 1;
    return Tensor<double>::matrix({{mu[c][0] + sd * r.normal(), mu[c][1] + sd * r.normal()}});
  };
  const int steps = 3000, batch = 32;
  for (int step = 1; step <= steps; ++step) {
    GradMap<double> grads;
    for (int b = 0; b < batch; ++b) {
      Graph<double> g;
      Binder<double> bind(g, params, trainable);
      const auto x1 = draw(rng);
      const auto x0 = testing::random_tensor<double>({1, 2}, rng);
      const double t = sample_time(TimeSampling::kUniform, rng);
      const auto fs = ot_path(x0, x1, t, mc.decoder.sigma_min);
      const auto cond = build_condition(bind, mc, ConditionSet<double>{}, 1);
      const auto pred = decoder_forward(bind, mc.decoder, g.constant(fs.phi), t, cond);
      for (auto& [name, gr] : bind.collect(g.backward(cfm_loss(g, pred, fs.u, MaskSpec::all(1), batch)))) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, gr);
        } else {
          for (std::int64_t i = 0; i < gr.size(); ++i) it->second[i] += gr[i];
        }
      }
    }
    clip_gradients(grads, 1.0);
    const double lr = lr_at(step, steps, 100, 2e-3);
    for (auto& [name, gr] : grads) {
      adam_update(params.get_mut(name), gr, m.get_mut(name), v.get_mut(name), step, lr, 0.9, 0.98, 1e-8);
    }
  }
  const int n = 10000;
  Tensor<double> samples(Shape{n, 2});
  const SolverConfig solver{0.0625, 1.0};
  for (int i = 0; i < n; ++i) {
    const auto out = generate(params, mc, ConditionSet<double>{}, solver, 1, rng);
    samples(i, 0) = out.x[0];
    samples(i, 1) = out.x[1];
  }
  // Samples go to the nearer true mean; cluster statistics are compared
  // against the mixture parameters.
  double sum[2][2] = {}, count[2] = {};
  for (int i = 0; i < n; ++i) {
    double dist[2];
    for (int c = 0; c < 2; ++c) dist[c] = std::hypot(samples(i, 0) - mu[c][0], samples(i, 1) - mu[c][1]);
    const int c = dist[0] <= dist[1] ? 0 : 1;
    sum[c][0] += samples(i, 0);
    sum[c][1] += samples(i, 1);
    count[c] += 1;
  }
  double worst_mean = 0.0;
  std::ostringstream d;
  for (int c = 0; c < 2; ++c) {
    const double mx = sum[c][0] / std::max(count[c], 1.0), my = sum[c][1] / std::max(count[c], 1.0);
    const double rel = std::hypot(mx - mu[c][0], my - mu[c][1]) / std::hypot(mu[c][0], mu[c][1]);
    worst_mean = std::max(worst_mean, rel);
    d << "mean" << c << " (" << fmt("%.3f", mx) << ", " << fmt("%.3f", my) << ") ";
  }
  const double w0 = count[0] / n;
  d << "max rel err " << fmt("%.3f", worst_mean) << "; weight0 " << fmt("%.3f", w0) << " (true 0.3)";
  return {worst_mean <= 0.10 && std::abs(w0 - weight0) <= 0.05, d.str()};
}

RunConfig overfit_config() { return apply_overrides(default_config(), {"data.n_utterances=8"}); }

fs::path overfit_dir() { return g_work / "overfit"; }

// Trains once and reuses the checkpoint for criteria 5 and 11.
const fs::path& overfit_checkpoint() {
  static fs::path ckpt;
  if (ckpt.empty()) {
    std::ostringstream log;
    ckpt = cmd_pretrain(overfit_config(), overfit_dir(), std::nullopt, log).checkpoint;
  }
  return ckpt;
}

// 5. Joint overfit on eight utterances.
Outcome joint_overfit() {
  const RunConfig cfg = overfit_config();
  const auto& ckpt_path = overfit_checkpoint();
  std::ifstream in(overfit_dir() / "metrics.csv");
  std::vector<double> enc;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream s(line);
    std::string cell;
    for (int c = 0; c < 4 && std::getline(s, cell, ','); ++c) {
      if (c == 3) enc.push_back(std::stod(cell));
    }
  }
  double tail = 0.0;
  const std::size_t k = std::min<std::size_t>(50, enc.size());
  for (std::size_t i = enc.size() - k; i < enc.size(); ++i) tail += enc[i] / static_cast<double>(k);
  const double bound = std::log(static_cast<double>(cfg.model.encoder.codebook_size)) * 0.8;

  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto st = from_checkpoint<float>(ckpt, cfg);
  const Corpus corpus = prepare_corpus(cfg, &st.norm, nullptr);
  Rng rng(51);
  const double mse = resynthesis_mse(st.params, cfg, corpus, SolverConfig{0.0625, 1.0}, rng);
  return {tail < bound && mse <= 0.1,
          "encoder loss (mean of last " + std::to_string(k) + " steps) " + fmt("%.4f", tail) + " < " +
              fmt("%.4f", bound) + "; resynthesis MSE/var " + fmt("%.4f", mse) + " <= 0.1 at NFE 32"};
}

// 6. Bitrate table.
Outcome bitrates() {
  const std::vector<int> a{1024}, b(2, 1024), c(8, 1024);
  const double ra = bitrate(a, 50.0), rb = bitrate(b, 50.0), rc = bitrate(c, 50.0);
  return {ra == 500.0 && rb == 1000.0 && rc == 4000.0,
          fmt("%.0f", ra) + ", " + fmt("%.0f", rb) + ", " + fmt("%.0f", rc) + " bps"};
}

// 7. Mask coverage.
Outcome mask_coverage() {
  Rng rng(71);
  double total = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    total += static_cast<double>(sample_mask(10000, 0.08, 10, rng).count()) / 10000.0;
  }
  const double mean = total / 100.0, analytic = 1.0 - std::pow(0.92, 10);
  return {std::abs(mean - analytic) <= 0.02,
          "coverage " + fmt("%.4f", mean) + " vs analytic " + fmt("%.4f", analytic)};
}

// 8. Both losses ignore unmasked frames.
Outcome loss_locality() {
  Rng rng(81);
  const ModelConfig mc = testing::tiny_model(2);
  const auto params = init_model<double>(mc, rng);
  const std::int64_t len = 9;
  const MaskSpec mask = MaskSpec::from_indices(len, std::vector<std::int64_t>{2, 3, 7});
  auto z = testing::random_tensor<double>({len, 8}, rng);
  auto pred = testing::random_tensor<double>({len, 4}, rng);
  auto target = testing::random_tensor<double>({len, 4}, rng);
  std::vector<std::vector<std::int64_t>> labels(2);
  for (auto& l : labels) {
    for (int i = 0; i < len; ++i) l.push_back(rng.uniform_int(0, mc.encoder.codebook_size - 1));
  }
  auto losses = [&]() {
    Graph<double> g(false);
    Binder<double> b(g, params);
    const double le = g.value(encoder_loss(b, mc.encoder, g.constant(z), labels, mask)).item();
    const double ld = g.value(cfm_loss(g, g.constant(pred), target, mask)).item();
    return std::make_pair(le, ld);
  };
  const auto before = losses();
  for (std::int64_t i = 0; i < len; ++i) {
    if (mask.contains(i)) continue;
    for (int c = 0; c < 8; ++c) z(i, c) += 5.0 * rng.normal();
    for (int c = 0; c < 4; ++c) {
      pred(i, c) += 5.0 * rng.normal();
      target(i, c) -= 5.0 * rng.normal();
    }
    for (auto& l : labels) l[static_cast<std::size_t>(i)] = (l[static_cast<std::size_t>(i)] + 1) % 5;
  }
  const auto after = losses();
  const double de = std::abs(after.first - before.first), dd = std::abs(after.second - before.second);
  return {de <= 1e-12 && dd <= 1e-12,
          "encoder loss change " + fmt("%.2e", de) + ", decoder loss change " + fmt("%.2e", dd)};
}

// 9. Mutual information estimator.
Outcome mutual_info() {
  std::vector<std::int64_t> s;
  for (int i = 0; i < 10000; ++i) s.push_back(i % 4);
  const double same = mutual_information(s, s);
  Rng rng(91);
  std::vector<std::int64_t> a, b;
  for (int i = 0; i < 100000; ++i) {
    a.push_back(rng.uniform_int(0, 7));
    b.push_back(rng.uniform_int(0, 3));
  }
  const double indep = mutual_information(a, b);
  std::vector<std::int64_t> c;
  for (std::size_t i = 0; i < a.size(); ++i) c.push_back((a[i] + b[i]) % 5);
  const bool sym = mutual_information(a, b) == mutual_information(b, a) &&
                   mutual_information(a, c) == mutual_information(c, a);
  return {same == 2.0 && indep <= 0.01 && sym,
          "identical " + fmt("%.6f", same) + " bits, independent " + fmt("%.5f", indep) +
              " bits, symmetric " + (sym ? "yes" : "no")};
}

// 10. Determinism and resume.
Outcome determinism() {
  const RunConfig cfg = apply_overrides(default_config(), {"data.n_utterances=16", "train.total_steps=30",
                                                           "train.warmup_steps=5",
                                                           "train.checkpoint_every=15"});
  std::ostringstream log;
  const fs::path a = g_work / "det_a", b = g_work / "det_b", r = g_work / "det_resume";
  cmd_pretrain(cfg, a, std::nullopt, log);
  cmd_pretrain(cfg, b, std::nullopt, log);
  const bool same_metrics = read_file(a / "metrics.csv") == read_file(b / "metrics.csv");
  const bool same_ckpt = read_file(a / "checkpoint.duet") == read_file(b / "checkpoint.duet");
  cmd_pretrain(cfg, r, a / "checkpoint_15.duet", log);
  auto rows = [](const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  };
  const auto full = rows(a / "metrics.csv"), rest = rows(r / "metrics.csv");
  int matched = 0;
  bool resume_ok = rest.size() == 16;
  for (std::size_t i = 1; resume_ok && i < rest.size(); ++i) {
    if (rest[i] == full[15 + i]) {
      ++matched;
    } else {
      resume_ok = false;
    }
  }
  resume_ok = resume_ok && matched >= 10 &&
              read_file(r / "checkpoint.duet") == read_file(a / "checkpoint.duet");
  return {same_metrics && same_ckpt && resume_ok,
          std::string("rerun metrics ") + (same_metrics ? "identical" : "differ") + ", checkpoints " +
              (same_ckpt ? "identical" : "differ") + "; resume from step 15 matched " +
              std::to_string(matched) + " of 15 steps"};
}

// 11. Encoder layers carry phone and speaker information after the overfit.
Outcome joint_signal() {
  const RunConfig cfg = overfit_config();
  std::ostringstream log;
  const fs::path corpus = g_work / "overfit_corpus.corp";
  cmd_gen_corpus(cfg, corpus, log);
  const MIReport rep = cmd_analyze(cfg, overfit_checkpoint(), corpus, g_work / "overfit_mi.csv", log);
  double best_phone = -1.0, best_speaker = 0.0;
  int best_layer = -1;
  for (const auto& l : rep.layers) {
    if (l.phone_mi > best_phone) {
      best_phone = l.phone_mi;
      best_layer = l.layer;
    }
    best_speaker = std::max(best_speaker, l.speaker_mi);
  }
  return {best_phone > rep.raw.phone_mi && best_speaker > 0.0,
          "raw phone MI " + fmt("%.4f", rep.raw.phone_mi) + ", best layer " + std::to_string(best_layer) +
              " phone MI " + fmt("%.4f", best_phone) + "; max speaker MI " + fmt("%.4f", best_speaker)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace duet

int main(int argc, char** argv) {
  using namespace duet;
  g_work = fs::path("acceptance_work");
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.insert(std::stoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only N]...\n", argv[0]);
      return 1;
    }
  }
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {1, "codebook update and OT path endpoints", 1.0, codebook_and_path},
      {2, "joint loss gradient vs finite differences", 60.0, joint_gradient},
      {3, "midpoint order and NFE accounting", 10.0, solver_order},
      {4, "two-component mixture recovered by flow matching", 600.0, gaussian_mixture},
      {5, "joint overfit on 8 utterances", 1800.0, joint_overfit},
      {6, "bitrate arithmetic", 1.0, bitrates},
      {7, "mask coverage statistics", 10.0, mask_coverage},
      {8, "loss locality", 1.0, loss_locality},
      {9, "mutual information estimator", 1.0, mutual_info},
      {10, "determinism and resume", 600.0, determinism},
      {11, "encoder layers carry label information", 600.0, joint_signal},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("[%s] %2d %s: %s (%.2f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
