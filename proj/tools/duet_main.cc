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

// Command-line entry point.
//
//   duet pretrain   --out DIR [--resume CKPT]
//   duet finetune   --checkpoint CKPT --mode tts|tokenize --out DIR
//   duet sample     --checkpoint CKPT [--condition FILE] --out FILE
//   duet tokenize   --checkpoint CKPT [--corpus FILE] --out FILE
//   duet analyze    --checkpoint CKPT [--corpus FILE] --out FILE
//   duet gen-corpus --out FILE
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duet/checkpoint.h"
#include "duet/common.h"
#include "duet/config.h"
#include "duet/pipeline.h"
#include "duet/trainer.h"

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string resume;
  std::string condition;
  std::string corpus;
  std::string mode;
  std::optional<double> step;
  std::optional<double> guidance;
  std::optional<int> count;
  std::optional<int> k;
  bool residual = false;
};

// Base config: --config when given, else the checkpoint's own config for
// commands that read one, else the defaults. Flags and --set apply on top.
duet::RunConfig resolve(const Options& o, const std::string& checkpoint,
                        std::vector<std::string> flags) {
  duet::RunConfig base = duet::default_config();
  if (!o.config.empty()) {
    base = duet::load_config(o.config);
  } else if (!checkpoint.empty()) {
    base = duet::checkpoint_config(duet::load_checkpoint(checkpoint));
  }
  if (o.seed) flags.push_back("seed=" + std::to_string(*o.seed));
  flags.insert(flags.end(), o.sets.begin(), o.sets.end());
  duet::RunConfig cfg = duet::apply_overrides(base, flags);
  cfg.validate();
  return cfg;
}

std::string number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::optional<std::filesystem::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint speech representation and generation model on synthetic features"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON config file (see docs/config.md)");
  app.add_option("--set", o.sets, "Override a config key: section.key=value (repeatable)");
  app.add_option("--seed", o.seed, "Run seed");

  auto* pretrain = app.add_subcommand("pretrain", "Joint encoder and decoder pretraining");
  pretrain->add_option("--out", o.out, "Output directory")->required();
  pretrain->add_option("--resume", o.resume, "Continue from a pretraining checkpoint");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune the decoder for generation or tokens");
  finetune->add_option("--checkpoint", o.checkpoint, "Base checkpoint")->required();
  finetune->add_option("--mode", o.mode, "tts or tokenize")->check(CLI::IsMember({"tts", "tokenize"}));
  finetune->add_option("--out", o.out, "Output directory")->required();

  auto* sample = app.add_subcommand("sample", "Generate feature sequences");
  sample->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  sample->add_option("--condition", o.condition, "Condition corpus or token file");
  sample->add_option("--out", o.out, "Output corpus file")->required();
  sample->add_option("--step", o.step, "ODE step size");
  sample->add_option("--guidance", o.guidance, "Guidance strength");
  sample->add_option("--count", o.count, "Number of samples");

  auto* tokenize = app.add_subcommand("tokenize", "Quantize encoder features into token streams");
  tokenize->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  tokenize->add_option("--corpus", o.corpus, "Corpus file (default: the training corpus)");
  tokenize->add_option("--out", o.out, "Output token file")->required();
  tokenize->add_option("--k", o.k, "Semantic codebook size");
  tokenize->add_flag("--residual", o.residual, "Add the residual codebook");

  auto* analyze = app.add_subcommand("analyze", "Per-layer mutual information with labels");
  analyze->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  analyze->add_option("--corpus", o.corpus, "Labelled corpus file (default: the training corpus)");
  analyze->add_option("--out", o.out, "Output CSV")->required();
  analyze->add_option("--k", o.k, "Clusters per representation");

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic corpus for the config");
  gen->add_option("--out", o.out, "Output corpus file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*pretrain) {
      const auto cfg = resolve(o, "", {});
      duet::cmd_pretrain(cfg, o.out, optional_path(o.resume), std::cout);
    } else if (*finetune) {
      std::vector<std::string> flags;
      if (!o.mode.empty()) flags.push_back("finetune.mode=" + o.mode);
      const auto cfg = resolve(o, o.checkpoint, flags);
      duet::cmd_finetune(cfg, o.checkpoint, o.out, std::cout);
    } else if (*sample) {
      std::vector<std::string> flags;
      if (o.step) flags.push_back("sample.step=" + number(*o.step));
      if (o.guidance) flags.push_back("sample.guidance=" + number(*o.guidance));
      if (o.count) flags.push_back("sample.count=" + std::to_string(*o.count));
      const auto cfg = resolve(o, o.checkpoint, flags);
      duet::cmd_sample(cfg, o.checkpoint, optional_path(o.condition), o.out, std::cout);
    } else if (*tokenize) {
      std::vector<std::string> flags;
      if (o.k) flags.push_back("tokenize.k=" + std::to_string(*o.k));
      if (o.residual) flags.push_back("tokenize.residual=true");
      const auto cfg = resolve(o, o.checkpoint, flags);
      duet::cmd_tokenize(cfg, o.checkpoint, optional_path(o.corpus), o.out, std::cout);
    } else if (*analyze) {
      std::vector<std::string> flags;
      if (o.k) flags.push_back("analyze.k=" + std::to_string(*o.k));
      const auto cfg = resolve(o, o.checkpoint, flags);
      duet::cmd_analyze(cfg, o.checkpoint, optional_path(o.corpus), o.out, std::cout);
    } else if (*gen) {
      const auto cfg = resolve(o, "", {});
      duet::cmd_gen_corpus(cfg, o.out, std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
