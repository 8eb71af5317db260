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

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "duet/common.h"
#include "duet/config.h"

namespace duet {
namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsAreValidAndTied) {
  const auto c = default_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model.encoder.input_dim, c.data.corpus.input_dim);
  EXPECT_EQ(c.model.decoder.input_dim, c.data.corpus.input_dim);
  EXPECT_EQ(c.model.decoder.n_phones, c.data.corpus.n_phones);
  EXPECT_EQ(c.model.decoder.encoder_layers, c.model.encoder.blocks.layers);
  EXPECT_EQ(c.train.total_steps, 2000);
  EXPECT_EQ(c.train.warmup_steps, 100);
  EXPECT_EQ(c.data.batch_size, 8);
  EXPECT_EQ(c.model.lambda, 0.25);
  EXPECT_EQ(c.finetune.resolved_lr(), 1e-5);
  EXPECT_TRUE(c.finetune.resolved_train_encoder());
}

TEST(Config, JsonRoundTrip) {
  const auto c = apply_overrides(default_config(), {"model.d=32", "sample.guidance=1.5"});
  const auto text = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(text)), text);
}

TEST(Config, PartialJsonKeepsDefaults) {
  const auto c = config_from_json(R"({"seed": 7, "train": {"total_steps": 50, "warmup_steps": 5}})");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.train.total_steps, 50);
  EXPECT_EQ(c.model.encoder.blocks.d, default_config().model.encoder.blocks.d);
}

TEST(Config, UnknownKeysNamePath) {
  EXPECT_NE(error_of([] { config_from_json(R"({"train": {"totl_steps": 5}})"); }).find("train.totl_steps"),
            std::string::npos);
  EXPECT_NE(error_of([] { config_from_json(R"({"extra": 1})"); }).find("extra"), std::string::npos);
}

TEST(Config, WrongTypesAndValuesFail) {
  EXPECT_THROW(config_from_json(R"({"model": {"d": "wide"}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"model": {"d": 30, "heads": 4}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"train": {"warmup_steps": 5000}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"sample": {"step": 0.3}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"finetune": {"mode": "vc"}})"), ConfigError);
  EXPECT_THROW(config_from_json("{not json"), ConfigError);
}

TEST(Config, OverridesParseJsonValues) {
  const auto c = apply_overrides(default_config(),
                                 {"data.input_dim=6", "finetune.mode=tokenize", "model.use_alibi=false"});
  EXPECT_EQ(c.model.decoder.input_dim, 6);
  EXPECT_EQ(c.finetune.mode, FinetuneMode::kTokenize);
  EXPECT_EQ(c.finetune.resolved_lr(), 1e-4);
  EXPECT_FALSE(c.finetune.resolved_train_encoder());
  EXPECT_FALSE(c.model.encoder.blocks.use_alibi);
  EXPECT_THROW(apply_overrides(default_config(), {"model.d"}), ConfigError);
  EXPECT_THROW(apply_overrides(default_config(), {"model.depth=3"}), ConfigError);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "duet_config_test.json";
  {
    std::ofstream out(path);
    out << R"({"seed": 3})";
  }
  EXPECT_EQ(load_config(path, {"seed=4"}).seed, 4u);
  EXPECT_EQ(load_config(path).seed, 3u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Config, ArchitectureHashTracksModelOnly) {
  const auto c = default_config();
  EXPECT_EQ(architecture_hash(c), architecture_hash(apply_overrides(c, {"train.peak_lr=0.001"})));
  EXPECT_EQ(architecture_hash(c), architecture_hash(apply_overrides(c, {"seed=9"})));
  EXPECT_NE(architecture_hash(c), architecture_hash(apply_overrides(c, {"model.d=32"})));
  EXPECT_NE(architecture_hash(c), architecture_hash(apply_overrides(c, {"precision=\"float64\""})));
}

}  // namespace
}  // namespace duet
