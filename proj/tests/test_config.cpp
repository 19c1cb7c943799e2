#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dsanet/config.hpp"
#include "dsanet/errors.hpp"

using namespace dsanet;
using namespace dsanet::config;

TEST(Settings, DefaultsResolve) {
  const RunConfig c = resolve(Settings{});
  EXPECT_EQ(c.train.base_lr, 3.5e-4);
  EXPECT_EQ(c.train.decay_every, 40u);
  EXPECT_EQ(c.train.weight_decay, 5e-4);
  EXPECT_FALSE(c.train.decoupled_weight_decay);
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.loss.lambda, 0.1);
  EXPECT_EQ(c.sampler.p, 8u);
  EXPECT_EQ(c.sampler.k, 4u);
  EXPECT_EQ(c.model.components, Components::all());
  EXPECT_EQ(c.model.backbone.strides, (std::array<std::size_t, 4>{2, 2, 2, 1}));
  EXPECT_EQ(c.eval_t(), 4u);
}

TEST(Settings, ParseFileTextWithComments) {
  Settings s;
  s.parse("# comment\nseed = 7\n\nmodel.components = tlm,fwg  # trailing\nbackbone.strides=2,2,1,1\n");
  const RunConfig c = resolve(s);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_TRUE(c.model.components.tlm && c.model.components.fwg);
  EXPECT_FALSE(c.model.components.sao);
  EXPECT_EQ(c.model.backbone.strides[2], 1u);
  EXPECT_EQ(c.train.seed, 7u);
}

TEST(Settings, UnknownKeyListsValidKeys) {
  Settings s;
  try {
    s.assign("train.lr=1");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("train.lr"), std::string::npos);
    EXPECT_NE(msg.find("train.base_lr"), std::string::npos);
  }
  EXPECT_THROW(s.parse("no equals sign"), ConfigError);
}

TEST(Settings, MalformedValues) {
  for (const char* bad : {"seed=-1", "train.epochs=ten", "loss.lambda=0.1x", "augment.enabled=maybe",
                          "backbone.strides=2,2,2", "backbone.norm=group", "model.components=tlm,xyz",
                          "train.precision=float", "loss.lambda=-0.5"}) {
    Settings s;
    s.assign(bad);
    EXPECT_THROW(resolve(s), ConfigError) << bad;
  }
}

TEST(Settings, LoadFromFileAndEcho) {
  const auto path = std::filesystem::temp_directory_path() / "dsanet_test.cfg";
  {
    std::ofstream os(path);
    os << "synth.ids = 12\nloss.ic_weight = 0.01\n";
  }
  Settings s;
  s.load(path);
  EXPECT_EQ(s.to_json()["synth.ids"], "12");
  const RunConfig c = resolve(s);
  EXPECT_EQ(c.synth.num_ids, 12u);
  EXPECT_EQ(c.loss.ic_weight, 0.01);
  EXPECT_THROW(s.load(path.string() + ".missing"), ConfigError);
  std::filesystem::remove(path);
}

TEST(Settings, ModelDimensionsComeFromTheCorpus) {
  Settings s;
  s.assign("synth.ids=10");
  s.assign("synth.cameras=3");
  const RunConfig c = resolve(s);
  data::Dataset ds;
  ds.spec = c.synth;
  ds.spec.height = 32;
  ds.train_ids = {0, 1, 2, 3, 4};
  const ModelConfig m = model_for(c, ds);
  EXPECT_EQ(m.num_ids, 5u);
  EXPECT_EQ(m.num_cameras, 3u);
  EXPECT_EQ(m.backbone.height, 32u);
}
