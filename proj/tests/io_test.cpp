#include <gtest/gtest.h>

#include <anerf/checkpoint.hpp>
#include <anerf/gradient_suite.hpp>
#include <anerf/metrics.hpp>
#include <cmath>
#include <filesystem>

#include "oracles.hpp"

using namespace anerf;
using anerf::testing::psnr_oracle;
using anerf::testing::ssim_oracle;
namespace fs = std::filesystem;

namespace {

Image random_image(Rng& rng, int h, int w, int c) {
  Image img(h, w, c);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.config.model = toy_model_config();
  ck.config.seed = 21;
  ck.stage = "finetune";
  ck.actor = "actor_08";
  ck.state = make_state(ck.config.model, AdamConfig{}, 21);
  Rng rng(2);
  for (int i = 0; i < 5; ++i) ck.state.rng.uniform();
  for (const auto& g : ck.state.model.groups()) {
    for (const auto& p : g.params) {
      auto& m = ck.state.adam.state()[g.name + "/" + p.name];
      m.m.resize(p.value.numel());
      m.v.resize(p.value.numel());
      for (auto& x : m.m) x = rng.normal();
      for (auto& x : m.v) x = rng.uniform();
    }
  }
  ck.state.adam.set_steps(7);
  ck.state.step = 7;
  ck.state.support = {3, 11};
  ck.state.model.set_frozen("encoder", true);
  ck.state.model.set_frozen("skinning", true);
  return ck;
}

}  // namespace

TEST(Metrics, PsnrMatchesOracle) {
  Rng rng(1);
  for (int n = 0; n < 50; ++n) {
    const Image a = random_image(rng, 12, 14, 3), b = random_image(rng, 12, 14, 3);
    EXPECT_NEAR(psnr(a, b), psnr_oracle(a, b), 1e-10);
  }
}

TEST(Metrics, SsimMatchesOracle) {
  Rng rng(2);
  for (int n = 0; n < 50; ++n) {
    const Image a = random_image(rng, 16, 18, 3);
    Image b = a;
    const double noise = rng.uniform(0.0, 0.5);
    for (auto& v : b.data) v = std::clamp(v + noise * (rng.uniform() - 0.5), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-8);
  }
}

TEST(Metrics, IdentityAndKnownValues) {
  Rng rng(3);
  const Image a = random_image(rng, 16, 16, 3);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  Image b = a;
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 0.5 + ((i % 2) ? 0.1 : -0.1);
  Image c(16, 16, 3, 0.5);
  EXPECT_NEAR(psnr(b, c), 20.0, 1e-10);
}

TEST(Metrics, InvertedBinaryImageHasNegativeSsim) {
  Rng rng(4);
  Image a(16, 16, 1), b(16, 16, 1);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    b.data[i] = 1 - a.data[i];
  }
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Metrics, ShapeAndSizeErrors) {
  EXPECT_THROW(ssim(Image(8, 8, 3), Image(8, 8, 3)), ContractError);
  EXPECT_THROW(psnr(Image(8, 8, 3), Image(8, 9, 3)), ContractError);
}

TEST(Config, ParsesKeysAndRejectsUnknown) {
  RunConfig c;
  apply_config_text(c, "# comment\nseed = 5\nmodel.deform_width = 32\ntrain.lr = 0.001\nmodel.ablation = no-deform\n");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.data.seed, 5u);
  EXPECT_EQ(c.model.deform_width, 32);
  EXPECT_DOUBLE_EQ(c.train.adam.lr, 0.001);
  EXPECT_EQ(c.model.ablation, Ablation::no_deform);
  EXPECT_THROW(apply_config_text(c, "model.colour = 3\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "model.deform_width = wide\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "seed 5\n"), ConfigError);
}

TEST(Config, CanonicalTextRoundTripsAndHashTracksValues) {
  RunConfig c;
  apply_config_text(c, "seed = 9\nfinetune.shots = 10\n");
  RunConfig d;
  apply_config_text(d, config_text(c));
  EXPECT_EQ(config_text(c), config_text(d));
  EXPECT_EQ(config_hash(c), config_hash(d));
  EXPECT_EQ(config_hash(c).size(), 16u);
  apply_config_value(d, "finetune.shots", "30");
  EXPECT_NE(config_hash(c), config_hash(d));
  EXPECT_EQ(config_defaults().count("model.delta_max"), 1u);
}

TEST(Config, Fnv1aReferenceVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 12), std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()));
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.stage, "finetune");
  EXPECT_EQ(back.actor, "actor_08");
  EXPECT_EQ(back.state.step, 7);
  EXPECT_EQ(back.state.adam.steps(), 7);
  EXPECT_EQ(back.state.support, (std::vector<int>{3, 11}));
  EXPECT_TRUE(back.state.model.frozen("encoder"));
  EXPECT_FALSE(back.state.model.frozen("rendering"));
  EXPECT_EQ(back.state.model.parameters(), ck.state.model.parameters());
  EXPECT_EQ(back.state.rng.state(), ck.state.rng.state());
  EXPECT_EQ(config_hash(back.config), config_hash(ck.config));
  for (const auto& [name, m] : ck.state.adam.state()) {
    EXPECT_EQ(back.state.adam.state().at(name).m, m.m);
    EXPECT_EQ(back.state.adam.state().at(name).v, m.v);
  }
}

TEST(Checkpoint, FileRoundTripAndCorruption) {
  const fs::path path = fs::temp_directory_path() / "anerf_io_test.ckpt";
  const Checkpoint ck = sample_checkpoint();
  save_checkpoint(path, ck);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), serialize_checkpoint(ck));
  std::string bytes = serialize_checkpoint(ck);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), ContractError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), ContractError);
  bad = bytes;
  bad[12] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad), ContractError);
  fs::remove(path);
}
