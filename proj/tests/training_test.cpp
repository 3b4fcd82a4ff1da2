#include <gtest/gtest.h>

#include <anerf/checkpoint.hpp>
#include <anerf/gradient_suite.hpp>
#include <anerf/training.hpp>
#include <cmath>
#include <filesystem>

#include "test_util.hpp"

using namespace anerf;
using anerf::testing::max_abs_diff;
using anerf::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    DatasetManifest m;
    m.seed = 2;
    m.train_actors = 2;
    m.test_actors = 1;
    m.frames = 8;
    m.eval_views = 2;
    m.width = 16;
    m.height = 16;
    m.bones = 2;
    root_ = fs::temp_directory_path() / "anerf_training_test";
    fs::remove_all(root_);
    make_dataset(m, root_);
    data_ = new Dataset(load_dataset(root_));
  }
  static void TearDownTestSuite() {
    delete data_;
    fs::remove_all(root_);
  }

  static ModelConfig model_config(int k = 2) {
    auto c = toy_model_config();
    c.support_frames = k;
    return c;
  }
  static TrainConfig train_config() {
    TrainConfig t;
    t.patch_size = 8;
    t.patches_per_step = 1;
    t.steps = 6;
    t.samples = 8;
    t.adam.lr = 1e-2;
    return t;
  }
  static const ActorData& test_actor() { return data_->actors[data_->actors_with_split("test")[0]]; }

  static inline fs::path root_;
  static inline Dataset* data_ = nullptr;
};

std::map<std::string, std::vector<real>> group_params(const SceneModel& m, const std::string& group) {
  std::map<std::string, std::vector<real>> out;
  for (const auto& [k, v] : m.parameters())
    if (k.rfind(group + "/", 0) == 0) out[k] = v;
  return out;
}

Tensor add_constant(const Tensor& t, real c) {
  Tensor out = Tensor::from(t.shape(), std::vector<real>(t.values().begin(), t.values().end()));
  for (auto& v : out.mutable_values()) v += c;
  return out;
}

}  // namespace

TEST(Loss, IdenticalPatchesGiveZero) {
  Rng rng(1);
  const Tensor p = random_tensor({8, 8, 3}, rng, 0, 1);
  const auto l = loss_step({p}, {p}, nullptr, {}, {1.0, 0.1, 0.0});
  EXPECT_EQ(l.mse, 0.0);
  EXPECT_EQ(l.perc, 0.0);
  EXPECT_EQ(l.total.item(), 0.0);
}

TEST(Loss, MseMatchesOracleOverPatches) {
  Rng rng(2);
  const std::vector<Tensor> pred = {random_tensor({8, 8, 3}, rng, 0, 1), random_tensor({8, 8, 3}, rng, 0, 1)};
  const std::vector<Tensor> gt = {random_tensor({8, 8, 3}, rng, 0, 1), random_tensor({8, 8, 3}, rng, 0, 1)};
  double s = 0;
  for (int k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 192; ++i) s += std::pow(pred[k].values()[i] - gt[k].values()[i], 2);
  const auto l = loss_step(pred, gt, nullptr, {}, {1.0, 0.0, 0.0});
  EXPECT_NEAR(l.mse, s / 384, 1e-14);
  EXPECT_NEAR(l.total.item(), s / 384, 1e-14);
}

TEST(Loss, PerceptualIsSymmetricAndLinearInOffset) {
  Rng rng(3);
  const Tensor a = random_tensor({8, 8, 3}, rng, 0, 1), b = random_tensor({8, 8, 3}, rng, 0, 1);
  EXPECT_NEAR(perceptual_proxy(a, b).item(), perceptual_proxy(b, a).item(), 1e-14);
  // A constant offset leaves the gradient terms at zero and shifts both pooled terms by |c|.
  for (real c : {0.05, -0.2, 0.3}) EXPECT_NEAR(perceptual_proxy(add_constant(a, c), a).item(), 2 * std::abs(c), 1e-12);
  EXPECT_THROW(perceptual_proxy(random_tensor({6, 6, 3}, rng), random_tensor({6, 6, 3}, rng)), std::exception);
}

TEST(Loss, SkinningRegularizerZeroAtPriorAndMatchesOracle) {
  const SceneModel m(toy_model_config(), 1);
  EXPECT_LT(skinning_regularizer(m.skinning(), m.prior()).item(), 1e-6);
  SceneModel n(toy_model_config(), 1);
  Rng rng(4);
  for (auto& v : n.skinning().logits().mutable_values()) v = rng.uniform(-2, 2);
  const Tensor w = softmax(n.skinning().logits(), 3);
  const auto voxels = w.numel() / w.dim(3);
  double s = 0;
  for (std::int64_t i = 0; i < w.numel(); ++i) s += std::abs(w.values()[i] - n.prior().values()[i]);
  EXPECT_NEAR(skinning_regularizer(n.skinning(), n.prior()).item(), s / voxels, 1e-12);
}

TEST(Loss, DoublingWeightsDoublesLoss) {
  Rng rng(5);
  const SceneModel m(toy_model_config(), 1);
  const std::vector<Tensor> pred = {random_tensor({8, 8, 3}, rng, 0, 1)};
  const std::vector<Tensor> gt = {random_tensor({8, 8, 3}, rng, 0, 1)};
  const LossWeights w{1.0, 0.1, 0.01};
  const LossWeights w2{2.0, 0.2, 0.02};
  const double a = loss_step(pred, gt, &m.skinning(), m.prior(), w).total.item();
  const double b = loss_step(pred, gt, &m.skinning(), m.prior(), w2).total.item();
  EXPECT_NEAR(b, 2 * a, 1e-14);
  EXPECT_THROW((LossWeights{-1, 0, 0}.validate()), ContractError);
  EXPECT_THROW((LossWeights{0, 0, 0}.validate()), ContractError);
}

TEST(Loss, LambdaWDropsAtHalfway) {
  TrainConfig t;
  t.steps = 10;
  t.weights.w = 0.01;
  for (int s = 0; s < 5; ++s) EXPECT_EQ(lambda_w_at(t, s), 0.01);
  for (int s = 5; s < 10; ++s) EXPECT_EQ(lambda_w_at(t, s), 0.0);
}

TEST(Sampling, PatchesOverlapMaskBox) {
  Image mask(32, 32, 1);
  for (int i = 20; i < 26; ++i)
    for (int j = 3; j < 9; ++j) mask.at(i, j, 0) = 1;
  Rng rng(6);
  for (int n = 0; n < 200; ++n) {
    const auto [r, c] = sample_patch(mask, 8, rng);
    EXPECT_GE(r, 0);
    EXPECT_GE(c, 0);
    EXPECT_LE(r + 8, 32);
    EXPECT_LE(c + 8, 32);
    EXPECT_TRUE(r < 26 && r + 8 > 20 && c < 9 && c + 8 > 3) << r << "," << c;
  }
  EXPECT_THROW(sample_patch(mask, 40, rng), ContractError);
}

TEST_F(Training, ShotAndSupportSelection) {
  const auto& actor = test_actor();
  const auto shots = shot_frames(actor, 4);
  ASSERT_EQ(shots.size(), 4u);
  for (int f : shots) EXPECT_EQ(actor.frames[f].tag, "train");
  EXPECT_EQ(shots, (std::vector<int>{0, 2, 4, 6}));
  EXPECT_EQ(fixed_support(shots, 2), (std::vector<int>{2, 6}));
  EXPECT_THROW(shot_frames(actor, 9), ContractError);
  EXPECT_THROW(FewShotConfig{1}.validate(2), ContractError);
  EXPECT_NO_THROW(FewShotConfig{2}.validate(2));
}

TEST_F(Training, PretrainIsDeterministic) {
  auto a = make_state(model_config(), train_config().adam, 4);
  auto b = make_state(model_config(), train_config().adam, 4);
  pretrain(a, *data_, train_config());
  pretrain(b, *data_, train_config());
  EXPECT_EQ(a.step, 6);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
  EXPECT_NE(a.model.parameters(), make_state(model_config(), train_config().adam, 4).model.parameters());
}

TEST_F(Training, PretrainResumeMatchesUninterrupted) {
  auto straight = make_state(model_config(), train_config().adam, 5);
  pretrain(straight, *data_, train_config());

  Checkpoint ck;
  ck.config.model = model_config();
  ck.config.train = train_config();
  ck.stage = "pretrain";
  ck.state = make_state(model_config(), train_config().adam, 5);
  pretrain(ck.state, *data_, train_config(), 3);
  EXPECT_EQ(ck.state.step, 3);
  Checkpoint resumed = deserialize_checkpoint(serialize_checkpoint(ck));
  pretrain(resumed.state, *data_, train_config());
  EXPECT_EQ(resumed.state.step, 6);
  EXPECT_EQ(resumed.state.model.parameters(), straight.model.parameters());
  EXPECT_EQ(resumed.state.rng.state(), straight.rng.state());
}

TEST_F(Training, FinetuneFreezesEncoderAndSkinning) {
  auto st = make_state(model_config(), train_config().adam, 6);
  const auto before = st.model.parameters();
  FewShotConfig fs{4, 5};
  finetune(st, test_actor(), fs, train_config());
  EXPECT_EQ(st.support, (std::vector<int>{2, 6}));
  const auto after = st.model.parameters();
  for (const auto& [k, v] : before) {
    if (k.rfind("encoder/", 0) == 0 || k.rfind("skinning/", 0) == 0) {
      EXPECT_EQ(after.at(k), v) << k;
    }
  }
  std::map<std::string, std::vector<real>> rendering_before;
  for (const auto& [k, v] : before)
    if (k.rfind("rendering/", 0) == 0) rendering_before[k] = v;
  EXPECT_NE(group_params(st.model, "rendering"), rendering_before);
}

TEST_F(Training, FinetuneResumeMatchesUninterrupted) {
  const FewShotConfig fs{4, 6};
  auto straight = make_state(model_config(), train_config().adam, 7);
  finetune(straight, test_actor(), fs, train_config());

  Checkpoint ck;
  ck.config.model = model_config();
  ck.config.train = train_config();
  ck.stage = "finetune";
  ck.state = make_state(model_config(), train_config().adam, 7);
  finetune(ck.state, test_actor(), fs, train_config(), 2);
  Checkpoint resumed = deserialize_checkpoint(serialize_checkpoint(ck));
  finetune(resumed.state, test_actor(), fs, train_config());
  EXPECT_EQ(resumed.state.model.parameters(), straight.model.parameters());
}

TEST_F(Training, FinetuneRejectsMoreSupportThanShots) {
  auto st = make_state(model_config(3), train_config().adam, 8);
  EXPECT_THROW(finetune(st, test_actor(), FewShotConfig{2, 3}, train_config()), ContractError);
}

TEST_F(Training, AdamFirstStepInvariantToLossScale) {
  auto a = make_state(model_config(), train_config().adam, 9);
  auto b = make_state(model_config(), train_config().adam, 9);
  const auto start = a.model.parameters();
  auto t1 = train_config();
  t1.steps = 1;
  auto t2 = t1;
  t2.weights = {2.0, 0.2, 0.02};
  pretrain(a, *data_, t1);
  pretrain(b, *data_, t2);
  // Step one moves each weight by lr * g / (|g| + eps). Doubling g keeps the
  // sign, never shrinks the step, and changes it by at most (3 - 2 sqrt 2) lr.
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  const double lr = t1.adam.lr;
  double worst = 0;
  std::size_t moved = 0;
  for (const auto& [k, v] : pa) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double da = v[i] - start.at(k)[i], db = pb.at(k)[i] - start.at(k)[i];
      worst = std::max(worst, std::abs(da - db));
      if (da == 0) continue;
      ++moved;
      EXPECT_GT(da * db, 0.0) << k << "[" << i << "]";
      EXPECT_LE(std::abs(da), std::abs(db) + 1e-15);
      EXPECT_LE(std::abs(db), lr * (1 + 1e-12));
    }
  }
  EXPECT_GT(moved, 100u);
  EXPECT_LE(worst, (3 - 2 * std::sqrt(2.0)) * lr + 1e-12);
}

TEST_F(Training, NonFiniteParameterFailsWithStep) {
  auto st = make_state(model_config(), train_config().adam, 10);
  pretrain(st, *data_, train_config(), 2);
  auto params = st.model.parameters();
  params.begin()->second[0] = std::nan("");
  for (auto& [k, v] : params)
    if (k.rfind("rendering/", 0) == 0) std::fill(v.begin(), v.end(), std::nan(""));
  st.model.load_parameters(params);
  try {
    pretrain(st, *data_, train_config());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST_F(Training, FewShotFitReducesLoss) {
  auto st = make_state(model_config(), train_config().adam, 11);
  std::vector<double> losses;
  auto tc = train_config();
  tc.patch_size = 16;
  finetune(st, test_actor(), FewShotConfig{4, 60}, tc, -1,
           [&](const StepRecord& r, const TrainState&) { losses.push_back(r.mse); });
  ASSERT_EQ(losses.size(), 60u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[50 + i];
  }
  EXPECT_LT(tail, 0.7 * head);
}
