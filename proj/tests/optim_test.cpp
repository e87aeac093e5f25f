#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include <regdrop/errors.hpp>
#include <regdrop/optim.hpp>

using namespace regdrop;

namespace {

// Straight transcription of the Adam update with decoupled decay.
struct HandAdamW {
  double lr, b1, b2, eps, wd;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(b1, t));
      const double vhat = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
  }
};

}  // namespace

TEST(AdamWTest, MatchesHandUpdateOverSeveralSteps) {
  for (double wd : {0.0, 0.1}) {
    AdamWConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.weight_decay = wd;
    Tensor p = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
    AdamW opt({p}, cfg);
    HandAdamW hand{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, wd, {}, {}};
    std::vector<double> ref{0.5, -1.0, 2.0};
    for (int s = 0; s < 5; ++s) {
      const std::vector<double> g{0.1 * (s + 1), -0.3, 0.05 * s};
      opt.zero_grad();
      std::copy(g.begin(), g.end(), p.mutable_grad().begin());
      opt.step();
      hand.step(ref, g);
      for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.data()[i], ref[i], 1e-14);
    }
    EXPECT_EQ(opt.state().step, 5);
  }
}

TEST(AdamWTest, FirstStepMovesByLearningRateTimesSign) {
  AdamWConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epsilon = 0.0;
  Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
  AdamW opt({p}, cfg);
  p.mutable_grad()[0] = 5.0;
  p.mutable_grad()[1] = -0.01;
  opt.step();
  EXPECT_NEAR(p.data()[0], -1e-3, 1e-15);
  EXPECT_NEAR(p.data()[1], 1e-3, 1e-15);
}

TEST(AdamWTest, NonFiniteGradientLeavesEverythingUntouched) {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor b = Tensor::from({1}, {3.0}, true);
  AdamW opt({a, b}, AdamWConfig{});
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt.step(), NumericError);
  EXPECT_EQ(a.data()[0], 1.0);
  EXPECT_EQ(b.data()[0], 3.0);
  EXPECT_EQ(opt.state().step, 0);
}

TEST(AdamWTest, FunctionalFormMatchesClass) {
  AdamWConfig cfg;
  cfg.learning_rate = 0.05;
  Tensor p = Tensor::from({2}, {1.0, -1.0}, true);
  AdamW opt({p}, cfg);
  std::vector<double> raw{1.0, -1.0};
  std::vector<std::vector<double>*> params{&raw};
  OptimizerState state;
  for (int s = 0; s < 3; ++s) {
    const std::vector<double> g{0.2, -0.7 + s};
    std::copy(g.begin(), g.end(), p.mutable_grad().begin());
    opt.step();
    adamw_step(params, {g}, state, cfg);
  }
  EXPECT_EQ(raw[0], p.data()[0]);
  EXPECT_EQ(raw[1], p.data()[1]);
}

TEST(AdamWTest, ZeroGradClearsAccumulatedGradients) {
  Tensor p = Tensor::from({2}, {1.0, 1.0}, true);
  AdamW opt({p}, AdamWConfig{});
  p.mutable_grad()[0] = 4.0;
  opt.zero_grad();
  EXPECT_EQ(p.grad(), (std::vector<double>{0.0, 0.0}));
}
