#include <doctest.h>

#include <cmath>

#include "layeragg/finite_diff.hpp"
#include "layeragg/heads.hpp"
#include "support.hpp"

using namespace layeragg;

namespace {

HeadParams random_head(HeadKind kind, Index in, Index classes, Index hidden, std::uint64_t seed) {
  Prng rng(seed);
  HeadParams h = init_head({kind, in, classes, hidden}, rng);
  for (auto& t : h.trainable) {
    for (Index i = 0; i < t.value.size(); ++i) t.value[i] += 0.1 * rng.normal();
  }
  return h;
}

TimeFeatures random_features(Index frames, Index dim, std::uint64_t seed) {
  Prng rng(seed);
  return {rng.normal_tensor({frames, dim})};
}

}  // namespace

TEST_CASE("head names round trip") {
  CHECK(parse_head_kind(head_kind_name(HeadKind::Frame)) == HeadKind::Frame);
  CHECK(parse_head_kind("utterance") == HeadKind::Utterance);
  CHECK_THROWS_AS(parse_head_kind("sequence"), ConfigError);
}

TEST_CASE("param counts") {
  CHECK(param_count(HeadSpec{HeadKind::Utterance, 8, 2, 0}) == 18);
  CHECK(param_count(HeadSpec{HeadKind::Frame, 8, 3, 60}) == 8 * 60 + 60 + 60 * 3 + 3);
  Prng rng(0);
  for (Index hidden : {0, 5}) {
    const HeadParams h = init_head({HeadKind::Frame, 7, 4, hidden}, rng);
    CHECK(h.trainable_count() == param_count(h.spec));
  }
  CHECK_THROWS_AS(validate(HeadSpec{HeadKind::Frame, 8, 1, 0}), ConfigError);
  CHECK_THROWS_AS(validate(HeadSpec{HeadKind::Frame, 0, 2, 0}), ConfigError);
}

TEST_CASE("zero weights emit the bias") {
  Prng rng(1);
  HeadParams h = init_head({HeadKind::Frame, 4, 3, 0}, rng);
  h.trainable[0].value.set_zero();
  h.trainable[1].value = Tensord({3}, {0.5, -1, 2});
  const Tensord logits = head_forward(h, random_features(5, 4, 2));
  CHECK(logits.shape() == Shape{5, 3});
  for (Index t = 0; t < 5; ++t) {
    for (Index c = 0; c < 3; ++c) CHECK(logits(t, c) == h.trainable[1].value[c]);
  }
}

TEST_CASE("utterance head on one frame equals the frame head") {
  HeadParams frame = random_head(HeadKind::Frame, 6, 3, 0, 3);
  HeadParams utt = frame;
  utt.spec.kind = HeadKind::Utterance;
  const TimeFeatures z = random_features(1, 6, 4);
  CHECK(head_forward(frame, z) == head_forward(utt, z));
}

TEST_CASE("utterance head mean-pools over frames") {
  const HeadParams utt = random_head(HeadKind::Utterance, 3, 2, 0, 5);
  const TimeFeatures z = random_features(4, 3, 6);
  TimeFeatures mean{Tensord({1, 3})};
  mean.values.matrix() = z.values.matrix().colwise().mean();
  HeadParams frame = utt;
  frame.spec.kind = HeadKind::Frame;
  const Tensord a = head_forward(utt, z), b = head_forward(frame, mean);
  CHECK(a.shape() == Shape{1, 2});
  CHECK(testing::max_abs_diff(a, b) <= 1e-15);
}

TEST_CASE("head gradients match finite differences") {
  for (HeadKind kind : {HeadKind::Frame, HeadKind::Utterance}) {
    for (Index hidden : {0, 6}) {
      HeadParams h = random_head(kind, 5, 3, hidden, 7);
      TimeFeatures z = random_features(4, 5, 8);
      const std::vector<int> labels = kind == HeadKind::Frame ? std::vector<int>{0, 2, 1, 1}
                                                               : std::vector<int>{2};
      auto loss = [&](const Tensord&) { return ce_loss_grad(head_forward(h, z), labels).loss; };
      HeadCache cache;
      const LossGrad lg = ce_loss_grad(head_forward(h, z, &cache), labels);
      const HeadGrads g = head_backward(h, cache, lg.grad);
      REQUIRE(g.params.size() == h.trainable.size());
      for (std::size_t i = 0; i < g.params.size(); ++i) {
        CHECK(max_relative_error(g.params[i], finite_diff_grad(loss, h.trainable[i].value)) <= 1e-4);
      }
      CHECK(max_relative_error(g.input, finite_diff_grad(loss, z.values)) <= 1e-4);
    }
  }
}

TEST_CASE("cross-entropy values") {
  const std::vector<int> one{1};
  CHECK(ce_loss_grad(Tensord({1, 4}), one).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(ce_loss_grad(Tensord({1, 3}, {0, 50, 0}), one).loss < 1e-20);
  CHECK(ce_loss_grad(Tensord({1, 3}, {0, 800, 0}), one).loss == 0.0);
  CHECK(std::isfinite(ce_loss_grad(Tensord({1, 3}, {800, 0, 0}), one).loss));
  CHECK(ce_loss_grad(Tensord({1, 3}, {800, 0, 0}), one).loss == doctest::Approx(800.0));
}

TEST_CASE("cross-entropy averages over positions and its gradient rows sum to zero") {
  Prng rng(9);
  Tensord logits = rng.normal_tensor({6, 4}, 3.0);
  const std::vector<int> labels{0, 3, 2, 2, 1, 0};
  const LossGrad lg = ce_loss_grad(logits, labels);
  CHECK(lg.loss >= 0);
  double manual = 0;
  for (Index r = 0; r < 6; ++r) {
    const auto row = logits.matrix().row(r);
    const double lse = std::log(row.array().exp().sum());
    manual += lse - row[labels[static_cast<std::size_t>(r)]];
  }
  CHECK(lg.loss == doctest::Approx(manual / 6.0).epsilon(1e-13));
  for (Index r = 0; r < 6; ++r) CHECK(std::abs(lg.grad.matrix().row(r).sum()) <= 1e-12);
  auto f = [&](const Tensord& x) { return ce_loss_grad(x, labels).loss; };
  CHECK(max_relative_error(lg.grad, finite_diff_grad(f, logits)) <= 1e-4);
}

TEST_CASE("labels outside [0, C) are data errors") {
  const std::vector<int> bad{3};
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(ce_loss_grad(Tensord({1, 3}), bad), DataError);
  CHECK_THROWS_AS(ce_loss_grad(Tensord({1, 3}), negative), DataError);
  const std::vector<int> too_many{0, 1};
  CHECK_THROWS_AS(ce_loss_grad(Tensord({1, 3}), too_many), DimensionError);
}

TEST_CASE("accuracy and tie-breaking") {
  const Tensord logits({3, 2}, {2, 1, 0, 5, 1, 1});
  const std::vector<int> right{0, 1, 0};
  const std::vector<int> wrong{1, 0, 1};
  CHECK(accuracy(logits, right) == 1.0);
  CHECK(accuracy(logits, wrong) == 0.0);
  CHECK(argmax_row(logits, 2) == 0);
}

TEST_CASE("positive scaling never changes accuracy") {
  Prng rng(10);
  Tensord logits = rng.normal_tensor({50, 5});
  std::vector<int> labels(50);
  for (auto& y : labels) y = static_cast<int>(rng.below(5));
  const double base = accuracy(logits, labels);
  for (double s : {0.01, 0.5, 3.0, 1e6}) {
    Tensord scaled = logits;
    scaled.values() *= s;
    CHECK(accuracy(scaled, labels) == base);
  }
}

TEST_CASE("random binary logits score near one half") {
  Prng rng(11);
  const Index n = 10000;
  const Tensord logits = rng.normal_tensor({n, 2});
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = static_cast<int>(rng.below(2));
  CHECK(std::abs(accuracy(logits, labels) - 0.5) <= 0.02);
}

TEST_CASE("head input width must match") {
  const HeadParams h = random_head(HeadKind::Frame, 4, 2, 0, 1);
  CHECK_THROWS_AS(head_forward(h, random_features(3, 5, 1)), DimensionError);
}
