#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>

#include "fedstain/error.hpp"
#include "fedstain/losses.hpp"
#include "fedstain/nn.hpp"
#include "test_support.hpp"

using namespace fedstain;
using namespace fedstain::testing;

TEST_CASE("zero classifier gives uniform probabilities") {
  const Model model(ModelConfig{});
  Rng rng(1);
  ModelParams p = model.init_params(rng);
  std::fill(p.classifier.begin(), p.classifier.end(), 0.0);
  const auto batch = toy_batch(rng, 4, 32);
  const auto cache = model.forward(p, batch);
  for (const auto& pred : to_predictions(cache.logits, cache.probs)) {
    CHECK(pred.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(pred.probs[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("forward is deterministic and rows follow inputs") {
  const Model model(ModelConfig{});
  Rng rng(2);
  const ModelParams p = model.init_params(rng);
  auto batch = toy_batch(rng, 3, 32);
  batch.push_back(batch[0]);
  const auto a = model.forward(p, batch);
  const auto b = model.forward(p, batch);
  CHECK(a.embeddings == b.embeddings);
  CHECK(a.logits == b.logits);
  CHECK(a.embeddings.col(0) == a.embeddings.col(3));
  CHECK(a.probs.col(0) == a.probs.col(3));
  for (Eigen::Index j = 0; j < a.probs.cols(); ++j) {
    CHECK(std::fabs(a.probs.col(j).sum() - 1.0) < 1e-9);
    CHECK(a.probs.col(j).minCoeff() > 0.0);
  }
  const auto emb = to_embeddings(a.embeddings);
  CHECK(emb.size() == 4);
  CHECK(emb[0].l2_norm == doctest::Approx(a.embeddings.col(0).norm()));
}

TEST_CASE("forward rejects mismatched inputs") {
  const Model model(ModelConfig{});
  Rng rng(3);
  const ModelParams p = model.init_params(rng);
  const auto wrong = toy_batch(rng, 2, 16);
  CHECK_THROWS_AS(model.forward(p, wrong), ShapeMismatch);
  ModelParams short_params = p;
  short_params.encoder.pop_back();
  const auto ok = toy_batch(rng, 2, 32);
  CHECK_THROWS_AS(model.forward(short_params, ok), ShapeMismatch);
}

TEST_CASE("backward matches finite differences on every parameter") {
  const Model model(toy_model_config());
  Rng rng(4);
  const ModelParams p = model.init_params(rng);
  std::vector<int> labels;
  const auto batch = toy_batch(rng, 8, 16, &labels);
  const Matrix probe = Matrix::Random(6, 8);

  auto loss = [&](const ModelParams& q, Matrix* ge, Matrix* gl) {
    const auto c = model.forward(q, batch);
    const double ce = cross_entropy(c.logits, labels, gl);
    if (ge) *ge = probe;
    return ce + (probe.array() * c.embeddings.array()).sum();
  };
  Matrix ge, gl;
  loss(p, &ge, &gl);
  const Gradients g = model.backward(p, model.forward(p, batch), ge, gl);
  const auto check = finite_difference_check(
      p, g, [&](const ModelParams& q) { return loss(q, nullptr, nullptr); }, 1e-4,
      [&](const ModelParams& q) { return relu_pattern(model, q, batch); });
  CHECK(check.checked == p.size());
  CHECK(check.worst < 1e-3);
}

TEST_CASE("results do not depend on parameter buffer addresses") {
  const Model model(toy_model_config());
  Rng rng(6);
  const ModelParams p = model.init_params(rng);
  const auto batch = toy_batch(rng, 5, 16);
  const auto ref = model.forward(p, batch);
  const Matrix up_e = Matrix::Constant(ref.embeddings.rows(), ref.embeddings.cols(), 0.3);
  const Matrix up_l = Matrix::Constant(ref.logits.rows(), ref.logits.cols(), -0.7);
  const Gradients ref_g = model.backward(p, ref, up_e, up_l);

  std::vector<std::vector<double>> spacers;
  std::vector<ModelParams> copies;
  std::set<std::uintptr_t> residues;
  for (std::size_t k = 1; k <= 12; ++k) {
    spacers.emplace_back(k, 0.0);
    copies.push_back(p);
    residues.insert(reinterpret_cast<std::uintptr_t>(copies.back().encoder.data()) % 64);
  }
  REQUIRE(residues.size() > 1);
  for (const auto& q : copies) {
    const auto c = model.forward(q, batch);
    CHECK(c.logits == ref.logits);
    CHECK(c.embeddings == ref.embeddings);
    const Gradients g = model.backward(q, c, up_e, up_l);
    CHECK(g.encoder == ref_g.encoder);
    CHECK(g.classifier == ref_g.classifier);
  }
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
  const Model model(toy_model_config());
  Rng rng(5);
  const ModelParams p = model.init_params(rng);
  const auto batch = toy_batch(rng, 4, 16);
  const auto c = model.forward(p, batch);
  const Gradients g = model.backward(p, c, Matrix(), Matrix());
  for (double v : g.encoder) CHECK(v == 0.0);
  for (double v : g.classifier) CHECK(v == 0.0);
}

TEST_CASE("learning-rate schedules") {
  ModelParams p;
  p.encoder = {0.0};
  auto st = make_optimizer(p, 1e-4, 2.5e-6, LrSchedule::Linear, 100);
  CHECK(lr_at(st, 0, 100) == 1e-4);
  CHECK(lr_at(st, 100, 100) == doctest::Approx(2.5e-6).epsilon(1e-15));
  CHECK(lr_at(st, 50, 100) == doctest::Approx((1e-4 + 2.5e-6) / 2));
  st.schedule = LrSchedule::Cosine;
  CHECK(lr_at(st, 0, 100) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(st, 100, 100) == doctest::Approx(2.5e-6).epsilon(1e-15));
  CHECK(lr_at(st, 50, 100) == doctest::Approx((1e-4 + 2.5e-6) / 2));
  CHECK(parse_lr_schedule("cosine") == LrSchedule::Cosine);
  CHECK_THROWS_AS(parse_lr_schedule("step"), InvalidArgument);
}

TEST_CASE("single Adam step against a hand-rolled reference") {
  ModelParams p;
  p.encoder = {0.5};
  p.classifier = {-0.25};
  auto st = make_optimizer(p, 1e-3, 1e-3, LrSchedule::Linear, 10);
  Gradients g{{1.0}, {-3.0}};
  const double lr = adam_step(st, p, g);
  CHECK(lr == 1e-3);

  auto reference = [](double theta, double grad) {
    const double m = 0.1 * grad, v = 0.001 * grad * grad;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    return theta - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
  };
  CHECK(p.encoder[0] == doctest::Approx(reference(0.5, 1.0)).epsilon(1e-14));
  CHECK(p.classifier[0] == doctest::Approx(reference(-0.25, -3.0)).epsilon(1e-14));
  CHECK(0.5 - p.encoder[0] == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(st.step_count == 1);
}

TEST_CASE("zero gradients leave parameters and decay moments") {
  ModelParams p;
  p.encoder = {1.0, 2.0};
  auto st = make_optimizer(p, 1e-2, 1e-2, LrSchedule::Linear, 10);
  adam_step(st, p, Gradients{{1.0, 1.0}, {}});
  const ModelParams after = p;
  const auto m = st.first_moment;
  adam_step(st, p, Gradients{{0.0, 0.0}, {}});
  CHECK(st.first_moment[0] == doctest::Approx(0.9 * m[0]));
  CHECK(p.encoder[0] < after.encoder[0]);  // momentum still moves the parameter
  ModelParams q;
  q.encoder = {1.0};
  auto fresh = make_optimizer(q, 1e-2, 1e-2, LrSchedule::Linear, 10);
  adam_step(fresh, q, Gradients{{0.0}, {}});
  CHECK(q.encoder[0] == 1.0);
  CHECK_THROWS_AS(adam_step(fresh, q, Gradients{{0.0, 0.0}, {}}), ShapeMismatch);
}

TEST_CASE("training trajectory is deterministic") {
  const Model model(toy_model_config());
  auto run = [&] {
    Rng rng(6);
    ModelParams p = model.init_params(rng);
    std::vector<int> labels;
    const auto batch = toy_batch(rng, 8, 16, &labels);
    auto st = make_optimizer(p, 1e-2, 1e-3, LrSchedule::Linear, 50);
    std::vector<double> losses;
    for (int s = 0; s < 50; ++s) {
      const auto c = model.forward(p, batch);
      Matrix gl;
      losses.push_back(cross_entropy(c.logits, labels, &gl));
      adam_step(st, p, model.backward(p, c, Matrix(), gl));
      REQUIRE(p.all_finite());
    }
    return losses;
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(a.back() < a.front());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const Model model(ModelConfig{});
  Rng rng(7);
  const ModelParams p = model.init_params(rng);
  const auto bytes = encode_params(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "FSTNCKPT");
  CHECK(bytes.size() == 8 + 4 + 8 + 8 + 8 + 8 * p.size());
  CHECK(decode_params(bytes, model.layout()) == p);

  const auto path = std::filesystem::temp_directory_path() / "fedstain_test.ckpt";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path, model.layout()) == p);
  std::filesystem::remove(path);

  const Model other(toy_model_config());
  CHECK_THROWS_AS(decode_params(bytes, other.layout()), ShapeMismatch);
  auto corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(decode_params(corrupt, model.layout()), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(decode_params(truncated, model.layout()), FormatError);
}

TEST_CASE("default model stays near the target size") {
  const Model model(ModelConfig{});
  Rng rng(8);
  const auto p = model.init_params(rng);
  CHECK(p.size() > 10000);
  CHECK(p.size() < 100000);
  CHECK(model.zeros().size() == p.size());
  ModelConfig bad;
  bad.input_offset = {0.0};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
