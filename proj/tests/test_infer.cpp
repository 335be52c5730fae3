#include <doctest.h>

#include <cmath>

#include "ctxbias/infer.hpp"
#include "test_helpers.hpp"

using namespace ctxbias;
using namespace ctxbias::testing;

namespace {

Tensor tape_logits(const PolicyModel& model, const EncodedExample& ex, float gamma,
                   int64_t fed) {
  Tape tape;
  TapeParams<float> P = insert_params(tape, model, TrainableSet::kDpoOnly);
  return tape.val(build_logits(tape, P, model.cfg, ex, gamma, fed));
}

PolicyModel perturbed_model(uint64_t seed) {
  PolicyModel model = PolicyModel::create(tiny_model_config(), seed);
  Rng pr(seed + 1);
  for (auto& [name, t] : model.params)
    if (name.rfind("sft.", 0) == 0 || name.rfind("dpo.", 0) == 0)
      for (auto& x : t.data) x += 0.05f * static_cast<float>(pr.next_gaussian());
  return model;
}

}  // namespace

TEST_CASE("inference engine reproduces the tape logits bit for bit") {
  PolicyModel model = perturbed_model(21);
  Rng rng(22);
  for (float gamma : {0.0f, 0.25f, 1.0f}) {
    EncodedExample ex = tiny_example(rng, 4, 3, 4, model.cfg);
    int64_t fed = static_cast<int64_t>(ex.target.size()) - 1;
    Tensor expect = tape_logits(model, ex, gamma, fed);
    InferModel infer(model, gamma);
    Tensor got = infer.forward_logits(ex, fed);
    REQUIRE(got.same_shape(expect));
    CHECK(bit_identical(got, expect));
  }
}

TEST_CASE("sequence_log_prob agrees between engines") {
  PolicyModel model = perturbed_model(31);
  Rng rng(32);
  EncodedExample ex = tiny_example(rng, 3, 2, 5, model.cfg);
  InferModel infer(model, 0.5f);
  double got = infer.sequence_log_prob(ex);

  Tape tape;
  TapeParams<float> P = insert_params(tape, model, TrainableSet::kDpoOnly);
  double expect =
      static_cast<double>(tape.val(build_sequence_log_prob(tape, P, model.cfg, ex, 0.5f))
                              .data[0]);
  // The engines share float forward values; only the final log-softmax
  // accumulation differs in width.
  CHECK(got == doctest::Approx(expect).epsilon(1e-5));
  CHECK(got < 0.0);
}

TEST_CASE("next_token_log_probs is the last-row log-softmax of the logits") {
  PolicyModel model = perturbed_model(41);
  Rng rng(42);
  EncodedExample ex = tiny_example(rng, 3, 2, 3, model.cfg);
  std::vector<int> partial = {ex.target[0]};
  InferModel infer(model, 0.0f);
  std::vector<double> lp = infer.next_token_log_probs(ex, partial);
  REQUIRE(lp.size() == static_cast<size_t>(model.cfg.vocab_size));
  double sum = 0.0;
  for (double v : lp) sum += std::exp(v);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  EncodedExample fed = ex;
  fed.target = partial;
  Tensor logits = infer.forward_logits(fed, 1);
  int64_t row = logits.rows() - 1;
  int best_logit = 0, best_lp = 0;
  for (int j = 1; j < model.cfg.vocab_size; ++j) {
    if (logits.at(row, j) > logits.at(row, best_logit)) best_logit = j;
    if (lp[static_cast<size_t>(j)] > lp[static_cast<size_t>(best_lp)]) best_lp = j;
  }
  CHECK(best_logit == best_lp);
}

TEST_CASE("sequence_log_prob requires a terminal EOS") {
  PolicyModel model = PolicyModel::create(tiny_model_config(), 5);
  Rng rng(6);
  EncodedExample ex = tiny_example(rng, 3, 2, 3, model.cfg);
  ex.target.pop_back();
  InferModel infer(model, 0.0f);
  CHECK_THROWS_WITH_AS(infer.sequence_log_prob(ex), doctest::Contains("EOS"),
                       std::runtime_error);
}

TEST_CASE("overlong inputs are rejected") {
  ModelConfig cfg = tiny_model_config();
  PolicyModel model = PolicyModel::create(cfg, 7);
  Rng rng(8);
  EncodedExample ex = tiny_example(rng, cfg.max_seq_len, 4, 4, cfg);
  InferModel infer(model, 0.0f);
  CHECK_THROWS_AS(infer.sequence_log_prob(ex), std::runtime_error);
}
