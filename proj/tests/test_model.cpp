#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "mixce/model.hpp"
#include "mixce/tape.hpp"

using mixce::Checkpoint;
using mixce::Mode;
using mixce::ModelScorer;
using mixce::ModelSequenceScore;
using mixce::NeuralBigramLM;
using mixce::NodeId;
using mixce::SeedStream;
using mixce::Tape;
using mixce::TapeModel;
using mixce::Tensor;

TEST_CASE("init shapes, bounds, and determinism") {
  const NeuralBigramLM m = testutil::make_model(7, 5, 11);
  CHECK(m.vocab_size() == 7);
  CHECK(m.hidden_dim() == 5);
  CHECK(m.eos_id() == 6);
  CHECK(m.E.rows() == 8);  // one extra row conditions the first token
  CHECK(m.E.cols() == 5);
  CHECK(m.W1.rows() == 5);
  CHECK(m.W1.cols() == 5);
  CHECK(m.b1.size() == 5);
  CHECK(m.W2.rows() == 5);
  CHECK(m.W2.cols() == 7);
  CHECK(m.b2.size() == 7);
  CHECK(m.core_param_count() == 7 * 5 + 5 * 5 + 5 + 5 * 7 + 7);

  const double bound = 1.0 / std::sqrt(5.0);
  for (const Tensor* p : m.parameters()) {
    for (double x : p->values) {
      CHECK(x >= -bound);
      CHECK(x <= bound);
    }
  }

  const NeuralBigramLM m2 = testutil::make_model(7, 5, 11);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(m.parameters()[i]->values == m2.parameters()[i]->values);
  }

  CHECK_THROWS_AS(testutil::make_model(1, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(testutil::make_model(4, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(
      NeuralBigramLM::init({4, 4, 1.0}, SeedStream(1)),
      std::invalid_argument);
}

TEST_CASE("conditionals are distributions and validate their input") {
  const NeuralBigramLM m = testutil::make_model(6, 4, 3);
  std::vector<double> prev(6, 0.0);
  prev[2] = 1.0;
  const std::vector<double> dist = m.next_token_dist(prev, Mode::kEval);
  CHECK(dist.size() == 6);
  double total = 0.0;
  for (double p : dist) {
    CHECK(p > 0.0);
    total += p;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  // Relaxed (interpolated) conditioning is accepted too.
  std::vector<double> soft(6, 1.0 / 6.0);
  const std::vector<double> soft_dist = m.next_token_dist(soft, Mode::kEval);
  total = 0.0;
  for (double p : soft_dist) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<double> start = m.start_dist(Mode::kEval);
  CHECK(start.size() == 6);

  CHECK_THROWS_AS(m.next_token_dist(std::vector<double>(5, 0.2), Mode::kEval),
                  std::invalid_argument);
  std::vector<double> unnormalized(6, 0.3);
  CHECK_THROWS_AS(m.next_token_dist(unnormalized, Mode::kEval),
                  std::invalid_argument);
  const NeuralBigramLM dropped = testutil::make_model(6, 4, 3, 0.2);
  CHECK_THROWS_AS(dropped.next_token_dist(prev, Mode::kTrain, nullptr),
                  std::invalid_argument);  // train mode needs a stream
}

TEST_CASE("train-mode dropout perturbs the eval distribution") {
  const NeuralBigramLM m = testutil::make_model(6, 16, 5, 0.5);
  std::vector<double> prev(6, 0.0);
  prev[0] = 1.0;
  const std::vector<double> eval_dist = m.next_token_dist(prev, Mode::kEval);
  SeedStream dropout(9);
  const std::vector<double> train_dist =
      m.next_token_dist(prev, Mode::kTrain, &dropout);
  double diff = 0.0, total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    diff += std::abs(eval_dist[i] - train_dist[i]);
    total += train_dist[i];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(diff > 1e-9);
}

TEST_CASE("extracted transition matrix reproduces the conditionals") {
  const NeuralBigramLM m = testutil::make_model(5, 4, 7);
  const Tensor t = m.extract_transition_matrix();
  CHECK(t.rows() == 5);
  CHECK(t.cols() == 5);
  std::vector<double> prev(5, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    prev[i] = 1.0;
    const std::vector<double> row = m.next_token_dist(prev, Mode::kEval);
    prev[i] = 0.0;
    for (std::size_t j = 0; j < 5; ++j) CHECK(t.at(i, j) == row[j]);
  }
}

TEST_CASE("sequence scoring matches the frozen-table scorer exactly") {
  const NeuralBigramLM m = testutil::make_model(6, 8, 13);
  const ModelScorer scorer(m);
  const mixce::BigramWorld w = testutil::make_world(6, 0.0, 17);
  for (const mixce::TokenSequence& seq :
       testutil::sample_batch(w, 50, 10, 19)) {
    const ModelSequenceScore a = m.seq_log_prob(seq);
    const ModelSequenceScore b = scorer.seq_log_prob(seq);
    CHECK(a.log_prob == b.log_prob);
    CHECK(a.per_step_prob == b.per_step_prob);
    CHECK(a.per_step_prob.size() == seq.tokens.size());
    // Sum of logs equals the total.
    double total = 0.0;
    for (double q : a.per_step_prob) total += std::log(q);
    CHECK(a.log_prob == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("tape forward pass agrees with the plain conditionals") {
  const NeuralBigramLM m = testutil::make_model(5, 4, 23);
  Tape tape;
  const TapeModel tm = TapeModel::attach(tape, m);

  // Rows: one-hot token 2, one-hot token 4, and the BOS flag column.
  Tensor rows = Tensor::zeros(3, 6);
  rows.at(0, 2) = 1.0;
  rows.at(1, 4) = 1.0;
  rows.at(2, 5) = 1.0;
  const NodeId out = tm.forward_rows(tape, tape.constant(rows), Mode::kEval);
  const Tensor& dist = tape.value(out);

  std::vector<double> prev(5, 0.0);
  prev[2] = 1.0;
  const std::vector<double> row0 = m.next_token_dist(prev, Mode::kEval);
  prev[2] = 0.0;
  prev[4] = 1.0;
  const std::vector<double> row1 = m.next_token_dist(prev, Mode::kEval);
  const std::vector<double> row2 = m.start_dist(Mode::kEval);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(dist.at(0, j) == doctest::Approx(row0[j]).epsilon(1e-12));
    CHECK(dist.at(1, j) == doctest::Approx(row1[j]).epsilon(1e-12));
    CHECK(dist.at(2, j) == doctest::Approx(row2[j]).epsilon(1e-12));
  }
}

TEST_CASE("logits pass is the softmax pre-image of the probability pass") {
  const NeuralBigramLM m = testutil::make_model(5, 4, 29);
  Tape tape;
  const TapeModel tm = TapeModel::attach(tape, m);
  Tensor rows = Tensor::zeros(2, 6);
  rows.at(0, 0) = 1.0;
  rows.at(1, 5) = 1.0;
  const NodeId src = tape.constant(rows);
  const NodeId z = tm.forward_rows_logits(tape, src, Mode::kEval);
  const NodeId p = tm.forward_rows(tape, src, Mode::kEval);
  const Tensor& via_logits = tape.value(tape.row_softmax(z));
  const Tensor& direct = tape.value(p);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(via_logits[k] == direct[k]);
  }
}

TEST_CASE("checkpoint JSON round trip is exact") {
  Checkpoint ck;
  ck.model = testutil::make_model(5, 4, 31, 0.1);
  ck.epoch = 17;
  ck.val_loss = 0.125;
  const std::string text = ck.to_json_string();
  CHECK(text.find("\"mixce-ckpt/1\"") != std::string::npos);
  const Checkpoint back = Checkpoint::from_json_string(text);
  CHECK(back.epoch == 17);
  CHECK(back.val_loss == 0.125);
  CHECK(back.to_json_string() == text);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.model.parameters()[i]->values ==
          ck.model.parameters()[i]->values);
  }

  testutil::TempDir tmp;
  ck.save(tmp.path / "ck.json");
  const Checkpoint loaded = Checkpoint::load(tmp.path / "ck.json");
  CHECK(loaded.to_json_string() == text);

  CHECK_THROWS_AS(Checkpoint::from_json_string("{}"), std::runtime_error);
}
