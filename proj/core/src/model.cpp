#include "mixce/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "json_io.hpp"

namespace mixce {
namespace {

constexpr double kPrevSumTol = 1e-9;

Tensor uniform_init(std::size_t rows, std::size_t cols, double scale,
                    SeedStream& stream) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.values) v = (2.0 * stream.uniform() - 1.0) * scale;
  return t;
}

Tensor bernoulli_mask(std::size_t rows, std::size_t cols, double keep_prob,
                      SeedStream& stream) {
  Tensor mask = Tensor::zeros(rows, cols);
  for (double& v : mask.values) v = stream.uniform() < keep_prob ? 1.0 : 0.0;
  return mask;
}

std::vector<double> flat(const detail::json& j, const char* key,
                         std::size_t expected) {
  auto values = j.at(key).get<std::vector<double>>();
  if (values.size() != expected) {
    throw std::runtime_error(std::string("checkpoint: param \"") + key +
                             "\" has wrong length");
  }
  return values;
}

}  // namespace

NeuralBigramLM NeuralBigramLM::init(const ModelConfig& config,
                                    SeedStream stream) {
  if (config.vocab_size < 2) {
    throw std::invalid_argument("model: vocab size must be >= 2");
  }
  if (config.hidden_dim == 0) {
    throw std::invalid_argument("model: hidden dim must be >= 1");
  }
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
    throw std::invalid_argument("model: dropout rate must be in [0, 1)");
  }
  NeuralBigramLM m;
  m.config_ = config;
  const std::size_t v = config.vocab_size;
  const std::size_t d = config.hidden_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  SeedStream init = stream.derive("params");
  m.E = uniform_init(v + 1, d, scale, init);  // row V = BOS
  m.W1 = uniform_init(d, d, scale, init);
  m.b1 = Tensor::zeros(d);
  m.W2 = uniform_init(d, v, scale, init);
  m.b2 = Tensor::zeros(v);
  return m;
}

std::size_t NeuralBigramLM::core_param_count() const {
  const std::size_t v = config_.vocab_size;
  const std::size_t d = config_.hidden_dim;
  return v * d + d * d + d + d * v + v;
}

std::vector<double> NeuralBigramLM::forward_from_embedding_(
    const std::vector<double>& e, Mode mode, SeedStream* dropout) const {
  const std::size_t v = config_.vocab_size;
  const std::size_t d = config_.hidden_dim;
  // h = relu(e . W1 + b1), optionally dropped out with inverted scaling.
  std::vector<double> h(d);
  for (std::size_t k = 0; k < d; ++k) {
    double acc = b1[k];
    for (std::size_t i = 0; i < d; ++i) acc += e[i] * W1.values[i * d + k];
    h[k] = acc > 0.0 ? acc : 0.0;
  }
  if (mode == Mode::kTrain && config_.dropout_rate > 0.0) {
    if (dropout == nullptr) {
      throw std::invalid_argument("model: train mode needs a dropout stream");
    }
    const double keep = 1.0 - config_.dropout_rate;
    for (double& x : h) {
      x = dropout->uniform() < keep ? x / keep : 0.0;
    }
  }
  // softmax(h . W2 + b2), max-subtracted.
  std::vector<double> logits(v);
  for (std::size_t j = 0; j < v; ++j) {
    double acc = b2[j];
    for (std::size_t k = 0; k < d; ++k) acc += h[k] * W2.values[k * v + j];
    logits[j] = acc;
  }
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double total = 0.0;
  for (double& z : logits) {
    z = std::exp(z - mx);
    total += z;
  }
  for (double& z : logits) z /= total;
  return logits;
}

std::vector<double> NeuralBigramLM::next_token_dist(
    std::span<const double> prev, Mode mode, SeedStream* dropout) const {
  const std::size_t v = config_.vocab_size;
  if (prev.size() != v) {
    throw std::invalid_argument("next_token_dist: prev must have V entries");
  }
  double total = 0.0;
  for (double p : prev) total += p;
  if (std::abs(total - 1.0) > kPrevSumTol) {
    throw std::invalid_argument("next_token_dist: prev must sum to 1");
  }
  const std::size_t d = config_.hidden_dim;
  // e = prev . E over the vocabulary rows (BOS row untouched by design).
  std::vector<double> e(d, 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    const double w = prev[i];
    if (w == 0.0) continue;
    const double* row = E.values.data() + i * d;
    for (std::size_t k = 0; k < d; ++k) e[k] += w * row[k];
  }
  return forward_from_embedding_(e, mode, dropout);
}

std::vector<double> NeuralBigramLM::start_dist(Mode mode,
                                               SeedStream* dropout) const {
  const std::size_t v = config_.vocab_size;
  const std::size_t d = config_.hidden_dim;
  std::vector<double> e(E.values.begin() + v * d, E.values.begin() + (v + 1) * d);
  return forward_from_embedding_(e, mode, dropout);
}

Tensor NeuralBigramLM::extract_transition_matrix() const {
  const std::size_t v = config_.vocab_size;
  Tensor out = Tensor::zeros(v, v);
  std::vector<double> prev(v, 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    prev[i] = 1.0;
    const std::vector<double> row = next_token_dist(prev, Mode::kEval);
    prev[i] = 0.0;
    for (std::size_t j = 0; j < v; ++j) out.at(i, j) = row[j];
  }
  return out;
}

ModelSequenceScore NeuralBigramLM::seq_log_prob(
    const TokenSequence& seq) const {
  validate_sequence(seq, config_.vocab_size, eos_id());
  ModelSequenceScore score;
  score.per_step_prob.reserve(seq.tokens.size());
  std::vector<double> prev(config_.vocab_size, 0.0);
  std::int32_t prev_tok = -1;
  for (const std::int32_t tok : seq.tokens) {
    std::vector<double> dist;
    if (prev_tok < 0) {
      dist = start_dist(Mode::kEval);
    } else {
      prev[static_cast<std::size_t>(prev_tok)] = 1.0;
      dist = next_token_dist(prev, Mode::kEval);
      prev[static_cast<std::size_t>(prev_tok)] = 0.0;
    }
    const double q = dist[static_cast<std::size_t>(tok)];
    score.per_step_prob.push_back(q);
    score.log_prob += std::log(q);
    prev_tok = tok;
  }
  return score;
}

std::vector<const Tensor*> NeuralBigramLM::parameters() const {
  return {&E, &W1, &b1, &W2, &b2};
}

std::vector<Tensor*> NeuralBigramLM::parameters() {
  return {&E, &W1, &b1, &W2, &b2};
}

ModelScorer::ModelScorer(const NeuralBigramLM& model)
    : vocab_size_(model.vocab_size()),
      start_(model.start_dist(Mode::kEval)),
      transition_(model.extract_transition_matrix()) {}

ModelSequenceScore ModelScorer::seq_log_prob(const TokenSequence& seq) const {
  validate_sequence(seq, vocab_size_,
                    static_cast<std::int32_t>(vocab_size_ - 1));
  ModelSequenceScore score;
  score.per_step_prob.reserve(seq.tokens.size());
  std::int32_t prev = -1;
  for (const std::int32_t tok : seq.tokens) {
    const double q = prev < 0 ? start_[static_cast<std::size_t>(tok)]
                              : transition_.at(static_cast<std::size_t>(prev),
                                               static_cast<std::size_t>(tok));
    score.per_step_prob.push_back(q);
    score.log_prob += std::log(q);
    prev = tok;
  }
  return score;
}

TapeModel TapeModel::attach(Tape& tape, const NeuralBigramLM& model) {
  TapeModel tm;
  tm.model = &model;
  tm.E = tape.param(model.E);
  tm.W1 = tape.param(model.W1);
  tm.b1 = tape.param(model.b1);
  tm.W2 = tape.param(model.W2);
  tm.b2 = tape.param(model.b2);
  return tm;
}

NodeId TapeModel::forward_rows(Tape& tape, NodeId rows, Mode mode,
                               SeedStream* dropout) const {
  return tape.row_softmax(forward_rows_logits(tape, rows, mode, dropout));
}

NodeId TapeModel::forward_rows_logits(Tape& tape, NodeId rows, Mode mode,
                                      SeedStream* dropout) const {
  const ModelConfig& cfg = model->config();
  if (tape.value(rows).cols() != cfg.vocab_size + 1) {
    throw std::invalid_argument(
        "forward_rows: inputs must have V+1 columns (BOS column last)");
  }
  const NodeId e = tape.matmul(rows, E);
  NodeId h = tape.relu(tape.add(tape.matmul(e, W1), b1));
  if (mode == Mode::kTrain && cfg.dropout_rate > 0.0) {
    if (dropout == nullptr) {
      throw std::invalid_argument(
          "forward_rows: train mode needs a dropout stream");
    }
    const Tensor& hv = tape.value(h);
    h = tape.dropout(h,
                     bernoulli_mask(hv.rows(), hv.cols(),
                                    1.0 - cfg.dropout_rate, *dropout),
                     cfg.dropout_rate);
  }
  return tape.add(tape.matmul(h, W2), b2);
}

std::vector<Tensor> TapeModel::parameter_grads(const Tape& tape) const {
  return {tape.grad(E), tape.grad(W1), tape.grad(b1), tape.grad(W2),
          tape.grad(b2)};
}

std::string Checkpoint::to_json_string() const {
  detail::json j;
  j["format"] = "mixce-ckpt/1";
  j["config"] = {{"vocab_size", model.config().vocab_size},
                 {"hidden_dim", model.config().hidden_dim},
                 {"dropout_rate", model.config().dropout_rate}};
  j["epoch"] = epoch;
  j["val_loss"] = val_loss;
  j["params"] = {{"E", model.E.values},
                 {"W1", model.W1.values},
                 {"b1", model.b1.values},
                 {"W2", model.W2.values},
                 {"b2", model.b2.values}};
  return j.dump(2) + "\n";
}

Checkpoint Checkpoint::from_json_string(std::string_view text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: invalid JSON: ") +
                             e.what());
  }
  if (!j.is_object() || j.value("format", "") != "mixce-ckpt/1") {
    throw std::runtime_error("checkpoint: missing or unsupported format marker");
  }
  detail::reject_unknown_keys(
      j, {"format", "config", "epoch", "val_loss", "params"}, "checkpoint");
  const auto& cfg = j.at("config");
  detail::reject_unknown_keys(
      cfg, {"vocab_size", "hidden_dim", "dropout_rate"}, "checkpoint config");
  ModelConfig config;
  config.vocab_size = cfg.at("vocab_size").get<std::size_t>();
  config.hidden_dim = cfg.at("hidden_dim").get<std::size_t>();
  config.dropout_rate = cfg.at("dropout_rate").get<double>();

  Checkpoint ckpt;
  ckpt.model = NeuralBigramLM::init(config, SeedStream(0));
  ckpt.epoch = j.at("epoch").get<std::size_t>();
  ckpt.val_loss = j.at("val_loss").get<double>();
  const auto& params = j.at("params");
  detail::reject_unknown_keys(params, {"E", "W1", "b1", "W2", "b2"},
                              "checkpoint params");
  const std::size_t v = config.vocab_size;
  const std::size_t d = config.hidden_dim;
  ckpt.model.E.values = flat(params, "E", (v + 1) * d);
  ckpt.model.W1.values = flat(params, "W1", d * d);
  ckpt.model.b1.values = flat(params, "b1", d);
  ckpt.model.W2.values = flat(params, "W2", d * v);
  ckpt.model.b2.values = flat(params, "b2", v);
  for (const Tensor* p : ckpt.model.parameters()) {
    if (!p->all_finite()) {
      throw std::runtime_error("checkpoint: non-finite parameter value");
    }
  }
  return ckpt;
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  try {
    return from_json_string(detail::read_text_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  detail::write_text_file(path, to_json_string());
}

}  // namespace mixce
