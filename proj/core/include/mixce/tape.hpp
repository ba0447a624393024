#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mixce/tensor.hpp"

namespace mixce {

using NodeId = std::uint32_t;

struct TapeOptions {
  // When set, every node's forward value is scanned and any NaN/Inf raises
  // immediately, pointing at the op that produced it instead of letting the
  // poison propagate into the loss.
  bool check_finite = true;
};

// Reverse-mode automatic differentiation over a flat, append-only tape.
// Nodes are created in topological order by construction, so the backward
// sweep is a single reverse pass that visits each node exactly once.
// Gradients accumulate additively; leaves never reached by the sweep keep
// an all-zero gradient.
class Tape {
 public:
  explicit Tape(TapeOptions opts = {});

  // Leaves. A param participates in differentiation; a constant is a
  // gradient-stopped input (its gradient stays zero).
  NodeId param(Tensor value);
  NodeId constant(Tensor value);

  // y = a @ b for (m x k) @ (k x n).
  NodeId matmul(NodeId a, NodeId b);
  // Elementwise a + b; b may also be a length-n vector broadcast across the
  // rows of an (m x n) a.
  NodeId add(NodeId a, NodeId b);
  NodeId add_scalar(NodeId a, double c);
  NodeId scale(NodeId a, double c);
  NodeId relu(NodeId a);  // derivative defined as 0 at exactly 0
  // Softmax across each row, max-subtracted for stability.
  NodeId row_softmax(NodeId a);
  // log(softmax(a)) across each row, computed as a - logsumexp(a) so the
  // result stays finite even where the probability itself underflows.
  NodeId row_log_softmax(NodeId a);
  // log(a + c) elementwise; requires a + c > 0 everywhere, c >= 0.
  NodeId log_plus(NodeId a, double c);
  NodeId mul(NodeId a, NodeId b);  // elementwise, same shape
  NodeId sum(NodeId a);            // all elements -> scalar
  NodeId mean(NodeId a);           // all elements -> scalar
  NodeId row_sum(NodeId a);        // (m x n) -> (m x 1)
  // Inverted dropout: y = a * mask / (1 - rate); mask entries must be 0/1
  // and rate in [0, 1). The mask is supplied by the caller so randomness
  // stays in SeedStream-land.
  NodeId dropout(NodeId a, const Tensor& mask, double rate);
  // Identity value, but blocks gradient flow (used for self-weighting
  // losses whose weights must not be differentiated through).
  NodeId stop_gradient(NodeId a);
  // Append `extra` zero-valued columns to an (m x n) tensor.
  NodeId pad_cols(NodeId a, std::size_t extra);
  // Select rows of a by index (duplicates allowed); backward scatter-adds.
  // Lets sequence rollouts shed finished rows instead of carrying dead
  // width through every matmul.
  NodeId row_gather(NodeId a, std::vector<std::size_t> rows);
  // Elementwise log(exp(a) + exp(b)), computed max-first so large negative
  // log-probabilities never overflow.
  NodeId log_add_exp(NodeId a, NodeId b);

  // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse. Root
  // must hold exactly one element. May be called once per tape.
  void backward(NodeId root);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;  // valid only after backward()
  double scalar_value(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kConstant,
    kMatMul,
    kAdd,
    kAddBroadcast,
    kAddScalar,
    kScale,
    kRelu,
    kRowSoftmax,
    kRowLogSoftmax,
    kLogPlus,
    kMul,
    kSum,
    kMean,
    kRowSum,
    kDropout,
    kStopGradient,
    kPadCols,
    kLogAddExp,
    kRowGather,
  };

  struct Node {
    Tensor value;
    Tensor grad;  // allocated during backward()
    Op op;
    NodeId a = 0;
    NodeId b = 0;
    double c = 0.0;  // scalar payload (shift, scale factor, log offset)
    Tensor aux;      // dropout: mask pre-divided by keep probability
    std::vector<std::size_t> rows;  // row_gather index list
  };

  NodeId push(Node node);
  const Tensor& val(NodeId id) const { return nodes_[id].value; }
  void check_id(NodeId id) const;

  TapeOptions opts_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Finite-difference verification of a scalar-valued differentiable
// function. `f` evaluates the function at the given parameter values and,
// when `grads_out` is non-null, must also deposit d(value)/d(param) there
// (one tensor per parameter, matching shapes).
//
// Each coordinate is checked with a central difference at step h and the
// relative-error denominator max(|analytic|, |numeric|, 1e-8). Coordinates
// where the one-sided forward and backward differences disagree by more
// than 10% of their scale straddle a kink (ReLU corner, nucleus cutoff)
// and are excluded rather than reported as failures.
struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;     // over checked coordinates
  std::size_t checked = 0;        // coordinates compared
  std::size_t excluded = 0;       // coordinates skipped at kinks
  std::size_t worst_param = 0;    // index of the tensor with the max error
  std::size_t worst_coord = 0;    // flat index within that tensor
};

using DifferentiableFn =
    std::function<double(const std::vector<Tensor>& params,
                         std::vector<Tensor>* grads_out)>;

GradCheckResult gradient_check(const DifferentiableFn& f,
                               std::vector<Tensor> params, double h,
                               double tol);

}  // namespace mixce
