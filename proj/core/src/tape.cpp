#include "mixce/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace mixce {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat as_matrix(const Tensor& t) {
  return CMapMat(t.values.data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

MapMat as_matrix(Tensor& t) {
  return MapMat(t.values.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw std::invalid_argument(std::string(op) + ": incompatible shape (" +
                              std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + ")");
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(
      std::string(op) + ": incompatible shapes (" + std::to_string(a.rows()) +
      "x" + std::to_string(a.cols()) + ") and (" + std::to_string(b.rows()) +
      "x" + std::to_string(b.cols()) + ")");
}

}  // namespace

Tape::Tape(TapeOptions opts) : opts_(opts) {}

void Tape::check_id(NodeId id) const {
  if (id >= nodes_.size()) {
    throw std::invalid_argument("Tape: node id out of range");
  }
}

NodeId Tape::push(Node node) {
  if (node.value.rank() == 0 || node.value.size() == 0) {
    throw std::invalid_argument("Tape: empty tensors are not allowed");
  }
  if (opts_.check_finite && !node.value.all_finite()) {
    throw std::domain_error("Tape: non-finite value produced by node " +
                            std::to_string(nodes_.size()));
  }
  if (backward_done_) {
    throw std::logic_error("Tape: cannot record ops after backward()");
  }
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::param(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    shape_error("matmul", ta, tb);
  }
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.value = Tensor::zeros(ta.rows(), tb.cols());
  as_matrix(n.value).noalias() = as_matrix(ta) * as_matrix(tb);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  Node n;
  n.a = a;
  n.b = b;
  if (ta.same_shape(tb)) {
    n.op = Op::kAdd;
    n.value = ta;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += tb[i];
  } else if (ta.rank() == 2 && tb.size() == ta.cols() && tb.rows() == 1) {
    // Row-broadcast: b is a bias added to every row of a.
    n.op = Op::kAddBroadcast;
    n.value = ta;
    const std::size_t cols = ta.cols();
    for (std::size_t i = 0; i < ta.rows(); ++i) {
      for (std::size_t j = 0; j < cols; ++j) n.value.values[i * cols + j] += tb[j];
    }
  } else {
    shape_error("add", ta, tb);
  }
  return push(std::move(n));
}

NodeId Tape::add_scalar(NodeId a, double c) {
  check_id(a);
  Node n;
  n.op = Op::kAddScalar;
  n.a = a;
  n.c = c;
  n.value = val(a);
  for (double& v : n.value.values) v += c;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
  check_id(a);
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.c = c;
  n.value = val(a);
  for (double& v : n.value.values) v *= c;
  return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
  check_id(a);
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.value = val(a);
  for (double& v : n.value.values) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

NodeId Tape::row_softmax(NodeId a) {
  check_id(a);
  const Tensor& ta = val(a);
  if (ta.rank() != 2) shape_error("row_softmax", ta);
  Node n;
  n.op = Op::kRowSoftmax;
  n.a = a;
  n.value = ta;
  const std::size_t rows = ta.rows(), cols = ta.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = n.value.values.data() + i * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
  }
  return push(std::move(n));
}

NodeId Tape::row_log_softmax(NodeId a) {
  check_id(a);
  const Tensor& ta = val(a);
  if (ta.rank() != 2) shape_error("row_log_softmax", ta);
  Node n;
  n.op = Op::kRowLogSoftmax;
  n.a = a;
  n.value = ta;
  const std::size_t rows = ta.rows(), cols = ta.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = n.value.values.data() + i * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < cols; ++j) row[j] -= lse;
  }
  return push(std::move(n));
}

NodeId Tape::log_plus(NodeId a, double c) {
  check_id(a);
  if (c < 0.0) {
    throw std::invalid_argument("log_plus: offset must be >= 0");
  }
  Node n;
  n.op = Op::kLogPlus;
  n.a = a;
  n.c = c;
  n.value = val(a);
  for (double& v : n.value.values) {
    const double arg = v + c;
    if (arg <= 0.0) {
      throw std::domain_error("log_plus: log of non-positive value");
    }
    v = std::log(arg);
  }
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = ta;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= tb[i];
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  check_id(a);
  double total = 0.0;
  for (double v : val(a).values) total += v;
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.value = Tensor::scalar(total);
  return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
  check_id(a);
  double total = 0.0;
  for (double v : val(a).values) total += v;
  Node n;
  n.op = Op::kMean;
  n.a = a;
  n.value = Tensor::scalar(total / static_cast<double>(val(a).size()));
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
  check_id(a);
  const Tensor& ta = val(a);
  if (ta.rank() != 2) shape_error("row_sum", ta);
  Node n;
  n.op = Op::kRowSum;
  n.a = a;
  n.value = Tensor::zeros(ta.rows(), std::size_t{1});
  const std::size_t cols = ta.cols();
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    double total = 0.0;
    const double* row = ta.values.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) total += row[j];
    n.value.values[i] = total;
  }
  return push(std::move(n));
}

NodeId Tape::dropout(NodeId a, const Tensor& mask, double rate) {
  check_id(a);
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  const Tensor& ta = val(a);
  if (!ta.same_shape(mask)) shape_error("dropout", ta, mask);
  for (double m : mask.values) {
    if (m != 0.0 && m != 1.0) {
      throw std::invalid_argument("dropout: mask entries must be 0 or 1");
    }
  }
  Node n;
  n.op = Op::kDropout;
  n.a = a;
  n.c = rate;
  // Inverted scaling baked into the stored mask: kept activations are
  // divided by the keep probability so eval mode needs no rescale.
  n.aux = mask;
  const double inv_keep = 1.0 / (1.0 - rate);
  for (double& m : n.aux.values) m *= inv_keep;
  n.value = ta;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= n.aux[i];
  return push(std::move(n));
}

NodeId Tape::stop_gradient(NodeId a) {
  check_id(a);
  Node n;
  n.op = Op::kStopGradient;
  n.a = a;
  n.value = val(a);
  return push(std::move(n));
}

NodeId Tape::pad_cols(NodeId a, std::size_t extra) {
  check_id(a);
  const Tensor& ta = val(a);
  if (ta.rank() != 2) shape_error("pad_cols", ta);
  Node n;
  n.op = Op::kPadCols;
  n.a = a;
  n.value = Tensor::zeros(ta.rows(), ta.cols() + extra);
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    std::memcpy(n.value.values.data() + i * n.value.cols(),
                ta.values.data() + i * ta.cols(), ta.cols() * sizeof(double));
  }
  return push(std::move(n));
}

NodeId Tape::log_add_exp(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) shape_error("log_add_exp", ta, tb);
  Node n;
  n.op = Op::kLogAddExp;
  n.a = a;
  n.b = b;
  n.value = ta;
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    const double x = ta[i], y = tb[i];
    const double mx = std::max(x, y);
    n.value[i] = mx + std::log(std::exp(x - mx) + std::exp(y - mx));
  }
  return push(std::move(n));
}

NodeId Tape::row_gather(NodeId a, std::vector<std::size_t> rows) {
  check_id(a);
  const Tensor& ta = val(a);
  if (ta.rank() != 2) shape_error("row_gather", ta);
  if (rows.empty()) {
    throw std::invalid_argument("row_gather: need at least one row");
  }
  for (std::size_t r : rows) {
    if (r >= ta.rows()) {
      throw std::invalid_argument("row_gather: row index out of range");
    }
  }
  Node n;
  n.op = Op::kRowGather;
  n.a = a;
  n.rows = std::move(rows);
  const std::size_t cols = ta.cols();
  n.value = Tensor::zeros(n.rows.size(), cols);
  for (std::size_t i = 0; i < n.rows.size(); ++i) {
    std::memcpy(n.value.values.data() + i * cols,
                ta.values.data() + n.rows[i] * cols, cols * sizeof(double));
  }
  return push(std::move(n));
}

void Tape::backward(NodeId root) {
  check_id(root);
  if (backward_done_) {
    throw std::logic_error("Tape: backward() may run once per tape");
  }
  if (val(root).size() != 1) {
    throw std::invalid_argument("Tape: backward root must be scalar");
  }
  backward_done_ = true;

  // `wants` marks nodes whose gradient can flow into a parameter leaf;
  // constants and stop-gradient block the flow. Only wanted nodes get grad
  // storage or grad arithmetic, so dead subtrees (data constants, scatter
  // indicators, stop-gradient feeds, unused mixture sides) contribute
  // nothing — not even signed zeros — and cost nothing.
  std::vector<char> wants(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::kLeaf:
        wants[i] = 1;
        break;
      case Op::kConstant:
      case Op::kStopGradient:
        break;
      case Op::kMatMul:
      case Op::kAdd:
      case Op::kAddBroadcast:
      case Op::kMul:
      case Op::kLogAddExp:
        wants[i] = wants[n.a] | wants[n.b];
        break;
      default:  // remaining ops read a single input
        wants[i] = wants[n.a];
        break;
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!wants[i]) continue;
    Node& n = nodes_[i];
    n.grad = n.value;
    std::fill(n.grad.values.begin(), n.grad.values.end(), 0.0);
  }
  if (!wants[root]) return;  // parameters keep their zero gradients
  nodes_[root].grad.values[0] = 1.0;

  // `live` marks wanted nodes actually on a gradient path from the root.
  std::vector<char> live(nodes_.size(), 0);
  live[root] = 1;

  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    if (!live[idx]) continue;
    Node& n = nodes_[idx];
    const Tensor& g = n.grad;
    auto touch = [&](NodeId in) { live[in] = 1; };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kMatMul: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        if (wants[n.a]) {
          as_matrix(na.grad).noalias() += as_matrix(g) * as_matrix(nb.value).transpose();
          touch(n.a);
        }
        if (wants[n.b]) {
          as_matrix(nb.grad).noalias() += as_matrix(na.value).transpose() * as_matrix(g);
          touch(n.b);
        }
        break;
      }
      case Op::kAdd: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        if (wants[n.a]) {
          for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
          touch(n.a);
        }
        if (wants[n.b]) {
          for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i];
          touch(n.b);
        }
        break;
      }
      case Op::kAddBroadcast: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const std::size_t cols = na.value.cols();
        if (wants[n.a]) {
          for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
          touch(n.a);
        }
        if (wants[n.b]) {
          for (std::size_t i = 0; i < na.value.rows(); ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              nb.grad[j] += g.values[i * cols + j];
            }
          }
          touch(n.b);
        }
        break;
      }
      case Op::kAddScalar: {
        Node& na = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
        touch(n.a);
        break;
      }
      case Op::kScale: {
        Node& na = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += n.c * g[i];
        touch(n.a);
        break;
      }
      case Op::kRelu: {
        Node& na = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (na.value[i] > 0.0) na.grad[i] += g[i];
        }
        touch(n.a);
        break;
      }
      case Op::kRowSoftmax: {
        Node& na = nodes_[n.a];
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* y = n.value.values.data() + i * cols;
          const double* gy = g.values.data() + i * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
          double* ga = na.grad.values.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) ga[j] += y[j] * (gy[j] - dot);
        }
        touch(n.a);
        break;
      }
      case Op::kRowLogSoftmax: {
        Node& na = nodes_[n.a];
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* y = n.value.values.data() + i * cols;
          const double* gy = g.values.data() + i * cols;
          double gsum = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gsum += gy[j];
          double* ga = na.grad.values.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) {
            ga[j] += gy[j] - std::exp(y[j]) * gsum;
          }
        }
        touch(n.a);
        break;
      }
      case Op::kLogPlus: {
        Node& na = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i] / (na.value[i] + n.c);
        }
        touch(n.a);
        break;
      }
      case Op::kMul: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        if (wants[n.a]) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            na.grad[i] += g[i] * nb.value[i];
          }
          touch(n.a);
        }
        if (wants[n.b]) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            nb.grad[i] += g[i] * na.value[i];
          }
          touch(n.b);
        }
        break;
      }
      case Op::kSum: {
        Node& na = nodes_[n.a];
        const double gy = g.values[0];
        for (double& v : na.grad.values) v += gy;
        touch(n.a);
        break;
      }
      case Op::kMean: {
        Node& na = nodes_[n.a];
        const double gy = g.values[0] / static_cast<double>(na.value.size());
        for (double& v : na.grad.values) v += gy;
        touch(n.a);
        break;
      }
      case Op::kRowSum: {
        Node& na = nodes_[n.a];
        const std::size_t cols = na.value.cols();
        for (std::size_t i = 0; i < na.value.rows(); ++i) {
          const double gy = g.values[i];
          double* ga = na.grad.values.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) ga[j] += gy;
        }
        touch(n.a);
        break;
      }
      case Op::kDropout: {
        Node& na = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i] * n.aux[i];
        }
        touch(n.a);
        break;
      }
      case Op::kStopGradient:
        break;
      case Op::kPadCols: {
        Node& na = nodes_[n.a];
        const std::size_t in_cols = na.value.cols();
        const std::size_t out_cols = n.value.cols();
        for (std::size_t i = 0; i < na.value.rows(); ++i) {
          const double* gy = g.values.data() + i * out_cols;
          double* ga = na.grad.values.data() + i * in_cols;
          for (std::size_t j = 0; j < in_cols; ++j) ga[j] += gy[j];
        }
        touch(n.a);
        break;
      }
      case Op::kLogAddExp: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        if (wants[n.a]) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            na.grad[i] += g[i] * std::exp(na.value[i] - n.value[i]);
          }
          touch(n.a);
        }
        if (wants[n.b]) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            nb.grad[i] += g[i] * std::exp(nb.value[i] - n.value[i]);
          }
          touch(n.b);
        }
        break;
      }
      case Op::kRowGather: {
        Node& na = nodes_[n.a];
        const std::size_t cols = n.value.cols();
        for (std::size_t i = 0; i < n.rows.size(); ++i) {
          const double* gy = g.values.data() + i * cols;
          double* ga = na.grad.values.data() + n.rows[i] * cols;
          for (std::size_t j = 0; j < cols; ++j) ga[j] += gy[j];
        }
        touch(n.a);
        break;
      }
    }
  }
}

const Tensor& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

const Tensor& Tape::grad(NodeId id) const {
  check_id(id);
  if (!backward_done_) {
    throw std::logic_error("Tape: grad() requires backward() first");
  }
  if (nodes_[id].grad.size() == 0) {
    throw std::logic_error(
        "Tape: node has no gradient — it cannot reach a parameter");
  }
  return nodes_[id].grad;
}

double Tape::scalar_value(NodeId id) const {
  check_id(id);
  if (nodes_[id].value.size() != 1) {
    throw std::invalid_argument("Tape: node is not scalar");
  }
  return nodes_[id].value.values[0];
}

GradCheckResult gradient_check(const DifferentiableFn& f,
                               std::vector<Tensor> params, double h,
                               double tol) {
  std::vector<Tensor> analytic;
  const double base = f(params, &analytic);
  if (!std::isfinite(base)) {
    throw std::domain_error("gradient_check: non-finite base value");
  }
  if (f(params, nullptr) != base) {
    throw std::runtime_error(
        "gradient_check: function is not deterministic across calls");
  }
  if (analytic.size() != params.size()) {
    throw std::invalid_argument(
        "gradient_check: gradient count does not match parameter count");
  }

  GradCheckResult result;
  result.passed = true;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!analytic[p].same_shape(params[p])) {
      throw std::invalid_argument(
          "gradient_check: gradient shape does not match parameter shape");
    }
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + h;
      const double fp = f(params, nullptr);
      params[p][i] = saved - h;
      const double fm = f(params, nullptr);
      params[p][i] = saved;

      // One-sided differences disagreeing badly means the segment
      // [x-h, x+h] straddles a non-differentiable point (ReLU corner,
      // argmax flip); those coordinates are excluded, not failed.
      const double fwd = (fp - base) / h;
      const double bwd = (base - fm) / h;
      const double side_scale =
          std::max({std::abs(fwd), std::abs(bwd), 1e-8});
      if (std::abs(fwd - bwd) > 0.1 * side_scale) {
        ++result.excluded;
        continue;
      }

      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = analytic[p][i];
      const double denom = std::max({std::abs(numeric), std::abs(ana), 1e-8});
      const double rel = std::abs(numeric - ana) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p;
        result.worst_coord = i;
      }
    }
  }
  result.passed = result.max_rel_error <= tol;
  return result;
}

}  // namespace mixce
