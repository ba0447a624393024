#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mixce/tape.hpp"
#include "mixce/tensor.hpp"

using mixce::GradCheckResult;
using mixce::gradient_check;
using mixce::NodeId;
using mixce::Tape;
using mixce::Tensor;

TEST_CASE("tensor factories and accessors") {
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rank() == 2);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6);
  Tensor v = Tensor::vector({1.5, 2.5});
  CHECK(v.rank() == 1);
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 2);
  CHECK(Tensor::scalar(4.0).size() == 1);
  CHECK(Tensor::zeros(3, 4).size() == 12);
  CHECK(m.all_finite());
  m.at(0, 1) = std::nan("");
  CHECK(!m.all_finite());
}

TEST_CASE("matmul and add forward values") {
  Tape tape;
  const NodeId a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const NodeId b = tape.constant(Tensor::matrix(2, 2, {5, 6, 7, 8}));
  const NodeId y = tape.matmul(a, b);
  const Tensor& v = tape.value(y);
  CHECK(v.at(0, 0) == 19);
  CHECK(v.at(0, 1) == 22);
  CHECK(v.at(1, 0) == 43);
  CHECK(v.at(1, 1) == 50);

  const NodeId bias = tape.constant(Tensor::vector({10, 20}));
  const Tensor& w = tape.value(tape.add(y, bias));
  CHECK(w.at(0, 0) == 29);
  CHECK(w.at(1, 1) == 70);

  CHECK_THROWS_AS(tape.matmul(a, bias), std::invalid_argument);
}

TEST_CASE("row_softmax rows are distributions and shift-invariant") {
  Tape tape;
  const NodeId a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, -5, 0, 5}));
  const NodeId b =
      tape.constant(Tensor::matrix(2, 3, {101, 102, 103, 95, 100, 105}));
  const Tensor& pa = tape.value(tape.row_softmax(a));
  const Tensor& pb = tape.value(tape.row_softmax(b));
  for (std::size_t i = 0; i < 2; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      total += pa.at(i, j);
      CHECK(pa.at(i, j) == doctest::Approx(pb.at(i, j)).epsilon(1e-12));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("row_log_softmax matches log of row_softmax and survives extremes") {
  Tape tape;
  const NodeId a = tape.constant(Tensor::matrix(2, 3, {0.3, -1.2, 2.0,
                                                       4.0, 4.0, -0.5}));
  const Tensor& lp = tape.value(tape.row_log_softmax(a));
  const Tensor& p = tape.value(tape.row_softmax(a));
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(lp[k] == doctest::Approx(std::log(p[k])).epsilon(1e-12));
  }

  // A logit gap beyond ~745 underflows the softmax itself to exact zero;
  // the log-space path must stay finite and keep the gap.
  Tape tape2;
  const NodeId big = tape2.constant(Tensor::matrix(1, 2, {0.0, -2000.0}));
  const Tensor& lq = tape2.value(tape2.row_log_softmax(big));
  CHECK(std::isfinite(lq[1]));
  CHECK(lq[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lq[1] == doctest::Approx(-2000.0).epsilon(1e-9));
  const Tensor& q = tape2.value(tape2.row_softmax(big));
  CHECK(q[1] == 0.0);  // demonstrates the underflow the log path avoids
}

TEST_CASE("log_add_exp handles large negative inputs") {
  Tape tape;
  const NodeId a = tape.constant(Tensor::vector({-1000.0, 0.0}));
  const NodeId b = tape.constant(Tensor::vector({-1000.0, -900.0}));
  const Tensor& v = tape.value(tape.log_add_exp(a, b));
  CHECK(v[0] == doctest::Approx(-1000.0 + std::log(2.0)).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("elementwise and reduction forward values") {
  Tape tape;
  const NodeId a = tape.constant(Tensor::matrix(2, 2, {1, -2, 3, 0}));
  CHECK(tape.value(tape.relu(a)).values == std::vector<double>{1, 0, 3, 0});
  CHECK(tape.scalar_value(tape.sum(a)) == 2.0);
  CHECK(tape.scalar_value(tape.mean(a)) == 0.5);
  const Tensor& rs = tape.value(tape.row_sum(a));
  CHECK(rs.rows() == 2);
  CHECK(rs.cols() == 1);
  CHECK(rs[0] == -1.0);
  CHECK(rs[1] == 3.0);
  CHECK(tape.value(tape.add_scalar(a, 10.0)).at(1, 0) == 13.0);
  CHECK(tape.value(tape.scale(a, -2.0)).at(0, 1) == 4.0);
  const NodeId b = tape.constant(Tensor::matrix(2, 2, {2, 2, 0.5, 1}));
  CHECK(tape.value(tape.mul(a, b)).values ==
        std::vector<double>{2, -4, 1.5, 0});
  CHECK(tape.value(tape.log_plus(b, 0.0))[0] ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("pad_cols appends zero columns") {
  Tape tape;
  const NodeId a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Tensor& v = tape.value(tape.pad_cols(a, 2));
  CHECK(v.rows() == 2);
  CHECK(v.cols() == 4);
  CHECK(v.at(0, 1) == 2);
  CHECK(v.at(0, 2) == 0);
  CHECK(v.at(1, 3) == 0);
}

TEST_CASE("row_gather selects and its backward scatter-adds duplicates") {
  Tape tape;
  const NodeId a = tape.param(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  const NodeId g = tape.row_gather(a, {2, 0, 2});
  const Tensor& v = tape.value(g);
  CHECK(v.rows() == 3);
  CHECK(v.at(0, 0) == 5);
  CHECK(v.at(1, 0) == 1);
  CHECK(v.at(2, 1) == 6);
  tape.backward(tape.sum(g));
  const Tensor& grad = tape.grad(a);
  CHECK(grad.at(0, 0) == 1.0);  // gathered once
  CHECK(grad.at(1, 0) == 0.0);  // never gathered
  CHECK(grad.at(2, 0) == 2.0);  // gathered twice
  CHECK_THROWS_AS(Tape().row_gather(0, {}), std::invalid_argument);
}

TEST_CASE("duplicated inputs accumulate gradient") {
  Tape tape;
  const NodeId x = tape.param(Tensor::vector({3.0}));
  tape.backward(tape.sum(tape.add(x, x)));
  CHECK(tape.grad(x)[0] == 2.0);
}

TEST_CASE("stop_gradient freezes its branch") {
  // d/dx mean(stopgrad(x) * x) must be stopgrad(x)/n = x/n, not 2x/n.
  Tape tape;
  const NodeId x = tape.param(Tensor::vector({2.0, -3.0}));
  tape.backward(tape.mean(tape.mul(tape.stop_gradient(x), x)));
  CHECK(tape.grad(x)[0] == doctest::Approx(1.0));
  CHECK(tape.grad(x)[1] == doctest::Approx(-1.5));
}

TEST_CASE("dropout scales by the kept fraction and validates input") {
  Tape tape;
  const NodeId a = tape.param(Tensor::vector({1.0, 2.0, 3.0, 4.0}));
  Tensor mask = Tensor::vector({1.0, 0.0, 1.0, 1.0});
  const NodeId y = tape.dropout(a, mask, 0.25);
  const Tensor& v = tape.value(y);
  CHECK(v[0] == doctest::Approx(1.0 / 0.75));
  CHECK(v[1] == 0.0);
  CHECK(v[3] == doctest::Approx(4.0 / 0.75));
  tape.backward(tape.sum(y));
  CHECK(tape.grad(a)[1] == 0.0);
  CHECK(tape.grad(a)[2] == doctest::Approx(1.0 / 0.75));

  Tape t2;
  const NodeId b = t2.constant(Tensor::vector({1.0}));
  CHECK_THROWS_AS(t2.dropout(b, Tensor::vector({0.5}), 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(t2.dropout(b, Tensor::vector({1.0}), 1.0),
                  std::invalid_argument);
}

TEST_CASE("non-finite forward values are rejected at the faulting op") {
  Tape tape;
  const NodeId neg = tape.constant(Tensor::vector({-2.0}));
  CHECK_THROWS_AS(tape.log_plus(neg, 0.0), std::domain_error);
}

TEST_CASE("backward bookkeeping contracts") {
  Tape tape;
  const NodeId x = tape.param(Tensor::vector({1.0, 2.0}));
  const NodeId c = tape.constant(Tensor::vector({3.0, 4.0}));
  const NodeId y = tape.sum(tape.mul(x, c));
  CHECK_THROWS_AS(tape.grad(x), std::logic_error);  // before backward
  CHECK_THROWS_AS(tape.backward(tape.mul(x, c)), std::invalid_argument);
  tape.backward(y);
  CHECK(tape.grad(x)[0] == 3.0);
  CHECK(tape.grad(x)[1] == 4.0);
  // Constants are gradient-stopped leaves: no gradient is ever allocated.
  CHECK_THROWS_AS(tape.grad(c), std::logic_error);
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);   // once per tape
  CHECK_THROWS_AS(tape.sum(x), std::logic_error);        // append after sweep
  CHECK_THROWS_AS(tape.scalar_value(x), std::invalid_argument);
}

namespace {

// Composite touching most differentiable ops, driven by two parameters.
double composite_fn(const std::vector<Tensor>& params,
                    std::vector<Tensor>* grads_out) {
  Tape tape;
  const NodeId w = tape.param(params[0]);  // 3 x 3
  const NodeId b = tape.param(params[1]);  // 3
  const NodeId x = tape.constant(Tensor::matrix(
      2, 3, {0.3, -0.7, 1.1, 0.9, 0.2, -0.4}));
  const NodeId h = tape.relu(tape.add(tape.matmul(x, w), b));
  const NodeId lp = tape.row_log_softmax(tape.add_scalar(h, 0.1));
  const NodeId p = tape.row_softmax(h);
  const NodeId mixed = tape.mul(p, lp);
  const NodeId gathered = tape.row_gather(tape.pad_cols(mixed, 1), {1, 0, 1});
  const NodeId safe = tape.log_plus(tape.add_scalar(p, 0.5), 0.25);
  const NodeId lae = tape.log_add_exp(tape.scale(h, -0.5), safe);
  const NodeId loss = tape.add(tape.mean(gathered),
                               tape.add(tape.sum(tape.row_sum(lae)),
                                        tape.mean(safe)));
  tape.backward(loss);
  if (grads_out != nullptr) {
    *grads_out = {tape.grad(w), tape.grad(b)};
  }
  return tape.scalar_value(loss);
}

}  // namespace

TEST_CASE("composite graph passes a finite-difference check") {
  std::vector<Tensor> params = {
      Tensor::matrix(3, 3, {0.5, -0.3, 0.8, 0.1, 0.9, -0.6, -0.2, 0.4, 0.7}),
      Tensor::vector({0.05, -0.15, 0.25})};
  const GradCheckResult r = gradient_check(composite_fn, params, 1e-6, 1e-5);
  CHECK(r.passed);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("gradient_check flags a wrong gradient") {
  auto broken = [](const std::vector<Tensor>& params,
                   std::vector<Tensor>* grads_out) {
    Tape tape;
    const NodeId x = tape.param(params[0]);
    const NodeId y = tape.mean(tape.mul(x, x));
    tape.backward(y);
    if (grads_out != nullptr) {
      Tensor g = tape.grad(x);
      for (double& v : g.values) v *= 1.5;  // deliberately off by 50%
      *grads_out = {g};
    }
    return tape.scalar_value(y);
  };
  const GradCheckResult r =
      gradient_check(broken, {Tensor::vector({1.0, 2.0})}, 1e-6, 1e-4);
  CHECK(!r.passed);
}
