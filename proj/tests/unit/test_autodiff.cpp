// Copyright 2026 The rangefield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <functional>
#include <vector>

#include "rangefield/ad/grad_check.hpp"
#include "rangefield/ad/param.hpp"
#include "rangefield/ad/tape.hpp"
#include "rangefield/common.hpp"

using namespace rangefield;
using ad::Parameter;
using ad::Tape;
using ad::Value;

namespace {

// Fills a double parameter with values away from any activation kinks.
void fill_smooth(Parameter<double>& p, Pcg32& rng) {
  for (auto& v : p.data) {
    v = rng.uniform(-1.5, 1.5);
    if (std::abs(v) < 2e-2) v += (v >= 0 ? 4e-2 : -4e-2);
  }
}

double run_check(
    const std::function<Value<double>(Tape<double>&, Value<double>)>& body,
    int rows, int cols, uint64_t seed) {
  Parameter<double> p("p", rows, cols);
  Pcg32 rng(seed);
  fill_smooth(p, rng);
  std::vector<Parameter<double>*> params{&p};
  auto loss_fn = [&](bool with_backward) {
    Tape<double> tape;
    Value<double> leaf = tape.leaf(p);
    Value<double> loss = body(tape, leaf);
    const double value = loss.item();
    if (with_backward) tape.backward(loss);
    return value;
  };
  ad::GradCheckOptions opts;
  opts.seed = seed + 1;
  const auto report = ad::check_gradients(params, loss_fn, opts);
  return report.max_rel_error;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape<float> t;
  Value<float> x = t.alloc(1, 3, false);
  Value<float> y = ad::softmax(x);
  for (int j = 0; j < 3; ++j)
    CHECK(y.data()[size_t(j)] == doctest::Approx(1.0f / 3.0f));
}

TEST_CASE("hardswish boundary values") {
  Tape<float> t;
  Value<float> x = t.alloc(1, 2, false);
  x.data()[0] = 3.0f;
  x.data()[1] = -3.0f;
  Value<float> y = ad::hardswish(x);
  CHECK(y.data()[0] == doctest::Approx(3.0f));
  CHECK(y.data()[1] == doctest::Approx(0.0f));
}

TEST_CASE("sigmoid derivative at zero via backward") {
  Tape<double> t;
  Value<double> x = t.alloc(1, 1, true);
  x.data()[0] = 0.0;
  Value<double> y = ad::sigmoid(x);
  t.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward populates simple gradients") {
  Parameter<double> p("p", 1, 3);
  p.data = {1.0, 2.0, -0.5};

  {
    Tape<double> t;
    Value<double> leaf = t.leaf(p);
    t.backward(ad::sum(leaf));
    CHECK(p.grad[0] == doctest::Approx(1.0));
    CHECK(p.grad[1] == doctest::Approx(1.0));
    CHECK(p.grad[2] == doctest::Approx(1.0));
  }

  p.zero_grad();
  p.data = {1.0, 2.0, 0.0};
  {
    Tape<double> t;
    Value<double> leaf = t.leaf(p);
    t.backward(ad::sum(ad::mul(leaf, leaf)));
    CHECK(p.grad[0] == doctest::Approx(2.0));
    CHECK(p.grad[1] == doctest::Approx(4.0));
    CHECK(p.grad[2] == doctest::Approx(0.0));
  }
}

TEST_CASE("parameters outside the graph keep zero gradients") {
  Parameter<double> used("used", 1, 2);
  Parameter<double> unused("unused", 1, 2);
  used.data = {1.0, 2.0};
  unused.data = {3.0, 4.0};
  Tape<double> t;
  Value<double> x = t.leaf(used);
  t.backward(ad::sum(ad::mul(x, x)));
  CHECK(used.grad[0] != 0.0);
  CHECK(unused.grad[0] == 0.0);
  CHECK(unused.grad[1] == 0.0);
}

TEST_CASE("second backward without rebuilding is rejected") {
  Tape<double> t;
  Value<double> x = t.alloc(1, 1, true);
  x.data()[0] = 2.0;
  Value<double> y = ad::mul(x, x);
  t.backward(y);
  CHECK_THROWS_AS(t.backward(y), NumericError);
}

TEST_CASE("non-scalar loss is rejected") {
  Tape<double> t;
  Value<double> x = t.alloc(2, 2, true);
  CHECK_THROWS_AS(t.backward(x), NonScalarLoss);
}

TEST_CASE("shape mismatch names both shapes") {
  Tape<double> t;
  Value<double> a = t.alloc(2, 3, false);
  Value<double> b = t.alloc(4, 5, false);
  try {
    ad::add(a, b);
    FAIL("expected ShapeMismatch");
  } catch (const ShapeMismatch& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2x3)") != std::string::npos);
    CHECK(msg.find("(4x5)") != std::string::npos);
  }
}

TEST_CASE("every differentiable op passes finite-difference checks") {
  using Body = std::function<Value<double>(Tape<double>&, Value<double>)>;
  struct OpCase {
    const char* name;
    int rows, cols;
    Body body;
  };

  auto aux_const = [](Tape<double>& t, int rows, int cols, uint64_t seed) {
    Value<double> c = t.alloc(rows, cols, false);
    Pcg32 rng(seed);
    for (auto& v : c.data()) v = rng.uniform(0.2, 1.2);
    return c;
  };

  const std::vector<OpCase> cases = {
      {"add", 3, 4,
       [&](Tape<double>& t, Value<double> x) {
         return ad::sum(ad::add(x, aux_const(t, 3, 4, 21)));
       }},
      {"add_row_broadcast", 3, 4,
       [&](Tape<double>& t, Value<double> x) {
         Value<double> full = t.alloc(5, 4, false);
         Pcg32 rng(77);
         for (auto& v : full.data()) v = rng.uniform(-1.0, 1.0);
         // x enters through the broadcast side as well.
         Value<double> row = ad::slice_cols(x, 0, 4);
         (void)row;
         return ad::sum(ad::mul(ad::add(full, ad::gather_rows(x, std::vector<int>{1})),
                                aux_const(t, 5, 4, 22)));
       }},
      {"sub_scalar_broadcast", 2, 3,
       [&](Tape<double>& t, Value<double> x) {
         Value<double> s = t.alloc(1, 1, false);
         s.data()[0] = 0.37;
         return ad::sum(ad::mul(ad::sub(x, s), x));
       }},
      {"mul", 3, 4,
       [&](Tape<double>& t, Value<double> x) {
         return ad::sum(ad::mul(x, aux_const(t, 3, 4, 23)));
       }},
      {"scale", 2, 5,
       [&](Tape<double>&, Value<double> x) {
         return ad::sum(ad::scale(x, 2.5));
       }},
      {"mul_const", 2, 5,
       [&](Tape<double>&, Value<double> x) {
         std::vector<double> k(10);
         Pcg32 rng(31);
         for (auto& v : k) v = rng.uniform(-2.0, 2.0);
         return ad::sum(ad::mul_const(x, std::span<const double>(k)));
       }},
      {"matmul_lhs", 3, 4,
       [&](Tape<double>& t, Value<double> x) {
         return ad::sum(ad::matmul(x, aux_const(t, 4, 2, 24)));
       }},
      {"matmul_rhs", 4, 2,
       [&](Tape<double>& t, Value<double> x) {
         return ad::sum(ad::matmul(aux_const(t, 3, 4, 25), x));
       }},
      {"neg_exp_log", 2, 3,
       [&](Tape<double>& t, Value<double> x) {
         Value<double> pos = ad::add(ad::mul(x, x), aux_const(t, 2, 3, 26));
         return ad::sum(ad::vlog(pos));
       }},
      {"exp", 2, 3,
       [&](Tape<double>&, Value<double> x) { return ad::sum(ad::vexp(x)); }},
      {"sin_cos", 2, 3,
       [&](Tape<double>&, Value<double> x) {
         return ad::sum(ad::mul(ad::vsin(x), ad::vcos(x)));
       }},
      {"relu", 3, 3,
       [&](Tape<double>&, Value<double> x) { return ad::sum(ad::relu(x)); }},
      {"hardswish", 3, 3,
       [&](Tape<double>&, Value<double> x) {
         return ad::sum(ad::hardswish(x));
       }},
      {"sigmoid", 2, 4,
       [&](Tape<double>&, Value<double> x) {
         return ad::sum(ad::sigmoid(x));
       }},
      {"softplus", 2, 4,
       [&](Tape<double>&, Value<double> x) {
         return ad::sum(ad::softplus(x));
       }},
      {"abs", 2, 4,
       [&](Tape<double>&, Value<double> x) { return ad::sum(ad::vabs(x)); }},
      {"softmax", 3, 5,
       [&](Tape<double>& t, Value<double> x) {
         return ad::sum(ad::mul(ad::softmax(x), aux_const(t, 3, 5, 27)));
       }},
      {"log_softmax", 3, 5,
       [&](Tape<double>& t, Value<double> x) {
         return ad::sum(ad::mul(ad::log_softmax(x), aux_const(t, 3, 5, 28)));
       }},
      {"mean", 3, 5,
       [&](Tape<double>&, Value<double> x) { return ad::mean(x); }},
      {"concat_cols", 3, 4,
       [&](Tape<double>& t, Value<double> x) {
         Value<double> c = aux_const(t, 3, 2, 29);
         Value<double> cat = ad::concat_cols<double>({x, c, x});
         return ad::sum(ad::mul(cat, cat));
       }},
      {"concat_rows", 2, 4,
       [&](Tape<double>& t, Value<double> x) {
         Value<double> c = aux_const(t, 3, 4, 30);
         Value<double> cat = ad::concat_rows<double>(
             std::vector<Value<double>>{x, c});
         return ad::sum(ad::mul(cat, cat));
       }},
      {"slice_cols", 3, 6,
       [&](Tape<double>&, Value<double> x) {
         Value<double> s = ad::slice_cols(x, 1, 4);
         return ad::sum(ad::mul(s, s));
       }},
      {"gather_rows", 5, 3,
       [&](Tape<double>&, Value<double> x) {
         std::vector<int> idx{0, 2, 2, 4};
         Value<double> g = ad::gather_rows(x, std::span<const int>(idx));
         return ad::sum(ad::mul(g, g));
       }},
      {"repeat_rows", 3, 2,
       [&](Tape<double>&, Value<double> x) {
         Value<double> r = ad::repeat_rows(x, 3);
         return ad::sum(ad::mul(r, r));
       }},
      {"segment_sum", 6, 2,
       [&](Tape<double>&, Value<double> x) {
         Value<double> s = ad::segment_sum(x, 2, 3);
         return ad::sum(ad::mul(s, s));
       }},
      {"scale_rows", 4, 3,
       [&](Tape<double>&, Value<double> x) {
         Value<double> s = ad::slice_cols(x, 0, 1);
         return ad::sum(ad::scale_rows(x, s));
       }},
      {"select_col", 4, 3,
       [&](Tape<double>&, Value<double> x) {
         std::vector<int> idx{0, 2, 1, 0};
         Value<double> s = ad::select_col(x, std::span<const int>(idx));
         return ad::sum(ad::mul(s, s));
       }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed)
      worst = std::max(worst, run_check(c.body, c.rows, c.cols, seed * 13 + 5));
    CHECK_MESSAGE(worst < 1e-3, c.name, " max rel err ", worst);
  }
}

TEST_CASE("check_gradients on a smooth quadratic is tight") {
  Parameter<double> p("q", 2, 3);
  Pcg32 rng(5);
  fill_smooth(p, rng);
  std::vector<Parameter<double>*> params{&p};
  auto loss_fn = [&](bool with_backward) {
    Tape<double> t;
    Value<double> x = t.leaf(p);
    Value<double> loss = ad::sum(ad::mul(x, x));
    const double v = loss.item();
    if (with_backward) t.backward(loss);
    return v;
  };
  const auto report = ad::check_gradients(params, loss_fn);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("check_gradients flags a corrupted backward rule") {
  Parameter<double> p("bad", 2, 2);
  Pcg32 rng(6);
  fill_smooth(p, rng);
  std::vector<Parameter<double>*> params{&p};
  auto loss_fn = [&](bool with_backward) {
    Tape<double> t;
    Value<double> x = t.leaf(p);
    Value<double> loss = ad::sum(ad::mul(x, x));
    const double v = loss.item();
    if (with_backward) {
      t.backward(loss);
      // Deliberate corruption standing in for a wrong backward rule.
      p.grad[0] *= 1.5;
    }
    return v;
  };
  const auto report = ad::check_gradients(params, loss_fn);
  CHECK(!report.passed());
}

TEST_CASE("relu check passes when inputs are nudged off the kink") {
  // fill_smooth keeps every entry at least 2e-2 from zero, so the
  // central difference never straddles the nondifferentiable point.
  const double err = run_check(
      [](Tape<double>&, Value<double> x) { return ad::sum(ad::relu(x)); }, 4,
      4, 99);
  CHECK(err < 1e-3);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Parameter<float> p("p", 1, 4);
  p.data = {1.0f, -2.0f, 3.0f, 0.5f};
  const auto before = p.data;
  std::vector<Parameter<float>*> params{&p};
  ad::AdamConfig cfg;
  ad::adam_step(params, cfg);
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(p.data[i] == doctest::Approx(before[i]).epsilon(1e-7));
}

TEST_CASE("adam: single bias-corrected step from rest") {
  Parameter<float> p("p", 1, 1);
  p.data = {0.0f};
  p.grad = {1.0f};
  std::vector<Parameter<float>*> params{&p};
  ad::AdamConfig cfg;
  cfg.learning_rate = 0.1;
  ad::adam_step(params, cfg);
  // m_hat = v_hat = 1 after bias correction, so the step is -lr/(1+eps).
  CHECK(p.data[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.grad[0] == 0.0f);  // cleared
}

TEST_CASE("adam: constant gradient approaches lr-sized steps") {
  Parameter<float> p("p", 1, 1);
  p.data = {10.0f};
  std::vector<Parameter<float>*> params{&p};
  ad::AdamConfig cfg;
  cfg.learning_rate = 0.01;
  float prev = p.data[0];
  float last_step = 0.0f;
  for (int i = 0; i < 500; ++i) {
    p.grad[0] = 2.0f;
    ad::adam_step(params, cfg);
    last_step = prev - p.data[0];
    prev = p.data[0];
  }
  CHECK(last_step == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("forward results are deterministic for a fixed seed") {
  auto run = [] {
    Parameter<float> p("p", 4, 4);
    Pcg32 rng(123);
    p.fill_uniform(rng, -1.0, 1.0);
    Tape<float> t;
    Value<float> x = t.leaf(p);
    Value<float> y = ad::softmax(ad::matmul(ad::sigmoid(x), x));
    std::vector<float> out(y.data().begin(), y.data().end());
    return out;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
}

TEST_CASE("no-grad tape skips gradient machinery") {
  Parameter<float> p("p", 2, 2);
  p.data = {1.0f, 2.0f, 3.0f, 4.0f};
  Tape<float> t;
  t.set_grad_enabled(false);
  Value<float> x = t.leaf(p);
  Value<float> y = ad::sum(ad::mul(x, x));
  CHECK(y.item() == doctest::Approx(30.0f));
  CHECK(!y.requires_grad());
}
