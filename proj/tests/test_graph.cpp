#include <doctest.h>

#include <cmath>

#include "ipdfer/graph.hpp"
#include "ipdfer/rng.hpp"
#include "test_util.hpp"

using namespace ipdfer;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

Parameter make_param(const char* name, Tensor t) {
  Parameter p;
  p.name = name;
  p.value = std::move(t);
  p.grad = Tensor(p.value.dims());
  return p;
}

}  // namespace

TEST_CASE("elementwise op values") {
  Graph g;
  NodeId a = g.input(Tensor({2, 2}, {1.0, -2.0, 0.0, 3.0}));
  NodeId r = g.leaky_relu(a, 0.1);
  CHECK(g.value(r)[0] == doctest::Approx(1.0));
  CHECK(g.value(r)[1] == doctest::Approx(-0.2));
  CHECK(g.value(r)[2] == doctest::Approx(0.0));

  NodeId s = g.sigmoid(g.input(Tensor({1}, {0.0})));
  CHECK(g.value(s)[0] == doctest::Approx(0.5));

  NodeId sum = g.add(g.input(Tensor({2}, {1.0, 2.0})), g.input(Tensor({2}, {10.0, 20.0})));
  CHECK(g.value(sum)[0] == 11.0);
  CHECK(g.value(sum)[1] == 22.0);
}

TEST_CASE("three-way sum is exactly permutation invariant") {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    Tensor a = random_tensor({3}, rng, 1.0);
    Tensor b = random_tensor({3}, rng, 1e-8);
    Tensor c = random_tensor({3}, rng, 1.0);
    Graph g;
    Tensor abc = g.value(g.add3_commutative(g.input(a), g.input(b), g.input(c)));
    Tensor cba = g.value(g.add3_commutative(g.input(c), g.input(b), g.input(a)));
    Tensor bca = g.value(g.add3_commutative(g.input(b), g.input(c), g.input(a)));
    for (int i = 0; i < 3; ++i) {
      CHECK(abc[i] == cba[i]);
      CHECK(abc[i] == bca[i]);
    }
  }
  // The plain left-to-right order is not permutation invariant for these
  // values, which is exactly why the sorted sum exists.
  CHECK((0.1 + 0.2) + 0.3 != (0.3 + 0.2) + 0.1);
}

TEST_CASE("softmax rows") {
  Tensor logits({1, 4});
  Tensor p = softmax_rows(logits);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("cross entropy values") {
  Graph g;
  // zero logits, K=4 -> log 4
  NodeId ce = g.softmax_cross_entropy(g.input(Tensor({1, 4})), {2});
  CHECK(g.value(ce).item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  // labels out of range rejected
  Graph g2;
  CHECK_THROWS_AS(g2.softmax_cross_entropy(g2.input(Tensor({1, 4})), {4}), std::invalid_argument);
  CHECK_THROWS_AS(g2.softmax_cross_entropy(g2.input(Tensor({1, 4})), {-1}), std::invalid_argument);
}

TEST_CASE("uniform cross entropy at uniform logits equals log K") {
  Graph g;
  NodeId u = g.uniform_cross_entropy(g.input(Tensor({3, 5})));
  CHECK(g.value(u).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("conv spatial arithmetic") {
  Rng rng(3);
  Graph g;
  NodeId x = g.input(random_tensor({2, 3, 16, 16}, rng));
  Parameter w = make_param("w", random_tensor({5, 3, 3, 3}, rng));
  Parameter b = make_param("b", random_tensor({5}, rng));
  NodeId y = g.conv2d(x, g.param(w), g.param(b), 2, 1);
  CHECK(g.value(y).dims() == std::vector<int>{2, 5, 8, 8});

  Parameter dw = make_param("dw", random_tensor({3, 2, 4, 4}, rng));
  Parameter db = make_param("db", random_tensor({2}, rng));
  NodeId z = g.conv_transpose2d(x, g.param(dw), g.param(db), 2, 1);
  CHECK(g.value(z).dims() == std::vector<int>{2, 2, 32, 32});
}

TEST_CASE("gradients match central finite differences per op") {
  Rng rng(17);
  Tensor x = random_tensor({2, 2, 8, 8}, rng);
  Parameter cw = make_param("cw", random_tensor({4, 2, 3, 3}, rng));
  Parameter cb = make_param("cb", random_tensor({4}, rng));
  Parameter ng = make_param("ng", random_tensor({4}, rng, 0.2));
  Parameter nb = make_param("nb", random_tensor({4}, rng, 0.2));
  Parameter dw = make_param("dw", random_tensor({4, 3, 4, 4}, rng));
  Parameter db = make_param("db", random_tensor({3}, rng));
  Parameter lw = make_param("lw", random_tensor({5, 3}, rng));
  Parameter lb = make_param("lb", random_tensor({5}, rng));
  Tensor target = random_tensor({2, 3, 8, 8}, rng);
  Tensor other = random_tensor({2, 5}, rng);
  std::vector<int> labels{1, 3};
  ng.value.fill(1.1);

  auto build = [&](Graph& g) {
    NodeId xi = g.input(x);
    NodeId h = g.leaky_relu(g.conv2d(xi, g.param(cw), g.param(cb), 2, 1), 0.2);
    h = g.instance_norm(h, g.param(ng), g.param(nb));
    NodeId img = g.sigmoid(g.conv_transpose2d(h, g.param(dw), g.param(db), 2, 1));
    NodeId pool = g.global_avg_pool(img);
    NodeId logits = g.linear(pool, g.param(lw), g.param(lb));
    NodeId ce = g.softmax_cross_entropy(logits, labels);
    NodeId uce = g.uniform_cross_entropy(logits);
    NodeId l1 = g.mean(g.l1_per_sample(img, g.input(target)));
    NodeId mm = g.masked_mean(g.l1_per_sample(logits, g.input(other)), {1.0, 0.0});
    NodeId cosn = g.abs_cosine_mean(logits, g.input(other));
    NodeId a3 = g.mean(g.l1_per_sample(g.add3_commutative(pool, pool, pool), g.input(Tensor({2, 3}))));
    return g.weighted_sum({ce, uce, l1, mm, cosn, a3}, {1.0, 0.5, 2.0, 0.8, 1.5, 0.3});
  };

  std::vector<Parameter*> params{&cw, &cb, &ng, &nb, &dw, &db, &lw, &lb};
  for (Parameter* p : params) p->grad.fill(0.0);
  Graph g;
  g.backward(build(g));

  auto value = [&]() {
    Graph g2;
    return g2.value(build(g2)).item();
  };
  auto res = check_gradients(params, value, 8, 1e-5, 1e-4, rng);
  CHECK(res.tested == 64);
  CHECK(res.failed == 0);
}

TEST_CASE("gradient does not flow into frozen leaves") {
  Rng rng(23);
  Parameter frozen = make_param("frozen", random_tensor({3, 4}, rng));
  frozen.trainable = false;
  frozen.grad.fill(0.0);
  Parameter live = make_param("live", random_tensor({3, 4}, rng));
  live.grad.fill(0.0);

  Graph g;
  NodeId joined = g.add(g.param(frozen), g.param(live));
  g.backward(g.mean(g.l1_per_sample(joined, g.input(Tensor({3, 4})))));
  double frozen_sum = 0.0, live_sum = 0.0;
  for (int i = 0; i < 12; ++i) {
    frozen_sum += std::abs(frozen.grad[i]);
    live_sum += std::abs(live.grad[i]);
  }
  CHECK(frozen_sum == 0.0);
  CHECK(live_sum > 0.0);
}

TEST_CASE("shape mismatches are rejected") {
  Graph g;
  NodeId a = g.input(Tensor({2, 3}));
  NodeId b = g.input(Tensor({3, 2}));
  CHECK_THROWS_AS(g.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(g.l1_per_sample(a, b), std::invalid_argument);
  Parameter w = make_param("w", Tensor({4, 5}));
  CHECK_THROWS_AS(g.linear(a, g.param(w), g.input(Tensor({4}))), std::invalid_argument);
}
