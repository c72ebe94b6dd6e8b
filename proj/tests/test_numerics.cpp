#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "sqlformer/ops.hpp"
#include "sqlformer/tensor.hpp"
#include "sqlformer/tokenizer.hpp"
#include "test_support.hpp"

using namespace sqlformer;
using namespace testsupport;

namespace {

// Weighted-sum objective so every output element gets a distinct gradient.
Tensor weighted_sum(const Tensor& out, const std::vector<float>& weights) {
  Tensor w = Tensor::from(out.shape(), std::vector<float>(weights));
  return sum(mul(out, w));
}

double ref_weighted(const dvec& values, const std::vector<float>& weights) {
  double acc = 0.0;
  for (size_t i = 0; i < values.size(); ++i) acc += values[i] * weights[i];
  return acc;
}

void check_grad(std::span<const float> analytic, const dvec& fd, double rtol = 1e-4,
                double atol = 1e-6) {
  REQUIRE(analytic.size() == fd.size());
  for (size_t i = 0; i < fd.size(); ++i) {
    INFO("element ", i, ": analytic ", analytic[i], " vs fd ", fd[i]);
    CHECK(close(analytic[i], fd[i], rtol, atol));
  }
}

}  // namespace

TEST_CASE("matmul forward examples") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor prod = matmul(a, id);
  for (size_t i = 0; i < 4; ++i) CHECK(prod.data()[i] == a.data()[i]);

  Tensor b = Tensor::from({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.data()[0] == 17.0f);
  CHECK(c.data()[1] == 39.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::from({2, 3}, std::vector<float>(6, 0.0f));
  Tensor b = Tensor::from({2, 2}, std::vector<float>(4, 0.0f));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(A*B) w.r.t. A matches finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor loss_t = sum(matmul(a, b));
  backward(loss_t);

  dvec av = to_double(a.data());
  dvec bv = to_double(b.data());
  auto f = [&](const dvec& x) {
    dvec c = ref_matmul(x, bv, 3, 4, 2);
    double acc = 0.0;
    for (double v : c) acc += v;
    return acc;
  };
  check_grad(a.grad(), central_diff(f, av));
}

TEST_CASE("softmax basics") {
  Tensor x = Tensor::from({3}, {0, 0, 0});
  Tensor s = softmax(x, 0);
  for (float v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

  Tensor big = Tensor::from({2}, {1000.0f, 0.0f});
  Tensor sb = softmax(big, 0);
  CHECK(sb.data()[0] == doctest::Approx(1.0));
  CHECK(sb.data()[1] == doctest::Approx(0.0).epsilon(1e-30));
  for (float v : sb.data()) CHECK(std::isfinite(v));
}

TEST_CASE("softmax rows sum to one along every axis") {
  Rng rng(11);
  Tensor x = random_tensor({4, 5}, rng, -10.0, 10.0, false);
  for (int axis : {0, 1, -1}) {
    Tensor s = softmax(x, axis);
    int real_axis = axis < 0 ? 1 : axis;
    int lines = real_axis == 0 ? 5 : 4;
    int len = real_axis == 0 ? 4 : 5;
    for (int line = 0; line < lines; ++line) {
      double total = 0.0;
      for (int k = 0; k < len; ++k) {
        size_t idx = real_axis == 0 ? static_cast<size_t>(k) * 5 + line
                                    : static_cast<size_t>(line) * 5 + k;
        total += s.data()[idx];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax jacobian at [0.1 0.2 0.3] matches finite differences") {
  dvec x0 = {0.1, 0.2, 0.3};
  for (int out_idx = 0; out_idx < 3; ++out_idx) {
    Tensor x = Tensor::parameter({3}, {0.1f, 0.2f, 0.3f});
    std::vector<float> w(3, 0.0f);
    w[static_cast<size_t>(out_idx)] = 1.0f;
    backward(weighted_sum(softmax(x, 0), w));

    auto f = [&](const dvec& v) { return ref_softmax_rows(v, 1, 3)[static_cast<size_t>(out_idx)]; };
    check_grad(x.grad(), central_diff(f, x0));
  }
}

TEST_CASE("masked_softmax with all-zero mask equals softmax bitwise") {
  Rng rng(3);
  Tensor x = random_tensor({4, 4}, rng, -3.0, 3.0, false);
  Tensor mask = Tensor::zeros({4, 4});
  Tensor a = softmax(x, -1);
  Tensor b = masked_softmax(x, mask);
  CHECK(std::memcmp(a.data().data(), b.data().data(), sizeof(float) * a.numel()) == 0);
}

TEST_CASE("masked_softmax causal 2x2") {
  Tensor scores = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor mask = Tensor::from({2, 2}, {0, kMaskNegInf, 0, 0});
  Tensor p = masked_softmax(scores, mask);
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[1] == 0.0f);
  CHECK(p.data()[2] + p.data()[3] == doctest::Approx(1.0));
}

TEST_CASE("masked positions receive vanishing probability") {
  Rng rng(5);
  int t = 6;
  Tensor scores = random_tensor({t, t}, rng, -5.0, 5.0, false);
  std::vector<float> mask_data(static_cast<size_t>(t) * t, 0.0f);
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) mask_data[static_cast<size_t>(i) * t + j] = kMaskNegInf;
  }
  Tensor p = masked_softmax(scores, Tensor::from({t, t}, std::move(mask_data)));
  for (int i = 0; i < t; ++i) {
    double open = 0.0;
    for (int j = 0; j < t; ++j) {
      float v = p.data()[static_cast<size_t>(i) * t + j];
      if (j > i) {
        CHECK(v < 1e-30f);
      } else {
        open += v;
      }
    }
    CHECK(std::abs(open - 1.0) < 1e-6);
  }
}

TEST_CASE("masked_softmax rejects fully masked rows") {
  Tensor scores = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor mask = Tensor::from({2, 2}, {kMaskNegInf, kMaskNegInf, 0, 0});
  CHECK_THROWS_AS(masked_softmax(scores, mask), NumericsError);
}

TEST_CASE("cross entropy of uniform logits is ln V") {
  Tensor logits = Tensor::from({1, 4}, {0.5f, 0.5f, 0.5f, 0.5f});
  std::vector<int> labels = {2};
  Tensor loss_t = cross_entropy_masked(logits, labels, kIgnoreIndex);
  CHECK(loss_t.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("appending ignored positions changes nothing, exactly") {
  Rng rng(13);
  std::vector<float> base = random_floats(3 * 5, rng);
  std::vector<int> labels = {1, 4, 0};

  Tensor logits_a = Tensor::parameter({3, 5}, std::vector<float>(base));
  Tensor la = cross_entropy_masked(logits_a, labels, kIgnoreIndex);
  backward(la);

  std::vector<float> padded = base;
  std::vector<float> junk = random_floats(2 * 5, rng);
  padded.insert(padded.end(), junk.begin(), junk.end());
  std::vector<int> labels_padded = labels;
  labels_padded.push_back(kIgnoreIndex);
  labels_padded.push_back(kIgnoreIndex);

  Tensor logits_b = Tensor::parameter({5, 5}, std::move(padded));
  Tensor lb = cross_entropy_masked(logits_b, labels_padded, kIgnoreIndex);
  backward(lb);

  CHECK(la.item() == lb.item());  // bitwise
  for (size_t i = 0; i < 3 * 5; ++i) CHECK(logits_a.grad()[i] == logits_b.grad()[i]);
  // gradient at the appended (ignored) rows is exactly zero
  for (size_t i = 3 * 5; i < 5 * 5; ++i) CHECK(logits_b.grad()[i] == 0.0f);
}

TEST_CASE("cross entropy with every label ignored errors") {
  Tensor logits = Tensor::from({2, 4}, std::vector<float>(8, 0.0f));
  std::vector<int> labels = {kIgnoreIndex, kIgnoreIndex};
  CHECK_THROWS_WITH_AS(cross_entropy_masked(logits, labels, kIgnoreIndex),
                       doctest::Contains("no supervised positions"), NumericsError);
}

TEST_CASE("cross entropy rejects in-vocab ignore_index") {
  Tensor logits = Tensor::from({1, 4}, std::vector<float>(4, 0.0f));
  std::vector<int> labels = {1};
  CHECK_THROWS_AS(cross_entropy_masked(logits, labels, 2), Error);
}

TEST_CASE("finite-difference gradient check per primitive") {
  Rng rng(42);

  SUBCASE("add") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    auto w = random_floats(12, rng);
    backward(weighted_sum(add(a, b), w));
    dvec av = to_double(a.data()), bv = to_double(b.data());
    auto fa = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t i = 0; i < x.size(); ++i) acc += (x[i] + bv[i]) * w[i];
      return acc;
    };
    check_grad(a.grad(), central_diff(fa, av));
    auto fb = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t i = 0; i < x.size(); ++i) acc += (av[i] + x[i]) * w[i];
      return acc;
    };
    check_grad(b.grad(), central_diff(fb, bv));
  }

  SUBCASE("add_bias") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    auto w = random_floats(12, rng);
    backward(weighted_sum(add_bias(x, b), w));
    dvec xv = to_double(x.data()), bv = to_double(b.data());
    auto fb = [&](const dvec& bb) {
      double acc = 0.0;
      for (size_t r = 0; r < 3; ++r) {
        for (size_t j = 0; j < 4; ++j) acc += (xv[r * 4 + j] + bb[j]) * w[r * 4 + j];
      }
      return acc;
    };
    check_grad(b.grad(), central_diff(fb, bv));
  }

  SUBCASE("mul and scale") {
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 3}, rng);
    auto w = random_floats(6, rng);
    backward(weighted_sum(mul(a, b), w));
    dvec av = to_double(a.data()), bv = to_double(b.data());
    auto fa = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t i = 0; i < x.size(); ++i) acc += x[i] * bv[i] * w[i];
      return acc;
    };
    check_grad(a.grad(), central_diff(fa, av));

    Tensor c = random_tensor({5}, rng);
    auto wc = random_floats(5, rng);
    backward(weighted_sum(scale(c, 2.5f), wc));
    dvec cv = to_double(c.data());
    auto fc = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t i = 0; i < x.size(); ++i) acc += x[i] * 2.5 * wc[i];
      return acc;
    };
    check_grad(c.grad(), central_diff(fc, cv));
  }

  SUBCASE("matmul") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto w = random_floats(6, rng);
    backward(weighted_sum(matmul(a, b), w));
    dvec av = to_double(a.data()), bv = to_double(b.data());
    auto fa = [&](const dvec& x) { return ref_weighted(ref_matmul(x, bv, 3, 4, 2), w); };
    check_grad(a.grad(), central_diff(fa, av));
    auto fb = [&](const dvec& x) { return ref_weighted(ref_matmul(av, x, 3, 4, 2), w); };
    check_grad(b.grad(), central_diff(fb, bv));
  }

  SUBCASE("bmm") {
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 4, 2}, rng);
    auto w = random_floats(12, rng);
    backward(weighted_sum(bmm(a, b), w));
    dvec av = to_double(a.data()), bv = to_double(b.data());
    auto run = [&](const dvec& aa, const dvec& bb) {
      dvec out;
      for (int s = 0; s < 2; ++s) {
        dvec as(aa.begin() + s * 12, aa.begin() + (s + 1) * 12);
        dvec bs(bb.begin() + s * 8, bb.begin() + (s + 1) * 8);
        dvec cs = ref_matmul(as, bs, 3, 4, 2);
        out.insert(out.end(), cs.begin(), cs.end());
      }
      return out;
    };
    auto fa = [&](const dvec& x) { return ref_weighted(run(x, bv), w); };
    check_grad(a.grad(), central_diff(fa, av));
    auto fb = [&](const dvec& x) { return ref_weighted(run(av, x), w); };
    check_grad(b.grad(), central_diff(fb, bv));
  }

  SUBCASE("transpose, transpose_last2, split_heads, merge_heads") {
    Tensor a = random_tensor({3, 4}, rng);
    auto w = random_floats(12, rng);
    backward(weighted_sum(transpose(a), w));
    dvec av = to_double(a.data());
    auto ft = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 4; ++j) acc += x[i * 4 + j] * w[j * 3 + i];
      }
      return acc;
    };
    check_grad(a.grad(), central_diff(ft, av));

    Tensor b = random_tensor({2, 2, 3}, rng);
    auto wb = random_floats(12, rng);
    backward(weighted_sum(transpose_last2(b), wb));
    dvec bv = to_double(b.data());
    auto fb = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t s = 0; s < 2; ++s) {
        for (size_t i = 0; i < 2; ++i) {
          for (size_t j = 0; j < 3; ++j) acc += x[s * 6 + i * 3 + j] * wb[s * 6 + j * 2 + i];
        }
      }
      return acc;
    };
    check_grad(b.grad(), central_diff(fb, bv));

    Tensor c = random_tensor({3, 4}, rng);  // 2 heads of dk=2
    auto wc = random_floats(12, rng);
    backward(weighted_sum(split_heads(c, 2), wc));
    dvec cv = to_double(c.data());
    auto fc = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t h = 0; h < 2; ++h) {
        for (size_t t = 0; t < 3; ++t) {
          for (size_t j = 0; j < 2; ++j) {
            acc += x[t * 4 + h * 2 + j] * wc[(h * 3 + t) * 2 + j];
          }
        }
      }
      return acc;
    };
    check_grad(c.grad(), central_diff(fc, cv));

    Tensor d = random_tensor({2, 3, 2}, rng);
    auto wd = random_floats(12, rng);
    backward(weighted_sum(merge_heads(d), wd));
    dvec dv = to_double(d.data());
    auto fd = [&](const dvec& x) {
      double acc = 0.0;
      for (size_t h = 0; h < 2; ++h) {
        for (size_t t = 0; t < 3; ++t) {
          for (size_t j = 0; j < 2; ++j) {
            acc += x[(h * 3 + t) * 2 + j] * wd[t * 4 + h * 2 + j];
          }
        }
      }
      return acc;
    };
    check_grad(d.grad(), central_diff(fd, dv));
  }

  SUBCASE("softmax along both axes") {
    for (int axis : {0, 1}) {
      Tensor x = random_tensor({3, 4}, rng);
      auto w = random_floats(12, rng);
      backward(weighted_sum(softmax(x, axis), w));
      dvec xv = to_double(x.data());
      auto f = [&](const dvec& v) {
        dvec out;
        if (axis == 1) {
          out = ref_softmax_rows(v, 3, 4);
        } else {
          // transpose, softmax rows, transpose back
          dvec tr(12);
          for (size_t i = 0; i < 3; ++i) {
            for (size_t j = 0; j < 4; ++j) tr[j * 3 + i] = v[i * 4 + j];
          }
          dvec so = ref_softmax_rows(tr, 4, 3);
          out.resize(12);
          for (size_t i = 0; i < 3; ++i) {
            for (size_t j = 0; j < 4; ++j) out[i * 4 + j] = so[j * 3 + i];
          }
        }
        return ref_weighted(out, w);
      };
      check_grad(x.grad(), central_diff(f, xv));
    }
  }

  SUBCASE("masked_softmax") {
    Tensor x = random_tensor({3, 3}, rng);
    std::vector<float> mask_data = {0, kMaskNegInf, kMaskNegInf, 0, 0, kMaskNegInf, 0, 0, 0};
    Tensor mask = Tensor::from({3, 3}, std::vector<float>(mask_data));
    auto w = random_floats(9, rng);
    backward(weighted_sum(masked_softmax(x, mask), w));
    dvec xv = to_double(x.data());
    auto f = [&](const dvec& v) {
      dvec masked(v.size());
      for (size_t i = 0; i < v.size(); ++i) masked[i] = v[i] + mask_data[i];
      return ref_weighted(ref_softmax_rows(masked, 3, 3), w);
    };
    check_grad(x.grad(), central_diff(f, xv));
  }

  SUBCASE("cross_entropy_masked") {
    Tensor logits = random_tensor({4, 5}, rng);
    std::vector<int> labels = {2, kIgnoreIndex, 0, 4};
    Tensor loss_t = cross_entropy_masked(logits, labels, kIgnoreIndex);
    backward(loss_t);
    dvec lv = to_double(logits.data());
    auto f = [&](const dvec& v) { return ref_cross_entropy(v, labels, kIgnoreIndex, 5); };
    check_grad(logits.grad(), central_diff(f, lv));
  }

  SUBCASE("layer_norm") {
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor b = random_tensor({6}, rng);
    auto w = random_floats(18, rng);
    backward(weighted_sum(layer_norm(x, g, b), w));
    dvec xv = to_double(x.data()), gv = to_double(g.data()), bv = to_double(b.data());
    auto fx = [&](const dvec& v) { return ref_weighted(ref_layer_norm(v, gv, bv, 3, 6), w); };
    check_grad(x.grad(), central_diff(fx, xv), 1e-4, 1e-5);
    auto fg = [&](const dvec& v) { return ref_weighted(ref_layer_norm(xv, v, bv, 3, 6), w); };
    check_grad(g.grad(), central_diff(fg, gv), 1e-4, 1e-5);
    auto fb = [&](const dvec& v) { return ref_weighted(ref_layer_norm(xv, gv, v, 3, 6), w); };
    check_grad(b.grad(), central_diff(fb, bv), 1e-4, 1e-5);
  }

  SUBCASE("relu and gelu") {
    // keep values away from the relu kink where FD is undefined
    Tensor x = Tensor::parameter({6}, {-2.0f, -0.7f, -0.2f, 0.3f, 0.9f, 2.2f});
    auto w = random_floats(6, rng);
    backward(weighted_sum(relu(x), w));
    dvec xv = to_double(x.data());
    auto fr = [&](const dvec& v) {
      double acc = 0.0;
      for (size_t i = 0; i < v.size(); ++i) acc += (v[i] > 0 ? v[i] : 0.0) * w[i];
      return acc;
    };
    check_grad(x.grad(), central_diff(fr, xv));

    Tensor y = random_tensor({8}, rng, -3.0, 3.0);
    auto wy = random_floats(8, rng);
    backward(weighted_sum(gelu(y), wy));
    dvec yv = to_double(y.data());
    auto fg = [&](const dvec& v) {
      double acc = 0.0;
      for (size_t i = 0; i < v.size(); ++i) acc += ref_gelu_scalar(v[i]) * wy[i];
      return acc;
    };
    check_grad(y.grad(), central_diff(fg, yv));
  }

  SUBCASE("embedding_lookup") {
    Tensor table = random_tensor({6, 3}, rng);
    std::vector<int> ids = {1, 4, 1, 0};
    auto w = random_floats(12, rng);
    backward(weighted_sum(embedding_lookup(table, ids), w));
    dvec tv = to_double(table.data());
    auto f = [&](const dvec& v) {
      double acc = 0.0;
      for (size_t i = 0; i < ids.size(); ++i) {
        for (size_t j = 0; j < 3; ++j) {
          acc += v[static_cast<size_t>(ids[i]) * 3 + j] * w[i * 3 + j];
        }
      }
      return acc;
    };
    check_grad(table.grad(), central_diff(f, tv));
  }

  SUBCASE("linear") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor wgt = random_tensor({4, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    auto w = random_floats(6, rng);
    backward(weighted_sum(linear(x, wgt, b), w));
    dvec xv = to_double(x.data()), wv = to_double(wgt.data()), bv = to_double(b.data());
    auto run = [&](const dvec& xx, const dvec& ww, const dvec& bb) {
      dvec out = ref_matmul(xx, ww, 3, 4, 2);
      for (size_t r = 0; r < 3; ++r) {
        for (size_t j = 0; j < 2; ++j) out[r * 2 + j] += bb[j];
      }
      return ref_weighted(out, w);
    };
    auto fx = [&](const dvec& v) { return run(v, wv, bv); };
    check_grad(x.grad(), central_diff(fx, xv));
    auto fw = [&](const dvec& v) { return run(xv, v, bv); };
    check_grad(wgt.grad(), central_diff(fw, wv));
    auto fb = [&](const dvec& v) { return run(xv, wv, v); };
    check_grad(b.grad(), central_diff(fb, bv));
  }

  SUBCASE("dropout") {
    Tensor x = random_tensor({20}, rng, 0.5, 1.5);  // nonzero so the mask is recoverable
    Rng drop_rng(99);
    Tensor out = dropout(x, 0.4f, drop_rng);
    std::vector<float> mask(20);
    for (size_t i = 0; i < 20; ++i) mask[i] = out.data()[i] / x.data()[i];
    auto w = random_floats(20, rng);
    backward(weighted_sum(out, w));
    dvec xv = to_double(x.data());
    auto f = [&](const dvec& v) {
      double acc = 0.0;
      for (size_t i = 0; i < v.size(); ++i) acc += v[i] * mask[i] * w[i];
      return acc;
    };
    check_grad(x.grad(), central_diff(f, xv));
  }

  SUBCASE("sum") {
    Tensor x = random_tensor({7}, rng);
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
}

TEST_CASE("dropout outside training returns the input unchanged at rate 0") {
  Rng rng(1);
  Tensor x = random_tensor({4}, rng);
  Rng drop_rng(2);
  Tensor out = dropout(x, 0.0f, drop_rng);
  CHECK(out.impl().get() == x.impl().get());
  CHECK_THROWS_AS(dropout(x, 1.0f, drop_rng), Error);
}

TEST_CASE("single-use tape: backward twice is an error") {
  Rng rng(21);
  Tensor a = random_tensor({2, 2}, rng);
  Tensor l = sum(matmul(a, a));
  backward(l);
  CHECK_THROWS_AS(backward(l), TapeError);

  // a graph referencing consumed nodes is rejected too
  Tensor b = random_tensor({2, 2}, rng);
  Tensor mid = matmul(a, b);
  Tensor l2 = sum(mid);
  backward(l2);
  Tensor l3 = sum(mid);
  CHECK_THROWS_AS(backward(l3), TapeError);
}

TEST_CASE("backward requires a scalar root") {
  Rng rng(22);
  Tensor a = random_tensor({2, 2}, rng);
  Tensor m = matmul(a, a);
  CHECK_THROWS_AS(backward(m), TapeError);
}

TEST_CASE("non-finite op output is surfaced, not propagated") {
  Tensor nan_t = Tensor::from({2}, {std::nanf(""), 1.0f});
  Tensor zero = Tensor::zeros({2});
  CHECK_THROWS_AS(add(nan_t, zero), NumericsError);

  Tensor huge = Tensor::from({1, 1}, {3e38f});
  CHECK_THROWS_AS(matmul(huge, huge), NumericsError);  // overflow to inf
}

TEST_CASE("forward outputs stay finite for inputs in [-10, 10]") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({4, 4}, rng, -10.0, 10.0, false);
    Tensor b = random_tensor({4, 4}, rng, -10.0, 10.0, false);
    Tensor g = random_tensor({4}, rng, -10.0, 10.0, false);
    Tensor bias = random_tensor({4}, rng, -10.0, 10.0, false);
    CHECK_NOTHROW(matmul(a, b));
    CHECK_NOTHROW(softmax(a, -1));
    CHECK_NOTHROW(layer_norm(a, g, bias));
    CHECK_NOTHROW(gelu(a));
    CHECK_NOTHROW(relu(a));
    CHECK_NOTHROW(add(a, b));
    CHECK_NOTHROW(mul(a, b));
  }
}

TEST_CASE("no-grad mode records no tape") {
  Rng rng(41);
  Tensor a = random_tensor({2, 2}, rng);
  NoGradGuard guard;
  Tensor m = matmul(a, a);
  CHECK_FALSE(m.requires_grad());
  CHECK(m.impl()->node == nullptr);
}
