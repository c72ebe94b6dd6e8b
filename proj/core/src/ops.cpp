#include "sqlformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace sqlformer {

namespace {

// Grad buffer of an input, or nullptr when the input does not take gradients.
float* grad_ptr(const std::shared_ptr<TensorImpl>& t) {
  return t->grad.empty() ? nullptr : t->grad.data();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

constexpr float kFullyMaskedThreshold = kMaskNegInf * 0.5f;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  size_t n = a.numel();
  std::vector<float> out(n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];

  auto ia = a.impl();
  auto ib = b.impl();
  return make_op_result(a.shape(), std::move(out), "add", {a, b}, [ia, ib](TensorImpl& o) {
    const float* g = o.grad.data();
    size_t n = o.data.size();
    if (float* da = grad_ptr(ia)) {
      for (size_t i = 0; i < n; ++i) da[i] += g[i];
    }
    if (float* db = grad_ptr(ib)) {
      for (size_t i = 0; i < n; ++i) db[i] += g[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1) {
    throw ShapeError("add_bias: bias must be rank 1, got " + shape_str(bias.shape()));
  }
  int n = bias.dim(0);
  if (x.shape().empty() || x.shape().back() != n) {
    throw ShapeError("add_bias: last dim of " + shape_str(x.shape()) + " does not match bias " +
                     shape_str(bias.shape()));
  }
  size_t rows = x.numel() / static_cast<size_t>(n);
  std::vector<float> out(x.numel());
  const float* px = x.data().data();
  const float* pb = bias.data().data();
  for (size_t r = 0; r < rows; ++r) {
    for (int j = 0; j < n; ++j) out[r * n + j] = px[r * n + j] + pb[j];
  }

  auto ix = x.impl();
  auto ib = bias.impl();
  return make_op_result(x.shape(), std::move(out), "add_bias", {x, bias},
                        [ix, ib, rows, n](TensorImpl& o) {
                          const float* g = o.grad.data();
                          if (float* dx = grad_ptr(ix)) {
                            size_t total = o.data.size();
                            for (size_t i = 0; i < total; ++i) dx[i] += g[i];
                          }
                          if (float* db = grad_ptr(ib)) {
                            for (size_t r = 0; r < rows; ++r) {
                              for (int j = 0; j < n; ++j) db[j] += g[r * n + j];
                            }
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  size_t n = a.numel();
  std::vector<float> out(n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];

  auto ia = a.impl();
  auto ib = b.impl();
  return make_op_result(a.shape(), std::move(out), "mul", {a, b}, [ia, ib](TensorImpl& o) {
    const float* g = o.grad.data();
    size_t n = o.data.size();
    if (float* da = grad_ptr(ia)) {
      const float* pb = ib->data.data();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * pb[i];
    }
    if (float* db = grad_ptr(ib)) {
      const float* pa = ia->data.data();
      for (size_t i = 0; i < n; ++i) db[i] += g[i] * pa[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  size_t n = a.numel();
  std::vector<float> out(n);
  const float* pa = a.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] * s;

  auto ia = a.impl();
  return make_op_result(a.shape(), std::move(out), "scale", {a}, [ia, s](TensorImpl& o) {
    if (float* da = grad_ptr(ia)) {
      const float* g = o.grad.data();
      size_t n = o.data.size();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * s;
    }
  });
}

namespace {

// C[m x n] += or = A[m x k] * B[k x n]; accumulate selects +=.
void matmul_kernel(const float* a, const float* b, float* c, int m, int k, int n,
                   bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m x k] += dC[m x n] * B^T, dB[k x n] += A^T * dC.
void matmul_backward_kernel(const float* a, const float* b, const float* dc, float* da, float* db,
                            int m, int k, int n) {
  if (da) {
    for (int i = 0; i < m; ++i) {
      const float* dcrow = dc + static_cast<size_t>(i) * n;
      float* darow = da + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const float* brow = b + static_cast<size_t>(p) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += static_cast<double>(dcrow[j]) * brow[j];
        darow[p] += static_cast<float>(acc);
      }
    }
  }
  if (db) {
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<size_t>(i) * k;
      const float* dcrow = dc + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        float av = arow[p];
        if (av == 0.0f) continue;
        float* dbrow = db + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<size_t>(m) * n);
  matmul_kernel(a.data().data(), b.data().data(), out.data(), m, k, n, false);

  auto ia = a.impl();
  auto ib = b.impl();
  return make_op_result({m, n}, std::move(out), "matmul", {a, b},
                        [ia, ib, m, k, n](TensorImpl& o) {
                          matmul_backward_kernel(ia->data.data(), ib->data.data(), o.grad.data(),
                                                 grad_ptr(ia), grad_ptr(ib), m, k, n);
                        });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  int batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<float> out(static_cast<size_t>(batch) * m * n);
  for (int s = 0; s < batch; ++s) {
    matmul_kernel(a.data().data() + static_cast<size_t>(s) * m * k,
                  b.data().data() + static_cast<size_t>(s) * k * n,
                  out.data() + static_cast<size_t>(s) * m * n, m, k, n, false);
  }

  auto ia = a.impl();
  auto ib = b.impl();
  return make_op_result({batch, m, n}, std::move(out), "bmm", {a, b},
                        [ia, ib, batch, m, k, n](TensorImpl& o) {
                          float* da = grad_ptr(ia);
                          float* db = grad_ptr(ib);
                          for (int s = 0; s < batch; ++s) {
                            size_t ao = static_cast<size_t>(s) * m * k;
                            size_t bo = static_cast<size_t>(s) * k * n;
                            size_t co = static_cast<size_t>(s) * m * n;
                            matmul_backward_kernel(ia->data.data() + ao, ib->data.data() + bo,
                                                   o.grad.data() + co, da ? da + ao : nullptr,
                                                   db ? db + bo : nullptr, m, k, n);
                          }
                        });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  std::vector<float> out(a.numel());
  const float* p = a.data().data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = p[static_cast<size_t>(i) * n + j];
  }

  auto ia = a.impl();
  return make_op_result({n, m}, std::move(out), "transpose", {a}, [ia, m, n](TensorImpl& o) {
    if (float* da = grad_ptr(ia)) {
      const float* g = o.grad.data();
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < m; ++i) da[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
      }
    }
  });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() != 3) {
    throw ShapeError("transpose_last2: expected rank 3, got " + shape_str(a.shape()));
  }
  int batch = a.dim(0), m = a.dim(1), n = a.dim(2);
  std::vector<float> out(a.numel());
  const float* p = a.data().data();
  for (int s = 0; s < batch; ++s) {
    size_t off = static_cast<size_t>(s) * m * n;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) out[off + static_cast<size_t>(j) * m + i] = p[off + static_cast<size_t>(i) * n + j];
    }
  }

  auto ia = a.impl();
  return make_op_result({batch, n, m}, std::move(out), "transpose_last2", {a},
                        [ia, batch, m, n](TensorImpl& o) {
                          if (float* da = grad_ptr(ia)) {
                            const float* g = o.grad.data();
                            for (int s = 0; s < batch; ++s) {
                              size_t off = static_cast<size_t>(s) * m * n;
                              for (int j = 0; j < n; ++j) {
                                for (int i = 0; i < m; ++i) {
                                  da[off + static_cast<size_t>(i) * n + j] +=
                                      g[off + static_cast<size_t>(j) * m + i];
                                }
                              }
                            }
                          }
                        });
}

Tensor split_heads(const Tensor& x, int n_heads) {
  if (x.rank() != 2) throw ShapeError("split_heads: expected rank 2, got " + shape_str(x.shape()));
  int t = x.dim(0), d = x.dim(1);
  if (n_heads <= 0 || d % n_heads != 0) {
    throw ShapeError("split_heads: dim " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  int dk = d / n_heads;
  std::vector<float> out(x.numel());
  const float* p = x.data().data();
  for (int h = 0; h < n_heads; ++h) {
    for (int i = 0; i < t; ++i) {
      const float* src = p + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dk;
      float* dst = out.data() + (static_cast<size_t>(h) * t + i) * dk;
      std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(dk));
    }
  }

  auto ix = x.impl();
  return make_op_result({n_heads, t, dk}, std::move(out), "split_heads", {x},
                        [ix, n_heads, t, d, dk](TensorImpl& o) {
                          if (float* dx = grad_ptr(ix)) {
                            const float* g = o.grad.data();
                            for (int h = 0; h < n_heads; ++h) {
                              for (int i = 0; i < t; ++i) {
                                const float* src = g + (static_cast<size_t>(h) * t + i) * dk;
                                float* dst = dx + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dk;
                                for (int j = 0; j < dk; ++j) dst[j] += src[j];
                              }
                            }
                          }
                        });
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + shape_str(x.shape()));
  int n_heads = x.dim(0), t = x.dim(1), dk = x.dim(2);
  int d = n_heads * dk;
  std::vector<float> out(x.numel());
  const float* p = x.data().data();
  for (int h = 0; h < n_heads; ++h) {
    for (int i = 0; i < t; ++i) {
      const float* src = p + (static_cast<size_t>(h) * t + i) * dk;
      float* dst = out.data() + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dk;
      std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(dk));
    }
  }

  auto ix = x.impl();
  return make_op_result({t, d}, std::move(out), "merge_heads", {x},
                        [ix, n_heads, t, d, dk](TensorImpl& o) {
                          if (float* dx = grad_ptr(ix)) {
                            const float* g = o.grad.data();
                            for (int h = 0; h < n_heads; ++h) {
                              for (int i = 0; i < t; ++i) {
                                const float* src = g + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dk;
                                float* dst = dx + (static_cast<size_t>(h) * t + i) * dk;
                                for (int j = 0; j < dk; ++j) dst[j] += src[j];
                              }
                            }
                          }
                        });
}

namespace {

struct AxisLayout {
  size_t outer;
  int len;
  size_t inner;
};

AxisLayout axis_layout(const Shape& shape, int axis, const char* op) {
  int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " + shape_str(shape));
  }
  AxisLayout l{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) l.outer *= static_cast<size_t>(shape[static_cast<size_t>(i)]);
  for (int i = axis + 1; i < rank; ++i) l.inner *= static_cast<size_t>(shape[static_cast<size_t>(i)]);
  return l;
}

// Softmax over strided lines; shared by softmax and masked_softmax.
void softmax_lines(const float* in, float* out, const AxisLayout& l) {
  for (size_t o = 0; o < l.outer; ++o) {
    for (size_t i = 0; i < l.inner; ++i) {
      size_t base = o * static_cast<size_t>(l.len) * l.inner + i;
      float maxv = in[base];
      for (int k = 1; k < l.len; ++k) maxv = std::max(maxv, in[base + static_cast<size_t>(k) * l.inner]);
      double denom = 0.0;
      for (int k = 0; k < l.len; ++k) {
        float e = std::exp(in[base + static_cast<size_t>(k) * l.inner] - maxv);
        out[base + static_cast<size_t>(k) * l.inner] = e;
        denom += static_cast<double>(e);
      }
      float total = static_cast<float>(denom);
      for (int k = 0; k < l.len; ++k) out[base + static_cast<size_t>(k) * l.inner] /= total;
    }
  }
}

void softmax_backward_lines(const float* probs, const float* gout, float* gin,
                            const AxisLayout& l) {
  for (size_t o = 0; o < l.outer; ++o) {
    for (size_t i = 0; i < l.inner; ++i) {
      size_t base = o * static_cast<size_t>(l.len) * l.inner + i;
      double dot = 0.0;
      for (int k = 0; k < l.len; ++k) {
        size_t idx = base + static_cast<size_t>(k) * l.inner;
        dot += static_cast<double>(gout[idx]) * probs[idx];
      }
      for (int k = 0; k < l.len; ++k) {
        size_t idx = base + static_cast<size_t>(k) * l.inner;
        gin[idx] += probs[idx] * (gout[idx] - static_cast<float>(dot));
      }
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  AxisLayout l = axis_layout(x.shape(), axis, "softmax");
  std::vector<float> out(x.numel());
  softmax_lines(x.data().data(), out.data(), l);

  auto ix = x.impl();
  return make_op_result(x.shape(), std::move(out), "softmax", {x}, [ix, l](TensorImpl& o) {
    if (float* dx = grad_ptr(ix)) softmax_backward_lines(o.data.data(), o.grad.data(), dx, l);
  });
}

Tensor masked_softmax(const Tensor& scores, const Tensor& mask) {
  const Shape& ss = scores.shape();
  const Shape& ms = mask.shape();
  bool same = ss == ms;
  bool broadcast = scores.rank() == 3 && mask.rank() == 2 && ss[1] == ms[0] && ss[2] == ms[1];
  if (!same && !broadcast) {
    throw ShapeError("masked_softmax: mask " + shape_str(ms) + " does not apply to scores " +
                     shape_str(ss));
  }
  int cols = ss.back();
  size_t mask_rows = mask.numel() / static_cast<size_t>(cols);
  const float* pm = mask.data().data();
  for (size_t r = 0; r < mask_rows; ++r) {
    bool any_open = false;
    for (int j = 0; j < cols; ++j) {
      if (pm[r * cols + j] > kFullyMaskedThreshold) {
        any_open = true;
        break;
      }
    }
    if (!any_open) {
      throw NumericsError("masked_softmax: fully masked row " + std::to_string(r) +
                          " (no valid attention target)");
    }
  }

  size_t n = scores.numel();
  size_t mask_n = mask.numel();
  std::vector<float> masked(n);
  const float* psc = scores.data().data();
  for (size_t i = 0; i < n; ++i) masked[i] = psc[i] + pm[i % mask_n];

  AxisLayout l = axis_layout(ss, -1, "masked_softmax");
  std::vector<float> out(n);
  softmax_lines(masked.data(), out.data(), l);

  auto isc = scores.impl();
  return make_op_result(ss, std::move(out), "masked_softmax", {scores, mask},
                        [isc, l](TensorImpl& o) {
                          // d(scores) only; the mask is a constant.
                          if (float* dx = grad_ptr(isc)) {
                            softmax_backward_lines(o.data.data(), o.grad.data(), dx, l);
                          }
                        });
}

Tensor cross_entropy_masked(const Tensor& logits, std::span<const int> labels, int ignore_index) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy_masked: expected [T x V] logits, got " +
                     shape_str(logits.shape()));
  }
  int t_len = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int>(labels.size()) != t_len) {
    throw ShapeError("cross_entropy_masked: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(t_len) + " logit rows");
  }
  if (ignore_index >= 0 && ignore_index < vocab) {
    throw Error("cross_entropy_masked: ignore_index " + std::to_string(ignore_index) +
                " collides with vocabulary ids");
  }

  const float* p = logits.data().data();
  std::vector<float> lse(static_cast<size_t>(t_len), 0.0f);
  double acc = 0.0;
  int count = 0;
  for (int t = 0; t < t_len; ++t) {
    int label = labels[t];
    if (label == ignore_index) continue;
    if (label < 0 || label >= vocab) {
      throw Error("cross_entropy_masked: label " + std::to_string(label) + " at position " +
                  std::to_string(t) + " outside [0, " + std::to_string(vocab) + ")");
    }
    const float* row = p + static_cast<size_t>(t) * vocab;
    float maxv = row[0];
    for (int v = 1; v < vocab; ++v) maxv = std::max(maxv, row[v]);
    double denom = 0.0;
    for (int v = 0; v < vocab; ++v) denom += std::exp(static_cast<double>(row[v]) - maxv);
    float row_lse = maxv + static_cast<float>(std::log(denom));
    lse[static_cast<size_t>(t)] = row_lse;
    acc += static_cast<double>(row_lse) - row[label];
    ++count;
  }
  if (count == 0) throw NumericsError("cross_entropy_masked: no supervised positions");

  std::vector<int> saved_labels(labels.begin(), labels.end());
  auto il = logits.impl();
  return make_op_result(
      {1}, {static_cast<float>(acc / count)}, "cross_entropy_masked", {logits},
      [il, saved_labels = std::move(saved_labels), lse = std::move(lse), ignore_index, vocab,
       count](TensorImpl& o) {
        float* dl = grad_ptr(il);
        if (!dl) return;
        float g = o.grad[0] / static_cast<float>(count);
        const float* p = il->data.data();
        for (size_t t = 0; t < saved_labels.size(); ++t) {
          int label = saved_labels[t];
          if (label == ignore_index) continue;  // exactly zero gradient at ignored rows
          const float* row = p + t * vocab;
          float* drow = dl + t * vocab;
          float row_lse = lse[t];
          for (int v = 0; v < vocab; ++v) {
            float prob = std::exp(row[v] - row_lse);
            drow[v] += (prob - (v == label ? 1.0f : 0.0f)) * g;
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != bias.dim(0)) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " must be equal rank-1 shapes");
  }
  int n = gain.dim(0);
  if (x.shape().empty() || x.shape().back() != n) {
    throw ShapeError("layer_norm: last dim of " + shape_str(x.shape()) + " does not match " +
                     shape_str(gain.shape()));
  }
  constexpr float kEps = 1e-5f;
  size_t rows = x.numel() / static_cast<size_t>(n);
  std::vector<float> out(x.numel());
  std::vector<float> mean(rows), rstd(rows);
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  const float* pb = bias.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* row = px + r * n;
    double m = 0.0;
    for (int j = 0; j < n; ++j) m += row[j];
    m /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = row[j] - m;
      var += d * d;
    }
    var /= n;
    float rs = 1.0f / std::sqrt(static_cast<float>(var) + kEps);
    mean[r] = static_cast<float>(m);
    rstd[r] = rs;
    float* orow = out.data() + r * n;
    for (int j = 0; j < n; ++j) {
      orow[j] = (row[j] - mean[r]) * rs * pg[j] + pb[j];
    }
  }

  auto ix = x.impl();
  auto ig = gain.impl();
  auto ib = bias.impl();
  return make_op_result(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [ix, ig, ib, mean = std::move(mean), rstd = std::move(rstd), rows, n](TensorImpl& o) {
        const float* g = o.grad.data();
        const float* px = ix->data.data();
        const float* pg = ig->data.data();
        float* dx = grad_ptr(ix);
        float* dg = grad_ptr(ig);
        float* db = grad_ptr(ib);
        for (size_t r = 0; r < rows; ++r) {
          const float* xrow = px + r * n;
          const float* grow = g + r * n;
          float rs = rstd[r], mu = mean[r];
          if (dg || db) {
            for (int j = 0; j < n; ++j) {
              float xhat = (xrow[j] - mu) * rs;
              if (dg) dg[j] += grow[j] * xhat;
              if (db) db[j] += grow[j];
            }
          }
          if (dx) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < n; ++j) {
              float xhat = (xrow[j] - mu) * rs;
              float dxhat = grow[j] * pg[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
            }
            float m1 = static_cast<float>(sum_dxhat / n);
            float m2 = static_cast<float>(sum_dxhat_xhat / n);
            float* dxrow = dx + r * n;
            for (int j = 0; j < n; ++j) {
              float xhat = (xrow[j] - mu) * rs;
              float dxhat = grow[j] * pg[j];
              dxrow[j] += rs * (dxhat - m1 - xhat * m2);
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  size_t n = x.numel();
  std::vector<float> out(n);
  const float* p = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = p[i] > 0.0f ? p[i] : 0.0f;

  auto ix = x.impl();
  return make_op_result(x.shape(), std::move(out), "relu", {x}, [ix](TensorImpl& o) {
    if (float* dx = grad_ptr(ix)) {
      const float* g = o.grad.data();
      const float* p = ix->data.data();
      size_t n = o.data.size();
      for (size_t i = 0; i < n; ++i) {
        if (p[i] > 0.0f) dx[i] += g[i];
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  constexpr float kCubic = 0.044715f;
  size_t n = x.numel();
  std::vector<float> out(n);
  const float* p = x.data().data();
  for (size_t i = 0; i < n; ++i) {
    float v = p[i];
    float inner = kSqrt2OverPi * (v + kCubic * v * v * v);
    out[i] = 0.5f * v * (1.0f + std::tanh(inner));
  }

  auto ix = x.impl();
  return make_op_result(x.shape(), std::move(out), "gelu", {x}, [ix](TensorImpl& o) {
    if (float* dx = grad_ptr(ix)) {
      const float* g = o.grad.data();
      const float* p = ix->data.data();
      size_t n = o.data.size();
      for (size_t i = 0; i < n; ++i) {
        float v = p[i];
        float inner = kSqrt2OverPi * (v + kCubic * v * v * v);
        float th = std::tanh(inner);
        float sech2 = 1.0f - th * th;
        float local = 0.5f * (1.0f + th) +
                      0.5f * v * sech2 * kSqrt2OverPi * (1.0f + 3.0f * kCubic * v * v);
        dx[i] += g[i] * local;
      }
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: expected [V x d] table, got " + shape_str(table.shape()));
  }
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id sequence");
  int vocab = table.dim(0), d = table.dim(1);
  std::vector<float> out(ids.size() * static_cast<size_t>(d));
  const float* p = table.data().data();
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= vocab) {
      throw Error("embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                  std::to_string(vocab) + ")");
    }
    std::memcpy(out.data() + i * d, p + static_cast<size_t>(id) * d, sizeof(float) * static_cast<size_t>(d));
  }

  std::vector<int> saved_ids(ids.begin(), ids.end());
  auto it = table.impl();
  return make_op_result({static_cast<int>(ids.size()), d}, std::move(out), "embedding_lookup",
                        {table}, [it, saved_ids = std::move(saved_ids), d](TensorImpl& o) {
                          if (float* dt = grad_ptr(it)) {
                            const float* g = o.grad.data();
                            for (size_t i = 0; i < saved_ids.size(); ++i) {
                              float* drow = dt + static_cast<size_t>(saved_ids[i]) * d;
                              const float* grow = g + i * d;
                              for (int j = 0; j < d; ++j) drow[j] += grow[j];
                            }
                          }
                        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_bias(matmul(x, w), bias);
}

Tensor dropout(const Tensor& x, float rate, Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw Error("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (rate == 0.0f) return x;
  size_t n = x.numel();
  float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> mask(n);
  for (size_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() >= static_cast<double>(rate) ? keep_scale : 0.0f;
  }
  std::vector<float> out(n);
  const float* p = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = p[i] * mask[i];

  auto ix = x.impl();
  return make_op_result(x.shape(), std::move(out), "dropout", {x},
                        [ix, mask = std::move(mask)](TensorImpl& o) {
                          if (float* dx = grad_ptr(ix)) {
                            const float* g = o.grad.data();
                            for (size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
                          }
                        });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;

  auto ix = x.impl();
  return make_op_result({1}, {static_cast<float>(acc)}, "sum", {x}, [ix](TensorImpl& o) {
    if (float* dx = grad_ptr(ix)) {
      float g = o.grad[0];
      for (size_t i = 0; i < ix->data.size(); ++i) dx[i] += g;
    }
  });
}

void log_softmax_row(std::span<const float> logits, std::span<float> out) {
  if (logits.empty() || logits.size() != out.size()) {
    throw ShapeError("log_softmax_row: size mismatch");
  }
  float maxv = logits[0];
  for (float v : logits) maxv = std::max(maxv, v);
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - maxv);
  float lse = maxv + static_cast<float>(std::log(denom));
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

}  // namespace sqlformer
