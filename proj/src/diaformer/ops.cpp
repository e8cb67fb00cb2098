// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace diaformer::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Tensor make_result(Shape shape, std::vector<real> values,
                   std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " +
                           shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat offset into an operand of shape `in` for every flat index of `out`
// (right-aligned broadcasting).
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t total = numel(out);
  std::vector<std::size_t> offsets(total);
  const std::size_t rank = out.size();
  std::vector<std::size_t> in_strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t axis = i + (rank - in.size());
    in_strides[axis] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < rank; ++a) off += index[a] * in_strides[a];
    offsets[flat] = off;
    for (std::size_t a = rank; a-- > 0;) {
      if (++index[a] < out[a]) break;
      index[a] = 0;
    }
  }
  return offsets;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, const char* name,
                        Forward fwd, GradA grad_a, GradB grad_b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
  const std::size_t total = numel(out_shape);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;

  // Offsets are only materialized for the general case.
  std::vector<std::size_t> a_off, b_off;
  enum class Mode { Same, BSuffix, ASuffix, General } mode;
  if (a.shape() == b.shape()) {
    mode = Mode::Same;
  } else if (a.shape() == out_shape && is_suffix(b.shape(), out_shape)) {
    mode = Mode::BSuffix;
  } else if (b.shape() == out_shape && is_suffix(a.shape(), out_shape)) {
    mode = Mode::ASuffix;
  } else {
    mode = Mode::General;
    a_off = broadcast_offsets(out_shape, a.shape());
    b_off = broadcast_offsets(out_shape, b.shape());
  }
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  auto ia = [=, &a_off](std::size_t i) {
    switch (mode) {
      case Mode::Same:
      case Mode::BSuffix: return i;
      case Mode::ASuffix: return i % na;
      default: return a_off[i];
    }
  };
  auto ib = [=, &b_off](std::size_t i) {
    switch (mode) {
      case Mode::Same:
      case Mode::ASuffix: return i;
      case Mode::BSuffix: return i % nb;
      default: return b_off[i];
    }
  };

  std::vector<real> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = fwd(av[ia(i)], bv[ib(i)]);

  auto an = a.node();
  auto bn = b.node();
  return make_result(
      out_shape, std::move(out), {an, bn},
      [an, bn, mode, na, nb, a_off = std::move(a_off), b_off = std::move(b_off),
       grad_a, grad_b](Node& self) {
        auto map_a = [&](std::size_t i) {
          return mode == Mode::General ? a_off[i]
                 : mode == Mode::ASuffix ? i % na
                                         : i;
        };
        auto map_b = [&](std::size_t i) {
          return mode == Mode::General ? b_off[i]
                 : mode == Mode::BSuffix ? i % nb
                                         : i;
        };
        const auto& g = self.grad;
        if (an->requires_grad) {
          auto& ga = an->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[map_a(i)] += grad_a(g[i], an->value[map_a(i)], bn->value[map_b(i)]);
          }
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[map_b(i)] += grad_b(g[i], an->value[map_a(i)], bn->value[map_b(i)]);
          }
        }
      });
}

void require_rank(const Tensor& t, std::size_t min_rank, const char* op) {
  if (t.rank() < min_rank) {
    throw DimensionError(std::string(op) + ": needs rank >= " +
                         std::to_string(min_rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(as) +
                         " and " + shape_str(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(a_batch, b_batch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions of " + shape_str(as) + " and " +
                         shape_str(bs) + " do not broadcast");
  }
  const std::size_t batches = numel(batch);
  std::vector<std::size_t> a_off = broadcast_offsets(batch, a_batch);
  std::vector<std::size_t> b_off = broadcast_offsets(batch, b_batch);
  for (auto& o : a_off) o *= m * k;
  for (auto& o : b_off) o *= k * n;

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<real> out(batches * m * n, real{0});
  const real* A = a.node()->value.data();
  const real* B = b.node()->value.data();
  for (std::size_t t = 0; t < batches; ++t) {
    const real* Ab = A + a_off[t];
    const real* Bb = B + b_off[t];
    real* Cb = out.data() + t * m * n;
    // Four rows of C at a time so each row of B is loaded once per block.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      real* __restrict c0 = Cb + i * n;
      real* __restrict c1 = c0 + n;
      real* __restrict c2 = c1 + n;
      real* __restrict c3 = c2 + n;
      for (std::size_t p = 0; p < k; ++p) {
        const real a0 = Ab[i * k + p], a1 = Ab[(i + 1) * k + p];
        const real a2 = Ab[(i + 2) * k + p], a3 = Ab[(i + 3) * k + p];
        const real* __restrict brow = Bb + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          const real b = brow[j];
          c0[j] += a0 * b;
          c1[j] += a1 * b;
          c2[j] += a2 * b;
          c3[j] += a3 * b;
        }
      }
    }
    for (; i < m; ++i) {
      real* __restrict crow = Cb + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const real aip = Ab[i * k + p];
        const real* __restrict brow = Bb + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }

  auto an = a.node();
  auto bn = b.node();
  return make_result(
      std::move(out_shape), std::move(out), {an, bn},
      [an, bn, m, k, n, batches, a_off = std::move(a_off),
       b_off = std::move(b_off)](Node& self) {
        const real* G = self.grad.data();
        const real* A = an->value.data();
        const real* B = bn->value.data();
        real* GA = an->requires_grad ? an->grad_buffer().data() : nullptr;
        real* GB = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
        std::vector<real> bt;
        for (std::size_t t = 0; t < batches; ++t) {
          const real* Gb = G + t * m * n;
          if (GA) {
            // dA = dC * B^T, accumulated row-wise against a transposed copy of B
            const real* Bb = B + b_off[t];
            bt.resize(k * n);
            for (std::size_t p = 0; p < k; ++p) {
              for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = Bb[p * n + j];
            }
            real* GAb = GA + a_off[t];
            for (std::size_t i = 0; i < m; ++i) {
              const real* grow = Gb + i * n;
              real* garow = GAb + i * k;
              for (std::size_t j = 0; j < n; ++j) {
                const real g = grow[j];
                if (g == real{0}) continue;
                const real* btrow = bt.data() + j * k;
                for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
              }
            }
          }
          if (GB) {
            // dB = A^T * dC
            const real* Ab = A + a_off[t];
            real* GBb = GB + b_off[t];
            for (std::size_t i = 0; i < m; ++i) {
              const real* grow = Gb + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                const real aip = Ab[i * k + p];
                if (aip == real{0}) continue;
                real* gbrow = GBb + p * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
              }
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  Shape s = a.shape();
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  std::swap(s[s.size() - 2], s.back());
  const std::size_t batches = a.size() / (r * c);
  const auto& v = a.node()->value;
  std::vector<real> out(v.size());
  for (std::size_t t = 0; t < batches; ++t) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        out[t * r * c + j * r + i] = v[t * r * c + i * c + j];
      }
    }
  }
  auto an = a.node();
  return make_result(std::move(s), std::move(out), {an},
                     [an, r, c, batches](Node& self) {
                       auto& ga = an->grad_buffer();
                       for (std::size_t t = 0; t < batches; ++t) {
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) {
                             ga[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
                           }
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, "add", [](real x, real y) { return x + y; },
      [](real g, real, real) { return g; }, [](real g, real, real) { return g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      a, b, "mul", [](real x, real y) { return x * y; },
      [](real g, real, real y) { return g * y; },
      [](real g, real x, real) { return g * x; });
}

Tensor scale(const Tensor& a, real factor) {
  std::vector<real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {an}, [an, factor](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  constexpr real kInvSqrt2 = static_cast<real>(0.70710678118654752440);
  constexpr real kInvSqrt2Pi = static_cast<real>(0.39894228040143267794);
  const auto& xv = x.node()->value;
  std::vector<real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = real{0.5} * xv[i] * (real{1} + std::erf(xv[i] * kInvSqrt2));
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, [xn](Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const real v = xn->value[i];
      const real cdf = real{0.5} * (real{1} + std::erf(v * kInvSqrt2));
      const real pdf = kInvSqrt2Pi * std::exp(real{-0.5} * v * v);
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor masked_softmax(const Tensor& scores, const Tensor& mask) {
  require_rank(scores, 1, "masked_softmax");
  const Shape& s = scores.shape();
  const Shape& ms = mask.shape();
  if (!is_suffix(ms, s) || ms.empty()) {
    throw DimensionError("masked_softmax: mask " + shape_str(ms) +
                         " does not match trailing dimensions of scores " +
                         shape_str(s));
  }
  const std::size_t k = s.back();
  const std::size_t rows = scores.size() / k;
  const std::size_t mask_rows = mask.size() / k;
  const auto& sv = scores.node()->value;
  const auto& mv = mask.node()->value;
  std::vector<real> out(sv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* srow = sv.data() + r * k;
    const real* mrow = mv.data() + (r % mask_rows) * k;
    real* orow = out.data() + r * k;
    real mx = -std::numeric_limits<real>::infinity();
    bool any_visible = false;
    for (std::size_t j = 0; j < k; ++j) {
      any_visible = any_visible || mrow[j] > kMaskedScore / 2;
      mx = std::max(mx, srow[j] + mrow[j]);
    }
    if (!any_visible) {
      throw std::invalid_argument("masked_softmax: row " + std::to_string(r) +
                                  " has every key masked");
    }
    real total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      orow[j] = std::exp(srow[j] + mrow[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < k; ++j) orow[j] /= total;
  }
  auto sn = scores.node();
  auto yv = std::make_shared<std::vector<real>>(out);
  return make_result(s, std::move(out), {sn}, [sn, k, rows, yv](Node& self) {
    auto& gs = sn->grad_buffer();
    const auto& y = *yv;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * k;
      real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += y[base + j] * self.grad[base + j];
      for (std::size_t j = 0; j < k; ++j) {
        gs[base + j] += y[base + j] * (self.grad[base + j] - dot);
      }
    }
  });
}

Tensor softmax(const Tensor& scores) {
  return masked_softmax(scores, Tensor::zeros({scores.shape().back()}));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  require_rank(x, 1, "layer_norm");
  const std::size_t h = x.shape().back();
  if (gain.shape() != Shape{h} || bias.shape() != Shape{h}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / h;
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<real> out(xv.size());
  auto xhat = std::make_shared<std::vector<real>>(xv.size());
  auto inv_std = std::make_shared<std::vector<real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = xv.data() + r * h;
    real mu = 0;
    for (std::size_t j = 0; j < h; ++j) mu += row[j];
    mu /= static_cast<real>(h);
    real var = 0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<real>(h);
    const real inv = real{1} / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < h; ++j) {
      const real xh = (row[j] - mu) * inv;
      (*xhat)[r * h + j] = xh;
      out[r * h + j] = xh * gv[j] + bv[j];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_result(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, h, rows, xhat, inv_std](Node& self) {
        const auto& g = self.grad;
        if (gn->requires_grad || bn->requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < h; ++j) {
              if (gn->requires_grad) gn->grad_buffer()[j] += g[r * h + j] * (*xhat)[r * h + j];
              if (bn->requires_grad) bn->grad_buffer()[j] += g[r * h + j];
            }
          }
        }
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        const auto& gv = gn->value;
        std::vector<real> dxhat(h);
        for (std::size_t r = 0; r < rows; ++r) {
          real mean_d = 0;
          real mean_dx = 0;
          for (std::size_t j = 0; j < h; ++j) {
            dxhat[j] = g[r * h + j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * (*xhat)[r * h + j];
          }
          mean_d /= static_cast<real>(h);
          mean_dx /= static_cast<real>(h);
          for (std::size_t j = 0; j < h; ++j) {
            gx[r * h + j] +=
                (*inv_std)[r] * (dxhat[j] - mean_d - (*xhat)[r * h + j] * mean_dx);
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding: table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  const std::size_t vocab = table.dim(0);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(vocab) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto xn = x.node();
  return make_result(std::move(shape), xn->value, {xn}, [xn](Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) {
    throw DimensionError("gather_rows: expected rank 2, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t h = x.dim(1);
  const auto& xv = x.node()->value;
  std::vector<real> out(rows.size() * h);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) +
                              " outside " + std::to_string(n) + " rows");
    }
    std::copy_n(xv.data() + rows[i] * h, h, out.data() + i * h);
  }
  auto xn = x.node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), h}, std::move(out), {xn},
                     [xn, h, idx = std::move(idx)](Node& self) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < h; ++j) {
                           gx[idx[i] * h + j] += self.grad[i * h + j];
                         }
                       }
                     });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) +
                         " into " + std::to_string(heads) + " heads");
  }
  const std::size_t t = x.dim(0);
  const std::size_t d = x.dim(1) / heads;
  const auto& xv = x.node()->value;
  std::vector<real> out(xv.size());
  for (std::size_t a = 0; a < heads; ++a) {
    for (std::size_t i = 0; i < t; ++i) {
      std::copy_n(xv.data() + i * heads * d + a * d, d, out.data() + (a * t + i) * d);
    }
  }
  auto xn = x.node();
  return make_result({heads, t, d}, std::move(out), {xn},
                     [xn, heads, t, d](Node& self) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t a = 0; a < heads; ++a) {
                         for (std::size_t i = 0; i < t; ++i) {
                           for (std::size_t e = 0; e < d; ++e) {
                             gx[i * heads * d + a * d + e] += self.grad[(a * t + i) * d + e];
                           }
                         }
                       }
                     });
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) {
    throw DimensionError("merge_heads: expected rank 3, got " + shape_str(x.shape()));
  }
  const std::size_t heads = x.dim(0);
  const std::size_t t = x.dim(1);
  const std::size_t d = x.dim(2);
  const auto& xv = x.node()->value;
  std::vector<real> out(xv.size());
  for (std::size_t a = 0; a < heads; ++a) {
    for (std::size_t i = 0; i < t; ++i) {
      std::copy_n(xv.data() + (a * t + i) * d, d, out.data() + i * heads * d + a * d);
    }
  }
  auto xn = x.node();
  return make_result({t, heads * d}, std::move(out), {xn},
                     [xn, heads, t, d](Node& self) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t a = 0; a < heads; ++a) {
                         for (std::size_t i = 0; i < t; ++i) {
                           for (std::size_t e = 0; e < d; ++e) {
                             gx[(a * t + i) * d + e] += self.grad[i * heads * d + a * d + e];
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, real p, std::mt19937_64& rng) {
  if (p <= real{0}) return x;
  if (p >= real{1}) throw std::invalid_argument("dropout: p must be < 1");
  const real keep_scale = real{1} / (real{1} - p);
  std::vector<real> keep(x.size());
  std::vector<real> out(x.size());
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    // 53-bit uniform in [0,1); independent of the standard library's
    // distribution implementation.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    keep[i] = u >= static_cast<double>(p) ? keep_scale : real{0};
    out[i] = xv[i] * keep[i];
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn},
                     [xn, keep = std::move(keep)](Node& self) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                         gx[i] += self.grad[i] * keep[i];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  real total = 0;
  for (real v : x.data()) total += v;
  auto xn = x.node();
  return make_result({}, {total}, {xn}, [xn](Node& self) {
    auto& gx = xn->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), real{1} / static_cast<real>(x.size()));
}

namespace {

real log_sum_exp(const real* z, std::size_t c) {
  real mx = -std::numeric_limits<real>::infinity();
  for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[j]);
  real total = 0;
  for (std::size_t j = 0; j < c; ++j) total += std::exp(z[j] - mx);
  return mx + std::log(total);
}

void check_class(int label, std::size_t classes, const char* op) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw std::out_of_range(std::string(op) + ": label " + std::to_string(label) +
                            " outside [0, " + std::to_string(classes) + ")");
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) {
    throw DimensionError("cross_entropy: expected rank-1 logits, got " +
                         shape_str(logits.shape()));
  }
  check_class(label, logits.size(), "cross_entropy");
  const std::size_t c = logits.size();
  const auto& z = logits.node()->value;
  const real lse = log_sum_exp(z.data(), c);
  auto zn = logits.node();
  return make_result({}, {lse - z[static_cast<std::size_t>(label)]}, {zn},
                     [zn, c, label, lse](Node& self) {
                       auto& gz = zn->grad_buffer();
                       for (std::size_t j = 0; j < c; ++j) {
                         const real p = std::exp(zn->value[j] - lse);
                         gz[j] += self.grad[0] *
                                  (p - (j == static_cast<std::size_t>(label) ? real{1} : real{0}));
                       }
                     });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy_rows: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  if (n == 0) throw DimensionError("cross_entropy_rows: no rows");
  const auto& z = logits.node()->value;
  std::vector<real> lse(n);
  real total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    check_class(labels[r], c, "cross_entropy_rows");
    lse[r] = log_sum_exp(z.data() + r * c, c);
    total += lse[r] - z[r * c + static_cast<std::size_t>(labels[r])];
  }
  auto zn = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<real>(n)}, {zn},
                     [zn, n, c, lse = std::move(lse), lab = std::move(lab)](Node& self) {
                       auto& gz = zn->grad_buffer();
                       const real g = self.grad[0] / static_cast<real>(n);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < c; ++j) {
                           const real p = std::exp(zn->value[r * c + j] - lse[r]);
                           const real y = j == static_cast<std::size_t>(lab[r]) ? real{1} : real{0};
                           gz[r * c + j] += g * (p - y);
                         }
                       }
                     });
}

namespace {

struct ConcurrentRow {
  real loss = 0;
  std::vector<real> dlogits;  // d loss / d z for this row
};

ConcurrentRow concurrent_row(const real* z, std::size_t c, std::span<const int> labels) {
  if (labels.empty()) {
    throw std::invalid_argument("concurrent_softmax_loss: empty label set");
  }
  std::vector<char> labelled(c, 0);
  for (int l : labels) {
    check_class(l, c, "concurrent_softmax_loss");
    if (labelled[static_cast<std::size_t>(l)]) {
      throw std::invalid_argument("concurrent_softmax_loss: duplicate label " +
                                  std::to_string(l));
    }
    labelled[static_cast<std::size_t>(l)] = 1;
  }

  // Shared unlabelled part of every denominator, relative to its own max.
  real u_max = -std::numeric_limits<real>::infinity();
  for (std::size_t j = 0; j < c; ++j) {
    if (!labelled[j]) u_max = std::max(u_max, z[j]);
  }
  const bool has_unlabelled = std::isfinite(u_max);
  real u_sum = 0;
  if (has_unlabelled) {
    for (std::size_t j = 0; j < c; ++j) {
      if (!labelled[j]) u_sum += std::exp(z[j] - u_max);
    }
  }

  const real inv_count = real{1} / static_cast<real>(labels.size());
  ConcurrentRow row;
  row.dlogits.assign(c, real{0});
  for (int l : labels) {
    const std::size_t i = static_cast<std::size_t>(l);
    real log_denominator = z[i];
    if (has_unlabelled) {
      const real m = std::max(u_max, z[i]);
      log_denominator = m + std::log(u_sum * std::exp(u_max - m) + std::exp(z[i] - m));
    }
    row.loss += (log_denominator - z[i]) * inv_count;
    const real sigma = std::exp(z[i] - log_denominator);
    row.dlogits[i] += (sigma - real{1}) * inv_count;
    if (has_unlabelled) {
      for (std::size_t j = 0; j < c; ++j) {
        if (!labelled[j]) row.dlogits[j] += std::exp(z[j] - log_denominator) * inv_count;
      }
    }
  }
  return row;
}

}  // namespace

Tensor concurrent_softmax_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 1) {
    throw DimensionError("concurrent_softmax_loss: expected rank-1 logits, got " +
                         shape_str(logits.shape()));
  }
  ConcurrentRow row = concurrent_row(logits.node()->value.data(), logits.size(), labels);
  auto zn = logits.node();
  return make_result({}, {row.loss}, {zn},
                     [zn, d = std::move(row.dlogits)](Node& self) {
                       auto& gz = zn->grad_buffer();
                       for (std::size_t j = 0; j < d.size(); ++j) gz[j] += self.grad[0] * d[j];
                     });
}

Tensor concurrent_softmax_loss_rows(const Tensor& logits,
                                    const std::vector<std::vector<int>>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw DimensionError("concurrent_softmax_loss_rows: logits " +
                         shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " label sets");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  const real* z = logits.node()->value.data();
  std::vector<real> d(n * c);
  real total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    ConcurrentRow row = concurrent_row(z + r * c, c, labels[r]);
    total += row.loss;
    std::copy(row.dlogits.begin(), row.dlogits.end(), d.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  auto zn = logits.node();
  const real inv_n = real{1} / static_cast<real>(n);
  return make_result({}, {total * inv_n}, {zn},
                     [zn, inv_n, d = std::move(d)](Node& self) {
                       auto& gz = zn->grad_buffer();
                       const real g = self.grad[0] * inv_n;
                       for (std::size_t j = 0; j < d.size(); ++j) gz[j] += g * d[j];
                     });
}

}  // namespace diaformer::ops
