#include "lightformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "lightformer/rng.hpp"

namespace lightformer {

namespace {

using std::int64_t;

Tensor make_result(Shape shape, const std::vector<const Tensor*>& inputs) {
  bool rg = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  }
  Tensor out = Tensor::zeros(std::move(shape), rg);
  if (rg) {
    for (const Tensor* t : inputs) out.node()->parents.push_back(t->node());
  }
  return out;
}

// C[p x r] (+)= op(A) * op(B), all row-major. op(A) is [p x q].
void gemm(const double* a, const double* b, double* c, int64_t p, int64_t q,
          int64_t r, bool ta, bool tb, bool accumulate) {
  if (!accumulate) std::fill(c, c + p * r, 0.0);
  if (!ta && !tb) {
    for (int64_t i = 0; i < p; ++i) {
      for (int64_t k = 0; k < q; ++k) {
        const double aik = a[i * q + k];
        if (aik == 0.0) continue;
        const double* brow = b + k * r;
        double* crow = c + i * r;
        for (int64_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int64_t i = 0; i < p; ++i) {
      const double* arow = a + i * q;
      for (int64_t j = 0; j < r; ++j) {
        const double* brow = b + j * q;
        double acc = 0.0;
        for (int64_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
        c[i * r + j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int64_t k = 0; k < q; ++k) {
      const double* arow = a + k * p;
      const double* brow = b + k * r;
      for (int64_t i = 0; i < p; ++i) {
        const double aki = arow[i];
        if (aki == 0.0) continue;
        double* crow = c + i * r;
        for (int64_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
      }
    }
  } else {
    for (int64_t i = 0; i < p; ++i) {
      for (int64_t j = 0; j < r; ++j) {
        double acc = 0.0;
        for (int64_t k = 0; k < q; ++k) acc += a[k * p + i] * b[j * q + k];
        c[i * r + j] += acc;
      }
    }
  }
}

[[noreturn]] void matmul_shape_error(const Tensor& a, const Tensor& b,
                                     bool tb) {
  throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()) +
                   (tb ? " (transpose_b)" : ""));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const int64_t ar = a.rank();
  const int64_t br = b.rank();
  if ((ar != 2 && ar != 3) || (br != 2 && br != 3) || (br == 3 && ar != 3)) {
    matmul_shape_error(a, b, transpose_b);
  }

  const int64_t p = a.dim(ar - 2);
  const int64_t q = a.dim(ar - 1);
  const int64_t b_inner = transpose_b ? b.dim(br - 1) : b.dim(br - 2);
  const int64_t r = transpose_b ? b.dim(br - 2) : b.dim(br - 1);
  if (q != b_inner) matmul_shape_error(a, b, transpose_b);

  const int64_t batch = ar == 3 ? a.dim(0) : 1;
  if (br == 3 && b.dim(0) != batch) matmul_shape_error(a, b, transpose_b);

  Shape out_shape = ar == 3 ? Shape{batch, p, r} : Shape{p, r};
  Tensor out = make_result(std::move(out_shape), {&a, &b});

  const bool batched_b = br == 3;
  const int64_t a_stride = p * q;
  const int64_t b_stride = batched_b ? b.numel() / batch : 0;
  const int64_t o_stride = p * r;
  for (int64_t s = 0; s < batch; ++s) {
    gemm(a.values().data() + s * a_stride, b.values().data() + s * b_stride,
         out.values().data() + s * o_stride, p, q, r, false, transpose_b,
         false);
  }

  if (out.requires_grad()) {
    auto a_node = a.node();
    auto b_node = b.node();
    out.node()->backward_fn = [p, q, r, batch, batched_b, a_stride, b_stride,
                               o_stride, transpose_b](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      const double* g = self.grad.data();
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (int64_t s = 0; s < batch; ++s) {
          const double* gs = g + s * o_stride;
          const double* bs = pb.values.data() + s * b_stride;
          double* das = pa.grad.data() + s * a_stride;
          if (!transpose_b) {
            gemm(gs, bs, das, p, r, q, false, true, true);  // dA += G * B^T
          } else {
            gemm(gs, bs, das, p, r, q, false, false, true);  // dA += G * B
          }
        }
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int64_t s = 0; s < batch; ++s) {
          const double* gs = g + s * o_stride;
          const double* as = pa.values.data() + s * a_stride;
          double* dbs = pb.grad.data() + (batched_b ? s * b_stride : 0);
          if (!transpose_b) {
            gemm(as, gs, dbs, q, p, r, true, false, true);  // dB += A^T * G
          } else {
            gemm(gs, as, dbs, r, p, q, true, false, true);  // dB += G^T * A
          }
        }
      }
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = make_result(a.shape(), {&a, &b});
  const std::size_t n = a.values().size();
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = a.values()[i] + b.values()[i];
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      for (auto& parent : self.parents) {
        if (!parent->requires_grad) continue;
        parent->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          parent->grad[i] += self.grad[i];
        }
      }
    };
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 ||
      x.dim(x.rank() - 1) != bias.dim(0)) {
    throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(bias.shape()));
  }
  const int64_t d = bias.dim(0);
  const int64_t rows = x.numel() / d;
  Tensor out = make_result(x.shape(), {&x, &bias});
  for (int64_t rix = 0; rix < rows; ++rix) {
    const double* xr = x.values().data() + rix * d;
    double* orow = out.values().data() + rix * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = xr[j] + bias.values()[j];
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [d, rows](TensorNode& self) {
      auto& px = *self.parents[0];
      auto& pb = *self.parents[1];
      if (px.requires_grad) {
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          px.grad[i] += self.grad[i];
        }
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int64_t rix = 0; rix < rows; ++rix) {
          const double* g = self.grad.data() + rix * d;
          for (int64_t j = 0; j < d; ++j) pb.grad[j] += g[j];
        }
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = make_result(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    out.values()[i] = a.values()[i] * b.values()[i];
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          pa.grad[i] += self.grad[i] * pb.values[i];
        }
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          pb.grad[i] += self.grad[i] * pa.values[i];
        }
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = make_result(x.shape(), {&x});
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = x.values()[i] * c;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [c](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        px.grad[i] += c * self.grad[i];
      }
    };
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (px.values[i] > 0.0) px.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result({}, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      const double g = self.grad[0];
      for (auto& gv : px.grad) gv += g;
    };
  }
  return out;
}

namespace {

// [B,n,H,hd] <-> [B,H,n,hd] index shuffle shared by split/merge.
void shuffle_heads(const double* src, double* dst, int64_t b, int64_t n,
                   int64_t h, int64_t hd, bool to_heads) {
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t t = 0; t < n; ++t) {
      for (int64_t hi = 0; hi < h; ++hi) {
        const int64_t flat = ((bi * n + t) * h + hi) * hd;
        const int64_t split = ((bi * h + hi) * n + t) * hd;
        if (to_heads) {
          std::memcpy(dst + split, src + flat, sizeof(double) * hd);
        } else {
          std::memcpy(dst + flat, src + split, sizeof(double) * hd);
        }
      }
    }
  }
}

}  // namespace

Tensor split_heads(const Tensor& x, int64_t heads) {
  if (x.rank() != 3 || heads < 1 || x.dim(2) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) +
                     " into " + std::to_string(heads) + " heads");
  }
  const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2), hd = d / heads;
  Tensor out = make_result({b * heads, n, hd}, {&x});
  shuffle_heads(x.values().data(), out.values().data(), b, n, heads, hd, true);
  if (out.requires_grad()) {
    out.node()->backward_fn = [b, n, heads, hd](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      std::vector<double> tmp(self.grad.size());
      shuffle_heads(self.grad.data(), tmp.data(), b, n, heads, hd, false);
      for (std::size_t i = 0; i < tmp.size(); ++i) px.grad[i] += tmp[i];
    };
  }
  return out;
}

Tensor merge_heads(const Tensor& x, int64_t heads) {
  if (x.rank() != 3 || heads < 1 || x.dim(0) % heads != 0) {
    throw ShapeError("merge_heads: cannot merge " + shape_str(x.shape()) +
                     " from " + std::to_string(heads) + " heads");
  }
  const int64_t b = x.dim(0) / heads, n = x.dim(1), hd = x.dim(2);
  Tensor out = make_result({b, n, heads * hd}, {&x});
  shuffle_heads(x.values().data(), out.values().data(), b, n, heads, hd,
                false);
  if (out.requires_grad()) {
    out.node()->backward_fn = [b, n, heads, hd](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      std::vector<double> tmp(self.grad.size());
      shuffle_heads(self.grad.data(), tmp.data(), b, n, heads, hd, true);
      for (std::size_t i = 0; i < tmp.size(); ++i) px.grad[i] += tmp[i];
    };
  }
  return out;
}

Tensor take_rows(const Tensor& x, int64_t n) {
  if (x.rank() != 2 || n < 1 || n > x.dim(0)) {
    throw ShapeError("take_rows: cannot take first " + std::to_string(n) +
                     " rows of " + shape_str(x.shape()));
  }
  const int64_t c = x.dim(1);
  Tensor out = make_result({n, c}, {&x});
  std::memcpy(out.values().data(), x.values().data(),
              sizeof(double) * static_cast<std::size_t>(n * c));
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        px.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor add_rows(const Tensor& x, const Tensor& rows) {
  if (x.rank() != 3 || rows.rank() != 2 || x.dim(1) != rows.dim(0) ||
      x.dim(2) != rows.dim(1)) {
    throw ShapeError("add_rows: shape mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(rows.shape()));
  }
  const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  Tensor out = make_result(x.shape(), {&x, &rows});
  for (int64_t bi = 0; bi < b; ++bi) {
    const double* xs = x.values().data() + bi * n * d;
    double* os = out.values().data() + bi * n * d;
    const double* rs = rows.values().data();
    for (int64_t i = 0; i < n * d; ++i) os[i] = xs[i] + rs[i];
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [b, n, d](TensorNode& self) {
      auto& px = *self.parents[0];
      auto& pr = *self.parents[1];
      if (px.requires_grad) {
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          px.grad[i] += self.grad[i];
        }
      }
      if (pr.requires_grad) {
        pr.ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi) {
          const double* g = self.grad.data() + bi * n * d;
          for (int64_t i = 0; i < n * d; ++i) pr.grad[i] += g[i];
        }
      }
    };
  }
  return out;
}

Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
  if (scores.rank() < 2) {
    throw ShapeError("masked_softmax: scores must be at least 2D, got " +
                     shape_str(scores.shape()));
  }
  const int64_t n = scores.dim(scores.rank() - 1);
  if (scores.dim(scores.rank() - 2) != n || mask.n < n) {
    throw ShapeError("masked_softmax: scores " + shape_str(scores.shape()) +
                     " incompatible with mask of length " +
                     std::to_string(mask.n));
  }
  for (int64_t i = 0; i < n; ++i) {
    bool any = false;
    for (int64_t j = 0; j < n && !any; ++j) any = mask.at(i, j);
    if (!any) {
      throw MaskError("masked_softmax: mask row " + std::to_string(i) +
                      " has no unmasked entry");
    }
  }

  const int64_t lead = scores.numel() / (n * n);
  Tensor out = make_result(scores.shape(), {&scores});
  for (int64_t s = 0; s < lead; ++s) {
    for (int64_t i = 0; i < n; ++i) {
      const double* row = scores.values().data() + (s * n + i) * n;
      double* orow = out.values().data() + (s * n + i) * n;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < n; ++j) {
        if (mask.at(i, j) && row[j] > mx) mx = row[j];
      }
      double z = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        if (mask.at(i, j)) {
          orow[j] = std::exp(row[j] - mx);
          z += orow[j];
        } else {
          orow[j] = 0.0;
        }
      }
      for (int64_t j = 0; j < n; ++j) {
        if (mask.at(i, j)) orow[j] /= z;
      }
    }
  }

  if (out.requires_grad()) {
    out.node()->backward_fn = [lead, n](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (int64_t s = 0; s < lead; ++s) {
        for (int64_t i = 0; i < n; ++i) {
          const double* p = self.values.data() + (s * n + i) * n;
          const double* g = self.grad.data() + (s * n + i) * n;
          double* dx = px.grad.data() + (s * n + i) * n;
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j) dot += p[j] * g[j];
          for (int64_t j = 0; j < n; ++j) dx[j] += p[j] * (g[j] - dot);
        }
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 ||
      gain.dim(0) != x.dim(x.rank() - 1) || bias.dim(0) != gain.dim(0)) {
    throw ShapeError("layer_norm: shape mismatch " + shape_str(x.shape()) +
                     " gain " + shape_str(gain.shape()) + " bias " +
                     shape_str(bias.shape()));
  }
  const int64_t d = gain.dim(0);
  const int64_t rows = x.numel() / d;
  Tensor out = make_result(x.shape(), {&x, &gain, &bias});
  for (int64_t rix = 0; rix < rows; ++rix) {
    const double* xr = x.values().data() + rix * d;
    double* orow = out.values().data() + rix * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = gain.values()[j] * ((xr[j] - mu) * inv) + bias.values()[j];
    }
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [d, rows, eps](TensorNode& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      if (px.requires_grad) px.ensure_grad();
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      std::vector<double> xhat(static_cast<std::size_t>(d));
      std::vector<double> dxhat(static_cast<std::size_t>(d));
      for (int64_t rix = 0; rix < rows; ++rix) {
        const double* xr = px.values.data() + rix * d;
        const double* g = self.grad.data() + rix * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) xhat[j] = (xr[j] - mu) * inv;
        if (pg.requires_grad) {
          for (int64_t j = 0; j < d; ++j) pg.grad[j] += g[j] * xhat[j];
        }
        if (pb.requires_grad) {
          for (int64_t j = 0; j < d; ++j) pb.grad[j] += g[j];
        }
        if (px.requires_grad) {
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            dxhat[j] = g[j] * pg.values[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
          }
          mean_dxhat /= d;
          mean_dxhat_xhat /= d;
          double* dx = px.grad.data() + rix * d;
          for (int64_t j = 0; j < d; ++j) {
            dx[j] += inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
          }
        }
      }
    };
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, const DropoutKey& key,
               bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " +
                      std::to_string(rate));
  }
  if (!training || rate == 0.0) {
    // Identity, but still a graph node so gradients flow.
    Tensor out = make_result(x.shape(), {&x});
    out.values() = x.values();
    if (out.requires_grad()) {
      out.node()->backward_fn = [](TensorNode& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          px.grad[i] += self.grad[i];
        }
      };
    }
    return out;
  }

  const std::uint64_t stream =
      rng::combine(rng::combine(key.seed, key.instance), key.step);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(x.values().size());
  Tensor out = make_result(x.shape(), {&x});
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    const bool kept = rng::uniform01(stream, i) >= rate;
    (*keep)[i] = kept;
    out.values()[i] = kept ? x.values()[i] * keep_scale : 0.0;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [keep, keep_scale](TensorNode& self) {
      auto& px = *self.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if ((*keep)[i]) px.grad[i] += self.grad[i] * keep_scale;
      }
    };
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const TokenBatch& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be 2D, got " +
                     shape_str(table.shape()));
  }
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int64_t b = 0; b < ids.batch; ++b) {
    for (int64_t t = 0; t < ids.n; ++t) {
      const int64_t id = ids.at(b, t);
      if (id < 0 || id >= v) {
        throw IndexError("embedding_lookup: token id " + std::to_string(id) +
                         " out of range [0," + std::to_string(v) +
                         ") at batch " + std::to_string(b) + " position " +
                         std::to_string(t));
      }
    }
  }
  Tensor out = make_result({ids.batch, ids.n, d}, {&table});
  for (int64_t b = 0; b < ids.batch; ++b) {
    for (int64_t t = 0; t < ids.n; ++t) {
      std::memcpy(out.values().data() + (b * ids.n + t) * d,
                  table.values().data() + ids.at(b, t) * d,
                  sizeof(double) * static_cast<std::size_t>(d));
    }
  }
  if (out.requires_grad()) {
    auto captured = std::make_shared<TokenBatch>(ids);
    out.node()->backward_fn = [captured, d](TensorNode& self) {
      auto& pt = *self.parents[0];
      if (!pt.requires_grad) return;
      pt.ensure_grad();
      for (int64_t b = 0; b < captured->batch; ++b) {
        for (int64_t t = 0; t < captured->n; ++t) {
          const double* g = self.grad.data() + (b * captured->n + t) * d;
          double* dst = pt.grad.data() + captured->at(b, t) * d;
          for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
      }
    };
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const TokenBatch& targets) {
  if (logits.rank() != 3 || logits.dim(0) != targets.batch ||
      logits.dim(1) != targets.n) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) +
                     " incompatible with targets [" +
                     std::to_string(targets.batch) + "," +
                     std::to_string(targets.n) + "]");
  }
  const int64_t v = logits.dim(2);
  const int64_t rows = targets.batch * targets.n;
  for (int64_t b = 0; b < targets.batch; ++b) {
    for (int64_t t = 0; t < targets.n; ++t) {
      const int64_t id = targets.at(b, t);
      if (id < 0 || id >= v) {
        throw IndexError("cross_entropy: target id " + std::to_string(id) +
                         " out of range [0," + std::to_string(v) +
                         ") at batch " + std::to_string(b) + " position " +
                         std::to_string(t));
      }
    }
  }

  auto lse = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(rows));
  Tensor out = make_result({}, {&logits});
  double total = 0.0;
  for (int64_t rix = 0; rix < rows; ++rix) {
    const double* row = logits.values().data() + rix * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    (*lse)[static_cast<std::size_t>(rix)] = mx + std::log(z);
    total += (*lse)[static_cast<std::size_t>(rix)] -
             row[targets.ids[static_cast<std::size_t>(rix)]];
  }
  out.values()[0] = total / static_cast<double>(rows);
  if (!std::isfinite(out.values()[0])) {
    throw NumericError("cross_entropy: non-finite loss");
  }

  if (out.requires_grad()) {
    auto captured = std::make_shared<std::vector<int64_t>>(targets.ids);
    out.node()->backward_fn = [captured, lse, v, rows](TensorNode& self) {
      auto& pl = *self.parents[0];
      if (!pl.requires_grad) return;
      pl.ensure_grad();
      const double g = self.grad[0] / static_cast<double>(rows);
      for (int64_t rix = 0; rix < rows; ++rix) {
        const double* row = pl.values.data() + rix * v;
        double* drow = pl.grad.data() + rix * v;
        const double row_lse = (*lse)[static_cast<std::size_t>(rix)];
        for (int64_t j = 0; j < v; ++j) {
          drow[j] += g * std::exp(row[j] - row_lse);
        }
        drow[(*captured)[static_cast<std::size_t>(rix)]] -= g;
      }
    };
  }
  return out;
}

void sgd_step(std::vector<Parameter>& params, double lr, double clip_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.value.has_grad()) {
      throw ContractError("sgd_step: parameter \"" + p.name +
                          "\" has no gradient");
    }
    for (double g : p.value.grad()) sq += g * g;
  }
  double factor = 1.0;
  if (clip_norm > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) factor = clip_norm / norm;
  }
  for (auto& p : params) {
    auto& vals = p.value.values();
    auto& grads = p.value.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      vals[i] -= lr * factor * grads[i];
    }
    p.value.zero_grad();
  }
}

}  // namespace lightformer
