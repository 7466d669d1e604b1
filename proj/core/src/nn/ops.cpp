#include "transrec/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "transrec/error.hpp"

namespace transrec::nn {
namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw Error(ErrorCode::DimMismatch, std::string(op) + ": " + what);
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", shape(av) + " * " + shape(bv));
  Matrix out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  return t.record(std::move(out), {a, b}, [&t, a, b, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    if (a.requires_grad()) gemm_nt_acc(g, t.value(b), t.grad(a));
    if (b.requires_grad()) gemm_tn_acc(t.value(a), g, t.grad(b));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt", shape(av) + " * " + shape(bv) + "^T");
  Matrix out(av.rows(), bv.rows());
  gemm_nt_acc(av, bv, out);
  return t.record(std::move(out), {a, b}, [&t, a, b, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    if (a.requires_grad()) gemm_acc(g, t.value(b), t.grad(a));
    if (b.requires_grad()) gemm_tn_acc(g, t.value(a), t.grad(b));
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.value().same_shape(b.value()), "add", shape(a.value()) + " + " + shape(b.value()));
  Matrix out = a.value();
  axpy(1.0, b.value(), out);
  return t.record(std::move(out), {a, b}, [&t, a, b, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    if (a.requires_grad()) axpy(1.0, g, t.grad(a));
    if (b.requires_grad()) axpy(1.0, g, t.grad(b));
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  require(bv.rows() == 1 && bv.cols() == av.cols(), "add_row", shape(av) + " + " + shape(bv));
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  return t.record(std::move(out), {a, bias}, [&t, a, bias, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    if (a.requires_grad()) axpy(1.0, g, t.grad(a));
    if (bias.requires_grad()) {
      Matrix& gb = t.grad(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb(0, c) += row[c];
      }
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  return t.record(std::move(out), {a}, [&t, a, s, id = static_cast<int>(t.size())] {
    axpy(s, t.grad(Var{&t, id}), t.grad(a));
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {a}, [&t, a, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
    }
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (double& v : out.values()) {
    const double x = v;
    v = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  return t.record(std::move(out), {a}, [&t, a, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    const Matrix& xs = t.value(a);
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = xs.data()[i];
      const double u = kGeluC * (x + kGeluA * x * x * x);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      ga.data()[i] += g.data()[i] * d;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  require(gain.value().rows() == 1 && gain.value().cols() == d, "layer_norm", "gain shape");
  require(bias.value().rows() == 1 && bias.value().cols() == d, "layer_norm", "bias shape");
  Matrix normed(n, d);
  std::vector<double> inv_std(n);
  Matrix out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normed(r, c) = (row[c] - mean) * inv_std[r];
      out(r, c) = normed(r, c) * gain.value()(0, c) + bias.value()(0, c);
    }
  }
  return t.record(std::move(out), {x, gain, bias},
                  [&t, x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std),
                   id = static_cast<int>(t.size())] {
                    const Matrix& g = t.grad(Var{&t, id});
                    const std::size_t n = g.rows(), d = g.cols();
                    const Matrix& gv = t.value(gain);
                    if (gain.requires_grad() || bias.requires_grad()) {
                      for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t c = 0; c < d; ++c) {
                          if (gain.requires_grad()) t.grad(gain)(0, c) += g(r, c) * normed(r, c);
                          if (bias.requires_grad()) t.grad(bias)(0, c) += g(r, c);
                        }
                      }
                    }
                    if (!x.requires_grad()) return;
                    Matrix& gx = t.grad(x);
                    std::vector<double> gy(d);
                    for (std::size_t r = 0; r < n; ++r) {
                      double mean_gy = 0.0, mean_gy_xhat = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        gy[c] = g(r, c) * gv(0, c);
                        mean_gy += gy[c];
                        mean_gy_xhat += gy[c] * normed(r, c);
                      }
                      mean_gy /= static_cast<double>(d);
                      mean_gy_xhat /= static_cast<double>(d);
                      for (std::size_t c = 0; c < d; ++c) {
                        gx(r, c) += inv_std[r] * (gy[c] - mean_gy - normed(r, c) * mean_gy_xhat);
                      }
                    }
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record(Matrix(1, 1, s), {a}, [&t, a, id = static_cast<int>(t.size())] {
    const double g = t.grad(Var{&t, id})(0, 0);
    for (double& v : t.grad(a).values()) v += g;
  });
}

Var gather_rows(Var src, std::span<const int> indices) {
  Tape& t = *src.tape;
  const Matrix& sv = src.value();
  const std::size_t d = sv.cols();
  Matrix out(indices.size(), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0) continue;
    if (static_cast<std::size_t>(idx) >= sv.rows()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "gather_rows: index " + std::to_string(idx) + " >= " + std::to_string(sv.rows()));
    }
    std::copy_n(sv.data() + static_cast<std::size_t>(idx) * d, d, out.data() + i * d);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {src},
                  [&t, src, idx = std::move(idx), id = static_cast<int>(t.size())] {
                    const Matrix& g = t.grad(Var{&t, id});
                    Matrix& gs = t.grad(src);
                    const std::size_t d = g.cols();
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      if (idx[i] < 0) continue;
                      double* dst = gs.data() + static_cast<std::size_t>(idx[i]) * d;
                      const double* from = g.data() + i * d;
                      for (std::size_t c = 0; c < d; ++c) dst[c] += from[c];
                    }
                  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.rows() == n, "concat_cols", "row count mismatch");
    total += p.cols();
  }
  Matrix out(n, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(pv.data() + r * pv.cols(), pv.cols(), out.data() + r * total + off);
    off += pv.cols();
  }
  return t.record(std::move(out), parts, [&t, parts, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.cols();
      if (p.requires_grad()) {
        Matrix& gp = t.grad(p);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
        }
      }
      off += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.cols() == d, "concat_rows", "column count mismatch");
    total += p.rows();
  }
  Matrix out(total, d);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off * d);
    off += p.rows();
  }
  return t.record(std::move(out), parts, [&t, parts, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    std::size_t off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) {
        Matrix& gp = t.grad(p);
        const double* src = g.data() + off * g.cols();
        for (std::size_t i = 0; i < gp.size(); ++i) gp.data()[i] += src[i];
      }
      off += p.rows();
    }
  });
}

Var dot_rows(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.value().same_shape(b.value()), "dot_rows", shape(a.value()) + " . " + shape(b.value()));
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c) * bv(r, c);
    out(r, 0) = s;
  }
  return t.record(std::move(out), {a, b}, [&t, a, b, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double gr = g(r, 0);
      if (a.requires_grad()) {
        Matrix& ga = t.grad(a);
        for (std::size_t c = 0; c < av.cols(); ++c) ga(r, c) += gr * bv(r, c);
      }
      if (b.requires_grad()) {
        Matrix& gb = t.grad(b);
        for (std::size_t c = 0; c < av.cols(); ++c) gb(r, c) += gr * av(r, c);
      }
    }
  });
}

Var dropout(Var a, double p, std::mt19937_64& rng) {
  Tape& t = *a.tape;
  if (p <= 0.0 || !t.grad_enabled()) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (double& m : mask.values()) m = keep(rng) ? s : 0.0;
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= mask.data()[i];
  return t.record(std::move(out), {a}, [&t, a, mask = std::move(mask), id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * mask.data()[i];
  });
}

// ---------------------------------------------------------------------------
// Attention

namespace {

bool allowed(const SequenceLayout& layout, bool causal, std::size_t b, std::size_t q, std::size_t k) {
  if (!layout.key_mask[b * layout.seq + k]) return false;
  return !causal || k <= q;
}

void check_layout(const SequenceLayout& layout, std::size_t rows, const char* op) {
  if (layout.key_mask.size() != layout.batch * layout.seq) {
    throw Error(ErrorCode::MaskShapeMismatch, std::string(op) + ": mask has " +
                                                  std::to_string(layout.key_mask.size()) +
                                                  " entries, layout needs " +
                                                  std::to_string(layout.batch * layout.seq));
  }
  require(rows == layout.batch * layout.seq, op, "row count does not match layout");
}

// probs: (batch*heads*seq) x seq
Matrix compute_probs(const Matrix& qkv, const SequenceLayout& layout, const AttentionOptions& opt) {
  const std::size_t d = qkv.cols() / 3;
  const std::size_t dh = d / opt.heads;
  const std::size_t T = layout.seq;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix probs(layout.batch * opt.heads * T, T);
  std::vector<double> s(T);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t h = 0; h < opt.heads; ++h) {
      for (std::size_t q = 0; q < T; ++q) {
        const double* qrow = qkv.data() + (b * T + q) * qkv.cols() + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < T; ++k) {
          if (!allowed(layout, opt.causal, b, q, k)) continue;
          const double* krow = qkv.data() + (b * T + k) * qkv.cols() + d + h * dh;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qrow[c] * krow[c];
          s[k] = dot * inv;
          mx = std::max(mx, s[k]);
        }
        auto prow = probs.row((b * opt.heads + h) * T + q);
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // no visible keys
        double z = 0.0;
        for (std::size_t k = 0; k < T; ++k) {
          if (!allowed(layout, opt.causal, b, q, k)) continue;
          prow[k] = std::exp(s[k] - mx);
          z += prow[k];
        }
        for (std::size_t k = 0; k < T; ++k) prow[k] /= z;
      }
    }
  }
  return probs;
}

}  // namespace

Matrix attention_probabilities(const Matrix& qkv, const SequenceLayout& layout,
                               const AttentionOptions& options) {
  check_layout(layout, qkv.rows(), "attention_probabilities");
  return compute_probs(qkv, layout, options);
}

Var self_attention(Var qkv, const SequenceLayout& layout, const AttentionOptions& options) {
  Tape& t = *qkv.tape;
  const Matrix& x = qkv.value();
  check_layout(layout, x.rows(), "self_attention");
  require(x.cols() % 3 == 0, "self_attention", "qkv width must be 3*d");
  const std::size_t d = x.cols() / 3;
  require(options.heads > 0 && d % options.heads == 0, "self_attention", "d not divisible by heads");
  const std::size_t dh = d / options.heads;
  const std::size_t T = layout.seq;
  const std::size_t H = options.heads;

  Matrix probs = compute_probs(x, layout, options);
  if (options.trace) options.trace->push_back(probs);

  Matrix out(x.rows(), d);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t q = 0; q < T; ++q) {
        auto prow = probs.row((b * H + h) * T + q);
        double* orow = out.data() + (b * T + q) * d + h * dh;
        for (std::size_t k = 0; k < T; ++k) {
          const double p = prow[k];
          if (p == 0.0) continue;
          const double* vrow = x.data() + (b * T + k) * x.cols() + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += p * vrow[c];
        }
      }
    }
  }

  return t.record(std::move(out), {qkv},
                  [&t, qkv, probs = std::move(probs), batch = layout.batch, T, H, d, dh,
                   id = static_cast<int>(t.size())] {
                    const Matrix& g = t.grad(Var{&t, id});
                    const Matrix& x = t.value(qkv);
                    Matrix& gx = t.grad(qkv);
                    const std::size_t w = x.cols();
                    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
                    std::vector<double> dp(T);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t h = 0; h < H; ++h) {
                        for (std::size_t q = 0; q < T; ++q) {
                          auto prow = probs.row((b * H + h) * T + q);
                          const double* go = g.data() + (b * T + q) * d + h * dh;
                          double dot_pd = 0.0;
                          for (std::size_t k = 0; k < T; ++k) {
                            dp[k] = 0.0;
                            if (prow[k] == 0.0) continue;
                            const double* vrow = x.data() + (b * T + k) * w + 2 * d + h * dh;
                            double* gv = gx.data() + (b * T + k) * w + 2 * d + h * dh;
                            double acc = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) {
                              gv[c] += prow[k] * go[c];
                              acc += go[c] * vrow[c];
                            }
                            dp[k] = acc;
                            dot_pd += prow[k] * acc;
                          }
                          const double* qrow = x.data() + (b * T + q) * w + h * dh;
                          double* gq = gx.data() + (b * T + q) * w + h * dh;
                          for (std::size_t k = 0; k < T; ++k) {
                            if (prow[k] == 0.0) continue;
                            const double ds = prow[k] * (dp[k] - dot_pd) * inv;
                            const double* krow = x.data() + (b * T + k) * w + d + h * dh;
                            double* gk = gx.data() + (b * T + k) * w + d + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) {
                              gq[c] += ds * krow[c];
                              gk[c] += ds * qrow[c];
                            }
                          }
                        }
                      }
                    }
                  });
}

Matrix attention_pool_weights(const Matrix& scores, const SequenceLayout& layout) {
  check_layout(layout, scores.rows(), "attention_pool");
  require(scores.cols() == 1, "attention_pool", "scores must be a column");
  Matrix w(scores.rows(), 1);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < layout.seq; ++s) {
      if (layout.key_mask[b * layout.seq + s]) mx = std::max(mx, scores(b * layout.seq + s, 0));
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t s = 0; s < layout.seq; ++s) {
      const std::size_t r = b * layout.seq + s;
      if (!layout.key_mask[r]) continue;
      w(r, 0) = std::exp(scores(r, 0) - mx);
      z += w(r, 0);
    }
    for (std::size_t s = 0; s < layout.seq; ++s) w(b * layout.seq + s, 0) /= z;
  }
  return w;
}

Var attention_pool(Var h, Var scores, const SequenceLayout& layout) {
  Tape& t = *h.tape;
  const Matrix& hv = h.value();
  require(hv.rows() == scores.rows(), "attention_pool", "h and scores row mismatch");
  Matrix w = attention_pool_weights(scores.value(), layout);
  const std::size_t d = hv.cols();
  Matrix out(layout.batch, d);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t s = 0; s < layout.seq; ++s) {
      const std::size_t r = b * layout.seq + s;
      const double wr = w(r, 0);
      if (wr == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) out(b, c) += wr * hv(r, c);
    }
  }
  return t.record(std::move(out), {h, scores},
                  [&t, h, scores, w = std::move(w), batch = layout.batch, seq = layout.seq,
                   id = static_cast<int>(t.size())] {
                    const Matrix& g = t.grad(Var{&t, id});
                    const Matrix& hv = t.value(h);
                    const std::size_t d = hv.cols();
                    for (std::size_t b = 0; b < batch; ++b) {
                      // d out_b / d score_r = w_r (h_r - out_b)
                      double mean = 0.0;
                      std::vector<double> gh(seq, 0.0);
                      for (std::size_t s = 0; s < seq; ++s) {
                        const std::size_t r = b * seq + s;
                        if (w(r, 0) == 0.0) continue;
                        double acc = 0.0;
                        for (std::size_t c = 0; c < d; ++c) acc += g(b, c) * hv(r, c);
                        gh[s] = acc;
                        mean += w(r, 0) * acc;
                      }
                      for (std::size_t s = 0; s < seq; ++s) {
                        const std::size_t r = b * seq + s;
                        const double wr = w(r, 0);
                        if (wr == 0.0) continue;
                        if (scores.requires_grad()) t.grad(scores)(r, 0) += wr * (gh[s] - mean);
                        if (h.requires_grad()) {
                          Matrix& ghm = t.grad(h);
                          for (std::size_t c = 0; c < d; ++c) ghm(r, c) += wr * g(b, c);
                        }
                      }
                    }
                  });
}

Var segment_mean(Var x, std::size_t group) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  require(group > 0 && xv.rows() % group == 0, "segment_mean", "rows not divisible by group");
  const std::size_t n = xv.rows() / group, c = xv.cols();
  Matrix out(n, c);
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < group; ++s) {
      const double* row = xv.data() + (i * group + s) * c;
      for (std::size_t j = 0; j < c; ++j) out(i, j) += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) *= inv;
  }
  return t.record(std::move(out), {x}, [&t, x, group, inv, id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    Matrix& gx = t.grad(x);
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t s = 0; s < group; ++s) {
        double* row = gx.data() + (i * group + s) * c;
        for (std::size_t j = 0; j < c; ++j) row[j] += g(i, j) * inv;
      }
    }
  });
}

Var im2col(Var x, const ImageGeometry& geom, const ConvGeometry& conv) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  require(xv.rows() == geom.count * geom.height * geom.width && xv.cols() == geom.channels, "im2col",
          "input " + shape(xv) + " does not match image geometry");
  require(geom.height + 2 * conv.pad >= conv.kernel && geom.width + 2 * conv.pad >= conv.kernel,
          "im2col", "kernel larger than padded image");
  const std::size_t ho = conv.out_height(geom.height), wo = conv.out_width(geom.width);
  const std::size_t K = conv.kernel, C = geom.channels;
  // Each output cell lists the source row for every kernel tap (-1 = padding).
  std::vector<int> src(geom.count * ho * wo * K * K, -1);
  Matrix out(geom.count * ho * wo, K * K * C);
  for (std::size_t n = 0; n < geom.count; ++n) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t orow = (n * ho + oy) * wo + ox;
        for (std::size_t ky = 0; ky < K; ++ky) {
          for (std::size_t kx = 0; kx < K; ++kx) {
            const long iy = static_cast<long>(oy * conv.stride + ky) - static_cast<long>(conv.pad);
            const long ix = static_cast<long>(ox * conv.stride + kx) - static_cast<long>(conv.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(geom.height) ||
                ix >= static_cast<long>(geom.width)) {
              continue;
            }
            const std::size_t irow = (n * geom.height + static_cast<std::size_t>(iy)) * geom.width +
                                     static_cast<std::size_t>(ix);
            const std::size_t tap = ky * K + kx;
            src[orow * K * K + tap] = static_cast<int>(irow);
            std::copy_n(xv.data() + irow * C, C, out.data() + orow * K * K * C + tap * C);
          }
        }
      }
    }
  }
  return t.record(std::move(out), {x}, [&t, x, src = std::move(src), taps = K * K, C,
                                        id = static_cast<int>(t.size())] {
    const Matrix& g = t.grad(Var{&t, id});
    Matrix& gx = t.grad(x);
    for (std::size_t orow = 0; orow < g.rows(); ++orow) {
      for (std::size_t tap = 0; tap < taps; ++tap) {
        const int irow = src[orow * taps + tap];
        if (irow < 0) continue;
        const double* from = g.data() + orow * taps * C + tap * C;
        double* to = gx.data() + static_cast<std::size_t>(irow) * C;
        for (std::size_t c = 0; c < C; ++c) to[c] += from[c];
      }
    }
  });
}

}  // namespace transrec::nn
