#include "zengram/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

namespace zengram::num {

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw NumericError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

}  // namespace

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_))
    throw NumericError("array data length " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Array({rows, cols}, std::vector<double>(values));
}

Array Array::vector(std::initializer_list<double> values) { return Array({values.size()}, std::vector<double>(values)); }

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const Array& Var::value() const { return tape->value(*this); }

Var Tape::constant(Array value) {
  if (!value.all_finite()) throw NumericError("non-finite value in constant");
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Array value) {
  Var v = constant(std::move(value));
  nodes_[v.id].needs_grad = true;
  return v;
}

Var Tape::parameter(const Array& value) {
  Node n;
  n.borrowed = &value;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Array& Tape::value(Var v) const { return value(v.id); }

const Array& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.borrowed ? *n.borrowed : n.owned;
}

Array& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && value(id).size() != 0) n.grad = Array(value(id).shape());
  return n.grad;
}

Var Tape::record(Array value, std::span<const Var> parents, const char* op, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.owned = std::move(value);
  for (Var p : parents) {
    if (p.tape != this) throw NumericError(std::string(op) + ": operand recorded on another tape");
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw NumericError("backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

namespace {

void require_matrix(const char* op, const Array& a) {
  if (a.rank() != 2) throw NumericError(std::string(op) + ": expected a matrix, got shape " + to_string(a.shape()));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Array& A = a.value();
  const Array& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k || (B.rank() != 2 && k != 1)) shape_error("matmul", A.shape(), B.shape());
  Array C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = &C.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      if (av == 0.0) continue;
      const double* brow = &B.data()[p * n];
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return a.tape->record(std::move(C), {a, b}, "matmul", [a, b, m, k, n](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    const Array& A = t.value(a);
    const Array& B = t.value(b);
    if (t.needs_grad(a)) {
      Array& gA = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double* g = &G.data()[i * n];
          const double* brow = &B.data()[p * n];
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[j] * brow[j];
          gA[i * k + p] += s;
        }
    }
    if (t.needs_grad(b)) {
      Array& gB = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = &G.data()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gb = &gB.data()[p * n];
          for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
        }
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Array& A = a.value();
  const Array& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) shape_error("matmul_nt", A.shape(), B.shape());
  Array C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &A.data()[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &B.data()[j * k];
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C.at(i, j) = s;
    }
  }
  return a.tape->record(std::move(C), {a, b}, "matmul_nt", [a, b, m, k, n](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    const Array& A = t.value(a);
    const Array& B = t.value(b);
    const bool ga = t.needs_grad(a), gb = t.needs_grad(b);
    Array* gA = ga ? &t.grad_buffer(a.id) : nullptr;
    Array* gB = gb ? &t.grad_buffer(b.id) : nullptr;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = G[i * n + j];
        if (g == 0.0) continue;
        if (ga) {
          double* dst = &gA->data()[i * k];
          const double* src = &B.data()[j * k];
          for (std::size_t p = 0; p < k; ++p) dst[p] += g * src[p];
        }
        if (gb) {
          double* dst = &gB->data()[j * k];
          const double* src = &A.data()[i * k];
          for (std::size_t p = 0; p < k; ++p) dst[p] += g * src[p];
        }
      }
  });
}

Var add(Var a, Var b) {
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.shape() != B.shape()) shape_error("add", A.shape(), B.shape());
  Array C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return a.tape->record(std::move(C), {a, b}, "add", [a, b](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      Array& g = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i];
    }
  });
}

Var add_row(Var x, Var row) {
  const Array& X = x.value();
  const Array& R = row.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (R.size() != n) shape_error("add_row", X.shape(), R.shape());
  Array C = X;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] += R[j];
  return x.tape->record(std::move(C), {x, row}, "add_row", [x, row, m, n](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    if (t.needs_grad(x)) {
      Array& g = t.grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i];
    }
    if (t.needs_grad(row)) {
      Array& g = t.grad_buffer(row.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += G[i * n + j];
    }
  });
}

Var mul(Var a, Var b) {
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.shape() != B.shape()) shape_error("mul", A.shape(), B.shape());
  Array C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return a.tape->record(std::move(C), {a, b}, "mul", [a, b](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    if (t.needs_grad(a)) {
      Array& g = t.grad_buffer(a.id);
      const Array& B = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * B[i];
    }
    if (t.needs_grad(b)) {
      Array& g = t.grad_buffer(b.id);
      const Array& A = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * A[i];
    }
  });
}

Var scale(Var x, double factor) {
  Array C = x.value();
  for (auto& v : C.data()) v *= factor;
  return x.tape->record(std::move(C), {x}, "scale", [x, factor](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * G[i];
  });
}

namespace {
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);
constexpr double kGeluC = 0.044715;
}  // namespace

Var gelu(Var x) {
  const Array& X = x.value();
  Array Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double v = X[i];
    Y[i] = 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v)));
  }
  return x.tape->record(std::move(Y), {x}, "gelu", [x](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    const Array& X = t.value(x);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double th = std::tanh(kGeluK * (v + kGeluC * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
      g[i] += G[i] * d;
    }
  });
}

Var tanh(Var x) {
  Array Y = x.value();
  for (auto& v : Y.data()) v = std::tanh(v);
  return x.tape->record(std::move(Y), {x}, "tanh", [x](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    const Array& Y = t.value(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * (1.0 - Y[i] * Y[i]);
  });
}

namespace {

Array softmax_impl(const Array& X, std::span<const std::uint8_t> key_mask) {
  const std::size_t m = X.rows(), n = X.cols();
  Array Y(X.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = &X.data()[i * n];
    double* y = &Y.data()[i * n];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask.empty() || key_mask[j]) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) throw NumericError("softmax: row has no unmasked entries");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = (key_mask.empty() || key_mask[j]) ? std::exp(x[j] - mx) : 0.0;
      s += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }
  return Y;
}

Var record_softmax(Var x, Array Y, const char* op) {
  return x.tape->record(std::move(Y), {x}, op, [x](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    const Array& Y = t.value(self);
    Array& g = t.grad_buffer(x.id);
    const std::size_t m = Y.rows(), n = Y.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += G[i * n + j] * Y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += Y[i * n + j] * (G[i * n + j] - dot);
    }
  });
}

}  // namespace

Array softmax_rows(const Array& x) { return softmax_impl(x, {}); }

Var softmax(Var x) { return record_softmax(x, softmax_impl(x.value(), {}), "softmax"); }

Var masked_softmax(Var x, std::span<const std::uint8_t> key_mask) {
  if (key_mask.size() != x.value().cols())
    throw NumericError("masked_softmax: mask length " + std::to_string(key_mask.size()) + " vs shape " +
                       to_string(x.shape()));
  return record_softmax(x, softmax_impl(x.value(), key_mask), "masked_softmax");
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  const Array& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (gain.value().size() != n || bias.value().size() != n) shape_error("layernorm", X.shape(), gain.shape());
  Array Y(X.shape());
  Array xhat(X.shape());
  std::vector<double> inv(m);
  const Array& Gn = gain.value();
  const Array& Bs = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = &X.data()[i * n];
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(n);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (r[j] - mean) * inv[i];
      Y[i * n + j] = xhat[i * n + j] * Gn[j] + Bs[j];
    }
  }
  return x.tape->record(std::move(Y), {x, gain, bias}, "layernorm",
                        [x, gain, bias, m, n, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, std::uint32_t self) {
                          const Array& G = t.grad_of(self);
                          const Array& Gn = t.value(gain);
                          if (t.needs_grad(gain)) {
                            Array& g = t.grad_buffer(gain.id);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) g[j] += G[i * n + j] * xhat[i * n + j];
                          }
                          if (t.needs_grad(bias)) {
                            Array& g = t.grad_buffer(bias.id);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) g[j] += G[i * n + j];
                          }
                          if (t.needs_grad(x)) {
                            Array& g = t.grad_buffer(x.id);
                            const double nn = static_cast<double>(n);
                            for (std::size_t i = 0; i < m; ++i) {
                              double s1 = 0.0, s2 = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                const double d = G[i * n + j] * Gn[j];
                                s1 += d;
                                s2 += d * xhat[i * n + j];
                              }
                              for (std::size_t j = 0; j < n; ++j) {
                                const double d = G[i * n + j] * Gn[j];
                                g[i * n + j] += inv[i] / nn * (nn * d - s1 - xhat[i * n + j] * s2);
                              }
                            }
                          }
                        });
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
  const Array& T = table.value();
  const std::size_t v = T.rows(), d = T.cols();
  Array Y({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw NumericError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) + " rows");
    std::copy_n(&T.data()[static_cast<std::size_t>(ids[i]) * d], d, &Y.data()[i * d]);
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return table.tape->record(std::move(Y), {table}, "gather_rows", [table, d, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = &g.data()[static_cast<std::size_t>(idx[i]) * d];
      for (std::size_t j = 0; j < d; ++j) dst[j] += G[i * d + j];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat_cols: no operands");
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.value().rows() != m) shape_error("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Array Y({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& P = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(&P.data()[i * widths[k]], widths[k], &Y.data()[i * total + off]);
    off += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(Y), parts, "concat_cols", [ps, widths, m, total](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (t.needs_grad(ps[k])) {
        Array& g = t.grad_buffer(ps[k].id);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += G[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat_rows: no operands");
  const std::size_t n = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    if (p.value().cols() != n) shape_error("concat_rows", parts[0].shape(), p.shape());
    offsets.push_back(rows * n);
    rows += p.value().rows();
  }
  Array Y({rows, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& P = parts[k].value();
    std::copy(P.data().begin(), P.data().end(), Y.data().begin() + static_cast<std::ptrdiff_t>(offsets[k]));
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(Y), parts, "concat_rows", [ps, offsets](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (!t.needs_grad(ps[k])) continue;
      Array& g = t.grad_buffer(ps[k].id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[offsets[k] + i];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Array& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (begin + count > n) throw NumericError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                            ") outside shape " + to_string(X.shape()));
  Array Y({m, count});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&X.data()[i * n + begin], count, &Y.data()[i * count]);
  return x.tape->record(std::move(Y), {x}, "slice_cols", [x, m, n, begin, count](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += G[i * count + j];
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Array& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (begin + count > m) throw NumericError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                            ") outside shape " + to_string(X.shape()));
  Array Y({count, n});
  std::copy_n(&X.data()[begin * n], count * n, Y.data().begin());
  return x.tape->record(std::move(Y), {x}, "slice_rows", [x, n, begin](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < G.size(); ++i) g[begin * n + i] += G[i];
  });
}

Var transpose(Var x) {
  const Array& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  Array Y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) Y[j * m + i] = X[i * n + j];
  return x.tape->record(std::move(Y), {x}, "transpose", [x, m, n](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += G[j * m + i];
  });
}

Var select_columns(Var x, std::size_t cols, std::vector<std::uint32_t> index) {
  const Array& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (index.size() != m * cols) throw NumericError("select_columns: index length does not match output shape");
  Array Y({m, cols});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const auto c = index[i * cols + j];
      if (c >= n) throw NumericError("select_columns: column index outside shape " + to_string(X.shape()));
      Y[i * cols + j] = X[i * n + c];
    }
  return x.tape->record(std::move(Y), {x}, "select_columns", [x, m, n, cols, index = std::move(index)](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < cols; ++j) g[i * n + index[i * cols + j]] += G[i * cols + j];
  });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw NumericError("dropout rate must be below 1");
  const Array& X = x.value();
  std::vector<double> keep(X.size());
  const double s = 1.0 / (1.0 - rate);
  Array Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    keep[i] = rng.uniform01() < rate ? 0.0 : s;
    Y[i] = X[i] * keep[i];
  }
  return x.tape->record(std::move(Y), {x}, "dropout", [x, keep = std::move(keep)](Tape& t, std::uint32_t self) {
    const Array& G = t.grad_of(self);
    Array& g = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * keep[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Array({1}, std::vector<double>{s}), {x}, "sum", [x](Tape& t, std::uint32_t self) {
    const double G = t.grad_of(self)[0];
    Array& g = t.grad_buffer(x.id);
    for (auto& v : g.data()) v += G;
  });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  const Array& L = logits.value();
  const std::size_t m = L.rows(), v = L.cols();
  if (targets.size() != m || mask.size() != m)
    throw NumericError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + to_string(L.shape()));
  Array probs(L.shape());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw NumericError("cross_entropy: target id " + std::to_string(targets[i]) + " outside " + std::to_string(v) + " classes");
    const double* r = &L.data()[i * v];
    const double mx = *std::max_element(r, r + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(r[j] - lse);
    total += lse - r[targets[i]];
    ++count;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return logits.tape->record(Array({1}, std::vector<double>{loss}), {logits}, "cross_entropy",
                             [logits, m, v, count, tg = std::move(tg), mk = std::move(mk), probs = std::move(probs)](Tape& t, std::uint32_t self) {
                               if (count == 0) return;
                               const double G = t.grad_of(self)[0] / static_cast<double>(count);
                               Array& g = t.grad_buffer(logits.id);
                               for (std::size_t i = 0; i < m; ++i) {
                                 if (!mk[i]) continue;
                                 for (std::size_t j = 0; j < v; ++j) g[i * v + j] += G * probs[i * v + j];
                                 g[i * v + static_cast<std::size_t>(tg[i])] -= G;
                               }
                             });
}

}  // namespace zengram::num
