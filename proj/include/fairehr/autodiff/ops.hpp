#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fairehr/autodiff/tape.hpp"

/// Differentiable operations over Tape nodes. Every op returns a new node and
/// registers its local derivative. Tensors are rank <= 2: a vector of length d
/// is a 1 x d row.
namespace fairehr::ad {

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename S> void same_tape(const Var<S> &a, const Var<S> &b) {
  require(&a.tape() == &b.tape(), ErrorKind::kContract,
          "operands live on different tapes");
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <typename S>
Broadcast broadcast_mode(const Var<S> &a, const Var<S> &b, const char *op) {
  same_tape(a, b);
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return Broadcast::kNone;
  }
  if (a.rows() == 1 && a.cols() == 1) {
    return Broadcast::kLeftScalar;
  }
  if (b.rows() == 1 && b.cols() == 1) {
    return Broadcast::kRightScalar;
  }
  fail(ErrorKind::kDimension, std::string(op) + ": incompatible shapes " +
                                  shape_str(a.rows(), a.cols()) + " and " +
                                  shape_str(b.rows(), b.cols()));
}

template <typename S>
Matrix<S> expand(const Matrix<S> &m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) {
    return m;
  }
  return Matrix<S>::Constant(rows, cols, m(0, 0));
}

/// Reduces a broadcast gradient back to the operand's shape.
template <typename S, typename Derived>
void accumulate_reduced(Tape<S> &t, std::size_t id, const Eigen::MatrixBase<Derived> &g) {
  const Matrix<S> &v = t.value(id);
  if (v.rows() == g.rows() && v.cols() == g.cols()) {
    t.accumulate(id, g);
  } else {
    Matrix<S> s(1, 1);
    s(0, 0) = g.sum();
    t.accumulate(id, s);
  }
}

/// Elementwise unary op with derivative expressed through input x and output y.
template <typename S, typename Fwd, typename Deriv>
Var<S> unary(const Var<S> &a, Fwd fwd, Deriv deriv, const char *op) {
  Tape<S> &t = a.tape();
  const std::size_t ia = a.id();
  Matrix<S> y = a.value().unaryExpr(fwd);
  return t.record(std::move(y), {ia},
                  [ia, deriv](Tape<S> &tp, const Matrix<S> &g) {
                    const Matrix<S> &x = tp.value(ia);
                    Matrix<S> local(x.rows(), x.cols());
                    for (Eigen::Index i = 0; i < x.size(); ++i) {
                      local(i) = deriv(x(i));
                    }
                    tp.accumulate(ia, g.cwiseProduct(local));
                  },
                  op);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S> Var<S> matmul(const Var<S> &a, const Var<S> &b) {
  detail::same_tape(a, b);
  require(a.cols() == b.rows(), ErrorKind::kDimension,
          "matmul: inner dimensions disagree (" +
              detail::shape_str(a.rows(), a.cols()) + " * " +
              detail::shape_str(b.rows(), b.cols()) + ")");
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  Matrix<S> y = a.value() * b.value();
  return a.tape().record(std::move(y), {ia, ib},
                         [ia, ib](Tape<S> &t, const Matrix<S> &g) {
                           if (t.requires_grad(ia)) {
                             t.accumulate(ia, g * t.value(ib).transpose());
                           }
                           if (t.requires_grad(ib)) {
                             t.accumulate(ib, t.value(ia).transpose() * g);
                           }
                         },
                         "matmul");
}

template <typename S> Var<S> transpose(const Var<S> &a) {
  const std::size_t ia = a.id();
  Matrix<S> y = a.value().transpose();
  return a.tape().record(std::move(y), {ia},
                         [ia](Tape<S> &t, const Matrix<S> &g) {
                           t.accumulate(ia, g.transpose());
                         },
                         "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise binary (equal shapes, or scalar with tensor)

template <typename S> Var<S> add(const Var<S> &a, const Var<S> &b) {
  detail::broadcast_mode(a, b, "add");
  const auto rows = std::max(a.rows(), b.rows());
  const auto cols = std::max(a.cols(), b.cols());
  Matrix<S> y = detail::expand(a.value(), rows, cols) + detail::expand(b.value(), rows, cols);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(y), {ia, ib},
                         [ia, ib](Tape<S> &t, const Matrix<S> &g) {
                           detail::accumulate_reduced(t, ia, g);
                           detail::accumulate_reduced(t, ib, g);
                         },
                         "add");
}

template <typename S> Var<S> sub(const Var<S> &a, const Var<S> &b) {
  detail::broadcast_mode(a, b, "sub");
  const auto rows = std::max(a.rows(), b.rows());
  const auto cols = std::max(a.cols(), b.cols());
  Matrix<S> y = detail::expand(a.value(), rows, cols) - detail::expand(b.value(), rows, cols);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(y), {ia, ib},
                         [ia, ib](Tape<S> &t, const Matrix<S> &g) {
                           detail::accumulate_reduced(t, ia, g);
                           detail::accumulate_reduced(t, ib, (-g).eval());
                         },
                         "sub");
}

template <typename S> Var<S> mul(const Var<S> &a, const Var<S> &b) {
  detail::broadcast_mode(a, b, "mul");
  const auto rows = std::max(a.rows(), b.rows());
  const auto cols = std::max(a.cols(), b.cols());
  Matrix<S> y = detail::expand(a.value(), rows, cols)
                    .cwiseProduct(detail::expand(b.value(), rows, cols));
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(
      std::move(y), {ia, ib},
      [ia, ib, rows, cols](Tape<S> &t, const Matrix<S> &g) {
        if (t.requires_grad(ia)) {
          detail::accumulate_reduced(
              t, ia, g.cwiseProduct(detail::expand(t.value(ib), rows, cols)).eval());
        }
        if (t.requires_grad(ib)) {
          detail::accumulate_reduced(
              t, ib, g.cwiseProduct(detail::expand(t.value(ia), rows, cols)).eval());
        }
      },
      "mul");
}

template <typename S> Var<S> operator+(const Var<S> &a, const Var<S> &b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S> &a, const Var<S> &b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S> &a, const Var<S> &b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary

template <typename S> Var<S> scale(const Var<S> &a, S factor) {
  const std::size_t ia = a.id();
  Matrix<S> y = a.value() * factor;
  return a.tape().record(std::move(y), {ia},
                         [ia, factor](Tape<S> &t, const Matrix<S> &g) {
                           t.accumulate(ia, g * factor);
                         },
                         "scale");
}

template <typename S> Var<S> add_scalar(const Var<S> &a, S offset) {
  const std::size_t ia = a.id();
  Matrix<S> y = a.value().array() + offset;
  return a.tape().record(std::move(y), {ia},
                         [ia](Tape<S> &t, const Matrix<S> &g) { t.accumulate(ia, g); },
                         "add_scalar");
}

template <typename S> Var<S> neg(const Var<S> &a) { return scale(a, S(-1)); }

template <typename S> Var<S> sigmoid(const Var<S> &a) {
  auto f = [](S x) {
    return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
  };
  return detail::unary(
      a, f,
      [f](S x) {
        const S s = f(x);
        return s * (S(1) - s);
      },
      "sigmoid");
}

template <typename S> Var<S> relu(const Var<S> &a) {
  return detail::unary(
      a, [](S x) { return x > 0 ? x : S(0); }, [](S x) { return x > 0 ? S(1) : S(0); },
      "relu");
}

template <typename S> Var<S> tanh(const Var<S> &a) {
  return detail::unary(
      a, [](S x) { return std::tanh(x); },
      [](S x) {
        const S y = std::tanh(x);
        return S(1) - y * y;
      },
      "tanh");
}

template <typename S> Var<S> exp(const Var<S> &a) {
  return detail::unary(
      a, [](S x) { return std::exp(x); }, [](S x) { return std::exp(x); }, "exp");
}

template <typename S> Var<S> log(const Var<S> &a) {
  require((a.value().array() > S(0)).all(), ErrorKind::kDomain,
          "log: argument must be strictly positive");
  return detail::unary(
      a, [](S x) { return std::log(x); }, [](S x) { return S(1) / x; }, "log");
}

template <typename S> Var<S> square(const Var<S> &a) {
  return detail::unary(
      a, [](S x) { return x * x; }, [](S x) { return S(2) * x; }, "square");
}

/// sqrt with the subgradient 0 at x = 0 (the derivative is unbounded there).
template <typename S> Var<S> sqrt(const Var<S> &a) {
  require((a.value().array() >= S(0)).all(), ErrorKind::kDomain,
          "sqrt: argument must be non-negative");
  return detail::unary(
      a, [](S x) { return std::sqrt(x); },
      [](S x) { return x > 0 ? S(0.5) / std::sqrt(x) : S(0); }, "sqrt");
}

/// Clamps into [lo, hi]; gradient passes only where the input was inside.
template <typename S> Var<S> clamp(const Var<S> &a, S lo, S hi) {
  return detail::unary(
      a, [lo, hi](S x) { return std::clamp(x, lo, hi); },
      [lo, hi](S x) { return (x >= lo && x <= hi) ? S(1) : S(0); }, "clamp");
}

// ---------------------------------------------------------------------------
// Reductions. `axis` 0 reduces over rows (result 1 x cols), 1 over columns
// (result rows x 1); no axis reduces everything to 1 x 1.

template <typename S> Var<S> sum(const Var<S> &a, std::optional<int> axis = std::nullopt) {
  require(a.value().size() > 0, ErrorKind::kDomain, "sum: empty tensor");
  require(!axis || *axis == 0 || *axis == 1, ErrorKind::kDimension, "sum: axis out of range");
  const std::size_t ia = a.id();
  const auto rows = a.rows();
  const auto cols = a.cols();
  Matrix<S> y;
  if (!axis) {
    y = Matrix<S>::Constant(1, 1, a.value().sum());
  } else if (*axis == 0) {
    y = a.value().colwise().sum();
  } else {
    y = a.value().rowwise().sum();
  }
  const int ax = axis ? *axis : -1;
  return a.tape().record(
      std::move(y), {ia},
      [ia, rows, cols, ax](Tape<S> &t, const Matrix<S> &g) {
        if (ax < 0) {
          t.accumulate(ia, Matrix<S>::Constant(rows, cols, g(0, 0)));
        } else if (ax == 0) {
          t.accumulate(ia, g.replicate(rows, 1));
        } else {
          t.accumulate(ia, g.replicate(1, cols));
        }
      },
      "sum");
}

template <typename S> Var<S> mean(const Var<S> &a, std::optional<int> axis = std::nullopt) {
  require(a.value().size() > 0, ErrorKind::kDomain, "mean: empty tensor");
  S count = static_cast<S>(a.value().size());
  if (axis) {
    count = static_cast<S>(*axis == 0 ? a.rows() : a.cols());
  }
  return scale(sum(a, axis), S(1) / count);
}

/// Max reduction; the gradient goes to the first maximal index.
template <typename S> Var<S> max(const Var<S> &a, std::optional<int> axis = std::nullopt) {
  require(a.value().size() > 0, ErrorKind::kDomain, "max: empty tensor");
  require(!axis || *axis == 0 || *axis == 1, ErrorKind::kDimension, "max: axis out of range");
  const Matrix<S> &x = a.value();
  const auto rows = x.rows();
  const auto cols = x.cols();
  // Argmax in row-major scan order so "first" is well defined.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> arg;
  Matrix<S> y;
  if (!axis) {
    Eigen::Index br = 0, bc = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (x(r, c) > x(br, bc)) {
          br = r;
          bc = c;
        }
      }
    }
    arg.emplace_back(br, bc);
    y = Matrix<S>::Constant(1, 1, x(br, bc));
  } else if (*axis == 0) {
    y.resize(1, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      Eigen::Index br = 0;
      for (Eigen::Index r = 1; r < rows; ++r) {
        if (x(r, c) > x(br, c)) {
          br = r;
        }
      }
      arg.emplace_back(br, c);
      y(0, c) = x(br, c);
    }
  } else {
    y.resize(rows, 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
      Eigen::Index bc = 0;
      for (Eigen::Index c = 1; c < cols; ++c) {
        if (x(r, c) > x(r, bc)) {
          bc = c;
        }
      }
      arg.emplace_back(r, bc);
      y(r, 0) = x(r, bc);
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, rows, cols, arg](Tape<S> &t, const Matrix<S> &g) {
                           Matrix<S> local = Matrix<S>::Zero(rows, cols);
                           for (std::size_t k = 0; k < arg.size(); ++k) {
                             local(arg[k].first, arg[k].second) += g(static_cast<Eigen::Index>(k));
                           }
                           t.accumulate(ia, local);
                         },
                         "max");
}

// ---------------------------------------------------------------------------
// Softmax along an axis, with max subtraction.

template <typename S> Var<S> softmax(const Var<S> &a, int axis = 1) {
  require(axis == 0 || axis == 1, ErrorKind::kDimension, "softmax: axis out of range");
  require(a.value().size() > 0, ErrorKind::kDimension, "softmax: empty axis");
  Matrix<S> y = axis == 1 ? a.value() : Matrix<S>(a.value().transpose());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const S m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  if (axis == 0) {
    y.transposeInPlace();
  }
  const std::size_t ia = a.id();
  Matrix<S> saved = y;
  return a.tape().record(
      std::move(y), {ia},
      [ia, axis, saved](Tape<S> &t, const Matrix<S> &g) {
        // dx = y * (g - sum(g * y)) along the axis
        if (axis == 1) {
          Matrix<S> dot = (g.cwiseProduct(saved)).rowwise().sum();
          t.accumulate(ia, saved.cwiseProduct(g - dot.replicate(1, g.cols())));
        } else {
          Matrix<S> dot = (g.cwiseProduct(saved)).colwise().sum();
          t.accumulate(ia, saved.cwiseProduct(g - dot.replicate(g.rows(), 1)));
        }
      },
      "softmax");
}

/// Row-wise log(sum(exp(x))) -> rows x 1. With `exclude_diagonal`, entry
/// (i, i) is left out of row i (the matrix must be square).
template <typename S> Var<S> logsumexp_rows(const Var<S> &a, bool exclude_diagonal = false) {
  const Matrix<S> &x = a.value();
  require(x.cols() > (exclude_diagonal ? 1 : 0), ErrorKind::kDimension,
          "logsumexp_rows: empty reduction");
  require(!exclude_diagonal || x.rows() == x.cols(), ErrorKind::kDimension,
          "logsumexp_rows: diagonal exclusion needs a square matrix");
  Matrix<S> weights = Matrix<S>::Zero(x.rows(), x.cols());
  Matrix<S> y(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    S m = -std::numeric_limits<S>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!(exclude_diagonal && r == c)) {
        m = std::max(m, x(r, c));
      }
    }
    S total = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!(exclude_diagonal && r == c)) {
        weights(r, c) = std::exp(x(r, c) - m);
        total += weights(r, c);
      }
    }
    weights.row(r) /= total;
    y(r, 0) = m + std::log(total);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, weights](Tape<S> &t, const Matrix<S> &g) {
                           t.accumulate(ia, weights.cwiseProduct(g.replicate(1, weights.cols())));
                         },
                         "logsumexp_rows");
}

// ---------------------------------------------------------------------------
// Row broadcasting: combine an N x d tensor with a 1 x d row.

template <typename S> Var<S> add_row(const Var<S> &a, const Var<S> &row) {
  detail::same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::kDimension,
          "add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
              detail::shape_str(row.rows(), row.cols()));
  Matrix<S> y = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id();
  const std::size_t ir = row.id();
  return a.tape().record(std::move(y), {ia, ir},
                         [ia, ir](Tape<S> &t, const Matrix<S> &g) {
                           t.accumulate(ia, g);
                           t.accumulate(ir, g.colwise().sum());
                         },
                         "add_row");
}

template <typename S> Var<S> mul_row(const Var<S> &a, const Var<S> &row) {
  detail::same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::kDimension,
          "mul_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
              detail::shape_str(row.rows(), row.cols()));
  Matrix<S> y = a.value().array().rowwise() * row.value().row(0).array();
  const std::size_t ia = a.id();
  const std::size_t ir = row.id();
  return a.tape().record(
      std::move(y), {ia, ir},
      [ia, ir](Tape<S> &t, const Matrix<S> &g) {
        if (t.requires_grad(ia)) {
          t.accumulate(ia, (g.array().rowwise() * t.value(ir).row(0).array()).matrix());
        }
        if (t.requires_grad(ir)) {
          t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
        }
      },
      "mul_row");
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename S> Var<S> concat_cols(const std::vector<Var<S>> &parts) {
  require(!parts.empty(), ErrorKind::kDimension, "concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  for (const auto &p : parts) {
    detail::same_tape(parts.front(), p);
    require(p.rows() == rows, ErrorKind::kDimension, "concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix<S> y(rows, cols);
  Eigen::Index offset = 0;
  for (const auto &p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts.front().tape().record(
      std::move(y), ids,
      [ids, widths](Tape<S> &t, const Matrix<S> &g) {
        Eigen::Index off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          t.accumulate(ids[k], g.middleCols(off, widths[k]));
          off += widths[k];
        }
      },
      "concat_cols");
}

template <typename S> Var<S> concat_rows(const std::vector<Var<S>> &parts) {
  require(!parts.empty(), ErrorKind::kDimension, "concat_rows: no inputs");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> heights;
  for (const auto &p : parts) {
    detail::same_tape(parts.front(), p);
    require(p.cols() == cols, ErrorKind::kDimension, "concat_rows: column counts differ");
    ids.push_back(p.id());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Matrix<S> y(rows, cols);
  Eigen::Index offset = 0;
  for (const auto &p : parts) {
    y.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return parts.front().tape().record(
      std::move(y), ids,
      [ids, heights](Tape<S> &t, const Matrix<S> &g) {
        Eigen::Index off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          t.accumulate(ids[k], g.middleRows(off, heights[k]));
          off += heights[k];
        }
      },
      "concat_rows");
}

template <typename S> Var<S> slice_rows(const Var<S> &a, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(), ErrorKind::kDimension,
          "slice_rows: range out of bounds");
  Matrix<S> y = a.value().middleRows(begin, count);
  const std::size_t ia = a.id();
  const auto rows = a.rows();
  const auto cols = a.cols();
  return a.tape().record(std::move(y), {ia},
                         [ia, begin, count, rows, cols](Tape<S> &t, const Matrix<S> &g) {
                           Matrix<S> local = Matrix<S>::Zero(rows, cols);
                           local.middleRows(begin, count) = g;
                           t.accumulate(ia, local);
                         },
                         "slice_rows");
}

/// Reshape with row-major element order (the flattening used everywhere in
/// serialized tensors).
template <typename S> Var<S> reshape(const Var<S> &a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), ErrorKind::kDimension,
          "reshape: element count mismatch (" + detail::shape_str(a.rows(), a.cols()) +
              " -> " + detail::shape_str(rows, cols) + ")");
  using RowMajor = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  Matrix<S> y = Eigen::Map<const RowMajor>(src.data(), rows, cols);
  const std::size_t ia = a.id();
  const auto in_rows = a.rows();
  const auto in_cols = a.cols();
  return a.tape().record(std::move(y), {ia},
                         [ia, in_rows, in_cols](Tape<S> &t, const Matrix<S> &g) {
                           RowMajor gr = g;
                           Matrix<S> local = Eigen::Map<const RowMajor>(gr.data(), in_rows, in_cols);
                           t.accumulate(ia, local);
                         },
                         "reshape");
}

/// out(i, 0) = a(i, index[i]).
template <typename S> Var<S> pick(const Var<S> &a, const std::vector<int> &index) {
  require(static_cast<Eigen::Index>(index.size()) == a.rows(), ErrorKind::kDimension,
          "pick: one index per row required");
  Matrix<S> y(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const int c = index[static_cast<std::size_t>(r)];
    require(c >= 0 && c < a.cols(), ErrorKind::kContract, "pick: column index out of range");
    y(r, 0) = a.value()(r, c);
  }
  const std::size_t ia = a.id();
  const auto rows = a.rows();
  const auto cols = a.cols();
  return a.tape().record(std::move(y), {ia},
                         [ia, rows, cols, index](Tape<S> &t, const Matrix<S> &g) {
                           Matrix<S> local = Matrix<S>::Zero(rows, cols);
                           for (Eigen::Index r = 0; r < rows; ++r) {
                             local(r, index[static_cast<std::size_t>(r)]) = g(r, 0);
                           }
                           t.accumulate(ia, local);
                         },
                         "pick");
}

template <typename S> Var<S> diagonal(const Var<S> &a) {
  require(a.rows() == a.cols(), ErrorKind::kDimension, "diagonal: matrix must be square");
  Matrix<S> y = a.value().diagonal();
  const std::size_t ia = a.id();
  const auto n = a.rows();
  return a.tape().record(std::move(y), {ia},
                         [ia, n](Tape<S> &t, const Matrix<S> &g) {
                           Matrix<S> local = Matrix<S>::Zero(n, n);
                           local.diagonal() = g.col(0);
                           t.accumulate(ia, local);
                         },
                         "diagonal");
}

// ---------------------------------------------------------------------------
// Similarity

/// Divides every row by its L2 norm. Zero rows are a domain error.
template <typename S> Var<S> normalize_rows(const Var<S> &a) {
  const Matrix<S> &x = a.value();
  Matrix<S> norms = x.rowwise().norm();
  require((norms.array() > S(0)).all(), ErrorKind::kDomain,
          "cosine similarity: zero-norm vector");
  Matrix<S> y = x.array().colwise() / norms.col(0).array();
  const std::size_t ia = a.id();
  Matrix<S> saved = y;
  return a.tape().record(
      std::move(y), {ia},
      [ia, saved, norms](Tape<S> &t, const Matrix<S> &g) {
        // d(x/|x|) = (g - y (y . g)) / |x|
        Matrix<S> dot = g.cwiseProduct(saved).rowwise().sum();
        Matrix<S> local = g - saved.cwiseProduct(dot.replicate(1, saved.cols()));
        local.array().colwise() /= norms.col(0).array();
        t.accumulate(ia, local);
      },
      "normalize_rows");
}

/// Cosine similarity of two 1 x d vectors -> 1 x 1.
template <typename S> Var<S> cosine_sim(const Var<S> &u, const Var<S> &v) {
  detail::same_tape(u, v);
  require(u.rows() == 1 && v.rows() == 1 && u.cols() == v.cols(), ErrorKind::kDimension,
          "cosine_sim: expected two 1xd vectors of equal length");
  return matmul(normalize_rows(u), transpose(normalize_rows(v)));
}

/// All-pairs cosine similarity: out(i, j) = sim(a_i, b_j).
template <typename S> Var<S> cosine_sim_matrix(const Var<S> &a, const Var<S> &b) {
  require(a.cols() == b.cols(), ErrorKind::kDimension, "cosine_sim_matrix: widths differ");
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

// ---------------------------------------------------------------------------
// Sequence ops. A batch of B sequences of length T with F features is stored
// as a (B*T) x F matrix, sequence-major.

/// Valid cross-correlation along time. `kernels` is K x (W*F), row k holding
/// kernel k flattened row-major from W x F. Output is (B*T') x K with
/// T' = floor((T - W) / stride) + 1.
template <typename S>
Var<S> conv1d(const Var<S> &x, const Var<S> &kernels, Eigen::Index width,
              Eigen::Index stride, Eigen::Index seq_len) {
  detail::same_tape(x, kernels);
  require(stride >= 1, ErrorKind::kConfig, "conv1d: stride must be >= 1");
  require(seq_len >= 1 && x.rows() % seq_len == 0, ErrorKind::kDimension,
          "conv1d: rows are not a multiple of the sequence length");
  require(width >= 1 && width <= seq_len, ErrorKind::kDimension,
          "conv1d: kernel wider than sequence (" + std::to_string(width) + " > " +
              std::to_string(seq_len) + ")");
  const Eigen::Index features = x.cols();
  require(kernels.cols() == width * features, ErrorKind::kDimension,
          "conv1d: kernel tensor must be K x (W*F)");
  const Eigen::Index batch = x.rows() / seq_len;
  const Eigen::Index out_len = (seq_len - width) / stride + 1;
  // im2col: row (b, t') holds the window flattened row-major.
  Matrix<S> cols(batch * out_len, width * features);
  const Matrix<S> &xv = x.value();
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index o = 0; o < out_len; ++o) {
      const Eigen::Index start = b * seq_len + o * stride;
      for (Eigen::Index w = 0; w < width; ++w) {
        cols.block(b * out_len + o, w * features, 1, features) = xv.row(start + w);
      }
    }
  }
  Matrix<S> y = cols * kernels.value().transpose();
  const std::size_t ix = x.id();
  const std::size_t ik = kernels.id();
  return x.tape().record(
      std::move(y), {ix, ik},
      [ix, ik, cols, batch, out_len, width, stride, seq_len, features](Tape<S> &t,
                                                                        const Matrix<S> &g) {
        if (t.requires_grad(ik)) {
          t.accumulate(ik, g.transpose() * cols);
        }
        if (t.requires_grad(ix)) {
          Matrix<S> dcols = g * t.value(ik);
          Matrix<S> dx = Matrix<S>::Zero(batch * seq_len, features);
          for (Eigen::Index b = 0; b < batch; ++b) {
            for (Eigen::Index o = 0; o < out_len; ++o) {
              const Eigen::Index start = b * seq_len + o * stride;
              for (Eigen::Index w = 0; w < width; ++w) {
                dx.row(start + w) += dcols.block(b * out_len + o, w * features, 1, features);
              }
            }
          }
          t.accumulate(ix, dx);
        }
      },
      "conv1d");
}

/// Mean over time of each sequence: (B*T) x d -> B x d.
template <typename S> Var<S> sequence_mean(const Var<S> &x, Eigen::Index seq_len) {
  require(seq_len >= 1 && x.rows() % seq_len == 0, ErrorKind::kDimension,
          "sequence_mean: rows are not a multiple of the sequence length");
  const Eigen::Index batch = x.rows() / seq_len;
  Matrix<S> y(batch, x.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    y.row(b) = x.value().middleRows(b * seq_len, seq_len).colwise().mean();
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(y), {ix},
                         [ix, seq_len, batch](Tape<S> &t, const Matrix<S> &g) {
                           Matrix<S> local(batch * seq_len, g.cols());
                           const S inv = S(1) / static_cast<S>(seq_len);
                           for (Eigen::Index b = 0; b < batch; ++b) {
                             local.middleRows(b * seq_len, seq_len) =
                                 (g.row(b) * inv).replicate(seq_len, 1);
                           }
                           t.accumulate(ix, local);
                         },
                         "sequence_mean");
}

/// Row-wise standardization (x - mean) / sqrt(var + eps), without affine terms.
template <typename S> Var<S> standardize_rows(const Var<S> &x, S eps = S(1e-5)) {
  const Matrix<S> &xv = x.value();
  const Eigen::Index d = xv.cols();
  Matrix<S> y(xv.rows(), d);
  Matrix<S> inv_std(xv.rows(), 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const S mu = xv.row(r).mean();
    const S var = (xv.row(r).array() - mu).square().mean();
    inv_std(r, 0) = S(1) / std::sqrt(var + eps);
    y.row(r) = (xv.row(r).array() - mu) * inv_std(r, 0);
  }
  const std::size_t ix = x.id();
  Matrix<S> saved = y;
  return x.tape().record(
      std::move(y), {ix},
      [ix, saved, inv_std, d](Tape<S> &t, const Matrix<S> &g) {
        Matrix<S> local(g.rows(), d);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const S mg = g.row(r).mean();
          const S mgy = g.row(r).cwiseProduct(saved.row(r)).mean();
          local.row(r) =
              (g.row(r).array() - mg - saved.row(r).array() * mgy) * inv_std(r, 0);
        }
        t.accumulate(ix, local);
      },
      "standardize_rows");
}

template <typename S>
Var<S> layer_norm(const Var<S> &x, const Var<S> &gain, const Var<S> &bias, S eps = S(1e-5)) {
  return add_row(mul_row(standardize_rows(x, eps), gain), bias);
}

/// Scaled dot-product attention inside each sequence, per head. q, k, v are
/// (B*T) x d with d split into `heads` contiguous column blocks. Returns the
/// concatenated head outputs, (B*T) x d.
template <typename S>
Var<S> attention(const Var<S> &q, const Var<S> &k, const Var<S> &v, int heads,
                 Eigen::Index seq_len) {
  detail::same_tape(q, k);
  detail::same_tape(q, v);
  const Eigen::Index d = q.cols();
  require(heads >= 1 && d % heads == 0, ErrorKind::kConfig,
          "attention: model dimension " + std::to_string(d) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(k.cols() == d && v.cols() == d && k.rows() == q.rows() && v.rows() == q.rows(),
          ErrorKind::kDimension, "attention: q, k, v shapes differ");
  require(seq_len >= 1 && q.rows() % seq_len == 0, ErrorKind::kDimension,
          "attention: rows are not a multiple of the sequence length");
  const Eigen::Index batch = q.rows() / seq_len;
  const Eigen::Index dh = d / heads;
  const S scale_factor = S(1) / std::sqrt(static_cast<S>(dh));
  const Matrix<S> &qv = q.value();
  const Matrix<S> &kv = k.value();
  const Matrix<S> &vv = v.value();
  Matrix<S> y(q.rows(), d);
  // Attention weights per (sequence, head), each T x T.
  std::vector<Matrix<S>> probs(static_cast<std::size_t>(batch * heads));
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = qv.block(b * seq_len, h * dh, seq_len, dh);
      const auto kb = kv.block(b * seq_len, h * dh, seq_len, dh);
      const auto vb = vv.block(b * seq_len, h * dh, seq_len, dh);
      Matrix<S> scores = (qb * kb.transpose()) * scale_factor;
      for (Eigen::Index r = 0; r < seq_len; ++r) {
        const S m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      y.block(b * seq_len, h * dh, seq_len, dh) = scores * vb;
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(scores);
    }
  }
  const std::size_t iq = q.id();
  const std::size_t ik = k.id();
  const std::size_t iv = v.id();
  return q.tape().record(
      std::move(y), {iq, ik, iv},
      [iq, ik, iv, probs, batch, heads, seq_len, dh, scale_factor](Tape<S> &t,
                                                                   const Matrix<S> &g) {
        const Matrix<S> &qv2 = t.value(iq);
        const Matrix<S> &kv2 = t.value(ik);
        const Matrix<S> &vv2 = t.value(iv);
        Matrix<S> dq = Matrix<S>::Zero(qv2.rows(), qv2.cols());
        Matrix<S> dk = Matrix<S>::Zero(qv2.rows(), qv2.cols());
        Matrix<S> dv = Matrix<S>::Zero(qv2.rows(), qv2.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const Matrix<S> &p = probs[static_cast<std::size_t>(b * heads + h)];
            const auto go = g.block(b * seq_len, h * dh, seq_len, dh);
            const auto qb = qv2.block(b * seq_len, h * dh, seq_len, dh);
            const auto kb = kv2.block(b * seq_len, h * dh, seq_len, dh);
            const auto vb = vv2.block(b * seq_len, h * dh, seq_len, dh);
            dv.block(b * seq_len, h * dh, seq_len, dh) = p.transpose() * go;
            Matrix<S> dp = go * vb.transpose();
            Matrix<S> rowdot = dp.cwiseProduct(p).rowwise().sum();
            Matrix<S> ds = p.cwiseProduct(dp - rowdot.replicate(1, seq_len)) * scale_factor;
            dq.block(b * seq_len, h * dh, seq_len, dh) = ds * kb;
            dk.block(b * seq_len, h * dh, seq_len, dh) = ds.transpose() * qb;
          }
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      },
      "attention");
}

} // namespace fairehr::ad
