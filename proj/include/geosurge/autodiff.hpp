#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geosurge/error.hpp"
#include "geosurge/tensor.hpp"

namespace geosurge::autodiff {

// A learnable tensor. Gradient always has the value's shape; names must be
// unique within a model (they become checkpoint tensor names).
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(T{0}); }
};

struct Var {
  int id = -1;
};

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order, so backward() is a single reverse sweep. A tape can be
// differentiated once; build a fresh tape per forward pass.
template <typename T>
class Tape {
 public:
  Var leaf(Tensor<T> value) { return push(std::move(value), nullptr, "leaf"); }

  Var param(Param<T>& p) {
    Var v = push(p.value, nullptr, "param");
    nodes_[v.id].bound = &p;
    return v;
  }

  const Tensor<T>& val(Var v) const { return node(v).value; }

  size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (A.cols() != B.rows()) {
      throw DataError("matmul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor<T> out(A.rows(), B.cols());
    mm_nn(A, B, out);
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      mm_nt_accum(g, t.val(b), t.grad_buf(a));  // dA += g * B^T
      mm_tn_accum(t.val(a), g, t.grad_buf(b));  // dB += A^T * g
    }, "matmul");
  }

  Var add(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    require_same_shape(A, B, "add");
    Tensor<T> out = A;
    for (size_t k = 0; k < out.size(); ++k) out[k] += B[k];
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      t.accum(a, g);
      t.accum(b, g);
    }, "add");
  }

  Var sub(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    require_same_shape(A, B, "sub");
    Tensor<T> out = A;
    for (size_t k = 0; k < out.size(); ++k) out[k] -= B[k];
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      t.accum(a, g);
      Tensor<T>& gb = t.grad_buf(b);
      for (size_t k = 0; k < g.size(); ++k) gb[k] -= g[k];
    }, "sub");
  }

  Var mul(Var a, Var b) {  // elementwise
    const Tensor<T>&A = val(a), &B = val(b);
    require_same_shape(A, B, "elementwise_mul");
    Tensor<T> out = A;
    for (size_t k = 0; k < out.size(); ++k) out[k] *= B[k];
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      const Tensor<T>&A = t.val(a), &B = t.val(b);
      Tensor<T>&ga = t.grad_buf(a), &gb = t.grad_buf(b);
      for (size_t k = 0; k < g.size(); ++k) {
        ga[k] += g[k] * B[k];
        gb[k] += g[k] * A[k];
      }
    }, "elementwise_mul");
  }

  Var scale(Var a, T c) {
    Tensor<T> out = val(a);
    for (size_t k = 0; k < out.size(); ++k) out[k] *= c;
    return push(std::move(out), [a, c](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * c;
    }, "scale");
  }

  // Broadcast-multiply by a 1x1 variable.
  Var scale_by(Var a, Var s) {
    const Tensor<T>& S = val(s);
    if (S.rows() != 1 || S.cols() != 1) {
      throw DataError("scale_by: scalar operand has shape " + S.shape_str());
    }
    T sv = S[0];
    Tensor<T> out = val(a);
    for (size_t k = 0; k < out.size(); ++k) out[k] *= sv;
    return push(std::move(out), [a, s](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& A = t.val(a);
      T sv = t.val(s)[0];
      Tensor<T>& ga = t.grad_buf(a);
      T gs{0};
      for (size_t k = 0; k < g.size(); ++k) {
        ga[k] += g[k] * sv;
        gs += g[k] * A[k];
      }
      t.grad_buf(s)[0] += gs;
    }, "scale_by");
  }

  // Adds a 1xC row vector to every row.
  Var add_rowvec(Var a, Var row) {
    const Tensor<T>&A = val(a), &R = val(row);
    if (R.rows() != 1 || R.cols() != A.cols()) {
      throw DataError("add_rowvec: shape mismatch " + A.shape_str() + " vs " + R.shape_str());
    }
    Tensor<T> out = A;
    for (size_t i = 0; i < out.rows(); ++i) {
      for (size_t j = 0; j < out.cols(); ++j) out.at(i, j) += R.at(0, j);
    }
    return push(std::move(out), [a, row](Tape& t, const Tensor<T>& g) {
      t.accum(a, g);
      Tensor<T>& gr = t.grad_buf(row);
      for (size_t i = 0; i < g.rows(); ++i) {
        for (size_t j = 0; j < g.cols(); ++j) gr.at(0, j) += g.at(i, j);
      }
    }, "add_rowvec");
  }

  Var transpose(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.cols(), A.rows());
    for (size_t i = 0; i < A.rows(); ++i) {
      for (size_t j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
    }
    return push(std::move(out), [a](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < g.rows(); ++i) {
        for (size_t j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
      }
    }, "transpose");
  }

  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DataError("concat_rows: no inputs");
    size_t cols = val(parts[0]).cols(), rows = 0;
    for (Var p : parts) {
      if (val(p).cols() != cols) {
        throw DataError("concat_rows: column mismatch " + val(parts[0]).shape_str() +
                        " vs " + val(p).shape_str());
      }
      rows += val(p).rows();
    }
    Tensor<T> out(rows, cols);
    size_t r = 0;
    for (Var p : parts) {
      const Tensor<T>& P = val(p);
      for (size_t i = 0; i < P.rows(); ++i) {
        for (size_t j = 0; j < cols; ++j) out.at(r + i, j) = P.at(i, j);
      }
      r += P.rows();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return push(std::move(out), [saved](Tape& t, const Tensor<T>& g) {
      size_t r = 0;
      for (Var p : saved) {
        Tensor<T>& gp = t.grad_buf(p);
        for (size_t i = 0; i < gp.rows(); ++i) {
          for (size_t j = 0; j < gp.cols(); ++j) gp.at(i, j) += g.at(r + i, j);
        }
        r += gp.rows();
      }
    }, "concat_rows");
  }

  Var concat_rows(std::initializer_list<Var> parts) {
    std::vector<Var> v(parts);
    return concat_rows(std::span<const Var>(v));
  }

  // Rows [r0, r1).
  Var slice_rows(Var a, size_t r0, size_t r1) {
    const Tensor<T>& A = val(a);
    if (r0 >= r1 || r1 > A.rows()) throw DataError("slice_rows: bad range on " + A.shape_str());
    Tensor<T> out(r1 - r0, A.cols());
    for (size_t i = r0; i < r1; ++i) {
      for (size_t j = 0; j < A.cols(); ++j) out.at(i - r0, j) = A.at(i, j);
    }
    return push(std::move(out), [a, r0](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < g.rows(); ++i) {
        for (size_t j = 0; j < g.cols(); ++j) ga.at(r0 + i, j) += g.at(i, j);
      }
    }, "slice_rows");
  }

  Var gather_rows(Var a, std::vector<size_t> idx) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(idx.size(), A.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= A.rows()) throw DataError("gather_rows: index out of range");
      for (size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(idx[i], j);
    }
    return push(std::move(out), [a, idx = std::move(idx)](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < idx.size(); ++i) {
        for (size_t j = 0; j < g.cols(); ++j) ga.at(idx[i], j) += g.at(i, j);
      }
    }, "gather_rows");
  }

  // Sums each consecutive block of `block` rows into one output row.
  Var sum_row_blocks(Var a, size_t block) {
    const Tensor<T>& A = val(a);
    if (block == 0 || A.rows() % block != 0) {
      throw DataError("sum_row_blocks: rows of " + A.shape_str() +
                      " not divisible by block " + std::to_string(block));
    }
    Tensor<T> out(A.rows() / block, A.cols());
    for (size_t i = 0; i < A.rows(); ++i) {
      for (size_t j = 0; j < A.cols(); ++j) out.at(i / block, j) += A.at(i, j);
    }
    return push(std::move(out), [a, block](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < ga.rows(); ++i) {
        for (size_t j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(i / block, j);
      }
    }, "sum_row_blocks");
  }

  // NxN -> Nx1 main diagonal.
  Var take_diag(Var a) {
    const Tensor<T>& A = val(a);
    if (A.rows() != A.cols()) throw DataError("take_diag: not square " + A.shape_str());
    Tensor<T> out(A.rows(), 1);
    for (size_t i = 0; i < A.rows(); ++i) out.at(i, 0) = A.at(i, i);
    return push(std::move(out), [a](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < g.rows(); ++i) ga.at(i, i) += g.at(i, 0);
    }, "take_diag");
  }

  Var exp(Var a) {
    Tensor<T> out = val(a);
    for (size_t k = 0; k < out.size(); ++k) out[k] = std::exp(out[k]);
    Tensor<T> saved = out;
    return push(std::move(out), [a, saved = std::move(saved)](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * saved[k];
    }, "exp");
  }

  Var gelu(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out = A;
    for (size_t k = 0; k < out.size(); ++k) out[k] = gelu_fwd(out[k]);
    return push(std::move(out), [a](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& A = t.val(a);
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * gelu_bwd(A[k]);
    }, "gelu");
  }

  Var relu(Var a) {
    Tensor<T> out = val(a);
    for (size_t k = 0; k < out.size(); ++k) out[k] = out[k] > T{0} ? out[k] : T{0};
    return push(std::move(out), [a](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& A = t.val(a);
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) {
        if (A[k] > T{0}) ga[k] += g[k];
      }
    }, "relu");
  }

  // Last-axis layer norm, epsilon 1e-5. A zero-variance row normalizes to the
  // zero row (then affine applies), never NaN.
  Var layer_norm(Var x, Var gamma, Var beta) {
    const Tensor<T>&X = val(x), &G = val(gamma), &B = val(beta);
    if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols()) {
      throw DataError("layer_norm: affine shape mismatch for input " + X.shape_str());
    }
    const T eps = static_cast<T>(1e-5);
    size_t n = X.cols();
    Tensor<T> out(X.rows(), n);
    for (size_t i = 0; i < X.rows(); ++i) {
      T mu{0};
      for (size_t j = 0; j < n; ++j) mu += X.at(i, j);
      mu /= static_cast<T>(n);
      T var{0};
      for (size_t j = 0; j < n; ++j) {
        T d = X.at(i, j) - mu;
        var += d * d;
      }
      var /= static_cast<T>(n);
      T inv = T{1} / std::sqrt(var + eps);
      for (size_t j = 0; j < n; ++j) {
        out.at(i, j) = (X.at(i, j) - mu) * inv * G.at(0, j) + B.at(0, j);
      }
    }
    return push(std::move(out), [x, gamma, beta, eps](Tape& t, const Tensor<T>& g) {
      const Tensor<T>&X = t.val(x), &G = t.val(gamma);
      Tensor<T>&gx = t.grad_buf(x), &gg = t.grad_buf(gamma), &gb = t.grad_buf(beta);
      size_t n = X.cols();
      T inv_n = T{1} / static_cast<T>(n);
      for (size_t i = 0; i < X.rows(); ++i) {
        T mu{0};
        for (size_t j = 0; j < n; ++j) mu += X.at(i, j);
        mu *= inv_n;
        T var{0};
        for (size_t j = 0; j < n; ++j) {
          T d = X.at(i, j) - mu;
          var += d * d;
        }
        var *= inv_n;
        T inv = T{1} / std::sqrt(var + eps);
        T sum1{0}, sum2{0};
        for (size_t j = 0; j < n; ++j) {
          T xhat = (X.at(i, j) - mu) * inv;
          T gxh = g.at(i, j) * G.at(0, j);
          sum1 += gxh;
          sum2 += gxh * xhat;
          gg.at(0, j) += g.at(i, j) * xhat;
          gb.at(0, j) += g.at(i, j);
        }
        for (size_t j = 0; j < n; ++j) {
          T xhat = (X.at(i, j) - mu) * inv;
          T gxh = g.at(i, j) * G.at(0, j);
          gx.at(i, j) += inv * (gxh - sum1 * inv_n - xhat * sum2 * inv_n);
        }
      }
    }, "layer_norm");
  }

  Var softmax_rows(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows(), A.cols());
    for (size_t i = 0; i < A.rows(); ++i) {
      T m = A.at(i, 0);
      for (size_t j = 1; j < A.cols(); ++j) m = std::max(m, A.at(i, j));
      T sum{0};
      for (size_t j = 0; j < A.cols(); ++j) {
        out.at(i, j) = std::exp(A.at(i, j) - m);
        sum += out.at(i, j);
      }
      for (size_t j = 0; j < A.cols(); ++j) out.at(i, j) /= sum;
    }
    Tensor<T> saved = out;
    return push(std::move(out), [a, saved = std::move(saved)](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < g.rows(); ++i) {
        T dot{0};
        for (size_t j = 0; j < g.cols(); ++j) dot += g.at(i, j) * saved.at(i, j);
        for (size_t j = 0; j < g.cols(); ++j) {
          ga.at(i, j) += saved.at(i, j) * (g.at(i, j) - dot);
        }
      }
    }, "softmax_rows");
  }

  Var l2_normalize_rows(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows(), A.cols());
    std::vector<T> norms(A.rows());
    for (size_t i = 0; i < A.rows(); ++i) {
      T s{0};
      for (size_t j = 0; j < A.cols(); ++j) s += A.at(i, j) * A.at(i, j);
      T r = std::max(std::sqrt(s), static_cast<T>(1e-12));
      norms[i] = r;
      for (size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) / r;
    }
    Tensor<T> saved = out;
    return push(std::move(out),
                [a, saved = std::move(saved), norms = std::move(norms)](
                    Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < g.rows(); ++i) {
        T dot{0};
        for (size_t j = 0; j < g.cols(); ++j) dot += g.at(i, j) * saved.at(i, j);
        for (size_t j = 0; j < g.cols(); ++j) {
          ga.at(i, j) += (g.at(i, j) - saved.at(i, j) * dot) / norms[i];
        }
      }
    }, "l2_normalize_rows");
  }

  // NxM -> Nx1, log(sum_j exp(x_ij)), max-shifted.
  Var log_sum_exp_rows(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows(), 1);
    for (size_t i = 0; i < A.rows(); ++i) {
      T m = A.at(i, 0);
      for (size_t j = 1; j < A.cols(); ++j) m = std::max(m, A.at(i, j));
      T sum{0};
      for (size_t j = 0; j < A.cols(); ++j) sum += std::exp(A.at(i, j) - m);
      out.at(i, 0) = m + std::log(sum);
    }
    Tensor<T> saved = out;
    return push(std::move(out), [a, saved = std::move(saved)](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& A = t.val(a);
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < A.rows(); ++i) {
        for (size_t j = 0; j < A.cols(); ++j) {
          ga.at(i, j) += g.at(i, 0) * std::exp(A.at(i, j) - saved.at(i, 0));
        }
      }
    }, "log_sum_exp_rows");
  }

  Var sum_all(Var a) {
    const Tensor<T>& A = val(a);
    T s{0};
    for (size_t k = 0; k < A.size(); ++k) s += A[k];
    return push(Tensor<T>::scalar(s), [a](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t k = 0; k < ga.size(); ++k) ga[k] += g[0];
    }, "sum_all");
  }

  Var mean_all(Var a) {
    const Tensor<T>& A = val(a);
    T s{0};
    for (size_t k = 0; k < A.size(); ++k) s += A[k];
    T inv = T{1} / static_cast<T>(A.size());
    return push(Tensor<T>::scalar(s * inv), [a, inv](Tape& t, const Tensor<T>& g) {
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t k = 0; k < ga.size(); ++k) ga[k] += g[0] * inv;
    }, "mean_all");
  }

  // Reverse sweep from `loss` (must be 1x1). Gradients of bound Params are
  // accumulated into Param::grad. A tape can only be differentiated once.
  void backward(Var loss) {
    if (backward_done_) throw Error("backward already run on this tape");
    if (nodes_.empty()) throw Error("backward on empty tape");
    const Tensor<T>& L = val(loss);
    if (L.rows() != 1 || L.cols() != 1) {
      throw DataError("backward: loss has shape " + L.shape_str() + ", expected [1x1]");
    }
    grad_buf(loss)[0] = T{1};
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.grad_alloc || !n.pull) continue;
      n.pull(*this, n.grad);
    }
    for (int id = 0; id <= loss.id; ++id) {
      Node& n = nodes_[id];
      if (n.bound && n.grad_alloc) {
        for (size_t k = 0; k < n.grad.size(); ++k) n.bound->grad[k] += n.grad[k];
      }
    }
    backward_done_ = true;
  }

  Tensor<T>& grad_buf(Var v) {
    Node& n = node(v);
    if (!n.grad_alloc) {
      n.grad = Tensor<T>(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  void accum(Var v, const Tensor<T>& g) {
    Tensor<T>& buf = grad_buf(v);
    for (size_t k = 0; k < g.size(); ++k) buf[k] += g[k];
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_alloc = false;
    Param<T>* bound = nullptr;
    std::function<void(Tape&, const Tensor<T>&)> pull;
  };

  Var push(Tensor<T> value, std::function<void(Tape&, const Tensor<T>&)> pull,
           const char* op = nullptr) {
    if (op && !value.all_finite()) {
      throw DataError(std::string(op) + ": non-finite output");
    }
    Node n;
    n.value = std::move(value);
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw Error("invalid tape variable");
    }
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw Error("invalid tape variable");
    }
    return nodes_[v.id];
  }

  static void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b)) {
      throw DataError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                      b.shape_str());
    }
  }

  static constexpr double kInvSqrt2 = 0.7071067811865476;

  static T gelu_fwd(T x) {
    return static_cast<T>(0.5) * x * (T{1} + std::erf(x * static_cast<T>(kInvSqrt2)));
  }
  static T gelu_bwd(T x) {
    T phi = std::exp(static_cast<T>(-0.5) * x * x) *
            static_cast<T>(0.3989422804014327);  // 1/sqrt(2*pi)
    return static_cast<T>(0.5) * (T{1} + std::erf(x * static_cast<T>(kInvSqrt2))) + x * phi;
  }

  static void mm_nn(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    const size_t r = A.rows(), k = A.cols(), c = B.cols();
    for (size_t i = 0; i < r; ++i) {
      for (size_t p = 0; p < k; ++p) {
        T av = A.at(i, p);
        if (av == T{0}) continue;
        const T* brow = B.data() + p * c;
        T* crow = C.data() + i * c;
        for (size_t j = 0; j < c; ++j) crow[j] += av * brow[j];
      }
    }
  }

  // C += A * B^T
  static void mm_nt_accum(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    const size_t r = A.rows(), k = A.cols(), c = B.rows();
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < c; ++j) {
        const T* arow = A.data() + i * k;
        const T* brow = B.data() + j * k;
        T s{0};
        for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        C.at(i, j) += s;
      }
    }
  }

  // C += A^T * B
  static void mm_tn_accum(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    const size_t r = A.cols(), k = A.rows(), c = B.cols();
    for (size_t p = 0; p < k; ++p) {
      const T* arow = A.data() + p * r;
      const T* brow = B.data() + p * c;
      for (size_t i = 0; i < r; ++i) {
        T av = arow[i];
        if (av == T{0}) continue;
        T* crow = C.data() + i * c;
        for (size_t j = 0; j < c; ++j) crow[j] += av * brow[j];
      }
    }
  }

  std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
  bool backward_done_ = false;
};

// Compares reverse-mode gradients against central finite differences over
// every element of `params`. `build` must reconstruct the loss on the given
// tape from the current param values. Returns the max relative error, with
// the denominator floored at 1e-6 so near-zero gradients are compared
// absolutely. Meaningful in 64-bit only.
inline double grad_check(const std::function<Var(Tape<double>&)>& build,
                         std::span<Param<double>* const> params, double step) {
  if (step < 1e-7 || step > 1e-4) {
    throw ConfigError("grad_check: step outside [1e-7, 1e-4]");
  }
  auto eval = [&]() {
    Tape<double> t;
    Var loss = build(t);
    return t.val(loss)[0];
  };
  for (Param<double>* p : params) p->zero_grad();
  {
    Tape<double> t;
    Var loss = build(t);
    t.backward(loss);
  }
  double max_rel = 0.0;
  for (Param<double>* p : params) {
    for (size_t k = 0; k < p->value.size(); ++k) {
      double orig = p->value[k];
      p->value[k] = orig + step;
      double up = eval();
      p->value[k] = orig - step;
      double down = eval();
      p->value[k] = orig;
      double fd = (up - down) / (2.0 * step);
      double an = p->grad[k];
      double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
  }
  return max_rel;
}

}  // namespace geosurge::autodiff
