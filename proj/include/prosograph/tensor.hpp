#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "prosograph/rng.hpp"

namespace prosograph {

using Shape = std::vector<int>;

// Raised when a computation produces or receives numerically unusable data.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor shape has nonpositive dim " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grad. Null for leaves.
  std::function<void(TensorNode&)> backward;

  int numel() const { return static_cast<int>(values.size()); }
  void ensure_grad() {
    if (requires_grad && grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Dense real tensor participating in a reverse-mode computation graph.
// Handles are cheap shared references to the underlying node; op outputs
// hold their inputs alive, so dropping the final handle frees the tape.
class DiffTensor {
 public:
  DiffTensor() = default;

  static DiffTensor zeros(Shape shape, bool requires_grad = false) {
    return DiffTensor(std::move(shape), {}, requires_grad, /*fill=*/0.0);
  }

  static DiffTensor constant(Shape shape, std::vector<double> values) {
    return DiffTensor(std::move(shape), std::move(values), false);
  }

  static DiffTensor parameter(Shape shape, std::vector<double> values) {
    return DiffTensor(std::move(shape), std::move(values), true);
  }

  static DiffTensor scalar(double v, bool requires_grad = false) {
    return DiffTensor({1}, {v}, requires_grad);
  }

  static DiffTensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("from_rows: no rows");
    int cols = static_cast<int>(rows[0].size());
    std::vector<double> v;
    v.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != cols) throw std::invalid_argument("from_rows: ragged rows");
      v.insert(v.end(), r.begin(), r.end());
    }
    return DiffTensor({static_cast<int>(rows.size()), cols}, std::move(v), false);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int numel() const { return node_->numel(); }
  int dim(int i) const { return node_->shape.at(i); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const& { return node_->values; }
  // Rvalue access copies: keeps `for (double v : op(...).values())` from dangling.
  std::vector<double> values() && { return node_->values; }
  // In-place mutation is only meaningful for leaves (parameters).
  std::vector<double>& mutable_values() { return node_->values; }

  const std::vector<double>& grad() const& {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<double> grad() && {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<double>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->values.size(), 0.0);
  }

  double value() const {
    if (numel() != 1) throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape()));
    return node_->values[0];
  }
  double at(int i) const { return node_->values.at(i); }
  double at(int r, int c) const {
    if (ndim() != 2) throw std::invalid_argument("at(r,c) on non-matrix " + shape_str(shape()));
    return node_->values.at(static_cast<size_t>(r) * dim(1) + c);
  }

  bool all_finite() const {
    for (double v : node_->values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  friend DiffTensor make_op(Shape shape, std::vector<double> values,
                            std::vector<DiffTensor> parents,
                            std::function<void(detail::TensorNode&)> backward);
  friend void backprop(const DiffTensor& loss);

 private:
  DiffTensor(Shape shape, std::vector<double> values, bool requires_grad, double fill = 0.0) {
    int n = shape_numel(shape);
    if (values.empty()) values.assign(n, fill);
    if (static_cast<int>(values.size()) != n)
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
    node_->ensure_grad();
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Builds an op-output node. Parents that do not require grad are still kept
// (backward may read their values); the output requires grad iff any parent does.
inline DiffTensor make_op(Shape shape, std::vector<double> values,
                          std::vector<DiffTensor> parents,
                          std::function<void(detail::TensorNode&)> backward) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  DiffTensor out(std::move(shape), std::move(values), rg);
  if (rg) {
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward = std::move(backward);
  }
  return out;
}

// ---------------------------------------------------------------------------
// backprop
// ---------------------------------------------------------------------------

// Populates grads of all reachable grad-requiring nodes in reverse topological
// order. Repeated calls without zero_grad accumulate.
inline void backprop(const DiffTensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backprop: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  using Node = detail::TensorNode;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS over grad-requiring subgraph.
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Grad buffers of op nodes are scoped to this call; only leaves (parameters)
  // accumulate across repeated backprops.
  for (Node* n : order) {
    n->ensure_grad();
    if (n->backward) n->grad.assign(n->values.size(), 0.0);
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const char* op, const DiffTensor& a, const DiffTensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}
inline void check_matrix(const char* op, const DiffTensor& a) {
  if (a.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": expected matrix, got " + shape_str(a.shape()));
}
inline std::vector<double>* grad_of(TensorNode& self, size_t i) {
  TensorNode* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}
}  // namespace detail

inline DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
  detail::check_matrix("matmul", a);
  detail::check_matrix("matmul", b);
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i) {
    const double* arow = av.data() + static_cast<size_t>(i) * k;
    double* orow = out.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double apv = arow[p];
      if (apv == 0.0) continue;
      const double* brow = bv.data() + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += apv * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::TensorNode& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (auto* ga = detail::grad_of(self, 0)) {
      // ga += g . b^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.data() + static_cast<size_t>(i) * n;
          const double* brow = bv.data() + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          (*ga)[static_cast<size_t>(i) * k + p] += acc;
        }
    }
    if (auto* gb = detail::grad_of(self, 1)) {
      // gb += a^T . g
      for (int p = 0; p < k; ++p)
        for (int i = 0; i < m; ++i) {
          const double apv = av[static_cast<size_t>(i) * k + p];
          if (apv == 0.0) continue;
          const double* grow = g.data() + static_cast<size_t>(i) * n;
          double* gbrow = gb->data() + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += apv * grow[j];
        }
    }
  });
}

inline DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::grad_of(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i];
  });
}

inline DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::grad_of(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] -= self.grad[i];
  });
}

inline DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv2 = self.parents[1]->values;
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bv2[i];
    if (auto* gb = detail::grad_of(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * av[i];
  });
}

// y = k*x + c, elementwise.
inline DiffTensor scalar_affine(const DiffTensor& x, double k, double c = 0.0) {
  std::vector<double> out(x.values());
  for (double& v : out) v = k * v + c;
  return make_op(x.shape(), std::move(out), {x}, [k](detail::TensorNode& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += k * self.grad[i];
  });
}

inline DiffTensor scalar_mul(const DiffTensor& x, double k) { return scalar_affine(x, k, 0.0); }

inline DiffTensor tanh_act(const DiffTensor& x) {
  std::vector<double> out(x.values());
  for (double& v : out) v = std::tanh(v);
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.values[i];
        (*gx)[i] += self.grad[i] * (1.0 - y * y);
      }
  });
}

inline DiffTensor sigmoid_act(const DiffTensor& x) {
  std::vector<double> out(x.values());
  for (double& v : out) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.values[i];
        (*gx)[i] += self.grad[i] * y * (1.0 - y);
      }
  });
}

// y = 1/sqrt(x + eps); used by layer normalization.
inline DiffTensor rsqrt_shift(const DiffTensor& x, double eps) {
  std::vector<double> out(x.values());
  for (double& v : out) v = 1.0 / std::sqrt(v + eps);
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.values[i];
        (*gx)[i] += self.grad[i] * (-0.5) * y * y * y;
      }
  });
}

// Numerically stable masked softmax over a 1-D tensor. Masked-out entries are
// exactly zero; kept entries sum to 1. The caller guarantees >= 1 kept entry.
inline DiffTensor masked_softmax(const DiffTensor& scores, const std::vector<bool>& mask) {
  if (scores.ndim() != 1)
    throw std::invalid_argument("masked_softmax: expected 1-D scores, got " + shape_str(scores.shape()));
  const int n = scores.numel();
  if (static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("masked_softmax: mask length " + std::to_string(mask.size()) +
                                " vs scores " + std::to_string(n));
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    if (mask[i]) mx = std::max(mx, scores.at(i));
  if (!std::isfinite(mx)) throw std::invalid_argument("masked_softmax: all entries masked out");
  std::vector<double> out(n, 0.0);
  double z = 0.0;
  for (int i = 0; i < n; ++i)
    if (mask[i]) {
      out[i] = std::exp(scores.at(i) - mx);
      z += out[i];
    }
  for (int i = 0; i < n; ++i) out[i] /= z;
  return make_op({n}, std::move(out), {scores}, [mask](detail::TensorNode& self) {
    if (auto* gx = detail::grad_of(self, 0)) {
      double dot = 0.0;
      for (size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.values[i];
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (mask[i]) (*gx)[i] += self.values[i] * (self.grad[i] - dot);
    }
  });
}

inline DiffTensor softmax(const DiffTensor& scores) {
  return masked_softmax(scores, std::vector<bool>(scores.numel(), true));
}

// Mean of squared differences. The target must not require grad.
inline DiffTensor mse_loss(const DiffTensor& pred, const DiffTensor& target) {
  detail::check_same_shape("mse_loss", pred, target);
  if (target.requires_grad())
    throw std::invalid_argument("mse_loss: target must not require grad");
  const int n = pred.numel();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = pred.at(i) - target.at(i);
    acc += d * d;
  }
  return make_op({1}, {acc / n}, {pred, target}, [n](detail::TensorNode& self) {
    if (auto* gp = detail::grad_of(self, 0)) {
      const double g = self.grad[0];
      const auto& pv = self.parents[0]->values;
      const auto& tv = self.parents[1]->values;
      for (int i = 0; i < n; ++i) (*gp)[i] += g * 2.0 * (pv[i] - tv[i]) / n;
    }
  });
}

// -log softmax(logits)[label]
inline DiffTensor cross_entropy_loss(const DiffTensor& logits, int label) {
  if (logits.ndim() != 1)
    throw std::invalid_argument("cross_entropy_loss: expected 1-D logits, got " + shape_str(logits.shape()));
  const int n = logits.numel();
  if (label < 0 || label >= n)
    throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(label) +
                                " out of range [0," + std::to_string(n) + ")");
  double mx = logits.at(0);
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits.at(i));
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits.at(i) - mx);
  const double lse = mx + std::log(z);
  return make_op({1}, {lse - logits.at(label)}, {logits}, [n, label, mx, z](detail::TensorNode& self) {
    if (auto* gl = detail::grad_of(self, 0)) {
      const double g = self.grad[0];
      const auto& lv = self.parents[0]->values;
      for (int i = 0; i < n; ++i) {
        const double p = std::exp(lv[i] - mx) / z;
        (*gl)[i] += g * (p - (i == label ? 1.0 : 0.0));
      }
    }
  });
}

// Identity forward; backward multiplies the incoming gradient by -lambda.
inline DiffTensor gradient_reverse(const DiffTensor& x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("gradient_reverse: lambda must be nonnegative");
  std::vector<double> out(x.values());
  return make_op(x.shape(), std::move(out), {x}, [lambda](detail::TensorNode& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += -lambda * self.grad[i];
  });
}

// out[r, :] = a[idx[r], :]
inline DiffTensor gather_rows(const DiffTensor& a, std::vector<int> idx) {
  detail::check_matrix("gather_rows", a);
  const int rows = a.dim(0), cols = a.dim(1);
  const int m = static_cast<int>(idx.size());
  if (m == 0) throw std::invalid_argument("gather_rows: empty index list");
  std::vector<double> out(static_cast<size_t>(m) * cols);
  for (int r = 0; r < m; ++r) {
    if (idx[r] < 0 || idx[r] >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[r]) +
                                  " out of range for " + shape_str(a.shape()));
    std::copy_n(a.values().data() + static_cast<size_t>(idx[r]) * cols, cols,
                out.data() + static_cast<size_t>(r) * cols);
  }
  return make_op({m, cols}, std::move(out), {a}, [idx = std::move(idx), cols](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0)) {
      for (size_t r = 0; r < idx.size(); ++r) {
        const double* grow = self.grad.data() + r * cols;
        double* garow = ga->data() + static_cast<size_t>(idx[r]) * cols;
        for (int j = 0; j < cols; ++j) garow[j] += grow[j];
      }
    }
  });
}

inline DiffTensor gather_elems(const DiffTensor& v, std::vector<int> idx) {
  if (v.ndim() != 1)
    throw std::invalid_argument("gather_elems: expected 1-D tensor, got " + shape_str(v.shape()));
  const int n = v.numel(), m = static_cast<int>(idx.size());
  if (m == 0) throw std::invalid_argument("gather_elems: empty index list");
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    if (idx[i] < 0 || idx[i] >= n)
      throw std::invalid_argument("gather_elems: index out of range");
    out[i] = v.at(idx[i]);
  }
  return make_op({m}, std::move(out), {v}, [idx = std::move(idx)](detail::TensorNode& self) {
    if (auto* gv = detail::grad_of(self, 0))
      for (size_t i = 0; i < idx.size(); ++i) (*gv)[idx[i]] += self.grad[i];
  });
}

inline DiffTensor concat_cols(const std::vector<DiffTensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int rows = parts[0].dim(0);
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    detail::check_matrix("concat_cols", p);
    if (p.dim(0) != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(rows) * total);
  int off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const int w = widths[k];
    for (int i = 0; i < rows; ++i)
      std::copy_n(parts[k].values().data() + static_cast<size_t>(i) * w, w,
                  out.data() + static_cast<size_t>(i) * total + off);
    off += w;
  }
  return make_op({rows, total}, std::move(out), parts,
                 [widths = std::move(widths), rows, total](detail::TensorNode& self) {
                   int off2 = 0;
                   for (size_t k = 0; k < widths.size(); ++k) {
                     const int w = widths[k];
                     if (auto* gp = detail::grad_of(self, k)) {
                       for (int i = 0; i < rows; ++i) {
                         const double* grow = self.grad.data() + static_cast<size_t>(i) * total + off2;
                         double* prow = gp->data() + static_cast<size_t>(i) * w;
                         for (int j = 0; j < w; ++j) prow[j] += grow[j];
                       }
                     }
                     off2 += w;
                   }
                 });
}

inline DiffTensor concat_rows(const std::vector<DiffTensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int cols = parts[0].dim(1);
  int total = 0;
  std::vector<int> heights;
  for (const auto& p : parts) {
    detail::check_matrix("concat_rows", p);
    if (p.dim(1) != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    heights.push_back(p.dim(0));
    total += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total) * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_op({total, cols}, std::move(out), parts,
                 [heights = std::move(heights), cols](detail::TensorNode& self) {
                   size_t off = 0;
                   for (size_t k = 0; k < heights.size(); ++k) {
                     const size_t sz = static_cast<size_t>(heights[k]) * cols;
                     if (auto* gp = detail::grad_of(self, k))
                       for (size_t i = 0; i < sz; ++i) (*gp)[i] += self.grad[off + i];
                     off += sz;
                   }
                 });
}

// Row p of the output block-repeats row p of the input counts[p] times.
inline DiffTensor row_repeat(const DiffTensor& a, const std::vector<int>& counts) {
  detail::check_matrix("row_repeat", a);
  const int rows = a.dim(0), cols = a.dim(1);
  if (static_cast<int>(counts.size()) != rows)
    throw std::invalid_argument("row_repeat: counts length " + std::to_string(counts.size()) +
                                " vs rows " + std::to_string(rows));
  int total = 0;
  for (int c : counts) {
    if (c <= 0) throw std::invalid_argument("row_repeat: nonpositive repeat count");
    total += c;
  }
  std::vector<double> out(static_cast<size_t>(total) * cols);
  int r = 0;
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < counts[i]; ++c, ++r)
      std::copy_n(a.values().data() + static_cast<size_t>(i) * cols, cols,
                  out.data() + static_cast<size_t>(r) * cols);
  return make_op({total, cols}, std::move(out), {a}, [counts, cols](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0)) {
      size_t r2 = 0;
      for (size_t i = 0; i < counts.size(); ++i) {
        double* garow = ga->data() + i * cols;
        for (int c = 0; c < counts[i]; ++c, ++r2) {
          const double* grow = self.grad.data() + r2 * cols;
          for (int j = 0; j < cols; ++j) garow[j] += grow[j];
        }
      }
    }
  });
}

// Column means: [m x d] -> [1 x d]
inline DiffTensor mean_over_rows(const DiffTensor& a) {
  detail::check_matrix("mean_over_rows", a);
  const int m = a.dim(0), d = a.dim(1);
  std::vector<double> out(d, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out[j] += a.at(i, j);
  for (double& v : out) v /= m;
  return make_op({1, d}, std::move(out), {a}, [m, d](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) (*ga)[static_cast<size_t>(i) * d + j] += self.grad[j] / m;
  });
}

// Column means summed in sorted order: bitwise invariant to row permutation
// (temporal pooling contract). Gradient is the same 1/m fan-out as the plain mean.
inline DiffTensor mean_over_rows_orderfree(const DiffTensor& a) {
  detail::check_matrix("mean_over_rows_orderfree", a);
  const int m = a.dim(0), d = a.dim(1);
  std::vector<double> out(d, 0.0);
  std::vector<double> column(m);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < m; ++i) column[i] = a.at(i, j);
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out[j] = acc / m;
  }
  return make_op({1, d}, std::move(out), {a}, [m, d](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) (*ga)[static_cast<size_t>(i) * d + j] += self.grad[j] / m;
  });
}

// Column max: [m x d] -> [1 x d]; gradient routes to the first argmax per column.
inline DiffTensor max_over_rows(const DiffTensor& a) {
  detail::check_matrix("max_over_rows", a);
  const int m = a.dim(0), d = a.dim(1);
  std::vector<double> out(d);
  std::vector<int> arg(d, 0);
  for (int j = 0; j < d; ++j) {
    double best = a.at(0, j);
    int bi = 0;
    for (int i = 1; i < m; ++i)
      if (a.at(i, j) > best) {
        best = a.at(i, j);
        bi = i;
      }
    out[j] = best;
    arg[j] = bi;
  }
  return make_op({1, d}, std::move(out), {a}, [arg = std::move(arg), d](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (int j = 0; j < d; ++j) (*ga)[static_cast<size_t>(arg[j]) * d + j] += self.grad[j];
  });
}

// Row means: [m x d] -> [m x 1]
inline DiffTensor mean_per_row(const DiffTensor& a) {
  detail::check_matrix("mean_per_row", a);
  const int m = a.dim(0), d = a.dim(1);
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) out[i] += a.at(i, j);
    out[i] /= d;
  }
  return make_op({m, 1}, std::move(out), {a}, [m, d](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) (*ga)[static_cast<size_t>(i) * d + j] += self.grad[i] / d;
  });
}

inline DiffTensor add_rowvec(const DiffTensor& a, const DiffTensor& r) {
  detail::check_matrix("add_rowvec", a);
  const int m = a.dim(0), d = a.dim(1);
  if (r.numel() != d)
    throw std::invalid_argument("add_rowvec: vector " + shape_str(r.shape()) + " vs matrix " +
                                shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] += r.at(j);
  return make_op(a.shape(), std::move(out), {a, r}, [m, d](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gr = detail::grad_of(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) (*gr)[j] += self.grad[static_cast<size_t>(i) * d + j];
  });
}

inline DiffTensor mul_rowvec(const DiffTensor& a, const DiffTensor& r) {
  detail::check_matrix("mul_rowvec", a);
  const int m = a.dim(0), d = a.dim(1);
  if (r.numel() != d)
    throw std::invalid_argument("mul_rowvec: vector " + shape_str(r.shape()) + " vs matrix " +
                                shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] *= r.at(j);
  return make_op(a.shape(), std::move(out), {a, r}, [m, d](detail::TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& rv = self.parents[1]->values;
    if (auto* ga = detail::grad_of(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
          const size_t ix = static_cast<size_t>(i) * d + j;
          (*ga)[ix] += self.grad[ix] * rv[j];
        }
    if (auto* gr = detail::grad_of(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
          const size_t ix = static_cast<size_t>(i) * d + j;
          (*gr)[j] += self.grad[ix] * av[ix];
        }
  });
}

inline DiffTensor add_colvec(const DiffTensor& a, const DiffTensor& c) {
  detail::check_matrix("add_colvec", a);
  const int m = a.dim(0), d = a.dim(1);
  if (c.numel() != m)
    throw std::invalid_argument("add_colvec: vector " + shape_str(c.shape()) + " vs matrix " +
                                shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] += c.at(i);
  return make_op(a.shape(), std::move(out), {a, c}, [m, d](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gc = detail::grad_of(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) (*gc)[i] += self.grad[static_cast<size_t>(i) * d + j];
  });
}

inline DiffTensor mul_colvec(const DiffTensor& a, const DiffTensor& c) {
  detail::check_matrix("mul_colvec", a);
  const int m = a.dim(0), d = a.dim(1);
  if (c.numel() != m)
    throw std::invalid_argument("mul_colvec: vector " + shape_str(c.shape()) + " vs matrix " +
                                shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] *= c.at(i);
  return make_op(a.shape(), std::move(out), {a, c}, [m, d](detail::TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& cv = self.parents[1]->values;
    if (auto* ga = detail::grad_of(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
          const size_t ix = static_cast<size_t>(i) * d + j;
          (*ga)[ix] += self.grad[ix] * cv[i];
        }
    if (auto* gc = detail::grad_of(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
          const size_t ix = static_cast<size_t>(i) * d + j;
          (*gc)[i] += self.grad[ix] * av[ix];
        }
  });
}

// Per-row dot product of two equally shaped matrices: [m x d] x [m x d] -> [m]
inline DiffTensor rowwise_dot(const DiffTensor& a, const DiffTensor& b) {
  detail::check_same_shape("rowwise_dot", a, b);
  detail::check_matrix("rowwise_dot", a);
  const int m = a.dim(0), d = a.dim(1);
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) out[i] += a.at(i, j) * b.at(i, j);
  return make_op({m}, std::move(out), {a, b}, [m, d](detail::TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (auto* ga = detail::grad_of(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
          (*ga)[static_cast<size_t>(i) * d + j] += self.grad[i] * bv[static_cast<size_t>(i) * d + j];
    if (auto* gb = detail::grad_of(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
          (*gb)[static_cast<size_t>(i) * d + j] += self.grad[i] * av[static_cast<size_t>(i) * d + j];
  });
}

inline DiffTensor add_broadcast_scalar(const DiffTensor& a, const DiffTensor& s) {
  if (s.numel() != 1)
    throw std::invalid_argument("add_broadcast_scalar: scalar operand has shape " + shape_str(s.shape()));
  std::vector<double> out(a.values());
  for (double& v : out) v += s.value();
  return make_op(a.shape(), std::move(out), {a, s}, [](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gs = detail::grad_of(self, 1)) {
      double acc = 0.0;
      for (double g : self.grad) acc += g;
      (*gs)[0] += acc;
    }
  });
}

inline DiffTensor reshape(const DiffTensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  std::vector<double> out(a.values());
  return make_op(std::move(shape), std::move(out), {a}, [](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  });
}

inline DiffTensor reduce_sum_all(const DiffTensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op({1}, {acc}, {a}, [](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[0];
  });
}

inline DiffTensor reduce_mean_all(const DiffTensor& a) {
  return scalar_mul(reduce_sum_all(a), 1.0 / a.numel());
}

// Inverted dropout; identity when rate == 0. Train-mode only by convention.
inline DiffTensor dropout(const DiffTensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return a;
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.numel());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op(a.shape(), std::move(out), {a}, [mask = std::move(mask)](detail::TensorNode& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * mask[i];
  });
}

// Composite layer normalization over the last axis of a matrix.
inline DiffTensor layer_norm(const DiffTensor& x, const DiffTensor& gain, const DiffTensor& bias,
                             double eps = 1e-6) {
  DiffTensor mu = mean_per_row(x);
  DiffTensor centered = add_colvec(x, reshape(scalar_mul(mu, -1.0), {x.dim(0)}));
  DiffTensor var = mean_per_row(mul(centered, centered));
  DiffTensor inv = rsqrt_shift(var, eps);
  DiffTensor normed = mul_colvec(centered, reshape(inv, {x.dim(0)}));
  return add_rowvec(mul_rowvec(normed, gain), bias);
}

}  // namespace prosograph
