// SPDX-License-Identifier: Apache-2.0
#include "petfuse/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "petfuse/error.hpp"

namespace petfuse::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Node& n, std::size_t rows, std::size_t cols) {
  return ConstMap(n.value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return MutMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Creates the output node. Parents are recorded only when some input needs a
// gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(product(shape), 0.0);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || shape.size() > 2) throw DimensionError("tensor rank must be 1 or 2");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (values.size() != product(shape)) {
    throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return from({1, n}, std::move(values));
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw DimensionError("backward() needs a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rank() != 2 || b.rows() != k) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(*a.node(), m, k) * as_matrix(*b.node(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      as_matrix(pa.grad_buffer(), m, k).noalias() += ConstMap(self.grad.data(), m, n) *
                                                     as_matrix(pb, k, n).transpose();
    }
    if (pb.requires_grad) {
      as_matrix(pb.grad_buffer(), k, n).noalias() += as_matrix(pa, m, k).transpose() *
                                                     ConstMap(self.grad.data(), m, n);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + bias[j];
  }
  return make_result(x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& px = *self.parents[0];
    auto& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (px.value[i] > 0) g[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, double scale_factor) {
  const std::size_t m = q.rows(), n = k.rows(), d = q.cols();
  if (k.cols() != d) throw DimensionError("attention: query/key feature dimensions differ");
  std::vector<double> a(m * n);
  as_matrix(a, m, n).noalias() = as_matrix(*q.node(), m, d) * as_matrix(*k.node(), n, d).transpose();
  for (std::size_t i = 0; i < m; ++i) {
    double* rowp = a.data() + i * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      rowp[j] *= scale_factor;
      mx = std::max(mx, rowp[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      rowp[j] = std::exp(rowp[j] - mx);
      z += rowp[j];
    }
    for (std::size_t j = 0; j < n; ++j) rowp[j] /= z;
  }
  return a;
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale_factor) {
  const std::size_t m = q.rows(), n = k.rows(), d = q.cols(), e = v.cols();
  if (k.cols() != d) throw DimensionError("attention: query/key feature dimensions differ");
  if (v.rows() != n) throw DimensionError("attention: key/value counts differ");
  require_finite(q, "softmax_attention");
  require_finite(k, "softmax_attention");
  require_finite(v, "softmax_attention");
  if (!std::isfinite(scale_factor)) throw NumericError("softmax_attention: non-finite scale");

  auto attn = std::make_shared<std::vector<double>>(attention_weights(q, k, scale_factor));
  std::vector<double> out(m * e);
  as_matrix(out, m, e).noalias() = ConstMap(attn->data(), m, n) * as_matrix(*v.node(), n, e);

  return make_result({m, e}, std::move(out), {q, k, v}, [attn, m, n, d, e, scale_factor](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    ConstMap g(self.grad.data(), m, e);
    ConstMap a(attn->data(), m, n);
    if (pv.requires_grad) as_matrix(pv.grad_buffer(), n, e).noalias() += a.transpose() * g;
    if (!pq.requires_grad && !pk.requires_grad) return;
    RowMajor da = g * as_matrix(pv, n, e).transpose();
    RowMajor ds(m, n);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += da(i, j) * a(i, j);
      for (std::size_t j = 0; j < n; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot) * scale_factor;
    }
    if (pq.requires_grad) as_matrix(pq.grad_buffer(), m, d).noalias() += ds * as_matrix(pk, n, d);
    if (pk.requires_grad) {
      as_matrix(pk.grad_buffer(), n, d).noalias() += ds.transpose() * as_matrix(pq, m, d);
    }
  });
}

Tensor layer_norm(const Tensor& x, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c < 2) throw DimensionError("layer_norm: last axis must have length >= 2");
  std::vector<double> out(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data().data() + i * c;
    double mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (xr[j] - mu) * inv;
  }
  return make_result(x.shape(), std::move(out), {x}, [inv_std, r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double nc = static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
      const double* dy = self.grad.data() + i * c;
      const double* y = self.value.data() + i * c;
      double mean_dy = 0, mean_dy_y = 0;
      for (std::size_t j = 0; j < c; ++j) {
        mean_dy += dy[j];
        mean_dy_y += dy[j] * y[j];
      }
      mean_dy /= nc;
      mean_dy_y /= nc;
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += (*inv_std)[i] * (dy[j] - mean_dy - y[j] * mean_dy_y);
      }
    }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = x[i] * (*mask)[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [mask](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (product(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  }
  for (auto& v : out) v /= static_cast<double>(r);
  return make_result({1, c}, std::move(out), {x}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
    }
  });
}

Tensor row(const Tensor& x, std::size_t i) {
  const std::size_t c = x.cols();
  if (i >= x.rows()) throw DimensionError("row index out of range");
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  return make_result({1, c}, std::move(out), {x}, [i, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t c = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  bool any_grad = false;
  for (const auto& r : rows) {
    if (r.size() != c) throw DimensionError("stack_rows: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
    any_grad = any_grad || r.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->shape = {rows.size(), c};
  node->value = std::move(out);
  if (grad_enabled() && any_grad) {
    node->requires_grad = true;
    for (const auto& r : rows) node->parents.push_back(r.node_ptr());
    node->backward_fn = [c](Node& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        Node& p = *self.parents[i];
        if (!p.requires_grad) continue;
        auto& g = p.grad_buffer();
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  const std::size_t c = table.cols(), n = indices.size();
  if (n == 0) throw DimensionError("gather_rows: no indices");
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    if (indices[i] >= table.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({n, c}, std::move(out), {table}, [idx = std::move(idx), c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, std::span<const double> pos_weight) {
  if (logits.shape() != targets.shape()) throw DimensionError("bce: logits/targets shape mismatch");
  const std::size_t c = logits.cols();
  if (!pos_weight.empty() && pos_weight.size() != c) {
    throw DimensionError("bce: pos_weight needs one entry per label");
  }
  require_finite(logits, "bce_with_logits");
  const double n = static_cast<double>(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], y = targets[i];
    const double w = pos_weight.empty() ? 1.0 : pos_weight[i % c];
    total += w * y * softplus(-z) + (1.0 - y) * softplus(z);
  }
  std::vector<double> pw(pos_weight.begin(), pos_weight.end());
  std::vector<double> ys(targets.data().begin(), targets.data().end());
  return make_result({1}, {total / n}, {logits}, [pw = std::move(pw), ys = std::move(ys), c, n](Node& self) {
    Node& pz = *self.parents[0];
    auto& g = pz.grad_buffer();
    const double go = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = pz.value[i], y = ys[i];
      const double w = pw.empty() ? 1.0 : pw[i % c];
      g[i] += go * (-w * y * sigmoid(-z) + (1.0 - y) * sigmoid(z));
    }
  });
}

}  // namespace petfuse::ad
