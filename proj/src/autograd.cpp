#include "handtex/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace handtex::ad {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

void require_rank3(const Var& x, const char* op) {
  if (x.value().rank() != 3) {
    throw std::invalid_argument(std::string(op) + ": expected [C,H,W], got " + shape_string(x.shape()));
  }
}

// Unary elementwise op with derivative expressed through input and output values.
template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Tensor out(a.shape());
  const Tensor& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_op(std::move(out), {a}, [dfdx](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * dfdx(p.value[i], n.value[i]);
  });
}

// cols: [Cin*k*k, Ho*Wo]
void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, RowMat& cols) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  cols.resize(static_cast<Eigen::Index>(c_in) * k * k, static_cast<Eigen::Index>(ho) * wo);
  const Real* src = x.data();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Real* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          Real* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const Real* srow = src + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, int k, int stride, int pad, int ho, int wo, Tensor& dx) {
  const int c_in = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  Real* dst = dx.data();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Real* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          Real* drow = dst + (static_cast<std::size_t>(c) * h + iy) * w;
          const Real* srow = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var scalar(Real v) { return Var(Tensor({1}, v)); }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (auto& p : parents) {
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(p.node());
  }
  if (node->requires_grad) node->backward_fn = std::move(backward);
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  if (!seed.same_shape(root.value())) throw std::invalid_argument("backward: seed shape mismatch");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    n->grad = Tensor();
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->grad_buffer() += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_buffer() += n.grad;
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, Real s) {
  Tensor out = a.value();
  out *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.size() != c.size()) throw std::invalid_argument("mul_const: size mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  return make_op(std::move(out), {a}, [c](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c[i];
  });
}

Var add_const(const Var& a, const Tensor& c) {
  if (a.size() != c.size()) throw std::invalid_argument("add_const: size mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return make_op(std::move(out), {a}, [](Node& n) { n.parents[0]->grad_buffer() += n.grad; });
}

Var abs(const Var& a) {
  return unary(
      a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var clamp(const Var& a, Real lo, Real hi) {
  return unary(
      a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var relu(const Var& a) {
  return unary(
      a, [](Real x) { return x > 0 ? x : 0.0; }, [](Real x, Real) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, Real slope) {
  return unary(
      a, [slope](Real x) { return x > 0 ? x : slope * x; },
      [slope](Real x, Real) { return x > 0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](Real x) { return 1.0 / (1.0 + std::exp(-x)); }, [](Real, Real y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank3(x, "conv2d");
  const Tensor& w = weight.value();
  if (w.rank() != 4 || w.dim(1) != x.value().dim(0) || w.dim(2) != w.dim(3)) {
    throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  if (bias.size() != static_cast<std::size_t>(w.dim(0))) throw std::invalid_argument("conv2d: bias size");
  const int c_out = w.dim(0), c_in = w.dim(1), k = w.dim(2);
  const int h = x.value().dim(1), wd = x.value().dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small");
  const Eigen::Index ck = static_cast<Eigen::Index>(c_in) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(ho) * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor out({c_out, ho, wo});
  MapRow out_m(out.data(), c_out, hw);
  CMapRow w_m(w.data(), c_out, ck);
  if (pointwise) {
    out_m.noalias() = w_m * CMapRow(x.value().data(), ck, hw);
  } else {
    RowMat cols;
    im2col(x.value(), k, stride, pad, ho, wo, cols);
    out_m.noalias() = w_m * cols;
  }
  const Real* b = bias.value().data();
  for (int c = 0; c < c_out; ++c) out_m.row(c).array() += b[c];

  return make_op(std::move(out), {x, weight, bias}, [=](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    Node& pb = *n.parents[2];
    CMapRow dy(n.grad.data(), c_out, hw);
    if (pb.requires_grad) {
      Tensor& gb = pb.grad_buffer();
      for (int c = 0; c < c_out; ++c) gb[c] += dy.row(c).sum();
    }
    if (!pw.requires_grad && !px.requires_grad) return;
    CMapRow wm(pw.value.data(), c_out, ck);
    if (pointwise) {
      CMapRow xm(px.value.data(), ck, hw);
      if (pw.requires_grad) MapRow(pw.grad_buffer().data(), c_out, ck).noalias() += dy * xm.transpose();
      if (px.requires_grad) MapRow(px.grad_buffer().data(), ck, hw).noalias() += wm.transpose() * dy;
      return;
    }
    RowMat cols;
    if (pw.requires_grad) {
      im2col(px.value, k, stride, pad, ho, wo, cols);
      MapRow(pw.grad_buffer().data(), c_out, ck).noalias() += dy * cols.transpose();
    }
    if (px.requires_grad) {
      cols.resize(ck, hw);
      cols.noalias() = wm.transpose() * dy;
      col2im_add(cols, k, stride, pad, ho, wo, px.grad_buffer());
    }
  });
}

Var avg_pool2(const Var& x) {
  require_rank3(x, "avg_pool2");
  const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd spatial size");
  Tensor out({c, h / 2, w / 2});
  const Tensor& in = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx)
        out.at(ch, y, xx) = 0.25 * (in.at(ch, 2 * y, 2 * xx) + in.at(ch, 2 * y, 2 * xx + 1) +
                                    in.at(ch, 2 * y + 1, 2 * xx) + in.at(ch, 2 * y + 1, 2 * xx + 1));
  return make_op(std::move(out), {x}, [c, h, w](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) g.at(ch, y, xx) += 0.25 * n.grad.at(ch, y / 2, xx / 2);
  });
}

Var upsample_nearest2(const Var& x) {
  require_rank3(x, "upsample_nearest2");
  const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  Tensor out({c, 2 * h, 2 * w});
  const Tensor& in = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = in.at(ch, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [c, h, w](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) g.at(ch, y / 2, xx / 2) += n.grad.at(ch, y, xx);
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int h = parts[0].value().dim(1), w = parts[0].value().dim(2);
  int c_total = 0;
  for (const auto& p : parts) {
    require_rank3(p, "concat_channels");
    if (p.value().dim(1) != h || p.value().dim(2) != w) {
      throw std::invalid_argument("concat_channels: spatial mismatch");
    }
    c_total += p.value().dim(0);
  }
  Tensor out({c_total, h, w});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + off);
    off += p.size();
  }
  return make_op(std::move(out), parts, [](Node& n) {
    std::size_t o = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[o + i];
      }
      o += p->value.size();
    }
  });
}

Var zeros_like_detached(const Var& x) { return Var(Tensor(x.shape())); }

Var instance_norm(const Var& x, Real eps) {
  require_rank3(x, "instance_norm");
  const int c = x.value().dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.value().dim(1)) * x.value().dim(2);
  Tensor out(x.shape());
  std::vector<Real> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    const Real* in = x.value().data() + ch * hw;
    Real mean = 0, var = 0;
    for (std::size_t i = 0; i < hw; ++i) mean += in[i];
    mean /= static_cast<Real>(hw);
    for (std::size_t i = 0; i < hw; ++i) var += (in[i] - mean) * (in[i] - mean);
    inv_std[ch] = 1.0 / std::sqrt(var / static_cast<Real>(hw) + eps);
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = (in[i] - mean) * inv_std[ch];
  }
  return make_op(out, {x}, [c, hw, inv_std, y = out](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t o = ch * hw;
      Real mg = 0, mgy = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        mg += n.grad[o + i];
        mgy += n.grad[o + i] * y[o + i];
      }
      mg /= static_cast<Real>(hw);
      mgy /= static_cast<Real>(hw);
      for (std::size_t i = 0; i < hw; ++i) g[o + i] += inv_std[ch] * (n.grad[o + i] - mg - y[o + i] * mgy);
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank3(x, "global_avg_pool");
  const int c = x.value().dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.value().dim(1)) * x.value().dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    Real s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += x.value()[ch * hw + i];
    out[ch] = s / static_cast<Real>(hw);
  }
  return make_op(std::move(out), {x}, [c, hw](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += n.grad[ch] / static_cast<Real>(hw);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& w = weight.value();
  if (w.rank() != 2 || static_cast<std::size_t>(w.dim(1)) != x.size() ||
      bias.size() != static_cast<std::size_t>(w.dim(0))) {
    throw std::invalid_argument("linear: weight " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  const int o = w.dim(0), c = w.dim(1);
  Tensor out({o});
  Eigen::Map<Eigen::VectorXd>(out.data(), o) =
      CMapRow(w.data(), o, c) * Eigen::Map<const Eigen::VectorXd>(x.value().data(), c) +
      Eigen::Map<const Eigen::VectorXd>(bias.value().data(), o);
  return make_op(std::move(out), {x, weight, bias}, [o, c](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    Node& pb = *n.parents[2];
    Eigen::Map<const Eigen::VectorXd> dy(n.grad.data(), o);
    if (pb.requires_grad) pb.grad_buffer() += n.grad;
    if (pw.requires_grad) {
      MapRow(pw.grad_buffer().data(), o, c).noalias() +=
          dy * Eigen::Map<const Eigen::VectorXd>(px.value.data(), c).transpose();
    }
    if (px.requires_grad) {
      Eigen::Map<Eigen::VectorXd>(px.grad_buffer().data(), c).noalias() +=
          CMapRow(pw.value.data(), o, c).transpose() * dy;
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var slice(const Var& x, std::size_t offset, std::size_t length) {
  if (offset + length > x.size()) throw std::invalid_argument("slice: out of range");
  Tensor out({static_cast<int>(length)});
  std::copy(x.value().data() + offset, x.value().data() + offset + length, out.data());
  return make_op(std::move(out), {x}, [offset, length](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < length; ++i) g[offset + i] += n.grad[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Tensor out({static_cast<int>(total)});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + off);
    off += p.size();
  }
  return make_op(std::move(out), parts, [](Node& n) {
    std::size_t o = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[o + i];
      }
      o += p->value.size();
    }
  });
}

Var sum(const Var& x) {
  Real s = 0;
  for (Real v : x.value().values()) s += v;
  return make_op(Tensor({1}, s), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(x), 1.0 / static_cast<Real>(x.size()));
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<Real>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  Real s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
    s += weights[i] * terms[i].item();
  }
  return make_op(Tensor({1}, s), terms, [weights](Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      if (n.parents[i]->requires_grad) n.parents[i]->grad_buffer()[0] += weights[i] * n.grad[0];
  });
}

}  // namespace handtex::ad
