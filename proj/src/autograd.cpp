#include "promptseg/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include "promptseg/errors.hpp"

namespace promptseg::ag {

namespace {

thread_local bool tl_grad_enabled = true;

void require(bool condition, const char *what)
{
  if (!condition) {
    throw ShapeError(what);
  }
}

} // namespace

void Node::accumulate(const Matrix &g)
{
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>())
{
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return tl_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

Var make_op(Matrix value, const std::vector<Var> &parents, std::function<void(Node &)> fn)
{
  Var out(std::move(value));
  if (!tl_grad_enabled) {
    return out;
  }
  bool any = false;
  for (const auto &p : parents) {
    any = any || p.requires_grad();
  }
  if (!any) {
    return out;
  }
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (const auto &p : parents) {
    out.node_->parents.push_back(p.node());
  }
  out.node_->backward_fn = std::move(fn);
  return out;
}

Var make_op(Matrix value, std::initializer_list<Var> parents, std::function<void(Node &)> fn)
{
  return make_op(std::move(value), std::vector<Var>(parents), std::move(fn));
}

void backward(const std::vector<std::pair<Var, Matrix>> &roots)
{
  // Iterative post-order DFS gives a topological order.
  std::vector<Node *> order;
  std::unordered_set<Node *> visited;
  std::vector<std::pair<Node *, size_t>> stack;
  for (const auto &[root, seed] : roots) {
    require(seed.rows() == root.rows() && seed.cols() == root.cols(),
            "backward seed shape differs from root");
    Node *start = root.node().get();
    if (!start->requires_grad || visited.count(start)) {
      continue;
    }
    visited.insert(start);
    stack.emplace_back(start, 0);
    while (!stack.empty()) {
      auto &[node, next] = stack.back();
      if (next < node->parents.size()) {
        Node *parent = node->parents[next++].get();
        if (parent->requires_grad && !visited.count(parent)) {
          visited.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  for (const auto &[root, seed] : roots) {
    if (root.requires_grad()) {
      root.node()->accumulate(seed);
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *node = *it;
    if (node->backward_fn && node->has_grad()) {
      node->backward_fn(*node);
    }
  }
  // Intermediate gradients are released; leaves keep theirs.
  for (Node *node : order) {
    if (node->backward_fn) {
      node->grad.resize(0, 0);
    }
  }
}

void backward(const Var &root, const Matrix &seed) { backward({{root, seed}}); }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var matmul(const Var &a, const Var &b)
{
  require(a.cols() == b.rows(), "matmul inner dimensions differ");
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node &self) {
    auto &pa = self.parents[0];
    auto &pb = self.parents[1];
    if (pa->requires_grad) {
      pa->accumulate(self.grad * pb->value.transpose());
    }
    if (pb->requires_grad) {
      pb->accumulate(pa->value.transpose() * self.grad);
    }
  });
}

Var matmul_nt(const Var &a, const Var &b)
{
  require(a.cols() == b.cols(), "matmul_nt column counts differ");
  Matrix out = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [](Node &self) {
    auto &pa = self.parents[0];
    auto &pb = self.parents[1];
    if (pa->requires_grad) {
      pa->accumulate(self.grad * pb->value);
    }
    if (pb->requires_grad) {
      pb->accumulate(self.grad.transpose() * pa->value);
    }
  });
}

Var add(const Var &a, const Var &b)
{
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shapes differ");
  Matrix out = a.value() + b.value();
  return make_op(std::move(out), {a, b}, [](Node &self) {
    for (auto &p : self.parents) {
      if (p->requires_grad) {
        p->accumulate(self.grad);
      }
    }
  });
}

Var add_row(const Var &a, const Var &row)
{
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row expects a 1 x cols row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](Node &self) {
    auto &pa = self.parents[0];
    auto &pr = self.parents[1];
    if (pa->requires_grad) {
      pa->accumulate(self.grad);
    }
    if (pr->requires_grad) {
      pr->accumulate(self.grad.colwise().sum());
    }
  });
}

Var scale(const Var &a, double factor)
{
  Matrix out = a.value() * factor;
  return make_op(std::move(out), {a}, [factor](Node &self) {
    self.parents[0]->accumulate(self.grad * factor);
  });
}

Var gelu(const Var &a)
{
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Matrix out = a.value().unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make_op(std::move(out), {a}, [inv_sqrt2, inv_sqrt2pi](Node &self) {
    const Matrix &x = self.parents[0]->value;
    Matrix d = x.unaryExpr([inv_sqrt2, inv_sqrt2pi](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var relu(const Var &a)
{
  Matrix out = a.value().cwiseMax(0.0);
  return make_op(std::move(out), {a}, [](Node &self) {
    const Matrix &x = self.parents[0]->value;
    Matrix g = (x.array() > 0.0).select(self.grad, 0.0);
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm(const Var &x, const Var &gamma, const Var &beta, double eps)
{
  const Eigen::Index n = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
          "layer_norm gain/bias must be 1 x cols");
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.value().row(r);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), n](Node &self) {
                   auto &px = self.parents[0];
                   auto &pg = self.parents[1];
                   auto &pb = self.parents[2];
                   if (pg->requires_grad) {
                     pg->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
                   }
                   if (pb->requires_grad) {
                     pb->accumulate(self.grad.colwise().sum());
                   }
                   if (px->requires_grad) {
                     Matrix dxhat = self.grad.array().rowwise() * pg->value.row(0).array();
                     Matrix dx(dxhat.rows(), n);
                     const double inv_n = 1.0 / static_cast<double>(n);
                     for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                       const double s1 = dxhat.row(r).sum();
                       const double s2 = dxhat.row(r).dot(xhat.row(r));
                       dx.row(r) = inv_std(r) * inv_n *
                                   (static_cast<double>(n) * dxhat.row(r).array() - s1 -
                                    xhat.row(r).array() * s2);
                     }
                     px->accumulate(dx);
                   }
                 });
}

Var softmax_rows(const Var &a)
{
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_op(out, {a}, [y = out](Node &self) {
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double s = self.grad.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).array() * (self.grad.row(r).array() - s);
    }
    self.parents[0]->accumulate(dx);
  });
}

Var slice_cols(const Var &a, Eigen::Index start, Eigen::Index count)
{
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_op(std::move(out), {a}, [start, count](Node &self) {
    auto &p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleCols(start, count) = self.grad;
    p->accumulate(g);
  });
}

Var slice_rows(const Var &a, Eigen::Index start, Eigen::Index count)
{
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_op(std::move(out), {a}, [start, count](Node &self) {
    auto &p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleRows(start, count) = self.grad;
    p->accumulate(g);
  });
}

Var concat_cols(const std::vector<Var> &parts)
{
  require(!parts.empty(), "concat_cols needs at least one part");
  Eigen::Index cols = 0;
  for (const auto &p : parts) {
    require(p.rows() == parts.front().rows(), "concat_cols row counts differ");
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  Eigen::Index offset = 0;
  for (const auto &p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make_op(std::move(out), parts, [](Node &self) {
    Eigen::Index off = 0;
    for (auto &p : self.parents) {
      const Eigen::Index c = p->value.cols();
      if (p->requires_grad) {
        p->accumulate(self.grad.middleCols(off, c));
      }
      off += c;
    }
  });
}

Var concat_rows(const std::vector<Var> &parts)
{
  require(!parts.empty(), "concat_rows needs at least one part");
  Eigen::Index rows = 0;
  for (const auto &p : parts) {
    require(p.cols() == parts.front().cols(), "concat_rows column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index offset = 0;
  for (const auto &p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make_op(std::move(out), parts, [](Node &self) {
    Eigen::Index off = 0;
    for (auto &p : self.parents) {
      const Eigen::Index r = p->value.rows();
      if (p->requires_grad) {
        p->accumulate(self.grad.middleRows(off, r));
      }
      off += r;
    }
  });
}

Var reshape(const Var &a, Eigen::Index rows, Eigen::Index cols)
{
  require(rows * cols == a.value().size(), "reshape changes the element count");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_op(std::move(out), {a}, [](Node &self) {
    auto &p = self.parents[0];
    p->accumulate(Eigen::Map<const Matrix>(self.grad.data(), p->value.rows(), p->value.cols()));
  });
}

Var pixel_shuffle(const Var &x, int h, int w, int factor)
{
  require(x.rows() == static_cast<Eigen::Index>(h) * w, "pixel_shuffle row count != h*w");
  require(x.cols() % (factor * factor) == 0, "pixel_shuffle channels not divisible");
  const Eigen::Index channels = x.cols() / (factor * factor);
  const int out_w = w * factor;
  Matrix out(static_cast<Eigen::Index>(h) * w * factor * factor, channels);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const auto src = x.value().row(i * w + j);
      for (int di = 0; di < factor; ++di) {
        for (int dj = 0; dj < factor; ++dj) {
          out.row((i * factor + di) * out_w + (j * factor + dj)) =
              src.segment((di * factor + dj) * channels, channels);
        }
      }
    }
  }
  return make_op(std::move(out), {x}, [h, w, factor, channels, out_w](Node &self) {
    Matrix g(static_cast<Eigen::Index>(h) * w, channels * factor * factor);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        for (int di = 0; di < factor; ++di) {
          for (int dj = 0; dj < factor; ++dj) {
            g.row(i * w + j).segment((di * factor + dj) * channels, channels) =
                self.grad.row((i * factor + di) * out_w + (j * factor + dj));
          }
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

Matrix bilinear_weights(int in_size, int out_size)
{
  Matrix m = Matrix::Zero(out_size, in_size);
  const double ratio = static_cast<double>(in_size) / static_cast<double>(out_size);
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) {
      src = 0.0;
    }
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 1) {
      lo = in_size - 1;
    }
    const int hi = std::min(lo + 1, in_size - 1);
    const double t = src - lo;
    m(o, lo) += 1.0 - t;
    m(o, hi) += t;
  }
  return m;
}

Var resize_bilinear(const Var &grid, int out_h, int out_w)
{
  const int in_h = static_cast<int>(grid.rows());
  const int in_w = static_cast<int>(grid.cols());
  Matrix ry = bilinear_weights(in_h, out_h);
  Matrix rx = bilinear_weights(in_w, out_w);
  Matrix out = ry * grid.value() * rx.transpose();
  return make_op(std::move(out), {grid}, [ry = std::move(ry), rx = std::move(rx)](Node &self) {
    self.parents[0]->accumulate(ry.transpose() * self.grad * rx);
  });
}

} // namespace promptseg::ag
