#include "promptseg/mask_ops.hpp"

#include <cmath>
#include <limits>

namespace promptseg {

namespace {

void check_same(const BinaryMask &a, const BinaryMask &b, const char *what)
{
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": mask shapes differ (" + std::to_string(a.height()) +
                     "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

// Squared distance transform of a sampled function along one dimension
// (Felzenszwalb & Huttenlocher lower envelope of parabolas).
void edt_1d(const std::vector<double> &f, std::vector<double> &d, std::vector<int> &v,
            std::vector<double> &z)
{
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) {
      continue;
    }
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) {
      ++k;
    }
    const double diff = q - v[k];
    d[q] = f[v[k]] == inf ? inf : diff * diff + f[v[k]];
  }
}

} // namespace

double dsc(const BinaryMask &pred, const BinaryMask &gt)
{
  check_same(pred, gt, "dsc");
  size_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) {
    return 1.0;
  }
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

Components connected_components(const BinaryMask &mask)
{
  Components out;
  out.labels = Grid<int>(mask.height(), mask.width(), 0);
  std::vector<std::pair<int, int>> stack;
  int next = 0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask(r, c) || out.labels(r, c) != 0) {
        continue;
      }
      ++next;
      size_t size = 0;
      stack.emplace_back(r, c);
      out.labels(r, c) = next;
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        ++size;
        constexpr int dy[4] = {-1, 1, 0, 0};
        constexpr int dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k];
          const int nx = x + dx[k];
          if (mask.contains(ny, nx) && mask(ny, nx) && out.labels(ny, nx) == 0) {
            out.labels(ny, nx) = next;
            stack.emplace_back(ny, nx);
          }
        }
      }
      out.sizes.push_back(size);
    }
  }
  return out;
}

Grid<double> distance_transform(const BinaryMask &mask)
{
  // Pad by one background pixel on every side so the image border counts as background.
  const int h = mask.height() + 2;
  const int w = mask.width() + 2;
  constexpr double inf = std::numeric_limits<double>::infinity();
  Grid<double> sq(h, w, 0.0);
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      sq(r + 1, c + 1) = mask(r, c) ? inf : 0.0;
    }
  }
  const int n = std::max(h, w);
  std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n)), z(static_cast<size_t>(n) + 1);
  std::vector<int> v(static_cast<size_t>(n));
  for (int c = 0; c < w; ++c) {
    f.resize(static_cast<size_t>(h));
    d.resize(static_cast<size_t>(h));
    for (int r = 0; r < h; ++r) {
      f[static_cast<size_t>(r)] = sq(r, c);
    }
    edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) {
      sq(r, c) = d[static_cast<size_t>(r)];
    }
  }
  for (int r = 0; r < h; ++r) {
    f.resize(static_cast<size_t>(w));
    d.resize(static_cast<size_t>(w));
    for (int c = 0; c < w; ++c) {
      f[static_cast<size_t>(c)] = sq(r, c);
    }
    edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) {
      sq(r, c) = d[static_cast<size_t>(c)];
    }
  }
  Grid<double> out(mask.height(), mask.width(), 0.0);
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      out(r, c) = std::sqrt(sq(r + 1, c + 1));
    }
  }
  return out;
}

BinaryMask mask_and_not(const BinaryMask &a, const BinaryMask &b)
{
  check_same(a, b, "mask_and_not");
  BinaryMask out(a.height(), a.width());
  for (size_t i = 0; i < a.size(); ++i) {
    out[i] = (a[i] && !b[i]) ? 1 : 0;
  }
  return out;
}

BinaryMask shift_mask(const BinaryMask &mask, int dx, int dy)
{
  BinaryMask out(mask.height(), mask.width());
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      const int sr = r - dy;
      const int sc = c - dx;
      if (mask.contains(sr, sc)) {
        out(r, c) = mask(sr, sc);
      }
    }
  }
  return out;
}

} // namespace promptseg
