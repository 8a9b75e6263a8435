#include <cmath>
#include <vector>

#include "tli/intrinsics.hpp"

namespace tli {

namespace {

// Row-major n x n orthonormal real Fourier basis (periodic difference operator
// eigenvectors) with eigenvalues 2 - 2cos(2 pi k / n).
void fourier_basis(int n, std::vector<double>& q, std::vector<double>& eig) {
  q.assign(static_cast<std::size_t>(n) * n, 0.0);
  eig.assign(static_cast<std::size_t>(n), 0.0);
  int row = 0;
  auto put = [&](int k, bool sine, double scale) {
    for (int x = 0; x < n; ++x) {
      const double a = kTwoPi * k * x / n;
      q[static_cast<std::size_t>(row) * n + x] = scale * (sine ? std::sin(a) : std::cos(a));
    }
    eig[static_cast<std::size_t>(row)] = 2.0 - 2.0 * std::cos(kTwoPi * k / n);
    ++row;
  };
  put(0, false, std::sqrt(1.0 / n));
  for (int k = 1; 2 * k < n; ++k) {
    put(k, false, std::sqrt(2.0 / n));
    put(k, true, std::sqrt(2.0 / n));
  }
  if (n % 2 == 0) put(n / 2, false, std::sqrt(1.0 / n));
}

// DCT-II basis: eigenvectors of the Neumann second-difference operator with
// eigenvalues 2 - 2cos(pi j / n).
void dct_basis(int n, std::vector<double>& c, std::vector<double>& eig) {
  c.assign(static_cast<std::size_t>(n) * n, 0.0);
  eig.assign(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    const double s = std::sqrt((j == 0 ? 1.0 : 2.0) / n);
    for (int y = 0; y < n; ++y) c[static_cast<std::size_t>(j) * n + y] = s * std::cos(kPi * j * (y + 0.5) / n);
    eig[static_cast<std::size_t>(j)] = 2.0 - 2.0 * std::cos(kPi * j / n);
  }
}

// D^T g for the forward-difference operator.
Image divergence_adjoint(const Image& gx, const Image& gy) {
  const int w = gx.width(), h = gx.height();
  Image b(w, h, 1, DomainTag::LogLinear);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = gx.at(0, y, (x + w - 1) % w) - gx.at(0, y, x);
      if (y >= 1) v += gy.at(0, y - 1, x);
      if (y <= h - 2) v -= gy.at(0, y, x);
      b.at(0, y, x) = v;
    }
  return b;
}

double norm(const Image& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

std::pair<Image, Image> forward_gradients(const Image& u) {
  const int w = u.width(), h = u.height();
  Image gx(w, h, u.channels(), DomainTag::LogLinear), gy(w, h, u.channels(), DomainTag::LogLinear);
  for (int c = 0; c < u.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        gx.at(c, y, x) = u.at(c, y, (x + 1) % w) - u.at(c, y, x);
        gy.at(c, y, x) = y + 1 < h ? u.at(c, y + 1, x) - u.at(c, y, x) : 0.0;
      }
  return {gx, gy};
}

Image poisson_reconstruct(const Image& gx, const Image& gy, PoissonReport* report) {
  if (!gx.same_shape(gy) || gx.channels() != 1)
    throw std::invalid_argument("poisson_reconstruct expects matching 1-channel fields");
  for (std::size_t i = 0; i < gx.size(); ++i)
    if (!std::isfinite(gx.data()[i]) || !std::isfinite(gy.data()[i]))
      throw std::invalid_argument("poisson_reconstruct: non-finite gradient");
  const int w = gx.width(), h = gx.height();
  const Image b = divergence_adjoint(gx, gy);

  std::vector<double> q, ex, c, ey;
  fourier_basis(w, q, ex);
  dct_basis(h, c, ey);

  // forward transforms: rows by Q, then columns by C
  std::vector<double> t(static_cast<std::size_t>(w) * h, 0.0), s(t.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int k = 0; k < w; ++k) {
      double acc = 0.0;
      const double* qk = &q[static_cast<std::size_t>(k) * w];
      for (int x = 0; x < w; ++x) acc += qk[x] * b.at(0, y, x);
      t[static_cast<std::size_t>(y) * w + k] = acc;
    }
  for (int j = 0; j < h; ++j)
    for (int k = 0; k < w; ++k) {
      double acc = 0.0;
      for (int y = 0; y < h; ++y) acc += c[static_cast<std::size_t>(j) * h + y] * t[static_cast<std::size_t>(y) * w + k];
      const double lambda = ex[static_cast<std::size_t>(k)] + ey[static_cast<std::size_t>(j)];
      // the (0,0) mode is the constant null space: zero-mean gauge
      s[static_cast<std::size_t>(j) * w + k] = (j == 0 && k == 0) ? 0.0 : acc / lambda;
    }
  // inverse transforms
  for (int y = 0; y < h; ++y)
    for (int k = 0; k < w; ++k) {
      double acc = 0.0;
      for (int j = 0; j < h; ++j) acc += c[static_cast<std::size_t>(j) * h + y] * s[static_cast<std::size_t>(j) * w + k];
      t[static_cast<std::size_t>(y) * w + k] = acc;
    }
  Image u(w, h, 1, DomainTag::LogLinear);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < w; ++k) acc += q[static_cast<std::size_t>(k) * w + x] * t[static_cast<std::size_t>(y) * w + k];
      u.at(0, y, x) = acc;
    }

  const auto [ux, uy] = forward_gradients(u);
  Image rx = ux, ry = uy;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    rx.data()[i] -= gx.data()[i];
    ry.data()[i] -= (i / static_cast<std::size_t>(w)) % static_cast<std::size_t>(h) + 1 < static_cast<std::size_t>(h)
                        ? gy.data()[i]
                        : 0.0;
  }
  const Image normal = divergence_adjoint(rx, ry);
  const double gnorm = std::hypot(norm(gx), norm(gy));
  const double bnorm = norm(b);
  PoissonReport rep;
  rep.gradient_residual = gnorm > 0.0 ? std::hypot(norm(rx), norm(ry)) / gnorm : 0.0;
  rep.normal_residual = bnorm > 0.0 ? norm(normal) / bnorm : norm(normal);
  if (rep.normal_residual > 1e-8)
    throw std::runtime_error("poisson_reconstruct: normal equations not satisfied (residual " +
                             std::to_string(rep.normal_residual) + ")");
  if (report) *report = rep;
  return u;
}

}  // namespace tli
