#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace pwcf::oracle {

double GridProject1d(double w, double lo, double hi) {
  constexpr int kNodes = 2001;
  double a = lo;
  double b = hi;
  double best = lo;
  for (int round = 0; round < 40; ++round) {
    const double step = (b - a) / (kNodes - 1);
    double best_cost = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kNodes; ++i) {
      const double z = a + step * i;
      const double cost = (w - z) * (w - z);
      if (cost < best_cost) {
        best_cost = cost;
        best = z;
      }
    }
    a = std::max(lo, best - step);
    b = std::min(hi, best + step);
    if (b - a < 1e-15) break;
  }
  return best;
}

Vector GridProject2d(const Vector& v, const std::function<bool(const Vector&)>& feasible,
                     double bound, int refinements) {
  constexpr int kCoarse = 801;
  constexpr int kFine = 41;
  Vector best(2);
  double best_cost = std::numeric_limits<double>::infinity();
  Vector z(2);
  const double coarse_step = 2.0 * bound / (kCoarse - 1);
  for (int i = 0; i < kCoarse; ++i) {
    for (int j = 0; j < kCoarse; ++j) {
      z << -bound + coarse_step * i, -bound + coarse_step * j;
      if (!feasible(z)) continue;
      const double cost = (v - z).squaredNorm();
      if (cost < best_cost) {
        best_cost = cost;
        best = z;
      }
    }
  }
  double half = 2.0 * coarse_step;
  for (int r = 0; r < refinements; ++r) {
    const Vector center = best;
    const double step = 2.0 * half / (kFine - 1);
    for (int i = 0; i < kFine; ++i) {
      for (int j = 0; j < kFine; ++j) {
        z << center[0] - half + step * i, center[1] - half + step * j;
        if (!feasible(z)) continue;
        const double cost = (v - z).squaredNorm();
        if (cost < best_cost) {
          best_cost = cost;
          best = z;
        }
      }
    }
    half *= 0.25;
  }
  return best;
}

namespace {

double QuadObjective(const Matrix& q, const Vector& b, const Vector& z) {
  return 0.5 * z.dot(q * z) + b.dot(z);
}

}  // namespace

EnumeratedQp EnumerateBoxQp(const Matrix& q, const Vector& b, const Vector& lower,
                            const Vector& upper) {
  const Eigen::Index n = q.rows();
  long total = 1;
  for (Eigen::Index i = 0; i < n; ++i) total *= 3;

  EnumeratedQp best;
  best.objective = std::numeric_limits<double>::infinity();
  const double scale = 1.0 + q.lpNorm<Eigen::Infinity>() + b.lpNorm<Eigen::Infinity>();
  for (long code = 0; code < total; ++code) {
    Vector z = Vector::Zero(n);
    std::vector<Eigen::Index> free;
    long c = code;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int state = static_cast<int>(c % 3);
      c /= 3;
      if (state == 0) {
        z[i] = lower[i];
      } else if (state == 1) {
        z[i] = upper[i];
      } else {
        free.push_back(i);
      }
    }
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Matrix qff(nf, nf);
      Vector rhs(nf);
      const Vector qz = q * z;
      for (Eigen::Index a = 0; a < nf; ++a) {
        for (Eigen::Index k = 0; k < nf; ++k) {
          qff(a, k) = q(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(k)]);
        }
        const Eigen::Index i = free[static_cast<std::size_t>(a)];
        rhs[a] = -(b[i] + qz[i]);
      }
      const Vector zf = qff.fullPivLu().solve(rhs);
      if (!zf.allFinite() || (qff * zf - rhs).lpNorm<Eigen::Infinity>() > 1e-10 * scale) {
        continue;
      }
      for (Eigen::Index a = 0; a < nf; ++a) z[free[static_cast<std::size_t>(a)]] = zf[a];
    }
    if ((z.array() < lower.array() - 1e-12).any() || (z.array() > upper.array() + 1e-12).any()) {
      continue;
    }
    z = z.cwiseMax(lower).cwiseMin(upper);
    const double obj = QuadObjective(q, b, z);
    if (obj < best.objective) {
      best.objective = obj;
      best.solution = z;
    }
  }
  return best;
}

EnumeratedQp EnumerateSimplexQp(const Matrix& q, const Vector& b, double total) {
  const Eigen::Index n = q.rows();
  EnumeratedQp best;
  best.objective = std::numeric_limits<double>::infinity();
  for (long mask = 1; mask < (1L << n); ++mask) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mask & (1L << i)) support.push_back(i);
    }
    const auto ns = static_cast<Eigen::Index>(support.size());
    Matrix kkt = Matrix::Zero(ns + 1, ns + 1);
    Vector rhs(ns + 1);
    for (Eigen::Index a = 0; a < ns; ++a) {
      for (Eigen::Index k = 0; k < ns; ++k) {
        kkt(a, k) = q(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(k)]);
      }
      kkt(a, ns) = 1.0;
      kkt(ns, a) = 1.0;
      rhs[a] = -b[support[static_cast<std::size_t>(a)]];
    }
    rhs[ns] = total;
    const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    if (!sol.allFinite() || (kkt * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-9) continue;
    Vector z = Vector::Zero(n);
    bool ok = true;
    for (Eigen::Index a = 0; a < ns; ++a) {
      if (sol[a] < -1e-12) ok = false;
      z[support[static_cast<std::size_t>(a)]] = std::max(0.0, sol[a]);
    }
    if (!ok) continue;
    const double obj = QuadObjective(q, b, z);
    if (obj < best.objective) {
      best.objective = obj;
      best.solution = z;
    }
  }
  return best;
}

}  // namespace pwcf::oracle
