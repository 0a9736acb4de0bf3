#pragma once

// Brute-force reference computations. Nothing here calls into the solver
// paths it is used to check.

#include <functional>

#include "pwcf/numerics.hpp"

namespace pwcf::oracle {

// Minimizes (w - z)^2 over a dense grid of the feasible interval [lo, hi],
// then refines around the best node. Accurate to ~1e-12 for the 1-D
// projection problems used here.
double GridProject1d(double w, double lo, double hi);

// Euclidean projection of v onto {z in [-bound, bound]^2 : feasible(z)} by
// grid search followed by successive local refinement. `feasible` must
// describe a closed convex set with non-empty interior.
Vector GridProject2d(const Vector& v, const std::function<bool(const Vector&)>& feasible,
                     double bound, int refinements = 30);

struct EnumeratedQp {
  Vector solution;
  double objective = 0.0;
};

// Minimizes 1/2 z'Qz + b'z over lower <= z <= upper by enumerating every
// assignment of {at lower, at upper, free} to the coordinates (3^n cases),
// solving the reduced stationarity system, and keeping the best feasible
// candidate. Intended for n <= 6.
EnumeratedQp EnumerateBoxQp(const Matrix& q, const Vector& b, const Vector& lower,
                            const Vector& upper);

// Same enumeration for min 1/2 z'Qz + b'z over the scaled simplex
// {z >= 0, sum z = total}: every support set is tried.
EnumeratedQp EnumerateSimplexQp(const Matrix& q, const Vector& b, double total);

}  // namespace pwcf::oracle
