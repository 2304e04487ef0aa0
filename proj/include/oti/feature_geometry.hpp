#pragma once

// Rank-1 factorization of a spatial-temporal feature against the spatial
// feature, and the cosine/angle utilities used for classification.

#include <algorithm>
#include <cmath>
#include <span>

#include "oti/error.hpp"
#include "oti/tensor.hpp"

namespace oti {

inline constexpr double kDegenerateNorm = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: dimensions " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

namespace detail {
inline double checked_norm(std::span<const double> v, const char* what) {
  const double n = norm(v);
  if (!(n > kDegenerateNorm)) throw DegenerateVectorError(std::string(what) + ": near-zero vector");
  return n;
}
}  // namespace detail

inline Vector l2_normalize(std::span<const double> v) {
  const double n = detail::checked_norm(v, "l2_normalize");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

// (<a,b> / ||b||^2) b
inline Vector project_onto(std::span<const double> a, std::span<const double> b) {
  const double nb = detail::checked_norm(b, "project_onto");
  const double coef = dot(a, b) / (nb * nb);
  Vector out(b.begin(), b.end());
  for (double& x : out) x *= coef;
  return out;
}

// a minus its projection onto b.
inline Vector orthogonal_residual(std::span<const double> a, std::span<const double> b) {
  Vector proj = project_onto(a, b);
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= proj[i];
  return out;
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("interpolation weight must lie in [0, 1], got " + std::to_string(lambda));
  }
}

// base + lambda * direction
inline Vector interpolate(std::span<const double> base, std::span<const double> direction,
                          double lambda) {
  check_lambda(lambda);
  if (base.size() != direction.size()) throw ShapeError("interpolate: dimension mismatch");
  Vector out(base.begin(), base.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * direction[i];
  return out;
}

inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
  const double nu = detail::checked_norm(u, "cosine_sim");
  const double nv = detail::checked_norm(v, "cosine_sim");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// Radians in [0, pi].
inline double angle_between(std::span<const double> u, std::span<const double> v) {
  return std::acos(cosine_sim(u, v));
}

// The six per-video features. `v_af_res` is empty when the residual
// connection is disabled.
struct VideoFeatureSet {
  Vector v_before;
  Vector v_after;
  Vector v_af_res;
  Vector v_map;
  Vector v_otf;
  Vector v_af_otf;
  double lambda = 0.0;
};

// Splits `v_st` into its component along `v_before` (v_map) and the
// orthogonal temporal remainder (v_otf), then forms v_before + lambda v_otf.
// Only v_map, v_otf, v_af_otf, v_before and lambda are filled.
inline VideoFeatureSet factorize(std::span<const double> v_before, std::span<const double> v_st,
                                 double lambda) {
  check_lambda(lambda);
  if (v_before.size() != v_st.size()) throw ShapeError("factorize: dimension mismatch");
  detail::checked_norm(v_st, "factorize");
  VideoFeatureSet fs;
  fs.lambda = lambda;
  fs.v_before.assign(v_before.begin(), v_before.end());
  fs.v_map = project_onto(v_st, v_before);
  fs.v_otf = Vector(v_st.begin(), v_st.end());
  for (std::size_t i = 0; i < fs.v_otf.size(); ++i) fs.v_otf[i] -= fs.v_map[i];
  fs.v_af_otf = interpolate(v_before, fs.v_otf, lambda);
  return fs;
}

}  // namespace oti
