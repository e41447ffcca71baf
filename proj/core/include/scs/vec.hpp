#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace scs {

// Dense helpers shared by extraction and analysis. All reductions
// accumulate in double in index order.

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }
inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct Cosine {
  double value = 0.0;
  bool degenerate = false;  // one operand had zero norm; value forced to 0
};

template <class T>
Cosine cosine(std::span<const T> a, std::span<const T> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  double c = dot(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return {c, false};
}

inline std::vector<double> to_double(std::span<const float> a) {
  return std::vector<double>(a.begin(), a.end());
}

}  // namespace scs
