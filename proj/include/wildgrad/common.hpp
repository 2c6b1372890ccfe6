#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace wildgrad {

// Small dense linear algebra over the pair space R^{m x n} x R^{m x n}.
// Dimensions are runtime values but bounded, so everything lives in
// fixed-size inline storage and values are freely copyable.

inline constexpr int max_dim = 4;

// ============================================================
// Errors
// ============================================================

/// Error classes that the CLI maps to distinct exit codes.
struct Error : std::runtime_error {
  enum class Kind { config, scenario, precondition, stage_bound, internal };
  Kind kind;
  Error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

inline Error config_error(const std::string& msg) { return Error(Error::Kind::config, msg); }
inline Error scenario_error(const std::string& msg) { return Error(Error::Kind::scenario, msg); }
inline Error precondition_error(const std::string& msg) { return Error(Error::Kind::precondition, msg); }
inline Error stage_bound_error(const std::string& msg) { return Error(Error::Kind::stage_bound, msg); }
inline Error internal_error(const std::string& msg) { return Error(Error::Kind::internal, msg); }

// ============================================================
// Vec
// ============================================================

struct Vec {
  int n = 0;
  std::array<double, max_dim> v{};

  Vec() = default;
  /// Zero vector of dimension n.
  explicit Vec(int n_) : n(n_) {
    if (n_ < 0 || n_ > max_dim) throw internal_error("Vec: dimension out of range");
  }
  Vec(std::initializer_list<double> xs) {
    if ((int)xs.size() > max_dim) throw internal_error("Vec: dimension out of range");
    for (double x : xs) v[n++] = x;
  }

  double operator[](int i) const { return v[i]; }
  double& operator[](int i) { return v[i]; }
};

inline Vec operator+(const Vec& a, const Vec& b) {
  Vec r(a.n);
  for (int i = 0; i < a.n; ++i) r[i] = a[i] + b[i];
  return r;
}
inline Vec operator-(const Vec& a, const Vec& b) {
  Vec r(a.n);
  for (int i = 0; i < a.n; ++i) r[i] = a[i] - b[i];
  return r;
}
inline Vec operator*(double c, const Vec& a) {
  Vec r(a.n);
  for (int i = 0; i < a.n; ++i) r[i] = c * a[i];
  return r;
}
inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (int i = 0; i < a.n; ++i) s += a[i] * b[i];
  return s;
}
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }
inline double norm_inf(const Vec& a) {
  double s = 0;
  for (int i = 0; i < a.n; ++i) s = std::max(s, std::fabs(a[i]));
  return s;
}

// ============================================================
// Mat
// ============================================================

struct Mat {
  int m = 0, n = 0;
  std::array<double, max_dim * max_dim> v{};

  Mat() = default;
  /// Zero m x n matrix.
  Mat(int m_, int n_) : m(m_), n(n_) {
    if (m_ < 0 || m_ > max_dim || n_ < 0 || n_ > max_dim)
      throw internal_error("Mat: dimension out of range");
  }
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Mat r((int)rows.size(), rows.size() ? (int)rows.begin()->size() : 0);
    int i = 0;
    for (const auto& row : rows) {
      if ((int)row.size() != r.n) throw internal_error("Mat: ragged rows");
      int j = 0;
      for (double x : row) r.at(i, j++) = x;
      ++i;
    }
    return r;
  }

  double at(int i, int j) const { return v[i * n + j]; }
  double& at(int i, int j) { return v[i * n + j]; }
  int entries() const { return m * n; }
};

inline Mat operator+(const Mat& a, const Mat& b) {
  Mat r(a.m, a.n);
  for (int i = 0; i < a.entries(); ++i) r.v[i] = a.v[i] + b.v[i];
  return r;
}
inline Mat operator-(const Mat& a, const Mat& b) {
  Mat r(a.m, a.n);
  for (int i = 0; i < a.entries(); ++i) r.v[i] = a.v[i] - b.v[i];
  return r;
}
inline Mat operator*(double c, const Mat& a) {
  Mat r(a.m, a.n);
  for (int i = 0; i < a.entries(); ++i) r.v[i] = c * a.v[i];
  return r;
}
inline Vec mat_vec(const Mat& A, const Vec& x) {
  Vec r(A.m);
  for (int i = 0; i < A.m; ++i) {
    double s = 0;
    for (int j = 0; j < A.n; ++j) s += A.at(i, j) * x[j];
    r[i] = s;
  }
  return r;
}
inline double frob(const Mat& a) {
  double s = 0;
  for (int i = 0; i < a.entries(); ++i) s += a.v[i] * a.v[i];
  return std::sqrt(s);
}
inline double max_abs(const Mat& a) {
  double s = 0;
  for (int i = 0; i < a.entries(); ++i) s = std::max(s, std::fabs(a.v[i]));
  return s;
}

// ============================================================
// MatrixPair: a point (X1, X2) of R^{m x n} x R^{m x n}
// ============================================================

struct MatrixPair {
  Mat first, second;

  MatrixPair() = default;
  MatrixPair(Mat f, Mat s) : first(std::move(f)), second(std::move(s)) {
    if (first.m != second.m || first.n != second.n)
      throw internal_error("MatrixPair: slot shapes differ");
  }
  /// Zero pair of shape m x n.
  static MatrixPair zero(int m, int n) { return MatrixPair(Mat(m, n), Mat(m, n)); }
  int m() const { return first.m; }
  int n() const { return first.n; }
  int entries() const { return 2 * first.entries(); }
  /// Flat view across both slots, first slot then second.
  double flat(int i) const {
    int e = first.entries();
    return i < e ? first.v[i] : second.v[i - e];
  }
  double& flat(int i) {
    int e = first.entries();
    return i < e ? first.v[i] : second.v[i - e];
  }
};

inline MatrixPair operator+(const MatrixPair& a, const MatrixPair& b) {
  return MatrixPair(a.first + b.first, a.second + b.second);
}
inline MatrixPair operator-(const MatrixPair& a, const MatrixPair& b) {
  return MatrixPair(a.first - b.first, a.second - b.second);
}
inline MatrixPair operator*(double c, const MatrixPair& a) {
  return MatrixPair(c * a.first, c * a.second);
}
inline double dot(const MatrixPair& a, const MatrixPair& b) {
  double s = 0;
  for (int i = 0; i < a.entries(); ++i) s += a.flat(i) * b.flat(i);
  return s;
}
inline double norm(const MatrixPair& a) { return std::sqrt(dot(a, a)); }
inline double dist(const MatrixPair& a, const MatrixPair& b) { return norm(a - b); }

// ============================================================
// Segment in pair space
// ============================================================

struct Segment {
  MatrixPair alpha, beta;
};

// ============================================================
// WaveVector: gamma = (p (x) a, B) with B a = 0
// ============================================================

/// Rank-one matrix with entry (i,j) = p_i * a_j.
inline Mat tensor_product(const Vec& p, const Vec& a) {
  Mat r(p.n, a.n);
  for (int i = 0; i < p.n; ++i)
    for (int j = 0; j < a.n; ++j) r.at(i, j) = p[i] * a[j];
  return r;
}

struct WaveVector {
  Vec p;  // m-vector
  Vec a;  // n-vector, |a| > 0
  Mat B;  // m x n

  /// The embedding (p (x) a, B) into pair space.
  MatrixPair pair() const { return MatrixPair(tensor_product(p, a), B); }
  /// c * gamma in pair space: scales p and B, keeps the direction a.
  WaveVector scaled(double c) const {
    WaveVector r = *this;
    r.p = c * p;
    r.B = c * B;
    return r;
  }
};

/// ||B a|| relative to the invariant tolerance 1e-12 * (||B|| |a| + 1).
inline double wave_residual(const WaveVector& g) { return norm(mat_vec(g.B, g.a)); }

inline void validate_wave(const WaveVector& g, const std::string& who) {
  if (g.B.m != g.p.n || g.B.n != g.a.n) throw scenario_error(who + ": B shape mismatch");
  if (!(norm(g.a) > 0)) throw scenario_error(who + ": wave direction a must be nonzero");
  if (wave_residual(g) > 1e-12 * (frob(g.B) * norm(g.a) + 1))
    throw scenario_error(who + ": B a != 0, not a wave cone element");
}

// ============================================================
// Box / Domain
// ============================================================

/// Open axis-aligned box. Stored with per-axis halfwidths; cubes are the
/// common case and radius() reports the largest halfwidth.
struct Box {
  Vec center;
  Vec half;

  Box() = default;
  Box(Vec c, Vec h) : center(std::move(c)), half(std::move(h)) {
    if (center.n != half.n) throw internal_error("Box: dimension mismatch");
    for (int i = 0; i < half.n; ++i)
      if (!(half[i] > 0)) throw internal_error("Box: halfwidths must be positive");
  }
  static Box cube(const Vec& c, double radius) {
    Vec h(c.n);
    for (int i = 0; i < c.n; ++i) h[i] = radius;
    return Box(c, h);
  }

  int dim() const { return center.n; }
  double radius() const { return norm_inf(half); }
  double min_half() const {
    double s = half[0];
    for (int i = 1; i < half.n; ++i) s = std::min(s, half[i]);
    return s;
  }
  double volume() const {
    double s = 1;
    for (int i = 0; i < half.n; ++i) s *= 2 * half[i];
    return s;
  }
  Vec lo() const { return center - half; }
  Vec hi() const { return center + half; }
  bool contains(const Vec& x) const {
    for (int i = 0; i < center.n; ++i)
      if (!(std::fabs(x[i] - center[i]) < half[i])) return false;
    return true;
  }
  /// Closed containment of another box.
  bool contains_box(const Box& b) const {
    for (int i = 0; i < center.n; ++i)
      if (std::fabs(b.center[i] - center[i]) + b.half[i] > half[i]) return false;
    return true;
  }
  /// Inner box shrunk by a margin on every side of every axis.
  Box shrunk(double margin) const {
    Vec h(half.n);
    for (int i = 0; i < half.n; ++i) {
      h[i] = half[i] - margin;
      if (!(h[i] > 0)) throw internal_error("Box::shrunk: margin swallows the box");
    }
    return Box(center, h);
  }
};

/// Volume of the overlap of two boxes (exact product of 1D overlaps).
inline double overlap_volume(const Box& a, const Box& b) {
  if (a.dim() != b.dim()) return 0;
  double vol = 1;
  for (int i = 0; i < a.dim(); ++i) {
    double lo = std::max(a.center[i] - a.half[i], b.center[i] - b.half[i]);
    double hi = std::min(a.center[i] + a.half[i], b.center[i] + b.half[i]);
    if (hi <= lo) return 0;
    vol *= hi - lo;
  }
  return vol;
}

/// Finite union of boxes with pairwise disjoint interiors.
struct Domain {
  std::vector<Box> boxes;

  double volume() const {
    double s = 0;
    for (const Box& b : boxes) s += b.volume();
    return s;
  }
  bool contains(const Vec& x) const {
    for (const Box& b : boxes)
      if (b.contains(x)) return true;
    return false;
  }
};

inline void validate_domain(const Domain& d) {
  double total = d.volume();
  double overlap = 0;
  for (size_t i = 0; i < d.boxes.size(); ++i)
    for (size_t j = i + 1; j < d.boxes.size(); ++j)
      overlap += overlap_volume(d.boxes[i], d.boxes[j]);
  if (overlap > 1e-12 * total)
    throw precondition_error("domain boxes overlap beyond tolerance");
}

// ============================================================
// Formatting helpers for diagnostics
// ============================================================

inline std::string str(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
inline std::string str(const Vec& a) {
  std::string s = "(";
  for (int i = 0; i < a.n; ++i) s += (i ? ", " : "") + str(a[i]);
  return s + ")";
}
inline std::string str(const Mat& a) {
  std::string s = "[";
  for (int i = 0; i < a.m; ++i) {
    s += i ? "; " : "";
    for (int j = 0; j < a.n; ++j) s += (j ? ", " : "") + str(a.at(i, j));
  }
  return s + "]";
}
inline std::string str(const MatrixPair& a) { return "(" + str(a.first) + ", " + str(a.second) + ")"; }

}  // namespace wildgrad
