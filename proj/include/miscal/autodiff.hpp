#ifndef MISCAL_AUTODIFF_HPP
#define MISCAL_AUTODIFF_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "miscal/special.hpp"

namespace miscal::ad {

// Reverse-mode tape. Every operation appends one node holding at most two
// parent indices with the local partials; one backward sweep over the tape
// yields the gradient. A tape belongs to one thread and is reset between
// evaluations.
class Tape {
 public:
  struct Node {
    double w0, w1;
    std::int32_t p0, p1;
  };

  void reset() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  std::int32_t add0() {
    nodes_.push_back({0.0, 0.0, -1, -1});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }
  std::int32_t add1(std::int32_t p, double w) {
    nodes_.push_back({w, 0.0, p, -1});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }
  std::int32_t add2(std::int32_t p0, std::int32_t p1, double w0, double w1) {
    nodes_.push_back({w0, w1, p0, p1});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  // Adjoints of every node with respect to node `out`; adj is resized here.
  void backward(std::int32_t out, std::vector<double>& adj) const {
    adj.assign(nodes_.size(), 0.0);
    adj[out] = 1.0;
    for (std::int32_t i = out; i >= 0; --i) {
      const double a = adj[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.p0 >= 0) adj[n.p0] += n.w0 * a;
      if (n.p1 >= 0) adj[n.p1] += n.w1 * a;
    }
  }

 private:
  std::vector<Node> nodes_;
};

// Value plus tape position. Mixing Vars from different tapes is undefined.
struct Var {
  double v = 0.0;
  std::int32_t i = -1;
  Tape* t = nullptr;
};

inline Var var(Tape& t, double v) { return {v, t.add0(), &t}; }

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

inline Var operator+(const Var& a, const Var& b) {
  return {a.v + b.v, a.t->add2(a.i, b.i, 1.0, 1.0), a.t};
}
inline Var operator+(const Var& a, double c) {
  return {a.v + c, a.t->add1(a.i, 1.0), a.t};
}
inline Var operator+(double c, const Var& a) { return a + c; }

inline Var operator-(const Var& a, const Var& b) {
  return {a.v - b.v, a.t->add2(a.i, b.i, 1.0, -1.0), a.t};
}
inline Var operator-(const Var& a, double c) {
  return {a.v - c, a.t->add1(a.i, 1.0), a.t};
}
inline Var operator-(double c, const Var& a) {
  return {c - a.v, a.t->add1(a.i, -1.0), a.t};
}
inline Var operator-(const Var& a) {
  return {-a.v, a.t->add1(a.i, -1.0), a.t};
}

inline Var operator*(const Var& a, const Var& b) {
  return {a.v * b.v, a.t->add2(a.i, b.i, b.v, a.v), a.t};
}
inline Var operator*(const Var& a, double c) {
  return {a.v * c, a.t->add1(a.i, c), a.t};
}
inline Var operator*(double c, const Var& a) { return a * c; }

inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, a.t->add2(a.i, b.i, inv, -a.v * inv * inv), a.t};
}
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, const Var& a) {
  const double inv = 1.0 / a.v;
  return {c * inv, a.t->add1(a.i, -c * inv * inv), a.t};
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator+=(Var& a, double c) { return a = a + c; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return {e, a.t->add1(a.i, e), a.t};
}

// Out-of-domain arguments poison the value with -inf and a zero partial;
// the sampler treats a non-finite target as a rejected (divergent) point.
inline Var log(const Var& a) {
  if (!(a.v > 0.0))
    return {-std::numeric_limits<double>::infinity(), a.t->add1(a.i, 0.0), a.t};
  return {std::log(a.v), a.t->add1(a.i, 1.0 / a.v), a.t};
}

inline Var log1p(const Var& a) {
  if (!(a.v > -1.0))
    return {-std::numeric_limits<double>::infinity(), a.t->add1(a.i, 0.0), a.t};
  return {std::log1p(a.v), a.t->add1(a.i, 1.0 / (1.0 + a.v)), a.t};
}

inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.v);
  return {s, a.t->add1(a.i, 0.5 / s), a.t};
}

inline Var lgamma(const Var& a) {
  if (!(a.v > 0.0))
    return {std::numeric_limits<double>::infinity(), a.t->add1(a.i, 0.0), a.t};
  return {std::lgamma(a.v), a.t->add1(a.i, miscal::digamma(a.v)), a.t};
}

}  // namespace miscal::ad

#endif
