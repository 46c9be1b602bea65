#pragma once

#include <cmath>

#include "drivesim/tape.hpp"

namespace drivesim::ad {

// One-element tape node with value semantics. Kinematics and reward formulas
// are templated over the scalar type so the same code runs on plain doubles
// and on the tape; branch decisions read val().
struct Scalar {
  Var v;

  double val() const { return v.scalar(); }
  Tape* tape() const { return v.tape; }
};

inline Scalar make_const(Tape& t, double x) { return {t.scalar_const(x)}; }

inline Scalar operator+(Scalar a, Scalar b) { return {add(a.v, b.v)}; }
inline Scalar operator-(Scalar a, Scalar b) { return {sub(a.v, b.v)}; }
inline Scalar operator*(Scalar a, Scalar b) { return {mul(a.v, b.v)}; }
inline Scalar operator/(Scalar a, Scalar b) { return {div(a.v, b.v)}; }
inline Scalar operator-(Scalar a) { return {neg(a.v)}; }

inline Scalar operator+(Scalar a, double b) { return {add_const(a.v, b)}; }
inline Scalar operator+(double a, Scalar b) { return {add_const(b.v, a)}; }
inline Scalar operator-(Scalar a, double b) { return {add_const(a.v, -b)}; }
inline Scalar operator-(double a, Scalar b) { return {add_const(neg(b.v), a)}; }
inline Scalar operator*(Scalar a, double b) { return {scale(a.v, b)}; }
inline Scalar operator*(double a, Scalar b) { return {scale(b.v, a)}; }
// True division, not scale-by-reciprocal: keeps traced values bit-identical
// to the plain double path.
inline Scalar operator/(Scalar a, double b) { return {div(a.v, a.v.tape->scalar_const(b))}; }
inline Scalar operator/(double a, Scalar b) { return {div(b.v.tape->scalar_const(a), b.v)}; }

inline Scalar sin(Scalar a) { return {sin(a.v)}; }
inline Scalar cos(Scalar a) { return {cos(a.v)}; }
inline Scalar tan(Scalar a) { return {tan(a.v)}; }
inline Scalar atan(Scalar a) { return {atan(a.v)}; }
inline Scalar atan2(Scalar y, Scalar x) { return {atan2(y.v, x.v)}; }
inline Scalar sqrt(Scalar a) { return {sqrt(a.v)}; }
inline Scalar square(Scalar a) { return {square(a.v)}; }
inline Scalar tanh(Scalar a) { return {tanh(a.v)}; }
inline Scalar clamp(Scalar a, double lo, double hi) { return {clamp(a.v, lo, hi)}; }
// norm2 keeps the subgradient zero at the origin (unlike sqrt of a sum).
inline Scalar hypot(Scalar a, Scalar b) { return {norm2(concat({a.v, b.v}))}; }
inline Scalar cmin(Scalar a, double c) { return {cmin(a.v, c)}; }
inline Scalar cmax(Scalar a, double c) { return {cmax(a.v, c)}; }
inline Scalar huber(Scalar a, double delta) { return {huber(a.v, delta)}; }

// double counterparts so templated code compiles for both scalar types.
inline double value_of(double x) { return x; }
inline double value_of(Scalar x) { return x.val(); }

inline double cmin(double a, double c) { return a < c ? a : c; }
inline double cmax(double a, double c) { return a > c ? a : c; }
inline double clamp(double a, double lo, double hi) { return a < lo ? lo : (a > hi ? hi : a); }
inline double square(double a) { return a * a; }
inline double huber(double x, double delta) {
  double ax = std::fabs(x);
  return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
}

}  // namespace drivesim::ad
