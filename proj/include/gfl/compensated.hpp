#pragma once

#include <cmath>

namespace gfl {

// Error-free transforms and a double-double value type, used where a result
// must be certified well below one ulp of the operands (collision-audit
// energy balances) or where long sums should not lose digits.

struct TwoSum {
  double hi, lo;  // hi + lo == a + b exactly
};

inline TwoSum two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  const double err = (a - (s - bb)) + (b - bb);
  return {s, err};
}

inline TwoSum two_prod(double a, double b) {
  const double p = a * b;
  return {p, std::fma(a, b, -p)};
}

// Unevaluated sum hi + lo with |lo| <= ulp(hi)/2.
struct DD {
  double hi = 0.0, lo = 0.0;

  static DD from(double x) { return {x, 0.0}; }

  DD operator+(const DD& o) const {
    TwoSum s = two_sum(hi, o.hi);
    TwoSum t = two_sum(lo, o.lo);
    double lo1 = s.lo + t.hi;
    double hi2 = s.hi + lo1;
    lo1 = (s.hi - hi2) + lo1;
    const double lo2 = lo1 + t.lo;
    const double hi3 = hi2 + lo2;
    return {hi3, (hi2 - hi3) + lo2};
  }

  DD operator-(const DD& o) const { return *this + DD{-o.hi, -o.lo}; }

  DD operator*(double c) const {
    TwoSum p = two_prod(hi, c);
    const double lo1 = std::fma(lo, c, p.lo);
    const double h = p.hi + lo1;
    return {h, (p.hi - h) + lo1};
  }

  double value() const { return hi + lo; }
};

// x*y as a double-double.
inline DD dd_prod(double x, double y) {
  TwoSum p = two_prod(x, y);
  return {p.hi, p.lo};
}

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }

  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace gfl
