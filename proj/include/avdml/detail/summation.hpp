#pragma once

namespace avdml::detail {

// Kahan compensated accumulator. T is double or a fixed-size Eigen type.
template <class T>
class CompensatedSum {
 public:
  explicit CompensatedSum(const T& zero) : sum_(zero), carry_(zero) {}

  void add(const T& v) {
    const T y = v - carry_;
    const T t = sum_ + y;
    carry_ = (t - sum_) - y;
    sum_ = t;
  }

  const T& value() const { return sum_; }

 private:
  T sum_;
  T carry_;
};

}  // namespace avdml::detail
