#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "nde/error.hpp"
#include "nde/params.hpp"

namespace nde {

/// Adaptive-moment optimizer with decoupled weight decay.
///
/// param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-2;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW() = default;
  explicit AdamW(Options opt) : opt_(opt) {}

  const Options& options() const { return opt_; }
  long steps() const { return step_; }

  /// Entries named in `frozen` are left untouched.
  void step(ParameterStore& params, const std::unordered_set<std::string>& frozen = {}) {
    if (m_.empty()) {
      for (const auto& e : params) {
        m_.emplace_back(e.value.size(), 0.0);
        v_.emplace_back(e.value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InvalidArgument("optimizer state does not match parameter store");
    for (const auto& e : params) {
      if (!e.grad.all_finite()) throw NumericalError("non-finite gradient for parameter '" + e.name + "'");
    }

    ++step_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& e = params.at(i);
      if (frozen.contains(e.name)) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < e.value.size(); ++j) {
        const double g = e.grad[j];
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g;
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        e.value[j] -= opt_.learning_rate * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * e.value[j]);
      }
    }
  }

 private:
  Options opt_;
  long step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace nde
