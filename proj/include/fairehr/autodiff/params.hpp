#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>

#include "fairehr/autodiff/ops.hpp"
#include "fairehr/random.hpp"
#include "json.hpp"

namespace fairehr::ad {

/// Named trainable matrices in a stable (lexicographic) order.
class ParameterSet {
public:
  void set(const std::string &name, Eigen::MatrixXd value) { values_[name] = std::move(value); }

  const Eigen::MatrixXd &at(const std::string &name) const;
  Eigen::MatrixXd &at(const std::string &name);
  bool contains(const std::string &name) const { return values_.count(name) != 0; }

  const std::map<std::string, Eigen::MatrixXd> &entries() const { return values_; }
  std::map<std::string, Eigen::MatrixXd> &entries() { return values_; }
  std::size_t scalar_count() const;
  bool empty() const { return values_.empty(); }

  /// Zero-filled set with the same names and shapes.
  ParameterSet zeros_like() const;

  /// Glorot-uniform weight "<prefix>.weight" (in x out) and zero bias
  /// "<prefix>.bias" (1 x out).
  void add_linear(const std::string &prefix, Eigen::Index in, Eigen::Index out, Rng &rng);

private:
  std::map<std::string, Eigen::MatrixXd> values_;
};

/// Parameters placed on a tape as leaves.
template <typename S> class Bound {
public:
  Bound(Tape<S> &tape, const ParameterSet &params, bool requires_grad) : tape_(&tape) {
    for (const auto &[name, value] : params.entries()) {
      vars_.emplace(name, tape.leaf(value.template cast<S>(), requires_grad));
    }
  }

  const Var<S> &operator[](const std::string &name) const {
    const auto it = vars_.find(name);
    require(it != vars_.end(), ErrorKind::kContract, "unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Var<S>> &vars() const { return vars_; }

  /// Gradients of the last backward() pass, keyed like the parameter set.
  ParameterSet gradients() const {
    ParameterSet out;
    for (const auto &[name, var] : vars_) {
      out.set(name, tape_->grad(var).template cast<double>());
    }
    return out;
  }

private:
  Tape<S> *tape_;
  std::map<std::string, Var<S>> vars_;
};

/// {"name": {"shape": [r, c], "values": [row-major]}}; doubles round-trip
/// exactly through the JSON text.
nlohmann::json parameters_to_json(const ParameterSet &params);
ParameterSet parameters_from_json(const nlohmann::json &doc);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias correction.
class Adam {
public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(ParameterSet &params, const ParameterSet &grads);
  long steps() const { return step_; }

private:
  AdamConfig config_;
  ParameterSet first_moment_;
  ParameterSet second_moment_;
  long step_ = 0;
};

} // namespace fairehr::ad
