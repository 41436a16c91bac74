#include "fairehr/autodiff/params.hpp"

#include <cmath>

namespace fairehr::ad {

const Eigen::MatrixXd &ParameterSet::at(const std::string &name) const {
  const auto it = values_.find(name);
  require(it != values_.end(), ErrorKind::kContract, "unknown parameter '" + name + "'");
  return it->second;
}

Eigen::MatrixXd &ParameterSet::at(const std::string &name) {
  const auto it = values_.find(name);
  require(it != values_.end(), ErrorKind::kContract, "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto &[name, value] : values_) {
    n += static_cast<std::size_t>(value.size());
  }
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto &[name, value] : values_) {
    out.set(name, Eigen::MatrixXd::Zero(value.rows(), value.cols()));
  }
  return out;
}

void ParameterSet::add_linear(const std::string &prefix, Eigen::Index in, Eigen::Index out,
                              Rng &rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Eigen::MatrixXd weight(in, out);
  for (Eigen::Index r = 0; r < in; ++r) {
    for (Eigen::Index c = 0; c < out; ++c) {
      weight(r, c) = rng.uniform(-limit, limit);
    }
  }
  set(prefix + ".weight", std::move(weight));
  set(prefix + ".bias", Eigen::MatrixXd::Zero(1, out));
}

nlohmann::json parameters_to_json(const ParameterSet &params) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto &[name, value] : params.entries()) {
    nlohmann::json values = nlohmann::json::array();
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        values.push_back(value(r, c));
      }
    }
    doc[name] = {{"shape", {value.rows(), value.cols()}}, {"values", std::move(values)}};
  }
  return doc;
}

ParameterSet parameters_from_json(const nlohmann::json &doc) {
  require(doc.is_object(), ErrorKind::kParse, "parameters: expected an object");
  ParameterSet out;
  try {
    for (const auto &[name, entry] : doc.items()) {
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      const auto &values = entry.at("values");
      require(shape.size() == 2 && shape[0] >= 0 && shape[1] >= 0 &&
                  values.size() == static_cast<std::size_t>(shape[0] * shape[1]),
              ErrorKind::kSchema, "parameter '" + name + "': shape does not match values");
      Eigen::MatrixXd m(shape[0], shape[1]);
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < shape[0]; ++r) {
        for (Eigen::Index c = 0; c < shape[1]; ++c) {
          m(r, c) = values[k++].get<double>();
        }
      }
      out.set(name, std::move(m));
    }
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::kParse, std::string("parameters: ") + e.what());
  }
  return out;
}

void Adam::step(ParameterSet &params, const ParameterSet &grads) {
  if (first_moment_.empty()) {
    first_moment_ = params.zeros_like();
    second_moment_ = params.zeros_like();
  }
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (auto &[name, value] : params.entries()) {
    if (!grads.contains(name)) {
      continue;
    }
    const Eigen::MatrixXd &g = grads.at(name);
    Eigen::MatrixXd &m = first_moment_.at(name);
    Eigen::MatrixXd &v = second_moment_.at(name);
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    value.array() -= config_.learning_rate * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + config_.epsilon);
  }
}

} // namespace fairehr::ad
