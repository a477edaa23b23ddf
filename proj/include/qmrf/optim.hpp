#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmrf/tensor.hpp"

namespace qmrf::ad {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

/// Raised when a parameter gradient contains NaN or Inf.
class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& param, std::size_t index);
  const std::string& parameter() const { return param_; }

 private:
  std::string param_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient, not decoupled
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

/// One bias-corrected Adam update. Parameters without a materialized gradient
/// are treated as having zero gradient.
void adam_step(ParameterList& params, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam(ParameterList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {}
  void zero_grad();
  void step() { adam_step(params_, state_, cfg_); }
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const AdamState& state() const { return state_; }

 private:
  ParameterList params_;
  AdamConfig cfg_;
  AdamState state_;
};

std::size_t parameter_count(const ParameterList& params);
/// Content hash over names, shapes and values.
std::string parameter_hash(const ParameterList& params);

/// Writes `<stem>.bin` (concatenated little-endian float64, declaration order)
/// and `<stem>.json` (name, shape, offset per tensor, plus `extra`).
void save_checkpoint(const std::filesystem::path& stem, const ParameterList& params,
                     const nlohmann::json& extra = nlohmann::json::object());
/// Loads values into existing parameters; names and shapes must match.
nlohmann::json load_checkpoint(const std::filesystem::path& stem, ParameterList& params);

}  // namespace qmrf::ad
