#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "dbnet/ops.hpp"

namespace dbnet {

/// How the dilated-causal stack's receptive field is computed for the
/// hyperparameter constraint. AsPrinted uses the per-layer increment
/// (d-1)(k-1)+k-1 with the layer count d; PerLayerDilation sums (k-1)*j over
/// layers j = 1..d, which is what the stack's dilation = j layers realize.
enum class ReceptiveFieldRule { AsPrinted, PerLayerDilation };

struct DbNetConfig {
  std::size_t channels = 22;
  std::size_t samples = 1125;
  std::size_t n_classes = 4;

  std::size_t temporal_filters = 8;   // F-hat-1
  std::size_t temporal_kernel = 48;   // K-hat
  std::size_t spectral_filters = 16;  // F-tilde-1
  std::size_t spectral_kernel = 64;   // K-tilde
  std::size_t depth = 2;              // depthwise multiplier D

  std::size_t window_stride = 1;  // s
  std::size_t window_count = 6;   // n
  std::size_t dcc_layers = 4;     // d
  std::size_t dcc_kernel = 4;     // k

  ops::PoolMode temporal_pooling = ops::PoolMode::Average;
  ops::PoolMode spectral_pooling = ops::PoolMode::Max;
  bool se_enabled = true;
  bool sw_enabled = true;
  bool gc_enabled = true;

  double dropout = 0.3;
  std::size_t se_reduction = 16;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-3;
  ReceptiveFieldRule rf_rule = ReceptiveFieldRule::AsPrinted;

  std::size_t effective_windows() const { return sw_enabled ? window_count : 1; }
  std::size_t temporal_maps() const { return temporal_filters * depth; }
  std::size_t spectral_maps() const { return spectral_filters * depth; }

  bool operator==(const DbNetConfig&) const = default;
};

struct BranchDims {
  std::size_t f_hat = 0;    // temporal-branch maps
  std::size_t t_hat = 0;    // temporal-branch sequence length after the local block
  std::size_t f_tilde = 0;  // spectral-branch maps (the spectral sequence length)
  std::size_t t_tilde = 0;  // spectral-branch time length
  std::size_t windows = 0;  // subsequences per branch
  std::size_t l_hat = 0;    // temporal subsequence length
  std::size_t l_tilde = 0;  // spectral subsequence length
  std::size_t se_hat_hidden = 0;
  std::size_t se_tilde_hidden = 0;
  std::size_t concat_len = 0;

  bool operator==(const BranchDims&) const = default;
};

/// Rejected configuration; constraint() names the violated relation.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string constraint, const std::string& detail)
      : std::invalid_argument(constraint + ": " + detail), constraint_(std::move(constraint)) {}
  const std::string& constraint() const { return constraint_; }

 private:
  std::string constraint_;
};

inline constexpr const char* kReceptiveFieldConstraint =
    "receptive-field constraint R_d >= max(T_hat - n + 1, F_tilde - n + 1)";

BranchDims derive_dims(const DbNetConfig& config);

/// R_j with R_0 = 1 and increment (d-1)(k-1)+k-1 per layer.
std::size_t receptive_field(std::size_t d, std::size_t k, std::size_t j);

/// 1 + (k-1) * (1 + 2 + ... + j): j causal layers with dilation 1..j.
std::size_t receptive_field_dilated(std::size_t k, std::size_t j);

std::size_t receptive_field(const DbNetConfig& config);

struct Violation {
  std::size_t receptive_field = 0;
  std::size_t l_hat = 0;
  std::size_t l_tilde = 0;
  std::string message;
};

/// nullopt when R_d >= max(l_hat, l_tilde) (or the global block is disabled).
std::optional<Violation> validate_hyperparams(const DbNetConfig& config);

/// derive_dims + validate_hyperparams, throwing ConfigError on either.
BranchDims check_config(const DbNetConfig& config);

std::string to_string(ops::PoolMode mode);
ops::PoolMode pool_mode_from_string(const std::string& s);
std::string to_string(ReceptiveFieldRule rule);
ReceptiveFieldRule rf_rule_from_string(const std::string& s);

void to_json(nlohmann::json& j, const DbNetConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, DbNetConfig& c);

}  // namespace dbnet
