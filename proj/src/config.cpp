#include "dbnet/config.hpp"

#include <algorithm>
#include <set>
#include <string_view>

namespace dbnet {
namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw ConfigError(std::string(name) + " > 0", "got 0");
}

}  // namespace

BranchDims derive_dims(const DbNetConfig& c) {
  require_positive(c.channels, "channels");
  require_positive(c.samples, "samples");
  require_positive(c.temporal_filters, "temporal_filters");
  require_positive(c.spectral_filters, "spectral_filters");
  require_positive(c.depth, "depth");
  require_positive(c.window_stride, "window_stride");
  require_positive(c.window_count, "window_count");
  require_positive(c.dcc_layers, "dcc_layers");
  require_positive(c.dcc_kernel, "dcc_kernel");
  require_positive(c.se_reduction, "se_reduction");
  if (c.n_classes < 2) throw ConfigError("n_classes >= 2", "got " + std::to_string(c.n_classes));
  for (auto [k, name] : {std::pair{c.temporal_kernel, "temporal_kernel"}, std::pair{c.spectral_kernel, "spectral_kernel"}}) {
    if (k == 0 || k % 8 != 0) {
      throw ConfigError(std::string("pool width ") + name + "/8 must be a positive integer",
                        "got " + std::string(name) + " = " + std::to_string(k));
    }
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw ConfigError("0 <= dropout < 1", "got " + std::to_string(c.dropout));
  }

  BranchDims d;
  d.f_hat = c.temporal_maps();
  d.f_tilde = c.spectral_maps();
  d.t_hat = 64 * c.samples / (c.temporal_kernel * c.temporal_kernel);
  d.t_tilde = 64 * c.samples / (c.spectral_kernel * c.spectral_kernel);
  if (d.t_hat == 0) {
    throw ConfigError("temporal length T_hat = floor(64*T/K_hat^2) >= 1",
                      "T = " + std::to_string(c.samples) + ", K_hat = " + std::to_string(c.temporal_kernel));
  }
  if (d.t_tilde == 0) {
    throw ConfigError("spectral-branch time length T_tilde = floor(64*T/K_tilde^2) >= 1",
                      "T = " + std::to_string(c.samples) + ", K_tilde = " + std::to_string(c.spectral_kernel));
  }
  d.windows = c.effective_windows();
  const std::size_t reach = (d.windows - 1) * c.window_stride;
  if (d.t_hat <= reach) {
    throw ConfigError("subsequence length l_hat = T_hat - n + 1 >= 1",
                      "T_hat = " + std::to_string(d.t_hat) + ", n = " + std::to_string(d.windows) +
                          ", s = " + std::to_string(c.window_stride));
  }
  if (d.f_tilde <= reach) {
    throw ConfigError("subsequence length l_tilde = F_tilde - n + 1 >= 1",
                      "F_tilde = " + std::to_string(d.f_tilde) + ", n = " + std::to_string(d.windows) +
                          ", s = " + std::to_string(c.window_stride));
  }
  d.l_hat = d.t_hat - reach;
  d.l_tilde = d.f_tilde - reach;
  d.se_hat_hidden = ceil_div(d.l_hat, c.se_reduction);
  d.se_tilde_hidden = ceil_div(d.l_tilde, c.se_reduction);
  if (c.gc_enabled) {
    d.concat_len = d.f_hat * d.windows * d.l_hat + d.windows * d.l_tilde * d.t_tilde;
  } else {
    d.concat_len = d.f_hat * d.t_hat + d.f_tilde * d.t_tilde;
  }
  return d;
}

std::size_t receptive_field(std::size_t d, std::size_t k, std::size_t j) {
  std::size_t r = 1;
  for (std::size_t layer = 1; layer <= j; ++layer) r = r + ((d - 1) * (k - 1) + k) - 1;
  return r;
}

std::size_t receptive_field_dilated(std::size_t k, std::size_t j) {
  std::size_t r = 1;
  for (std::size_t layer = 1; layer <= j; ++layer) r += (k - 1) * layer;
  return r;
}

std::size_t receptive_field(const DbNetConfig& c) {
  return c.rf_rule == ReceptiveFieldRule::AsPrinted ? receptive_field(c.dcc_layers, c.dcc_kernel, c.dcc_layers)
                                                    : receptive_field_dilated(c.dcc_kernel, c.dcc_layers);
}

std::optional<Violation> validate_hyperparams(const DbNetConfig& c) {
  const BranchDims d = derive_dims(c);
  if (!c.gc_enabled) return std::nullopt;
  const std::size_t r = receptive_field(c);
  if (r >= std::max(d.l_hat, d.l_tilde)) return std::nullopt;
  Violation v{r, d.l_hat, d.l_tilde, {}};
  v.message = std::string(kReceptiveFieldConstraint) + " violated: R_" + std::to_string(c.dcc_layers) + " = " +
              std::to_string(r) + " < max(l_hat = " + std::to_string(d.l_hat) +
              ", l_tilde = " + std::to_string(d.l_tilde) + ") [d = " + std::to_string(c.dcc_layers) +
              ", k = " + std::to_string(c.dcc_kernel) + ", n = " + std::to_string(d.windows) +
              ", rule = " + to_string(c.rf_rule) + "]";
  return v;
}

BranchDims check_config(const DbNetConfig& c) {
  BranchDims d = derive_dims(c);
  if (auto v = validate_hyperparams(c)) {
    throw ConfigError(kReceptiveFieldConstraint, v->message.substr(std::string_view(kReceptiveFieldConstraint).size() + 1));
  }
  return d;
}

std::string to_string(ops::PoolMode mode) { return mode == ops::PoolMode::Average ? "average" : "max"; }

ops::PoolMode pool_mode_from_string(const std::string& s) {
  if (s == "average" || s == "avg") return ops::PoolMode::Average;
  if (s == "max") return ops::PoolMode::Max;
  throw ConfigError("pooling in {average, max}", "got '" + s + "'");
}

std::string to_string(ReceptiveFieldRule rule) {
  return rule == ReceptiveFieldRule::AsPrinted ? "as-printed" : "per-layer-dilation";
}

ReceptiveFieldRule rf_rule_from_string(const std::string& s) {
  if (s == "as-printed") return ReceptiveFieldRule::AsPrinted;
  if (s == "per-layer-dilation") return ReceptiveFieldRule::PerLayerDilation;
  throw ConfigError("rf_rule in {as-printed, per-layer-dilation}", "got '" + s + "'");
}

void to_json(nlohmann::json& j, const DbNetConfig& c) {
  j = nlohmann::json{
      {"channels", c.channels},
      {"samples", c.samples},
      {"n_classes", c.n_classes},
      {"temporal_filters", c.temporal_filters},
      {"temporal_kernel", c.temporal_kernel},
      {"spectral_filters", c.spectral_filters},
      {"spectral_kernel", c.spectral_kernel},
      {"depth", c.depth},
      {"window_stride", c.window_stride},
      {"window_count", c.window_count},
      {"dcc_layers", c.dcc_layers},
      {"dcc_kernel", c.dcc_kernel},
      {"temporal_pooling", to_string(c.temporal_pooling)},
      {"spectral_pooling", to_string(c.spectral_pooling)},
      {"se_enabled", c.se_enabled},
      {"sw_enabled", c.sw_enabled},
      {"gc_enabled", c.gc_enabled},
      {"dropout", c.dropout},
      {"se_reduction", c.se_reduction},
      {"bn_momentum", c.bn_momentum},
      {"bn_epsilon", c.bn_epsilon},
      {"rf_rule", to_string(c.rf_rule)},
  };
}

void from_json(const nlohmann::json& j, DbNetConfig& c) {
  if (!j.is_object()) throw ConfigError("model config is a JSON object", j.dump());
  nlohmann::json defaults;
  to_json(defaults, c);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("known model config key", "unknown key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("channels", c.channels);
  get("samples", c.samples);
  get("n_classes", c.n_classes);
  get("temporal_filters", c.temporal_filters);
  get("temporal_kernel", c.temporal_kernel);
  get("spectral_filters", c.spectral_filters);
  get("spectral_kernel", c.spectral_kernel);
  get("depth", c.depth);
  get("window_stride", c.window_stride);
  get("window_count", c.window_count);
  get("dcc_layers", c.dcc_layers);
  get("dcc_kernel", c.dcc_kernel);
  if (j.contains("temporal_pooling")) c.temporal_pooling = pool_mode_from_string(j.at("temporal_pooling"));
  if (j.contains("spectral_pooling")) c.spectral_pooling = pool_mode_from_string(j.at("spectral_pooling"));
  get("se_enabled", c.se_enabled);
  get("sw_enabled", c.sw_enabled);
  get("gc_enabled", c.gc_enabled);
  get("dropout", c.dropout);
  get("se_reduction", c.se_reduction);
  get("bn_momentum", c.bn_momentum);
  get("bn_epsilon", c.bn_epsilon);
  if (j.contains("rf_rule")) c.rf_rule = rf_rule_from_string(j.at("rf_rule"));
}

}  // namespace dbnet
