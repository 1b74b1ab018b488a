#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbnet/tensor.hpp"

namespace dbnet {

/// Invalid trial data or a mismatch between data and what consumes it.
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrialMeta {
  std::string subject;
  double sampling_rate = 250.0;  // Hz
  std::vector<std::string> class_names;
  std::vector<std::string> electrode_names;

  bool operator==(const TrialMeta&) const = default;
};

/// m trials of C electrodes by T samples with one class label each.
struct TrialSet {
  Tensor<float> trials;  // [m, C, T]
  std::vector<std::size_t> labels;
  std::size_t n_classes = 2;
  TrialMeta meta;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return trials.rank() == 3 ? trials.dim(1) : 0; }
  std::size_t samples() const { return trials.rank() == 3 ? trials.dim(2) : 0; }

  /// Throws DataError when an invariant does not hold.
  void validate() const;

  TrialSet subset(std::span<const std::size_t> indices) const;
  /// Trials `indices` stacked into a [batch, C, T] tensor.
  Tensor<float> gather(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;

  bool operator==(const TrialSet&) const = default;
};

/// Per-electrode z-score parameters fitted on training data.
struct Standardizer {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<std::size_t> degenerate;  // electrodes whose sigma was clamped

  static constexpr double kSigmaFloor = 1e-8;

  std::size_t channels() const { return mu.size(); }
  bool operator==(const Standardizer&) const = default;
};

using WarningSink = std::function<void(const std::string&)>;

/// Mean and population standard deviation of every electrode, pooled over all
/// trials and samples. Electrodes with sigma below the floor are clamped and
/// reported through `warn` (stderr when empty).
Standardizer fit_standardizer(const TrialSet& train, const WarningSink& warn = {});

/// (z - mu_train) / sigma_train per electrode.
TrialSet apply_standardizer(const Standardizer& standardizer, const TrialSet& set);

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

inline constexpr std::uint16_t kContainerVersion = 1;

std::string encode_container(const TrialSet& set);
TrialSet decode_container(std::string_view bytes);
void save_container(const TrialSet& set, const std::filesystem::path& path);
TrialSet load_container(const std::filesystem::path& path);

struct SynthOptions {
  double sampling_rate = 250.0;
  double noise_std = 0.5;
  double burst_amplitude = 1.0;
  std::size_t bursts_per_trial = 2;
};

/// Frequency of class c's bursts: 10 + 12c Hz.
double synth_class_frequency(std::size_t c);

/// Each trial carries Gaussian-windowed sinusoid bursts at its class frequency,
/// mixed onto electrodes with fixed per-class gains, plus white Gaussian noise.
/// Labels cycle 0, 1, ..., classes-1 so any prefix is near-balanced.
TrialSet synthesize(std::size_t classes, std::size_t m_per_class, std::size_t channels, std::size_t samples,
                    std::uint64_t seed, const SynthOptions& options = {});

}  // namespace dbnet
