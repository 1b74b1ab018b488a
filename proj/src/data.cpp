#include "dbnet/data.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <random>

#include "dbnet/io.hpp"
#include "dbnet/ops.hpp"

namespace dbnet {
namespace {

constexpr char kContainerMagic[4] = {'E', 'E', 'G', 'B'};

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - ops::unit_uniform(rng);  // (0, 1]
  const double u2 = ops::unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t narrow_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw DataError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void TrialSet::validate() const {
  if (trials.rank() != 3) throw DataError("trials must be [m, C, T], got " + shape_str(trials.shape()));
  if (labels.size() != trials.dim(0)) {
    throw DataError("label count " + std::to_string(labels.size()) + " != trial count " +
                    std::to_string(trials.dim(0)));
  }
  if (n_classes < 1) throw DataError("n_classes must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " of trial " + std::to_string(i) + " outside [0, " +
                      std::to_string(n_classes) + ")");
    }
  }
  if (!(meta.sampling_rate > 0.0)) throw DataError("sampling rate must be positive");
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!std::isfinite(trials[i])) throw DataError("non-finite sample at flat index " + std::to_string(i));
  }
  if (!meta.electrode_names.empty() && meta.electrode_names.size() != channels()) {
    throw DataError("electrode names (" + std::to_string(meta.electrode_names.size()) + ") != C (" +
                    std::to_string(channels()) + ")");
  }
  if (!meta.class_names.empty() && meta.class_names.size() != n_classes) {
    throw DataError("class names (" + std::to_string(meta.class_names.size()) + ") != n_classes (" +
                    std::to_string(n_classes) + ")");
  }
}

Tensor<float> TrialSet::gather(std::span<const std::size_t> indices) const {
  const std::size_t row = channels() * samples();
  Tensor<float> out(Shape{indices.size(), channels(), samples()});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw DataError("trial index " + std::to_string(indices[b]) + " out of range");
    std::copy_n(trials.raw() + indices[b] * row, row, out.raw() + b * row);
  }
  return out;
}

TrialSet TrialSet::subset(std::span<const std::size_t> indices) const {
  TrialSet out;
  out.trials = gather(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  out.n_classes = n_classes;
  out.meta = meta;
  return out;
}

std::vector<std::size_t> TrialSet::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

Standardizer fit_standardizer(const TrialSet& train, const WarningSink& warn) {
  train.validate();
  const std::size_t m = train.size(), c = train.channels(), t = train.samples();
  Standardizer s;
  s.mu.assign(c, 0.0);
  s.sigma.assign(c, 0.0);
  const double count = static_cast<double>(m * t);
  for (std::size_t j = 0; j < c; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const float* row = train.trials.raw() + (i * c + j) * t;
      for (std::size_t k = 0; k < t; ++k) total += row[k];
    }
    const double mean = total / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const float* row = train.trials.raw() + (i * c + j) * t;
      for (std::size_t k = 0; k < t; ++k) {
        const double dv = row[k] - mean;
        sq += dv * dv;
      }
    }
    s.mu[j] = mean;
    s.sigma[j] = std::sqrt(sq / count);
    if (s.sigma[j] < Standardizer::kSigmaFloor) {
      s.degenerate.push_back(j);
      std::string name = j < train.meta.electrode_names.size() ? train.meta.electrode_names[j] : std::to_string(j);
      std::string msg = "warning: electrode " + name + " is degenerate (sigma = " + std::to_string(s.sigma[j]) +
                        "), clamped to 1e-8";
      if (warn) {
        warn(msg);
      } else {
        std::cerr << msg << '\n';
      }
      s.sigma[j] = Standardizer::kSigmaFloor;
    }
  }
  return s;
}

TrialSet apply_standardizer(const Standardizer& standardizer, const TrialSet& set) {
  set.validate();
  if (standardizer.channels() != set.channels()) {
    throw DataError("standardizer fitted on " + std::to_string(standardizer.channels()) +
                    " electrodes, data has " + std::to_string(set.channels()));
  }
  TrialSet out = set;
  const std::size_t c = set.channels(), t = set.samples();
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      float* row = out.trials.raw() + (i * c + j) * t;
      const double mu = standardizer.mu[j], inv = 1.0 / standardizer.sigma[j];
      for (std::size_t k = 0; k < t; ++k) row[k] = static_cast<float>((row[k] - mu) * inv);
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const Standardizer& s) {
  j = nlohmann::json{{"mu", s.mu}, {"sigma", s.sigma}, {"degenerate", s.degenerate}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
  j.at("mu").get_to(s.mu);
  j.at("sigma").get_to(s.sigma);
  s.degenerate = j.value("degenerate", std::vector<std::size_t>{});
  if (s.mu.size() != s.sigma.size()) throw DataError("standardizer mu/sigma length mismatch");
  for (double v : s.sigma) {
    if (!(v > 0.0)) throw DataError("standardizer sigma must be positive");
  }
}

std::string encode_container(const TrialSet& set) {
  set.validate();
  if (set.n_classes > 0xffff) throw DataError("n_classes does not fit in 16 bits");
  const double millihertz = std::round(set.meta.sampling_rate * 1000.0);
  if (millihertz < 1.0 || millihertz > 4294967295.0) throw DataError("sampling rate out of container range");

  nlohmann::json meta{{"subject", set.meta.subject},
                      {"class_names", set.meta.class_names},
                      {"electrode_names", set.meta.electrode_names}};
  const std::string meta_text = meta.dump();

  ByteWriter w;
  w.bytes(std::string_view(kContainerMagic, 4));
  w.u16(kContainerVersion);
  w.u32(narrow_u32(set.size(), "m"));
  w.u32(narrow_u32(set.channels(), "C"));
  w.u32(narrow_u32(set.samples(), "T"));
  w.u16(static_cast<std::uint16_t>(set.n_classes));
  w.u32(static_cast<std::uint32_t>(millihertz));
  w.u32(narrow_u32(meta_text.size(), "metadata length"));
  w.bytes(meta_text);
  for (std::size_t y : set.labels) w.u16(static_cast<std::uint16_t>(y));
  for (float v : set.trials.data()) w.f32(v);
  return w.take();
}

TrialSet decode_container(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kContainerMagic, 4)) {
    throw FormatError(FormatError::Kind::BadMagic, "bad magic: not an EEGB container");
  }
  ByteReader r(bytes.substr(4));
  const std::uint16_t version = r.u16("version");
  if (version != kContainerVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "version mismatch: container version " + std::to_string(version) + ", expected " +
                          std::to_string(kContainerVersion));
  }
  const std::size_t m = r.u32("m"), c = r.u32("C"), t = r.u32("T");
  const std::size_t n_classes = r.u16("n_classes");
  const std::uint32_t millihertz = r.u32("fs_millihertz");
  const std::size_t meta_len = r.u32("metadata length");
  if (m == 0 || c == 0 || t == 0 || n_classes == 0 || millihertz == 0) {
    throw FormatError(FormatError::Kind::Malformed, "malformed header: m, C, T, n_classes and fs must be positive");
  }
  const std::string_view meta_text = r.bytes(meta_len, "metadata");

  TrialSet set;
  set.n_classes = n_classes;
  set.meta.sampling_rate = millihertz / 1000.0;
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    set.meta.subject = meta.value("subject", std::string{});
    set.meta.class_names = meta.value("class_names", std::vector<std::string>{});
    set.meta.electrode_names = meta.value("electrode_names", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::Malformed, std::string("malformed metadata: ") + e.what());
  }

  set.labels.resize(m);
  for (auto& y : set.labels) y = r.u16("labels");
  const std::size_t values = m * c * t;
  if (r.remaining() < values * 4) {
    throw FormatError(FormatError::Kind::TruncatedPayload,
                      "truncated payload: expected " + std::to_string(values * 4) + " data bytes, found " +
                          std::to_string(r.remaining()));
  }
  std::vector<float> data(values);
  for (auto& v : data) v = r.f32("data");
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::Malformed,
                      "malformed container: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  set.trials = Tensor<float>(Shape{m, c, t}, std::move(data));
  try {
    set.validate();
  } catch (const DataError& e) {
    throw FormatError(FormatError::Kind::Malformed, std::string("malformed container: ") + e.what());
  }
  return set;
}

void save_container(const TrialSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, encode_container(set));
}

TrialSet load_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

double synth_class_frequency(std::size_t c) { return 10.0 + 12.0 * static_cast<double>(c); }

TrialSet synthesize(std::size_t classes, std::size_t m_per_class, std::size_t channels, std::size_t samples,
                    std::uint64_t seed, const SynthOptions& options) {
  if (classes < 1 || m_per_class < 1 || channels < 1 || samples < 1) {
    throw DataError("synthesize: classes, trials per class, channels and samples must be positive");
  }
  const double fs = options.sampling_rate;
  if (synth_class_frequency(classes - 1) >= 0.45 * fs) {
    throw DataError("synthesize: " + std::to_string(classes) + " classes exceed the band available at " +
                    std::to_string(fs) + " Hz");
  }
  std::mt19937_64 rng(seed);

  std::vector<double> gains(classes * channels);
  for (auto& g : gains) g = 0.5 + ops::unit_uniform(rng);

  const std::size_t m = classes * m_per_class;
  TrialSet set;
  set.n_classes = classes;
  set.meta.subject = "synthetic-" + std::to_string(seed);
  set.meta.sampling_rate = fs;
  for (std::size_t c = 0; c < classes; ++c) set.meta.class_names.push_back("class" + std::to_string(c));
  for (std::size_t j = 0; j < channels; ++j) set.meta.electrode_names.push_back("E" + std::to_string(j));
  set.trials = Tensor<float>(Shape{m, channels, samples});
  set.labels.resize(m);

  const double width = static_cast<double>(samples) / 8.0;
  std::vector<double> burst(samples);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t y = i % classes;
    set.labels[i] = y;
    const double omega = 2.0 * std::numbers::pi * synth_class_frequency(y) / fs;
    std::fill(burst.begin(), burst.end(), 0.0);
    for (std::size_t b = 0; b < options.bursts_per_trial; ++b) {
      const double centre = samples * (0.2 + 0.6 * ops::unit_uniform(rng));
      const double phase = 2.0 * std::numbers::pi * ops::unit_uniform(rng);
      const double amp = options.burst_amplitude * (0.8 + 0.4 * ops::unit_uniform(rng));
      for (std::size_t k = 0; k < samples; ++k) {
        const double u = (static_cast<double>(k) - centre) / width;
        burst[k] += amp * std::exp(-0.5 * u * u) * std::sin(omega * static_cast<double>(k) + phase);
      }
    }
    for (std::size_t j = 0; j < channels; ++j) {
      float* row = set.trials.raw() + (i * channels + j) * samples;
      const double g = gains[y * channels + j];
      for (std::size_t k = 0; k < samples; ++k) {
        row[k] = static_cast<float>(g * burst[k] + options.noise_std * gaussian(rng));
      }
    }
  }
  return set;
}

}  // namespace dbnet
