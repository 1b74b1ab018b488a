#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbnet/data.hpp"
#include "dbnet/metrics.hpp"
#include "dbnet/model.hpp"

namespace dbnet {

struct TrainConfig {
  double learning_rate = 0.0009;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 1000;
  std::size_t patience = 300;  // epochs without eval-loss improvement before stopping
  std::size_t rounds = 10;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the violated bound.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Adam over the trainable entries of a parameter list, reading each
/// parameter's accumulated gradient.
template <typename T>
class Adam {
 public:
  Adam(const ParamList<T>& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);

  void step();
  void zero_grad();
  std::size_t timestep() const { return t_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_pa = 0.0;
};

struct RoundResult {
  std::size_t round = 0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  EvalReport eval;  // with the restored best weights
  std::vector<EpochRecord> history;
  std::vector<Tensor<float>> weights;  // parameters() order
};

struct TrainResult {
  std::vector<RoundResult> rounds;
  std::size_t best_round = 0;

  const RoundResult& best() const { return rounds.at(best_round); }
};

using EpochCallback = std::function<void(std::size_t round, const EpochRecord&)>;

/// Seed of round r derived from the base seed by SplitMix64.
std::uint64_t round_seed(std::uint64_t base, std::size_t round);

/// Inference-mode predictions and mean cross-entropy over `set`.
EvalReport evaluate(DbNet<float>& model, const TrialSet& set, std::size_t batch_size = 64);

/// One seeded run: per epoch, shuffle, Adam over minibatches, then score the
/// evaluation set. Stops after `patience` epochs without a lower evaluation
/// loss and keeps the weights of the lowest-loss epoch.
RoundResult train_round(const DbNetConfig& model_config, const TrainConfig& config, const TrialSet& train_set,
                        const TrialSet& eval_set, std::size_t round, const EpochCallback& on_epoch = {});

/// `config.rounds` independent rounds, up to `jobs` at a time; the best round
/// has the highest evaluation P_a (earliest round on ties). `on_epoch` may be
/// called from several threads when jobs > 1.
TrainResult train(const DbNetConfig& model_config, const TrainConfig& config, const TrialSet& train_set,
                  const TrialSet& eval_set, const EpochCallback& on_epoch = {}, std::size_t jobs = 1);

/// Runs task(0..count-1) on up to `jobs` threads. The first exception thrown
/// by any task is rethrown after all threads finish.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task);

/// round,epoch,train_loss,eval_loss,eval_Pa
std::string history_csv(const TrainResult& result);

}  // namespace dbnet
