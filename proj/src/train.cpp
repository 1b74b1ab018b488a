#include "dbnet/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <mutex>
#include <sstream>
#include <thread>

#include "dbnet/weights.hpp"

namespace dbnet {
namespace {

void check_compatible(const DbNetConfig& c, const TrialSet& set, const char* which) {
  set.validate();
  if (set.channels() != c.channels || set.samples() != c.samples || set.n_classes != c.n_classes) {
    throw DataError(std::string(which) + " set is C=" + std::to_string(set.channels()) +
                    ", T=" + std::to_string(set.samples()) + ", n_classes=" + std::to_string(set.n_classes) +
                    "; model expects C=" + std::to_string(c.channels) + ", T=" + std::to_string(c.samples) +
                    ", n_classes=" + std::to_string(c.n_classes));
  }
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(ops::unit_uniform(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate > 0", "got " + std::to_string(learning_rate));
  if (batch_size == 0) throw ConfigError("batch_size > 0", "got 0");
  if (max_epochs == 0) throw ConfigError("max_epochs > 0", "got 0");
  if (patience == 0) throw ConfigError("patience > 0", "got 0");
  if (rounds == 0) throw ConfigError("rounds > 0", "got 0");
  if (patience > max_epochs) {
    throw ConfigError("patience <= max_epochs",
                      "patience " + std::to_string(patience) + " > max_epochs " + std::to_string(max_epochs));
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},       {"patience", c.patience},
                     {"rounds", c.rounds},               {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config is a JSON object", j.dump());
  nlohmann::json defaults;
  to_json(defaults, c);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("known train config key", "unknown key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("patience", c.patience);
  get("rounds", c.rounds);
  get("seed", c.seed);
}

template <typename T>
Adam<T>::Adam(const ParamList<T>& params, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    params_.push_back(p.var);
    m_.emplace_back(p.var.size(), T{});
    v_.emplace_back(p.var.size(), T{});
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    auto value = params_[i].value().data();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = static_cast<T>(beta1_ * m[k] + (1.0 - beta1_) * g[k]);
      v[k] = static_cast<T>(beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k]);
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      value[k] = static_cast<T>(value[k] - lr_ * mhat / (std::sqrt(vhat) + epsilon_));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

std::uint64_t round_seed(std::uint64_t base, std::size_t round) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(round) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EvalReport evaluate(DbNet<float>& model, const TrialSet& set, std::size_t batch_size) {
  check_compatible(model.config(), set, "evaluation");
  if (batch_size == 0) batch_size = 64;
  Confusion confusion(set.n_classes);
  double loss_total = 0.0;
  ForwardContext<float> ctx{Mode::Infer, nullptr, nullptr, nullptr};
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Var<float> probs = model.forward(ctx, Var<float>(set.gather(idx)));
    const std::span<const std::size_t> labels(set.labels.data() + start, end - start);
    loss_total += ops::cross_entropy<float>(nullptr, probs, labels).value()[0] * static_cast<double>(end - start);
    const float* p = probs.value().raw();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const float* row = p + b * set.n_classes;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + set.n_classes) - row);
      confusion.add(labels[b], pred);
    }
  }
  return make_report(confusion, loss_total / static_cast<double>(set.size()));
}

RoundResult train_round(const DbNetConfig& model_config, const TrainConfig& config, const TrialSet& train_set,
                        const TrialSet& eval_set, std::size_t round, const EpochCallback& on_epoch) {
  config.validate();
  check_config(model_config);
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (eval_set.size() == 0) throw DataError("evaluation set is empty");
  check_compatible(model_config, train_set, "training");
  check_compatible(model_config, eval_set, "evaluation");

  RoundResult result;
  result.round = round;
  result.seed = round_seed(config.seed, round);
  DbNet<float> model(model_config, result.seed);
  const ParamList<float> params = model.parameters();
  Adam<float> adam(params, config.learning_rate);
  std::mt19937_64 rng(result.seed ^ 0x5851f42d4c957f2dULL);
  Tape<float> tape;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_loss = std::numeric_limits<double>::infinity();
  result.weights = snapshot(params);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, rng);
    double loss_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(train_set.labels[i]);

      ForwardContext<float> ctx{Mode::Train, &tape, &rng, nullptr};
      const Var<float> probs = model.forward(ctx, Var<float>(train_set.gather(idx)));
      Var<float> loss = ops::cross_entropy(&tape, probs, labels);
      loss_total += loss.value()[0] * static_cast<double>(idx.size());
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }

    const EvalReport eval = evaluate(model, eval_set, config.batch_size);
    const EpochRecord rec{epoch, loss_total / static_cast<double>(order.size()), eval.loss, eval.pa};
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(round, rec);

    if (eval.loss < best_loss) {
      best_loss = eval.loss;
      result.best_epoch = epoch;
      result.weights = snapshot(params);
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }

  restore(params, result.weights);
  result.eval = evaluate(model, eval_set, config.batch_size);
  return result;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

TrainResult train(const DbNetConfig& model_config, const TrainConfig& config, const TrialSet& train_set,
                  const TrialSet& eval_set, const EpochCallback& on_epoch, std::size_t jobs) {
  config.validate();
  check_config(model_config);
  TrainResult out;
  out.rounds.resize(config.rounds);
  parallel_for(config.rounds, jobs, [&](std::size_t r) {
    out.rounds[r] = train_round(model_config, config, train_set, eval_set, r, on_epoch);
  });
  for (std::size_t r = 1; r < out.rounds.size(); ++r) {
    if (out.rounds[r].eval.pa > out.rounds[out.best_round].eval.pa) out.best_round = r;
  }
  return out;
}

std::string history_csv(const TrainResult& result) {
  std::ostringstream os;
  os.precision(9);
  os << "round,epoch,train_loss,eval_loss,eval_Pa\n";
  for (const auto& r : result.rounds) {
    for (const auto& e : r.history) {
      os << r.round << ',' << e.epoch << ',' << e.train_loss << ',' << e.eval_loss << ',' << e.eval_pa << '\n';
    }
  }
  return os.str();
}

}  // namespace dbnet
