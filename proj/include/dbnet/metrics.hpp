#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dbnet {

/// n x n counts, rows = true class, columns = predicted class.
class Confusion {
 public:
  explicit Confusion(std::size_t n_classes = 2);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * n_ + predicted); }
  std::size_t& at(std::size_t truth, std::size_t predicted) { return counts_.at(truth * n_ + predicted); }
  std::size_t classes() const { return n_; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t total() const;

  std::vector<std::vector<std::size_t>> rows() const;
  static Confusion from_rows(const std::vector<std::vector<std::size_t>>& rows);

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

/// Mean per-class recall (sum_i TP_i / l_i) / n. Every class must have at
/// least one trial.
double accuracy_pa(const Confusion& confusion);

/// Mean recall over the classes that have at least one trial; used when an
/// evaluation set does not cover every class.
double accuracy_pa_present(const Confusion& confusion);

/// Chance-corrected agreement (P_a - P) / (1 - P) with P = 1 / n_classes.
double kappa(double pa, std::size_t n_classes);

struct EvalReport {
  Confusion confusion;
  double pa = 0.0;
  double kappa = 0.0;
  double loss = 0.0;
  std::vector<double> recalls;  // NaN for classes without trials
  std::size_t classes_present = 0;
};

EvalReport make_report(const Confusion& confusion, double loss);

void to_json(nlohmann::json& j, const EvalReport& report);

/// Header "true\predicted,<class>..." then one row per true class.
std::string confusion_csv(const Confusion& confusion, const std::vector<std::string>& class_names = {});

}  // namespace dbnet
