#include "dbnet/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dbnet {

Confusion::Confusion(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
}

void Confusion::add(std::size_t truth, std::size_t predicted) {
  if (truth >= n_ || predicted >= n_) {
    throw std::out_of_range("confusion entry (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                            ") outside " + std::to_string(n_) + " classes");
  }
  ++counts_[truth * n_ + predicted];
}

std::size_t Confusion::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::size_t Confusion::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::vector<std::vector<std::size_t>> Confusion::rows() const {
  std::vector<std::vector<std::size_t>> out(n_, std::vector<std::size_t>(n_));
  for (std::size_t t = 0; t < n_; ++t)
    for (std::size_t p = 0; p < n_; ++p) out[t][p] = at(t, p);
  return out;
}

Confusion Confusion::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  Confusion c(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) c.at(t, p) = rows[t][p];
  }
  return c;
}

double accuracy_pa(const Confusion& confusion) {
  double total = 0.0;
  for (std::size_t i = 0; i < confusion.classes(); ++i) {
    const std::size_t l = confusion.row_sum(i);
    if (l == 0) throw std::invalid_argument("class " + std::to_string(i) + " has no trials (l_i = 0)");
    total += static_cast<double>(confusion.at(i, i)) / static_cast<double>(l);
  }
  return total / static_cast<double>(confusion.classes());
}

double accuracy_pa_present(const Confusion& confusion) {
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < confusion.classes(); ++i) {
    const std::size_t l = confusion.row_sum(i);
    if (l == 0) continue;
    total += static_cast<double>(confusion.at(i, i)) / static_cast<double>(l);
    ++present;
  }
  if (present == 0) throw std::invalid_argument("confusion matrix is empty");
  return total / static_cast<double>(present);
}

double kappa(double pa, std::size_t n_classes) {
  if (n_classes < 2) throw std::invalid_argument("kappa needs n_classes >= 2");
  if (!(pa >= 0.0 && pa <= 1.0)) throw std::invalid_argument("P_a = " + std::to_string(pa) + " outside [0, 1]");
  const double p = 1.0 / static_cast<double>(n_classes);
  return (pa - p) / (1.0 - p);
}

EvalReport make_report(const Confusion& confusion, double loss) {
  EvalReport r{confusion, 0.0, 0.0, loss, {}, 0};
  for (std::size_t i = 0; i < confusion.classes(); ++i) {
    const std::size_t l = confusion.row_sum(i);
    if (l == 0) {
      r.recalls.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      r.recalls.push_back(static_cast<double>(confusion.at(i, i)) / static_cast<double>(l));
      ++r.classes_present;
    }
  }
  r.pa = accuracy_pa_present(confusion);
  r.kappa = kappa(r.pa, confusion.classes());
  return r;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json recalls = nlohmann::json::array();
  for (double v : r.recalls) recalls.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j = nlohmann::json{{"confusion", r.confusion.rows()},
                     {"P_a", r.pa},
                     {"K", r.kappa},
                     {"loss", r.loss},
                     {"recalls", recalls},
                     {"n_trials", r.confusion.total()},
                     {"classes_present", r.classes_present}};
}

std::string confusion_csv(const Confusion& confusion, const std::vector<std::string>& class_names) {
  auto name = [&](std::size_t i) {
    return i < class_names.size() ? class_names[i] : std::to_string(i);
  };
  std::ostringstream os;
  os << "true\\predicted";
  for (std::size_t p = 0; p < confusion.classes(); ++p) os << ',' << name(p);
  os << '\n';
  for (std::size_t t = 0; t < confusion.classes(); ++t) {
    os << name(t);
    for (std::size_t p = 0; p < confusion.classes(); ++p) os << ',' << confusion.at(t, p);
    os << '\n';
  }
  return os.str();
}

}  // namespace dbnet
