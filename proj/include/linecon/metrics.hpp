#pragma once

#include <cstdint>
#include <fstream>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace linecon {

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;

  friend bool operator==(const ClassScore&, const ClassScore&) = default;
};

struct Metrics {
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t n_evaluated = 0;
  std::vector<ClassScore> per_class;
  std::vector<std::vector<std::size_t>> confusion;       // [true][predicted]
  std::vector<std::vector<double>> confusion_rownorm;     // rows with no support stay zero

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

// Scores predictions against labels over the rows selected by `mask`
// (an empty mask vector selects every row).
inline Metrics compute_metrics(const std::vector<std::uint32_t>& labels, const std::vector<std::uint32_t>& predictions,
                               std::size_t n_classes, const std::vector<std::uint8_t>& mask = {}) {
  if (labels.size() != predictions.size()) throw std::invalid_argument("compute_metrics: labels/predictions size mismatch");
  if (!mask.empty() && mask.size() != labels.size()) throw std::invalid_argument("compute_metrics: mask size mismatch");
  Metrics m;
  m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (labels[i] >= n_classes || predictions[i] >= n_classes) throw std::invalid_argument("compute_metrics: class index out of range");
    ++m.confusion[labels[i]][predictions[i]];
    ++m.n_evaluated;
  }
  if (m.n_evaluated == 0) throw std::invalid_argument("compute_metrics: empty mask");

  std::size_t correct = 0;
  m.per_class.resize(n_classes);
  m.confusion_rownorm.assign(n_classes, std::vector<double>(n_classes, 0.0));
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t predicted = 0;
    for (std::size_t r = 0; r < n_classes; ++r) predicted += m.confusion[r][c];
    ClassScore& s = m.per_class[c];
    for (std::size_t p = 0; p < n_classes; ++p) s.support += m.confusion[c][p];
    const double tp = static_cast<double>(m.confusion[c][c]);
    correct += m.confusion[c][c];
    s.precision = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
    s.recall = s.support > 0 ? tp / static_cast<double>(s.support) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    if (s.support > 0)
      for (std::size_t p = 0; p < n_classes; ++p)
        m.confusion_rownorm[c][p] = static_cast<double>(m.confusion[c][p]) / static_cast<double>(s.support);
  }
  const auto total = static_cast<double>(m.n_evaluated);
  for (const ClassScore& s : m.per_class) m.weighted_f1 += static_cast<double>(s.support) / total * s.f1;
  m.accuracy = static_cast<double>(correct) / total;
  return m;
}

inline nlohmann::json to_json(const Metrics& m, const std::vector<std::string>& class_names) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& s = m.per_class[c];
    per_class.push_back({{"class", c < class_names.size() ? class_names[c] : std::to_string(c)},
                         {"precision", s.precision},
                         {"recall", s.recall},
                         {"f1", s.f1},
                         {"support", s.support}});
  }
  return {{"n_evaluated", m.n_evaluated}, {"accuracy", m.accuracy},       {"weighted_f1", m.weighted_f1},
          {"per_class", per_class},       {"confusion", m.confusion}, {"confusion_rownorm", m.confusion_rownorm}};
}

// Header row "true\pred,<names...>", then one row per true class.
inline void write_confusion_csv(const Metrics& m, const std::vector<std::string>& class_names,
                                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "true\\pred";
  for (const auto& n : class_names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < m.confusion.size(); ++r) {
    out << (r < class_names.size() ? class_names[r] : std::to_string(r));
    for (std::size_t c : m.confusion[r]) out << ',' << c;
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace linecon
