#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "asca/asca.hpp"

namespace asca::testing {

inline std::string factor_letter(std::size_t f) { return std::string(1, static_cast<char>('A' + f)); }

/// Fully crossed label table over factors A, B, C, ... with `count(cell)`
/// samples per full cell (cells numbered with the last factor fastest).
/// Rows are shuffled when an engine is given.
inline DesignTable crossed_table(const std::vector<std::size_t>& levels,
                                 const std::function<std::size_t(std::size_t)>& count,
                                 std::mt19937_64* shuffle = nullptr) {
  DesignTable t;
  for (std::size_t f = 0; f < levels.size(); ++f) t.factor_names.push_back(factor_letter(f));
  std::size_t cells = 1;
  for (std::size_t l : levels) cells *= l;
  for (std::size_t c = 0; c < cells; ++c) {
    std::vector<std::string> row(levels.size());
    std::size_t rem = c;
    for (std::size_t f = levels.size(); f-- > 0;) {
      row[f] = "l" + std::to_string(rem % levels[f] + 1);
      rem /= levels[f];
    }
    for (std::size_t r = 0; r < count(c); ++r) t.rows.push_back(row);
  }
  if (shuffle) std::shuffle(t.rows.begin(), t.rows.end(), *shuffle);
  for (std::size_t i = 0; i < t.rows.size(); ++i) t.sample_ids.push_back("s" + std::to_string(i + 1));
  return t;
}

/// "A*B" or "A*B*C": every main effect and interaction of the factors.
inline std::string full_formula(std::size_t n_factors) {
  std::string f;
  for (std::size_t i = 0; i < n_factors; ++i) f += (i ? "*" : "") + factor_letter(i);
  return n_factors == 1 ? "A" : f;
}

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

/// Mean of the rows sharing each key, broadcast back to every row.
inline Eigen::MatrixXd group_means(const Eigen::MatrixXd& y, const std::vector<std::size_t>& key) {
  std::map<std::size_t, std::pair<Eigen::RowVectorXd, double>> acc;
  for (std::size_t i = 0; i < key.size(); ++i) {
    auto [it, fresh] = acc.try_emplace(key[i], Eigen::RowVectorXd::Zero(y.cols()), 0.0);
    it->second.first += y.row(static_cast<Eigen::Index>(i));
    it->second.second += 1.0;
  }
  Eigen::MatrixXd out(y.rows(), y.cols());
  for (std::size_t i = 0; i < key.size(); ++i) {
    const auto& a = acc.at(key[i]);
    out.row(static_cast<Eigen::Index>(i)) = a.first / a.second;
  }
  return out;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

/// Responder / Time / Patient(Responder) layout with Patient random.
inline DesignTable repeated_measures_table(std::size_t patients_per_group, std::size_t times) {
  DesignTable t;
  t.factor_names = {"Responder", "Time", "Patient"};
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t p = 0; p < patients_per_group; ++p) {
      const std::string patient = "P" + std::to_string(g * patients_per_group + p + 1);
      for (std::size_t k = 0; k < times; ++k) {
        t.rows.push_back({g == 0 ? "R" : "NR", "T" + std::to_string(k), patient});
        t.sample_ids.push_back(patient + "_T" + std::to_string(k));
      }
    }
  }
  return t;
}

inline const char* kRepeatedMeasuresModel = "Responder + Time + Patient(Responder) + Responder*Time";

inline DesignOptions random_patient() {
  DesignOptions o;
  o.random_factors = {"Patient"};
  return o;
}

}  // namespace asca::testing
