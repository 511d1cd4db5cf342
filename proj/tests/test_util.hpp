#pragma once

#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "fliptest/core_data.hpp"
#include "fliptest/errors.hpp"

// Expects `stmt` to throw fliptest::Error with the given code.
#define EXPECT_ERRC(stmt, expected_code)                                                  \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " << fliptest::errc_name(expected_code) << ", no throw"; \
    } catch (const fliptest::Error& e_) {                                        \
      EXPECT_EQ(e_.code(), expected_code) << e_.what();                                   \
    }                                                                            \
  } while (0)

namespace testutil {

inline fliptest::FeatureMatrix matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t d = rows.empty() ? 1 : rows.front().size();
  return fliptest::FeatureMatrix::from_rows(rows, fliptest::FeatureMatrix::default_names(d));
}

inline fliptest::FeatureMatrix random_matrix(std::size_t n, std::size_t d, std::mt19937_64& rng,
                                             double lo = -3.0, double hi = 3.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  fliptest::FeatureMatrix m(n, fliptest::FeatureMatrix::default_names(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = u(rng);
  return m;
}

inline fliptest::FeatureMatrix random_int_matrix(std::size_t n, std::size_t d, std::mt19937_64& rng,
                                                 int lo = -5, int hi = 5) {
  std::uniform_int_distribution<int> u(lo, hi);
  fliptest::FeatureMatrix m(n, fliptest::FeatureMatrix::default_names(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = u(rng);
  return m;
}

}  // namespace testutil
