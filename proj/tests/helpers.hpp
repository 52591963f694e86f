#pragma once

#include "panelbreak/core.hpp"
#include "panelbreak/rng.hpp"

namespace test_helpers {

using panelbreak::Matrix;
using panelbreak::Vector;

inline Matrix random_matrix(int rows, int cols, panelbreak::Philox& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline Matrix random_normal_matrix(int rows, int cols, panelbreak::Philox& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

inline panelbreak::PanelData random_panel(int n, int t, int p, panelbreak::Philox& rng) {
  std::vector<Matrix> x;
  for (int j = 0; j < p; ++j) x.push_back(random_matrix(n, t, rng, -2.0, 2.0));
  return panelbreak::make_panel(random_normal_matrix(n, t, rng), std::move(x));
}

}  // namespace test_helpers
