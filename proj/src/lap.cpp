#include "prime/lap.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace prime {

namespace {

// Dense square Jonker-Volgenant: column reduction, reduction transfer,
// two augmenting-row-reduction sweeps, then shortest augmenting paths.
// Fills rowsol (column assigned to each row).
void lap_square(std::size_t n, const std::vector<double>& cost, std::vector<int>& rowsol) {
  const double inf = std::numeric_limits<double>::infinity();
  auto c = [&](int i, int j) -> double { return cost[static_cast<std::size_t>(i) * n + j]; };

  std::vector<int> colsol(n, -1);
  std::vector<double> v(n, 0.0);
  rowsol.assign(n, -1);

  // Column reduction, reverse order.
  std::vector<int> matches(n, 0);
  for (int j = static_cast<int>(n) - 1; j >= 0; --j) {
    double mn = c(0, j);
    int imin = 0;
    for (int i = 1; i < static_cast<int>(n); ++i) {
      if (c(i, j) < mn) {
        mn = c(i, j);
        imin = i;
      }
    }
    v[j] = mn;
    if (++matches[imin] == 1) {
      rowsol[imin] = j;
      colsol[j] = imin;
    } else if (v[j] < v[rowsol[imin]]) {
      int j1 = rowsol[imin];
      rowsol[imin] = j;
      colsol[j] = imin;
      colsol[j1] = -1;
    } else {
      colsol[j] = -1;
    }
  }

  // Reduction transfer.
  std::vector<int> free_rows;
  free_rows.reserve(n);
  for (int i = 0; i < static_cast<int>(n); ++i) {
    if (matches[i] == 0) {
      free_rows.push_back(i);
    } else if (matches[i] == 1) {
      int j1 = rowsol[i];
      double mn = inf;
      for (int j = 0; j < static_cast<int>(n); ++j) {
        if (j != j1 && c(i, j) - v[j] < mn) mn = c(i, j) - v[j];
      }
      v[j1] -= mn;
    }
  }

  // Augmenting row reduction, two sweeps. The guard caps pathological
  // re-scan cycles from floating-point ties; leftover rows fall through to
  // the exact augmentation phase below.
  for (int sweep = 0; sweep < 2 && !free_rows.empty(); ++sweep) {
    std::vector<int> pending = std::move(free_rows);
    free_rows.clear();
    std::size_t k = 0;
    std::size_t guard = 0;
    const std::size_t guard_limit = 10 * n * n + 1000;
    while (k < pending.size()) {
      if (++guard > guard_limit) {
        for (std::size_t r = k; r < pending.size(); ++r) free_rows.push_back(pending[r]);
        break;
      }
      int i = pending[k++];
      double umin = c(i, 0) - v[0];
      int j1 = 0;
      double usubmin = inf;
      int j2 = -1;
      for (int j = 1; j < static_cast<int>(n); ++j) {
        double h = c(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      int i0 = colsol[j1];
      if (umin < usubmin) {
        v[j1] -= usubmin - umin;
      } else if (i0 >= 0) {
        j1 = j2;
        i0 = colsol[j2];
      }
      rowsol[i] = j1;
      colsol[j1] = i;
      if (i0 >= 0) {
        if (umin < usubmin) {
          pending[--k] = i0;
        } else {
          free_rows.push_back(i0);
        }
      }
    }
  }

  // Shortest augmenting path for each remaining free row.
  std::vector<double> d(n);
  std::vector<int> pred(n);
  std::vector<int> collist(n);
  for (int freerow : free_rows) {
    for (int j = 0; j < static_cast<int>(n); ++j) {
      d[j] = c(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    int low = 0, up = 0, last = 0;
    int endofpath = -1;
    double mn = 0.0;
    bool found = false;
    do {
      if (up == low) {
        last = low - 1;
        mn = d[collist[up++]];
        for (int k2 = up; k2 < static_cast<int>(n); ++k2) {
          int j = collist[k2];
          double h = d[j];
          if (h <= mn) {
            if (h < mn) {
              up = low;
              mn = h;
            }
            collist[k2] = collist[up];
            collist[up++] = j;
          }
        }
        for (int k2 = low; k2 < up; ++k2) {
          if (colsol[collist[k2]] < 0) {
            endofpath = collist[k2];
            found = true;
            break;
          }
        }
      }
      if (!found) {
        int j1 = collist[low++];
        int i = colsol[j1];
        double h = c(i, j1) - v[j1] - mn;
        for (int k2 = up; k2 < static_cast<int>(n); ++k2) {
          int j = collist[k2];
          double v2 = c(i, j) - v[j] - h;
          if (v2 < d[j]) {
            pred[j] = i;
            if (v2 == mn) {
              if (colsol[j] < 0) {
                endofpath = j;
                found = true;
                break;
              }
              collist[k2] = collist[up];
              collist[up++] = j;
            }
            d[j] = v2;
          }
        }
      }
    } while (!found);

    for (int k2 = 0; k2 <= last; ++k2) {
      int j1 = collist[k2];
      v[j1] += d[j1] - mn;
    }

    int i;
    do {
      i = pred[endofpath];
      colsol[endofpath] = i;
      int j1 = endofpath;
      endofpath = rowsol[i];
      rowsol[i] = j1;
    } while (i != freerow);
  }
}

}  // namespace

Assignment solve_lap(const Tensor& cost) {
  if (cost.rank() != 2 || cost.rows() == 0 || cost.cols() == 0) {
    throw std::invalid_argument("solve_lap: non-empty rank-2 cost matrix required");
  }
  std::size_t R = cost.rows(), C = cost.cols();
  for (std::size_t i = 0; i < cost.numel(); ++i) {
    if (!std::isfinite(cost[i])) {
      throw std::invalid_argument("solve_lap: non-finite cost entry");
    }
  }

  std::size_t n = std::max(R, C);
  std::vector<double> padded(n * n, 0.0);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) padded[i * n + j] = cost(i, j);

  std::vector<int> rowsol;
  lap_square(n, padded, rowsol);

  Assignment out;
  for (std::size_t i = 0; i < R; ++i) {
    int j = rowsol[i];
    if (j >= 0 && static_cast<std::size_t>(j) < C) {
      out.pairs.emplace_back(i, static_cast<std::size_t>(j));
      out.cost += cost(i, static_cast<std::size_t>(j));
    }
  }
  return out;
}

}  // namespace prime
