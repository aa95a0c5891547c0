#pragma once

#include <functional>
#include <limits>

#include "cycledepth/config.hpp"

namespace cycledepth {

struct FdOptions {
  double h = 1e-5;
  i64 max_coords_per_leaf = 0;  // 0: check every coordinate
  u64 subset_seed = 17;
  bool corrupt = false;  // test fixture: perturbs one analytic gradient
};

// Compares reverse-mode gradients of a scalar objective against central
// finite differences. `build` must reconstruct the graph from the given
// leaves on every call. Coordinates with |FD| <= 1e-8 are skipped, as are
// coordinates whose |FD| sits at the double-precision measurement floor of
// the difference quotient (about 5e-6 times the loss magnitude at h = 1e-5):
// there the quotient carries rounding noise, not gradient signal. Returns
// the maximum relative error over all checked coordinates.
template <typename BuildFn>
double fd_max_rel_err(std::vector<Tensor<double>> leaves, BuildFn&& build, FdOptions opt = {}) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor<double> loss = build();
  backward(loss);
  const double fd_floor = std::max(1e-8, 5e-6 * std::abs(static_cast<double>(loss.value())));
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  if (opt.corrupt && !analytic.empty() && !analytic[0].empty()) analytic[0][0] += 1e-2;

  Rng subset_rng(opt.subset_seed);
  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].mutable_data();
    const i64 n = static_cast<i64>(data.size());
    std::vector<i64> coords;
    if (opt.max_coords_per_leaf > 0 && n > opt.max_coords_per_leaf) {
      for (i64 k = 0; k < opt.max_coords_per_leaf; ++k) {
        coords.push_back(subset_rng.uniform_int(0, n - 1));
      }
    } else {
      coords.resize(static_cast<size_t>(n));
      for (i64 k = 0; k < n; ++k) coords[static_cast<size_t>(k)] = k;
    }
    for (i64 c : coords) {
      const double saved = data[static_cast<size_t>(c)];
      data[static_cast<size_t>(c)] = saved + opt.h;
      const double fplus = build().value();
      data[static_cast<size_t>(c)] = saved - opt.h;
      const double fminus = build().value();
      data[static_cast<size_t>(c)] = saved;
      const double fd = (fplus - fminus) / (2 * opt.h);
      if (std::abs(fd) <= fd_floor) continue;
      const double a = analytic[li][static_cast<size_t>(c)];
      const double rel = std::abs(a - fd) / std::max(std::abs(a), std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Asserts that a leaf's accumulated gradient after `build`+backward is
// exactly zero everywhere (the stop-gradient contract). Returns 0 when it
// holds and +inf otherwise.
template <typename BuildFn>
double zero_grad_probe(Tensor<double> leaf, BuildFn&& build) {
  leaf.zero_grad();
  Tensor<double> loss = build();
  backward(loss);
  for (double g : leaf.grad()) {
    if (g != 0.0) return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

struct GradCase {
  std::string name;
  std::function<double(u64 seed, bool corrupt)> run;  // returns max relative error
};

namespace gradcheck_detail {

inline Tensor<double> rand_leaf(const Shape& s, Rng& rng, double lo, double hi) {
  return Tensor<double>::uniform(s, rng, lo, hi, true);
}

// Values with fractional parts in [0.2, 0.8] so warp sampling coordinates
// stay away from the bilinear kinks at integers.
inline Tensor<double> rand_disparity(const Shape& s, Rng& rng, i64 int_max) {
  std::vector<double> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) {
    x = static_cast<double>(rng.uniform_int(0, int_max)) + 0.2 + 0.6 * rng.uniform();
  }
  return Tensor<double>::from_vector(s, std::move(v), true);
}

inline Tensor<double> mask_for(const Shape& s, Rng& rng) {
  return Tensor<double>::uniform(s, rng, -1.0, 1.0, false);
}

inline double masked_case(std::vector<Tensor<double>> leaves,
                          std::function<Tensor<double>()> build, bool corrupt,
                          i64 max_coords = 0) {
  FdOptions opt;
  opt.corrupt = corrupt;
  opt.max_coords_per_leaf = max_coords;
  return fd_max_rel_err(std::move(leaves), build, opt);
}

}  // namespace gradcheck_detail

std::vector<GradCase> gradcheck_registry();

struct GradCheckRow {
  std::string op;
  double max_rel_err = 0;
  bool pass = false;
};

// Runs every registered case over `num_seeds` seeds starting at base_seed.
inline std::vector<GradCheckRow> run_gradcheck(u64 base_seed, int num_seeds = 5,
                                               const std::string& corrupt_op = "") {
  std::vector<GradCheckRow> rows;
  for (const GradCase& c : gradcheck_registry()) {
    GradCheckRow row;
    row.op = c.name;
    for (int s = 0; s < num_seeds; ++s) {
      row.max_rel_err =
          std::max(row.max_rel_err, c.run(base_seed + static_cast<u64>(s), c.name == corrupt_op));
    }
    row.pass = row.max_rel_err < 1e-4;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace cycledepth
