#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dictnet/linalg.hpp"
#include "dictnet/tensor.hpp"

namespace dictnet {

/// How the next dictionary column is chosen.
enum class SelectionRule {
  /// Pick the column whose addition removes the most residual energy
  /// (argmax over j of |R[:,j]^T R|^2 / |R[:,j]|^2). O(m n^2) per step.
  kExactGreedy,
  /// Pick the column with the largest residual norm. O(m n) per step;
  /// an option for large layers.
  kMaxResidualColumn,
};

struct SelectionPolicy {
  SelectionRule rule = SelectionRule::kExactGreedy;
  double dep_tol = kDepTolDefault;  // relative linear-dependence cutoff, in (0, 1e-3)
};

SelectionPolicy make_policy(const std::string& name, double dep_tol = kDepTolDefault);
std::string policy_name(SelectionRule rule);

/// Result of decomposing W (m x n) into dictionary D (m x l, verbatim columns
/// of W in selection order) and coefficients C (l x n) with
/// |W - D C|_F / |W|_F <= beta, unless every independent column was consumed
/// first (rank_exhausted).
struct Decomposition {
  DenseMatrix dictionary;          // m x l
  DenseMatrix coefficients;        // l x n
  std::vector<std::size_t> selected;  // column indices into W, in pick order
  double achieved_rel_error = 0.0;
  double beta = 0.0;
  bool rank_exhausted = false;
  SelectionPolicy policy;

  std::size_t l() const { return selected.size(); }
};

/// Greedy column subset selection: grow the dictionary one column of W at a
/// time until the relative Frobenius projection error drops to beta.
///
/// Scoring follows `policy.rule`; ties are broken toward the larger residual
/// column norm and then toward the lower column index. Columns whose residual
/// falls below dep_tol * |W[:,j]| are permanently skipped.
Decomposition decompose(const DenseMatrix& w, double beta,
                        const SelectionPolicy& policy = SelectionPolicy{});

/// Continues the greedy loop of `dec` on the same matrix down to new_beta.
/// The existing selection is kept as a prefix; returns `dec` unchanged when
/// new_beta >= dec.achieved_rel_error.
Decomposition append_column(const Decomposition& dec, const DenseMatrix& w, double new_beta);

/// D * C.
DenseMatrix reconstruct(const Decomposition& dec);

}  // namespace dictnet
