#include "dictnet/subspace.hpp"

#include <cmath>

namespace dictnet {

SelectionPolicy make_policy(const std::string& name, double dep_tol) {
  SelectionPolicy p;
  p.dep_tol = dep_tol;
  if (name == "exact" || name == "exact_greedy") {
    p.rule = SelectionRule::kExactGreedy;
  } else if (name == "cheap" || name == "max_residual_column") {
    p.rule = SelectionRule::kMaxResidualColumn;
  } else {
    throw ArgumentError("unknown selection policy '" + name + "'");
  }
  return p;
}

std::string policy_name(SelectionRule rule) {
  return rule == SelectionRule::kExactGreedy ? "exact_greedy" : "max_residual_column";
}

namespace {

// The residual is kept transposed (row j = residual of W's column j) so the
// per-candidate scans run over contiguous memory.
struct GreedyState {
  DenseMatrix rt;                  // n x m residual transpose
  std::vector<double> w_col_norm;  // original column norms
  std::vector<bool> taken;         // selected or permanently skipped
  double w_norm = 0.0;
};

double residual_rel_error(const GreedyState& st) {
  return frobenius_norm(st.rt) / st.w_norm;
}

/// Removes the direction of residual column `pick` from the whole residual.
void deflate(GreedyState& st, std::size_t pick) {
  const std::size_t n = st.rt.rows();
  const std::size_t m = st.rt.cols();
  std::vector<double> q(m);
  const double* prow = st.rt.row(pick);
  double norm = 0.0;
  for (std::size_t r = 0; r < m; ++r) norm += prow[r] * prow[r];
  norm = std::sqrt(norm);
  for (std::size_t r = 0; r < m; ++r) q[r] = prow[r] / norm;
  for (std::size_t c = 0; c < n; ++c) {
    double* row = st.rt.row(c);
    double dot = 0.0;
    for (std::size_t r = 0; r < m; ++r) dot += q[r] * row[r];
    for (std::size_t r = 0; r < m; ++r) row[r] -= dot * q[r];
  }
}

struct Candidate {
  bool found = false;
  std::size_t index = 0;
  double score = -1.0;
  double res_norm = -1.0;
};

/// Scores every live column under the policy. Columns below the dependence
/// tolerance are marked taken; they can never rejoin, since residual norms
/// only shrink as the basis grows.
Candidate best_candidate(GreedyState& st, const SelectionPolicy& policy) {
  const std::size_t n = st.rt.rows();
  const std::size_t m = st.rt.cols();
  Candidate best;
  for (std::size_t j = 0; j < n; ++j) {
    if (st.taken[j]) continue;
    const double* jrow = st.rt.row(j);
    double res_sq = 0.0;
    for (std::size_t r = 0; r < m; ++r) res_sq += jrow[r] * jrow[r];
    const double res_norm = std::sqrt(res_sq);
    if (res_norm <= policy.dep_tol * st.w_col_norm[j] || res_norm == 0.0) {
      st.taken[j] = true;  // dependent on the current span
      continue;
    }
    double score;
    if (policy.rule == SelectionRule::kExactGreedy) {
      // Energy captured by adding column j: |R[:,j]^T R|^2 / |R[:,j]|^2.
      double num = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double* crow = st.rt.row(c);
        double dot = 0.0;
        for (std::size_t r = 0; r < m; ++r) dot += jrow[r] * crow[r];
        num += dot * dot;
      }
      score = num / res_sq;
    } else {
      score = res_norm;
    }
    if (!best.found || score > best.score ||
        (score == best.score && res_norm > best.res_norm)) {
      best = {true, j, score, res_norm};
    }
  }
  return best;
}

/// Core loop shared by decompose and append_column. `preselected` columns are
/// replayed first (deflating in the recorded order), then selection continues
/// until the error target or rank exhaustion.
Decomposition run_greedy(const DenseMatrix& w, double beta, const SelectionPolicy& policy,
                         const std::vector<std::size_t>& preselected) {
  if (beta < 0.0 || beta >= 1.0) {
    throw ArgumentError("decompose: beta must be in [0, 1), got " + std::to_string(beta));
  }
  if (policy.dep_tol <= 0.0 || policy.dep_tol >= 1e-3) {
    throw ArgumentError("decompose: dep_tol must be in (0, 1e-3), got " +
                        std::to_string(policy.dep_tol));
  }
  w.require_finite("decompose");

  GreedyState st;
  st.rt = transpose(w);
  st.w_norm = frobenius_norm(w);
  if (st.w_norm == 0.0) {
    throw ArgumentError("decompose: zero matrix has no column basis");
  }
  st.w_col_norm.resize(w.cols());
  for (std::size_t c = 0; c < w.cols(); ++c) st.w_col_norm[c] = column_norm(w, c);
  st.taken.assign(w.cols(), false);

  Decomposition dec;
  dec.beta = beta;
  dec.policy = policy;
  dec.selected = preselected;

  for (std::size_t idx : preselected) {
    st.taken[idx] = true;
    deflate(st, idx);
  }

  // The loop runs at least once from a fresh start: the initial relative
  // error is exactly 1 and beta < 1, so every decomposition has l >= 1.
  double rel = residual_rel_error(st);
  while (rel > beta) {
    Candidate pick = best_candidate(st, policy);
    if (!pick.found) {
      dec.rank_exhausted = true;
      break;
    }
    st.taken[pick.index] = true;
    dec.selected.push_back(pick.index);
    deflate(st, pick.index);
    rel = residual_rel_error(st);
  }

  dec.dictionary = DenseMatrix(w.rows(), dec.selected.size());
  for (std::size_t c = 0; c < dec.selected.size(); ++c) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      dec.dictionary(r, c) = w(r, dec.selected[c]);
    }
  }
  dec.coefficients = least_squares(dec.dictionary, w, policy.dep_tol);

  DenseMatrix err = matmul(dec.dictionary, dec.coefficients);
  for (std::size_t i = 0; i < err.size(); ++i) {
    err.values()[i] = w.values()[i] - err.values()[i];
  }
  dec.achieved_rel_error = frobenius_norm(err) / st.w_norm;
  return dec;
}

}  // namespace

Decomposition decompose(const DenseMatrix& w, double beta, const SelectionPolicy& policy) {
  return run_greedy(w, beta, policy, {});
}

Decomposition append_column(const Decomposition& dec, const DenseMatrix& w, double new_beta) {
  if (w.rows() != dec.dictionary.rows() || w.cols() != dec.coefficients.cols()) {
    throw ShapeError("append_column: matrix " + w.shape_str() +
                     " does not match the decomposition (expected " +
                     std::to_string(dec.dictionary.rows()) + "x" +
                     std::to_string(dec.coefficients.cols()) + ")");
  }
  for (std::size_t c = 0; c < dec.selected.size(); ++c) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      if (w(r, dec.selected[c]) != dec.dictionary(r, c)) {
        throw ArgumentError("append_column: matrix differs from the one that produced "
                            "the decomposition (dictionary column " +
                            std::to_string(c) + ")");
      }
    }
  }
  if (new_beta >= dec.achieved_rel_error) {
    return dec;
  }
  return run_greedy(w, new_beta, dec.policy, dec.selected);
}

DenseMatrix reconstruct(const Decomposition& dec) {
  return matmul(dec.dictionary, dec.coefficients);
}

}  // namespace dictnet
