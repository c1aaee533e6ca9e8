#include "soul/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "soul/errors.hpp"

namespace soul::linalg {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

bool all_finite(const Matrix& m) {
  for (double x : m.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  }
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw DimMismatch("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) {
        c.at(i, j) += aik * b.at(k, j);
      }
    }
  }
  return c;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> v) {
  if (m.cols != v.size()) throw DimMismatch("matvec: dimension mismatch");
  std::vector<double> out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m.at(i, j) * v[j];
    out[i] = s;
  }
  return out;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data) s += x * x;
  return std::sqrt(s);
}

namespace {

// One-sided Jacobi on a tall (rows >= cols) matrix. Works column-wise on a
// copy of `a`, accumulating rotations into V. Converged columns are mutually
// orthogonal; their norms are the singular values.
SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  Matrix u = a;
  Matrix v = Matrix::identity(n);

  auto col_dot = [&](std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u.at(i, p) * u.at(i, q);
    return s;
  };

  const double eps = 1e-15;
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = col_dot(p, p);
        const double aqq = col_dot(q, q);
        const double apq = col_dot(p, q);
        if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) {
          continue;
        }
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t =
            (zeta >= 0.0 ? 1.0 : -1.0) /
            (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u.at(i, p);
          const double uq = u.at(i, q);
          u.at(i, p) = c * up - s * uq;
          u.at(i, q) = s * up + c * uq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v.at(i, p);
          const double vq = v.at(i, q);
          v.at(i, p) = c * vp - s * vq;
          v.at(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u.at(i, j) * u.at(i, j);
    sigma[j] = std::sqrt(s);
  }

  // sort non-increasing, stable on column index
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Matrix us(m, n), vs(n, n);
  std::vector<double> ss(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    ss[j] = sigma[src];
    for (std::size_t i = 0; i < m; ++i) us.at(i, j) = u.at(i, src);
    for (std::size_t i = 0; i < n; ++i) vs.at(i, j) = v.at(i, src);
  }

  // normalize nonzero columns; complete zero columns to an orthonormal set
  const double max_sigma = ss.empty() ? 0.0 : ss[0];
  const double zero_tol = max_sigma * 1e-13;
  std::size_t rank = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (ss[j] > zero_tol && ss[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) us.at(i, j) /= ss[j];
    } else {
      ss[j] = 0.0;
      if (rank == n) rank = j;
    }
  }
  if (rank < n) {
    // Gram-Schmidt standard basis vectors against the accepted columns.
    std::size_t next_axis = 0;
    for (std::size_t j = rank; j < n; ++j) {
      while (next_axis < m) {
        std::vector<double> cand(m, 0.0);
        cand[next_axis++] = 1.0;
        for (std::size_t k = 0; k < j; ++k) {
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += cand[i] * us.at(i, k);
          for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * us.at(i, k);
        }
        double nrm = 0.0;
        for (double x : cand) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm > 1e-8) {
          for (std::size_t i = 0; i < m; ++i) us.at(i, j) = cand[i] / nrm;
          break;
        }
      }
    }
  }

  // sign convention: largest-magnitude entry of each left vector positive
  for (std::size_t j = 0; j < n; ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (std::abs(us.at(i, j)) > std::abs(best)) best = us.at(i, j);
    }
    if (best < 0.0) {
      for (std::size_t i = 0; i < m; ++i) us.at(i, j) = -us.at(i, j);
      for (std::size_t i = 0; i < n; ++i) vs.at(i, j) = -vs.at(i, j);
    }
  }

  return SvdResult{std::move(us), std::move(ss), std::move(vs)};
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.empty()) throw InvalidMatrix("svd: empty matrix");
  if (!all_finite(m)) throw InvalidMatrix("svd: non-finite entries");
  if (m.rows >= m.cols) return svd_tall(m);
  // A = U S V^T  <=>  A^T = V S U^T
  SvdResult r = svd_tall(transpose(m));
  return SvdResult{std::move(r.right_vectors), std::move(r.singular_values),
                   std::move(r.left_vectors)};
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimMismatch("cosine_distance: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw ZeroVector("cosine_distance: zero-norm vector");
  }
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  c = std::clamp(c, -1.0, 1.0);
  return 1.0 - c;
}

std::vector<double> orthonormal_project(const Matrix& basis,
                                        std::span<const double> v) {
  if (basis.empty()) return std::vector<double>(v.begin(), v.end());
  if (basis.rows != v.size()) {
    throw DimMismatch("orthonormal_project: dimension mismatch");
  }
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t j = 0; j < basis.cols; ++j) {
    double dot = 0.0;
    for (std::size_t i = 0; i < basis.rows; ++i) dot += basis.at(i, j) * v[i];
    for (std::size_t i = 0; i < basis.rows; ++i) out[i] -= dot * basis.at(i, j);
  }
  return out;
}

void append_columns(Matrix& basis, const Matrix& cols) {
  if (cols.empty()) return;
  if (basis.empty()) {
    basis = cols;
    return;
  }
  if (basis.rows != cols.rows) {
    throw DimMismatch("append_columns: row count mismatch");
  }
  Matrix merged(basis.rows, basis.cols + cols.cols);
  for (std::size_t i = 0; i < basis.rows; ++i) {
    for (std::size_t j = 0; j < basis.cols; ++j) merged.at(i, j) = basis.at(i, j);
    for (std::size_t j = 0; j < cols.cols; ++j) {
      merged.at(i, basis.cols + j) = cols.at(i, j);
    }
  }
  basis = std::move(merged);
}

}  // namespace soul::linalg
