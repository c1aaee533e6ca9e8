#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "soul/errors.hpp"
#include "soul/linalg.hpp"
#include "soul/rng.hpp"

using soul::linalg::Matrix;
using soul::linalg::SvdResult;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, soul::rng::Engine& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

double max_abs_offdiag_gram(const Matrix& u) {
  // max |U^T U - I|
  double worst = 0.0;
  for (std::size_t i = 0; i < u.cols; ++i) {
    for (std::size_t j = 0; j < u.cols; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < u.rows; ++k) dot += u.at(k, i) * u.at(k, j);
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

double reconstruction_error(const Matrix& m, const SvdResult& s) {
  Matrix rec(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < s.singular_values.size(); ++k) {
        sum += s.left_vectors.at(i, k) * s.singular_values[k] *
               s.right_vectors.at(j, k);
      }
      rec.at(i, j) = sum;
    }
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    num += (rec.data[i] - m.data[i]) * (rec.data[i] - m.data[i]);
    den += m.data[i] * m.data[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

}  // namespace

TEST_CASE("svd of the identity gives unit singular values") {
  const Matrix id = Matrix::identity(3);
  const SvdResult s = soul::linalg::svd(id);
  REQUIRE(s.singular_values.size() == 3);
  for (const double v : s.singular_values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(max_abs_offdiag_gram(s.left_vectors) <= 1e-8);
}

TEST_CASE("svd of a diagonal matrix returns its entries sorted") {
  Matrix m(3, 3);
  m.at(0, 0) = 2.0;
  m.at(1, 1) = 3.0;
  m.at(2, 2) = 1.0;
  const SvdResult s = soul::linalg::svd(m);
  CHECK(s.singular_values[0] == doctest::Approx(3.0));
  CHECK(s.singular_values[1] == doctest::Approx(2.0));
  CHECK(s.singular_values[2] == doctest::Approx(1.0));
}

TEST_CASE("svd reconstructs random matrices of every aspect ratio") {
  soul::rng::Engine rng(7);
  for (const auto [r, c] : {std::pair<std::size_t, std::size_t>{8, 5},
                            {5, 8},
                            {6, 6},
                            {12, 3},
                            {1, 4},
                            {4, 1}}) {
    const Matrix m = random_matrix(r, c, rng);
    const SvdResult s = soul::linalg::svd(m);
    CHECK(reconstruction_error(m, s) <= 1e-6);
    CHECK(max_abs_offdiag_gram(s.left_vectors) <= 1e-8);
    CHECK(max_abs_offdiag_gram(s.right_vectors) <= 1e-8);
    for (std::size_t k = 1; k < s.singular_values.size(); ++k) {
      CHECK(s.singular_values[k - 1] >= s.singular_values[k]);
      CHECK(s.singular_values[k] >= 0.0);
    }
  }
}

TEST_CASE("svd is deterministic and fixes the left-vector sign") {
  soul::rng::Engine rng(11);
  const Matrix m = random_matrix(7, 4, rng);
  const SvdResult a = soul::linalg::svd(m);
  const SvdResult b = soul::linalg::svd(m);
  CHECK(a.left_vectors.data == b.left_vectors.data);
  CHECK(a.singular_values == b.singular_values);
  for (std::size_t j = 0; j < a.left_vectors.cols; ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < a.left_vectors.rows; ++i) {
      if (std::abs(a.left_vectors.at(i, j)) > std::abs(best)) {
        best = a.left_vectors.at(i, j);
      }
    }
    CHECK(best > 0.0);  // largest-magnitude entry positive
  }
}

TEST_CASE("svd rejects non-finite input") {
  Matrix m(2, 2);
  m.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(soul::linalg::svd(m), soul::InvalidMatrix);
}

TEST_CASE("cosine distance fixtures") {
  const std::vector<double> v{1, 2, 3};
  CHECK(soul::linalg::cosine_distance(v, v) == doctest::Approx(0.0).epsilon(1e-12));
  const std::vector<double> e1{1, 0}, e2{0, 1}, ne1{-1, 0};
  CHECK(soul::linalg::cosine_distance(e1, e2) == doctest::Approx(1.0));
  CHECK(soul::linalg::cosine_distance(e1, ne1) == doctest::Approx(2.0));
}

TEST_CASE("cosine distance is scale invariant and rejects zero vectors") {
  soul::rng::Engine rng(3);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> a(5), b(5), a3(5);
    for (std::size_t k = 0; k < 5; ++k) {
      a[k] = rng.normal();
      b[k] = rng.normal();
      a3[k] = 3.7 * a[k];
    }
    CHECK(std::abs(soul::linalg::cosine_distance(a, b) -
                   soul::linalg::cosine_distance(a3, b)) <= 1e-12);
  }
  const std::vector<double> zero{0, 0}, one{1, 1};
  CHECK_THROWS_AS(soul::linalg::cosine_distance(zero, one), soul::ZeroVector);
}

TEST_CASE("orthonormal projection removes the basis component") {
  Matrix basis(2, 1);
  basis.at(0, 0) = 1.0;  // e1
  const std::vector<double> v{5, 3};
  const auto out = soul::linalg::orthonormal_project(basis, v);
  CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(3.0).epsilon(1e-12));

  const std::vector<double> ortho{0, 7};  // already orthogonal to e1
  const auto same = soul::linalg::orthonormal_project(basis, ortho);
  CHECK(std::abs(same[0] - 0.0) <= 1e-12);
  CHECK(std::abs(same[1] - 7.0) <= 1e-12);

  const std::vector<double> inside{4, 0};  // in span(e1)
  const auto zeroed = soul::linalg::orthonormal_project(basis, inside);
  CHECK(std::abs(zeroed[0]) <= 1e-8);
  CHECK(std::abs(zeroed[1]) <= 1e-8);

  const std::vector<double> wrong{1, 2, 3};
  CHECK_THROWS_AS(soul::linalg::orthonormal_project(basis, wrong),
                  soul::DimMismatch);
}

TEST_CASE("orthonormal projection is idempotent") {
  soul::rng::Engine rng(5);
  Matrix m = random_matrix(6, 3, rng);
  const SvdResult s = soul::linalg::svd(m);
  Matrix basis(6, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    basis.at(i, 0) = s.left_vectors.at(i, 0);
    basis.at(i, 1) = s.left_vectors.at(i, 1);
  }
  for (int t = 0; t < 10; ++t) {
    std::vector<double> v(6);
    for (double& x : v) x = rng.normal();
    const auto once = soul::linalg::orthonormal_project(basis, v);
    const auto twice = soul::linalg::orthonormal_project(basis, once);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-9);
    // result orthogonal to every basis column
    for (std::size_t j = 0; j < basis.cols; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 6; ++i) dot += once[i] * basis.at(i, j);
      CHECK(std::abs(dot) <= 1e-6);
    }
  }
}
