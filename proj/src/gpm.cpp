#include "soul/gpm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "soul/errors.hpp"

namespace soul::gpm {

bool GpmMemory::empty() const {
  for (const Matrix& m : basis) {
    if (!m.empty()) return false;
  }
  return true;
}

std::size_t GpmMemory::total_columns() const {
  std::size_t n = 0;
  for (const Matrix& m : basis) n += m.cols;
  return n;
}

GpmMemory make_gpm(const nn::MlpModel& model, double energy_threshold,
                   std::size_t exemplar_count) {
  GpmMemory mem;
  mem.basis.resize(model.layers.size());
  mem.energy_threshold = energy_threshold;
  mem.exemplar_count = exemplar_count;
  return mem;
}

Matrix build_representation_matrix(
    const nn::MlpModel& model,
    const std::vector<std::vector<double>>& exemplars, std::size_t layer) {
  if (exemplars.empty()) {
    throw EmptyInput("build_representation_matrix: no exemplars");
  }
  if (layer >= model.layers.size()) {
    throw DimMismatch("build_representation_matrix: layer out of range");
  }
  const std::size_t dim = model.layers[layer].in_dim();
  Matrix r(dim, exemplars.size());
  for (std::size_t j = 0; j < exemplars.size(); ++j) {
    if (layer == 0) {
      if (exemplars[j].size() != dim) {
        throw DimMismatch("build_representation_matrix: exemplar width");
      }
      for (std::size_t i = 0; i < dim; ++i) r.at(i, j) = exemplars[j][i];
    } else {
      auto [probs, trace] = nn::forward_with_activations(model, exemplars[j]);
      (void)probs;
      const std::vector<double>& rep = trace.layer_outputs[layer - 1];
      for (std::size_t i = 0; i < dim; ++i) r.at(i, j) = rep[i];
    }
  }
  return r;
}

Matrix extract_basis(const Matrix& r, double delta) {
  if (delta <= 0.0 || delta > 1.0) {
    throw SpecError("extract_basis: delta must be in (0, 1]");
  }
  const double total = linalg::frobenius_norm(r);
  if (total * total < 1e-24) {
    return Matrix(r.rows, 0);  // effectively zero matrix: no basis
  }
  linalg::SvdResult sv = linalg::svd(r);
  double energy_total = 0.0;
  for (double s : sv.singular_values) energy_total += s * s;
  std::size_t q = 0;
  double acc = 0.0;
  while (q < sv.singular_values.size() && acc < delta * energy_total) {
    acc += sv.singular_values[q] * sv.singular_values[q];
    ++q;
    if (acc >= delta * energy_total) break;
  }
  // drop numerically-zero directions even when delta = 1
  while (q > 0 && sv.singular_values[q - 1] * sv.singular_values[q - 1] <
                      1e-24 * energy_total) {
    --q;
  }
  Matrix out(r.rows, q);
  for (std::size_t j = 0; j < q; ++j) {
    for (std::size_t i = 0; i < r.rows; ++i) {
      out.at(i, j) = sv.left_vectors.at(i, j);
    }
  }
  return out;
}

Matrix remove_shared_basis(const Matrix& r, const GpmMemory& mem,
                           std::size_t layer) {
  if (layer >= mem.basis.size()) {
    throw DimMismatch("remove_shared_basis: layer out of range");
  }
  const Matrix& m = mem.basis[layer];
  if (m.empty()) return r;
  if (m.rows != r.rows) {
    throw DimMismatch("remove_shared_basis: row dimension mismatch");
  }
  // R - M (M^T R)
  Matrix mtr = linalg::matmul(linalg::transpose(m), r);
  Matrix mmtr = linalg::matmul(m, mtr);
  Matrix out = r;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= mmtr.data[i];
  return out;
}

void update_gpm(GpmMemory& mem, const nn::MlpModel& model,
                const std::vector<std::vector<double>>& exemplars) {
  if (exemplars.empty()) throw NoExemplars("update_gpm: no exemplars");
  if (mem.basis.size() != model.layers.size()) {
    throw DimMismatch("update_gpm: memory/model layer count mismatch");
  }
  for (std::size_t layer = 0; layer < model.layers.size(); ++layer) {
    Matrix r = build_representation_matrix(model, exemplars, layer);
    Matrix residual = remove_shared_basis(r, mem, layer);
    Matrix fresh = extract_basis(residual, mem.energy_threshold);
    if (fresh.empty()) continue;
    // numerical cleanup: re-orthogonalize against existing columns and cap
    // the total column count at the layer input dimension
    Matrix& existing = mem.basis[layer];
    std::vector<std::vector<double>> accepted;
    for (std::size_t j = 0; j < fresh.cols; ++j) {
      if (existing.cols + accepted.size() >= r.rows) break;
      std::vector<double> col(fresh.rows);
      for (std::size_t i = 0; i < fresh.rows; ++i) col[i] = fresh.at(i, j);
      if (!existing.empty()) {
        col = linalg::orthonormal_project(existing, col);
      }
      for (const auto& prev : accepted) {
        double dot = 0.0;
        for (std::size_t i = 0; i < col.size(); ++i) dot += col[i] * prev[i];
        for (std::size_t i = 0; i < col.size(); ++i) col[i] -= dot * prev[i];
      }
      double nrm = 0.0;
      for (double x : col) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-8) continue;
      for (double& x : col) x /= nrm;
      accepted.push_back(std::move(col));
    }
    if (accepted.empty()) continue;
    Matrix add(fresh.rows, accepted.size());
    for (std::size_t j = 0; j < accepted.size(); ++j) {
      for (std::size_t i = 0; i < fresh.rows; ++i) add.at(i, j) = accepted[j][i];
    }
    linalg::append_columns(existing, add);
  }
}

nn::Gradients project_gradients(const nn::Gradients& g, const GpmMemory& mem) {
  if (g.layers.size() != mem.basis.size()) {
    throw DimMismatch("project_gradients: layer count mismatch");
  }
  nn::Gradients out = g;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    const Matrix& m = mem.basis[l];
    if (m.empty()) continue;
    Matrix& dw = out.layers[l].dw;
    if (dw.cols != m.rows) {
      throw DimMismatch("project_gradients: basis/gradient dim mismatch");
    }
    // G <- G - (G M) M^T, rows of G projected off the input-span basis
    Matrix gm = linalg::matmul(dw, m);
    Matrix gmmt = linalg::matmul(gm, linalg::transpose(m));
    for (std::size_t i = 0; i < dw.data.size(); ++i) {
      dw.data[i] -= gmmt.data[i];
    }
  }
  return out;
}

namespace {

constexpr std::uint32_t kGpmMagic = 0x47504d31u;  // "GPM1"

}  // namespace

void save_gpm(const GpmMemory& mem, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("gpm: cannot open " + path);
  out.write(reinterpret_cast<const char*>(&kGpmMagic), sizeof(kGpmMagic));
  out.write(reinterpret_cast<const char*>(&mem.energy_threshold),
            sizeof(double));
  const std::uint64_t nc = mem.exemplar_count;
  out.write(reinterpret_cast<const char*>(&nc), sizeof(nc));
  const std::uint64_t layers = mem.basis.size();
  out.write(reinterpret_cast<const char*>(&layers), sizeof(layers));
  for (const Matrix& m : mem.basis) {
    const std::uint64_t r = m.rows, c = m.cols;
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  }
}

GpmMemory load_gpm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("gpm: cannot open " + path);
  std::uint32_t magic = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  if (!in || magic != kGpmMagic) throw IoError("gpm: bad magic");
  GpmMemory mem;
  in.read(reinterpret_cast<char*>(&mem.energy_threshold), sizeof(double));
  std::uint64_t nc = 0;
  in.read(reinterpret_cast<char*>(&nc), sizeof(nc));
  mem.exemplar_count = nc;
  std::uint64_t layers = 0;
  in.read(reinterpret_cast<char*>(&layers), sizeof(layers));
  for (std::uint64_t l = 0; l < layers; ++l) {
    std::uint64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    Matrix m(r, c);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw IoError("gpm: truncated file");
    mem.basis.push_back(std::move(m));
  }
  return mem;
}

}  // namespace soul::gpm
