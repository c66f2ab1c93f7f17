#pragma once

// SpacetimeNet: a point-cloud network whose filters and layer updates are
// contractions with Clebsch-Gordan tensors of a catalog of Lorentz-group reps.
//
//   F_ijqr  = delta_{q q'} dX_ijr + sum_{g,s,t} C_{g,qr,q's,q't} f_qg dX_ijs dX_ijt
//   V'_iqcr = (1/P) sum_{g,l,s,m,t,d,j} C_{g,qr,ls,mt} F_ijls V_jmdt W_qcgd
//
// with dX_ij = X_j - X_i and P points per cloud. Logits come from the mean
// over points of the real part of the trivial-rep channels, then an affine map.
//
// Storage for one cloud (P points, C channels):
//   activations of rep q: P x (C n_q), entry (i, c n_q + r)
//   filters of rep l:     P x (P n_l), entry (i, j n_l + r)
//   CG path (q; l, m, g): n_q x (n_l n_m), entry (r, s n_m + t)
//   W of rep q:           C G_q C vector, entry (c G_q + g) C + d

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "lierep/clebsch.hpp"
#include "lierep/io.hpp"
#include "lierep/numerics.hpp"
#include "lierep/reps.hpp"

namespace lierep {

// -------------------------------------------------------------------------
// Rep catalog

struct CGPath {
  int left;
  int right;
  int g;
  Matrix coeffs;
};

struct RepCatalog {
  std::vector<AlgebraRep> reps;
  int embedding = 1;  // q'
  int trivial = 0;
  /// Maps coordinates (t, x, ...) into the q' rep space.
  Matrix coord_map;
  /// paths[q] lists every CG tensor with output rep q.
  std::vector<std::vector<CGPath>> paths;

  int size() const noexcept { return static_cast<int>(reps.size()); }
  Eigen::Index dim(int q) const { return reps.at(q).dim(); }
  int spatial_dims() const noexcept { return static_cast<int>(coord_map.cols()) - 1; }

  /// G_q: number of degeneracy slots shared by the W weights of output q.
  int degeneracy(int q) const {
    int g = 0;
    for (const auto& p : paths.at(q)) g = std::max(g, p.g + 1);
    return g;
  }

  /// Number of f_qg weights: CG tensors into q from q' (x) q'.
  int filter_degeneracy(int q) const {
    int n = 0;
    for (const auto& p : paths.at(q))
      if (p.left == embedding && p.right == embedding) ++n;
    return n;
  }
};

/// Defining rep on (t, x, y) or (t, x, y, z).
inline AlgebraRep coordinate_rep(int spatial_dims) {
  if (spatial_dims == 2) return vector_rep_so21();
  if (spatial_dims == 3) return vector_rep_so31();
  throw DomainError("spatial_dims must be 2 or 3");
}

/// Solves every CG tensor between catalog reps. `coord_map` must intertwine
/// the coordinate rep with reps[embedding].
inline RepCatalog build_catalog(std::vector<AlgebraRep> reps, int embedding, int trivial, Matrix coord_map,
                                const CGOptions& opt = {}, double residual_tolerance = 1e-6) {
  if (reps.empty()) throw DomainError("catalog: no reps");
  const int n = static_cast<int>(reps.size());
  if (embedding < 0 || embedding >= n || trivial < 0 || trivial >= n) throw DomainError("catalog: index out of range");
  for (const auto& r : reps) require_same_algebra(r, reps.front());
  if (!reps[trivial].is_trivial()) throw DomainError("catalog: readout rep is not the 1-dim trivial rep");
  const AlgebraRep coords = coordinate_rep(static_cast<int>(coord_map.cols()) - 1);
  require_same_algebra(coords, reps.front());
  if (coord_map.rows() != reps[embedding].dim() || coord_map.cols() != coords.dim())
    throw DomainError("catalog: coordinate map has the wrong shape");
  for (int i = 0; i < coords.algebra().dim(); ++i) {
    const double r = (coord_map * coords.generator(i) - reps[embedding].generator(i) * coord_map).norm();
    if (r > 1e-8 * std::max(1.0, coord_map.norm()))
      throw DomainError("catalog: coordinate map does not intertwine the embedding rep");
  }

  RepCatalog cat{std::move(reps), embedding, trivial, std::move(coord_map), {}};
  cat.paths.resize(n);
  for (int q = 0; q < n; ++q)
    for (int l = 0; l < n; ++l)
      for (int m = 0; m < n; ++m) {
        CGOptions cell = opt;
        cell.seed = derive_seed(opt.seed, "catalog", static_cast<std::uint64_t>((q * n + l) * n + m));
        const auto sol = cg_solve(cat.reps[l], cat.reps[m], cat.reps[q], cell);
        if (sol.nullspace_dim > 0 && sol.heldout_residual > residual_tolerance)
          throw NumericalError("catalog: CG residual " + std::to_string(sol.heldout_residual) + " for (" +
                               cat.reps[q].label() + "; " + cat.reps[l].label() + ", " + cat.reps[m].label() + ")");
        for (int g = 0; g < sol.nullspace_dim; ++g) cat.paths[q].push_back({l, m, g, sol.basis[g]});
      }
  return cat;
}

/// trivial + coordinate rep, with coordinates embedded as-is.
inline RepCatalog default_catalog(int spatial_dims, const CGOptions& opt = {}) {
  const AlgebraRep coords = coordinate_rep(spatial_dims);
  const Matrix id = identity(coords.dim());
  return build_catalog({trivial_rep(coords.algebra()), coords}, 1, 0, id, opt);
}

/// Intertwiner E with E rho_coords = rho_target E, scaled to |E|_F^2 = dim,
/// for embedding coordinates into an isomorphic (e.g. learned) rep.
inline Matrix coordinate_embedding(const AlgebraRep& target, int spatial_dims, const CGOptions& opt = {}) {
  const AlgebraRep coords = coordinate_rep(spatial_dims);
  require_same_algebra(coords, target);
  const auto sol = cg_solve(trivial_rep(coords.algebra()), coords, target, opt);
  if (sol.nullspace_dim != 1 || sol.verdict != Divergence::divergent)
    throw DomainError("coordinate_embedding: target is not isomorphic to the coordinate rep");
  return sol.basis.front() * std::sqrt(static_cast<double>(coords.dim()));
}

// -------------------------------------------------------------------------
// Weights

struct NetworkConfig {
  int num_layers = 3;
  int num_channels = 3;
  int batch_size = 16;
  int num_classes = 2;
  std::uint64_t seed = 0;
};

inline void check_config(const NetworkConfig& cfg) {
  if (cfg.num_layers < 1 || cfg.num_channels < 1 || cfg.batch_size < 1 || cfg.num_classes < 1)
    throw DomainError("network config: counts must be positive");
}

struct LayerWeights {
  std::vector<Vector> f;  // per rep q, length filter_degeneracy(q)
  std::vector<Vector> w;  // per rep q, length C G_q C
};

struct NetworkWeights {
  std::vector<LayerWeights> layers;
  RealMatrix readout;  // classes x C
  RealVector bias;     // classes

  /// Same shapes, all zero.
  NetworkWeights zeros_like() const {
    NetworkWeights z = *this;
    for (auto& l : z.layers) {
      for (auto& v : l.f) v.setZero();
      for (auto& v : l.w) v.setZero();
    }
    z.readout.setZero();
    z.bias.setZero();
    return z;
  }

  /// Flattens to real pairs in a fixed order: per layer f then w, then readout, bias.
  std::vector<double> to_params() const {
    std::vector<double> out;
    auto push = [&](const Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(v[i].real());
        out.push_back(v[i].imag());
      }
    };
    for (const auto& l : layers) {
      for (const auto& v : l.f) push(v);
      for (const auto& v : l.w) push(v);
    }
    for (Eigen::Index r = 0; r < readout.rows(); ++r)
      for (Eigen::Index c = 0; c < readout.cols(); ++c) out.push_back(readout(r, c));
    for (Eigen::Index r = 0; r < bias.size(); ++r) out.push_back(bias[r]);
    return out;
  }

  void from_params(std::span<const double> p) {
    std::size_t k = 0;
    auto pull = [&](Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i, k += 2) v[i] = Complex(p[k], p[k + 1]);
    };
    for (auto& l : layers) {
      for (auto& v : l.f) pull(v);
      for (auto& v : l.w) pull(v);
    }
    for (Eigen::Index r = 0; r < readout.rows(); ++r)
      for (Eigen::Index c = 0; c < readout.cols(); ++c) readout(r, c) = p[k++];
    for (Eigen::Index r = 0; r < bias.size(); ++r) bias[r] = p[k++];
    if (k != p.size()) throw DomainError("from_params: parameter count mismatch");
  }

  std::size_t param_count() const { return to_params().size(); }
};

/// Complex normal f and W with variance 1/(fan-in), readout N(0, 1/C), bias 0.
inline NetworkWeights init_weights(const NetworkConfig& cfg, const RepCatalog& cat) {
  check_config(cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, "init-weights"));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto complex_normal = [&](double std) {
    const double s = std / std::sqrt(2.0);
    const double re = normal(rng);
    return Complex(s * re, s * normal(rng));
  };
  const int c = cfg.num_channels;
  NetworkWeights w;
  for (int k = 0; k < cfg.num_layers; ++k) {
    LayerWeights layer;
    for (int q = 0; q < cat.size(); ++q) {
      Vector f(cat.filter_degeneracy(q));
      for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = complex_normal(1.0);
      const int g = cat.degeneracy(q);
      Vector mix(static_cast<Eigen::Index>(c) * g * c);
      const double std = 1.0 / std::sqrt(static_cast<double>(std::max(1, g * c)));
      for (Eigen::Index i = 0; i < mix.size(); ++i) mix[i] = complex_normal(std);
      layer.f.push_back(std::move(f));
      layer.w.push_back(std::move(mix));
    }
    w.layers.push_back(std::move(layer));
  }
  w.readout = RealMatrix(cfg.num_classes, c);
  for (Eigen::Index r = 0; r < w.readout.rows(); ++r)
    for (Eigen::Index col = 0; col < c; ++col) w.readout(r, col) = normal(rng) / std::sqrt(static_cast<double>(c));
  w.bias = RealVector::Zero(cfg.num_classes);
  return w;
}

inline void check_weights(const NetworkWeights& w, const NetworkConfig& cfg, const RepCatalog& cat) {
  if (static_cast<int>(w.layers.size()) != cfg.num_layers) throw DomainError("weights: layer count mismatch");
  const int c = cfg.num_channels;
  for (const auto& l : w.layers) {
    if (static_cast<int>(l.f.size()) != cat.size() || static_cast<int>(l.w.size()) != cat.size())
      throw DomainError("weights: rep count mismatch");
    for (int q = 0; q < cat.size(); ++q) {
      if (l.f[q].size() != cat.filter_degeneracy(q)) throw DomainError("weights: filter weight shape mismatch");
      if (l.w[q].size() != static_cast<Eigen::Index>(c) * cat.degeneracy(q) * c)
        throw DomainError("weights: mixing weight shape mismatch");
    }
  }
  if (w.readout.rows() != cfg.num_classes || w.readout.cols() != c || w.bias.size() != cfg.num_classes)
    throw DomainError("weights: readout shape mismatch");
}

// -------------------------------------------------------------------------
// Filters

using RepTensors = std::vector<Matrix>;  // one matrix per catalog rep

/// Point coordinates P x (1 + spatial) mapped into the q' space: P x n_{q'}.
inline Matrix embed_points(const RealMatrix& points, const RepCatalog& cat) {
  if (points.cols() != cat.coord_map.cols()) throw DomainError("embed_points: coordinate count mismatch");
  return points.cast<Complex>() * cat.coord_map.transpose();
}

/// Quadratic filter parts Q[q][h] (P x P n_q), one per (q' (x) q' -> q) path h.
inline std::vector<RepTensors> filter_quadratics(const Matrix& xq, const RepCatalog& cat) {
  const Eigen::Index p = xq.rows();
  const Eigen::Index ne = cat.dim(cat.embedding);
  if (xq.cols() != ne) throw DomainError("build_filters: coordinates are not in the embedding rep");
  std::vector<RepTensors> out(cat.size());
  Vector outer(ne * ne);
  for (int q = 0; q < cat.size(); ++q) {
    const Eigen::Index nq = cat.dim(q);
    for (const auto& path : cat.paths[q]) {
      if (path.left != cat.embedding || path.right != cat.embedding) continue;
      Matrix m = Matrix::Zero(p, p * nq);
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) {
          const Vector d = (xq.row(j) - xq.row(i)).transpose();
          for (Eigen::Index s = 0; s < ne; ++s)
            for (Eigen::Index t = 0; t < ne; ++t) outer[s * ne + t] = d[s] * d[t];
          m.block(i, j * nq, 1, nq) = (path.coeffs * outer).transpose();
        }
      out[q].push_back(std::move(m));
    }
  }
  return out;
}

inline RepTensors assemble_filters(const Matrix& xq, const std::vector<RepTensors>& quad, const std::vector<Vector>& f,
                                   const RepCatalog& cat) {
  if (static_cast<int>(f.size()) != cat.size()) throw DomainError("build_filters: filter weight count mismatch");
  const Eigen::Index p = xq.rows();
  RepTensors out;
  for (int q = 0; q < cat.size(); ++q) {
    if (f[q].size() != static_cast<Eigen::Index>(quad[q].size()))
      throw DomainError("build_filters: filter weight shape mismatch");
    const Eigen::Index nq = cat.dim(q);
    Matrix m = Matrix::Zero(p, p * nq);
    if (q == cat.embedding)
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) m.block(i, j * nq, 1, nq) = xq.row(j) - xq.row(i);
    for (std::size_t h = 0; h < quad[q].size(); ++h) m += f[q][static_cast<Eigen::Index>(h)] * quad[q][h];
    out.push_back(std::move(m));
  }
  return out;
}

/// F^k for one cloud given coordinates already in the q' space.
inline RepTensors build_filters(const Matrix& xq, const std::vector<Vector>& f, const RepCatalog& cat) {
  return assemble_filters(xq, filter_quadratics(xq, cat), f, cat);
}

// -------------------------------------------------------------------------
// Layer update

namespace detail {

inline void check_activations(const RepTensors& v, Eigen::Index p, int channels, const RepCatalog& cat) {
  if (static_cast<int>(v.size()) != cat.size()) throw DomainError("activations: rep count mismatch");
  for (int q = 0; q < cat.size(); ++q)
    if (v[q].rows() != p || v[q].cols() != channels * cat.dim(q)) throw DomainError("activations: shape mismatch");
}

inline void check_filters(const RepTensors& f, Eigen::Index p, const RepCatalog& cat) {
  if (static_cast<int>(f.size()) != cat.size()) throw DomainError("filters: rep count mismatch");
  for (int q = 0; q < cat.size(); ++q)
    if (f[q].rows() != p || f[q].cols() != p * cat.dim(q)) throw DomainError("filters: shape mismatch");
}

// U[(j, s), (d, r)] += sum_t C[r, s n_m + t] V_m[j, d n_m + t] for one path.
inline void accumulate_u(Matrix& u, const CGPath& path, const Matrix& vm, Eigen::Index nl, Eigen::Index nm,
                         Eigen::Index nq, int channels) {
  const Eigen::Index p = vm.rows();
  for (Eigen::Index s = 0; s < nl; ++s) {
    const Matrix cs = path.coeffs.middleCols(s * nm, nm);  // n_q x n_m
    for (int d = 0; d < channels; ++d) {
      // rows j of V_m's channel-d block, mapped through cs
      const Matrix block = vm.middleCols(d * nm, nm) * cs.transpose();  // P x n_q
      for (Eigen::Index j = 0; j < p; ++j) u.block(j * nl + s, d * nq, 1, nq) += block.row(j);
    }
  }
}

// Inverse of accumulate_u: Vbar_m[j, d n_m + t] += sum_{s,r} conj(C[r, s n_m + t]) Ubar[(j, s), (d, r)].
inline void scatter_u(Matrix& vbar, const CGPath& path, const Matrix& ubar, Eigen::Index nl, Eigen::Index nm,
                      Eigen::Index nq, int channels) {
  const Eigen::Index p = vbar.rows();
  for (Eigen::Index s = 0; s < nl; ++s) {
    const Matrix cs = path.coeffs.middleCols(s * nm, nm);
    for (int d = 0; d < channels; ++d) {
      Matrix block(p, nq);
      for (Eigen::Index j = 0; j < p; ++j) block.row(j) = ubar.block(j * nl + s, d * nq, 1, nq);
      vbar.middleCols(d * nm, nm) += block * cs.conjugate();
    }
  }
}

// U[g][l] for output q: (P n_l) x (C n_q).
inline std::vector<RepTensors> stage_u(const RepTensors& v, int q, int channels, const RepCatalog& cat) {
  const Eigen::Index p = v.front().rows();
  const int g_count = cat.degeneracy(q);
  const Eigen::Index nq = cat.dim(q);
  std::vector<RepTensors> u(g_count);
  for (auto& per_l : u)
    for (int l = 0; l < cat.size(); ++l) per_l.push_back(Matrix::Zero(p * cat.dim(l), channels * nq));
  for (const auto& path : cat.paths[q])
    accumulate_u(u[path.g][path.left], path, v[path.right], cat.dim(path.left), cat.dim(path.right), nq, channels);
  return u;
}

}  // namespace detail

/// One layer update for a single cloud, as staged contractions:
/// U = C V, Z = F U (the j-sum), then the W channel mix.
inline RepTensors layer_forward(const RepTensors& v, const RepTensors& filters, const std::vector<Vector>& w,
                                int channels, const RepCatalog& cat) {
  if (v.empty()) throw DomainError("layer_forward: empty activations");
  const Eigen::Index p = v.front().rows();
  detail::check_activations(v, p, channels, cat);
  detail::check_filters(filters, p, cat);
  if (static_cast<int>(w.size()) != cat.size()) throw DomainError("layer_forward: mixing weight count mismatch");
  const double inv_p = 1.0 / static_cast<double>(p);
  RepTensors out;
  for (int q = 0; q < cat.size(); ++q) {
    const Eigen::Index nq = cat.dim(q);
    const int g_count = cat.degeneracy(q);
    if (w[q].size() != static_cast<Eigen::Index>(channels) * g_count * channels)
      throw DomainError("layer_forward: mixing weight shape mismatch");
    Matrix vq = Matrix::Zero(p, channels * nq);
    const auto u = detail::stage_u(v, q, channels, cat);
    for (int g = 0; g < g_count; ++g) {
      Matrix z = Matrix::Zero(p, channels * nq);
      for (int l = 0; l < cat.size(); ++l) z.noalias() += filters[l] * u[g][l];
      for (int c = 0; c < channels; ++c)
        for (int d = 0; d < channels; ++d)
          vq.middleCols(c * nq, nq) += (inv_p * w[q][(c * g_count + g) * channels + d]) * z.middleCols(d * nq, nq);
    }
    out.push_back(std::move(vq));
  }
  return out;
}

struct LayerGrads {
  RepTensors v;        // d loss / d input activations
  RepTensors filters;  // d loss / d filters
  std::vector<Vector> w;
};

/// Adjoint of layer_forward. Gradients use Gamma = dL/dRe + i dL/dIm.
inline LayerGrads layer_backward(const RepTensors& v, const RepTensors& filters, const std::vector<Vector>& w,
                                 const RepTensors& out_bar, int channels, const RepCatalog& cat) {
  const Eigen::Index p = v.front().rows();
  detail::check_activations(out_bar, p, channels, cat);
  const double inv_p = 1.0 / static_cast<double>(p);
  LayerGrads gr;
  for (int q = 0; q < cat.size(); ++q) {
    gr.v.push_back(Matrix::Zero(v[q].rows(), v[q].cols()));
    gr.filters.push_back(Matrix::Zero(filters[q].rows(), filters[q].cols()));
    gr.w.push_back(Vector::Zero(w[q].size()));
  }
  for (int q = 0; q < cat.size(); ++q) {
    const Eigen::Index nq = cat.dim(q);
    const int g_count = cat.degeneracy(q);
    const auto u = detail::stage_u(v, q, channels, cat);
    std::vector<RepTensors> u_bar(g_count);
    for (int g = 0; g < g_count; ++g) {
      Matrix z = Matrix::Zero(p, channels * nq);
      for (int l = 0; l < cat.size(); ++l) z.noalias() += filters[l] * u[g][l];
      Matrix z_bar = Matrix::Zero(p, channels * nq);
      for (int c = 0; c < channels; ++c)
        for (int d = 0; d < channels; ++d) {
          const Eigen::Index idx = (c * g_count + g) * channels + d;
          const auto vb = out_bar[q].middleCols(c * nq, nq);
          z_bar.middleCols(d * nq, nq) += (inv_p * std::conj(w[q][idx])) * vb;
          gr.w[q][idx] += inv_p * (z.middleCols(d * nq, nq).conjugate().cwiseProduct(vb)).sum();
        }
      for (int l = 0; l < cat.size(); ++l) {
        gr.filters[l].noalias() += z_bar * u[g][l].adjoint();
        u_bar[g].push_back(filters[l].adjoint() * z_bar);
      }
    }
    for (const auto& path : cat.paths[q])
      detail::scatter_u(gr.v[path.right], path, u_bar[path.g][path.left], cat.dim(path.left), cat.dim(path.right), nq,
                        channels);
  }
  return gr;
}

// -------------------------------------------------------------------------
// Whole network

/// V^0: 1 in the trivial rep and centroid-relative coordinates in q', on every channel.
inline RepTensors initial_activations(const Matrix& xq, int channels, const RepCatalog& cat) {
  const Eigen::Index p = xq.rows();
  const Eigen::Index ne = cat.dim(cat.embedding);
  const Matrix centered = xq.rowwise() - xq.colwise().mean();
  RepTensors v;
  for (int q = 0; q < cat.size(); ++q) v.push_back(Matrix::Zero(p, channels * cat.dim(q)));
  for (int c = 0; c < channels; ++c) {
    v[cat.trivial].col(c).setOnes();
    v[cat.embedding].middleCols(c * ne, ne) += centered;
  }
  return v;
}

struct ForwardTrace {
  Matrix xq;
  std::vector<RepTensors> quadratics;   // per rep q, one P x P n_q term per filter path
  std::vector<RepTensors> filters;      // per layer
  std::vector<RepTensors> activations;  // V^0 .. V^L
  RealVector pooled;                    // C
  RealVector logits;
};

inline ForwardTrace forward_trace(const RealMatrix& points, const NetworkWeights& w, const NetworkConfig& cfg,
                                  const RepCatalog& cat) {
  check_config(cfg);
  check_weights(w, cfg, cat);
  if (points.rows() < 1) throw DomainError("forward: empty cloud");
  ForwardTrace tr;
  tr.xq = embed_points(points, cat);
  tr.quadratics = filter_quadratics(tr.xq, cat);
  tr.activations.push_back(initial_activations(tr.xq, cfg.num_channels, cat));
  for (int k = 0; k < cfg.num_layers; ++k) {
    tr.filters.push_back(assemble_filters(tr.xq, tr.quadratics, w.layers[k].f, cat));
    tr.activations.push_back(
        layer_forward(tr.activations.back(), tr.filters.back(), w.layers[k].w, cfg.num_channels, cat));
  }
  const Matrix& top = tr.activations.back()[cat.trivial];
  tr.pooled = top.real().colwise().mean().transpose();
  tr.logits = w.readout * tr.pooled + w.bias;
  return tr;
}

inline RealVector logits(const RealMatrix& points, const NetworkWeights& w, const NetworkConfig& cfg,
                         const RepCatalog& cat) {
  return forward_trace(points, w, cfg, cat).logits;
}

/// Logits for a batch of clouds sharing one point count: batch x classes.
inline RealMatrix forward(std::span<const RealMatrix> batch, const NetworkWeights& w, const NetworkConfig& cfg,
                          const RepCatalog& cat) {
  RealMatrix out(static_cast<Eigen::Index>(batch.size()), cfg.num_classes);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].rows() != batch.front().rows()) throw DomainError("forward: clouds in a batch differ in point count");
    out.row(static_cast<Eigen::Index>(b)) = logits(batch[b], w, cfg, cat).transpose();
  }
  return out;
}

/// Numerically stable log-softmax cross entropy and its logit gradient.
inline std::pair<double, RealVector> softmax_cross_entropy(const RealVector& z, int label) {
  if (label < 0 || label >= z.size()) throw DomainError("label out of range");
  const double mx = z.maxCoeff();
  const RealVector e = (z.array() - mx).exp();
  const double sum = e.sum();
  RealVector grad = e / sum;
  const double loss = -(z[label] - mx - std::log(sum));
  grad[label] -= 1.0;
  return {loss, grad};
}

struct BatchResult {
  double loss = 0.0;
  double accuracy = 0.0;
  NetworkWeights grad;
};

namespace detail {

inline void add_into(NetworkWeights& acc, const NetworkWeights& g) {
  for (std::size_t k = 0; k < acc.layers.size(); ++k)
    for (std::size_t q = 0; q < acc.layers[k].f.size(); ++q) {
      acc.layers[k].f[q] += g.layers[k].f[q];
      acc.layers[k].w[q] += g.layers[k].w[q];
    }
  acc.readout += g.readout;
  acc.bias += g.bias;
}

inline void scale(NetworkWeights& acc, double s) {
  for (auto& l : acc.layers) {
    for (auto& v : l.f) v *= s;
    for (auto& v : l.w) v *= s;
  }
  acc.readout *= s;
  acc.bias *= s;
}

inline std::pair<double, bool> cloud_grad(const RealMatrix& points, int label, const NetworkWeights& w,
                                          const NetworkConfig& cfg, const RepCatalog& cat, NetworkWeights& g) {
  const auto tr = forward_trace(points, w, cfg, cat);
  auto [loss, dz] = softmax_cross_entropy(tr.logits, label);
  Eigen::Index arg = 0;
  tr.logits.maxCoeff(&arg);

  g.readout += dz * tr.pooled.transpose();
  g.bias += dz;
  const RealVector pooled_bar = w.readout.transpose() * dz;

  const Eigen::Index p = points.rows();
  RepTensors v_bar;
  for (int q = 0; q < cat.size(); ++q) v_bar.push_back(Matrix::Zero(p, cfg.num_channels * cat.dim(q)));
  for (int c = 0; c < cfg.num_channels; ++c)
    v_bar[cat.trivial].col(c).setConstant(Complex(pooled_bar[c] / static_cast<double>(p), 0.0));

  const auto& quad = tr.quadratics;
  for (int k = cfg.num_layers - 1; k >= 0; --k) {
    auto lg = layer_backward(tr.activations[k], tr.filters[k], w.layers[k].w, v_bar, cfg.num_channels, cat);
    for (int q = 0; q < cat.size(); ++q) {
      g.layers[k].w[q] += lg.w[q];
      for (std::size_t h = 0; h < quad[q].size(); ++h)
        g.layers[k].f[q][static_cast<Eigen::Index>(h)] += (quad[q][h].conjugate().cwiseProduct(lg.filters[q])).sum();
    }
    v_bar = std::move(lg.v);
  }
  return {loss, arg == label};
}

}  // namespace detail

/// Mean softmax cross entropy over a batch and its gradient for every
/// weight. Clouds are split over `threads` workers; partial sums are added
/// in cloud order so the result does not depend on the thread count.
inline BatchResult backward(std::span<const RealMatrix> batch, std::span<const int> labels, const NetworkWeights& w,
                            const NetworkConfig& cfg, const RepCatalog& cat, int threads = 1) {
  if (batch.empty()) throw DomainError("backward: empty batch");
  if (batch.size() != labels.size()) throw DomainError("backward: label count mismatch");
  for (const auto& c : batch)
    if (c.rows() != batch.front().rows()) throw DomainError("backward: clouds in a batch differ in point count");
  for (int y : labels)
    if (y < 0 || y >= cfg.num_classes) throw DomainError("backward: label out of range");
  check_weights(w, cfg, cat);

  const std::size_t n = batch.size();
  std::vector<NetworkWeights> grads(n, w.zeros_like());
  std::vector<double> losses(n);
  std::vector<char> hits(n);
  auto work = [&](std::size_t b) {
    auto [loss, hit] = detail::cloud_grad(batch[b], labels[b], w, cfg, cat, grads[b]);
    losses[b] = loss;
    hits[b] = hit;
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
  if (workers == 1) {
    for (std::size_t b = 0; b < n; ++b) work(b);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t b = t; b < n; b += workers) work(b);
      });
    for (auto& th : pool) th.join();
  }

  BatchResult out;
  out.grad = w.zeros_like();
  for (std::size_t b = 0; b < n; ++b) {
    detail::add_into(out.grad, grads[b]);
    out.loss += losses[b];
    out.accuracy += hits[b];
  }
  const double inv = 1.0 / static_cast<double>(n);
  detail::scale(out.grad, inv);
  out.loss *= inv;
  out.accuracy *= inv;
  return out;
}

// -------------------------------------------------------------------------
// Data-dependent initialization

/// Rescales each layer's W so activations on `sample` have unit RMS, then
/// sets the readout to act on standardized pooled features. Scaling weights
/// by constants keeps every layer equivariant.
inline NetworkWeights calibrate_weights(NetworkWeights w, const NetworkConfig& cfg, const RepCatalog& cat,
                                        std::span<const RealMatrix> sample) {
  if (sample.empty()) throw DomainError("calibrate_weights: empty sample");
  check_weights(w, cfg, cat);
  for (int k = 0; k < cfg.num_layers; ++k) {
    double sum = 0.0;
    double count = 0.0;
    for (const auto& pts : sample) {
      const Matrix xq = embed_points(pts, cat);
      const auto quad = filter_quadratics(xq, cat);
      RepTensors v = initial_activations(xq, cfg.num_channels, cat);
      for (int layer = 0; layer <= k; ++layer)
        v = layer_forward(v, assemble_filters(xq, quad, w.layers[layer].f, cat), w.layers[layer].w, cfg.num_channels,
                          cat);
      for (const auto& m : v) {
        sum += m.squaredNorm();
        count += static_cast<double>(m.size());
      }
    }
    const double rms = std::sqrt(sum / count);
    if (rms > 0.0 && std::isfinite(rms))
      for (auto& m : w.layers[k].w) m /= rms;
  }
  RealMatrix pooled(static_cast<Eigen::Index>(sample.size()), cfg.num_channels);
  for (std::size_t b = 0; b < sample.size(); ++b)
    pooled.row(static_cast<Eigen::Index>(b)) = forward_trace(sample[b], w, cfg, cat).pooled.transpose();
  const RealVector mean = pooled.colwise().mean().transpose();
  for (int c = 0; c < cfg.num_channels; ++c) {
    const double sd = std::sqrt((pooled.col(c).array() - mean[c]).square().mean());
    if (sd > 0.0 && std::isfinite(sd)) w.readout.col(c) /= sd;
  }
  w.bias = -w.readout * mean;
  return w;
}

// -------------------------------------------------------------------------
// Training

struct LabeledClouds {
  std::vector<RealMatrix> points;
  std::vector<int> labels;
  std::size_t size() const noexcept { return points.size(); }
};

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 1;
  /// Stop after this many Adam steps; negative means no cap.
  int max_steps = -1;
  /// Metric row every this many steps; 0 means once per epoch.
  int eval_every = 0;
  int threads = 1;
};

struct MetricRow {
  int step;
  double train_loss;
  double train_acc;
  double dev_acc;
};

struct TrainResult {
  NetworkWeights weights;
  std::vector<MetricRow> metrics;
  std::vector<double> step_losses;
};

inline double accuracy(const LabeledClouds& data, const NetworkWeights& w, const NetworkConfig& cfg,
                       const RepCatalog& cat, int threads = 1) {
  if (data.size() == 0) return 0.0;
  std::vector<char> hit(data.size());
  auto work = [&](std::size_t i) {
    Eigen::Index arg = 0;
    logits(data.points[i], w, cfg, cat).maxCoeff(&arg);
    hit[i] = arg == data.labels[i];
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), data.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < data.size(); i += workers) work(i);
    });
  for (std::size_t i = 0; i < data.size(); i += workers) work(i);
  for (auto& th : pool) th.join();
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(data.size());
}

/// Mean cross entropy over a whole dataset.
inline double dataset_loss(const LabeledClouds& data, const NetworkWeights& w, const NetworkConfig& cfg,
                           const RepCatalog& cat) {
  if (data.size() == 0) throw DomainError("dataset_loss: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += softmax_cross_entropy(logits(data.points[i], w, cfg, cat), data.labels[i]).first;
  return total / static_cast<double>(data.size());
}

/// Adam over all weights as real pairs, minibatches from a per-epoch shuffle.
inline TrainResult train(const LabeledClouds& train_set, const LabeledClouds& dev_set, const NetworkConfig& cfg,
                         const RepCatalog& cat, const TrainConfig& tc, NetworkWeights init) {
  if (train_set.size() == 0) throw DomainError("train: empty dataset");
  if (train_set.points.size() != train_set.labels.size()) throw DomainError("train: label count mismatch");
  if (tc.learning_rate < 0.0) throw DomainError("train: negative learning rate");
  check_weights(init, cfg, cat);

  TrainResult res;
  res.weights = std::move(init);
  std::vector<double> params = res.weights.to_params();
  AdamState adam(params.size(), tc.learning_rate);

  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const int per_epoch = static_cast<int>((n + bs - 1) / bs);
  const int eval_every = tc.eval_every > 0 ? tc.eval_every : per_epoch;

  int step = 0;
  double run_loss = 0.0, run_acc = 0.0;
  int run_count = 0;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += bs) {
      if (tc.max_steps >= 0 && step >= tc.max_steps) return res;
      std::vector<RealMatrix> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
        batch.push_back(train_set.points[order[i]]);
        labels.push_back(train_set.labels[order[i]]);
      }
      const auto br = backward(batch, labels, res.weights, cfg, cat, tc.threads);
      const auto grads = br.grad.to_params();
      adam_step(adam, params, grads);
      res.weights.from_params(params);
      ++step;
      res.step_losses.push_back(br.loss);
      run_loss += br.loss;
      run_acc += br.accuracy;
      ++run_count;
      if (step % eval_every == 0) {
        const double dev = accuracy(dev_set, res.weights, cfg, cat, tc.threads);
        res.metrics.push_back({step, run_loss / run_count, run_acc / run_count, dev});
        run_loss = run_acc = 0.0;
        run_count = 0;
      }
    }
  }
  return res;
}

// -------------------------------------------------------------------------
// Serialization

inline Json complex_vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back({v[i].real(), v[i].imag()});
  return a;
}

inline Vector complex_vector_from_json(const Json& j) {
  if (!j.is_array()) throw StructuralError("expected an array of [re, im]");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Json& e = j[i];
    if (!e.is_array() || e.size() != 2) throw StructuralError("entries must be [re, im]");
    v[static_cast<Eigen::Index>(i)] = Complex(e[0].get<double>(), e[1].get<double>());
  }
  return v;
}

inline Json catalog_to_json(const RepCatalog& cat) {
  Json reps = Json::array();
  for (const auto& r : cat.reps) reps.push_back(rep_to_json(r));
  Json paths = Json::array();
  for (int q = 0; q < cat.size(); ++q)
    for (const auto& p : cat.paths[q])
      paths.push_back({{"out", q}, {"left", p.left}, {"right", p.right}, {"g", p.g}, {"coeffs", matrix_to_json(p.coeffs)}});
  return Json{{"reps", std::move(reps)},
              {"embedding", cat.embedding},
              {"trivial", cat.trivial},
              {"coord_map", matrix_to_json(cat.coord_map)},
              {"paths", std::move(paths)}};
}

inline RepCatalog catalog_from_json(const Json& j) {
  RepCatalog cat;
  for (const auto& r : j.at("reps")) cat.reps.push_back(rep_from_json(r));
  cat.embedding = j.at("embedding").get<int>();
  cat.trivial = j.at("trivial").get<int>();
  cat.coord_map = matrix_from_json(j.at("coord_map"));
  if (cat.reps.empty() || cat.embedding < 0 || cat.embedding >= cat.size() || cat.trivial < 0 ||
      cat.trivial >= cat.size())
    throw StructuralError("catalog JSON: bad rep indices");
  cat.paths.resize(cat.reps.size());
  for (const auto& p : j.at("paths")) {
    const int q = p.at("out").get<int>();
    const int l = p.at("left").get<int>();
    const int m = p.at("right").get<int>();
    if (q < 0 || q >= cat.size() || l < 0 || l >= cat.size() || m < 0 || m >= cat.size())
      throw StructuralError("catalog JSON: path index out of range");
    Matrix c = matrix_from_json(p.at("coeffs"));
    if (c.rows() != cat.dim(q) || c.cols() != cat.dim(l) * cat.dim(m))
      throw StructuralError("catalog JSON: CG tensor has the wrong shape");
    cat.paths[q].push_back({l, m, p.at("g").get<int>(), std::move(c)});
  }
  return cat;
}

inline Json network_config_to_json(const NetworkConfig& c) {
  return Json{{"num_layers", c.num_layers},
              {"num_channels", c.num_channels},
              {"batch_size", c.batch_size},
              {"num_classes", c.num_classes},
              {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const Json& j) {
  NetworkConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.num_channels = j.at("num_channels").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  check_config(c);
  return c;
}

inline Json weights_to_json(const NetworkWeights& w) {
  Json layers = Json::array();
  for (const auto& l : w.layers) {
    Json f = Json::array(), mix = Json::array();
    for (const auto& v : l.f) f.push_back(complex_vector_to_json(v));
    for (const auto& v : l.w) mix.push_back(complex_vector_to_json(v));
    layers.push_back({{"f", std::move(f)}, {"w", std::move(mix)}});
  }
  Json readout = Json::array();
  for (Eigen::Index r = 0; r < w.readout.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < w.readout.cols(); ++c) row.push_back(w.readout(r, c));
    readout.push_back(std::move(row));
  }
  Json bias = Json::array();
  for (Eigen::Index r = 0; r < w.bias.size(); ++r) bias.push_back(w.bias[r]);
  return Json{{"layers", std::move(layers)}, {"readout", std::move(readout)}, {"bias", std::move(bias)}};
}

inline NetworkWeights weights_from_json(const Json& j) {
  NetworkWeights w;
  for (const auto& l : j.at("layers")) {
    LayerWeights lw;
    for (const auto& v : l.at("f")) lw.f.push_back(complex_vector_from_json(v));
    for (const auto& v : l.at("w")) lw.w.push_back(complex_vector_from_json(v));
    w.layers.push_back(std::move(lw));
  }
  const Json& r = j.at("readout");
  const auto rows = static_cast<Eigen::Index>(r.size());
  const auto cols = rows ? static_cast<Eigen::Index>(r[0].size()) : 0;
  w.readout = RealMatrix(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(r[i].size()) != cols) throw StructuralError("readout: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) w.readout(i, c) = r[i][c].get<double>();
  }
  const Json& b = j.at("bias");
  w.bias = RealVector(static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < b.size(); ++i) w.bias[static_cast<Eigen::Index>(i)] = b[i].get<double>();
  return w;
}

/// Checkpoint: config echo, catalog (reps and CG tensors), weights.
inline Json checkpoint_to_json(const NetworkConfig& cfg, const RepCatalog& cat, const NetworkWeights& w) {
  return Json{{"config", network_config_to_json(cfg)}, {"catalog", catalog_to_json(cat)}, {"weights", weights_to_json(w)}};
}

struct Checkpoint {
  NetworkConfig config;
  RepCatalog catalog;
  NetworkWeights weights;
};

inline Checkpoint checkpoint_from_json(const Json& j) {
  Checkpoint c{network_config_from_json(j.at("config")), catalog_from_json(j.at("catalog")),
               weights_from_json(j.at("weights"))};
  check_weights(c.weights, c.config, c.catalog);
  return c;
}

}  // namespace lierep
