#pragma once

// MNIST-Live: digits read from IDX files become spacetime point clouds of 64
// events (t, x, y[, z]) with t uniform on [-1/2, 1/2] and positions drawn
// with probability proportional to pixel intensity. Evaluation clouds are
// rotated and boosted.
//
// .stc cloud files (all little-endian):
//   "STC1" | u32 version | u64 count | u32 spatial_dims | u32 points
//   per cloud: i32 label | points x (1 + d) f64 row-major (t first)
//              | velocity d f64 | rotation d x d f64 row-major | translation (1 + d) f64

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lierep/errors.hpp"
#include "lierep/numerics.hpp"
#include "lierep/spacetimenet.hpp"

namespace lierep {

inline constexpr int kImageSide = 28;
inline constexpr int kCloudPoints = 64;

struct DigitImage {
  RealMatrix intensity;  // 28 x 28, values in [0, 1]
  int label = 0;
};

// -------------------------------------------------------------------------
// IDX

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) throw FormatError(std::string(what) + ": truncated header", offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace detail

/// Parses an IDX image file (magic 0x00000803, n x 28 x 28 unsigned bytes)
/// and its label file (magic 0x00000801). Intensities are byte / 255.
inline std::vector<DigitImage> read_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const std::uint32_t img_magic = detail::read_be32(images, 0, "images");
  if (img_magic != 0x803)
    throw FormatError("images: expected magic 0x00000803, found " + detail::hex32(img_magic), 0);
  const std::uint32_t count = detail::read_be32(images, 4, "images");
  const std::uint32_t rows = detail::read_be32(images, 8, "images");
  const std::uint32_t cols = detail::read_be32(images, 12, "images");
  if (rows != kImageSide || cols != kImageSide)
    throw FormatError("images: expected 28 x 28, found " + std::to_string(rows) + " x " + std::to_string(cols), 8);

  const std::uint32_t lbl_magic = detail::read_be32(labels, 0, "labels");
  if (lbl_magic != 0x801)
    throw FormatError("labels: expected magic 0x00000801, found " + detail::hex32(lbl_magic), 0);
  const std::uint32_t lbl_count = detail::read_be32(labels, 4, "labels");
  if (lbl_count != count)
    throw FormatError("labels: " + std::to_string(lbl_count) + " labels for " + std::to_string(count) + " images", 4);

  constexpr std::size_t px = kImageSide * kImageSide;
  const std::size_t need = 16 + static_cast<std::size_t>(count) * px;
  if (images.size() < need) throw FormatError("images: truncated pixel data", images.size());
  if (labels.size() < 8 + static_cast<std::size_t>(count)) throw FormatError("labels: truncated", labels.size());

  std::vector<DigitImage> out;
  out.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::size_t base = 16 + static_cast<std::size_t>(n) * px;
    DigitImage img;
    img.intensity = RealMatrix(kImageSide, kImageSide);
    for (int r = 0; r < kImageSide; ++r)
      for (int c = 0; c < kImageSide; ++c) img.intensity(r, c) = images[base + r * kImageSide + c] / 255.0;
    if (img.intensity.maxCoeff() <= 0.0) throw FormatError("images: image " + std::to_string(n) + " is blank", base);
    const std::uint8_t label = labels[8 + n];
    if (label > 9) throw FormatError("labels: label " + std::to_string(label) + " out of range", 8 + n);
    img.label = label;
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<DigitImage> read_idx_files(const std::string& images, const std::string& labels) {
  const auto a = read_bytes(images);
  const auto b = read_bytes(labels);
  return read_idx(a, b);
}

// -------------------------------------------------------------------------
// Poincare transforms (c = 1)

/// Lorentz boost with velocity v acting on (t, x): t' = g (t - v.x),
/// x' = x + ((g - 1)(v.x)/|v|^2 - g t) v.
inline RealMatrix boost_matrix(const RealVector& v) {
  const Eigen::Index d = v.size();
  const double v2 = v.squaredNorm();
  if (!(v2 < 1.0)) throw DomainError("boost: |v| must be below 1");
  RealMatrix m = RealMatrix::Identity(d + 1, d + 1);
  if (v2 == 0.0) return m;
  const double gamma = 1.0 / std::sqrt(1.0 - v2);
  m(0, 0) = gamma;
  m.block(0, 1, 1, d) = -gamma * v.transpose();
  m.block(1, 0, d, 1) = -gamma * v;
  m.block(1, 1, d, d) += (gamma - 1.0) / v2 * v * v.transpose();
  return m;
}

inline RealMatrix rotation_from_angle(double theta) {
  RealMatrix r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

/// Rodrigues rotation about axis w/|w| by angle |w|.
inline RealMatrix rotation_from_vector(const RealVector& w) {
  if (w.size() != 3) throw DomainError("rotation_from_vector: need 3 components");
  const double angle = w.norm();
  if (angle == 0.0) return RealMatrix::Identity(3, 3);
  const Eigen::Vector3d k = w / angle;
  return Eigen::AngleAxisd(angle, k).toRotationMatrix();
}

/// Rotation, then boost, then translation: x' = B(v) diag(1, R) x + a.
struct PoincareTransform {
  RealVector velocity;
  RealMatrix rotation;
  RealVector translation;

  static PoincareTransform identity(int spatial_dims) {
    return {RealVector::Zero(spatial_dims), RealMatrix::Identity(spatial_dims, spatial_dims),
            RealVector::Zero(spatial_dims + 1)};
  }

  int spatial_dims() const noexcept { return static_cast<int>(velocity.size()); }

  void check() const {
    const Eigen::Index d = velocity.size();
    if (rotation.rows() != d || rotation.cols() != d || translation.size() != d + 1)
      throw DomainError("Poincare transform: inconsistent dimensions");
    if (!(velocity.squaredNorm() < 1.0)) throw DomainError("Poincare transform: |v| must be below 1");
    if ((rotation.transpose() * rotation - RealMatrix::Identity(d, d)).norm() > 1e-9 || rotation.determinant() < 0.0)
      throw DomainError("Poincare transform: rotation is not a proper rotation");
  }

  /// Homogeneous Lorentz part B(v) diag(1, R).
  RealMatrix lorentz() const {
    const Eigen::Index d = velocity.size();
    RealMatrix rot = RealMatrix::Identity(d + 1, d + 1);
    rot.bottomRightCorner(d, d) = rotation;
    return boost_matrix(velocity) * rot;
  }

  /// Splits an orthochronous proper Lorentz matrix L = B(v) diag(1, R).
  static PoincareTransform from_matrix(const RealMatrix& l, const RealVector& a) {
    const Eigen::Index d = l.rows() - 1;
    if (l.cols() != d + 1 || a.size() != d + 1 || !(l(0, 0) > 0.0))
      throw DomainError("from_matrix: not an orthochronous Lorentz matrix");
    RealVector v = -l.block(1, 0, d, 1) / l(0, 0);
    const RealMatrix rest = boost_matrix(-v) * l;
    return {v, rest.bottomRightCorner(d, d), a};
  }

  PoincareTransform inverse() const {
    const RealMatrix l_inv = lorentz().inverse();
    return from_matrix(l_inv, -(l_inv * translation));
  }

  /// This transform applied after `first`.
  PoincareTransform after(const PoincareTransform& first) const {
    return from_matrix(lorentz() * first.lorentz(), lorentz() * first.translation + translation);
  }
};

struct SpacetimeCloud {
  RealMatrix points;  // P x (1 + d), columns (t, x, y[, z])
  int label = 0;
  /// Transform applied since sampling.
  PoincareTransform transform;
};

/// Applies the transform to every event and records it in the metadata.
inline SpacetimeCloud lorentz_boost(const SpacetimeCloud& cloud, const PoincareTransform& tf) {
  tf.check();
  if (cloud.points.cols() != tf.spatial_dims() + 1) throw DomainError("lorentz_boost: dimension mismatch");
  SpacetimeCloud out = cloud;
  out.points = (cloud.points * tf.lorentz().transpose()).rowwise() + tf.translation.transpose();
  out.transform = tf.after(cloud.transform);
  return out;
}

// -------------------------------------------------------------------------
// Sampling

struct SampleOptions {
  int spatial_dims = 2;
  int points = kCloudPoints;
  /// Uniform sub-pixel offset of one pixel width (also used for z in 3D).
  bool jitter = true;
};

/// Pixel (r, c) maps to x = (c + 1/2)/28 - 1/2, y = 1/2 - (r + 1/2)/28.
inline SpacetimeCloud sample_cloud(const DigitImage& img, std::uint64_t seed, const SampleOptions& opt = {}) {
  if (opt.spatial_dims != 2 && opt.spatial_dims != 3) throw DomainError("sample_cloud: spatial_dims must be 2 or 3");
  if (opt.points < 1) throw DomainError("sample_cloud: need at least one point");
  if (img.intensity.rows() != kImageSide || img.intensity.cols() != kImageSide)
    throw DomainError("sample_cloud: image must be 28 x 28");
  if (!(img.intensity.sum() > 0.0)) throw DomainError("sample_cloud: image has zero intensity");
  if (img.intensity.minCoeff() < 0.0) throw DomainError("sample_cloud: negative intensity");

  std::vector<double> weights;
  weights.reserve(kImageSide * kImageSide);
  for (int r = 0; r < kImageSide; ++r)
    for (int c = 0; c < kImageSide; ++c) weights.push_back(img.intensity(r, c));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  const double pixel = 1.0 / kImageSide;

  SpacetimeCloud cloud;
  cloud.label = img.label;
  cloud.transform = PoincareTransform::identity(opt.spatial_dims);
  cloud.points = RealMatrix::Zero(opt.points, opt.spatial_dims + 1);
  for (int i = 0; i < opt.points; ++i) {
    cloud.points(i, 0) = unit(rng);
    const int idx = pick(rng);
    const int r = idx / kImageSide, c = idx % kImageSide;
    double x = (c + 0.5) * pixel - 0.5;
    double y = 0.5 - (r + 0.5) * pixel;
    double z = 0.0;
    if (opt.jitter) {
      x += unit(rng) * pixel;
      y += unit(rng) * pixel;
      if (opt.spatial_dims == 3) z = unit(rng) * pixel;
    }
    cloud.points(i, 1) = x;
    cloud.points(i, 2) = y;
    if (opt.spatial_dims == 3) cloud.points(i, 3) = z;
  }
  return cloud;
}

/// Uniform rotation and a velocity with |v| ~ U[0, vmax] in a uniform direction.
inline PoincareTransform random_transform(int spatial_dims, double vmax, std::mt19937_64& rng) {
  if (!(vmax >= 0.0 && vmax < 1.0)) throw DomainError("random_transform: velocity bound must be in [0, 1)");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  PoincareTransform tf = PoincareTransform::identity(spatial_dims);
  if (spatial_dims == 2) {
    tf.rotation = rotation_from_angle(2.0 * std::numbers::pi * unit(rng));
  } else {
    // Uniform unit quaternion.
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    tf.rotation = q.normalized().toRotationMatrix();
  }
  RealVector dir(spatial_dims);
  do {
    for (int i = 0; i < spatial_dims; ++i) dir[i] = normal(rng);
  } while (dir.norm() == 0.0);
  tf.velocity = dir.normalized() * (vmax * unit(rng));
  return tf;
}

struct SplitConfig {
  std::vector<int> classes{0, 9};
  int train_count = 4096;
  int dev_count = 124;
  int spatial_dims = 2;
  double eval_velocity_max = 0.3;
  std::uint64_t seed = 0;
  /// Train clouds allowed per source image. Dev images are never reused
  /// and never overlap the train images.
  int max_reuse = 1;
  bool jitter = true;
  int threads = 1;
};

struct Split {
  std::vector<SpacetimeCloud> train;
  std::vector<SpacetimeCloud> dev;
};

/// Labels are positions in `classes`. Train clouds are untransformed; dev
/// clouds get a random rotation and boost.
inline Split make_split(const std::vector<DigitImage>& images, const SplitConfig& cfg) {
  if (cfg.train_count < 0 || cfg.dev_count < 0 || cfg.max_reuse < 1) throw DomainError("make_split: bad counts");
  if (cfg.classes.empty()) throw DomainError("make_split: no classes");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (int c : cfg.classes)
      if (images[i].label == c) pool.push_back(i);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "split-shuffle"));
  std::shuffle(pool.begin(), pool.end(), shuffle_rng);

  const auto dev_n = static_cast<std::size_t>(cfg.dev_count);
  const auto train_n = static_cast<std::size_t>(cfg.train_count);
  if (pool.size() < dev_n) throw DomainError("make_split: not enough images for the dev set");
  const std::size_t train_images = pool.size() - dev_n;
  if (train_n > 0 && (train_images == 0 || train_n > train_images * static_cast<std::size_t>(cfg.max_reuse)))
    throw DomainError("make_split: " + std::to_string(train_images) + " images cannot supply " +
                      std::to_string(train_n) + " train clouds at reuse " + std::to_string(cfg.max_reuse));

  auto class_index = [&](int digit) {
    for (std::size_t k = 0; k < cfg.classes.size(); ++k)
      if (cfg.classes[k] == digit) return static_cast<int>(k);
    return -1;
  };
  const SampleOptions opt{cfg.spatial_dims, kCloudPoints, cfg.jitter};

  Split split;
  split.train.resize(train_n);
  split.dev.resize(dev_n);
  auto make_train = [&](std::size_t k) {
    const DigitImage& img = images[pool[dev_n + k % train_images]];
    auto cloud = sample_cloud(img, derive_seed(cfg.seed, "train-cloud", k), opt);
    cloud.label = class_index(img.label);
    split.train[k] = std::move(cloud);
  };
  auto make_dev = [&](std::size_t k) {
    const DigitImage& img = images[pool[k]];
    auto cloud = sample_cloud(img, derive_seed(cfg.seed, "dev-cloud", k), opt);
    cloud.label = class_index(img.label);
    std::mt19937_64 rng(derive_seed(cfg.seed, "dev-transform", k));
    split.dev[k] = lorentz_boost(cloud, random_transform(cfg.spatial_dims, cfg.eval_velocity_max, rng));
  };
  auto run = [&](std::size_t n, auto&& fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.threads)), n);
    if (workers <= 1) {
      for (std::size_t k = 0; k < n; ++k) fn(k);
      return;
    }
    std::vector<std::thread> pool_threads;
    for (std::size_t t = 0; t < workers; ++t)
      pool_threads.emplace_back([&, t] {
        for (std::size_t k = t; k < n; k += workers) fn(k);
      });
    for (auto& th : pool_threads) th.join();
  };
  run(train_n, make_train);
  run(dev_n, make_dev);
  return split;
}

inline LabeledClouds to_labeled(const std::vector<SpacetimeCloud>& clouds) {
  LabeledClouds out;
  for (const auto& c : clouds) {
    out.points.push_back(c.points);
    out.labels.push_back(c.label);
  }
  return out;
}

/// Two-class clouds told apart by spatial spread: class k has positions
/// N(0, spreads[k]^2) per axis and times U[-1/2, 1/2].
inline LabeledClouds synthetic_spread_task(int count, int spatial_dims, int points, std::uint64_t seed,
                                           std::pair<double, double> spreads = {0.1, 0.3}) {
  if (count < 0 || points < 1 || (spatial_dims != 2 && spatial_dims != 3))
    throw DomainError("synthetic_spread_task: bad arguments");
  LabeledClouds out;
  for (int n = 0; n < count; ++n) {
    std::mt19937_64 rng(derive_seed(seed, "synthetic", static_cast<std::uint64_t>(n)));
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    const int label = n % 2;
    std::normal_distribution<double> pos(0.0, label == 0 ? spreads.first : spreads.second);
    RealMatrix p(points, spatial_dims + 1);
    for (int i = 0; i < points; ++i) {
      p(i, 0) = unit(rng);
      for (int k = 1; k <= spatial_dims; ++k) p(i, k) = pos(rng);
    }
    out.points.push_back(std::move(p));
    out.labels.push_back(label);
  }
  return out;
}

// -------------------------------------------------------------------------
// .stc files

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  out.insert(out.end(), b.begin(), b.end());
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("stc: truncated file", pos);
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  T value;
  std::memcpy(&value, b.data(), sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace detail

inline constexpr std::uint32_t kStcVersion = 1;

inline std::vector<std::uint8_t> encode_stc(const std::vector<SpacetimeCloud>& clouds, int spatial_dims) {
  std::vector<std::uint8_t> out{'S', 'T', 'C', '1'};
  const int points = clouds.empty() ? kCloudPoints : static_cast<int>(clouds.front().points.rows());
  detail::put_le<std::uint32_t>(out, kStcVersion);
  detail::put_le<std::uint64_t>(out, clouds.size());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spatial_dims));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(points));
  for (const auto& c : clouds) {
    if (c.points.rows() != points || c.points.cols() != spatial_dims + 1 || c.transform.spatial_dims() != spatial_dims)
      throw DomainError("encode_stc: cloud shape mismatch");
    detail::put_le<std::int32_t>(out, c.label);
    for (Eigen::Index i = 0; i < c.points.rows(); ++i)
      for (Eigen::Index k = 0; k < c.points.cols(); ++k) detail::put_le<double>(out, c.points(i, k));
    for (Eigen::Index k = 0; k < spatial_dims; ++k) detail::put_le<double>(out, c.transform.velocity[k]);
    for (Eigen::Index r = 0; r < spatial_dims; ++r)
      for (Eigen::Index k = 0; k < spatial_dims; ++k) detail::put_le<double>(out, c.transform.rotation(r, k));
    for (Eigen::Index k = 0; k <= spatial_dims; ++k) detail::put_le<double>(out, c.transform.translation[k]);
  }
  return out;
}

inline std::vector<SpacetimeCloud> decode_stc(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "STC1", 4) != 0) throw FormatError("stc: bad magic", 0);
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kStcVersion) throw FormatError("stc: unsupported version " + std::to_string(version), 4);
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  const std::size_t dims_at = pos;
  const auto dims = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  if (dims != 2 && dims != 3) throw FormatError("stc: spatial dims must be 2 or 3", dims_at);
  const auto points = static_cast<Eigen::Index>(detail::get_le<std::uint32_t>(bytes, pos));
  const std::size_t per_cloud =
      4 + 8 * static_cast<std::size_t>(points * (dims + 1) + dims + dims * dims + dims + 1);
  if (count > (bytes.size() - pos) / per_cloud + 1) throw FormatError("stc: count exceeds file size", 8);

  std::vector<SpacetimeCloud> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t n = 0; n < count; ++n) {
    SpacetimeCloud c;
    c.label = detail::get_le<std::int32_t>(bytes, pos);
    c.points = RealMatrix(points, dims + 1);
    for (Eigen::Index i = 0; i < points; ++i)
      for (Eigen::Index k = 0; k <= dims; ++k) c.points(i, k) = detail::get_le<double>(bytes, pos);
    c.transform = PoincareTransform::identity(dims);
    for (Eigen::Index k = 0; k < dims; ++k) c.transform.velocity[k] = detail::get_le<double>(bytes, pos);
    for (Eigen::Index r = 0; r < dims; ++r)
      for (Eigen::Index k = 0; k < dims; ++k) c.transform.rotation(r, k) = detail::get_le<double>(bytes, pos);
    for (Eigen::Index k = 0; k <= dims; ++k) c.transform.translation[k] = detail::get_le<double>(bytes, pos);
    out.push_back(std::move(c));
  }
  if (pos != bytes.size()) throw FormatError("stc: trailing bytes", pos);
  return out;
}

inline void write_stc(const std::string& path, const std::vector<SpacetimeCloud>& clouds, int spatial_dims) {
  const auto bytes = encode_stc(clouds, spatial_dims);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<SpacetimeCloud> read_stc(const std::string& path) {
  const auto bytes = read_bytes(path);
  return decode_stc(bytes);
}

}  // namespace lierep
