// Copyright 2026 The mtlbench Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Synthetic multi-task problems and Multi-MNIST construction from IDX files.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/model.hpp"
#include "mtlbench/numerics.hpp"

namespace mtlbench {

enum class Split { kTrain, kVal, kTest };

struct TaskDescriptor {
  std::string name;
  LossKind loss = LossKind::kMeanSquaredError;
  std::size_t output_dim = 1;
};

struct Dataset {
  Split split = Split::kTrain;
  Mat inputs;
  std::vector<TaskTarget> targets;
  std::vector<TaskDescriptor> tasks;

  std::size_t size() const noexcept { return inputs.rows(); }

  Batch batch(std::span<const std::size_t> rows) const {
    Batch b;
    b.inputs = Mat(rows.size(), inputs.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto src = inputs.row(rows[r]);
      std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
    }
    for (const auto& t : targets) {
      TaskTarget out;
      if (!t.labels.empty()) {
        for (std::size_t r : rows) out.labels.push_back(t.labels[r]);
      } else {
        out.values = Mat(rows.size(), t.values.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          auto src = t.values.row(rows[r]);
          std::copy(src.begin(), src.end(), out.values.row(r).begin());
        }
      }
      b.targets.push_back(std::move(out));
    }
    return b;
  }

  Batch all() const {
    std::vector<std::size_t> rows(size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return batch(rows);
  }
};

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;

  const std::vector<TaskDescriptor>& tasks() const noexcept { return train.tasks; }
};

struct SplitFractions {
  double val = 1.0 / 6.0;
  double test = 1.0 / 6.0;
};

// Sizes used by split_rows: val and test rounded to nearest, train the rest.
inline std::pair<std::size_t, std::size_t> split_sizes(std::size_t n, SplitFractions f) {
  if (f.val < 0.0 || f.test < 0.0 || f.val + f.test >= 1.0) throw InvalidArgument("split fractions out of range");
  const auto nv = std::size_t(std::llround(double(n) * f.val));
  const auto nt = std::size_t(std::llround(double(n) * f.test));
  return {nv, nt};
}

// Shuffles rows and cuts them into train / val / test.
inline DataSplits split_rows(const Dataset& full, SplitFractions f, Rng& rng) {
  const std::size_t n = full.size();
  auto [nv, nt] = split_sizes(n, f);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  auto take = [&](std::size_t b, std::size_t e, Split s) {
    Batch bt = full.batch(std::span<const std::size_t>(idx.data() + b, e - b));
    Dataset d;
    d.inputs = std::move(bt.inputs);
    d.targets = std::move(bt.targets);
    d.split = s;
    d.tasks = full.tasks;
    return d;
  };
  DataSplits out;
  const std::size_t ntr = n - nv - nt;
  out.train = take(0, ntr, Split::kTrain);
  out.val = take(ntr, ntr + nv, Split::kVal);
  out.test = take(ntr + nv, n, Split::kTest);
  return out;
}

namespace detail {

// Columns of the returned d x k matrix are orthonormal (Gram-Schmidt on
// Gaussian draws). Requires k <= d.
inline Mat random_orthonormal_columns(std::size_t d, std::size_t k, Rng& rng) {
  if (k > d) throw InvalidArgument("random_orthonormal_columns: k > d");
  std::vector<Vec> cols;
  while (cols.size() < k) {
    Vec v(d);
    for (double& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& c : cols) axpy(-dot(v, c), c, v);
    const double nv = norm(v);
    if (nv < 1e-8) continue;
    for (double& x : v) x /= nv;
    cols.push_back(std::move(v));
  }
  Mat q(d, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) q(i, j) = cols[j][i];
  return q;
}

inline Mat gaussian_inputs(std::size_t n, std::size_t d, Rng& rng) {
  Mat x(n, d);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

// argmax_c (q_c . x + noise) with q_c the columns [first, first + classes).
inline std::vector<int> teacher_labels(const Mat& x, const Mat& q, std::size_t first, std::size_t classes,
                                       double noise, Rng& rng) {
  std::vector<int> labels(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double best = -1e300;
    int arg = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.cols(); ++i) s += q(i, first + c) * x(r, i);
      s += noise * rng.normal();
      if (s > best) {
        best = s;
        arg = int(c);
      }
    }
    labels[r] = arg;
  }
  return labels;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two exchangeable classification tasks
// ---------------------------------------------------------------------------

struct SymmetricTwoTaskOptions {
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  double label_noise = 0.3;
  SplitFractions fractions;
};

// Both tasks label Gaussian inputs by argmax over `classes` orthonormal
// teacher directions (disjoint sets per task) plus Gaussian logit noise. The
// two label vectors are i.i.d. uniform on the classes, so the tasks are
// exchangeable.
inline DataSplits symmetric_two_task(Rng& rng, std::size_t size, SymmetricTwoTaskOptions opt = {}) {
  if (size == 0) throw InvalidArgument("symmetric_two_task: size must be >= 1");
  if (2 * opt.classes > opt.input_dim) throw InvalidArgument("symmetric_two_task: input_dim too small");
  Rng gen = rng.fork(1);
  const Mat q = detail::random_orthonormal_columns(opt.input_dim, 2 * opt.classes, gen);
  Dataset full;
  full.inputs = detail::gaussian_inputs(size, opt.input_dim, gen);
  for (std::size_t t = 0; t < 2; ++t) {
    TaskTarget tt;
    tt.labels = detail::teacher_labels(full.inputs, q, t * opt.classes, opt.classes, opt.label_noise, gen);
    full.targets.push_back(std::move(tt));
    full.tasks.push_back({"class_" + std::to_string(t), LossKind::kCrossEntropy, opt.classes});
  }
  Rng splitter = rng.fork(2);
  return split_rows(full, opt.fractions, splitter);
}

// ---------------------------------------------------------------------------
// Classification + reconstruction with unequal gradient norms
// ---------------------------------------------------------------------------

struct MixedNormOptions {
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  std::size_t recon_dim = 16;  // last recon_dim input coordinates are reconstructed
  double recon_scale = 0.1;    // target = recon_scale * x[tail]
  double label_noise = 0.3;
  SplitFractions fractions;
};

// Task 0: cross-entropy over `classes` teacher directions in the leading
// input coordinates (all of them if the leading block is too small). Task 1:
// MSE reconstruction of the trailing recon_dim input coordinates, scaled by
// recon_scale. The small target scale makes the reconstruction gradients much
// smaller than the classification ones.
inline DataSplits mixed_norm_two_task(Rng& rng, std::size_t size, MixedNormOptions opt = {}) {
  if (size == 0) throw InvalidArgument("mixed_norm_two_task: size must be >= 1");
  if (opt.recon_dim == 0 || opt.recon_dim > opt.input_dim || opt.classes > opt.input_dim) {
    throw InvalidArgument("mixed_norm_two_task: input_dim too small");
  }
  Rng gen = rng.fork(1);
  // The classifier reads the leading coordinates when they suffice, else all.
  const std::size_t tail = opt.input_dim - opt.recon_dim;
  const std::size_t lead = tail >= opt.classes ? tail : opt.input_dim;
  Mat q(opt.input_dim, opt.classes);
  const Mat ql = detail::random_orthonormal_columns(lead, opt.classes, gen);
  for (std::size_t i = 0; i < lead; ++i)
    for (std::size_t c = 0; c < opt.classes; ++c) q(i, c) = ql(i, c);

  Dataset full;
  full.inputs = detail::gaussian_inputs(size, opt.input_dim, gen);
  TaskTarget cls;
  cls.labels = detail::teacher_labels(full.inputs, q, 0, opt.classes, opt.label_noise, gen);
  TaskTarget rec;
  rec.values = Mat(size, opt.recon_dim);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t j = 0; j < opt.recon_dim; ++j) rec.values(r, j) = opt.recon_scale * full.inputs(r, tail + j);
  full.targets = {std::move(cls), std::move(rec)};
  full.tasks = {{"classify", LossKind::kCrossEntropy, opt.classes},
                {"reconstruct", LossKind::kMeanSquaredError, opt.recon_dim}};
  Rng splitter = rng.fork(2);
  return split_rows(full, opt.fractions, splitter);
}

// ---------------------------------------------------------------------------
// N-task regression with controlled pairwise conflict
// ---------------------------------------------------------------------------

struct ConflictSpec {
  std::size_t tasks = 4;
  double kappa = 0.0;  // pairwise cosine of the ground-truth weight vectors
  double noise = 0.5;  // target noise standard deviation
  std::size_t input_dim = 16;
  bool correlated_noise = true;  // noise shares the pairwise correlation kappa
  SplitFractions fractions;
};

inline double min_feasible_kappa(std::size_t tasks) {
  return tasks <= 1 ? -1.0 : -1.0 / double(tasks - 1);
}

// Lower-triangular L with L L^T = K for a PSD K; columns with a vanishing
// pivot are left zero.
inline Mat semidefinite_cholesky(const Mat& k) {
  const std::size_t n = k.rows();
  Mat l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = k(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
    if (d < -1e-9) throw InvalidArgument("semidefinite_cholesky: matrix is not PSD");
    if (d <= 1e-14) continue;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = k(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

// Unit ground-truth vectors with pairwise cosine kappa: rows of L Q^T where
// L L^T = (1 - kappa) I + kappa 1 1^T and Q has orthonormal columns.
inline Mat conflict_weight_vectors(const ConflictSpec& spec, Rng& rng) {
  const std::size_t n = spec.tasks;
  if (n == 0) throw InvalidArgument("conflict_regression: needs at least one task");
  if (spec.input_dim < n) throw InvalidArgument("conflict_regression: input_dim must be >= tasks");
  if (!(spec.kappa <= 1.0) || spec.kappa < min_feasible_kappa(n) - 1e-12) {
    throw InvalidArgument("conflict_regression: kappa infeasible for this task count");
  }
  Mat k(n, n, spec.kappa);
  for (std::size_t i = 0; i < n; ++i) k(i, i) = 1.0;
  const Mat l = semidefinite_cholesky(k);
  const Mat q = detail::random_orthonormal_columns(spec.input_dim, n, rng);
  return matmul(l, q.transposed());
}

// y_t = w_t . x + noise. With correlated_noise the noise vector is L e with
// L L^T the kappa-correlation matrix, so residuals that a model cannot fit
// keep the same pairwise correlation as the targets.
inline DataSplits conflict_regression(const ConflictSpec& spec, Rng& rng, std::size_t size) {
  if (size == 0) throw InvalidArgument("conflict_regression: size must be >= 1");
  Rng gen = rng.fork(1);
  const Mat w = conflict_weight_vectors(spec, gen);
  const std::size_t n = spec.tasks;
  Mat mix = Mat::identity(n);
  if (spec.correlated_noise) {
    Mat k(n, n, spec.kappa);
    for (std::size_t i = 0; i < n; ++i) k(i, i) = 1.0;
    mix = semidefinite_cholesky(k);
  }
  Dataset full;
  full.inputs = detail::gaussian_inputs(size, spec.input_dim, gen);
  std::vector<TaskTarget> targets(n);
  for (auto& tt : targets) tt.values = Mat(size, 1);
  Vec e(n);
  for (std::size_t r = 0; r < size; ++r) {
    for (double& v : e) v = gen.normal();
    const Vec eps = matvec(mix, e);
    for (std::size_t t = 0; t < n; ++t) targets[t].values(r, 0) = dot(w.row(t), full.inputs.row(r)) + spec.noise * eps[t];
  }
  for (std::size_t t = 0; t < n; ++t) {
    full.targets.push_back(std::move(targets[t]));
    full.tasks.push_back({"reg_" + std::to_string(t), LossKind::kMeanSquaredError, 1});
  }
  Rng splitter = rng.fork(2);
  return split_rows(full, spec.fractions, splitter);
}

// ---------------------------------------------------------------------------
// IDX files and Multi-MNIST
// ---------------------------------------------------------------------------

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const { return dims.empty() ? 0 : dims.front(); }
  std::size_t item_size() const {
    std::size_t s = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) s *= dims[i];
    return s;
  }
};

// Unsigned-byte IDX: magic 0x0000 08 <ndims>, then ndims big-endian uint32
// sizes, then the payload.
inline IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint8_t expected_ndims = 0) {
  auto be32 = [&](std::size_t off) {
    return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
           (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
  };
  if (bytes.size() < 4) throw ParseError("idx: truncated header", 1, bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] == 0) {
    throw ParseError("idx: bad magic number", 1, 0);
  }
  const std::uint8_t nd = bytes[3];
  if (expected_ndims != 0 && nd != expected_ndims) throw ParseError("idx: unexpected dimension count", 1, 3);
  const std::size_t header = 4 + 4 * std::size_t(nd);
  if (bytes.size() < header) throw ParseError("idx: truncated header", 1, bytes.size());
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t i = 0; i < nd; ++i) {
    out.dims.push_back(be32(4 + 4 * i));
    total *= out.dims.back();
  }
  if (bytes.size() - header < total) throw ParseError("idx: truncated payload", 1, bytes.size());
  out.data.assign(bytes.begin() + std::ptrdiff_t(header), bytes.begin() + std::ptrdiff_t(header + total));
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::uint8_t> encode_idx(const std::vector<std::uint32_t>& dims,
                                            std::span<const std::uint8_t> data) {
  std::vector<std::uint8_t> out{0, 0, 0x08, std::uint8_t(dims.size())};
  for (std::uint32_t d : dims) {
    out.push_back(std::uint8_t(d >> 24));
    out.push_back(std::uint8_t(d >> 16));
    out.push_back(std::uint8_t(d >> 8));
    out.push_back(std::uint8_t(d));
  }
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

inline void write_idx(const std::string& path, const std::vector<std::uint32_t>& dims,
                      std::span<const std::uint8_t> data) {
  const auto bytes = encode_idx(dims, data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

struct MnistDigits {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Vec> images;  // pixel values in [0, 1], row-major
  std::vector<int> labels;
};

inline MnistDigits decode_mnist(const IdxArray& images, const IdxArray& labels) {
  if (images.dims.size() != 3) throw ParseError("idx images: expected 3 dimensions", 1, 3);
  if (labels.dims.size() != 1) throw ParseError("idx labels: expected 1 dimension", 1, 3);
  if (images.count() != labels.count()) {
    throw ParseError("idx: image/label count mismatch", 1, 4);
  }
  MnistDigits out;
  out.rows = images.dims[1];
  out.cols = images.dims[2];
  const std::size_t px = out.rows * out.cols;
  for (std::size_t i = 0; i < images.count(); ++i) {
    Vec img(px);
    for (std::size_t p = 0; p < px; ++p) img[p] = double(images.data[i * px + p]) / 255.0;
    out.images.push_back(std::move(img));
    out.labels.push_back(int(labels.data[i]));
  }
  return out;
}

inline constexpr std::size_t kMultiMnistOffset = 8;

// Canvas of (rows + 8) x (cols + 8): `left` at (0, 0), `right` at (8, 8),
// overlapping pixels combined by maximum.
inline Vec compose_pair(std::span<const double> left, std::span<const double> right, std::size_t rows,
                        std::size_t cols) {
  const std::size_t cr = rows + kMultiMnistOffset, cc = cols + kMultiMnistOffset;
  Vec canvas(cr * cc, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double& a = canvas[r * cc + c];
      a = std::max(a, left[r * cols + c]);
      double& b = canvas[(r + kMultiMnistOffset) * cc + c + kMultiMnistOffset];
      b = std::max(b, right[r * cols + c]);
    }
  return canvas;
}

// Bilinear resampling with pixel-center alignment and edge clamping. Every
// output is a convex combination of inputs, so the value range is preserved.
inline Vec resize_bilinear(std::span<const double> src, std::size_t sr, std::size_t sc, std::size_t dr,
                           std::size_t dc) {
  Vec out(dr * dc);
  const double fy = double(sr) / double(dr), fx = double(sc) / double(dc);
  for (std::size_t r = 0; r < dr; ++r) {
    const double y = std::clamp((double(r) + 0.5) * fy - 0.5, 0.0, double(sr - 1));
    const std::size_t y0 = std::size_t(y), y1 = std::min(y0 + 1, sr - 1);
    const double wy = y - double(y0);
    for (std::size_t c = 0; c < dc; ++c) {
      const double x = std::clamp((double(c) + 0.5) * fx - 0.5, 0.0, double(sc - 1));
      const std::size_t x0 = std::size_t(x), x1 = std::min(x0 + 1, sc - 1);
      const double wx = x - double(x0);
      const double top = (1 - wx) * src[y0 * sc + x0] + wx * src[y0 * sc + x1];
      const double bot = (1 - wx) * src[y1 * sc + x0] + wx * src[y1 * sc + x1];
      out[r * dc + c] = (1 - wy) * top + wy * bot;
    }
  }
  return out;
}

struct MultiMnistOptions {
  std::size_t size = 1000;
  std::vector<std::string> tasks{"CL", "CR"};  // subset of CL, CR, RL, RR
  SplitFractions fractions;
};

// Each sample overlays two random digits and downsamples the canvas back to
// the digit size. CL/CR: class of the left/right digit. RL/RR: pixels of the
// left/right digit.
inline DataSplits multimnist_from_digits(const MnistDigits& digits, Rng& rng, const MultiMnistOptions& opt) {
  if (digits.images.empty()) throw InvalidArgument("multimnist: no digits");
  if (opt.tasks.empty()) throw InvalidArgument("multimnist: no tasks requested");
  for (const auto& t : opt.tasks)
    if (t != "CL" && t != "CR" && t != "RL" && t != "RR") throw InvalidArgument("multimnist: unknown task " + t);
  const std::size_t px = digits.rows * digits.cols;
  Rng gen = rng.fork(1);
  Dataset full;
  full.inputs = Mat(opt.size, px);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t s = 0; s < opt.size; ++s) {
    const std::size_t a = gen.index(digits.images.size()), b = gen.index(digits.images.size());
    picks.emplace_back(a, b);
    const Vec canvas = compose_pair(digits.images[a], digits.images[b], digits.rows, digits.cols);
    const Vec small = resize_bilinear(canvas, digits.rows + kMultiMnistOffset, digits.cols + kMultiMnistOffset,
                                      digits.rows, digits.cols);
    std::copy(small.begin(), small.end(), full.inputs.row(s).begin());
  }
  for (const auto& t : opt.tasks) {
    TaskTarget tt;
    const bool left = t[1] == 'L';
    if (t[0] == 'C') {
      for (const auto& [a, b] : picks) tt.labels.push_back(digits.labels[left ? a : b]);
      full.tasks.push_back({t, LossKind::kCrossEntropy, 10});
    } else {
      tt.values = Mat(opt.size, px);
      for (std::size_t s = 0; s < opt.size; ++s) {
        const auto& img = digits.images[left ? picks[s].first : picks[s].second];
        std::copy(img.begin(), img.end(), tt.values.row(s).begin());
      }
      full.tasks.push_back({t, LossKind::kMeanSquaredError, px});
    }
    full.targets.push_back(std::move(tt));
  }
  Rng splitter = rng.fork(2);
  return split_rows(full, opt.fractions, splitter);
}

inline DataSplits load_multimnist(const std::string& image_path, const std::string& label_path, Rng& rng,
                                  const MultiMnistOptions& opt) {
  const auto ib = read_file_bytes(image_path);
  const auto lb = read_file_bytes(label_path);
  const IdxArray images = parse_idx(ib, 3);
  const IdxArray labels = parse_idx(lb, 1);
  return multimnist_from_digits(decode_mnist(images, labels), rng, opt);
}

}  // namespace mtlbench
