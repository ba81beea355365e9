#include "nlrn/classic_nonlocal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nlrn/nonlocal.hpp"  // canonical_axis_mask
#include "nlrn/parallel.hpp"

namespace nlrn {

void NLMConfig::validate() const {
  if (p < 1 || p % 2 == 0) throw ShapeError("nlm: patch side p must be odd");
  if (q < 1 || q % 2 == 0) throw ShapeError("nlm: window side q must be odd");
  if (!(h > 0)) throw ShapeError("nlm: filtering degree h must be positive");
}

void GroupFilterConfig::validate() const {
  if (p < 1 || p % 2 == 0) throw ShapeError("group filter: patch side p must be odd");
  if (q < 1 || q % 2 == 0) throw ShapeError("group filter: window side q must be odd");
  if (k < 1 || k > q * q) throw ShapeError("group filter: need 1 <= K <= q^2");
  if (sigma < 0) throw ShapeError("group filter: sigma must be >= 0");
  if (epsilon < 0) throw ShapeError("group filter: epsilon must be >= 0");
}

namespace {

inline int wrap(int v, int extent) { return ((v % extent) + extent) % extent; }

}  // namespace

DenseTensor<double> extract_patch(const GrayImage& img, int y, int x, int p) {
  const int r = p / 2;
  DenseTensor<double> patch({p * p});
  std::size_t k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = wrap(y + dy, img.height());
    for (int dx = -r; dx <= r; ++dx) {
      patch[k++] = img.at(yy, wrap(x + dx, img.width()));
    }
  }
  return patch;
}

PatchGroup block_match(const GrayImage& img, int y, int x, const GroupFilterConfig& cfg) {
  cfg.validate();
  if (img.height() < cfg.p || img.width() < cfg.p) {
    throw ShapeError("block_match: image smaller than the patch");
  }
  const int r = cfg.q / 2;
  const auto mask_y = canonical_axis_mask(cfg.q, img.height());
  const auto mask_x = canonical_axis_mask(cfg.q, img.width());

  const DenseTensor<double> ref = extract_patch(img, y, x, cfg.p);
  const int ref_index = y * img.width() + x;

  struct Candidate {
    double dist;
    int raster;  // scan position inside the window
    int index;   // absolute y*W+x
  };
  std::vector<Candidate> candidates;
  candidates.reserve(static_cast<std::size_t>(cfg.q) * cfg.q);
  int raster = 0;
  for (int dy = 0; dy < cfg.q; ++dy) {
    for (int dx = 0; dx < cfg.q; ++dx, ++raster) {
      if (!mask_y[dy] || !mask_x[dx]) continue;
      const int yy = wrap(y + dy - r, img.height());
      const int xx = wrap(x + dx - r, img.width());
      const int index = yy * img.width() + xx;
      if (index == ref_index) continue;  // pinned to the front below
      const DenseTensor<double> patch = extract_patch(img, yy, xx, cfg.p);
      double d = 0;
      for (std::size_t i = 0; i < patch.size(); ++i) {
        const double e = patch[i] - ref[i];
        d += e * e;
      }
      candidates.push_back({d, raster, index});
    }
  }
  if (cfg.k > static_cast<int>(candidates.size()) + 1) {
    throw ShapeError("block_match: K exceeds the candidate count");
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.raster < b.raster;
  });

  PatchGroup group;
  group.reference_index = ref_index;
  group.member_indices.push_back(ref_index);
  for (int i = 0; i + 1 < cfg.k; ++i) group.member_indices.push_back(candidates[i].index);

  group.data = DenseTensor<double>({cfg.k, cfg.p * cfg.p});
  for (int row = 0; row < cfg.k; ++row) {
    const int index = group.member_indices[row];
    const DenseTensor<double> patch =
        extract_patch(img, index / img.width(), index % img.width(), cfg.p);
    std::copy(patch.data(), patch.data() + patch.size(),
              group.data.data() + static_cast<std::size_t>(row) * patch.size());
  }
  return group;
}

GrayImage nlm_denoise(const GrayImage& img, const NLMConfig& cfg, int threads) {
  cfg.validate();
  if (img.height() < cfg.p || img.width() < cfg.p) {
    throw ShapeError("nlm_denoise: image smaller than the patch");
  }
  const int h = img.height(), w = img.width();
  const int rq = cfg.q / 2, rp = cfg.p / 2;
  const auto mask_y = canonical_axis_mask(cfg.q, h);
  const auto mask_x = canonical_axis_mask(cfg.q, w);

  // Spatial weights inside the patch distance; a = inf means plain Euclidean.
  std::vector<double> spatial(static_cast<std::size_t>(cfg.p) * cfg.p, 1.0);
  if (std::isfinite(cfg.a)) {
    for (int dy = -rp; dy <= rp; ++dy)
      for (int dx = -rp; dx <= rp; ++dx)
        spatial[static_cast<std::size_t>(dy + rp) * cfg.p + dx + rp] =
            std::exp(-(dy * dy + dx * dx) / (2.0 * cfg.a * cfg.a));
  }
  const double inv_h2 = 1.0 / (cfg.h * cfg.h);

  std::vector<double> out(static_cast<std::size_t>(h) * w);
  parallel_chunks(0, h, threads, [&](int y0, int y1, int) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        double wsum = 0, acc = 0;
        for (int dy = 0; dy < cfg.q; ++dy) {
          if (!mask_y[dy]) continue;
          const int cy = wrap(y + dy - rq, h);
          for (int dx = 0; dx < cfg.q; ++dx) {
            if (!mask_x[dx]) continue;
            const int cx = wrap(x + dx - rq, w);
            double dist = 0;
            for (int py = -rp; py <= rp; ++py) {
              const int ay = wrap(y + py, h);
              const int by = wrap(cy + py, h);
              const double* sp = spatial.data() + static_cast<std::size_t>(py + rp) * cfg.p;
              for (int px = -rp; px <= rp; ++px) {
                const double e = img.at(ay, wrap(x + px, w)) - img.at(by, wrap(cx + px, w));
                dist += sp[px + rp] * e * e;
              }
            }
            const double wgt = std::exp(-dist * inv_h2);
            wsum += wgt;
            acc += wgt * img.at(cy, cx);
          }
        }
        out[static_cast<std::size_t>(y) * w + x] = acc / wsum;
      }
    }
  });
  return GrayImage(h, w, std::move(out));
}

DenseTensor<double> wnnm_project(const PatchGroup& group, const GroupFilterConfig& cfg) {
  const int k = group.data.dim(0);
  const int n = group.data.dim(1);
  if (!group.data.all_finite()) throw NumericError("wnnm_project: group data must be finite");
  if (cfg.c * cfg.sigma * cfg.sigma == 0.0) return group.data;  // all shrink weights are 0

  // The shrinkage acts on the shared nonzero spectrum of X^T X and X X^T;
  // diagonalize whichever factor is smaller.
  const bool gram_side = k <= n;
  const DenseTensor<double>& x = group.data;
  DenseTensor<double> sym = gram_side ? matmul(x, transpose(x)) : matmul(transpose(x), x);
  // Symmetrize away accumulation asymmetry before the eigensolver.
  for (int i = 0; i < sym.rows(); ++i)
    for (int j = i + 1; j < sym.cols(); ++j) {
      const double v = 0.5 * (sym.at(i, j) + sym.at(j, i));
      sym.at(i, j) = v;
      sym.at(j, i) = v;
    }
  const SymEigResult eig = sym_eig(sym);

  const int dim = sym.rows();
  std::vector<double> factor(dim);
  for (int j = 0; j < dim; ++j) {
    const double s = std::sqrt(std::max(0.0, eig.eigenvalues[j]));
    if (s == 0.0) {
      factor[j] = 0.0;
      continue;
    }
    const double wj = cfg.c * std::sqrt(static_cast<double>(k)) * cfg.sigma * cfg.sigma / (s + 1e-8);
    factor[j] = std::max(s - wj, 0.0) / s;
  }

  // U diag(factor) U^T applied on the matching side of X.
  DenseTensor<double> shrink({dim, dim});
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      double s = 0;
      for (int d = 0; d < dim; ++d) {
        s += eig.eigenvectors.at(i, d) * factor[d] * eig.eigenvectors.at(j, d);
      }
      shrink.at(i, j) = s;
    }
  return gram_side ? matmul(shrink, x) : matmul(x, shrink);
}

DenseTensor<double> wiener_group_filter(const DenseTensor<double>& group,
                                        const DenseTensor<double>& pilot, double sigma) {
  if (!group.same_shape(pilot)) throw ShapeError("wiener filter: pilot shape mismatch");
  const int k = group.dim(0), n = group.dim(1);
  const int p = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (p * p != n) throw ShapeError("wiener filter: patches are not square");

  const DenseTensor<double> b2 = dct2_basis(p);
  const DenseTensor<double> d1 = dct1_basis(k);
  auto fwd = [&](const DenseTensor<double>& m) { return matmul(d1, matmul(m, transpose(b2))); };

  DenseTensor<double> coef = fwd(group);
  const DenseTensor<double> rho = fwd(pilot);
  if (sigma > 0) {
    const double s2 = sigma * sigma;
    for (std::size_t i = 0; i < coef.size(); ++i) {
      const double r2 = rho[i] * rho[i];
      coef[i] *= r2 / (r2 + s2);
    }
  }
  return matmul(transpose(d1), matmul(coef, b2));
}

DenseTensor<double> lssc_shrink(const DenseTensor<double>& group, const GroupFilterConfig& cfg) {
  const int k = group.dim(0), n = group.dim(1);
  const int p = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (p * p != n) throw ShapeError("lssc_shrink: patches are not square");

  const DenseTensor<double> b2 = dct2_basis(p);
  DenseTensor<double> codes = matmul(group, transpose(b2));  // [K, n], column = atom
  const double threshold = cfg.sigma * std::sqrt(static_cast<double>(k)) * cfg.c;
  for (int col = 0; col < n; ++col) {
    double norm2 = 0;
    for (int row = 0; row < k; ++row) norm2 += codes.at(row, col) * codes.at(row, col);
    if (std::sqrt(norm2) < threshold) {
      for (int row = 0; row < k; ++row) codes.at(row, col) = 0.0;
    }
  }
  return matmul(codes, b2);
}

DenseTensor<double> hard_threshold_pilot(const DenseTensor<double>& group, double sigma) {
  const int k = group.dim(0), n = group.dim(1);
  const int p = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (p * p != n) throw ShapeError("hard_threshold_pilot: patches are not square");

  const DenseTensor<double> b2 = dct2_basis(p);
  const DenseTensor<double> d1 = dct1_basis(k);
  DenseTensor<double> coef = matmul(d1, matmul(group, transpose(b2)));
  const double t = 2.7 * sigma;
  for (std::size_t i = 0; i < coef.size(); ++i) {
    if (std::abs(coef[i]) < t) coef[i] = 0.0;
  }
  return matmul(transpose(d1), matmul(coef, b2));
}

GrayImage group_denoise_image(const GrayImage& img, const GroupFilterConfig& cfg, int threads) {
  cfg.validate();
  const int h = img.height(), w = img.width();
  if (h < cfg.p || w < cfg.p) throw ShapeError("group_denoise_image: image smaller than patch");
  const int stride = std::max(h, w) <= 96 ? 1 : 3;
  const int rp = cfg.p / 2;

  std::vector<int> ys, xs;
  for (int y = 0; y < h; y += stride) ys.push_back(y);
  for (int x = 0; x < w; x += stride) xs.push_back(x);

  const int workers = std::max(1, threads);
  std::vector<std::vector<double>> acc(workers), wacc(workers);
  for (int t = 0; t < workers; ++t) {
    acc[t].assign(static_cast<std::size_t>(h) * w, 0.0);
    wacc[t].assign(static_cast<std::size_t>(h) * w, 0.0);
  }

  parallel_chunks(0, static_cast<int>(ys.size()), workers, [&](int i0, int i1, int tid) {
    for (int yi = i0; yi < i1; ++yi) {
      for (int x : xs) {
        PatchGroup group = block_match(img, ys[yi], x, cfg);
        DenseTensor<double> denoised;
        switch (cfg.mode) {
          case GroupFilterMode::kWnnm:
            denoised = wnnm_project(group, cfg);
            break;
          case GroupFilterMode::kWiener:
            denoised = wiener_group_filter(group.data,
                                           hard_threshold_pilot(group.data, cfg.sigma), cfg.sigma);
            break;
          case GroupFilterMode::kLssc:
            denoised = lssc_shrink(group.data, cfg);
            break;
        }
        for (int row = 0; row < cfg.k; ++row) {
          const int cy = group.member_indices[row] / w;
          const int cx = group.member_indices[row] % w;
          std::size_t off = static_cast<std::size_t>(row) * cfg.p * cfg.p;
          for (int dy = -rp; dy <= rp; ++dy) {
            const int yy = wrap(cy + dy, h);
            for (int dx = -rp; dx <= rp; ++dx, ++off) {
              const std::size_t at = static_cast<std::size_t>(yy) * w + wrap(cx + dx, w);
              acc[tid][at] += denoised[off];
              wacc[tid][at] += 1.0;
            }
          }
        }
      }
    }
  });

  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double a = 0, b = 0;
    for (int t = 0; t < workers; ++t) {
      a += acc[t][i];
      b += wacc[t][i];
    }
    out[i] = b > 0 ? a / b : img.pixels()[i];
  }
  return GrayImage(h, w, std::move(out));
}

}  // namespace nlrn
