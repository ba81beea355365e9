#pragma once

#include <limits>
#include <vector>

#include "nlrn/imaging.hpp"
#include "nlrn/tensor.hpp"

namespace nlrn {

/// A block-matched group: the reference location, the matched locations
/// (reference first, then by ascending patch distance with raster-order tie
/// break), and the [K x p^2] matrix of vectorized patches.
struct PatchGroup {
  int reference_index = 0;          // y*W + x
  std::vector<int> member_indices;  // absolute locations, length K
  DenseTensor<double> data;         // [K, p*p]
};

struct NLMConfig {
  int p = 7;                                         // patch side, odd
  int q = 21;                                        // search window side, odd
  double h = 0.6;                                    // filtering degree
  double a = std::numeric_limits<double>::infinity();  // spatial kernel std; inf = unweighted

  void validate() const;
};

enum class GroupFilterMode { kWnnm, kWiener, kLssc };

struct GroupFilterConfig {
  GroupFilterMode mode = GroupFilterMode::kWnnm;
  int p = 7;
  int q = 21;
  int k = 16;          // patches per group
  double sigma = 0.0;  // noise level in [0,1] units
  double c = 2.8;      // shrink parameter
  double epsilon = 0.0;  // joint-sparsity error bound of the lssc formulation

  void validate() const;
};

/// Vectorized p x p patch centered at (y,x); circular padding.
DenseTensor<double> extract_patch(const GrayImage& img, int y, int x, int p);

/// Hard block matching: the cfg.k patches in the circular q x q window whose
/// Euclidean distance to the reference patch is smallest. The reference is
/// always first; remaining ties break by window raster order. Wrapped window
/// positions that alias the same pixel are deduplicated.
PatchGroup block_match(const GrayImage& img, int y, int x, const GroupFilterConfig& cfg);

/// Non-local means, Gaussian-kernel weighted Euclidean patch distance.
GrayImage nlm_denoise(const GrayImage& img, const NLMConfig& cfg, int threads = 1);

/// Weighted-nuclear-norm shrinkage of one patch group: per-singular-value
/// soft threshold with weights c*sqrt(K)*sigma^2 / (s_j + 1e-8).
DenseTensor<double> wnnm_project(const PatchGroup& group, const GroupFilterConfig& cfg);

/// Empirical Wiener filtering in the group transform domain (2D DCT per
/// patch, then an orthonormal 1D DCT across the group axis). The pilot
/// supplies the coefficients rho of omega = rho^2/(rho^2 + sigma^2).
DenseTensor<double> wiener_group_filter(const DenseTensor<double>& group,
                                        const DenseTensor<double>& pilot, double sigma);

/// Joint-sparsity shrinkage with the unitary 2D DCT dictionary: dictionary
/// columns whose coefficient column (over the whole group) has l2 norm below
/// sigma*sqrt(K)*c are zeroed for every patch at once.
DenseTensor<double> lssc_shrink(const DenseTensor<double>& group, const GroupFilterConfig& cfg);

/// Hard-threshold pre-clean of a group at 2.7*sigma in the same transform
/// domain; the pilot estimate for the Wiener mode.
DenseTensor<double> hard_threshold_pilot(const DenseTensor<double>& group, double sigma);

/// Full pipeline: block match at every stride-s location, filter each group,
/// scatter the patches back with uniform overlap averaging.
GrayImage group_denoise_image(const GrayImage& img, const GroupFilterConfig& cfg,
                              int threads = 1);

}  // namespace nlrn
