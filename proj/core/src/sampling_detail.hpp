#pragma once

// Internals shared by the inference proposer and the training-time proposer.
// Not installed; include only from core sources.

#include <vector>

#include "impose/localizer.hpp"

namespace impose::detail {

// Indices of the top `count` entries by value, ties broken by lower index.
std::vector<int> top_indices(const Eigen::VectorXd& values, int count);

struct AxisNoise {
  Eigen::Vector3d t_std;  // normalized units
  Eigen::Vector3d r_std;  // radians
};

// Gaussian stds for iteration k: sqrt(v0/2^k), translation divided by the
// frame scale, rotation converted degrees -> radians.
AxisNoise noise_at(const NoiseVector& v0, int k, const SceneFrame& frame);

// N draws from the mixture: pick component j ~ pi, perturb with per-axis
// Gaussian noise. pi must be nonnegative with a positive sum.
CandidateSet sample_gmm(const CandidateSet& cs, const std::vector<int>& comps, const Eigen::VectorXd& pi,
                        int N, int next_k, const AxisNoise& noise, Rng& rng);

// Mixture components + weights from a scored set: top-B by score with
// pi ~ scores, or uniform over the top-B by raw similarity when every score
// is zero. pi always sums to 1.
void mixture_components(const CandidateSet& cs, int B, std::vector<int>& comps, Eigen::VectorXd& pi);

}  // namespace impose::detail
