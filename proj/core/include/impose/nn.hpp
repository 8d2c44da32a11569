#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "impose/errors.hpp"

namespace impose {

enum class Activation { ReLU, Identity, Sigmoid };
enum class FourierSchedule { Linear, Geometric };
enum class ScoreFunction { Cosine, L2, LearnedMlp };

/// Per-scalar positional encoding x -> (x, sin(f_k x), cos(f_k x)) for
/// k = 0..num_frequencies-1. Linear schedule uses f_k = 2k (the k=0 sin term
/// is identically zero and kept); Geometric uses f_k = 2^k.
struct FourierConfig {
  int num_frequencies = 11;
  FourierSchedule schedule = FourierSchedule::Linear;

  int output_dim(int input_dim) const { return input_dim * (1 + 2 * num_frequencies); }
  double frequency(int k) const {
    return schedule == FourierSchedule::Linear ? 2.0 * k : double(uint64_t(1) << k);
  }
};

template <typename Scalar>
struct DenseLayerT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weights;  // out x in
  Eigen::Vector<Scalar, Eigen::Dynamic> bias;                     // out
  Activation activation = Activation::ReLU;

  int in_dim() const { return int(weights.cols()); }
  int out_dim() const { return int(weights.rows()); }
};

template <typename Scalar>
struct MlpT {
  std::vector<DenseLayerT<Scalar>> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

using DenseLayer = DenseLayerT<double>;
using Mlp = MlpT<double>;
using MlpF = MlpT<float>;  // single-precision copy for inference-only paths

/// Activations and pre-activations retained by a forward pass for backward.
struct ForwardCache {
  Eigen::MatrixXd input;                                // batch x in
  std::vector<Eigen::MatrixXd> pre_activations;         // per layer, batch x out
};

/// Parameter gradients mirroring an Mlp's layers. Accumulated with +=.
struct MlpGradients {
  std::vector<Eigen::MatrixXd> dweights;
  std::vector<Eigen::VectorXd> dbias;

  static MlpGradients zeros_like(const Mlp& net);
  void setZero();
  void scale(double factor);
  void add_scaled(const MlpGradients& other, double factor);
  double squared_norm() const;
};

/// Bias-corrected Adam accumulators for one Mlp.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  int64_t step = 0;
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::VectorXd> m_bias, v_bias;

  static AdamState init(const Mlp& net, const AdamConfig& cfg);
};

// ---- construction ----

/// He-uniform init for layers with ReLU activation, Xavier-uniform otherwise;
/// zero bias; deterministic given the seed.
Mlp make_mlp(std::span<const int> dims, Activation hidden, Activation output, uint64_t seed);

void validate_mlp(const Mlp& net);
MlpF to_single_precision(const Mlp& net);

// ---- fourier features ----

Eigen::VectorXd fourier_encode(const Eigen::VectorXd& x, const FourierConfig& cfg);

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> fourier_encode_batch(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, const FourierConfig& cfg) {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const int per = 1 + 2 * cfg.num_frequencies;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(x.rows(), x.cols() * per);
  for (int i = 0; i < x.cols(); ++i) {
    out.col(i * per) = x.col(i);
    // One sincos per element; higher frequencies by angle addition (Linear,
    // step 2x) or angle doubling (Geometric). Exact identities, so error
    // stays at a few ulps while avoiding per-frequency libm calls.
    Array s, c, s1, c1;
    for (int k = 0; k < cfg.num_frequencies; ++k) {
      if (cfg.schedule == FourierSchedule::Linear) {
        if (k == 0) {  // freq 0: sin term identically zero, kept for fidelity
          out.col(i * per + 1).setZero();
          out.col(i * per + 2).setConstant(Scalar(1));
          continue;
        }
        if (k == 1) {
          s1 = (x.col(i).array() * Scalar(2)).sin();
          c1 = (x.col(i).array() * Scalar(2)).cos();
          s = s1;
          c = c1;
        } else {
          const Array sn = s * c1 + c * s1;
          const Array cn = c * c1 - s * s1;
          s = sn;
          c = cn;
        }
      } else {  // Geometric: freq_k = 2^k
        if (k == 0) {
          s = x.col(i).array().sin();
          c = x.col(i).array().cos();
        } else {
          const Array sn = Scalar(2) * s * c;
          const Array cn = c * c - s * s;
          s = sn;
          c = cn;
        }
      }
      out.col(i * per + 1 + 2 * k) = s.matrix();
      out.col(i * per + 2 + 2 * k) = c.matrix();
    }
  }
  return out;
}

// ---- forward / backward ----

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> apply_activation(
    Activation act, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& z) {
  switch (act) {
    case Activation::ReLU:
      return z.cwiseMax(Scalar(0));
    case Activation::Sigmoid:
      return ((-z.array()).exp() + Scalar(1)).inverse().matrix();
    case Activation::Identity:
      return z;
  }
  return z;
}

/// Rows are samples. Throws DimensionError if the batch width does not match
/// the first layer. Pass a cache to retain pre-activations for backward.
Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& batch, ForwardCache* cache = nullptr);

/// Single-precision forward (no cache; inference only).
Eigen::MatrixXf mlp_forward(const MlpF& net, const Eigen::MatrixXf& batch);

/// Reverse-mode gradients. Parameter gradients accumulate into `grads`
/// (allocate with MlpGradients::zeros_like); the input gradient is returned,
/// unless want_input_grad is false (skips one GEMM — used where the inputs
/// are constants). ReLU subgradient at exactly 0 is 0.
Eigen::MatrixXd mlp_backward(const Mlp& net, const ForwardCache& cache,
                             const Eigen::MatrixXd& output_gradient, MlpGradients& grads,
                             bool want_input_grad = true);

/// One bias-corrected Adam update. Throws NumericError naming the offending
/// layer if a gradient is non-finite.
void adam_step(Mlp& net, const MlpGradients& grads, AdamState& state);

// ---- similarity scores ----

/// ReLU-clamped cosine similarity in [0, 1]. Both vectors must have norm > 1e-12.
double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// max(0, 1 - ||a - b||_2), in [0, 1].
double l2_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// sigmoid(head(a - b)) in (0, 1). The head must map d -> 1 with a Sigmoid
/// output layer.
double learned_score(const Mlp& head, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct ScoreBatch {
  Eigen::VectorXd scores;  // clamped to [0, 1]
  Eigen::VectorXd raw;     // unclamped similarity, kept for degenerate fallbacks
};

/// Scores one image latent against every row of pose_latents.
/// `head` is only consulted for ScoreFunction::LearnedMlp.
ScoreBatch score_latents(ScoreFunction fn, const Mlp* head, const Eigen::VectorXd& image_latent,
                         const Eigen::MatrixXd& pose_latents);

Eigen::VectorXf score_latents_single(ScoreFunction fn, const MlpF* head, const Eigen::VectorXf& image_latent,
                                     const Eigen::MatrixXf& pose_latents);

/// Backward of score_latents: given dL/dscores, returns dL/dpose_latents and
/// accumulates dL/dimage_latent; learned-head parameter gradients accumulate
/// into head_grads when provided.
Eigen::MatrixXd score_latents_backward(ScoreFunction fn, const Mlp* head, const Eigen::VectorXd& image_latent,
                                       const Eigen::MatrixXd& pose_latents, const Eigen::VectorXd& dscores,
                                       Eigen::VectorXd& dimage_latent, MlpGradients* head_grads);

// ---- gradient checking ----

struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked_params = 0;
  bool passed = false;
  std::string worst_param;
};

/// Central finite differences (h = 1e-5) against mlp_backward on a seeded
/// random batch and a random linear loss; every parameter is probed.
/// Failures are reported, never thrown.
GradCheckReport gradient_check(const Mlp& net, double tolerance = 1e-4, uint64_t seed = 0);

}  // namespace impose
