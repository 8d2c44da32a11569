#include "impose/nn.hpp"

#include <cmath>

#include "impose/rng.hpp"

namespace impose {

namespace {

// Derivative of the activation evaluated at pre-activation z.
Eigen::MatrixXd activation_grad(Activation act, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::ReLU:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Sigmoid: {
      const Eigen::ArrayXXd s = ((-z.array()).exp() + 1.0).inverse();
      return (s * (1.0 - s)).matrix();
    }
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

void check_unary_dims(const Mlp& net, const Eigen::MatrixXd& batch) {
  if (net.layers.empty()) {
    throw DimensionError("mlp_forward: network has no layers");
  }
  if (batch.cols() != net.input_dim()) {
    throw DimensionError("mlp_forward: batch width " + std::to_string(batch.cols()) +
                         " does not match input dim " + std::to_string(net.input_dim()));
  }
}

}  // namespace

MlpGradients MlpGradients::zeros_like(const Mlp& net) {
  MlpGradients g;
  g.dweights.reserve(net.layers.size());
  g.dbias.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    g.dweights.push_back(Eigen::MatrixXd::Zero(layer.out_dim(), layer.in_dim()));
    g.dbias.push_back(Eigen::VectorXd::Zero(layer.out_dim()));
  }
  return g;
}

void MlpGradients::setZero() {
  for (auto& w : dweights) w.setZero();
  for (auto& b : dbias) b.setZero();
}

void MlpGradients::scale(double factor) {
  for (auto& w : dweights) w *= factor;
  for (auto& b : dbias) b *= factor;
}

void MlpGradients::add_scaled(const MlpGradients& other, double factor) {
  for (size_t i = 0; i < dweights.size(); ++i) {
    dweights[i] += factor * other.dweights[i];
    dbias[i] += factor * other.dbias[i];
  }
}

double MlpGradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : dweights) s += w.squaredNorm();
  for (const auto& b : dbias) s += b.squaredNorm();
  return s;
}

AdamState AdamState::init(const Mlp& net, const AdamConfig& cfg) {
  AdamState st;
  st.cfg = cfg;
  for (const auto& layer : net.layers) {
    st.m_weights.push_back(Eigen::MatrixXd::Zero(layer.out_dim(), layer.in_dim()));
    st.v_weights.push_back(Eigen::MatrixXd::Zero(layer.out_dim(), layer.in_dim()));
    st.m_bias.push_back(Eigen::VectorXd::Zero(layer.out_dim()));
    st.v_bias.push_back(Eigen::VectorXd::Zero(layer.out_dim()));
  }
  return st;
}

Mlp make_mlp(std::span<const int> dims, Activation hidden, Activation output, uint64_t seed) {
  if (dims.size() < 2) {
    throw DimensionError("make_mlp: need at least input and output dims");
  }
  Rng rng = make_rng(seed);
  Mlp net;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    layer.activation = (l + 2 == dims.size()) ? output : hidden;
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double limit = layer.activation == Activation::ReLU
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    layer.weights.resize(fan_out, fan_in);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      layer.weights.data()[i] = dist(rng);
    }
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

void validate_mlp(const Mlp& net) {
  for (size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    if (layer.bias.size() != layer.out_dim()) {
      throw DimensionError("validate_mlp: layer " + std::to_string(l) + " bias size mismatch");
    }
    if (l > 0 && net.layers[l - 1].out_dim() != layer.in_dim()) {
      throw DimensionError("validate_mlp: layers " + std::to_string(l - 1) + " -> " + std::to_string(l) +
                           " dims do not chain");
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw NumericError("validate_mlp: layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

MlpF to_single_precision(const Mlp& net) {
  MlpF out;
  out.layers.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    DenseLayerT<float> lf;
    lf.weights = layer.weights.cast<float>();
    lf.bias = layer.bias.cast<float>();
    lf.activation = layer.activation;
    out.layers.push_back(std::move(lf));
  }
  return out;
}

Eigen::VectorXd fourier_encode(const Eigen::VectorXd& x, const FourierConfig& cfg) {
  if (x.size() < 1) {
    throw DimensionError("fourier_encode: empty input");
  }
  // Route through the batched path so single and batched evaluation share bits.
  Eigen::MatrixXd row(1, x.size());
  row.row(0) = x.transpose();
  return fourier_encode_batch<double>(row, cfg).row(0).transpose();
}

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& batch, ForwardCache* cache) {
  check_unary_dims(net, batch);
  if (cache) {
    cache->input = batch;
    cache->pre_activations.clear();
    cache->pre_activations.reserve(net.layers.size());
  }
  Eigen::MatrixXd a = batch;
  for (const auto& layer : net.layers) {
    Eigen::MatrixXd z = (a * layer.weights.transpose()).rowwise() + layer.bias.transpose();
    if (cache) cache->pre_activations.push_back(z);
    a = apply_activation<double>(layer.activation, z);
  }
  return a;
}

Eigen::MatrixXf mlp_forward(const MlpF& net, const Eigen::MatrixXf& batch) {
  if (net.layers.empty() || batch.cols() != net.layers.front().in_dim()) {
    throw DimensionError("mlp_forward(float): batch width does not match input dim");
  }
  Eigen::MatrixXf a = batch;
  for (const auto& layer : net.layers) {
    Eigen::MatrixXf z = (a * layer.weights.transpose()).rowwise() + layer.bias.transpose();
    a = apply_activation<float>(layer.activation, z);
  }
  return a;
}

Eigen::MatrixXd mlp_backward(const Mlp& net, const ForwardCache& cache,
                             const Eigen::MatrixXd& output_gradient, MlpGradients& grads,
                             bool want_input_grad) {
  const size_t n_layers = net.layers.size();
  if (cache.pre_activations.size() != n_layers) {
    throw DimensionError("mlp_backward: cache does not match network depth");
  }
  if (output_gradient.rows() != cache.input.rows() || output_gradient.cols() != net.output_dim()) {
    throw DimensionError("mlp_backward: output gradient shape mismatch");
  }
  if (grads.dweights.size() != n_layers) {
    throw DimensionError("mlp_backward: gradient buffer does not match network depth");
  }

  Eigen::MatrixXd delta =
      output_gradient.cwiseProduct(activation_grad(net.layers.back().activation, cache.pre_activations.back()));
  for (size_t l = n_layers; l-- > 0;) {
    if (l > 0) {
      const Eigen::MatrixXd a_prev =
          apply_activation<double>(net.layers[l - 1].activation, cache.pre_activations[l - 1]);
      grads.dweights[l].noalias() += delta.transpose() * a_prev;
    } else {
      grads.dweights[0].noalias() += delta.transpose() * cache.input;
    }
    grads.dbias[l] += delta.colwise().sum().transpose();
    if (l > 0) {
      delta = (delta * net.layers[l].weights)
                  .cwiseProduct(activation_grad(net.layers[l - 1].activation, cache.pre_activations[l - 1]));
    } else {
      return want_input_grad ? Eigen::MatrixXd(delta * net.layers[0].weights) : Eigen::MatrixXd();
    }
  }
  return {};
}

void adam_step(Mlp& net, const MlpGradients& grads, AdamState& state) {
  if (grads.dweights.size() != net.layers.size() || state.m_weights.size() != net.layers.size()) {
    throw DimensionError("adam_step: shapes do not match network");
  }
  state.step += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(state.step));
  const double bc2 = 1.0 - std::pow(b2, double(state.step));
  const double lr = state.cfg.lr;
  const double eps = state.cfg.epsilon;

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v, const std::string& path) {
    if (!grad.allFinite()) {
      throw NumericError("adam_step: non-finite gradient at " + path);
    }
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v.array().matrix() + (1.0 - b2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };

  for (size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].weights, grads.dweights[l], state.m_weights[l], state.v_weights[l],
           "layer " + std::to_string(l) + " weights");
    update(net.layers[l].bias, grads.dbias[l], state.m_bias[l], state.v_bias[l],
           "layer " + std::to_string(l) + " bias");
  }
}

// ---- similarity scores ----

namespace {

void require_nonzero(double norm, const char* who) {
  if (norm <= 1e-12) {
    throw DegenerateError(std::string(who) + ": zero-norm latent vector");
  }
}

}  // namespace

double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_score: dimension mismatch");
  }
  const double na = a.norm();
  const double nb = b.norm();
  require_nonzero(na, "cosine_score");
  require_nonzero(nb, "cosine_score");
  return std::max(0.0, a.dot(b) / (na * nb));
}

double l2_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw DimensionError("l2_score: dimension mismatch");
  }
  return std::max(0.0, 1.0 - (a - b).norm());
}

double learned_score(const Mlp& head, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || head.input_dim() != a.size() || head.output_dim() != 1) {
    throw DimensionError("learned_score: head must map latent dim to a single output");
  }
  Eigen::MatrixXd in(1, a.size());
  in.row(0) = (a - b).transpose();
  return mlp_forward(head, in)(0, 0);
}

ScoreBatch score_latents(ScoreFunction fn, const Mlp* head, const Eigen::VectorXd& image_latent,
                         const Eigen::MatrixXd& pose_latents) {
  if (pose_latents.cols() != image_latent.size()) {
    throw DimensionError("score_latents: latent dims differ");
  }
  const Eigen::Index n = pose_latents.rows();
  ScoreBatch out;
  switch (fn) {
    case ScoreFunction::Cosine: {
      const double na = image_latent.norm();
      require_nonzero(na, "score_latents");
      Eigen::VectorXd row_norms = pose_latents.rowwise().norm();
      if ((row_norms.array() <= 1e-12).any()) {
        throw DegenerateError("score_latents: zero-norm pose latent");
      }
      out.raw = (pose_latents * image_latent).cwiseQuotient(row_norms * na);
      out.scores = out.raw.cwiseMax(0.0);
      break;
    }
    case ScoreFunction::L2: {
      Eigen::VectorXd dist = (pose_latents.rowwise() - image_latent.transpose()).rowwise().norm();
      out.raw = Eigen::VectorXd::Ones(n) - dist;
      out.scores = out.raw.cwiseMax(0.0);
      break;
    }
    case ScoreFunction::LearnedMlp: {
      if (!head) {
        throw std::invalid_argument("score_latents: LearnedMlp requires a head");
      }
      Eigen::MatrixXd diff = (-pose_latents).rowwise() + image_latent.transpose();
      out.raw = mlp_forward(*head, diff).col(0);
      out.scores = out.raw;  // sigmoid output already in (0, 1)
      break;
    }
  }
  return out;
}

Eigen::VectorXf score_latents_single(ScoreFunction fn, const MlpF* head, const Eigen::VectorXf& image_latent,
                                     const Eigen::MatrixXf& pose_latents) {
  switch (fn) {
    case ScoreFunction::Cosine: {
      const float na = image_latent.norm();
      if (na <= 1e-12f) throw DegenerateError("score_latents_single: zero-norm image latent");
      Eigen::VectorXf row_norms = pose_latents.rowwise().norm();
      return (pose_latents * image_latent).cwiseQuotient(row_norms * na).cwiseMax(0.0f);
    }
    case ScoreFunction::L2: {
      Eigen::VectorXf dist = (pose_latents.rowwise() - image_latent.transpose()).rowwise().norm();
      return (Eigen::VectorXf::Ones(pose_latents.rows()) - dist).cwiseMax(0.0f);
    }
    case ScoreFunction::LearnedMlp: {
      if (!head) throw std::invalid_argument("score_latents_single: LearnedMlp requires a head");
      Eigen::MatrixXf diff = (-pose_latents).rowwise() + image_latent.transpose();
      return mlp_forward(*head, diff).col(0);
    }
  }
  return {};
}

Eigen::MatrixXd score_latents_backward(ScoreFunction fn, const Mlp* head, const Eigen::VectorXd& image_latent,
                                       const Eigen::MatrixXd& pose_latents, const Eigen::VectorXd& dscores,
                                       Eigen::VectorXd& dimage_latent, MlpGradients* head_grads) {
  if (dscores.size() != pose_latents.rows()) {
    throw DimensionError("score_latents_backward: dscores length mismatch");
  }
  const Eigen::Index n = pose_latents.rows();
  Eigen::MatrixXd dpose = Eigen::MatrixXd::Zero(n, pose_latents.cols());
  switch (fn) {
    case ScoreFunction::Cosine: {
      const double na = image_latent.norm();
      require_nonzero(na, "score_latents_backward");
      const Eigen::VectorXd row_norms = pose_latents.rowwise().norm();
      const Eigen::VectorXd dots = pose_latents * image_latent;
      const Eigen::VectorXd u = dots.cwiseQuotient(row_norms * na);
      // ReLU clamp: zero gradient where the raw similarity is <= 0.
      const Eigen::VectorXd g = (u.array() > 0.0).select(dscores.array(), 0.0);
      // du/db_i = a / (|a||b_i|) - u_i b_i / |b_i|^2
      // du/da   = b_i / (|a||b_i|) - u_i a / |a|^2
      const Eigen::VectorXd inv_ab = (row_norms * na).cwiseInverse();
      dpose = (g.cwiseProduct(inv_ab)) * image_latent.transpose();
      dpose -= (g.cwiseProduct(u).cwiseQuotient(row_norms.cwiseProduct(row_norms))).asDiagonal() * pose_latents;
      dimage_latent += pose_latents.transpose() * g.cwiseProduct(inv_ab);
      dimage_latent -= (g.dot(u) / (na * na)) * image_latent;
      break;
    }
    case ScoreFunction::L2: {
      const Eigen::MatrixXd diff = pose_latents.rowwise() - image_latent.transpose();  // b - a
      const Eigen::VectorXd dist = diff.rowwise().norm();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (dist[i] <= 1e-12 || 1.0 - dist[i] <= 0.0) continue;  // clamp or kink: subgradient 0
        const Eigen::VectorXd dd = diff.row(i).transpose() / dist[i];
        dpose.row(i) = (-dscores[i]) * dd.transpose();
        dimage_latent += dscores[i] * dd;
      }
      break;
    }
    case ScoreFunction::LearnedMlp: {
      if (!head) throw std::invalid_argument("score_latents_backward: LearnedMlp requires a head");
      Eigen::MatrixXd diff = (-pose_latents).rowwise() + image_latent.transpose();  // a - b
      ForwardCache cache;
      mlp_forward(*head, diff, &cache);
      MlpGradients local = MlpGradients::zeros_like(*head);
      MlpGradients& sink = head_grads ? *head_grads : local;
      const Eigen::MatrixXd dinput = mlp_backward(*head, cache, dscores, sink);
      dpose = -dinput;
      dimage_latent += dinput.colwise().sum().transpose();
      break;
    }
  }
  return dpose;
}

GradCheckReport gradient_check(const Mlp& net, double tolerance, uint64_t seed) {
  Rng rng = make_rng(mix_seed(seed ^ 0x6772616463686bULL));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int batch = 3;
  Eigen::MatrixXd x(batch, net.input_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
  Eigen::MatrixXd loss_weights(batch, net.output_dim());
  for (Eigen::Index i = 0; i < loss_weights.size(); ++i) loss_weights.data()[i] = unit(rng);

  auto loss_of = [&](const Mlp& candidate) {
    return (mlp_forward(candidate, x).cwiseProduct(loss_weights)).sum();
  };

  ForwardCache cache;
  mlp_forward(net, x, &cache);
  MlpGradients analytic = MlpGradients::zeros_like(net);
  mlp_backward(net, cache, loss_weights, analytic);

  GradCheckReport report;
  const double h = 1e-5;
  Mlp probe = net;
  auto probe_param = [&](double* value, double analytic_grad, const std::string& path) {
    const double saved = *value;
    *value = saved + h;
    const double up = loss_of(probe);
    *value = saved - h;
    const double down = loss_of(probe);
    *value = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(analytic_grad - fd) / std::max(std::abs(analytic_grad) + std::abs(fd), 1e-2);
    ++report.checked_params;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = path;
    }
  };

  for (size_t l = 0; l < probe.layers.size(); ++l) {
    auto& layer = probe.layers[l];
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      probe_param(layer.weights.data() + i, analytic.dweights[l].data()[i],
                  "layer " + std::to_string(l) + " W[" + std::to_string(i) + "]");
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      probe_param(layer.bias.data() + i, analytic.dbias[l].data()[i],
                  "layer " + std::to_string(l) + " b[" + std::to_string(i) + "]");
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace impose
