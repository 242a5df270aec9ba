#include "mmtpp/toylm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace mmtpp {

void ToyLMConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
  if (vocab_size <= 0) fail("vocab_size must be > 0");
  if (embed_dim <= 0 || n_heads <= 0 || embed_dim % n_heads != 0) {
    fail(fmt::format("embed_dim {} must be a positive multiple of n_heads {}", embed_dim, n_heads));
  }
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (context_len < 2) fail("context_len must be >= 2");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (image_pad_token < -1 || image_pad_token >= vocab_size) fail("image_pad_token out of range");
  if (!(stage1_lr > 0) || !(stage2_lr > 0)) fail("learning rates must be > 0");
  if (stage1_epochs < 0 || stage2_epochs < 0) fail("epoch counts must be >= 0");
  if (!(grad_clip > 0)) fail("grad_clip must be > 0");
  if (!(temperature >= 0)) fail("temperature must be >= 0");
  if (!(init_scale > 0)) fail("init_scale must be > 0");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
}

nlohmann::json config_to_json(const ToyLMConfig& c) {
  return {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"context_len", c.context_len}, {"feature_dim", c.feature_dim},
          {"image_pad_token", c.image_pad_token},
          {"stage1_lr", c.stage1_lr},     {"stage1_epochs", c.stage1_epochs},
          {"stage2_lr", c.stage2_lr},     {"stage2_epochs", c.stage2_epochs},
          {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip},
          {"temperature", c.temperature}, {"init_scale", c.init_scale},
          {"seed", c.seed}};
}

ToyLMConfig config_from_json(const nlohmann::json& j) {
  ToyLMConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.context_len = j.value("context_len", c.context_len);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.image_pad_token = j.value("image_pad_token", c.image_pad_token);
    c.stage1_lr = j.value("stage1_lr", c.stage1_lr);
    c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
    c.stage2_lr = j.value("stage2_lr", c.stage2_lr);
    c.stage2_epochs = j.value("stage2_epochs", c.stage2_epochs);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.temperature = j.value("temperature", c.temperature);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, fmt::format("bad model config: {}", e.what()));
  }
  return c;
}

std::size_t TensorInfo::size() const {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::vector<TensorInfo> parameter_layout(const ToyLMConfig& c) {
  const int V = c.vocab_size, d = c.embed_dim, C = c.context_len, F = c.feature_dim;
  const int m = c.mlp_dim();
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    TensorInfo t{std::move(name), std::move(shape), offset};
    offset += t.size();
    out.push_back(std::move(t));
  };
  add("tok_embedding", {V, d});
  add("pos_embedding", {C, d});
  add("vision.weight", {F, d});
  add("vision.bias", {d});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = fmt::format("layers.{}.", l);
    add(p + "ln1.gain", {d});
    add(p + "ln1.bias", {d});
    add(p + "attn.qkv.weight", {d, 3 * d});
    add(p + "attn.qkv.bias", {3 * d});
    add(p + "attn.out.weight", {d, d});
    add(p + "attn.out.bias", {d});
    add(p + "ln2.gain", {d});
    add(p + "ln2.bias", {d});
    add(p + "mlp.fc1.weight", {d, m});
    add(p + "mlp.fc1.bias", {m});
    add(p + "mlp.fc2.weight", {m, d});
    add(p + "mlp.fc2.bias", {d});
  }
  add("final_ln.gain", {d});
  add("final_ln.bias", {d});
  add("head.weight", {d, V});
  add("head.bias", {V});
  return out;
}

std::size_t parameter_count(const ToyLMConfig& c) {
  const auto layout = parameter_layout(c);
  return layout.back().offset + layout.back().size();
}

ModelParams ModelParams::init(const ToyLMConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.values.assign(parameter_count(config), 0.0f);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double residual_scale = 1.0 / std::sqrt(2.0 * config.n_layers);
  for (const auto& t : parameter_layout(config)) {
    const bool gain = t.name.ends_with(".gain");
    const bool bias = t.name.ends_with(".bias");
    double scale = config.init_scale;
    if (t.name.ends_with("attn.out.weight") || t.name.ends_with("fc2.weight")) {
      scale *= residual_scale;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      float& v = p.values[t.offset + i];
      if (gain) v = 1.0f;
      else if (bias) v = 0.0f;
      else v = static_cast<float>(scale * normal(rng));
    }
  }
  return p;
}

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Offsets {
  std::size_t tok, pos, vis_w, vis_b, lnf_g, lnf_b, wout, bout, total;
  std::vector<LayerOffsets> layers;

  explicit Offsets(const ToyLMConfig& c) {
    const auto layout = parameter_layout(c);
    std::size_t k = 0;
    auto next = [&] { return layout[k++].offset; };
    tok = next();
    pos = next();
    vis_w = next();
    vis_b = next();
    for (int l = 0; l < c.n_layers; ++l) {
      LayerOffsets lo{};
      lo.ln1_g = next();
      lo.ln1_b = next();
      lo.wqkv = next();
      lo.bqkv = next();
      lo.wo = next();
      lo.bo = next();
      lo.ln2_g = next();
      lo.ln2_b = next();
      lo.w1 = next();
      lo.b1 = next();
      lo.w2 = next();
      lo.b2 = next();
      layers.push_back(lo);
    }
    lnf_g = next();
    lnf_b = next();
    wout = next();
    bout = next();
    total = layout.back().offset + layout.back().size();
  }
};

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

template <class T>
Eigen::Map<const Mat<T>> cmat(const T* w, std::size_t off, int rows, int cols) {
  return Eigen::Map<const Mat<T>>(w + off, rows, cols);
}
template <class T>
Eigen::Map<Mat<T>> gmat(T* g, std::size_t off, int rows, int cols) {
  return Eigen::Map<Mat<T>>(g + off, rows, cols);
}
template <class T>
Eigen::Map<const RowVec<T>> cvec(const T* w, std::size_t off, int n) {
  return Eigen::Map<const RowVec<T>>(w + off, n);
}
template <class T>
Eigen::Map<RowVec<T>> gvec(T* g, std::size_t off, int n) {
  return Eigen::Map<RowVec<T>>(g + off, n);
}

template <class T>
struct LayerNormCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, const T* w, std::size_t g_off, std::size_t b_off,
                  LayerNormCache<T>& cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    cache.rstd[i] = r;
    cache.xhat.row(i) = (x.row(i).array() - mean) * r;
  }
  Mat<T> y = cache.xhat;
  y.array().rowwise() *= cvec(w, g_off, static_cast<int>(d)).array();
  y.rowwise() += cvec(w, b_off, static_cast<int>(d));
  return y;
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& cache, const T* w,
                           T* g, std::size_t g_off, std::size_t b_off) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  const int di = static_cast<int>(d);
  gvec(g, g_off, di) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  gvec(g, b_off, di) += dy.colwise().sum();
  Mat<T> dxhat = dy;
  dxhat.array().rowwise() *= cvec(w, g_off, di).array();
  Mat<T> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd[i] * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

template <class T>
struct LayerCache {
  LayerNormCache<T> ln1, ln2;
  Mat<T> a, qkv, o, b, h1, act;
  std::vector<Mat<T>> probs;  // per head, n x n
};

template <class T>
struct Activations {
  std::vector<LayerCache<T>> layers;
  LayerNormCache<T> lnf;
  Mat<T> z;  // final normalised hidden states
  std::vector<std::size_t> image_positions;
};

void check_input(const ToyLMConfig& c, std::span<const TokenId> ids, const ImageFeatures* feats,
                 std::vector<std::size_t>& image_positions) {
  if (static_cast<long long>(ids.size()) > c.context_len) {
    throw Error(ErrorCode::ContextOverflow,
                fmt::format("stream of {} tokens exceeds context_len {}", ids.size(),
                            c.context_len));
  }
  image_positions.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= c.vocab_size) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("token id {} outside the vocabulary", ids[i]), i + 1);
    }
    if (ids[i] == c.image_pad_token) image_positions.push_back(i);
  }
  if (!feats) return;
  if (feats->size() != image_positions.size()) {
    throw Error(ErrorCode::FeatureCountMismatch,
                fmt::format("{} image features for {} image_pad tokens", feats->size(),
                            image_positions.size()));
  }
  for (const auto& f : *feats) {
    if (static_cast<int>(f.size()) != c.feature_dim) {
      throw Error(ErrorCode::FeatureCountMismatch,
                  fmt::format("image feature has {} values, expected {}", f.size(),
                              c.feature_dim));
    }
  }
}

template <class T>
Activations<T> forward(const ToyLMConfig& c, const Offsets& off, const T* w,
                       std::span<const TokenId> ids, const ImageFeatures* feats) {
  const int n = static_cast<int>(ids.size());
  const int d = c.embed_dim, H = c.n_heads, dh = d / H, m = c.mlp_dim();
  const T scale = T(1) / std::sqrt(T(dh));
  Activations<T> act;
  check_input(c, ids, feats, act.image_positions);

  Mat<T> x(n, d);
  for (int i = 0; i < n; ++i) {
    x.row(i) = cmat(w, off.tok, c.vocab_size, d).row(ids[i]) +
               cmat(w, off.pos, c.context_len, d).row(i);
  }
  if (feats) {
    for (std::size_t k = 0; k < act.image_positions.size(); ++k) {
      const auto f = Eigen::Map<const Eigen::VectorXf>((*feats)[k].data(), c.feature_dim)
                         .template cast<T>()
                         .transpose();
      x.row(act.image_positions[k]) +=
          f * cmat(w, off.vis_w, c.feature_dim, d) + cvec(w, off.vis_b, d);
    }
  }

  act.layers.resize(c.n_layers);
  for (int l = 0; l < c.n_layers; ++l) {
    const LayerOffsets& lo = off.layers[l];
    LayerCache<T>& L = act.layers[l];
    L.a = layer_norm(x, w, lo.ln1_g, lo.ln1_b, L.ln1);
    L.qkv = L.a * cmat(w, lo.wqkv, d, 3 * d);
    L.qkv.rowwise() += cvec(w, lo.bqkv, 3 * d);
    L.o.resize(n, d);
    L.probs.resize(H);
    for (int h = 0; h < H; ++h) {
      Mat<T>& P = L.probs[h];
      P.noalias() = L.qkv.middleCols(h * dh, dh) * L.qkv.middleCols(d + h * dh, dh).transpose();
      for (int i = 0; i < n; ++i) {
        auto row = P.row(i);
        row.head(i + 1) *= scale;
        const T mx = row.head(i + 1).maxCoeff();
        row.head(i + 1) = (row.head(i + 1).array() - mx).exp();
        row.head(i + 1) /= row.head(i + 1).sum();
        row.tail(n - i - 1).setZero();
      }
      L.o.middleCols(h * dh, dh).noalias() = P * L.qkv.middleCols(2 * d + h * dh, dh);
    }
    x.noalias() += L.o * cmat(w, lo.wo, d, d);
    x.rowwise() += cvec(w, lo.bo, d);

    L.b = layer_norm(x, w, lo.ln2_g, lo.ln2_b, L.ln2);
    L.h1 = L.b * cmat(w, lo.w1, d, m);
    L.h1.rowwise() += cvec(w, lo.b1, m);
    L.act = L.h1.unaryExpr([](T u) {
      return T(0.5) * u * (T(1) + std::tanh(T(kGeluC) * (u + T(0.044715) * u * u * u)));
    });
    x.noalias() += L.act * cmat(w, lo.w2, m, d);
    x.rowwise() += cvec(w, lo.b2, d);
  }
  act.z = layer_norm(x, w, off.lnf_g, off.lnf_b, act.lnf);
  return act;
}

template <class T>
void backward(const ToyLMConfig& c, const Offsets& off, const T* w, T* g,
              std::span<const TokenId> ids, const ImageFeatures* feats,
              const Activations<T>& act, const Mat<T>& dlogits) {
  const int n = static_cast<int>(ids.size());
  const int d = c.embed_dim, H = c.n_heads, dh = d / H, m = c.mlp_dim();
  const T scale = T(1) / std::sqrt(T(dh));

  gmat(g, off.wout, d, c.vocab_size).noalias() += act.z.transpose() * dlogits;
  gvec(g, off.bout, c.vocab_size) += dlogits.colwise().sum();
  Mat<T> dz = dlogits * cmat(w, off.wout, d, c.vocab_size).transpose();
  Mat<T> dx = layer_norm_backward(dz, act.lnf, w, g, off.lnf_g, off.lnf_b);

  for (int l = c.n_layers - 1; l >= 0; --l) {
    const LayerOffsets& lo = off.layers[l];
    const LayerCache<T>& L = act.layers[l];
    // MLP branch.
    gmat(g, lo.w2, m, d).noalias() += L.act.transpose() * dx;
    gvec(g, lo.b2, d) += dx.colwise().sum();
    Mat<T> dh1 = dx * cmat(w, lo.w2, m, d).transpose();
    dh1.array() *= L.h1.unaryExpr([](T u) {
      const T t = std::tanh(T(kGeluC) * (u + T(0.044715) * u * u * u));
      return T(0.5) * (T(1) + t) +
             T(0.5) * u * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * 0.044715) * u * u);
    }).array();
    gmat(g, lo.w1, d, m).noalias() += L.b.transpose() * dh1;
    gvec(g, lo.b1, m) += dh1.colwise().sum();
    Mat<T> db = dh1 * cmat(w, lo.w1, d, m).transpose();
    dx += layer_norm_backward(db, L.ln2, w, g, lo.ln2_g, lo.ln2_b);

    // Attention branch.
    gmat(g, lo.wo, d, d).noalias() += L.o.transpose() * dx;
    gvec(g, lo.bo, d) += dx.colwise().sum();
    const Mat<T> dout = dx * cmat(w, lo.wo, d, d).transpose();
    Mat<T> dqkv = Mat<T>::Zero(n, 3 * d);
    for (int h = 0; h < H; ++h) {
      const Mat<T>& P = L.probs[h];
      const auto q = L.qkv.middleCols(h * dh, dh);
      const auto k = L.qkv.middleCols(d + h * dh, dh);
      const auto v = L.qkv.middleCols(2 * d + h * dh, dh);
      const auto doh = dout.middleCols(h * dh, dh);
      Mat<T> dp = doh * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() += P.transpose() * doh;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = (dp.array() * P.array()).rowwise().sum();
      Mat<T> ds = P.array() * (dp.array().colwise() - rs.array());
      ds *= scale;
      dqkv.middleCols(h * dh, dh).noalias() += ds * k;
      dqkv.middleCols(d + h * dh, dh).noalias() += ds.transpose() * q;
    }
    gmat(g, lo.wqkv, d, 3 * d).noalias() += L.a.transpose() * dqkv;
    gvec(g, lo.bqkv, 3 * d) += dqkv.colwise().sum();
    Mat<T> da = dqkv * cmat(w, lo.wqkv, d, 3 * d).transpose();
    dx += layer_norm_backward(da, L.ln1, w, g, lo.ln1_g, lo.ln1_b);
  }

  for (int i = 0; i < n; ++i) {
    gmat(g, off.tok, c.vocab_size, d).row(ids[i]) += dx.row(i);
    gmat(g, off.pos, c.context_len, d).row(i) += dx.row(i);
  }
  if (feats) {
    for (std::size_t k = 0; k < act.image_positions.size(); ++k) {
      const auto f = Eigen::Map<const Eigen::VectorXf>((*feats)[k].data(), c.feature_dim)
                         .template cast<T>();
      const auto dxi = dx.row(act.image_positions[k]);
      gmat(g, off.vis_w, c.feature_dim, d).noalias() += f * dxi;
      gvec(g, off.vis_b, d) += dxi;
    }
  }
}

// Weighted mean next-token NLL; accumulates the gradient into g when non-null.
template <class T>
double nll_impl(const ToyLMConfig& c, const T* w, T* g, std::span<const TokenId> ids,
                const ImageFeatures* feats, std::span<const float> weights,
                std::vector<double>* per_token) {
  const int n = static_cast<int>(ids.size());
  if (n < 2) {
    throw Error(ErrorCode::TooShortSequence,
                "a stream needs at least 2 tokens to have a prediction target");
  }
  if (!weights.empty() && static_cast<int>(weights.size()) != n - 1) {
    throw Error(ErrorCode::LengthMismatch,
                fmt::format("{} loss weights for {} targets", weights.size(), n - 1));
  }
  const Offsets off(c);
  const Activations<T> act = forward(c, off, w, ids, feats);
  Mat<T> lg = act.z.topRows(n - 1) * cmat(w, off.wout, c.embed_dim, c.vocab_size);
  lg.rowwise() += cvec(w, off.bout, c.vocab_size);

  double wsum = 0.0;
  for (int i = 0; i < n - 1; ++i) wsum += weights.empty() ? 1.0 : weights[i];
  if (!(wsum > 0.0)) throw Error(ErrorCode::InvalidArgument, "all loss weights are zero");

  if (per_token) per_token->assign(n - 1, 0.0);
  double loss = 0.0;
  Mat<T> dlogits;
  if (g) dlogits = Mat<T>::Zero(n, c.vocab_size);
  for (int i = 0; i < n - 1; ++i) {
    auto row = lg.row(i);
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    const double nll = static_cast<double>(lse - row[ids[i + 1]]);
    if (per_token) (*per_token)[i] = nll;
    const double wi = weights.empty() ? 1.0 : weights[i];
    if (wi == 0.0) continue;
    loss += wi * nll;
    if (g) {
      auto dr = dlogits.row(i);
      dr = (row.array() - lse).exp().matrix();
      dr[ids[i + 1]] -= T(1);
      dr *= T(wi / wsum);
    }
  }
  loss /= wsum;
  if (g) backward(c, off, w, g, ids, feats, act, dlogits);
  return loss;
}

AlignedVector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

NllResult forward_nll(const ModelParams& params, std::span<const TokenId> ids,
                      const ImageFeatures* features, std::span<const float> weights,
                      bool double_precision) {
  NllResult r;
  if (double_precision) {
    const auto w = to_double(params.values);
    r.mean = nll_impl<double>(params.config, w.data(), nullptr, ids, features, weights,
                              &r.per_token);
  } else {
    r.mean = nll_impl<float>(params.config, params.values.data(), nullptr, ids, features,
                             weights, &r.per_token);
  }
  return r;
}

NllGradient nll_gradient64(const ToyLMConfig& config, std::span<const double> params,
                           std::span<const TokenId> ids, const ImageFeatures* features,
                           std::span<const float> weights) {
  if (params.size() != parameter_count(config)) {
    throw Error(ErrorCode::InvalidArgument, "parameter vector has the wrong length");
  }
  NllGradient out;
  out.gradient.assign(params.size(), 0.0);
  out.loss = nll_impl<double>(config, params.data(), out.gradient.data(), ids, features, weights,
                              nullptr);
  return out;
}

double nll64(const ToyLMConfig& config, std::span<const double> params,
             std::span<const TokenId> ids, const ImageFeatures* features,
             std::span<const float> weights) {
  if (params.size() != parameter_count(config)) {
    throw Error(ErrorCode::InvalidArgument, "parameter vector has the wrong length");
  }
  return nll_impl<double>(config, params.data(), nullptr, ids, features, weights, nullptr);
}

std::vector<float> logits(const ModelParams& params, std::span<const TokenId> ids,
                          const ImageFeatures* features) {
  const ToyLMConfig& c = params.config;
  const Offsets off(c);
  const float* w = params.values.data();
  const auto act = forward<float>(c, off, w, ids, features);
  Mat<float> lg = act.z * cmat(w, off.wout, c.embed_dim, c.vocab_size);
  lg.rowwise() += cvec(w, off.bout, c.vocab_size);
  return {lg.data(), lg.data() + lg.size()};
}

std::vector<float> response_weights(std::size_t prompt_len, std::size_t response_len) {
  const std::size_t n = prompt_len + response_len;
  std::vector<float> w(n > 0 ? n - 1 : 0, 0.0f);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (i + 1 >= prompt_len) w[i] = 1.0f;
  }
  return w;
}

TrainResult train(ModelParams params, std::span<const TrainExample> data, double lr, int epochs,
                  const TrainCallback& on_step) {
  const ToyLMConfig& c = params.config;
  c.validate();
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "training corpus is empty");
  if (params.values.size() != parameter_count(c)) {
    throw Error(ErrorCode::InvalidArgument, "parameters do not match the config");
  }
  const std::size_t P = params.values.size();
  AlignedVector<float> grad(P);
  std::vector<float> m1(P, 0.0f), m2(P, 0.0f);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(c.seed ^ 0xD1B54A32D192ED03ULL);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  TrainResult res;
  std::size_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t idx : order) {
      const TrainExample& ex = data[idx];
      std::fill(grad.begin(), grad.end(), 0.0f);
      const double loss =
          nll_impl<float>(c, params.values.data(), grad.data(), ex.stream.ids,
                          ex.features ? &*ex.features : nullptr, ex.weights, nullptr);
      double norm2 = 0.0;
      for (float v : grad) norm2 += static_cast<double>(v) * v;
      if (!std::isfinite(loss) || !std::isfinite(norm2)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    fmt::format("non-finite loss {} (gradient norm^2 {}) at epoch {}, step {}, "
                                "example {}",
                                loss, norm2, epoch + 1, step + 1, idx));
      }
      const double norm = std::sqrt(norm2);
      const double clip = norm > c.grad_clip ? c.grad_clip / norm : 1.0;
      ++step;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      const double step_size = lr / bc1;
      for (std::size_t k = 0; k < P; ++k) {
        const double gk = grad[k] * clip;
        m1[k] = static_cast<float>(b1 * m1[k] + (1 - b1) * gk);
        m2[k] = static_cast<float>(b2 * m2[k] + (1 - b2) * gk * gk);
        double v = params.values[k];
        if (c.weight_decay > 0) v -= lr * c.weight_decay * v;
        v -= step_size * m1[k] / (std::sqrt(m2[k] / bc2) + eps);
        params.values[k] = static_cast<float>(v);
      }
      epoch_sum += loss;
      if (on_step) on_step(epoch, step, loss);
    }
    res.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
  }
  res.steps = step;
  res.params = std::move(params);
  return res;
}

TrainResult train_stage1(const ToyLMConfig& config, std::span<const TokenStream> corpus,
                         const ModelParams* init, const TrainCallback& on_step) {
  ModelParams params = init ? *init : ModelParams::init(config);
  if (init && parameter_count(init->config) != parameter_count(config)) {
    throw Error(ErrorCode::InvalidArgument, "initial parameters do not match the config");
  }
  params.config = config;
  std::vector<TrainExample> data;
  data.reserve(corpus.size());
  for (const auto& s : corpus) data.push_back({s, {}, std::nullopt});
  return train(std::move(params), data, config.stage1_lr, config.stage1_epochs, on_step);
}

TrainResult train_stage2(const ModelParams& params, std::span<const PromptResponsePair> pairs,
                         const TrainCallback& on_step) {
  std::vector<TrainExample> data;
  data.reserve(pairs.size());
  for (const auto& p : pairs) {
    TrainExample ex;
    ex.stream = p.prompt;
    ex.stream.append(p.response);
    ex.weights = response_weights(p.prompt.size(), p.response.size());
    data.push_back(std::move(ex));
  }
  return train(params, data, params.config.stage2_lr, params.config.stage2_epochs, on_step);
}

TokenId sample_token(std::span<const float> row, double temperature, std::mt19937_64& rng) {
  if (row.empty()) throw Error(ErrorCode::InvalidArgument, "empty logit row");
  const auto best = std::max_element(row.begin(), row.end());
  if (temperature <= 0.0) return static_cast<TokenId>(best - row.begin());
  const double mx = *best;
  std::vector<double> p(row.size());
  double total = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    p[k] = std::exp((row[k] - mx) / temperature);
    total += p[k];
  }
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  for (std::size_t k = 0; k < row.size(); ++k) {
    u -= p[k];
    if (u < 0.0) return static_cast<TokenId>(k);
  }
  return static_cast<TokenId>(best - row.begin());
}

TokenStream generate(const ModelParams& params, const TokenStream& prompt, TaskKind task,
                     const Vocabulary& vocab, const GenerateOptions& options,
                     const ImageFeatures* features) {
  const ToyLMConfig& c = params.config;
  if (static_cast<long long>(prompt.size()) >= c.context_len) {
    throw Error(ErrorCode::ContextOverflow,
                fmt::format("prompt of {} tokens leaves no room in context_len {}",
                            prompt.size(), c.context_len));
  }
  if (prompt.empty()) throw Error(ErrorCode::InvalidArgument, "empty prompt");
  const std::size_t limit = task == TaskKind::Time   ? std::min<std::size_t>(4, options.max_new)
                            : task == TaskKind::Type ? std::min<std::size_t>(1, options.max_new)
                                                     : options.max_new;
  std::mt19937_64 rng(options.seed);
  std::vector<TokenId> ids = prompt.ids;
  std::optional<ImageFeatures> feats;
  if (features) feats = *features;
  const Offsets off(c);
  const float* w = params.values.data();
  TokenStream out;
  while (out.size() < limit) {
    if (static_cast<long long>(ids.size()) >= c.context_len) {
      throw Error(ErrorCode::ContextOverflow, "generation ran past context_len");
    }
    const auto act = forward<float>(c, off, w, ids, feats ? &*feats : nullptr);
    RowVec<float> row = act.z.row(act.z.rows() - 1) * cmat(w, off.wout, c.embed_dim, c.vocab_size);
    row += cvec(w, off.bout, c.vocab_size);
    const TokenId next = sample_token(std::span<const float>(row.data(), row.size()),
                                      options.temperature, rng);
    Provenance prov = Provenance::Structural;
    if (vocab.contains(next)) {
      switch (vocab.info(next).category) {
        case TokenCategory::TimeByte: prov = Provenance::Time; break;
        case TokenCategory::Type: prov = Provenance::Type; break;
        case TokenCategory::TextByte: prov = Provenance::Text; break;
        case TokenCategory::Special: break;
      }
    }
    out.push(next, prov);
    ids.push_back(next);
    if (feats && next == c.image_pad_token) feats->emplace_back(c.feature_dim, 0.0f);
    if (task == TaskKind::Text && vocab.is(next, Special::TextEnd)) break;
  }
  return out;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes LE");
  const auto bin = std::filesystem::path(stem).concat(".bin");
  const auto manifest = std::filesystem::path(stem).concat(".json");
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", bin.string()));
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(float)));
  }
  nlohmann::ordered_json j;
  j["format"] = "mmtpp-toylm";
  j["dtype"] = "float32";
  j["seed"] = params.config.seed;
  j["config"] = config_to_json(params.config);
  j["parameter_count"] = params.values.size();
  j["data"] = bin.filename().string();
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& t : parameter_layout(params.config)) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  }
  j["tensors"] = tensors;
  std::ofstream out(manifest);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", manifest.string()));
  out << j.dump(1) << "\n";
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::filesystem::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
  const auto manifest = std::filesystem::path(stem).concat(".json");
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot read {}", manifest.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: {}", manifest.string(), e.what()));
  }
  if (j.value("dtype", "") != "float32" || !j.contains("config")) {
    throw Error(ErrorCode::SchemaError, "checkpoint manifest is missing dtype or config");
  }
  ModelParams p;
  p.config = config_from_json(j["config"]);
  p.config.validate();
  const std::size_t count = parameter_count(p.config);
  const auto bin = manifest.parent_path() / j.value("data", stem.filename().string() + ".bin");
  std::ifstream data(bin, std::ios::binary | std::ios::ate);
  if (!data) throw Error(ErrorCode::IoError, fmt::format("cannot read {}", bin.string()));
  const auto bytes = static_cast<std::size_t>(data.tellg());
  if (bytes != count * sizeof(float)) {
    throw Error(ErrorCode::SchemaError,
                fmt::format("{} holds {} bytes, config needs {}", bin.string(), bytes,
                            count * sizeof(float)));
  }
  data.seekg(0);
  p.values.resize(count);
  data.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(bytes));
  return p;
}

std::vector<float> image_feature(const std::vector<std::uint8_t>& gray, int width, int height) {
  if (width <= 0 || height <= 0 || gray.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::InvalidArgument, "image buffer does not match its dimensions");
  }
  std::vector<float> out(64, 0.0f);
  for (int r = 0; r < 8; ++r) {
    const int y0 = r * height / 8, y1 = std::max(y0 + 1, (r + 1) * height / 8);
    for (int c = 0; c < 8; ++c) {
      const int x0 = c * width / 8, x1 = std::max(x0 + 1, (c + 1) * width / 8);
      double sum = 0.0;
      int count = 0;
      for (int y = y0; y < std::min(y1, height); ++y)
        for (int x = x0; x < std::min(x1, width); ++x, ++count) sum += gray[y * width + x];
      out[r * 8 + c] = static_cast<float>(sum / (255.0 * std::max(count, 1)));
    }
  }
  return out;
}

}  // namespace mmtpp
