#include "fedstain/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "fedstain/error.hpp"

namespace fedstain {

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

std::size_t conv_out(std::size_t n) { return (n + 2 - kKernel) / 2 + 1; }

using ConstMap = Eigen::Map<const Matrix>;

// Parameter blocks are copied into Eigen-owned storage: vectorized reductions
// over unaligned buffers sum in an address-dependent order.
Matrix param_block(const std::vector<double>& v, std::size_t offset, Eigen::Index rows,
                   Eigen::Index cols) {
  return ConstMap(v.data() + offset, rows, cols);
}

Eigen::VectorXd param_vector(const std::vector<double>& v, std::size_t offset, Eigen::Index n) {
  return Eigen::Map<const Eigen::VectorXd>(v.data() + offset, n);
}

void store_block(std::vector<double>& v, std::size_t offset, const Matrix& m) {
  std::copy(m.data(), m.data() + m.size(), v.data() + offset);
}

// Offsets of each parameter block inside the flat vectors.
struct Offsets {
  std::vector<std::size_t> conv_w, conv_b;
  std::size_t proj_w = 0, proj_b = 0;
  std::size_t cls_w = 0, cls_b = 0;
};

Offsets offsets_for(const ModelConfig& cfg) {
  Offsets o;
  std::size_t pos = 0, cin = cfg.in_channels;
  for (std::size_t cout : cfg.conv_channels) {
    o.conv_w.push_back(pos);
    pos += cout * cin * kTaps;
    o.conv_b.push_back(pos);
    pos += cout;
    cin = cout;
  }
  o.proj_w = pos;
  pos += cfg.embed_dim * cin;
  o.proj_b = pos;
  o.cls_w = 0;
  o.cls_b = cfg.num_classes * cfg.embed_dim;
  return o;
}

// Stride-2, pad-1, 3x3 patches of a (C x B*H*W) activation.
Matrix im2col(const Matrix& in, std::size_t batch, std::size_t side) {
  const std::size_t c = static_cast<std::size_t>(in.rows());
  const std::size_t out_side = conv_out(side);
  const std::size_t hw = side * side, ohw = out_side * out_side;
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(c * kTaps),
                            static_cast<Eigen::Index>(batch * ohw));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < out_side; ++oy)
      for (std::size_t ox = 0; ox < out_side; ++ox) {
        double* dst = col.data() + (b * ohw + oy * out_side + ox) * c * kTaps;
        for (std::size_t ky = 0; ky < kKernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * 2 + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(side)) continue;
          for (std::size_t kx = 0; kx < kKernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * 2 + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(side)) continue;
            const double* src =
                in.data() + (b * hw + static_cast<std::size_t>(iy) * side +
                             static_cast<std::size_t>(ix)) * c;
            for (std::size_t ci = 0; ci < c; ++ci) dst[ci * kTaps + ky * kKernel + kx] = src[ci];
          }
        }
      }
  return col;
}

Matrix col2im(const Matrix& col, std::size_t channels, std::size_t batch, std::size_t side) {
  const std::size_t out_side = conv_out(side);
  const std::size_t hw = side * side, ohw = out_side * out_side;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(channels),
                            static_cast<Eigen::Index>(batch * hw));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < out_side; ++oy)
      for (std::size_t ox = 0; ox < out_side; ++ox) {
        const double* src = col.data() + (b * ohw + oy * out_side + ox) * channels * kTaps;
        for (std::size_t ky = 0; ky < kKernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * 2 + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(side)) continue;
          for (std::size_t kx = 0; kx < kKernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * 2 + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(side)) continue;
            double* dst = out.data() + (b * hw + static_cast<std::size_t>(iy) * side +
                                        static_cast<std::size_t>(ix)) * channels;
            for (std::size_t ci = 0; ci < channels; ++ci)
              dst[ci] += src[ci * kTaps + ky * kKernel + kx];
          }
        }
      }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) throw InvalidArgument("in_channels must be 1 or 3");
  if (input_size < 8 || input_size > 512) throw InvalidArgument("input_size must lie in [8, 512]");
  if (conv_channels.size() != 3) throw InvalidArgument("encoder has exactly three conv blocks");
  for (auto c : conv_channels)
    if (c == 0) throw InvalidArgument("conv channel counts must be positive");
  if (embed_dim == 0 || num_classes < 2) throw InvalidArgument("bad embed_dim / num_classes");
  if (!(input_scale > 0.0)) throw InvalidArgument("input_scale must be > 0");
  if (input_offset.size() != in_channels)
    throw InvalidArgument("input_offset needs one entry per input channel");
}

std::size_t LayerShape::size() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::size_t ModelLayout::encoder_size() const {
  std::size_t n = 0;
  for (const auto& l : encoder) n += l.size();
  return n;
}

std::size_t ModelLayout::classifier_size() const {
  std::size_t n = 0;
  for (const auto& l : classifier) n += l.size();
  return n;
}

std::string ModelLayout::describe() const {
  std::ostringstream os;
  auto dump = [&os](const char* part, const std::vector<LayerShape>& layers) {
    for (const auto& l : layers) {
      os << part << ':' << l.name << '[';
      for (std::size_t i = 0; i < l.shape.size(); ++i) os << (i ? "x" : "") << l.shape[i];
      os << "];";
    }
  };
  dump("h", encoder);
  dump("g", classifier);
  return os.str();
}

std::uint64_t ModelLayout::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ModelLayout make_layout(const ModelConfig& cfg) {
  cfg.validate();
  ModelLayout l;
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::size_t cout = cfg.conv_channels[i];
    l.encoder.push_back({"conv" + std::to_string(i + 1) + ".weight", {cout, cin, kKernel, kKernel}});
    l.encoder.push_back({"conv" + std::to_string(i + 1) + ".bias", {cout}});
    cin = cout;
  }
  l.encoder.push_back({"proj.weight", {cfg.embed_dim, cin}});
  l.encoder.push_back({"proj.bias", {cfg.embed_dim}});
  l.classifier.push_back({"fc.weight", {cfg.num_classes, cfg.embed_dim}});
  l.classifier.push_back({"fc.bias", {cfg.num_classes}});
  return l;
}

bool ModelParams::all_finite() const noexcept {
  auto fin = [](double v) { return std::isfinite(v); };
  return std::all_of(encoder.begin(), encoder.end(), fin) &&
         std::all_of(classifier.begin(), classifier.end(), fin);
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), layout_(make_layout(cfg_)) {
  std::size_t side = cfg_.input_size;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    side = conv_out(side);
    spatial_.push_back(side);
  }
}

ModelParams Model::zeros() const {
  ModelParams p;
  p.layout = layout_;
  p.encoder.assign(layout_.encoder_size(), 0.0);
  p.classifier.assign(layout_.classifier_size(), 0.0);
  return p;
}

ModelParams Model::init_params(Rng& rng) const {
  ModelParams p = zeros();
  const Offsets o = offsets_for(cfg_);
  std::size_t cin = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    const std::size_t fan_in = cin * kTaps;
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t k = 0; k < cfg_.conv_channels[i] * fan_in; ++k)
      p.encoder[o.conv_w[i] + k] = sd * standard_normal(rng);
    cin = cfg_.conv_channels[i];
  }
  const double proj_sd = std::sqrt(1.0 / static_cast<double>(cin));
  for (std::size_t k = 0; k < cfg_.embed_dim * cin; ++k)
    p.encoder[o.proj_w + k] = proj_sd * standard_normal(rng);
  const double cls_sd = std::sqrt(1.0 / static_cast<double>(cfg_.embed_dim));
  for (std::size_t k = 0; k < cfg_.num_classes * cfg_.embed_dim; ++k)
    p.classifier[k] = cls_sd * standard_normal(rng);
  return p;
}

void Model::check_params(const ModelParams& params) const {
  if (params.encoder.size() != layout_.encoder_size() ||
      params.classifier.size() != layout_.classifier_size())
    throw ShapeMismatch("parameter vectors do not match the model layout");
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    probs.col(j) = (logits.col(j).array() - mx).exp().matrix();
    probs.col(j) /= probs.col(j).sum();
  }
  return probs;
}

ForwardCache Model::forward(const ModelParams& params, std::span<const ImageTensor> batch,
                            const FeatureHook& hook) const {
  check_params(params);
  const std::size_t b = batch.size();
  if (b == 0) throw ShapeMismatch("forward on an empty batch");
  const std::size_t side = cfg_.input_size;
  const std::size_t hw = side * side;
  for (const auto& img : batch)
    if (img.channels() != cfg_.in_channels || img.height() != side || img.width() != side)
      throw ShapeMismatch("input image is " + std::to_string(img.channels()) + "x" +
                          std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                          ", model expects " + std::to_string(cfg_.in_channels) + "x" +
                          std::to_string(side) + "x" + std::to_string(side));

  Matrix x(static_cast<Eigen::Index>(cfg_.in_channels), static_cast<Eigen::Index>(b * hw));
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t c = 0; c < cfg_.in_channels; ++c) {
      const auto ch = batch[s].channel(c);
      for (std::size_t p = 0; p < hw; ++p)
        x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s * hw + p)) =
            (ch[p] - cfg_.input_offset[c]) * cfg_.input_scale;
    }

  const Offsets o = offsets_for(cfg_);
  ForwardCache cache;
  cache.batch = b;
  std::size_t cin = cfg_.in_channels, in_side = side;
  const Matrix* input = &x;
  for (std::size_t l = 0; l < cfg_.conv_channels.size(); ++l) {
    const std::size_t cout = cfg_.conv_channels[l];
    cache.cols.push_back(im2col(*input, b, in_side));
    const Matrix w = param_block(params.encoder, o.conv_w[l], static_cast<Eigen::Index>(cout),
                                 static_cast<Eigen::Index>(cin * kTaps));
    const Eigen::VectorXd bias =
        param_vector(params.encoder, o.conv_b[l], static_cast<Eigen::Index>(cout));
    Matrix act = w * cache.cols.back();
    act.colwise() += bias;
    act = act.cwiseMax(0.0);
    if (l == 0 && hook) {
      const std::size_t ohw = spatial_[0] * spatial_[0];
      cache.hook_gains.assign(b, {});
      std::vector<double> block(cout * ohw);
      for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t p = 0; p < ohw; ++p)
          for (std::size_t c = 0; c < cout; ++c)
            block[c * ohw + p] = act(static_cast<Eigen::Index>(c),
                                     static_cast<Eigen::Index>(s * ohw + p));
        auto gains = hook(s, block, cout);
        if (gains.empty()) continue;
        if (gains.size() != cout) throw ShapeMismatch("feature hook returned wrong gain count");
        for (std::size_t p = 0; p < ohw; ++p)
          for (std::size_t c = 0; c < cout; ++c)
            act(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s * ohw + p)) =
                block[c * ohw + p];
        cache.hook_gains[s] = std::move(gains);
      }
    }
    cache.activations.push_back(std::move(act));
    input = &cache.activations.back();
    cin = cout;
    in_side = spatial_[l];
  }

  const std::size_t last_hw = spatial_.back() * spatial_.back();
  cache.pooled.resize(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(b));
  const Matrix& last = cache.activations.back();
  for (std::size_t s = 0; s < b; ++s)
    cache.pooled.col(static_cast<Eigen::Index>(s)) =
        last.middleCols(static_cast<Eigen::Index>(s * last_hw),
                        static_cast<Eigen::Index>(last_hw))
            .rowwise()
            .mean();

  const Matrix wp = param_block(params.encoder, o.proj_w, static_cast<Eigen::Index>(cfg_.embed_dim),
                                static_cast<Eigen::Index>(cin));
  const Eigen::VectorXd bp =
      param_vector(params.encoder, o.proj_b, static_cast<Eigen::Index>(cfg_.embed_dim));
  cache.embeddings = wp * cache.pooled;
  cache.embeddings.colwise() += bp;

  const Matrix wc = param_block(params.classifier, o.cls_w,
                                static_cast<Eigen::Index>(cfg_.num_classes),
                                static_cast<Eigen::Index>(cfg_.embed_dim));
  const Eigen::VectorXd bc =
      param_vector(params.classifier, o.cls_b, static_cast<Eigen::Index>(cfg_.num_classes));
  cache.logits = wc * cache.embeddings;
  cache.logits.colwise() += bc;
  cache.probs = softmax_columns(cache.logits);
  return cache;
}

Gradients Model::backward(const ModelParams& params, const ForwardCache& cache,
                          const Matrix& grad_embeddings, const Matrix& grad_logits) const {
  check_params(params);
  const auto b = static_cast<Eigen::Index>(cache.batch);
  const auto d = static_cast<Eigen::Index>(cfg_.embed_dim);
  const auto k = static_cast<Eigen::Index>(cfg_.num_classes);
  const Offsets o = offsets_for(cfg_);
  Gradients g;
  g.encoder.assign(params.encoder.size(), 0.0);
  g.classifier.assign(params.classifier.size(), 0.0);

  Matrix dz = grad_embeddings.size() ? grad_embeddings : Matrix::Zero(d, b);
  if (dz.rows() != d || dz.cols() != b) throw ShapeMismatch("embedding gradient shape");
  if (grad_logits.size()) {
    if (grad_logits.rows() != k || grad_logits.cols() != b)
      throw ShapeMismatch("logit gradient shape");
    store_block(g.classifier, o.cls_w, grad_logits * cache.embeddings.transpose());
    store_block(g.classifier, o.cls_b, grad_logits.rowwise().sum());
    const Matrix wc = param_block(params.classifier, o.cls_w, k, d);
    dz.noalias() += wc.transpose() * grad_logits;
  }

  const auto c_last = static_cast<Eigen::Index>(cfg_.conv_channels.back());
  store_block(g.encoder, o.proj_w, dz * cache.pooled.transpose());
  store_block(g.encoder, o.proj_b, dz.rowwise().sum());
  const Matrix wp = param_block(params.encoder, o.proj_w, d, c_last);
  const Matrix dpooled = wp.transpose() * dz;

  // Global average pool backward, then conv blocks in reverse.
  const std::size_t nl = cfg_.conv_channels.size();
  const std::size_t last_hw = spatial_.back() * spatial_.back();
  Matrix dact(c_last, static_cast<Eigen::Index>(cache.batch * last_hw));
  for (Eigen::Index s = 0; s < b; ++s)
    for (std::size_t p = 0; p < last_hw; ++p)
      dact.col(s * static_cast<Eigen::Index>(last_hw) + static_cast<Eigen::Index>(p)) =
          dpooled.col(s) / static_cast<double>(last_hw);

  for (std::size_t li = nl; li-- > 0;) {
    const auto cout = static_cast<Eigen::Index>(cfg_.conv_channels[li]);
    const std::size_t cin = li == 0 ? cfg_.in_channels : cfg_.conv_channels[li - 1];
    const Matrix& act = cache.activations[li];
    if (li == 0 && !cache.hook_gains.empty()) {
      const std::size_t ohw = spatial_[0] * spatial_[0];
      for (std::size_t s = 0; s < cache.batch; ++s) {
        const auto& gains = cache.hook_gains[s];
        if (gains.empty()) continue;
        for (std::size_t p = 0; p < ohw; ++p)
          for (Eigen::Index c = 0; c < cout; ++c)
            dact(c, static_cast<Eigen::Index>(s * ohw + p)) *= gains[static_cast<std::size_t>(c)];
      }
    }
    // ReLU mask from the block's own output (recomputed pre-hook for block 1).
    Matrix dpre = dact;
    if (li == 0 && !cache.hook_gains.empty()) {
      const Matrix w =
          param_block(params.encoder, o.conv_w[0], cout, static_cast<Eigen::Index>(cin * kTaps));
      const Eigen::VectorXd bias = param_vector(params.encoder, o.conv_b[0], cout);
      Matrix pre = w * cache.cols[0];
      pre.colwise() += bias;
      dpre = (pre.array() > 0.0).select(dact, 0.0);
    } else {
      dpre = (act.array() > 0.0).select(dact, 0.0);
    }
    store_block(g.encoder, o.conv_w[li], dpre * cache.cols[li].transpose());
    store_block(g.encoder, o.conv_b[li], dpre.rowwise().sum());
    if (li == 0) break;
    const Matrix w =
        param_block(params.encoder, o.conv_w[li], cout, static_cast<Eigen::Index>(cin * kTaps));
    const Matrix dcol = w.transpose() * dpre;
    const std::size_t in_side = spatial_[li - 1];
    dact = col2im(dcol, cin, cache.batch, in_side);
  }
  return g;
}

std::vector<int> Model::predict(const ModelParams& params, std::span<const ImageTensor> batch,
                                std::size_t chunk) const {
  std::vector<int> out;
  out.reserve(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const auto part = batch.subspan(start, std::min(chunk, batch.size() - start));
    const ForwardCache c = forward(params, part);
    for (Eigen::Index j = 0; j < c.logits.cols(); ++j) {
      Eigen::Index arg = 0;
      c.logits.col(j).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

std::vector<Embedding> to_embeddings(const Matrix& embeddings) {
  std::vector<Embedding> out;
  for (Eigen::Index j = 0; j < embeddings.cols(); ++j) {
    Embedding e;
    e.vector.assign(embeddings.col(j).data(), embeddings.col(j).data() + embeddings.rows());
    e.l2_norm = embeddings.col(j).norm();
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Prediction> to_predictions(const Matrix& logits, const Matrix& probs) {
  std::vector<Prediction> out;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Prediction p;
    p.logits.assign(logits.col(j).data(), logits.col(j).data() + logits.rows());
    p.probs.assign(probs.col(j).data(), probs.col(j).data() + probs.rows());
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "linear"; }

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "linear") return LrSchedule::Linear;
  if (s == "cosine") return LrSchedule::Cosine;
  throw InvalidArgument("unknown lr schedule '" + std::string(s) + "'");
}

OptimizerState make_optimizer(const ModelParams& params, double lr_start, double lr_end,
                              LrSchedule schedule, std::uint64_t total_steps) {
  OptimizerState st;
  st.first_moment.assign(params.size(), 0.0);
  st.second_moment.assign(params.size(), 0.0);
  st.lr_start = lr_start;
  st.lr_end = lr_end;
  st.schedule = schedule;
  st.total_steps = std::max<std::uint64_t>(total_steps, 1);
  return st;
}

double lr_at(const OptimizerState& state, std::uint64_t step, std::uint64_t total_steps) {
  const double t = total_steps == 0
                       ? 1.0
                       : std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  if (state.schedule == LrSchedule::Linear)
    return state.lr_start + (state.lr_end - state.lr_start) * t;
  return state.lr_end +
         (state.lr_start - state.lr_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double adam_step(OptimizerState& st, ModelParams& params, const Gradients& grads) {
  const std::size_t ne = params.encoder.size();
  if (grads.encoder.size() != ne || grads.classifier.size() != params.classifier.size() ||
      st.first_moment.size() != params.size())
    throw ShapeMismatch("optimizer / gradient / parameter shapes disagree");
  const double lr = lr_at(st, st.step_count, st.total_steps);
  ++st.step_count;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::size_t base) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& m = st.first_moment[base + i];
      double& v = st.second_moment[base + i];
      m = st.beta1 * m + (1.0 - st.beta1) * g[i];
      v = st.beta2 * v + (1.0 - st.beta2) * g[i] * g[i];
      p[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps);
    }
  };
  update(params.encoder, grads.encoder, 0);
  update(params.classifier, grads.classifier, ne);
#ifndef NDEBUG
  if (!params.all_finite()) throw NonFiniteLoss("parameters became non-finite after Adam step");
#endif
  return lr;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'S', 'T', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::span<const unsigned char> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("truncated checkpoint");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace

std::vector<unsigned char> encode_params(const ModelParams& params) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, params.layout.hash());
  put_le<std::uint64_t>(out, params.encoder.size());
  put_le<std::uint64_t>(out, params.classifier.size());
  for (const auto* vec : {&params.encoder, &params.classifier})
    for (double v : *vec) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ModelParams decode_params(std::span<const unsigned char> bytes, const ModelLayout& expected) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a fedstain checkpoint");
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto hash = get_le<std::uint64_t>(bytes, pos);
  if (hash != expected.hash()) throw ShapeMismatch("checkpoint layout does not match the model");
  const auto ne = get_le<std::uint64_t>(bytes, pos);
  const auto nc = get_le<std::uint64_t>(bytes, pos);
  if (ne != expected.encoder_size() || nc != expected.classifier_size())
    throw ShapeMismatch("checkpoint parameter counts do not match the model");
  ModelParams p;
  p.layout = expected;
  p.encoder.resize(ne);
  p.classifier.resize(nc);
  for (auto* vec : {&p.encoder, &p.classifier})
    for (double& v : *vec) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const auto bytes = encode_params(params);
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelLayout& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_params(bytes, expected);
}

}  // namespace fedstain
