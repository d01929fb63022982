#include "ctglip/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "ctglip/common.hpp"

namespace ctglip::encoders {
namespace {

// Valid output range [lo, hi) along one axis for kernel offset d.
inline void axis_range(int extent, int d, int& lo, int& hi) {
  lo = std::max(0, -d);
  hi = std::min(extent, extent - d);
}

using ColMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Visits every kernel tap of a "same" convolution: fn(tap, shift, rows) where
// rows lists the contiguous [begin, end) output ranges whose input lies at
// output + shift.
template <typename Fn>
void for_each_tap(const Shape& s, int k, Fn&& fn) {
  const int p = k / 2;
  int tap = 0;
  for (int kz = 0; kz < k; ++kz) {
    int z0, z1;
    axis_range(s.depth, kz - p, z0, z1);
    for (int ky = 0; ky < k; ++ky) {
      int y0, y1;
      axis_range(s.height, ky - p, y0, y1);
      for (int kx = 0; kx < k; ++kx, ++tap) {
        int x0, x1;
        axis_range(s.width, kx - p, x0, x1);
        const std::ptrdiff_t shift =
            (static_cast<std::ptrdiff_t>(kz - p) * s.height + (ky - p)) * s.width + (kx - p);
        fn(tap, shift, z0, z1, y0, y1, x0, x1);
      }
    }
  }
}

// Per-thread scratch so the large patch matrices are not reallocated on every
// call. Eigen-owned storage is always aligned, which keeps the vectorised
// summation order (and so every bit of the result) independent of the heap.
struct ConvScratch {
  ColMatrix cols, grad_out, d_cols;
};

ConvScratch& scratch() {
  thread_local ConvScratch s;
  return s;
}

// Patch matrix (V x cin*k^3), column (ci, tap) holds the input shifted by that tap.
const ColMatrix& im2col(const Shape& s, int cin, int k, std::span<const double> in) {
  const std::size_t V = s.voxels();
  const int taps = k * k * k;
  ColMatrix& cols = scratch().cols;
  cols.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(cin) * taps);
  cols.setZero();
  for (int ci = 0; ci < cin; ++ci) {
    const double* ic = in.data() + static_cast<std::size_t>(ci) * V;
    for_each_tap(s, k, [&](int tap, std::ptrdiff_t shift, int z0, int z1, int y0, int y1, int x0, int x1) {
      double* dst = cols.col(static_cast<Eigen::Index>(ci) * taps + tap).data();
      for (int z = z0; z < z1; ++z) {
        for (int y = y0; y < y1; ++y) {
          const std::size_t row = s.index(z, y, 0);
          const double* src = ic + static_cast<std::ptrdiff_t>(row) + shift;
          std::copy(src + x0, src + x1, dst + row + x0);
        }
      }
    });
  }
  return cols;
}

void conv_forward(const ParamLayout::Conv& L, std::span<const double> params, const Shape& s,
                  std::span<const double> in, std::span<double> out) {
  const auto V = static_cast<Eigen::Index>(s.voxels());
  const int taps = L.kernel * L.kernel * L.kernel;
  const ColMatrix& cols = im2col(s, L.cin, L.kernel, in);
  const RowMatrix w = Eigen::Map<const RowMatrix>(params.data() + L.w, L.cout, static_cast<Eigen::Index>(L.cin) * taps);
  ColMatrix& o = scratch().grad_out;
  o.noalias() = cols * w.transpose();
  for (int co = 0; co < L.cout; ++co) {
    const double b = params[L.b + static_cast<std::size_t>(co)];
    const double* src = o.col(co).data();
    double* dst = out.data() + static_cast<std::size_t>(co) * static_cast<std::size_t>(V);
    // Written so that NaN survives the ReLU and reaches the divergence check.
    for (Eigen::Index i = 0; i < V; ++i) {
      const double v = src[i] + b;
      dst[i] = v <= 0.0 ? 0.0 : v;
    }
  }
}

// g: gradient w.r.t. the conv pre-activation. Accumulates weight/bias grads and,
// when d_in is non-empty, the gradient w.r.t. the layer input.
void conv_backward(const ParamLayout::Conv& L, std::span<const double> params, const Shape& s,
                   std::span<const double> in, std::span<const double> g, std::span<double> grad,
                   std::span<double> d_in) {
  const std::size_t V = s.voxels();
  const int taps = L.kernel * L.kernel * L.kernel;
  const auto width = static_cast<Eigen::Index>(L.cin) * taps;
  const ColMatrix& cols = im2col(s, L.cin, L.kernel, in);
  ColMatrix& G = scratch().grad_out;
  G = Eigen::Map<const ColMatrix>(g.data(), static_cast<Eigen::Index>(V), L.cout);
  const RowMatrix gw = G.transpose() * cols;
  for (int co = 0; co < L.cout; ++co) {
    double* dst = grad.data() + L.w + static_cast<std::size_t>(co) * static_cast<std::size_t>(width);
    for (Eigen::Index j = 0; j < width; ++j) dst[j] += gw(co, j);
    double acc = 0.0;
    for (std::size_t i = 0; i < V; ++i) acc += g[static_cast<std::size_t>(co) * V + i];
    grad[L.b + static_cast<std::size_t>(co)] += acc;
  }
  if (d_in.empty()) return;

  const RowMatrix w = Eigen::Map<const RowMatrix>(params.data() + L.w, L.cout, width);
  ColMatrix& d_cols = scratch().d_cols;
  d_cols.noalias() = G * w;
  for (int ci = 0; ci < L.cin; ++ci) {
    double* dic = d_in.data() + static_cast<std::size_t>(ci) * V;
    for_each_tap(s, L.kernel, [&](int tap, std::ptrdiff_t shift, int z0, int z1, int y0, int y1, int x0, int x1) {
      const double* src = d_cols.col(static_cast<Eigen::Index>(ci) * taps + tap).data();
      for (int z = z0; z < z1; ++z) {
        for (int y = y0; y < y1; ++y) {
          const std::size_t row = s.index(z, y, 0);
          double* dst = dic + static_cast<std::ptrdiff_t>(row) + shift;
          for (int x = x0; x < x1; ++x) dst[x] += src[row + x];
        }
      }
    });
  }
}

void fill_normal(std::span<double> dst, double stddev, Rng& rng) {
  for (auto& v : dst) v = stddev * rng.normal();
}

}  // namespace

void EncoderConfig::validate() const {
  if (channels.size() < 2) throw ValidationError("encoder.channels needs an input entry and at least one layer");
  if (channels.front() != 1) throw ValidationError("encoder.channels[0] must be 1 (single-channel volumes)");
  for (int c : channels) {
    if (c <= 0) throw ValidationError("encoder.channels entries must be positive");
  }
  if (kernel <= 0 || kernel % 2 == 0) throw ValidationError("encoder.kernel must be a positive odd integer");
  if (embed_dim < 2) throw ValidationError("encoder.d must be at least 2");
  if (hidden <= 0) throw ValidationError("encoder.hidden must be positive");
  if (num_classes < 2) throw ValidationError("encoder.num_classes must be at least 2");
}

ParamLayout::ParamLayout(const EncoderConfig& cfg) {
  cfg.validate();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < cfg.channels.size(); ++l) {
    Conv c{cfg.channels[l], cfg.channels[l + 1], cfg.kernel, 0, 0};
    c.w = off;
    off += static_cast<std::size_t>(c.cin) * c.cout * c.kernel * c.kernel * c.kernel;
    c.b = off;
    off += static_cast<std::size_t>(c.cout);
    conv.push_back(c);
  }
  const auto C = static_cast<std::size_t>(cfg.feature_channels());
  const auto H = static_cast<std::size_t>(cfg.hidden);
  const auto D = static_cast<std::size_t>(cfg.embed_dim);
  const auto K = static_cast<std::size_t>(cfg.num_classes);
  head_w1 = off;
  off += H * C;
  head_b1 = off;
  off += H;
  head_w2 = off;
  off += D * H;
  head_b2 = off;
  off += D;
  seg_w = off;
  off += K * C;
  seg_b = off;
  off += K;
  total = off;
}

std::vector<double> ProjectionHead::forward(std::span<const double> x, Cache* cache) const {
  std::vector<double> pre(static_cast<std::size_t>(hidden));
  for (int j = 0; j < hidden; ++j) {
    const double* row = w1.data() + static_cast<std::size_t>(j) * in;
    double acc = b1[static_cast<std::size_t>(j)];
    for (int i = 0; i < in; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
    pre[static_cast<std::size_t>(j)] = acc;
  }
  std::vector<double> y(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    const double* row = w2.data() + static_cast<std::size_t>(o) * hidden;
    double acc = b2[static_cast<std::size_t>(o)];
    for (int j = 0; j < hidden; ++j) {
      const double h = pre[static_cast<std::size_t>(j)];
      if (!(h <= 0.0)) acc += row[j] * h;
    }
    y[static_cast<std::size_t>(o)] = acc;
  }
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->hidden_pre = pre;
    cache->output = y;
  }
  return y;
}

std::vector<double> ProjectionHead::backward(const Cache& cache, std::span<const double> d_out,
                                             std::span<double> grad, const ParamLayout& layout) const {
  double* gw1 = grad.data() + layout.head_w1;
  double* gb1 = grad.data() + layout.head_b1;
  double* gw2 = grad.data() + layout.head_w2;
  double* gb2 = grad.data() + layout.head_b2;
  std::vector<double> d_hidden(static_cast<std::size_t>(hidden), 0.0);
  for (int o = 0; o < out; ++o) {
    const double g = d_out[static_cast<std::size_t>(o)];
    gb2[o] += g;
    if (g == 0.0) continue;
    const double* row = w2.data() + static_cast<std::size_t>(o) * hidden;
    double* grow = gw2 + static_cast<std::size_t>(o) * hidden;
    for (int j = 0; j < hidden; ++j) {
      const double h = cache.hidden_pre[static_cast<std::size_t>(j)];
      if (h > 0.0) {
        grow[j] += g * h;
        d_hidden[static_cast<std::size_t>(j)] += row[j] * g;
      }
    }
  }
  std::vector<double> d_in(static_cast<std::size_t>(in), 0.0);
  for (int j = 0; j < hidden; ++j) {
    if (cache.hidden_pre[static_cast<std::size_t>(j)] <= 0.0) continue;
    const double g = d_hidden[static_cast<std::size_t>(j)];
    gb1[j] += g;
    const double* row = w1.data() + static_cast<std::size_t>(j) * in;
    double* grow = gw1 + static_cast<std::size_t>(j) * in;
    for (int i = 0; i < in; ++i) {
      grow[i] += g * cache.input[static_cast<std::size_t>(i)];
      d_in[static_cast<std::size_t>(i)] += row[i] * g;
    }
  }
  return d_in;
}

Model::Model(EncoderConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)), layout_(cfg_) {
  params_.assign(layout_.total, 0.0);
  Rng rng(mix_seed(init_seed, 0x1a1dULL));
  std::span<double> p(params_);
  for (const auto& c : layout_.conv) {
    const double fan_in = static_cast<double>(c.cin) * c.kernel * c.kernel * c.kernel;
    fill_normal(p.subspan(c.w, c.b - c.w), std::sqrt(2.0 / fan_in), rng);
  }
  const double C = cfg_.feature_channels();
  fill_normal(p.subspan(layout_.head_w1, layout_.head_b1 - layout_.head_w1), std::sqrt(2.0 / C), rng);
  fill_normal(p.subspan(layout_.head_w2, layout_.head_b2 - layout_.head_w2), std::sqrt(1.0 / cfg_.hidden), rng);
  fill_normal(p.subspan(layout_.seg_w, layout_.seg_b - layout_.seg_w), std::sqrt(1.0 / C), rng);
}

Model::Model(EncoderConfig cfg, std::vector<double> params)
    : cfg_(std::move(cfg)), layout_(cfg_), params_(std::move(params)) {
  if (params_.size() != layout_.total) {
    throw ValidationError("model: expected " + std::to_string(layout_.total) + " parameters, got " +
                          std::to_string(params_.size()));
  }
}

ProjectionHead Model::head() const {
  ProjectionHead h;
  h.in = cfg_.feature_channels();
  h.hidden = cfg_.hidden;
  h.out = cfg_.embed_dim;
  std::span<const double> p(params_);
  h.w1 = p.subspan(layout_.head_w1, layout_.head_b1 - layout_.head_w1);
  h.b1 = p.subspan(layout_.head_b1, layout_.head_w2 - layout_.head_b1);
  h.w2 = p.subspan(layout_.head_w2, layout_.head_b2 - layout_.head_w2);
  h.b2 = p.subspan(layout_.head_b2, layout_.seg_w - layout_.head_b2);
  return h;
}

FeatureMap Model::encode(const Volume& v, VisionTrace* trace) const {
  const Shape& s = v.shape;
  if (s.voxels() == 0 || v.voxels.size() != s.voxels()) {
    throw ValidationError("encode_volume: volume shape does not match its voxel count");
  }
  std::vector<double> cur(v.voxels.begin(), v.voxels.end());
  for (double x : cur) {
    if (!std::isfinite(x)) throw ValidationError("encode_volume: non-finite voxel intensity");
  }
  if (trace) trace->acts.clear();
  for (const auto& L : layout_.conv) {
    std::vector<double> next(static_cast<std::size_t>(L.cout) * s.voxels());
    conv_forward(L, params_, s, cur, next);
    if (trace) trace->acts.push_back(std::move(cur));
    cur = std::move(next);
  }
  FeatureMap fm;
  fm.channels = cfg_.feature_channels();
  fm.shape = s;
  if (trace) trace->acts.push_back(cur);
  fm.values = std::move(cur);
  return fm;
}

void Model::backward_encoder(const VisionTrace& trace, const Shape& shape, std::span<const double> d_features,
                             std::span<double> grad) const {
  std::vector<double> d_out(d_features.begin(), d_features.end());
  for (std::size_t l = layout_.conv.size(); l-- > 0;) {
    const auto& out = trace.acts[l + 1];
    for (std::size_t i = 0; i < d_out.size(); ++i) {
      if (out[i] <= 0.0) d_out[i] = 0.0;
    }
    std::vector<double> d_in;
    if (l > 0) d_in.assign(trace.acts[l].size(), 0.0);
    conv_backward(layout_.conv[l], params_, shape, trace.acts[l], d_out, grad, d_in);
    d_out = std::move(d_in);
  }
}

FeatureMap Model::segment(const FeatureMap& fm) const {
  const int K = cfg_.num_classes;
  const std::size_t V = fm.shape.voxels();
  FeatureMap logits;
  logits.channels = K;
  logits.shape = fm.shape;
  logits.values.assign(static_cast<std::size_t>(K) * V, 0.0);
  const double* w = params_.data() + layout_.seg_w;
  const double* b = params_.data() + layout_.seg_b;
  for (int k = 0; k < K; ++k) {
    auto out = logits.channel(k);
    std::fill(out.begin(), out.end(), b[k]);
    for (int c = 0; c < fm.channels; ++c) {
      const double wv = w[static_cast<std::size_t>(k) * fm.channels + c];
      const auto in = fm.channel(c);
      for (std::size_t v = 0; v < V; ++v) out[v] += wv * in[v];
    }
  }
  return logits;
}

void Model::backward_segment(const FeatureMap& fm, const FeatureMap& d_logits, std::span<double> d_features,
                             std::span<double> grad) const {
  const int K = cfg_.num_classes;
  const std::size_t V = fm.shape.voxels();
  const double* w = params_.data() + layout_.seg_w;
  double* gw = grad.data() + layout_.seg_w;
  double* gb = grad.data() + layout_.seg_b;
  for (int k = 0; k < K; ++k) {
    const auto g = d_logits.channel(k);
    double bsum = 0.0;
    for (std::size_t v = 0; v < V; ++v) bsum += g[v];
    gb[k] += bsum;
    for (int c = 0; c < fm.channels; ++c) {
      const auto in = fm.channel(c);
      const double wv = w[static_cast<std::size_t>(k) * fm.channels + c];
      double* dst = d_features.data() + static_cast<std::size_t>(c) * V;
      double acc = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        acc += g[v] * in[v];
        dst[v] += wv * g[v];
      }
      gw[static_cast<std::size_t>(k) * fm.channels + c] += acc;
    }
  }
}

std::vector<PooledRegion> pool_regions(const FeatureMap& fm, const OrganMask& mask) {
  if (!(fm.shape == mask.shape) || mask.labels.size() != mask.shape.voxels()) {
    throw ArgumentError("organ_pool: feature map and mask are not spatially aligned");
  }
  const auto ids = mask.organ_ids();
  std::vector<int> slot(65536, -1);
  std::vector<PooledRegion> regions(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    slot[static_cast<std::size_t>(ids[r])] = static_cast<int>(r);
    regions[r].organ_id = ids[r];
    regions[r].mean.assign(static_cast<std::size_t>(fm.channels), 0.0);
  }
  for (auto l : mask.labels) {
    if (l) ++regions[static_cast<std::size_t>(slot[l])].count;
  }
  const std::size_t V = mask.labels.size();
  for (int c = 0; c < fm.channels; ++c) {
    const auto ch = fm.channel(c);
    for (std::size_t v = 0; v < V; ++v) {
      const auto l = mask.labels[v];
      if (l) regions[static_cast<std::size_t>(slot[l])].mean[static_cast<std::size_t>(c)] += ch[v];
    }
  }
  for (auto& r : regions) {
    for (auto& m : r.mean) m /= static_cast<double>(r.count);
  }
  return regions;
}

std::vector<double> global_pool(const FeatureMap& fm) {
  std::vector<double> out(static_cast<std::size_t>(fm.channels), 0.0);
  const double n = static_cast<double>(fm.shape.voxels());
  for (int c = 0; c < fm.channels; ++c) {
    double acc = 0.0;
    for (double v : fm.channel(c)) acc += v;
    out[static_cast<std::size_t>(c)] = acc / n;
  }
  return out;
}

void pool_regions_backward(const OrganMask& mask, const std::vector<PooledRegion>& regions,
                           const std::vector<std::vector<double>>& d_means, FeatureMap& d_fm) {
  std::vector<int> slot(65536, -1);
  for (std::size_t r = 0; r < regions.size(); ++r) slot[static_cast<std::size_t>(regions[r].organ_id)] = static_cast<int>(r);
  const std::size_t V = mask.labels.size();
  for (int c = 0; c < d_fm.channels; ++c) {
    auto dst = d_fm.channel(c);
    for (std::size_t v = 0; v < V; ++v) {
      const auto l = mask.labels[v];
      if (!l || slot[l] < 0) continue;
      const auto& reg = regions[static_cast<std::size_t>(slot[l])];
      dst[v] += d_means[static_cast<std::size_t>(slot[l])][static_cast<std::size_t>(c)] / static_cast<double>(reg.count);
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0.0) || !std::isfinite(n)) throw DivergenceError("normalize: zero or non-finite vector");
  for (auto& x : v) x /= n;
  return n;
}

std::vector<double> normalize_backward(std::span<const double> y, double norm, std::span<const double> dy) {
  const double proj = dot(y, dy);
  std::vector<double> dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (dy[i] - y[i] * proj) / norm;
  return dx;
}

FeatureMap encode_volume(const Model& model, const Volume& v) { return model.encode(v); }

std::vector<OrganEmbedding> organ_pool(const FeatureMap& fm, const OrganMask& mask, const ProjectionHead& head) {
  std::vector<OrganEmbedding> out;
  for (const auto& r : pool_regions(fm, mask)) {
    auto y = head.forward(r.mean);
    normalize(y);
    out.push_back({r.organ_id, std::move(y)});
  }
  return out;
}

std::vector<std::string> stub_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string raw;
  while (in >> raw) {
    std::size_t b = 0;
    std::size_t e = raw.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(raw[e - 1]))) --e;
    if (b == e) continue;
    std::string t = raw.substr(b, e - b);
    for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    tokens.push_back(std::move(t));
  }
  return tokens;
}

StubTextEncoder::StubTextEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 2) throw ArgumentError("stub text encoder: d must be at least 2");
}

std::vector<Embedding> StubTextEncoder::encode(const std::vector<std::string>& texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  std::vector<double> dir(static_cast<std::size_t>(dim_));
  for (const auto& text : texts) {
    const auto tokens = stub_tokens(text);
    if (tokens.empty()) throw ArgumentError("stub text encoder: text has no tokens: '" + text + "'");
    Embedding e(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& t : tokens) {
      Rng rng(mix_seed(seed_, fnv1a(t)));
      for (auto& x : dir) x = rng.normal();
      normalize(dir);
      for (std::size_t i = 0; i < e.size(); ++i) e[i] += dir[i];
    }
    normalize(e);
    out.push_back(std::move(e));
  }
  return out;
}

std::string StubTextEncoder::state_bytes() const {
  std::string s(sizeof(int) + sizeof(std::uint64_t), '\0');
  std::memcpy(s.data(), &dim_, sizeof(int));
  std::memcpy(s.data() + sizeof(int), &seed_, sizeof(std::uint64_t));
  return s;
}

std::vector<Embedding> stub_encode_text(const std::vector<std::string>& texts, int d, std::uint64_t seed) {
  return StubTextEncoder(d, seed).encode(texts);
}

PrecomputedTextEncoder::PrecomputedTextEncoder(std::unordered_map<std::string, Embedding> table, int dim)
    : table_(std::move(table)), dim_(dim) {
  for (auto& [text, e] : table_) {
    if (static_cast<int>(e.size()) != dim_) {
      throw ValidationError("precomputed embeddings: '" + text + "' has dimension " + std::to_string(e.size()) +
                            ", expected " + std::to_string(dim_));
    }
    normalize(e);
  }
}

PrecomputedTextEncoder::PrecomputedTextEncoder(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
    for (const auto& [text, vec] : doc.items()) {
      auto e = vec.get<Embedding>();
      if (dim_ == 0) dim_ = static_cast<int>(e.size());
      table_.emplace(text, std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  *this = PrecomputedTextEncoder(std::move(table_), dim_);
}

std::vector<Embedding> PrecomputedTextEncoder::encode(const std::vector<std::string>& texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const auto it = table_.find(t);
    if (it == table_.end()) throw ValidationError("precomputed embeddings: no entry for '" + t + "'");
    out.push_back(it->second);
  }
  return out;
}

std::string PrecomputedTextEncoder::state_bytes() const {
  std::vector<std::string> keys;
  for (const auto& [k, _] : table_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  std::string s;
  for (const auto& k : keys) {
    s += k;
    s.push_back('\0');
    const auto& e = table_.at(k);
    s.append(reinterpret_cast<const char*>(e.data()), e.size() * sizeof(double));
  }
  return s;
}

}  // namespace ctglip::encoders
