#include "imlx/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <stdexcept>

namespace imlx::nn {

namespace {

// softplus(x) = log(1 + e^x), safe for |x| up to ~1e4 and beyond
inline double softplus(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline float relu(float x) { return x > 0.0f ? x : 0.0f; }

// out[f] plane += conv of in[c] planes, 3x3 kernel, zero padding, stride 1.
// Shift-accumulate: one SAXPY-style pass per (c, dy, dx) tap. Scalar is float
// in the training path and double in the finite-difference evaluator.
template <typename Scalar>
void conv3x3_forward(const Scalar* in, int channels, int height, int width,
                     const float* kernels, const float* bias, int filters, Scalar* out) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int f = 0; f < filters; ++f) {
        Scalar* o = out + f * plane;
        std::fill(o, o + plane, static_cast<Scalar>(bias[f]));
        for (int c = 0; c < channels; ++c) {
            const Scalar* src = in + c * plane;
            const float* k = kernels + (static_cast<std::size_t>(f) * channels + c) * 9;
            for (int dy = 0; dy < 3; ++dy) {
                const int y0 = std::max(0, 1 - dy);
                const int y1 = std::min(height - 1, height - dy); // inclusive
                for (int dx = 0; dx < 3; ++dx) {
                    const Scalar w = static_cast<Scalar>(k[dy * 3 + dx]);
                    if (w == Scalar(0)) continue;
                    const int x0 = std::max(0, 1 - dx);
                    const int x1 = std::min(width - 1, width - dx);
                    for (int y = y0; y <= y1; ++y) {
                        Scalar* __restrict__ orow = o + static_cast<std::size_t>(y) * width;
                        const Scalar* __restrict__ srow =
                            src + static_cast<std::size_t>(y + dy - 1) * width + (dx - 1);
                        for (int x = x0; x <= x1; ++x) orow[x] += w * srow[x];
                    }
                }
            }
        }
    }
}

// dK[f,c,dy,dx] += sum over valid (y,x) of dz[f,y,x] * in[c,y+dy-1,x+dx-1]
// din[c] += transposed pass with the kernel weights
// Row products accumulate in float, rows combine in double.
void conv3x3_backward(const float* in, int channels, int height, int width,
                      const float* kernels, int filters, const float* dout,
                      float* dkernels, float* dbias, float* din) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int f = 0; f < filters; ++f) {
        const float* dz = dout + f * plane;
        double bsum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bsum += dz[i];
        dbias[f] += static_cast<float>(bsum);
        for (int c = 0; c < channels; ++c) {
            const float* src = in + c * plane;
            float* dsrc = din ? din + c * plane : nullptr;
            const std::size_t kbase = (static_cast<std::size_t>(f) * channels + c) * 9;
            for (int dy = 0; dy < 3; ++dy) {
                const int y0 = std::max(0, 1 - dy);
                const int y1 = std::min(height - 1, height - dy);
                for (int dx = 0; dx < 3; ++dx) {
                    const int x0 = std::max(0, 1 - dx);
                    const int x1 = std::min(width - 1, width - dx);
                    double ksum = 0.0;
                    const float w = kernels[kbase + dy * 3 + dx];
                    for (int y = y0; y <= y1; ++y) {
                        const float* __restrict__ dzrow = dz + static_cast<std::size_t>(y) * width;
                        const float* __restrict__ srow =
                            src + static_cast<std::size_t>(y + dy - 1) * width + (dx - 1);
                        float rsum = 0.0f;
                        for (int x = x0; x <= x1; ++x) rsum += dzrow[x] * srow[x];
                        ksum += rsum;
                    }
                    dkernels[kbase + dy * 3 + dx] += static_cast<float>(ksum);
                    if (dsrc) {
                        for (int y = y0; y <= y1; ++y) {
                            const float* __restrict__ dzrow =
                                dz + static_cast<std::size_t>(y) * width;
                            float* __restrict__ drow =
                                dsrc + static_cast<std::size_t>(y + dy - 1) * width + (dx - 1);
                            for (int x = x0; x <= x1; ++x) drow[x] += w * dzrow[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename Scalar>
void maxpool2_forward(const Scalar* in, int channels, int height, int width, Scalar* out,
                      std::int32_t* idx) {
    const int oh = height / 2, ow = width / 2;
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int c = 0; c < channels; ++c) {
        const Scalar* src = in + c * plane;
        Scalar* o = out + static_cast<std::size_t>(c) * oh * ow;
        std::int32_t* id = idx + static_cast<std::size_t>(c) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int base = (2 * y) * width + 2 * x;
                int best = base;
                Scalar bv = src[base];
                if (src[base + 1] > bv) { bv = src[base + 1]; best = base + 1; }
                if (src[base + width] > bv) { bv = src[base + width]; best = base + width; }
                if (src[base + width + 1] > bv) { bv = src[base + width + 1]; best = base + width + 1; }
                o[y * ow + x] = bv;
                id[y * ow + x] = best;
            }
        }
    }
}

// forward plus loss evaluated entirely in Scalar precision, returning the
// branch signature (ReLU gates, pool argmax) alongside. The double
// instantiation is the finite-difference evaluator: it keeps rounding noise
// far below the 1e-3 tolerance even for coordinates with tiny gradients.
struct LossEval {
    double loss = 0.0;
    std::uint64_t branches = 0;
};

template <typename Scalar>
LossEval eval_loss_branches(const RefNetParams& params, const Tensor& batch,
                            const Tensor& targets, const LossConfig& cfg, Mode mode,
                            std::uint64_t dropout_seed) {
    const int N = batch.dim(0);
    const int F1 = params.conv1_filters, F2 = params.conv2_filters;
    const int D = params.head_dim, L = params.label_count;
    const int S = params.input_side, S2 = S / 2, S4 = S / 4;
    const std::size_t in_plane = static_cast<std::size_t>(S) * S;
    const std::size_t mid_plane = static_cast<std::size_t>(S2) * S2;

    std::uint64_t sig = 1469598103934665603ULL;
    auto mix = [&sig](std::uint64_t v) {
        sig ^= v;
        sig *= 1099511628211ULL;
    };

    Rng rng(dropout_seed);
    const Scalar keep_scale =
        params.dropout > 0.0f ? Scalar(1) / (Scalar(1) - Scalar(params.dropout)) : Scalar(1);

    std::vector<Scalar> x(in_plane), a1(static_cast<std::size_t>(F1) * in_plane);
    std::vector<Scalar> p1(static_cast<std::size_t>(F1) * mid_plane);
    std::vector<std::int32_t> idx1(p1.size());
    std::vector<Scalar> a2(static_cast<std::size_t>(F2) * mid_plane);
    std::vector<Scalar> p2(static_cast<std::size_t>(F2) * S4 * S4);
    std::vector<std::int32_t> idx2(p2.size());

    double loss = 0.0;
    const double inv = 1.0 / (static_cast<double>(N) * L);
    for (int n = 0; n < N; ++n) {
        const float* src = batch.ptr() + static_cast<std::size_t>(n) * in_plane;
        for (std::size_t i = 0; i < in_plane; ++i) x[i] = static_cast<Scalar>(src[i]);
        conv3x3_forward(x.data(), 1, S, S, params.conv1_w.data(), params.conv1_b.data(), F1,
                        a1.data());
        for (auto& v : a1) {
            mix(v > Scalar(0));
            if (v < Scalar(0)) v = Scalar(0);
        }
        maxpool2_forward(a1.data(), F1, S, S, p1.data(), idx1.data());
        for (auto i : idx1) mix(static_cast<std::uint64_t>(i));
        conv3x3_forward(p1.data(), F1, S2, S2, params.conv2_w.data(), params.conv2_b.data(), F2,
                        a2.data());
        for (auto& v : a2) {
            mix(v > Scalar(0));
            if (v < Scalar(0)) v = Scalar(0);
        }
        maxpool2_forward(a2.data(), F2, S2, S2, p2.data(), idx2.data());
        for (auto i : idx2) mix(static_cast<std::uint64_t>(i));

        const double inv_cells = 1.0 / (static_cast<double>(S4) * S4);
        std::vector<double> gap(F2);
        for (int f = 0; f < F2; ++f) {
            double sum = 0.0;
            const Scalar* plane = p2.data() + static_cast<std::size_t>(f) * S4 * S4;
            for (int i = 0; i < S4 * S4; ++i) sum += static_cast<double>(plane[i]);
            gap[f] = sum * inv_cells;
        }
        std::vector<double> hidden(D);
        for (int d = 0; d < D; ++d) {
            double acc = params.fc1_b[d];
            const float* row = params.fc1_w.data() + static_cast<std::size_t>(d) * F2;
            for (int f = 0; f < F2; ++f) acc += static_cast<double>(row[f]) * gap[f];
            mix(acc > 0.0);
            hidden[d] = acc > 0.0 ? acc : 0.0;
        }
        if (mode == Mode::train && params.dropout > 0.0f) {
            for (int d = 0; d < D; ++d)
                hidden[d] *= rng.uniform() < params.dropout ? 0.0 : static_cast<double>(keep_scale);
        }
        for (int l = 0; l < L; ++l) {
            double z = params.fc2_b[l];
            const float* row = params.fc2_w.data() + static_cast<std::size_t>(l) * D;
            for (int d = 0; d < D; ++d) z += static_cast<double>(row[d]) * hidden[d];
            const double y = targets[static_cast<std::size_t>(n) * L + l];
            const double w = cfg.positive_weights[l];
            loss += w * y * softplus(-z) + (1.0 - y) * softplus(z);
        }
    }
    return {loss * inv, sig};
}

} // namespace

RefNetParams RefNetParams::make(int f1, int f2, int head_dim, int label_count, int input_side,
                                float dropout) {
    RefNetParams p;
    p.conv1_filters = f1;
    p.conv2_filters = f2;
    p.head_dim = head_dim;
    p.label_count = label_count;
    p.input_side = input_side;
    p.dropout = dropout;
    p.conv1_w.assign(static_cast<std::size_t>(f1) * 9, 0.0f);
    p.conv1_b.assign(f1, 0.0f);
    p.conv2_w.assign(static_cast<std::size_t>(f2) * f1 * 9, 0.0f);
    p.conv2_b.assign(f2, 0.0f);
    p.fc1_w.assign(static_cast<std::size_t>(head_dim) * f2, 0.0f);
    p.fc1_b.assign(head_dim, 0.0f);
    p.fc2_w.assign(static_cast<std::size_t>(label_count) * head_dim, 0.0f);
    p.fc2_b.assign(label_count, 0.0f);
    p.validate();
    return p;
}

void RefNetParams::validate() const {
    if (conv1_filters < 1 || conv2_filters < 1 || head_dim < 1 || label_count < 1)
        throw std::invalid_argument("RefNetParams: F1, F2, D, L must all be >= 1");
    if (!(dropout >= 0.0f && dropout < 1.0f))
        throw std::invalid_argument("RefNetParams: dropout must be in [0,1)");
    if (input_side < 4 || input_side % 4 != 0)
        throw std::invalid_argument("RefNetParams: input side must be divisible by 4");
    if (conv1_w.size() != static_cast<std::size_t>(conv1_filters) * 9 ||
        conv1_b.size() != static_cast<std::size_t>(conv1_filters) ||
        conv2_w.size() != static_cast<std::size_t>(conv2_filters) * conv1_filters * 9 ||
        conv2_b.size() != static_cast<std::size_t>(conv2_filters) ||
        fc1_w.size() != static_cast<std::size_t>(head_dim) * conv2_filters ||
        fc1_b.size() != static_cast<std::size_t>(head_dim) ||
        fc2_w.size() != static_cast<std::size_t>(label_count) * head_dim ||
        fc2_b.size() != static_cast<std::size_t>(label_count))
        throw std::invalid_argument("RefNetParams: parameter block sizes disagree with config");
}

std::array<RefNetParams::GroupRef, 8> RefNetParams::groups() {
    return {{{"conv1_w", &conv1_w},
             {"conv1_b", &conv1_b},
             {"conv2_w", &conv2_w},
             {"conv2_b", &conv2_b},
             {"fc1_w", &fc1_w},
             {"fc1_b", &fc1_b},
             {"fc2_w", &fc2_w},
             {"fc2_b", &fc2_b}}};
}

std::array<RefNetParams::ConstGroupRef, 8> RefNetParams::groups() const {
    return {{{"conv1_w", &conv1_w},
             {"conv1_b", &conv1_b},
             {"conv2_w", &conv2_w},
             {"conv2_b", &conv2_b},
             {"fc1_w", &fc1_w},
             {"fc1_b", &fc1_b},
             {"fc2_w", &fc2_w},
             {"fc2_b", &fc2_b}}};
}

std::size_t RefNetParams::total_size() const {
    std::size_t n = 0;
    for (const auto& g : groups()) n += g.values->size();
    return n;
}

bool RefNetParams::same_shape(const RefNetParams& o) const {
    return conv1_filters == o.conv1_filters && conv2_filters == o.conv2_filters &&
           head_dim == o.head_dim && label_count == o.label_count && input_side == o.input_side;
}

RefNetParams zeros_like(const RefNetParams& params) {
    return RefNetParams::make(params.conv1_filters, params.conv2_filters, params.head_dim,
                              params.label_count, params.input_side, params.dropout);
}

void he_init(RefNetParams& params, Rng& rng) {
    auto fill_normal = [&rng](std::vector<float>& v, double stddev) {
        for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
    };
    fill_normal(params.conv1_w, std::sqrt(2.0 / 9.0));
    fill_normal(params.conv2_w, std::sqrt(2.0 / (9.0 * params.conv1_filters)));
    fill_normal(params.fc1_w, std::sqrt(2.0 / params.conv2_filters));
    fill_normal(params.fc2_w, std::sqrt(1.0 / params.head_dim));
    std::fill(params.conv1_b.begin(), params.conv1_b.end(), 0.0f);
    std::fill(params.conv2_b.begin(), params.conv2_b.end(), 0.0f);
    std::fill(params.fc1_b.begin(), params.fc1_b.end(), 0.0f);
    std::fill(params.fc2_b.begin(), params.fc2_b.end(), 0.0f);
}

LossConfig::LossConfig(std::vector<float> weights) : positive_weights(std::move(weights)) {
    if (positive_weights.empty())
        throw std::invalid_argument("LossConfig: at least one label weight required");
    for (float w : positive_weights)
        if (!(w >= 1.0f && w <= 100.0f))
            throw std::invalid_argument("LossConfig: weights must lie in [1,100]");
}

LossConfig LossConfig::uniform(int label_count) {
    return LossConfig(std::vector<float>(label_count, 1.0f));
}

ForwardResult forward(const RefNetParams& params, const Tensor& batch, Mode mode, Rng& rng) {
    ForwardResult out;
    forward_into(params, batch, mode, rng, out);
    return out;
}

void forward_into(const RefNetParams& params, const Tensor& batch, Mode mode, Rng& rng,
                  ForwardResult& result) {
    params.validate();
    const int S = params.input_side;
    if (batch.dims.size() != 4 || batch.dim(1) != 1)
        throw std::invalid_argument("conv1: expected input of shape [N,1,S,S], got " +
                                    shape_string(batch.dims));
    if (batch.dim(2) != S || batch.dim(3) != S)
        throw std::invalid_argument("conv1: input side " + std::to_string(batch.dim(2)) + "x" +
                                    std::to_string(batch.dim(3)) + " does not match configured " +
                                    std::to_string(S) + "x" + std::to_string(S));
    const int N = batch.dim(0);
    const int F1 = params.conv1_filters, F2 = params.conv2_filters;
    const int D = params.head_dim, L = params.label_count;
    const int S2 = S / 2, S4 = S / 4;
    const std::size_t in_plane = static_cast<std::size_t>(S) * S;
    const std::size_t mid_plane = static_cast<std::size_t>(S2) * S2;

    ForwardCache& cache = result.cache;
    cache.batch = N;
    cache.f1 = F1;
    cache.f2 = F2;
    cache.head_dim = D;
    cache.label_count = L;
    cache.side = S;
    cache.mode = mode;
    cache.input = batch.data;
    cache.act1.resize(static_cast<std::size_t>(N) * F1 * in_plane);
    cache.pool1_idx.resize(static_cast<std::size_t>(N) * F1 * mid_plane);
    cache.pooled1.resize(static_cast<std::size_t>(N) * F1 * mid_plane);
    cache.act2.resize(static_cast<std::size_t>(N) * F2 * mid_plane);
    cache.pool2_idx.resize(static_cast<std::size_t>(N) * F2 * S4 * S4);
    cache.gap.resize(static_cast<std::size_t>(N) * F2);
    cache.hidden.resize(static_cast<std::size_t>(N) * D);
    cache.drop_mask.assign(static_cast<std::size_t>(N) * D, 1.0f);
    cache.hidden_dropped.resize(static_cast<std::size_t>(N) * D);

    Tensor& logits = result.logits;
    logits.dims = {N, L};
    logits.data.assign(static_cast<std::size_t>(N) * L, 0.0f);
    std::vector<float> pooled2(static_cast<std::size_t>(F2) * S4 * S4);

    const float keep_scale = params.dropout > 0.0f ? 1.0f / (1.0f - params.dropout) : 1.0f;

    for (int n = 0; n < N; ++n) {
        const float* x = batch.ptr() + static_cast<std::size_t>(n) * in_plane;
        float* a1 = cache.act1.data() + static_cast<std::size_t>(n) * F1 * in_plane;
        conv3x3_forward(x, 1, S, S, params.conv1_w.data(), params.conv1_b.data(), F1, a1);
        for (std::size_t i = 0; i < static_cast<std::size_t>(F1) * in_plane; ++i) a1[i] = relu(a1[i]);

        float* p1 = cache.pooled1.data() + static_cast<std::size_t>(n) * F1 * mid_plane;
        std::int32_t* idx1 = cache.pool1_idx.data() + static_cast<std::size_t>(n) * F1 * mid_plane;
        maxpool2_forward(a1, F1, S, S, p1, idx1);

        float* a2 = cache.act2.data() + static_cast<std::size_t>(n) * F2 * mid_plane;
        conv3x3_forward(p1, F1, S2, S2, params.conv2_w.data(), params.conv2_b.data(), F2, a2);
        for (std::size_t i = 0; i < static_cast<std::size_t>(F2) * mid_plane; ++i) a2[i] = relu(a2[i]);

        std::int32_t* idx2 =
            cache.pool2_idx.data() + static_cast<std::size_t>(n) * F2 * S4 * S4;
        maxpool2_forward(a2, F2, S2, S2, pooled2.data(), idx2);

        float* g = cache.gap.data() + static_cast<std::size_t>(n) * F2;
        const double inv_cells = 1.0 / (static_cast<double>(S4) * S4);
        for (int f = 0; f < F2; ++f) {
            double sum = 0.0;
            const float* plane = pooled2.data() + static_cast<std::size_t>(f) * S4 * S4;
            for (int i = 0; i < S4 * S4; ++i) sum += plane[i];
            g[f] = static_cast<float>(sum * inv_cells);
        }

        float* h = cache.hidden.data() + static_cast<std::size_t>(n) * D;
        float* m = cache.drop_mask.data() + static_cast<std::size_t>(n) * D;
        float* hd = cache.hidden_dropped.data() + static_cast<std::size_t>(n) * D;
        for (int d = 0; d < D; ++d) {
            double acc = params.fc1_b[d];
            const float* row = params.fc1_w.data() + static_cast<std::size_t>(d) * F2;
            for (int f = 0; f < F2; ++f) acc += static_cast<double>(row[f]) * g[f];
            h[d] = relu(static_cast<float>(acc));
        }
        if (mode == Mode::train && params.dropout > 0.0f) {
            for (int d = 0; d < D; ++d) m[d] = rng.uniform() < params.dropout ? 0.0f : keep_scale;
        }
        for (int d = 0; d < D; ++d) hd[d] = h[d] * m[d];

        float* z = logits.ptr() + static_cast<std::size_t>(n) * L;
        for (int l = 0; l < L; ++l) {
            double acc = params.fc2_b[l];
            const float* row = params.fc2_w.data() + static_cast<std::size_t>(l) * D;
            for (int d = 0; d < D; ++d) acc += static_cast<double>(row[d]) * hd[d];
            z[l] = static_cast<float>(acc);
        }
    }

    for (float v : logits.data)
        if (!std::isfinite(v)) throw std::runtime_error("forward: non-finite logit produced");
}

LossResult weighted_bce_logits(const Tensor& logits, const Tensor& targets, const LossConfig& cfg) {
    if (logits.dims.size() != 2)
        throw std::invalid_argument("weighted_bce_logits: logits must be [N,L]");
    if (!logits.same_shape(targets))
        throw std::invalid_argument("weighted_bce_logits: logits " + shape_string(logits.dims) +
                                    " and targets " + shape_string(targets.dims) + " disagree");
    const int N = logits.dim(0), L = logits.dim(1);
    if (L != cfg.label_count())
        throw std::invalid_argument("weighted_bce_logits: weight count " +
                                    std::to_string(cfg.label_count()) + " does not match L=" +
                                    std::to_string(L));
    for (float t : targets.data)
        if (t != 0.0f && t != 1.0f)
            throw std::invalid_argument("weighted_bce_logits: targets must be exactly 0 or 1");

    Tensor dlogits({N, L});
    const double inv = 1.0 / (static_cast<double>(N) * L);
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        for (int l = 0; l < L; ++l) {
            const std::size_t i = static_cast<std::size_t>(n) * L + l;
            const double z = logits[i];
            const double y = targets[i];
            const double w = cfg.positive_weights[l];
            loss += w * y * softplus(-z) + (1.0 - y) * softplus(z);
            const double g = -w * y * sigmoid(-z) + (1.0 - y) * sigmoid(z);
            dlogits[i] = static_cast<float>(g * inv);
        }
    }
    return {loss * inv, std::move(dlogits)};
}

RefNetGrads backward(const RefNetParams& params, const ForwardCache& cache, const Tensor& dlogits) {
    params.validate();
    if (cache.f1 != params.conv1_filters || cache.f2 != params.conv2_filters ||
        cache.head_dim != params.head_dim || cache.label_count != params.label_count ||
        cache.side != params.input_side)
        throw std::invalid_argument("backward: cache does not match these parameters (stale cache)");
    if (dlogits.dims.size() != 2 || dlogits.dim(0) != cache.batch ||
        dlogits.dim(1) != cache.label_count)
        throw std::invalid_argument("backward: upstream gradient " + shape_string(dlogits.dims) +
                                    " does not match cached logits");

    const int N = cache.batch;
    const int F1 = cache.f1, F2 = cache.f2, D = cache.head_dim, L = cache.label_count;
    const int S = cache.side, S2 = S / 2, S4 = S / 4;
    const std::size_t in_plane = static_cast<std::size_t>(S) * S;
    const std::size_t mid_plane = static_cast<std::size_t>(S2) * S2;

    RefNetGrads grads = zeros_like(params);

    std::vector<float> dhidden(D);
    std::vector<float> dgap(F2);
    std::vector<float> dact2(static_cast<std::size_t>(F2) * mid_plane);
    std::vector<float> dpooled1(static_cast<std::size_t>(F1) * mid_plane);
    std::vector<float> dact1(static_cast<std::size_t>(F1) * in_plane);

    const double inv_cells = 1.0 / (static_cast<double>(S4) * S4);

    for (int n = 0; n < N; ++n) {
        const float* dz = dlogits.ptr() + static_cast<std::size_t>(n) * L;
        const float* hd = cache.hidden_dropped.data() + static_cast<std::size_t>(n) * D;
        const float* h = cache.hidden.data() + static_cast<std::size_t>(n) * D;
        const float* m = cache.drop_mask.data() + static_cast<std::size_t>(n) * D;
        const float* g = cache.gap.data() + static_cast<std::size_t>(n) * F2;

        // output dense
        for (int l = 0; l < L; ++l) {
            grads.fc2_b[l] += dz[l];
            float* wrow = grads.fc2_w.data() + static_cast<std::size_t>(l) * D;
            const float u = dz[l];
            for (int d = 0; d < D; ++d) wrow[d] += u * hd[d];
        }
        for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int l = 0; l < L; ++l)
                acc += static_cast<double>(dz[l]) * params.fc2_w[static_cast<std::size_t>(l) * D + d];
            // dropout mask, then ReLU gate of the hidden layer
            const float gate = h[d] > 0.0f ? 1.0f : 0.0f;
            dhidden[d] = static_cast<float>(acc) * m[d] * gate;
        }

        // hidden dense
        for (int d = 0; d < D; ++d) {
            grads.fc1_b[d] += dhidden[d];
            float* wrow = grads.fc1_w.data() + static_cast<std::size_t>(d) * F2;
            const float u = dhidden[d];
            for (int f = 0; f < F2; ++f) wrow[f] += u * g[f];
        }
        for (int f = 0; f < F2; ++f) {
            double acc = 0.0;
            for (int d = 0; d < D; ++d)
                acc += static_cast<double>(dhidden[d]) * params.fc1_w[static_cast<std::size_t>(d) * F2 + f];
            dgap[f] = static_cast<float>(acc);
        }

        // GAP -> unpool through pool2 -> ReLU gate of conv2
        std::fill(dact2.begin(), dact2.end(), 0.0f);
        const std::int32_t* idx2 = cache.pool2_idx.data() + static_cast<std::size_t>(n) * F2 * S4 * S4;
        const float* a2 = cache.act2.data() + static_cast<std::size_t>(n) * F2 * mid_plane;
        for (int f = 0; f < F2; ++f) {
            const float v = static_cast<float>(dgap[f] * inv_cells);
            const std::int32_t* id = idx2 + static_cast<std::size_t>(f) * S4 * S4;
            float* dplane = dact2.data() + static_cast<std::size_t>(f) * mid_plane;
            for (int i = 0; i < S4 * S4; ++i) dplane[id[i]] += v;
        }
        for (std::size_t i = 0; i < dact2.size(); ++i)
            if (a2[i] <= 0.0f) dact2[i] = 0.0f;

        // conv2
        std::fill(dpooled1.begin(), dpooled1.end(), 0.0f);
        const float* p1 = cache.pooled1.data() + static_cast<std::size_t>(n) * F1 * mid_plane;
        conv3x3_backward(p1, F1, S2, S2, params.conv2_w.data(), F2, dact2.data(),
                         grads.conv2_w.data(), grads.conv2_b.data(), dpooled1.data());

        // unpool through pool1 -> ReLU gate of conv1
        std::fill(dact1.begin(), dact1.end(), 0.0f);
        const std::int32_t* idx1 = cache.pool1_idx.data() + static_cast<std::size_t>(n) * F1 * mid_plane;
        const float* a1 = cache.act1.data() + static_cast<std::size_t>(n) * F1 * in_plane;
        for (int f = 0; f < F1; ++f) {
            const float* dplane = dpooled1.data() + static_cast<std::size_t>(f) * mid_plane;
            const std::int32_t* id = idx1 + static_cast<std::size_t>(f) * mid_plane;
            float* dst = dact1.data() + static_cast<std::size_t>(f) * in_plane;
            for (std::size_t i = 0; i < mid_plane; ++i) dst[id[i]] += dplane[i];
        }
        for (std::size_t i = 0; i < dact1.size(); ++i)
            if (a1[i] <= 0.0f) dact1[i] = 0.0f;

        // conv1 (no input gradient needed)
        const float* x = cache.input.data() + static_cast<std::size_t>(n) * in_plane;
        conv3x3_backward(x, 1, S, S, params.conv1_w.data(), F1, dact1.data(),
                         grads.conv1_w.data(), grads.conv1_b.data(), nullptr);
    }

    for (const auto& group : grads.groups())
        for (float v : *group.values)
            if (!std::isfinite(v))
                throw std::runtime_error(std::string("backward: non-finite gradient in ") + group.name);

    return grads;
}

AdamState AdamState::make(const RefNetParams& params, double learning_rate, double beta1,
                          double beta2, double epsilon) {
    AdamState s;
    s.m.assign(params.total_size(), 0.0f);
    s.v.assign(params.total_size(), 0.0f);
    s.step_count = 0;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.learning_rate = learning_rate;
    return s;
}

void adam_step(RefNetParams& params, const RefNetGrads& grads, AdamState& state) {
    if (!params.same_shape(grads))
        throw std::invalid_argument("adam_step: gradient shapes do not match parameters");
    if (state.m.size() != params.total_size())
        throw std::invalid_argument("adam_step: state size does not match parameters");

    state.step_count += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));

    std::size_t offset = 0;
    auto pgroups = params.groups();
    auto ggroups = grads.groups();
    for (std::size_t gi = 0; gi < pgroups.size(); ++gi) {
        auto& pv = *pgroups[gi].values;
        const auto& gv = *ggroups[gi].values;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double g = gv[i];
            const double m = b1 * state.m[offset + i] + (1.0 - b1) * g;
            const double v = b2 * state.v[offset + i] + (1.0 - b2) * g * g;
            state.m[offset + i] = static_cast<float>(m);
            state.v[offset + i] = static_cast<float>(v);
            const double mhat = m / corr1;
            const double vhat = v / corr2;
            pv[i] = static_cast<float>(pv[i] - state.learning_rate * mhat /
                                                   (std::sqrt(vhat) + state.epsilon));
        }
        offset += pv.size();
    }
}

double finite_difference_check(const RefNetParams& params, const Tensor& batch,
                               const Tensor& targets, const LossConfig& cfg, double step,
                               std::uint64_t seed, Mode mode, int min_coords) {
    if (!(step > 0.0))
        throw std::invalid_argument("finite_difference_check: step must be > 0");

    const std::uint64_t dropout_seed = mix_seed(seed, 0x0DD);
    auto eval = [&](const RefNetParams& p) {
        // double-precision evaluation, identical dropout mask every time
        return eval_loss_branches<double>(p, batch, targets, cfg, mode, dropout_seed);
    };

    Rng rng(dropout_seed);
    auto fr = forward(params, batch, mode, rng);
    auto lr = weighted_bce_logits(fr.logits, targets, cfg);
    RefNetGrads grads = backward(params, fr.cache, lr.dlogits);
    const std::uint64_t base_branches = eval(params).branches;

    // The loss is only piecewise smooth: if a perturbation flips any ReLU
    // gate or pool argmax, the central difference does not estimate the
    // gradient at the base point. Such coordinates are skipped and fresh
    // ones drawn from the same group (the Caffe-style kink rule).
    Rng pick(mix_seed(seed, 0x5A11));
    const int per_group = (min_coords + 7) / 8;
    double max_rel = 0.0;
    auto cgroups = params.groups();
    for (std::size_t gi = 0; gi < cgroups.size(); ++gi) {
        const std::size_t n = cgroups[gi].values->size();
        const bool exhaustive = n <= static_cast<std::size_t>(per_group);
        const std::size_t want = exhaustive ? n : static_cast<std::size_t>(per_group);
        const std::size_t max_draws = exhaustive ? n : want * 8;
        std::set<std::size_t> tried;
        std::size_t measured = 0;
        for (std::size_t draw = 0; draw < max_draws && measured < want; ++draw) {
            const std::size_t i =
                exhaustive ? draw : static_cast<std::size_t>(pick.uniform_int(n));
            if (!exhaustive && !tried.insert(i).second) continue;

            RefNetParams perturbed = params;
            auto pg = perturbed.groups();
            float& slot = (*pg[gi].values)[i];
            const float original = slot;

            slot = static_cast<float>(static_cast<double>(original) + step);
            const double hi = static_cast<double>(slot);
            const LossEval up = eval(perturbed);

            slot = static_cast<float>(static_cast<double>(original) - step);
            const double lo = static_cast<double>(slot);
            const LossEval down = eval(perturbed);

            if (up.branches != base_branches || down.branches != base_branches)
                continue; // kink inside the step interval

            const double numeric = (up.loss - down.loss) / (hi - lo);
            const double analytic = (*grads.groups()[gi].values)[i];
            const double scale = std::max(std::abs(analytic), std::abs(numeric));
            ++measured;
            if (scale < 1e-9) continue; // both effectively zero
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / scale);
        }
    }
    return max_rel;
}

std::vector<double> forward_from_tap(const RefNetParams& params, const std::vector<float>& tap) {
    params.validate();
    const int F2 = params.conv2_filters, D = params.head_dim, L = params.label_count;
    const int S2 = params.input_side / 2, S4 = params.input_side / 4;
    if (tap.size() != static_cast<std::size_t>(F2) * S2 * S2)
        throw std::invalid_argument("forward_from_tap: tap shape mismatch");

    std::vector<float> pooled(static_cast<std::size_t>(F2) * S4 * S4);
    std::vector<std::int32_t> idx(pooled.size());
    maxpool2_forward(tap.data(), F2, S2, S2, pooled.data(), idx.data());

    std::vector<double> gap(F2, 0.0);
    const double inv_cells = 1.0 / (static_cast<double>(S4) * S4);
    for (int f = 0; f < F2; ++f) {
        double sum = 0.0;
        for (int i = 0; i < S4 * S4; ++i) sum += pooled[static_cast<std::size_t>(f) * S4 * S4 + i];
        gap[f] = sum * inv_cells;
    }

    std::vector<double> hidden(D);
    for (int d = 0; d < D; ++d) {
        double acc = params.fc1_b[d];
        for (int f = 0; f < F2; ++f)
            acc += static_cast<double>(params.fc1_w[static_cast<std::size_t>(d) * F2 + f]) * gap[f];
        hidden[d] = acc > 0.0 ? acc : 0.0;
    }

    std::vector<double> logits(L);
    for (int l = 0; l < L; ++l) {
        double acc = params.fc2_b[l];
        for (int d = 0; d < D; ++d)
            acc += static_cast<double>(params.fc2_w[static_cast<std::size_t>(l) * D + d]) * hidden[d];
        logits[l] = acc;
    }
    return logits;
}

std::vector<float> logit_grad_wrt_tap(const RefNetParams& params, const ForwardCache& cache,
                                      int sample, int label) {
    if (sample < 0 || sample >= cache.batch)
        throw std::invalid_argument("logit_grad_wrt_tap: sample index out of range");
    if (label < 0 || label >= cache.label_count)
        throw std::invalid_argument("logit_grad_wrt_tap: label index out of range");
    const int F2 = cache.f2, D = cache.head_dim;
    const int S2 = cache.side / 2, S4 = cache.side / 4;
    const std::size_t mid_plane = static_cast<std::size_t>(S2) * S2;

    const float* h = cache.hidden.data() + static_cast<std::size_t>(sample) * D;
    const float* m = cache.drop_mask.data() + static_cast<std::size_t>(sample) * D;

    std::vector<double> dhidden(D);
    for (int d = 0; d < D; ++d) {
        const double u = params.fc2_w[static_cast<std::size_t>(label) * D + d];
        dhidden[d] = (h[d] > 0.0f ? u : 0.0) * m[d];
    }
    std::vector<double> dgap(F2, 0.0);
    for (int d = 0; d < D; ++d) {
        if (dhidden[d] == 0.0) continue;
        const float* row = params.fc1_w.data() + static_cast<std::size_t>(d) * F2;
        for (int f = 0; f < F2; ++f) dgap[f] += dhidden[d] * row[f];
    }

    std::vector<float> dtap(static_cast<std::size_t>(F2) * mid_plane, 0.0f);
    const std::int32_t* idx2 = cache.pool2_idx.data() + static_cast<std::size_t>(sample) * F2 * S4 * S4;
    const double inv_cells = 1.0 / (static_cast<double>(S4) * S4);
    for (int f = 0; f < F2; ++f) {
        const float v = static_cast<float>(dgap[f] * inv_cells);
        const std::int32_t* id = idx2 + static_cast<std::size_t>(f) * S4 * S4;
        float* dst = dtap.data() + static_cast<std::size_t>(f) * mid_plane;
        for (int i = 0; i < S4 * S4; ++i) dst[id[i]] += v;
    }
    return dtap;
}

} // namespace imlx::nn
