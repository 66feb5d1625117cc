#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "imlx/rng.hpp"
#include "imlx/tensor.hpp"

namespace imlx::nn {

// Parameters of one reference network:
//   conv3x3(F1) -> ReLU -> maxpool2 -> conv3x3(F2) -> ReLU -> maxpool2
//   -> global average pool -> dense(D) + ReLU + dropout -> dense(L), linear logits.
// Convolutions are stride 1 with zero padding, so the input side S only has to
// survive the two 2x2 poolings (S divisible by 4).
struct RefNetParams {
    int conv1_filters = 0;  // F1
    int conv2_filters = 0;  // F2
    int head_dim = 0;       // D
    int label_count = 0;    // L
    int input_side = 0;     // S
    float dropout = 0.0f;

    std::vector<float> conv1_w; // F1 x 1 x 3 x 3
    std::vector<float> conv1_b; // F1
    std::vector<float> conv2_w; // F2 x F1 x 3 x 3
    std::vector<float> conv2_b; // F2
    std::vector<float> fc1_w;   // D x F2
    std::vector<float> fc1_b;   // D
    std::vector<float> fc2_w;   // L x D
    std::vector<float> fc2_b;   // L

    static RefNetParams make(int f1, int f2, int head_dim, int label_count, int input_side,
                             float dropout);

    void validate() const;

    struct GroupRef {
        const char* name;
        std::vector<float>* values;
    };
    struct ConstGroupRef {
        const char* name;
        const std::vector<float>* values;
    };

    // Declared parameter order; checkpoints, Adam state and the finite
    // difference sampler all follow it.
    std::array<GroupRef, 8> groups();
    std::array<ConstGroupRef, 8> groups() const;

    std::size_t total_size() const;
    bool same_shape(const RefNetParams& o) const;
};

// Gradients share the parameter layout.
using RefNetGrads = RefNetParams;

RefNetParams zeros_like(const RefNetParams& params);

// He-normal kernels/weights, zero biases.
void he_init(RefNetParams& params, Rng& rng);

// Per-label positive-class weights for the multilabel cross entropy.
struct LossConfig {
    std::vector<float> positive_weights;

    explicit LossConfig(std::vector<float> weights);
    static LossConfig uniform(int label_count);
    int label_count() const { return static_cast<int>(positive_weights.size()); }
};

enum class Mode { train, eval };

// Everything backward (and the Grad-CAM tap) needs from a forward pass.
struct ForwardCache {
    int batch = 0;
    int f1 = 0, f2 = 0, head_dim = 0, label_count = 0, side = 0;
    Mode mode = Mode::eval;

    std::vector<float> input;      // N x 1 x S x S
    std::vector<float> act1;       // N x F1 x S x S, post ReLU
    std::vector<std::int32_t> pool1_idx;
    std::vector<float> pooled1;    // N x F1 x S/2 x S/2
    std::vector<float> act2;       // N x F2 x S/2 x S/2, post ReLU (Grad-CAM tap)
    std::vector<std::int32_t> pool2_idx;
    std::vector<float> gap;        // N x F2
    std::vector<float> hidden;     // N x D, post ReLU, pre dropout
    std::vector<float> drop_mask;  // N x D, 0 or 1/(1-p); all ones in eval
    std::vector<float> hidden_dropped; // N x D
};

struct ForwardResult {
    Tensor logits; // N x L
    ForwardCache cache;
};

// batch: N x 1 x S x S. Train mode draws the dropout mask from rng; eval mode
// is a pure function of (params, batch).
ForwardResult forward(const RefNetParams& params, const Tensor& batch, Mode mode, Rng& rng);

// Same computation, reusing the buffers already held by `out`. The training
// loop calls this once per batch; identical results to forward().
void forward_into(const RefNetParams& params, const Tensor& batch, Mode mode, Rng& rng,
                  ForwardResult& out);

struct LossResult {
    double loss = 0.0;
    Tensor dlogits; // N x L
};

// Mean over all N*L elements of  w_c*y*softplus(-z) + (1-y)*softplus(z),
// overflow-safe; gradient returned analytically.
LossResult weighted_bce_logits(const Tensor& logits, const Tensor& targets, const LossConfig& cfg);

// Exact reverse-mode of forward(); dropout mask reused from the cache.
RefNetGrads backward(const RefNetParams& params, const ForwardCache& cache, const Tensor& dlogits);

struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-4;

    static AdamState make(const RefNetParams& params, double learning_rate,
                          double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
};

// Standard bias-corrected Adam update, element-wise over all groups.
void adam_step(RefNetParams& params, const RefNetGrads& grads, AdamState& state);

// Central finite differences on >= min_coords sampled coordinates spanning
// every parameter group; returns the max relative error against backward().
// Train mode replays the identical dropout stream for every evaluation.
double finite_difference_check(const RefNetParams& params, const Tensor& batch,
                               const Tensor& targets, const LossConfig& cfg, double step,
                               std::uint64_t seed = 0, Mode mode = Mode::train,
                               int min_coords = 200);

// Head-only forward from a conv2 activation plane (F2 x S/2 x S/2) for one
// sample, eval mode. Used by the Grad-CAM oracle tests.
std::vector<double> forward_from_tap(const RefNetParams& params, const std::vector<float>& tap);

// d(logit[label]) / d(post-ReLU conv2 activations) for one cached sample,
// exact backprop through the eval-mode head.
std::vector<float> logit_grad_wrt_tap(const RefNetParams& params, const ForwardCache& cache,
                                      int sample, int label);

} // namespace imlx::nn
