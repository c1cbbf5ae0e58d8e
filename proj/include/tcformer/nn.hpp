#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tcformer/autograd.hpp"
#include "tcformer/rng.hpp"
#include "tcformer/tensor.hpp"

namespace tcformer::nn {

struct Parameter {
    Tensor value;
    Tensor grad;

    void init(std::vector<Index> shape) {
        value = Tensor::zeros(shape);
        grad = Tensor::zeros(std::move(shape));
    }
    void zero_grad() { grad.fill(0.0); }
};

// Callback receiving the canonical path of every parameter, e.g.
// "stages.0.blocks.1.attn_q.weight". Paths define the checkpoint key space.
using ParamFn = std::function<void(const std::string&, Parameter&)>;

// Leaf var bound to a parameter: gradients land in param.grad after backward.
ad::Var use(ad::Graph& g, Parameter& p);

void init_trunc_normal(Parameter& p, Rng& rng, double stddev = 0.02);
void init_conv_fan_out(Parameter& p, Rng& rng, Index fan_out);

class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features, bool with_bias = true);

    void init(Rng& rng);
    ad::Var forward(ad::Graph& g, ad::Var x) const;
    void visit(const std::string& prefix, const ParamFn& fn) const;

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    mutable Parameter weight;  // in x out
    mutable Parameter bias;

private:
    int in_ = 0, out_ = 0;
    bool has_bias_ = true;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int features, double eps = 1e-6);

    void init();
    ad::Var forward(ad::Graph& g, ad::Var x) const;
    void visit(const std::string& prefix, const ParamFn& fn) const;

    mutable Parameter gamma, beta;

private:
    int features_ = 0;
    double eps_ = 1e-6;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool with_bias = true);

    void init(Rng& rng);
    // x: (h*w) x in_ch position-major map
    ad::Var forward(ad::Graph& g, ad::Var x, int h, int w) const;
    void visit(const std::string& prefix, const ParamFn& fn) const;

    int out_size(int size) const { return (size + 2 * pad_ - kernel_) / stride_ + 1; }
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }

    mutable Parameter weight;  // (k*k*in) x out
    mutable Parameter bias;

private:
    int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
    bool has_bias_ = true;
};

class DepthwiseConv3x3 {
public:
    DepthwiseConv3x3() = default;
    explicit DepthwiseConv3x3(int channels);

    void init(Rng& rng);
    ad::Var forward(ad::Graph& g, ad::Var x, int h, int w) const;
    void visit(const std::string& prefix, const ParamFn& fn) const;

    mutable Parameter weight;  // C x 9
    mutable Parameter bias;    // C

private:
    int channels_ = 0;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad);

    void init(Rng& rng);
    ad::Var forward(ad::Graph& g, ad::Var x, int h, int w) const;
    void visit(const std::string& prefix, const ParamFn& fn) const;

    int out_size(int size) const { return stride_ * (size - 1) + kernel_ - 2 * pad_; }

    mutable Parameter weight;  // in x (k*k*out)
    mutable Parameter bias;

private:
    int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
};

// Decoupled weight decay Adam. Decay is applied directly to the weights,
// scaled by the learning rate, independent of the gradient moments.
class AdamW {
public:
    struct Config {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-2;
    };

    AdamW(std::vector<Parameter*> params, Config cfg);

    void step();
    void zero_grad();
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    Config cfg_;
    long step_count_ = 0;
};

}  // namespace tcformer::nn
