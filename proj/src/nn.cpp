#include "tcformer/nn.hpp"

#include <cmath>

#include "tcformer/errors.hpp"

namespace tcformer::nn {

ad::Var use(ad::Graph& g, Parameter& p) {
    return g.make(p.value, true, [&p](ad::Node& self) { p.grad.vec() += self.grad.vec(); });
}

void init_trunc_normal(Parameter& p, Rng& rng, double stddev) {
    for (Index i = 0; i < p.value.numel(); ++i) p.value[i] = rng.trunc_normal(stddev);
}

void init_conv_fan_out(Parameter& p, Rng& rng, Index fan_out) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_out));
    for (Index i = 0; i < p.value.numel(); ++i) p.value[i] = rng.normal(0.0, stddev);
}

// --- Linear --------------------------------------------------------------------

Linear::Linear(int in_features, int out_features, bool with_bias)
    : in_(in_features), out_(out_features), has_bias_(with_bias) {
    weight.init({in_, out_});
    if (has_bias_) bias.init({out_});
}

void Linear::init(Rng& rng) { init_trunc_normal(weight, rng); }

ad::Var Linear::forward(ad::Graph& g, ad::Var x) const {
    return ad::linear(x, use(g, weight), has_bias_ ? use(g, bias) : ad::Var{});
}

void Linear::visit(const std::string& prefix, const ParamFn& fn) const {
    fn(prefix + ".weight", weight);
    if (has_bias_) fn(prefix + ".bias", bias);
}

// --- LayerNorm -------------------------------------------------------------------

LayerNorm::LayerNorm(int features, double eps) : features_(features), eps_(eps) {
    gamma.init({features_});
    beta.init({features_});
    init();
}

void LayerNorm::init() {
    gamma.value.fill(1.0);
    beta.value.fill(0.0);
}

ad::Var LayerNorm::forward(ad::Graph& g, ad::Var x) const {
    return ad::layer_norm(x, use(g, gamma), use(g, beta), eps_);
}

void LayerNorm::visit(const std::string& prefix, const ParamFn& fn) const {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
}

// --- Conv2d ----------------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool with_bias)
    : in_(in_ch), out_(out_ch), kernel_(kernel), stride_(stride), pad_(pad), has_bias_(with_bias) {
    weight.init({static_cast<Index>(kernel_) * kernel_ * in_, out_});
    if (has_bias_) bias.init({out_});
}

void Conv2d::init(Rng& rng) {
    init_conv_fan_out(weight, rng, static_cast<Index>(kernel_) * kernel_ * out_);
}

ad::Var Conv2d::forward(ad::Graph& g, ad::Var x, int h, int w) const {
    return ad::conv2d(x, use(g, weight), has_bias_ ? use(g, bias) : ad::Var{}, h, w, in_, out_,
                      kernel_, stride_, pad_);
}

void Conv2d::visit(const std::string& prefix, const ParamFn& fn) const {
    fn(prefix + ".weight", weight);
    if (has_bias_) fn(prefix + ".bias", bias);
}

// --- DepthwiseConv3x3 --------------------------------------------------------------

DepthwiseConv3x3::DepthwiseConv3x3(int channels) : channels_(channels) {
    weight.init({channels_, 9});
    bias.init({channels_});
}

void DepthwiseConv3x3::init(Rng& rng) { init_conv_fan_out(weight, rng, 9); }

ad::Var DepthwiseConv3x3::forward(ad::Graph& g, ad::Var x, int h, int w) const {
    return ad::dwconv3x3(x, use(g, weight), use(g, bias), h, w, channels_);
}

void DepthwiseConv3x3::visit(const std::string& prefix, const ParamFn& fn) const {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
}

// --- ConvTranspose2d ---------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_(in_ch), out_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
    weight.init({in_, static_cast<Index>(kernel_) * kernel_ * out_});
    bias.init({out_});
}

void ConvTranspose2d::init(Rng& rng) {
    init_conv_fan_out(weight, rng, static_cast<Index>(kernel_) * kernel_ * out_);
}

ad::Var ConvTranspose2d::forward(ad::Graph& g, ad::Var x, int h, int w) const {
    return ad::conv_transpose2d(x, use(g, weight), use(g, bias), h, w, in_, out_, kernel_, stride_,
                                pad_);
}

void ConvTranspose2d::visit(const std::string& prefix, const ParamFn& fn) const {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
}

// --- AdamW -------------------------------------------------------------------------

AdamW::AdamW(std::vector<Parameter*> params, Config cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void AdamW::step() {
    step_count_++;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        auto m = m_[i].vec();
        auto v = v_[i].vec();
        auto grad = p.grad.vec();
        auto w = p.value.vec();
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        w.array() -= cfg_.lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps) +
                                cfg_.weight_decay * w.array());
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace tcformer::nn
