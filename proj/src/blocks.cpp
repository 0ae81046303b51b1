#include "teethseg/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace teethseg {

Tensor& ParamStore::declare(const std::string& name, Shape shape, bool trainable) {
    if (entries_.count(name)) fail("params: duplicate declaration of '" + name + "'");
    auto& e = entries_[name];
    e.value = Tensor(std::move(shape));
    e.trainable = trainable;
    return e.value;
}

Tensor& ParamStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail("params: unknown parameter '" + name + "'");
    return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail("params: unknown parameter '" + name + "'");
    return it->second.value;
}

bool ParamStore::is_trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail("params: unknown parameter '" + name + "'");
    return it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
        if (v.trainable) out.push_back(k);
    return out;
}

Index ParamStore::trainable_numel() const {
    Index n = 0;
    for (const auto& [k, v] : entries_)
        if (v.trainable) n += v.value.numel();
    return n;
}

void ParamStore::track_all(Tape& tape) {
    for (auto& [k, v] : entries_)
        if (v.trainable) tape.leaf(v.value);
}

void init_he_uniform(Tensor& w, Index fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-limit, limit);
}

Index tab_hidden_width(Index channels) { return std::max<Index>(1, channels / 4); }

int swin_head_count(Index channels) {
    return (channels >= 4 && channels % 4 == 0) ? static_cast<int>(channels / 4) : 1;
}

namespace {

void declare_conv3(ParamStore& ps, const std::string& prefix, Index cin, Index cout, Rng& rng) {
    init_he_uniform(ps.declare(prefix + ".w", {cout, cin, 3, 3}), cin * 9, rng);
    ps.declare(prefix + ".b", {cout});
}

void declare_bn(ParamStore& ps, const std::string& prefix, Index c) {
    ps.declare(prefix + ".gamma", {c}) = Tensor({c}, 1.0);
    ps.declare(prefix + ".beta", {c});
    ps.declare(prefix + ".running_mean", {c}, /*trainable=*/false);
    ps.declare(prefix + ".running_var", {c}, /*trainable=*/false) = Tensor({c}, 1.0);
}

void declare_linear(ParamStore& ps, const std::string& prefix, Index ein, Index eout, Rng& rng) {
    init_he_uniform(ps.declare(prefix + ".w", {ein, eout}), ein, rng);
    ps.declare(prefix + ".b", {eout});
}

void declare_ln(ParamStore& ps, const std::string& prefix, Index c) {
    ps.declare(prefix + ".gamma", {c}) = Tensor({c}, 1.0);
    ps.declare(prefix + ".beta", {c});
}

Tensor conv_bn_relu(Tape* tp, ParamStore& ps, const std::string& conv, const std::string& bn,
                    const Tensor& x, bool train) {
    Tensor h = conv2d(tp, x, ps.value(conv + ".w"), ps.value(conv + ".b"), 1, 1);
    h = batch_norm(tp, h, ps.value(bn + ".gamma"), ps.value(bn + ".beta"), ps.value(bn + ".running_mean"),
                   ps.value(bn + ".running_var"), 1e-5, train);
    return relu(tp, h);
}

Tensor ln(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x) {
    return layer_norm(tp, x, ps.value(prefix + ".gamma"), ps.value(prefix + ".beta"), 1e-5);
}

Tensor lin(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x) {
    return linear(tp, x, ps.value(prefix + ".w"), ps.value(prefix + ".b"));
}

}  // namespace

void declare_double_conv(ParamStore& ps, const std::string& prefix, Index cin, Index cout, Rng& rng) {
    declare_conv3(ps, prefix + ".conv1", cin, cout, rng);
    declare_bn(ps, prefix + ".bn1", cout);
    declare_conv3(ps, prefix + ".conv2", cout, cout, rng);
    declare_bn(ps, prefix + ".bn2", cout);
}

Tensor double_conv(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x, bool train) {
    Tensor h = conv_bn_relu(tp, ps, prefix + ".conv1", prefix + ".bn1", x, train);
    return conv_bn_relu(tp, ps, prefix + ".conv2", prefix + ".bn2", h, train);
}

void declare_encoder_stage(ParamStore& ps, const std::string& prefix, Index cin, Index cout, Rng& rng) {
    declare_double_conv(ps, prefix, cin, cout, rng);
}

StagePair encoder_stage(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x,
                        double dropout_p, bool train, Rng& rng) {
    if (x.dim(2) % 2 || x.dim(3) % 2)
        fail("encoder_stage: spatial extents of " + shape_str(x.shape) + " must be divisible by 2");
    Tensor features = dropout(tp, double_conv(tp, ps, prefix, x, train), dropout_p, rng, train);
    Tensor pooled = max_pool2d(tp, features, 2, 2);
    return {features, pooled};
}

void declare_decoder_stage(ParamStore& ps, const std::string& prefix, Index cin_below, Index skip_ch,
                           Index cout, Rng& rng) {
    init_he_uniform(ps.declare(prefix + ".up.w", {cin_below, cout, 2, 2}), cin_below * 4, rng);
    ps.declare(prefix + ".up.b", {cout});
    declare_double_conv(ps, prefix, cout + skip_ch, cout, rng);
}

Tensor decoder_stage(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x,
                     const Tensor& gated_skip, bool train) {
    Tensor up = conv_transpose2d(tp, x, ps.value(prefix + ".up.w"), ps.value(prefix + ".up.b"), 2);
    if (up.dim(2) != gated_skip.dim(2) || up.dim(3) != gated_skip.dim(3))
        fail("decoder_stage: upsampled extents " + shape_str(up.shape) + " do not match skip " +
             shape_str(gated_skip.shape));
    Tensor merged = concat_channels(tp, up, gated_skip);
    return double_conv(tp, ps, prefix, merged, train);
}

void declare_swin_block(ParamStore& ps, const std::string& prefix, Index c, Rng& rng) {
    declare_ln(ps, prefix + ".ln1", c);
    declare_linear(ps, prefix + ".attn.q", c, c, rng);
    declare_linear(ps, prefix + ".attn.k", c, c, rng);
    declare_linear(ps, prefix + ".attn.v", c, c, rng);
    declare_linear(ps, prefix + ".attn.o", c, c, rng);
    declare_ln(ps, prefix + ".ln2", c);
    declare_linear(ps, prefix + ".mlp.fc1", c, 4 * c, rng);
    declare_linear(ps, prefix + ".mlp.fc2", 4 * c, c, rng);
}

Tensor swin_block(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x, int win,
                  int heads, int shift) {
    Tensor tokens = window_partition(tp, x, win, shift);
    Tensor n1 = ln(tp, ps, prefix + ".ln1", tokens);
    Tensor q = lin(tp, ps, prefix + ".attn.q", n1);
    Tensor k = lin(tp, ps, prefix + ".attn.k", n1);
    Tensor v = lin(tp, ps, prefix + ".attn.v", n1);
    Tensor att = lin(tp, ps, prefix + ".attn.o", attention(tp, q, k, v, heads));
    Tensor y = add(tp, tokens, att);
    Tensor n2 = ln(tp, ps, prefix + ".ln2", y);
    Tensor m = lin(tp, ps, prefix + ".mlp.fc2", relu(tp, lin(tp, ps, prefix + ".mlp.fc1", n2)));
    Tensor z = add(tp, y, m);
    return window_merge(tp, z, x.shape, win, shift);
}

void declare_tab_block(ParamStore& ps, const std::string& prefix, Index c, Rng& rng) {
    declare_conv3(ps, prefix + ".spatial.conv1", c, c, rng);
    init_he_uniform(ps.declare(prefix + ".spatial.conv2.w", {1, c, 3, 3}), c * 9, rng);
    ps.declare(prefix + ".spatial.conv2.b", {1});
    const Index hidden = tab_hidden_width(c);
    declare_linear(ps, prefix + ".cab.fc1", c, hidden, rng);
    declare_linear(ps, prefix + ".cab.fc2", hidden, c, rng);
}

Tensor tab_block(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& skip) {
    Tensor h = relu(tp, conv2d(tp, skip, ps.value(prefix + ".spatial.conv1.w"),
                               ps.value(prefix + ".spatial.conv1.b"), 1, 1));
    Tensor spatial = sigmoid(tp, conv2d(tp, h, ps.value(prefix + ".spatial.conv2.w"),
                                        ps.value(prefix + ".spatial.conv2.b"), 1, 1));
    Tensor z = global_avg_pool(tp, skip);
    Tensor channel = sigmoid(tp, lin(tp, ps, prefix + ".cab.fc2", relu(tp, lin(tp, ps, prefix + ".cab.fc1", z))));
    return mul_channel_gate(tp, mul_spatial_gate(tp, skip, spatial), channel);
}

void declare_seg_head(ParamStore& ps, const std::string& prefix, Index cin, Index num_classes, Rng& rng) {
    init_he_uniform(ps.declare(prefix + ".w", {num_classes, cin, 1, 1}), cin, rng);
    ps.declare(prefix + ".b", {num_classes});
}

Tensor seg_head(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x, int num_classes) {
    if (num_classes < 2) fail("seg_head: num_classes must be >= 2");
    Tensor logits = conv2d(tp, x, ps.value(prefix + ".w"), ps.value(prefix + ".b"), 1, 0);
    return softmax(tp, logits, 1);
}

}  // namespace teethseg
