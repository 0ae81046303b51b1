#include "teethseg/model.hpp"

#include <string>

namespace teethseg {

namespace {

Index pow2(int e) { return static_cast<Index>(1) << e; }

std::string enc_name(int i) { return "enc" + std::to_string(i); }
std::string dec_name(int i) { return "dec" + std::to_string(i); }
std::string tab_name(int i) { return "tab" + std::to_string(i); }
std::string aux_name(int scale) { return "head.aux" + std::to_string(scale); }

// Input channel count of the encoder level at `scale` (left-leg injection
// concatenates the downsampled input image at scales >= 1).
Index level_in_channels(const ModelConfig& c, int scale) {
    if (scale == 0) return c.in_channels;
    return c.width_at(scale - 1) + (c.use_deep_supervision ? c.in_channels : 0);
}

void declare_model(ParamStore& ps, const ModelConfig& c, Rng& rng) {
    const int d = c.depth;
    for (int i = 0; i <= d - 2; ++i)
        declare_encoder_stage(ps, enc_name(i), level_in_channels(c, i), c.width_at(i), rng);
    declare_double_conv(ps, "bottleneck", level_in_channels(c, d - 1), c.width_at(d - 1), rng);
    if (c.use_swin) {
        declare_swin_block(ps, "bottleneck.swin0", c.width_at(d - 1), rng);
        declare_swin_block(ps, "bottleneck.swin1", c.width_at(d - 1), rng);
    }
    if (c.use_tab)
        for (int j = 0; j <= d - 2; ++j) declare_tab_block(ps, tab_name(j), c.width_at(j), rng);
    for (int j = d - 2; j >= 0; --j)
        declare_decoder_stage(ps, dec_name(j), c.width_at(j + 1), c.width_at(j), c.width_at(j), rng);
    if (c.use_deep_supervision) {
        declare_seg_head(ps, aux_name(d - 1), c.width_at(d - 1), c.num_classes, rng);
        for (int s = d - 2; s >= 1; --s) declare_seg_head(ps, aux_name(s), c.width_at(s), c.num_classes, rng);
    }
    declare_seg_head(ps, "head.main", c.width_at(0), c.num_classes, rng);
}

}  // namespace

void ModelConfig::validate() const {
    if (depth < 2) fail("config: depth must be >= 2, got " + std::to_string(depth));
    if (base_width < 1) fail("config: base_width must be >= 1");
    if (num_classes < 2) fail("config: num_classes must be >= 2");
    if (in_channels < 1) fail("config: in_channels must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) fail("config: dropout_p must lie in [0,1)");
    const Index div = pow2(depth);
    if (input_height <= 0 || input_width <= 0 || input_height % div || input_width % div)
        fail("config: input extents " + std::to_string(input_width) + "x" + std::to_string(input_height) +
             " must be divisible by 2^depth = " + std::to_string(div));
    if (use_swin) {
        if (swin_window < 2) fail("config: swin_window must be >= 2");
        const Index bh = input_height / pow2(depth - 1), bw = input_width / pow2(depth - 1);
        if (bh % swin_window || bw % swin_window)
            fail("config: bottleneck extents " + std::to_string(bw) + "x" + std::to_string(bh) +
                 " must be divisible by swin_window = " + std::to_string(swin_window));
    }
}

ArchSummary describe(const ModelConfig& c) {
    c.validate();
    ArchSummary s;
    s.encoder_stages = c.depth - 1;
    s.decoder_stages = c.depth - 1;
    s.swin_blocks = c.use_swin ? 2 : 0;
    s.tab_blocks = c.use_tab ? c.depth - 1 : 0;
    s.aux_heads = c.use_deep_supervision ? c.depth - 1 : 0;
    s.leftleg_inputs = c.use_deep_supervision ? c.depth - 1 : 0;
    ParamStore ps;
    Rng rng(0);
    declare_model(ps, c, rng);
    s.trainable_params = ps.trainable_numel();
    return s;
}

ParamStore build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParamStore ps;
    Rng rng(seed);
    declare_model(ps, config, rng);
    return ps;
}

ModelOutputs model_forward(Tape* tp, ParamStore& ps, const ModelConfig& c, const Tensor& x,
                           bool train, Rng& rng) {
    c.validate();
    if (x.ndim() != 4 || x.dim(1) != c.in_channels || x.dim(2) != c.input_height || x.dim(3) != c.input_width)
        fail("model_forward: input " + shape_str(x.shape) + " does not match configured extents (N," +
             std::to_string(c.in_channels) + "," + std::to_string(c.input_height) + "," +
             std::to_string(c.input_width) + ")");
    if (tp) ps.track_all(*tp);

    const int d = c.depth;
    // left leg: the input image average-pooled to each encoder scale
    std::vector<Tensor> leg(static_cast<std::size_t>(d));
    if (c.use_deep_supervision) {
        leg[0] = x;
        for (int s = 1; s <= d - 1; ++s) leg[static_cast<std::size_t>(s)] = avg_pool2d(tp, leg[static_cast<std::size_t>(s - 1)], 2, 2);
    }

    std::vector<Tensor> skips(static_cast<std::size_t>(d - 1));
    Tensor cur = x;
    for (int i = 0; i <= d - 2; ++i) {
        Tensor stage_in = (c.use_deep_supervision && i > 0)
                              ? concat_channels(tp, cur, leg[static_cast<std::size_t>(i)])
                              : cur;
        StagePair p = encoder_stage(tp, ps, enc_name(i), stage_in, c.dropout_p, train, rng);
        skips[static_cast<std::size_t>(i)] = p.features;
        cur = p.pooled;
    }

    Tensor bot_in = c.use_deep_supervision ? concat_channels(tp, cur, leg[static_cast<std::size_t>(d - 1)]) : cur;
    Tensor bot = dropout(tp, double_conv(tp, ps, "bottleneck", bot_in, train), c.dropout_p, rng, train);
    if (c.use_swin) {
        const int heads = swin_head_count(c.width_at(d - 1));
        bot = swin_block(tp, ps, "bottleneck.swin0", bot, c.swin_window, heads, 0);
        bot = swin_block(tp, ps, "bottleneck.swin1", bot, c.swin_window, heads, c.swin_window / 2);
    }

    ModelOutputs out;
    std::vector<Tensor> aux_at(static_cast<std::size_t>(d));  // indexed by scale
    if (c.use_deep_supervision)
        aux_at[static_cast<std::size_t>(d - 1)] = seg_head(tp, ps, aux_name(d - 1), bot, c.num_classes);

    cur = bot;
    for (int j = d - 2; j >= 0; --j) {
        Tensor gate = c.use_tab ? tab_block(tp, ps, tab_name(j), skips[static_cast<std::size_t>(j)])
                                : skips[static_cast<std::size_t>(j)];
        cur = decoder_stage(tp, ps, dec_name(j), cur, gate, train);
        if (c.use_deep_supervision && j >= 1)
            aux_at[static_cast<std::size_t>(j)] = seg_head(tp, ps, aux_name(j), cur, c.num_classes);
    }
    out.main = seg_head(tp, ps, "head.main", cur, c.num_classes);
    if (c.use_deep_supervision)
        for (int s = 1; s <= d - 1; ++s) out.aux.push_back(aux_at[static_cast<std::size_t>(s)]);
    return out;
}

}  // namespace teethseg
