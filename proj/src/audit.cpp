#include "teethseg/audit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "teethseg/loss.hpp"
#include "teethseg/model.hpp"
#include "teethseg/ops.hpp"

namespace teethseg {

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// magnitudes in [0.1, 1] so finite differences stay away from relu kinks and
// pooling ties
Tensor rand_tensor_off_kinks(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (Index i = 0; i < t.numel(); ++i) {
        const double mag = 0.1 + 0.9 * rng.uniform();
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

using LossFn = std::function<Tensor(Tape*, ParamStore&)>;

// Gradient audit of one named parameter: analytic grad from a tracked tape vs
// central finite differences through forward-only evaluation.
double param_grad_check(const ParamStore& base, const std::string& name, const LossFn& loss_fn,
                        double h = 1e-5) {
    Tape tape;
    ParamStore ps = base;
    Tensor loss = loss_fn(&tape, ps);
    tape.backward(loss);
    const Tensor analytic = tape.grad(ps.value(name));

    double worst = 0.0;
    const Tensor& origin = base.value(name);
    for (Index i = 0; i < origin.numel(); ++i) {
        ParamStore pp = base;
        pp.value(name)[i] += h;
        ParamStore pm = base;
        pm.value(name)[i] -= h;
        const double fp = loss_fn(nullptr, pp)[0];
        const double fm = loss_fn(nullptr, pm)[0];
        const double cd = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        worst = std::max(worst, std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8}));
    }
    return worst;
}

class Audit {
  public:
    void observe(const std::string& name, double err, double threshold) {
        auto& row = rows_[name];
        row.name = name;
        row.threshold = threshold;
        row.worst = std::max(row.worst, err);
        row.pass = row.worst < threshold;
    }

    std::vector<AuditRow> rows() const {
        std::vector<AuditRow> out;
        for (const auto& [k, v] : rows_) out.push_back(v);
        return out;
    }

  private:
    std::map<std::string, AuditRow> rows_;
};

void audit_primitives(Audit& a, std::uint64_t seed) {
    Rng rng(seed);
    Rng mixr(seed ^ 0xABCDEF123456ULL);
    const double kTol = 1e-4;

    Tensor x = rand_tensor_off_kinks({1, 2, 4, 4}, rng);
    Tensor w = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor b = rand_tensor({3}, rng, -0.2, 0.2);
    Tensor mix = rand_tensor({1, 3, 4, 4}, mixr, 0.5, 1.5);
    auto weighted = [](Tape& t, const Tensor& y, const Tensor& m) { return sum_all(&t, mul(&t, y, m)); };

    a.observe("conv2d.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, conv2d(&t, v, w, b, 1, 1), mix); }, x), kTol);
    a.observe("conv2d.w", grad_check([&](Tape& t, Tensor& v) { return weighted(t, conv2d(&t, x, v, b, 1, 1), mix); }, w), kTol);
    a.observe("conv2d.b", grad_check([&](Tape& t, Tensor& v) { return weighted(t, conv2d(&t, x, w, v, 1, 1), mix); }, b), kTol);

    Tensor wt = rand_tensor({2, 3, 2, 2}, rng, -0.5, 0.5);
    Tensor mix_up = rand_tensor({1, 3, 8, 8}, mixr, 0.5, 1.5);
    a.observe("conv_transpose2d.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, conv_transpose2d(&t, v, wt, b, 2), mix_up); }, x), kTol);
    a.observe("conv_transpose2d.w",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, conv_transpose2d(&t, x, v, b, 2), mix_up); }, wt), kTol);

    Tensor mix_half = rand_tensor({1, 2, 2, 2}, mixr, 0.5, 1.5);
    a.observe("max_pool2d.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, max_pool2d(&t, v, 2, 2), mix_half); }, x), kTol);
    a.observe("avg_pool2d.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, avg_pool2d(&t, v, 2, 2), mix_half); }, x), kTol);

    Tensor gm = rand_tensor({2}, rng, 0.5, 1.5), bt = rand_tensor({2}, rng);
    Tensor mix_x = rand_tensor({1, 2, 4, 4}, mixr, 0.5, 1.5);
    auto bn = [&](Tape* t, const Tensor& input, const Tensor& g_, const Tensor& b_) {
        Tensor rm({2}, 0.0), rv({2}, 1.0);
        return batch_norm(t, input, g_, b_, rm, rv, 1e-5, true);
    };
    a.observe("batch_norm.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, bn(&t, v, gm, bt), mix_x); }, x), kTol);
    a.observe("batch_norm.gamma", grad_check([&](Tape& t, Tensor& v) { return weighted(t, bn(&t, x, v, bt), mix_x); }, gm), kTol);
    a.observe("batch_norm.beta", grad_check([&](Tape& t, Tensor& v) { return weighted(t, bn(&t, x, gm, v), mix_x); }, bt), kTol);

    Tensor tok = rand_tensor({2, 4, 8}, rng);
    Tensor lg = rand_tensor({8}, rng, 0.5, 1.5), lb = rand_tensor({8}, rng);
    Tensor mix_tok = rand_tensor({2, 4, 8}, mixr, 0.5, 1.5);
    a.observe("layer_norm.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, layer_norm(&t, v, lg, lb, 1e-5), mix_tok); }, tok), kTol);
    a.observe("layer_norm.gamma",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, layer_norm(&t, tok, v, lb, 1e-5), mix_tok); }, lg), kTol);
    a.observe("layer_norm.beta",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, layer_norm(&t, tok, lg, v, 1e-5), mix_tok); }, lb), kTol);

    Tensor q = rand_tensor({2, 4, 8}, rng), k = rand_tensor({2, 4, 8}, rng), vv = rand_tensor({2, 4, 8}, rng);
    a.observe("attention.q", grad_check([&](Tape& t, Tensor& u) { return weighted(t, attention(&t, u, k, vv, 2), mix_tok); }, q), kTol);
    a.observe("attention.k", grad_check([&](Tape& t, Tensor& u) { return weighted(t, attention(&t, q, u, vv, 2), mix_tok); }, k), kTol);
    a.observe("attention.v", grad_check([&](Tape& t, Tensor& u) { return weighted(t, attention(&t, q, k, u, 2), mix_tok); }, vv), kTol);

    a.observe("window_pair.x", grad_check([&](Tape& t, Tensor& v) {
                  Tensor part = window_partition(&t, v, 2, 1);
                  return weighted(t, window_merge(&t, part, v.shape, 2, 1), mix_x);
              }, rand_tensor({1, 2, 4, 4}, rng)), kTol);

    a.observe("relu.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, relu(&t, v), mix_x); }, x), kTol);
    a.observe("sigmoid.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, sigmoid(&t, v), mix_x); }, x), kTol);
    a.observe("softmax.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, softmax(&t, v, 1), mix_x); }, x), kTol);
    a.observe("dropout.x", grad_check([&](Tape& t, Tensor& v) {
                  Rng mask_rng(911);
                  return weighted(t, dropout(&t, v, 0.3, mask_rng, true), mix_x);
              }, x), kTol);
    a.observe("add.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, add(&t, v, x), mix_x); }, x), kTol);
    a.observe("mul.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, mul(&t, v, v), mix_x); }, x), kTol);

    Tensor lw = rand_tensor({8, 6}, rng, -0.5, 0.5), lbias = rand_tensor({6}, rng, -0.2, 0.2);
    Tensor mix_lin = rand_tensor({2, 4, 6}, mixr, 0.5, 1.5);
    a.observe("linear.x", grad_check([&](Tape& t, Tensor& v) { return weighted(t, linear(&t, v, lw, lbias), mix_lin); }, tok), kTol);
    a.observe("linear.w", grad_check([&](Tape& t, Tensor& v) { return weighted(t, linear(&t, tok, v, lbias), mix_lin); }, lw), kTol);

    Tensor gate_s = rand_tensor({1, 1, 4, 4}, rng, 0.1, 0.9);
    Tensor gate_c = rand_tensor({1, 2}, rng, 0.1, 0.9);
    a.observe("mul_spatial_gate.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, mul_spatial_gate(&t, v, gate_s), mix_x); }, x), kTol);
    a.observe("mul_channel_gate.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, mul_channel_gate(&t, v, gate_c), mix_x); }, x), kTol);
    Tensor mix_nc = rand_tensor({1, 2}, mixr, 0.5, 1.5);
    a.observe("global_avg_pool.x",
              grad_check([&](Tape& t, Tensor& v) { return weighted(t, global_avg_pool(&t, v), mix_nc); }, x), kTol);
}

void audit_blocks(Audit& a, std::uint64_t seed) {
    Rng rng(seed);
    Rng mixr(seed ^ 0x5555AAAA5555ULL);
    const double kTol = 1e-4;
    auto weighted = [](Tape& t, const Tensor& y, const Tensor& m) { return sum_all(&t, mul(&t, y, m)); };

    {  // encoder stage, no dropout so the function is deterministic per call
        ParamStore ps;
        Rng init(seed + 11);
        declare_encoder_stage(ps, "enc", 2, 4, init);
        Tensor x = rand_tensor_off_kinks({1, 2, 8, 8}, rng);
        Tensor mix = rand_tensor({1, 4, 4, 4}, mixr, 0.5, 1.5);
        auto run = [&](Tape* t, ParamStore& p, const Tensor& input) {
            Rng drop(1);
            return encoder_stage(t, p, "enc", input, 0.0, true, drop).pooled;
        };
        a.observe("encoder_stage.x", grad_check([&](Tape& t, Tensor& v) {
                      ParamStore p = ps;
                      return weighted(t, run(&t, p, v), mix);
                  }, x), kTol);
        a.observe("encoder_stage.conv1.w", param_grad_check(ps, "enc.conv1.w", [&](Tape* t, ParamStore& p) {
                      if (t) p.track_all(*t);
                      Tensor y = run(t, p, x);
                      Tensor m = mix;
                      return t ? sum_all(t, mul(t, y, m)) : sum_all(nullptr, mul(nullptr, y, m));
                  }), kTol);
    }
    {  // decoder stage
        ParamStore ps;
        Rng init(seed + 13);
        declare_decoder_stage(ps, "dec", 4, 2, 2, init);
        Tensor x = rand_tensor_off_kinks({1, 4, 4, 4}, rng);
        Tensor skip = rand_tensor_off_kinks({1, 2, 8, 8}, rng);
        Tensor mix = rand_tensor({1, 2, 8, 8}, mixr, 0.5, 1.5);
        a.observe("decoder_stage.x", grad_check([&](Tape& t, Tensor& v) {
                      ParamStore p = ps;
                      return weighted(t, decoder_stage(&t, p, "dec", v, skip, true), mix);
                  }, x), kTol);
        a.observe("decoder_stage.skip", grad_check([&](Tape& t, Tensor& v) {
                      ParamStore p = ps;
                      return weighted(t, decoder_stage(&t, p, "dec", x, v, true), mix);
                  }, skip), kTol);
    }
    {  // shifted swin pair
        ParamStore ps;
        Rng init(seed + 17);
        declare_swin_block(ps, "s0", 8, init);
        declare_swin_block(ps, "s1", 8, init);
        Tensor x = rand_tensor({1, 8, 4, 4}, rng);
        Tensor mix = rand_tensor({1, 8, 4, 4}, mixr, 0.5, 1.5);
        auto run = [&](Tape* t, ParamStore& p, const Tensor& input) {
            Tensor h = swin_block(t, p, "s0", input, 2, 2, 0);
            return swin_block(t, p, "s1", h, 2, 2, 1);
        };
        a.observe("swin_block.x", grad_check([&](Tape& t, Tensor& v) {
                      ParamStore p = ps;
                      return weighted(t, run(&t, p, v), mix);
                  }, x), kTol);
        a.observe("swin_block.attn.q.w", param_grad_check(ps, "s0.attn.q.w", [&](Tape* t, ParamStore& p) {
                      if (t) p.track_all(*t);
                      return sum_all(t, mul(t, run(t, p, x), mix));
                  }), kTol);
    }
    {  // TAB on a 1x4x8x8 input
        ParamStore ps;
        Rng init(seed + 19);
        declare_tab_block(ps, "tab", 4, init);
        Tensor x = rand_tensor_off_kinks({1, 4, 8, 8}, rng);
        Tensor mix = rand_tensor({1, 4, 8, 8}, mixr, 0.5, 1.5);
        a.observe("tab_block.x", grad_check([&](Tape& t, Tensor& v) {
                      ParamStore p = ps;
                      return weighted(t, tab_block(&t, p, "tab", v), mix);
                  }, x), kTol);
        a.observe("tab_block.spatial.conv1.w", param_grad_check(ps, "tab.spatial.conv1.w", [&](Tape* t, ParamStore& p) {
                      if (t) p.track_all(*t);
                      return sum_all(t, mul(t, tab_block(t, p, "tab", x), mix));
                  }), kTol);
    }
    {  // segmentation head
        ParamStore ps;
        Rng init(seed + 23);
        declare_seg_head(ps, "head", 4, 5, init);
        Tensor x = rand_tensor({1, 4, 4, 4}, rng);
        Tensor mix = rand_tensor({1, 5, 4, 4}, mixr, 0.5, 1.5);
        a.observe("seg_head.x", grad_check([&](Tape& t, Tensor& v) {
                      ParamStore p = ps;
                      return weighted(t, seg_head(&t, p, "head", v, 5), mix);
                  }, x), kTol);
    }
}

void audit_loss(Audit& a, std::uint64_t seed) {
    Rng rng(seed);
    const double kTol = 1e-5;
    Tensor logits = rand_tensor({1, 4, 3, 3}, rng, -2.0, 2.0);
    Tensor y_t({1, 4, 3, 3});
    for (Index p = 0; p < 9; ++p) y_t[rng.uniform_index(4) * 9 + p] = 1.0;  // one-hot per pixel

    a.observe("squared_dice_loss.y_p", grad_check([&](Tape& t, Tensor& v) {
                  return squared_dice_loss(&t, softmax(&t, v, 1), y_t, 1e-6);
              }, logits), kTol);
    a.observe("eq1_verbatim_loss.y_p", grad_check([&](Tape& t, Tensor& v) {
                  return squared_dice_loss_eq1_verbatim(&t, softmax(&t, v, 1), y_t, 1e-6);
              }, logits), kTol);
}

void audit_tiny_model(Audit& a, std::uint64_t seed) {
    const double kTol = 1e-3;
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.base_width = 4;
    cfg.num_classes = 6;
    cfg.input_height = 8;
    cfg.input_width = 8;
    cfg.dropout_p = 0.0;
    ParamStore ps = build_model(cfg, seed);

    Rng rng(seed ^ 0x77777777ULL);
    Tensor x = rand_tensor({1, 1, 8, 8}, rng, 0.05, 0.95);
    Tensor y_t({1, 6, 8, 8});
    for (Index p = 0; p < 64; ++p) y_t[rng.uniform_index(6) * 64 + p] = 1.0;

    auto loss_fn = [&](Tape* t, ParamStore& p, const Tensor& input) {
        Rng drop(1);
        ModelOutputs out = model_forward(t, p, cfg, input, /*train=*/true, drop);
        return total_loss(t, out, y_t, 1e-6, LossVariant::kSquaredDice);
    };
    a.observe("tiny_model.x", grad_check([&](Tape& t, Tensor& v) {
                  ParamStore p = ps;
                  return loss_fn(&t, p, v);
              }, x), kTol);
    a.observe("tiny_model.enc0.conv1.w",
              param_grad_check(ps, "enc0.conv1.w", [&](Tape* t, ParamStore& p) { return loss_fn(t, p, x); }), kTol);
    a.observe("tiny_model.head.main.b",
              param_grad_check(ps, "head.main.b", [&](Tape* t, ParamStore& p) { return loss_fn(t, p, x); }), kTol);
}

}  // namespace

std::vector<AuditRow> run_grad_audit(std::uint64_t base_seed, int num_seeds) {
    Audit a;
    for (int s = 0; s < num_seeds; ++s) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
        audit_primitives(a, seed);
        audit_blocks(a, seed);
        audit_loss(a, seed);
        audit_tiny_model(a, seed);
    }
    return a.rows();
}

bool audit_passed(const std::vector<AuditRow>& rows) {
    for (const auto& r : rows)
        if (!r.pass) return false;
    return !rows.empty();
}

}  // namespace teethseg
