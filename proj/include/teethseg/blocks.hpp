#pragma once

#include <map>
#include <string>
#include <vector>

#include "teethseg/ops.hpp"

namespace teethseg {

// Named parameter set. Names are block paths ("enc0.conv1.w"); std::map keeps
// them in a fixed lexicographic order, which the optimizer and checkpoint
// formats rely on. Non-trainable entries are buffers (batch-norm running
// statistics).
class ParamStore {
  public:
    struct Entry {
        Tensor value;
        bool trainable = true;
    };

    Tensor& declare(const std::string& name, Shape shape, bool trainable = true);
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    bool is_trainable(const std::string& name) const;

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    Index trainable_numel() const;

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    // Registers every trainable parameter as a leaf on the tape.
    void track_all(Tape& tape);

  private:
    std::map<std::string, Entry> entries_;
};

// He-uniform draw over [-sqrt(6/fan_in), sqrt(6/fan_in)].
void init_he_uniform(Tensor& w, Index fan_in, Rng& rng);

struct StagePair {
    Tensor features;
    Tensor pooled;
};

// [conv3x3 -> BN -> ReLU] x2 shared by encoder stages, the bottleneck and
// decoder tails. Parameter names under `prefix`: conv1.{w,b}, bn1.{gamma,beta,
// running_mean,running_var}, conv2.*, bn2.*.
void declare_double_conv(ParamStore& ps, const std::string& prefix, Index cin, Index cout, Rng& rng);
Tensor double_conv(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x, bool train);

void declare_encoder_stage(ParamStore& ps, const std::string& prefix, Index cin, Index cout, Rng& rng);
StagePair encoder_stage(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x,
                        double dropout_p, bool train, Rng& rng);

void declare_decoder_stage(ParamStore& ps, const std::string& prefix, Index cin_below, Index skip_ch,
                           Index cout, Rng& rng);
Tensor decoder_stage(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x,
                     const Tensor& gated_skip, bool train);

// Windowed self-attention block: LN -> q/k/v/o projections -> residual,
// LN -> position-wise MLP (expansion 4) -> residual, applied on win x win
// tokens after a cyclic roll by `shift`.
void declare_swin_block(ParamStore& ps, const std::string& prefix, Index channels, Rng& rng);
Tensor swin_block(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x, int win,
                  int heads, int shift);

// Skip-connection gate: dense boundary-saliency map (two 3x3 convs down to one
// channel) times a squeeze-excitation channel gate, both in (0,1).
void declare_tab_block(ParamStore& ps, const std::string& prefix, Index channels, Rng& rng);
Tensor tab_block(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& skip);

void declare_seg_head(ParamStore& ps, const std::string& prefix, Index cin, Index num_classes, Rng& rng);
Tensor seg_head(Tape* tp, ParamStore& ps, const std::string& prefix, const Tensor& x, int num_classes);

Index tab_hidden_width(Index channels);
int swin_head_count(Index channels);

}  // namespace teethseg
