#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace teethseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

[[noreturn]] void fail(const std::string& msg);

// Dense row-major tensor of 64-bit reals. `node` is the owning tape's node id
// when gradient tracking is on, -1 otherwise.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    int node = -1;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, double fill);
    Tensor(Shape s, std::vector<double> d);

    Index numel() const { return static_cast<Index>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    Index dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double& operator[](Index i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](Index i) const { return data[static_cast<std::size_t>(i)]; }

    double& at2(Index a, Index b) { return data[static_cast<std::size_t>(a * shape[1] + b)]; }
    double& at3(Index a, Index b, Index c) {
        return data[static_cast<std::size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    double& at4(Index a, Index b, Index c, Index d) {
        return data[static_cast<std::size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    double at2(Index a, Index b) const { return data[static_cast<std::size_t>(a * shape[1] + b)]; }
    double at3(Index a, Index b, Index c) const {
        return data[static_cast<std::size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    double at4(Index a, Index b, Index c, Index d) const {
        return data[static_cast<std::size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
};

bool all_finite(const Tensor& t);
bool same_shape(const Tensor& a, const Tensor& b);

// Deterministic RNG. All draws go through explicit integer arithmetic so the
// produced streams are identical across platforms and standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }
    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    Index uniform_index(Index n) { return static_cast<Index>(eng_() % static_cast<std::uint64_t>(n)); }
    bool bernoulli(double p) { return uniform() < p; }

    std::string state_str() const;
    void set_state(const std::string& s);

  private:
    std::mt19937_64 eng_;
};

// Reverse-mode tape. Records one node per primitive application; node ids are
// append-ordered, so every input id of a record precedes the record itself.
class Tape {
  public:
    // Registers t as a leaf (parameter or checked input) and assigns its node id.
    int leaf(Tensor& t);

    // Appends a primitive record. `backward(tape, self)` reads the output
    // gradient at node `self` and accumulates into the input gradients; it is
    // only invoked when the output gradient buffer was touched during the
    // reverse sweep.
    int record(const char* op, std::vector<int> inputs, const Shape& out_shape,
               std::function<void(Tape&, int)> backward);

    void backward(const Tensor& loss);

    // Gradient of a node as a tensor (zeros if never touched).
    Tensor grad(const Tensor& t) const;
    Tensor grad(int node) const;

    // Accumulation buffer for a node, allocated on first use.
    std::vector<double>& grad_buffer(int node);
    // nullptr when the node's gradient was never touched.
    const std::vector<double>* grad_if_set(int node) const;

    void reset();
    std::size_t num_nodes() const { return nodes_.size(); }
    const std::string& op_name(int node) const { return nodes_[static_cast<std::size_t>(node)].op; }
    const Shape& node_shape(int node) const { return nodes_[static_cast<std::size_t>(node)].shape; }

  private:
    struct NodeRec {
        std::string op;
        std::vector<int> inputs;
        Shape shape;
        std::function<void(Tape&, int)> back;
    };
    std::vector<NodeRec> nodes_;
    std::vector<std::vector<double>> grads_;
    bool backward_done_ = false;
};

}  // namespace teethseg
