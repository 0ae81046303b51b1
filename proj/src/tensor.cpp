#include "teethseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace teethseg {

Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Tensor::Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<Index>(data.size()))
        fail("tensor: shape " + shape_str(shape) + " does not match data length " +
             std::to_string(data.size()));
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

std::string Rng::state_str() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) fail("rng: malformed engine state string");
}

int Tape::leaf(Tensor& t) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({"leaf", {}, t.shape, nullptr});
    grads_.emplace_back();
    t.node = id;
    return id;
}

int Tape::record(const char* op, std::vector<int> inputs, const Shape& out_shape,
                 std::function<void(Tape&, int)> backward) {
    for (int in : inputs)
        if (in >= static_cast<int>(nodes_.size()))
            fail(std::string("tape: record for '") + op + "' references a future node");
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({op, std::move(inputs), out_shape, std::move(backward)});
    grads_.emplace_back();
    return id;
}

std::vector<double>& Tape::grad_buffer(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(shape_numel(nodes_[static_cast<std::size_t>(node)].shape)), 0.0);
    return g;
}

const std::vector<double>* Tape::grad_if_set(int node) const {
    const auto& g = grads_[static_cast<std::size_t>(node)];
    return g.empty() ? nullptr : &g;
}

void Tape::backward(const Tensor& loss) {
    if (loss.node < 0) fail("backward: loss is not tracked by this tape");
    if (loss.numel() != 1) fail("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    if (backward_done_) fail("backward: called twice without reset");
    backward_done_ = true;

    grad_buffer(loss.node)[0] = 1.0;
    for (int i = loss.node; i >= 0; --i) {
        const auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.back) continue;
        if (grads_[static_cast<std::size_t>(i)].empty()) continue;  // unreachable from loss
        n.back(*this, i);
    }
}

Tensor Tape::grad(int node) const {
    if (node < 0) fail("grad: tensor is not tracked by this tape");
    Tensor g(nodes_[static_cast<std::size_t>(node)].shape);
    const auto* buf = grad_if_set(node);
    if (buf) g.data = *buf;
    return g;
}

Tensor Tape::grad(const Tensor& t) const { return grad(t.node); }

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    backward_done_ = false;
}

}  // namespace teethseg
