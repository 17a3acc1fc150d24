#pragma once

// Reverse-mode differentiation over a small, fixed operation set.
//
// A computation graph is built eagerly: every op computes its value immediately and,
// when any input requires a gradient, records its parents and a backward closure.
// Graphs are meant to be short-lived (one per training step). Max/min style ops route
// the gradient only to the selected element; ties select the smallest index.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "protosolo/tensor.hpp"

namespace protosolo {

struct Node {
    Tensor value;
    Tensor grad; // same shape as value once populated
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    // Discrete choices made in the forward pass (argmax/argmin indices).
    std::vector<std::size_t> decisions;

    Tensor& ensure_grad();
};

/// Handle to a graph node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    /// Gradient after backward(); an empty tensor if no gradient reached this node.
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    double item() const { return node_->value.item(); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

struct ArgResult {
    Var value;
    std::size_t index = 0;
};

struct RowArgResult {
    Var values;
    std::vector<std::size_t> indices;
};

/// Valid (unpadded) cross-correlation. input [Cin,H,W], kernels [Cout,Cin,kh,kw], bias [Cout].
Var conv2d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride);
Var relu(const Var& input);
/// weights [T,K] times input [K]; no bias.
Var linear(const Var& input, const Var& weights);
/// -log softmax(logits)[label], max-subtracted.
Var softmax_cross_entropy(const Var& logits, std::size_t label);
Var sq_l2_distance(const Var& a, const Var& b);
ArgResult max_with_argmax(const Var& values);
/// Minimum over the listed flat indices of `values`.
ArgResult min_over(const Var& values, std::span<const std::size_t> indices);
/// D[p,q] = ||rows[p] - cols[q]||^2 for rows [P,L] and cols [Q,L].
Var pairwise_sq_distances(const Var& rows, const Var& cols);
/// Elementwise ln((d + 1) / (d + eps)) for d >= 0.
Var log_ratio_similarity(const Var& distances, double eps);
/// Per-row maximum of a [R,C] matrix.
RowArgResult row_max(const Var& values);
Var reshape(const Var& input, Shape shape);
Var transpose2d(const Var& input);
Var add(const Var& a, const Var& b);
Var scale(const Var& input, double factor);
Var sum(const Var& input);
Var add_n(std::span<const Var> terms);
/// Sum of |w| over entries whose mask value is nonzero.
Var masked_abs_sum(const Var& input, std::span<const unsigned char> mask);

/// Reverse traversal from a scalar loss; populates grad() of every reachable node
/// that requires a gradient.
void backward(const Var& loss);

/// Hash of every discrete routing decision in the graph below `root`: argmax/argmin
/// picks, ReLU activity patterns and |x| sign patterns. Two evaluations with equal
/// fingerprints are on the same smooth piece of the loss.
std::uint64_t decision_fingerprint(const Var& root);

} // namespace protosolo
