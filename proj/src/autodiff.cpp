#include "protosolo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace protosolo {

Tensor& Node::ensure_grad()
{
    if (grad.shape() != value.shape() || grad.size() != value.size()) {
        grad = Tensor(value.shape(), 0.0);
    }
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

namespace {

using Parents = std::vector<std::shared_ptr<Node>>;

// Builds the output node; parents and closure are attached only when a gradient is needed.
Var make_result(Tensor value, std::string_view op, Parents parents, std::function<void(Node&)> fn)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw std::invalid_argument(message);
    }
}

} // namespace

Var conv2d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride)
{
    const Tensor& x = input.value();
    const Tensor& k = kernels.value();
    require(x.rank() == 3, "conv2d: input must be [Cin,H,W], got " + shape_to_string(x.shape()));
    require(k.rank() == 4, "conv2d: kernels must be [Cout,Cin,kh,kw], got " + shape_to_string(k.shape()));
    require(stride >= 1, "conv2d: stride must be positive");
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    require(k.dim(1) == cin, "conv2d: kernels expect " + std::to_string(k.dim(1)) + " input channels, input has " +
                                 std::to_string(cin));
    require(kh <= h && kw <= w, "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    require(bias.value().shape() == Shape{cout}, "conv2d: bias must be [" + std::to_string(cout) + "]");

    const std::size_t oh = (h - kh) / stride + 1;
    const std::size_t ow = (w - kw) / stride + 1;
    Tensor out(Shape{cout, oh, ow});
    const double* xd = x.data().data();
    const double* kd = k.data().data();
    const double* bd = bias.value().data().data();
    double* od = out.data().data();

    for (std::size_t co = 0; co < cout; ++co) {
        double* oplane = od + co * oh * ow;
        std::fill(oplane, oplane + oh * ow, bd[co]);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xplane = xd + ci * h * w;
            for (std::size_t ki = 0; ki < kh; ++ki) {
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    const double wv = kd[((co * cin + ci) * kh + ki) * kw + kj];
                    for (std::size_t r = 0; r < oh; ++r) {
                        const double* xrow = xplane + (r * stride + ki) * w + kj;
                        double* orow = oplane + r * ow;
                        for (std::size_t c = 0; c < ow; ++c) {
                            orow[c] += wv * xrow[c * stride];
                        }
                    }
                }
            }
        }
    }

    return make_result(std::move(out), "conv2d", {input.node(), kernels.node(), bias.node()},
                       [=](Node& self) {
                           Node& in = *self.parents[0];
                           Node& ker = *self.parents[1];
                           Node& b = *self.parents[2];
                           const double* g = self.grad.data().data();
                           const double* xv = in.value.data().data();
                           const double* kv = ker.value.data().data();
                           double* gx = in.requires_grad ? in.ensure_grad().data().data() : nullptr;
                           double* gk = ker.requires_grad ? ker.ensure_grad().data().data() : nullptr;
                           if (b.requires_grad) {
                               double* gb = b.ensure_grad().data().data();
                               for (std::size_t co = 0; co < cout; ++co) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < oh * ow; ++i) {
                                       acc += g[co * oh * ow + i];
                                   }
                                   gb[co] += acc;
                               }
                           }
                           if (gx == nullptr && gk == nullptr) {
                               return;
                           }
                           for (std::size_t co = 0; co < cout; ++co) {
                               const double* gplane = g + co * oh * ow;
                               for (std::size_t ci = 0; ci < cin; ++ci) {
                                   const double* xplane = xv + ci * h * w;
                                   for (std::size_t ki = 0; ki < kh; ++ki) {
                                       for (std::size_t kj = 0; kj < kw; ++kj) {
                                           const std::size_t kidx = ((co * cin + ci) * kh + ki) * kw + kj;
                                           const double wv = kv[kidx];
                                           double acc = 0.0;
                                           for (std::size_t r = 0; r < oh; ++r) {
                                               const std::size_t base = (r * stride + ki) * w + kj;
                                               const double* grow = gplane + r * ow;
                                               for (std::size_t c = 0; c < ow; ++c) {
                                                   acc += grow[c] * xplane[base + c * stride];
                                               }
                                               if (gx != nullptr) {
                                                   double* gxrow = gx + ci * h * w + base;
                                                   for (std::size_t c = 0; c < ow; ++c) {
                                                       gxrow[c * stride] += wv * grow[c];
                                                   }
                                               }
                                           }
                                           if (gk != nullptr) {
                                               gk[kidx] += acc;
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Var relu(const Var& input)
{
    Tensor out = input.value();
    for (double& v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return make_result(std::move(out), "relu", {input.node()}, [](Node& self) {
        Node& in = *self.parents[0];
        auto gi = in.ensure_grad().data();
        const auto x = in.value.data();
        const auto g = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) {
                gi[i] += g[i];
            }
        }
    });
}

Var linear(const Var& input, const Var& weights)
{
    const Tensor& x = input.value();
    const Tensor& wt = weights.value();
    require(x.rank() == 1 && wt.rank() == 2 && wt.dim(1) == x.dim(0),
            "linear: weights " + shape_to_string(wt.shape()) + " incompatible with input " + shape_to_string(x.shape()));
    const std::size_t rows = wt.dim(0), cols = wt.dim(1);
    Tensor out(Shape{rows});
    for (std::size_t t = 0; t < rows; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            acc += wt.at(t, k) * x[k];
        }
        out[t] = acc;
    }
    return make_result(std::move(out), "linear", {input.node(), weights.node()}, [rows, cols](Node& self) {
        Node& in = *self.parents[0];
        Node& w = *self.parents[1];
        const Tensor& g = self.grad;
        if (in.requires_grad) {
            Tensor& gi = in.ensure_grad();
            for (std::size_t t = 0; t < rows; ++t) {
                for (std::size_t k = 0; k < cols; ++k) {
                    gi[k] += w.value.at(t, k) * g[t];
                }
            }
        }
        if (w.requires_grad) {
            Tensor& gw = w.ensure_grad();
            for (std::size_t t = 0; t < rows; ++t) {
                for (std::size_t k = 0; k < cols; ++k) {
                    gw.at(t, k) += g[t] * in.value[k];
                }
            }
        }
    });
}

Var softmax_cross_entropy(const Var& logits, std::size_t label)
{
    const Tensor& z = logits.value();
    require(z.rank() == 1 && z.size() > 0, "softmax_cross_entropy: logits must be a nonempty vector");
    if (label >= z.size()) {
        throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                                std::to_string(z.size()) + " classes");
    }
    const double m = *std::max_element(z.data().begin(), z.data().end());
    double denom = 0.0;
    for (double v : z.data()) {
        denom += std::exp(v - m);
    }
    const double lse = m + std::log(denom);
    return make_result(Tensor::scalar(lse - z[label]), "softmax_cross_entropy", {logits.node()},
                       [label, lse](Node& self) {
                           Node& in = *self.parents[0];
                           Tensor& gi = in.ensure_grad();
                           const double g = self.grad.item();
                           for (std::size_t i = 0; i < gi.size(); ++i) {
                               const double p = std::exp(in.value[i] - lse);
                               gi[i] += g * (p - (i == label ? 1.0 : 0.0));
                           }
                       });
}

Var sq_l2_distance(const Var& a, const Var& b)
{
    require(a.value().same_shape(b.value()), "sq_l2_distance: shape mismatch " + shape_to_string(a.shape()) +
                                                 " vs " + shape_to_string(b.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return make_result(Tensor::scalar(acc), "sq_l2_distance", {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        const double g = self.grad.item();
        for (std::size_t i = 0; i < na.value.size(); ++i) {
            const double d = 2.0 * g * (na.value[i] - nb.value[i]);
            if (na.requires_grad) {
                na.ensure_grad()[i] += d;
            }
            if (nb.requires_grad) {
                nb.ensure_grad()[i] -= d;
            }
        }
    });
}

namespace {

Var select_one(const Var& values, std::size_t index, std::string_view op)
{
    Var out = make_result(Tensor::scalar(values.value()[index]), op, {values.node()}, [index](Node& self) {
        self.parents[0]->ensure_grad()[index] += self.grad.item();
    });
    out.node()->decisions = {index};
    return out;
}

} // namespace

ArgResult max_with_argmax(const Var& values)
{
    const auto v = values.value().data();
    require(!v.empty(), "max_with_argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return {select_one(values, best, "max"), best};
}

ArgResult min_over(const Var& values, std::span<const std::size_t> indices)
{
    require(!indices.empty(), "min_over: empty index set");
    const auto v = values.value().data();
    std::size_t best = indices[0];
    for (std::size_t idx : indices) {
        if (idx >= v.size()) {
            throw std::out_of_range("min_over: index " + std::to_string(idx) + " out of range");
        }
        if (v[idx] < v[best] || (v[idx] == v[best] && idx < best)) {
            best = idx;
        }
    }
    return {select_one(values, best, "min"), best};
}

Var pairwise_sq_distances(const Var& rows, const Var& cols)
{
    const Tensor& a = rows.value();
    const Tensor& b = cols.value();
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
            "pairwise_sq_distances: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                shape_to_string(b.shape()));
    const std::size_t p = a.dim(0), q = b.dim(0), len = a.dim(1);
    Tensor out(Shape{p, q});
    for (std::size_t i = 0; i < p; ++i) {
        const double* ar = a.data().data() + i * len;
        for (std::size_t j = 0; j < q; ++j) {
            const double* br = b.data().data() + j * len;
            double acc = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const double d = ar[l] - br[l];
                acc += d * d;
            }
            out.at(i, j) = acc;
        }
    }
    return make_result(std::move(out), "pairwise_sq_distances", {rows.node(), cols.node()},
                       [p, q, len](Node& self) {
                           Node& na = *self.parents[0];
                           Node& nb = *self.parents[1];
                           double* ga = na.requires_grad ? na.ensure_grad().data().data() : nullptr;
                           double* gb = nb.requires_grad ? nb.ensure_grad().data().data() : nullptr;
                           const double* av = na.value.data().data();
                           const double* bv = nb.value.data().data();
                           for (std::size_t i = 0; i < p; ++i) {
                               for (std::size_t j = 0; j < q; ++j) {
                                   const double g = self.grad.at(i, j);
                                   if (g == 0.0) {
                                       continue;
                                   }
                                   for (std::size_t l = 0; l < len; ++l) {
                                       const double d = 2.0 * g * (av[i * len + l] - bv[j * len + l]);
                                       if (ga != nullptr) {
                                           ga[i * len + l] += d;
                                       }
                                       if (gb != nullptr) {
                                           gb[j * len + l] -= d;
                                       }
                                   }
                               }
                           }
                       });
}

Var log_ratio_similarity(const Var& distances, double eps)
{
    require(eps > 0.0, "log_ratio_similarity: epsilon must be positive");
    Tensor out = distances.value();
    for (double& d : out.data()) {
        // ln((d+1)/(d+eps)) written as log1p of the excess over one.
        d = std::log1p((1.0 - eps) / (d + eps));
    }
    return make_result(std::move(out), "log_ratio_similarity", {distances.node()}, [eps](Node& self) {
        Node& in = *self.parents[0];
        Tensor& gi = in.ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) {
            const double d = in.value[i];
            gi[i] += self.grad[i] * (1.0 / (d + 1.0) - 1.0 / (d + eps));
        }
    });
}

RowArgResult row_max(const Var& values)
{
    const Tensor& v = values.value();
    require(v.rank() == 2 && v.dim(1) > 0, "row_max: expected a nonempty matrix, got " + shape_to_string(v.shape()));
    const std::size_t rows = v.dim(0), cols = v.dim(1);
    Tensor out(Shape{rows});
    std::vector<std::size_t> idx(rows, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c) {
            if (v.at(r, c) > v.at(r, best)) {
                best = c;
            }
        }
        idx[r] = best;
        out[r] = v.at(r, best);
    }
    Var result = make_result(std::move(out), "row_max", {values.node()}, [idx, cols](Node& self) {
        Tensor& gi = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            gi[r * cols + idx[r]] += self.grad[r];
        }
    });
    result.node()->decisions = idx;
    return {std::move(result), std::move(idx)};
}

Var reshape(const Var& input, Shape shape)
{
    require(shape_product(shape) == input.value().size(),
            "reshape: cannot view " + shape_to_string(input.shape()) + " as " + shape_to_string(shape));
    return make_result(input.value().reshaped(std::move(shape)), "reshape", {input.node()}, [](Node& self) {
        Tensor& gi = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) {
            gi[i] += self.grad[i];
        }
    });
}

Var transpose2d(const Var& input)
{
    const Tensor& v = input.value();
    require(v.rank() == 2, "transpose2d: expected a matrix");
    const std::size_t rows = v.dim(0), cols = v.dim(1);
    Tensor out(Shape{cols, rows});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.at(c, r) = v.at(r, c);
        }
    }
    return make_result(std::move(out), "transpose2d", {input.node()}, [rows, cols](Node& self) {
        Tensor& gi = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                gi.at(r, c) += self.grad.at(c, r);
            }
        }
    });
}

Var add(const Var& a, const Var& b)
{
    require(a.value().same_shape(b.value()), "add: shape mismatch");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b.value()[i];
    }
    return make_result(std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                Tensor& gp = p->ensure_grad();
                for (std::size_t i = 0; i < gp.size(); ++i) {
                    gp[i] += self.grad[i];
                }
            }
        }
    });
}

Var scale(const Var& input, double factor)
{
    Tensor out = input.value();
    for (double& v : out.data()) {
        v *= factor;
    }
    return make_result(std::move(out), "scale", {input.node()}, [factor](Node& self) {
        Tensor& gi = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) {
            gi[i] += factor * self.grad[i];
        }
    });
}

Var sum(const Var& input)
{
    double acc = 0.0;
    for (double v : input.value().data()) {
        acc += v;
    }
    return make_result(Tensor::scalar(acc), "sum", {input.node()}, [](Node& self) {
        Tensor& gi = self.parents[0]->ensure_grad();
        const double g = self.grad.item();
        for (double& v : gi.data()) {
            v += g;
        }
    });
}

Var add_n(std::span<const Var> terms)
{
    require(!terms.empty(), "add_n: no terms");
    Tensor out(terms[0].shape(), 0.0);
    Parents parents;
    parents.reserve(terms.size());
    for (const Var& t : terms) {
        require(t.value().same_shape(out), "add_n: shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += t.value()[i];
        }
        parents.push_back(t.node());
    }
    return make_result(std::move(out), "add_n", std::move(parents), [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                Tensor& gp = p->ensure_grad();
                for (std::size_t i = 0; i < gp.size(); ++i) {
                    gp[i] += self.grad[i];
                }
            }
        }
    });
}

Var masked_abs_sum(const Var& input, std::span<const unsigned char> mask)
{
    require(mask.size() == input.value().size(), "masked_abs_sum: mask size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0) {
            acc += std::abs(input.value()[i]);
        }
    }
    std::vector<unsigned char> m(mask.begin(), mask.end());
    return make_result(Tensor::scalar(acc), "masked_abs_sum", {input.node()}, [m = std::move(m)](Node& self) {
        Node& in = *self.parents[0];
        Tensor& gi = in.ensure_grad();
        const double g = self.grad.item();
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i] != 0) {
                const double v = in.value[i];
                gi[i] += g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
            }
        }
    });
}

namespace {

// Post-order over nodes that carry a gradient path; parents precede children.
std::vector<Node*> topological_order(Node* root)
{
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }
    return order;
}

} // namespace

void backward(const Var& loss)
{
    if (loss.value().size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
    }
    Node* root = loss.node().get();
    if (!root->requires_grad) {
        return;
    }
    const auto order = topological_order(root);
    root->ensure_grad().fill(0.0);
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->grad.size() == node->value.size()) {
            node->backward(*node);
        }
    }
}

std::uint64_t decision_fingerprint(const Var& root)
{
    // FNV-1a over the discrete choices, visited in a fixed order.
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }
    for (Node* node : order) {
        for (std::size_t d : node->decisions) {
            mix(d + 1);
        }
        if ((node->op == "relu" || node->op == "masked_abs_sum") && !node->parents.empty()) {
            for (double v : node->parents[0]->value.data()) {
                mix(v > 0.0 ? 1 : (v < 0.0 ? 2 : 3));
            }
        }
        mix(0xffULL);
    }
    return h;
}

} // namespace protosolo
