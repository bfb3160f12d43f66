#include "lcsd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "lcsd/error.hpp"

namespace lcsd {

std::size_t ParamSet::add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return tensors_.size() - 1;
}

std::size_t ParamSet::element_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

std::vector<Tensor> ParamSet::zeros_like() const {
    std::vector<Tensor> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.emplace_back(t.shape());
    return out;
}

GradList Gradients::of(const ParamSet& set) const {
    auto it = grads_.find(&set);
    if (it == grads_.end()) return set.zeros_like();
    return it->second;
}

GradList& Gradients::slot(const ParamSet& set) {
    auto it = grads_.find(&set);
    if (it == grads_.end()) it = grads_.emplace(&set, set.zeros_like()).first;
    return it->second;
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, nullptr, 0});
    return {this, nodes_.size() - 1};
}

Tensor Tape::stop_gradient(Tensor computed) {
    if (sg_replay_ != nullptr) {
        require(sg_values_.size() < sg_replay_->size(), "Tape: stop-gradient replay list exhausted");
        const Tensor& v = (*sg_replay_)[sg_values_.size()];
        require(v.shape() == computed.shape(), "Tape: stop-gradient replay shape differs");
        computed = v;
    }
    sg_values_.push_back(computed);
    return computed;
}

Var Tape::param(const ParamSet& set, std::size_t index) {
    require(index < set.size(), "Tape::param: index out of range");
    if (std::find(sets_.begin(), sets_.end(), &set) == sets_.end()) sets_.push_back(&set);
    nodes_.push_back(Node{set[index], {}, {}, true, &set, index});
    return {this, nodes_.size() - 1};
}

std::vector<Var> Tape::params(const ParamSet& set) {
    std::vector<Var> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) out.push_back(param(set, i));
    return out;
}

Tensor& Tape::grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) {
        require(p.tape == this, "Tape::record: operand recorded on a different tape");
        needs = needs || nodes_[p.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs, nullptr, 0});
    return {this, nodes_.size() - 1};
}

Gradients Tape::backprop(Var loss) {
    require(loss.tape == this, "backprop: loss recorded on a different tape");
    const Tensor& lv = nodes_[loss.id].value;
    require(lv.size() == 1, "backprop: loss must be a scalar, got shape " + lv.shape_string());

    Gradients out;
    for (const ParamSet* s : sets_) out.slot(*s);
    grad(loss.id).fill(1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
        if (n.set != nullptr) kernels::axpy(1.0, n.grad, out.slot(*n.set)[n.param_index]);
    }
    return out;
}

namespace ad {
namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.size() != b.size() || a.rows() != b.rows()) {
        throw ContractViolation(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(kernels::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        if (tp.needs_grad(a.id)) kernels::axpy(1.0, kernels::matmul_nt(g, tp.value(b)), tp.grad(a.id));
        if (tp.needs_grad(b.id)) kernels::axpy(1.0, kernels::matmul_tn(tp.value(a), g), tp.grad(b.id));
    });
}

Var add_bias(Var x, Var bias) {
    Tensor out = x.value();
    kernels::add_row_inplace(out, bias.value());
    return x.tape->record(std::move(out), {x, bias}, [x, bias](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        if (tp.needs_grad(x.id)) kernels::axpy(1.0, g, tp.grad(x.id));
        if (tp.needs_grad(bias.id)) {
            Tensor& gb = tp.grad(bias.id);
            const std::size_t m = g.cols();
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < m; ++c) gb[c] += g(r, c);
        }
    });
}

Var add(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    kernels::axpy(1.0, b.value(), out);
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        if (tp.needs_grad(a.id)) kernels::axpy(1.0, g, tp.grad(a.id));
        if (tp.needs_grad(b.id)) kernels::axpy(1.0, g, tp.grad(b.id));
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    kernels::axpy(-1.0, b.value(), out);
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        if (tp.needs_grad(a.id)) kernels::axpy(1.0, g, tp.grad(a.id));
        if (tp.needs_grad(b.id)) kernels::axpy(-1.0, g, tp.grad(b.id));
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        if (tp.needs_grad(a.id)) {
            Tensor& ga = tp.grad(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tp.value(b)[i];
        }
        if (tp.needs_grad(b.id)) {
            Tensor& gb = tp.grad(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * tp.value(a)[i];
        }
    });
}

Var scale(Var a, double c) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= c;
    return a.tape->record(std::move(out), {a}, [a, c](Tape& tp, std::size_t self) {
        kernels::axpy(c, tp.grad_of_output(self), tp.grad(a.id));
    });
}

Var tanh(Var a) {
    Tensor out = a.value();
    kernels::tanh_inplace(out);
    return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var square(Var a) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= v;
    return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& tp, std::size_t self) {
        const double g = tp.grad_of_output(self)[0];
        for (double& v : tp.grad(a.id).values()) v += g;
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no operands");
    const std::size_t n = parts.front().value().rows();
    std::size_t width = 0;
    for (Var p : parts) {
        if (p.value().rows() != n) {
            throw ContractViolation("concat_cols: row count " + std::to_string(p.value().rows()) +
                                    " differs from " + std::to_string(n));
        }
        width += p.value().cols();
    }
    Tensor out = Tensor::zeros(n, width);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < n; ++r)
            std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
        offset += v.cols();
    }
    return parts.front().tape->record(std::move(out), parts, [parts](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t w = tp.value(p).cols();
            if (tp.needs_grad(p.id)) {
                Tensor& gp = tp.grad(p.id);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
            }
            off += w;
        }
    });
}

Var gather_rows(Var table, const std::vector<std::size_t>& indices) {
    const Tensor& tv = table.value();
    const std::size_t m = tv.cols();
    Tensor out = Tensor::zeros(indices.size(), m);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        require(indices[r] < tv.rows(), "gather_rows: index " + std::to_string(indices[r]) + " out of range");
        std::copy(tv.row(indices[r]).begin(), tv.row(indices[r]).end(), out.row(r).begin());
    }
    return table.tape->record(std::move(out), {table}, [table, indices](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        Tensor& gt = tp.grad(table.id);
        for (std::size_t r = 0; r < indices.size(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gt(indices[r], c) += g(r, c);
    });
}

Var pack_rows(Var x, const std::vector<std::vector<std::size_t>>& groups, std::size_t width) {
    const Tensor& xv = x.value();
    const std::size_t d = xv.cols();
    require(width >= 1, "pack_rows: width must be positive");
    require(!groups.empty(), "pack_rows: no groups");
    Tensor out = Tensor::zeros(groups.size(), width * d);
    for (std::size_t r = 0; r < groups.size(); ++r) {
        const std::size_t take = std::min(width, groups[r].size());
        for (std::size_t j = 0; j < take; ++j) {
            require(groups[r][j] < xv.rows(), "pack_rows: row index out of range");
            std::copy(xv.row(groups[r][j]).begin(), xv.row(groups[r][j]).end(),
                      out.row(r).begin() + static_cast<std::ptrdiff_t>(j * d));
        }
    }
    return x.tape->record(std::move(out), {x}, [x, groups, width, d](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        Tensor& gx = tp.grad(x.id);
        for (std::size_t r = 0; r < groups.size(); ++r) {
            const std::size_t take = std::min(width, groups[r].size());
            for (std::size_t j = 0; j < take; ++j)
                for (std::size_t c = 0; c < d; ++c) gx(groups[r][j], c) += g(r, j * d + c);
        }
    });
}

Var straight_through(Var latent, Var code) {
    check_same_shape(latent.value(), code.value(), "straight_through");
    // latent + sg(code - latent): the value of `code`, gradient to `latent` only.
    Tensor residual = code.value();
    kernels::axpy(-1.0, latent.value(), residual);
    const bool replay = latent.tape->replaying_stop_gradients();
    residual = latent.tape->stop_gradient(std::move(residual));
    Tensor out = code.value();
    if (replay) {
        out = latent.value();
        kernels::axpy(1.0, residual, out);
    }
    return latent.tape->record(std::move(out), {latent}, [latent](Tape& tp, std::size_t self) {
        kernels::axpy(1.0, tp.grad_of_output(self), tp.grad(latent.id));
    });
}

Var detach(Var a) { return a.tape->constant(a.tape->stop_gradient(a.value())); }

Var row_sq_norm(Var a) {
    const Tensor& v = a.value();
    Tensor out = Tensor::zeros(v.rows(), 1);
    for (std::size_t r = 0; r < v.rows(); ++r) {
        double s = 0.0;
        for (double x : v.row(r)) s += x * x;
        out[r] = s;
    }
    return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_of_output(self);
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad(a.id);
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += 2.0 * x(r, c) * g[r];
    });
}

Var weighted_sum(Var a, const Tensor& weights) {
    require(weights.size() == a.value().size(), "weighted_sum: weight count " + std::to_string(weights.size()) +
                                                    " differs from operand size " +
                                                    std::to_string(a.value().size()));
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
    return a.tape->record(Tensor::scalar(s), {a}, [a, weights](Tape& tp, std::size_t self) {
        const double g = tp.grad_of_output(self)[0];
        Tensor& ga = tp.grad(a.id);
        for (std::size_t i = 0; i < weights.size(); ++i) ga[i] += g * weights[i];
    });
}

Var mse(Var a, const Tensor& target) {
    check_same_shape(a.value(), target, "mse");
    const Tensor& v = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double e = v[i] - target[i];
        s += e * e;
    }
    const double n = static_cast<double>(v.size());
    return a.tape->record(Tensor::scalar(s / n), {a}, [a, target, n](Tape& tp, std::size_t self) {
        const double g = tp.grad_of_output(self)[0];
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad(a.id);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * 2.0 * (x[i] - target[i]) / n;
    });
}

}  // namespace ad
}  // namespace lcsd
