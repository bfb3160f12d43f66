#include "lcsd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lcsd/error.hpp"

namespace lcsd {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double b = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros(fan_in, fan_out);
    for (double& v : w.values()) v = rng.uniform(-b, b);
    return w;
}

Mlp::Mlp(const std::vector<std::size_t>& widths, Rng& rng, const std::string& prefix) : widths_(widths) {
    require(widths.size() >= 2, "Mlp: need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        params.add(prefix + ".w" + std::to_string(l), glorot_uniform(widths[l], widths[l + 1], rng));
        params.add(prefix + ".b" + std::to_string(l), Tensor({widths[l + 1]}));
    }
}

Mlp Mlp::zeros(const std::vector<std::size_t>& widths, const std::string& prefix) {
    require(widths.size() >= 2, "Mlp: need at least input and output widths");
    Mlp net;
    net.widths_ = widths;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        net.params.add(prefix + ".w" + std::to_string(l), Tensor::zeros(widths[l], widths[l + 1]));
        net.params.add(prefix + ".b" + std::to_string(l), Tensor({widths[l + 1]}));
    }
    return net;
}

namespace {

void check_input(const Mlp& net, const Tensor& input) {
    if (input.cols() != net.in_dim()) {
        throw ContractViolation("mlp_forward: input last dimension " + std::to_string(input.cols()) +
                                " does not match fan_in " + std::to_string(net.in_dim()));
    }
}

}  // namespace

Tensor mlp_forward(const Mlp& net, const Tensor& input) {
    check_input(net, input);
    Tensor h = input.rank() == 1 ? Tensor::matrix(1, input.size(), {input.values().begin(), input.values().end()})
                                 : input;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        h = kernels::matmul(h, net.weight(l));
        kernels::add_row_inplace(h, net.bias(l));
        if (l + 1 < net.layer_count()) kernels::tanh_inplace(h);
    }
    return h;
}

Var mlp_forward(Tape& tape, const Mlp& net, Var input) {
    check_input(net, input.value());
    Var h = input;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        h = ad::add_bias(ad::matmul(h, tape.param(net.params, 2 * l)), tape.param(net.params, 2 * l + 1));
        if (l + 1 < net.layer_count()) h = ad::tanh(h);
    }
    return h;
}

AdamState::AdamState(const ParamSet& params, AdamConfig cfg)
    : config(cfg), first_moment(params.zeros_like()), second_moment(params.zeros_like()) {
    require(cfg.lr > 0.0, "AdamState: learning rate must be positive");
}

void adam_step(ParamSet& params, const GradList& grads, AdamState& state) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
        throw ContractViolation("adam_step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
    }
    const AdamConfig& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = params[p];
        const Tensor& g = grads[p];
        if (!g.same_shape(w)) {
            throw ContractViolation("adam_step: gradient for " + params.name(p) + " has shape " +
                                    g.shape_string() + ", parameter has " + w.shape_string());
        }
        Tensor& m = state.first_moment[p];
        Tensor& v = state.second_moment[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

namespace {

// Central difference at a shrinking sequence of steps, extrapolated to h -> 0
// with a Neville tableau; keeps the estimate with the smallest error bound.
double ridders_derivative(const std::function<double(double)>& f, double h) {
    constexpr int kTable = 10;
    constexpr double kShrink = 1.4;
    constexpr double kShrink2 = kShrink * kShrink;
    constexpr double kSafe = 2.0;
    double a[kTable][kTable];
    double hh = h;
    a[0][0] = (f(hh) - f(-hh)) / (2.0 * hh);
    double best = a[0][0];
    double err = std::numeric_limits<double>::infinity();
    for (int i = 1; i < kTable; ++i) {
        hh /= kShrink;
        a[0][i] = (f(hh) - f(-hh)) / (2.0 * hh);
        double fac = kShrink2;
        for (int j = 1; j <= i; ++j) {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= kShrink2;
            const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
            if (e <= err) {
                err = e;
                best = a[j][i];
            }
        }
        if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
    }
    return best;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<ParamSet*>& params, double eps,
                           std::size_t max_entries_per_tensor, std::uint64_t sample_seed, FiniteDifference method) {
    require(eps > 0.0, "grad_check: eps must be positive");
    GradCheckReport report;

    Tape tape;
    Var l = loss(tape);
    const std::vector<Tensor> frozen = tape.stop_gradient_values();
    bool finite = true;
    auto evaluate = [&]() {
        Tape t;
        t.replay_stop_gradients(&frozen);
        const double v = loss(t).value().item();
        if (!std::isfinite(v)) finite = false;
        return v;
    };

    if (!std::isfinite(l.value().item())) {
        report.ok = false;
        report.failure = "non-finite loss at base point";
        return report;
    }
    Gradients grads = tape.backprop(l);

    Rng sampler(sample_seed);
    for (ParamSet* set : params) {
        const GradList analytic = grads.of(*set);
        for (std::size_t p = 0; p < set->size(); ++p) {
            Tensor& w = (*set)[p];
            std::vector<std::size_t> entries(w.size());
            std::iota(entries.begin(), entries.end(), std::size_t{0});
            if (max_entries_per_tensor != 0 && entries.size() > max_entries_per_tensor) {
                // Partial Fisher-Yates for a sample without replacement.
                for (std::size_t i = 0; i < max_entries_per_tensor; ++i)
                    std::swap(entries[i], entries[i + sampler.below(entries.size() - i)]);
                entries.resize(max_entries_per_tensor);
            }
            for (std::size_t i : entries) {
                const std::string where = set->name(p) + "[" + std::to_string(i) + "]";
                const double saved = w[i];
                auto shifted = [&](double d) {
                    w[i] = saved + d;
                    const double v = evaluate();
                    w[i] = saved;
                    return v;
                };
                const double fd = method == FiniteDifference::ridders
                                      ? ridders_derivative(shifted, eps)
                                      : (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                const double a = analytic[p][i];
                if (!finite || !std::isfinite(fd) || !std::isfinite(a)) {
                    report.ok = false;
                    report.failure = "non-finite value at " + where;
                    return report;
                }
                const double err = std::abs(a - fd) / std::max(1e-12, std::abs(a) + std::abs(fd));
                ++report.checked;
                if (err > report.max_rel_error) {
                    report.max_rel_error = err;
                    report.worst = where;
                }
            }
        }
    }
    return report;
}

}  // namespace lcsd
