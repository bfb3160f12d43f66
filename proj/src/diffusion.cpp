#include "lcsd/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "lcsd/error.hpp"

namespace lcsd {
namespace {

double clip1(double v) { return std::min(1.0, std::max(-1.0, v)); }

Tensor time_embedding_rows(std::span<const double> timesteps, std::size_t horizon) {
    Tensor e = Tensor::zeros(timesteps.size(), kTimeEmbedDim);
    for (std::size_t r = 0; r < timesteps.size(); ++r) {
        const auto v = timestep_embedding(timesteps[r], horizon);
        std::copy(v.begin(), v.end(), e.row(r).begin());
    }
    return e;
}

void check_inputs(const DenoiseNet& net, const Tensor& noisy, const Tensor& states, const Tensor& conds) {
    const DenoiserConfig& c = net.config();
    require(noisy.cols() == c.action_dim, "denoise: noisy action width " + std::to_string(noisy.cols()) +
                                              " != " + std::to_string(c.action_dim));
    require(states.cols() == c.state_dim, "denoise: state width " + std::to_string(states.cols()) +
                                              " != " + std::to_string(c.state_dim));
    if (conds.cols() != c.cond_dim) {
        throw ContractViolation("denoise: condition width " + std::to_string(conds.cols()) +
                                " does not match the net's condition mode (" + std::to_string(c.cond_dim) + ")");
    }
    require(noisy.rows() == states.rows() && states.rows() == conds.rows(), "denoise: row counts differ");
}

}  // namespace

NoiseSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
    if (steps < 1 || !(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw ContractViolation("make_schedule: need T >= 1 and 0 < beta_min <= beta_max < 1 (got T=" +
                                std::to_string(steps) + ", beta_min=" + std::to_string(beta_min) +
                                ", beta_max=" + std::to_string(beta_max) + ")");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    double running = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double b = steps == 1 ? beta_min
                                    : beta_min + (beta_max - beta_min) * static_cast<double>(i) /
                                                     static_cast<double>(steps - 1);
        s.betas.push_back(b);
        s.alphas.push_back(1.0 - b);
        running *= 1.0 - b;
        s.alpha_bars.push_back(running);
    }
    return s;
}

NoiseSchedule rescaled_schedule(const NoiseSchedule& reference, std::size_t steps) {
    require(steps >= 1, "rescaled_schedule: steps must be positive");
    const double f = static_cast<double>(reference.steps) / static_cast<double>(steps);
    const double cap = 0.999;
    return make_schedule(steps, std::min(cap, reference.beta_min * f), std::min(cap, reference.beta_max * f));
}

ActionVec forward_diffuse(const ActionVec& action, std::size_t i, const ActionVec& eps, const NoiseSchedule& schedule) {
    if (i < 1 || i > schedule.steps) {
        throw ContractViolation("forward_diffuse: timestep " + std::to_string(i) + " outside [1, " +
                                std::to_string(schedule.steps) + "]");
    }
    const double a = std::sqrt(schedule.alpha_bar(i));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(i));
    return {a * action[0] + b * eps[0], a * action[1] + b * eps[1], a * action[2] + b * eps[2]};
}

std::array<double, kTimeEmbedDim> timestep_embedding(double t, std::size_t horizon) {
    std::array<double, kTimeEmbedDim> e{};
    const std::size_t pairs = kTimeEmbedDim / 2;
    const double h = static_cast<double>(std::max<std::size_t>(horizon, 1));
    for (std::size_t k = 0; k < pairs; ++k) {
        const double freq = std::pow(h, -static_cast<double>(k) / static_cast<double>(pairs - 1));
        e[2 * k] = std::sin(t * freq);
        e[2 * k + 1] = std::cos(t * freq);
    }
    return e;
}

DenoiseNet::DenoiseNet(const DenoiserConfig& c, Rng& rng) : config_(c) {
    require(c.blocks >= 1 && c.hidden >= 1, "DenoiseNet: need at least one block");
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "denoiser.block" + std::to_string(b);
        params.add(p + ".x", glorot_uniform(c.action_dim, c.hidden, rng));
        params.add(p + ".s", glorot_uniform(c.state_dim, c.hidden, rng));
        params.add(p + ".t", glorot_uniform(kTimeEmbedDim, c.hidden, rng));
        params.add(p + ".c", glorot_uniform(c.cond_dim, c.hidden, rng));
        params.add(p + ".bias", Tensor({c.hidden}));
        if (b > 0) params.add(p + ".h", glorot_uniform(c.hidden, c.hidden, rng));
    }
    params.add("denoiser.out.w", glorot_uniform(c.hidden, c.action_dim, rng));
    params.add("denoiser.out.b", Tensor({c.action_dim}));
}

DenoiseNet DenoiseNet::zeros(const DenoiserConfig& c) {
    DenoiseNet net(c);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "denoiser.block" + std::to_string(b);
        net.params.add(p + ".x", Tensor::zeros(c.action_dim, c.hidden));
        net.params.add(p + ".s", Tensor::zeros(c.state_dim, c.hidden));
        net.params.add(p + ".t", Tensor::zeros(kTimeEmbedDim, c.hidden));
        net.params.add(p + ".c", Tensor::zeros(c.cond_dim, c.hidden));
        net.params.add(p + ".bias", Tensor({c.hidden}));
        if (b > 0) net.params.add(p + ".h", Tensor::zeros(c.hidden, c.hidden));
    }
    net.params.add("denoiser.out.w", Tensor::zeros(c.hidden, c.action_dim));
    net.params.add("denoiser.out.b", Tensor({c.action_dim}));
    return net;
}

Tensor denoise_predict(const DenoiseNet& net, const Tensor& noisy, const Tensor& states, const Tensor& conds,
                       std::span<const double> timesteps) {
    check_inputs(net, noisy, states, conds);
    require(timesteps.size() == noisy.rows(), "denoise_predict: one timestep per row required");
    const Tensor temb = time_embedding_rows(timesteps, net.config().horizon);
    const ParamSet& p = net.params;
    Tensor h;
    for (std::size_t b = 0; b < net.config().blocks; ++b) {
        const std::size_t o = net.block_offset(b);
        Tensor z = kernels::matmul(noisy, p[o]);
        if (b > 0) kernels::axpy(1.0, kernels::matmul(h, p[o + 5]), z);
        kernels::axpy(1.0, kernels::matmul(states, p[o + 1]), z);
        kernels::axpy(1.0, kernels::matmul(temb, p[o + 2]), z);
        kernels::axpy(1.0, kernels::matmul(conds, p[o + 3]), z);
        kernels::add_row_inplace(z, p[o + 4]);
        kernels::tanh_inplace(z);
        h = std::move(z);
    }
    const std::size_t o = net.block_offset(net.config().blocks);
    Tensor out = kernels::matmul(h, p[o]);
    kernels::add_row_inplace(out, p[o + 1]);
    return out;
}

ActionVec denoise_predict(const DenoiseNet& net, const ActionVec& noisy, std::span<const double> state,
                          std::span<const double> cond, double timestep) {
    const Tensor out = denoise_predict(net, Tensor::matrix(1, 3, {noisy.begin(), noisy.end()}),
                                       Tensor::matrix(1, state.size(), {state.begin(), state.end()}),
                                       Tensor::matrix(1, cond.size(), {cond.begin(), cond.end()}),
                                       std::span<const double>(&timestep, 1));
    return {out[0], out[1], out[2]};
}

Var denoise_forward(Tape& tape, const DenoiseNet& net, Var noisy, Var states, Var time_embed, Var cond) {
    check_inputs(net, noisy.value(), states.value(), cond.value());
    Var h;
    for (std::size_t b = 0; b < net.config().blocks; ++b) {
        const std::size_t o = net.block_offset(b);
        Var z = ad::matmul(noisy, tape.param(net.params, o));
        if (b > 0) z = z + ad::matmul(h, tape.param(net.params, o + 5));
        z = z + ad::matmul(states, tape.param(net.params, o + 1));
        z = z + ad::matmul(time_embed, tape.param(net.params, o + 2));
        z = z + ad::matmul(cond, tape.param(net.params, o + 3));
        h = ad::tanh(ad::add_bias(z, tape.param(net.params, o + 4)));
    }
    const std::size_t o = net.block_offset(net.config().blocks);
    return ad::add_bias(ad::matmul(h, tape.param(net.params, o)), tape.param(net.params, o + 1));
}

NoiseDraw draw_noise(std::size_t rows, const NoiseSchedule& schedule, Rng& rng) {
    NoiseDraw d;
    d.steps.resize(rows);
    d.eps = Tensor::zeros(rows, 3);
    for (std::size_t r = 0; r < rows; ++r) {
        d.steps[r] = 1 + static_cast<std::size_t>(rng.below(schedule.steps));
        for (std::size_t k = 0; k < 3; ++k) d.eps(r, k) = rng.normal();
    }
    return d;
}

Var ddpm_loss(Tape& tape, const TapePredictor& predictor, const Tensor& states, const Tensor& actions, Var cond,
              const NoiseSchedule& schedule, const NoiseDraw& draw) {
    const std::size_t n = actions.rows();
    require(n >= 1, "ddpm_loss: empty batch");
    require(draw.steps.size() == n && draw.eps.rows() == n, "ddpm_loss: noise draw size differs from batch");
    Tensor noisy = Tensor::zeros(n, 3);
    std::vector<double> t(n);
    for (std::size_t r = 0; r < n; ++r) {
        const ActionVec a{actions(r, 0), actions(r, 1), actions(r, 2)};
        const ActionVec e{draw.eps(r, 0), draw.eps(r, 1), draw.eps(r, 2)};
        const ActionVec x = forward_diffuse(a, draw.steps[r], e, schedule);
        std::copy(x.begin(), x.end(), noisy.row(r).begin());
        t[r] = static_cast<double>(draw.steps[r]);
    }
    Var eps_hat = predictor(tape, tape.constant(std::move(noisy)), tape.constant(states),
                            tape.constant(time_embedding_rows(t, schedule.steps)), cond);
    return ad::mse(eps_hat, draw.eps);
}

Var ddpm_loss(Tape& tape, const DenoiseNet& net, const Tensor& states, const Tensor& actions, Var cond,
              const NoiseSchedule& schedule, const NoiseDraw& draw) {
    require(schedule.steps == net.config().horizon, "ddpm_loss: schedule length differs from the net's horizon");
    return ddpm_loss(
        tape, [&net](Tape& tp, Var x, Var s, Var e, Var c) { return denoise_forward(tp, net, x, s, e, c); }, states,
        actions, cond, schedule, draw);
}

BoundDenoiser::BoundDenoiser(const DenoiseNet& net, std::span<const double> state, std::span<const double> cond)
    : net_(&net) {
    const DenoiserConfig& c = net.config();
    require(state.size() == c.state_dim, "BoundDenoiser: state width mismatch");
    if (cond.size() != c.cond_dim) {
        throw ContractViolation("BoundDenoiser: condition width " + std::to_string(cond.size()) +
                                " does not match the net's condition mode (" + std::to_string(c.cond_dim) + ")");
    }
    const ParamSet& p = net.params;
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::size_t o = net.block_offset(b);
        std::vector<double> f(p[o + 4].values().begin(), p[o + 4].values().end());
        for (std::size_t i = 0; i < state.size(); ++i) {
            const auto w = p[o + 1].row(i);
            for (std::size_t j = 0; j < c.hidden; ++j) f[j] += state[i] * w[j];
        }
        for (std::size_t i = 0; i < cond.size(); ++i) {
            const auto w = p[o + 3].row(i);
            for (std::size_t j = 0; j < c.hidden; ++j) f[j] += cond[i] * w[j];
        }
        fixed_.push_back(std::move(f));
    }
}

ActionVec BoundDenoiser::operator()(const ActionVec& noisy, double timestep) const {
    const DenoiserConfig& c = net_->config();
    const ParamSet& p = net_->params;
    const auto e = timestep_embedding(timestep, c.horizon);
    std::vector<double> h;
    std::vector<double> z(c.hidden);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::size_t o = net_->block_offset(b);
        std::copy(fixed_[b].begin(), fixed_[b].end(), z.begin());
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            const auto w = p[o].row(i);
            for (std::size_t j = 0; j < c.hidden; ++j) z[j] += noisy[i] * w[j];
        }
        for (std::size_t i = 0; i < h.size(); ++i) {
            const double hi = h[i];
            const auto w = p[o + 5].row(i);
            for (std::size_t j = 0; j < c.hidden; ++j) z[j] += hi * w[j];
        }
        for (std::size_t i = 0; i < e.size(); ++i) {
            const auto w = p[o + 2].row(i);
            for (std::size_t j = 0; j < c.hidden; ++j) z[j] += e[i] * w[j];
        }
        for (double& v : z) v = std::tanh(v);
        h = z;
    }
    const std::size_t o = net_->block_offset(c.blocks);
    ActionVec out{p[o + 1][0], p[o + 1][1], p[o + 1][2]};
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto w = p[o].row(i);
        for (std::size_t k = 0; k < 3; ++k) out[k] += h[i] * w[k];
    }
    return out;
}

ActionVec sample_ddpm(const EpsPredictor& predictor, const NoiseSchedule& schedule, std::size_t horizon, Rng& rng) {
    ActionVec x{rng.normal(), rng.normal(), rng.normal()};
    const double scale = static_cast<double>(horizon) / static_cast<double>(schedule.steps);
    for (std::size_t i = schedule.steps; i >= 1; --i) {
        const ActionVec eps = predictor(x, static_cast<double>(i) * scale);
        const double coef = schedule.beta(i) / std::sqrt(1.0 - schedule.alpha_bar(i));
        const double inv = 1.0 / std::sqrt(schedule.alpha(i));
        for (std::size_t k = 0; k < 3; ++k) x[k] = inv * (x[k] - coef * eps[k]);
        if (i > 1) {
            const double sigma = std::sqrt(schedule.beta(i));
            for (std::size_t k = 0; k < 3; ++k) x[k] += sigma * rng.normal();
        }
    }
    return {clip1(x[0]), clip1(x[1]), clip1(x[2])};
}

ActionVec sample_ddpm(const DenoiseNet& net, std::span<const double> state, std::span<const double> cond,
                      const NoiseSchedule& schedule, Rng& rng) {
    const BoundDenoiser bound(net, state, cond);
    return sample_ddpm([&bound](const ActionVec& x, double t) { return bound(x, t); }, schedule,
                       net.config().horizon, rng);
}

std::vector<std::size_t> ddim_timesteps(std::size_t horizon, std::size_t steps) {
    if (steps < 1 || steps > horizon) {
        throw ContractViolation("sample_ddim: steps " + std::to_string(steps) + " outside [1, " +
                                std::to_string(horizon) + "]");
    }
    if (steps == 1) return {horizon};
    std::vector<std::size_t> ts(steps);
    for (std::size_t j = 0; j < steps; ++j) ts[j] = 1 + (steps - 1 - j) * (horizon - 1) / (steps - 1);
    return ts;
}

ActionVec sample_ddim(const EpsPredictor& predictor, const NoiseSchedule& schedule, std::size_t steps,
                      const ActionVec& x_T) {
    const auto ts = ddim_timesteps(schedule.steps, steps);
    ActionVec x = x_T;
    for (std::size_t j = 0; j < ts.size(); ++j) {
        const std::size_t t = ts[j];
        const ActionVec eps = predictor(x, static_cast<double>(t));
        const double ab = schedule.alpha_bar(t);
        ActionVec x0{};
        for (std::size_t k = 0; k < 3; ++k) x0[k] = (x[k] - std::sqrt(1.0 - ab) * eps[k]) / std::sqrt(ab);
        if (j + 1 == ts.size()) {
            x = x0;
        } else {
            const double abn = schedule.alpha_bar(ts[j + 1]);
            for (std::size_t k = 0; k < 3; ++k) x[k] = std::sqrt(abn) * x0[k] + std::sqrt(1.0 - abn) * eps[k];
        }
    }
    return {clip1(x[0]), clip1(x[1]), clip1(x[2])};
}

ActionVec sample_ddim(const DenoiseNet& net, std::span<const double> state, std::span<const double> cond,
                      const NoiseSchedule& schedule, std::size_t steps, Rng& rng) {
    require(schedule.steps == net.config().horizon, "sample_ddim: schedule length differs from the net's horizon");
    const BoundDenoiser bound(net, state, cond);
    const ActionVec x_T{rng.normal(), rng.normal(), rng.normal()};
    return sample_ddim([&bound](const ActionVec& x, double t) { return bound(x, t); }, schedule, steps, x_T);
}

}  // namespace lcsd
