#include "lcsd/skill_quantizer.hpp"

#include <algorithm>
#include <numeric>

#include "lcsd/error.hpp"

namespace lcsd {

using skillgrid::kStateDim;

Codebook::Codebook(std::size_t codes, std::size_t dim, Rng& rng) {
    require(codes >= 1 && dim >= 1, "Codebook: size and dimension must be positive");
    Tensor v = Tensor::zeros(codes, dim);
    const double b = 1.0 / static_cast<double>(codes);
    for (double& x : v.values()) x = rng.uniform(-b, b);
    params.add("codebook", std::move(v));
    usage.assign(codes, 0);
}

Codebook::Codebook(Tensor vectors) {
    require(vectors.rank() == 2, "Codebook: vectors must be a matrix");
    usage.assign(vectors.rows(), 0);
    params.add("codebook", std::move(vectors));
}

std::size_t Codebook::codes_in_use() const {
    return static_cast<std::size_t>(std::count_if(usage.begin(), usage.end(), [](auto c) { return c > 0; }));
}

void Codebook::clear_usage() { std::fill(usage.begin(), usage.end(), 0); }

std::size_t nearest_code(const Tensor& codes, std::span<const double> latent) {
    if (latent.size() != codes.cols()) {
        throw ContractViolation("quantize: latent has " + std::to_string(latent.size()) + " entries, codes have " +
                                std::to_string(codes.cols()));
    }
    std::size_t best = 0;
    double best_d = 0.0;
    for (std::size_t k = 0; k < codes.rows(); ++k) {
        double d = 0.0;
        const auto c = codes.row(k);
        for (std::size_t i = 0; i < latent.size(); ++i) {
            const double e = latent[i] - c[i];
            d += e * e;
        }
        if (k == 0 || d < best_d) {
            best = k;
            best_d = d;
        }
    }
    return best;
}

Quantized quantize(Codebook& codebook, std::span<const double> latent) {
    Quantized q;
    q.index = nearest_code(codebook.vectors(), latent);
    const auto c = codebook.code(q.index);
    q.code.assign(c.begin(), c.end());
    for (std::size_t i = 0; i < latent.size(); ++i) q.distance_sq += (latent[i] - c[i]) * (latent[i] - c[i]);
    ++codebook.usage[q.index];
    return q;
}

std::vector<std::size_t> run_starts(std::span<const std::size_t> values) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (i == 0 || values[i] != values[i - 1]) out.push_back(i);
    return out;
}

Mlp make_skill_encoder(const QuantizerConfig& c, Rng& rng) {
    return Mlp({kStateDim + kEmbedDim, c.encoder_hidden, c.encoder_hidden, c.code_dim}, rng, "encoder");
}

Mlp make_recovery_decoder(const QuantizerConfig& c, Rng& rng) {
    return Mlp({c.recon_options * c.code_dim, c.decoder_hidden, kEmbedDim}, rng, "decoder");
}

SkillModel::SkillModel(const QuantizerConfig& c, Rng& rng)
    : config(c),
      encoder(make_skill_encoder(c, rng)),
      decoder(make_recovery_decoder(c, rng)),
      codebook(c.codes, c.code_dim, rng) {}

std::vector<double> encode_skill(const Mlp& encoder, const skillgrid::WorldState& state, const LangEmbedding& lang) {
    Tensor x = Tensor::zeros(1, kStateDim + kEmbedDim);
    const auto s = state.to_array();
    std::copy(s.begin(), s.end(), x.data());
    std::copy(lang.begin(), lang.end(), x.data() + kStateDim);
    const Tensor out = mlp_forward(encoder, x);
    return {out.values().begin(), out.values().end()};
}

std::vector<double> recover_instruction(const Mlp& decoder, const std::vector<std::vector<double>>& unique_codes,
                                        std::size_t options) {
    require(!unique_codes.empty(), "recover_instruction: empty code list");
    require(options >= 1, "recover_instruction: K must be positive");
    const std::size_t d = unique_codes.front().size();
    require(decoder.in_dim() == options * d, "recover_instruction: decoder expects " +
                                                 std::to_string(decoder.in_dim()) + " inputs, K*d = " +
                                                 std::to_string(options * d));
    Tensor x = Tensor::zeros(1, options * d);
    const std::size_t take = std::min(options, unique_codes.size());
    for (std::size_t j = 0; j < take; ++j) {
        require(unique_codes[j].size() == d, "recover_instruction: code widths differ");
        std::copy(unique_codes[j].begin(), unique_codes[j].end(), x.data() + j * d);
    }
    const Tensor out = mlp_forward(decoder, x);
    return {out.values().begin(), out.values().end()};
}

SkillBatch make_skill_batch(std::span<const skillgrid::Trajectory* const> trajectories) {
    require(!trajectories.empty(), "make_skill_batch: empty batch");
    SkillBatch b;
    std::size_t n = 0;
    for (const auto* t : trajectories) {
        require(t->length() >= 1, "make_skill_batch: empty trajectory");
        b.offsets.push_back(n);
        b.lengths.push_back(t->length());
        n += t->length();
    }
    b.states = Tensor::zeros(n, kStateDim);
    b.langs = Tensor::zeros(n, kEmbedDim);
    b.targets = Tensor::zeros(trajectories.size(), kEmbedDim);
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto* t = trajectories[i];
        const LangEmbedding e = embed(t->instruction.text);
        std::copy(e.begin(), e.end(), b.targets.row(i).begin());
        for (std::size_t s = 0; s < t->length(); ++s) {
            const auto st = t->states[s].to_array();
            const std::size_t r = b.offsets[i] + s;
            std::copy(st.begin(), st.end(), b.states.row(r).begin());
            std::copy(e.begin(), e.end(), b.langs.row(r).begin());
        }
    }
    return b;
}

SkillForward skill_forward(Tape& tape, SkillModel& model, const SkillBatch& batch, bool with_recon,
                           bool record_usage, std::span<const std::size_t> frozen_indices) {
    const std::size_t n = batch.steps();
    const std::size_t nb = batch.trajectories();
    require(n >= 1, "skill_forward: batch has no steps");
    require(frozen_indices.empty() || frozen_indices.size() == n,
            "skill_forward: frozen index count differs from step count");

    SkillForward f;
    Var x = ad::concat_cols({tape.constant(batch.states), tape.constant(batch.langs)});
    f.latents = mlp_forward(tape, model.encoder, x);
    const Tensor& lat = f.latents.value();

    f.indices.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        f.indices[r] = frozen_indices.empty() ? nearest_code(model.codebook.vectors(), lat.row(r)) : frozen_indices[r];
        if (record_usage) ++model.codebook.usage[f.indices[r]];
    }

    Var table = tape.param(model.codebook.params, 0);
    Var codes = ad::gather_rows(table, f.indices);
    f.quantized = ad::straight_through(f.latents, codes);

    // Per-step weights 1/(B * T_b): mean over steps, then over trajectories.
    Tensor weights = Tensor::zeros(n, 1);
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t s = 0; s < batch.lengths[b]; ++s)
            weights[batch.offsets[b] + s] = 1.0 / (static_cast<double>(nb) * static_cast<double>(batch.lengths[b]));

    f.commitment = ad::weighted_sum(ad::row_sq_norm(f.latents - ad::detach(codes)), weights);
    f.codebook = ad::weighted_sum(ad::row_sq_norm(ad::detach(f.latents) - codes), weights);

    const QuantizerConfig& c = model.config;
    Var loss = ad::scale(f.commitment, c.commitment) + ad::scale(f.codebook, c.codebook_weight);
    if (with_recon) {
        std::vector<std::vector<std::size_t>> groups(nb);
        for (std::size_t b = 0; b < nb; ++b) {
            const std::span<const std::size_t> idx(f.indices.data() + batch.offsets[b], batch.lengths[b]);
            for (std::size_t s : run_starts(idx)) groups[b].push_back(batch.offsets[b] + s);
        }
        Var packed = ad::pack_rows(f.quantized, groups, c.recon_options);
        Var recovered = mlp_forward(tape, model.decoder, packed);
        f.recon = ad::mse(recovered, batch.targets);
        loss = ad::scale(f.recon, c.recon_weight) + loss;
    } else {
        f.recon = tape.constant(Tensor::scalar(0.0));
    }
    f.loss = loss;
    return f;
}

SkillLossValue skill_loss(SkillModel& model, const skillgrid::Trajectory& trajectory) {
    const skillgrid::Trajectory* one[] = {&trajectory};
    const SkillBatch batch = make_skill_batch(one);
    Tape tape;
    SkillForward f = skill_forward(tape, model, batch, true, true);
    return {f.loss.value().item(), f.indices};
}

std::vector<double> candidate_probabilities(std::span<const double> code, const Tensor& outputs,
                                            double degenerate_eps) {
    require(outputs.rows() >= 1, "reinit: no encoder outputs");
    require(outputs.cols() == code.size(), "reinit: encoder output width differs from code width");
    const std::size_t n = outputs.rows();
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        const auto o = outputs.row(i);
        for (std::size_t j = 0; j < code.size(); ++j) d2 += (o[j] - code[j]) * (o[j] - code[j]);
        if (d2 < degenerate_eps) {
            std::vector<double> one_hot(n, 0.0);
            one_hot[i] = 1.0;
            return one_hot;
        }
        w[i] = 1.0 / d2;
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
}

bool reinit_due(const ReinitConfig& config, std::uint64_t iteration) {
    return config.every >= 1 && iteration >= 1 && iteration < config.until && iteration % config.every == 0;
}

ReinitReport reinit_codebook(Codebook& codebook, const Tensor& encoder_outputs, Rng& rng, std::uint64_t iteration,
                             const ReinitConfig& config) {
    require(encoder_outputs.rows() >= 1 && !encoder_outputs.empty(), "reinit_codebook: empty encoder outputs");
    require(reinit_due(config, iteration), "reinit_codebook: iteration " + std::to_string(iteration) +
                                               " is outside the active reinitialization schedule");
    const std::size_t m = codebook.size();
    const double total = static_cast<double>(std::accumulate(codebook.usage.begin(), codebook.usage.end(), std::uint64_t{0}));

    ReinitReport report;
    Tensor& vecs = codebook.vectors();
    for (std::size_t k = 0; k < m; ++k) {
        const double y = rng.uniform();
        const double threshold =
            total == 0.0 ? 0.0 : static_cast<double>(codebook.usage[k]) * static_cast<double>(m) / total;
        if (!(y > threshold) && total != 0.0) continue;
        const auto probs = candidate_probabilities(codebook.code(k), encoder_outputs, config.degenerate_eps);
        const double u = rng.uniform();
        std::size_t chosen = probs.size() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) {
                chosen = i;
                break;
            }
        }
        std::copy(encoder_outputs.row(chosen).begin(), encoder_outputs.row(chosen).end(), vecs.row(k).begin());
        report.reset_codes.push_back(k);
        report.chosen_outputs.push_back(chosen);
    }
    codebook.clear_usage();
    return report;
}

}  // namespace lcsd
