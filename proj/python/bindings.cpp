#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lcsd/cli.hpp"
#include "lcsd/diffusion.hpp"
#include "lcsd/error.hpp"
#include "lcsd/metrics.hpp"
#include "lcsd/skill_quantizer.hpp"
#include "lcsd/text_embed.hpp"
#include "lcsd/trainer.hpp"

namespace py = pybind11;
using namespace lcsd;
using skillgrid::Split;

namespace {

TrainConfig config_from(const std::map<std::string, std::string>& overrides) {
    TrainConfig c;
    for (const auto& [k, v] : overrides) apply_config_value(c, k, v);
    c.validate();
    return c;
}

py::dict row_dict(const SuccessRow& r) {
    py::dict d;
    d["split"] = r.split;
    d["episodes"] = r.episodes;
    d["successes"] = r.successes;
    d["success_rate"] = r.success_rate();
    d["subtask_completion_rate"] = r.subtask_rate();
    d["single_success_rate"] = r.single_rate();
    d["composite_success_rate"] = r.composite_rate();
    return d;
}

std::vector<Split> splits_from(const std::vector<std::string>& names) {
    std::vector<Split> out;
    for (const auto& n : names) out.push_back(skillgrid::parse_split(n));
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Skill discovery with a diffusion policy on the SkillGrid toy world";

    py::register_exception<DatasetError>(m, "DatasetError", PyExc_RuntimeError);
    py::register_exception<VersionError>(m, "VersionError", PyExc_RuntimeError);
    py::register_exception<CorruptCheckpoint>(m, "CorruptCheckpoint", PyExc_RuntimeError);

    m.attr("EMBED_DIM") = kEmbedDim;

    m.def("embed", [](const std::string& text) {
        const LangEmbedding e = embed(text);
        return std::vector<double>(e.begin(), e.end());
    }, py::arg("text"));
    m.def("tokenize", &tokenize, py::arg("text"));

    m.def("generate_dataset_jsonl", [](std::size_t n, std::uint64_t seed, const std::string& split, bool noise) {
        return skillgrid::dataset_to_jsonl(skillgrid::generate_dataset({n, seed, skillgrid::parse_split(split), noise}));
    }, py::arg("n"), py::arg("seed") = 0, py::arg("split") = "seen", py::arg("noise") = true);

    m.def("noise_schedule", [](std::size_t steps, double beta_min, double beta_max) {
        const NoiseSchedule s = make_schedule(steps, beta_min, beta_max);
        return py::make_tuple(s.betas, s.alpha_bars);
    }, py::arg("steps") = 50, py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.02,
       "Returns (betas, alpha_bars), index i-1 for timestep i.");
    m.def("ddim_timesteps", &ddim_timesteps, py::arg("horizon"), py::arg("steps"));

    m.def("nearest_code", [](const std::vector<std::vector<double>>& codes, const std::vector<double>& latent) {
        require(!codes.empty(), "nearest_code: empty codebook");
        Tensor t = Tensor::zeros(codes.size(), codes[0].size());
        for (std::size_t i = 0; i < codes.size(); ++i) {
            require(codes[i].size() == t.cols(), "nearest_code: ragged codebook");
            for (std::size_t k = 0; k < t.cols(); ++k) t(i, k) = codes[i][k];
        }
        return nearest_code(t, latent);
    }, py::arg("codes"), py::arg("latent"));

    m.def("mi_estimate", [](const std::vector<std::vector<std::uint64_t>>& counts) {
        require(!counts.empty() && !counts[0].empty(), "mi_estimate: empty table");
        JointCounts j(counts.size(), counts[0].size());
        for (std::size_t z = 0; z < counts.size(); ++z) {
            require(counts[z].size() == j.templates(), "mi_estimate: ragged table");
            for (std::size_t l = 0; l < counts[z].size(); ++l) j.add(z, l, counts[z][l]);
        }
        return mi_estimate(j);
    }, py::arg("counts"), "Plug-in mutual information in nats of a codes x templates count table.");

    m.def("config_keys", &config_keys);
    m.def("default_config", [] { return config_to_kv(TrainConfig{}); });

    py::class_<RunState>(m, "Run")
        .def_property_readonly("iteration", [](const RunState& r) { return r.iteration; })
        .def_property_readonly("config", [](const RunState& r) { return config_to_kv(r.config); })
        .def_property_readonly("metrics_csv", [](const RunState& r) { return metric_log_csv(r.log); })
        .def("checkpoint_bytes", [](const RunState& r) { return py::bytes(checkpoint_bytes(r)); })
        .def("save", [](const RunState& r, const std::string& path) { save_checkpoint(r, path); }, py::arg("path"));

    m.def("train", [](const std::string& dataset_jsonl_path, const std::map<std::string, std::string>& overrides) {
        const TrainConfig c = config_from(overrides);
        const skillgrid::Dataset ds = skillgrid::read_dataset(dataset_jsonl_path);
        py::gil_scoped_release release;
        return train(c, ds);
    }, py::arg("dataset"), py::arg("config") = std::map<std::string, std::string>{},
       "Trains on a JSONL dataset; config values are strings keyed like config.resolved.");
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def("checkpoint_from_bytes", [](const py::bytes& b) { return checkpoint_from_bytes(std::string(b)); });

    m.def("evaluate", [](const RunState& run, const std::vector<std::string>& splits, std::size_t episodes,
                         std::uint64_t seed, const std::string& sampler) {
        TrainedPolicy policy(run, parse_sampler(sampler));
        const auto s = splits_from(splits);
        SuccessTable t;
        {
            py::gil_scoped_release release;
            t = success_table(policy, s, episodes, seed);
        }
        py::list rows;
        for (const auto& r : t.rows) rows.append(row_dict(r));
        return rows;
    }, py::arg("run"), py::arg("splits") = std::vector<std::string>{"seen"}, py::arg("episodes") = 20,
       py::arg("seed") = 0, py::arg("sampler") = "ddpm");

    m.def("evaluate_expert", [](const std::vector<std::string>& splits, std::size_t episodes, std::uint64_t seed) {
        ExpertPolicy expert;
        py::list rows;
        for (const auto& r : success_table(expert, splits_from(splits), episodes, seed).rows) rows.append(row_dict(r));
        return rows;
    }, py::arg("splits") = std::vector<std::string>{"seen"}, py::arg("episodes") = 20, py::arg("seed") = 0);

    m.def("cli", [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
            py::gil_scoped_release release;
            code = cli::dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("args"), "Runs a command-line subcommand in process; returns (exit_code, stdout, stderr).");
}
