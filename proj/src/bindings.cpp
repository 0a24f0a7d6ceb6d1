// Python extension: JSON run configurations in, JSON reports and numpy arrays out.

#include "cascade_match/bench.hpp"
#include "cascade_match/checkpoint.hpp"
#include "cascade_match/commands.hpp"
#include "cascade_match/error.hpp"
#include "cascade_match/grad_check.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace cascade_match;

namespace {

RunConfig parse_config(const std::string& text) {
    auto cfg = run_config_from_json(nlohmann::json::parse(text));
    cfg.validate();
    return cfg;
}

Image to_image(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw ValidationError("images must be H x W or H x W x C arrays");
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img.to_gray();
}

py::array_t<double> to_array(const MatchSet& matches) {
    py::array_t<double> out({static_cast<py::ssize_t>(matches.size()), py::ssize_t{6}});
    auto r = out.mutable_unchecked<2>();
    for (size_t i = 0; i < matches.size(); ++i) {
        const auto& m = matches[i];
        const double row[6] = {m.xa, m.ya, m.xb, m.yb, m.conf, m.scale};
        for (int j = 0; j < 6; ++j) r(i, j) = row[j];
    }
    return out;
}

ConfidenceMap to_map(const py::array_t<float, py::array::c_style | py::array::forcecast>& values,
                     const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& valid) {
    if (values.ndim() != 2 || valid.ndim() != 2 || values.shape(0) != valid.shape(0) || values.shape(1) != valid.shape(1))
        throw ValidationError("values and valid must be 2D arrays of the same shape");
    ConfidenceMap m(static_cast<int>(values.shape(0)), static_cast<int>(values.shape(1)), 2);
    std::copy(values.data(), values.data() + values.size(), m.values.begin());
    std::copy(valid.data(), valid.data() + valid.size(), m.valid.begin());
    return m;
}

py::array_t<uint8_t> to_mask(const std::vector<uint8_t>& keep, const ConfidenceMap& m) {
    py::array_t<uint8_t> out({m.rows, m.cols});
    std::copy(keep.begin(), keep.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "cascaded coarse-to-fine matcher";
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

    m.def("default_config", [] { return to_json(RunConfig{}).dump(); });

    m.def("generate_corpus", [](const std::string& config) {
        const auto cfg = parse_config(config);
        if (cfg.data.corpus.empty()) throw ValidationError("data.corpus is required");
        py::gil_scoped_release nogil;
        return generate_corpus(cfg.data, cfg.seed, cfg.data.corpus);
    });

    m.def("train", [](const std::string& config) {
        const auto cfg = parse_config(config);
        py::gil_scoped_release nogil;
        const auto outcome = run_training(cfg);
        nlohmann::json stages = nlohmann::json::array();
        for (const auto& [name, r] : outcome.stages) {
            std::vector<double> losses;
            for (const auto& e : r.log) losses.push_back(e.total);
            stages.push_back({{"stage", name}, {"losses", losses}, {"trainable_params", r.trainable_params},
                              {"frozen_params", r.frozen_params}});
        }
        return nlohmann::json{{"checkpoint", outcome.final_checkpoint.string()}, {"stages", stages}}.dump();
    });

    m.def("evaluate", [](const std::string& config, const std::string& task) {
        const auto cfg = parse_config(config);
        py::gil_scoped_release nogil;
        return run_evaluation(cfg, task).to_json().dump();
    });

    m.def(
        "match",
        [](const std::string& config, const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
            const auto cfg = parse_config(config);
            if (cfg.checkpoint.empty()) throw ValidationError("checkpoint is required");
            const Image ia = to_image(a), ib = to_image(b);
            MatchSet kept;
            {
                py::gil_scoped_release nogil;
                auto model = load_checkpoint(cfg.checkpoint);
                model->eval();
                const auto out = model->match(ia, ib, cfg.match);
                kept = cfg.detector.kind == DetectorKind::none
                           ? out.matches
                           : apply_detector(cfg.detector, out.finest_confidence(), out.matches);
            }
            return to_array(kept);
        },
        "Matches as an N x 6 array: xa, ya, xb, yb, conf, scale.");

    m.def("bench", [](const std::string& config, int size, int runs) {
        const auto cfg = parse_config(config);
        py::gil_scoped_release nogil;
        auto model = load_checkpoint(cfg.checkpoint);
        return bench(model, size, cfg.match, cfg.detector, runs, 1, cfg.seed).to_json().dump();
    });

    m.def("nms_select", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& values,
                           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& valid, int kernel) {
        const auto cmap = to_map(values, valid);
        return to_mask(nms_select(cmap, kernel), cmap);
    });

    m.def("grid_select", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& values,
                            const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& valid, int cell) {
        const auto cmap = to_map(values, valid);
        return to_mask(grid_select(cmap, cell), cmap);
    });

    m.def("auc", [](const std::vector<double>& errors, double threshold) { return auc(errors, threshold); });

    m.def("grad_check_names", &builtin_grad_checks);

    m.def("grad_check", [](const std::string& op) {
        py::gil_scoped_release nogil;
        const auto r = run_grad_check(op, GradCheckOptions{});
        return std::make_pair(r.worst(), r.pass());
    });
}
