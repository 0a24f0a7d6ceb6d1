#include "cascade_match/checkpoint.hpp"

#include "cascade_match/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cascade_match {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "weights.bin is written in host order");

namespace {

constexpr char kMagic[8] = {'C', 'M', 'A', 'R', 'R', '0', '0', '1'};
constexpr uint8_t kFloat32 = 0;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("truncated weights archive");
    return v;
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(CascadeMatcher& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model->named_parameters()) out.emplace_back(p.key(), p.value());
    for (const auto& b : model->named_buffers()) out.emplace_back(b.key(), b.value());
    return out;
}

}  // namespace

void write_named_arrays(const fs::path& path, const std::vector<std::pair<std::string, torch::Tensor>>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
        auto data = t.detach().to(torch::kFloat32).contiguous();
        put<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(os, static_cast<uint32_t>(data.dim()));
        for (int64_t d : data.sizes()) put<int64_t>(os, d);
        put<uint8_t>(os, kFloat32);
        os.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
                 static_cast<std::streamsize>(data.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::map<std::string, torch::Tensor> read_named_arrays(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot read " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ValidationError(path.string() + " is not a weights archive");
    const auto count = get<uint32_t>(is);
    std::map<std::string, torch::Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const auto len = get<uint32_t>(is);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw ValidationError("truncated weights archive");
        const auto ndim = get<uint32_t>(is);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = get<int64_t>(is);
        if (get<uint8_t>(is) != kFloat32) throw ValidationError("unsupported dtype for " + name);
        auto t = torch::empty(shape, torch::kFloat32);
        if (!is.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float))))
            throw ValidationError("truncated weights archive");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

void save_checkpoint(const fs::path& dir, CascadeMatcher& model, const std::string& stage, int64_t step,
                     const json& extra) {
    fs::create_directories(dir);
    const auto& cfg = model->config();
    json channels = json::object();
    for (int cell : cfg.cells()) channels[scale_name(cell)] = cfg.encoder.channels(cell);
    const auto state = named_state(model);
    json manifest = {
        {"format", "cascade_match.checkpoint"},
        {"version", 1},
        {"model", to_json(cfg)},
        {"channels", channels},
        {"modules", {{"encoder", 1}, {"ladder", 1}, {"coarse", 1}, {"cascade", 1}, {"refine", 1}}},
        {"stage", stage},
        {"step", step},
        {"arrays", state.size()},
        {"extra", extra},
    };
    write_named_arrays(dir / "weights.bin", state);
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw ValidationError("no checkpoint manifest in " + dir.string());
    json m;
    try {
        m = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError("bad checkpoint manifest: " + std::string(e.what()));
    }
    if (m.value("format", "") != "cascade_match.checkpoint" || m.value("version", 0) != 1)
        throw ValidationError("unsupported checkpoint format in " + dir.string());
    CheckpointInfo info;
    info.model = model_config_from_json(m.at("model"));
    info.stage = m.value("stage", "");
    info.step = m.value("step", int64_t{0});
    info.extra = m.value("extra", json::object());
    return info;
}

int load_weights(CascadeMatcher& model, const fs::path& dir, bool allow_missing) {
    auto arrays = read_named_arrays(dir / "weights.bin");
    torch::NoGradGuard guard;
    int loaded = 0;
    for (auto& [name, t] : named_state(model)) {
        auto it = arrays.find(name);
        if (it == arrays.end()) {
            if (allow_missing) continue;
            throw ValidationError("checkpoint lacks " + name);
        }
        if (it->second.sizes() != t.sizes()) throw ValidationError("shape mismatch for " + name);
        t.copy_(it->second);
        arrays.erase(it);
        ++loaded;
    }
    if (!arrays.empty()) throw ValidationError("checkpoint entry " + arrays.begin()->first + " has no model counterpart");
    return loaded;
}

CascadeMatcher load_checkpoint(const fs::path& dir, CheckpointInfo* info) {
    auto meta = read_checkpoint_info(dir);
    CascadeMatcher model(meta.model);
    load_weights(model, dir, false);
    if (info) *info = std::move(meta);
    return model;
}

}  // namespace cascade_match
