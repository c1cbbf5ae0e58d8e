#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "tcformer/errors.hpp"
#include "tcformer/io.hpp"

namespace tcformer::io {

namespace {

constexpr char kMagic[8] = {'T', 'C', 'F', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ofstream& out, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in) {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::string head_to_string(HeadKind head) {
    switch (head) {
        case HeadKind::mta: return "mta";
        case HeadKind::deconv: return "deconv";
        case HeadKind::classification: return "classification";
    }
    return "mta";
}

HeadKind head_from_string(const std::string& s) {
    if (s == "mta") return HeadKind::mta;
    if (s == "deconv") return HeadKind::deconv;
    if (s == "classification" || s == "cls") return HeadKind::classification;
    throw InvalidInputError("unknown head kind: " + s);
}

std::string ctm_to_string(CtmMode mode) {
    switch (mode) {
        case CtmMode::dpc_knn: return "dpcknn";
        case CtmMode::topk: return "topk";
        case CtmMode::strided: return "strided";
    }
    return "dpcknn";
}

CtmMode ctm_from_string(const std::string& s) {
    if (s == "dpcknn") return CtmMode::dpc_knn;
    if (s == "topk") return CtmMode::topk;
    if (s == "strided") return CtmMode::strided;
    throw InvalidInputError("unknown ctm mode: " + s);
}

}  // namespace

void save_checkpoint(const std::string& path, const TCFormer& model) {
    std::ofstream out(path, std::ios::binary);
    check_input(out.good(), "cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));

    uint32_t count = 0;
    model.visit_params([&](const std::string&, nn::Parameter&) { count++; });
    put_u32(out, count);

    model.visit_params([&](const std::string& name, nn::Parameter& p) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<uint32_t>(p.value.rank()));
        for (Index d : p.value.shape()) put_u32(out, static_cast<uint32_t>(d));
        std::vector<float> data(static_cast<size_t>(p.value.numel()));
        for (Index i = 0; i < p.value.numel(); ++i) data[static_cast<size_t>(i)] =
            static_cast<float>(p.value[i]);
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    });
    check_input(out.good(), "write failed: " + path);
}

void load_checkpoint(const std::string& path, TCFormer& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw MissingArtifactError("checkpoint not found: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    check_input(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
                path + ": not a checkpoint file");

    const uint32_t count = read_u32(in);
    std::map<std::string, std::pair<std::vector<Index>, std::vector<float>>> entries;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(in);
        check_input(in.good() && name_len < 4096, path + ": corrupt entry name");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rank = read_u32(in);
        check_input(rank <= 4, path + ": corrupt entry rank");
        std::vector<Index> shape;
        Index numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<Index>(read_u32(in)));
            numel *= shape.back();
        }
        std::vector<float> data(static_cast<size_t>(numel));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
        check_input(in.good(), path + ": truncated checkpoint");
        entries[name] = {std::move(shape), std::move(data)};
    }

    size_t used = 0;
    model.visit_params([&](const std::string& name, nn::Parameter& p) {
        auto it = entries.find(name);
        check_input(it != entries.end(), path + ": missing parameter " + name);
        check_input(it->second.first == p.value.shape(),
                    path + ": shape mismatch for " + name);
        for (Index i = 0; i < p.value.numel(); ++i) {
            p.value[i] = static_cast<double>(it->second.second[static_cast<size_t>(i)]);
        }
        used++;
    });
    check_input(used == entries.size(), path + ": checkpoint holds unknown parameters");
}

std::string model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["preset"] = cfg.preset;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : cfg.stages) {
        j["stages"].push_back({{"channels", s.block.channels},
                               {"heads", s.block.heads},
                               {"expansion", s.block.expansion},
                               {"reduction", s.block.reduction},
                               {"depth", s.depth}});
    }
    j["cluster_fraction"] = cfg.cluster_fraction;
    j["knn"] = cfg.knn;
    j["ctm_mode"] = ctm_to_string(cfg.ctm_mode);
    j["head"] = head_to_string(cfg.head);
    j["mta"] = {{"agg_channels", cfg.mta.agg_channels},
                {"out_channels", cfg.mta.out_channels},
                {"heads", cfg.mta.heads},
                {"expansion", cfg.mta.expansion}};
    j["num_classes"] = cfg.num_classes;
    j["stem_kernel"] = cfg.stem_kernel;
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInputError(std::string("bad model config json: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.preset = j.value("preset", "");
        for (const auto& s : j.at("stages")) {
            StageConfig sc;
            sc.block.channels = s.at("channels").get<int>();
            sc.block.heads = s.at("heads").get<int>();
            sc.block.expansion = s.at("expansion").get<int>();
            sc.block.reduction = s.at("reduction").get<int>();
            sc.depth = s.at("depth").get<int>();
            cfg.stages.push_back(sc);
        }
        cfg.cluster_fraction = j.at("cluster_fraction").get<double>();
        cfg.knn = j.at("knn").get<int>();
        cfg.ctm_mode = ctm_from_string(j.at("ctm_mode").get<std::string>());
        cfg.head = head_from_string(j.at("head").get<std::string>());
        cfg.mta.agg_channels = j.at("mta").at("agg_channels").get<int>();
        cfg.mta.out_channels = j.at("mta").at("out_channels").get<int>();
        cfg.mta.heads = j.at("mta").at("heads").get<int>();
        cfg.mta.expansion = j.at("mta").at("expansion").get<int>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.stem_kernel = j.at("stem_kernel").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInputError(std::string("bad model config json: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void save_model(const std::string& path, const TCFormer& model) {
    save_checkpoint(path, model);
    std::ofstream cfg(path + ".json");
    check_input(cfg.good(), "cannot open for writing: " + path + ".json");
    cfg << model_config_to_json(model.config()) << "\n";
}

TCFormer load_model(const std::string& path) {
    std::ifstream cfg_file(path + ".json");
    if (!cfg_file.good()) throw MissingArtifactError("config not found: " + path + ".json");
    std::string text((std::istreambuf_iterator<char>(cfg_file)),
                     std::istreambuf_iterator<char>());
    TCFormer model(model_config_from_json(text));
    load_checkpoint(path, model);
    return model;
}

}  // namespace tcformer::io
