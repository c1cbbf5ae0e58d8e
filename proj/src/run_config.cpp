#include "tcformer/run_config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "tcformer/dataset.hpp"
#include "tcformer/errors.hpp"

namespace tcformer {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& section,
                    const std::set<std::string>& known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key())) {
            throw InvalidInputError("unknown key '" + it.key() + "' in config section '" +
                                    section + "'");
        }
    }
}

}  // namespace

HeadKind parse_head(const std::string& s) {
    if (s == "mta") return HeadKind::mta;
    if (s == "deconv") return HeadKind::deconv;
    if (s == "cls" || s == "classification") return HeadKind::classification;
    throw InvalidInputError("unknown head: " + s + " (expected mta|deconv|cls)");
}

CtmMode parse_ctm_mode(const std::string& s) {
    if (s == "dpcknn") return CtmMode::dpc_knn;
    if (s == "topk") return CtmMode::topk;
    if (s == "strided") return CtmMode::strided;
    throw InvalidInputError("unknown ctm mode: " + s + " (expected dpcknn|topk|strided)");
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw MissingArtifactError("config not found: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidInputError(std::string("bad run config: ") + e.what());
    }
    RunConfig cfg;
    try {
        reject_unknown(j, "(root)", {"model", "ctm", "head", "data", "train", "output"});
        if (j.contains("model")) {
            reject_unknown(j["model"], "model", {"preset"});
            cfg.preset = j["model"].value("preset", cfg.preset);
        }
        if (j.contains("head")) {
            reject_unknown(j["head"], "head", {"kind"});
            if (j["head"].contains("kind")) cfg.head = parse_head(j["head"]["kind"]);
        }
        if (j.contains("ctm")) {
            reject_unknown(j["ctm"], "ctm", {"mode", "fraction", "k"});
            if (j["ctm"].contains("mode")) cfg.ctm_mode = parse_ctm_mode(j["ctm"]["mode"]);
            cfg.ctm_fraction = j["ctm"].value("fraction", cfg.ctm_fraction);
            cfg.ctm_k = j["ctm"].value("k", cfg.ctm_k);
        }
        if (j.contains("data")) {
            reject_unknown(j["data"], "data", {"seed", "count", "eval_count", "resolution"});
            cfg.seed = j["data"].value("seed", cfg.seed);
            cfg.train_count = j["data"].value("count", cfg.train_count);
            cfg.eval_count = j["data"].value("eval_count", cfg.eval_count);
            cfg.resolution = j["data"].value("resolution", cfg.resolution);
        }
        if (j.contains("train")) {
            reject_unknown(j["train"], "train",
                           {"steps", "batch_size", "learning_rate", "weight_decay"});
            cfg.steps = j["train"].value("steps", cfg.steps);
            cfg.batch_size = j["train"].value("batch_size", cfg.batch_size);
            cfg.learning_rate = j["train"].value("learning_rate", cfg.learning_rate);
            cfg.weight_decay = j["train"].value("weight_decay", cfg.weight_decay);
        }
        if (j.contains("output")) {
            reject_unknown(j["output"], "output", {"dir"});
            cfg.out_dir = j["output"].value("dir", cfg.out_dir);
        }
    } catch (const json::exception& e) {
        throw InvalidInputError(std::string("bad run config: ") + e.what());
    }
    return cfg;
}

std::string RunConfig::to_json() const {
    json j;
    j["model"]["preset"] = preset;
    j["head"]["kind"] = head == HeadKind::mta        ? "mta"
                        : head == HeadKind::deconv   ? "deconv"
                                                     : "cls";
    j["ctm"]["mode"] = ctm_mode == CtmMode::dpc_knn  ? "dpcknn"
                       : ctm_mode == CtmMode::topk   ? "topk"
                                                     : "strided";
    j["ctm"]["fraction"] = ctm_fraction;
    j["ctm"]["k"] = ctm_k;
    j["data"]["seed"] = seed;
    j["data"]["count"] = train_count;
    j["data"]["eval_count"] = eval_count;
    j["data"]["resolution"] = resolution;
    j["train"]["steps"] = steps;
    j["train"]["batch_size"] = batch_size;
    j["train"]["learning_rate"] = learning_rate;
    j["train"]["weight_decay"] = weight_decay;
    j["output"]["dir"] = out_dir;
    return j.dump(2);
}

ModelConfig RunConfig::model_config() const {
    ModelConfig cfg = ModelConfig::preset_config(preset);
    cfg.head = head;
    cfg.ctm_mode = ctm_mode;
    cfg.cluster_fraction = ctm_fraction;
    cfg.knn = ctm_k;
    if (head != HeadKind::classification) {
        cfg.mta.out_channels = SyntheticSample::kSlots;
    }
    return cfg;
}

}  // namespace tcformer
