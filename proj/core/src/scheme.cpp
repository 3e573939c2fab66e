#include "bitsift/scheme.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "bitsift/error.hpp"
#include "bitsift/pipeline.hpp"

namespace bitsift {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void require_keys(const json& obj, const std::set<std::string>& allowed, const char* what) {
    if (!obj.is_object()) {
        throw FormatError(std::string("scheme: ") + what + " must be an object");
    }
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key())) {
            throw FormatError(std::string("scheme: unknown field '") + item.key() + "' in " + what);
        }
    }
    for (const std::string& key : allowed) {
        if (!obj.contains(key)) {
            throw FormatError(std::string("scheme: missing field '") + key + "' in " + what);
        }
    }
}

}  // namespace

std::vector<int> QuantScheme::per_layer_bits() const {
    std::vector<int> bits;
    bits.reserve(layers.size());
    for (const SchemeLayer& l : layers) {
        bits.push_back(l.weight_bits);
    }
    return bits;
}

double scheme_bits_per_param(const std::vector<SchemeLayer>& layers) {
    double bits = 0.0, params = 0.0;
    for (const SchemeLayer& l : layers) {
        bits += static_cast<double>(l.param_count) * static_cast<double>(l.weight_bits);
        params += static_cast<double>(l.param_count);
    }
    return params > 0.0 ? bits / params : 0.0;
}

void QuantScheme::validate() const {
    if (schema_version != 1) {
        throw FormatError("scheme: unsupported schema version " + std::to_string(schema_version));
    }
    if (layers.empty()) {
        throw FormatError("scheme: no layers");
    }
    for (const SchemeLayer& l : layers) {
        if (l.weight_bits < 0 || l.weight_bits > 32) {
            throw FormatError("scheme: weight bits out of range at layer " + l.layer_id);
        }
        if (l.activation_bits < 1 || l.activation_bits > 32) {
            throw FormatError("scheme: activation bits out of range at layer " + l.layer_id);
        }
        if (l.param_count == 0) {
            throw FormatError("scheme: zero parameter count at layer " + l.layer_id);
        }
        if (l.scale < 0.0 || !std::isfinite(l.scale)) {
            throw FormatError("scheme: invalid scale at layer " + l.layer_id);
        }
        if (l.skippable != (l.weight_bits == 0)) {
            throw FormatError("scheme: skippable flag disagrees with precision at layer " +
                              l.layer_id);
        }
    }
    const double bpp = scheme_bits_per_param(layers);
    if (std::fabs(bpp - bits_per_param) > 1e-9) {
        throw FormatError("scheme: stored bits_per_param does not match the layer table");
    }
    const double comp = compression_from_bpp(bits_per_param);
    if (std::fabs(comp - compression_rate) > 1e-9) {
        throw FormatError("scheme: compression_rate must equal 32/bits_per_param");
    }
}

QuantScheme scheme_from_model(const Model& model, Provenance provenance) {
    QuantScheme scheme;
    scheme.provenance = std::move(provenance);
    const std::vector<LayerStats> stats = layer_stats(model);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const QuantLayer& layer = model.layers[l];
        SchemeLayer sl;
        sl.layer_id = layer.layer_id;
        sl.weight_bits = stats[l].precision;
        sl.param_count = stats[l].param_count;
        sl.activation_bits = layer.act_bits;
        sl.skippable = sl.weight_bits == 0;
        switch (model.mode) {
            case ModelMode::bit_planes:
                sl.scale = layer.bit_state.scale;
                break;
            case ModelMode::dense:
            case ModelMode::dorefa:
                // Dynamic-range schemes: report the current range.
                sl.scale = layer.weights.size() ? layer.weights.max_abs() : 0.0;
                break;
        }
        scheme.layers.push_back(std::move(sl));
    }
    scheme.bits_per_param = scheme_bits_per_param(scheme.layers);
    scheme.compression_rate = compression_from_bpp(scheme.bits_per_param);
    scheme.unquantized_params = auxiliary_param_count(model);
    scheme.validate();
    return scheme;
}

nlohmann::ordered_json scheme_to_json(const QuantScheme& scheme) {
    ordered_json j;
    j["schema_version"] = scheme.schema_version;
    j["layers"] = ordered_json::array();
    for (const SchemeLayer& l : scheme.layers) {
        ordered_json jl;
        jl["layer_id"] = l.layer_id;
        jl["weight_bits"] = l.weight_bits;
        jl["scale"] = l.scale;
        jl["activation_bits"] = l.activation_bits;
        jl["param_count"] = l.param_count;
        jl["skippable"] = l.skippable;
        j["layers"].push_back(std::move(jl));
    }
    j["bits_per_param"] = scheme.bits_per_param;
    j["compression_rate"] = scheme.compression_rate;
    j["unquantized_params"] = scheme.unquantized_params;
    j["provenance"] = {{"config_hash", scheme.provenance.config_hash},
                       {"seed", scheme.provenance.seed},
                       {"code_version", scheme.provenance.code_version}};
    return j;
}

QuantScheme scheme_from_json(const nlohmann::json& j, bool strict) {
    require_keys(j, {"schema_version", "layers", "bits_per_param", "compression_rate",
                     "unquantized_params", "provenance"},
                 "scheme");
    QuantScheme scheme;
    try {
        scheme.schema_version = j.at("schema_version").get<int>();
        if (!j.at("layers").is_array()) {
            throw FormatError("scheme: layers must be an array");
        }
        for (const json& jl : j.at("layers")) {
            require_keys(jl, {"layer_id", "weight_bits", "scale", "activation_bits", "param_count",
                              "skippable"},
                         "layer");
            SchemeLayer l;
            l.layer_id = jl.at("layer_id").get<std::string>();
            l.weight_bits = jl.at("weight_bits").get<int>();
            l.scale = jl.at("scale").get<double>();
            l.activation_bits = jl.at("activation_bits").get<int>();
            l.param_count = jl.at("param_count").get<std::size_t>();
            l.skippable = jl.at("skippable").get<bool>();
            scheme.layers.push_back(std::move(l));
        }
        scheme.bits_per_param = j.at("bits_per_param").get<double>();
        scheme.compression_rate = j.at("compression_rate").get<double>();
        scheme.unquantized_params = j.at("unquantized_params").get<std::size_t>();
        const json& prov = j.at("provenance");
        require_keys(prov, {"config_hash", "seed", "code_version"}, "provenance");
        scheme.provenance.config_hash = prov.at("config_hash").get<std::string>();
        scheme.provenance.seed = prov.at("seed").get<std::uint64_t>();
        scheme.provenance.code_version = prov.at("code_version").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("scheme: ") + e.what());
    }
    if (strict) {
        scheme.validate();
    }
    return scheme;
}

void save_scheme(const std::string& path, const QuantScheme& scheme) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << scheme_to_json(scheme).dump(2) << "\n";
    if (!out) {
        throw IoError("short write to " + path);
    }
}

QuantScheme load_scheme(const std::string& path, bool strict) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scheme: " + path + " is not valid JSON: " + e.what());
    }
    return scheme_from_json(j, strict);
}

}  // namespace bitsift
