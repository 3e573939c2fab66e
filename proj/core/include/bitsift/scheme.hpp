#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitsift/model.hpp"

namespace bitsift {

struct SchemeLayer {
    std::string layer_id;
    int weight_bits = 0;
    double scale = 0.0;
    int activation_bits = 0;
    std::size_t param_count = 0;
    bool skippable = false;  // true exactly when weight_bits == 0
};

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string code_version;
};

// The discovered mixed-precision quantization configuration.
struct QuantScheme {
    int schema_version = 1;
    std::vector<SchemeLayer> layers;
    double bits_per_param = 0.0;
    double compression_rate = 0.0;  // 32 / bits_per_param (0 when bpp is 0)
    std::size_t unquantized_params = 0;  // biases + batchnorm, never quantized
    Provenance provenance;

    std::vector<int> per_layer_bits() const;
    void validate() const;
};

double scheme_bits_per_param(const std::vector<SchemeLayer>& layers);

QuantScheme scheme_from_model(const Model& model, Provenance provenance);

nlohmann::ordered_json scheme_to_json(const QuantScheme& scheme);

// strict rejects unknown fields, wrong types and broken numeric invariants;
// with strict=false the numeric invariants are left to the caller (cmd_analyze
// reports them instead of rejecting).
QuantScheme scheme_from_json(const nlohmann::json& j, bool strict = true);

void save_scheme(const std::string& path, const QuantScheme& scheme);
QuantScheme load_scheme(const std::string& path, bool strict = true);

}  // namespace bitsift
