#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "bitsift/model.hpp"
#include "bitsift/pipeline.hpp"

namespace bitsift {

// Versioned binary container: magic, version, length-prefixed sections
// (model spec + weights/planes, optimizer buffers, rng state, provenance),
// closed by a CRC32 over everything after the magic. All reals are stored as
// raw 64-bit IEEE doubles, so a round trip is bit-exact.
struct Checkpoint {
    std::uint32_t version = 1;
    std::size_t epoch = 0;
    Model model;
    Sgd optimizer;
    std::array<std::uint64_t, 4> rng_state{};
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string code_version;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bitsift
