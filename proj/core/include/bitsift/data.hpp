#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bitsift/tensor.hpp"

namespace bitsift {

// Pixel scaling into [0,1] happens first, then (x - mean) / stddev.
struct Normalization {
    double mean = 0.0;
    double stddev = 1.0;
};

struct Dataset {
    Tensor images;  // [N,C,H,W]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string split;

    std::size_t size() const { return labels.size(); }

    std::pair<Tensor, std::vector<int>> slice(std::size_t begin, std::size_t count) const;
    std::pair<Tensor, std::vector<int>> gather(const std::vector<std::size_t>& order,
                                               std::size_t begin, std::size_t count) const;
    Dataset take(std::size_t n) const;  // first n examples

    void validate() const;
};

// Bit-exact IDX reader: big-endian magic 0x00000803 (images, dims N,rows,cols)
// and 0x00000801 (labels). Bad magic, truncation and an image/label count
// mismatch raise distinct errors.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       const Normalization& nz = {});

// CIFAR-10 binary rows: 1 label byte + 3072 pixel bytes.
Dataset load_cifar10(const std::vector<std::string>& batch_paths, const Normalization& nz = {});

// Gaussian blobs at fixed class centers (unit variance). Centers sit on the
// +/- coordinate axes spaced `spacing` from the origin, so up to 2*dim classes.
Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                    std::uint64_t seed, double spacing = 6.0);

// Rendered 28x28 digit glyphs with random placement, slant, thickness and
// noise; a deterministic desk-scale stand-in for handwritten-digit data.
// Pixels are synthesized as bytes and converted exactly like the IDX loader.
Dataset synth_digits(std::size_t count, std::uint64_t seed, const Normalization& nz = {});

// Raw byte rendering used by synth_digits; exposed so callers can write real
// IDX files from the same generator.
void render_digits(std::size_t count, std::uint64_t seed, std::vector<std::uint8_t>& pixels,
                   std::vector<std::uint8_t>& labels);

void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels,
                      std::size_t count, std::size_t rows, std::size_t cols);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

}  // namespace bitsift
