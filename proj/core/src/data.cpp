#include "bitsift/data.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bitsift/error.hpp"
#include "bitsift/rng.hpp"

namespace bitsift {

void Dataset::validate() const {
    if (images.shape.size() != 4) {
        throw ShapeError("dataset: images must be [N,C,H,W], got " + shape_str(images.shape));
    }
    if (images.shape[0] != labels.size()) {
        throw ValueError("dataset: " + std::to_string(images.shape[0]) + " images for " +
                         std::to_string(labels.size()) + " labels");
    }
    if (num_classes == 0) {
        throw ValueError("dataset: class count not set");
    }
    for (int lab : labels) {
        if (lab < 0 || static_cast<std::size_t>(lab) >= num_classes) {
            throw ValueError("dataset: label " + std::to_string(lab) + " out of range");
        }
    }
}

std::pair<Tensor, std::vector<int>> Dataset::slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size()) {
        throw ValueError("dataset slice: range exceeds dataset size");
    }
    const std::size_t stride = images.size() / images.shape[0];
    Tensor out = Tensor::zeros({count, images.shape[1], images.shape[2], images.shape[3]});
    std::memcpy(out.data.data(), images.data.data() + begin * stride,
                count * stride * sizeof(double));
    return {std::move(out), {labels.begin() + static_cast<std::ptrdiff_t>(begin),
                             labels.begin() + static_cast<std::ptrdiff_t>(begin + count)}};
}

std::pair<Tensor, std::vector<int>> Dataset::gather(const std::vector<std::size_t>& order,
                                                    std::size_t begin, std::size_t count) const {
    if (begin + count > order.size()) {
        throw ValueError("dataset gather: range exceeds order permutation");
    }
    const std::size_t stride = images.size() / images.shape[0];
    Tensor out = Tensor::zeros({count, images.shape[1], images.shape[2], images.shape[3]});
    std::vector<int> labs(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[begin + i];
        if (src >= size()) {
            throw ValueError("dataset gather: index out of range");
        }
        std::memcpy(out.data.data() + i * stride, images.data.data() + src * stride,
                    stride * sizeof(double));
        labs[i] = labels[src];
    }
    return {std::move(out), std::move(labs)};
}

Dataset Dataset::take(std::size_t n) const {
    if (n >= size()) {
        return *this;
    }
    Dataset out;
    auto [images_n, labels_n] = slice(0, n);
    out.images = std::move(images_n);
    out.labels = std::move(labels_n);
    out.num_classes = num_classes;
    out.split = split;
    return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
    if (len > 0) {
        in.read(reinterpret_cast<char*>(bytes.data()), len);
    }
    if (!in) {
        throw IoError("failed reading " + path);
    }
    return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& path) {
    if (offset + 4 > bytes.size()) {
        throw FormatError("idx: truncated header in " + path);
    }
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

// Converts raw pixel bytes to normalized [N,C,H,W] doubles. The only place
// bytes become reals, shared by the IDX loader, CIFAR loader and the
// synthetic digit generator.
Tensor pixels_to_tensor(const std::uint8_t* bytes, const Shape& shape, const Normalization& nz) {
    if (nz.stddev <= 0.0) {
        throw ValueError("normalization: stddev must be positive");
    }
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = (static_cast<double>(bytes[i]) / 255.0 - nz.mean) / nz.stddev;
    }
    return out;
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       const Normalization& nz) {
    const std::vector<std::uint8_t> img = read_file(images_path);
    const std::vector<std::uint8_t> lab = read_file(labels_path);

    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kIdxImagesMagic) {
        throw FormatError("idx: bad image magic in " + images_path);
    }
    const std::uint32_t n_images = read_be32(img, 4, images_path);
    const std::uint32_t rows = read_be32(img, 8, images_path);
    const std::uint32_t cols = read_be32(img, 12, images_path);
    const std::size_t expected_img = 16 + std::size_t(n_images) * rows * cols;
    if (img.size() < expected_img) {
        throw FormatError("idx: truncated image data in " + images_path);
    }

    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != kIdxLabelsMagic) {
        throw FormatError("idx: bad label magic in " + labels_path);
    }
    const std::uint32_t n_labels = read_be32(lab, 4, labels_path);
    if (lab.size() < 8 + std::size_t(n_labels)) {
        throw FormatError("idx: truncated label data in " + labels_path);
    }
    if (n_images != n_labels) {
        throw FormatError("idx: image/label count mismatch (" + std::to_string(n_images) + " vs " +
                          std::to_string(n_labels) + ")");
    }

    Dataset ds;
    ds.images = pixels_to_tensor(img.data() + 16, {n_images, 1, rows, cols}, nz);
    ds.labels.resize(n_labels);
    ds.num_classes = 10;
    for (std::size_t i = 0; i < n_labels; ++i) {
        const std::uint8_t l = lab[8 + i];
        if (l > 9) {
            throw FormatError("idx: label value " + std::to_string(l) + " out of range");
        }
        ds.labels[i] = l;
    }
    ds.validate();
    return ds;
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths, const Normalization& nz) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    if (batch_paths.empty()) {
        throw ValueError("cifar10: no batch files given");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;
    for (const std::string& path : batch_paths) {
        const std::vector<std::uint8_t> bytes = read_file(path);
        if (bytes.empty() || bytes.size() % kRecord != 0) {
            throw FormatError("cifar10: " + path + " is not a whole number of records");
        }
        const std::size_t n = bytes.size() / kRecord;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint8_t* rec = bytes.data() + i * kRecord;
            if (rec[0] > 9) {
                throw FormatError("cifar10: label out of range in " + path);
            }
            labels.push_back(rec[0]);
            pixels.insert(pixels.end(), rec + 1, rec + kRecord);
        }
    }
    Dataset ds;
    ds.images = pixels_to_tensor(pixels.data(), {labels.size(), 3, 32, 32}, nz);
    ds.labels = std::move(labels);
    ds.num_classes = 10;
    ds.validate();
    return ds;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                    std::uint64_t seed, double spacing) {
    if (dim < 2) {
        throw ValueError("synth_blobs: dimension must be at least 2");
    }
    if (n_per_class == 0) {
        throw ValueError("synth_blobs: empty dataset (n_per_class is 0)");
    }
    if (num_classes == 0 || num_classes > 2 * dim) {
        throw ValueError("synth_blobs: class count must be in [1, 2*dim]");
    }
    Rng rng(seed);
    const std::size_t n = num_classes * n_per_class;
    Dataset ds;
    ds.images = Tensor::zeros({n, dim, 1, 1});
    ds.labels.resize(n);
    ds.num_classes = num_classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
        // Fixed centers on the +/- coordinate axes, `spacing` from the origin.
        const std::size_t axis = c % dim;
        const double sign = c < dim ? 1.0 : -1.0;
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const std::size_t row = c * n_per_class + i;
            double* x = ds.images.data.data() + row * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                x[d] = rng.normal();
            }
            x[axis] += sign * spacing;
            ds.labels[row] = static_cast<int>(c);
        }
    }
    ds.validate();
    return ds;
}

namespace {

// 5x7 dot-matrix digit glyphs, one row per byte (low 5 bits used).
constexpr std::array<std::array<std::uint8_t, 7>, 10> kGlyphs{{
    {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e},  // 0
    {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 1
    {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f},  // 2
    {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e},  // 3
    {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02},  // 4
    {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e},  // 5
    {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e},  // 6
    {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // 8
    {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c},  // 9
}};

constexpr std::size_t kDigitSide = 28;

}  // namespace

void render_digits(std::size_t count, std::uint64_t seed, std::vector<std::uint8_t>& pixels,
                   std::vector<std::uint8_t>& labels) {
    Rng rng(seed);
    pixels.assign(count * kDigitSide * kDigitSide, 0);
    labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t digit = rng.uniform_int(10);
        labels[i] = static_cast<std::uint8_t>(digit);
        const auto& glyph = kGlyphs[digit];

        const std::size_t cell = 3;                       // glyph pixel -> 3x3 block
        const std::size_t gw = 5 * cell, gh = 7 * cell;   // 15 x 21
        const std::size_t ox = 1 + rng.uniform_int(kDigitSide - gw - 2);
        const std::size_t oy = 1 + rng.uniform_int(kDigitSide - gh - 2);
        const double intensity = rng.uniform(0.55, 1.0);
        const double shear = rng.uniform(-0.25, 0.25);
        const bool thick = rng.uniform() < 0.4;

        double canvas[kDigitSide * kDigitSide] = {0.0};
        for (std::size_t gy = 0; gy < 7; ++gy) {
            std::uint8_t row = glyph[gy];
            if (thick) {
                row |= static_cast<std::uint8_t>(row >> 1);  // horizontal dilation
            }
            for (std::size_t gx = 0; gx < 5; ++gx) {
                if (!((row >> (4 - gx)) & 1)) {
                    continue;
                }
                for (std::size_t cy = 0; cy < cell; ++cy) {
                    const std::size_t y = oy + gy * cell + cy;
                    const double off = (static_cast<double>(y) - (oy + gh / 2.0)) * shear;
                    const long long sx = static_cast<long long>(ox + gx * cell) +
                                         static_cast<long long>(std::lround(off));
                    for (std::size_t cx = 0; cx < cell; ++cx) {
                        const long long x = sx + static_cast<long long>(cx);
                        if (x < 0 || x >= static_cast<long long>(kDigitSide)) {
                            continue;
                        }
                        canvas[y * kDigitSide + static_cast<std::size_t>(x)] = intensity;
                    }
                }
            }
        }
        std::uint8_t* out = pixels.data() + i * kDigitSide * kDigitSide;
        for (std::size_t p = 0; p < kDigitSide * kDigitSide; ++p) {
            const double noisy = canvas[p] + 0.06 * rng.normal();
            const double v = std::clamp(noisy, 0.0, 1.0);
            out[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
}

Dataset synth_digits(std::size_t count, std::uint64_t seed, const Normalization& nz) {
    if (count == 0) {
        throw ValueError("synth_digits: empty dataset");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
    render_digits(count, seed, pixels, labels);
    Dataset ds;
    ds.images = pixels_to_tensor(pixels.data(), {count, 1, kDigitSide, kDigitSide}, nz);
    ds.labels.assign(labels.begin(), labels.end());
    ds.num_classes = 10;
    ds.validate();
    return ds;
}

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
    const std::uint8_t bytes[4] = {static_cast<std::uint8_t>(v >> 24),
                                   static_cast<std::uint8_t>(v >> 16),
                                   static_cast<std::uint8_t>(v >> 8),
                                   static_cast<std::uint8_t>(v)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

}  // namespace

void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels,
                      std::size_t count, std::size_t rows, std::size_t cols) {
    if (pixels.size() != count * rows * cols) {
        throw ValueError("write_idx_images: pixel buffer does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    write_be32(out, kIdxImagesMagic);
    write_be32(out, static_cast<std::uint32_t>(count));
    write_be32(out, static_cast<std::uint32_t>(rows));
    write_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) {
        throw IoError("short write to " + path);
    }
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    write_be32(out, kIdxLabelsMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) {
        throw IoError("short write to " + path);
    }
}

}  // namespace bitsift
