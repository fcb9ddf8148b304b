#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpsgd/tensor.hpp"

namespace dpsgd {

// IDX container parsing and dataset preparation. The loader never
// downloads; digests of user-supplied files can be checked via
// verify_digests.

struct IdxData {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;  // row-major unsigned bytes
};

constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::uint32_t kIdxImagesMagic = 0x00000803;

// Big-endian header: magic, then one 32-bit extent per dimension. The
// payload byte count must equal the product of the extents.
IdxData parse_idx(const std::vector<std::uint8_t>& bytes);
IdxData load_idx_file(const std::string& path);

struct Dataset {
    std::size_t count = 0;
    std::size_t sample_size = 0;            // 784 for MNIST
    std::vector<double> pixels;             // count * sample_size, normalized
    std::vector<std::size_t> labels;        // class indices 0..9

    Tensor sample(std::size_t i) const;     // 1 x 28 x 28 view copy
};

struct NormalizeParams {
    double mean = 0.1307;
    double stddev = 0.3081;
};

// x -> (x/255 - mean) / stddev
double normalize_byte(std::uint8_t value, const NormalizeParams& p);

Dataset make_dataset(const IdxData& images, const IdxData& labels,
                     const NormalizeParams& p = {});

Dataset load_mnist_split(const std::string& images_path, const std::string& labels_path,
                         const NormalizeParams& p = {});

// Deterministic stratified sample of n items preserving class proportions
// within one item per class; original order is kept.
Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed);

std::string sha256_file(const std::string& path);

struct DigestCheck {
    std::string file;
    std::string expected;
    std::string actual;
    bool ok = false;
};

// Digest list file: one "<filename> <hex digest>" pair per line; paths are
// resolved relative to the digest file's directory.
std::vector<DigestCheck> verify_digests(const std::string& digest_file);

}  // namespace dpsgd
