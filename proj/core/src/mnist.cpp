#include "dpsgd/mnist.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpsgd/errors.hpp"
#include "dpsgd/rng.hpp"

namespace dpsgd {

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

IdxData parse_idx(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4) throw DataError("idx: truncated header");
    IdxData idx;
    idx.magic = read_be32(bytes.data());
    std::size_t ndim = 0;
    if (idx.magic == kIdxLabelsMagic)
        ndim = 1;
    else if (idx.magic == kIdxImagesMagic)
        ndim = 3;
    else {
        std::ostringstream msg;
        msg << "idx: bad magic 0x" << std::hex << idx.magic;
        throw DataError(msg.str());
    }
    if (bytes.size() < 4 + 4 * ndim) throw DataError("idx: truncated dimension header");
    std::size_t total = 1;
    for (std::size_t d = 0; d < ndim; ++d) {
        idx.dims.push_back(read_be32(bytes.data() + 4 + 4 * d));
        total *= idx.dims.back();
    }
    if (bytes.size() != 4 + 4 * ndim + total)
        throw DataError("idx: payload size does not match dimensions");
    idx.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * ndim), bytes.end());
    return idx;
}

IdxData load_idx_file(const std::string& path) {
    try {
        return parse_idx(read_file(path));
    } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " [" + path + "]");
    }
}

double normalize_byte(std::uint8_t value, const NormalizeParams& p) {
    return (static_cast<double>(value) / 255.0 - p.mean) / p.stddev;
}

Tensor Dataset::sample(std::size_t i) const {
    Tensor t({1, 28, 28});
    std::copy(pixels.begin() + static_cast<std::ptrdiff_t>(i * sample_size),
              pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * sample_size),
              t.data.begin());
    return t;
}

Dataset make_dataset(const IdxData& images, const IdxData& labels, const NormalizeParams& p) {
    if (images.magic != kIdxImagesMagic) throw DataError("dataset: images file has wrong magic");
    if (labels.magic != kIdxLabelsMagic) throw DataError("dataset: labels file has wrong magic");
    if (images.dims[0] != labels.dims[0])
        throw DataError("dataset: image/label counts disagree");
    Dataset d;
    d.count = images.dims[0];
    d.sample_size = static_cast<std::size_t>(images.dims[1]) * images.dims[2];
    d.pixels.resize(d.count * d.sample_size);
    for (std::size_t i = 0; i < d.pixels.size(); ++i)
        d.pixels[i] = normalize_byte(images.payload[i], p);
    d.labels.resize(d.count);
    for (std::size_t i = 0; i < d.count; ++i) {
        if (labels.payload[i] > 9) throw DataError("dataset: label out of range");
        d.labels[i] = labels.payload[i];
    }
    return d;
}

Dataset load_mnist_split(const std::string& images_path, const std::string& labels_path,
                         const NormalizeParams& p) {
    return make_dataset(load_idx_file(images_path), load_idx_file(labels_path), p);
}

Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
    if (n > data.count) throw InputError("subset: n exceeds dataset size");
    if (n == data.count) return data;

    // per-class index pools in original order
    std::vector<std::vector<std::size_t>> pools(10);
    for (std::size_t i = 0; i < data.count; ++i) pools[data.labels[i]].push_back(i);

    // class quotas by largest remainder
    std::vector<std::size_t> quota(10, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 10; ++c) {
        const double exact = static_cast<double>(n) * static_cast<double>(pools[c].size()) /
                             static_cast<double>(data.count);
        quota[c] = std::min(pools[c].size(), static_cast<std::size_t>(exact));
        assigned += quota[c];
        remainders.push_back({exact - std::floor(exact), c});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t k = 0; assigned < n; k = (k + 1) % remainders.size()) {
        const std::size_t c = remainders[k].second;
        if (quota[c] < pools[c].size()) {
            ++quota[c];
            ++assigned;
        }
    }

    // deterministic choice without replacement inside each class
    std::vector<std::size_t> chosen;
    chosen.reserve(n);
    for (std::size_t c = 0; c < 10; ++c) {
        std::vector<std::size_t>& pool = pools[c];
        CounterRng rng(seed, Stream::subset, c);
        for (std::size_t k = pool.size(); k-- > 1;) {
            const std::size_t j = rng.next_u64() % (k + 1);
            std::swap(pool[k], pool[j]);
        }
        chosen.insert(chosen.end(), pool.begin(),
                      pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(chosen.begin(), chosen.end());

    Dataset out;
    out.count = n;
    out.sample_size = data.sample_size;
    out.pixels.reserve(n * data.sample_size);
    out.labels.reserve(n);
    for (std::size_t i : chosen) {
        out.pixels.insert(out.pixels.end(),
                          data.pixels.begin() + static_cast<std::ptrdiff_t>(i * data.sample_size),
                          data.pixels.begin() +
                              static_cast<std::ptrdiff_t>((i + 1) * data.sample_size));
        out.labels.push_back(data.labels[i]);
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw DataError("sha256: digest computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::vector<DigestCheck> verify_digests(const std::string& digest_file) {
    std::ifstream in(digest_file);
    if (!in) throw DataError("cannot open digest file '" + digest_file + "'");
    const std::filesystem::path base = std::filesystem::path(digest_file).parent_path();
    std::vector<DigestCheck> checks;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        DigestCheck check;
        if (!(row >> check.file >> check.expected))
            throw DataError("digest file: malformed line '" + line + "'");
        std::transform(check.expected.begin(), check.expected.end(), check.expected.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        check.actual = sha256_file((base / check.file).string());
        check.ok = check.actual == check.expected;
        checks.push_back(std::move(check));
    }
    return checks;
}

}  // namespace dpsgd
