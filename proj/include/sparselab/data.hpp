#pragma once

// Datasets: deterministic synthetic generators (blobs, spirals, rendered
// digits), IDX container load/save, and seeded batch streams.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/rng.hpp"
#include "sparselab/tensor.hpp"

namespace sparselab {

struct Dataset {
    Tensor inputs;            // [N, ...]
    std::vector<int> labels;  // length N
    int num_classes = 0;
    std::string split;        // "train" or "test"

    std::int64_t size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

inline void validate_dataset(const Dataset& d) {
    if (d.size() < 1) throw std::invalid_argument("dataset: empty");
    if (static_cast<std::int64_t>(d.labels.size()) != d.size())
        throw std::invalid_argument("dataset: label count mismatch");
    for (int y : d.labels)
        if (y < 0 || y >= d.num_classes)
            throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(d.num_classes) + ")");
    if (!all_finite(d.inputs)) throw std::invalid_argument("dataset: non-finite input");
}

enum class SyntheticKind { blobs, spirals };

// Deterministic 2-d point clouds. 80/20 train/test split by per-class
// interleaving: every 5th sample of each class goes to test.
inline std::pair<Dataset, Dataset> gen_synthetic(SyntheticKind kind, int n_per_class, int classes,
                                                 double noise, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("gen_synthetic: classes must be >= 2");
    if (n_per_class < 2) throw std::invalid_argument("gen_synthetic: n_per_class must be >= 2");
    auto g = rng::engine(rng::derive(seed, 0xda7a));

    std::vector<double> train_x, test_x;
    std::vector<int> train_y, test_y;
    for (int c = 0; c < classes; ++c) {
        const double angle0 = 2.0 * std::numbers::pi * c / classes;
        for (int i = 0; i < n_per_class; ++i) {
            double px, py;
            if (kind == SyntheticKind::blobs) {
                const double cx = 3.0 * std::cos(angle0), cy = 3.0 * std::sin(angle0);
                px = cx + noise * rng::normal(g);
                py = cy + noise * rng::normal(g);
            } else {
                const double t = static_cast<double>(i) / n_per_class;
                const double r = 0.3 + 2.7 * t;
                const double a = angle0 + 3.0 * t + noise * 0.1 * rng::normal(g);
                px = r * std::cos(a) + noise * 0.05 * rng::normal(g);
                py = r * std::sin(a) + noise * 0.05 * rng::normal(g);
            }
            if (i % 5 == 4) {
                test_x.push_back(px);
                test_x.push_back(py);
                test_y.push_back(c);
            } else {
                train_x.push_back(px);
                train_x.push_back(py);
                train_y.push_back(c);
            }
        }
    }
    Dataset train{Tensor({static_cast<std::int64_t>(train_y.size()), 2}, std::move(train_x)),
                  std::move(train_y), classes, "train"};
    Dataset test{Tensor({static_cast<std::int64_t>(test_y.size()), 2}, std::move(test_x)),
                 std::move(test_y), classes, "test"};
    return {std::move(train), std::move(test)};
}

namespace detail {

// 8x8 glyphs for the rendered-digit dataset.
inline const char* digit_glyph(int d) {
    static const char* glyphs[10] = {
        " ###### "
        "##    ##"
        "##   ###"
        "##  ####"
        "## ## ##"
        "####  ##"
        "###   ##"
        " ###### ",
        "   ##   "
        "  ###   "
        " ####   "
        "   ##   "
        "   ##   "
        "   ##   "
        "   ##   "
        "########",
        " ###### "
        "##    ##"
        "      ##"
        "    ### "
        "  ###   "
        " ##     "
        "##      "
        "########",
        " ###### "
        "##    ##"
        "      ##"
        "   #### "
        "      ##"
        "      ##"
        "##    ##"
        " ###### ",
        "##   ## "
        "##   ## "
        "##   ## "
        "########"
        "     ## "
        "     ## "
        "     ## "
        "     ## ",
        "########"
        "##      "
        "##      "
        "####### "
        "      ##"
        "      ##"
        "##    ##"
        " ###### ",
        " ###### "
        "##      "
        "##      "
        "####### "
        "##    ##"
        "##    ##"
        "##    ##"
        " ###### ",
        "########"
        "      ##"
        "     ## "
        "    ##  "
        "   ##   "
        "  ##    "
        " ##     "
        "##      ",
        " ###### "
        "##    ##"
        "##    ##"
        " ###### "
        "##    ##"
        "##    ##"
        "##    ##"
        " ###### ",
        " ###### "
        "##    ##"
        "##    ##"
        " #######"
        "      ##"
        "      ##"
        "      ##"
        " ###### "};
    return glyphs[d];
}

inline double quantize_u8(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return std::floor(v * 255.0 + 0.5) / 255.0;
}

}  // namespace detail

// Noisy, shifted renderings of ten digit glyphs on a 12x12 canvas; pixel
// values live on the u8 grid so an IDX round trip is exact.
inline Dataset gen_digits(int count, std::uint64_t seed, const std::string& split) {
    if (count < 1) throw std::invalid_argument("gen_digits: count must be >= 1");
    constexpr std::int64_t S = 12;
    auto g = rng::engine(rng::derive(seed, 0xd161));
    Tensor inputs({count, 1, S, S});
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int d = i % 10;
        labels[static_cast<std::size_t>(i)] = d;
        const char* glyph = detail::digit_glyph(d);
        const int dy = static_cast<int>(rng::below(g, 5)) - 2;
        const int dx = static_cast<int>(rng::below(g, 5)) - 2;
        const double intensity = 0.62 + 0.38 * rng::uniform01(g);
        double* img = &inputs.values[static_cast<std::size_t>(i) * S * S];
        for (std::int64_t y = 0; y < S; ++y)
            for (std::int64_t x = 0; x < S; ++x) {
                const std::int64_t gy = y - 2 - dy, gx = x - 2 - dx;
                double v = 0.0;
                if (gy >= 0 && gy < 8 && gx >= 0 && gx < 8 && glyph[gy * 8 + gx] == '#')
                    v = intensity;
                v += 0.14 * rng::normal(g);
                img[y * S + x] = detail::quantize_u8(v);
            }
    }
    return Dataset{std::move(inputs), std::move(labels), 10, split};
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("idx: truncated header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// IDX image/label pair. Pixels scale to [0,1]; inputs come out as [N,1,H,W].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& split = "train") {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);

    const std::uint32_t img_magic = detail::read_be32(img, images_path);
    if (img_magic != 0x00000803u)
        throw std::runtime_error("idx: bad image magic in " + images_path);
    const std::uint32_t n = detail::read_be32(img, images_path);
    const std::uint32_t h = detail::read_be32(img, images_path);
    const std::uint32_t w = detail::read_be32(img, images_path);

    const std::uint32_t lab_magic = detail::read_be32(lab, labels_path);
    if (lab_magic != 0x00000801u)
        throw std::runtime_error("idx: bad label magic in " + labels_path);
    const std::uint32_t n_lab = detail::read_be32(lab, labels_path);
    if (n != n_lab)
        throw std::runtime_error("idx: image count " + std::to_string(n) +
                                 " does not match label count " + std::to_string(n_lab));
    if (n == 0) throw std::runtime_error("idx: empty dataset in " + images_path);

    std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (img.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw std::runtime_error("idx: truncated image payload in " + images_path);
    std::vector<unsigned char> raw_labels(n);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), n);
    if (lab.gcount() != static_cast<std::streamsize>(n))
        throw std::runtime_error("idx: truncated label payload in " + labels_path);

    Tensor inputs({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(h),
                   static_cast<std::int64_t>(w)});
    for (std::size_t i = 0; i < pixels.size(); ++i)
        inputs.values[i] = static_cast<double>(pixels[i]) / 255.0;
    std::vector<int> labels(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = raw_labels[i];
        max_label = std::max(max_label, labels[i]);
    }
    return Dataset{std::move(inputs), std::move(labels), max_label + 1, split};
}

inline void save_idx(const Dataset& d, const std::string& images_path,
                     const std::string& labels_path) {
    if (d.inputs.shape.size() != 4 || d.inputs.shape[1] != 1)
        throw std::invalid_argument("idx: only [N,1,H,W] datasets can be saved, got " +
                                    shape_str(d.inputs.shape));
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot write " + images_path);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot write " + labels_path);

    const auto n = static_cast<std::uint32_t>(d.inputs.shape[0]);
    detail::write_be32(img, 0x00000803u);
    detail::write_be32(img, n);
    detail::write_be32(img, static_cast<std::uint32_t>(d.inputs.shape[2]));
    detail::write_be32(img, static_cast<std::uint32_t>(d.inputs.shape[3]));
    std::vector<unsigned char> pixels(d.inputs.values.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = d.inputs.values[i];
        if (v < 0.0 || v > 1.0)
            throw std::invalid_argument("idx: pixel outside [0,1] cannot be saved");
        pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    detail::write_be32(lab, 0x00000801u);
    detail::write_be32(lab, n);
    for (int y : d.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
    if (!img || !lab) throw std::runtime_error("idx: write failed");
}

struct Batch {
    Tensor inputs;
    std::vector<int> labels;
};

// Batches for one epoch. The permutation is a pure function of (seed, epoch);
// the final partial batch is kept.
inline std::vector<Batch> batches(const Dataset& d, int batch_size, std::uint64_t seed, int epoch,
                                  bool shuffle) {
    if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
    const std::int64_t n = d.size();
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) {
        auto g = rng::engine(rng::derive(seed, static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, g);
    }
    const std::int64_t sample = n == 0 ? 0 : static_cast<std::int64_t>(d.inputs.numel()) / n;
    std::vector<Batch> out;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t b = std::min<std::int64_t>(batch_size, n - start);
        std::vector<std::int64_t> shape = d.inputs.shape;
        shape[0] = b;
        Tensor inputs(shape);
        std::vector<int> labels(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const std::size_t src = order[static_cast<std::size_t>(start + i)];
            std::copy(d.inputs.values.begin() + static_cast<std::int64_t>(src) * sample,
                      d.inputs.values.begin() + static_cast<std::int64_t>(src + 1) * sample,
                      inputs.values.begin() + i * sample);
            labels[static_cast<std::size_t>(i)] = d.labels[src];
        }
        out.push_back(Batch{std::move(inputs), std::move(labels)});
    }
    return out;
}

}  // namespace sparselab
