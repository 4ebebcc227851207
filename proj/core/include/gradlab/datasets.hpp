#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gradlab/random.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

/// In-memory labelled image collection; images are [H,W,C] in [0, 1].
template <typename T>
struct Dataset {
    std::vector<Tensor<T>> images;
    std::vector<int> labels;
    int num_classes = 10;

    size_t size() const { return images.size(); }

    Dataset take(size_t n) const {
        if (n > size()) throw InvalidInput("take: not enough samples");
        Dataset out;
        out.num_classes = num_classes;
        out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
        out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
        return out;
    }

    Dataset select(const std::vector<size_t>& idx) const {
        Dataset out;
        out.num_classes = num_classes;
        for (size_t i : idx) {
            if (i >= size()) throw InvalidInput("select: index out of range");
            out.images.push_back(images[i]);
            out.labels.push_back(labels[i]);
        }
        return out;
    }
};

namespace detail {

inline uint32_t read_be32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw CorruptDataset("truncated file: " + path);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace detail

/// IDX-format image/label pair (the MNIST container). Images are zero-padded
/// to pad_h x pad_w and scaled to [0, 1].
template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path,
                    int64_t pad_h = 32, int64_t pad_w = 32) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw Error("cannot open " + images_path);
    if (detail::read_be32(fi, images_path) != 0x00000803u)
        throw CorruptDataset("bad image magic: " + images_path);
    int64_t n = detail::read_be32(fi, images_path);
    int64_t h = detail::read_be32(fi, images_path);
    int64_t w = detail::read_be32(fi, images_path);
    if (h > pad_h || w > pad_w) throw InvalidInput("pad size smaller than source image");

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw Error("cannot open " + labels_path);
    if (detail::read_be32(fl, labels_path) != 0x00000801u)
        throw CorruptDataset("bad label magic: " + labels_path);
    if (static_cast<int64_t>(detail::read_be32(fl, labels_path)) != n)
        throw CorruptDataset("image/label count mismatch");

    Dataset<T> ds;
    int64_t top = (pad_h - h) / 2, left = (pad_w - w) / 2;
    std::vector<unsigned char> row(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < n; ++i) {
        fi.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!fi) throw CorruptDataset("truncated image data: " + images_path);
        Tensor<T> img({pad_h, pad_w, 1});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                img[(y + top) * pad_w + (x + left)] =
                    static_cast<T>(row[static_cast<size_t>(y * w + x)] / 255.0);
        char lab = 0;
        fl.read(&lab, 1);
        if (!fl) throw CorruptDataset("truncated label data: " + labels_path);
        if (lab < 0 || lab > 9) throw CorruptDataset("label out of range: " + labels_path);
        ds.images.push_back(std::move(img));
        ds.labels.push_back(lab);
    }
    ds.num_classes = 10;
    return ds;
}

/// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes in
/// channel-plane order; converted to [32,32,3] in [0, 1].
template <typename T>
Dataset<T> load_cifar10(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path);
    Dataset<T> ds;
    const int64_t H = 32, W = 32, C = 3;
    std::vector<unsigned char> rec(1 + H * W * C);
    while (f.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()))) {
        if (rec[0] > 9) throw CorruptDataset("label out of range: " + path);
        Tensor<T> img({H, W, C});
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    img[(y * W + x) * C + c] =
                        static_cast<T>(rec[static_cast<size_t>(1 + c * H * W + y * W + x)] / 255.0);
        ds.images.push_back(std::move(img));
        ds.labels.push_back(rec[0]);
    }
    if (f.gcount() != 0) throw CorruptDataset("trailing partial record: " + path);
    if (ds.images.empty()) throw CorruptDataset("empty dataset: " + path);
    ds.num_classes = 10;
    return ds;
}

/// Seeded synthetic corpus: each class is a prototype built from a few smooth
/// Gaussian bumps, and every sample is the prototype plus a small smooth
/// deformation. Classes are separable and the images are natural enough for
/// reconstruction metrics to be meaningful.
template <typename T>
Dataset<T> synthetic_blobs(int classes, int per_class, int64_t h, int64_t w, int64_t c,
                           uint64_t seed) {
    if (classes < 1 || per_class < 1 || h < 1 || w < 1 || c < 1)
        throw InvalidInput("synthetic_blobs: sizes must be positive");
    Dataset<T> ds;
    ds.num_classes = classes;
    RandomStream root(seed);
    const int bumps = 3;
    for (int cls = 0; cls < classes; ++cls) {
        RandomStream crng = root.substream("class_" + std::to_string(cls));
        // prototype bump parameters: center, radius, amplitude, channel weights
        std::vector<double> cx(bumps), cy(bumps), rad(bumps), amp(bumps);
        std::vector<std::vector<double>> cw(bumps, std::vector<double>(static_cast<size_t>(c)));
        for (int b = 0; b < bumps; ++b) {
            cx[b] = crng.uniform(0.2, 0.8) * static_cast<double>(w);
            cy[b] = crng.uniform(0.2, 0.8) * static_cast<double>(h);
            rad[b] = crng.uniform(0.08, 0.22) * static_cast<double>(std::min(h, w));
            amp[b] = crng.uniform(0.5, 1.0);
            for (auto& v : cw[static_cast<size_t>(b)]) v = crng.uniform(0.3, 1.0);
        }
        for (int s = 0; s < per_class; ++s) {
            RandomStream srng = crng.substream(static_cast<uint64_t>(s));
            double jx = srng.normal() * 1.2, jy = srng.normal() * 1.2;
            double gain = 1.0 + 0.12 * srng.normal();
            Tensor<T> img({h, w, c});
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    for (int64_t ch = 0; ch < c; ++ch) {
                        double v = 0.08;
                        for (int b = 0; b < bumps; ++b) {
                            double dx = static_cast<double>(x) - (cx[b] + jx);
                            double dy = static_cast<double>(y) - (cy[b] + jy);
                            double g = std::exp(-(dx * dx + dy * dy) / (2 * rad[b] * rad[b]));
                            v += gain * amp[b] * cw[static_cast<size_t>(b)][static_cast<size_t>(ch)] * g;
                        }
                        img[(y * w + x) * c + ch] = static_cast<T>(v < 0 ? 0 : (v > 1 ? 1 : v));
                    }
                }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(cls);
        }
    }
    // interleave classes so prefixes are balanced
    Dataset<T> mixed;
    mixed.num_classes = classes;
    for (int s = 0; s < per_class; ++s)
        for (int cls = 0; cls < classes; ++cls) {
            size_t i = static_cast<size_t>(cls * per_class + s);
            mixed.images.push_back(std::move(ds.images[i]));
            mixed.labels.push_back(ds.labels[i]);
        }
    return mixed;
}

/// Stacks dataset entries idx[0..n) into one [N,H,W,C] batch tensor.
template <typename T>
Tensor<T> stack_batch(const Dataset<T>& ds, const std::vector<size_t>& idx) {
    if (idx.empty()) throw InvalidInput("stack_batch: empty index list");
    const auto& s0 = ds.images[idx[0]].shape;
    std::vector<int64_t> shape{static_cast<int64_t>(idx.size())};
    shape.insert(shape.end(), s0.begin(), s0.end());
    Tensor<T> out(shape);
    int64_t per = ds.images[idx[0]].size();
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& img = ds.images[idx[i]];
        if (img.shape != s0) throw InvalidInput("stack_batch: inconsistent image shapes");
        std::copy(img.data.begin(), img.data.end(),
                  out.data.begin() + static_cast<int64_t>(i) * per);
    }
    return out;
}

}  // namespace gradlab
