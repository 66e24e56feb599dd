#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "maskfuse/dataset.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/io.hpp"
#include "maskfuse/linalg.hpp"
#include "maskfuse/loss.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

// ---------------------------------------------------------------------------
// Architecture and parameters
// ---------------------------------------------------------------------------

struct ArchConfig {
    std::size_t d = 512; // channels per expression
    std::size_t S = 1;   // spatial positions
    std::size_t r = 16;  // attention bottleneck reduction ratio
    std::size_t h = 128; // classifier hidden width
    bool aff_enabled = true;

    std::size_t fused_dim() const { return kNumEmotions * d; }
    std::size_t bottleneck_dim() const { return (fused_dim() + r - 1) / r; } // ceil(6d / r)

    void validate() const {
        if (d < 1 || S < 1 || h < 1) {
            throw DataError("arch: d, S and h must be at least 1");
        }
        if (r < 1 || r > fused_dim()) {
            throw DataError("arch: reduction ratio r must be in [1, 6d]");
        }
    }
};

/// Shared bottleneck MLP applied to both pooled branches:
/// 6d -> ceil(6d/r) -> 6d with a ReLU interior.
struct AttentionParams {
    Matrix W1;
    Vector b1;
    Matrix W2;
    Vector b2;
};

/// Two FC layers mapping the fused 6d vector to 3 severity logits.
struct ClassifierParams {
    Matrix W3;
    Vector b3;
    Matrix W4;
    Vector b4;
};

struct ModelParams {
    ArchConfig arch;
    AttentionParams attn;
    ClassifierParams clf;
};

inline void validate_shapes(const ModelParams& p) {
    p.arch.validate();
    const std::size_t full = p.arch.fused_dim();
    const std::size_t mid = p.arch.bottleneck_dim();
    auto expect = [](const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
        if (m.rows != rows || m.cols != cols) {
            throw DataError(std::string("model: ") + name + " is " + std::to_string(m.rows) + "x" +
                            std::to_string(m.cols) + ", expected " + std::to_string(rows) + "x" +
                            std::to_string(cols));
        }
    };
    expect(p.attn.W1, mid, full, "W1");
    expect(p.attn.W2, full, mid, "W2");
    expect(p.clf.W3, p.arch.h, full, "W3");
    expect(p.clf.W4, kNumClasses, p.arch.h, "W4");
    if (p.attn.b1.size() != mid || p.attn.b2.size() != full || p.clf.b3.size() != p.arch.h ||
        p.clf.b4.size() != kNumClasses) {
        throw DataError("model: bias length does not match its layer");
    }
}

/// Uniform [-sqrt(6/fan_in), +sqrt(6/fan_in)] weights, zero biases. Tensors
/// are filled row-major in the fixed order W1, W2, W3, W4 from a single
/// SplitMix64 stream, so a seed pins every parameter bit.
inline ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    SplitMix64 rng(seed);
    auto fill = [&rng](Matrix& m) {
        const double bound = std::sqrt(6.0 / static_cast<double>(m.cols));
        for (double& v : m.data) v = rng.uniform(-bound, bound);
    };
    const std::size_t full = arch.fused_dim();
    const std::size_t mid = arch.bottleneck_dim();
    p.attn.W1 = Matrix(mid, full);
    p.attn.b1.assign(mid, 0.0);
    p.attn.W2 = Matrix(full, mid);
    p.attn.b2.assign(full, 0.0);
    p.clf.W3 = Matrix(arch.h, full);
    p.clf.b3.assign(arch.h, 0.0);
    p.clf.W4 = Matrix(kNumClasses, arch.h);
    p.clf.b4.assign(kNumClasses, 0.0);
    fill(p.attn.W1);
    fill(p.attn.W2);
    fill(p.clf.W3);
    fill(p.clf.W4);
    return p;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

inline Vector attention_mlp(const Vector& pooled, const AttentionParams& attn) {
    const Vector hidden = activation(affine(pooled, attn.W1, attn.b1), Activation::Relu);
    return affine(hidden, attn.W2, attn.b2);
}

} // namespace detail

/// Per-channel attention weights in (0, 1):
///   sigmoid(MLP(avg_pool(F)) + MLP(max_pool(F)))
/// with one shared MLP for both pooled branches.
inline Vector attention_weights(const ChannelMap& F, const AttentionParams& attn) {
    const Vector avg_branch = detail::attention_mlp(spatial_pool(F, PoolMode::Avg), attn);
    const Vector max_branch = detail::attention_mlp(spatial_pool(F, PoolMode::Max), attn);
    Vector summed(avg_branch.size());
    for (std::size_t i = 0; i < summed.size(); ++i) summed[i] = avg_branch[i] + max_branch[i];
    return activation(summed, Activation::Sigmoid);
}

/// Scales each channel by its attention weight, then average-pools over the
/// spatial axis to a fixed-size fused vector.
inline Vector fuse(const ChannelMap& F, const Vector& w_attn) {
    if (w_attn.size() != F.channels) {
        throw ShapeError("fuse: attention weights have " + std::to_string(w_attn.size()) +
                         " entries for " + std::to_string(F.channels) + " channels");
    }
    Vector fused(F.channels);
    for (std::size_t c = 0; c < F.channels; ++c) {
        double acc = 0.0;
        const double* row = &F.values[c * F.spatial];
        for (std::size_t s = 0; s < F.spatial; ++s) acc += w_attn[c] * row[s];
        fused[c] = acc / static_cast<double>(F.spatial);
    }
    return fused;
}

/// Severity logits from the fused feature: W4 relu(W3 fused + b3) + b4.
inline Vector classify(const Vector& fused, const ClassifierParams& clf) {
    const Vector hidden = activation(affine(fused, clf.W3, clf.b3), Activation::Relu);
    return affine(hidden, clf.W4, clf.b4);
}

inline ChannelMap concat_sample(const SubjectSample& sample) {
    return concat_channels(std::span<const ChannelMap>(sample.maps.data(), sample.maps.size()));
}

/// Full pipeline: concat -> attention -> fuse -> classify -> softmax.
/// With aff_enabled off the attention branch is bypassed (weights pinned
/// to 1), which reduces fusion to plain average pooling.
inline Vector forward(const SubjectSample& sample, const ModelParams& params) {
    validate_shapes(params);
    const ChannelMap F = concat_sample(sample);
    if (F.channels != params.arch.fused_dim() || F.spatial != params.arch.S) {
        throw ShapeError("forward: sample shape " + std::to_string(F.channels) + "x" +
                         std::to_string(F.spatial) + " does not match arch 6d=" +
                         std::to_string(params.arch.fused_dim()) + ", S=" +
                         std::to_string(params.arch.S));
    }
    Vector fused;
    if (params.arch.aff_enabled) {
        fused = fuse(F, attention_weights(F, params.attn));
    } else {
        fused = spatial_pool(F, PoolMode::Avg);
    }
    return softmax(classify(fused, params.clf));
}

/// Argmax of forward, ties broken toward the lowest class index.
inline ClassLabel predict(const SubjectSample& sample, const ModelParams& params) {
    return static_cast<ClassLabel>(argmax_lowest_tie(forward(sample, params)));
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

struct ModelGradients {
    AttentionParams attn;
    ClassifierParams clf;
};

struct BackwardResult {
    ModelGradients grads;
    double mean_loss = 0.0;
    std::uint64_t clamp_events = 0;
};

inline ModelGradients zero_gradients(const ArchConfig& arch) {
    ModelGradients g;
    const std::size_t full = arch.fused_dim();
    const std::size_t mid = arch.bottleneck_dim();
    g.attn.W1 = Matrix(mid, full);
    g.attn.b1.assign(mid, 0.0);
    g.attn.W2 = Matrix(full, mid);
    g.attn.b2.assign(full, 0.0);
    g.clf.W3 = Matrix(arch.h, full);
    g.clf.b3.assign(arch.h, 0.0);
    g.clf.W4 = Matrix(kNumClasses, arch.h);
    g.clf.b4.assign(kNumClasses, 0.0);
    return g;
}

/// Gradients of the batch-mean loss with respect to every parameter tensor,
/// by hand-rolled reverse accumulation through the fixed graph. Feature maps
/// are inputs, not parameters, so no gradient flows back past the pooling.
inline BackwardResult backward(std::span<const SubjectSample> batch, const ModelParams& params,
                               const LossConfig& loss_cfg) {
    if (batch.empty()) {
        throw DataError("backward: empty batch");
    }
    validate_shapes(params);
    BackwardResult result;
    result.grads = zero_gradients(params.arch);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    for (const SubjectSample& sample : batch) {
        const ChannelMap F = concat_sample(sample);
        if (F.channels != params.arch.fused_dim() || F.spatial != params.arch.S) {
            throw ShapeError("backward: sample shape does not match arch");
        }

        // Forward, keeping every intermediate needed by the chain rule.
        const Vector avg_pooled = spatial_pool(F, PoolMode::Avg);
        Vector w_attn;
        Vector pre1_avg, hid_avg, pre1_max, hid_max, max_pooled;
        if (params.arch.aff_enabled) {
            max_pooled = spatial_pool(F, PoolMode::Max);
            pre1_avg = affine(avg_pooled, params.attn.W1, params.attn.b1);
            hid_avg = activation(pre1_avg, Activation::Relu);
            pre1_max = affine(max_pooled, params.attn.W1, params.attn.b1);
            hid_max = activation(pre1_max, Activation::Relu);
            const Vector out_avg = affine(hid_avg, params.attn.W2, params.attn.b2);
            const Vector out_max = affine(hid_max, params.attn.W2, params.attn.b2);
            Vector summed(out_avg.size());
            for (std::size_t i = 0; i < summed.size(); ++i) summed[i] = out_avg[i] + out_max[i];
            w_attn = activation(summed, Activation::Sigmoid);
        }

        // fuse(F, w) ==  w (elementwise) avg_pool(F), so the fused vector and
        // its backward can both run on the pooled values.
        Vector fused(avg_pooled.size());
        if (params.arch.aff_enabled) {
            for (std::size_t c = 0; c < fused.size(); ++c) fused[c] = w_attn[c] * avg_pooled[c];
        } else {
            fused = avg_pooled;
        }

        const Vector pre3 = affine(fused, params.clf.W3, params.clf.b3);
        const Vector hidden = activation(pre3, Activation::Relu);
        const Vector logits = affine(hidden, params.clf.W4, params.clf.b4);
        const Vector probs = softmax(logits);

        result.mean_loss +=
            inv_batch * focal_loss(probs, sample.label, loss_cfg, &result.clamp_events);

        // Reverse pass.
        Vector dlogits = focal_loss_grad(logits, sample.label, loss_cfg);
        for (double& v : dlogits) v *= inv_batch;

        affine_param_grads(hidden, dlogits, result.grads.clf.W4, result.grads.clf.b4);
        const Vector dhidden = matT_vec(params.clf.W4, dlogits);
        const Vector dpre3 = activation_backward(pre3, hidden, Activation::Relu, dhidden);
        affine_param_grads(fused, dpre3, result.grads.clf.W3, result.grads.clf.b3);

        if (!params.arch.aff_enabled) {
            continue; // attention parameters do not affect the loss
        }

        const Vector dfused = matT_vec(params.clf.W3, dpre3);
        Vector dsummed(w_attn.size());
        for (std::size_t c = 0; c < w_attn.size(); ++c) {
            const double dw = dfused[c] * avg_pooled[c];
            dsummed[c] = dw * w_attn[c] * (1.0 - w_attn[c]);
        }
        // Both branches receive dsummed; the MLP is shared, so its parameter
        // gradients accumulate across the two.
        affine_param_grads(hid_avg, dsummed, result.grads.attn.W2, result.grads.attn.b2);
        affine_param_grads(hid_max, dsummed, result.grads.attn.W2, result.grads.attn.b2);
        const Vector dhid_avg = matT_vec(params.attn.W2, dsummed);
        const Vector dhid_max = matT_vec(params.attn.W2, dsummed);
        const Vector dpre1_avg = activation_backward(pre1_avg, hid_avg, Activation::Relu, dhid_avg);
        const Vector dpre1_max = activation_backward(pre1_max, hid_max, Activation::Relu, dhid_max);
        affine_param_grads(avg_pooled, dpre1_avg, result.grads.attn.W1, result.grads.attn.b1);
        affine_param_grads(max_pooled, dpre1_max, result.grads.attn.W1, result.grads.attn.b1);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Flat parameter views (optimizer / gradient checking)
// ---------------------------------------------------------------------------

inline std::size_t param_count(const ArchConfig& arch) {
    const std::size_t full = arch.fused_dim();
    const std::size_t mid = arch.bottleneck_dim();
    return mid * full + mid + full * mid + full + arch.h * full + arch.h +
           kNumClasses * arch.h + kNumClasses;
}

namespace detail {

template <typename Attn, typename Clf, typename Fn>
void for_each_tensor(Attn& attn, Clf& clf, Fn&& fn) {
    fn(attn.W1.data);
    fn(attn.b1);
    fn(attn.W2.data);
    fn(attn.b2);
    fn(clf.W3.data);
    fn(clf.b3);
    fn(clf.W4.data);
    fn(clf.b4);
}

} // namespace detail

/// Concatenates all tensors in the fixed order W1, b1, W2, b2, W3, b3, W4, b4
/// (matrices row-major).
inline Vector flatten(const AttentionParams& attn, const ClassifierParams& clf) {
    Vector flat;
    detail::for_each_tensor(attn, clf, [&flat](const std::vector<double>& t) {
        flat.insert(flat.end(), t.begin(), t.end());
    });
    return flat;
}

inline Vector flatten(const ModelParams& params) { return flatten(params.attn, params.clf); }

inline Vector flatten(const ModelGradients& grads) { return flatten(grads.attn, grads.clf); }

/// Writes a flat vector back into the model's tensors (inverse of flatten).
inline void unflatten(ModelParams& params, const Vector& flat) {
    if (flat.size() != param_count(params.arch)) {
        throw ShapeError("unflatten: flat vector has " + std::to_string(flat.size()) +
                         " entries, model needs " + std::to_string(param_count(params.arch)));
    }
    std::size_t offset = 0;
    detail::for_each_tensor(params.attn, params.clf, [&](std::vector<double>& t) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                  flat.begin() + static_cast<std::ptrdiff_t>(offset + t.size()), t.begin());
        offset += t.size();
    });
}

// ---------------------------------------------------------------------------
// Checkpoint format ("MFUS")
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[5] = "MFUS";
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout: magic, u16 version, u32 d, u32 S, u32 r, u32 h, u8 aff flag, then
/// the eight tensors in flatten order, each as u8 rank, u32 dims, and the
/// payload as little-endian f64 (row-major for matrices).
inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                            bool force = false) {
    validate_shapes(params);
    if (!force && std::filesystem::exists(path)) {
        throw DataError("save_checkpoint: " + path.string() +
                        " already exists (pass force to overwrite)");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open checkpoint for writing: " + path.string());
    }
    io::write_magic(out, kCheckpointMagic);
    io::write_u16(out, kCheckpointVersion);
    io::write_u32(out, static_cast<std::uint32_t>(params.arch.d));
    io::write_u32(out, static_cast<std::uint32_t>(params.arch.S));
    io::write_u32(out, static_cast<std::uint32_t>(params.arch.r));
    io::write_u32(out, static_cast<std::uint32_t>(params.arch.h));
    out.put(params.arch.aff_enabled ? '\1' : '\0');

    auto write_matrix = [&out](const Matrix& m) {
        out.put('\2');
        io::write_u32(out, static_cast<std::uint32_t>(m.rows));
        io::write_u32(out, static_cast<std::uint32_t>(m.cols));
        for (double v : m.data) io::write_f64(out, v);
    };
    auto write_vector = [&out](const Vector& v) {
        out.put('\1');
        io::write_u32(out, static_cast<std::uint32_t>(v.size()));
        for (double x : v) io::write_f64(out, x);
    };
    write_matrix(params.attn.W1);
    write_vector(params.attn.b1);
    write_matrix(params.attn.W2);
    write_vector(params.attn.b2);
    write_matrix(params.clf.W3);
    write_vector(params.clf.b3);
    write_matrix(params.clf.W4);
    write_vector(params.clf.b4);
    if (!out) {
        throw DataError("I/O failure while writing " + path.string());
    }
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("missing checkpoint: " + path.string());
    }
    const std::string what = path.filename().string();
    io::expect_magic(in, kCheckpointMagic, what);
    const std::uint16_t version = io::read_u16(in, what + " version");
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        what);
    }
    ModelParams params;
    params.arch.d = io::read_u32(in, what + " d");
    params.arch.S = io::read_u32(in, what + " S");
    params.arch.r = io::read_u32(in, what + " r");
    params.arch.h = io::read_u32(in, what + " h");
    char aff = 0;
    io::read_bytes(in, &aff, 1, what + " aff flag");
    params.arch.aff_enabled = aff != '\0';

    auto read_matrix = [&in, &what](const char* name) {
        char rank = 0;
        io::read_bytes(in, &rank, 1, what);
        if (rank != '\2') {
            throw DataError("checkpoint " + what + ": tensor " + name + " is not a matrix");
        }
        const std::uint32_t rows = io::read_u32(in, what);
        const std::uint32_t cols = io::read_u32(in, what);
        Matrix m(rows, cols);
        for (double& v : m.data) v = io::read_f64(in, what);
        return m;
    };
    auto read_vector = [&in, &what](const char* name) {
        char rank = 0;
        io::read_bytes(in, &rank, 1, what);
        if (rank != '\1') {
            throw DataError("checkpoint " + what + ": tensor " + name + " is not a vector");
        }
        const std::uint32_t n = io::read_u32(in, what);
        Vector v(n);
        for (double& x : v) x = io::read_f64(in, what);
        return v;
    };
    params.attn.W1 = read_matrix("W1");
    params.attn.b1 = read_vector("b1");
    params.attn.W2 = read_matrix("W2");
    params.attn.b2 = read_vector("b2");
    params.clf.W3 = read_matrix("W3");
    params.clf.b3 = read_vector("b3");
    params.clf.W4 = read_matrix("W4");
    params.clf.b4 = read_vector("b4");
    validate_shapes(params); // rejects tensors inconsistent with the header
    return params;
}

} // namespace maskfuse
