#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xproto/linalg.hpp"
#include "xproto/rng.hpp"

namespace xproto {

enum class Activation { identity, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Trainable affine head over frozen base embeddings: x = act(W b + c).
// Parameters are held in f64 but kept on the f32 grid after every update so a
// checkpoint round trip is exact.
struct EncoderHead {
    Matrix weight;  // d_out x d_in
    Vector bias;    // d_out
    Activation activation = Activation::identity;

    std::size_t d_in() const { return weight.cols(); }
    std::size_t d_out() const { return weight.rows(); }
    std::size_t parameter_count() const { return weight.data().size() + bias.size(); }

    // Uniform in +-sqrt(6 / (d_in + d_out)), zero bias.
    static EncoderHead initialize(std::size_t d_in, std::size_t d_out, Activation activation,
                                  Rng& rng);
    static EncoderHead identity(std::size_t dim);

    // Flat parameter access, weight entries first then bias.
    double parameter(std::size_t i) const;
    double& parameter(std::size_t i);

    friend bool operator==(const EncoderHead&, const EncoderHead&) = default;
};

Vector encode(const EncoderHead& head, std::span<const double> base_vector);
std::vector<Vector> encode_all(const EncoderHead& head, const std::vector<Vector>& base_vectors);

struct GradBuffer {
    Matrix d_weight;
    Vector d_bias;

    static GradBuffer zeros_like(const EncoderHead& head);
    void zero();
    bool all_finite() const;
    double parameter(std::size_t i) const;
    std::size_t parameter_count() const { return d_weight.data().size() + d_bias.size(); }
};

// Accumulates d(loss)/d(theta) for one sample into `grads`, given
// upstream = d(loss)/d(embedding). The gradient w.r.t. the base vector is not formed.
void backward(const EncoderHead& head, std::span<const double> base_vector,
              std::span<const double> upstream, GradBuffer& grads);

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    // Adam moment buffers, flat in the same order as EncoderHead::parameter().
    Vector first_moment;
    Vector second_moment;

    static OptimizerState make(OptimizerKind kind, double learning_rate, const EncoderHead& head);

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// Throws NumericError (parameters untouched) if any gradient entry is non-finite.
void optimizer_step(OptimizerState& state, EncoderHead& head, const GradBuffer& grads);

// A scalar loss of the head parameters that also accumulates its analytic gradient.
using HeadLoss = std::function<double(const EncoderHead&, GradBuffer&)>;

struct GradientCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    double max_analytic = 0.0;
    double max_numeric = 0.0;
    std::size_t worst_parameter = 0;
    std::size_t parameters_checked = 0;
    bool passed = false;
};

// Compares the analytic gradient of `loss` with central differences over every
// parameter. Per-parameter relative error is |a - n| / max(|a|, |n|, floor) with
// floor = max(1e-8, 1e-3 * max|gradient|), so near-zero entries are judged on
// the scale of the whole gradient.
GradientCheckReport gradient_check(const HeadLoss& loss, const EncoderHead& head, double tolerance,
                                   double step = 1e-4);

struct Checkpoint {
    EncoderHead head;
    std::vector<OptimizerState> optimizers;
};

// head.ckpt: one line of JSON header, then raw little-endian f32 blocks
// (weight, bias, then first/second moments for each Adam optimizer).
void save_checkpoint(const std::filesystem::path& path, const EncoderHead& head,
                     std::span<const OptimizerState> optimizers);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xproto
