#include "xproto/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <json.hpp>

#include "xproto/binary_io.hpp"
#include "xproto/error.hpp"

namespace xproto {

using nlohmann::json;

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "tanh") return Activation::tanh;
    throw ValidationError("unknown activation '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ValidationError("unknown optimizer '" + s + "'");
}

EncoderHead EncoderHead::initialize(std::size_t d_in, std::size_t d_out, Activation activation,
                                    Rng& rng) {
    if (d_in == 0) throw std::invalid_argument("encoder d_in must be positive");
    if (d_out < 2) throw std::invalid_argument("encoder d_out must be at least 2");
    EncoderHead head;
    head.weight = Matrix(d_out, d_in);
    head.bias.assign(d_out, 0.0);
    head.activation = activation;
    const double limit = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    for (double& w : head.weight.data()) w = round_to_f32(rng.uniform(-limit, limit));
    return head;
}

EncoderHead EncoderHead::identity(std::size_t dim) {
    EncoderHead head;
    head.weight = Matrix(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) head.weight(i, i) = 1.0;
    head.bias.assign(dim, 0.0);
    return head;
}

double EncoderHead::parameter(std::size_t i) const {
    const std::size_t nw = weight.data().size();
    return i < nw ? weight.data()[i] : bias[i - nw];
}

double& EncoderHead::parameter(std::size_t i) {
    const std::size_t nw = weight.data().size();
    return i < nw ? weight.data()[i] : bias[i - nw];
}

Vector encode(const EncoderHead& head, std::span<const double> base_vector) {
    if (base_vector.size() != head.d_in()) {
        throw std::invalid_argument("encode: dimension mismatch (" +
                                    std::to_string(base_vector.size()) + " != " +
                                    std::to_string(head.d_in()) + ")");
    }
    Vector out(head.d_out());
    for (std::size_t r = 0; r < head.d_out(); ++r) {
        const double pre = dot(head.weight.row(r), base_vector) + head.bias[r];
        out[r] = head.activation == Activation::tanh ? std::tanh(pre) : pre;
    }
    return out;
}

std::vector<Vector> encode_all(const EncoderHead& head, const std::vector<Vector>& base_vectors) {
    std::vector<Vector> out;
    out.reserve(base_vectors.size());
    for (const auto& b : base_vectors) out.push_back(encode(head, b));
    return out;
}

GradBuffer GradBuffer::zeros_like(const EncoderHead& head) {
    return {Matrix(head.d_out(), head.d_in()), Vector(head.d_out(), 0.0)};
}

void GradBuffer::zero() {
    d_weight.fill(0.0);
    std::fill(d_bias.begin(), d_bias.end(), 0.0);
}

bool GradBuffer::all_finite() const {
    return d_weight.all_finite() && xproto::all_finite(d_bias);
}

double GradBuffer::parameter(std::size_t i) const {
    const std::size_t nw = d_weight.data().size();
    return i < nw ? d_weight.data()[i] : d_bias[i - nw];
}

void backward(const EncoderHead& head, std::span<const double> base_vector,
              std::span<const double> upstream, GradBuffer& grads) {
    if (base_vector.size() != head.d_in() || upstream.size() != head.d_out() ||
        grads.d_weight.rows() != head.d_out() || grads.d_weight.cols() != head.d_in() ||
        grads.d_bias.size() != head.d_out()) {
        throw std::invalid_argument("backward: shape mismatch");
    }
    for (std::size_t r = 0; r < head.d_out(); ++r) {
        double g = upstream[r];
        if (g == 0.0) continue;
        if (head.activation == Activation::tanh) {
            const double y = std::tanh(dot(head.weight.row(r), base_vector) + head.bias[r]);
            g *= 1.0 - y * y;
        }
        axpy(g, base_vector, grads.d_weight.row(r));
        grads.d_bias[r] += g;
    }
}

OptimizerState OptimizerState::make(OptimizerKind kind, double learning_rate,
                                    const EncoderHead& head) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    OptimizerState s;
    s.kind = kind;
    s.learning_rate = learning_rate;
    if (kind == OptimizerKind::adam) {
        s.first_moment.assign(head.parameter_count(), 0.0);
        s.second_moment.assign(head.parameter_count(), 0.0);
    }
    return s;
}

void optimizer_step(OptimizerState& state, EncoderHead& head, const GradBuffer& grads) {
    const std::size_t n = head.parameter_count();
    if (grads.parameter_count() != n) throw std::invalid_argument("optimizer_step: shape mismatch");
    if (!grads.all_finite()) throw NumericError("optimizer_step: non-finite gradient");

    state.step += 1;
    if (state.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < n; ++i) {
            head.parameter(i) = round_to_f32(head.parameter(i) - state.learning_rate * grads.parameter(i));
        }
        return;
    }

    if (state.first_moment.size() != n || state.second_moment.size() != n) {
        throw std::invalid_argument("optimizer_step: moment buffers do not match parameters");
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads.parameter(i);
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = round_to_f32(state.beta1 * m + (1.0 - state.beta1) * g);
        v = round_to_f32(state.beta2 * v + (1.0 - state.beta2) * g * g);
        const double m_hat = m / c1;
        const double v_hat = v / c2;
        head.parameter(i) = round_to_f32(head.parameter(i) -
                                         state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
}

GradientCheckReport gradient_check(const HeadLoss& loss, const EncoderHead& head, double tolerance,
                                   double step) {
    GradBuffer analytic = GradBuffer::zeros_like(head);
    loss(head, analytic);

    const std::size_t n = head.parameter_count();
    std::vector<double> numeric(n);
    EncoderHead probe = head;
    GradBuffer scratch = GradBuffer::zeros_like(head);
    for (std::size_t i = 0; i < n; ++i) {
        const double saved = probe.parameter(i);
        probe.parameter(i) = saved + step;
        scratch.zero();
        const double up = loss(probe, scratch);
        probe.parameter(i) = saved - step;
        scratch.zero();
        const double down = loss(probe, scratch);
        probe.parameter(i) = saved;
        numeric[i] = (up - down) / (2.0 * step);
    }

    GradientCheckReport report;
    report.parameters_checked = n;
    for (std::size_t i = 0; i < n; ++i) {
        report.max_analytic = std::max(report.max_analytic, std::abs(analytic.parameter(i)));
        report.max_numeric = std::max(report.max_numeric, std::abs(numeric[i]));
    }
    const double floor = std::max(1e-8, 1e-3 * std::max(report.max_analytic, report.max_numeric));
    for (std::size_t i = 0; i < n; ++i) {
        const double a = analytic.parameter(i);
        const double err = std::abs(a - numeric[i]);
        const double rel = err / std::max({std::abs(a), std::abs(numeric[i]), floor});
        report.max_absolute_error = std::max(report.max_absolute_error, err);
        if (rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_parameter = i;
        }
    }
    report.passed = report.max_relative_error <= tolerance;
    return report;
}

namespace {

json optimizer_header(const OptimizerState& s) {
    return {{"kind", to_string(s.kind)}, {"learning_rate", s.learning_rate}, {"beta1", s.beta1},
            {"beta2", s.beta2},          {"epsilon", s.epsilon},             {"step", s.step}};
}

void append(Bytes& out, const Bytes& block) { out.insert(out.end(), block.begin(), block.end()); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderHead& head,
                     std::span<const OptimizerState> optimizers) {
    json header;
    header["format"] = "xproto-head";
    header["version"] = 1;
    header["d_in"] = head.d_in();
    header["d_out"] = head.d_out();
    header["activation"] = to_string(head.activation);
    header["optimizer"] = optimizers.empty() ? "none" : to_string(optimizers.front().kind);
    header["step"] = optimizers.empty() ? 0 : optimizers.front().step;
    header["optimizers"] = json::array();
    for (const auto& s : optimizers) header["optimizers"].push_back(optimizer_header(s));

    const std::string text = header.dump() + "\n";
    Bytes out(text.begin(), text.end());
    append(out, encode_f32(head.weight.data()));
    append(out, encode_f32(head.bias));
    for (const auto& s : optimizers) {
        if (s.kind != OptimizerKind::adam) continue;
        append(out, encode_f32(s.first_moment));
        append(out, encode_f32(s.second_moment));
    }
    write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const Bytes bytes = read_file_bytes(path);
    const auto newline = std::find(bytes.begin(), bytes.end(), static_cast<std::uint8_t>('\n'));
    if (newline == bytes.end()) throw ValidationError("checkpoint: missing header line");

    json header;
    try {
        header = json::parse(bytes.begin(), newline);
    } catch (const json::exception& e) {
        throw ValidationError("checkpoint header: " + std::string(e.what()));
    }
    if (header.value("format", "") != "xproto-head") {
        throw ValidationError("checkpoint: not an xproto head checkpoint");
    }

    Checkpoint ckpt;
    const std::size_t d_in = header.at("d_in").get<std::size_t>();
    const std::size_t d_out = header.at("d_out").get<std::size_t>();
    ckpt.head.weight = Matrix(d_out, d_in);
    ckpt.head.bias.assign(d_out, 0.0);
    ckpt.head.activation = activation_from_string(header.at("activation").get<std::string>());

    std::size_t expected = (d_out * d_in + d_out) * 4;
    for (const auto& oh : header.at("optimizers")) {
        OptimizerState s;
        s.kind = optimizer_from_string(oh.at("kind").get<std::string>());
        s.learning_rate = oh.at("learning_rate").get<double>();
        s.beta1 = oh.at("beta1").get<double>();
        s.beta2 = oh.at("beta2").get<double>();
        s.epsilon = oh.at("epsilon").get<double>();
        s.step = oh.at("step").get<std::uint64_t>();
        if (s.kind == OptimizerKind::adam) expected += 2 * ckpt.head.parameter_count() * 4;
        ckpt.optimizers.push_back(std::move(s));
    }

    const auto body_begin = static_cast<std::size_t>(std::distance(bytes.begin(), newline)) + 1;
    if (bytes.size() - body_begin != expected) {
        throw ValidationError("checkpoint: byte-count mismatch");
    }
    std::size_t offset = body_begin;
    auto take = [&](std::size_t count) {
        auto values = decode_f32(std::span(bytes).subspan(offset, count * 4));
        offset += count * 4;
        return values;
    };
    ckpt.head.weight.data() = take(d_out * d_in);
    ckpt.head.bias = take(d_out);
    for (auto& s : ckpt.optimizers) {
        if (s.kind != OptimizerKind::adam) continue;
        s.first_moment = take(ckpt.head.parameter_count());
        s.second_moment = take(ckpt.head.parameter_count());
    }
    if (!ckpt.head.weight.all_finite() || !all_finite(ckpt.head.bias)) {
        throw ValidationError("checkpoint: non-finite parameters");
    }
    return ckpt;
}

}  // namespace xproto
