#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/dataset.hpp"
#include "kddids/evaluation.hpp"
#include "kddids/labels.hpp"

namespace kddids::nn {

enum class Activation { relu, softmax };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "softmax"; }

/// Fully connected layer; `weights` is out x in, row-major.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;
    std::vector<double> bias;
    Activation activation = Activation::relu;

    double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
    double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }

    bool operator==(const DenseLayer&) const = default;
};

/// Feed-forward classifier: ReLU hidden layers, softmax output.
struct MLPModel {
    std::vector<DenseLayer> layers;
    /// Id of the standardization the model was trained under; empty for toy models.
    std::string stats_id;

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        if (layers.empty()) return d;
        d.push_back(layers.front().in);
        for (const auto& l : layers) d.push_back(l.out);
        return d;
    }

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

    bool operator==(const MLPModel&) const = default;
};

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    std::vector<std::size_t> hidden_dims = {64, 32};

    void validate() const {
        if (!(learning_rate > 0)) throw Error("learning rate must be positive");
        if (batch_size == 0) throw Error("batch size must be positive");
        if (hidden_dims.empty()) throw Error("at least one hidden layer is required");
        for (auto h : hidden_dims) {
            if (h == 0) throw Error("hidden layer sizes must be positive");
        }
    }
};

/// Glorot-uniform weights, zero biases. `dims` = {input, hidden..., output}.
inline MLPModel init_model(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw Error("a network needs at least input and output dims");
    Rng rng(seed);
    MLPModel m;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.in = dims[l];
        layer.out = dims[l + 1];
        layer.activation = l + 2 == dims.size() ? Activation::softmax : Activation::relu;
        const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
        layer.weights.resize(layer.in * layer.out);
        for (auto& w : layer.weights) w = (2.0 * uniform_unit(rng) - 1.0) * limit;
        layer.bias.assign(layer.out, 0.0);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

/// 41 -> hidden_dims -> 5.
inline MLPModel init_model(const TrainConfig& config) {
    config.validate();
    std::vector<std::size_t> dims{kFeatureDim};
    dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
    dims.push_back(kNumClasses);
    return init_model(dims, config.seed);
}

/// Softmax in place, shifted by the max logit.
inline void softmax(std::span<double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : z) v /= sum;
}

namespace detail {

/// Per-layer pre-activations and activations of one forward pass.
struct Workspace {
    std::vector<std::vector<double>> z;  // pre-activation
    std::vector<std::vector<double>> a;  // a[0] = input
    std::vector<std::vector<double>> delta;

    explicit Workspace(const MLPModel& m) {
        a.resize(m.layers.size() + 1);
        z.resize(m.layers.size());
        delta.resize(m.layers.size());
        a[0].resize(m.input_dim());
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            z[l].resize(m.layers[l].out);
            a[l + 1].resize(m.layers[l].out);
            delta[l].resize(m.layers[l].out);
        }
    }
};

inline void forward_into(const MLPModel& m, std::span<const double> x, Workspace& ws) {
    std::copy(x.begin(), x.end(), ws.a[0].begin());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& layer = m.layers[l];
        const double* in = ws.a[l].data();
        auto& z = ws.z[l];
        for (std::size_t r = 0; r < layer.out; ++r) {
            const double* row = layer.weights.data() + r * layer.in;
            double s = layer.bias[r];
            for (std::size_t c = 0; c < layer.in; ++c) s += row[c] * in[c];
            z[r] = s;
        }
        auto& a = ws.a[l + 1];
        if (layer.activation == Activation::relu) {
            for (std::size_t r = 0; r < layer.out; ++r) a[r] = z[r] > 0 ? z[r] : 0.0;
        } else {
            std::copy(z.begin(), z.end(), a.begin());
            softmax(a);
        }
    }
}

inline void check_input(const MLPModel& m, std::size_t n) {
    if (m.layers.empty()) throw Error("empty network");
    if (n != m.input_dim()) {
        throw Error("dimension mismatch: network expects " + std::to_string(m.input_dim()) +
                    " inputs, got " + std::to_string(n));
    }
}

}  // namespace detail

/// Class probabilities.
inline std::vector<double> forward(const MLPModel& model, std::span<const double> x) {
    detail::check_input(model, x.size());
    detail::Workspace ws(model);
    detail::forward_into(model, x, ws);
    return ws.a.back();
}

/// Argmax with ties to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

inline std::size_t predict_index(const MLPModel& model, std::span<const double> x) {
    return argmax(forward(model, x));
}

inline CoarseLabel predict(const MLPModel& model, std::span<const double> x) {
    if (model.output_dim() != kNumClasses) throw Error("network does not have 5 outputs");
    return class_at(predict_index(model, x));
}

/// Same shape as the model's weights and biases.
struct Gradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> bias;

    explicit Gradients(const MLPModel& m) {
        for (const auto& l : m.layers) {
            weights.emplace_back(l.weights.size(), 0.0);
            bias.emplace_back(l.bias.size(), 0.0);
        }
    }

    void clear() {
        for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
        for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
    }
};

struct Sample {
    std::span<const double> x;
    std::size_t label;
};

namespace detail {

/// Adds this sample's loss gradient to `g`; returns its cross-entropy.
inline double accumulate(const MLPModel& m, const Sample& s, Workspace& ws, Gradients& g) {
    forward_into(m, s.x, ws);
    const std::size_t L = m.layers.size();
    const auto& z_out = ws.z[L - 1];
    // -log softmax(z)_y via log-sum-exp, stays finite for saturated outputs
    const double mx = *std::max_element(z_out.begin(), z_out.end());
    double lse = 0;
    for (double v : z_out) lse += std::exp(v - mx);
    const double loss = std::log(lse) + mx - z_out[s.label];

    auto& d_out = ws.delta[L - 1];
    for (std::size_t r = 0; r < d_out.size(); ++r) d_out[r] = ws.a[L][r] - (r == s.label ? 1.0 : 0.0);

    for (std::size_t l = L; l-- > 0;) {
        const auto& layer = m.layers[l];
        const auto& delta = ws.delta[l];
        const double* in = ws.a[l].data();
        auto& gw = g.weights[l];
        auto& gb = g.bias[l];
        for (std::size_t r = 0; r < layer.out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            gb[r] += d;
            double* grow = gw.data() + r * layer.in;
            for (std::size_t c = 0; c < layer.in; ++c) grow[c] += d * in[c];
        }
        if (l == 0) break;
        auto& prev = ws.delta[l - 1];
        std::fill(prev.begin(), prev.end(), 0.0);
        for (std::size_t r = 0; r < layer.out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            const double* row = layer.weights.data() + r * layer.in;
            for (std::size_t c = 0; c < layer.in; ++c) prev[c] += row[c] * d;
        }
        const auto& zp = ws.z[l - 1];
        for (std::size_t c = 0; c < prev.size(); ++c) {
            if (!(zp[c] > 0)) prev[c] = 0.0;  // ReLU'(0) taken as 0
        }
    }
    return loss;
}

}  // namespace detail

/// Mean categorical cross-entropy over the batch and its exact gradient.
inline std::pair<double, Gradients> loss_and_gradient(const MLPModel& model,
                                                      std::span<const Sample> batch) {
    if (batch.empty()) throw Error("empty batch");
    Gradients g(model);
    detail::Workspace ws(model);
    double loss = 0;
    for (const auto& s : batch) {
        detail::check_input(model, s.x.size());
        if (s.label >= model.output_dim()) throw Error("label out of range");
        loss += detail::accumulate(model, s, ws, g);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& w : g.weights) for (auto& v : w) v *= inv;
    for (auto& b : g.bias) for (auto& v : b) v *= inv;
    return {loss * inv, std::move(g)};
}

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Called after every epoch with (epoch index, mean training loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Mini-batch gradient descent on labelled samples. The sample order is
/// reshuffled each epoch from the config seed.
inline MLPModel train_samples(MLPModel model, std::span<const Sample> samples,
                              const TrainConfig& config, const EpochCallback& on_epoch = {}) {
    if (config.epochs == 0) return model;
    if (samples.empty()) throw Error("cannot train on an empty dataset");
    Rng rng(derive_seed(config.seed, "shuffle"));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Gradients g(model);
    detail::Workspace ws(model);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            g.clear();
            for (std::size_t i = start; i < end; ++i) {
                epoch_loss += detail::accumulate(model, samples[order[i]], ws, g);
            }
            const double step = config.learning_rate / static_cast<double>(end - start);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                auto& layer = model.layers[l];
                for (std::size_t k = 0; k < layer.weights.size(); ++k) layer.weights[k] -= step * g.weights[l][k];
                for (std::size_t k = 0; k < layer.bias.size(); ++k) layer.bias[k] -= step * g.bias[l][k];
            }
        }
        epoch_loss /= static_cast<double>(samples.size());
        if (!std::isfinite(epoch_loss)) {
            throw TrainingError("training diverged: non-finite loss in epoch " +
                                std::to_string(epoch + 1) + " (learning rate " +
                                format_double(config.learning_rate) + ")");
        }
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    return model;
}

inline std::vector<Sample> samples_of(const Dataset& ds) {
    std::vector<Sample> s;
    s.reserve(ds.size());
    for (const auto& r : ds.records) s.push_back({r.x, index_of(r.coarse_label)});
    return s;
}

/// Trains a fresh 41 -> hidden -> 5 network on a standardized dataset.
inline MLPModel train(const Dataset& ds, const TrainConfig& config,
                      const EpochCallback& on_epoch = {}) {
    auto model = init_model(config);
    const auto samples = samples_of(ds);
    return train_samples(std::move(model), samples, config, on_epoch);
}

inline ConfusionMatrix evaluate(const MLPModel& model, const Dataset& ds) {
    auto m = ConfusionMatrix::coarse();
    for (const auto& r : ds.records) m.add(index_of(r.coarse_label), index_of(predict(model, r.x)));
    return m;
}

struct CrossValidationResult {
    std::vector<double> fold_accuracy;  // percent
    std::vector<ConfusionMatrix> fold_confusion;
    double mean_accuracy = 0;
};

/// Stratified k-fold CV on an unstandardized dataset. Each fold fits its
/// own standardization on its training part.
inline CrossValidationResult cross_validate(const Dataset& ds, std::size_t k,
                                            const TrainConfig& config, std::uint64_t fold_seed,
                                            const EpochCallback& on_epoch = {}) {
    CrossValidationResult res;
    const auto folds = stratified_kfold(ds, k, fold_seed);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto train_raw = subset(ds, folds[f].train);
        const auto stats = standardize_fit(train_raw);
        TrainConfig fold_config = config;
        fold_config.seed = derive_seed(config.seed, f);
        const auto model = train(standardize(train_raw, stats), fold_config, on_epoch);
        auto cm = evaluate(model, standardize(subset(ds, folds[f].validation), stats));
        res.fold_accuracy.push_back(overall_accuracy(cm));
        res.fold_confusion.push_back(std::move(cm));
    }
    res.mean_accuracy = std::accumulate(res.fold_accuracy.begin(), res.fold_accuracy.end(), 0.0) /
                        static_cast<double>(res.fold_accuracy.size());
    return res;
}

inline std::string serialize(const MLPModel& m) {
    std::string out = "kddids-mlp 1\n";
    out += "stats_id " + (m.stats_id.empty() ? std::string("-") : m.stats_id) + "\n";
    out += "dims";
    for (auto d : m.dims()) out += " " + std::to_string(d);
    out += "\nactivations";
    for (const auto& l : m.layers) out += " " + std::string(to_string(l.activation));
    out += "\n";
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        write_values(out, "W" + std::to_string(l), m.layers[l].weights);
        write_values(out, "b" + std::to_string(l), m.layers[l].bias);
    }
    return out;
}

inline MLPModel parse_mlp(std::string text, const std::string& source) {
    TextReader in(std::move(text), source);
    in.expect_header("kddids-mlp", 1);
    MLPModel m;
    const auto sid = in.expect("stats_id", 1);
    if (sid[0] != "-") m.stats_id = std::string(sid[0]);
    std::vector<std::size_t> dims;
    for (auto t : in.expect("dims", 2)) dims.push_back(in.to_int<std::size_t>(t));
    const auto acts = in.expect("activations");
    if (acts.size() + 1 != dims.size()) in.fail("activation count does not match dims");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.in = dims[l];
        layer.out = dims[l + 1];
        if (acts[l] == "relu") layer.activation = Activation::relu;
        else if (acts[l] == "softmax") layer.activation = Activation::softmax;
        else in.fail("unknown activation '" + std::string(acts[l]) + "'");
        layer.weights = in.doubles("W" + std::to_string(l), layer.in * layer.out);
        layer.bias = in.doubles("b" + std::to_string(l), layer.out);
        m.layers.push_back(std::move(layer));
    }
    for (const auto& l : m.layers) {
        for (double v : l.weights) if (!std::isfinite(v)) in.fail("non-finite weight");
        for (double v : l.bias) if (!std::isfinite(v)) in.fail("non-finite bias");
    }
    return m;
}

}  // namespace kddids::nn
