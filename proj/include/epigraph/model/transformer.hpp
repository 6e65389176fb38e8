#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "epigraph/core/nn.hpp"

namespace epigraph::model {

struct TransformerConfig {
    std::size_t d_model = 256;
    std::size_t n_heads = 8;
    std::size_t d_ff = 256;
    double dropout = 0.05;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                              std::to_string(n_heads));
        if (d_ff == 0) throw ConfigError("d_ff must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
        if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("need at least one encoder and decoder layer");
    }
};

// Training flag plus the dropout stream; evaluation passes rng = nullptr.
struct RunMode {
    bool training = false;
    Rng* rng = nullptr;
};

// Fixed sinusoidal table [w, d]: sin(pos / 10000^(2i/d)) on even columns,
// cos on odd ones.
inline Tensor positional_encoding(std::size_t w, std::size_t d) {
    std::vector<double> p(w * d);
    for (std::size_t pos = 0; pos < w; ++pos)
        for (std::size_t c = 0; c < d; ++c) {
            const double rate = std::pow(10000.0, static_cast<double>(c - c % 2) / static_cast<double>(d));
            const double angle = static_cast<double>(pos) / rate;
            p[pos * d + c] = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    return Tensor({w, d}, std::move(p));
}

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamSet& params, const std::string& name, std::size_t d_model, std::size_t heads, Rng& rng)
        : heads_(heads), d_model_(d_model) {
        q_ = Linear(params, name + ".q", d_model, d_model, rng);
        k_ = Linear(params, name + ".k", d_model, d_model, rng);
        v_ = Linear(params, name + ".v", d_model, d_model, rng);
        o_ = Linear(params, name + ".o", d_model, d_model, rng);
    }

    std::size_t heads() const { return heads_; }
    const Linear& query() const { return q_; }

    // query [B, Lq, d], memory [B, Lk, d] -> [B, Lq, d]. When `weights` is
    // given it receives the attention distribution [B, heads, Lq, Lk].
    Tensor operator()(const Tensor& query, const Tensor& memory, const AttentionMask& mask, double dropout_rate,
                      RunMode mode, Tensor* weights = nullptr) const {
        if (query.rank() != 3 || memory.rank() != 3 || query.dim(2) != d_model_ || memory.dim(2) != d_model_ ||
            query.dim(0) != memory.dim(0))
            throw ContractError("attention: query " + to_string(query.shape()) + " / memory " +
                                to_string(memory.shape()) + " do not match d_model " + std::to_string(d_model_));
        if (mask.rows != query.dim(1) || mask.cols != memory.dim(1))
            throw ContractError("attention: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                                " does not match sequence lengths " + std::to_string(query.dim(1)) + "x" +
                                std::to_string(memory.dim(1)));
        const std::size_t B = query.dim(0), Lq = query.dim(1), dk = d_model_ / heads_;
        const Tensor Q = split(q_(query));
        const Tensor K = split(k_(memory));
        const Tensor V = split(v_(memory));
        Tensor alpha = masked_softmax(scale(matmul(Q, K, true), 1.0 / std::sqrt(static_cast<double>(dk))), mask);
        if (weights) *weights = alpha;
        alpha = dropout(alpha, dropout_rate, mode.rng, mode.training);
        const Tensor mixed = permute(matmul(alpha, V), {0, 2, 1, 3});  // [B, Lq, heads, dk]
        return o_(reshape(mixed, {B, Lq, d_model_}));
    }

private:
    Tensor split(const Tensor& x) const {
        const std::size_t B = x.dim(0), L = x.dim(1);
        return permute(reshape(x, {B, L, heads_, d_model_ / heads_}), {0, 2, 1, 3});
    }

    std::size_t heads_ = 0, d_model_ = 0;
    Linear q_, k_, v_, o_;
};

struct LayerNorm {
    Tensor gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamSet& params, const std::string& name, std::size_t d) {
        gain = params.add(name + ".gain", Tensor::full({d}, 1.0, true));
        bias = params.add(name + ".bias", Tensor::zeros({d}, true));
    }
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct FeedForward {
    Linear in, out;
    FeedForward() = default;
    FeedForward(ParamSet& params, const std::string& name, std::size_t d, std::size_t d_ff, Rng& rng)
        : in(params, name + ".in", d, d_ff, rng), out(params, name + ".out", d_ff, d, rng) {}
    Tensor operator()(const Tensor& x, double rate, RunMode mode) const {
        return out(dropout(relu(in(x)), rate, mode.rng, mode.training));
    }
};

class EncoderLayer {
public:
    EncoderLayer() = default;
    EncoderLayer(ParamSet& params, const std::string& name, const TransformerConfig& cfg, Rng& rng)
        : attn_(params, name + ".self_attn", cfg.d_model, cfg.n_heads, rng),
          norm1_(params, name + ".norm1", cfg.d_model),
          ffn_(params, name + ".ffn", cfg.d_model, cfg.d_ff, rng),
          norm2_(params, name + ".norm2", cfg.d_model),
          rate_(cfg.dropout) {}

    Tensor operator()(const Tensor& x, RunMode mode, Tensor* weights = nullptr) const {
        const auto mask = AttentionMask::full(x.dim(1), x.dim(1));
        const Tensor h = norm1_(add(x, attn_(x, x, mask, rate_, mode, weights)));
        return norm2_(add(h, ffn_(h, rate_, mode)));
    }

    const MultiHeadAttention& attention() const { return attn_; }

private:
    MultiHeadAttention attn_;
    LayerNorm norm1_;
    FeedForward ffn_;
    LayerNorm norm2_;
    double rate_ = 0.0;
};

class DecoderLayer {
public:
    DecoderLayer() = default;
    DecoderLayer(ParamSet& params, const std::string& name, const TransformerConfig& cfg, Rng& rng)
        : self_(params, name + ".self_attn", cfg.d_model, cfg.n_heads, rng),
          norm1_(params, name + ".norm1", cfg.d_model),
          cross_(params, name + ".cross_attn", cfg.d_model, cfg.n_heads, rng),
          norm2_(params, name + ".norm2", cfg.d_model),
          ffn_(params, name + ".ffn", cfg.d_model, cfg.d_ff, rng),
          norm3_(params, name + ".norm3", cfg.d_model),
          rate_(cfg.dropout) {}

    Tensor operator()(const Tensor& y, const Tensor& memory, RunMode mode, Tensor* self_weights = nullptr,
                      Tensor* cross_weights = nullptr) const {
        const std::size_t L = y.dim(1);
        Tensor h = norm1_(add(y, self_(y, y, AttentionMask::causal(L), rate_, mode, self_weights)));
        h = norm2_(add(h, cross_(h, memory, AttentionMask::full(L, memory.dim(1)), rate_, mode, cross_weights)));
        return norm3_(add(h, ffn_(h, rate_, mode)));
    }

private:
    MultiHeadAttention self_;
    LayerNorm norm1_;
    MultiHeadAttention cross_;
    LayerNorm norm2_;
    FeedForward ffn_;
    LayerNorm norm3_;
    double rate_ = 0.0;
};

// Post-norm encoder-decoder stack over d_model-wide sequences.
class Transformer {
public:
    Transformer() = default;
    Transformer(ParamSet& params, const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        for (std::size_t l = 0; l < cfg.encoder_layers; ++l)
            encoder_.emplace_back(params, "encoder" + std::to_string(l), cfg, rng);
        for (std::size_t l = 0; l < cfg.decoder_layers; ++l)
            decoder_.emplace_back(params, "decoder" + std::to_string(l), cfg, rng);
    }

    const TransformerConfig& config() const { return cfg_; }
    const std::vector<EncoderLayer>& encoder_layers() const { return encoder_; }

    // Inputs are multiplied by sqrt(d_model) before the positional encoding is added.
    double embed_scale() const { return std::sqrt(static_cast<double>(cfg_.d_model)); }

    // z: [B, w, d] -> encoder memory; positional encoding added here.
    Tensor encode(const Tensor& z, RunMode mode) const {
        check(z, "encoder input");
        Tensor h = add(scale(z, embed_scale()), positional_encoding(z.dim(1), cfg_.d_model));
        for (const auto& layer : encoder_) h = layer(h, mode);
        return h;
    }

    // y: [B, w, d] embedded decoder inputs, memory: [B, Lk, d].
    Tensor decode(const Tensor& y, const Tensor& memory, RunMode mode) const {
        check(y, "decoder input");
        check(memory, "encoder output");
        if (memory.dim(0) != y.dim(0)) throw ContractError("decoder and encoder batch sizes differ");
        Tensor h = add(scale(y, embed_scale()), positional_encoding(y.dim(1), cfg_.d_model));
        for (const auto& layer : decoder_) h = layer(h, memory, mode);
        return h;
    }

private:
    void check(const Tensor& x, const char* what) const {
        if (x.rank() != 3 || x.dim(2) != cfg_.d_model)
            throw ContractError(std::string(what) + " " + to_string(x.shape()) + " does not match d_model " +
                                std::to_string(cfg_.d_model));
    }

    TransformerConfig cfg_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
};

}  // namespace epigraph::model
