#pragma once

#include "bialign/adam.hpp"
#include "bialign/ops.hpp"
#include "bialign/rng.hpp"
#include "bialign/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bialign {

enum class Role { teacher, student };

const char* role_name(Role r);
Role role_from_name(const std::string& name);

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    int n_heads = 0;
    int max_seq_len = 128;
    Role role = Role::student;

    void validate() const {
        if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0)
            throw ConfigError("model config: all dimensions must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("model config: d_model must be divisible by n_heads");
    }

    bool operator==(const ModelConfig&) const = default;
};

ModelConfig teacher_default(int vocab_size, int max_seq_len = 128);
ModelConfig student_default(int vocab_size, int max_seq_len = 128);

// Decoder-only causal transformer: learned token + position embeddings,
// pre-norm blocks (attention then GELU MLP of width 4*d_model), final layer
// norm, and an output projection tied to the token embedding.
//
// Parameter order (also the checkpoint blob order):
//   tok_embed [vocab, d], pos_embed [max_seq, d],
//   per layer: ln1.gain, ln1.bias, wq, bq, wk, bk, wv, bv, wo, bo,
//              ln2.gain, ln2.bias, mlp.w1 [4d, d], mlp.b1, mlp.w2 [d, 4d], mlp.b2,
//   ln_f.gain, ln_f.bias.
// Weight matrices are stored [out_features, in_features].
template <class Real>
class Transformer {
public:
    struct Layer {
        Tensor<Real> ln1_gain, ln1_bias;
        Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<Real> ln2_gain, ln2_bias;
        Tensor<Real> w1, b1, w2, b2;
    };

    Transformer() = default;

    // Deterministic initialization: weights ~ N(0, 0.02), residual output
    // projections (wo, w2) scaled down by 1/sqrt(2*n_layers), biases zero,
    // layer-norm gains one. Draws come from Rng(seed) in parameter order.
    static Transformer init(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::uint64_t init_seed() const { return init_seed_; }

    std::vector<Tensor<Real>>& params() { return params_; }
    const std::vector<Tensor<Real>>& params() const { return params_; }
    std::size_t param_count() const;

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // Same weights, private gradient buffers; used by worker threads.
    Transformer shadow() const;

    // Deep copy (fresh storage).
    Transformer clone() const;

    // Per-position next-token logits [T, vocab] for one sequence.
    Tensor<Real> forward(Graph<Real>* g, const std::vector<int>& tokens) const;

    // Padded-batch convenience: [B, T_max, vocab], zeros in padded rows.
    Tensor<Real> forward_logits_padded(const std::vector<std::vector<int>>& batch) const;

    // log P(tokens[start..end) | prefix): sum of next-token log-probabilities
    // over the span; predicting token s uses the logits at s-1.
    Tensor<Real> span_log_prob(Graph<Real>* g, const std::vector<int>& tokens, int start,
                               int end) const;

    // Greedy argmax decoding; stops at stop_token (not emitted) or max_new.
    // logit_offset is a test hook: added to every logit before the argmax.
    std::vector<int> greedy_decode(const std::vector<int>& prompt, int max_new, int stop_token,
                                   Real logit_offset = Real(0)) const;

    // Flat little-endian float32 view of all parameters, in parameter order.
    std::vector<float> to_blob() const;
    void from_blob(const std::vector<float>& blob);

private:
    void build(const ModelConfig& config);
    Tensor<Real> hidden_states(Graph<Real>* g, const std::vector<int>& tokens) const;

    ModelConfig config_{};
    std::uint64_t init_seed_ = 0;
    Tensor<Real> tok_embed_, pos_embed_;
    std::vector<Layer> layers_;
    Tensor<Real> lnf_gain_, lnf_bias_;
    std::vector<Tensor<Real>> params_; // all of the above, in order
};

// Checkpoint file: magic "BIAL", u32 version, u32 JSON length + JSON config
// document ({model config fields, role, init_seed}), then the float32
// parameter blob. Loading rejects bad magic, unsupported versions, invalid
// configs, and blob size mismatches.
struct Checkpoint {
    ModelConfig config;
    std::uint64_t init_seed = 0;
    std::vector<float> blob;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

template <class Real>
void save_model(const std::string& path, const Transformer<Real>& model) {
    save_checkpoint(path, {model.config(), model.init_seed(), model.to_blob()});
}

template <class Real>
Transformer<Real> load_model(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    auto model = Transformer<Real>::init(ck.config, ck.init_seed);
    model.from_blob(ck.blob);
    return model;
}

// ---- implementation ---------------------------------------------------

template <class Real>
void Transformer<Real>::build(const ModelConfig& config) {
    config.validate();
    config_ = config;
    const int d = config.d_model;
    auto reg = [&](Tensor<Real> t) {
        params_.push_back(t);
        return t;
    };
    tok_embed_ = reg(Tensor<Real>::param({config.vocab_size, d}, "tok_embed"));
    pos_embed_ = reg(Tensor<Real>::param({config.max_seq_len, d}, "pos_embed"));
    layers_.resize(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        auto& L = layers_[static_cast<std::size_t>(l)];
        const std::string p = "layer" + std::to_string(l) + ".";
        L.ln1_gain = reg(Tensor<Real>::param({d}, p + "ln1.gain"));
        L.ln1_bias = reg(Tensor<Real>::param({d}, p + "ln1.bias"));
        L.wq = reg(Tensor<Real>::param({d, d}, p + "attn.wq"));
        L.bq = reg(Tensor<Real>::param({d}, p + "attn.bq"));
        L.wk = reg(Tensor<Real>::param({d, d}, p + "attn.wk"));
        L.bk = reg(Tensor<Real>::param({d}, p + "attn.bk"));
        L.wv = reg(Tensor<Real>::param({d, d}, p + "attn.wv"));
        L.bv = reg(Tensor<Real>::param({d}, p + "attn.bv"));
        L.wo = reg(Tensor<Real>::param({d, d}, p + "attn.wo"));
        L.bo = reg(Tensor<Real>::param({d}, p + "attn.bo"));
        L.ln2_gain = reg(Tensor<Real>::param({d}, p + "ln2.gain"));
        L.ln2_bias = reg(Tensor<Real>::param({d}, p + "ln2.bias"));
        L.w1 = reg(Tensor<Real>::param({4 * d, d}, p + "mlp.w1"));
        L.b1 = reg(Tensor<Real>::param({4 * d}, p + "mlp.b1"));
        L.w2 = reg(Tensor<Real>::param({d, 4 * d}, p + "mlp.w2"));
        L.b2 = reg(Tensor<Real>::param({d}, p + "mlp.b2"));
    }
    lnf_gain_ = reg(Tensor<Real>::param({d}, "ln_f.gain"));
    lnf_bias_ = reg(Tensor<Real>::param({d}, "ln_f.bias"));
}

template <class Real>
Transformer<Real> Transformer<Real>::init(const ModelConfig& config, std::uint64_t seed) {
    Transformer model;
    model.build(config);
    model.init_seed_ = seed;
    Rng rng(seed);
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);
    auto fill_normal = [&](Tensor<Real>& t, double stddev) {
        for (auto& v : t.values()) v = static_cast<Real>(rng.normal(0.0, stddev));
    };
    auto fill_const = [](Tensor<Real>& t, Real c) {
        for (auto& v : t.values()) v = c;
    };
    fill_normal(model.tok_embed_, base_std);
    fill_normal(model.pos_embed_, base_std);
    for (auto& L : model.layers_) {
        fill_const(L.ln1_gain, Real(1));
        fill_normal(L.wq, base_std);
        fill_normal(L.wk, base_std);
        fill_normal(L.wv, base_std);
        fill_normal(L.wo, resid_std);
        fill_const(L.ln2_gain, Real(1));
        fill_normal(L.w1, base_std);
        fill_normal(L.w2, resid_std);
    }
    fill_const(model.lnf_gain_, Real(1));
    return model;
}

template <class Real>
std::size_t Transformer<Real>::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

template <class Real>
Transformer<Real> Transformer<Real>::shadow() const {
    Transformer copy = *this;
    copy.params_.clear();
    auto reg = [&](Tensor<Real>& slot) {
        slot = slot.grad_shadow();
        copy.params_.push_back(slot);
    };
    reg(copy.tok_embed_);
    reg(copy.pos_embed_);
    for (auto& L : copy.layers_) {
        reg(L.ln1_gain);
        reg(L.ln1_bias);
        reg(L.wq);
        reg(L.bq);
        reg(L.wk);
        reg(L.bk);
        reg(L.wv);
        reg(L.bv);
        reg(L.wo);
        reg(L.bo);
        reg(L.ln2_gain);
        reg(L.ln2_bias);
        reg(L.w1);
        reg(L.b1);
        reg(L.w2);
        reg(L.b2);
    }
    reg(copy.lnf_gain_);
    reg(copy.lnf_bias_);
    return copy;
}

template <class Real>
Transformer<Real> Transformer<Real>::clone() const {
    auto copy = Transformer::init(config_, init_seed_);
    for (std::size_t i = 0; i < params_.size(); ++i)
        copy.params_[i].values() = params_[i].values();
    return copy;
}

template <class Real>
Tensor<Real> Transformer<Real>::hidden_states(Graph<Real>* g, const std::vector<int>& tokens) const {
    const int T = static_cast<int>(tokens.size());
    if (T == 0) throw UsageError("forward: empty token sequence");
    if (T > config_.max_seq_len)
        throw UsageError("forward: sequence length " + std::to_string(T) +
                         " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    for (int id : tokens)
        if (id < 0 || id >= config_.vocab_size)
            throw UsageError("forward: token id " + std::to_string(id) + " out of vocabulary");
    std::vector<int> positions(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) positions[static_cast<std::size_t>(t)] = t;

    auto x = ops::add(g, ops::embedding_rows(g, tok_embed_, tokens),
                      ops::embedding_rows(g, pos_embed_, positions));
    for (const auto& L : layers_) {
        auto h = ops::layer_norm(g, x, L.ln1_gain, L.ln1_bias);
        auto q = ops::add_rowvec(g, ops::matmul_nt(g, h, L.wq), L.bq);
        auto k = ops::add_rowvec(g, ops::matmul_nt(g, h, L.wk), L.bk);
        auto v = ops::add_rowvec(g, ops::matmul_nt(g, h, L.wv), L.bv);
        auto attn = ops::causal_self_attention(g, q, k, v, config_.n_heads);
        x = ops::add(g, x, ops::add_rowvec(g, ops::matmul_nt(g, attn, L.wo), L.bo));
        auto h2 = ops::layer_norm(g, x, L.ln2_gain, L.ln2_bias);
        auto m = ops::gelu(g, ops::add_rowvec(g, ops::matmul_nt(g, h2, L.w1), L.b1));
        x = ops::add(g, x, ops::add_rowvec(g, ops::matmul_nt(g, m, L.w2), L.b2));
    }
    return ops::layer_norm(g, x, lnf_gain_, lnf_bias_);
}

template <class Real>
Tensor<Real> Transformer<Real>::forward(Graph<Real>* g, const std::vector<int>& tokens) const {
    return ops::matmul_nt(g, hidden_states(g, tokens), tok_embed_);
}

template <class Real>
Tensor<Real> Transformer<Real>::forward_logits_padded(
    const std::vector<std::vector<int>>& batch) const {
    if (batch.empty()) throw UsageError("forward_logits_padded: empty batch");
    int t_max = 0;
    for (const auto& seq : batch) t_max = std::max(t_max, static_cast<int>(seq.size()));
    auto out = Tensor<Real>::zeros({static_cast<int>(batch.size()), t_max, config_.vocab_size});
    const std::size_t stride_b = static_cast<std::size_t>(t_max) * config_.vocab_size;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto logits = forward(nullptr, batch[b]);
        std::copy(logits.data(), logits.data() + logits.numel(), out.data() + b * stride_b);
    }
    return out;
}

template <class Real>
Tensor<Real> Transformer<Real>::span_log_prob(Graph<Real>* g, const std::vector<int>& tokens,
                                              int start, int end) const {
    const int T = static_cast<int>(tokens.size());
    if (start < 1 || end <= start || end > T)
        throw UsageError("span_log_prob: span [" + std::to_string(start) + ", " +
                         std::to_string(end) + ") out of bounds for length " + std::to_string(T));
    auto hidden = hidden_states(g, tokens);
    auto span_hidden = ops::slice_rows(g, hidden, start - 1, end - 1);
    auto logits = ops::matmul_nt(g, span_hidden, tok_embed_);
    auto lp = ops::log_softmax(g, logits);
    std::vector<int> rows, cols;
    for (int s = start; s < end; ++s) {
        rows.push_back(s - start);
        cols.push_back(tokens[static_cast<std::size_t>(s)]);
    }
    return ops::select_sum(g, lp, rows, cols);
}

template <class Real>
std::vector<int> Transformer<Real>::greedy_decode(const std::vector<int>& prompt, int max_new,
                                                  int stop_token, Real logit_offset) const {
    if (static_cast<int>(prompt.size()) + max_new > config_.max_seq_len)
        throw UsageError("greedy_decode: prompt plus max_new exceeds max_seq_len");
    std::vector<int> seq = prompt;
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        auto logits = forward(nullptr, seq);
        const Real* last = logits.data() + (seq.size() - 1) * static_cast<std::size_t>(config_.vocab_size);
        int best = 0;
        Real best_v = last[0] + logit_offset;
        for (int v = 1; v < config_.vocab_size; ++v) {
            const Real cand = last[v] + logit_offset;
            if (cand > best_v) {
                best_v = cand;
                best = v;
            }
        }
        if (best == stop_token) break;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

template <class Real>
std::vector<float> Transformer<Real>::to_blob() const {
    std::vector<float> blob;
    blob.reserve(param_count());
    for (const auto& p : params_)
        for (const Real v : p.values()) blob.push_back(static_cast<float>(v));
    return blob;
}

template <class Real>
void Transformer<Real>::from_blob(const std::vector<float>& blob) {
    if (blob.size() != param_count())
        throw DataError("checkpoint blob holds " + std::to_string(blob.size()) +
                        " parameters, expected " + std::to_string(param_count()));
    std::size_t off = 0;
    for (auto& p : params_) {
        for (auto& v : p.values()) v = static_cast<Real>(blob[off++]);
    }
}

} // namespace bialign
