#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unke/tensor.hpp"

namespace unke {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// End-of-sequence token is reserved at vocab index 0.
constexpr int kEosToken = 0;

struct ModelConfig {
    int n_layers = 8;
    int split_layer = 4;  // L, in [1, n_layers-1]; key generator = blocks 1..L
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int vocab_size = 0;
    int max_seq_len = 96;
    uint64_t seed = 0;

    void validate() const;
};

// One pre-norm decoder block: norm -> causal MHA -> residual; norm -> MLP -> residual.
struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;

    std::vector<Tensor> parameters();
    std::vector<Tensor> attention_parameters();
    std::vector<Tensor> mlp_parameters();
};

// Per-layer post-block hidden states h^l, l = 1..N (index l-1), each [T, d_model].
using LayerActivations = std::vector<Tensor>;

class TransformerModel {
public:
    static TransformerModel init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    // Re-point the key/value generator boundary; the weights are untouched.
    void set_split_layer(int layer) {
        if (layer < 1 || layer >= cfg_.n_layers)
            throw ContractError("set_split_layer: layer must be in [1, n_layers-1]");
        cfg_.split_layer = layer;
    }
    Block& block(int index_1based) { return blocks_[static_cast<size_t>(index_1based - 1)]; }
    const Block& block(int index_1based) const {
        return blocks_[static_cast<size_t>(index_1based - 1)];
    }

    struct ForwardResult {
        Tensor logits;               // [T, vocab]
        LayerActivations layer_acts; // N entries
    };

    // Embedding-plus-position input to block 1.
    Tensor embed(std::span<const int> tokens) const;
    Tensor block_forward(int index_1based, const Tensor& x) const;
    // Final norm plus unembedding.
    Tensor unembed(const Tensor& x) const;
    Tensor final_hidden(const Tensor& x) const;  // final norm only

    ForwardResult forward(std::span<const int> tokens) const;
    // Last-position post-block-L hidden of the token sequence (Eq-style key vector).
    Tensor key_vector(std::span<const int> tokens) const;
    // Runs blocks L+1..N plus final norm and unembedding on layer-L hiddens.
    Tensor value_generator_forward(const Tensor& layer_l_hiddens) const;
    // Blocks 1..L only; returns the [T, d_model] layer-L hidden matrix.
    Tensor key_generator_forward(std::span<const int> tokens) const;
    // Layer-(L-1) input to block L (embedding output when L == 1).
    Tensor key_generator_input(std::span<const int> tokens) const;
    // forward() with the layer-L hidden at `position` replaced by itself + delta.
    Tensor forward_with_injection(std::span<const int> tokens, int position,
                                  const Tensor& delta) const;

    // Greedy below temperature 0.001, softmax sampling above; stops on EOS.
    std::vector<int> decode(std::span<const int> prompt, int max_new, float temperature,
                            uint64_t seed = 0) const;

    std::vector<Tensor> parameters();
    std::vector<Tensor> parameters_outside_block(int index_1based);
    void set_requires_grad(bool v);
    TransformerModel clone() const;
    uint32_t checksum() const;

    void save_checkpoint(const std::filesystem::path& path) const;
    static TransformerModel load_checkpoint(const std::filesystem::path& path);

private:
    TransformerModel() = default;
    void check_tokens(std::span<const int> tokens) const;

    ModelConfig cfg_;
    Tensor tok_emb_, pos_emb_;
    std::vector<Block> blocks_;
    Tensor lnf_g_, lnf_b_;
    Tensor w_unembed_;
};

}  // namespace unke
