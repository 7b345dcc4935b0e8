#include "unke/transformer.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace unke {

namespace {

// Deterministic N(0, std) stream independent of libstdc++ distribution details.
class NormalStream {
public:
    explicit NormalStream(uint64_t seed) : rng_(seed) {}

    float next(float stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return spare_ * stddev;
        }
        double u1 = 0.0;
        while (u1 <= 1e-12) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = static_cast<float>(r * std::sin(theta));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(theta)) * stddev;
    }

private:
    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    std::mt19937_64 rng_;
    float spare_ = 0.0f;
    bool have_spare_ = false;
};

Tensor randn(NormalStream& ns, std::vector<int> shape, float stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = ns.next(stddev);
    return t;
}

uint32_t crc32_update(uint32_t crc, const void* buf, size_t len) {
    static std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(buf);
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 2) throw ContractError("config: n_layers must be >= 2");
    if (split_layer < 1 || split_layer >= n_layers)
        throw ContractError("config: split_layer must be in [1, n_layers-1]");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        throw ContractError("config: d_model must be divisible by n_heads");
    if (d_ff <= 0 || vocab_size <= 0 || max_seq_len <= 0)
        throw ContractError("config: dimensions must be positive");
}

std::vector<Tensor> Block::parameters() {
    return {ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo,
            ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2};
}

std::vector<Tensor> Block::attention_parameters() {
    return {wq, bq, wk, bk, wv, bv, wo, bo};
}

std::vector<Tensor> Block::mlp_parameters() { return {w_ff1, b_ff1, w_ff2, b_ff2}; }

TransformerModel TransformerModel::init(const ModelConfig& cfg) {
    cfg.validate();
    TransformerModel m;
    m.cfg_ = cfg;
    NormalStream ns(cfg.seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
    const float std_base = 0.02f;
    const float std_proj = std_base / std::sqrt(2.0f * static_cast<float>(cfg.n_layers));
    m.tok_emb_ = randn(ns, {cfg.vocab_size, cfg.d_model}, std_base);
    m.pos_emb_ = randn(ns, {cfg.max_seq_len, cfg.d_model}, std_base);
    for (int l = 0; l < cfg.n_layers; ++l) {
        Block b;
        b.ln1_g = Tensor::from_data({cfg.d_model},
                                    std::vector<float>(static_cast<size_t>(cfg.d_model), 1.0f));
        b.ln1_b = Tensor::zeros({cfg.d_model});
        b.wq = randn(ns, {cfg.d_model, cfg.d_model}, std_base);
        b.bq = Tensor::zeros({cfg.d_model});
        b.wk = randn(ns, {cfg.d_model, cfg.d_model}, std_base);
        b.bk = Tensor::zeros({cfg.d_model});
        b.wv = randn(ns, {cfg.d_model, cfg.d_model}, std_base);
        b.bv = Tensor::zeros({cfg.d_model});
        b.wo = randn(ns, {cfg.d_model, cfg.d_model}, std_proj);
        b.bo = Tensor::zeros({cfg.d_model});
        b.ln2_g = Tensor::from_data({cfg.d_model},
                                    std::vector<float>(static_cast<size_t>(cfg.d_model), 1.0f));
        b.ln2_b = Tensor::zeros({cfg.d_model});
        b.w_ff1 = randn(ns, {cfg.d_model, cfg.d_ff}, std_base);
        b.b_ff1 = Tensor::zeros({cfg.d_ff});
        b.w_ff2 = randn(ns, {cfg.d_ff, cfg.d_model}, std_proj);
        b.b_ff2 = Tensor::zeros({cfg.d_model});
        m.blocks_.push_back(std::move(b));
    }
    m.lnf_g_ = Tensor::from_data({cfg.d_model},
                                 std::vector<float>(static_cast<size_t>(cfg.d_model), 1.0f));
    m.lnf_b_ = Tensor::zeros({cfg.d_model});
    m.w_unembed_ = randn(ns, {cfg.d_model, cfg.vocab_size}, std_base);
    return m;
}

void TransformerModel::check_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw ContractError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.max_seq_len)
        throw ShapeError("forward: sequence exceeds max_seq_len");
    for (int t : tokens)
        if (t < 0 || t >= cfg_.vocab_size)
            throw ShapeError("forward: token id out of vocabulary");
}

Tensor TransformerModel::embed(std::span<const int> tokens) const {
    check_tokens(tokens);
    const int t = static_cast<int>(tokens.size());
    std::vector<int> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = i;
    return ops::add(ops::embedding(tok_emb_, tokens), ops::embedding(pos_emb_, positions));
}

Tensor TransformerModel::block_forward(int index_1based, const Tensor& x) const {
    const Block& b = blocks_[static_cast<size_t>(index_1based - 1)];
    const int t = x.dim(0);
    const int dh = cfg_.d_model / cfg_.n_heads;

    Tensor a = ops::layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor q = ops::add_bias(ops::matmul(a, b.wq), b.bq);
    Tensor k = ops::add_bias(ops::matmul(a, b.wk), b.bk);
    Tensor v = ops::add_bias(ops::matmul(a, b.wv), b.bv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(cfg_.n_heads));
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    for (int h = 0; h < cfg_.n_heads; ++h) {
        Tensor qh = ops::slice_cols(q, h * dh, dh);
        Tensor kh = ops::slice_cols(k, h * dh, dh);
        Tensor vh = ops::slice_cols(v, h * dh, dh);
        Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt_dh);
        Tensor probs = ops::causal_softmax(scores);
        heads.push_back(ops::matmul(probs, vh));
    }
    Tensor ctx = cfg_.n_heads == 1 ? heads[0] : ops::concat_cols(heads);
    Tensor attn_out = ops::add_bias(ops::matmul(ctx, b.wo), b.bo);
    Tensor x1 = ops::add(x, attn_out);

    Tensor m = ops::layer_norm(x1, b.ln2_g, b.ln2_b);
    Tensor ff = ops::add_bias(
        ops::matmul(ops::gelu(ops::add_bias(ops::matmul(m, b.w_ff1), b.b_ff1)), b.w_ff2),
        b.b_ff2);
    (void)t;
    return ops::add(x1, ff);
}

Tensor TransformerModel::final_hidden(const Tensor& x) const {
    return ops::layer_norm(x, lnf_g_, lnf_b_);
}

Tensor TransformerModel::unembed(const Tensor& x) const {
    return ops::matmul(final_hidden(x), w_unembed_);
}

TransformerModel::ForwardResult TransformerModel::forward(std::span<const int> tokens) const {
    ForwardResult r;
    Tensor x = embed(tokens);
    r.layer_acts.reserve(static_cast<size_t>(cfg_.n_layers));
    for (int l = 1; l <= cfg_.n_layers; ++l) {
        x = block_forward(l, x);
        r.layer_acts.push_back(x);
    }
    r.logits = unembed(x);
    return r;
}

Tensor TransformerModel::key_generator_forward(std::span<const int> tokens) const {
    Tensor x = embed(tokens);
    for (int l = 1; l <= cfg_.split_layer; ++l) x = block_forward(l, x);
    return x;
}

Tensor TransformerModel::key_generator_input(std::span<const int> tokens) const {
    Tensor x = embed(tokens);
    for (int l = 1; l < cfg_.split_layer; ++l) x = block_forward(l, x);
    return x;
}

Tensor TransformerModel::key_vector(std::span<const int> tokens) const {
    Tensor acts = key_generator_forward(tokens);
    return ops::slice_rows(acts, acts.dim(0) - 1, 1);
}

Tensor TransformerModel::value_generator_forward(const Tensor& layer_l_hiddens) const {
    if (layer_l_hiddens.ndim() != 2 || layer_l_hiddens.dim(1) != cfg_.d_model)
        throw ShapeError("value_generator_forward: hiddens must be [T, d_model]");
    Tensor x = layer_l_hiddens;
    for (int l = cfg_.split_layer + 1; l <= cfg_.n_layers; ++l) x = block_forward(l, x);
    return unembed(x);
}

Tensor TransformerModel::forward_with_injection(std::span<const int> tokens, int position,
                                                const Tensor& delta) const {
    if (position < 0 || position >= static_cast<int>(tokens.size()))
        throw ShapeError("forward_with_injection: position out of range");
    Tensor x = key_generator_forward(tokens);
    x = ops::replace_row_add(x, position, delta);
    return value_generator_forward(x);
}

std::vector<int> TransformerModel::decode(std::span<const int> prompt, int max_new,
                                          float temperature, uint64_t seed) const {
    if (temperature <= 0.0f) throw ContractError("decode: temperature must be positive");
    check_tokens(prompt);
    std::vector<int> tokens(prompt.begin(), prompt.end());
    std::vector<int> generated;
    std::mt19937_64 rng(seed);
    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int>(tokens.size()) >= cfg_.max_seq_len) break;
        Tensor logits = forward(tokens).logits;
        const int t = logits.dim(0) - 1;
        const int v = cfg_.vocab_size;
        const float* row = logits.data().data() + static_cast<int64_t>(t) * v;
        int next;
        if (temperature <= 0.001f) {
            // Table-style near-zero temperature: exact argmax, lowest index wins ties.
            next = 0;
            for (int j = 1; j < v; ++j)
                if (row[j] > row[next]) next = j;
        } else {
            double mx = row[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            std::vector<double> p(static_cast<size_t>(v));
            double z = 0.0;
            for (int j = 0; j < v; ++j) {
                p[static_cast<size_t>(j)] = std::exp((row[j] - mx) / temperature);
                z += p[static_cast<size_t>(j)];
            }
            const double u =
                static_cast<double>(rng() >> 11) * 0x1.0p-53 * z;
            double acc = 0.0;
            next = v - 1;
            for (int j = 0; j < v; ++j) {
                acc += p[static_cast<size_t>(j)];
                if (u < acc) {
                    next = j;
                    break;
                }
            }
        }
        generated.push_back(next);
        if (next == kEosToken) break;
        tokens.push_back(next);
    }
    return generated;
}

std::vector<Tensor> TransformerModel::parameters() {
    std::vector<Tensor> out{tok_emb_, pos_emb_};
    for (Block& b : blocks_)
        for (Tensor& t : b.parameters()) out.push_back(t);
    out.push_back(lnf_g_);
    out.push_back(lnf_b_);
    out.push_back(w_unembed_);
    return out;
}

std::vector<Tensor> TransformerModel::parameters_outside_block(int index_1based) {
    std::vector<Tensor> out{tok_emb_, pos_emb_};
    for (int l = 1; l <= cfg_.n_layers; ++l) {
        if (l == index_1based) continue;
        for (Tensor& t : block(l).parameters()) out.push_back(t);
    }
    out.push_back(lnf_g_);
    out.push_back(lnf_b_);
    out.push_back(w_unembed_);
    return out;
}

void TransformerModel::set_requires_grad(bool v) {
    for (Tensor& t : parameters()) t.set_requires_grad(v);
}

TransformerModel TransformerModel::clone() const {
    TransformerModel m;
    m.cfg_ = cfg_;
    m.tok_emb_ = tok_emb_.clone();
    m.pos_emb_ = pos_emb_.clone();
    for (const Block& b : blocks_) {
        Block c;
        c.ln1_g = b.ln1_g.clone();
        c.ln1_b = b.ln1_b.clone();
        c.wq = b.wq.clone();
        c.bq = b.bq.clone();
        c.wk = b.wk.clone();
        c.bk = b.bk.clone();
        c.wv = b.wv.clone();
        c.bv = b.bv.clone();
        c.wo = b.wo.clone();
        c.bo = b.bo.clone();
        c.ln2_g = b.ln2_g.clone();
        c.ln2_b = b.ln2_b.clone();
        c.w_ff1 = b.w_ff1.clone();
        c.b_ff1 = b.b_ff1.clone();
        c.w_ff2 = b.w_ff2.clone();
        c.b_ff2 = b.b_ff2.clone();
        m.blocks_.push_back(std::move(c));
    }
    m.lnf_g_ = lnf_g_.clone();
    m.lnf_b_ = lnf_b_.clone();
    m.w_unembed_ = w_unembed_.clone();
    return m;
}

uint32_t TransformerModel::checksum() const {
    uint32_t crc = 0;
    auto& self = const_cast<TransformerModel&>(*this);
    for (const Tensor& t : self.parameters())
        crc = crc32_update(crc, t.data().data(), sizeof(float) * static_cast<size_t>(t.numel()));
    return crc;
}

void TransformerModel::save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot open for writing: " + path.string());
    auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_i32 = [&](int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    uint32_t crc = 0;
    auto crc_u32 = [&](uint32_t v) { crc = crc32_update(crc, &v, 4); };

    out.write("UNKE", 4);
    put_u32(kCheckpointVersion);
    crc = crc32_update(crc, "UNKE", 4);
    crc_u32(kCheckpointVersion);
    const int32_t fields[7] = {cfg_.n_layers, cfg_.split_layer, cfg_.d_model, cfg_.n_heads,
                               cfg_.d_ff, cfg_.vocab_size, cfg_.max_seq_len};
    for (int32_t f : fields) {
        put_i32(f);
        crc = crc32_update(crc, &f, 4);
    }
    const uint64_t seed = cfg_.seed;
    out.write(reinterpret_cast<const char*>(&seed), 8);
    crc = crc32_update(crc, &seed, 8);

    auto& self = const_cast<TransformerModel&>(*this);
    for (const Tensor& t : self.parameters()) {
        const size_t bytes = sizeof(float) * static_cast<size_t>(t.numel());
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(bytes));
        crc = crc32_update(crc, t.data().data(), bytes);
    }
    put_u32(crc);
    if (!out) throw FormatError("checkpoint: write failed: " + path.string());
}

TransformerModel TransformerModel::load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "UNKE", 4) != 0)
        throw FormatError("checkpoint: bad magic bytes");
    uint32_t crc = crc32_update(0, "UNKE", 4);
    auto get_u32 = [&]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    const uint32_t version = get_u32();
    crc = crc32_update(crc, &version, 4);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    ModelConfig cfg;
    int32_t fields[7];
    for (int32_t& f : fields) {
        in.read(reinterpret_cast<char*>(&f), 4);
        crc = crc32_update(crc, &f, 4);
    }
    cfg.n_layers = fields[0];
    cfg.split_layer = fields[1];
    cfg.d_model = fields[2];
    cfg.n_heads = fields[3];
    cfg.d_ff = fields[4];
    cfg.vocab_size = fields[5];
    cfg.max_seq_len = fields[6];
    uint64_t seed = 0;
    in.read(reinterpret_cast<char*>(&seed), 8);
    crc = crc32_update(crc, &seed, 8);
    cfg.seed = seed;
    if (!in) throw FormatError("checkpoint: truncated header");

    TransformerModel m = TransformerModel::init(cfg);
    for (Tensor& t : m.parameters()) {
        const size_t bytes = sizeof(float) * static_cast<size_t>(t.numel());
        in.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(bytes));
        if (!in) throw FormatError("checkpoint: truncated parameter data");
        crc = crc32_update(crc, t.data().data(), bytes);
    }
    const uint32_t stored = get_u32();
    if (!in || stored != crc) throw FormatError("checkpoint: checksum mismatch");
    return m;
}

}  // namespace unke
