#include "unke/editor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "unke/adam.hpp"

namespace unke {

namespace {

void check_request(const TransformerModel& model, const EditRequest& req) {
    if (req.question.empty() || req.answer.empty())
        throw ContractError("edit request: empty question or answer");
    if (static_cast<int>(req.question.size() + req.answer.size()) >
        model.config().max_seq_len)
        throw ShapeError("edit request: question plus answer exceeds max_seq_len");
}

std::vector<int> answer_targets(const EditRequest& req) {
    const int n = static_cast<int>(req.question.size());
    const int m = static_cast<int>(req.answer.size());
    std::vector<int> targets(static_cast<size_t>(n + m), -1);
    // Logit row n-1+i predicts answer token a_{i+1}.
    for (int i = 0; i < m; ++i)
        targets[static_cast<size_t>(n - 1 + i)] = req.answer[static_cast<size_t>(i)];
    return targets;
}

// Teacher-forced mean answer NLL in double, without autodiff.
double answer_nll(const TransformerModel& model, const EditRequest& req) {
    std::vector<int> tokens = req.question;
    tokens.insert(tokens.end(), req.answer.begin(), req.answer.end());
    Tensor logits = model.forward(tokens).logits;
    const int v = model.config().vocab_size;
    const int n = static_cast<int>(req.question.size());
    const int m = static_cast<int>(req.answer.size());
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const float* row = logits.data().data() + static_cast<int64_t>(n - 1 + i) * v;
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        total += mx + std::log(z) - row[req.answer[static_cast<size_t>(i)]];
    }
    return total / m;
}

Tensor row_as_matrix(const Tensor& vec) {
    Tensor out = Tensor::zeros({1, vec.dim(0)});
    std::copy(vec.data().begin(), vec.data().end(), out.data().begin());
    return out;
}

}  // namespace

Stage1Result optimize_delta(const TransformerModel& model, const EditRequest& req,
                            const Stage1Config& cfg) {
    if (cfg.lr <= 0.0f || cfg.steps < 0) throw ContractError("stage 1: invalid config");
    check_request(model, req);
    auto& mutable_model = const_cast<TransformerModel&>(model);
    for (Tensor& p : mutable_model.parameters())
        if (p.requires_grad())
            throw ContractError("stage 1: model must be frozen (parameter requires grad)");
    const uint32_t before = model.checksum();

    const int n = static_cast<int>(req.question.size());
    const int d = model.config().d_model;
    std::vector<int> tokens = req.question;
    tokens.insert(tokens.end(), req.answer.begin(), req.answer.end());
    const std::vector<int> targets = answer_targets(req);

    Stage1Result res;
    res.delta = Tensor::zeros({d}, true);
    AdamConfig ac;
    ac.weight_decay = cfg.weight_decay;
    Adam opt({res.delta}, ac);

    float max_norm = 0.0f;
    if (cfg.clamp_norm_factor > 0.0f) {
        Tensor h = model.key_vector(req.question);
        double h2 = 0.0;
        for (int j = 0; j < d; ++j) h2 += static_cast<double>(h.at(j)) * h.at(j);
        max_norm = cfg.clamp_norm_factor * static_cast<float>(std::sqrt(h2));
    }

    float nll = 0.0f;
    for (int step = 0; step <= cfg.steps; ++step) {
        Tape tape;
        Tensor logits = model.forward_with_injection(tokens, n - 1, res.delta);
        Tensor loss = ops::cross_entropy_mean(logits, targets);
        nll = loss.item();
        if (step == 0) res.nll_initial = nll;
        if (step == cfg.steps) break;  // final evaluation only
        if (cfg.early_stop && nll < cfg.early_stop_nll) break;
        tape.backward(loss);
        opt.step(cfg.lr);
        res.delta.zero_grad();
        if (max_norm > 0.0f) {
            double d2 = 0.0;
            for (int j = 0; j < d; ++j)
                d2 += static_cast<double>(res.delta.at(j)) * res.delta.at(j);
            const float norm = static_cast<float>(std::sqrt(d2));
            if (norm > max_norm) {
                const float scale = max_norm / norm;
                for (int j = 0; j < d; ++j) res.delta.at(j) *= scale;
            }
        }
        ++res.steps_run;
    }
    res.nll_final = nll;
    res.delta.set_requires_grad(false);
    res.delta.drop_grad();

    Tensor key = model.key_vector(req.question);  // [1, d]
    res.k_star = Tensor::zeros({d});
    for (int j = 0; j < d; ++j) res.k_star.at(j) = key.at(j) + res.delta.at(j);

    if (model.checksum() != before)
        throw ContractError("stage 1: model parameters changed");
    return res;
}

Tensor compute_target_value(const TransformerModel& model, const EditRequest& req,
                            const Tensor& k_star) {
    check_request(model, req);
    if (k_star.ndim() != 1 || k_star.dim(0) != model.config().d_model)
        throw ShapeError("compute_target_value: k* must be a d_model vector");
    Tensor x = model.key_generator_forward(req.question).clone();
    const int n = x.dim(0), d = x.dim(1);
    std::copy(k_star.data().begin(), k_star.data().end(),
              x.data().begin() + static_cast<int64_t>(n - 1) * d);
    for (int l = model.config().split_layer + 1; l <= model.config().n_layers; ++l)
        x = model.block_forward(l, x);
    Tensor h = model.final_hidden(x);
    Tensor last = Tensor::zeros({d});
    std::copy(h.data().begin() + static_cast<int64_t>(n - 1) * d,
              h.data().begin() + static_cast<int64_t>(n) * d, last.data().begin());
    return last;
}

PreservationSet build_preservation_set(const TransformerModel& model,
                                       const Corpus& corpus, int C, uint64_t seed) {
    if (C < 0) throw ContractError("preservation set: C must be >= 0");
    if (C > static_cast<int>(corpus.documents.size()))
        throw ContractError("preservation set: C exceeds corpus size");
    std::vector<size_t> idx(corpus.documents.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    PreservationSet set;
    for (int i = 0; i < C; ++i) {
        PreservationEntry e;
        e.tokens = corpus.documents[idx[static_cast<size_t>(i)]];
        e.input = model.key_generator_input(e.tokens);
        e.key = model.block_forward(model.config().split_layer, e.input);
        set.entries.push_back(std::move(e));
    }
    return set;
}

EditOutcome edit(TransformerModel& model, const std::vector<EditRequest>& requests,
                 const Stage1Config& s1, const Stage2Config& s2, const Corpus& corpus,
                 const std::vector<std::vector<int>>& protected_pool) {
    if (requests.empty()) throw ContractError("edit: no requests");
    if (s2.lr <= 0.0f || s2.steps < 0 || s2.samples_per_iter < 0)
        throw ContractError("edit: invalid stage 2 config");
    for (const EditRequest& r : requests) check_request(model, r);
    const auto t_start = std::chrono::steady_clock::now();
    const int L = model.config().split_layer;

    model.set_requires_grad(false);
    // Pre-edit snapshot: source of preservation keys and context key targets.
    const TransformerModel snapshot = model.clone();

    EditOutcome outcome;
    struct RequestState {
        Tensor input;           // layer-(L-1) inputs of the question, frozen
        Tensor context_target;  // pre-edit keys for positions < n-1 (may be empty)
        Tensor k_star_row;      // [1, d]
        int n = 0;
    };
    std::vector<RequestState> states;
    for (const EditRequest& req : requests) {
        RequestOutcome ro;
        ro.id = req.id;
        ro.stage1 = optimize_delta(model, req, s1);

        RequestState st;
        st.n = static_cast<int>(req.question.size());
        st.input = snapshot.key_generator_input(req.question);
        Tensor keys = snapshot.key_generator_forward(req.question);
        if (st.n > 1) st.context_target = ops::slice_rows(keys, 0, st.n - 1);
        st.k_star_row = row_as_matrix(ro.stage1.k_star);
        states.push_back(std::move(st));
        outcome.requests.push_back(std::move(ro));
    }

    // Preservation pool: corpus documents plus any explicitly protected
    // sequences; entries are materialized lazily from the snapshot.
    const size_t pool_size = corpus.documents.size() + protected_pool.size();
    if (s2.use_preservation_loss &&
        s2.samples_per_iter > static_cast<int>(pool_size))
        throw ContractError("edit: C exceeds preservation pool size");
    std::unordered_map<size_t, PreservationEntry> cache;
    auto pool_entry = [&](size_t i) -> const PreservationEntry& {
        auto it = cache.find(i);
        if (it != cache.end()) return it->second;
        PreservationEntry e;
        e.tokens = i < corpus.documents.size()
                       ? corpus.documents[i]
                       : protected_pool[i - corpus.documents.size()];
        e.input = snapshot.key_generator_input(e.tokens);
        e.key = snapshot.block_forward(L, e.input);
        return cache.emplace(i, std::move(e)).first->second;
    };

    std::vector<Tensor> scoped;
    switch (s2.module_scope) {
        case ModuleScope::full_block: scoped = model.block(L).parameters(); break;
        case ModuleScope::mlp_only: scoped = model.block(L).mlp_parameters(); break;
        case ModuleScope::attn_only: scoped = model.block(L).attention_parameters(); break;
    }
    for (Tensor& p : scoped) p.set_requires_grad(true);
    Adam opt(scoped, {});

    std::mt19937_64 rng(s2.seed);
    std::vector<size_t> pool_idx(pool_size);
    std::iota(pool_idx.begin(), pool_idx.end(), 0);

    auto evaluate = [&](LossBreakdown& bd) -> Tensor {
        std::vector<Tensor> terms;
        bd = {};
        if (s2.use_preservation_loss && s2.samples_per_iter > 0) {
            std::shuffle(pool_idx.begin(), pool_idx.end(), rng);  // fresh C per iteration
            Tensor pres;
            for (int i = 0; i < s2.samples_per_iter; ++i) {
                const PreservationEntry& e = pool_entry(pool_idx[static_cast<size_t>(i)]);
                Tensor t = ops::sum_squared_diff(model.block_forward(L, e.input), e.key);
                pres = pres.defined() ? ops::add(pres, t) : t;
            }
            bd.preservation = pres.item();
            terms.push_back(pres);
        }
        Tensor causal, learning;
        for (const RequestState& st : states) {
            Tensor out = model.block_forward(L, st.input);
            if (s2.use_causal_loss && st.n > 1) {
                Tensor t = ops::sum_squared_diff(ops::slice_rows(out, 0, st.n - 1),
                                                 st.context_target);
                causal = causal.defined() ? ops::add(causal, t) : t;
            }
            Tensor t = ops::sum_squared_diff(ops::slice_rows(out, st.n - 1, 1),
                                             st.k_star_row);
            learning = learning.defined() ? ops::add(learning, t) : t;
        }
        if (causal.defined()) {
            bd.causal = causal.item();
            terms.push_back(causal);
        }
        bd.learning = learning.item();
        terms.push_back(learning);
        Tensor total = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
        return total;
    };

    for (int iter = 0; iter < s2.steps; ++iter) {
        try {
            LossBreakdown bd;
            Tape tape;
            Tensor total = evaluate(bd);
            outcome.loss_curve.push_back(bd);
            tape.backward(total);
            opt.step(s2.lr);
            for (Tensor& p : scoped) p.zero_grad();
        } catch (const NumericError& e) {
            throw NumericError("stage 2 iteration " + std::to_string(iter) + ": " +
                               e.what());
        }
    }
    {
        LossBreakdown bd;
        evaluate(bd);  // no tape active: reporting only
        outcome.final_losses = bd;
    }
    outcome.initial_losses = outcome.loss_curve.empty() ? outcome.final_losses
                                                        : outcome.loss_curve.front();

    for (Tensor& p : scoped) {
        p.set_requires_grad(false);
        p.drop_grad();
    }
    outcome.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return outcome;
}

SequentialOutcome edit_sequential(TransformerModel& model,
                                  const std::vector<EditRequest>& requests,
                                  const Stage1Config& s1, const Stage2Config& s2,
                                  const Corpus& corpus, bool protect_previous,
                                  float temperature) {
    if (requests.empty()) throw ContractError("edit_sequential: no requests");
    SequentialOutcome out;
    std::vector<std::vector<int>> protected_pool;
    for (size_t t = 0; t < requests.size(); ++t) {
        Stage2Config cfg = s2;
        cfg.seed = s2.seed + t;  // distinct sampling stream per step
        out.edits.push_back(edit(model, {requests[t]}, s1, cfg, corpus,
                                 protect_previous ? protected_pool
                                                  : std::vector<std::vector<int>>{}));
        if (protect_previous) protected_pool.push_back(requests[t].question);

        std::vector<bool> matches;
        int hits = 0;
        for (size_t j = 0; j <= t; ++j) {
            const bool ok = verify_edit(model, requests[j], temperature).exact_match;
            matches.push_back(ok);
            if (ok) ++hits;
        }
        out.per_step_matches.push_back(std::move(matches));
        out.retention_curve.push_back(static_cast<double>(hits) /
                                      static_cast<double>(t + 1));
    }
    return out;
}

VerifyResult verify_edit(const TransformerModel& model, const EditRequest& req,
                         float temperature, int slack) {
    check_request(model, req);
    VerifyResult r;
    const int m = static_cast<int>(req.answer.size());
    r.decoded = model.decode(req.question, m + slack, temperature);
    r.exact_match = static_cast<int>(r.decoded.size()) >= m &&
                    std::equal(req.answer.begin(), req.answer.end(), r.decoded.begin());
    r.nll_per_token = static_cast<float>(answer_nll(model, req));
    return r;
}

}  // namespace unke
