#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "unke/pretrain.hpp"
#include "unke/transformer.hpp"

namespace unke {

struct EditRequest {
    int id = 0;
    std::vector<int> question;  // q_1..q_n
    std::vector<int> answer;    // a_1..a_m
    std::vector<int> paraphrase;
    std::vector<std::pair<std::vector<int>, std::vector<int>>> sub_qa;
};

struct Stage1Config {
    float lr = 0.5f;
    int steps = 25;
    float weight_decay = 1e-3f;
    // Residual norm clamp inherited from the rank-one-editing recipe this
    // stage follows: after every step |delta| is projected back to at most
    // clamp_norm_factor * |h_n^L|. Without it the fixed learning rate inflates
    // |delta| far past the toy model's hidden scale and stage 2 cannot reach
    // the resulting k*. 0 disables.
    float clamp_norm_factor = 4.0f;
    // Off by default: the reference protocol runs a fixed number of steps.
    bool early_stop = false;
    float early_stop_nll = 0.01f;  // nats per answer token
};

enum class ModuleScope { full_block, mlp_only, attn_only };

struct Stage2Config {
    float lr = 2e-4f;
    int steps = 50;
    int samples_per_iter = 20;  // C, resampled every iteration
    ModuleScope module_scope = ModuleScope::full_block;
    bool use_preservation_loss = true;
    bool use_causal_loss = true;
    uint64_t seed = 0;
};

// Frozen layer-(L-1) inputs and pre-edit layer-L output keys for one sequence.
struct PreservationEntry {
    std::vector<int> tokens;
    Tensor input;  // [T, d_model]
    Tensor key;    // [T, d_model]
};

struct PreservationSet {
    std::vector<PreservationEntry> entries;
};

struct Stage1Result {
    Tensor delta;   // [d_model]
    Tensor k_star;  // [d_model]
    float nll_initial = 0.0f;
    float nll_final = 0.0f;
    int steps_run = 0;
};

struct LossBreakdown {
    double preservation = 0.0;
    double causal = 0.0;
    double learning = 0.0;
    double total() const { return preservation + causal + learning; }
};

struct RequestOutcome {
    int id = 0;
    Stage1Result stage1;
};

struct EditOutcome {
    std::vector<RequestOutcome> requests;
    LossBreakdown initial_losses;
    LossBreakdown final_losses;
    std::vector<LossBreakdown> loss_curve;  // one entry per stage-2 iteration
    double wall_seconds = 0.0;
};

struct VerifyResult {
    bool exact_match = false;
    std::vector<int> decoded;
    float nll_per_token = 0.0f;
};

// Stage 1 (Eq. 3): optimize the residual so the value generator emits the
// answer when the last-question-position layer-L hidden is shifted by delta.
// Model parameters are never touched.
Stage1Result optimize_delta(const TransformerModel& model, const EditRequest& req,
                            const Stage1Config& cfg);

// Eq. 2 with k replaced by k*: value-generator run over the question's
// layer-L hiddens with the last row swapped for k*; returns the final-position
// hidden that feeds the unembedding.
Tensor compute_target_value(const TransformerModel& model, const EditRequest& req,
                            const Tensor& k_star);

PreservationSet build_preservation_set(const TransformerModel& model,
                                       const Corpus& corpus, int C, uint64_t seed);

// Stage 2 (Eq. 6) over one or more requests (Eq. 5): optimizes only block L,
// restricted by module_scope, against preservation + causal + learning losses.
// Extra sequences in `protected_pool` join the preservation sampling pool.
EditOutcome edit(TransformerModel& model, const std::vector<EditRequest>& requests,
                 const Stage1Config& s1, const Stage2Config& s2, const Corpus& corpus,
                 const std::vector<std::vector<int>>& protected_pool = {});

struct SequentialOutcome {
    std::vector<EditOutcome> edits;
    // retention_curve[t] = fraction of requests 0..t still exact-matching
    // after edit t was applied.
    std::vector<double> retention_curve;
    std::vector<std::vector<bool>> per_step_matches;
};

SequentialOutcome edit_sequential(TransformerModel& model,
                                  const std::vector<EditRequest>& requests,
                                  const Stage1Config& s1, const Stage2Config& s2,
                                  const Corpus& corpus, bool protect_previous = true,
                                  float temperature = 0.001f);

VerifyResult verify_edit(const TransformerModel& model, const EditRequest& req,
                         float temperature, int slack = 4);

}  // namespace unke
