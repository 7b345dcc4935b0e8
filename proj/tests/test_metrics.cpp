#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "doctest.h"
#include "metric_oracle.hpp"
#include "unke/metrics.hpp"
#include "unke/pretrain.hpp"

using namespace unke;
using oracle::ref_bleu;
using oracle::ref_rouge_l;
using oracle::ref_rouge_n;

TEST_CASE("bleu identity, disjoint and hand-computed cases") {
    std::vector<int> ref{1, 2, 3, 4};
    std::vector<int> same{1, 2, 3, 4};
    CHECK(bleu(same, ref) == doctest::Approx(1.0));
    std::vector<int> disjoint{7, 8, 9};
    CHECK(bleu(disjoint, ref) == 0.0);
    CHECK(bleu({}, ref) == 0.0);
    CHECK_THROWS_AS(bleu(same, {}), ContractError);

    // "the cat sat" vs "the cat sat down": all smoothed precisions are 1,
    // so BLEU reduces to the brevity penalty exp(1 - 4/3).
    std::vector<int> cand{1, 2, 3};
    CHECK(bleu(cand, ref) == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(1e-9));

    // Partial overlap, worked by hand: p = (2/3, 2/3, 1/2, 1), BP = exp(-1/3).
    std::vector<int> cand2{1, 2, 5};
    const double hand = std::exp(-1.0 / 3.0) * std::pow(2.0 / 3.0 * 2.0 / 3.0 * 0.5, 0.25);
    CHECK(bleu(cand2, ref) == doctest::Approx(hand).epsilon(1e-9));
    CHECK(bleu(cand2, ref) == doctest::Approx(0.491976).epsilon(1e-4));
}

TEST_CASE("rouge hand-computed fixed pair and order sensitivity") {
    std::vector<int> cand{1, 2, 3, 4, 5};
    std::vector<int> ref{2, 3, 9, 5, 1};
    CHECK(rouge_n(cand, ref, 1) == doctest::Approx(0.8));
    CHECK(rouge_n(cand, ref, 2) == doctest::Approx(0.25));
    CHECK(rouge_l(cand, ref) == doctest::Approx(0.6));  // LCS {2,3,5}

    std::vector<int> fwd{1, 2, 3}, rev{3, 2, 1};
    CHECK(rouge_n(rev, fwd, 1) == doctest::Approx(1.0));
    CHECK(rouge_l(rev, fwd) < 1.0);
    CHECK(rouge_l(fwd, fwd) == doctest::Approx(1.0));
    CHECK(rouge_n(fwd, fwd, 2) == doctest::Approx(1.0));
}

TEST_CASE("bleu and rouge match independent references on random pairs") {
    std::mt19937_64 rng(20260826);
    std::uniform_int_distribution<int> tok(0, 7), len(1, 12);
    for (int c = 0; c < 20; ++c) {
        std::vector<int> a(static_cast<size_t>(len(rng))), b(static_cast<size_t>(len(rng)));
        for (int& x : a) x = tok(rng);
        for (int& x : b) x = tok(rng);
        CHECK(bleu(a, b) == doctest::Approx(ref_bleu(a, b)).epsilon(1e-6));
        CHECK(rouge_n(a, b, 1) == doctest::Approx(ref_rouge_n(a, b, 1)).epsilon(1e-6));
        CHECK(rouge_n(a, b, 2) == doctest::Approx(ref_rouge_n(a, b, 2)).epsilon(1e-6));
        CHECK(rouge_l(a, b) == doctest::Approx(ref_rouge_l(a, b)).epsilon(1e-6));
        // Bounds and the LCS <= unigram-overlap ordering.
        for (double v : {bleu(a, b), rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(rouge_l(a, b) <= rouge_n(a, b, 1) + 1e-12);
    }
}

TEST_CASE("semantic similarity identity, symmetry and template affinity") {
    Vocab v = Vocab::standard();
    ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.split_layer = 2;
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.vocab_size = v.size();
    cfg.max_seq_len = 96;
    cfg.seed = 5;
    auto m = TransformerModel::init(cfg);
    auto facts = generate_facts(33, 51);

    // Template affinity is a learned property: briefly pre-train the frozen
    // reference so its embeddings reflect token content rather than position.
    Corpus corpus = render_corpus(facts, v, 33);
    TrainConfig tc;
    tc.epochs = 40;
    tc.batch_size = 8;
    tc.lr = 2e-3f;
    tc.seed = 33;
    train_lm(m, corpus, tc);

    auto t = [&](const std::string& s) { return v.tokenize(s); };
    auto q0 = t(render_question(facts[0], 0));
    CHECK(semantic_similarity(m, q0, q0) == doctest::Approx(1.0));
    auto p0 = t(render_question(facts[0], 1));
    CHECK(semantic_similarity(m, q0, p0) ==
          doctest::Approx(semantic_similarity(m, p0, q0)));
    CHECK_THROWS_AS(semantic_similarity(m, {}, q0), ContractError);

    auto rendering = [&](const FactRecord& f, int tmpl) {
        return t(render_question(f, tmpl) + " " +
                 render_statement(f.relation, f.subject, f.true_object));
    };
    int wins = 0;
    for (int i = 0; i < 50; ++i) {
        auto a0 = rendering(facts[static_cast<size_t>(i)], 0);
        auto a1 = rendering(facts[static_cast<size_t>(i)], 1);
        auto other = rendering(facts[static_cast<size_t>(i) + 1], 0);
        if (semantic_similarity(m, a0, a1) > semantic_similarity(m, a0, other)) ++wins;
    }
    CHECK(wins >= 45);
}

TEST_CASE("aggregate report averages splits and computes perplexity delta") {
    ItemMetrics perfect;
    perfect.original = {1.0, 1.0, 1.0, 1.0, 1.0};
    perfect.paraphrase = {1.0, 1.0, 1.0, 1.0, 1.0};
    perfect.exact_match_original = true;
    perfect.sub_qa_exact = 1.0;

    auto single = aggregate_report({perfect}, 10.0, 10.5);
    CHECK(single.item_count == 1);
    CHECK(single.original.bleu == doctest::Approx(1.0));
    CHECK(single.paraphrase.rougeL_f == doctest::Approx(1.0));
    CHECK(single.exact_match_rate == doctest::Approx(1.0));
    CHECK(single.perplexity_delta_pct == doctest::Approx(5.0));

    ItemMetrics half;
    half.original.bleu = 0.5;
    auto two = aggregate_report({perfect, half}, 10.0, 10.0);
    CHECK(two.original.bleu == doctest::Approx(0.75));
    CHECK(two.exact_match_rate == doctest::Approx(0.5));
    CHECK(two.perplexity_delta_pct == doctest::Approx(0.0));
    CHECK_THROWS_AS(aggregate_report({}, 1.0, 1.0), ContractError);

    auto table = report_table(two, "test run");
    CHECK(table.find("orig / para") != std::string::npos);
    CHECK(report_json(two).find("perplexity_delta_pct") != std::string::npos);
}
