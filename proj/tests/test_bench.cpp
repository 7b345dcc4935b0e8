#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "unke/bench.hpp"

using namespace unke;
namespace fs = std::filesystem;

namespace {

struct BenchFixture {
    Vocab vocab = Vocab::standard();
    std::vector<FactRecord> facts = generate_facts(3, 6);
    Corpus corpus = render_corpus(facts, vocab, 3);
    TransformerModel model = TransformerModel::init(tiny_config());
    std::vector<BenchItem> items = make_synthetic_bench(facts, 3);

    static ModelConfig tiny_config() {
        ModelConfig c;
        c.n_layers = 2;
        c.split_layer = 1;
        c.d_model = 16;
        c.n_heads = 2;
        c.d_ff = 32;
        c.vocab_size = Vocab::standard().size();
        c.max_seq_len = 96;
        c.seed = 5;
        return c;
    }

    BenchFixture() {
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 8;
        tc.seed = 5;
        train_lm(model, corpus, tc);
    }
};

BenchFixture& bench_fixture() {
    static BenchFixture f;
    return f;
}

RunConfig quick_config() {
    RunConfig cfg;
    cfg.stage1.steps = 2;
    cfg.stage2.steps = 2;
    cfg.stage2.samples_per_iter = 3;
    cfg.ft.steps = 1;
    cfg.seed = 9;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic bench items are counterfactual and deterministic") {
    BenchFixture& f = bench_fixture();
    CHECK(f.items.size() == f.facts.size());
    for (size_t i = 0; i < f.items.size(); ++i) {
        const BenchItem& item = f.items[i];
        const FactRecord& fact = f.facts[i];
        CHECK(item.question != item.para_question);
        CHECK(item.sub_pairs.size() == fact.sub_facts.size());
        // The answer opens with the counterfactual main statement and never
        // contains the true one.
        const std::string cf = render_statement(fact.relation, fact.subject, fact.cf_object);
        const std::string truth =
            render_statement(fact.relation, fact.subject, fact.true_object);
        CHECK(item.answer.substr(0, cf.size()) == cf);
        CHECK(item.answer.find(truth) == std::string::npos);
        // Sub answers appear verbatim in the answer text and use
        // counterfactual sub values.
        for (size_t s = 0; s < item.sub_pairs.size(); ++s) {
            CHECK(item.answer.find(item.sub_pairs[s].second) != std::string::npos);
            const SubFact& sub = fact.sub_facts[s];
            CHECK(item.sub_pairs[s].second !=
                  render_statement(sub.attribute, fact.subject, sub.value));
        }
        // Everything tokenizes under the run vocabulary.
        f.vocab.tokenize(item.question);
        f.vocab.tokenize(item.answer);
    }
    CHECK(make_synthetic_bench(f.facts, 3) == f.items);
    CHECK_THROWS_AS(make_synthetic_bench({}, 3), ContractError);
}

TEST_CASE("dataset files round-trip byte-for-byte") {
    BenchFixture& f = bench_fixture();
    fs::path a = fs::temp_directory_path() / "unke_bench_a.jsonl";
    fs::path b = fs::temp_directory_path() / "unke_bench_b.jsonl";
    save_dataset(f.items, a);
    save_dataset(load_dataset(a), b);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), {});
    std::string sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
    CHECK(load_dataset(a) == f.items);
    fs::remove(a);
    fs::remove(b);
}

TEST_CASE("dataset loader rejects bad lines with their line numbers") {
    fs::path p = fs::temp_directory_path() / "unke_bench_bad.jsonl";
    auto write = [&](const std::string& text) {
        std::ofstream out(p);
        out << text;
    };

    write("");
    CHECK(load_dataset(p).empty());

    write(R"({"id":1,"question":"q","answer":"a","sub_pairs":[]})" "\n");
    CHECK_THROWS_WITH_AS(load_dataset(p),
                         doctest::Contains("missing field 'para_question'"), FormatError);

    write(R"({"id":1,"question":"q","answer":"a","para_question":"p","sub_pairs":[],"extra":1})"
          "\n");
    CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("unknown field 'extra'"),
                         FormatError);

    write("{\"id\":1}\nnot json\n");
    CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains(":1:"), FormatError);
    write(R"({"id":1,"question":"q","answer":"a","para_question":"p","sub_pairs":[]})"
          "\nnot json\n");
    CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains(":2:"), FormatError);

    write(R"({"id":1,"question":"q","answer":"a","para_question":"p","sub_pairs":[["q"]]})"
          "\n");
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    write(R"({"id":1,"question":"q","answer":"a","para_question":"q","sub_pairs":[]})" "\n");
    CHECK_THROWS_AS(load_dataset(p), FormatError);
    fs::remove(p);
}

TEST_CASE("spearman rank correlation matches hand computations") {
    CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman_rho({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    // No ties: rho = 1 - 6*sum(d^2)/(n(n^2-1)); d^2 totals 6 here.
    CHECK(spearman_rho({1, 2, 3}, {3, 1, 2}) == doctest::Approx(-0.5));
    // Tied xs get the average rank 1.5.
    CHECK(spearman_rho({1, 1, 2}, {1, 2, 3}) == doctest::Approx(1.5 / std::sqrt(3.0)));
    CHECK(spearman_rho({5, 5, 5}, {1, 2, 3}) == 0.0);
    CHECK_THROWS_AS(spearman_rho({1}, {1, 2}), ContractError);
}

TEST_CASE("run_benchmark restores the model between size-1 batches") {
    BenchFixture& f = bench_fixture();
    RunConfig cfg = quick_config();
    cfg.method = EditMethod::ft_l;
    RunResult forward_order = run_benchmark(f.model, f.items, f.corpus, f.vocab, cfg);
    CHECK(forward_order.items.size() == f.items.size());
    CHECK(forward_order.report.item_count == static_cast<int>(f.items.size()));

    std::vector<BenchItem> reversed(f.items.rbegin(), f.items.rend());
    RunResult reverse_order = run_benchmark(f.model, reversed, f.corpus, f.vocab, cfg);
    for (size_t i = 0; i < f.items.size(); ++i) {
        const ItemMetrics& a = forward_order.items[i];
        const ItemMetrics& b = reverse_order.items[f.items.size() - 1 - i];
        CHECK(a.original.bleu == b.original.bleu);
        CHECK(a.paraphrase.bleu == b.paraphrase.bleu);
        CHECK(a.exact_match_original == b.exact_match_original);
    }
    CHECK_THROWS_AS(run_benchmark(f.model, {}, f.corpus, f.vocab, cfg), ContractError);
}

TEST_CASE("unke benchmark runs report per-batch outcomes and perplexity") {
    BenchFixture& f = bench_fixture();
    RunConfig cfg = quick_config();
    cfg.ppl_docs = 3;
    RunResult one = run_benchmark(f.model, f.items, f.corpus, f.vocab, cfg);
    CHECK(one.outcomes.size() == f.items.size());  // batch size 1
    CHECK(one.report.perplexity_base > 1.0);
    CHECK(one.report.perplexity_edited > 1.0);

    cfg.batch_size = 3;
    RunResult batched = run_benchmark(f.model, f.items, f.corpus, f.vocab, cfg);
    CHECK(batched.outcomes.size() == 1);
    CHECK(batched.report.perplexity_base == one.report.perplexity_base);
}

TEST_CASE("single-layer sweep row equals a direct benchmark run") {
    BenchFixture& f = bench_fixture();
    RunConfig cfg = quick_config();
    auto rows = layer_sweep(f.model, f.items, f.corpus, f.vocab, cfg, {1});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].first == 1);
    RunConfig direct = cfg;
    direct.split_layer = 1;
    MetricReport plain = run_benchmark(f.model, f.items, f.corpus, f.vocab, direct).report;
    CHECK(rows[0].second.original.bleu == plain.original.bleu);
    CHECK(rows[0].second.paraphrase.bleu == plain.paraphrase.bleu);
    CHECK(rows[0].second.exact_match_rate == plain.exact_match_rate);
    CHECK_THROWS_AS(layer_sweep(f.model, f.items, f.corpus, f.vocab, cfg, {0}),
                    ContractError);
    CHECK_THROWS_AS(layer_sweep(f.model, f.items, f.corpus, f.vocab, cfg,
                                {f.model.config().n_layers}),
                    ContractError);
}

TEST_CASE("batch sweep validates sizes and reproduces the size-1 run") {
    BenchFixture& f = bench_fixture();
    RunConfig cfg = quick_config();
    auto rows = batch_sweep(f.model, f.items, f.corpus, f.vocab, cfg, {1, 3});
    REQUIRE(rows.size() == 2);
    MetricReport plain = run_benchmark(f.model, f.items, f.corpus, f.vocab, cfg).report;
    CHECK(rows[0].second.original.bleu == plain.original.bleu);
    CHECK(rows[0].second.exact_match_rate == plain.exact_match_rate);
    CHECK_THROWS_AS(batch_sweep(f.model, f.items, f.corpus, f.vocab, cfg,
                                {static_cast<int>(f.items.size()) + 1}),
                    ContractError);
    CHECK_THROWS_AS(batch_sweep(f.model, f.items, f.corpus, f.vocab, cfg, {0}),
                    ContractError);
}

TEST_CASE("ablation grid covers 3 scopes x 4 loss settings") {
    BenchFixture& f = bench_fixture();
    RunConfig cfg = quick_config();
    cfg.stage1.steps = 1;
    cfg.stage2.steps = 1;
    auto rows = ablate(f.model, f.items, f.corpus, f.vocab, cfg);
    REQUIRE(rows.size() == 12);
    int with_both = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].report.item_count == static_cast<int>(f.items.size()));
        if (rows[i].preservation && rows[i].causal) ++with_both;
    }
    CHECK(with_both == 3);
    CHECK(rows[0].scope == ModuleScope::full_block);
    CHECK(rows[4].scope == ModuleScope::mlp_only);
    CHECK(rows[8].scope == ModuleScope::attn_only);
    const std::string table = ablation_table(rows);
    CHECK(table.find("full_block") != std::string::npos);
    CHECK(table.find("mlp_only") != std::string::npos);
}

TEST_CASE("manifest records everything needed to replay a run") {
    RunConfig cfg = quick_config();
    cfg.dataset_path = "bench.jsonl";
    cfg.out_dir = "out";
    nlohmann::json j = nlohmann::json::parse(manifest_json(cfg, 0xDEADBEEFu));
    CHECK(j["code_version"] == kCodeVersion);
    CHECK(j["checkpoint_checksum"] == 0xDEADBEEFu);
    CHECK(j["method"] == "unke");
    CHECK(j["seed"] == 9);
    CHECK(j["stage1"]["lr"] == doctest::Approx(0.5));
    CHECK(j["stage2"]["samples_per_iter"] == 3);
    CHECK(j["ft"]["scope"] == "layer");
    CHECK(j["dataset_path"] == "bench.jsonl");
}
