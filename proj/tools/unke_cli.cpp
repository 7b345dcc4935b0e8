#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "unke/bench.hpp"

using namespace unke;
namespace fs = std::filesystem;

namespace {

struct GlobalArgs {
    uint64_t seed = 0;
    std::string checkpoint;
    std::string out = ".";
    float temperature = 0.001f;
    int layer = -1;
};

void add_global_flags(CLI::App* cmd, GlobalArgs& g) {
    cmd->add_option("--seed", g.seed, "Run seed");
    cmd->add_option("--checkpoint", g.checkpoint, "Model checkpoint path");
    cmd->add_option("--out", g.out, "Output directory");
    cmd->add_option("--temperature", g.temperature, "Decode temperature")
        ->default_val(0.001f);
    cmd->add_option("--layer", g.layer, "Split layer L override");
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << text;
}

TransformerModel load_model(const GlobalArgs& g) {
    if (g.checkpoint.empty()) throw ContractError("--checkpoint is required");
    TransformerModel m = TransformerModel::load_checkpoint(g.checkpoint);
    if (g.layer > 0) m.set_split_layer(g.layer);
    return m;
}

RunConfig base_run_config(const GlobalArgs& g, const std::string& dataset) {
    RunConfig cfg;
    cfg.seed = g.seed;
    cfg.split_layer = g.layer;
    cfg.temperature = g.temperature;
    cfg.dataset_path = dataset;
    cfg.out_dir = g.out;
    return cfg;
}

void emit_run(const fs::path& dir, const std::string& stem, const RunConfig& cfg,
              uint32_t checksum, const MetricReport& report, const std::string& title) {
    fs::create_directories(dir);
    write_file(dir / (stem + "_manifest.json"), manifest_json(cfg, checksum));
    write_file(dir / (stem + "_report.json"), report_json(report));
    const std::string table = report_table(report, title);
    write_file(dir / (stem + "_report.txt"), table);
    std::cout << table;
}

EditMethod parse_method(const std::string& name) {
    if (name == "unke") return EditMethod::unke;
    if (name == "ft_l") return EditMethod::ft_l;
    if (name == "ft_a") return EditMethod::ft_a;
    throw ContractError("unknown method '" + name + "' (expected unke|ft_l|ft_a)");
}

int run(int argc, char** argv) {
    CLI::App app{"UnKE lab: miniature-transformer unstructured knowledge editing"};
    app.require_subcommand(1);
    GlobalArgs g;

    // pretrain
    auto* cmd_pre = app.add_subcommand("pretrain", "Generate facts + corpus, train, save");
    add_global_flags(cmd_pre, g);
    int facts_n = 250, epochs = 30, batch = 16;
    float lr = 1e-3f, wd = 0.0f;
    cmd_pre->add_option("--facts", facts_n, "Number of facts")->default_val(250);
    cmd_pre->add_option("--epochs", epochs)->default_val(30);
    cmd_pre->add_option("--batch", batch)->default_val(16);
    cmd_pre->add_option("--lr", lr)->default_val(1e-3f);
    cmd_pre->add_option("--wd", wd, "Weight decay")->default_val(0.0f);

    // makebench
    auto* cmd_make = app.add_subcommand("makebench", "Build a benchmark from saved facts");
    add_global_flags(cmd_make, g);
    std::string facts_file;
    cmd_make->add_option("--facts-file", facts_file, "facts.jsonl path");

    // edit
    auto* cmd_edit = app.add_subcommand("edit", "Run single/batch edits and score them");
    add_global_flags(cmd_edit, g);
    std::string dataset, corpus_file, method = "unke";
    int batch_size = 1, limit = 0, ppl_docs = 0;
    cmd_edit->add_option("--dataset", dataset, "bench.jsonl path")->required();
    cmd_edit->add_option("--corpus", corpus_file, "corpus.jsonl path")->required();
    cmd_edit->add_option("--method", method, "unke|ft_l|ft_a")->default_val("unke");
    cmd_edit->add_option("--batch-size", batch_size)->default_val(1);
    cmd_edit->add_option("--limit", limit, "Use only the first N items");
    cmd_edit->add_option("--ppl-docs", ppl_docs, "Corpus docs for locality perplexity");

    // seqedit
    auto* cmd_seq = app.add_subcommand("seqedit", "Sequential edits without restoration");
    add_global_flags(cmd_seq, g);
    cmd_seq->add_option("--dataset", dataset, "bench.jsonl path")->required();
    cmd_seq->add_option("--corpus", corpus_file, "corpus.jsonl path")->required();
    cmd_seq->add_option("--limit", limit, "Use only the first N items");

    // eval
    auto* cmd_eval = app.add_subcommand("eval", "Score the unedited checkpoint");
    add_global_flags(cmd_eval, g);
    cmd_eval->add_option("--dataset", dataset, "bench.jsonl path")->required();
    cmd_eval->add_option("--corpus", corpus_file, "corpus.jsonl path")->required();
    cmd_eval->add_option("--limit", limit, "Use only the first N items");

    // sweep-layer
    auto* cmd_slayer = app.add_subcommand("sweep-layer", "Benchmark across split layers");
    add_global_flags(cmd_slayer, g);
    std::vector<int> layers;
    cmd_slayer->add_option("--dataset", dataset)->required();
    cmd_slayer->add_option("--corpus", corpus_file)->required();
    cmd_slayer->add_option("--layers", layers, "Layers to sweep (default: all valid)");
    cmd_slayer->add_option("--limit", limit, "Use only the first N items");

    // sweep-batch
    auto* cmd_sbatch = app.add_subcommand("sweep-batch", "Benchmark across batch sizes");
    add_global_flags(cmd_sbatch, g);
    std::vector<int> sizes{1, 2, 4, 8, 16};
    cmd_sbatch->add_option("--dataset", dataset)->required();
    cmd_sbatch->add_option("--corpus", corpus_file)->required();
    cmd_sbatch->add_option("--sizes", sizes, "Batch sizes to sweep");
    cmd_sbatch->add_option("--limit", limit, "Use only the first N items");

    // ablate
    auto* cmd_abl = app.add_subcommand("ablate", "Module-scope x loss-toggle grid");
    add_global_flags(cmd_abl, g);
    cmd_abl->add_option("--dataset", dataset)->required();
    cmd_abl->add_option("--corpus", corpus_file)->required();
    cmd_abl->add_option("--limit", limit, "Use only the first N items");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const Vocab vocab = Vocab::standard();
    const fs::path out_dir(g.out);

    auto load_items = [&]() {
        std::vector<BenchItem> items = load_dataset(dataset);
        if (limit > 0 && static_cast<int>(items.size()) > limit) items.resize(limit);
        if (items.empty()) throw ContractError("dataset " + dataset + " is empty");
        return items;
    };

    if (*cmd_pre) {
        fs::create_directories(out_dir);
        auto facts = generate_facts(g.seed, facts_n);
        Corpus corpus = render_corpus(facts, vocab, g.seed);
        ModelConfig mc;
        mc.vocab_size = vocab.size();
        mc.seed = g.seed;
        if (g.layer > 0) mc.split_layer = g.layer;
        TransformerModel model = TransformerModel::init(mc);
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch;
        tc.lr = lr;
        tc.weight_decay = wd;
        tc.seed = g.seed;
        auto losses = train_lm(model, corpus, tc);
        save_facts_jsonl(facts, out_dir / "facts.jsonl");
        save_corpus_jsonl(corpus, out_dir / "corpus.jsonl");
        const fs::path ckpt =
            g.checkpoint.empty() ? out_dir / "model.ckpt" : fs::path(g.checkpoint);
        model.save_checkpoint(ckpt);
        RunConfig cfg = base_run_config(g, "");
        write_file(out_dir / "pretrain_manifest.json", manifest_json(cfg, model.checksum()));
        std::printf("trained %d facts, %zu docs, %d epochs; loss %.4f -> %.4f\n", facts_n,
                    corpus.documents.size(), epochs, losses.empty() ? 0.0 : losses.front(),
                    losses.empty() ? 0.0 : losses.back());
        std::printf("checkpoint %s checksum %08x\n", ckpt.string().c_str(),
                    model.checksum());
        return 0;
    }

    if (*cmd_make) {
        fs::create_directories(out_dir);
        const fs::path src =
            facts_file.empty() ? out_dir / "facts.jsonl" : fs::path(facts_file);
        auto facts = load_facts_jsonl(src);
        auto items = make_synthetic_bench(facts, g.seed);
        save_dataset(items, out_dir / "bench.jsonl");
        std::printf("wrote %zu bench items to %s\n", items.size(),
                    (out_dir / "bench.jsonl").string().c_str());
        return 0;
    }

    TransformerModel model = load_model(g);
    Corpus corpus = load_corpus_jsonl(corpus_file, vocab);
    std::vector<BenchItem> items = load_items();
    RunConfig cfg = base_run_config(g, dataset);

    if (*cmd_edit) {
        cfg.method = parse_method(method);
        cfg.batch_size = batch_size;
        cfg.ppl_docs = ppl_docs;
        RunResult res = run_benchmark(model, items, corpus, vocab, cfg);
        emit_run(out_dir, "edit", cfg, model.checksum(), res.report,
                 std::string("edit method=") + method);
        return 0;
    }

    if (*cmd_seq) {
        std::vector<EditRequest> requests;
        for (const BenchItem& item : items) {
            EditRequest r;
            r.id = item.id;
            r.question = vocab.tokenize(item.question);
            r.answer = vocab.tokenize(item.answer);
            r.paraphrase = vocab.tokenize(item.para_question);
            requests.push_back(std::move(r));
        }
        Stage2Config s2 = cfg.stage2;
        s2.seed = g.seed;
        SequentialOutcome seq = edit_sequential(model, requests, cfg.stage1, s2, corpus,
                                                true, g.temperature);
        fs::create_directories(out_dir);
        nlohmann::ordered_json j;
        j["retention_curve"] = seq.retention_curve;
        j["final_retention"] = seq.retention_curve.empty() ? 0.0 : seq.retention_curve.back();
        write_file(out_dir / "seqedit_report.json", j.dump(2));
        write_file(out_dir / "seqedit_manifest.json", manifest_json(cfg, model.checksum()));
        std::printf("sequential edits: %zu, final retention %.1f%%\n", requests.size(),
                    100.0 * (seq.retention_curve.empty() ? 0.0 : seq.retention_curve.back()));
        return 0;
    }

    if (*cmd_eval) {
        // Score the checkpoint as-is: how well the unedited model already
        // reproduces the dataset answers.
        std::vector<ItemMetrics> scored;
        for (const BenchItem& item : items) {
            EditRequest r;
            r.id = item.id;
            r.question = vocab.tokenize(item.question);
            r.answer = vocab.tokenize(item.answer);
            r.paraphrase = vocab.tokenize(item.para_question);
            for (const auto& [sq, sa] : item.sub_pairs)
                r.sub_qa.emplace_back(vocab.tokenize(sq), vocab.tokenize(sa));
            ItemMetrics m;
            VerifyResult orig = verify_edit(model, r, g.temperature);
            m.exact_match_original = orig.exact_match;
            m.original.bleu = bleu(orig.decoded, r.answer);
            m.original.rouge1_f = rouge_n(orig.decoded, r.answer, 1);
            m.original.rouge2_f = rouge_n(orig.decoded, r.answer, 2);
            m.original.rougeL_f = rouge_l(orig.decoded, r.answer);
            m.original.sem_sim = orig.decoded.empty()
                                     ? 0.0
                                     : semantic_similarity(model, orig.decoded, r.answer);
            EditRequest para = r;
            para.question = r.paraphrase;
            VerifyResult p = verify_edit(model, para, g.temperature);
            m.exact_match_paraphrase = p.exact_match;
            m.paraphrase.bleu = bleu(p.decoded, r.answer);
            m.paraphrase.rouge1_f = rouge_n(p.decoded, r.answer, 1);
            m.paraphrase.rouge2_f = rouge_n(p.decoded, r.answer, 2);
            m.paraphrase.rougeL_f = rouge_l(p.decoded, r.answer);
            m.paraphrase.sem_sim =
                p.decoded.empty() ? 0.0 : semantic_similarity(model, p.decoded, r.answer);
            scored.push_back(m);
        }
        const double ppl = perplexity(model, corpus);
        MetricReport report = aggregate_report(scored, ppl, ppl);
        emit_run(out_dir, "eval", cfg, model.checksum(), report, "eval (unedited model)");
        return 0;
    }

    if (*cmd_slayer) {
        if (layers.empty())
            for (int l = 1; l < model.config().n_layers; ++l) layers.push_back(l);
        auto rows = layer_sweep(model, items, corpus, vocab, cfg, layers);
        const std::string table = sweep_table(rows, "layer");
        fs::create_directories(out_dir);
        write_file(out_dir / "sweep_layer.txt", table);
        write_file(out_dir / "sweep_layer_manifest.json", manifest_json(cfg, model.checksum()));
        std::cout << table;
        return 0;
    }

    if (*cmd_sbatch) {
        auto rows = batch_sweep(model, items, corpus, vocab, cfg, sizes);
        const std::string table = sweep_table(rows, "batch");
        fs::create_directories(out_dir);
        write_file(out_dir / "sweep_batch.txt", table);
        write_file(out_dir / "sweep_batch_manifest.json", manifest_json(cfg, model.checksum()));
        std::cout << table;
        return 0;
    }

    if (*cmd_abl) {
        auto rows = ablate(model, items, corpus, vocab, cfg);
        const std::string table = ablation_table(rows);
        fs::create_directories(out_dir);
        write_file(out_dir / "ablate.txt", table);
        write_file(out_dir / "ablate_manifest.json", manifest_json(cfg, model.checksum()));
        std::cout << table;
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
