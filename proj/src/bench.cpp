#include "unke/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace unke {

namespace {

const char* method_name(EditMethod m) {
    switch (m) {
        case EditMethod::unke: return "unke";
        case EditMethod::ft_l: return "ft_l";
        case EditMethod::ft_a: return "ft_a";
    }
    return "?";
}

const char* scope_name(ModuleScope s) {
    switch (s) {
        case ModuleScope::full_block: return "full_block";
        case ModuleScope::mlp_only: return "mlp_only";
        case ModuleScope::attn_only: return "attn_only";
    }
    return "?";
}

}  // namespace

std::vector<BenchItem> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_dataset: cannot open " + path.string());
    std::vector<BenchItem> items;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("load_dataset: " + where + ": malformed JSON: " + e.what());
        }
        if (!j.is_object())
            throw FormatError("load_dataset: " + where + ": line is not a JSON object");
        static const std::vector<std::string> kFields = {"id", "question", "answer",
                                                         "para_question", "sub_pairs"};
        for (const auto& [key, value] : j.items())
            if (std::find(kFields.begin(), kFields.end(), key) == kFields.end())
                throw FormatError("load_dataset: " + where + ": unknown field '" + key + "'");
        for (const std::string& field : kFields)
            if (!j.contains(field))
                throw FormatError("load_dataset: " + where + ": missing field '" + field + "'");
        BenchItem item;
        try {
            item.id = j.at("id").get<int>();
            item.question = j.at("question").get<std::string>();
            item.answer = j.at("answer").get<std::string>();
            item.para_question = j.at("para_question").get<std::string>();
            for (const auto& pair : j.at("sub_pairs")) {
                if (!pair.is_array() || pair.size() != 2)
                    throw FormatError("load_dataset: " + where +
                                      ": sub_pairs entries must be [question, answer] pairs");
                item.sub_pairs.emplace_back(pair[0].get<std::string>(),
                                            pair[1].get<std::string>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("load_dataset: " + where + ": bad field type: " + e.what());
        }
        if (item.question == item.para_question)
            throw FormatError("load_dataset: " + where +
                              ": question and para_question must differ");
        items.push_back(std::move(item));
    }
    return items;
}

void save_dataset(const std::vector<BenchItem>& items, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("save_dataset: cannot open " + path.string());
    for (const BenchItem& item : items) {
        nlohmann::ordered_json j;
        j["id"] = item.id;
        j["question"] = item.question;
        j["answer"] = item.answer;
        j["para_question"] = item.para_question;
        auto& subs = j["sub_pairs"] = nlohmann::ordered_json::array();
        for (const auto& [q, a] : item.sub_pairs) subs.push_back({q, a});
        out << j.dump() << "\n";
    }
}

std::vector<BenchItem> make_synthetic_bench(const std::vector<FactRecord>& facts,
                                            uint64_t seed) {
    if (facts.empty()) throw ContractError("make_synthetic_bench: empty fact list");
    std::vector<BenchItem> items;
    for (const FactRecord& f : facts) {
        std::mt19937_64 rng(seed ^ (static_cast<uint64_t>(f.id) * 0x9E3779B97F4A7C15ull));
        BenchItem item;
        item.id = f.id;
        item.question = render_question(f, 0);
        item.para_question = render_question(f, 1);
        item.answer = render_statement(f.relation, f.subject, f.cf_object);
        for (const SubFact& s : f.sub_facts) {
            // Counterfactual sub value, guaranteed different from the true one.
            const int n_obj = pools::object_count(s.attribute);
            int cf = static_cast<int>(rng() % static_cast<uint64_t>(n_obj - 1));
            if (cf >= s.value) ++cf;
            FactRecord q = f;
            q.relation = s.attribute;
            const std::string sub_answer = render_statement(s.attribute, f.subject, cf);
            item.answer += " " + sub_answer;
            item.sub_pairs.emplace_back(render_question(q, 0), sub_answer);
        }
        items.push_back(std::move(item));
    }
    return items;
}

namespace {

EditRequest to_request(const BenchItem& item, const Vocab& vocab) {
    EditRequest r;
    r.id = item.id;
    r.question = vocab.tokenize(item.question);
    r.answer = vocab.tokenize(item.answer);
    r.paraphrase = vocab.tokenize(item.para_question);
    for (const auto& [q, a] : item.sub_pairs)
        r.sub_qa.emplace_back(vocab.tokenize(q), vocab.tokenize(a));
    return r;
}

Corpus corpus_prefix(const Corpus& corpus, int docs) {
    const size_t n = std::min(corpus.documents.size(), static_cast<size_t>(docs));
    Corpus sub;
    sub.seed = corpus.seed;
    sub.ids.assign(corpus.ids.begin(), corpus.ids.begin() + n);
    sub.texts.assign(corpus.texts.begin(), corpus.texts.begin() + n);
    sub.documents.assign(corpus.documents.begin(), corpus.documents.begin() + n);
    return sub;
}

SplitMetrics score_split(const TransformerModel& reference,
                         const std::vector<int>& candidate,
                         const std::vector<int>& gold) {
    SplitMetrics s;
    s.bleu = bleu(candidate, gold);
    s.rouge1_f = rouge_n(candidate, gold, 1);
    s.rouge2_f = rouge_n(candidate, gold, 2);
    s.rougeL_f = rouge_l(candidate, gold);
    s.sem_sim = candidate.empty() ? 0.0 : semantic_similarity(reference, candidate, gold);
    return s;
}

ItemMetrics score_item(const TransformerModel& edited, const TransformerModel& reference,
                       const EditRequest& req, const RunConfig& cfg) {
    ItemMetrics m;
    VerifyResult orig = verify_edit(edited, req, cfg.temperature, cfg.decode_slack);
    m.exact_match_original = orig.exact_match;
    m.original = score_split(reference, orig.decoded, req.answer);

    EditRequest para = req;
    para.question = req.paraphrase;
    VerifyResult p = verify_edit(edited, para, cfg.temperature, cfg.decode_slack);
    m.exact_match_paraphrase = p.exact_match;
    m.paraphrase = score_split(reference, p.decoded, req.answer);

    if (!req.sub_qa.empty()) {
        int hit = 0;
        for (const auto& [sq, sa] : req.sub_qa) {
            EditRequest sub;
            sub.question = sq;
            sub.answer = sa;
            if (verify_edit(edited, sub, cfg.temperature, cfg.decode_slack).exact_match)
                ++hit;
        }
        m.sub_qa_exact = static_cast<double>(hit) / static_cast<double>(req.sub_qa.size());
    }
    return m;
}

}  // namespace

RunResult run_benchmark(const TransformerModel& base, const std::vector<BenchItem>& items,
                        const Corpus& corpus, const Vocab& vocab, const RunConfig& cfg) {
    if (items.empty()) throw ContractError("run_benchmark: empty dataset");
    if (cfg.batch_size < 1) throw ContractError("run_benchmark: batch_size must be >= 1");

    std::vector<EditRequest> requests;
    for (const BenchItem& item : items) requests.push_back(to_request(item, vocab));

    double ppl_base = 0.0;
    Corpus ppl_corpus;
    if (cfg.ppl_docs > 0) {
        ppl_corpus = corpus_prefix(corpus, cfg.ppl_docs);
        TransformerModel probe = base.clone();
        if (cfg.split_layer > 0) probe.set_split_layer(cfg.split_layer);
        ppl_base = perplexity(probe, ppl_corpus);
    }

    RunResult result;
    double ppl_edited_sum = 0.0;
    int batch_count = 0;
    for (size_t start = 0; start < requests.size(); start += cfg.batch_size) {
        const size_t stop = std::min(requests.size(), start + cfg.batch_size);
        std::vector<EditRequest> batch(requests.begin() + start, requests.begin() + stop);

        TransformerModel model = base.clone();
        if (cfg.split_layer > 0) model.set_split_layer(cfg.split_layer);
        try {
            if (cfg.method == EditMethod::unke) {
                Stage2Config s2 = cfg.stage2;
                s2.seed = cfg.seed + static_cast<uint64_t>(batch_count);
                result.outcomes.push_back(edit(model, batch, cfg.stage1, s2, corpus));
            } else {
                FtConfig ft = cfg.ft;
                ft.scope = cfg.method == EditMethod::ft_l ? FtScope::layer : FtScope::all;
                for (const EditRequest& req : batch) ft_edit(model, req, ft);
            }
        } catch (const std::exception& e) {
            throw NumericError("run_benchmark: editing batch starting at item id " +
                               std::to_string(batch.front().id) + " failed: " + e.what());
        }

        for (const EditRequest& req : batch)
            result.items.push_back(score_item(model, base, req, cfg));
        if (cfg.ppl_docs > 0) ppl_edited_sum += perplexity(model, ppl_corpus);
        ++batch_count;
    }

    const double ppl_edited = cfg.ppl_docs > 0 ? ppl_edited_sum / batch_count : 0.0;
    result.report = aggregate_report(result.items, ppl_base, ppl_edited);
    return result;
}

std::vector<std::pair<int, MetricReport>> layer_sweep(
    const TransformerModel& base, const std::vector<BenchItem>& items,
    const Corpus& corpus, const Vocab& vocab, const RunConfig& cfg,
    const std::vector<int>& layers) {
    if (layers.empty()) throw ContractError("layer_sweep: no layers given");
    std::vector<std::pair<int, MetricReport>> rows;
    for (int layer : layers) {
        if (layer < 1 || layer >= base.config().n_layers)
            throw ContractError("layer_sweep: layer " + std::to_string(layer) +
                                " outside [1, n_layers-1]");
        RunConfig c = cfg;
        c.split_layer = layer;
        rows.emplace_back(layer, run_benchmark(base, items, corpus, vocab, c).report);
    }
    return rows;
}

std::vector<std::pair<int, MetricReport>> batch_sweep(
    const TransformerModel& base, const std::vector<BenchItem>& items,
    const Corpus& corpus, const Vocab& vocab, const RunConfig& cfg,
    const std::vector<int>& sizes) {
    if (sizes.empty()) throw ContractError("batch_sweep: no sizes given");
    std::vector<std::pair<int, MetricReport>> rows;
    for (int size : sizes) {
        if (size < 1 || size > static_cast<int>(items.size()))
            throw ContractError("batch_sweep: size " + std::to_string(size) +
                                " outside [1, item count]");
        RunConfig c = cfg;
        c.batch_size = size;
        rows.emplace_back(size, run_benchmark(base, items, corpus, vocab, c).report);
    }
    return rows;
}

std::vector<AblationRow> ablate(const TransformerModel& base,
                                const std::vector<BenchItem>& items, const Corpus& corpus,
                                const Vocab& vocab, const RunConfig& cfg) {
    std::vector<AblationRow> rows;
    for (ModuleScope scope :
         {ModuleScope::full_block, ModuleScope::mlp_only, ModuleScope::attn_only}) {
        for (auto [pres, caus] : {std::pair{true, true}, std::pair{false, true},
                                  std::pair{true, false}, std::pair{false, false}}) {
            RunConfig c = cfg;
            c.stage2.module_scope = scope;
            c.stage2.use_preservation_loss = pres;
            c.stage2.use_causal_loss = caus;
            AblationRow row;
            row.scope = scope;
            row.preservation = pres;
            row.causal = caus;
            row.report = run_benchmark(base, items, corpus, vocab, c).report;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ContractError("spearman_rho: length mismatch");
    const size_t n = xs.size();
    if (n < 2) return 0.0;
    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> rx = ranks(xs), ry = ranks(ys);
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) { mx += rx[i]; my += ry[i]; }
    mx /= n; my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

std::string sweep_table(const std::vector<std::pair<int, MetricReport>>& rows,
                        const std::string& key_name) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %-13s %-13s %-13s %-13s %-10s\n",
                  key_name.c_str(), "bleu o/p", "rouge1 o/p", "rougeL o/p", "semsim o/p",
                  "exact");
    out << buf;
    for (const auto& [key, r] : rows) {
        std::snprintf(buf, sizeof(buf),
                      "%-10d %5.1f /%5.1f  %5.1f /%5.1f  %5.1f /%5.1f  %5.1f /%5.1f  %8.1f%%\n",
                      key, 100 * r.original.bleu, 100 * r.paraphrase.bleu,
                      100 * r.original.rouge1_f, 100 * r.paraphrase.rouge1_f,
                      100 * r.original.rougeL_f, 100 * r.paraphrase.rougeL_f,
                      100 * r.original.sem_sim, 100 * r.paraphrase.sem_sim,
                      100 * r.exact_match_rate);
        out << buf;
    }
    return out.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %-6s %-6s %-13s %-13s %-10s\n", "scope", "pres",
                  "caus", "bleu o/p", "rougeL o/p", "exact");
    out << buf;
    for (const AblationRow& row : rows) {
        const MetricReport& r = row.report;
        std::snprintf(buf, sizeof(buf), "%-12s %-6s %-6s %5.1f /%5.1f  %5.1f /%5.1f  %8.1f%%\n",
                      scope_name(row.scope), row.preservation ? "yes" : "no",
                      row.causal ? "yes" : "no", 100 * r.original.bleu,
                      100 * r.paraphrase.bleu, 100 * r.original.rougeL_f,
                      100 * r.paraphrase.rougeL_f, 100 * r.exact_match_rate);
        out << buf;
    }
    return out.str();
}

std::string manifest_json(const RunConfig& cfg, uint32_t checkpoint_checksum) {
    nlohmann::ordered_json j;
    j["code_version"] = kCodeVersion;
    j["checkpoint_checksum"] = checkpoint_checksum;
    j["method"] = method_name(cfg.method);
    j["batch_size"] = cfg.batch_size;
    j["split_layer"] = cfg.split_layer;
    j["seed"] = cfg.seed;
    j["temperature"] = cfg.temperature;
    j["decode_slack"] = cfg.decode_slack;
    j["ppl_docs"] = cfg.ppl_docs;
    j["dataset_path"] = cfg.dataset_path;
    j["out_dir"] = cfg.out_dir;
    j["stage1"] = {{"lr", cfg.stage1.lr},
                   {"steps", cfg.stage1.steps},
                   {"weight_decay", cfg.stage1.weight_decay},
                   {"early_stop", cfg.stage1.early_stop},
                   {"early_stop_nll", cfg.stage1.early_stop_nll}};
    j["stage2"] = {{"lr", cfg.stage2.lr},
                   {"steps", cfg.stage2.steps},
                   {"samples_per_iter", cfg.stage2.samples_per_iter},
                   {"module_scope", scope_name(cfg.stage2.module_scope)},
                   {"use_preservation_loss", cfg.stage2.use_preservation_loss},
                   {"use_causal_loss", cfg.stage2.use_causal_loss},
                   {"seed", cfg.stage2.seed}};
    j["ft"] = {{"lr", cfg.ft.lr},
               {"steps", cfg.ft.steps},
               {"scope", cfg.ft.scope == FtScope::layer ? "layer" : "all"}};
    return j.dump(2);
}

}  // namespace unke
