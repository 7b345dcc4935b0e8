#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unke/baselines.hpp"
#include "unke/editor.hpp"
#include "unke/metrics.hpp"
#include "unke/pretrain.hpp"

namespace unke {

inline constexpr const char* kCodeVersion = "1.0.0";

struct BenchItem {
    int id = 0;
    std::string question;
    std::string answer;
    std::string para_question;
    std::vector<std::pair<std::string, std::string>> sub_pairs;

    bool operator==(const BenchItem&) const = default;
};

// JSON-lines, one item per line, exact field names
// {id, question, answer, para_question, sub_pairs}; unknown fields rejected.
// Every error carries the offending line number.
std::vector<BenchItem> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::vector<BenchItem>& items, const std::filesystem::path& path);

// One item per fact: question from template 0, paraphrase from template 1,
// answer = counterfactual main statement followed by counterfactual sub-fact
// statements (values reseeded away from the true ones), sub_pairs matching
// those statements. The true object rendering never appears in the answer.
std::vector<BenchItem> make_synthetic_bench(const std::vector<FactRecord>& facts,
                                            uint64_t seed);

enum class EditMethod { unke, ft_l, ft_a };

struct RunConfig {
    EditMethod method = EditMethod::unke;
    int batch_size = 1;
    int split_layer = -1;  // -1 keeps the checkpoint's split layer
    uint64_t seed = 0;
    Stage1Config stage1;
    Stage2Config stage2;
    FtConfig ft;
    float temperature = 0.001f;
    int decode_slack = 4;  // extra decode budget past the reference length
    int ppl_docs = 0;      // corpus prefix used for locality perplexity; 0 = skip
    std::string dataset_path;
    std::string out_dir;
};

struct RunResult {
    MetricReport report;
    std::vector<ItemMetrics> items;
    std::vector<EditOutcome> outcomes;  // one per batch (UnKE method only)
};

// Table-1 protocol: items are split into batches of cfg.batch_size; the model
// is restored from `base` before every batch, edited, then scored on the
// original question, the paraphrase, and the sub-questions. `base` also serves
// as the frozen embedding reference for semantic similarity.
RunResult run_benchmark(const TransformerModel& base, const std::vector<BenchItem>& items,
                        const Corpus& corpus, const Vocab& vocab, const RunConfig& cfg);

std::vector<std::pair<int, MetricReport>> layer_sweep(
    const TransformerModel& base, const std::vector<BenchItem>& items,
    const Corpus& corpus, const Vocab& vocab, const RunConfig& cfg,
    const std::vector<int>& layers);

std::vector<std::pair<int, MetricReport>> batch_sweep(
    const TransformerModel& base, const std::vector<BenchItem>& items,
    const Corpus& corpus, const Vocab& vocab, const RunConfig& cfg,
    const std::vector<int>& sizes);

struct AblationRow {
    ModuleScope scope = ModuleScope::full_block;
    bool preservation = true;
    bool causal = true;
    MetricReport report;
};

// 3 module scopes x {both losses, no preservation, no causal, neither} = 12 rows.
std::vector<AblationRow> ablate(const TransformerModel& base,
                                const std::vector<BenchItem>& items, const Corpus& corpus,
                                const Vocab& vocab, const RunConfig& cfg);

// Spearman rank correlation with average ranks on ties; NaN-free (0 on
// degenerate constant input).
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string sweep_table(const std::vector<std::pair<int, MetricReport>>& rows,
                        const std::string& key_name);

// Everything needed to replay a run bitwise.
std::string manifest_json(const RunConfig& cfg, uint32_t checkpoint_checksum);

}  // namespace unke
