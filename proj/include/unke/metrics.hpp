#pragma once

#include <span>
#include <string>
#include <vector>

#include "unke/transformer.hpp"

namespace unke {

// Sentence-level BLEU-4 with brevity penalty; add-one smoothed n-gram
// precisions for n >= 2 (declared variant). Empty candidate scores 0.
double bleu(std::span<const int> candidate, std::span<const int> reference);

// Clipped n-gram-overlap F1 (n in {1,2}) and LCS-based F1.
double rouge_n(std::span<const int> candidate, std::span<const int> reference, int n);
double rouge_l(std::span<const int> candidate, std::span<const int> reference);

// Cosine similarity of mean-pooled final hiddens under a frozen reference
// model, mapped from [-1,1] to [0,1]. Substitute for an external embedding
// encoder; documented in every report header.
double semantic_similarity(const TransformerModel& reference_model,
                           std::span<const int> text_a, std::span<const int> text_b);

struct SplitMetrics {
    double bleu = 0.0;
    double rouge1_f = 0.0;
    double rouge2_f = 0.0;
    double rougeL_f = 0.0;
    double sem_sim = 0.0;
};

struct ItemMetrics {
    SplitMetrics original;
    SplitMetrics paraphrase;
    bool exact_match_original = false;
    bool exact_match_paraphrase = false;
    double sub_qa_exact = 0.0;  // fraction of sub-questions answered exactly
};

struct MetricReport {
    SplitMetrics original;
    SplitMetrics paraphrase;
    int item_count = 0;
    double exact_match_rate = 0.0;
    double sub_qa_exact = 0.0;
    double perplexity_base = 0.0;
    double perplexity_edited = 0.0;
    double perplexity_delta_pct = 0.0;
};

MetricReport aggregate_report(const std::vector<ItemMetrics>& items,
                              double perplexity_base, double perplexity_edited);

// Aligned-column text table; each metric cell is "orig / para".
std::string report_table(const MetricReport& report, const std::string& title);
std::string report_json(const MetricReport& report);

}  // namespace unke
