#include "unke/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>

#include "json.hpp"

namespace unke {

namespace {

using NgramCounts = std::map<std::vector<int>, int>;

NgramCounts count_ngrams(std::span<const int> tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i)
        ++counts[std::vector<int>(tokens.begin() + static_cast<ptrdiff_t>(i),
                                  tokens.begin() + static_cast<ptrdiff_t>(i) + n)];
    return counts;
}

int clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
    int total = 0;
    for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) total += std::min(count, it->second);
    }
    return total;
}

int lcs_length(std::span<const int> a, std::span<const int> b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double f1(double overlap, double cand_total, double ref_total) {
    if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
    const double p = overlap / cand_total;
    const double r = overlap / ref_total;
    return 2.0 * p * r / (p + r);
}

}  // namespace

double bleu(std::span<const int> candidate, std::span<const int> reference) {
    if (reference.empty()) throw ContractError("bleu: empty reference");
    if (candidate.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        NgramCounts cand = count_ngrams(candidate, n);
        NgramCounts ref = count_ngrams(reference, n);
        double total = 0.0;
        for (const auto& [gram, count] : cand) total += count;
        double matched = clipped_overlap(cand, ref);
        double p;
        if (n == 1) {
            if (matched <= 0.0) return 0.0;  // no shared unigrams
            p = matched / total;
        } else {
            p = (matched + 1.0) / (total + 1.0);  // add-one smoothing
        }
        log_sum += 0.25 * std::log(p);
    }
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum);
}

double rouge_n(std::span<const int> candidate, std::span<const int> reference, int n) {
    if (reference.empty()) throw ContractError("rouge_n: empty reference");
    if (n != 1 && n != 2) throw ContractError("rouge_n: n must be 1 or 2");
    NgramCounts cand = count_ngrams(candidate, n);
    NgramCounts ref = count_ngrams(reference, n);
    double cand_total = 0.0, ref_total = 0.0;
    for (const auto& [g, c] : cand) cand_total += c;
    for (const auto& [g, c] : ref) ref_total += c;
    return f1(clipped_overlap(cand, ref), cand_total, ref_total);
}

double rouge_l(std::span<const int> candidate, std::span<const int> reference) {
    if (reference.empty()) throw ContractError("rouge_l: empty reference");
    if (candidate.empty()) return 0.0;
    return f1(lcs_length(candidate, reference), static_cast<double>(candidate.size()),
              static_cast<double>(reference.size()));
}

double semantic_similarity(const TransformerModel& reference_model,
                           std::span<const int> text_a, std::span<const int> text_b) {
    if (text_a.empty() || text_b.empty())
        throw ContractError("semantic_similarity: empty text");
    auto embed = [&](std::span<const int> tokens) {
        auto acts = reference_model.forward(tokens).layer_acts;
        Tensor h = reference_model.final_hidden(acts.back());
        const int t = h.dim(0), d = h.dim(1);
        std::vector<double> mean(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j)
                mean[static_cast<size_t>(j)] += h.at(static_cast<int64_t>(i) * d + j);
        for (double& x : mean) x /= t;
        return mean;
    };
    const auto ea = embed(text_a);
    const auto eb = embed(text_b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < ea.size(); ++i) {
        dot += ea[i] * eb[i];
        na += ea[i] * ea[i];
        nb += eb[i] * eb[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.5;  // degenerate zero embedding
    const double cosine = dot / std::sqrt(na * nb);
    return std::clamp((cosine + 1.0) / 2.0, 0.0, 1.0);
}

MetricReport aggregate_report(const std::vector<ItemMetrics>& items,
                              double perplexity_base, double perplexity_edited) {
    if (items.empty()) throw ContractError("aggregate_report: no items");
    MetricReport r;
    r.item_count = static_cast<int>(items.size());
    int exact = 0;
    for (const ItemMetrics& it : items) {
        r.original.bleu += it.original.bleu;
        r.original.rouge1_f += it.original.rouge1_f;
        r.original.rouge2_f += it.original.rouge2_f;
        r.original.rougeL_f += it.original.rougeL_f;
        r.original.sem_sim += it.original.sem_sim;
        r.paraphrase.bleu += it.paraphrase.bleu;
        r.paraphrase.rouge1_f += it.paraphrase.rouge1_f;
        r.paraphrase.rouge2_f += it.paraphrase.rouge2_f;
        r.paraphrase.rougeL_f += it.paraphrase.rougeL_f;
        r.paraphrase.sem_sim += it.paraphrase.sem_sim;
        r.sub_qa_exact += it.sub_qa_exact;
        if (it.exact_match_original) ++exact;
    }
    const double n = static_cast<double>(items.size());
    for (SplitMetrics* s : {&r.original, &r.paraphrase}) {
        s->bleu /= n;
        s->rouge1_f /= n;
        s->rouge2_f /= n;
        s->rougeL_f /= n;
        s->sem_sim /= n;
    }
    r.sub_qa_exact /= n;
    r.exact_match_rate = exact / n;
    r.perplexity_base = perplexity_base;
    r.perplexity_edited = perplexity_edited;
    r.perplexity_delta_pct =
        perplexity_base > 0.0
            ? 100.0 * (perplexity_edited - perplexity_base) / perplexity_base
            : 0.0;
    return r;
}

std::string report_table(const MetricReport& r, const std::string& title) {
    auto cell = [](double orig, double para) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%6.2f / %-6.2f", 100.0 * orig, 100.0 * para);
        return std::string(buf);
    };
    std::ostringstream out;
    out << title << "  (" << r.item_count << " items; cells are orig / para x100;\n"
        << " BLEU-4 add-one smoothed n>=2; sem-sim = frozen-model embedding cosine"
        << " substitute)\n";
    out << "  BLEU      " << cell(r.original.bleu, r.paraphrase.bleu) << "\n";
    out << "  ROUGE-1   " << cell(r.original.rouge1_f, r.paraphrase.rouge1_f) << "\n";
    out << "  ROUGE-2   " << cell(r.original.rouge2_f, r.paraphrase.rouge2_f) << "\n";
    out << "  ROUGE-L   " << cell(r.original.rougeL_f, r.paraphrase.rougeL_f) << "\n";
    out << "  sem-sim   " << cell(r.original.sem_sim, r.paraphrase.sem_sim) << "\n";
    char line[96];
    std::snprintf(line, sizeof(line), "  exact-match %.2f%%  sub-QA exact match %.2f%%\n",
                  100.0 * r.exact_match_rate, 100.0 * r.sub_qa_exact);
    out << line;
    std::snprintf(line, sizeof(line), "  perplexity %.3f -> %.3f (delta %+.2f%%)\n",
                  r.perplexity_base, r.perplexity_edited, r.perplexity_delta_pct);
    out << line;
    return out.str();
}

std::string report_json(const MetricReport& r) {
    auto split = [](const SplitMetrics& s) {
        return nlohmann::json{{"bleu", s.bleu},
                              {"rouge1_f", s.rouge1_f},
                              {"rouge2_f", s.rouge2_f},
                              {"rougeL_f", s.rougeL_f},
                              {"sem_sim", s.sem_sim}};
    };
    nlohmann::json j{{"original", split(r.original)},
                     {"paraphrase", split(r.paraphrase)},
                     {"item_count", r.item_count},
                     {"exact_match_rate", r.exact_match_rate},
                     {"sub_qa_exact", r.sub_qa_exact},
                     {"perplexity_base", r.perplexity_base},
                     {"perplexity_edited", r.perplexity_edited},
                     {"perplexity_delta_pct", r.perplexity_delta_pct},
                     {"notes",
                      "BLEU-4 add-one smoothed for n>=2; ROUGE as F1; sem_sim is a "
                      "frozen-model mean-pooled embedding cosine substitute for an "
                      "external encoder"}};
    return j.dump(2);
}

}  // namespace unke
