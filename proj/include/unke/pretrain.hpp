#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "unke/transformer.hpp"

namespace unke {

// Closed word-level vocabulary over the fixed synthetic pools. Token 0 is EOS.
class Vocab {
public:
    static Vocab standard();

    int size() const { return static_cast<int>(words_.size()); }
    const std::string& word(int id) const;
    int id(const std::string& w) const;  // FormatError if absent
    bool contains(const std::string& w) const { return index_.count(w) != 0; }

    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(std::span<const int> tokens) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

// ---- fixed entity / relation / object pools ----
namespace pools {
int subject_count();
int relation_count();
int object_count(int relation);
const std::string& subject(int i);
const std::string& relation(int i);
const std::string& object(int relation, int i);
}  // namespace pools

struct SubFact {
    int attribute;  // relation-pool index, distinct from the fact's relation
    int value;      // object-pool index for that attribute
};

struct FactRecord {
    int id = 0;
    int subject = 0;
    int relation = 0;
    int true_object = 0;
    int cf_object = 0;  // counterfactual, != true_object
    int template_a = 0;
    int template_b = 1;
    std::vector<SubFact> sub_facts;  // 2-4 entries
};

// Question/answer renderings shared by corpus, bench and editor.
std::string render_question(const FactRecord& f, int template_id);
std::string render_statement(int relation, int subject, int object_index);
std::string render_sub_statement(const FactRecord& f, const SubFact& s);

struct Corpus {
    std::vector<int> ids;
    std::vector<std::string> texts;
    std::vector<std::vector<int>> documents;  // tokenized texts, no EOS
    uint64_t seed = 0;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    float lr = 1e-3f;
    // Decoupled weight decay. Besides regularizing, it keeps the residual
    // stream's norm from growing freely (the pre-norm architecture is
    // invariant to that scale, so nothing else bounds it), which keeps
    // layer-split keys at a magnitude downstream editing can work with.
    float weight_decay = 0.0f;
    uint64_t seed = 0;
};

std::vector<FactRecord> generate_facts(uint64_t seed, int count);
Corpus render_corpus(const std::vector<FactRecord>& facts, const Vocab& vocab,
                     uint64_t seed);

// Occurrences of any fact's counterfactual statement rendering in the corpus.
int counterfactual_occurrences(const std::vector<FactRecord>& facts, const Corpus& corpus);

// Next-token training in place; returns per-epoch mean losses.
std::vector<double> train_lm(TransformerModel& model, const Corpus& corpus,
                             const TrainConfig& cfg);

// exp(mean next-token NLL) over documents (each with EOS appended).
double perplexity(const TransformerModel& model, const Corpus& corpus);

void save_facts_jsonl(const std::vector<FactRecord>& facts,
                      const std::filesystem::path& path);
std::vector<FactRecord> load_facts_jsonl(const std::filesystem::path& path);
void save_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus_jsonl(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace unke
