#include "unke/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "unke/adam.hpp"

namespace unke {

namespace pools {
namespace {

const std::vector<std::string> kPrefixes = {
    "ka", "mo", "ri", "ta", "lu", "ne", "si", "vo", "ha", "ze",
    "pa", "du", "fe", "gi", "yo", "bu", "ce", "wa", "om", "ul"};
const std::vector<std::string> kSuffixes = {
    "ron", "mek", "tis", "lor", "nav", "bex", "dun", "fay", "gor", "hul",
    "jin", "kes", "lum", "mor", "nix", "pel", "rud", "sev", "tor", "wex"};

const std::vector<std::string> kRelations = {
    "color", "shape", "size", "material", "flavor", "sound", "habitat", "origin"};

const std::vector<std::vector<std::string>> kObjects = {
    {"red", "blue", "green", "yellow", "purple", "orange", "pink", "brown", "black",
     "white", "gray", "crimson", "teal", "maroon", "violet", "indigo", "gold",
     "silver", "beige", "cyan"},
    {"round", "square", "oval", "flat", "curved", "pointed", "twisted", "spiral",
     "hollow", "domed", "wavy", "jagged", "conical", "cubic", "slanted", "forked",
     "coiled", "ridged", "angular", "tapered"},
    {"tiny", "small", "modest", "medium", "large", "huge", "giant", "immense",
     "slender", "broad", "towering", "compact", "stubby", "lanky", "petite", "bulky",
     "minute", "vast", "middling", "colossal"},
    {"wood", "stone", "iron", "copper", "glass", "clay", "wool", "silk", "paper",
     "leather", "bronze", "marble", "ivory", "amber", "granite", "ceramic", "velvet",
     "rubber", "bamboo", "quartz"},
    {"sweet", "sour", "bitter", "salty", "spicy", "smoky", "tangy", "mild", "savory",
     "minty", "fruity", "nutty", "peppery", "buttery", "zesty", "bland", "earthy",
     "floral", "herbal", "creamy"},
    {"hum", "buzz", "chirp", "rumble", "whistle", "clang", "roar", "murmur",
     "crackle", "drone", "chime", "rattle", "whir", "thud", "hiss", "purr", "growl",
     "squeak", "patter", "boom"},
    {"forest", "desert", "tundra", "swamp", "prairie", "reef", "cavern", "valley",
     "glacier", "lagoon", "meadow", "canyon", "island", "marsh", "savanna",
     "foothill", "dune", "grove", "ridge", "delta"},
    {"northland", "southport", "eastvale", "westmoor", "highcrest", "lowfen",
     "midgard", "farholm", "coldbay", "warmfield", "rainhollow", "sunmere",
     "fogmoor", "windgate", "stonevale", "brightfen", "darkwood", "greenholt",
     "silverford", "ironmere"}};

const std::vector<std::string>& subject_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        out.reserve(kPrefixes.size() * kSuffixes.size());
        for (const std::string& p : kPrefixes)
            for (const std::string& s : kSuffixes) out.push_back(p + s);
        return out;
    }();
    return names;
}

}  // namespace

int subject_count() { return static_cast<int>(subject_names().size()); }
int relation_count() { return static_cast<int>(kRelations.size()); }
int object_count(int relation) {
    return static_cast<int>(kObjects[static_cast<size_t>(relation)].size());
}
const std::string& subject(int i) { return subject_names()[static_cast<size_t>(i)]; }
const std::string& relation(int i) { return kRelations[static_cast<size_t>(i)]; }
const std::string& object(int relation, int i) {
    return kObjects[static_cast<size_t>(relation)][static_cast<size_t>(i)];
}
}  // namespace pools

Vocab Vocab::standard() {
    Vocab v;
    auto put = [&](const std::string& w) {
        if (!v.index_.emplace(w, static_cast<int>(v.words_.size())).second)
            throw ContractError("vocab: duplicate word '" + w + "'");
        v.words_.push_back(w);
    };
    put("<eos>");
    for (const char* w : {"what", "is", "the", "of", "tell", "me", "?", ".", "a", "subject"})
        put(w);
    for (int r = 0; r < pools::relation_count(); ++r) put(pools::relation(r));
    for (int r = 0; r < pools::relation_count(); ++r)
        for (int i = 0; i < pools::object_count(r); ++i) put(pools::object(r, i));
    for (int i = 0; i < pools::subject_count(); ++i) put(pools::subject(i));
    return v;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size()) throw FormatError("vocab: token id out of range");
    return words_[static_cast<size_t>(id)];
}

int Vocab::id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw FormatError("vocab: unknown word '" + w + "'");
    return it->second;
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(id(w));
    return out;
}

std::string Vocab::detokenize(std::span<const int> tokens) const {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += word(tokens[i]);
    }
    return out;
}

std::string render_question(const FactRecord& f, int template_id) {
    const std::string& r = pools::relation(f.relation);
    const std::string& s = pools::subject(f.subject);
    if (template_id == 0) return "what is the " + r + " of " + s + " ?";
    if (template_id == 1) return "tell me the " + r + " of " + s + " ?";
    throw ContractError("unknown question template id");
}

// Object-first so that, right after a question's "?", the very next token is
// the answer's object; the "?" position is where facts must be aggregated.
std::string render_statement(int relation, int subject, int object_index) {
    return pools::object(relation, object_index) + " is the " +
           pools::relation(relation) + " of " + pools::subject(subject) + " .";
}

std::string render_sub_statement(const FactRecord& f, const SubFact& s) {
    return render_statement(s.attribute, f.subject, s.value);
}

std::vector<FactRecord> generate_facts(uint64_t seed, int count) {
    if (count < 1) throw ContractError("generate_facts: count must be >= 1");
    if (count > pools::subject_count())
        throw ContractError("generate_facts: subject pool exhausted");
    std::mt19937_64 rng(seed);
    std::vector<int> subjects(static_cast<size_t>(pools::subject_count()));
    std::iota(subjects.begin(), subjects.end(), 0);
    std::shuffle(subjects.begin(), subjects.end(), rng);

    std::vector<FactRecord> facts;
    facts.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        FactRecord f;
        f.id = i;
        f.subject = subjects[static_cast<size_t>(i)];
        f.relation = static_cast<int>(rng() % pools::relation_count());
        const int n_obj = pools::object_count(f.relation);
        f.true_object = static_cast<int>(rng() % n_obj);
        f.cf_object = static_cast<int>(rng() % (n_obj - 1));
        if (f.cf_object >= f.true_object) ++f.cf_object;
        f.template_a = 0;
        f.template_b = 1;
        std::vector<int> attrs;
        for (int r = 0; r < pools::relation_count(); ++r)
            if (r != f.relation) attrs.push_back(r);
        std::shuffle(attrs.begin(), attrs.end(), rng);
        const int k = 2 + static_cast<int>(rng() % 2);
        for (int j = 0; j < k; ++j) {
            SubFact s;
            s.attribute = attrs[static_cast<size_t>(j)];
            s.value = static_cast<int>(rng() % pools::object_count(s.attribute));
            f.sub_facts.push_back(s);
        }
        facts.push_back(std::move(f));
    }
    return facts;
}

Corpus render_corpus(const std::vector<FactRecord>& facts, const Vocab& vocab,
                     uint64_t seed) {
    if (facts.empty()) throw ContractError("render_corpus: empty fact list");
    Corpus c;
    c.seed = seed;
    for (const FactRecord& f : facts) {
        // Profile document: subject intro, true main statement, sub-fact
        // statements in a seed-shuffled order.
        const std::string& s = pools::subject(f.subject);
        std::string text = s + " is a subject .";
        text += " " + render_statement(f.relation, f.subject, f.true_object);
        std::vector<SubFact> subs = f.sub_facts;
        std::mt19937_64 rng(seed ^ (static_cast<uint64_t>(f.id) * 0x9E3779B97F4A7C15ull));
        std::shuffle(subs.begin(), subs.end(), rng);
        for (const SubFact& sub : subs) text += " " + render_sub_statement(f, sub);
        c.ids.push_back(f.id);
        c.texts.push_back(text);
        c.documents.push_back(vocab.tokenize(text));
        // Standalone QA documents so questions are also seen at position zero,
        // matching how they are posed at evaluation and edit time.
        auto add_doc = [&](const std::string& qa) {
            c.ids.push_back(f.id);
            c.texts.push_back(qa);
            c.documents.push_back(vocab.tokenize(qa));
        };
        const std::string truth = render_statement(f.relation, f.subject, f.true_object);
        add_doc(render_question(f, f.template_a) + " " + truth);
        add_doc(render_question(f, f.template_b) + " " + truth);
        for (const SubFact& sub : subs) {
            FactRecord q = f;
            q.relation = sub.attribute;
            add_doc(render_question(q, 0) + " " + render_sub_statement(f, sub));
        }
    }
    return c;
}

int counterfactual_occurrences(const std::vector<FactRecord>& facts, const Corpus& corpus) {
    int hits = 0;
    for (const FactRecord& f : facts) {
        const std::string needle = render_statement(f.relation, f.subject, f.cf_object);
        for (const std::string& text : corpus.texts) {
            size_t pos = 0;
            while ((pos = text.find(needle, pos)) != std::string::npos) {
                ++hits;
                pos += 1;
            }
        }
    }
    return hits;
}

std::vector<double> train_lm(TransformerModel& model, const Corpus& corpus,
                             const TrainConfig& cfg) {
    if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.lr <= 0.0f || cfg.weight_decay < 0.0f)
        throw ContractError("train_lm: invalid config");
    if (corpus.documents.empty()) throw ContractError("train_lm: empty corpus");
    for (const auto& doc : corpus.documents) {
        if (static_cast<int>(doc.size()) + 1 > model.config().max_seq_len)
            throw ShapeError("train_lm: document exceeds max_seq_len");
        for (int t : doc)
            if (t >= model.config().vocab_size)
                throw ShapeError("train_lm: corpus token outside model vocabulary");
    }

    auto params = model.parameters();
    model.set_requires_grad(true);
    AdamConfig ac;
    ac.weight_decay = cfg.weight_decay;
    Adam opt(params, ac);
    std::vector<double> curve;
    std::vector<size_t> order(corpus.documents.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 rng(cfg.seed + static_cast<uint64_t>(epoch) * 0x9E3779B97F4A7C15ull);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            for (size_t i = start; i < end; ++i) {
                std::vector<int> tokens = corpus.documents[order[i]];
                tokens.push_back(kEosToken);
                std::vector<int> targets(tokens.begin() + 1, tokens.end());
                targets.push_back(-1);
                Tape tape;
                Tensor loss = ops::cross_entropy_mean(model.forward(tokens).logits, targets);
                tape.backward(loss);
                epoch_loss += static_cast<double>(loss.item());
            }
            const float inv = 1.0f / static_cast<float>(end - start);
            for (Tensor& p : params)
                for (float& g : p.grad()) g *= inv;
            opt.step(cfg.lr);
            for (Tensor& p : params) p.zero_grad();
        }
        curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    model.set_requires_grad(false);
    for (Tensor& p : params) p.drop_grad();
    return curve;
}

double perplexity(const TransformerModel& model, const Corpus& corpus) {
    if (corpus.documents.empty()) throw ContractError("perplexity: empty corpus");
    double total = 0.0;
    int64_t count = 0;
    const int v = model.config().vocab_size;
    for (const auto& doc : corpus.documents) {
        std::vector<int> tokens = doc;
        tokens.push_back(kEosToken);
        Tensor logits = model.forward(tokens).logits;
        const int t = logits.dim(0);
        for (int i = 0; i + 1 < t; ++i) {
            const float* row = logits.data().data() + static_cast<int64_t>(i) * v;
            double mx = row[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double z = 0.0;
            for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
            total += mx + std::log(z) - row[tokens[static_cast<size_t>(i) + 1]];
            ++count;
        }
    }
    return std::exp(total / static_cast<double>(count));
}

void save_facts_jsonl(const std::vector<FactRecord>& facts,
                      const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("facts: cannot open for writing: " + path.string());
    for (const FactRecord& f : facts) {
        nlohmann::json j;
        j["id"] = f.id;
        j["subject"] = f.subject;
        j["relation"] = f.relation;
        j["true_object"] = f.true_object;
        j["cf_object"] = f.cf_object;
        j["template_a"] = f.template_a;
        j["template_b"] = f.template_b;
        auto& subs = j["sub_facts"] = nlohmann::json::array();
        for (const SubFact& s : f.sub_facts) subs.push_back({s.attribute, s.value});
        out << j.dump() << '\n';
    }
}

std::vector<FactRecord> load_facts_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("facts: cannot open: " + path.string());
    std::vector<FactRecord> facts;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            FactRecord f;
            f.id = j.at("id").get<int>();
            f.subject = j.at("subject").get<int>();
            f.relation = j.at("relation").get<int>();
            f.true_object = j.at("true_object").get<int>();
            f.cf_object = j.at("cf_object").get<int>();
            f.template_a = j.at("template_a").get<int>();
            f.template_b = j.at("template_b").get<int>();
            for (const auto& s : j.at("sub_facts"))
                f.sub_facts.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
            facts.push_back(std::move(f));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("facts line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return facts;
}

void save_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("corpus: cannot open for writing: " + path.string());
    for (size_t i = 0; i < corpus.documents.size(); ++i) {
        nlohmann::json j;
        j["id"] = corpus.ids[i];
        j["text"] = corpus.texts[i];
        j["tokens"] = corpus.documents[i];
        out << j.dump() << '\n';
    }
}

Corpus load_corpus_jsonl(const std::filesystem::path& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw FormatError("corpus: cannot open: " + path.string());
    Corpus c;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            c.ids.push_back(j.at("id").get<int>());
            c.texts.push_back(j.at("text").get<std::string>());
            c.documents.push_back(j.at("tokens").get<std::vector<int>>());
            if (c.documents.back() != vocab.tokenize(c.texts.back()))
                throw FormatError("tokens do not match text under the vocabulary");
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return c;
}

}  // namespace unke
