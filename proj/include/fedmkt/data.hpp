#pragma once

// Synthetic corpus with controllable non-IID client skew. Each topic is a
// deterministic successor chain over its own word set; samples are walks
// through a chain. Clients get skewed topic mixtures, the public pool is a
// uniform mixture, so clients hold genuine topic knowledge that public-only
// training lacks.

#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmkt/knowledge.hpp"
#include "fedmkt/model.hpp"
#include "fedmkt/rng.hpp"
#include "fedmkt/tokenizer.hpp"

namespace fedmkt {

struct Sample {
    int64_t id = 0;
    std::string prompt;  // first words
    std::string target;  // continuation, never empty

    std::string full_text() const { return prompt + " " + target; }
    bool operator==(const Sample&) const = default;
};

using Dataset = std::vector<Sample>;

struct SyntheticTask {
    uint64_t seed = 1;
    int topics = 4;
    int words_per_topic = 10;
    int clients = 4;
    int min_len = 5;   // words per sample, >= 3 (prompt takes two)
    int max_len = 9;
    int n_public = 120;
    int n_private = 120;  // per client
    int n_eval = 64;      // per eval set
    double dominant_weight = 0.91;  // private mixture mass on the client's own topic
    double eval_blend = 0.7;        // eval mixture = blend*uniform + (1-blend)*private
    uint64_t pool_size = 0;         // optional: derive equal shares from a fixed pool
};

struct WorldData {
    Dataset public_set;
    std::vector<Dataset> private_sets;  // one per client
    std::vector<Dataset> client_evals;  // per-client topic mixture, held out
    Dataset global_eval;                // uniform mixture, held out
    std::vector<std::vector<double>> client_mixtures;  // topic weights per client
};

namespace detail {

inline std::vector<std::vector<std::string>> make_topic_words(const SyntheticTask& task, Rng& rng) {
    static const char consonants[] = "bdfgklmnprstvz";
    static const char vowels[] = "aeiou";
    std::set<std::string> used;
    std::vector<std::vector<std::string>> topics(static_cast<size_t>(task.topics));
    for (auto& words : topics) {
        while (static_cast<int>(words.size()) < task.words_per_topic) {
            int syllables = 2 + static_cast<int>(uniform_index(rng, 2));
            std::string w;
            for (int s = 0; s < syllables; ++s) {
                w += consonants[uniform_index(rng, sizeof(consonants) - 1)];
                w += vowels[uniform_index(rng, sizeof(vowels) - 1)];
            }
            if (used.insert(w).second) words.push_back(w);
        }
    }
    return topics;
}

// successor permutation per topic; walks of the chain form the samples
inline std::vector<std::vector<int>> make_topic_chains(const SyntheticTask& task, Rng& rng) {
    std::vector<std::vector<int>> chains(static_cast<size_t>(task.topics));
    for (auto& perm : chains) {
        perm.resize(static_cast<size_t>(task.words_per_topic));
        for (int i = 0; i < task.words_per_topic; ++i) perm[static_cast<size_t>(i)] = i;
        shuffle_inplace(perm, rng);
    }
    return chains;
}

inline Sample make_sample(const SyntheticTask& task,
                          const std::vector<std::vector<std::string>>& words,
                          const std::vector<std::vector<int>>& chains, int topic, int64_t id,
                          Rng& rng) {
    const auto& tw = words[static_cast<size_t>(topic)];
    const auto& chain = chains[static_cast<size_t>(topic)];
    int len = task.min_len + static_cast<int>(uniform_index(
                                 rng, static_cast<uint64_t>(task.max_len - task.min_len + 1)));
    int pos = static_cast<int>(uniform_index(rng, tw.size()));
    std::vector<std::string> seq;
    seq.reserve(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) {
        seq.push_back(tw[static_cast<size_t>(pos)]);
        pos = chain[static_cast<size_t>(pos)];
    }
    Sample s;
    s.id = id;
    s.prompt = seq[0] + " " + seq[1];
    for (size_t i = 2; i < seq.size(); ++i) {
        if (i > 2) s.target += ' ';
        s.target += seq[i];
    }
    return s;
}

inline Dataset make_dataset(const SyntheticTask& task,
                            const std::vector<std::vector<std::string>>& words,
                            const std::vector<std::vector<int>>& chains,
                            const std::vector<double>& mixture, int count, int64_t first_id,
                            Rng& rng) {
    Dataset out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        int topic = static_cast<int>(weighted_index(rng, mixture));
        out.push_back(make_sample(task, words, chains, topic, first_id + i, rng));
    }
    return out;
}

}  // namespace detail

inline std::vector<double> client_topic_mixture(const SyntheticTask& task, int client_index) {
    std::vector<double> mix(static_cast<size_t>(task.topics),
                            task.topics > 1 ? (1.0 - task.dominant_weight) / (task.topics - 1)
                                            : 0.0);
    mix[static_cast<size_t>(client_index % task.topics)] = task.dominant_weight;
    if (task.topics == 1) mix[0] = 1.0;
    return mix;
}

// id ranges keep the splits disjoint and make public traffic recognizable:
// public [0, n_public), private k from k*1e6, evals from 2e9 / 3e9
inline constexpr int64_t kPrivateIdBase = 1'000'000;
inline constexpr int64_t kClientEvalIdBase = 2'000'000'000;
inline constexpr int64_t kGlobalEvalIdBase = 3'000'000'000;

inline WorldData generate_world(const SyntheticTask& task) {
    if (task.topics < 1 || task.words_per_topic < 2)
        throw std::invalid_argument("task needs >= 1 topic and >= 2 words per topic");
    if (task.min_len < 3 || task.max_len < task.min_len)
        throw std::invalid_argument("sample length bounds invalid (need min >= 3)");
    if (task.clients < 1) throw std::invalid_argument("task needs >= 1 client");

    int n_public = task.n_public;
    int n_private = task.n_private;
    if (task.pool_size > 0) {
        // the pool splits into K+1 equal parts: one public share, one private
        // share per client
        uint64_t parts = static_cast<uint64_t>(task.clients) + 1;
        if (task.pool_size < parts)
            throw std::invalid_argument("pool too small for requested split: " +
                                        std::to_string(task.pool_size) + " samples for " +
                                        std::to_string(parts) + " equal parts");
        if (task.pool_size % parts != 0)
            throw std::invalid_argument("pool size must divide into " + std::to_string(parts) +
                                        " equal parts");
        n_public = n_private = static_cast<int>(task.pool_size / parts);
    }
    if (n_public < 1 || n_private < 1) throw std::invalid_argument("split shares must be >= 1");

    Rng rng = make_rng(task.seed, Stream::world);
    auto words = detail::make_topic_words(task, rng);
    auto chains = detail::make_topic_chains(task, rng);

    std::vector<double> uniform(static_cast<size_t>(task.topics),
                                1.0 / static_cast<double>(task.topics));

    WorldData w;
    w.public_set = detail::make_dataset(task, words, chains, uniform, n_public, 0, rng);
    for (int k = 0; k < task.clients; ++k) {
        auto mix = client_topic_mixture(task, k);
        w.private_sets.push_back(detail::make_dataset(task, words, chains, mix, n_private,
                                                      kPrivateIdBase * (k + 1), rng));
        w.client_mixtures.push_back(mix);
    }
    for (int k = 0; k < task.clients; ++k) {
        std::vector<double> eval_mix(static_cast<size_t>(task.topics));
        for (int t = 0; t < task.topics; ++t)
            eval_mix[static_cast<size_t>(t)] =
                task.eval_blend * uniform[static_cast<size_t>(t)] +
                (1.0 - task.eval_blend) * w.client_mixtures[static_cast<size_t>(k)][static_cast<size_t>(t)];
        w.client_evals.push_back(detail::make_dataset(task, words, chains, eval_mix, task.n_eval,
                                                      kClientEvalIdBase + kPrivateIdBase * (k + 1),
                                                      rng));
    }
    w.global_eval =
        detail::make_dataset(task, words, chains, uniform, task.n_eval, kGlobalEvalIdBase, rng);
    return w;
}

// ---------------------------------------------------------------------------
// Encoding and evaluation

inline std::vector<EncodedSample> encode_dataset(const Dataset& data, const TokenizerSpec& spec) {
    std::vector<EncodedSample> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        EncodedSample e;
        e.sample_id = s.id;
        e.ids = tokenize(spec, s.full_text());
        if (e.ids.size() < 2)
            throw std::runtime_error("sample " + std::to_string(s.id) +
                                     " encodes to fewer than 2 tokens");
        out.push_back(std::move(e));
    }
    return out;
}

struct EvalMetrics {
    double accuracy = 0.0;    // argmax next-token hit rate over all positions
    double perplexity = 0.0;  // exp of token-weighted mean cross entropy
};

inline EvalMetrics evaluate(const LanguageModel& m, const std::vector<EncodedSample>& eval_set) {
    if (eval_set.empty()) throw std::invalid_argument("evaluate: empty eval set");
    const int V = m.vocab_size();
    uint64_t hits = 0, total = 0;
    double nll = 0.0;
    for (const auto& s : eval_set) {
        std::span<const int> input(s.ids.data(), s.ids.size() - 1);
        Matrix logits = forward(m, input);
        for (size_t t = 0; t < input.size(); ++t) {
            const double* row = logits.row(t);
            int best = 0;
            for (int v = 1; v < V; ++v)
                if (row[v] > row[best]) best = v;
            int y = s.ids[t + 1];
            if (best == y) ++hits;
            nll += detail::log_sum_exp(row, V) - row[y];
            ++total;
        }
    }
    EvalMetrics out;
    out.accuracy = static_cast<double>(hits) / static_cast<double>(total);
    out.perplexity = std::exp(nll / static_cast<double>(total));
    return out;
}

// ---------------------------------------------------------------------------
// Line-delimited text records: "sample_id<TAB>prompt<TAB>target"

inline std::string dataset_to_text(const Dataset& data) {
    std::ostringstream out;
    for (const auto& s : data) out << s.id << "\t" << s.prompt << "\t" << s.target << "\n";
    return out.str();
}

inline Dataset dataset_from_text(std::string_view text) {
    Dataset out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw CorruptError("bad dataset record: " + line);
        Sample s;
        s.id = std::stoll(line.substr(0, t1));
        s.prompt = line.substr(t1 + 1, t2 - t1 - 1);
        s.target = line.substr(t2 + 1);
        if (s.target.empty()) throw CorruptError("dataset record with empty target");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace fedmkt
