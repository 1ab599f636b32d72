#pragma once

// The full mutual-transfer protocol: per round, clients fine-tune privately
// and publish knowledge sets over the public data, the server aligns and
// selectively distills them into its own model, then publishes its own
// knowledge set for the clients to selectively distill from. Also the
// baseline training modes used for comparisons.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "fedmkt/align.hpp"
#include "fedmkt/data.hpp"
#include "fedmkt/knowledge.hpp"
#include "fedmkt/model.hpp"
#include "fedmkt/rng.hpp"
#include "fedmkt/tokenizer.hpp"

namespace fedmkt {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Mode { fedmkt, zero_shot, standalone, centralized, fedavg, llm2slm };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::fedmkt: return "fedmkt";
        case Mode::zero_shot: return "zero_shot";
        case Mode::standalone: return "standalone";
        case Mode::centralized: return "centralized";
        case Mode::fedavg: return "fedavg";
        case Mode::llm2slm: return "llm2slm";
    }
    return "?";
}

inline Mode mode_from_name(const std::string& s) {
    for (Mode m : {Mode::fedmkt, Mode::zero_shot, Mode::standalone, Mode::centralized, Mode::fedavg,
                   Mode::llm2slm})
        if (s == mode_name(m)) return m;
    throw ConfigError("mode: unknown value '" + s + "'");
}

struct FedConfig {
    int clients = 4;         // K
    int rounds = 10;         // T communication rounds
    int server_epochs = 1;   // R local epochs on the server
    int client_epochs = 1;   // E local epochs on each client
    double lambda = 0.9;     // fine-tune vs distillation mixing weight
    double lr_server = 0.02;
    double lr_client = 0.02;
    int k_top = 16;          // transmitted logit width
    int batch_size = 4;
    uint64_t seed = 1;
    Mode mode = Mode::fedmkt;
    int workers = 1;         // 1 = deterministic reference execution
    double weight_decay = 0.1;
    double max_grad_norm = 1.0;
};

inline void validate_config(const FedConfig& c) {
    if (c.clients < 1) throw ConfigError("clients: must be >= 1");
    if (c.rounds < 1) throw ConfigError("rounds: must be >= 1");
    if (c.server_epochs < 1) throw ConfigError("server_epochs: must be >= 1");
    if (c.client_epochs < 1) throw ConfigError("client_epochs: must be >= 1");
    if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ConfigError("lambda: must be in [0, 1]");
    if (c.lr_server <= 0.0) throw ConfigError("lr_server: must be > 0");
    if (c.lr_client <= 0.0) throw ConfigError("lr_client: must be > 0");
    if (c.k_top < 1) throw ConfigError("k_top: must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size: must be >= 1");
    if (c.workers < 1) throw ConfigError("workers: must be >= 1");
    if (c.weight_decay < 0.0) throw ConfigError("weight_decay: must be >= 0");
    if (c.max_grad_norm <= 0.0) throw ConfigError("max_grad_norm: must be > 0");
}

struct ParticipantSpec {
    int width = 32;
    TokenizerKind tokenizer = TokenizerKind::word;
    int rank = 8;
    double alpha = 16.0;
    int context_window = 256;
    uint64_t init_seed = 0;  // 0 = derive from run seed and participant id
};

struct WorldSpec {
    SyntheticTask task;
    ParticipantSpec server;
    std::vector<ParticipantSpec> clients;
    int subword_merges = 96;
};

// Server is wider than the clients; the client mix covers all three
// tokenizer kinds so every alignment case appears.
inline WorldSpec default_world_spec(const FedConfig& cfg) {
    WorldSpec w;
    w.task.seed = cfg.seed;
    w.task.clients = cfg.clients;
    w.server = {64, TokenizerKind::word, 8, 16.0, 256, 0};
    const ParticipantSpec cycle[] = {
        {32, TokenizerKind::word, 8, 16.0, 256, 0},
        {32, TokenizerKind::character, 8, 16.0, 512, 0},
        {32, TokenizerKind::subword, 8, 16.0, 384, 0},
        {24, TokenizerKind::word, 8, 16.0, 256, 0},
    };
    for (int k = 0; k < cfg.clients; ++k) w.clients.push_back(cycle[k % 4]);
    return w;
}

inline WorldSpec homogeneous_world_spec(const FedConfig& cfg, ParticipantSpec client_template) {
    WorldSpec w = default_world_spec(cfg);
    w.clients.assign(static_cast<size_t>(cfg.clients), client_template);
    return w;
}

enum class Role { server, client };

struct Participant {
    int id = 0;  // 0 = server, 1..K = clients
    Role role = Role::client;
    LanguageModel model;
    OptimizerState opt;
    std::vector<EncodedSample> private_enc;  // clients only
    std::vector<EncodedSample> public_enc;
    std::vector<EncodedSample> eval_enc;
};

// per-client precomputed alignment against the server, over public samples
struct ClientAlignment {
    std::shared_ptr<const VocabMappingTable> to_server;
    std::shared_ptr<const VocabMappingTable> to_client;
    std::vector<AlignmentPath> client_to_server;  // indexed like the public set
    std::vector<AlignmentPath> server_to_client;
};

struct World {
    FedConfig cfg;
    WorldSpec spec;
    WorldData data;
    Participant server;
    std::vector<Participant> clients;
    std::vector<ClientAlignment> alignments;  // one per client
    std::shared_ptr<MappingTableCache> tables = std::make_shared<MappingTableCache>();
};

namespace detail {

inline std::shared_ptr<const TokenizerSpec> build_shared_tokenizer(
    TokenizerKind kind, const std::vector<std::string>& corpus, int subword_merges) {
    auto content_id = [](const char* prefix, const Vocabulary& v) {
        uint64_t h = 1469598103934665603ULL;
        for (const auto& t : v.tokens) h = fnv1a64(t.data(), t.size(), h ^ t.size());
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s-%016llx", prefix,
                      static_cast<unsigned long long>(h));
        return std::string(buf);
    };
    switch (kind) {
        case TokenizerKind::word: {
            Vocabulary v = word_vocab_from_corpus(corpus, "tmp");
            v.id = content_id("word", v);
            return std::make_shared<const TokenizerSpec>(make_tokenizer(TokenizerKind::word, v));
        }
        case TokenizerKind::character: {
            Vocabulary v = char_vocab_from_corpus(corpus, "tmp");
            v.id = content_id("char", v);
            return std::make_shared<const TokenizerSpec>(
                make_tokenizer(TokenizerKind::character, v));
        }
        case TokenizerKind::subword: {
            TokenizerSpec spec = subword_tokenizer_from_corpus(
                corpus, "tmp", static_cast<size_t>(subword_merges));
            spec.vocab.id = content_id("subword", spec.vocab);
            return std::make_shared<const TokenizerSpec>(std::move(spec));
        }
    }
    throw std::logic_error("unreachable");
}

}  // namespace detail

inline World build_world(const FedConfig& cfg, const WorldSpec& spec_in) {
    validate_config(cfg);
    WorldSpec spec = spec_in;
    spec.task.clients = cfg.clients;
    spec.task.seed = cfg.seed;
    if (static_cast<int>(spec.clients.size()) != cfg.clients)
        throw ConfigError("clients: config says " + std::to_string(cfg.clients) +
                          " but world spec lists " + std::to_string(spec.clients.size()));

    World w;
    w.cfg = cfg;
    w.spec = spec;
    w.data = generate_world(spec.task);

    std::vector<std::string> corpus;
    auto add_texts = [&corpus](const Dataset& d) {
        for (const auto& s : d) corpus.push_back(s.full_text());
    };
    add_texts(w.data.public_set);
    for (const auto& d : w.data.private_sets) add_texts(d);
    for (const auto& d : w.data.client_evals) add_texts(d);
    add_texts(w.data.global_eval);

    std::map<TokenizerKind, std::shared_ptr<const TokenizerSpec>> tokenizers;
    auto tokenizer_for = [&](TokenizerKind kind) {
        auto it = tokenizers.find(kind);
        if (it == tokenizers.end())
            it = tokenizers.emplace(kind, detail::build_shared_tokenizer(kind, corpus,
                                                                         spec.subword_merges))
                     .first;
        return it->second;
    };

    auto make_participant = [&](int id, Role role, const ParticipantSpec& ps) {
        Participant p;
        p.id = id;
        p.role = role;
        auto tok = tokenizer_for(ps.tokenizer);
        uint64_t seed = ps.init_seed ? ps.init_seed
                                     : mix64(cfg.seed ^ (0x9E3779B97F4A7C15ULL * (id + 1)));
        p.model = make_language_model(tok, ps.width, ps.rank, ps.alpha, ps.context_window, seed);
        p.opt = make_optimizer(p.model.adapter, role == Role::server ? cfg.lr_server : cfg.lr_client,
                               cfg.weight_decay, cfg.max_grad_norm);
        p.public_enc = encode_dataset(w.data.public_set, *tok);
        return p;
    };

    w.server = make_participant(0, Role::server, spec.server);
    w.server.eval_enc = encode_dataset(w.data.global_eval, *w.server.model.tokenizer);
    for (int k = 0; k < cfg.clients; ++k) {
        Participant p = make_participant(k + 1, Role::client, spec.clients[static_cast<size_t>(k)]);
        p.private_enc =
            encode_dataset(w.data.private_sets[static_cast<size_t>(k)], *p.model.tokenizer);
        p.eval_enc = encode_dataset(w.data.client_evals[static_cast<size_t>(k)], *p.model.tokenizer);
        w.clients.push_back(std::move(p));
    }

    // precompute alignment paths (fixed tokenizations, so fixed for the run)
    for (int k = 0; k < cfg.clients; ++k) {
        const auto& client = w.clients[static_cast<size_t>(k)];
        const Vocabulary& cv = client.model.tokenizer->vocab;
        const Vocabulary& sv = w.server.model.tokenizer->vocab;
        ClientAlignment a;
        a.to_server = w.tables->get(cv, sv);
        a.to_client = w.tables->get(sv, cv);
        a.client_to_server.reserve(client.public_enc.size());
        a.server_to_client.reserve(client.public_enc.size());
        for (size_t i = 0; i < client.public_enc.size(); ++i) {
            const auto& cids = client.public_enc[i].ids;
            const auto& sids = w.server.public_enc[i].ids;
            a.client_to_server.push_back(align_sequences(cids, sids, cv, sv, *a.to_server));
            a.server_to_client.push_back(align_sequences(sids, cids, sv, cv, *a.to_client));
        }
        w.alignments.push_back(std::move(a));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Logs

struct ParticipantRound {
    int participant = 0;
    Role role = Role::client;
    double private_loss = 0.0;  // clients: mean CE of the private phase
    double ft_loss = 0.0;       // public-phase fine-tune term
    double kd_loss = 0.0;       // public-phase distillation term
    double combined_loss = 0.0;
    size_t selective_size = 0;
    double eval_accuracy = 0.0;
    double eval_perplexity = 0.0;
    uint64_t upload_floats = 0;
    uint64_t download_floats = 0;
};

struct RoundLog {
    int round = 0;
    std::vector<ParticipantRound> participants;  // server first, then clients by id
};

struct FinalMetric {
    int participant = 0;
    Role role = Role::client;
    double accuracy = 0.0;
    double perplexity = 0.0;
};

struct RunResult {
    std::vector<RoundLog> rounds;
    std::vector<FinalMetric> final_metrics;
};

struct RunOptions {
    int workers = 1;
    // test hook: drop every distillation code path (selection and KD terms)
    bool disable_kd = false;
    // observers for the synchronization tests; may be called from workers
    std::function<void(int round, int client)> on_client_done;
    std::function<void(int round)> on_server_phase;
    std::function<void(int round)> on_round_end;
    // collects every serialized cross-party payload, in deterministic order
    std::vector<std::vector<uint8_t>>* traffic = nullptr;
    std::ostream* trace = nullptr;
};

// ---------------------------------------------------------------------------
// Training helpers

struct EpochStats {
    double ft = 0.0;
    double kd = 0.0;
    double combined = 0.0;
    int batches = 0;
};

// Minibatch epochs over `data`. The fine-tune term uses each batch; the
// distillation term uses the batch's intersection with `teachers` (empty
// intersection means a zero distillation term for that batch).
inline EpochStats train_epochs(LanguageModel& model, OptimizerState& opt,
                               const std::vector<EncodedSample>& data,
                               const std::unordered_map<int64_t, const SparseLogits*>& teachers,
                               double lambda, int epochs, int batch_size, Rng rng) {
    EpochStats stats;
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        shuffle_inplace(order, rng);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
            std::vector<const std::vector<int>*> ce_batch;
            std::vector<KdExample> kd_batch;
            for (size_t i = start; i < end; ++i) {
                const auto& s = data[order[i]];
                ce_batch.push_back(&s.ids);
                if (!teachers.empty() && lambda != 1.0) {
                    auto it = teachers.find(s.sample_id);
                    if (it != teachers.end()) kd_batch.push_back({&s.ids, it->second});
                }
            }
            AdapterGrad grad(model.adapter);
            CombinedLoss loss = combined_loss_and_grad(model, ce_batch, kd_batch, lambda, grad);
            if (!std::isfinite(loss.combined))
                throw std::runtime_error("non-finite training loss");
            optimizer_step(model.adapter, grad, opt);
            stats.ft += loss.ft;
            stats.kd += loss.kd;
            stats.combined += loss.combined;
            stats.batches += 1;
        }
    }
    if (stats.batches > 0) {
        stats.ft /= stats.batches;
        stats.kd /= stats.batches;
        stats.combined /= stats.batches;
    }
    return stats;
}

inline std::vector<double> local_public_losses(const Participant& p) {
    std::vector<double> out;
    out.reserve(p.public_enc.size());
    for (const auto& s : p.public_enc) {
        std::span<const int> input(s.ids.data(), s.ids.size() - 1);
        std::span<const int> target(s.ids.data() + 1, s.ids.size() - 1);
        out.push_back(ce_loss(p.model, input, target));
    }
    return out;
}

// Projects every record of a knowledge set into the recipient's vocabulary.
// Losses travel unmodified; only logits are aligned.
inline KnowledgeSet align_knowledge_set(const KnowledgeSet& set,
                                        const std::vector<AlignmentPath>& paths,
                                        const VocabMappingTable& table,
                                        const std::vector<EncodedSample>& recipient_enc,
                                        const std::string& recipient_vocab_id) {
    if (set.records.size() != paths.size() || set.records.size() != recipient_enc.size())
        throw ProtocolError("align_knowledge_set: set does not cover the public data");
    KnowledgeSet out;
    out.origin = set.origin;
    out.round = set.round;
    out.k_top = set.k_top;
    out.vocab_id = recipient_vocab_id;
    out.records.reserve(set.records.size());
    for (size_t i = 0; i < set.records.size(); ++i) {
        const auto& rec = set.records[i];
        if (rec.sample_id != recipient_enc[i].sample_id)
            throw ProtocolError("align_knowledge_set: sample_id mismatch");
        // the path fixes the source tokenization length; the record must
        // carry one prediction per source token after the first
        int src_tokens = 0;
        for (const auto& p : paths[i].pairs) src_tokens = std::max(src_tokens, p.src_end);
        if (rec.logits.positions.size() + 1 != static_cast<size_t>(src_tokens))
            throw ProtocolError("align_knowledge_set: record " + std::to_string(rec.sample_id) +
                                " has " + std::to_string(rec.logits.positions.size()) +
                                " positions but the source tokenization has " +
                                std::to_string(src_tokens) + " tokens");
        KnowledgeRecord aligned;
        aligned.sample_id = rec.sample_id;
        aligned.loss = rec.loss;
        aligned.logits = project_logits(rec.logits, paths[i], table,
                                        recipient_enc[i].ids.size() - 1, recipient_enc[i].ids);
        out.records.push_back(std::move(aligned));
    }
    return out;
}

inline std::unordered_map<int64_t, const SparseLogits*> teacher_map(
    const SelectiveKnowledgeSet& s) {
    std::unordered_map<int64_t, const SparseLogits*> out;
    out.reserve(s.records.size());
    for (const auto& r : s.records) out.emplace(r.sample_id, &r.teacher);
    return out;
}

// ---------------------------------------------------------------------------
// Protocol phases

struct ClientPhase1Result {
    double private_loss = 0.0;
    KnowledgeSet knowledge;
};

// Private fine-tuning followed by knowledge extraction over the public set.
inline ClientPhase1Result client_update1(World& w, int client_index, int round) {
    Participant& c = w.clients[static_cast<size_t>(client_index)];
    ClientPhase1Result out;
    Rng rng = make_rng(w.cfg.seed, Stream::private_epoch, static_cast<uint64_t>(c.id),
                       static_cast<uint64_t>(round));
    EpochStats stats = train_epochs(c.model, c.opt, c.private_enc, {}, 1.0, w.cfg.client_epochs,
                                    w.cfg.batch_size, rng);
    out.private_loss = stats.ft;
    out.knowledge = build_knowledge_set(c.model, c.public_enc, w.cfg.k_top, c.id, round);
    return out;
}

struct ServerUpdateResult {
    KnowledgeSet s0;
    EpochStats stats;
    size_t selective_size = 0;
};

// Align client sets into the server vocabulary, select with DualMinCE, run R
// distillation epochs, then extract the server's own knowledge set.
inline ServerUpdateResult server_update(World& w, const std::vector<KnowledgeSet>& client_sets,
                                        int round, const RunOptions& opts = {},
                                        bool train = true) {
    if (static_cast<int>(client_sets.size()) != w.cfg.clients)
        throw ProtocolError("server_update: expected " + std::to_string(w.cfg.clients) +
                            " client sets, got " + std::to_string(client_sets.size()));
    Participant& s = w.server;

    std::vector<char> seen(static_cast<size_t>(w.cfg.clients) + 1, 0);
    for (const auto& set : client_sets) {
        if (set.origin < 1 || set.origin > w.cfg.clients)
            throw ProtocolError("server_update: unexpected origin " + std::to_string(set.origin));
        if (seen[static_cast<size_t>(set.origin)]++)
            throw ProtocolError("server_update: duplicate set from client " +
                                std::to_string(set.origin));
        const auto& expected =
            w.clients[static_cast<size_t>(set.origin - 1)].model.tokenizer->vocab.id;
        if (set.vocab_id != expected)
            throw ProtocolError("server_update: client " + std::to_string(set.origin) +
                                " sent logits over vocabulary '" + set.vocab_id +
                                "', expected '" + expected + "'");
    }

    SelectiveKnowledgeSet selected;
    std::vector<KnowledgeSet> aligned;
    if (!opts.disable_kd) {
        aligned.reserve(client_sets.size());
        for (const auto& set : client_sets) {
            const auto& a = w.alignments[static_cast<size_t>(set.origin - 1)];
            aligned.push_back(align_knowledge_set(set, a.client_to_server, *a.to_server,
                                                  s.public_enc, s.model.tokenizer->vocab.id));
        }
        std::vector<const KnowledgeSet*> candidates;
        for (const auto& a : aligned) candidates.push_back(&a);
        selected = dual_min_ce(local_public_losses(s), candidates);
    }

    ServerUpdateResult out;
    out.selective_size = selected.records.size();
    if (train) {
        Rng rng = make_rng(w.cfg.seed, Stream::public_epoch, 0, static_cast<uint64_t>(round));
        out.stats = train_epochs(s.model, s.opt, s.public_enc, teacher_map(selected), w.cfg.lambda,
                                 w.cfg.server_epochs, w.cfg.batch_size, rng);
    }
    out.s0 = build_knowledge_set(s.model, s.public_enc, w.cfg.k_top, 0, round);
    return out;
}

struct ClientPhase2Result {
    EpochStats stats;
    size_t selective_size = 0;
};

// Align the server set into the client vocabulary, select (single-candidate
// branch), then run E more epochs continuing the same optimizer state.
inline ClientPhase2Result client_update2(World& w, int client_index, const KnowledgeSet& s0,
                                         int round, const RunOptions& opts = {}) {
    Participant& c = w.clients[static_cast<size_t>(client_index)];
    if (s0.origin != 0)
        throw ProtocolError("client_update2: expected the server's set, got origin " +
                            std::to_string(s0.origin));
    if (s0.vocab_id != w.server.model.tokenizer->vocab.id)
        throw ProtocolError("client_update2: server set uses vocabulary '" + s0.vocab_id +
                            "', expected '" + w.server.model.tokenizer->vocab.id + "'");
    SelectiveKnowledgeSet selected;
    if (!opts.disable_kd) {
        const auto& a = w.alignments[static_cast<size_t>(client_index)];
        KnowledgeSet aligned = align_knowledge_set(s0, a.server_to_client, *a.to_client,
                                                   c.public_enc, c.model.tokenizer->vocab.id);
        selected = dual_min_ce(local_public_losses(c), {&aligned});
    }
    ClientPhase2Result out;
    out.selective_size = selected.records.size();
    Rng rng = make_rng(w.cfg.seed, Stream::public_epoch, static_cast<uint64_t>(c.id),
                       static_cast<uint64_t>(round));
    out.stats = train_epochs(c.model, c.opt, c.public_enc, teacher_map(selected), w.cfg.lambda,
                             w.cfg.client_epochs, w.cfg.batch_size, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Runs

namespace detail {

inline void trace_step(const RunOptions& opts, int round, int step, const std::string& what) {
    if (opts.trace)
        (*opts.trace) << "[round " << round + 1 << "][step " << step << "/11] " << what << "\n";
}

// Runs fn(k) for each client index, possibly on several workers. Exceptions
// are rethrown on the caller thread, lowest client first.
inline void for_each_client(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int k = 0; k < n; ++k) fn(k);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int k = next.fetch_add(1);
            if (k >= n) return;
            try {
                fn(k);
            } catch (...) {
                errors[static_cast<size_t>(k)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    int count = std::min(workers, n);
    pool.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

template <typename Fn>
auto with_context(int round, int participant, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw std::runtime_error("round " + std::to_string(round + 1) + ", participant " +
                                 std::to_string(participant) + ": " + e.what());
    }
}

}  // namespace detail

inline std::vector<FinalMetric> collect_final_metrics(const World& w) {
    std::vector<FinalMetric> out;
    out.push_back({0, Role::server, 0.0, 0.0});
    EvalMetrics sm = evaluate(w.server.model, w.server.eval_enc);
    out.back().accuracy = sm.accuracy;
    out.back().perplexity = sm.perplexity;
    for (const auto& c : w.clients) {
        EvalMetrics m = evaluate(c.model, c.eval_enc);
        out.push_back({c.id, Role::client, m.accuracy, m.perplexity});
    }
    return out;
}

inline RunResult run_fedmkt(World& w, const RunOptions& opts = {}) {
    const FedConfig& cfg = w.cfg;
    const bool server_trains = cfg.mode != Mode::llm2slm;
    RunResult result;

    for (int t = 0; t < cfg.rounds; ++t) {
        std::vector<ClientPhase1Result> phase1(static_cast<size_t>(cfg.clients));
        std::vector<std::vector<uint8_t>> uploads(static_cast<size_t>(cfg.clients));

        detail::trace_step(opts, t, 1, "clients fine-tune on private data");
        detail::trace_step(opts, t, 2, "clients extract knowledge over the public set");
        detail::for_each_client(cfg.clients, opts.workers, [&](int k) {
            detail::with_context(t, k + 1, [&] {
                phase1[static_cast<size_t>(k)] = client_update1(w, k, t);
                uploads[static_cast<size_t>(k)] =
                    serialize_knowledge(phase1[static_cast<size_t>(k)].knowledge);
                if (opts.on_client_done) opts.on_client_done(t, k + 1);
            });
        });

        detail::trace_step(opts, t, 3, "clients upload knowledge sets");
        if (opts.on_server_phase) opts.on_server_phase(t);
        std::vector<KnowledgeSet> client_sets;
        client_sets.reserve(static_cast<size_t>(cfg.clients));
        for (int k = 0; k < cfg.clients; ++k) {
            if (opts.traffic) opts.traffic->push_back(uploads[static_cast<size_t>(k)]);
            client_sets.push_back(deserialize_knowledge(uploads[static_cast<size_t>(k)]));
        }

        detail::trace_step(opts, t, 4, "server aligns client tokens to its vocabulary");
        detail::trace_step(opts, t, 5, "server selects knowledge (DualMinCE)");
        detail::trace_step(opts, t, 6,
                           server_trains ? "server distills selected knowledge"
                                         : "server update skipped (frozen)");
        ServerUpdateResult server_result = detail::with_context(
            t, 0, [&] { return server_update(w, client_sets, t, opts, server_trains); });
        detail::trace_step(opts, t, 7, "server extracts its knowledge set");

        detail::trace_step(opts, t, 8, "server broadcasts its knowledge set");
        std::vector<uint8_t> broadcast = serialize_knowledge(server_result.s0);
        if (opts.traffic) opts.traffic->push_back(broadcast);
        uint64_t download_floats = payload_size(server_result.s0).float_count;

        detail::trace_step(opts, t, 9, "clients align server tokens to their vocabularies");
        detail::trace_step(opts, t, 10, "clients select knowledge (DualMinCE)");
        detail::trace_step(opts, t, 11, "clients distill selected knowledge");
        std::vector<ClientPhase2Result> phase2(static_cast<size_t>(cfg.clients));
        detail::for_each_client(cfg.clients, opts.workers, [&](int k) {
            detail::with_context(t, k + 1, [&] {
                KnowledgeSet s0 = deserialize_knowledge(broadcast);
                phase2[static_cast<size_t>(k)] = client_update2(w, k, s0, t, opts);
            });
        });

        RoundLog log;
        log.round = t;
        ParticipantRound sr;
        sr.participant = 0;
        sr.role = Role::server;
        sr.ft_loss = server_result.stats.ft;
        sr.kd_loss = server_result.stats.kd;
        sr.combined_loss = server_result.stats.combined;
        sr.selective_size = server_result.selective_size;
        EvalMetrics sm = evaluate(w.server.model, w.server.eval_enc);
        sr.eval_accuracy = sm.accuracy;
        sr.eval_perplexity = sm.perplexity;
        log.participants.push_back(sr);
        for (int k = 0; k < cfg.clients; ++k) {
            const auto& c = w.clients[static_cast<size_t>(k)];
            ParticipantRound cr;
            cr.participant = c.id;
            cr.role = Role::client;
            cr.private_loss = phase1[static_cast<size_t>(k)].private_loss;
            cr.ft_loss = phase2[static_cast<size_t>(k)].stats.ft;
            cr.kd_loss = phase2[static_cast<size_t>(k)].stats.kd;
            cr.combined_loss = phase2[static_cast<size_t>(k)].stats.combined;
            cr.selective_size = phase2[static_cast<size_t>(k)].selective_size;
            cr.upload_floats =
                payload_size(phase1[static_cast<size_t>(k)].knowledge).float_count;
            cr.download_floats = download_floats;
            EvalMetrics m = evaluate(c.model, c.eval_enc);
            cr.eval_accuracy = m.accuracy;
            cr.eval_perplexity = m.perplexity;
            log.participants.push_back(cr);
        }
        result.rounds.push_back(std::move(log));
        if (opts.on_round_end) opts.on_round_end(t);
    }
    result.final_metrics = collect_final_metrics(w);
    return result;
}

// ---------------------------------------------------------------------------
// Baselines

inline void check_fedavg_world(const World& w) {
    for (const auto& c : w.clients) {
        const auto& first = w.clients.front();
        bool same = c.model.width() == first.model.width() &&
                    c.model.adapter.rank == first.model.adapter.rank &&
                    c.model.adapter.alpha == first.model.adapter.alpha &&
                    c.model.tokenizer->vocab.id == first.model.tokenizer->vocab.id;
        if (!same)
            throw ConfigError(
                "mode: fedavg requires identical client architectures and tokenizers");
    }
}

// Uniform elementwise mean of the client adapters, assigned back to everyone.
inline void fedavg_average(std::vector<Participant>& clients) {
    Matrix mean_a = clients.front().model.adapter.A;
    Matrix mean_b = clients.front().model.adapter.B;
    for (size_t k = 1; k < clients.size(); ++k) {
        axpy(mean_a, 1.0, clients[k].model.adapter.A);
        axpy(mean_b, 1.0, clients[k].model.adapter.B);
    }
    const double count = static_cast<double>(clients.size());
    for (double& x : mean_a.a) x /= count;
    for (double& x : mean_b.a) x /= count;
    for (auto& c : clients) {
        c.model.adapter.A = mean_a;
        c.model.adapter.B = mean_b;
    }
}

inline RunResult run_baseline(World& w, const RunOptions& opts = {}) {
    const FedConfig& cfg = w.cfg;
    RunResult result;

    auto log_round = [&](int t, const std::vector<ParticipantRound>& rows) {
        RoundLog log;
        log.round = t;
        log.participants = rows;
        result.rounds.push_back(std::move(log));
    };
    auto eval_row = [&](const Participant& p, ParticipantRound row) {
        EvalMetrics m = evaluate(p.model, p.eval_enc);
        row.participant = p.id;
        row.role = p.role;
        row.eval_accuracy = m.accuracy;
        row.eval_perplexity = m.perplexity;
        return row;
    };

    switch (cfg.mode) {
        case Mode::zero_shot:
            break;  // no training at all

        case Mode::standalone: {
            for (int t = 0; t < cfg.rounds; ++t) {
                std::vector<double> losses(static_cast<size_t>(cfg.clients));
                detail::for_each_client(cfg.clients, opts.workers, [&](int k) {
                    detail::with_context(t, k + 1, [&] {
                        Participant& c = w.clients[static_cast<size_t>(k)];
                        Rng rng = make_rng(cfg.seed, Stream::private_epoch,
                                           static_cast<uint64_t>(c.id), static_cast<uint64_t>(t));
                        EpochStats s = train_epochs(c.model, c.opt, c.private_enc, {}, 1.0,
                                                    cfg.client_epochs, cfg.batch_size, rng);
                        losses[static_cast<size_t>(k)] = s.ft;
                    });
                });
                std::vector<ParticipantRound> rows;
                rows.push_back(eval_row(w.server, {}));
                for (int k = 0; k < cfg.clients; ++k) {
                    ParticipantRound row;
                    row.private_loss = losses[static_cast<size_t>(k)];
                    rows.push_back(eval_row(w.clients[static_cast<size_t>(k)], row));
                }
                log_round(t, rows);
            }
            break;
        }

        case Mode::centralized: {
            // the server trains on the union of all private sets and the
            // public set, encoded with its own tokenizer
            std::vector<EncodedSample> combined = w.server.public_enc;
            for (const auto& d : w.data.private_sets) {
                auto enc = encode_dataset(d, *w.server.model.tokenizer);
                combined.insert(combined.end(), enc.begin(), enc.end());
            }
            for (int t = 0; t < cfg.rounds; ++t) {
                Rng rng = make_rng(cfg.seed, Stream::public_epoch, 0, static_cast<uint64_t>(t));
                EpochStats s = detail::with_context(t, 0, [&] {
                    return train_epochs(w.server.model, w.server.opt, combined, {}, 1.0,
                                        cfg.server_epochs, cfg.batch_size, rng);
                });
                std::vector<ParticipantRound> rows;
                ParticipantRound sr;
                sr.ft_loss = s.ft;
                sr.combined_loss = s.combined;
                rows.push_back(eval_row(w.server, sr));
                for (const auto& c : w.clients) rows.push_back(eval_row(c, {}));
                log_round(t, rows);
            }
            break;
        }

        case Mode::fedavg: {
            check_fedavg_world(w);
            const uint64_t adapter_floats =
                w.clients.front().model.adapter_param_count();
            for (int t = 0; t < cfg.rounds; ++t) {
                std::vector<double> losses(static_cast<size_t>(cfg.clients));
                detail::for_each_client(cfg.clients, opts.workers, [&](int k) {
                    detail::with_context(t, k + 1, [&] {
                        Participant& c = w.clients[static_cast<size_t>(k)];
                        Rng rng = make_rng(cfg.seed, Stream::private_epoch,
                                           static_cast<uint64_t>(c.id), static_cast<uint64_t>(t));
                        EpochStats s = train_epochs(c.model, c.opt, c.private_enc, {}, 1.0,
                                                    cfg.client_epochs, cfg.batch_size, rng);
                        losses[static_cast<size_t>(k)] = s.ft;
                    });
                });
                fedavg_average(w.clients);
                std::vector<ParticipantRound> rows;
                rows.push_back(eval_row(w.server, {}));
                for (int k = 0; k < cfg.clients; ++k) {
                    ParticipantRound row;
                    row.private_loss = losses[static_cast<size_t>(k)];
                    row.upload_floats = adapter_floats;
                    row.download_floats = adapter_floats;
                    rows.push_back(eval_row(w.clients[static_cast<size_t>(k)], row));
                }
                log_round(t, rows);
            }
            break;
        }

        case Mode::fedmkt:
        case Mode::llm2slm:
            return run_fedmkt(w, opts);
    }

    result.final_metrics = collect_final_metrics(w);
    return result;
}

inline RunResult run(World& w, const RunOptions& opts = {}) {
    return w.cfg.mode == Mode::fedmkt ? run_fedmkt(w, opts) : run_baseline(w, opts);
}

// ---------------------------------------------------------------------------
// Communication accounting

struct CommunicationCost {
    uint64_t upload_floats = 0;    // clients -> server
    uint64_t download_floats = 0;  // server -> clients
    uint64_t total_floats() const { return upload_floats + download_floats; }
};

inline CommunicationCost communication_cost(const std::vector<RoundLog>& rounds) {
    CommunicationCost out;
    for (const auto& r : rounds)
        for (const auto& p : r.participants) {
            out.upload_floats += p.upload_floats;
            out.download_floats += p.download_floats;
        }
    return out;
}

}  // namespace fedmkt
