#pragma once

// Knowledge sets (per-public-sample loss + sparse top-K logits), the
// DualMinCE selection rule, and the bit-exact cross-party wire format. A
// knowledge set is the only data structure that ever crosses a participant
// boundary.

#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmkt/align.hpp"
#include "fedmkt/io.hpp"
#include "fedmkt/model.hpp"

namespace fedmkt {

// Losses and logit values are 32-bit on the wire and in memory, so a
// round-tripped set is identical to the original bit for bit.
struct KnowledgeRecord {
    int64_t sample_id = 0;
    float loss = 0.0f;
    SparseLogits logits;

    bool operator==(const KnowledgeRecord& o) const {
        return sample_id == o.sample_id &&
               std::bit_cast<uint32_t>(loss) == std::bit_cast<uint32_t>(o.loss) &&
               logits == o.logits;
    }
};

struct KnowledgeSet {
    int origin = 0;  // 0 = server, 1..K = clients
    int round = 0;
    int k_top = 0;
    std::string vocab_id;
    std::vector<KnowledgeRecord> records;  // one per public sample, sample_id ascending

    bool operator==(const KnowledgeSet&) const = default;
};

inline void validate_knowledge_set(const KnowledgeSet& s) {
    int64_t prev = std::numeric_limits<int64_t>::min();
    for (const auto& r : s.records) {
        if (r.sample_id <= prev)
            throw CorruptError("knowledge set sample_ids must be strictly increasing");
        prev = r.sample_id;
        if (!std::isfinite(r.loss) || r.loss < 0.0f)
            throw CorruptError("knowledge set loss must be finite and >= 0");
        for (const auto& p : r.logits.positions) {
            if (p.entries.empty()) throw CorruptError("knowledge position without entries");
            std::set<int32_t> ids;
            for (size_t e = 0; e < p.entries.size(); ++e) {
                if (!ids.insert(p.entries[e].token_id).second)
                    throw CorruptError("duplicate token id within a position");
                if (!std::isfinite(p.entries[e].logit))
                    throw CorruptError("non-finite logit value");
                if (e > 0 && p.entries[e].logit > p.entries[e - 1].logit)
                    throw CorruptError("position entries not sorted by descending logit");
            }
        }
    }
}

struct SelectiveRecord {
    int64_t sample_id = 0;
    int source = 0;          // origin the logits were taken from
    SparseLogits teacher;
};

struct SelectiveKnowledgeSet {
    std::vector<SelectiveRecord> records;  // subset of public sample_ids, ascending
};

// ---------------------------------------------------------------------------

// One knowledge record per public sample, in sample_id order. `encoded`
// carries each sample's token sequence under the owner's tokenizer.
struct EncodedSample {
    int64_t sample_id = 0;
    std::vector<int> ids;
};

inline KnowledgeSet build_knowledge_set(const LanguageModel& model,
                                        const std::vector<EncodedSample>& encoded_public,
                                        int k_top, int origin, int round) {
    KnowledgeSet set;
    set.origin = origin;
    set.round = round;
    set.k_top = k_top;
    set.vocab_id = model.tokenizer->vocab.id;
    set.records.reserve(encoded_public.size());
    for (const auto& s : encoded_public) {
        auto rec = knowledge_record(model, s.ids, k_top);
        set.records.push_back({s.sample_id, static_cast<float>(rec.loss), std::move(rec.logits)});
    }
    validate_knowledge_set(set);
    return set;
}

// DualMinCE: for each public sample pick the candidate with the smallest
// loss (ties to the lowest origin id) and admit its logits only when that
// loss is strictly below the recipient's own. Candidate logits must already
// live in the recipient's vocabulary space.
inline SelectiveKnowledgeSet dual_min_ce(const std::vector<double>& local_losses,
                                         const std::vector<const KnowledgeSet*>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("dual_min_ce: no candidate sets");
    const size_t n = local_losses.size();
    for (const auto* c : candidates)
        if (c->records.size() != n)
            throw std::invalid_argument("dual_min_ce: candidate does not cover the public set");
    for (size_t i = 0; i < n; ++i) {
        int64_t id = candidates[0]->records[i].sample_id;
        for (const auto* c : candidates)
            if (c->records[i].sample_id != id)
                throw std::invalid_argument("dual_min_ce: sample_id mismatch across candidates");
    }

    SelectiveKnowledgeSet out;
    for (size_t i = 0; i < n; ++i) {
        const KnowledgeSet* best = nullptr;
        for (const auto* c : candidates) {
            if (best == nullptr) {
                best = c;
                continue;
            }
            double cl = c->records[i].loss, bl = best->records[i].loss;
            if (cl < bl || (cl == bl && c->origin < best->origin)) best = c;
        }
        if (static_cast<double>(best->records[i].loss) < local_losses[i])
            out.records.push_back(
                {best->records[i].sample_id, best->origin, best->records[i].logits});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wire format
//
//   magic    8 bytes "FMKTKSET"
//   version  u32 (1)
//   origin   u32
//   round    u32
//   N        u64 record count
//   k_top    u32
//   vocab id length-prefixed string
//   record:  sample_id u64, loss f32, position count u32,
//            position: realized id u32, entry count u32, (id u32, logit f32)*

inline constexpr char kKnowledgeMagic[8] = {'F', 'M', 'K', 'T', 'K', 'S', 'E', 'T'};

inline std::vector<uint8_t> serialize_knowledge(const KnowledgeSet& set) {
    ByteWriter w;
    w.bytes(kKnowledgeMagic, 8);
    w.u32(1);
    w.u32(static_cast<uint32_t>(set.origin));
    w.u32(static_cast<uint32_t>(set.round));
    w.u64(set.records.size());
    w.u32(static_cast<uint32_t>(set.k_top));
    w.str(set.vocab_id);
    for (const auto& r : set.records) {
        w.u64(static_cast<uint64_t>(r.sample_id));
        w.f32(r.loss);
        w.u32(static_cast<uint32_t>(r.logits.positions.size()));
        for (const auto& p : r.logits.positions) {
            w.u32(static_cast<uint32_t>(p.realized_id));
            w.u32(static_cast<uint32_t>(p.entries.size()));
            for (const auto& e : p.entries) {
                w.u32(static_cast<uint32_t>(e.token_id));
                w.f32(e.logit);
            }
        }
    }
    return w.take();
}

inline KnowledgeSet deserialize_knowledge(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kKnowledgeMagic, 8) != 0)
        throw BadMagicError("not a knowledge set stream");
    uint32_t version = r.u32();
    if (version != 1)
        throw BadVersionError("unsupported knowledge set version " + std::to_string(version));

    KnowledgeSet set;
    set.origin = static_cast<int>(r.u32());
    set.round = static_cast<int>(r.u32());
    uint64_t n = r.u64();
    set.k_top = static_cast<int>(r.u32());
    set.vocab_id = r.str();
    set.records.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        KnowledgeRecord rec;
        rec.sample_id = static_cast<int64_t>(r.u64());
        rec.loss = r.f32();
        uint32_t positions = r.u32();
        rec.logits.positions.resize(positions);
        for (uint32_t p = 0; p < positions; ++p) {
            auto& pos = rec.logits.positions[p];
            pos.realized_id = static_cast<int32_t>(r.u32());
            uint32_t entries = r.u32();
            pos.entries.reserve(entries);
            for (uint32_t e = 0; e < entries; ++e) {
                int32_t id = static_cast<int32_t>(r.u32());
                float logit = r.f32();
                pos.entries.push_back({id, logit});
            }
        }
        set.records.push_back(std::move(rec));
    }
    if (!r.at_end()) throw CorruptError("trailing bytes after knowledge set payload");
    validate_knowledge_set(set);
    return set;
}

struct PayloadSize {
    uint64_t float_count = 0;  // transmitted logit values
    uint64_t byte_count = 0;   // full serialized size
};

inline PayloadSize payload_size(const KnowledgeSet& set) {
    PayloadSize out;
    out.byte_count = 8 + 4 + 4 + 4 + 8 + 4 + 4 + set.vocab_id.size();
    for (const auto& r : set.records) {
        out.byte_count += 8 + 4 + 4;
        for (const auto& p : r.logits.positions) {
            out.byte_count += 4 + 4 + 8ull * p.entries.size();
            out.float_count += p.entries.size();
        }
    }
    return out;
}

// Closed form for a full-width set: N samples x S positions x K entries.
inline uint64_t expected_float_count(uint64_t n_samples, uint64_t positions, uint64_t k_top) {
    return n_samples * positions * k_top;
}

}  // namespace fedmkt
