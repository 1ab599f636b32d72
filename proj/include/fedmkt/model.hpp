#pragma once

// Tiny trainable causal language models: a frozen base (embedding, one
// nonlinear hidden transform, output projection) plus a low-rank adapter on
// the hidden transform. Only the adapter trains; gradients are exact and
// hand-derived. All arithmetic is double precision.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmkt/align.hpp"
#include "fedmkt/io.hpp"
#include "fedmkt/matrix.hpp"
#include "fedmkt/rng.hpp"
#include "fedmkt/tokenizer.hpp"

namespace fedmkt {

struct LowRankAdapter {
    Matrix A;  // r x d
    Matrix B;  // d x r, zero at init so the adapted model equals the base
    int rank = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
};

struct LanguageModel {
    // frozen base
    Matrix embed;   // V x d
    Matrix hidden;  // d x d
    Matrix output;  // V x d (row per vocabulary token)

    LowRankAdapter adapter;
    std::shared_ptr<const TokenizerSpec> tokenizer;
    int context_window = 0;

    int vocab_size() const { return static_cast<int>(embed.rows); }
    int width() const { return static_cast<int>(embed.cols); }

    size_t base_param_count() const { return embed.size() + hidden.size() + output.size(); }
    size_t adapter_param_count() const { return adapter.A.size() + adapter.B.size(); }
};

inline uint64_t base_hash(const LanguageModel& m) {
    uint64_t h = matrix_hash(m.embed);
    h = matrix_hash(m.hidden, h);
    h = matrix_hash(m.output, h);
    return h;
}

inline uint64_t adapter_hash(const LanguageModel& m) {
    return matrix_hash(m.adapter.B, matrix_hash(m.adapter.A));
}

inline LanguageModel make_language_model(std::shared_ptr<const TokenizerSpec> tokenizer, int width,
                                         int rank, double alpha, int context_window,
                                         uint64_t seed) {
    if (rank <= 0 || rank > width) throw std::invalid_argument("adapter rank must be in [1, d]");
    const int V = tokenizer->vocab.size();
    const int d = width;

    LanguageModel m;
    m.tokenizer = std::move(tokenizer);
    m.context_window = context_window;
    m.embed = Matrix(static_cast<size_t>(V), static_cast<size_t>(d));
    m.hidden = Matrix(static_cast<size_t>(d), static_cast<size_t>(d));
    m.output = Matrix(static_cast<size_t>(V), static_cast<size_t>(d));
    m.adapter.A = Matrix(static_cast<size_t>(rank), static_cast<size_t>(d));
    m.adapter.B = Matrix(static_cast<size_t>(d), static_cast<size_t>(rank));
    m.adapter.rank = rank;
    m.adapter.alpha = alpha;

    Rng rng = make_rng(seed, Stream::model_init);
    const double ws = 1.5 / std::sqrt(static_cast<double>(d));
    const double os = std::sqrt(3.0 / static_cast<double>(d));
    for (double& x : m.embed.a) x = uniform_double(rng, -1.0, 1.0);
    for (double& x : m.hidden.a) x = uniform_double(rng, -ws, ws);
    for (double& x : m.output.a) x = uniform_double(rng, -os, os);
    for (double& x : m.adapter.A.a) x = uniform_double(rng, -0.5, 0.5);
    // B stays zero
    return m;
}

namespace detail {

// per-position activations
struct Activation {
    std::vector<double> embed;   // d
    std::vector<double> code;    // r  (A e)
    std::vector<double> hidden;  // d  (tanh of adapted transform)
};

inline void forward_position(const LanguageModel& m, int id, Activation& act, double* logits) {
    const int d = m.width();
    const int r = m.adapter.rank;
    if (id < 0 || id >= m.vocab_size())
        throw std::out_of_range("token id out of range: " + std::to_string(id));

    act.embed.assign(m.embed.row(static_cast<size_t>(id)),
                     m.embed.row(static_cast<size_t>(id)) + d);
    act.code.resize(static_cast<size_t>(r));
    matvec(m.adapter.A, act.embed.data(), act.code.data());

    act.hidden.resize(static_cast<size_t>(d));
    std::vector<double> z(static_cast<size_t>(d));
    matvec(m.hidden, act.embed.data(), z.data());
    const double s = m.adapter.scaling();
    std::vector<double> bc(static_cast<size_t>(d));
    matvec(m.adapter.B, act.code.data(), bc.data());
    for (int i = 0; i < d; ++i) z[static_cast<size_t>(i)] += s * bc[static_cast<size_t>(i)];
    for (int i = 0; i < d; ++i) act.hidden[static_cast<size_t>(i)] = std::tanh(z[static_cast<size_t>(i)]);

    matvec(m.output, act.hidden.data(), logits);
}

// log softmax denominator, numerically stable
inline double log_sum_exp(const double* logits, int n) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::exp(logits[i] - mx);
    return mx + std::log(acc);
}

}  // namespace detail

// Dense per-position logits; row t predicts token t+1 of the underlying
// sequence. Deterministic given parameters.
inline Matrix forward(const LanguageModel& m, std::span<const int> ids) {
    if (static_cast<int>(ids.size()) > m.context_window)
        throw std::invalid_argument("sequence length " + std::to_string(ids.size()) +
                                    " exceeds context window " +
                                    std::to_string(m.context_window));
    Matrix logits(ids.size(), static_cast<size_t>(m.vocab_size()));
    detail::Activation act;
    for (size_t t = 0; t < ids.size(); ++t)
        detail::forward_position(m, ids[t], act, logits.row(t));
    return logits;
}

// Base-only logits (adapter ignored); used to check the zero-init identity.
inline Matrix forward_base(const LanguageModel& m, std::span<const int> ids) {
    LanguageModel base = m;
    base.adapter.B.fill(0.0);
    return forward(base, ids);
}

// Mean over positions of -log softmax(logits)[target]. Doubles as the task
// loss for private fine-tuning.
inline double ce_loss(const LanguageModel& m, std::span<const int> input,
                      std::span<const int> target) {
    if (input.size() != target.size())
        throw std::invalid_argument("ce_loss: input/target length mismatch");
    if (input.empty()) throw std::invalid_argument("ce_loss: empty sample");
    Matrix logits = forward(m, input);
    const int V = m.vocab_size();
    double total = 0.0;
    for (size_t t = 0; t < input.size(); ++t) {
        const double* row = logits.row(t);
        double lse = detail::log_sum_exp(row, V);
        int y = target[t];
        if (y < 0 || y >= V) throw std::out_of_range("ce_loss: target id out of range");
        total += lse - row[y];
    }
    return total / static_cast<double>(input.size());
}

// Distillation loss against sparse teacher logits: the teacher distribution
// is the softmax over its own support, the student log-probabilities come
// from the full-vocabulary softmax. Temperature is fixed at 1.
inline double kd_loss(const LanguageModel& m, std::span<const int> input,
                      const SparseLogits& teacher) {
    if (teacher.positions.size() != input.size())
        throw std::invalid_argument("kd_loss: teacher/input position mismatch");
    if (input.empty()) throw std::invalid_argument("kd_loss: empty sample");
    Matrix logits = forward(m, input);
    const int V = m.vocab_size();
    double total = 0.0;
    for (size_t t = 0; t < input.size(); ++t) {
        const auto& entries = teacher.positions[t].entries;
        if (entries.empty()) throw std::invalid_argument("kd_loss: empty teacher support");
        double tmax = entries[0].logit;
        for (const auto& e : entries) tmax = std::max(tmax, static_cast<double>(e.logit));
        double z = 0.0;
        for (const auto& e : entries) z += std::exp(static_cast<double>(e.logit) - tmax);
        const double* row = logits.row(t);
        double lse = detail::log_sum_exp(row, V);
        for (const auto& e : entries) {
            if (e.token_id < 0 || e.token_id >= V)
                throw std::out_of_range("kd_loss: teacher id out of range");
            double q = std::exp(static_cast<double>(e.logit) - tmax) / z;
            total += q * (lse - row[e.token_id]);
        }
    }
    return total / static_cast<double>(input.size());
}

// ---------------------------------------------------------------------------
// Gradients (adapter parameters only; base gradients are never materialized)

struct AdapterGrad {
    Matrix dA;  // r x d
    Matrix dB;  // d x r

    explicit AdapterGrad(const LowRankAdapter& a)
        : dA(a.A.rows, a.A.cols), dB(a.B.rows, a.B.cols) {}

    double squared_norm() const {
        double acc = 0.0;
        for (double x : dA.a) acc += x * x;
        for (double x : dB.a) acc += x * x;
        return acc;
    }
};

namespace detail {

// Backpropagates position deltas (dL/dlogits) into the adapter factors.
// delta_fn(t, logits_row, delta_out) must fill delta_out with the
// already-weighted dL/dlogits for position t and return the position's
// weighted loss contribution.
template <typename DeltaFn>
double backward_sample(const LanguageModel& m, std::span<const int> input, DeltaFn&& delta_fn,
                       AdapterGrad& grad) {
    const int d = m.width();
    const int V = m.vocab_size();
    const double s = m.adapter.scaling();

    Activation act;
    std::vector<double> logits(static_cast<size_t>(V));
    std::vector<double> delta(static_cast<size_t>(V));
    std::vector<double> dh(static_cast<size_t>(d));
    std::vector<double> dz(static_cast<size_t>(d));
    std::vector<double> btdz(static_cast<size_t>(m.adapter.rank));

    double loss = 0.0;
    for (size_t t = 0; t < input.size(); ++t) {
        forward_position(m, input[t], act, logits.data());
        loss += delta_fn(t, logits.data(), delta.data());

        matvec_t(m.output, delta.data(), dh.data());
        for (int i = 0; i < d; ++i) {
            double h = act.hidden[static_cast<size_t>(i)];
            dz[static_cast<size_t>(i)] = dh[static_cast<size_t>(i)] * (1.0 - h * h);
        }
        add_outer(grad.dB, s, dz.data(), act.code.data());
        matvec_t(m.adapter.B, dz.data(), btdz.data());
        add_outer(grad.dA, s, btdz.data(), act.embed.data());
    }
    return loss;
}

inline void softmax_into(const double* logits, int n, double* out) {
    double lse = log_sum_exp(logits, n);
    for (int i = 0; i < n; ++i) out[i] = std::exp(logits[i] - lse);
}

}  // namespace detail

// One training sample for the KD term: the recipient's own token sequence
// plus teacher logits over its prediction positions.
struct KdExample {
    const std::vector<int>* ids;        // full token sequence, length n
    const SparseLogits* teacher;        // n-1 positions
};

// Batch CE over full sequences (input = ids[:-1], target = ids[1:]),
// averaged per sample then over the batch.
inline double ce_loss_and_grad(const LanguageModel& m,
                               std::span<const std::vector<int>* const> batch, AdapterGrad& grad) {
    if (batch.empty()) return 0.0;
    const int V = m.vocab_size();
    double total = 0.0;
    for (const auto* ids : batch) {
        if (ids->size() < 2) throw std::invalid_argument("training sample needs >= 2 tokens");
        std::span<const int> input(ids->data(), ids->size() - 1);
        const double w = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(input.size()));
        total += detail::backward_sample(
            m, input,
            [&](size_t t, const double* logits, double* delta) {
                detail::softmax_into(logits, V, delta);
                int y = (*ids)[t + 1];
                double lse = detail::log_sum_exp(logits, V);
                double loss = w * (lse - logits[y]);
                for (int v = 0; v < V; ++v) delta[v] *= w;
                delta[y] -= w;
                return loss;
            },
            grad);
    }
    return total;
}

inline double kd_loss_and_grad(const LanguageModel& m, std::span<const KdExample> batch,
                               AdapterGrad& grad) {
    if (batch.empty()) return 0.0;
    const int V = m.vocab_size();
    std::vector<double> q(static_cast<size_t>(V));
    double total = 0.0;
    for (const auto& ex : batch) {
        if (ex.ids->size() < 2) throw std::invalid_argument("training sample needs >= 2 tokens");
        std::span<const int> input(ex.ids->data(), ex.ids->size() - 1);
        if (ex.teacher->positions.size() != input.size())
            throw std::invalid_argument("kd example: teacher/input position mismatch");
        const double w = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(input.size()));
        total += detail::backward_sample(
            m, input,
            [&](size_t t, const double* logits, double* delta) {
                const auto& entries = ex.teacher->positions[t].entries;
                if (entries.empty()) throw std::invalid_argument("kd example: empty teacher support");
                double tmax = entries[0].logit;
                for (const auto& e : entries) tmax = std::max(tmax, static_cast<double>(e.logit));
                double z = 0.0;
                for (const auto& e : entries) z += std::exp(static_cast<double>(e.logit) - tmax);
                std::fill(q.begin(), q.end(), 0.0);
                for (const auto& e : entries)
                    q[static_cast<size_t>(e.token_id)] =
                        std::exp(static_cast<double>(e.logit) - tmax) / z;

                double lse = detail::log_sum_exp(logits, V);
                double loss = 0.0;
                detail::softmax_into(logits, V, delta);
                for (int v = 0; v < V; ++v) {
                    if (q[static_cast<size_t>(v)] != 0.0)
                        loss += q[static_cast<size_t>(v)] * (lse - logits[v]);
                    delta[v] = w * (delta[v] - q[static_cast<size_t>(v)]);
                }
                return w * loss;
            },
            grad);
    }
    return total;
}

struct CombinedLoss {
    double ft = 0.0;
    double kd = 0.0;
    double combined = 0.0;
};

// lambda * CE(batch) + (1 - lambda) * KD(kd_batch). The endpoints bypass the
// other term entirely so lambda = 1 is bitwise identical to a CE-only path
// and lambda = 0 to a KD-only path. An empty KD batch contributes zero.
inline CombinedLoss combined_loss_and_grad(const LanguageModel& m,
                                           std::span<const std::vector<int>* const> ce_batch,
                                           std::span<const KdExample> kd_batch, double lambda,
                                           AdapterGrad& grad) {
    CombinedLoss out;
    if (lambda == 1.0 || (kd_batch.empty() && lambda > 0.0)) {
        out.ft = ce_loss_and_grad(m, ce_batch, grad);
        if (lambda != 1.0) {
            for (double& x : grad.dA.a) x *= lambda;
            for (double& x : grad.dB.a) x *= lambda;
        }
        out.combined = lambda == 1.0 ? out.ft : lambda * out.ft;
        return out;
    }
    if (lambda == 0.0) {
        out.kd = kd_loss_and_grad(m, kd_batch, grad);
        out.combined = out.kd;
        return out;
    }
    AdapterGrad kd_grad(m.adapter);
    out.ft = ce_loss_and_grad(m, ce_batch, grad);
    out.kd = kd_loss_and_grad(m, kd_batch, kd_grad);
    for (size_t i = 0; i < grad.dA.a.size(); ++i)
        grad.dA.a[i] = lambda * grad.dA.a[i] + (1.0 - lambda) * kd_grad.dA.a[i];
    for (size_t i = 0; i < grad.dB.a.size(); ++i)
        grad.dB.a[i] = lambda * grad.dB.a[i] + (1.0 - lambda) * kd_grad.dB.a[i];
    out.combined = lambda * out.ft + (1.0 - lambda) * out.kd;
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer: decoupled weight decay, adaptive moments, bias correction,
// global-norm gradient clipping.

struct OptimizerState {
    Matrix mA, vA, mB, vB;
    int64_t step = 0;
    double lr = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double max_grad_norm = 1.0;
};

inline OptimizerState make_optimizer(const LowRankAdapter& adapter, double lr,
                                     double weight_decay = 0.1, double max_grad_norm = 1.0) {
    OptimizerState s;
    s.mA = Matrix(adapter.A.rows, adapter.A.cols);
    s.vA = Matrix(adapter.A.rows, adapter.A.cols);
    s.mB = Matrix(adapter.B.rows, adapter.B.cols);
    s.vB = Matrix(adapter.B.rows, adapter.B.cols);
    s.lr = lr;
    s.weight_decay = weight_decay;
    s.max_grad_norm = max_grad_norm;
    return s;
}

inline void optimizer_step(LowRankAdapter& adapter, const AdapterGrad& grad, OptimizerState& st) {
    for (double x : grad.dA.a)
        if (!std::isfinite(x)) throw std::runtime_error("non-finite gradient (A factor)");
    for (double x : grad.dB.a)
        if (!std::isfinite(x)) throw std::runtime_error("non-finite gradient (B factor)");
    if (!adapter.A.same_shape(grad.dA) || !adapter.B.same_shape(grad.dB))
        throw std::invalid_argument("optimizer_step: gradient shape mismatch");

    double norm = std::sqrt(grad.squared_norm());
    double clip = (norm > st.max_grad_norm && norm > 0.0) ? st.max_grad_norm / norm : 1.0;

    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));

    auto update = [&](Matrix& p, Matrix& mm, Matrix& vv, const Matrix& g) {
        for (size_t i = 0; i < p.a.size(); ++i) {
            double gi = g.a[i] * clip;
            mm.a[i] = st.beta1 * mm.a[i] + (1.0 - st.beta1) * gi;
            vv.a[i] = st.beta2 * vv.a[i] + (1.0 - st.beta2) * gi * gi;
            double mhat = mm.a[i] / bc1;
            double vhat = vv.a[i] / bc2;
            p.a[i] -= st.lr * (mhat / (std::sqrt(vhat) + st.eps) + st.weight_decay * p.a[i]);
        }
    };
    update(adapter.A, st.mA, st.vA, grad.dA);
    update(adapter.B, st.mB, st.vB, grad.dB);
}

// ---------------------------------------------------------------------------
// Knowledge records: per-sample loss plus top-K sparse logits

struct KnowledgeRecordResult {
    double loss = 0.0;
    SparseLogits logits;
};

// ids is the full token sequence; positions cover predictions of tokens
// 1..n-1. Top-K selection orders by descending logit, then ascending id.
inline KnowledgeRecordResult knowledge_record(const LanguageModel& m, const std::vector<int>& ids,
                                              int k_top) {
    if (k_top < 1) throw std::invalid_argument("k_top must be >= 1");
    if (ids.size() < 2) throw std::invalid_argument("knowledge_record: sequence too short");
    std::span<const int> input(ids.data(), ids.size() - 1);
    std::span<const int> target(ids.data() + 1, ids.size() - 1);

    Matrix logits = forward(m, input);
    const int V = m.vocab_size();
    const int k = std::min(k_top, V);

    KnowledgeRecordResult out;
    out.logits.positions.resize(input.size());
    double total = 0.0;
    std::vector<std::pair<double, int>> scored(static_cast<size_t>(V));
    for (size_t t = 0; t < input.size(); ++t) {
        const double* row = logits.row(t);
        double lse = detail::log_sum_exp(row, V);
        total += lse - row[target[t]];

        for (int v = 0; v < V; ++v) scored[static_cast<size_t>(v)] = {row[v], v};
        auto cmp = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        };
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), cmp);

        auto& pos = out.logits.positions[t];
        pos.realized_id = target[t];
        pos.entries.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i)
            pos.entries.push_back({scored[static_cast<size_t>(i)].second,
                                   static_cast<float>(scored[static_cast<size_t>(i)].first)});
    }
    out.loss = total / static_cast<double>(input.size());
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: documented binary layout, bit-exact round trip.
//
//   magic   8 bytes "FMKTCKPT"
//   version u32 (1)
//   V, d, r u32
//   alpha   f64
//   context u32
//   vocab id    length-prefixed string (tokenizer reference)
//   embed, hidden, output, A, B   row-major f64 arrays

inline constexpr char kCheckpointMagic[8] = {'F', 'M', 'K', 'T', 'C', 'K', 'P', 'T'};

inline std::vector<uint8_t> save_checkpoint(const LanguageModel& m) {
    ByteWriter w;
    w.bytes(kCheckpointMagic, 8);
    w.u32(1);
    w.u32(static_cast<uint32_t>(m.vocab_size()));
    w.u32(static_cast<uint32_t>(m.width()));
    w.u32(static_cast<uint32_t>(m.adapter.rank));
    w.f64(m.adapter.alpha);
    w.u32(static_cast<uint32_t>(m.context_window));
    w.str(m.tokenizer->vocab.id);
    for (const Matrix* mat : {&m.embed, &m.hidden, &m.output, &m.adapter.A, &m.adapter.B})
        for (double x : mat->a) w.f64(x);
    return w.take();
}

inline LanguageModel load_checkpoint(const std::vector<uint8_t>& bytes,
                                     std::shared_ptr<const TokenizerSpec> tokenizer) {
    ByteReader r(bytes);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw BadMagicError("not a model checkpoint");
    uint32_t version = r.u32();
    if (version != 1) throw BadVersionError("unsupported checkpoint version");

    LanguageModel m;
    uint32_t V = r.u32(), d = r.u32(), rank = r.u32();
    m.adapter.alpha = r.f64();
    m.adapter.rank = static_cast<int>(rank);
    m.context_window = static_cast<int>(r.u32());
    std::string vocab_id = r.str();
    if (tokenizer->vocab.id != vocab_id)
        throw CorruptError("checkpoint references vocabulary '" + vocab_id +
                           "' but tokenizer provides '" + tokenizer->vocab.id + "'");
    if (static_cast<int>(V) != tokenizer->vocab.size())
        throw CorruptError("checkpoint vocabulary size mismatch");
    m.tokenizer = std::move(tokenizer);

    m.embed = Matrix(V, d);
    m.hidden = Matrix(d, d);
    m.output = Matrix(V, d);
    m.adapter.A = Matrix(rank, d);
    m.adapter.B = Matrix(d, rank);
    for (Matrix* mat : {&m.embed, &m.hidden, &m.output, &m.adapter.A, &m.adapter.B})
        for (double& x : mat->a) x = r.f64();
    if (!r.at_end()) throw CorruptError("trailing bytes after checkpoint payload");
    return m;
}

}  // namespace fedmkt
