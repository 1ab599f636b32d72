#pragma once

// Run configuration: a JSON config file mirrored by command-line flags
// (flag > file > default). Validation failures carry the offending field
// name and map to exit code 1 in the CLI.

#include <string>
#include <vector>

#include <json.hpp>

#include "fedmkt/federation.hpp"

namespace fedmkt {

using json = nlohmann::json;

struct RunConfig {
    FedConfig fed;
    WorldSpec world;
};

namespace detail {

template <typename T>
T get_field(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                                const std::string& scope) {
    if (!j.is_object()) throw ConfigError(scope + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& k : known)
            if (k == key) ok = true;
        if (!ok) throw ConfigError(scope + ": unknown field '" + key + "'");
    }
}

inline ParticipantSpec parse_participant(const json& j, const std::string& scope,
                                         ParticipantSpec base) {
    reject_unknown_keys(j, {"width", "tokenizer", "rank", "alpha", "context_window", "init_seed"},
                        scope);
    base.width = get_field<int>(j, "width", base.width);
    if (j.contains("tokenizer")) {
        try {
            base.tokenizer = kind_from_name(j.at("tokenizer").get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError(scope + ".tokenizer: " + e.what());
        }
    }
    base.rank = get_field<int>(j, "rank", base.rank);
    base.alpha = get_field<double>(j, "alpha", base.alpha);
    base.context_window = get_field<int>(j, "context_window", base.context_window);
    base.init_seed = get_field<uint64_t>(j, "init_seed", base.init_seed);
    if (base.width < 1) throw ConfigError(scope + ".width: must be >= 1");
    if (base.rank < 1 || base.rank > base.width)
        throw ConfigError(scope + ".rank: must be in [1, width]");
    if (base.context_window < 2) throw ConfigError(scope + ".context_window: must be >= 2");
    return base;
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
    detail::reject_unknown_keys(
        j,
        {"mode", "seed", "clients", "rounds", "server_epochs", "client_epochs", "lambda",
         "lr_server", "lr_client", "k_top", "batch_size", "workers", "weight_decay",
         "max_grad_norm", "world", "server", "clients_spec", "client_template"},
        "config");

    RunConfig rc;
    FedConfig& f = rc.fed;
    if (j.contains("mode")) {
        try {
            f.mode = mode_from_name(j.at("mode").get<std::string>());
        } catch (const json::exception& e) {
            throw ConfigError(std::string("mode: ") + e.what());
        }
    }
    f.seed = detail::get_field<uint64_t>(j, "seed", f.seed);
    f.clients = detail::get_field<int>(j, "clients", f.clients);
    f.rounds = detail::get_field<int>(j, "rounds", f.rounds);
    f.server_epochs = detail::get_field<int>(j, "server_epochs", f.server_epochs);
    f.client_epochs = detail::get_field<int>(j, "client_epochs", f.client_epochs);
    f.lambda = detail::get_field<double>(j, "lambda", f.lambda);
    f.lr_server = detail::get_field<double>(j, "lr_server", f.lr_server);
    f.lr_client = detail::get_field<double>(j, "lr_client", f.lr_client);
    f.k_top = detail::get_field<int>(j, "k_top", f.k_top);
    f.batch_size = detail::get_field<int>(j, "batch_size", f.batch_size);
    f.workers = detail::get_field<int>(j, "workers", f.workers);
    f.weight_decay = detail::get_field<double>(j, "weight_decay", f.weight_decay);
    f.max_grad_norm = detail::get_field<double>(j, "max_grad_norm", f.max_grad_norm);
    validate_config(f);

    rc.world = default_world_spec(f);
    if (j.contains("world")) {
        const json& wj = j.at("world");
        detail::reject_unknown_keys(
            wj,
            {"topics", "words_per_topic", "min_len", "max_len", "n_public", "n_private", "n_eval",
             "dominant_weight", "eval_blend", "pool_size", "subword_merges"},
            "world");
        SyntheticTask& t = rc.world.task;
        t.topics = detail::get_field<int>(wj, "topics", t.topics);
        t.words_per_topic = detail::get_field<int>(wj, "words_per_topic", t.words_per_topic);
        t.min_len = detail::get_field<int>(wj, "min_len", t.min_len);
        t.max_len = detail::get_field<int>(wj, "max_len", t.max_len);
        t.n_public = detail::get_field<int>(wj, "n_public", t.n_public);
        t.n_private = detail::get_field<int>(wj, "n_private", t.n_private);
        t.n_eval = detail::get_field<int>(wj, "n_eval", t.n_eval);
        t.dominant_weight = detail::get_field<double>(wj, "dominant_weight", t.dominant_weight);
        t.eval_blend = detail::get_field<double>(wj, "eval_blend", t.eval_blend);
        t.pool_size = detail::get_field<uint64_t>(wj, "pool_size", t.pool_size);
        rc.world.subword_merges =
            detail::get_field<int>(wj, "subword_merges", rc.world.subword_merges);
    }
    if (j.contains("server"))
        rc.world.server = detail::parse_participant(j.at("server"), "server", rc.world.server);
    if (j.contains("client_template") && j.contains("clients_spec"))
        throw ConfigError("clients_spec: cannot combine with client_template");
    if (j.contains("client_template")) {
        ParticipantSpec tmpl = detail::parse_participant(j.at("client_template"), "client_template",
                                                         ParticipantSpec{});
        rc.world.clients.assign(static_cast<size_t>(f.clients), tmpl);
    } else if (j.contains("clients_spec")) {
        const json& cj = j.at("clients_spec");
        if (!cj.is_array()) throw ConfigError("clients_spec: expected an array");
        if (static_cast<int>(cj.size()) != f.clients)
            throw ConfigError("clients_spec: lists " + std::to_string(cj.size()) +
                              " clients but config says " + std::to_string(f.clients));
        rc.world.clients.clear();
        for (size_t i = 0; i < cj.size(); ++i)
            rc.world.clients.push_back(detail::parse_participant(
                cj.at(i), "clients_spec[" + std::to_string(i) + "]", ParticipantSpec{}));
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

inline json participant_to_json(const ParticipantSpec& p) {
    return json{{"width", p.width},
                {"tokenizer", kind_name(p.tokenizer)},
                {"rank", p.rank},
                {"alpha", p.alpha},
                {"context_window", p.context_window},
                {"init_seed", p.init_seed}};
}

// Full resolved snapshot (defaults included), suitable for the run manifest
// and reparsable by parse_run_config.
inline json run_config_to_json(const RunConfig& rc) {
    const FedConfig& f = rc.fed;
    const SyntheticTask& t = rc.world.task;
    json clients = json::array();
    for (const auto& c : rc.world.clients) clients.push_back(participant_to_json(c));
    return json{
        {"mode", mode_name(f.mode)},
        {"seed", f.seed},
        {"clients", f.clients},
        {"rounds", f.rounds},
        {"server_epochs", f.server_epochs},
        {"client_epochs", f.client_epochs},
        {"lambda", f.lambda},
        {"lr_server", f.lr_server},
        {"lr_client", f.lr_client},
        {"k_top", f.k_top},
        {"batch_size", f.batch_size},
        {"workers", f.workers},
        {"weight_decay", f.weight_decay},
        {"max_grad_norm", f.max_grad_norm},
        {"world",
         json{{"topics", t.topics},
              {"words_per_topic", t.words_per_topic},
              {"min_len", t.min_len},
              {"max_len", t.max_len},
              {"n_public", t.n_public},
              {"n_private", t.n_private},
              {"n_eval", t.n_eval},
              {"dominant_weight", t.dominant_weight},
              {"eval_blend", t.eval_blend},
              {"pool_size", t.pool_size},
              {"subword_merges", rc.world.subword_merges}}},
        {"server", participant_to_json(rc.world.server)},
        {"clients_spec", clients}};
}

}  // namespace fedmkt
