#pragma once

// Command-line entry points: run (train + report), compare (cross-mode
// tables), align-demo (human-readable alignment dump), cost (communication
// and parameter accounting). Exit codes: 0 success, 1 validation error,
// 2 runtime abort.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedmkt/config.hpp"
#include "fedmkt/demo.hpp"
#include "fedmkt/federation.hpp"

namespace fedmkt {

inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr int kCsvSchemaVersion = 1;

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

// CSV schema v1; one row per (round, participant), server first.
inline std::string rounds_to_csv(const std::vector<RoundLog>& rounds) {
    std::ostringstream out;
    out << "round,participant,role,private_loss,ft_loss,kd_loss,combined_loss,selective_size,"
           "eval_accuracy,eval_perplexity,upload_floats,download_floats\n";
    for (const auto& r : rounds) {
        for (const auto& p : r.participants) {
            out << r.round + 1 << ',' << p.participant << ','
                << (p.role == Role::server ? "server" : "client") << ','
                << detail::fmt_double(p.private_loss) << ',' << detail::fmt_double(p.ft_loss)
                << ',' << detail::fmt_double(p.kd_loss) << ','
                << detail::fmt_double(p.combined_loss) << ',' << p.selective_size << ','
                << detail::fmt_double(p.eval_accuracy) << ','
                << detail::fmt_double(p.eval_perplexity) << ',' << p.upload_floats << ','
                << p.download_floats << '\n';
        }
    }
    return out.str();
}

inline json build_summary(const RunConfig& rc, const RunResult& result) {
    json participants = json::array();
    for (const auto& m : result.final_metrics)
        participants.push_back(json{{"id", m.participant},
                                    {"role", m.role == Role::server ? "server" : "client"},
                                    {"accuracy", m.accuracy},
                                    {"perplexity", m.perplexity}});
    CommunicationCost cost = communication_cost(result.rounds);
    return json{{"artifact_version", kArtifactVersion},
                {"csv_schema_version", kCsvSchemaVersion},
                {"mode", mode_name(rc.fed.mode)},
                {"seed", rc.fed.seed},
                {"world_seed", rc.world.task.seed},
                {"rounds_executed", result.rounds.size()},
                {"lambda", rc.fed.lambda},
                {"participants", participants},
                {"communication",
                 json{{"upload_floats", cost.upload_floats},
                      {"download_floats", cost.download_floats}}}};
}

// ---------------------------------------------------------------------------
// run

struct RunCmdArgs {
    std::string config_path;  // empty = defaults only
    json overrides = json::object();
    std::string out_dir;
    bool verbose = false;
};

inline RunConfig resolve_config(const std::string& config_path, const json& overrides) {
    json j = json::object();
    if (!config_path.empty()) {
        try {
            j = json::parse(read_file_text(config_path));
        } catch (const json::exception& e) {
            throw ConfigError("config file " + config_path + ": " + e.what());
        }
    }
    for (const auto& [key, value] : overrides.items()) j[key] = value;
    return parse_run_config(j);
}

inline int cmd_run(const RunCmdArgs& args, std::ostream& out = std::cout) {
    RunConfig rc = resolve_config(args.config_path, args.overrides);

    namespace fs = std::filesystem;
    fs::create_directories(args.out_dir);
    fs::create_directories(args.out_dir + "/checkpoints");

    json manifest{{"artifact_version", kArtifactVersion},
                  {"csv_schema_version", kCsvSchemaVersion},
                  {"status", "running"},
                  {"mode", mode_name(rc.fed.mode)},
                  {"seed", rc.fed.seed},
                  {"started_at", detail::iso_timestamp()},
                  {"config", run_config_to_json(rc)},
                  {"outputs", json{{"rounds_csv", "rounds.csv"},
                                   {"summary", "summary.json"},
                                   {"checkpoints", "checkpoints"}}}};
    write_file_text(args.out_dir + "/manifest.json", manifest.dump(2) + "\n");

    World world = build_world(rc.fed, rc.world);
    RunOptions opts;
    opts.workers = rc.fed.workers;
    if (args.verbose) opts.trace = &out;
    RunResult result = run(world, opts);

    write_file_text(args.out_dir + "/rounds.csv", rounds_to_csv(result.rounds));
    write_file_text(args.out_dir + "/summary.json", build_summary(rc, result).dump(2) + "\n");

    char name[64];
    std::snprintf(name, sizeof(name), "/checkpoints/participant_%02d.bin", 0);
    write_file_bytes(args.out_dir + name, save_checkpoint(world.server.model));
    for (const auto& c : world.clients) {
        std::snprintf(name, sizeof(name), "/checkpoints/participant_%02d.bin", c.id);
        write_file_bytes(args.out_dir + name, save_checkpoint(c.model));
    }

    manifest["status"] = "complete";
    manifest["finished_at"] = detail::iso_timestamp();
    write_file_text(args.out_dir + "/manifest.json", manifest.dump(2) + "\n");

    out << "mode " << mode_name(rc.fed.mode) << ", seed " << rc.fed.seed << ", "
        << result.rounds.size() << " rounds\n";
    for (const auto& m : result.final_metrics)
        out << "  participant " << m.participant
            << (m.role == Role::server ? " (server)" : " (client)")
            << ": accuracy " << detail::fmt_double(m.accuracy) << ", perplexity "
            << detail::fmt_double(m.perplexity) << "\n";
    out << "outputs written to " << args.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// compare

struct CompareRow {
    int participant = 0;
    std::string role;
    std::string mode;
    double accuracy = 0.0;
    double perplexity = 0.0;
};

inline int cmd_compare(const std::vector<std::string>& summary_paths, const std::string& csv_out,
                       std::ostream& out = std::cout) {
    if (summary_paths.empty()) throw ConfigError("compare: needs at least one summary");
    std::vector<json> summaries;
    for (const auto& p : summary_paths) {
        try {
            summaries.push_back(json::parse(read_file_text(p)));
        } catch (const json::exception& e) {
            throw ConfigError("summary " + p + ": " + e.what());
        }
    }
    uint64_t world_seed = summaries.front().at("world_seed").get<uint64_t>();
    for (size_t i = 1; i < summaries.size(); ++i)
        if (summaries[i].at("world_seed").get<uint64_t>() != world_seed)
            throw ConfigError("compare: summaries come from different world seeds");

    std::vector<CompareRow> rows;
    std::map<std::pair<int, std::string>, double> acc;  // (participant, mode) -> accuracy
    for (const auto& s : summaries) {
        std::string mode = s.at("mode").get<std::string>();
        for (const auto& p : s.at("participants")) {
            CompareRow r;
            r.participant = p.at("id").get<int>();
            r.role = p.at("role").get<std::string>();
            r.mode = mode;
            r.accuracy = p.at("accuracy").get<double>();
            r.perplexity = p.at("perplexity").get<double>();
            acc[{r.participant, mode}] = r.accuracy;
            rows.push_back(r);
        }
    }

    const std::string base_mode = summaries.front().at("mode").get<std::string>();
    out << "participant  role    mode         accuracy     perplexity   delta_acc(vs " << base_mode
        << ")\n";
    for (const auto& r : rows) {
        double delta = r.accuracy - acc[{r.participant, base_mode}];
        char line[160];
        std::snprintf(line, sizeof(line), "%-12d %-7s %-12s %-12.6f %-12.6f %+.6f\n",
                      r.participant, r.role.c_str(), r.mode.c_str(), r.accuracy, r.perplexity,
                      delta);
        out << line;
    }

    // expected orderings; violations are flagged, not fatal
    int violations = 0;
    auto check = [&](int participant, const char* better, const char* worse) {
        auto b = acc.find({participant, better});
        auto w = acc.find({participant, worse});
        if (b != acc.end() && w != acc.end() && b->second < w->second) {
            out << "ordering violation: participant " << participant << " " << better << " ("
                << detail::fmt_double(b->second) << ") < " << worse << " ("
                << detail::fmt_double(w->second) << ")\n";
            ++violations;
        }
    };
    std::set<int> participants;
    for (const auto& r : rows) participants.insert(r.participant);
    for (int p : participants) {
        if (p == 0) {
            check(p, "fedmkt", "zero_shot");
        } else {
            check(p, "fedmkt", "standalone");
            check(p, "standalone", "zero_shot");
            check(p, "fedmkt", "zero_shot");
        }
    }
    if (violations == 0) out << "no ordering violations\n";

    if (!csv_out.empty()) {
        std::ostringstream csv;
        csv << "participant,role,mode,accuracy,perplexity\n";
        for (const auto& r : rows)
            csv << r.participant << ',' << r.role << ',' << r.mode << ','
                << detail::fmt_double(r.accuracy) << ',' << detail::fmt_double(r.perplexity)
                << '\n';
        write_file_text(csv_out, csv.str());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// align-demo

inline int cmd_align_demo(const std::string& source_spec_path, const std::string& target_spec_path,
                          const std::string& text_in, std::ostream& out = std::cout) {
    TokenizerSpec source = source_spec_path.empty()
                               ? demo_subword_tokenizer()
                               : tokenizer_from_text(read_file_text(source_spec_path));
    TokenizerSpec target = target_spec_path.empty()
                               ? demo_word_tokenizer()
                               : tokenizer_from_text(read_file_text(target_spec_path));
    std::string text = text_in.empty() ? demo_sentence() : text_in;

    std::vector<int> src = tokenize(source, text);
    std::vector<int> tgt = tokenize(target, text);
    if (src.empty() || tgt.empty()) throw ConfigError("text: tokenizes to an empty sequence");

    auto dump_tokens = [&](const char* label, const TokenizerSpec& spec,
                           const std::vector<int>& ids) {
        out << label << " (" << kind_name(spec.kind) << ", " << spec.vocab.id << "):";
        for (int id : ids) out << " '" << spec.vocab.surface(id) << "'";
        out << "\n";
    };
    dump_tokens("source", source, src);
    dump_tokens("target", target, tgt);

    VocabMappingTable table = build_mapping_table(source.vocab, target.vocab);
    out << "mapping table hits:\n";
    std::set<int> dumped;
    for (int id : src) {
        if (!dumped.insert(id).second) continue;
        out << "  '" << source.vocab.surface(id) << "' -> '"
            << target.vocab.surface(table.map[static_cast<size_t>(id)]) << "'\n";
    }

    AlignmentPath path = align_sequences(src, tgt, source.vocab, target.vocab, table);
    auto span_text = [](const TokenizerSpec& spec, const std::vector<int>& ids, int b, int e) {
        std::string s;
        for (int i = b; i < e; ++i) {
            if (!s.empty()) s += "+";
            s += "'" + spec.vocab.surface(ids[static_cast<size_t>(i)]) + "'";
        }
        return s.empty() ? std::string("-") : s;
    };
    out << "alignment path:\n";
    for (const auto& p : path.pairs)
        out << "  " << pair_flag_name(p.flag) << ": " << span_text(source, src, p.src_begin, p.src_end)
            << " -> " << span_text(target, tgt, p.tgt_begin, p.tgt_end) << "\n";

    out << "projection per target position:\n";
    std::vector<const AlignmentPair*> pair_of(tgt.size(), nullptr);
    for (const auto& p : path.pairs)
        for (int t = p.tgt_begin; t < p.tgt_end; ++t) pair_of[static_cast<size_t>(t)] = &p;
    for (size_t q = 0; q + 1 < tgt.size(); ++q) {
        const AlignmentPair* p = pair_of[q + 1];
        out << "  position " << q << " predicting '" << target.vocab.surface(tgt[q + 1]) << "': ";
        if (p != nullptr &&
            (p->flag == PairFlag::one_to_one_exact || p->flag == PairFlag::many_to_one) &&
            p->src_begin > 0) {
            out << "top-K carried from '" << source.vocab.surface(src[static_cast<size_t>(p->src_begin)])
                << "' (source position " << p->src_begin - 1 << "), table-mapped\n";
        } else {
            out << "one-hot fallback on realized token\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// cost

struct CostCmdArgs {
    std::string config_path;
    json overrides = json::object();
    uint64_t samples = 0;    // closed-form mode when both samples and
    uint64_t positions = 0;  // positions are set
};

inline int cmd_cost(const CostCmdArgs& args, std::ostream& out = std::cout) {
    RunConfig rc = resolve_config(args.config_path, args.overrides);
    const FedConfig& f = rc.fed;

    if (args.samples > 0 && args.positions > 0) {
        uint64_t per_set =
            expected_float_count(args.samples, args.positions, static_cast<uint64_t>(f.k_top));
        out << "closed form: " << args.samples << " samples x " << args.positions
            << " positions x top-" << f.k_top << " = " << per_set
            << " floats per knowledge set per direction\n";
        out << "per round: upload " << per_set * static_cast<uint64_t>(f.clients) << ", download "
            << per_set * static_cast<uint64_t>(f.clients) << " floats (" << f.clients
            << " clients)\n";
        out << "total over " << f.rounds << " rounds: "
            << 2 * per_set * static_cast<uint64_t>(f.clients) * static_cast<uint64_t>(f.rounds)
            << " floats\n";
        return 0;
    }

    World w = build_world(f, rc.world);
    auto set_floats = [&](const Participant& p) {
        uint64_t floats = 0;
        for (const auto& s : p.public_enc)
            floats += (s.ids.size() - 1) *
                      static_cast<uint64_t>(std::min(f.k_top, p.model.vocab_size()));
        return floats;
    };

    out << "participant  role    trainable/total params   knowledge floats/round\n";
    uint64_t upload = 0;
    auto row = [&](const Participant& p) {
        uint64_t adapter = p.model.adapter_param_count();
        uint64_t total = adapter + p.model.base_param_count();
        uint64_t floats = set_floats(p);
        char line[160];
        std::snprintf(line, sizeof(line), "%-12d %-7s %8llu / %-12llu %.4f   %llu\n", p.id,
                      p.role == Role::server ? "server" : "client",
                      static_cast<unsigned long long>(adapter),
                      static_cast<unsigned long long>(total),
                      static_cast<double>(adapter) / static_cast<double>(total),
                      static_cast<unsigned long long>(floats));
        out << line;
        return floats;
    };
    uint64_t server_floats = row(w.server);
    for (const auto& c : w.clients) upload += row(c);
    uint64_t download = server_floats * static_cast<uint64_t>(f.clients);
    out << "per round: upload " << upload << " floats, download " << download << " floats\n";
    out << "total over " << f.rounds << " rounds: "
        << (upload + download) * static_cast<uint64_t>(f.rounds) << " floats\n";
    return 0;
}

// ---------------------------------------------------------------------------
// top-level argument handling

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"federated mutual knowledge transfer between one large server model and "
                 "several small client models, at desk scale"};
    app.require_subcommand(1);

    // run
    auto* run_cmd = app.add_subcommand("run", "execute a configured training mode");
    std::string config_path, out_dir;
    bool verbose = false;
    run_cmd->add_option("--config", config_path, "JSON config file");
    run_cmd->add_option("--out", out_dir, "output directory")->required();
    run_cmd->add_flag("--verbose", verbose, "trace protocol steps");
    std::string o_mode;
    uint64_t o_seed = 0;
    int o_clients = 0, o_rounds = 0, o_server_epochs = 0, o_client_epochs = 0, o_k_top = 0,
        o_batch = 0, o_workers = 0;
    double o_lambda = 0, o_lr_server = 0, o_lr_client = 0;
    run_cmd->add_option("--mode", o_mode, "fedmkt|zero_shot|standalone|centralized|fedavg|llm2slm");
    run_cmd->add_option("--seed", o_seed, "run seed");
    run_cmd->add_option("--clients", o_clients, "client count K");
    run_cmd->add_option("--rounds", o_rounds, "communication rounds T");
    run_cmd->add_option("--server-epochs", o_server_epochs, "server local epochs R");
    run_cmd->add_option("--client-epochs", o_client_epochs, "client local epochs E");
    run_cmd->add_option("--lambda", o_lambda, "fine-tune/distillation mixing weight");
    run_cmd->add_option("--lr-server", o_lr_server, "server learning rate");
    run_cmd->add_option("--lr-client", o_lr_client, "client learning rate");
    run_cmd->add_option("--top-k", o_k_top, "transmitted logit width");
    run_cmd->add_option("--batch-size", o_batch, "minibatch size");
    run_cmd->add_option("--workers", o_workers, "client worker threads (1 = reference)");

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "tabulate summaries across modes");
    std::vector<std::string> summary_paths;
    std::string compare_csv;
    compare_cmd->add_option("summaries", summary_paths, "summary.json files")->required();
    compare_cmd->add_option("--csv", compare_csv, "also write the table as CSV");

    // align-demo
    auto* demo_cmd = app.add_subcommand("align-demo", "dump a cross-tokenizer alignment");
    std::string demo_source, demo_target, demo_text;
    demo_cmd->add_option("--source", demo_source, "source tokenizer spec file");
    demo_cmd->add_option("--target", demo_target, "target tokenizer spec file");
    demo_cmd->add_option("--text", demo_text, "text to align");

    // cost
    auto* cost_cmd = app.add_subcommand("cost", "communication and parameter accounting");
    std::string cost_config;
    uint64_t cost_samples = 0, cost_positions = 0;
    int cost_k_top = 0;
    cost_cmd->add_option("--config", cost_config, "JSON config file");
    cost_cmd->add_option("--samples", cost_samples, "closed form: public sample count N");
    cost_cmd->add_option("--positions", cost_positions, "closed form: positions per sample S");
    cost_cmd->add_option("--top-k", cost_k_top, "transmitted logit width");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run_cmd->parsed()) {
            RunCmdArgs args;
            args.config_path = config_path;
            args.out_dir = out_dir;
            args.verbose = verbose;
            if (run_cmd->count("--mode")) args.overrides["mode"] = o_mode;
            if (run_cmd->count("--seed")) args.overrides["seed"] = o_seed;
            if (run_cmd->count("--clients")) args.overrides["clients"] = o_clients;
            if (run_cmd->count("--rounds")) args.overrides["rounds"] = o_rounds;
            if (run_cmd->count("--server-epochs")) args.overrides["server_epochs"] = o_server_epochs;
            if (run_cmd->count("--client-epochs")) args.overrides["client_epochs"] = o_client_epochs;
            if (run_cmd->count("--lambda")) args.overrides["lambda"] = o_lambda;
            if (run_cmd->count("--lr-server")) args.overrides["lr_server"] = o_lr_server;
            if (run_cmd->count("--lr-client")) args.overrides["lr_client"] = o_lr_client;
            if (run_cmd->count("--top-k")) args.overrides["k_top"] = o_k_top;
            if (run_cmd->count("--batch-size")) args.overrides["batch_size"] = o_batch;
            if (run_cmd->count("--workers")) args.overrides["workers"] = o_workers;
            return cmd_run(args, out);
        }
        if (compare_cmd->parsed()) return cmd_compare(summary_paths, compare_csv, out);
        if (demo_cmd->parsed()) return cmd_align_demo(demo_source, demo_target, demo_text, out);
        if (cost_cmd->parsed()) {
            CostCmdArgs args;
            args.config_path = cost_config;
            args.samples = cost_samples;
            args.positions = cost_positions;
            if (cost_cmd->count("--top-k")) args.overrides["k_top"] = cost_k_top;
            return cmd_cost(args, out);
        }
        err << "no subcommand\n";
        return 1;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace fedmkt
