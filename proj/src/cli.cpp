#include "concernsim/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "concernsim/cus_env.hpp"
#include "concernsim/errors.hpp"
#include "concernsim/eval_metrics.hpp"
#include "concernsim/json.hpp"
#include "concernsim/persona.hpp"
#include "concernsim/policy.hpp"
#include "concernsim/trainer.hpp"

namespace concernsim {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
    bool no_timestamps = false;
    std::size_t threads = 1;
};

// Diagnostics go through a logger bound to the caller's error stream so the
// in-process entry point and the binary behave the same.
std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto logger = std::make_shared<spdlog::logger>("concernsim", sink);
    logger->set_pattern("[%l] %v");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("CONCERNSIM_LOG")) level = spdlog::level::from_str(env);
    logger->set_level(level);
    return logger;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return {};
    return run_config_from_json(parse_json(read_text_file(path), path));
}

EnvConfig resolve_env(const GlobalOptions& g, const std::string& profile) {
    if (!g.config.empty()) {
        if (!profile.empty()) throw ConfigError("--profile and --config are mutually exclusive");
        return load_run_config(g.config).env;
    }
    return strictness_preset(profile.empty() ? "default" : profile);
}

std::string fmt_num(double x) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << x;
    return s.str();
}

// ---------------------------------------------------------------------------
// bank validate
// ---------------------------------------------------------------------------

int cmd_bank_validate(const std::string& path, std::ostream& out) {
    const ConcernBank bank = parse_bank(read_text_file(path));
    const auto violations = validate_bank(bank);
    for (const auto& v : violations) out << v.to_string() << '\n';
    return violations.empty() ? kExitOk : kExitDomain;
}

// ---------------------------------------------------------------------------
// persona sample
// ---------------------------------------------------------------------------

int cmd_persona_sample(const GlobalOptions& g, const std::string& bank_path, std::size_t count, std::ostream& out) {
    const ConcernBank bank = load_bank_file(bank_path);
    const SamplingConfig sampling = load_run_config(g.config).train.sampling;
    std::vector<PersonaProfile> personas;
    for (std::size_t i = 0; i < count; ++i)
        personas.push_back(sample_persona(bank, derive_seed(g.seed.value_or(0), {i}), sampling));
    const std::string text = serialize_personas(personas);
    if (g.out.empty()) out << text;
    else write_text_file(g.out, text);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string bank;
    std::size_t eval_seeds = 3;
    std::size_t episode_logs = 5;
    std::size_t checkpoint_every = 0;
};

std::string ckpt_name(std::size_t iteration) {
    std::ostringstream s;
    s << "checkpoints/iter_" << std::setw(6) << std::setfill('0') << iteration << ".ckpt";
    return s.str();
}

int cmd_train(const GlobalOptions& g, const TrainArgs& a, spdlog::logger& log, std::ostream& out) {
    if (g.out.empty()) throw ConfigError("train: --out is required");
    RunConfig run = load_run_config(g.config);
    if (g.seed) run.train.seed = *g.seed;
    run.train.threads = g.threads;
    run.train.validate();
    run.env.validate();
    const ConcernBank bank = load_bank_file(a.bank);
    const bool stamps = !g.no_timestamps;
    const TrainConfig& tc = run.train;

    const fs::path dir(g.out);
    fs::create_directories(dir / "checkpoints");

    const std::size_t every = a.checkpoint_every ? a.checkpoint_every : tc.eval_every;
    std::vector<std::size_t> ckpt_iters;
    for (std::size_t it = 1; it <= tc.iterations; ++it)
        if ((every > 0 && it % every == 0) || it == tc.iterations) ckpt_iters.push_back(it);
    if (tc.iterations == 0) ckpt_iters.push_back(0);
    const bool report = tc.eval_personas > 0 && a.eval_seeds > 0;

    // manifest first, listing everything the run will produce
    Json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["seed"] = tc.seed;
    manifest["bank"] = {{"name", bank.name}, {"path", a.bank}, {"fingerprint", bank_fingerprint(bank)}};
    manifest["config"] = run_config_to_json(run);
    if (stamps)
        manifest["created_unix"] =
            std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
                .count();
    Json arts;
    arts["run_log"] = "run_log.jsonl";
    arts["checkpoints"] = Json::array();
    for (auto it : ckpt_iters) arts["checkpoints"].push_back(ckpt_name(it));
    if (report) {
        arts["eval_personas"] = "eval_personas.json";
        arts["eval_report"] = "eval_report.json";
        arts["eval_table"] = "eval_report.csv";
        arts["episodes"] = "episodes";
    }
    manifest["artifacts"] = arts;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

    PolicyParams params = initial_params(bank, tc, run.env);

    std::ofstream run_log(dir / "run_log.jsonl", std::ios::binary);
    if (!run_log) throw DomainError("cannot write " + (dir / "run_log.jsonl").string());
    Json header;
    header["record"] = "header";
    header["tool_version"] = kToolVersion;
    header["bank_fingerprint"] = bank_fingerprint(bank);
    header["config"] = run_config_to_json(run);
    run_log << header.dump() << '\n';

    std::size_t next_ckpt = 0;
    auto on_iteration = [&](const IterationStats& s, const PolicyParams& p) {
        Json rec = iteration_stats_to_json(s, stamps);
        Json line{{"record", "iteration"}};
        for (auto& [k, v] : rec.items()) line[k] = v;
        run_log << line.dump() << '\n';
        run_log.flush();
        log.info("iter {} ar {} csr {} aopd {} stpr {}", s.iteration, fmt_num(s.train_ar), fmt_num(s.train_csr),
                 s.loss_aopd, s.loss_stpr);
        if (next_ckpt < ckpt_iters.size() && s.iteration + 1 == ckpt_iters[next_ckpt]) {
            write_text_file(dir / ckpt_name(ckpt_iters[next_ckpt]), save_checkpoint(p));
            ++next_ckpt;
        }
    };
    TrainResult result = train(std::move(params), tc, bank, run.env, on_iteration);
    if (tc.iterations == 0) write_text_file(dir / ckpt_name(0), save_checkpoint(result.params));

    Json final_rec{{"record", "final"}, {"iterations", tc.iterations}};
    if (report) {
        const auto personas = eval_persona_set(bank, tc, tc.eval_personas);
        write_text_file(dir / "eval_personas.json", serialize_personas(personas));
        const auto seeds = eval_seeds(tc.seed, a.eval_seeds);
        EvalOptions opt;
        opt.threads = g.threads;
        const auto runs = evaluate_policy(result.params, personas, bank, run.env, seeds, opt);
        const EvalReport rep = build_report(runs, "deployable");
        write_text_file(dir / "eval_report.json", report_to_json(rep).dump(2) + "\n");
        write_text_file(dir / "eval_report.csv", report_table(rep));
        fs::create_directories(dir / "episodes");
        const std::size_t n = std::min(a.episode_logs, runs.front().logs.size());
        for (std::size_t j = 0; j < n; ++j)
            write_text_file(dir / "episodes" / ("episode_" + std::to_string(j) + ".jsonl"),
                            serialize_episode(runs.front().logs[j], bank));
        final_rec["eval_ar"] = rep.ar;
        final_rec["eval_csr"] = rep.csr;
        out << report_table(rep);
    }
    run_log << final_rec.dump() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string bank;
    std::string personas;
    std::size_t sample = 0;
    std::vector<std::uint64_t> seeds;
    std::string view = "deployable";
    std::string profile;
    bool greedy = false;
    double temperature = 1.0;
};

int cmd_eval(const GlobalOptions& g, const EvalArgs& a, std::ostream& out) {
    const ConcernBank bank = load_bank_file(a.bank);
    const EnvConfig env = resolve_env(g, a.profile);
    env.validate();
    const PolicyParams params = load_checkpoint(read_text_file(a.checkpoint), bank, env.max_turns);

    std::vector<PersonaProfile> personas;
    if (!a.personas.empty()) {
        if (a.sample) throw ConfigError("--personas and --sample are mutually exclusive");
        personas = load_personas(read_text_file(a.personas));
        if (personas.empty()) throw ParseError("persona file " + a.personas + " is empty");
        for (const auto& p : personas) check_persona(p, bank);
    } else if (a.sample) {
        for (std::size_t i = 0; i < a.sample; ++i)
            personas.push_back(sample_persona(bank, derive_seed(g.seed.value_or(0), {i})));
    } else {
        throw ConfigError("eval: give --personas FILE or --sample N");
    }

    std::vector<std::uint64_t> seeds = a.seeds;
    if (seeds.empty()) seeds.push_back(g.seed.value_or(0));
    std::vector<PolicyView> views;
    if (a.view == "both") views = {PolicyView::Deployable, PolicyView::Privileged};
    else if (auto v = parse_view(a.view)) views = {*v};
    else throw ConfigError("unknown view '" + a.view + "'");

    EvalOptions opt;
    opt.greedy = a.greedy;
    opt.temperature = a.temperature;
    opt.threads = g.threads;
    Json doc = Json::object();
    std::vector<EvalReport> reports;
    for (PolicyView v : views) {
        opt.view = v;
        const auto runs = evaluate_policy(params, personas, bank, env, seeds, opt);
        reports.push_back(build_report(runs, std::string(view_name(v))));
        doc[std::string(view_name(v))] = report_to_json(reports.back());
        out << "# view " << view_name(v) << '\n' << report_table(reports.back());
    }
    if (reports.size() == 2) {
        doc["ar_gap"] = reports[1].ar - reports[0].ar;
        out << "# privileged - deployable AR: " << fmt_num(reports[1].ar - reports[0].ar) << '\n';
    }
    if (!g.out.empty()) {
        fs::create_directories(g.out);
        const fs::path dir(g.out);
        write_text_file(dir / "eval_report.json", (reports.size() == 1 ? report_to_json(reports[0]) : doc).dump(2) + "\n");
        std::string table;
        for (const auto& r : reports) table += "# view " + r.view + "\n" + report_table(r);
        write_text_file(dir / "eval_report.csv", table);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// play
// ---------------------------------------------------------------------------

struct PlayArgs {
    std::string bank;
    std::string personas;
    std::size_t index = 0;
    std::string profile;
    bool reveal = false;
};

// Reads one non-empty line; nullopt on end of input.
std::optional<std::string> prompt(std::istream& in, std::ostream& out, const std::string& text) {
    std::string line;
    while (true) {
        out << text << std::flush;
        if (!std::getline(in, line)) return std::nullopt;
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        return line.substr(b, e - b + 1);
    }
}

// Accepts a 1-based menu number or an id.
std::optional<std::size_t> pick_index(const std::string& s, const std::vector<std::string>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == s) return i;
    char* end = nullptr;
    const long n = std::strtol(s.c_str(), &end, 10);
    if (end && *end == '\0' && n >= 1 && static_cast<std::size_t>(n) <= ids.size()) return n - 1;
    return std::nullopt;
}

std::string menu(const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += "  " + std::to_string(i + 1) + ") " + ids[i] + "\n";
    return s;
}

struct Quit {};

struct ActInput {
    enum Kind { Act, Help, Bad } kind = Bad;
    AgentAct act;
};

// Prompts for a full act. Throws Quit on 'quit' or end of input.
ActInput read_act(std::istream& in, std::ostream& out, const ConcernBank& bank) {
    std::vector<std::string> verbs;
    for (Verb v : kAllVerbs) verbs.emplace_back(verb_name(v));
    std::vector<std::string> dims, concerns;
    for (const auto& d : bank.dimensions) dims.push_back(d.id);
    for (const auto& c : bank.concerns) concerns.push_back(c.id);

    auto line = prompt(in, out, "act> ");
    if (!line || *line == "quit") throw Quit{};
    if (*line == "help") {
        out << "verbs:\n" << menu(verbs) << "type a verb (name or number), then its argument; 'quit' ends\n";
        return {ActInput::Help, {}};
    }
    std::istringstream words(*line);
    std::string w;
    std::vector<std::string> parts;
    while (words >> w) parts.push_back(w);
    std::optional<Verb> verb = parse_verb(parts[0]);
    if (!verb) {
        if (auto i = pick_index(parts[0], verbs)) verb = kAllVerbs[*i];
    }
    if (!verb) return {};

    auto arg = [&](std::size_t k, const std::string& what, const std::vector<std::string>& ids) {
        if (parts.size() > k) return pick_index(parts[k], ids);
        out << what << ":\n" << menu(ids);
        auto l = prompt(in, out, what + "> ");
        if (!l || *l == "quit") throw Quit{};
        return pick_index(*l, ids);
    };
    switch (*verb) {
        case Verb::Probe: {
            const auto d = arg(1, "dimension", dims);
            if (!d) return {};
            return {ActInput::Act, AgentAct::probe(*d)};
        }
        case Verb::Address: {
            const auto c = arg(1, "concern", concerns);
            if (!c) return {};
            const auto t = arg(2, "tactic", bank.tactics);
            if (!t) return {};
            return {ActInput::Act, AgentAct::address(*c, *t)};
        }
        default: return {ActInput::Act, AgentAct{*verb}};
    }
}

int cmd_play(const GlobalOptions& g, const PlayArgs& a, std::istream& in, std::ostream& out) {
    const ConcernBank bank = load_bank_file(a.bank);
    const EnvConfig env = resolve_env(g, a.profile);
    env.validate();
    const std::uint64_t seed = g.seed.value_or(0);
    PersonaProfile persona;
    if (!a.personas.empty()) {
        const auto all = load_personas(read_text_file(a.personas));
        if (a.index >= all.size()) throw ConfigError("--index out of range for the persona file");
        persona = all[a.index];
        check_persona(persona, bank);
    } else {
        persona = sample_persona(bank, seed, load_run_config(g.config).train.sampling);
    }

    Episode ep(persona, bank, env, seed);
    out << ep.opening_context() << '\n';
    out << "style: " << style_name(persona.external.communication_style) << ", type 'help' for the act menu\n";
    bool quit = false;
    while (!ep.done()) {
        ActInput input;
        try {
            input = read_act(in, out, bank);
        } catch (const Quit&) {
            quit = true;
            break;
        }
        if (input.kind == ActInput::Help) continue;
        if (input.kind == ActInput::Bad) {
            out << "unrecognized act, try again ('help' lists the menu)\n";
            continue;
        }
        const TurnOutcome& o = ep.apply(input.act);
        out << "user: " << o.utterance << '\n';
    }
    if (quit) ep.abandon();
    const EpisodeLog log = std::move(ep).finish();

    out << "decision: " << decision_name(log.decision) << (log.abandoned ? " (abandoned)" : "") << '\n';
    out << "reward: " << log.reward << '\n';
    out << "csr: " << log.csr_numerator << "/" << log.csr_denominator << '\n';
    if (a.reveal) {
        out << "hidden concerns:";
        for (const auto& id : persona.internal) out << ' ' << id;
        out << "\ninitial willingness: " << fmt_num(persona.initial_willingness) << '\n';
        double w = persona.initial_willingness;
        for (const auto& t : log.turns) {
            w += t.outcome.delta_w;
            out << "  turn " << t.turn << ": " << describe_act(t.act, bank) << "  dw " << fmt_num(t.outcome.delta_w)
                << "  w " << fmt_num(std::clamp(w, 0.0, 100.0)) << '\n';
            w = std::clamp(w, 0.0, 100.0);
        }
    }
    if (!g.out.empty()) write_text_file(g.out, serialize_episode(log, bank));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

int cmd_replay(const std::string& path, std::ostream& out) {
    const ReplayResult r = replay_episode(read_text_file(path));
    if (r.ok) {
        out << "ok\n";
        return kExitOk;
    }
    out << "divergence";
    if (r.first_bad_turn) out << " at turn " << *r.first_bad_turn;
    out << ": " << r.message << '\n';
    return kExitDomain;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
    auto log = make_logger(err);
    CLI::App app{"Concern-driven user simulator and act-policy trainer", "concernsim"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--config", g.config, "Run config file");
    app.add_option("--out", g.out, "Output file or directory");
    app.add_flag("--no-timestamps", g.no_timestamps, "Omit wall-clock fields from outputs");
    app.add_option("--threads", g.threads, "Worker threads for rollouts")->check(CLI::PositiveNumber);

    auto* bank_cmd = app.add_subcommand("bank", "Concern bank tools");
    bank_cmd->require_subcommand(1);
    std::string bank_path;
    auto* validate = bank_cmd->add_subcommand("validate", "Check a bank against its invariants");
    validate->add_option("path", bank_path, "Bank file")->required();

    auto* persona_cmd = app.add_subcommand("persona", "Persona tools");
    persona_cmd->require_subcommand(1);
    std::string persona_bank;
    std::size_t persona_count = 1;
    auto* sample = persona_cmd->add_subcommand("sample", "Sample personas as a JSON list");
    sample->add_option("--bank", persona_bank, "Bank file")->required();
    sample->add_option("--count", persona_count, "Number of personas");

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train an act policy");
    train_cmd->add_option("--bank", ta.bank, "Bank file")->required();
    train_cmd->add_option("--eval-seeds", ta.eval_seeds, "Seeds for the final evaluation");
    train_cmd->add_option("--episode-logs", ta.episode_logs, "Final-evaluation episodes to log");
    train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Iterations between checkpoints");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--bank", ea.bank, "Bank file")->required();
    eval_cmd->add_option("--personas", ea.personas, "Persona file");
    eval_cmd->add_option("--sample", ea.sample, "Sample N personas instead of reading a file");
    eval_cmd->add_option("--seeds", ea.seeds, "Episode seeds")->delimiter(',');
    eval_cmd->add_option("--view", ea.view, "deployable, privileged or both");
    eval_cmd->add_option("--profile", ea.profile, "Strictness preset when no config is given");
    eval_cmd->add_flag("--greedy", ea.greedy, "Take the most likely act");
    eval_cmd->add_option("--temperature", ea.temperature, "Sampling temperature");

    PlayArgs pa;
    auto* play_cmd = app.add_subcommand("play", "Play the agent side interactively");
    play_cmd->add_option("--bank", pa.bank, "Bank file")->required();
    play_cmd->add_option("--personas", pa.personas, "Persona file to draw from");
    play_cmd->add_option("--index", pa.index, "Persona index in the file");
    play_cmd->add_option("--profile", pa.profile, "Strictness preset when no config is given");
    play_cmd->add_flag("--reveal", pa.reveal, "Show the hidden persona and willingness trace at the end");

    std::string replay_path;
    auto* replay_cmd = app.add_subcommand("replay", "Verify an episode log by re-execution");
    replay_cmd->add_option("path", replay_path, "Episode log")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (validate->parsed()) return cmd_bank_validate(bank_path, out);
        if (sample->parsed()) return cmd_persona_sample(g, persona_bank, persona_count, out);
        if (train_cmd->parsed()) return cmd_train(g, ta, *log, out);
        if (eval_cmd->parsed()) return cmd_eval(g, ea, out);
        if (play_cmd->parsed()) return cmd_play(g, pa, in, out);
        if (replay_cmd->parsed()) return cmd_replay(replay_path, out);
    } catch (const ParseError& e) {
        log->error("{}", e.what());
        return kExitUsage;
    } catch (const ConfigError& e) {
        log->error("{}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        log->error("{}", e.what());
        return kExitDomain;
    }
    return kExitUsage;
}

}  // namespace concernsim
