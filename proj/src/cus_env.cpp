#include "concernsim/cus_env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "concernsim/errors.hpp"

namespace concernsim {

// ---------------------------------------------------------------------------
// Acts
// ---------------------------------------------------------------------------

bool AgentAct::operator==(const AgentAct& o) const {
    if (verb != o.verb) return false;
    switch (verb) {
        case Verb::Probe: return dimension == o.dimension;
        case Verb::Address: return concern == o.concern && tactic == o.tactic;
        default: return true;
    }
}

std::string describe_act(const AgentAct& act, const ConcernBank& bank) {
    std::string out(verb_name(act.verb));
    if (act.verb == Verb::Probe) out += " " + bank.dimensions.at(act.dimension).id;
    if (act.verb == Verb::Address)
        out += " " + bank.concerns.at(act.concern).id + " " + bank.tactics.at(act.tactic);
    return out;
}

bool ActCodec::argument_valid(Verb verb, std::size_t token) const {
    switch (verb) {
        case Verb::Probe: return token >= 1 && token < 1 + dims_;
        case Verb::Address: return token >= 1 + dims_ && token < argument_count();
        default: return token == 0;
    }
}

std::array<std::size_t, 2> ActCodec::encode(const AgentAct& act) const {
    switch (act.verb) {
        case Verb::Probe: return {verb_index(act.verb), probe_token(act.dimension)};
        case Verb::Address: return {verb_index(act.verb), address_token(act.concern, act.tactic)};
        default: return {verb_index(act.verb), 0};
    }
}

AgentAct ActCodec::decode(std::size_t verb_token, std::size_t arg_token) const {
    if (verb_token >= kVerbCount) throw DomainError("invalid verb token " + std::to_string(verb_token));
    const auto verb = static_cast<Verb>(verb_token);
    if (!argument_valid(verb, arg_token))
        throw DomainError("argument token " + std::to_string(arg_token) + " is invalid for verb " +
                          std::string(verb_name(verb)));
    switch (verb) {
        case Verb::Probe: return AgentAct::probe(arg_token - 1);
        case Verb::Address: {
            const std::size_t pair = arg_token - 1 - dims_;
            return AgentAct::address(pair / tactics_, pair % tactics_);
        }
        default: return AgentAct{verb};
    }
}

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

std::string_view concern_state_name(ConcernState s) {
    switch (s) {
        case ConcernState::Unresolved: return "unresolved";
        case ConcernState::PartiallyAddressed: return "partially_addressed";
        case ConcernState::Resolved: return "resolved";
    }
    return "?";
}

std::optional<ConcernState> parse_concern_state(std::string_view s) {
    for (auto st : {ConcernState::Unresolved, ConcernState::PartiallyAddressed, ConcernState::Resolved})
        if (concern_state_name(st) == s) return st;
    return std::nullopt;
}

std::string_view decision_name(Decision d) { return d == Decision::Accept ? "accept" : "reject"; }

std::string_view user_action_name(UserAction a) { return a == UserAction::Chat ? "chat" : "hangup"; }

std::string_view observed_event_name(ObservedEvent e) {
    switch (e) {
        case ObservedEvent::Voiced: return "voiced";
        case ObservedEvent::Gain: return "transition_gain";
        case ObservedEvent::Penalty: return "penalty";
        case ObservedEvent::Neutral: return "neutral";
        case ObservedEvent::Opening: return "opening";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void EnvConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("env config: " + what); };
    if (max_turns < 1) fail("K (max_turns) must be >= 1");
    if (!(hangup_threshold >= 0.0 && hangup_threshold < accept_threshold && accept_threshold <= 100.0))
        fail("thresholds must satisfy 0 <= theta_hang < theta_acc <= 100");
    if (!(coverage_threshold > 0.0 && coverage_threshold <= 1.0)) fail("theta_cov must lie in (0, 1]");
    if (!(delta_resolve > 0 && delta_partial > 0 && delta_pitch > 0)) fail("gain deltas must be positive");
    if (!(delta_miss < 0 && delta_waste < 0 && delta_anti < 0)) fail("penalty deltas must be negative");
    if (!(unvoiced_discount >= 0.0 && unvoiced_discount <= 1.0)) fail("unvoiced_discount must lie in [0, 1]");
    if (!(patience_base >= 1.0)) fail("patience_base must be >= 1");
    if (!(patience_pressure_scale >= 0.0 && patience_pressure_scale < 1.0))
        fail("patience_pressure_scale must lie in [0, 1)");
}

EnvConfig strictness_preset(std::string_view name) {
    EnvConfig c;
    if (name == "default") return c;
    if (name == "lenient") {
        c.accept_threshold = 62.0;
        c.coverage_threshold = 0.4;
        c.patience_base = 8.0;
        return c;
    }
    if (name == "strict") {
        c.accept_threshold = 78.0;
        c.coverage_threshold = 0.6;
        c.patience_base = 5.0;
        return c;
    }
    throw ConfigError("unknown strictness profile '" + std::string(name) + "'");
}

Json env_config_to_json(const EnvConfig& c) {
    Json j;
    j["K"] = c.max_turns;
    j["theta_acc"] = c.accept_threshold;
    j["theta_cov"] = c.coverage_threshold;
    j["theta_hang"] = c.hangup_threshold;
    j["delta_resolve"] = c.delta_resolve;
    j["delta_partial"] = c.delta_partial;
    j["delta_pitch"] = c.delta_pitch;
    j["delta_miss"] = c.delta_miss;
    j["delta_waste"] = c.delta_waste;
    j["delta_anti"] = c.delta_anti;
    j["unvoiced_discount"] = c.unvoiced_discount;
    j["patience_base"] = c.patience_base;
    j["patience_pressure_scale"] = c.patience_pressure_scale;
    return j;
}

EnvConfig env_config_from_json(const Json& doc) {
    reject_unknown_keys(doc,
                        {"profile", "K", "theta_acc", "theta_cov", "theta_hang", "delta_resolve",
                         "delta_partial", "delta_pitch", "delta_miss", "delta_waste", "delta_anti",
                         "unvoiced_discount", "patience_base", "patience_pressure_scale"},
                        "env config");
    try {
        EnvConfig c = strictness_preset(doc.contains("profile") ? doc.at("profile").get<std::string>()
                                                                : std::string("default"));
        auto num = [&](const char* key, double& out) {
            if (!doc.contains(key)) return;
            if (!doc.at(key).is_number()) throw ParseError(std::string("env config: '") + key + "' must be a number");
            out = doc.at(key).get<double>();
        };
        if (doc.contains("K")) {
            if (!doc.at("K").is_number_integer()) throw ParseError("env config: 'K' must be an integer");
            c.max_turns = doc.at("K").get<int>();
        }
        num("theta_acc", c.accept_threshold);
        num("theta_cov", c.coverage_threshold);
        num("theta_hang", c.hangup_threshold);
        num("delta_resolve", c.delta_resolve);
        num("delta_partial", c.delta_partial);
        num("delta_pitch", c.delta_pitch);
        num("delta_miss", c.delta_miss);
        num("delta_waste", c.delta_waste);
        num("delta_anti", c.delta_anti);
        num("unvoiced_discount", c.unvoiced_discount);
        num("patience_base", c.patience_base);
        num("patience_pressure_scale", c.patience_pressure_scale);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("env config: ") + e.what());
    }
}

double cooperation_multiplier(double cooperation) { return 0.75 + 0.5 * cooperation; }

int initial_patience(const ExternalTraits& traits, const EnvConfig& config) {
    return static_cast<int>(
        std::lround(config.patience_base * (1.0 - traits.time_pressure * config.patience_pressure_scale)));
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

const ConcernSlot* UserState::slot(std::size_t concern) const {
    for (const auto& s : concerns)
        if (s.concern == concern) return &s;
    return nullptr;
}

std::size_t UserState::resolved_count() const {
    return static_cast<std::size_t>(std::count_if(
        concerns.begin(), concerns.end(), [](const ConcernSlot& s) { return s.state == ConcernState::Resolved; }));
}

ResetResult reset(const PersonaProfile& persona, const ConcernBank& bank, const EnvConfig& config) {
    check_persona(persona, bank);
    config.validate();
    ResetResult r;
    r.state.willingness = persona.initial_willingness;
    for (const auto& id : persona.internal) r.state.concerns.push_back({*bank.find_concern(id)});
    r.state.voiced.assign(bank.concerns.size(), false);
    r.state.patience = initial_patience(persona.external, config);
    r.opening_context = "Outbound call for '" + bank.name +
                        "'. Open the conversation, surface the user's concerns and secure enrollment.";
    return r;
}

Decision terminal_decision(const UserState& state, const PersonaProfile& persona, const EnvConfig& config) {
    // An empty concern set passes the coverage gate vacuously.
    const double coverage = persona.internal.empty()
                                ? 1.0
                                : static_cast<double>(state.resolved_count()) /
                                      static_cast<double>(persona.internal.size());
    return (state.willingness >= config.accept_threshold && coverage >= config.coverage_threshold)
               ? Decision::Accept
               : Decision::Reject;
}

double reward(Decision decision) { return decision == Decision::Accept ? 1.0 : -1.0; }

namespace {

bool pattern_matches(std::string_view pattern, const AgentAct& act, const ConcernBank& bank) {
    if (auto v = anti_pattern_verb(pattern)) return act.verb == *v;
    return act.verb == Verb::Address && bank.tactics[act.tactic] == *anti_pattern_tactic(pattern);
}

void check_act(const AgentAct& act, const ConcernBank& bank) {
    if (act.verb == Verb::Probe && act.dimension >= bank.dimensions.size())
        throw DomainError("probe: dimension index out of range");
    if (act.verb == Verb::Address &&
        (act.concern >= bank.concerns.size() || act.tactic >= bank.tactics.size()))
        throw DomainError("address: concern or tactic index out of range");
}

}  // namespace

StepResult step(const UserState& state, const AgentAct& act, const PersonaProfile& persona,
                const ConcernBank& bank, const EnvConfig& config, Rng& rng) {
    if (state.terminated) throw DomainError("step on a terminated episode");
    check_act(act, bank);

    StepResult r{state, {}};
    UserState& s = r.state;
    TurnOutcome& out = r.outcome;
    double raw = 0.0;
    auto unproductive = [&](double delta, EventKind kind) {
        raw += delta;
        s.patience -= 1;
        out.event = kind;
    };

    // (1) Anti-patterns of concerns the user still holds consume the act.
    for (const auto& slot : state.concerns) {
        if (slot.state == ConcernState::Resolved) continue;
        const auto& spec = bank.concerns[slot.concern];
        for (const auto& p : spec.anti_patterns) {
            if (pattern_matches(p, act, bank)) {
                raw += config.delta_anti * spec.weight;
                out.anti_pattern_hit = true;
                break;
            }
        }
    }

    if (out.anti_pattern_hit) {
        out.event = EventKind::AntiPattern;
    } else {
        switch (act.verb) {
            case Verb::Probe: {  // (2)
                std::optional<std::size_t> target;
                for (const auto& slot : state.concerns) {
                    if (bank.dimension_of(slot.concern) == act.dimension && !s.voiced[slot.concern] &&
                        (!target || slot.concern < *target))
                        target = slot.concern;
                }
                if (target) {
                    s.voiced[*target] = true;
                    out.voiced_now.push_back(*target);
                    out.event = EventKind::Voiced;
                } else {
                    unproductive(config.delta_waste, EventKind::Waste);
                }
                break;
            }
            case Verb::Address: {  // (3)
                auto it = std::find_if(s.concerns.begin(), s.concerns.end(),
                                       [&](const ConcernSlot& sl) { return sl.concern == act.concern; });
                const auto& spec = bank.concerns[act.concern];
                bool prerequisite_met = true;
                if (spec.prerequisite) {
                    // A prerequisite the user does not hold is trivially met.
                    const ConcernSlot* pre = s.slot(*bank.find_concern(*spec.prerequisite));
                    prerequisite_met = pre == nullptr || pre->state >= ConcernState::PartiallyAddressed;
                }
                if (it == s.concerns.end() || it->state == ConcernState::Resolved ||
                    !bank.unlocks(act.concern, act.tactic) || !prerequisite_met) {
                    unproductive(config.delta_miss, EventKind::Miss);
                    break;
                }
                const ConcernState from = it->state;
                const ConcernState to = from == ConcernState::Unresolved ? ConcernState::PartiallyAddressed
                                                                         : ConcernState::Resolved;
                double gain = (to == ConcernState::Resolved ? config.delta_resolve : config.delta_partial) *
                              spec.weight;
                if (!s.voiced[act.concern]) {
                    gain *= config.unvoiced_discount;
                    s.voiced[act.concern] = true;
                    out.voiced_now.push_back(act.concern);
                }
                raw += gain;
                it->state = to;
                out.concern_transitions.push_back({act.concern, from, to});
                out.event = to == ConcernState::Resolved ? EventKind::Resolved : EventKind::Progress;
                break;
            }
            case Verb::Pitch:  // (4)
                if (!s.pitched) {
                    s.pitched = true;
                    raw += config.delta_pitch;
                    out.event = EventKind::PitchHeard;
                } else {
                    unproductive(config.delta_waste, EventKind::Waste);
                }
                break;
            case Verb::Acknowledge:  // (5)
                out.event = EventKind::Neutral;
                break;
            case Verb::Close:  // (6)
                if (terminal_decision(state, persona, config) == Decision::Accept) {
                    s.terminated = true;
                    s.decision = Decision::Accept;
                    out.event = EventKind::Accepted;
                } else {
                    unproductive(config.delta_miss, EventKind::CloseDeclined);
                }
                break;
        }
    }

    // (7) Willingness update, hangup check, turn budget.
    out.delta_w = raw * cooperation_multiplier(persona.external.cooperation);
    s.willingness = std::clamp(state.willingness + out.delta_w, 0.0, 100.0);
    s.turn = state.turn + 1;
    if (!s.terminated) {
        if (s.willingness <= config.hangup_threshold || s.patience <= 0) {
            s.terminated = true;
            s.decision = Decision::Reject;
            out.user_action = UserAction::Hangup;
        } else if (s.turn >= config.max_turns) {
            s.terminated = true;
            s.decision = terminal_decision(s, persona, config);
        }
    }
    out.done = s.terminated;
    out.decision = s.decision;
    out.utterance = render_utterance(out, persona.external, bank, rng);
    return r;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

struct Family {
    std::vector<std::string_view> lines;
};

const Family& family_for(EventKind e) {
    static const Family voiced{{"That is my main worry.", "That is what bothers me.", "So, that is the thing."}};
    static const Family progress{{"Okay, that helps a little, but I am not fully convinced.",
                                  "Hmm, that partly answers it, though I still have doubts."}};
    static const Family resolved{{"Alright, that settles that worry.", "Fine, that makes sense to me now."}};
    static const Family anti{{"That sounds like a sales trick, and I do not like it.",
                              "Please, do not push me like that."}};
    static const Family miss{{"That does not really answer what I care about.",
                              "I am not sure how that is relevant to me."}};
    static const Family waste{{"We already covered that, can we move on?", "You keep going in circles."}};
    static const Family pitch{{"Okay, tell me more about the program.", "I see, so that is the offer."}};
    static const Family neutral{{"Mm-hm.", "Okay.", "Right."}};
    static const Family close_declined{{"I am not ready to sign up yet, I still have doubts.",
                                        "Not so fast, there are things I am unsure about."}};
    static const Family accepted{{"Alright, sign me up.", "Okay, let us do it."}};
    switch (e) {
        case EventKind::Voiced: return voiced;
        case EventKind::Progress: return progress;
        case EventKind::Resolved: return resolved;
        case EventKind::AntiPattern: return anti;
        case EventKind::Miss: return miss;
        case EventKind::Waste: return waste;
        case EventKind::PitchHeard: return pitch;
        case EventKind::Neutral: return neutral;
        case EventKind::CloseDeclined: return close_declined;
        case EventKind::Accepted: return accepted;
    }
    return neutral;
}

const Family kHangup{{"Sorry, I have to go now.", "I am not interested, goodbye."}};
const Family kFinalAccept{{"Alright, you have convinced me, I will join.", "Fine, count me in."}};
const Family kFinalReject{{"I will pass for now, thanks.", "Let me think about it, but no, not this time."}};

std::string pick(const Family& f, Rng& rng) {
    return std::string(f.lines[rng.uniform_int(0, f.lines.size() - 1)]);
}

std::string first_clause(const std::string& s) {
    const auto cut = s.find_first_of(",.");
    if (cut == std::string::npos) return s;
    return s.substr(0, cut) + ".";
}

std::string sentence(std::string text) {
    while (!text.empty() && (text.back() == '.' || text.back() == ' ')) text.pop_back();
    return text + ".";
}

}  // namespace

std::string render_utterance(const TurnOutcome& outcome, const ExternalTraits& traits,
                             const ConcernBank& bank, Rng& rng) {
    std::vector<std::string> parts;
    for (auto c : outcome.voiced_now) parts.push_back(sentence(bank.concerns.at(c).resistance_text));

    std::string body = pick(family_for(outcome.event), rng);
    if (traits.communication_style == CommunicationStyle::Terse) body = first_clause(body);
    if (!(outcome.event == EventKind::Voiced && traits.communication_style == CommunicationStyle::Terse))
        parts.push_back(body);

    // filler goes before any closing line; a hang-up ends mid-thought
    if (traits.communication_style == CommunicationStyle::Verbose && outcome.user_action != UserAction::Hangup)
        parts.push_back("Anyway, I have a lot going on today, so let us keep this moving.");
    if (outcome.user_action == UserAction::Hangup) {
        parts.push_back(pick(kHangup, rng));
    } else if (outcome.done && outcome.event != EventKind::Accepted) {
        parts.push_back(pick(outcome.decision == Decision::Accept ? kFinalAccept : kFinalReject, rng));
    }

    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ' ';
        out += p;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Observable view
// ---------------------------------------------------------------------------

void ObservableView::observe(const AgentAct& act, const TurnOutcome& outcome) {
    turn += 1;
    for (auto c : outcome.voiced_now) voiced[c] = true;
    for (const auto& t : outcome.concern_transitions)
        progress[t.concern] = std::max(progress[t.concern], static_cast<int>(t.to));
    if (!outcome.concern_transitions.empty()) last_event = ObservedEvent::Gain;
    else if (!outcome.voiced_now.empty()) last_event = ObservedEvent::Voiced;
    else if (outcome.delta_w < 0.0) last_event = ObservedEvent::Penalty;
    else last_event = ObservedEvent::Neutral;
    verb_counts[verb_index(act.verb)] += 1;
    last_act_repeated = last_act.has_value() && *last_act == act;
    last_act = act;
}

Json ObservableView::to_json(const ConcernBank& bank) const {
    Json j;
    j["turn"] = turn;
    Json v = Json::array();
    Json prog = Json::object();
    for (std::size_t c = 0; c < voiced.size(); ++c) {
        if (voiced[c]) v.push_back(bank.concerns[c].id);
        if (progress[c] > 0)
            prog[bank.concerns[c].id] = concern_state_name(static_cast<ConcernState>(progress[c]));
    }
    j["voiced"] = std::move(v);
    j["progress"] = std::move(prog);
    j["last_event"] = observed_event_name(last_event);
    j["verb_counts"] = verb_counts;
    j["last_act_repeated"] = last_act_repeated;
    return j;
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

std::uint64_t env_stream_seed(std::uint64_t episode_seed) { return derive_seed(episode_seed, {0x656e76}); }

Episode::Episode(const PersonaProfile& persona, const ConcernBank& bank, const EnvConfig& config,
                 std::uint64_t seed)
    : persona_(&persona), bank_(&bank), config_(config), codec_(bank), rng_(env_stream_seed(seed)),
      view_(bank) {
    auto r = reset(persona, bank, config);
    state_ = std::move(r.state);
    opening_ = std::move(r.opening_context);
    log_.seed = seed;
    log_.persona = persona;
    log_.config = config;
}

const TurnOutcome& Episode::apply(const AgentAct& act) {
    auto r = step(state_, act, *persona_, *bank_, config_, rng_);
    TurnRecord rec{state_.turn, view_, act, codec_.encode(act), std::move(r.outcome)};
    state_ = std::move(r.state);
    view_.observe(act, rec.outcome);
    log_.turns.push_back(std::move(rec));
    if (state_.terminated) finalize();
    return log_.turns.back().outcome;
}

void Episode::abandon() {
    if (state_.terminated) return;
    log_.abandoned = true;
    finalize();
}

void Episode::finalize() {
    log_.decision = state_.decision.value_or(Decision::Reject);
    log_.reward = reward(log_.decision);
    log_.csr_numerator = state_.resolved_count();
    log_.csr_denominator = state_.concerns.size();
}

EpisodeLog Episode::finish() && {
    if (!state_.terminated && !log_.abandoned) throw DomainError("episode has not terminated");
    return std::move(log_);
}

EpisodeLog run_episode(const ActPolicy& policy, const PersonaProfile& persona, const ConcernBank& bank,
                       const EnvConfig& config, std::uint64_t seed) {
    Episode ep(persona, bank, config, seed);
    while (!ep.done()) {
        AgentAct act;
        try {
            act = policy(ep.view());
        } catch (const std::exception& e) {
            throw EpisodeError("policy failed in episode seed " + std::to_string(seed) + " at turn " +
                               std::to_string(ep.state().turn) + ": " + e.what());
        }
        ep.apply(act);
    }
    return std::move(ep).finish();
}

// ---------------------------------------------------------------------------
// Serialization and replay
// ---------------------------------------------------------------------------

namespace {

Json header_json(const EpisodeLog& log, const ConcernBank& bank) {
    Json j;
    j["schema"] = kEpisodeSchema;
    j["tool_version"] = kToolVersion;
    j["seed"] = log.seed;
    j["bank"] = bank_to_json(bank);
    j["persona"] = persona_to_json(log.persona);
    j["env_config"] = env_config_to_json(log.config);
    return j;
}

Json turn_json(const TurnRecord& rec, const ConcernBank& bank) {
    Json j;
    j["turn"] = rec.turn;
    j["observable_view"] = rec.view.to_json(bank);
    j["act_tokens"] = rec.act_tokens;
    j["utterance"] = rec.outcome.utterance;
    j["user_action"] = user_action_name(rec.outcome.user_action);
    j["delta_w"] = rec.outcome.delta_w;
    Json tr = Json::array();
    for (const auto& t : rec.outcome.concern_transitions)
        tr.push_back({{"concern", bank.concerns[t.concern].id},
                      {"from", concern_state_name(t.from)},
                      {"to", concern_state_name(t.to)}});
    j["concern_transitions"] = std::move(tr);
    Json v = Json::array();
    for (auto c : rec.outcome.voiced_now) v.push_back(bank.concerns[c].id);
    j["voiced_now"] = std::move(v);
    return j;
}

Json final_json(const EpisodeLog& log) {
    Json j;
    j["decision"] = decision_name(log.decision);
    j["reward"] = log.reward;
    j["csr_numerator"] = log.csr_numerator;
    j["csr_denominator"] = log.csr_denominator;
    if (log.abandoned) j["abandoned"] = true;
    return j;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        if (nl > pos) lines.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

}  // namespace

std::string serialize_episode(const EpisodeLog& log, const ConcernBank& bank) {
    std::string out = header_json(log, bank).dump() + "\n";
    for (const auto& t : log.turns) out += turn_json(t, bank).dump() + "\n";
    out += final_json(log).dump() + "\n";
    return out;
}

ReplayResult replay_episode(std::string_view jsonl) {
    const auto lines = split_lines(jsonl);
    if (lines.size() < 2) throw ParseError("episode log: expected a header and a final record");
    const Json header = parse_json(lines.front(), "episode log header");
    if (!header.is_object() || !header.contains("schema") || header.at("schema") != kEpisodeSchema)
        throw ParseError("episode log: missing or unsupported schema");

    ConcernBank bank;
    PersonaProfile persona;
    EnvConfig config;
    std::uint64_t seed = 0;
    try {
        bank = bank_from_json(header.at("bank"));
        persona = persona_from_json(header.at("persona"));
        config = env_config_from_json(header.at("env_config"));
        seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("episode log header: ") + e.what());
    }
    if (auto v = validate_bank(bank); !v.empty()) throw ParseError("episode log: embedded bank is invalid");

    const ActCodec codec(bank);
    Episode ep(persona, bank, config, seed);
    const std::size_t turn_lines = lines.size() - 2;
    for (std::size_t i = 0; i < turn_lines; ++i) {
        const Json rec = parse_json(lines[i + 1], "episode log turn");
        const int turn = rec.value("turn", static_cast<int>(i));
        if (ep.done())
            return {false, turn, "log continues after the episode terminated"};
        AgentAct act;
        try {
            const auto tokens = rec.at("act_tokens").get<std::array<std::size_t, 2>>();
            act = codec.decode(tokens[0], tokens[1]);
        } catch (const std::exception& e) {
            return {false, turn, std::string("unreadable act tokens: ") + e.what()};
        }
        ep.apply(act);
        const Json expected = turn_json(ep.log().turns.back(), bank);
        if (expected != rec) {
            std::string field;
            for (const auto& item : expected.items())
                if (!rec.contains(item.key()) || rec.at(item.key()) != item.value()) {
                    field = item.key();
                    break;
                }
            return {false, turn, "turn " + std::to_string(turn) + " diverges in field '" + field + "'"};
        }
    }
    const Json final_rec = parse_json(lines.back(), "episode log final record");
    if (!ep.done()) {
        if (!final_rec.value("abandoned", false))
            return {false, -1, "log ends before the episode terminated"};
        ep.abandon();
    }
    EpisodeLog replayed = std::move(ep).finish();
    if (final_json(replayed) != final_rec) return {false, -1, "final record diverges"};
    return {true, std::nullopt, "ok"};
}

}  // namespace concernsim
