#include "reference_sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "concernsim/json.hpp"
#include "concernsim/rng.hpp"

using namespace concernsim;

namespace testkit {

std::string source_path(const std::string& rel) { return std::string(CONCERNSIM_SOURCE_DIR) + "/" + rel; }

ConcernBank load_fixture_bank(const std::string& name) {
    return load_bank_file(source_path("data/banks/" + name + ".json"));
}

namespace {

std::size_t index_of(const std::vector<ConcernSpec>& cs, const std::string& id) {
    for (std::size_t i = 0; i < cs.size(); ++i)
        if (cs[i].id == id) return i;
    return cs.size();
}

bool hits(const std::string& pattern, const AgentAct& act, const ConcernBank& bank) {
    static const char* verbs[] = {"probe", "address", "pitch", "close", "acknowledge"};
    for (int v = 0; v < 5; ++v)
        if (pattern == verbs[v]) return static_cast<int>(act.verb) == v;
    std::string tactic = pattern;
    if (tactic.rfind("address:", 0) == 0) tactic = tactic.substr(8);
    return act.verb == Verb::Address && bank.tactics[act.tactic] == tactic;
}

}  // namespace

RefState ref_start(const PersonaProfile& p, const ConcernBank& bank, const EnvConfig& cfg) {
    RefState s;
    s.w = p.initial_willingness;
    s.level.assign(bank.concerns.size(), -1);
    s.voiced.assign(bank.concerns.size(), false);
    for (const auto& id : p.internal) s.level[index_of(bank.concerns, id)] = 0;
    s.held = p.internal.size();
    s.patience = static_cast<int>(std::lround(cfg.patience_base *
                                              (1.0 - p.external.time_pressure * cfg.patience_pressure_scale)));
    return s;
}

bool ref_gates(const RefState& s, const EnvConfig& cfg) {
    std::size_t resolved = 0;
    for (int l : s.level) resolved += l == 2;
    const double cov = s.held == 0 ? 1.0 : double(resolved) / double(s.held);
    return s.w >= cfg.accept_threshold && cov >= cfg.coverage_threshold;
}

double ref_step(RefState& s, const AgentAct& act, const PersonaProfile& p, const ConcernBank& bank,
                const EnvConfig& cfg) {
    double d = 0.0;
    bool anti = false;
    for (std::size_t c = 0; c < bank.concerns.size(); ++c) {
        if (s.level[c] < 0 || s.level[c] == 2) continue;
        for (const auto& pat : bank.concerns[c].anti_patterns)
            if (hits(pat, act, bank)) {
                d += cfg.delta_anti * bank.concerns[c].weight;
                anti = true;
                break;
            }
    }
    if (!anti) {
        switch (act.verb) {
            case Verb::Probe: {
                int found = -1;
                for (std::size_t c = 0; c < bank.concerns.size() && found < 0; ++c)
                    if (s.level[c] >= 0 && !s.voiced[c] && bank.concerns[c].dimension == bank.dimensions[act.dimension].id)
                        found = static_cast<int>(c);
                if (found >= 0) s.voiced[found] = true;
                else {
                    d += cfg.delta_waste;
                    s.patience--;
                }
                break;
            }
            case Verb::Address: {
                const auto& spec = bank.concerns[act.concern];
                const bool unlock = std::count(spec.unlock_tactics.begin(), spec.unlock_tactics.end(),
                                               bank.tactics[act.tactic]) > 0;
                bool pre_ok = true;
                if (spec.prerequisite) {
                    const int q = s.level[index_of(bank.concerns, *spec.prerequisite)];
                    pre_ok = q < 0 || q >= 1;
                }
                const int l = s.level[act.concern];
                if (l < 0 || l == 2 || !unlock || !pre_ok) {
                    d += cfg.delta_miss;
                    s.patience--;
                    break;
                }
                double g = (l == 0 ? cfg.delta_partial : cfg.delta_resolve) * spec.weight;
                if (!s.voiced[act.concern]) g *= cfg.unvoiced_discount;
                s.voiced[act.concern] = true;
                s.level[act.concern] = l + 1;
                d += g;
                break;
            }
            case Verb::Pitch:
                if (s.pitched) {
                    d += cfg.delta_waste;
                    s.patience--;
                } else {
                    s.pitched = true;
                    d += cfg.delta_pitch;
                }
                break;
            case Verb::Close:
                if (ref_gates(s, cfg)) {
                    s.done = true;
                    s.accepted = true;
                } else {
                    d += cfg.delta_miss;
                    s.patience--;
                }
                break;
            case Verb::Acknowledge: break;
        }
    }
    d *= 0.75 + 0.5 * p.external.cooperation;
    s.w = std::min(100.0, std::max(0.0, s.w + d));
    s.turn++;
    if (!s.done) {
        if (s.w <= cfg.hangup_threshold || s.patience <= 0) {
            s.done = true;
        } else if (s.turn >= cfg.max_turns) {
            s.done = true;
            s.accepted = ref_gates(s, cfg);
        }
    }
    return d;
}

std::vector<AgentAct> all_acts(const ConcernBank& bank) {
    std::vector<AgentAct> acts;
    for (std::size_t d = 0; d < bank.dimensions.size(); ++d) acts.push_back(AgentAct::probe(d));
    for (std::size_t c = 0; c < bank.concerns.size(); ++c)
        for (std::size_t t = 0; t < bank.tactics.size(); ++t) acts.push_back(AgentAct::address(c, t));
    acts.push_back(AgentAct::pitch());
    acts.push_back(AgentAct::close());
    acts.push_back(AgentAct::acknowledge());
    return acts;
}

std::vector<std::vector<int>> ref_accepting(const PersonaProfile& p, const ConcernBank& bank, const EnvConfig& cfg) {
    const auto acts = all_acts(bank);
    std::vector<std::vector<int>> found;
    std::vector<int> seq;
    std::function<void(const RefState&)> dfs = [&](const RefState& s) {
        for (int i = 0; i < static_cast<int>(acts.size()); ++i) {
            RefState n = s;
            ref_step(n, acts[i], p, bank, cfg);
            seq.push_back(i);
            if (n.done) {
                if (n.accepted) found.push_back(seq);
            } else {
                dfs(n);
            }
            seq.pop_back();
        }
    };
    dfs(ref_start(p, bank, cfg));
    std::sort(found.begin(), found.end());
    return found;
}

std::vector<std::vector<int>> env_accepting(const PersonaProfile& p, const ConcernBank& bank, const EnvConfig& cfg) {
    const auto acts = all_acts(bank);
    std::vector<std::vector<int>> found;
    std::vector<int> seq;
    Rng rng(1);
    std::function<void(const UserState&)> dfs = [&](const UserState& s) {
        for (int i = 0; i < static_cast<int>(acts.size()); ++i) {
            auto r = step(s, acts[i], p, bank, cfg, rng);
            seq.push_back(i);
            if (r.state.terminated) {
                if (r.state.decision == Decision::Accept) found.push_back(seq);
            } else {
                dfs(r.state);
            }
            seq.pop_back();
        }
    };
    dfs(reset(p, bank, cfg).state);
    std::sort(found.begin(), found.end());
    return found;
}

std::string episode_property_violation(const EpisodeLog& log, const ConcernBank& bank) {
    const EnvConfig& cfg = log.config;
    std::vector<int> level(bank.concerns.size(), 0);
    double min_weight = 1e300;
    for (const auto& c : bank.concerns) min_weight = std::min(min_weight, c.weight);
    double w = log.persona.initial_willingness;
    bool pitched = false;
    if (log.turns.empty()) return "no turns";
    if (static_cast<int>(log.turns.size()) > cfg.max_turns) return "episode longer than K";
    for (std::size_t k = 0; k < log.turns.size(); ++k) {
        const auto& t = log.turns[k];
        const auto& o = t.outcome;
        const std::string at = "turn " + std::to_string(k) + ": ";
        for (const auto& tr : o.concern_transitions) {
            if (static_cast<int>(tr.from) != level[tr.concern]) return at + "transition from a stale state";
            if (tr.to <= tr.from) return at + "non-increasing transition";
            level[tr.concern] = static_cast<int>(tr.to);
        }
        w = std::min(100.0, std::max(0.0, w + o.delta_w));
        if (!(w >= 0.0 && w <= 100.0)) return at + "willingness out of range";
        const bool first_pitch = t.act.verb == Verb::Pitch && !pitched && !o.anti_pattern_hit;
        if (t.act.verb == Verb::Pitch && !o.anti_pattern_hit) pitched = true;
        if (o.delta_w > 0.0 && o.concern_transitions.empty() && !first_pitch) return at + "ungrounded positive shift";
        if (o.anti_pattern_hit && !(o.delta_w <= cfg.delta_anti * min_weight * 0.75)) return at + "weak anti-pattern penalty";
        const bool last = k + 1 == log.turns.size();
        if (o.done != last) return at + "done flag disagrees with episode end";
        if (o.done != o.decision.has_value()) return at + "decision present without termination or vice versa";
    }
    if (log.turns.back().outcome.decision != log.decision) return "final decision mismatch";
    if (log.decision == Decision::Accept) {
        std::size_t resolved = 0;
        for (int l : level) resolved += l == 2;
        const double cov = log.persona.internal.empty() ? 1.0 : double(resolved) / log.persona.internal.size();
        // the gate is read before the accepting turn's own (zero) shift
        if (!(w >= cfg.accept_threshold && cov >= cfg.coverage_threshold)) return "accept without both gates";
    }
    if (log.reward != (log.decision == Decision::Accept ? 1.0 : -1.0)) return "reward mismatch";
    return {};
}

EpisodeLog random_episode(const PersonaProfile& p, const ConcernBank& bank, const EnvConfig& cfg, std::uint64_t seed) {
    const auto acts = all_acts(bank);
    Rng rng(derive_seed(seed, {99}));
    auto policy = [&](const ObservableView&) { return acts[rng.uniform_int(0, acts.size() - 1)]; };
    return run_episode(policy, p, bank, cfg, seed);
}

PersonaProfile make_persona(std::vector<std::string> ids, double w0, double cooperation, double time_pressure) {
    PersonaProfile p;
    p.internal = std::move(ids);
    p.initial_willingness = w0;
    p.external.cooperation = cooperation;
    p.external.time_pressure = time_pressure;
    return p;
}

}  // namespace testkit
