#include <doctest.h>

#include <set>

#include "concernsim/cus_env.hpp"
#include "concernsim/errors.hpp"
#include "reference_sim.hpp"

using namespace concernsim;
using testkit::make_persona;

namespace {

const ConcernBank& micro() {
    static const ConcernBank b = testkit::load_fixture_bank("micro");
    return b;
}

const ConcernBank& merchant() {
    static const ConcernBank b = testkit::load_fixture_bank("merchant_toy");
    return b;
}

EpisodeLog scripted(const std::vector<AgentAct>& acts, const PersonaProfile& p, const ConcernBank& bank,
                    const EnvConfig& cfg, std::uint64_t seed = 1) {
    std::size_t i = 0;
    auto policy = [&](const ObservableView&) { return i < acts.size() ? acts[i++] : AgentAct::acknowledge(); };
    return run_episode(policy, p, bank, cfg, seed);
}

}  // namespace

TEST_CASE("reset starts from the persona") {
    const auto p = make_persona({"fees_too_high", "data_breach", "lock_in", "downtime"}, 40.0);
    const auto r = reset(p, merchant(), {});
    CHECK(r.state.willingness == 40.0);
    CHECK(r.state.concerns.size() == 4);
    for (const auto& s : r.state.concerns) CHECK(s.state == ConcernState::Unresolved);
    CHECK(r.state.turn == 0);
    CHECK_FALSE(r.state.terminated);
    CHECK(reset(p, merchant(), {}).state == r.state);
    CHECK(r.opening_context.find("fees") == std::string::npos);
}

TEST_CASE("patience from time pressure") {
    ExternalTraits t;
    t.time_pressure = 1.0;
    EnvConfig c;
    c.patience_base = 6;
    c.patience_pressure_scale = 0.5;
    CHECK(initial_patience(t, c) == 3);
    t.time_pressure = 0.0;
    CHECK(initial_patience(t, c) == 6);
}

TEST_CASE("address on a voiced unresolved concern gains delta_partial") {
    const auto p = make_persona({"c1"}, 40.0, 0.5);
    CHECK(cooperation_multiplier(0.5) == 1.0);
    Rng rng(3);
    auto s = reset(p, micro(), {}).state;
    auto r = step(s, AgentAct::probe(0), p, micro(), {}, rng);
    CHECK(r.outcome.delta_w == 0.0);
    REQUIRE(r.outcome.voiced_now == std::vector<std::size_t>{0});
    r = step(r.state, AgentAct::address(0, 0), p, micro(), {}, rng);
    CHECK(r.outcome.delta_w == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(r.state.willingness == doctest::Approx(48.0).epsilon(1e-12));
    REQUIRE(r.outcome.concern_transitions.size() == 1);
    CHECK(r.outcome.concern_transitions[0].to == ConcernState::PartiallyAddressed);
}

TEST_CASE("unvoiced address is discounted and voices the concern") {
    const auto p = make_persona({"c1"}, 40.0);
    Rng rng(3);
    auto r = step(reset(p, micro(), {}).state, AgentAct::address(0, 0), p, micro(), {}, rng);
    CHECK(r.outcome.delta_w == doctest::Approx(4.0));
    CHECK(r.state.voiced[0]);
}

TEST_CASE("acknowledge is the identity act") {
    const auto p = make_persona({"c1", "c2"}, 40.0, 0.9, 0.3);
    Rng rng(3);
    const auto s = reset(p, micro(), {}).state;
    const auto r = step(s, AgentAct::acknowledge(), p, micro(), {}, rng);
    CHECK(r.outcome.delta_w == 0.0);
    CHECK(r.outcome.concern_transitions.empty());
    CHECK(r.state.patience == s.patience);
    CHECK(r.state.willingness == s.willingness);
}

TEST_CASE("anti-pattern at low willingness hangs up") {
    const auto p = make_persona({"c2"}, 15.0, 0.5);
    Rng rng(3);
    const auto r = step(reset(p, micro(), {}).state, AgentAct::pitch(), p, micro(), {}, rng);
    CHECK(r.outcome.anti_pattern_hit);
    CHECK(r.outcome.delta_w == -20.0);
    CHECK(r.state.willingness == 0.0);
    CHECK(r.outcome.user_action == UserAction::Hangup);
    CHECK(r.state.decision == Decision::Reject);
    CHECK(reward(*r.state.decision) == -1.0);
    const std::set<std::string> hangups{"Sorry, I have to go now.", "I am not interested, goodbye."};
    bool found = false;
    for (const auto& h : hangups) found |= r.outcome.utterance.find(h) != std::string::npos;
    CHECK(found);
}

TEST_CASE("misses, waste and repeated pitch cost patience") {
    const auto p = make_persona({"c1"}, 40.0);
    Rng rng(3);
    auto s = reset(p, micro(), {}).state;
    const int patience = s.patience;
    auto r = step(s, AgentAct::address(0, 1), p, micro(), {}, rng);  // wrong tactic
    CHECK(r.outcome.delta_w == -3.0);
    r = step(r.state, AgentAct::probe(1), p, micro(), {}, rng);  // nothing held there
    CHECK(r.outcome.delta_w == -2.0);
    r = step(r.state, AgentAct::pitch(), p, micro(), {}, rng);
    CHECK(r.outcome.delta_w == 5.0);
    r = step(r.state, AgentAct::pitch(), p, micro(), {}, rng);
    CHECK(r.outcome.delta_w == -2.0);
    CHECK(r.state.patience == patience - 3);
}

TEST_CASE("prerequisites gate progress unless the persona lacks them") {
    Rng rng(3);
    auto both = make_persona({"c1", "c2"}, 40.0);
    auto r = step(reset(both, micro(), {}).state, AgentAct::address(1, 1), both, micro(), {}, rng);
    CHECK(r.outcome.concern_transitions.empty());
    CHECK(r.outcome.delta_w == -3.0);
    auto only = make_persona({"c2"}, 40.0);
    r = step(reset(only, micro(), {}).state, AgentAct::address(1, 1), only, micro(), {}, rng);
    CHECK(r.outcome.concern_transitions.size() == 1);
}

TEST_CASE("terminal decision gates") {
    const auto p = make_persona({"fees_too_high", "data_breach", "lock_in", "downtime"}, 40.0);
    auto s = reset(p, merchant(), {}).state;
    s.willingness = 70;
    s.concerns[0].state = s.concerns[1].state = ConcernState::Resolved;
    CHECK(terminal_decision(s, p, {}) == Decision::Accept);
    s.willingness = 69.999;
    CHECK(terminal_decision(s, p, {}) == Decision::Reject);
    auto t = reset(p, merchant(), {}).state;
    t.willingness = 100;
    CHECK(terminal_decision(t, p, {}) == Decision::Reject);
    for (auto& c : t.concerns) c.state = ConcernState::Resolved;
    t.willingness = 0;
    CHECK(terminal_decision(t, p, {}) == Decision::Reject);
    CHECK(reward(Decision::Accept) == 1.0);
    CHECK(reward(Decision::Reject) == -1.0);
}

TEST_CASE("rendering") {
    ConcernBank b = micro();
    b.concerns[0].resistance_text = "The commission sounds high";
    TurnOutcome o;
    o.event = EventKind::Voiced;
    o.voiced_now = {0};
    ExternalTraits neutral;
    Rng a(5), c(5);
    const auto text = render_utterance(o, neutral, b, a);
    CHECK(text.find("The commission sounds high") != std::string::npos);
    CHECK(render_utterance(o, neutral, b, c) == text);

    ExternalTraits verbose;
    verbose.communication_style = CommunicationStyle::Verbose;
    TurnOutcome h;
    h.event = EventKind::AntiPattern;
    h.user_action = UserAction::Hangup;
    h.done = true;
    h.decision = Decision::Reject;
    Rng r(9);
    const auto bye = render_utterance(h, verbose, b, r);
    CHECK((bye.ends_with("Sorry, I have to go now.") || bye.ends_with("I am not interested, goodbye.")));
}

TEST_CASE("act codec round-trips the whole action space") {
    const ActCodec codec(merchant());
    std::set<std::array<std::size_t, 2>> seen;
    for (const auto& act : testkit::all_acts(merchant())) {
        const auto tok = codec.encode(act);
        CHECK(seen.insert(tok).second);
        CHECK(codec.decode(tok[0], tok[1]) == act);
    }
    CHECK_THROWS_AS(codec.decode(verb_index(Verb::Pitch), 1), DomainError);
    CHECK_THROWS_AS(codec.decode(verb_index(Verb::Probe), 0), DomainError);
}

TEST_CASE("all-acknowledge runs the full budget and rejects") {
    const auto p = sample_persona(merchant(), 11);
    const auto log = run_episode([](const ObservableView&) { return AgentAct::acknowledge(); }, p, merchant(), {}, 4);
    CHECK(log.turns.size() == 20);
    CHECK(log.decision == Decision::Reject);
    CHECK(log.reward == -1.0);
    for (const auto& t : log.turns) CHECK(t.outcome.delta_w == 0.0);
}

TEST_CASE("scripted optimal sequence on one concern accepts") {
    const auto p = make_persona({"c1"}, 45.0);
    const std::vector<AgentAct> acts{AgentAct::probe(0), AgentAct::address(0, 0), AgentAct::address(0, 0),
                                     AgentAct::pitch(), AgentAct::close()};
    const auto log = scripted(acts, p, micro(), {});
    CHECK(log.turns.size() == 5);
    CHECK(log.decision == Decision::Accept);
    CHECK(log.csr_numerator == 1);
    // the reference search agrees this sequence accepts
    EnvConfig k6;
    k6.max_turns = 6;
    const auto accepting = testkit::ref_accepting(p, micro(), k6);
    const auto all = testkit::all_acts(micro());
    std::vector<int> seq;
    for (const auto& a : acts) seq.push_back(static_cast<int>(std::find(all.begin(), all.end(), a) - all.begin()));
    CHECK(std::binary_search(accepting.begin(), accepting.end(), seq));
}

TEST_CASE("episodes are deterministic and replay") {
    const auto p = sample_persona(merchant(), 5);
    const auto a = testkit::random_episode(p, merchant(), {}, 77);
    const auto b = testkit::random_episode(p, merchant(), {}, 77);
    const auto text = serialize_episode(a, merchant());
    CHECK(text == serialize_episode(b, merchant()));
    CHECK(replay_episode(text).ok);
}

TEST_CASE("replay catches a tampered shift and names the turn") {
    const auto p = make_persona({"c1", "c2"}, 45.0);
    const std::vector<AgentAct> acts{AgentAct::probe(0), AgentAct::address(0, 0), AgentAct::address(0, 0),
                                     AgentAct::probe(1), AgentAct::address(1, 1)};
    const auto log = scripted(acts, p, micro(), {});
    std::string text = serialize_episode(log, micro());
    auto lines = std::vector<std::string>{};
    for (std::size_t pos = 0; pos < text.size();) {
        auto nl = text.find('\n', pos);
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    // header is line 0, turn k is line k+1
    auto j = Json::parse(lines[3]);
    j["delta_w"] = j["delta_w"].get<double>() + 1.0;
    lines[3] = j.dump();
    std::string tampered;
    for (const auto& l : lines) tampered += l + "\n";
    const auto r = replay_episode(tampered);
    CHECK_FALSE(r.ok);
    REQUIRE(r.first_bad_turn.has_value());
    CHECK(*r.first_bad_turn == 2);

    // verified by content, not by the recorded tool version
    auto h = Json::parse(lines[0]);
    h["tool_version"] = "9.9.9";
    std::string other = h.dump() + "\n" + text.substr(text.find('\n') + 1);
    CHECK(replay_episode(other).ok);
    CHECK_THROWS_AS(replay_episode("not json\n{}\n"), ParseError);
}

TEST_CASE("random episodes keep the simulator properties") {
    const char* presets[] = {"lenient", "default", "strict"};
    int n = 0;
    for (const char* bank_name : {"merchant_toy", "courier_toy"}) {
        const auto bank = testkit::load_fixture_bank(bank_name);
        for (std::uint64_t i = 0; i < 300; ++i) {
            const auto p = sample_persona(bank, i);
            const auto log = testkit::random_episode(p, bank, strictness_preset(presets[i % 3]), i);
            const auto v = testkit::episode_property_violation(log, bank);
            INFO(bank_name << " seed " << i << ": " << v);
            CHECK(v.empty());
            ++n;
        }
    }
    CHECK(n == 600);
}

TEST_CASE("strictness presets and env config documents") {
    const auto l = strictness_preset("lenient");
    CHECK(l.accept_threshold == 62.0);
    CHECK(l.coverage_threshold == 0.4);
    CHECK(l.patience_base == 8.0);
    const auto s = strictness_preset("strict");
    CHECK(s.accept_threshold == 78.0);
    CHECK(s.coverage_threshold == 0.6);
    CHECK(s.patience_base == 5.0);
    CHECK(strictness_preset("default") == EnvConfig{});
    CHECK_THROWS_AS(strictness_preset("harsh"), ConfigError);

    const auto c = env_config_from_json(Json::parse(R"({"profile": "strict", "K": 12, "delta_anti": -25})"));
    CHECK(c.max_turns == 12);
    CHECK(c.accept_threshold == 78.0);
    CHECK(c.delta_anti == -25.0);
    CHECK(env_config_from_json(env_config_to_json(c)) == c);
    CHECK_THROWS_AS(env_config_from_json(Json::parse(R"({"theta_accept": 1})")), ParseError);
    CHECK_THROWS_AS(env_config_from_json(Json::parse(R"({"theta_hang": 80})")), ConfigError);
    CHECK_THROWS_AS(env_config_from_json(Json::parse(R"({"delta_miss": 1})")), ConfigError);
}

TEST_CASE("stepping a finished episode is an error") {
    const auto p = make_persona({"c2"}, 15.0);
    Rng rng(1);
    const auto r = step(reset(p, micro(), {}).state, AgentAct::pitch(), p, micro(), {}, rng);
    REQUIRE(r.state.terminated);
    CHECK_THROWS_AS(step(r.state, AgentAct::acknowledge(), p, micro(), {}, rng), DomainError);
}
