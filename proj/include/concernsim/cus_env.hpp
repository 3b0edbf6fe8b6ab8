#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "concernsim/act.hpp"
#include "concernsim/errors.hpp"
#include "concernsim/json.hpp"
#include "concernsim/persona.hpp"
#include "concernsim/rng.hpp"

namespace concernsim {

// ---------------------------------------------------------------------------
// Acts and their two-token encoding
// ---------------------------------------------------------------------------

/// A structured agent turn. Indices refer to the episode's bank:
/// Probe uses `dimension`, Address uses `concern` and `tactic`.
struct AgentAct {
    Verb verb = Verb::Acknowledge;
    std::size_t dimension = 0;
    std::size_t concern = 0;
    std::size_t tactic = 0;

    static AgentAct probe(std::size_t dim) { return {Verb::Probe, dim, 0, 0}; }
    static AgentAct address(std::size_t c, std::size_t t) { return {Verb::Address, 0, c, t}; }
    static AgentAct pitch() { return {Verb::Pitch}; }
    static AgentAct close() { return {Verb::Close}; }
    static AgentAct acknowledge() { return {Verb::Acknowledge}; }

    bool operator==(const AgentAct& o) const;
};

std::string describe_act(const AgentAct& act, const ConcernBank& bank);

/// Maps acts to (verb token, argument token) pairs. Argument vocabulary:
/// 0 = none, then one token per dimension, then one per (concern, tactic)
/// pair in row-major order.
class ActCodec {
public:
    explicit ActCodec(const ConcernBank& bank)
        : dims_(bank.dimensions.size()), concerns_(bank.concerns.size()), tactics_(bank.tactics.size()) {}

    std::size_t argument_count() const { return 1 + dims_ + concerns_ * tactics_; }
    std::size_t dimension_count() const { return dims_; }
    std::size_t concern_count() const { return concerns_; }
    std::size_t tactic_count() const { return tactics_; }

    std::size_t probe_token(std::size_t dim) const { return 1 + dim; }
    std::size_t address_token(std::size_t c, std::size_t t) const { return 1 + dims_ + c * tactics_ + t; }

    bool argument_valid(Verb verb, std::size_t token) const;
    std::array<std::size_t, 2> encode(const AgentAct& act) const;
    /// Throws DomainError on an invalid pair.
    AgentAct decode(std::size_t verb_token, std::size_t arg_token) const;

private:
    std::size_t dims_, concerns_, tactics_;
};

// ---------------------------------------------------------------------------
// Simulator state
// ---------------------------------------------------------------------------

enum class ConcernState : std::uint8_t { Unresolved = 0, PartiallyAddressed = 1, Resolved = 2 };
enum class Decision { Accept, Reject };
enum class UserAction { Chat, Hangup };

std::string_view concern_state_name(ConcernState s);
std::optional<ConcernState> parse_concern_state(std::string_view s);
std::string_view decision_name(Decision d);
std::string_view user_action_name(UserAction a);

struct ConcernSlot {
    std::size_t concern;  // bank index
    ConcernState state = ConcernState::Unresolved;

    bool operator==(const ConcernSlot&) const = default;
};

struct UserState {
    double willingness = 0.0;
    std::vector<ConcernSlot> concerns;  // persona.internal order
    std::vector<bool> voiced;           // indexed by bank concern
    int patience = 0;
    int turn = 0;
    bool terminated = false;
    bool pitched = false;
    std::optional<Decision> decision;

    const ConcernSlot* slot(std::size_t concern) const;
    std::size_t resolved_count() const;

    bool operator==(const UserState&) const = default;
};

/// What the user's reply conveys; drives rendering and observation.
enum class EventKind {
    Voiced,
    Progress,
    Resolved,
    AntiPattern,
    Miss,
    Waste,
    PitchHeard,
    Neutral,
    CloseDeclined,
    Accepted,
};

struct ConcernTransition {
    std::size_t concern;
    ConcernState from;
    ConcernState to;

    bool operator==(const ConcernTransition&) const = default;
};

struct TurnOutcome {
    std::string utterance;
    UserAction user_action = UserAction::Chat;
    double delta_w = 0.0;
    std::vector<ConcernTransition> concern_transitions;
    std::vector<std::size_t> voiced_now;
    bool done = false;
    std::optional<Decision> decision;
    EventKind event = EventKind::Neutral;
    bool anti_pattern_hit = false;
};

struct EnvConfig {
    int max_turns = 20;
    double accept_threshold = 70.0;
    double coverage_threshold = 0.5;
    double hangup_threshold = 10.0;
    double delta_resolve = 15.0;
    double delta_partial = 8.0;
    double delta_pitch = 5.0;
    double delta_miss = -3.0;
    double delta_waste = -2.0;
    double delta_anti = -20.0;
    double unvoiced_discount = 0.5;
    double patience_base = 6.0;
    double patience_pressure_scale = 0.5;

    /// Throws ConfigError naming the violated constraint.
    void validate() const;
    bool operator==(const EnvConfig&) const = default;
};

/// Named presets: "lenient", "default", "strict".
EnvConfig strictness_preset(std::string_view name);

Json env_config_to_json(const EnvConfig& config);
/// Every key optional; an optional "profile" key selects the base preset.
EnvConfig env_config_from_json(const Json& doc);

/// Delta multiplier derived from the cooperation trait, in [0.75, 1.25].
double cooperation_multiplier(double cooperation);
int initial_patience(const ExternalTraits& traits, const EnvConfig& config);

// ---------------------------------------------------------------------------
// Observable view (everything the deployed agent may condition on)
// ---------------------------------------------------------------------------

enum class ObservedEvent : std::size_t { Voiced = 0, Gain = 1, Penalty = 2, Neutral = 3, Opening = 4 };
inline constexpr std::size_t kObservedEventCount = 5;

std::string_view observed_event_name(ObservedEvent e);

struct ObservableView {
    int turn = 0;
    std::vector<bool> voiced;    // per bank concern
    std::vector<int> progress;   // per bank concern: 0 none, 1 partial, 2 resolved
    ObservedEvent last_event = ObservedEvent::Opening;
    std::array<int, kVerbCount> verb_counts{};
    std::optional<AgentAct> last_act;
    bool last_act_repeated = false;

    explicit ObservableView(const ConcernBank& bank)
        : voiced(bank.concerns.size(), false), progress(bank.concerns.size(), 0) {}

    /// Folds in the agent's act and what the user's reply made visible.
    void observe(const AgentAct& act, const TurnOutcome& outcome);

    Json to_json(const ConcernBank& bank) const;
    bool operator==(const ObservableView&) const = default;
};

// ---------------------------------------------------------------------------
// Transition system
// ---------------------------------------------------------------------------

struct ResetResult {
    UserState state;
    std::string opening_context;  // task instruction only
};

ResetResult reset(const PersonaProfile& persona, const ConcernBank& bank, const EnvConfig& config);

struct StepResult {
    UserState state;
    TurnOutcome outcome;
};

StepResult step(const UserState& state, const AgentAct& act, const PersonaProfile& persona,
                const ConcernBank& bank, const EnvConfig& config, Rng& rng);

Decision terminal_decision(const UserState& state, const PersonaProfile& persona, const EnvConfig& config);

double reward(Decision decision);

std::string render_utterance(const TurnOutcome& outcome, const ExternalTraits& traits,
                             const ConcernBank& bank, Rng& rng);

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct TurnRecord {
    int turn = 0;
    ObservableView view;  // what the agent saw before acting
    AgentAct act;
    std::array<std::size_t, 2> act_tokens{};
    TurnOutcome outcome;
};

struct EpisodeLog {
    std::uint64_t seed = 0;
    PersonaProfile persona;
    EnvConfig config;
    std::vector<TurnRecord> turns;
    Decision decision = Decision::Reject;
    double reward = -1.0;
    std::size_t csr_numerator = 0;
    std::size_t csr_denominator = 0;
    bool abandoned = false;
};

using ActPolicy = std::function<AgentAct(const ObservableView&)>;

/// Incremental episode driver shared by run_episode, replay and play mode.
class Episode {
public:
    Episode(const PersonaProfile& persona, const ConcernBank& bank, const EnvConfig& config,
            std::uint64_t seed);

    const ObservableView& view() const { return view_; }
    const UserState& state() const { return state_; }
    const EpisodeLog& log() const { return log_; }
    const std::string& opening_context() const { return opening_; }
    bool done() const { return state_.terminated; }

    const TurnOutcome& apply(const AgentAct& act);
    /// Ends a live episode without a user decision (counted as Reject).
    void abandon();
    EpisodeLog finish() &&;

private:
    void finalize();

    const PersonaProfile* persona_;
    const ConcernBank* bank_;
    EnvConfig config_;
    ActCodec codec_;
    Rng rng_;
    UserState state_;
    ObservableView view_;
    std::string opening_;
    EpisodeLog log_;
};

/// Rendering stream for an episode seed; the policy should draw from a
/// different derived stream.
std::uint64_t env_stream_seed(std::uint64_t episode_seed);

/// Runs one episode to termination. Exceptions thrown by the policy are
/// rethrown as EpisodeError with the seed and turn attached.
EpisodeLog run_episode(const ActPolicy& policy, const PersonaProfile& persona, const ConcernBank& bank,
                       const EnvConfig& config, std::uint64_t seed);

class EpisodeError : public DomainError {
public:
    using DomainError::DomainError;
};

inline constexpr std::string_view kEpisodeSchema = "concernsim.episode/1";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// JSON Lines: a header record (schema, seed, bank, persona, env config),
/// one record per turn, then a final record.
std::string serialize_episode(const EpisodeLog& log, const ConcernBank& bank);

struct ReplayResult {
    bool ok = true;
    std::optional<int> first_bad_turn;  // -1 for header/final-record divergence
    std::string message;
};

/// Re-executes the recorded acts in a fresh environment and compares every
/// emitted record with the log's content.
ReplayResult replay_episode(std::string_view jsonl);

}  // namespace concernsim
