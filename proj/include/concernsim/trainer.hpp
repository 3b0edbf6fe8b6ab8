#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "concernsim/cus_env.hpp"
#include "concernsim/eval_metrics.hpp"
#include "concernsim/json.hpp"
#include "concernsim/persona.hpp"
#include "concernsim/policy.hpp"

namespace concernsim {

enum class TrainMode { SiAvpo, Grpo, AopdOnly, StprOnly };
enum class PhiSchedule { Constant, LinearDecay, FrontLoaded };
enum class PolicyView { Deployable, Privileged };

std::string_view mode_name(TrainMode m);
std::optional<TrainMode> parse_mode(std::string_view s);
std::string_view phi_name(PhiSchedule s);
std::optional<PhiSchedule> parse_phi(std::string_view s);
std::string_view view_name(PolicyView v);
std::optional<PolicyView> parse_view(std::string_view s);

struct TrainConfig {
    TrainMode mode = TrainMode::SiAvpo;
    std::size_t group_size = 8;             // G
    std::size_t groups_per_iteration = 16;  // one persona per group
    int epochs = 3;                         // E
    double learning_rate = 1e-3;
    double clip_epsilon = 0.2;
    double norm_epsilon = 1e-8;
    double tau = 0.5;
    double lambda_st = 1.0;
    PhiSchedule phi = PhiSchedule::Constant;
    std::size_t minibatch_size = 256;  // tokens
    std::size_t iterations = 200;
    std::uint64_t seed = 0;
    /// View the policy acts and is optimized under. Privileged is only for
    /// the conditioning contrast; deployment always uses Deployable.
    PolicyView rollout_view = PolicyView::Deployable;
    /// Draw a fresh persona per rollout instead of one per group.
    bool per_rollout_persona = false;
    /// Strength of the bank-derived privileged-column initialization.
    double prior_strength = 1.0;
    /// Strength of the reactive deployable-column initialization.
    double base_prior_strength = 1.0;
    /// Diagnostic: treat every willingness shift as zero when forming A_st.
    bool ignore_shifts = false;
    double temperature = 1.0;
    std::size_t eval_personas = 100;
    std::size_t eval_every = 10;  // 0 disables in-training evaluation
    std::size_t threads = 1;
    SamplingConfig sampling;

    /// Throws ConfigError naming the violated constraint.
    void validate() const;
};

/// Training run description as read from a config file: trainer settings
/// plus the environment they train against.
struct RunConfig {
    TrainConfig train;
    EnvConfig env;
};

Json train_config_to_json(const TrainConfig& c);
/// Keys are optional; unknown keys are rejected with ParseError. A nested
/// "env" object configures the environment; a top-level "K" sets its turn
/// budget.
RunConfig run_config_from_json(const Json& doc);
Json run_config_to_json(const RunConfig& c);

double phi_weight(PhiSchedule schedule, int turn, int max_turns);

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct TurnSample {
    ObservationFeatures deployable;
    ObservationFeatures privileged;  // empty unless requested
    std::array<std::size_t, 2> tokens{};
    std::array<double, 2> old_logprobs{};
    int turn = 0;
    double delta_w = 0.0;
    std::size_t transitions = 0;
    double a_st = 0.0;

    const ObservationFeatures& acting(PolicyView v) const {
        return v == PolicyView::Privileged ? privileged : deployable;
    }
};

struct RolloutRecord {
    PersonaProfile persona;
    std::vector<TurnSample> turns;
    double reward = -1.0;
    Decision decision = Decision::Reject;
    EpisodeLog log;

    std::size_t token_count() const { return 2 * turns.size(); }
};

struct GroupBatch {
    std::vector<RolloutRecord> rollouts;
    double reward_mean = 0.0;
    double reward_std = 0.0;  // population
    double max_abs_shift = 0.0;
    std::vector<double> a_traj;
};

/// Population-normalized group advantage (r_i - mean) / (std + eps).
std::vector<double> traj_advantage(std::span<const double> rewards, double norm_epsilon);

/// State-transition advantage for one turn; zero shift keeps a_traj.
double st_advantage(double a_traj, double delta_w, double max_abs_shift, double tau);

/// Fills group statistics, A_traj and per-turn A_st according to the mode.
void assign_credit(GroupBatch& batch, const TrainConfig& config);

/// G rollouts of the policy (sampling under `config.rollout_view`). With a
/// single persona the group shares it; otherwise `personas` must have G
/// entries. Rollout i uses episode seed derive_seed(seed, {i}).
GroupBatch collect_group(const PolicyParams& params, std::span<const PersonaProfile> personas,
                         const ConcernBank& bank, const EnvConfig& env, const TrainConfig& config,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct TokenSample {
    const ObservationFeatures* acting = nullptr;
    const ObservationFeatures* privileged = nullptr;
    const ObservationFeatures* deployable = nullptr;
    TokenPosition position = TokenPosition::Verb;
    Verb verb = Verb::Acknowledge;
    std::size_t token = 0;
    double old_logprob = 0.0;
    double advantage = 0.0;  // A_st of the token's turn
    int turn = 0;
};

/// One entry per assistant token, two per turn.
std::vector<TokenSample> flatten_tokens(std::span<const GroupBatch> batches, PolicyView view);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Mean over tokens of phi(k(t), K) * KL(sg[privileged] || deployable).
LossGrad aopd_loss(const PolicyParams& params, std::span<const TokenSample> tokens, PhiSchedule phi,
                   int max_turns);

/// Scalar PPO-style term min(rho * A, clip(rho, 1-eps, 1+eps) * A) and
/// whether its gradient is nonzero (false when the clipped branch binds).
struct ClippedTerm {
    double value;
    bool gradient_flows;
};
ClippedTerm clipped_objective(double ratio, double advantage, double clip_epsilon);

/// -(1/N) sum of clipped terms with ratios against the stored old log-probs.
LossGrad stpr_loss(const PolicyParams& params, std::span<const TokenSample> tokens, double clip_epsilon);
LossGrad stpr_loss(const PolicyParams& params, const GroupBatch& batch, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

using PersonaSampler = std::function<PersonaProfile(std::uint64_t seed)>;

struct IterationStats {
    std::size_t iteration = 0;
    double loss_aopd = 0.0;
    double loss_stpr = 0.0;
    double train_ar = 0.0;
    double train_csr = 0.0;
    double mean_abs_ast = 0.0;
    std::size_t tokens = 0;
    std::optional<double> eval_ar;
    std::optional<double> eval_csr;
    double wall_seconds = 0.0;
};

Json iteration_stats_to_json(const IterationStats& s, bool timestamps);

/// One pass of collection, credit assignment and E epochs of minibatch
/// updates. Non-finite losses or gradients throw DomainError.
IterationStats train_iteration(PolicyParams& params, const TrainConfig& config, const ConcernBank& bank,
                               const EnvConfig& env, const PersonaSampler& sampler, std::size_t iteration);

/// Fresh parameters for (bank, K) with both priors applied.
PolicyParams initial_params(const ConcernBank& bank, const TrainConfig& config, const EnvConfig& env);

/// Held-out personas, disjoint in seed space from the training sampler.
std::vector<PersonaProfile> eval_persona_set(const ConcernBank& bank, const TrainConfig& config,
                                             std::size_t count);

struct TrainResult {
    PolicyParams params;
    std::vector<IterationStats> curve;
};

/// Called after every iteration with its stats and the updated parameters.
using CurveCallback = std::function<void(const IterationStats&, const PolicyParams&)>;

TrainResult train(PolicyParams params, const TrainConfig& config, const ConcernBank& bank, const EnvConfig& env,
                  const CurveCallback& on_iteration = {});

// ---------------------------------------------------------------------------
// Evaluation runs
// ---------------------------------------------------------------------------

struct EvalOptions {
    PolicyView view = PolicyView::Deployable;
    bool greedy = false;
    double temperature = 1.0;
    std::size_t threads = 1;
};

/// `count` evaluation seeds derived from a master seed, disjoint from the
/// streams used during training.
std::vector<std::uint64_t> eval_seeds(std::uint64_t master, std::size_t count);

/// Runs every persona once per seed. Episode seed for persona j under seed
/// s is derive_seed(s, {j}).
std::vector<SeedLogs> evaluate_policy(const PolicyParams& params, std::span<const PersonaProfile> personas,
                                      const ConcernBank& bank, const EnvConfig& env,
                                      std::span<const std::uint64_t> seeds, const EvalOptions& options);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome is schedule-independent.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace concernsim
