#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "concernsim/cus_env.hpp"
#include "concernsim/persona.hpp"
#include "concernsim/rng.hpp"

namespace concernsim {

/// Column layout of the observation feature vector for a (bank, K) pair.
///
/// Deployable block (observable history only):
///   turn one-hot [K+1] | voiced per concern [C] | dimension voiced [D] |
///   acknowledged partial progress per concern [C] |
///   acknowledged resolution per concern [C] | last event one-hot [5] |
///   capped verb usage counts [5] | last act repeated [1]
/// Privileged block (the persona's concern set read against what the user
/// has already voiced, i.e. what the conversation has not yet revealed):
///   held and not yet voiced [C] | not held [C] |
///   dimension still hides a held concern [D] | dimension hides nothing [D] |
///   nothing left hidden [1]
/// Bias [1]
struct FeatureLayout {
    FeatureLayout(const ConcernBank& bank, int max_turns);

    int max_turns;
    std::size_t concerns, dims;
    std::size_t turn, voiced, dim_voiced, partial, resolved, last_event, verb_counts, repeated;
    std::size_t privileged_begin, hidden, absent, dim_hidden, dim_clear, none_hidden, privileged_end;
    std::size_t bias;
    std::size_t length;

    static constexpr int kVerbCountCap = 4;

    bool is_privileged(std::size_t col) const { return col >= privileged_begin && col < privileged_end; }
};

struct ObservationFeatures {
    std::vector<double> values;

    bool operator==(const ObservationFeatures&) const = default;
};

/// Builds features from the observable view. With `persona == nullptr` the
/// privileged block is all zero; the deployable block never depends on it.
ObservationFeatures featurize(const ObservableView& view, const PersonaProfile* persona,
                              const ConcernBank& bank, const FeatureLayout& layout);

enum class TokenPosition { Verb, Argument };

/// Parameters of the factorized act policy. One flat vector holds the verb
/// head (5 x F) followed by the argument head (A x (F + 5)); the argument
/// head sees the chosen verb as a one-hot appended to the features. Both
/// information views share these weights.
class PolicyParams {
public:
    PolicyParams(const ConcernBank& bank, int max_turns);

    const FeatureLayout& layout() const { return layout_; }
    const ActCodec& codec() const { return codec_; }
    const std::string& fingerprint() const { return fingerprint_; }

    std::size_t feature_length() const { return layout_.length; }
    std::size_t verb_rows() const { return kVerbCount; }
    std::size_t arg_rows() const { return codec_.argument_count(); }
    std::size_t arg_cols() const { return layout_.length + kVerbCount; }

    std::size_t verb_offset(std::size_t row, std::size_t col) const { return row * layout_.length + col; }
    std::size_t arg_offset(std::size_t row, std::size_t col) const {
        return verb_rows() * layout_.length + row * arg_cols() + col;
    }

    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }
    std::size_t size() const { return theta_.size(); }

    bool operator==(const PolicyParams& o) const { return fingerprint_ == o.fingerprint_ && theta_ == o.theta_; }

private:
    FeatureLayout layout_;
    ActCodec codec_;
    std::string fingerprint_;
    std::vector<double> theta_;
};

std::string policy_fingerprint(const ConcernBank& bank, int max_turns);

/// Sets the privileged-block columns from the bank's own catalog: a hidden
/// concern raises Address with its unlock tactics and lowers its
/// anti-pattern verbs and tactics, an absent one lowers blind Address on it,
/// hidden and clear dimensions raise and lower Probe on them. Deployable-view
/// behavior is unchanged.
void apply_persona_prior(PolicyParams& params, const ConcernBank& bank, double strength);

/// Reactive starting behavior on the deployable columns: address what the
/// user has voiced with a tactic that unlocks it, stay off anti-patterns of
/// voiced concerns, otherwise idle with Acknowledge rather than close.
void apply_base_prior(PolicyParams& params, const ConcernBank& bank, double strength);

struct TokenDistribution {
    std::vector<double> probs;  // over the whole vocabulary of the position
    std::vector<bool> mask;
};

TokenDistribution action_dist(const PolicyParams& params, const ObservationFeatures& features,
                              TokenPosition position, Verb verb = Verb::Acknowledge);

struct SampledAction {
    AgentAct act;
    std::array<std::size_t, 2> tokens{};
    std::array<double, 2> logprobs{};  // untempered
};

SampledAction sample_action(const PolicyParams& params, const ObservationFeatures& features, Rng& rng,
                            double temperature = 1.0);

/// Highest-probability verb, then highest-probability argument.
SampledAction greedy_action(const PolicyParams& params, const ObservationFeatures& features);

/// log p(token) at one position; adds scale * d log p / d theta into `grad`.
double accumulate_logprob_grad(const PolicyParams& params, const ObservationFeatures& features,
                               TokenPosition position, Verb verb, std::size_t token, double scale,
                               std::span<double> grad);

/// Per-token log-probability without gradient.
double token_logprob(const PolicyParams& params, const ObservationFeatures& features, TokenPosition position,
                     Verb verb, std::size_t token);

struct LogProbGrad {
    double logprob = 0.0;
    std::vector<double> grad;
};

/// Joint log-probability of a (verb, argument) token pair and its gradient.
LogProbGrad logprob_and_grad(const PolicyParams& params, const ObservationFeatures& features,
                             std::array<std::size_t, 2> tokens);

/// KL(teacher || student) at one position with the privileged-view teacher
/// held constant. Adds scale * gradient (through the student view only).
double accumulate_kl_grad(const PolicyParams& params, const ObservationFeatures& privileged,
                          const ObservationFeatures& deployable, TokenPosition position, Verb verb,
                          double scale, std::span<double> grad);

struct KlGrad {
    double kl = 0.0;
    std::vector<double> grad;
};

KlGrad kl_between_views(const PolicyParams& params, const ObservationFeatures& privileged,
                        const ObservationFeatures& deployable, TokenPosition position, Verb verb = Verb::Acknowledge);

/// Text checkpoint: format tag, bank/K fingerprint, shapes, row-major weights.
std::string save_checkpoint(const PolicyParams& params);
/// Throws ParseError on malformed input, DomainError on fingerprint or
/// shape mismatch with (bank, K).
PolicyParams load_checkpoint(std::string_view text, const ConcernBank& bank, int max_turns);

}  // namespace concernsim
