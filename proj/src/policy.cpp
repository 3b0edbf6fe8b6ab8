#include "concernsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "concernsim/errors.hpp"

namespace concernsim {

FeatureLayout::FeatureLayout(const ConcernBank& bank, int K)
    : max_turns(K), concerns(bank.concerns.size()), dims(bank.dimensions.size()) {
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
        const std::size_t start = at;
        at += n;
        return start;
    };
    turn = take(static_cast<std::size_t>(K) + 1);
    voiced = take(concerns);
    dim_voiced = take(dims);
    partial = take(concerns);
    resolved = take(concerns);
    last_event = take(kObservedEventCount);
    verb_counts = take(kVerbCount);
    repeated = take(1);
    privileged_begin = at;
    hidden = take(concerns);
    absent = take(concerns);
    dim_hidden = take(dims);
    dim_clear = take(dims);
    none_hidden = take(1);
    privileged_end = at;
    bias = take(1);
    length = at;
}

ObservationFeatures featurize(const ObservableView& view, const PersonaProfile* persona,
                              const ConcernBank& bank, const FeatureLayout& layout) {
    ObservationFeatures f{std::vector<double>(layout.length, 0.0)};
    auto& x = f.values;
    x[layout.turn + static_cast<std::size_t>(std::clamp(view.turn, 0, layout.max_turns))] = 1.0;
    for (std::size_t c = 0; c < layout.concerns; ++c) {
        if (view.voiced[c]) {
            x[layout.voiced + c] = 1.0;
            x[layout.dim_voiced + bank.dimension_of(c)] = 1.0;
        }
        if (view.progress[c] >= 1) x[layout.partial + c] = 1.0;
        if (view.progress[c] >= 2) x[layout.resolved + c] = 1.0;
    }
    x[layout.last_event + static_cast<std::size_t>(view.last_event)] = 1.0;
    for (std::size_t v = 0; v < kVerbCount; ++v)
        x[layout.verb_counts + v] =
            static_cast<double>(std::min(view.verb_counts[v], FeatureLayout::kVerbCountCap)) /
            FeatureLayout::kVerbCountCap;
    x[layout.repeated] = view.last_act_repeated ? 1.0 : 0.0;
    if (persona != nullptr) {
        std::vector<bool> held(layout.concerns, false);
        for (const auto& id : persona->internal) held[bank.find_concern(id).value()] = true;
        bool any_hidden = false;
        for (std::size_t c = 0; c < layout.concerns; ++c) {
            if (!held[c]) {
                x[layout.absent + c] = 1.0;
            } else if (!view.voiced[c]) {
                x[layout.hidden + c] = 1.0;
                x[layout.dim_hidden + bank.dimension_of(c)] = 1.0;
                any_hidden = true;
            }
        }
        for (std::size_t d = 0; d < layout.dims; ++d)
            if (x[layout.dim_hidden + d] == 0.0) x[layout.dim_clear + d] = 1.0;
        if (!any_hidden) x[layout.none_hidden] = 1.0;
    }
    x[layout.bias] = 1.0;
    return f;
}

std::string policy_fingerprint(const ConcernBank& bank, int max_turns) {
    return bank_fingerprint(bank) + "/K" + std::to_string(max_turns);
}

PolicyParams::PolicyParams(const ConcernBank& bank, int max_turns)
    : layout_(bank, max_turns), codec_(bank), fingerprint_(policy_fingerprint(bank, max_turns)) {
    theta_.assign(verb_rows() * layout_.length + arg_rows() * arg_cols(), 0.0);
}

namespace {

constexpr double kAvoid = 3.0;  // anti-pattern and dead-end penalties, relative to strength

void lower_anti_patterns(PolicyParams& params, const ConcernBank& bank, std::size_t c, std::size_t col,
                         double amount) {
    auto& w = params.theta();
    for (const auto& p : bank.concerns[c].anti_patterns) {
        if (auto v = anti_pattern_verb(p)) {
            w[params.verb_offset(verb_index(*v), col)] -= amount;
            continue;
        }
        const std::size_t t = *bank.find_tactic(*anti_pattern_tactic(p));
        for (std::size_t other = 0; other < bank.concerns.size(); ++other)
            w[params.arg_offset(params.codec().address_token(other, t), col)] -= amount;
    }
}

}  // namespace

// Argument boosts are offset by the log of the address vocabulary so a given
// strength means the same odds whatever the bank size.
double address_boost(const ConcernBank& bank, double strength) {
    return strength + std::log(static_cast<double>(bank.concerns.size() * bank.tactics.size()));
}

void apply_persona_prior(PolicyParams& params, const ConcernBank& bank, double strength) {
    const auto& L = params.layout();
    const auto& codec = params.codec();
    auto& w = params.theta();
    const double boost = address_boost(bank, strength);
    const double avoid = kAvoid * strength;
    for (std::size_t d = 0; d < L.dims; ++d) {
        w[params.arg_offset(codec.probe_token(d), L.dim_hidden + d)] += strength;
        w[params.arg_offset(codec.probe_token(d), L.dim_clear + d)] -= strength;
    }
    for (std::size_t c = 0; c < L.concerns; ++c) {
        for (const auto& t : bank.concerns[c].unlock_tactics)
            w[params.arg_offset(codec.address_token(c, *bank.find_tactic(t)), L.hidden + c)] += boost;
        for (std::size_t t = 0; t < bank.tactics.size(); ++t)
            w[params.arg_offset(codec.address_token(c, t), L.absent + c)] -= boost;
        lower_anti_patterns(params, bank, c, L.hidden + c, avoid);
        lower_anti_patterns(params, bank, c, L.absent + c, -strength);
    }
}

void apply_base_prior(PolicyParams& params, const ConcernBank& bank, double strength) {
    const auto& L = params.layout();
    const auto& codec = params.codec();
    auto& w = params.theta();
    const std::size_t address = verb_index(Verb::Address);
    const double avoid = kAvoid * strength;
    const double boost = address_boost(bank, strength);
    for (std::size_t c = 0; c < L.concerns; ++c) {
        const auto& spec = bank.concerns[c];
        // voiced minus resolved is "still open"
        w[params.verb_offset(address, L.voiced + c)] += strength;
        w[params.verb_offset(address, L.resolved + c)] -= strength;
        for (const auto& t : spec.unlock_tactics)
            w[params.arg_offset(codec.address_token(c, *bank.find_tactic(t)), L.voiced + c)] += boost;
        for (std::size_t t = 0; t < bank.tactics.size(); ++t)
            w[params.arg_offset(codec.address_token(c, t), L.resolved + c)] -= boost + avoid;
        if (spec.prerequisite) {
            const std::size_t q = *bank.find_concern(*spec.prerequisite);
            for (std::size_t t = 0; t < bank.tactics.size(); ++t) {
                w[params.arg_offset(codec.address_token(c, t), L.voiced + q)] -= avoid;
                w[params.arg_offset(codec.address_token(c, t), L.partial + q)] += avoid;
            }
        }
        lower_anti_patterns(params, bank, c, L.voiced + c, avoid);
        lower_anti_patterns(params, bank, c, L.resolved + c, -avoid);
    }
    w[params.verb_offset(verb_index(Verb::Acknowledge), L.bias)] += strength;
    w[params.verb_offset(verb_index(Verb::Close), L.bias)] -= 2.0 * strength;
    w[params.verb_offset(verb_index(Verb::Pitch), L.verb_counts + verb_index(Verb::Pitch))] -= 4.0 * avoid;
}

namespace {

using Sparse = std::vector<std::pair<std::size_t, double>>;

Sparse nonzeros(const ObservationFeatures& f) {
    Sparse nz;
    for (std::size_t i = 0; i < f.values.size(); ++i)
        if (f.values[i] != 0.0) nz.emplace_back(i, f.values[i]);
    return nz;
}

/// Contiguous row range [lo, hi) that is unmasked at a position.
std::pair<std::size_t, std::size_t> support(const PolicyParams& p, TokenPosition pos, Verb verb) {
    if (pos == TokenPosition::Verb) return {0, kVerbCount};
    const auto& codec = p.codec();
    switch (verb) {
        case Verb::Probe: return {1, 1 + codec.dimension_count()};
        case Verb::Address: return {1 + codec.dimension_count(), codec.argument_count()};
        default: return {0, 1};
    }
}

void check_shape(const PolicyParams& p, const ObservationFeatures& f) {
    if (f.values.size() != p.feature_length())
        throw DomainError("feature length " + std::to_string(f.values.size()) + " does not match policy (" +
                          std::to_string(p.feature_length()) + ")");
}

/// Logits over the supported rows, in row order.
std::vector<double> logits(const PolicyParams& p, const Sparse& nz, TokenPosition pos, Verb verb,
                           std::pair<std::size_t, std::size_t> range) {
    const auto& w = p.theta();
    std::vector<double> out;
    out.reserve(range.second - range.first);
    for (std::size_t r = range.first; r < range.second; ++r) {
        double z = 0.0;
        if (pos == TokenPosition::Verb) {
            for (const auto& [c, v] : nz) z += w[p.verb_offset(r, c)] * v;
        } else {
            for (const auto& [c, v] : nz) z += w[p.arg_offset(r, c)] * v;
            z += w[p.arg_offset(r, p.feature_length() + verb_index(verb))];
        }
        out.push_back(z);
    }
    return out;
}

/// Log-softmax in place; returns the log-probabilities.
std::vector<double> log_softmax(std::vector<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (double& v : z) v -= lse;
    return z;
}

void add_row_grad(const PolicyParams& p, const Sparse& nz, TokenPosition pos, Verb verb, std::size_t row,
                  double coeff, std::span<double> grad) {
    if (coeff == 0.0) return;
    if (pos == TokenPosition::Verb) {
        for (const auto& [c, v] : nz) grad[p.verb_offset(row, c)] += coeff * v;
    } else {
        for (const auto& [c, v] : nz) grad[p.arg_offset(row, c)] += coeff * v;
        grad[p.arg_offset(row, p.feature_length() + verb_index(verb))] += coeff;
    }
}

struct PositionEval {
    std::pair<std::size_t, std::size_t> range;
    std::vector<double> logp;  // over range
};

PositionEval evaluate(const PolicyParams& p, const Sparse& nz, TokenPosition pos, Verb verb) {
    const auto range = support(p, pos, verb);
    return {range, log_softmax(logits(p, nz, pos, verb, range))};
}

std::size_t vocab_size(const PolicyParams& p, TokenPosition pos) {
    return pos == TokenPosition::Verb ? kVerbCount : p.arg_rows();
}

}  // namespace

TokenDistribution action_dist(const PolicyParams& params, const ObservationFeatures& features,
                              TokenPosition position, Verb verb) {
    check_shape(params, features);
    const auto e = evaluate(params, nonzeros(features), position, verb);
    TokenDistribution d;
    d.probs.assign(vocab_size(params, position), 0.0);
    d.mask.assign(d.probs.size(), false);
    for (std::size_t r = e.range.first; r < e.range.second; ++r) {
        d.probs[r] = std::exp(e.logp[r - e.range.first]);
        d.mask[r] = true;
    }
    return d;
}

namespace {

std::size_t draw(const PositionEval& e, Rng& rng, double temperature) {
    std::vector<double> w(e.logp.size());
    const double m = *std::max_element(e.logp.begin(), e.logp.end());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp((e.logp[i] - m) / temperature);
    return e.range.first + rng.categorical(w);
}

std::size_t argmax(const PositionEval& e) {
    return e.range.first +
           static_cast<std::size_t>(std::max_element(e.logp.begin(), e.logp.end()) - e.logp.begin());
}

template <typename Choose>
SampledAction choose_action(const PolicyParams& params, const ObservationFeatures& features, Choose&& choose) {
    check_shape(params, features);
    const Sparse nz = nonzeros(features);
    SampledAction s;
    const auto ve = evaluate(params, nz, TokenPosition::Verb, Verb::Acknowledge);
    s.tokens[0] = choose(ve);
    s.logprobs[0] = ve.logp[s.tokens[0] - ve.range.first];
    const auto verb = static_cast<Verb>(s.tokens[0]);
    const auto ae = evaluate(params, nz, TokenPosition::Argument, verb);
    s.tokens[1] = choose(ae);
    s.logprobs[1] = ae.logp[s.tokens[1] - ae.range.first];
    s.act = params.codec().decode(s.tokens[0], s.tokens[1]);
    return s;
}

}  // namespace

SampledAction sample_action(const PolicyParams& params, const ObservationFeatures& features, Rng& rng,
                            double temperature) {
    if (!(temperature > 0.0)) throw DomainError("sampling temperature must be positive");
    return choose_action(params, features, [&](const PositionEval& e) { return draw(e, rng, temperature); });
}

SampledAction greedy_action(const PolicyParams& params, const ObservationFeatures& features) {
    return choose_action(params, features, [](const PositionEval& e) { return argmax(e); });
}

double accumulate_logprob_grad(const PolicyParams& params, const ObservationFeatures& features,
                               TokenPosition position, Verb verb, std::size_t token, double scale,
                               std::span<double> grad) {
    check_shape(params, features);
    const Sparse nz = nonzeros(features);
    const auto e = evaluate(params, nz, position, verb);
    if (token < e.range.first || token >= e.range.second)
        throw DomainError("token " + std::to_string(token) + " is masked at this position");
    if (scale != 0.0) {
        for (std::size_t r = e.range.first; r < e.range.second; ++r) {
            const double p = std::exp(e.logp[r - e.range.first]);
            add_row_grad(params, nz, position, verb, r, scale * ((r == token ? 1.0 : 0.0) - p), grad);
        }
    }
    return e.logp[token - e.range.first];
}

double token_logprob(const PolicyParams& params, const ObservationFeatures& features, TokenPosition position,
                     Verb verb, std::size_t token) {
    check_shape(params, features);
    const auto e = evaluate(params, nonzeros(features), position, verb);
    if (token < e.range.first || token >= e.range.second)
        throw DomainError("token " + std::to_string(token) + " is masked at this position");
    return e.logp[token - e.range.first];
}

LogProbGrad logprob_and_grad(const PolicyParams& params, const ObservationFeatures& features,
                             std::array<std::size_t, 2> tokens) {
    if (tokens[0] >= kVerbCount) throw DomainError("invalid verb token");
    const auto verb = static_cast<Verb>(tokens[0]);
    LogProbGrad out;
    out.grad.assign(params.size(), 0.0);
    out.logprob = accumulate_logprob_grad(params, features, TokenPosition::Verb, verb, tokens[0], 1.0, out.grad) +
                  accumulate_logprob_grad(params, features, TokenPosition::Argument, verb, tokens[1], 1.0, out.grad);
    return out;
}

double accumulate_kl_grad(const PolicyParams& params, const ObservationFeatures& privileged,
                          const ObservationFeatures& deployable, TokenPosition position, Verb verb, double scale,
                          std::span<double> grad) {
    check_shape(params, privileged);
    check_shape(params, deployable);
    const auto teacher = evaluate(params, nonzeros(privileged), position, verb);
    const Sparse student_nz = nonzeros(deployable);
    const auto student = evaluate(params, student_nz, position, verb);
    if (teacher.range != student.range) throw DomainError("teacher and student supports differ");

    double kl = 0.0;
    for (std::size_t i = 0; i < teacher.logp.size(); ++i) {
        const double pt = std::exp(teacher.logp[i]);
        if (pt > 0.0) kl += pt * (teacher.logp[i] - student.logp[i]);
    }
    if (scale != 0.0) {
        for (std::size_t i = 0; i < teacher.logp.size(); ++i) {
            const double coeff = std::exp(student.logp[i]) - std::exp(teacher.logp[i]);
            add_row_grad(params, student_nz, position, verb, student.range.first + i, scale * coeff, grad);
        }
    }
    return std::max(kl, 0.0);
}

KlGrad kl_between_views(const PolicyParams& params, const ObservationFeatures& privileged,
                        const ObservationFeatures& deployable, TokenPosition position, Verb verb) {
    KlGrad out;
    out.grad.assign(params.size(), 0.0);
    out.kl = accumulate_kl_grad(params, privileged, deployable, position, verb, 1.0, out.grad);
    return out;
}

// ---------------------------------------------------------------------------

std::string save_checkpoint(const PolicyParams& params) {
    Json j;
    j["format"] = "concernsim.policy/1";
    j["fingerprint"] = params.fingerprint();
    j["K"] = params.layout().max_turns;
    j["feature_length"] = params.feature_length();
    j["verb_rows"] = params.verb_rows();
    j["arg_rows"] = params.arg_rows();
    j["arg_cols"] = params.arg_cols();
    j["weights"] = params.theta();
    return j.dump() + "\n";
}

PolicyParams load_checkpoint(std::string_view text, const ConcernBank& bank, int max_turns) {
    const Json j = parse_json(text, "checkpoint");
    PolicyParams params(bank, max_turns);
    try {
        reject_unknown_keys(j, {"format", "fingerprint", "K", "feature_length", "verb_rows", "arg_rows", "arg_cols",
                                "weights"},
                            "checkpoint");
        if (j.at("format") != "concernsim.policy/1") throw ParseError("checkpoint: unsupported format");
        const auto fp = j.at("fingerprint").get<std::string>();
        if (fp != params.fingerprint())
            throw DomainError("checkpoint fingerprint " + fp + " does not match bank/K " + params.fingerprint());
        if (j.at("feature_length").get<std::size_t>() != params.feature_length() ||
            j.at("verb_rows").get<std::size_t>() != params.verb_rows() ||
            j.at("arg_rows").get<std::size_t>() != params.arg_rows() ||
            j.at("arg_cols").get<std::size_t>() != params.arg_cols())
            throw DomainError("checkpoint shapes do not match bank/K");
        auto w = j.at("weights").get<std::vector<double>>();
        if (w.size() != params.size()) throw DomainError("checkpoint weight count mismatch");
        for (double v : w)
            if (!std::isfinite(v)) throw DomainError("checkpoint contains non-finite weights");
        params.theta() = std::move(w);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return params;
}

}  // namespace concernsim
