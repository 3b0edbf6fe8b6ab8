#include "concernsim/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "concernsim/errors.hpp"

namespace concernsim {

// ---------------------------------------------------------------------------
// Names and config
// ---------------------------------------------------------------------------

std::string_view mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::SiAvpo: return "si_avpo";
        case TrainMode::Grpo: return "grpo";
        case TrainMode::AopdOnly: return "aopd_only";
        case TrainMode::StprOnly: return "stpr_only";
    }
    return "?";
}

std::optional<TrainMode> parse_mode(std::string_view s) {
    for (auto m : {TrainMode::SiAvpo, TrainMode::Grpo, TrainMode::AopdOnly, TrainMode::StprOnly})
        if (mode_name(m) == s) return m;
    return std::nullopt;
}

std::string_view phi_name(PhiSchedule s) {
    switch (s) {
        case PhiSchedule::Constant: return "constant";
        case PhiSchedule::LinearDecay: return "linear_decay";
        case PhiSchedule::FrontLoaded: return "front_loaded";
    }
    return "?";
}

std::optional<PhiSchedule> parse_phi(std::string_view s) {
    for (auto p : {PhiSchedule::Constant, PhiSchedule::LinearDecay, PhiSchedule::FrontLoaded})
        if (phi_name(p) == s) return p;
    return std::nullopt;
}

std::string_view view_name(PolicyView v) { return v == PolicyView::Deployable ? "deployable" : "privileged"; }

std::optional<PolicyView> parse_view(std::string_view s) {
    if (s == "deployable") return PolicyView::Deployable;
    if (s == "privileged") return PolicyView::Privileged;
    return std::nullopt;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
    if (group_size < 2) fail("G must be >= 2");
    if (groups_per_iteration < 1) fail("groups_per_iteration must be >= 1");
    if (epochs < 1) fail("E must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon must lie in (0, 1)");
    if (!(norm_epsilon > 0.0)) fail("norm_epsilon must be > 0");
    if (!(tau >= 0.0)) fail("tau must be >= 0");
    if (!(lambda_st >= 0.0)) fail("lambda_st must be >= 0");
    if (minibatch_size < 1) fail("minibatch_size must be >= 1");
    if (!(temperature > 0.0)) fail("temperature must be > 0");
    if (sampling.min_concerns > sampling.max_concerns) fail("sampling.min_concerns exceeds max_concerns");
    if (!(sampling.willingness.lo <= sampling.willingness.hi && sampling.willingness.lo >= 0.0 &&
          sampling.willingness.hi <= 100.0))
        fail("sampling willingness range must lie within [0, 100]");
}

Json train_config_to_json(const TrainConfig& c) {
    Json j;
    j["mode"] = mode_name(c.mode);
    j["G"] = c.group_size;
    j["groups_per_iteration"] = c.groups_per_iteration;
    j["E"] = c.epochs;
    j["learning_rate"] = c.learning_rate;
    j["clip_epsilon"] = c.clip_epsilon;
    j["norm_epsilon"] = c.norm_epsilon;
    j["tau"] = c.tau;
    j["lambda_st"] = c.lambda_st;
    j["phi"] = phi_name(c.phi);
    j["minibatch_size"] = c.minibatch_size;
    j["iterations"] = c.iterations;
    j["seed"] = c.seed;
    j["rollout_view"] = view_name(c.rollout_view);
    j["per_rollout_persona"] = c.per_rollout_persona;
    j["prior_strength"] = c.prior_strength;
    j["base_prior_strength"] = c.base_prior_strength;
    j["ignore_shifts"] = c.ignore_shifts;
    j["temperature"] = c.temperature;
    j["eval_personas"] = c.eval_personas;
    j["eval_every"] = c.eval_every;
    j["sampling"] = {{"min_concerns", c.sampling.min_concerns},
                     {"max_concerns", c.sampling.max_concerns},
                     {"willingness_min", c.sampling.willingness.lo},
                     {"willingness_max", c.sampling.willingness.hi}};
    return j;
}

Json run_config_to_json(const RunConfig& c) {
    Json j = train_config_to_json(c.train);
    j["env"] = env_config_to_json(c.env);
    return j;
}

RunConfig run_config_from_json(const Json& doc) {
    reject_unknown_keys(doc,
                        {"mode", "G", "groups_per_iteration", "E", "learning_rate", "clip_epsilon", "norm_epsilon",
                         "tau", "lambda_st", "phi", "minibatch_size", "iterations", "seed", "rollout_view",
                         "per_rollout_persona", "prior_strength", "base_prior_strength", "ignore_shifts", "temperature", "eval_personas",
                         "eval_every", "sampling", "env", "K"},
                        "train config");
    RunConfig rc;
    TrainConfig& c = rc.train;
    try {
        if (doc.contains("env")) rc.env = env_config_from_json(doc.at("env"));
        if (doc.contains("K")) {
            rc.env.max_turns = doc.at("K").get<int>();
            rc.env.validate();
        }
        auto str = [&](const char* key) { return doc.at(key).get<std::string>(); };
        if (doc.contains("mode")) {
            auto m = parse_mode(str("mode"));
            if (!m) throw ParseError("train config: unknown mode '" + str("mode") + "'");
            c.mode = *m;
        }
        if (doc.contains("phi")) {
            auto p = parse_phi(str("phi"));
            if (!p) throw ParseError("train config: unknown phi schedule '" + str("phi") + "'");
            c.phi = *p;
        }
        if (doc.contains("rollout_view")) {
            auto v = parse_view(str("rollout_view"));
            if (!v) throw ParseError("train config: unknown rollout_view '" + str("rollout_view") + "'");
            c.rollout_view = *v;
        }
        auto get = [&](const char* key, auto& out) {
            if (doc.contains(key)) out = doc.at(key).get<std::decay_t<decltype(out)>>();
        };
        get("G", c.group_size);
        get("groups_per_iteration", c.groups_per_iteration);
        get("E", c.epochs);
        get("learning_rate", c.learning_rate);
        get("clip_epsilon", c.clip_epsilon);
        get("norm_epsilon", c.norm_epsilon);
        get("tau", c.tau);
        get("lambda_st", c.lambda_st);
        get("minibatch_size", c.minibatch_size);
        get("iterations", c.iterations);
        get("seed", c.seed);
        get("per_rollout_persona", c.per_rollout_persona);
        get("prior_strength", c.prior_strength);
        get("base_prior_strength", c.base_prior_strength);
        get("ignore_shifts", c.ignore_shifts);
        get("temperature", c.temperature);
        get("eval_personas", c.eval_personas);
        get("eval_every", c.eval_every);
        if (doc.contains("sampling")) {
            const auto& s = doc.at("sampling");
            reject_unknown_keys(s, {"min_concerns", "max_concerns", "willingness_min", "willingness_max"},
                                "train config sampling");
            if (s.contains("min_concerns")) c.sampling.min_concerns = s.at("min_concerns").get<std::size_t>();
            if (s.contains("max_concerns")) c.sampling.max_concerns = s.at("max_concerns").get<std::size_t>();
            if (s.contains("willingness_min")) c.sampling.willingness.lo = s.at("willingness_min").get<double>();
            if (s.contains("willingness_max")) c.sampling.willingness.hi = s.at("willingness_max").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    c.validate();
    return rc;
}

double phi_weight(PhiSchedule schedule, int turn, int max_turns) {
    const double k = turn, K = max_turns;
    switch (schedule) {
        case PhiSchedule::Constant: return 1.0;
        case PhiSchedule::LinearDecay: return 1.0 - k / (K + 1.0);
        case PhiSchedule::FrontLoaded: return std::max(0.0, 2.0 * (1.0 - k / K));
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

std::vector<double> traj_advantage(std::span<const double> rewards, double norm_epsilon) {
    if (rewards.size() < 2) throw DomainError("traj_advantage: group needs at least two rollouts");
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> out;
    out.reserve(rewards.size());
    for (double r : rewards) out.push_back((r - mean) / (sd + norm_epsilon));
    return out;
}

double st_advantage(double a_traj, double delta_w, double max_abs_shift, double tau) {
    if (delta_w == 0.0) return a_traj;
    const double prod = a_traj * delta_w;
    const double z = prod > 0.0 ? 1.0 : (prod < 0.0 ? -1.0 : 0.0);
    const double m = std::abs(delta_w) / max_abs_shift;
    return a_traj * z * m * std::exp(tau * z);
}

void assign_credit(GroupBatch& batch, const TrainConfig& config) {
    std::vector<double> rewards;
    for (const auto& r : batch.rollouts) rewards.push_back(r.reward);
    batch.a_traj = traj_advantage(rewards, config.norm_epsilon);
    const double n = static_cast<double>(rewards.size());
    batch.reward_mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - batch.reward_mean) * (r - batch.reward_mean);
    batch.reward_std = std::sqrt(var / n);

    auto shift = [&](const TurnSample& t) { return config.ignore_shifts ? 0.0 : t.delta_w; };
    batch.max_abs_shift = 0.0;
    for (const auto& r : batch.rollouts)
        for (const auto& t : r.turns) batch.max_abs_shift = std::max(batch.max_abs_shift, std::abs(shift(t)));

    for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
        for (auto& t : batch.rollouts[i].turns) {
            t.a_st = config.mode == TrainMode::Grpo
                         ? batch.a_traj[i]
                         : st_advantage(batch.a_traj[i], shift(t), batch.max_abs_shift, config.tau);
        }
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kPolicyStream = 0x706f6c;
constexpr std::uint64_t kPersonaStream = 0x70657273;
constexpr std::uint64_t kEvalStream = 0x6576616c;
constexpr std::uint64_t kShuffleStream = 0x73687566;

bool needs_privileged(const TrainConfig& c) {
    return c.rollout_view == PolicyView::Privileged || c.mode == TrainMode::SiAvpo || c.mode == TrainMode::AopdOnly;
}

}  // namespace

GroupBatch collect_group(const PolicyParams& params, std::span<const PersonaProfile> personas,
                         const ConcernBank& bank, const EnvConfig& env, const TrainConfig& config,
                         std::uint64_t seed) {
    if (config.group_size < 2) throw DomainError("collect_group: G must be >= 2");
    if (personas.size() != 1 && personas.size() != config.group_size)
        throw DomainError("collect_group: need one persona or one per rollout");
    const bool privileged = needs_privileged(config);
    const auto& layout = params.layout();

    GroupBatch batch;
    batch.rollouts.resize(config.group_size);
    for (std::size_t i = 0; i < config.group_size; ++i) {
        const PersonaProfile& persona = personas.size() == 1 ? personas[0] : personas[i];
        const std::uint64_t ep_seed = derive_seed(seed, {i});
        Rng rng(derive_seed(ep_seed, {kPolicyStream}));
        RolloutRecord& rec = batch.rollouts[i];
        rec.persona = persona;
        auto act = [&](const ObservableView& view) {
            TurnSample ts;
            ts.deployable = featurize(view, nullptr, bank, layout);
            if (privileged) ts.privileged = featurize(view, &persona, bank, layout);
            ts.turn = view.turn;
            const auto s = sample_action(params, ts.acting(config.rollout_view), rng, config.temperature);
            ts.tokens = s.tokens;
            ts.old_logprobs = s.logprobs;
            rec.turns.push_back(std::move(ts));
            return s.act;
        };
        rec.log = run_episode(act, persona, bank, env, ep_seed);
        for (std::size_t k = 0; k < rec.turns.size(); ++k) {
            rec.turns[k].delta_w = rec.log.turns[k].outcome.delta_w;
            rec.turns[k].transitions = rec.log.turns[k].outcome.concern_transitions.size();
        }
        rec.decision = rec.log.decision;
        rec.reward = rec.log.reward;
    }
    assign_credit(batch, config);
    return batch;
}

std::vector<TokenSample> flatten_tokens(std::span<const GroupBatch> batches, PolicyView view) {
    std::vector<TokenSample> out;
    for (const auto& b : batches)
        for (const auto& r : b.rollouts)
            for (const auto& t : r.turns) {
                const auto verb = static_cast<Verb>(t.tokens[0]);
                TokenSample base;
                base.acting = &t.acting(view);
                base.privileged = &t.privileged;
                base.deployable = &t.deployable;
                base.verb = verb;
                base.advantage = t.a_st;
                base.turn = t.turn;

                TokenSample v = base;
                v.position = TokenPosition::Verb;
                v.token = t.tokens[0];
                v.old_logprob = t.old_logprobs[0];
                out.push_back(v);

                TokenSample a = base;
                a.position = TokenPosition::Argument;
                a.token = t.tokens[1];
                a.old_logprob = t.old_logprobs[1];
                out.push_back(a);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

double aopd_accumulate(const PolicyParams& params, std::span<const TokenSample* const> tokens, PhiSchedule phi,
                       int max_turns, double scale, std::span<double> grad) {
    if (tokens.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(tokens.size());
    double loss = 0.0;
    for (const TokenSample* t : tokens) {
        const double w = phi_weight(phi, t->turn, max_turns);
        if (w == 0.0) continue;
        if (t->privileged == nullptr || t->privileged->values.empty())
            throw DomainError("aopd_loss: token lacks privileged features");
        loss += w * inv_n *
                accumulate_kl_grad(params, *t->privileged, *t->deployable, t->position, t->verb,
                                   scale * w * inv_n, grad);
    }
    return loss;
}

double stpr_accumulate(const PolicyParams& params, std::span<const TokenSample* const> tokens, double clip_epsilon,
                       double scale, std::span<double> grad) {
    if (tokens.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(tokens.size());
    double loss = 0.0;
    for (const TokenSample* t : tokens) {
        const double logp = token_logprob(params, *t->acting, t->position, t->verb, t->token);
        const double ratio = std::exp(logp - t->old_logprob);
        const auto term = clipped_objective(ratio, t->advantage, clip_epsilon);
        loss -= term.value * inv_n;
        if (term.gradient_flows && t->advantage != 0.0 && scale != 0.0)
            accumulate_logprob_grad(params, *t->acting, t->position, t->verb, t->token,
                                    -scale * t->advantage * ratio * inv_n, grad);
    }
    return loss;
}

std::vector<const TokenSample*> pointers(std::span<const TokenSample> tokens) {
    std::vector<const TokenSample*> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(&t);
    return out;
}

}  // namespace

LossGrad aopd_loss(const PolicyParams& params, std::span<const TokenSample> tokens, PhiSchedule phi, int max_turns) {
    LossGrad out;
    out.grad.assign(params.size(), 0.0);
    const auto ptrs = pointers(tokens);
    out.loss = aopd_accumulate(params, ptrs, phi, max_turns, 1.0, out.grad);
    return out;
}

ClippedTerm clipped_objective(double ratio, double advantage, double clip_epsilon) {
    const double unclipped = ratio * advantage;
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantage;
    return unclipped <= clipped ? ClippedTerm{unclipped, true} : ClippedTerm{clipped, false};
}

LossGrad stpr_loss(const PolicyParams& params, std::span<const TokenSample> tokens, double clip_epsilon) {
    LossGrad out;
    out.grad.assign(params.size(), 0.0);
    const auto ptrs = pointers(tokens);
    out.loss = stpr_accumulate(params, ptrs, clip_epsilon, 1.0, out.grad);
    return out;
}

LossGrad stpr_loss(const PolicyParams& params, const GroupBatch& batch, const TrainConfig& config) {
    const auto tokens = flatten_tokens(std::span<const GroupBatch>(&batch, 1), config.rollout_view);
    return stpr_loss(params, tokens, config.clip_epsilon);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(threads, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

Json iteration_stats_to_json(const IterationStats& s, bool timestamps) {
    Json j;
    j["iteration"] = s.iteration;
    j["loss_aopd"] = s.loss_aopd;
    j["loss_stpr"] = s.loss_stpr;
    j["train_ar"] = s.train_ar;
    j["train_csr"] = s.train_csr;
    j["mean_abs_ast"] = s.mean_abs_ast;
    j["tokens"] = s.tokens;
    j["eval_ar"] = s.eval_ar ? Json(*s.eval_ar) : Json(nullptr);
    j["eval_csr"] = s.eval_csr ? Json(*s.eval_csr) : Json(nullptr);
    if (timestamps) j["wall_seconds"] = s.wall_seconds;
    return j;
}

namespace {

std::string describe_minibatch(std::span<const TokenSample* const> batch) {
    std::ostringstream out;
    out << batch.size() << " tokens;";
    for (std::size_t i = 0; i < std::min<std::size_t>(batch.size(), 8); ++i) {
        const auto* t = batch[i];
        out << " [turn " << t->turn << " pos " << (t->position == TokenPosition::Verb ? "verb" : "arg") << " token "
            << t->token << " old_logp " << t->old_logprob << " A " << t->advantage << "]";
    }
    return out.str();
}

}  // namespace

IterationStats train_iteration(PolicyParams& params, const TrainConfig& config, const ConcernBank& bank,
                               const EnvConfig& env, const PersonaSampler& sampler, std::size_t iteration) {
    config.validate();
    if (env.max_turns != params.layout().max_turns)
        throw ConfigError("policy was built for K=" + std::to_string(params.layout().max_turns) +
                          " but the environment uses K=" + std::to_string(env.max_turns));
    const auto start = std::chrono::steady_clock::now();

    // Phase 1: rollouts under theta_old (params is not modified until all
    // groups are collected).
    std::vector<GroupBatch> groups(config.groups_per_iteration);
    parallel_for(groups.size(), config.threads, [&](std::size_t g) {
        std::vector<PersonaProfile> personas;
        if (config.per_rollout_persona) {
            for (std::size_t i = 0; i < config.group_size; ++i)
                personas.push_back(sampler(derive_seed(config.seed, {iteration, g, i, kPersonaStream})));
        } else {
            personas.push_back(sampler(derive_seed(config.seed, {iteration, g, kPersonaStream})));
        }
        groups[g] = collect_group(params, personas, bank, env, config, derive_seed(config.seed, {iteration, g}));
    });

    // Phase 2 happened inside collect_group (assign_credit).
    const auto tokens = flatten_tokens(groups, config.rollout_view);
    auto order = pointers(tokens);

    const bool use_aopd = config.mode == TrainMode::SiAvpo || config.mode == TrainMode::AopdOnly;
    const bool use_stpr = config.mode != TrainMode::AopdOnly;
    const double stpr_weight = config.lambda_st;

    IterationStats stats;
    stats.iteration = iteration;
    stats.tokens = tokens.size();

    // Phases 3-4: E epochs of shuffled minibatch updates.
    Rng shuffle(derive_seed(config.seed, {iteration, kShuffleStream}));
    std::vector<double> grad(params.size());
    std::size_t steps = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, i - 1))]);
        for (std::size_t begin = 0; begin < order.size(); begin += config.minibatch_size) {
            const std::size_t end = std::min(order.size(), begin + config.minibatch_size);
            const std::span<const TokenSample* const> mb(order.data() + begin, end - begin);
            std::fill(grad.begin(), grad.end(), 0.0);
            double la = 0.0, ls = 0.0;
            if (use_aopd) la = aopd_accumulate(params, mb, config.phi, env.max_turns, 1.0, grad);
            if (use_stpr) ls = stpr_accumulate(params, mb, config.clip_epsilon, stpr_weight, grad);
            bool finite = std::isfinite(la) && std::isfinite(ls);
            for (double g : grad) finite = finite && std::isfinite(g);
            if (!finite)
                throw DomainError("non-finite loss or gradient at iteration " + std::to_string(iteration) +
                                  ", epoch " + std::to_string(epoch) + ": " + describe_minibatch(mb));
            stats.loss_aopd += la;
            stats.loss_stpr += ls;
            ++steps;
            auto& theta = params.theta();
            for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= config.learning_rate * grad[k];
        }
    }
    if (steps > 0) {
        stats.loss_aopd /= static_cast<double>(steps);
        stats.loss_stpr /= static_cast<double>(steps);
    }

    std::vector<EpisodeLog> logs;
    double abs_ast = 0.0;
    std::size_t turns = 0;
    for (const auto& g : groups)
        for (const auto& r : g.rollouts) {
            logs.push_back(r.log);
            for (const auto& t : r.turns) {
                abs_ast += std::abs(t.a_st);
                ++turns;
            }
        }
    stats.train_ar = acceptance_rate(logs);
    stats.train_csr = concern_solving_rate(logs);
    stats.mean_abs_ast = turns > 0 ? abs_ast / static_cast<double>(turns) : 0.0;
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
}

PolicyParams initial_params(const ConcernBank& bank, const TrainConfig& config, const EnvConfig& env) {
    PolicyParams p(bank, env.max_turns);
    if (config.base_prior_strength != 0.0) apply_base_prior(p, bank, config.base_prior_strength);
    if (config.prior_strength != 0.0) apply_persona_prior(p, bank, config.prior_strength);
    return p;
}

std::vector<PersonaProfile> eval_persona_set(const ConcernBank& bank, const TrainConfig& config, std::size_t count) {
    std::vector<PersonaProfile> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(sample_persona(bank, derive_seed(config.seed, {kEvalStream, i}), config.sampling));
    return out;
}

TrainResult train(PolicyParams params, const TrainConfig& config, const ConcernBank& bank, const EnvConfig& env,
                  const CurveCallback& on_iteration) {
    config.validate();
    env.validate();
    const PersonaSampler sampler = [&](std::uint64_t s) { return sample_persona(bank, s, config.sampling); };
    std::vector<PersonaProfile> eval_set;
    if (config.eval_every > 0 && config.eval_personas > 0)
        eval_set = eval_persona_set(bank, config, config.eval_personas);

    TrainResult result{std::move(params), {}};
    for (std::size_t it = 0; it < config.iterations; ++it) {
        auto stats = train_iteration(result.params, config, bank, env, sampler, it);
        if (!eval_set.empty() && ((it + 1) % config.eval_every == 0 || it + 1 == config.iterations)) {
            const std::uint64_t seeds[] = {derive_seed(config.seed, {kEvalStream})};
            EvalOptions opt;
            opt.threads = config.threads;
            const auto runs = evaluate_policy(result.params, eval_set, bank, env, seeds, opt);
            stats.eval_ar = acceptance_rate(runs[0].logs);
            stats.eval_csr = concern_solving_rate(runs[0].logs);
        }
        if (on_iteration) on_iteration(stats, result.params);
        result.curve.push_back(stats);
    }
    return result;
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t master, std::size_t count) {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(derive_seed(master, {kEvalStream, 1 + i}));
    return out;
}

std::vector<SeedLogs> evaluate_policy(const PolicyParams& params, std::span<const PersonaProfile> personas,
                                      const ConcernBank& bank, const EnvConfig& env,
                                      std::span<const std::uint64_t> seeds, const EvalOptions& options) {
    if (env.max_turns != params.layout().max_turns)
        throw ConfigError("policy K does not match environment K");
    std::vector<SeedLogs> out;
    for (std::uint64_t seed : seeds) {
        SeedLogs run{seed, std::vector<EpisodeLog>(personas.size())};
        parallel_for(personas.size(), options.threads, [&](std::size_t j) {
            const PersonaProfile& persona = personas[j];
            const std::uint64_t ep_seed = derive_seed(seed, {j});
            Rng rng(derive_seed(ep_seed, {kPolicyStream}));
            const PersonaProfile* visible = options.view == PolicyView::Privileged ? &persona : nullptr;
            auto act = [&](const ObservableView& view) {
                const auto f = featurize(view, visible, bank, params.layout());
                return options.greedy ? greedy_action(params, f).act
                                      : sample_action(params, f, rng, options.temperature).act;
            };
            run.logs[j] = run_episode(act, persona, bank, env, ep_seed);
        });
        out.push_back(std::move(run));
    }
    return out;
}

}  // namespace concernsim
