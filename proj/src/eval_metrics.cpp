#include "concernsim/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "concernsim/errors.hpp"

namespace concernsim {

double acceptance_rate(std::span<const EpisodeLog> logs) {
    if (logs.empty()) throw DomainError("acceptance_rate: no episodes");
    const auto accepted = std::count_if(logs.begin(), logs.end(),
                                        [](const EpisodeLog& l) { return l.decision == Decision::Accept; });
    return 100.0 * static_cast<double>(accepted) / static_cast<double>(logs.size());
}

double concern_solving_rate(std::span<const EpisodeLog> logs, CsrAveraging averaging) {
    std::size_t num = 0, den = 0, counted = 0;
    double macro = 0.0;
    for (const auto& l : logs) {
        num += l.csr_numerator;
        den += l.csr_denominator;
        if (l.csr_denominator > 0) {
            macro += static_cast<double>(l.csr_numerator) / static_cast<double>(l.csr_denominator);
            ++counted;
        }
    }
    if (den == 0) throw DomainError("concern_solving_rate: zero concern denominator");
    if (averaging == CsrAveraging::Micro) return 100.0 * static_cast<double>(num) / static_cast<double>(den);
    return 100.0 * macro / static_cast<double>(counted);
}

double initiative_share(std::span<const EpisodeLog> logs) {
    std::size_t acts = 0, initiative = 0;
    for (const auto& l : logs)
        for (const auto& t : l.turns) {
            ++acts;
            if (t.act.verb != Verb::Acknowledge) ++initiative;
        }
    if (acts == 0) throw DomainError("initiative_share: no agent acts");
    return 100.0 * static_cast<double>(initiative) / static_cast<double>(acts);
}

double mean_episode_length(std::span<const EpisodeLog> logs) {
    if (logs.empty()) throw DomainError("mean_episode_length: no episodes");
    double total = 0.0;
    for (const auto& l : logs) total += static_cast<double>(l.turns.size());
    return total / static_cast<double>(logs.size());
}

SeedMetrics seed_metrics(std::uint64_t seed, std::span<const EpisodeLog> logs) {
    SeedMetrics m;
    m.seed = seed;
    m.episodes = logs.size();
    m.ar = acceptance_rate(logs);
    m.csr = concern_solving_rate(logs, CsrAveraging::Micro);
    m.csr_macro = concern_solving_rate(logs, CsrAveraging::Macro);
    m.mean_length = mean_episode_length(logs);
    m.initiative = initiative_share(logs);
    return m;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

EvalReport build_report(std::span<const SeedLogs> runs, std::string view) {
    if (runs.empty()) throw DomainError("build_report: no runs");
    EvalReport r;
    r.view = std::move(view);
    std::vector<EpisodeLog> all;
    std::vector<double> ars, csrs;
    for (const auto& run : runs) {
        r.per_seed.push_back(seed_metrics(run.seed, run.logs));
        ars.push_back(r.per_seed.back().ar);
        csrs.push_back(r.per_seed.back().csr);
        all.insert(all.end(), run.logs.begin(), run.logs.end());
    }
    r.episodes = all.size();
    r.ar = acceptance_rate(all);
    r.csr = concern_solving_rate(all, CsrAveraging::Micro);
    r.csr_macro = concern_solving_rate(all, CsrAveraging::Macro);
    r.mean_length = mean_episode_length(all);
    r.initiative = initiative_share(all);
    std::tie(r.ar_mean, r.ar_std) = mean_std(ars);
    std::tie(r.csr_mean, r.csr_std) = mean_std(csrs);
    return r;
}

namespace {

Json seed_json(const SeedMetrics& m) {
    return Json{{"seed", m.seed},           {"episodes", m.episodes},
                {"ar", m.ar},               {"csr", m.csr},
                {"csr_macro", m.csr_macro}, {"mean_length", m.mean_length},
                {"initiative_share", m.initiative}};
}

SeedMetrics seed_from_json(const Json& j) {
    SeedMetrics m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.episodes = j.at("episodes").get<std::size_t>();
    m.ar = j.at("ar").get<double>();
    m.csr = j.at("csr").get<double>();
    m.csr_macro = j.at("csr_macro").get<double>();
    m.mean_length = j.at("mean_length").get<double>();
    m.initiative = j.at("initiative_share").get<double>();
    return m;
}

}  // namespace

Json report_to_json(const EvalReport& r) {
    Json j;
    j["view"] = r.view;
    j["episodes"] = r.episodes;
    j["ar"] = r.ar;
    j["csr"] = r.csr;
    j["csr_macro"] = r.csr_macro;
    j["mean_length"] = r.mean_length;
    j["initiative_share"] = r.initiative;
    j["ar_mean"] = r.ar_mean;
    j["ar_std"] = r.ar_std;
    j["csr_mean"] = r.csr_mean;
    j["csr_std"] = r.csr_std;
    j["per_seed"] = Json::array();
    for (const auto& s : r.per_seed) j["per_seed"].push_back(seed_json(s));
    return j;
}

EvalReport report_from_json(const Json& j) {
    try {
        EvalReport r;
        r.view = j.at("view").get<std::string>();
        r.episodes = j.at("episodes").get<std::size_t>();
        r.ar = j.at("ar").get<double>();
        r.csr = j.at("csr").get<double>();
        r.csr_macro = j.at("csr_macro").get<double>();
        r.mean_length = j.at("mean_length").get<double>();
        r.initiative = j.at("initiative_share").get<double>();
        r.ar_mean = j.at("ar_mean").get<double>();
        r.ar_std = j.at("ar_std").get<double>();
        r.csr_mean = j.at("csr_mean").get<double>();
        r.csr_std = j.at("csr_std").get<double>();
        for (const auto& s : j.at("per_seed")) r.per_seed.push_back(seed_from_json(s));
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("eval report: ") + e.what());
    }
}

std::string report_table(const EvalReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "seed,episodes,ar,csr,csr_macro,mean_length,initiative_share\n";
    for (const auto& s : r.per_seed)
        out << s.seed << ',' << s.episodes << ',' << s.ar << ',' << s.csr << ',' << s.csr_macro << ','
            << s.mean_length << ',' << s.initiative << '\n';
    out << "all," << r.episodes << ',' << r.ar << ',' << r.csr << ',' << r.csr_macro << ',' << r.mean_length
        << ',' << r.initiative << '\n';
    return out.str();
}

double sign_test_p(std::size_t wins, std::size_t trials) {
    if (wins > trials) throw DomainError("sign_test_p: wins exceed trials");
    // Exact binomial tail, summed from the top with running coefficients.
    double tail = 0.0;
    double coeff = 1.0;  // C(trials, k) for k = trials downwards
    for (std::size_t k = trials;; --k) {
        if (k >= wins) tail += coeff;
        if (k == 0 || k < wins) break;
        coeff = coeff * static_cast<double>(k) / static_cast<double>(trials - k + 1);
    }
    return tail / std::ldexp(1.0, static_cast<int>(trials));
}

Comparison compare_runs(std::span<const SeedMetrics> a, std::span<const SeedMetrics> b) {
    if (a.size() < 2 || b.size() < 2) throw DomainError("compare_runs: need at least two seeds per run");
    std::map<std::uint64_t, const SeedMetrics*> by_seed;
    for (const auto& m : a) by_seed[m.seed] = &m;
    if (by_seed.size() != a.size() || a.size() != b.size()) throw DomainError("compare_runs: seed sets differ");
    Comparison c;
    c.seeds = a.size();
    for (const auto& mb : b) {
        auto it = by_seed.find(mb.seed);
        if (it == by_seed.end()) throw DomainError("compare_runs: seed sets differ");
        const SeedMetrics& ma = *it->second;
        c.ar_mean_diff += mb.ar - ma.ar;
        c.csr_mean_diff += mb.csr - ma.csr;
        c.ar_wins += mb.ar > ma.ar;
        c.ar_losses += mb.ar < ma.ar;
        c.csr_wins += mb.csr > ma.csr;
        c.csr_losses += mb.csr < ma.csr;
    }
    c.ar_mean_diff /= static_cast<double>(c.seeds);
    c.csr_mean_diff /= static_cast<double>(c.seeds);
    c.ar_p = sign_test_p(c.ar_wins, c.ar_wins + c.ar_losses);
    c.csr_p = sign_test_p(c.csr_wins, c.csr_wins + c.csr_losses);
    return c;
}

Comparison compare_runs(std::span<const SeedLogs> a, std::span<const SeedLogs> b) {
    std::vector<SeedMetrics> ma, mb;
    for (const auto& r : a) ma.push_back(seed_metrics(r.seed, r.logs));
    for (const auto& r : b) mb.push_back(seed_metrics(r.seed, r.logs));
    return compare_runs(std::span<const SeedMetrics>(ma), std::span<const SeedMetrics>(mb));
}

}  // namespace concernsim
