#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "concernsim/cus_env.hpp"
#include "concernsim/json.hpp"

namespace concernsim {

/// Acceptance Rate: 100 * #Accept / #episodes. Throws on empty input.
double acceptance_rate(std::span<const EpisodeLog> logs);

enum class CsrAveraging { Micro, Macro };

/// Concern Solving Rate. Micro pools concerns across episodes; macro
/// averages per-episode rates. Throws when no episode carries concerns.
double concern_solving_rate(std::span<const EpisodeLog> logs, CsrAveraging averaging = CsrAveraging::Micro);

/// Percentage of agent acts that are Probe, Address, Pitch or Close.
double initiative_share(std::span<const EpisodeLog> logs);

double mean_episode_length(std::span<const EpisodeLog> logs);

struct SeedMetrics {
    std::uint64_t seed = 0;
    std::size_t episodes = 0;
    double ar = 0.0;
    double csr = 0.0;
    double csr_macro = 0.0;
    double mean_length = 0.0;
    double initiative = 0.0;

    bool operator==(const SeedMetrics&) const = default;
};

SeedMetrics seed_metrics(std::uint64_t seed, std::span<const EpisodeLog> logs);

struct EvalReport {
    std::string view;  // "deployable" or "privileged"
    std::size_t episodes = 0;
    double ar = 0.0;
    double csr = 0.0;
    double csr_macro = 0.0;
    double mean_length = 0.0;
    double initiative = 0.0;
    std::vector<SeedMetrics> per_seed;
    double ar_mean = 0.0, ar_std = 0.0;    // across seeds, population std
    double csr_mean = 0.0, csr_std = 0.0;

    bool operator==(const EvalReport&) const = default;
};

struct SeedLogs {
    std::uint64_t seed;
    std::vector<EpisodeLog> logs;
};

EvalReport build_report(std::span<const SeedLogs> runs, std::string view);

Json report_to_json(const EvalReport& report);
EvalReport report_from_json(const Json& doc);
/// CSV with one row per seed and a final "all" row.
std::string report_table(const EvalReport& report);

/// One-sided exact sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(std::size_t wins, std::size_t trials);

struct Comparison {
    std::size_t seeds = 0;
    double ar_mean_diff = 0.0;   // B - A
    double csr_mean_diff = 0.0;
    std::size_t ar_wins = 0;     // seeds where B > A strictly
    std::size_t ar_losses = 0;
    std::size_t csr_wins = 0;
    std::size_t csr_losses = 0;
    double ar_p = 1.0;           // ties are dropped before testing
    double csr_p = 1.0;
};

/// Paired-by-seed comparison of run B against run A. Requires identical
/// seed sets with at least two seeds.
Comparison compare_runs(std::span<const SeedMetrics> a, std::span<const SeedMetrics> b);
Comparison compare_runs(std::span<const SeedLogs> a, std::span<const SeedLogs> b);

}  // namespace concernsim
