#pragma once

// Test-only helpers: a second, deliberately naive implementation of the
// simulator rules plus fixture loading. Nothing here calls into cus_env's
// transition code.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "concernsim/cus_env.hpp"
#include "concernsim/persona.hpp"

namespace testkit {

std::string source_path(const std::string& rel);
concernsim::ConcernBank load_fixture_bank(const std::string& name);  // data/banks/<name>.json

struct RefState {
    double w = 0.0;
    std::vector<int> level;   // per bank concern: -1 not held, 0/1/2
    std::vector<bool> voiced;
    int patience = 0;
    int turn = 0;
    bool pitched = false;
    bool done = false;
    bool accepted = false;
    std::size_t held = 0;
};

RefState ref_start(const concernsim::PersonaProfile& p, const concernsim::ConcernBank& bank,
                   const concernsim::EnvConfig& cfg);
/// Applies one act; returns the willingness shift.
double ref_step(RefState& s, const concernsim::AgentAct& act, const concernsim::PersonaProfile& p,
                const concernsim::ConcernBank& bank, const concernsim::EnvConfig& cfg);
bool ref_gates(const RefState& s, const concernsim::EnvConfig& cfg);

/// Every act of the bank's action space, probes first.
std::vector<concernsim::AgentAct> all_acts(const concernsim::ConcernBank& bank);

/// Accepting act sequences (as indices into all_acts) of length <= K found by
/// exhaustive search, using the reference rules.
std::vector<std::vector<int>> ref_accepting(const concernsim::PersonaProfile& p,
                                            const concernsim::ConcernBank& bank,
                                            const concernsim::EnvConfig& cfg);
/// Same search driven by concernsim::step.
std::vector<std::vector<int>> env_accepting(const concernsim::PersonaProfile& p,
                                            const concernsim::ConcernBank& bank,
                                            const concernsim::EnvConfig& cfg);

/// Checks the simulator's episode-level properties by recomputing them from
/// the log alone. Returns an empty string when all hold.
std::string episode_property_violation(const concernsim::EpisodeLog& log, const concernsim::ConcernBank& bank);

/// Episode under a uniformly random act policy.
concernsim::EpisodeLog random_episode(const concernsim::PersonaProfile& p, const concernsim::ConcernBank& bank,
                                      const concernsim::EnvConfig& cfg, std::uint64_t seed);

/// A persona holding exactly `ids`, with neutral traits.
concernsim::PersonaProfile make_persona(std::vector<std::string> ids, double w0, double cooperation = 0.5,
                                        double time_pressure = 0.0);

}  // namespace testkit
