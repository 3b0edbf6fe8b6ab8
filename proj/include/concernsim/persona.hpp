#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "concernsim/act.hpp"
#include "concernsim/json.hpp"

namespace concernsim {

// ---------------------------------------------------------------------------
// Concern bank
// ---------------------------------------------------------------------------

struct Dimension {
    std::string id;
    std::vector<std::string> values;

    bool operator==(const Dimension&) const = default;
};

/// One latent objection. `anti_patterns` entries are either a verb name
/// ("probe", "pitch", "close") matching every act with that verb, or a tactic
/// id (optionally written "address:<tactic>") matching Address acts that use
/// the tactic on any concern.
struct ConcernSpec {
    std::string id;
    std::string dimension;
    std::string resistance_text;
    std::vector<std::string> unlock_tactics;
    std::optional<std::string> prerequisite;
    std::vector<std::string> anti_patterns;
    double weight = 1.0;

    bool operator==(const ConcernSpec&) const = default;
};

struct ConcernBank {
    std::string name;
    std::string version;
    std::vector<Dimension> dimensions;
    std::vector<std::string> tactics;
    std::vector<ConcernSpec> concerns;

    std::optional<std::size_t> find_concern(std::string_view id) const;
    std::optional<std::size_t> find_dimension(std::string_view id) const;
    std::optional<std::size_t> find_tactic(std::string_view id) const;

    /// Index of the concern's dimension. Only meaningful on a valid bank.
    std::size_t dimension_of(std::size_t concern) const;
    bool unlocks(std::size_t concern, std::size_t tactic) const;

    bool operator==(const ConcernBank&) const = default;
};

/// Tactic named by an anti-pattern, or nullopt when it names a verb.
std::optional<std::string_view> anti_pattern_tactic(std::string_view pattern);
/// Verb named by an anti-pattern, or nullopt when it names a tactic.
std::optional<Verb> anti_pattern_verb(std::string_view pattern);

struct Violation {
    std::string rule;  // e.g. "duplicate-id", "prerequisite-cycle"
    std::string id;    // offending id
    std::string detail;

    std::string to_string() const { return rule + ": " + id + ": " + detail; }
    bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate_bank(const ConcernBank& bank);

/// Parses and validates. Throws ParseError on malformed documents and
/// ValidationError listing every violated invariant.
ConcernBank load_bank(std::string_view source);
ConcernBank load_bank_file(const std::filesystem::path& path);
/// Parses without validating (used by the validate subcommand).
ConcernBank parse_bank(std::string_view source);

Json bank_to_json(const ConcernBank& bank);
ConcernBank bank_from_json(const Json& doc);
std::string serialize_bank(const ConcernBank& bank);
/// Content hash over the canonical serialization.
std::string bank_fingerprint(const ConcernBank& bank);

// ---------------------------------------------------------------------------
// Personas
// ---------------------------------------------------------------------------

enum class CommunicationStyle { Terse, Neutral, Verbose };

std::string_view style_name(CommunicationStyle s);
std::optional<CommunicationStyle> parse_style(std::string_view s);

struct ExternalTraits {
    double time_pressure = 0.5;
    double courtesy = 0.5;
    CommunicationStyle communication_style = CommunicationStyle::Neutral;
    double cooperation = 0.5;
    double tech_familiarity = 0.5;

    bool operator==(const ExternalTraits&) const = default;
};

struct Background {
    std::vector<std::pair<std::string, std::string>> attributes;

    bool operator==(const Background&) const = default;
};

struct PersonaProfile {
    Background background;
    ExternalTraits external;
    std::vector<std::string> internal;  // active concern ids, in sampled order
    double initial_willingness = 40.0;
    std::uint64_t seed = 0;

    bool operator==(const PersonaProfile&) const = default;
};

struct Range {
    double lo = 0.0;
    double hi = 1.0;
};

struct SamplingConfig {
    std::size_t min_concerns = 3;
    std::size_t max_concerns = 6;
    Range willingness{30.0, 50.0};
    Range time_pressure;
    Range courtesy;
    Range cooperation;
    Range tech_familiarity;
    std::vector<std::pair<std::string, std::vector<std::string>>> background_options = {
        {"region", {"north", "south", "east", "west", "central"}},
        {"tenure", {"new", "established", "veteran"}},
        {"call_window", {"morning", "midday", "evening"}},
    };
};

PersonaProfile sample_persona(const ConcernBank& bank, std::uint64_t seed,
                              const SamplingConfig& config = {});

/// Throws DomainError if the persona does not fit the bank.
void check_persona(const PersonaProfile& persona, const ConcernBank& bank);

Json persona_to_json(const PersonaProfile& persona);
PersonaProfile persona_from_json(const Json& doc);
std::string serialize_personas(const std::vector<PersonaProfile>& personas);
std::vector<PersonaProfile> load_personas(std::string_view source);

}  // namespace concernsim
