#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace concernsim {

/// Dialogue-act verbs available to the agent. The numeric value is the verb
/// token id.
enum class Verb : std::size_t { Probe = 0, Address = 1, Pitch = 2, Close = 3, Acknowledge = 4 };

inline constexpr std::size_t kVerbCount = 5;

inline constexpr std::array<Verb, kVerbCount> kAllVerbs = {
    Verb::Probe, Verb::Address, Verb::Pitch, Verb::Close, Verb::Acknowledge};

constexpr std::string_view verb_name(Verb v) {
    switch (v) {
        case Verb::Probe: return "probe";
        case Verb::Address: return "address";
        case Verb::Pitch: return "pitch";
        case Verb::Close: return "close";
        case Verb::Acknowledge: return "acknowledge";
    }
    return "?";
}

inline std::optional<Verb> parse_verb(std::string_view s) {
    for (Verb v : kAllVerbs)
        if (verb_name(v) == s) return v;
    if (s == "ack") return Verb::Acknowledge;
    return std::nullopt;
}

constexpr std::size_t verb_index(Verb v) { return static_cast<std::size_t>(v); }

/// Verbs that carry an argument token other than the empty one.
constexpr bool verb_takes_argument(Verb v) { return v == Verb::Probe || v == Verb::Address; }

}  // namespace concernsim
