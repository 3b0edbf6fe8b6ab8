#include "concernsim/persona.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "concernsim/errors.hpp"
#include "concernsim/rng.hpp"

namespace concernsim {

namespace {

template <typename Seq>
std::optional<std::size_t> find_by_id(const Seq& seq, std::string_view id) {
    for (std::size_t i = 0; i < seq.size(); ++i)
        if (seq[i].id == id) return i;
    return std::nullopt;
}

std::string require_string(const Json& obj, const char* key, std::string_view what) {
    if (!obj.contains(key)) throw ParseError(std::string(what) + ": missing key '" + key + "'");
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ParseError(std::string(what) + ": '" + key + "' must be a string");
    return v.get<std::string>();
}

std::vector<std::string> string_list(const Json& v, std::string_view what) {
    if (!v.is_array()) throw ParseError(std::string(what) + ": expected a list of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
        if (!e.is_string()) throw ParseError(std::string(what) + ": expected a list of strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

double require_number(const Json& v, std::string_view what) {
    if (!v.is_number()) throw ParseError(std::string(what) + ": expected a number");
    return v.get<double>();
}

}  // namespace

std::optional<std::size_t> ConcernBank::find_concern(std::string_view id) const {
    return find_by_id(concerns, id);
}

std::optional<std::size_t> ConcernBank::find_dimension(std::string_view id) const {
    return find_by_id(dimensions, id);
}

std::optional<std::size_t> ConcernBank::find_tactic(std::string_view id) const {
    for (std::size_t i = 0; i < tactics.size(); ++i)
        if (tactics[i] == id) return i;
    return std::nullopt;
}

std::size_t ConcernBank::dimension_of(std::size_t concern) const {
    return find_dimension(concerns.at(concern).dimension).value();
}

bool ConcernBank::unlocks(std::size_t concern, std::size_t tactic) const {
    const auto& u = concerns.at(concern).unlock_tactics;
    return std::find(u.begin(), u.end(), tactics.at(tactic)) != u.end();
}

std::optional<std::string_view> anti_pattern_tactic(std::string_view pattern) {
    constexpr std::string_view prefix = "address:";
    if (pattern.starts_with(prefix)) return pattern.substr(prefix.size());
    if (parse_verb(pattern)) return std::nullopt;
    return pattern;
}

std::optional<Verb> anti_pattern_verb(std::string_view pattern) {
    if (pattern.starts_with("address:")) return std::nullopt;
    return parse_verb(pattern);
}

std::vector<Violation> validate_bank(const ConcernBank& bank) {
    std::vector<Violation> out;
    auto add = [&](std::string rule, std::string id, std::string detail) {
        out.push_back({std::move(rule), std::move(id), std::move(detail)});
    };

    auto check_unique = [&](const std::vector<std::string>& ids, std::string_view kind) {
        std::set<std::string> seen, reported;
        for (const auto& id : ids) {
            if (id.empty()) add("empty-id", "", std::string(kind) + " with empty id");
            else if (!seen.insert(id).second && reported.insert(id).second)
                add("duplicate-id", id, std::string(kind) + " id appears more than once");
        }
    };

    std::vector<std::string> dim_ids, concern_ids;
    for (const auto& d : bank.dimensions) dim_ids.push_back(d.id);
    for (const auto& c : bank.concerns) concern_ids.push_back(c.id);
    check_unique(dim_ids, "dimension");
    check_unique(bank.tactics, "tactic");
    check_unique(concern_ids, "concern");

    for (const auto& t : bank.tactics)
        if (parse_verb(t) || t.starts_with("address:"))
            add("reserved-id", t, "tactic id collides with a verb name");

    for (const auto& c : bank.concerns) {
        if (!bank.find_dimension(c.dimension))
            add("dangling-dimension", c.id, "unknown dimension '" + c.dimension + "'");
        if (c.unlock_tactics.empty()) add("empty-unlock", c.id, "no unlock tactics");
        for (const auto& t : c.unlock_tactics)
            if (!bank.find_tactic(t)) add("dangling-tactic", c.id, "unknown unlock tactic '" + t + "'");
        for (const auto& p : c.anti_patterns) {
            if (auto v = anti_pattern_verb(p)) {
                if (*v == Verb::Acknowledge || *v == Verb::Address)
                    add("bad-anti-pattern", c.id, "verb '" + p + "' cannot be an anti-pattern");
                continue;
            }
            const auto t = std::string(*anti_pattern_tactic(p));
            if (!bank.find_tactic(t)) {
                add("dangling-tactic", c.id, "unknown anti-pattern tactic '" + t + "'");
            } else if (std::find(c.unlock_tactics.begin(), c.unlock_tactics.end(), t) !=
                       c.unlock_tactics.end()) {
                add("unlock-anti-overlap", c.id, "tactic '" + t + "' both unlocks and penalizes");
            }
        }
        if (!(c.weight > 0.0) || !std::isfinite(c.weight))
            add("bad-weight", c.id, "weight must be positive and finite");
        if (c.prerequisite) {
            if (*c.prerequisite == c.id)
                add("dangling-prerequisite", c.id, "concern cannot be its own prerequisite");
            else if (!bank.find_concern(*c.prerequisite))
                add("dangling-prerequisite", c.id, "unknown prerequisite '" + *c.prerequisite + "'");
        }
    }

    // Prerequisite cycles: walk each chain; report a cycle once, under its
    // smallest member id.
    std::set<std::string> reported_cycles;
    for (const auto& start : bank.concerns) {
        std::vector<std::string> path{start.id};
        const ConcernSpec* cur = &start;
        while (cur->prerequisite && *cur->prerequisite != cur->id) {
            auto next = bank.find_concern(*cur->prerequisite);
            if (!next) break;
            cur = &bank.concerns[*next];
            auto it = std::find(path.begin(), path.end(), cur->id);
            if (it != path.end()) {
                std::vector<std::string> cycle(it, path.end());
                const auto smallest = *std::min_element(cycle.begin(), cycle.end());
                if (reported_cycles.insert(smallest).second) {
                    std::string detail = "prerequisite cycle";
                    for (const auto& id : cycle) detail += " " + id + " ->";
                    detail += " " + cur->id;
                    add("prerequisite-cycle", smallest, detail);
                }
                break;
            }
            path.push_back(cur->id);
        }
    }
    return out;
}

ConcernBank bank_from_json(const Json& doc) {
    try {
        reject_unknown_keys(doc, {"name", "version", "dimensions", "tactics", "concerns"}, "bank");
        ConcernBank bank;
        bank.name = require_string(doc, "name", "bank");
        bank.version = require_string(doc, "version", "bank");
        if (!doc.contains("dimensions") || !doc.at("dimensions").is_array())
            throw ParseError("bank: 'dimensions' must be a list");
        for (const auto& d : doc.at("dimensions")) {
            reject_unknown_keys(d, {"id", "values"}, "dimension");
            Dimension dim;
            dim.id = require_string(d, "id", "dimension");
            if (d.contains("values")) dim.values = string_list(d.at("values"), "dimension.values");
            bank.dimensions.push_back(std::move(dim));
        }
        if (!doc.contains("tactics")) throw ParseError("bank: missing key 'tactics'");
        bank.tactics = string_list(doc.at("tactics"), "bank.tactics");
        if (!doc.contains("concerns") || !doc.at("concerns").is_array())
            throw ParseError("bank: 'concerns' must be a list");
        for (const auto& c : doc.at("concerns")) {
            reject_unknown_keys(c,
                                {"id", "dimension", "resistance_text", "unlock_tactics",
                                 "prerequisite", "anti_patterns", "weight"},
                                "concern");
            ConcernSpec spec;
            spec.id = require_string(c, "id", "concern");
            spec.dimension = require_string(c, "dimension", "concern");
            spec.resistance_text = require_string(c, "resistance_text", "concern");
            if (!c.contains("unlock_tactics")) throw ParseError("concern: missing 'unlock_tactics'");
            spec.unlock_tactics = string_list(c.at("unlock_tactics"), "concern.unlock_tactics");
            if (c.contains("prerequisite") && !c.at("prerequisite").is_null())
                spec.prerequisite = require_string(c, "prerequisite", "concern");
            if (c.contains("anti_patterns"))
                spec.anti_patterns = string_list(c.at("anti_patterns"), "concern.anti_patterns");
            if (c.contains("weight")) spec.weight = require_number(c.at("weight"), "concern.weight");
            bank.concerns.push_back(std::move(spec));
        }
        return bank;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bank: ") + e.what());
    }
}

ConcernBank parse_bank(std::string_view source) {
    return bank_from_json(parse_json(source, "bank"));
}

ConcernBank load_bank(std::string_view source) {
    ConcernBank bank = parse_bank(source);
    auto violations = validate_bank(bank);
    if (!violations.empty()) {
        std::vector<std::string> lines;
        for (const auto& v : violations) lines.push_back(v.to_string());
        throw ValidationError(std::move(lines));
    }
    return bank;
}

ConcernBank load_bank_file(const std::filesystem::path& path) {
    return load_bank(read_text_file(path));
}

Json bank_to_json(const ConcernBank& bank) {
    Json doc;
    doc["name"] = bank.name;
    doc["version"] = bank.version;
    doc["dimensions"] = Json::array();
    for (const auto& d : bank.dimensions) doc["dimensions"].push_back({{"id", d.id}, {"values", d.values}});
    doc["tactics"] = bank.tactics;
    doc["concerns"] = Json::array();
    for (const auto& c : bank.concerns) {
        Json j;
        j["id"] = c.id;
        j["dimension"] = c.dimension;
        j["resistance_text"] = c.resistance_text;
        j["unlock_tactics"] = c.unlock_tactics;
        if (c.prerequisite) j["prerequisite"] = *c.prerequisite;
        j["anti_patterns"] = c.anti_patterns;
        j["weight"] = c.weight;
        doc["concerns"].push_back(std::move(j));
    }
    return doc;
}

std::string serialize_bank(const ConcernBank& bank) { return bank_to_json(bank).dump(2) + "\n"; }

std::string bank_fingerprint(const ConcernBank& bank) { return fnv1a_hex(bank_to_json(bank).dump()); }

// ---------------------------------------------------------------------------

std::string_view style_name(CommunicationStyle s) {
    switch (s) {
        case CommunicationStyle::Terse: return "terse";
        case CommunicationStyle::Neutral: return "neutral";
        case CommunicationStyle::Verbose: return "verbose";
    }
    return "neutral";
}

std::optional<CommunicationStyle> parse_style(std::string_view s) {
    if (s == "terse") return CommunicationStyle::Terse;
    if (s == "neutral") return CommunicationStyle::Neutral;
    if (s == "verbose") return CommunicationStyle::Verbose;
    return std::nullopt;
}

PersonaProfile sample_persona(const ConcernBank& bank, std::uint64_t seed, const SamplingConfig& config) {
    if (config.min_concerns > config.max_concerns)
        throw ConfigError("sampling: min_concerns exceeds max_concerns");
    if (bank.concerns.size() < config.max_concerns)
        throw DomainError("bank '" + bank.name + "' has " + std::to_string(bank.concerns.size()) +
                          " concerns; sampling needs at least " + std::to_string(config.max_concerns));

    Rng rng(seed);
    PersonaProfile p;
    p.seed = seed;

    const auto n = static_cast<std::size_t>(rng.uniform_int(config.min_concerns, config.max_concerns));
    std::vector<std::size_t> idx(bank.concerns.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(i, idx.size() - 1));
        std::swap(idx[i], idx[j]);
        p.internal.push_back(bank.concerns[idx[i]].id);
    }

    auto draw = [&](const Range& r) { return rng.uniform(r.lo, r.hi); };
    p.external.time_pressure = draw(config.time_pressure);
    p.external.courtesy = draw(config.courtesy);
    p.external.communication_style = static_cast<CommunicationStyle>(rng.uniform_int(0, 2));
    p.external.cooperation = draw(config.cooperation);
    p.external.tech_familiarity = draw(config.tech_familiarity);
    p.initial_willingness = draw(config.willingness);

    for (const auto& [key, options] : config.background_options) {
        if (options.empty()) continue;
        p.background.attributes.emplace_back(key, options[rng.uniform_int(0, options.size() - 1)]);
    }
    return p;
}

void check_persona(const PersonaProfile& persona, const ConcernBank& bank) {
    std::set<std::string> seen;
    for (const auto& id : persona.internal) {
        if (!bank.find_concern(id))
            throw DomainError("persona concern '" + id + "' is not in bank '" + bank.name + "'");
        if (!seen.insert(id).second) throw DomainError("persona lists concern '" + id + "' twice");
    }
    const auto& e = persona.external;
    for (double v : {e.time_pressure, e.courtesy, e.cooperation, e.tech_familiarity})
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("persona external trait outside [0,1]");
    if (!(persona.initial_willingness >= 0.0 && persona.initial_willingness <= 100.0))
        throw DomainError("persona initial_willingness outside [0,100]");
}

Json persona_to_json(const PersonaProfile& p) {
    Json bg = Json::object();
    for (const auto& [k, v] : p.background.attributes) bg[k] = v;
    Json doc;
    doc["seed"] = p.seed;
    doc["background"] = std::move(bg);
    doc["external"] = {{"time_pressure", p.external.time_pressure},
                       {"courtesy", p.external.courtesy},
                       {"communication_style", style_name(p.external.communication_style)},
                       {"cooperation", p.external.cooperation},
                       {"tech_familiarity", p.external.tech_familiarity}};
    doc["internal"] = p.internal;
    doc["initial_willingness"] = p.initial_willingness;
    return doc;
}

PersonaProfile persona_from_json(const Json& doc) {
    try {
        reject_unknown_keys(doc, {"seed", "background", "external", "internal", "initial_willingness"},
                            "persona");
        PersonaProfile p;
        if (doc.contains("seed")) p.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("background")) {
            const auto& bg = doc.at("background");
            if (!bg.is_object()) throw ParseError("persona.background must be an object");
            for (const auto& item : bg.items()) {
                if (!item.value().is_string()) throw ParseError("persona.background values must be strings");
                p.background.attributes.emplace_back(item.key(), item.value().get<std::string>());
            }
        }
        if (doc.contains("external")) {
            const auto& e = doc.at("external");
            reject_unknown_keys(e,
                                {"time_pressure", "courtesy", "communication_style", "cooperation",
                                 "tech_familiarity"},
                                "persona.external");
            auto num = [&](const char* key, double& out) {
                if (e.contains(key)) out = require_number(e.at(key), std::string("persona.external.") + key);
            };
            num("time_pressure", p.external.time_pressure);
            num("courtesy", p.external.courtesy);
            num("cooperation", p.external.cooperation);
            num("tech_familiarity", p.external.tech_familiarity);
            if (e.contains("communication_style")) {
                auto s = parse_style(e.at("communication_style").get<std::string>());
                if (!s) throw ParseError("persona.external.communication_style: unknown style");
                p.external.communication_style = *s;
            }
        }
        if (!doc.contains("internal")) throw ParseError("persona: missing key 'internal'");
        p.internal = string_list(doc.at("internal"), "persona.internal");
        if (doc.contains("initial_willingness"))
            p.initial_willingness = require_number(doc.at("initial_willingness"), "persona.initial_willingness");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("persona: ") + e.what());
    }
}

std::string serialize_personas(const std::vector<PersonaProfile>& personas) {
    Json arr = Json::array();
    for (const auto& p : personas) arr.push_back(persona_to_json(p));
    return arr.dump(2) + "\n";
}

std::vector<PersonaProfile> load_personas(std::string_view source) {
    const Json doc = parse_json(source, "persona file");
    if (!doc.is_array()) throw ParseError("persona file: expected a list of personas");
    std::vector<PersonaProfile> out;
    for (const auto& p : doc) out.push_back(persona_from_json(p));
    return out;
}

}  // namespace concernsim
