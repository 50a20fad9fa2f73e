// Copyright 2026 The simhijack Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reference population-based malaria simulator. Every random draw goes
// through ClientContext, so a controller sees (and can steer) all of them.
//
// Per run: one global transmission scale, one immunity draw per human, then
// per 5-day step and per living human: infection, under-5 mortality, initial
// parasite density on new infection, within-host progression, clinical or
// severe episode, and recovery. Monthly reported cases are observed when an
// observation series is configured.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simhijack/client.hpp"
#include "simhijack/distribution_spec.hpp"
#include "simhijack/error.hpp"
#include "simhijack/tensor.hpp"

namespace simhijack::malaria {

inline constexpr int kDaysPerMonth = 30;
inline constexpr int kMonthsPerYear = 12;
inline constexpr int kDaysPerYear = 365;
inline constexpr int kDaysPerSeasonalYear = kDaysPerMonth * kMonthsPerYear;
inline constexpr int kChildAgeDays = 5 * kDaysPerYear;
/// Initial ages are spread evenly over this span.
inline constexpr int kMaxInitialAgeYears = 60;

struct ScenarioConfig {
    std::uint32_t population_size = 100;
    std::uint32_t years = 3;
    std::uint32_t timestep_days = 5;
    std::array<double, kMonthsPerYear> monthly_eir{};
    double transmission_scale_low = 0.5;
    double transmission_scale_high = 1.5;
    double p_child_mortality_per_step = 1e-4;
    double parasite_density_mean = 6.0;
    double parasite_density_sd = 1.5;
    double p_recovery_per_step = 0.1;
    double severe_threshold = 8.0;
    double reporting_rate = 0.3;

    std::uint32_t num_steps() const { return years * kDaysPerYear / timestep_days; }
    std::uint32_t num_months() const { return years * kMonthsPerYear; }

    /// Throws ValidationError naming the first offending field.
    void validate() const {
        auto bad = [](const char* field, const char* why) {
            throw Error(ErrorCode::ValidationError, std::string(field) + ": " + why);
        };
        auto probability = [&](const char* field, double p) {
            if (!(p >= 0.0 && p <= 1.0)) bad(field, "must lie in [0, 1]");
        };
        if (population_size < 1) bad("population_size", "must be >= 1");
        if (years < 1) bad("years", "must be >= 1");
        if (timestep_days < 1 || kDaysPerMonth % timestep_days != 0) bad("timestep_days", "must divide 30");
        for (double e : monthly_eir)
            if (!(e >= 0.0) || !std::isfinite(e)) bad("monthly_eir", "entries must be finite and >= 0");
        if (!(transmission_scale_low >= 0.0) || !(transmission_scale_low < transmission_scale_high) ||
            !std::isfinite(transmission_scale_high))
            bad("transmission_scale_prior", "needs 0 <= low < high");
        probability("p_child_mortality_per_step", p_child_mortality_per_step);
        if (!std::isfinite(parasite_density_mean)) bad("parasite_density_mean", "must be finite");
        if (!(parasite_density_sd > 0.0) || !std::isfinite(parasite_density_sd))
            bad("parasite_density_sd", "must be > 0");
        probability("p_recovery_per_step", p_recovery_per_step);
        if (!std::isfinite(severe_threshold)) bad("severe_threshold", "must be finite");
        if (!(reporting_rate > 0.0 && reporting_rate <= 1.0)) bad("reporting_rate", "must lie in (0, 1]");
    }
};

/// Scenario file fields, exactly.
inline const std::set<std::string>& scenario_fields() {
    static const std::set<std::string> fields = {
        "population_size",      "years",                 "timestep_days",
        "monthly_eir",          "transmission_scale_prior", "p_child_mortality_per_step",
        "parasite_density_mean", "parasite_density_sd",  "p_recovery_per_step",
        "severe_threshold",     "reporting_rate"};
    return fields;
}

inline ScenarioConfig parse_scenario(std::string_view text) {
    ScenarioConfig cfg;
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_object()) throw Error(ErrorCode::ParseError, "scenario must be a JSON object");
        for (const auto& field : scenario_fields())
            if (!j.contains(field)) throw Error(ErrorCode::ParseError, "missing field " + field);
        for (const auto& [key, value] : j.items())
            if (!scenario_fields().contains(key)) throw Error(ErrorCode::ParseError, "unknown field " + key);

        auto count = [&](const char* field) {
            const auto& v = j.at(field);
            if (!v.is_number_integer()) throw Error(ErrorCode::ParseError, std::string(field) + " must be an integer");
            auto n = v.get<std::int64_t>();
            if (n < 0 || n > 100'000'000) throw Error(ErrorCode::ValidationError, std::string(field) + ": out of range");
            return static_cast<std::uint32_t>(n);
        };
        auto number = [&](const char* field) {
            const auto& v = j.at(field);
            if (!v.is_number()) throw Error(ErrorCode::ParseError, std::string(field) + " must be a number");
            return v.get<double>();
        };
        cfg.population_size = count("population_size");
        cfg.years = count("years");
        cfg.timestep_days = count("timestep_days");
        const auto& eir = j.at("monthly_eir");
        if (!eir.is_array() || eir.size() != kMonthsPerYear)
            throw Error(ErrorCode::ParseError, "monthly_eir must be a list of 12 numbers");
        for (std::size_t m = 0; m < kMonthsPerYear; ++m) {
            if (!eir[m].is_number()) throw Error(ErrorCode::ParseError, "monthly_eir must be a list of 12 numbers");
            cfg.monthly_eir[m] = eir[m].get<double>();
        }
        const auto& prior = j.at("transmission_scale_prior");
        if (!prior.is_object() || !prior.contains("low") || !prior.contains("high") || !prior["low"].is_number() ||
            !prior["high"].is_number())
            throw Error(ErrorCode::ParseError, "transmission_scale_prior must be {\"low\": x, \"high\": y}");
        cfg.transmission_scale_low = prior["low"].get<double>();
        cfg.transmission_scale_high = prior["high"].get<double>();
        cfg.p_child_mortality_per_step = number("p_child_mortality_per_step");
        cfg.parasite_density_mean = number("parasite_density_mean");
        cfg.parasite_density_sd = number("parasite_density_sd");
        cfg.p_recovery_per_step = number("p_recovery_per_step");
        cfg.severe_threshold = number("severe_threshold");
        cfg.reporting_rate = number("reporting_rate");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    cfg.validate();
    return cfg;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
    return parse_scenario(read_text_file(path));
}

/// Reported monthly cases, one per simulated month.
inline std::vector<double> parse_observations(std::string_view text, const ScenarioConfig& cfg) {
    std::vector<double> out;
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_array()) throw Error(ErrorCode::ParseError, "observations must be a JSON list");
        for (const auto& v : j) {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
                throw Error(ErrorCode::ParseError, "observations must be non-negative integers");
            out.push_back(static_cast<double>(v.get<std::int64_t>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    if (out.size() != cfg.num_months())
        throw Error(ErrorCode::ValidationError, "observations: expected " + std::to_string(cfg.num_months()) +
                                                    " monthly values, got " + std::to_string(out.size()));
    return out;
}

inline std::vector<double> load_observations(const std::filesystem::path& path, const ScenarioConfig& cfg) {
    return parse_observations(read_text_file(path), cfg);
}

/// Piecewise-constant seasonal forcing: the month's EIR spread over the step.
inline double eir_per_step(const ScenarioConfig& cfg, std::uint64_t day) {
    const auto month = (day % kDaysPerSeasonalYear) / kDaysPerMonth;
    return cfg.monthly_eir[month] * static_cast<double>(cfg.timestep_days) / kDaysPerMonth;
}

struct Human {
    std::uint32_t age_days = 0;
    bool alive = true;
    bool infected = false;
    std::optional<double> log_parasite_density;
    double immunity = 0.0;
};

struct StepOutputs {
    std::uint32_t infected = 0;
    std::uint32_t new_infections = 0;
    std::uint32_t clinical_cases = 0;
    std::uint32_t severe_cases = 0;
    std::uint32_t deaths = 0;
};

struct PopulationState {
    std::vector<Human> humans;
    std::uint32_t day = 0;
    std::vector<StepOutputs> steps;
    std::vector<double> monthly_cases;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Runs one forward of the scenario, returning the population history.
/// `observations`, when given, holds one reported-case count per month.
inline PopulationState simulate(ClientContext& ctx, const ScenarioConfig& cfg,
                                const std::vector<double>* observations = nullptr) {
    using Frame = ClientContext::ScopedFrame;
    Frame forward_frame(ctx, "forward");

    PopulationState state;
    state.monthly_cases.assign(cfg.num_months(), 0.0);

    const double transmission_scale =
        ctx.sample_value(dist::Uniform{cfg.transmission_scale_low, cfg.transmission_scale_high}, "transmission_scale");

    state.humans.resize(cfg.population_size);
    for (std::uint32_t i = 0; i < cfg.population_size; ++i) {
        auto& h = state.humans[i];
        h.age_days = static_cast<std::uint32_t>(std::uint64_t{i} * kMaxInitialAgeYears * kDaysPerYear /
                                                cfg.population_size);
        h.immunity = ctx.sample_value(dist::Uniform{0.0, 0.5}, "init_human");
    }

    const auto steps = cfg.num_steps();
    state.steps.reserve(steps);
    for (std::uint32_t step = 0; step < steps; ++step) {
        const std::uint32_t day = step * cfg.timestep_days;
        state.day = day;
        const double eir = eir_per_step(cfg, day);
        StepOutputs out;
        {
            Frame population_frame(ctx, "update_population");
            for (auto& h : state.humans) {
                if (!h.alive) continue;
                const double p_infect = 1.0 - std::exp(-transmission_scale * eir * (1.0 - h.immunity));
                const bool bitten = ctx.sample_value(dist::Bernoulli{p_infect}, "infect") == 1.0;
                const bool newly_infected = bitten && !h.infected;

                if (h.age_days < kChildAgeDays &&
                    ctx.sample_value(dist::Bernoulli{cfg.p_child_mortality_per_step}, "child_mortality") == 1.0) {
                    h.alive = false;
                    h.infected = false;
                    h.log_parasite_density.reset();
                    ++out.deaths;
                    continue;
                }

                if (newly_infected) {
                    Frame wh(ctx, "within_host_update");
                    h.infected = true;
                    h.log_parasite_density = ctx.sample_value(
                        dist::Normal{cfg.parasite_density_mean, cfg.parasite_density_sd}, "parasite_density");
                    ++out.new_infections;
                }

                if (h.infected) {
                    {
                        Frame wh(ctx, "within_host_update");
                        *h.log_parasite_density += ctx.sample_value(dist::Normal{0.0, 0.25}, "within_host");
                    }
                    {
                        Frame clinical(ctx, "clinical_update");
                        const double density = *h.log_parasite_density;
                        if (density > cfg.severe_threshold) {
                            if (ctx.sample_value(dist::Bernoulli{0.5}, "clinical_severe") == 1.0) {
                                ++out.severe_cases;
                                ++out.clinical_cases;
                            }
                        } else if (ctx.sample_value(dist::Bernoulli{sigmoid(density)}, "clinical") == 1.0) {
                            ++out.clinical_cases;
                        }
                    }
                    if (ctx.sample_value(dist::Bernoulli{cfg.p_recovery_per_step}, "recover") == 1.0) {
                        h.infected = false;
                        h.log_parasite_density.reset();
                    }
                }
            }
        }
        for (auto& h : state.humans) {
            if (!h.alive) continue;
            h.age_days += cfg.timestep_days;
            if (h.infected) ++out.infected;
        }

        // the trailing partial month (days past 12 * years * 30) is not reported
        const std::uint32_t month = day / kDaysPerMonth;
        if (month < cfg.num_months()) {
            state.monthly_cases[month] += out.clinical_cases;
            const bool month_complete = (day + cfg.timestep_days) % kDaysPerMonth == 0;
            if (month_complete && observations) {
                Frame monitoring(ctx, "monitoring");
                ctx.observe(dist::Poisson{cfg.reporting_rate * state.monthly_cases[month] + 0.1},
                            (*observations)[month], "reported_cases");
            }
        }
        state.steps.push_back(out);
    }
    return state;
}

/// Outcome tensor: per-step infected counts followed by monthly case counts.
inline Tensor outcome_tensor(const PopulationState& state) {
    std::vector<double> values;
    values.reserve(state.steps.size() + state.monthly_cases.size());
    for (const auto& s : state.steps) values.push_back(s.infected);
    values.insert(values.end(), state.monthly_cases.begin(), state.monthly_cases.end());
    return Tensor::vector(std::move(values));
}

inline Tensor forward_scenario(ClientContext& ctx, const ScenarioConfig& cfg,
                               const std::vector<double>* observations = nullptr) {
    return outcome_tensor(simulate(ctx, cfg, observations));
}

/// Forward function bound to a scenario (and optional observations).
inline ForwardFn make_forward(ScenarioConfig cfg, std::optional<std::vector<double>> observations = std::nullopt) {
    cfg.validate();
    if (observations && observations->size() != cfg.num_months())
        throw Error(ErrorCode::ValidationError, "observations: one value per month required");
    return [cfg = std::move(cfg), obs = std::move(observations)](ClientContext& ctx) {
        return forward_scenario(ctx, cfg, obs ? &*obs : nullptr);
    };
}

} // namespace simhijack::malaria
