#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace imode {

struct Intervention {
    double t = 0.0;
    std::vector<double> a;
};

// One trajectory: regularly observed x plus sparse interventions whose times
// coincide with observation times.
struct Episode {
    std::vector<double> times;
    std::vector<std::vector<double>> x;
    std::vector<Intervention> interventions;

    int length() const { return static_cast<int>(times.size()); }
    int n_x() const { return x.empty() ? 0 : static_cast<int>(x.front().size()); }
    const std::vector<double>* intervention_at(double t, double tol = 1e-9) const;
    void validate() const;

    nlohmann::json to_json() const;
    static Episode from_json(const nlohmann::json& j);
};

// A shared prefix plus two alternative futures that differ only in the
// presence of one intervention at the split.
struct CounterfactualPair {
    Episode prefix;    // times 0..P-1
    Episode branch_a;  // times P..P+B-1, carries the intervention
    Episode branch_b;  // same times, no intervention

    nlohmann::json to_json() const;
    static CounterfactualPair from_json(const nlohmann::json& j);
};

// JSON-lines files, one episode (or pair) per line.
void write_episodes(const std::string& path, const std::vector<Episode>& eps);
std::vector<Episode> read_episodes(const std::string& path);
void write_pairs(const std::string& path, const std::vector<CounterfactualPair>& pairs);
std::vector<CounterfactualPair> read_pairs(const std::string& path);

}  // namespace imode
