#include "imode/episode.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace imode {

namespace {

nlohmann::json number_or_int(double t) {
    if (t == std::floor(t) && std::abs(t) < 1e15) return static_cast<long long>(t);
    return t;
}

}  // namespace

const std::vector<double>* Episode::intervention_at(double t, double tol) const {
    for (const auto& iv : interventions)
        if (std::abs(iv.t - t) <= tol) return &iv.a;
    return nullptr;
}

void Episode::validate() const {
    if (times.size() != x.size()) throw std::invalid_argument("episode: times and x length differ");
    for (size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw std::invalid_argument("episode: times not strictly increasing");
    for (const auto& xi : x)
        if (xi.size() != x.front().size()) throw std::invalid_argument("episode: ragged observations");
    double prev = -1e300;
    for (const auto& iv : interventions) {
        if (!(iv.t > prev)) throw std::invalid_argument("episode: intervention times not strictly increasing");
        prev = iv.t;
        bool on_times = false;
        for (double t : times)
            if (std::abs(t - iv.t) <= 1e-9) { on_times = true; break; }
        if (!on_times) throw std::invalid_argument("episode: intervention time not in the observation time set");
        if (iv.a.size() != interventions.front().a.size())
            throw std::invalid_argument("episode: ragged interventions");
    }
}

nlohmann::json Episode::to_json() const {
    nlohmann::json j;
    j["times"] = nlohmann::json::array();
    for (double t : times) j["times"].push_back(number_or_int(t));
    j["x"] = x;
    j["interventions"] = nlohmann::json::array();
    for (const auto& iv : interventions) j["interventions"].push_back({{"t", number_or_int(iv.t)}, {"a", iv.a}});
    return j;
}

Episode Episode::from_json(const nlohmann::json& j) {
    Episode e;
    e.times = j.at("times").get<std::vector<double>>();
    e.x = j.at("x").get<std::vector<std::vector<double>>>();
    for (const auto& iv : j.at("interventions"))
        e.interventions.push_back({iv.at("t").get<double>(), iv.at("a").get<std::vector<double>>()});
    e.validate();
    return e;
}

nlohmann::json CounterfactualPair::to_json() const {
    return {{"prefix", prefix.to_json()}, {"branch_a", branch_a.to_json()}, {"branch_b", branch_b.to_json()}};
}

CounterfactualPair CounterfactualPair::from_json(const nlohmann::json& j) {
    CounterfactualPair p;
    p.prefix = Episode::from_json(j.at("prefix"));
    p.branch_a = Episode::from_json(j.at("branch_a"));
    p.branch_b = Episode::from_json(j.at("branch_b"));
    return p;
}

namespace {

template <typename T, typename ToJson>
void write_jsonl(const std::string& path, const std::vector<T>& items, ToJson to_json) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& item : items) os << to_json(item).dump() << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

template <typename T, typename FromJson>
std::vector<T> read_jsonl(const std::string& path, FromJson from_json) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<T> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
        }
    }
    return out;
}

}  // namespace

void write_episodes(const std::string& path, const std::vector<Episode>& eps) {
    write_jsonl(path, eps, [](const Episode& e) { return e.to_json(); });
}

std::vector<Episode> read_episodes(const std::string& path) {
    return read_jsonl<Episode>(path, [](const nlohmann::json& j) { return Episode::from_json(j); });
}

void write_pairs(const std::string& path, const std::vector<CounterfactualPair>& pairs) {
    write_jsonl(path, pairs, [](const CounterfactualPair& p) { return p.to_json(); });
}

std::vector<CounterfactualPair> read_pairs(const std::string& path) {
    return read_jsonl<CounterfactualPair>(path, [](const nlohmann::json& j) { return CounterfactualPair::from_json(j); });
}

}  // namespace imode
