#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imode/baselines.hpp"
#include "imode/episode.hpp"
#include "imode/imode_model.hpp"
#include "imode/simulators.hpp"

namespace imode {

// Everything a training run needs. Flags override config-file values.
struct RunConfig {
    std::string model = "imode-general";
    std::string data_dir;
    std::string out_dir = "run";
    int epochs = 300;
    int batch = 32;
    double lr = 1e-3;
    double dt = 0.5;
    int k_obs = 10;
    int horizon = 0;  // number of rollout targets; 0 = rest of the episode
    int folds = 5;
    int hidden = 40;
    double clip_norm = 5.0;
    int threads = 1;
    uint64_t seed = 1;
    bool paper_scale = false;
    bool quiet = false;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void apply_paper_scale();  // dt = 0.01, epochs = 1000 unless explicitly set
};

struct FoldResult {
    double val_mse = 0.0;
    double test_mse = 0.0;
    int best_epoch = -1;
};

struct Metrics {
    std::vector<FoldResult> folds;

    double val_mean() const;
    double val_std() const;
    double test_mean() const;
    double test_std() const;
    nlohmann::json to_json() const;
};

// A model of any supported kind behind the shared training/eval protocol.
struct ModelHandle {
    std::string name;  // imode-switch|imode-decay|imode-general|gru-dt|gru-decay|ode-rnn
    std::optional<ImodeModel> im;
    std::optional<BaselineModel> bl;

    static ModelHandle build(const std::string& name, int n_x, int n_a, int hidden, uint64_t seed);
    static ModelHandle load(const nlohmann::json& ckpt);
    nlohmann::json checkpoint(double dt, int k_obs) const;

    ParamStore& params();
    const ParamStore& params() const;
    bool has_split_latents() const { return im.has_value(); }
    int n_x() const;
    int n_a() const;

    Val training_loss(Session& s, const Episode& ep, int k_obs, double horizon_t, double dt) const;
    std::vector<std::pair<double, std::vector<double>>> predict(Session& s, const Episode& ep, int k_obs,
                                                                double horizon_t, double dt,
                                                                StateTrace* trace = nullptr) const;
};

// Mean over episodes of the mean squared prediction error over target times.
double evaluate_mse(const ModelHandle& m, const std::vector<Episode>& eps, int k_obs, double dt);
// Prefix fed once, both ten-step futures scored.
double evaluate_cf_mse(const ModelHandle& m, const std::vector<CounterfactualPair>& pairs, double dt);

Episode concat_episode(const Episode& prefix, const Episode& branch);

Metrics cmd_train(const RunConfig& cfg);
double cmd_eval(const std::string& checkpoint_path, const std::string& data_path, nlohmann::json* report = nullptr);
double cmd_eval_cf(const std::string& checkpoint_path, const std::string& pairs_path, nlohmann::json* report = nullptr);
void cmd_export_traces(const std::string& checkpoint_path, const std::string& episodes_path, int index,
                       const std::string& out_csv);
void cmd_ingest_csv(const std::string& csv_path, const std::string& schema_path, const std::string& out_path);

// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace imode
