#include "imode/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "imode/rng.hpp"

namespace imode {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig / Metrics

nlohmann::json RunConfig::to_json() const {
    return {{"model", model},     {"data_dir", data_dir}, {"out_dir", out_dir}, {"epochs", epochs},
            {"batch", batch},     {"lr", lr},             {"dt", dt},           {"k_obs", k_obs},
            {"horizon", horizon}, {"folds", folds},       {"hidden", hidden},   {"clip_norm", clip_norm},
            {"threads", threads}, {"seed", seed},         {"paper_scale", paper_scale}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.model = j.value("model", c.model);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.dt = j.value("dt", c.dt);
    c.k_obs = j.value("k_obs", c.k_obs);
    c.horizon = j.value("horizon", c.horizon);
    c.folds = j.value("folds", c.folds);
    c.hidden = j.value("hidden", c.hidden);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
    c.paper_scale = j.value("paper_scale", c.paper_scale);
    return c;
}

void RunConfig::apply_paper_scale() {
    dt = 0.01;
    epochs = 1000;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

double Metrics::val_mean() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.val_mse);
    return mean_std(v).first;
}
double Metrics::val_std() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.val_mse);
    return mean_std(v).second;
}
double Metrics::test_mean() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.test_mse);
    return mean_std(v).first;
}
double Metrics::test_std() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.test_mse);
    return mean_std(v).second;
}

nlohmann::json Metrics::to_json() const {
    nlohmann::json jf = nlohmann::json::array();
    for (const auto& f : folds)
        jf.push_back({{"val_mse", f.val_mse}, {"test_mse", f.test_mse}, {"best_epoch", f.best_epoch}});
    return {{"folds", jf},
            {"val_mse_mean", val_mean()},
            {"val_mse_std", val_std()},
            {"test_mse_mean", test_mean()},
            {"test_mse_std", test_std()}};
}

// ---------------------------------------------------------------------------
// ModelHandle

ModelHandle ModelHandle::build(const std::string& name, int n_x, int n_a, int hidden, uint64_t seed) {
    ModelHandle h;
    h.name = name;
    if (name == "imode-switch" || name == "imode-decay" || name == "imode-general") {
        ImodeDims dims;
        dims.n_x = n_x;
        dims.n_a = n_a;
        h.im = build_variant(imode_variant_from_string(name.substr(6)), dims, hidden, seed);
    } else {
        h.bl = build_baseline(baseline_kind_from_string(name), n_x, n_a, hidden, seed);
    }
    return h;
}

ParamStore& ModelHandle::params() { return im ? im->params : bl->params; }
const ParamStore& ModelHandle::params() const { return im ? im->params : bl->params; }
int ModelHandle::n_x() const { return im ? im->dims.n_x : bl->n_x; }
int ModelHandle::n_a() const { return im ? im->dims.n_a : bl->n_a; }

nlohmann::json ModelHandle::checkpoint(double dt, int k_obs) const {
    nlohmann::json j;
    j["format"] = "imode-lab/1";
    j["model"] = name;
    j["dt"] = dt;
    j["k_obs"] = k_obs;
    if (im) {
        j["kind"] = "imode";
        j["variant"] = to_string(im->variant);
        j["hidden"] = im->hidden;
        j["dims"] = {{"n_x", im->dims.n_x}, {"n_a", im->dims.n_a}, {"n_h", im->dims.n_h},
                     {"n_zx", im->dims.n_zx}, {"n_za", im->dims.n_za}};
        if (im->variant == ImodeVariant::Decay) j["alpha"] = im->alpha();
        j["params"] = im->params.to_json();
    } else {
        j["kind"] = "baseline";
        j["baseline"] = to_string(bl->kind);
        j["hidden"] = bl->hidden;
        j["dims"] = {{"n_x", bl->n_x}, {"n_a", bl->n_a}};
        j["params"] = bl->params.to_json();
    }
    return j;
}

ModelHandle ModelHandle::load(const nlohmann::json& j) {
    ModelHandle h;
    h.name = j.at("model").get<std::string>();
    const auto& dims = j.at("dims");
    const int hidden = j.at("hidden").get<int>();
    if (j.at("kind") == "imode") {
        ImodeDims d;
        d.n_x = dims.at("n_x").get<int>();
        d.n_a = dims.at("n_a").get<int>();
        d.n_h = dims.at("n_h").get<int>();
        d.n_zx = dims.at("n_zx").get<int>();
        d.n_za = dims.at("n_za").get<int>();
        h.im = build_variant(imode_variant_from_string(j.at("variant").get<std::string>()), d, hidden, 0);
        h.im->params.load_json(j.at("params"));
    } else {
        h.bl = build_baseline(baseline_kind_from_string(j.at("baseline").get<std::string>()),
                              dims.at("n_x").get<int>(), dims.at("n_a").get<int>(), hidden, 0);
        h.bl->params.load_json(j.at("params"));
    }
    return h;
}

Val ModelHandle::training_loss(Session& s, const Episode& ep, int k_obs, double horizon_t, double dt) const {
    if (im) {
        HybridState st = encode_prefix(*im, s, ep, k_obs, dt);
        return rollout(*im, s, st, ep, horizon_t, dt).loss;
    }
    if (bl->kind == BaselineKind::OdeRnn) return odernn_rollout_loss(*bl, s, ep, k_obs, horizon_t, dt);
    return gru_one_step_loss(*bl, s, ep);
}

std::vector<std::pair<double, std::vector<double>>> ModelHandle::predict(Session& s, const Episode& ep,
                                                                         int k_obs, double horizon_t,
                                                                         double dt, StateTrace* trace) const {
    std::vector<std::pair<double, Val>> pred_vals;
    if (im) {
        HybridState st = encode_prefix(*im, s, ep, k_obs, dt, trace);
        auto res = rollout(*im, s, st, ep, horizon_t, dt, trace);
        pred_vals = std::move(res.preds);
        if (trace) {
            // The prefix end point is recorded by both executor calls.
            for (size_t i = 1; i < trace->rows.size(); ++i)
                if (std::abs(trace->rows[i].t - trace->rows[i - 1].t) < 1e-9) {
                    trace->rows.erase(trace->rows.begin() + static_cast<long>(i));
                    break;
                }
        }
    } else {
        pred_vals = baseline_rollout(*bl, s, ep, k_obs, horizon_t, dt, trace).preds;
        if (trace)
            for (const auto& [t, v] : pred_vals) {
                auto vals = s.tape.value(v);
                trace->xhat.emplace_back(t, std::vector<double>(vals.begin(), vals.end()));
            }
    }
    if (trace)
        for (int k = 0; k < ep.length(); ++k)
            if (ep.times[static_cast<size_t>(k)] <= horizon_t + 1e-9)
                trace->xtruth.emplace_back(ep.times[static_cast<size_t>(k)], ep.x[static_cast<size_t>(k)]);

    std::vector<std::pair<double, std::vector<double>>> out;
    out.reserve(pred_vals.size());
    for (const auto& [t, v] : pred_vals) {
        auto vals = s.tape.value(v);
        out.emplace_back(t, std::vector<double>(vals.begin(), vals.end()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double episode_mse(const ModelHandle& m, Tape& tape, const Episode& ep, int k_obs, double horizon_t,
                   double dt, StateTrace* trace = nullptr) {
    tape.reset();
    Session s(tape, m.params());
    auto preds = m.predict(s, ep, k_obs, horizon_t, dt, trace);
    if (preds.empty()) throw std::runtime_error("episode_mse: no prediction targets");
    double acc = 0.0;
    for (const auto& [t, xhat] : preds) {
        const std::vector<double>* truth = nullptr;
        for (int k = 0; k < ep.length(); ++k)
            if (std::abs(ep.times[static_cast<size_t>(k)] - t) <= 1e-9) truth = &ep.x[static_cast<size_t>(k)];
        if (!truth) throw std::runtime_error("episode_mse: prediction at a non-observation time");
        double d2 = 0.0;
        for (size_t i = 0; i < truth->size(); ++i) {
            const double d = xhat[i] - (*truth)[i];
            d2 += d * d;
        }
        acc += d2;
    }
    return acc / static_cast<double>(preds.size());
}

}  // namespace

double evaluate_mse(const ModelHandle& m, const std::vector<Episode>& eps, int k_obs, double dt) {
    if (eps.empty()) throw std::invalid_argument("evaluate_mse: empty dataset");
    Tape tape;
    double acc = 0.0;
    for (const auto& ep : eps) acc += episode_mse(m, tape, ep, k_obs, ep.times.back(), dt);
    return acc / static_cast<double>(eps.size());
}

Episode concat_episode(const Episode& prefix, const Episode& branch) {
    Episode out = prefix;
    out.times.insert(out.times.end(), branch.times.begin(), branch.times.end());
    out.x.insert(out.x.end(), branch.x.begin(), branch.x.end());
    out.interventions.insert(out.interventions.end(), branch.interventions.begin(), branch.interventions.end());
    out.validate();
    return out;
}

double evaluate_cf_mse(const ModelHandle& m, const std::vector<CounterfactualPair>& pairs, double dt) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_cf_mse: no pairs");
    Tape tape;
    double acc = 0.0;
    for (const auto& pair : pairs) {
        const int k_obs = pair.prefix.length();
        const Episode ep_a = concat_episode(pair.prefix, pair.branch_a);
        const Episode ep_b = concat_episode(pair.prefix, pair.branch_b);
        const double mse_a = episode_mse(m, tape, ep_a, k_obs, ep_a.times.back(), dt);
        const double mse_b = episode_mse(m, tape, ep_b, k_obs, ep_b.times.back(), dt);
        acc += 0.5 * (mse_a + mse_b);
    }
    return acc / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Training

namespace {

void infer_widths(const std::vector<Episode>& eps, int& n_x, int& n_a) {
    if (eps.empty()) throw std::runtime_error("empty training set");
    n_x = eps.front().n_x();
    n_a = 0;
    for (const auto& ep : eps)
        for (const auto& iv : ep.interventions) {
            n_a = static_cast<int>(iv.a.size());
            return;
        }
    n_a = 1;  // no interventions anywhere; keep a zero-filled channel
}

struct EpochStats {
    double train_loss = 0.0;
};

void run_workers(int n_jobs, int threads, const std::function<void(int worker, int job)>& fn) {
    if (threads <= 1) {
        for (int i = 0; i < n_jobs; ++i) fn(0, i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (int i = next.fetch_add(1); i < n_jobs; i = next.fetch_add(1)) fn(w, i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace

Metrics cmd_train(const RunConfig& cfg) {
    if (cfg.batch <= 0 || cfg.folds <= 0) throw std::invalid_argument("batch and folds must be positive");
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");

    const auto train = read_episodes(cfg.data_dir + "/train.jsonl");
    const auto val = read_episodes(cfg.data_dir + "/val.jsonl");
    const auto test = read_episodes(cfg.data_dir + "/test.jsonl");

    int n_x = 0, n_a = 0;
    infer_widths(train, n_x, n_a);
    const int ep_len = train.front().length();
    if (cfg.k_obs < 1 || cfg.k_obs >= ep_len) throw std::invalid_argument("k_obs must be in [1, episode length)");
    const int horizon = cfg.horizon > 0 ? cfg.horizon : ep_len - cfg.k_obs;
    if (cfg.k_obs + horizon != ep_len)
        throw std::invalid_argument("k_obs + horizon must equal the episode length");

    fs::create_directories(cfg.out_dir);
    {
        std::ofstream os(cfg.out_dir + "/config.json");
        os << cfg.to_json().dump(2) << '\n';
    }

    const int threads = std::max(1, cfg.threads);
    Metrics metrics;
    nlohmann::json best_ckpt;
    double best_ckpt_val = std::numeric_limits<double>::infinity();

    for (int fold = 0; fold < cfg.folds; ++fold) {
        const uint64_t fold_seed = derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(fold));
        ModelHandle model = ModelHandle::build(cfg.model, n_x, n_a, cfg.hidden, fold_seed);
        Rmsprop opt;
        opt.lr = cfg.lr;
        Rng shuffle_rng(derive_seed(fold_seed, 7));

        std::vector<int> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

        std::vector<std::unique_ptr<Tape>> tapes;
        for (int w = 0; w < threads; ++w) tapes.push_back(std::make_unique<Tape>());

        double best_val = std::numeric_limits<double>::infinity();
        int best_epoch = -1;
        std::vector<Tensor> best_snap = model.params().snapshot();

        std::ofstream loss_csv(cfg.out_dir + "/loss_fold" + std::to_string(fold) + ".csv");
        loss_csv << "epoch,train_loss,val_mse\n" << std::setprecision(17);

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            // Fisher-Yates with the fold's own stream
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(i))]);

            double loss_sum = 0.0;
            for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
                const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
                const int nb = static_cast<int>(stop - start);
                std::vector<Grads> slot(static_cast<size_t>(nb));
                std::vector<double> losses(static_cast<size_t>(nb));
                std::mutex err_mutex;
                std::string error;

                run_workers(nb, threads, [&](int w, int j) {
                    try {
                        const Episode& ep = train[static_cast<size_t>(order[start + static_cast<size_t>(j)])];
                        Tape& tape = *tapes[static_cast<size_t>(w)];
                        tape.reset();
                        Session s(tape, model.params());
                        Val loss = model.training_loss(s, ep, cfg.k_obs,
                                                       ep.times[static_cast<size_t>(cfg.k_obs - 1 + horizon)], cfg.dt);
                        const double lv = tape.scalar(loss);
                        if (!std::isfinite(lv))
                            throw std::runtime_error("non-finite loss (fold " + std::to_string(fold) + ", epoch " +
                                                     std::to_string(epoch) + ")");
                        tape.backward(loss);
                        slot[static_cast<size_t>(j)] = Grads::zeros_like(model.params());
                        s.add_grads_to(slot[static_cast<size_t>(j)]);
                        losses[static_cast<size_t>(j)] = lv;
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lk(err_mutex);
                        if (error.empty()) error = e.what();
                    }
                });
                if (!error.empty()) throw std::runtime_error("training aborted: " + error);

                Grads acc = Grads::zeros_like(model.params());
                for (int j = 0; j < nb; ++j) {
                    acc.add(slot[static_cast<size_t>(j)]);
                    loss_sum += losses[static_cast<size_t>(j)];
                }
                acc.scale(1.0 / static_cast<double>(nb));
                clip_global_norm(acc, cfg.clip_norm);
                opt.step(model.params(), acc);
            }

            const double train_loss = loss_sum / static_cast<double>(train.size());
            const double val_mse = evaluate_mse(model, val, cfg.k_obs, cfg.dt);
            loss_csv << epoch << ',' << train_loss << ',' << val_mse << '\n';
            if (!cfg.quiet && (epoch % 25 == 0 || epoch + 1 == cfg.epochs))
                std::cerr << "[" << cfg.model << " fold " << fold << "] epoch " << epoch << " train " << train_loss
                          << " val " << val_mse << "\n";
            if (val_mse < best_val) {
                best_val = val_mse;
                best_epoch = epoch;
                best_snap = model.params().snapshot();
            }
        }

        model.params().restore(best_snap);
        if (cfg.epochs == 0) best_val = evaluate_mse(model, val, cfg.k_obs, cfg.dt);
        const double test_mse = evaluate_mse(model, test, cfg.k_obs, cfg.dt);
        metrics.folds.push_back({best_val, test_mse, best_epoch});

        const nlohmann::json ckpt = model.checkpoint(cfg.dt, cfg.k_obs);
        {
            std::ofstream os(cfg.out_dir + "/checkpoint_fold" + std::to_string(fold) + ".json");
            os << ckpt.dump() << '\n';
        }
        if (best_val < best_ckpt_val) {
            best_ckpt_val = best_val;
            best_ckpt = ckpt;
        }
    }

    {
        std::ofstream os(cfg.out_dir + "/checkpoint.json");
        os << best_ckpt.dump() << '\n';
    }
    {
        std::ofstream os(cfg.out_dir + "/metrics.json");
        os << metrics.to_json().dump(2) << '\n';
    }
    return metrics;
}

// ---------------------------------------------------------------------------
// Eval / traces / ingest commands

namespace {

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    is >> j;
    return j;
}

}  // namespace

double cmd_eval(const std::string& checkpoint_path, const std::string& data_path, nlohmann::json* report) {
    const nlohmann::json ckpt = load_json_file(checkpoint_path);
    ModelHandle model = ModelHandle::load(ckpt);
    const auto eps = read_episodes(data_path);
    const double mse = evaluate_mse(model, eps, ckpt.at("k_obs").get<int>(), ckpt.at("dt").get<double>());
    if (report) *report = {{"episodes", eps.size()}, {"mse", mse}, {"model", model.name}};
    return mse;
}

double cmd_eval_cf(const std::string& checkpoint_path, const std::string& pairs_path, nlohmann::json* report) {
    const nlohmann::json ckpt = load_json_file(checkpoint_path);
    ModelHandle model = ModelHandle::load(ckpt);
    const auto pairs = read_pairs(pairs_path);
    const double mse = evaluate_cf_mse(model, pairs, ckpt.at("dt").get<double>());
    if (report) *report = {{"pairs", pairs.size()}, {"mse", mse}, {"model", model.name}};
    return mse;
}

void cmd_export_traces(const std::string& checkpoint_path, const std::string& episodes_path, int index,
                       const std::string& out_csv) {
    const nlohmann::json ckpt = load_json_file(checkpoint_path);
    ModelHandle model = ModelHandle::load(ckpt);
    const auto eps = read_episodes(episodes_path);
    if (index < 0 || index >= static_cast<int>(eps.size()))
        throw std::invalid_argument("episode index out of range");
    const Episode& ep = eps[static_cast<size_t>(index)];

    Tape tape;
    Session s(tape, model.params());
    StateTrace trace;
    model.predict(s, ep, ckpt.at("k_obs").get<int>(), ep.times.back(), ckpt.at("dt").get<double>(), &trace);

    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("cannot open for writing: " + out_csv);
    trace.write_csv(os, model.n_x(), model.has_split_latents());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

}  // namespace

void cmd_ingest_csv(const std::string& csv_path, const std::string& schema_path, const std::string& out_path) {
    const nlohmann::json schema = load_json_file(schema_path);
    const std::string time_col = schema.at("time").get<std::string>();
    const auto obs_cols = schema.at("observations").get<std::vector<std::string>>();
    const auto int_cols = schema.value("interventions", std::vector<std::string>{});
    const int bucket_len = schema.value("bucket_len", 0);
    if (obs_cols.empty()) throw std::invalid_argument("schema: at least one observation column required");

    std::ifstream is(csv_path);
    if (!is) throw std::runtime_error("cannot open: " + csv_path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty csv: " + csv_path);
    const auto header = split_csv_line(line);
    auto col_index = [&](const std::string& name) {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw std::invalid_argument("csv is missing column: " + name);
    };
    const int t_idx = col_index(time_col);
    std::vector<int> o_idx, i_idx;
    for (const auto& c : obs_cols) o_idx.push_back(col_index(c));
    for (const auto& c : int_cols) i_idx.push_back(col_index(c));

    struct Row {
        double t;
        std::vector<double> x;
        std::vector<double> a;
        bool has_a;
    };
    std::vector<Row> rows;
    size_t lineno = 1;
    double prev_t = -std::numeric_limits<double>::infinity();
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error(csv_path + ":" + std::to_string(lineno) + ": wrong number of fields");
        Row r;
        if (!parse_double(cells[static_cast<size_t>(t_idx)], r.t))
            throw std::runtime_error(csv_path + ":" + std::to_string(lineno) + ": unparseable time value");
        if (!(r.t > prev_t))
            throw std::runtime_error(csv_path + ":" + std::to_string(lineno) + ": non-monotone time");
        prev_t = r.t;
        for (int ci : o_idx) {
            double v;
            if (!parse_double(cells[static_cast<size_t>(ci)], v))
                throw std::runtime_error(csv_path + ":" + std::to_string(lineno) + ": unparseable observation value");
            r.x.push_back(v);
        }
        r.has_a = false;
        for (int ci : i_idx) {
            double v = 0.0;
            if (!cells[static_cast<size_t>(ci)].empty()) {
                if (!parse_double(cells[static_cast<size_t>(ci)], v))
                    throw std::runtime_error(csv_path + ":" + std::to_string(lineno) +
                                             ": unparseable intervention value");
                if (v != 0.0) r.has_a = true;
            }
            r.a.push_back(v);
        }
        rows.push_back(std::move(r));
    }

    // Consecutive fixed-length buckets become episodes with renumbered times;
    // a trailing partial bucket is dropped.
    const int blen = bucket_len > 0 ? bucket_len : static_cast<int>(rows.size());
    std::vector<Episode> episodes;
    for (size_t start = 0; start + static_cast<size_t>(blen) <= rows.size(); start += static_cast<size_t>(blen)) {
        Episode ep;
        for (int k = 0; k < blen; ++k) {
            const Row& r = rows[start + static_cast<size_t>(k)];
            ep.times.push_back(static_cast<double>(k));
            ep.x.push_back(r.x);
            if (r.has_a) ep.interventions.push_back({static_cast<double>(k), r.a});
        }
        ep.validate();
        episodes.push_back(std::move(ep));
    }
    write_episodes(out_path, episodes);
}

// ---------------------------------------------------------------------------
// CLI

namespace {

// The train config file must load before CLI11 runs so explicit flags can
// override it; everything else sees --config through CLI11 as usual.
std::string find_train_config_arg(int argc, const char* const* argv) {
    if (argc < 2 || std::string(argv[1]) != "train") return {};
    for (int i = 2; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") return argv[i + 1];
    return {};
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Hybrid neural-ODE lab: intervention-aware latent dynamics models, simulators, and an "
                 "experiment harness"};
    app.require_subcommand(1);

    // generate ---------------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset plus counterfactual pairs");
    std::string gen_kind = "moving-ball", gen_out = "data", gen_config;
    int gen_train = 1000, gen_val = 100, gen_test = 100, gen_pairs = 100;
    uint64_t gen_seed = 1;
    gen->add_option("--kind", gen_kind, "moving-ball or exp-decay")
        ->check(CLI::IsMember({"moving-ball", "exp-decay"}));
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--train", gen_train, "training episodes");
    gen->add_option("--val", gen_val, "validation episodes");
    gen->add_option("--test", gen_test, "test episodes");
    gen->add_option("--pairs", gen_pairs, "counterfactual pairs");
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--config", gen_config, "generator config JSON");

    // train -------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train a model with the prefix+rollout protocol");
    RunConfig cfg;
    const std::string preload = find_train_config_arg(argc, argv);
    if (!preload.empty()) {
        try {
            cfg = RunConfig::from_json(load_json_file(preload));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    std::string train_config;
    tr->add_option("--config", train_config, "run config JSON (flags override it)");
    tr->add_option("--model", cfg.model, "model kind")
        ->check(CLI::IsMember({"imode-switch", "imode-decay", "imode-general", "gru-dt", "gru-decay", "ode-rnn"}));
    tr->add_option("--data", cfg.data_dir, "dataset directory (train/val/test.jsonl)");
    tr->add_option("--out", cfg.out_dir, "run directory");
    auto* opt_epochs = tr->add_option("--epochs", cfg.epochs, "training epochs");
    tr->add_option("--batch", cfg.batch, "minibatch size");
    tr->add_option("--lr", cfg.lr, "learning rate");
    auto* opt_dt = tr->add_option("--dt", cfg.dt, "solver step");
    tr->add_option("--k-obs", cfg.k_obs, "teacher-forced prefix length");
    tr->add_option("--horizon", cfg.horizon, "rollout targets (0 = rest of episode)");
    tr->add_option("--folds", cfg.folds, "independent repetitions");
    tr->add_option("--hidden", cfg.hidden, "hidden width");
    tr->add_option("--clip", cfg.clip_norm, "global gradient-norm clip");
    tr->add_option("--threads", cfg.threads, "worker threads per batch");
    tr->add_option("--seed", cfg.seed, "master seed");
    tr->add_flag("--paper-scale", cfg.paper_scale, "dt=0.01 and 1000 epochs unless overridden");
    tr->add_flag("--quiet", cfg.quiet, "suppress progress lines");

    // eval ---------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
    std::string ev_ckpt, ev_data;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data, "episodes JSONL file")->required();

    auto* evcf = app.add_subcommand("eval-cf", "Evaluate a checkpoint on counterfactual pairs");
    std::string cf_ckpt, cf_pairs;
    evcf->add_option("--checkpoint", cf_ckpt)->required();
    evcf->add_option("--pairs", cf_pairs, "pairs JSONL file")->required();

    // traces --------------------------------------------------------------------
    auto* trc = app.add_subcommand("traces", "Export latent-norm traces for one episode as CSV");
    std::string trc_ckpt, trc_data, trc_out = "trace.csv";
    int trc_index = 0;
    trc->add_option("--checkpoint", trc_ckpt)->required();
    trc->add_option("--data", trc_data, "episodes JSONL file")->required();
    trc->add_option("--index", trc_index, "episode index");
    trc->add_option("--out", trc_out, "output CSV path");

    // ingest ---------------------------------------------------------------------
    auto* ing = app.add_subcommand("ingest", "Convert a CSV time series into the episode format");
    std::string ing_csv, ing_schema, ing_out = "ingested.jsonl";
    ing->add_option("--csv", ing_csv)->required();
    ing->add_option("--schema", ing_schema, "schema JSON")->required();
    ing->add_option("--out", ing_out, "output JSONL path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            GeneratorConfig gc;
            if (!gen_config.empty()) gc = GeneratorConfig::from_json(load_json_file(gen_config));
            gc.kind = dataset_kind_from_string(gen_kind);
            fs::create_directories(gen_out);
            const DatasetSplit split = generate_dataset(gc, gen_train, gen_val, gen_test, gen_seed);
            write_episodes(gen_out + "/train.jsonl", split.train);
            write_episodes(gen_out + "/val.jsonl", split.val);
            write_episodes(gen_out + "/test.jsonl", split.test);
            write_pairs(gen_out + "/pairs.jsonl", generate_pairs(gc, gen_pairs, gen_seed));
            std::ofstream os(gen_out + "/generator.json");
            os << gc.to_json().dump(2) << '\n';
            std::cout << nlohmann::json{{"out", gen_out},
                                        {"train", split.train.size()},
                                        {"val", split.val.size()},
                                        {"test", split.test.size()},
                                        {"pairs", gen_pairs}}
                             .dump()
                      << std::endl;
        } else if (tr->parsed()) {
            if (cfg.paper_scale) {
                if (opt_dt->count() == 0) cfg.dt = 0.01;
                if (opt_epochs->count() == 0) cfg.epochs = 1000;
            }
            if (cfg.data_dir.empty()) throw CLI::ValidationError("--data", "dataset directory required");
            const Metrics m = cmd_train(cfg);
            std::cout << m.to_json().dump(2) << std::endl;
        } else if (ev->parsed()) {
            nlohmann::json report;
            cmd_eval(ev_ckpt, ev_data, &report);
            std::cout << report.dump(2) << std::endl;
        } else if (evcf->parsed()) {
            nlohmann::json report;
            cmd_eval_cf(cf_ckpt, cf_pairs, &report);
            std::cout << report.dump(2) << std::endl;
        } else if (trc->parsed()) {
            cmd_export_traces(trc_ckpt, trc_data, trc_index, trc_out);
            std::cout << nlohmann::json{{"out", trc_out}}.dump() << std::endl;
        } else if (ing->parsed()) {
            cmd_ingest_csv(ing_csv, ing_schema, ing_out);
            std::cout << nlohmann::json{{"out", ing_out}}.dump() << std::endl;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace imode
