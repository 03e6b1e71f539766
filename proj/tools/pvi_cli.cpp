// Experiment runner: config-driven dispatch to the PVI, power-EP, and
// federated-simulation strategies, with CSV metrics and JSON checkpoints.

#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "pvi/checks.hpp"
#include "pvi/config.hpp"
#include "pvi/fedsim.hpp"
#include "pvi/pep.hpp"
#include "pvi/rng.hpp"
#include "pvi/serialize.hpp"

namespace {

using config::ExperimentConfig;
using config::StrategyKind;
using expfam::NaturalParams;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitCheckFailed = 3;

int infer_prior_dim(const ExperimentConfig& cfg, const data::Dataset& train) {
    if (cfg.prior_dim > 0) return cfg.prior_dim;
    if (cfg.model.kind == models::Kind::GaussianMean) return 1;
    return train.feature_dim();
}

struct RunOutputs {
    pvi::PosteriorState state;
    models::Hyperparams hyper;  // possibly learned
    std::vector<fedsim::EventRow> events;
    std::optional<pvi::RunTrace> trace;

    explicit RunOutputs(pvi::PosteriorState s) : state(std::move(s)) {}
};

fedsim::WorkerCfg worker_cfg(const ExperimentConfig& cfg) {
    fedsim::WorkerCfg wc;
    wc.local = cfg.optimizer;
    wc.duration_lo = cfg.duration_lo;
    wc.duration_hi = cfg.duration_hi;
    wc.max_updates_per_worker = cfg.max_updates_per_worker;
    return wc;
}

std::optional<fedsim::EvalHook> eval_hook(const ExperimentConfig& cfg,
                                          const std::optional<data::Dataset>& test) {
    if (!test) return std::nullopt;
    fedsim::EvalHook hook;
    hook.test = *test;
    hook.mc_samples = cfg.eval_mc_samples;
    hook.seed = cfg.seed_eval;
    return hook;
}

// Independent global-VI fits per shard followed by the committee product.
RunOutputs run_bcm(const ExperimentConfig& cfg, const NaturalParams& prior,
                   const std::vector<fedsim::DataShard>& shards,
                   const std::optional<data::Dataset>& test) {
    long total_rows = 0;
    for (const auto& s : shards) total_rows += s.data.n();
    std::vector<NaturalParams> subs;
    for (const auto& shard : shards) {
        NaturalParams shard_prior = prior;
        if (cfg.strategy == StrategyKind::BcmSplit) {
            const double w = total_rows > 0
                                 ? static_cast<double>(shard.data.n()) / total_rows
                                 : 0.0;
            shard_prior = expfam::scale(prior, w);
        }
        if (shard.data.empty() || !shard_prior.normalizable()) {
            // An empty shard contributes exactly its own (possibly weightless)
            // prior factor.
            subs.push_back(shard_prior);
            continue;
        }
        pvi::PosteriorState local = pvi::init(shard_prior, {0});
        std::map<int, data::Dataset> one{{0, shard.data}};
        auto result = pvi::run(local, pvi::round_robin_schedule({0}, cfg.sweeps),
                               one, cfg.model, cfg.hyper, cfg.optimizer,
                               rng::derive(cfg.seed_run, shard.shard_id));
        subs.push_back(result.state.posterior());
    }
    const expfam::GaussianDist combined = fedsim::bcm_combine(
        subs, prior,
        cfg.strategy == StrategyKind::BcmSame ? fedsim::BcmMode::Same
                                              : fedsim::BcmMode::Split);

    RunOutputs out(pvi::PosteriorState::restore(
        prior, {pvi::SiteFactor{0, expfam::divide(combined.natural(), prior),
                                0.0}}));
    out.hyper = cfg.hyper;
    if (test) {
        fedsim::EventRow row;
        row.event_type = "bcm";
        const fedsim::Evaluation ev =
            fedsim::evaluate(combined, cfg.model, *test, cfg.hyper,
                             cfg.eval_mc_samples, cfg.seed_eval);
        row.error = ev.error;
        row.nll = ev.mean_nll;
        out.events.push_back(row);
    }
    return out;
}

RunOutputs run_pep_check(const ExperimentConfig& cfg, const NaturalParams& prior,
                         const data::Dataset& train) {
    if (prior.dim() != 1) {
        throw config::ConfigError("pep_check/spep_check need 1-D parameters");
    }
    pvi::PosteriorState state = pvi::init(prior, {0});
    RunOutputs out(state);
    out.hyper = cfg.hyper;
    pvi::LocalOptimizerCfg fp;
    fp.strategy = pvi::Strategy::FixedPoint;
    fp.rho = cfg.pep_rho;
    fp.inner_steps = 1;
    fp.tolerance = 0.0;
    const NaturalParams fixed_point =
        pvi::refine_fixed_point(state, 0, train, cfg.model, cfg.hyper, fp,
                                cfg.seed_run)
            .state.posterior();
    for (double alpha : cfg.pep_alphas) {
        pep::PepOptions opts;
        const NaturalParams stepped =
            cfg.strategy == StrategyKind::PepCheck
                ? pep::pep_step(state, 0, train, cfg.model, cfg.hyper, alpha,
                                cfg.pep_rho, opts, cfg.seed_run)
                      .posterior()
                : pep::spep_step(state, 0, train, cfg.model, cfg.hyper, alpha,
                                 cfg.pep_rho, 1, opts, cfg.seed_run)
                      .posterior();
        const double gap =
            std::max((stepped.eta1 - fixed_point.eta1).cwiseAbs().maxCoeff(),
                     (stepped.eta2 - fixed_point.eta2).cwiseAbs().maxCoeff());
        fedsim::EventRow row;
        row.event_type = "alpha_gap";
        row.event_time = alpha;
        row.error = gap;
        out.events.push_back(row);
        std::cout << "alpha " << alpha << " gap " << gap << "\n";
    }
    return out;
}

int cmd_run(const std::string& config_path,
            const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = config::load_file(config_path, overrides);

    std::optional<data::Dataset> test;
    if (!cfg.test_csv.empty()) test = data::load_csv(cfg.test_csv, cfg.append_bias);
    data::Dataset train = data::load_csv(cfg.train_csv, cfg.append_bias);

    const int dim = infer_prior_dim(cfg, train);
    if (dim < 1) throw config::ConfigError("cannot infer prior dimension");
    const NaturalParams prior =
        NaturalParams::isotropic(dim, cfg.prior_mean, cfg.prior_variance);

    std::vector<fedsim::DataShard> shards;
    if (cfg.strategy == StrategyKind::GlobalVi) {
        shards.push_back(fedsim::DataShard{0, train});
    } else {
        shards = fedsim::partition(train, cfg.partition);
    }
    std::vector<int> ids;
    for (const auto& s : shards) ids.push_back(s.shard_id);

    RunOutputs out = [&]() -> RunOutputs {
        switch (cfg.strategy) {
            case StrategyKind::GlobalVi: {
                pvi::PosteriorState state = pvi::init(prior, ids);
                std::map<int, data::Dataset> all{{0, train}};
                models::Hyperparams eps = cfg.hyper;
                pvi::RunResult rr{state, {}};
                const int outer = cfg.hyper_learning ? cfg.hyper_outer_steps : 1;
                for (int step = 0; step < std::max(1, outer); ++step) {
                    rr = pvi::run(step == 0 ? state : rr.state,
                                  pvi::round_robin_schedule(ids, cfg.sweeps), all,
                                  cfg.model, eps, cfg.optimizer,
                                  rng::derive(cfg.seed_run, step));
                    if (!cfg.hyper_learning) break;
                    const models::Hyperparams grad = pvi::hyper_gradient(
                        rr.state, all, cfg.model, eps, cfg.seed_run);
                    for (const auto& [name, g] : grad.values) {
                        eps.values[name] += cfg.hyper_step_size * g;
                    }
                    if (eps.has("prior_log_variance")) {
                        rr.state = rr.state.with_prior(NaturalParams::isotropic(
                            dim, cfg.prior_mean,
                            std::exp(eps.get("prior_log_variance"))));
                    }
                }
                RunOutputs o(rr.state);
                o.hyper = eps;
                o.trace = rr.trace;
                if (test) {
                    fedsim::EventRow row;
                    row.event_type = "final";
                    const fedsim::Evaluation ev = fedsim::evaluate(
                        rr.state.posterior_dist(), cfg.model, *test, eps,
                        cfg.eval_mc_samples, cfg.seed_eval);
                    row.error = ev.error;
                    row.nll = ev.mean_nll;
                    o.events.push_back(row);
                }
                return o;
            }
            case StrategyKind::PviSequential: {
                fedsim::ServerState server{pvi::init(prior, ids),
                                           cfg.server_damping};
                auto sim = fedsim::run_sequential(server, shards, cfg.model,
                                                  cfg.hyper, worker_cfg(cfg),
                                                  cfg.seed_run,
                                                  eval_hook(cfg, test));
                RunOutputs o(sim.server.state);
                o.hyper = cfg.hyper;
                o.events = std::move(sim.events);
                return o;
            }
            case StrategyKind::PviSync: {
                fedsim::ServerState server{pvi::init(prior, ids),
                                           cfg.server_damping};
                auto sim = fedsim::run_synchronous(server, shards, cfg.rounds,
                                                   cfg.model, cfg.hyper,
                                                   worker_cfg(cfg), cfg.seed_run,
                                                   eval_hook(cfg, test));
                RunOutputs o(sim.server.state);
                o.hyper = cfg.hyper;
                o.events = std::move(sim.events);
                return o;
            }
            case StrategyKind::PviAsync: {
                fedsim::ServerState server{pvi::init(prior, ids),
                                           cfg.server_damping};
                auto sim = fedsim::run_asynchronous(
                    server, shards, cfg.budget, cfg.model, cfg.hyper,
                    worker_cfg(cfg), cfg.seed_scheduler, eval_hook(cfg, test));
                RunOutputs o(sim.server.state);
                o.hyper = cfg.hyper;
                o.events = std::move(sim.events);
                return o;
            }
            case StrategyKind::BcmSame:
            case StrategyKind::BcmSplit:
                return run_bcm(cfg, prior, shards, test);
            case StrategyKind::PepCheck:
            case StrategyKind::SpepCheck:
            default:
                return run_pep_check(cfg, prior, train);
        }
    }();

    if (!cfg.metrics_csv.empty()) fedsim::write_metrics_csv(out.events, cfg.metrics_csv);
    if (!cfg.trace_csv.empty() && out.trace) {
        serialize::write_trace_csv(*out.trace, cfg.trace_csv);
    }
    if (!cfg.checkpoint_path.empty()) {
        serialize::save_checkpoint(out.state, out.hyper, cfg.checkpoint_path);
    }
    for (const auto& row : out.events) {
        if (row.error && (row.event_type == "final" || row.event_type == "bcm")) {
            std::cout << "test error " << *row.error << " nll " << *row.nll << "\n";
        }
    }
    return kExitOk;
}

int cmd_synth(int classes, int per_class, double separation, std::uint64_t seed,
              const std::string& out_path) {
    data::save_csv(data::make_blobs(classes, per_class, separation, seed),
                   out_path);
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& test_csv,
             bool append_bias, const std::string& model_kind, int mc_samples,
             std::uint64_t seed) {
    auto [state, hyper] = serialize::load_checkpoint(checkpoint);
    data::Dataset test = data::load_csv(test_csv, append_bias);
    models::ModelKind model;
    if (model_kind == "gaussian_mean") {
        model = models::ModelKind::gaussian_mean();
    } else if (model_kind == "linear_regression") {
        model = models::ModelKind::linear_regression();
    } else if (model_kind == "logistic_regression") {
        model = models::ModelKind::logistic();
    } else {
        throw config::ConfigError("unknown model kind '" + model_kind + "'");
    }
    const fedsim::Evaluation ev = fedsim::evaluate(
        state.posterior_dist(), model, test, hyper, mc_samples, seed);
    std::cout << "error " << ev.error << " nll " << ev.mean_nll << "\n";
    return kExitOk;
}

int cmd_check(const std::string& suite) {
    std::vector<checks::CheckResult> results;
    try {
        results = checks::run_suite(suite, std::cout);
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }
    return checks::report(results, std::cout) ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"partitioned variational inference experiment runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--set", overrides,
                    "override a config leaf, e.g. --set optimizer.rho=0.5");

    int classes = 2, per_class = 100;
    double separation = 4.0;
    std::uint64_t synth_seed = 1;
    std::string synth_out = "blobs.csv";
    auto* synth = app.add_subcommand("synth", "generate Gaussian-blob data");
    synth->add_option("--classes", classes);
    synth->add_option("--per-class", per_class);
    synth->add_option("--separation", separation);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--out", synth_out)->required();

    std::string suite;
    auto* check = app.add_subcommand("check", "run an invariant suite");
    check->add_option("suite", suite, "properties | pep_limit | gradients")
        ->required();

    std::string eval_checkpoint, eval_test, eval_model = "logistic_regression";
    bool eval_bias = true;
    int eval_mc = 1000;
    std::uint64_t eval_seed = 3;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test CSV");
    eval->add_option("--checkpoint", eval_checkpoint)->required();
    eval->add_option("--test", eval_test)->required();
    eval->add_option("--model", eval_model);
    eval->add_flag("--no-bias{false}", eval_bias, "do not append a bias feature");
    eval->add_option("--mc-samples", eval_mc);
    eval->add_option("--seed", eval_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, overrides);
        if (synth->parsed()) {
            return cmd_synth(classes, per_class, separation, synth_seed, synth_out);
        }
        if (check->parsed()) return cmd_check(suite);
        if (eval->parsed()) {
            return cmd_eval(eval_checkpoint, eval_test, eval_bias, eval_model,
                            eval_mc, eval_seed);
        }
    } catch (const pvi::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
