#include "pvi/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>

#include "pvi/rng.hpp"

namespace fedsim {

using expfam::NaturalParams;

void PartitionSpec::validate() const {
    if (workers < 1) throw std::invalid_argument("partition: K must be >= 1");
    if (mode == PartitionMode::DirichletSkew && !(concentration > 0.0)) {
        throw std::invalid_argument("partition: concentration must be > 0");
    }
}

std::vector<DataShard> partition(const data::Dataset& ds,
                                 const PartitionSpec& spec) {
    spec.validate();
    const int k = spec.workers;
    std::vector<std::vector<int>> assigned(static_cast<size_t>(k));

    if (spec.mode == PartitionMode::IID) {
        std::vector<int> order(static_cast<size_t>(ds.n()));
        for (int i = 0; i < ds.n(); ++i) order[static_cast<size_t>(i)] = i;
        rng::Stream s(rng::derive(spec.seed, 0x11d));
        for (int i = ds.n() - 1; i > 0; --i) {
            const int j = static_cast<int>(s.below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        for (int pos = 0; pos < ds.n(); ++pos) {
            assigned[static_cast<size_t>(pos % k)].push_back(order[static_cast<size_t>(pos)]);
        }
    } else {
        std::set<double> labels;
        for (const data::Row& r : ds.rows()) labels.insert(r.target);
        std::vector<double> label_list(labels.begin(), labels.end());
        if (spec.mode == PartitionMode::ByLabel) {
            if (static_cast<int>(label_list.size()) != k) {
                throw std::invalid_argument(
                    "partition: ByLabel needs K == number of classes present (" +
                    std::to_string(label_list.size()) + ")");
            }
            std::map<double, int> shard_of;
            for (int c = 0; c < k; ++c) shard_of[label_list[static_cast<size_t>(c)]] = c;
            for (int i = 0; i < ds.n(); ++i) {
                assigned[static_cast<size_t>(shard_of[ds.row(i).target])].push_back(i);
            }
        } else {
            rng::Stream s(rng::derive(spec.seed, 0xd1c));
            for (const double label : label_list) {
                // Dirichlet proportions over workers for this label.
                Eigen::VectorXd p(k);
                for (int j = 0; j < k; ++j) p[j] = s.gamma(spec.concentration);
                p /= p.sum();
                for (int i = 0; i < ds.n(); ++i) {
                    if (ds.row(i).target != label) continue;
                    double u = s.uniform();
                    int j = 0;
                    while (j + 1 < k && u > p[j]) u -= p[j], ++j;
                    assigned[static_cast<size_t>(j)].push_back(i);
                }
            }
        }
    }

    std::vector<DataShard> shards;
    shards.reserve(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
        shards.push_back(DataShard{j, ds.subset(assigned[static_cast<size_t>(j)])});
    }
    return shards;
}

namespace {

std::map<int, data::Dataset> shard_map(const std::vector<DataShard>& shards) {
    std::map<int, data::Dataset> m;
    for (const DataShard& s : shards) m.emplace(s.shard_id, s.data);
    return m;
}

pvi::RefineResult refine_once(const pvi::PosteriorState& state, int shard_id,
                              const data::Dataset& ds,
                              const models::ModelKind& model,
                              const models::Hyperparams& eps,
                              const pvi::LocalOptimizerCfg& cfg,
                              std::uint64_t seed) {
    switch (cfg.strategy) {
        case pvi::Strategy::Analytic:
            return pvi::refine_analytic(state, shard_id, ds, model, eps, cfg, seed);
        case pvi::Strategy::FixedPoint:
            return pvi::refine_fixed_point(state, shard_id, ds, model, eps, cfg,
                                           seed);
        case pvi::Strategy::GradientAscent:
        default:
            return pvi::refine_gradient(state, shard_id, ds, model, eps, cfg, seed);
    }
}

std::uint64_t visit_seed(const pvi::LocalOptimizerCfg& cfg, std::uint64_t seed,
                         int visit_index) {
    return cfg.fresh_seed_per_visit
               ? rng::derive(seed, static_cast<std::uint64_t>(visit_index))
               : seed;
}

void maybe_evaluate(EventRow& row, const ServerState& server,
                    const std::vector<DataShard>& shards,
                    const models::ModelKind& model,
                    const models::Hyperparams& eps,
                    const std::optional<EvalHook>& eval) {
    if (!eval) return;
    const Evaluation ev = evaluate(server.state.posterior_dist(), model,
                                   eval->test, eps, eval->mc_samples, eval->seed);
    row.error = ev.error;
    row.nll = ev.mean_nll;
    if (eval->record_global_fe) {
        row.global_fe = pvi::global_free_energy(server.state, shard_map(shards),
                                                model, eps, eval->seed);
    }
}

// Applies one site delta in natural-parameter space with the server's
// damping; returns false (and counts) when the damped posterior would be
// improper. Conservation holds after every accepted event by construction.
bool apply_delta(ServerState& server, int shard_id, const NaturalParams& delta) {
    const NaturalParams& current = server.state.site(shard_id).natural;
    const NaturalParams damped =
        expfam::multiply(current, expfam::scale(delta, server.damping));
    if (auto next = server.state.try_with_site(shard_id, damped)) {
        server.state = std::move(*next);
        return true;
    }
    ++server.rejected_deltas;
    return false;
}

}  // namespace

SimResult run_sequential(const ServerState& server_in,
                         const std::vector<DataShard>& shards,
                         const models::ModelKind& model,
                         const models::Hyperparams& eps, const WorkerCfg& cfg,
                         std::uint64_t seed,
                         const std::optional<EvalHook>& eval) {
    SimResult result{server_in, {}};
    ServerState& server = result.server;
    int visit = 0;
    for (const DataShard& shard : shards) {
        ++visit;
        ++server.messages_down;
        // One pass: the worker's refined posterior is adopted wholesale, as
        // in continual learning; the server queue never holds more than the
        // single in-flight update.
        pvi::RefineResult step =
            refine_once(server.state, shard.shard_id, shard.data, model, eps,
                        cfg.local, visit_seed(cfg.local, seed, visit));
        server.state = std::move(step.state);
        ++server.messages_up;
        server.simulated_time = visit;
        EventRow row;
        row.event_time = server.simulated_time;
        row.event_type = "apply";
        row.worker = shard.shard_id;
        row.round = 0;
        row.messages_up = server.messages_up;
        row.messages_down = server.messages_down;
        maybe_evaluate(row, server, shards, model, eps, eval);
        result.events.push_back(std::move(row));
    }
    return result;
}

SimResult run_synchronous(const ServerState& server_in,
                          const std::vector<DataShard>& shards, int rounds,
                          const models::ModelKind& model,
                          const models::Hyperparams& eps, const WorkerCfg& cfg,
                          std::uint64_t seed,
                          const std::optional<EvalHook>& eval) {
    if (rounds < 1) throw std::invalid_argument("run_synchronous: rounds >= 1");
    SimResult result{server_in, {}};
    ServerState& server = result.server;
    int visit = 0;
    for (int round = 1; round <= rounds; ++round) {
        const pvi::PosteriorState snapshot = server.state;
        // All workers refine from the same broadcast snapshot.
        std::vector<std::pair<int, NaturalParams>> queue;
        for (const DataShard& shard : shards) {
            ++visit;
            ++server.messages_down;
            pvi::RefineResult step =
                refine_once(snapshot, shard.shard_id, shard.data, model, eps,
                            cfg.local, visit_seed(cfg.local, seed, visit));
            const NaturalParams delta =
                expfam::divide(step.state.site(shard.shard_id).natural,
                               snapshot.site(shard.shard_id).natural);
            queue.emplace_back(shard.shard_id, delta);
            ++server.messages_up;
        }
        int accepted = 0;
        for (const auto& [shard_id, delta] : queue) {
            if (apply_delta(server, shard_id, delta)) ++accepted;
        }
        server.simulated_time = round;
        EventRow row;
        row.event_time = server.simulated_time;
        row.event_type = "round";
        row.round = round;
        row.messages_up = server.messages_up;
        row.messages_down = server.messages_down;
        maybe_evaluate(row, server, shards, model, eps, eval);
        result.events.push_back(std::move(row));
        if (accepted == 0) break;  // every delta rejected: abort
    }
    return result;
}

SimResult run_asynchronous(const ServerState& server_in,
                           const std::vector<DataShard>& shards,
                           double wallclock_budget,
                           const models::ModelKind& model,
                           const models::Hyperparams& eps, const WorkerCfg& cfg,
                           std::uint64_t scheduler_seed,
                           const std::optional<EvalHook>& eval) {
    SimResult result{server_in, {}};
    ServerState& server = result.server;

    // Two event kinds: a worker starting a job (fetches its context then) and
    // a worker finishing one (refines against the stale snapshot, sends the
    // delta). Finishes sort before starts at equal times so a starting worker
    // sees every delta already available.
    struct Event {
        double time;
        int kind;  // 0 = finish, 1 = start
        int worker;
        int job_index;
        std::optional<pvi::PosteriorState> context;  // finish events only
    };
    auto later = [](const Event& a, const Event& b) {
        if (a.time != b.time) return a.time > b.time;
        if (a.kind != b.kind) return a.kind > b.kind;
        return a.worker > b.worker;
    };
    std::priority_queue<Event, std::vector<Event>, decltype(later)> queue(later);

    auto draw_duration = [&](int worker, int job_index) {
        rng::Stream s(rng::derive(scheduler_seed, 0x5eed,
                                  static_cast<std::uint64_t>(worker),
                                  static_cast<std::uint64_t>(job_index)));
        return cfg.duration_lo + (cfg.duration_hi - cfg.duration_lo) * s.uniform();
    };

    for (int w = 0; w < static_cast<int>(shards.size()); ++w) {
        const double offset = w < static_cast<int>(cfg.start_offsets.size())
                                  ? cfg.start_offsets[static_cast<size_t>(w)]
                                  : 0.0;
        if (offset <= wallclock_budget) {
            queue.push(Event{offset, 1, w, 0, std::nullopt});
        }
    }

    int applied_events = 0;
    while (!queue.empty()) {
        Event ev = queue.top();
        queue.pop();
        if (ev.kind == 1) {
            const double finish = ev.time + draw_duration(ev.worker, ev.job_index);
            if (finish > wallclock_budget) continue;  // would outlive the budget
            ++server.messages_down;  // context fetch happens now
            queue.push(Event{finish, 0, ev.worker, ev.job_index, server.state});
            continue;
        }

        const DataShard& shard = shards[static_cast<size_t>(ev.worker)];
        const pvi::PosteriorState& context = *ev.context;
        ++applied_events;
        pvi::RefineResult step = refine_once(
            context, shard.shard_id, shard.data, model, eps, cfg.local,
            visit_seed(cfg.local, scheduler_seed, applied_events));
        // Delta against the site as it was at fetch time; the server may have
        // moved on since (stale update).
        const NaturalParams delta =
            expfam::divide(step.state.site(shard.shard_id).natural,
                           context.site(shard.shard_id).natural);
        ++server.messages_up;
        const bool ok = apply_delta(server, shard.shard_id, delta);
        server.simulated_time = ev.time;

        EventRow row;
        row.event_time = ev.time;
        row.event_type = ok ? "apply" : "reject";
        row.worker = shard.shard_id;
        row.round = ev.job_index;
        row.messages_up = server.messages_up;
        row.messages_down = server.messages_down;
        maybe_evaluate(row, server, shards, model, eps, eval);
        result.events.push_back(std::move(row));

        const int next_index = ev.job_index + 1;
        if (cfg.max_updates_per_worker == 0 ||
            next_index < cfg.max_updates_per_worker) {
            queue.push(Event{ev.time, 1, ev.worker, next_index, std::nullopt});
        }
    }
    return result;
}

expfam::GaussianDist bcm_combine(
    const std::vector<expfam::NaturalParams>& sub_posteriors,
    const expfam::NaturalParams& prior, BcmMode mode) {
    if (sub_posteriors.empty()) {
        throw std::invalid_argument("bcm_combine: no sub-posteriors");
    }
    NaturalParams acc = NaturalParams::zero(prior.dim());
    for (const NaturalParams& q : sub_posteriors) acc = expfam::multiply(acc, q);
    if (mode == BcmMode::Same) {
        const double k = static_cast<double>(sub_posteriors.size());
        acc = expfam::divide(acc, expfam::scale(prior, k - 1.0));
    }
    if (!acc.normalizable()) {
        throw expfam::ImproperError(std::string("bcm_combine: improper ") +
                                    (mode == BcmMode::Same ? "Same" : "Split") +
                                    " combination");
    }
    return expfam::GaussianDist(acc);
}

Evaluation evaluate(const expfam::GaussianDist& posterior,
                    const models::ModelKind& model, const data::Dataset& test,
                    const models::Hyperparams& eps, int mc_samples,
                    std::uint64_t seed) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    double errors = 0.0, nll = 0.0;
    for (const data::Row& r : test.rows()) {
        const models::Prediction pred =
            models::predict(model, posterior, r.features, eps, mc_samples,
                            rng::derive(seed, static_cast<std::uint64_t>(r.id)));
        if (model.kind == models::Kind::LogisticRegression) {
            const double p = std::clamp(pred.mean, 1e-12, 1.0 - 1e-12);
            const bool predicted_one = p >= 0.5;
            const bool is_one = r.target >= 0.5;
            if (predicted_one != is_one) errors += 1.0;
            nll += -(r.target * std::log(p) + (1.0 - r.target) * std::log1p(-p));
        } else {
            const double resid = r.target - pred.mean;
            errors += resid * resid;
            nll += 0.5 * (std::log(2.0 * M_PI * pred.variance) +
                          resid * resid / pred.variance);
        }
    }
    Evaluation out;
    out.error = model.kind == models::Kind::LogisticRegression
                    ? errors / test.n()
                    : std::sqrt(errors / test.n());
    out.mean_nll = nll / test.n();
    return out;
}

void write_metrics_csv(const std::vector<EventRow>& rows,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    out.precision(17);
    out << "event_time,event_type,worker,round,error,nll,messages_up,"
           "messages_down,global_fe\n";
    for (const EventRow& r : rows) {
        out << r.event_time << "," << r.event_type << "," << r.worker << ","
            << r.round << ",";
        if (r.error) out << *r.error;
        out << ",";
        if (r.nll) out << *r.nll;
        out << "," << r.messages_up << "," << r.messages_down << ",";
        if (r.global_fe) out << *r.global_fe;
        out << "\n";
    }
}

}  // namespace fedsim
