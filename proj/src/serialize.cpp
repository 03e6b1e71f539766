#include "pvi/serialize.hpp"

#include <fstream>

namespace serialize {

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Eigen::VectorXd vector_from_json(const json& arr) {
    Eigen::VectorXd v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
    return v;
}

}  // namespace

json natural_to_json(const expfam::NaturalParams& n) {
    return json{{"dim", n.dim()},
                {"eta1", vector_to_json(n.eta1)},
                {"eta2", vector_to_json(n.eta2)}};
}

expfam::NaturalParams natural_from_json(const json& j) {
    expfam::NaturalParams n(vector_from_json(j.at("eta1")),
                            vector_from_json(j.at("eta2")));
    if (j.at("dim").get<int>() != n.dim()) {
        throw std::invalid_argument("natural_from_json: dim field mismatch");
    }
    return n;
}

json hyper_to_json(const models::Hyperparams& h) {
    json out = json::object();
    for (const auto& [name, value] : h.values) out[name] = value;
    return out;
}

models::Hyperparams hyper_from_json(const json& j) {
    models::Hyperparams h;
    for (auto it = j.begin(); it != j.end(); ++it) {
        h.values[it.key()] = it.value().get<double>();
    }
    return h;
}

json checkpoint_to_json(const pvi::PosteriorState& state,
                        const models::Hyperparams& hyper) {
    json sites = json::array();
    for (const auto& [id, site] : state.sites()) {
        sites.push_back(json{{"shard_id", id},
                             {"natural", natural_to_json(site.natural)},
                             {"log_scale", site.log_scale}});
    }
    return json{{"prior", natural_to_json(state.prior())},
                {"sites", std::move(sites)},
                {"hyper", hyper_to_json(hyper)}};
}

std::pair<pvi::PosteriorState, models::Hyperparams> checkpoint_from_json(
    const json& j) {
    std::vector<pvi::SiteFactor> sites;
    for (const json& s : j.at("sites")) {
        sites.push_back(pvi::SiteFactor{s.at("shard_id").get<int>(),
                                        natural_from_json(s.at("natural")),
                                        s.value("log_scale", 0.0)});
    }
    return {pvi::PosteriorState::restore(natural_from_json(j.at("prior")), sites),
            hyper_from_json(j.at("hyper"))};
}

void save_checkpoint(const pvi::PosteriorState& state,
                     const models::Hyperparams& hyper, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << checkpoint_to_json(state, hyper).dump(2) << "\n";
}

std::pair<pvi::PosteriorState, models::Hyperparams> load_checkpoint(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    json j;
    in >> j;
    return checkpoint_from_json(j);
}

void write_trace_csv(const pvi::RunTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path);
    out.precision(17);
    out << "iter,shard,local_fe,global_fe,delta_norm,hyper_json\n";
    for (const pvi::TraceRow& r : trace.rows()) {
        out << r.iteration << "," << r.shard_id << "," << r.local_free_energy
            << ",";
        if (r.global_free_energy) out << *r.global_free_energy;
        // CSV-quote the JSON payload by doubling embedded quotes.
        std::string payload = hyper_to_json(r.hyper).dump();
        std::string quoted;
        quoted.reserve(payload.size());
        for (char c : payload) {
            quoted += c;
            if (c == '"') quoted += '"';
        }
        out << "," << r.site_delta_norm << ",\"" << quoted << "\"\n";
    }
}

}  // namespace serialize
