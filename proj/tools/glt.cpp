// Command-line front end: synthetic benchmark generation, source
// pretraining, domain adaptation, retrieval evaluation, one-shot label
// refinement, and the component ablation grid.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "glt/checkpoint.hpp"
#include "glt/glt.hpp"
#include "glt/settings.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
};

glt::Config load_config(const CommonArgs& args) {
    glt::Config cfg;
    if (!args.config_path.empty()) cfg = glt::Config::load(args.config_path);
    for (const std::string& kv : args.overrides) cfg.set(kv);
    glt::apply_seed_env(cfg);
    return cfg;
}

void ensure_out(const CommonArgs& args) { fs::create_directories(args.out_dir); }

std::string out_path(const CommonArgs& args, const std::string& name) {
    return (fs::path(args.out_dir) / name).string();
}

void write_json(const json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw glt::IoError("cannot open for writing: " + path);
    os << j.dump(2) << '\n';
}

json epoch_to_json(const glt::EpochMetrics& em) {
    json j{{"epoch", em.epoch},          {"l_tri", em.l_tri},
           {"l_g", em.l_g},              {"l_wcl", em.l_wcl},
           {"total", em.total},          {"source_loss", em.source_loss},
           {"refine_ran", em.refine_ran}};
    if (em.refine_ran) {
        j["refine_iters"] = em.refine_iters;
        j["refine_marginal_err"] = em.refine_marginal_err;
        j["refine_converged"] = em.refine_converged;
    }
    if (em.has_truth) {
        j["nmi"] = em.cluster.nmi;
        j["ari"] = em.cluster.ari;
        j["purity"] = em.cluster.purity;
        j["noise_rate"] = em.cluster.noise_rate;
    }
    return j;
}

void write_epoch_metrics(const std::vector<glt::EpochMetrics>& history, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw glt::IoError("cannot open for writing: " + path);
    for (const auto& em : history) os << epoch_to_json(em).dump() << '\n';
}

void write_iter_losses(const std::vector<glt::IterMetrics>& losses, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw glt::IoError("cannot open for writing: " + path);
    for (const auto& im : losses)
        os << json{{"epoch", im.epoch},
                   {"iter", im.iter},
                   {"l_tri", im.l_tri},
                   {"l_g", im.l_g},
                   {"l_wcl", im.l_wcl},
                   {"total", im.total}}
                  .dump()
           << '\n';
}

glt::IdentityDataset load_dataset(const glt::Config& cfg, const std::string& key) {
    const std::string path = cfg.get_string(key, "");
    if (path.empty()) throw glt::ConfigError("missing config key: " + key);
    return glt::ingest_embeddings(path);
}

int run_synth(const CommonArgs& args) {
    glt::Config cfg = load_config(args);
    ensure_out(args);
    auto [source, target] = glt::synth_generate(glt::synth_spec_from(cfg));
    glt::export_embeddings(source, out_path(args, "source.csv"));
    glt::export_embeddings(target, out_path(args, "target.csv"));
    std::cout << "wrote " << out_path(args, "source.csv") << " (" << source.size()
              << " rows) and " << out_path(args, "target.csv") << " (" << target.size()
              << " rows)\n";
    return 0;
}

int run_pretrain(const CommonArgs& args) {
    glt::Config cfg = load_config(args);
    ensure_out(args);
    glt::TrainConfig tc = glt::train_config_from(cfg);
    glt::IdentityDataset source = load_dataset(cfg, "data.source");
    glt::PretrainResult res = glt::pretrain_source(source, tc);
    glt::save_checkpoint({res.encoder, {}}, out_path(args, "encoder.ckpt"));
    std::ofstream os(out_path(args, "pretrain_losses.jsonl"));
    for (const auto& im : res.losses)
        os << json{{"epoch", im.epoch},
                   {"iter", im.iter},
                   {"l_tri", im.l_tri},
                   {"l_id", im.l_g},
                   {"total", im.total}}
                  .dump()
           << '\n';
    std::cout << "wrote " << out_path(args, "encoder.ckpt") << '\n';
    return 0;
}

int run_adapt(const CommonArgs& args) {
    glt::Config cfg = load_config(args);
    ensure_out(args);
    glt::TrainConfig tc = glt::train_config_from(cfg);
    glt::IdentityDataset target = load_dataset(cfg, "data.target");
    glt::IdentityDataset target_train = target.subset(glt::Split::target_train);

    glt::IdentityDataset source;
    if (!cfg.get_string("data.source", "").empty()) source = load_dataset(cfg, "data.source");

    glt::AdaptResult res;
    const std::string ckpt_path = cfg.get_string("data.checkpoint", "");
    if (!ckpt_path.empty()) {
        glt::Checkpoint init = glt::load_checkpoint(ckpt_path);
        res = glt::adapt(source, target_train, tc, &init.encoder);
    } else {
        res = glt::adapt(source, target_train, tc);
    }

    glt::save_checkpoint({res.state.encoder, res.state.groups},
                         out_path(args, "checkpoint.ckpt"));
    write_epoch_metrics(res.history, out_path(args, "metrics.jsonl"));
    write_iter_losses(res.iter_losses, out_path(args, "losses.jsonl"));

    json summary{{"epochs", res.state.epochs_done}};
    if (res.has_truth) {
        summary["initial"] = {{"nmi", res.initial_cluster.nmi},
                              {"ari", res.initial_cluster.ari},
                              {"purity", res.initial_cluster.purity},
                              {"noise_rate", res.initial_cluster.noise_rate}};
        const auto& last = res.history.back();
        summary["final"] = {{"nmi", last.cluster.nmi},
                            {"ari", last.cluster.ari},
                            {"purity", last.cluster.purity},
                            {"noise_rate", last.cluster.noise_rate}};
    }
    write_json(summary, out_path(args, "adapt_summary.json"));
    std::cout << summary.dump(2) << '\n';
    return 0;
}

json evaluate(const glt::Checkpoint& ckpt, const glt::IdentityDataset& target) {
    glt::IdentityDataset train = target.subset(glt::Split::target_train);
    glt::IdentityDataset query = target.subset(glt::Split::target_query);
    glt::IdentityDataset gallery = target.subset(glt::Split::target_gallery);

    json out;
    if (query.size() > 0 && gallery.size() > 0) {
        glt::Matrix qf = glt::extract_features(ckpt.encoder, query.inputs);
        glt::Matrix gf = glt::extract_features(ckpt.encoder, gallery.inputs);
        out["map"] = glt::mean_ap(qf, query.identities, query.cameras, gf, gallery.identities,
                                  gallery.cameras);
        const auto hits = glt::cmc(qf, query.identities, query.cameras, gf, gallery.identities,
                                   gallery.cameras, {1, 5, 10});
        out["top1"] = hits[0];
        out["top5"] = hits[1];
        out["top10"] = hits[2];
    }
    if (train.size() > 0 && !train.identities.empty()) {
        glt::Matrix tf = glt::extract_features(ckpt.encoder, train.inputs);
        std::vector<int> pred;
        if (!ckpt.groups.empty()) {
            pred = glt::harden(glt::prototype_probs(ckpt.groups[0], tf));
        } else {
            std::map<int, int> distinct;
            for (int v : train.identities) distinct.emplace(v, 0);
            pred = glt::kmeans(tf, std::max<std::size_t>(1, distinct.size()), 1).labels;
        }
        glt::ClusterMetrics cm = glt::cluster_metrics(pred, train.identities);
        out["nmi"] = cm.nmi;
        out["ari"] = cm.ari;
        out["purity"] = cm.purity;
        out["noise_rate"] = cm.noise_rate;
    }
    return out;
}

int run_eval(const CommonArgs& args) {
    glt::Config cfg = load_config(args);
    const std::string ckpt_path = cfg.get_string("data.checkpoint", "");
    if (ckpt_path.empty()) throw glt::ConfigError("missing config key: data.checkpoint");
    glt::Checkpoint ckpt = glt::load_checkpoint(ckpt_path);
    glt::IdentityDataset target = load_dataset(cfg, "data.target");
    std::cout << evaluate(ckpt, target).dump(2) << '\n';
    return 0;
}

struct RefineArgs {
    std::string p_path;
    std::string features_path;
    std::string prototypes_path;
    std::string row_marginal_path;
    double tau = 0.05;
};

int run_refine(const CommonArgs& args, const RefineArgs& rargs) {
    glt::Config cfg = load_config(args);
    ensure_out(args);
    glt::TrainConfig tc = glt::train_config_from(cfg);
    const double tau = rargs.tau;

    glt::Matrix p;
    if (!rargs.p_path.empty()) {
        p = glt::read_matrix_csv(rargs.p_path);
    } else {
        if (rargs.features_path.empty() || rargs.prototypes_path.empty())
            throw glt::ConfigError("refine needs --p or both --features and --prototypes");
        glt::Matrix features =
            glt::l2_normalize_rows(glt::read_matrix_csv(rargs.features_path));
        glt::Matrix protos =
            glt::l2_normalize_rows(glt::read_matrix_csv(rargs.prototypes_path));
        p = glt::joint_probs(features, protos, tau);
    }

    glt::TransportPolytope poly = glt::uniform_polytope(p.rows, p.cols);
    if (!rargs.row_marginal_path.empty()) {
        glt::Matrix w = glt::read_matrix_csv(rargs.row_marginal_path);
        if (w.data.size() != p.rows)
            throw glt::DimMismatchError("row marginal length does not match P rows");
        poly.row_marginal = w.data;
    }

    glt::SinkhornResult res = glt::sinkhorn(p, poly, tc.sinkhorn);
    glt::write_matrix_csv(res.q, out_path(args, "q.csv"));
    json sidecar{{"iters", res.iters},
                 {"marginal_err", res.marginal_err},
                 {"objective", glt::transport_objective(res.q, p, tc.sinkhorn.lambda)},
                 {"converged", res.converged}};
    write_json(sidecar, out_path(args, "refine.json"));
    std::cout << sidecar.dump(2) << '\n';
    return 0;
}

struct AblationRow {
    std::string name;
    bool multi_group;
    bool refine;
    bool bank;
};

int run_ablate(const CommonArgs& args) {
    glt::Config cfg = load_config(args);
    ensure_out(args);
    glt::TrainConfig base = glt::train_config_from(cfg);
    glt::SynthSpec spec = glt::synth_spec_from(cfg);
    const std::size_t n_seeds = static_cast<std::size_t>(cfg.get_int("ablate.seeds", 5));

    const std::vector<AblationRow> rows = {{"baseline", false, false, false},
                                           {"baseline+lt", false, true, false},
                                           {"baseline+lt+bank", false, true, true},
                                           {"glt", true, true, true}};
    json result;
    std::vector<std::vector<json>> per_row(rows.size());

    for (std::size_t s = 0; s < n_seeds; ++s) {
        glt::SynthSpec sspec = spec;
        sspec.seed = spec.seed + s;
        auto [source, target] = glt::synth_generate(sspec);
        glt::IdentityDataset target_train = target.subset(glt::Split::target_train);

        glt::TrainConfig seed_cfg = base;
        seed_cfg.seed = base.seed + s;
        glt::PretrainResult pre = glt::pretrain_source(source, seed_cfg);

        for (std::size_t r = 0; r < rows.size(); ++r) {
            glt::TrainConfig tc = seed_cfg;
            tc.refine_enabled = rows[r].refine;
            tc.use_bank = rows[r].bank;
            if (!rows[r].bank) tc.weights.lambda_wcl = 0.0;
            if (!rows[r].multi_group) {
                glt::GroupSpec single = tc.groups;
                if (single.mode == glt::GroupSpec::Mode::kmeans) {
                    auto ks = single.kmeans_k_list.empty()
                                  ? glt::default_k_list(target_train.size())
                                  : single.kmeans_k_list;
                    single.kmeans_k_list = {ks.front()};
                } else {
                    single.dbscan_eps_list = {single.dbscan_eps_list.front()};
                }
                tc.groups = single;
            }
            glt::AdaptResult res = glt::adapt(source, target_train, tc, &pre.encoder);
            json metrics = evaluate({res.state.encoder, res.state.groups}, target);
            metrics["seed"] = sspec.seed;
            metrics["initial_noise_rate"] = res.initial_cluster.noise_rate;
            metrics["final_noise_rate"] = res.history.back().cluster.noise_rate;
            metrics["final_nmi_train"] = res.history.back().cluster.nmi;
            per_row[r].push_back(metrics);
        }
    }

    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    std::ostringstream table;
    table << "configuration        median_map  median_top1  median_nmi\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<double> maps, top1s, nmis;
        for (const json& m : per_row[r]) {
            maps.push_back(m["map"].get<double>());
            top1s.push_back(m["top1"].get<double>());
            nmis.push_back(m["nmi"].get<double>());
        }
        json row{{"name", rows[r].name},
                 {"median_map", median_of(maps)},
                 {"median_top1", median_of(top1s)},
                 {"median_nmi", median_of(nmis)},
                 {"seeds", per_row[r]}};
        result["rows"].push_back(row);
        table << rows[r].name;
        for (std::size_t pad = rows[r].name.size(); pad < 21; ++pad) table << ' ';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%10.4f  %11.4f  %10.4f\n", median_of(maps),
                      median_of(top1s), median_of(nmis));
        table << buf;
    }

    write_json(result, out_path(args, "ablate.json"));
    std::ofstream ts(out_path(args, "table.txt"));
    ts << table.str();
    std::cout << table.str();
    return 0;
}

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "configuration file (key = value lines)");
    sub->add_option("--set", args.overrides, "override a config key, e.g. --set train.lr=0.001")
        ->take_all();
    sub->add_option("--out", args.out_dir, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"group-aware label transfer toolkit"};
    app.require_subcommand(1);

    CommonArgs synth_args, pretrain_args, adapt_args, eval_args, refine_args, ablate_args;
    RefineArgs refine_extra;

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic benchmark datasets");
    add_common(synth, synth_args);
    CLI::App* pretrain = app.add_subcommand("pretrain", "supervised pretraining on the source set");
    add_common(pretrain, pretrain_args);
    CLI::App* adapt = app.add_subcommand("adapt", "run the full adaptation loop");
    add_common(adapt, adapt_args);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the target set");
    add_common(eval, eval_args);
    CLI::App* refine = app.add_subcommand("refine", "one transport refinement on matrix files");
    add_common(refine, refine_args);
    refine->add_option("--p", refine_extra.p_path, "joint probability matrix CSV");
    refine->add_option("--features", refine_extra.features_path, "feature matrix CSV (N x D)");
    refine->add_option("--prototypes", refine_extra.prototypes_path,
                       "prototype matrix CSV (K x D)");
    refine->add_option("--row-marginal", refine_extra.row_marginal_path,
                       "optional row marginal CSV (K values)");
    refine->add_option("--tau", refine_extra.tau, "softmax temperature for --features mode");
    CLI::App* ablate = app.add_subcommand("ablate", "run the component ablation grid");
    add_common(ablate, ablate_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return run_synth(synth_args);
        if (pretrain->parsed()) return run_pretrain(pretrain_args);
        if (adapt->parsed()) return run_adapt(adapt_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (refine->parsed()) return run_refine(refine_args, refine_extra);
        if (ablate->parsed()) return run_ablate(ablate_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
