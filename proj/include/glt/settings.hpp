#pragma once

#include <cstdlib>
#include <string>

#include "glt/config.hpp"
#include "glt/data_eval.hpp"
#include "glt/trainer.hpp"

namespace glt {

// Mapping between the text configuration and the typed settings structs.
// Key names are documented in the README and in configs/default.conf.

inline SynthSpec synth_spec_from(const Config& cfg) {
    SynthSpec spec;
    spec.n_identities = static_cast<std::size_t>(cfg.get_int("synth.n_identities", 20));
    spec.samples_per_identity =
        static_cast<std::size_t>(cfg.get_int("synth.samples_per_identity", 30));
    spec.input_dim = static_cast<std::size_t>(cfg.get_int("synth.input_dim", 48));
    spec.cluster_std = cfg.get_double("synth.cluster_std", 0.12);
    spec.n_cameras = static_cast<std::size_t>(cfg.get_int("synth.n_cameras", 3));
    spec.camera_shift_strength = cfg.get_double("synth.camera_shift_strength", 0.3);
    spec.domain_shift_strength = cfg.get_double("synth.domain_shift_strength", 0.8);
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", 7));
    return spec;
}

inline TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.hidden_dim = static_cast<std::size_t>(cfg.get_int("encoder.hidden_dim", 64));
    tc.embed_dim = static_cast<std::size_t>(cfg.get_int("encoder.embed_dim", 32));

    const std::string opt = cfg.get_string("train.optimizer", "adam");
    if (opt == "adam")
        tc.optimizer = TrainConfig::Optimizer::adam;
    else if (opt == "sgd")
        tc.optimizer = TrainConfig::Optimizer::sgd;
    else
        throw ConfigError("train.optimizer must be adam or sgd");
    tc.lr = cfg.get_double("train.lr", 0.00035);
    tc.lr_decay_every = static_cast<std::size_t>(cfg.get_int("train.lr_decay_every", 10));
    tc.lr_decay_factor = cfg.get_double("train.lr_decay_factor", 0.1);
    tc.epochs_pretrain = static_cast<std::size_t>(cfg.get_int("train.epochs_pretrain", 30));
    tc.pretrain_iters_per_epoch =
        static_cast<std::size_t>(cfg.get_int("train.pretrain_iters_per_epoch", 0));
    tc.adapt_epochs = static_cast<std::size_t>(cfg.get_int("train.adapt_epochs", 10));
    tc.iters_per_epoch = static_cast<std::size_t>(cfg.get_int("train.iters_per_epoch", 0));
    tc.batch_p = static_cast<std::size_t>(cfg.get_int("train.batch_p", 4));
    tc.batch_k = static_cast<std::size_t>(cfg.get_int("train.batch_k", 4));
    tc.interleave_source = cfg.get_bool("train.interleave_source", true);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 1));

    tc.weights.lambda_tri = cfg.get_double("loss.lambda_tri", 1.0);
    tc.weights.lambda_g = cfg.get_double("loss.lambda_g", 1.0);
    tc.weights.lambda_wcl = cfg.get_double("loss.lambda_wcl", 0.05);
    tc.weights.triplet_margin = cfg.get_double("loss.triplet_margin", 0.3);
    tc.weights.wcl_margin = cfg.get_double("loss.wcl_margin", 0.3);
    tc.weights.wcl_scale = cfg.get_double("loss.wcl_scale", 32.0);

    tc.sinkhorn.lambda = cfg.get_double("sinkhorn.lambda", 25.0);
    tc.sinkhorn.tol = cfg.get_double("sinkhorn.tol", 0.1);
    tc.sinkhorn.max_iter = static_cast<std::size_t>(cfg.get_int("sinkhorn.max_iter", 1000));

    tc.tau = cfg.get_double("proto.tau", 0.05);
    const std::string mode = cfg.get_string("proto.mode", "parametric");
    if (mode == "parametric")
        tc.prototype_mode = PrototypeMode::parametric;
    else if (mode == "nonparametric")
        tc.prototype_mode = PrototypeMode::nonparametric;
    else
        throw ConfigError("proto.mode must be parametric or nonparametric");

    const std::string cmode = cfg.get_string("cluster.mode", "kmeans");
    if (cmode == "kmeans")
        tc.groups.mode = GroupSpec::Mode::kmeans;
    else if (cmode == "dbscan")
        tc.groups.mode = GroupSpec::Mode::dbscan;
    else
        throw ConfigError("cluster.mode must be kmeans or dbscan");
    tc.groups.kmeans_k_list = cfg.get_size_list("cluster.k_list", {});
    tc.groups.dbscan_eps_list =
        cfg.get_double_list("cluster.eps_list", {0.56, 0.58, 0.60, 0.62, 0.64});
    tc.groups.dbscan_min_pts = static_cast<std::size_t>(cfg.get_int("cluster.min_pts", 4));

    tc.refine_enabled = cfg.get_bool("adapt.refine", true);
    tc.refresh_every = static_cast<std::size_t>(cfg.get_int("adapt.refresh_every", 0));
    tc.recluster_every = static_cast<std::size_t>(cfg.get_int("adapt.recluster_every", 5));
    tc.refresh_prototypes = cfg.get_bool("adapt.refresh_prototypes", true);
    tc.use_bank = cfg.get_bool("adapt.bank", true);
    tc.bank_capacity = static_cast<std::size_t>(cfg.get_int("adapt.bank_capacity", 0));
    tc.bank_group = static_cast<std::size_t>(cfg.get_int("adapt.bank_group", 0));
    tc.pk_group = static_cast<std::size_t>(cfg.get_int("adapt.pk_group", 0));
    return tc;
}

// OTL_SEED overrides every configured seed.
inline void apply_seed_env(Config& cfg) {
    const char* env = std::getenv("OTL_SEED");
    if (env == nullptr || *env == '\0') return;
    cfg.set(std::string("train.seed=") + env);
    cfg.set(std::string("synth.seed=") + env);
}

}  // namespace glt
