#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "textdemand/dates.hpp"
#include "textdemand/io.hpp"
#include "textdemand/mentions.hpp"
#include "textdemand/panel_table.hpp"
#include "textdemand/textprep.hpp"

namespace textdemand {

/// Deterministic random stream for one (seed, purpose, entity) triple, so an
/// entity's draws do not depend on how many other entities were generated.
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t entity);

/// Parameters behind a synthetic dataset.
struct SynthTruth {
    std::uint64_t seed = 0;
    std::vector<double> beta_true;
    std::vector<double> fe_values;     // item effects mu_j
    std::vector<double> gamma_values;  // multiplicative item heterogeneity, empty if none
    std::optional<double> dispersion;  // variance of the gamma heterogeneity
    std::vector<double> time_effects;  // delta_t, empty if none
    std::vector<double> phi_true;
    std::vector<double> alpha_true;

    std::string to_json() const;
};

struct PoissonPanelConfig {
    int n_items = 200;
    int n_weeks = 30;
    std::vector<double> beta;     // one coefficient per covariate x1..xp
    int n_binary = 0;             // the last n_binary covariates are Bernoulli(0.5)
    double fe_spread = 0.5;       // SD of the normal item effects
    std::optional<double> gamma_var;  // variance of mean-one gamma item heterogeneity
    double intercept = 0.0;
    double time_spread = 0.0;     // SD of normal week effects; 0 disables them
    std::uint64_t seed = 1;
};

/// y_jt ~ Poisson(exp(intercept + x_jt' beta + mu_j + delta_t) * g_j), with
/// g_j ~ Gamma(1/v, v) when gamma_var = v > 0. Columns: sales, x1..xp.
/// Throws InvalidInput when a linear predictor leaves [-30, 30].
std::pair<PanelTable, SynthTruth> gen_poisson_panel(const PoissonPanelConfig& config);

/// P(5 stars) = 0.977, the rest spread evenly over 0..4.
std::array<double, 6> skewed_rating_distribution();

struct MnirCorpusConfig {
    Eigen::VectorXd phi;    // per-word loadings
    Eigen::VectorXd alpha;  // per-word intercepts
    std::size_t n_docs = 1000;
    std::array<double, 6> rating_dist = skewed_rating_distribution();
    double mean_length = 20.0;  // document length is 1 + Poisson(mean_length - 1)
    std::uint64_t seed = 1;
};

/// Token used for synthetic word j; stable under preprocessing.
std::string synthetic_word(std::size_t j);

/// Draws each document's rating, then its words i.i.d. from
/// softmax(alpha + phi * rating).
std::pair<std::vector<Document>, SynthTruth> gen_mnir_corpus(const MnirCorpusConfig& config);

/// Exact word probabilities softmax(alpha + phi * rating).
Eigen::VectorXd word_probabilities(const Eigen::VectorXd& alpha, const Eigen::VectorXd& phi, int rating);

/// A small marketplace simulated week by week. Every sale leaves a review,
/// so demand feeds the review history that later demand responds to:
///   sales_jt ~ Poisson(exp(mu_j + review_effect * S_vt + forum_effect * F_vt
///                          + nfe_effect * nfe_j + price_effect * (log p_jt - mean)))
/// where S_vt and F_vt are the vendor's average latent sentiment
/// ((rating - 3) / 1.2) over reviews and forum mentions before week t.
/// Ratings are round(3 + q_vt + N(0, rating_noise)) clipped to 0..5 with
/// vendor quality q following a Gaussian random walk; review and post words
/// are drawn from softmax(alpha + phi * rating).
struct MarketConfig {
    int n_vendors = 40;
    int max_items_per_vendor = 3;
    int n_weeks = 26;
    Date start = parse_date("2014-01-01");
    std::size_t vocab_size = 300;
    std::size_t n_loaded = 40;    // half positive, half negative
    double loading = 0.6;
    double mean_review_length = 25.0;
    double mean_post_length = 30.0;
    double base_demand = 0.3;      // mean of mu_j
    double fe_spread = 0.5;
    double review_effect = 0.4;
    double forum_effect = 0.3;
    double nfe_effect = 0.3;
    double price_effect = -0.3;
    double quality_drift = 0.25;
    double rating_noise = 0.8;
    double mention_rate = 1.5;        // mentions per vendor-week
    double multi_vendor_share = 0.1;  // direct mentions that also name another vendor
    double offtopic_share = 0.1;      // extra posts in a subforum outside the allowlist
    std::size_t n_english_vendors = 2;  // vendors named like English words
    std::uint64_t seed = 1;

    std::string to_json() const;
    static MarketConfig from_json(std::string_view text);
};

struct MarketTruth {
    std::uint64_t seed = 0;
    double review_effect = 0.0;
    double forum_effect = 0.0;
    std::vector<std::string> vendors;
    std::vector<std::string> english_vendors;
    std::vector<std::string> items;
    std::vector<double> item_effects;
    std::vector<std::vector<double>> quality;  // vendor x week
    std::vector<double> phi_true;
    std::vector<double> alpha_true;
    std::size_t n_sales = 0;
    std::size_t n_mentions = 0;  // single-vendor mentions of vendors not named like words

    std::string to_json() const;
};

struct Market {
    std::vector<Document> reviews;  // extra: item_id, buyer_deals
    std::vector<ForumThread> threads;
    std::vector<ForumPost> posts;
    std::vector<ListingSnapshot> listings;
    std::vector<std::string> roster;
    MarketTruth truth;
};

Market gen_market(const MarketConfig& config);

}  // namespace textdemand
