#include "textdemand/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "textdemand/errors.hpp"

namespace textdemand {

namespace {

enum Purpose : std::uint64_t {
    kCovariates = 1,
    kItemEffect = 2,
    kGamma = 3,
    kOutcome = 4,
    kWeekEffect = 5,
    kDocument = 6,
    kMarketSetup = 7,
    kMarketDemand = 8,
    kMarketReview = 9,
    kMarketForum = 10,
    kMarketListing = 11,
    kMarketQuality = 12,
};

std::string padded(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
    return buf;
}

}  // namespace

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t entity) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(entity),
                      static_cast<std::uint32_t>(entity >> 32)};
    return std::mt19937_64(seq);
}

std::string SynthTruth::to_json() const {
    nlohmann::json j;
    j["format"] = "textdemand.synth_truth";
    j["version"] = 1;
    j["seed"] = seed;
    j["beta_true"] = beta_true;
    j["fe_values"] = fe_values;
    j["gamma_values"] = gamma_values;
    j["dispersion"] = dispersion ? nlohmann::json(*dispersion) : nlohmann::json(nullptr);
    j["time_effects"] = time_effects;
    j["phi_true"] = phi_true;
    j["alpha_true"] = alpha_true;
    return j.dump(1);
}

std::pair<PanelTable, SynthTruth> gen_poisson_panel(const PoissonPanelConfig& config) {
    if (config.n_items <= 0 || config.n_weeks <= 0) throw InvalidInput("panel dimensions must be positive");
    if (!std::isfinite(config.fe_spread) || config.fe_spread < 0.0) throw InvalidInput("fe_spread must be finite");
    const auto p = config.beta.size();
    if (config.n_binary < 0 || static_cast<std::size_t>(config.n_binary) > p) {
        throw InvalidInput("n_binary exceeds the number of covariates");
    }
    const bool mixed = config.gamma_var && *config.gamma_var > 0.0;

    SynthTruth truth;
    truth.seed = config.seed;
    truth.beta_true = config.beta;
    if (mixed) truth.dispersion = *config.gamma_var;

    if (config.time_spread > 0.0) {
        auto rng = substream(config.seed, kWeekEffect, 0);
        std::normal_distribution<double> n(0.0, config.time_spread);
        for (int t = 0; t < config.n_weeks; ++t) truth.time_effects.push_back(n(rng));
    }

    PanelTable table;
    const std::size_t rows = static_cast<std::size_t>(config.n_items) * static_cast<std::size_t>(config.n_weeks);
    std::vector<double> sales;
    std::vector<std::vector<double>> x(p);
    sales.reserve(rows);
    for (auto& col : x) col.reserve(rows);

    const std::size_t first_binary = p - static_cast<std::size_t>(config.n_binary);
    for (int j = 0; j < config.n_items; ++j) {
        const auto item = static_cast<std::uint64_t>(j);
        auto fe_rng = substream(config.seed, kItemEffect, item);
        const double mu = config.fe_spread > 0.0 ? std::normal_distribution<double>(0.0, config.fe_spread)(fe_rng) : 0.0;
        truth.fe_values.push_back(mu);

        double g = 1.0;
        if (mixed) {
            auto g_rng = substream(config.seed, kGamma, item);
            const double shape = 1.0 / *config.gamma_var;
            g = std::gamma_distribution<double>(shape, *config.gamma_var)(g_rng);
            truth.gamma_values.push_back(g);
        }

        auto x_rng = substream(config.seed, kCovariates, item);
        auto y_rng = substream(config.seed, kOutcome, item);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::bernoulli_distribution coin(0.5);
        for (int t = 0; t < config.n_weeks; ++t) {
            double eta = config.intercept + mu;
            if (!truth.time_effects.empty()) eta += truth.time_effects[static_cast<std::size_t>(t)];
            for (std::size_t k = 0; k < p; ++k) {
                const double v = k >= first_binary ? (coin(x_rng) ? 1.0 : 0.0) : normal(x_rng);
                x[k].push_back(v);
                eta += config.beta[k] * v;
            }
            if (std::abs(eta) > 30.0) {
                throw InvalidInput("linear predictor " + std::to_string(eta) + " outside [-30, 30] for item " +
                                   std::to_string(j));
            }
            const double mean = std::exp(eta) * g;
            sales.push_back(mean > 0.0 ? static_cast<double>(std::poisson_distribution<long>(mean)(y_rng)) : 0.0);
            table.item_ids.push_back(padded("item", static_cast<std::size_t>(j)));
            table.vendor_ids.push_back(padded("vendor", static_cast<std::size_t>(j)));
            table.weeks.push_back(t);
            table.snapshot_ids.emplace_back();
        }
    }
    table.set_column({"sales", ColumnRole::outcome, "count"}, std::move(sales));
    for (std::size_t k = 0; k < p; ++k) {
        table.set_column({"x" + std::to_string(k + 1), ColumnRole::covariate, k >= first_binary ? "indicator" : ""},
                         std::move(x[k]));
    }
    return {std::move(table), std::move(truth)};
}

std::array<double, 6> skewed_rating_distribution() {
    constexpr double rest = (1.0 - 0.977) / 5.0;
    return {rest, rest, rest, rest, rest, 0.977};
}

std::string synthetic_word(std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%04zux", j);
    return buf;
}

Eigen::VectorXd word_probabilities(const Eigen::VectorXd& alpha, const Eigen::VectorXd& phi, int rating) {
    Eigen::VectorXd z = alpha + phi * static_cast<double>(rating);
    z.array() -= z.maxCoeff();
    Eigen::VectorXd p = z.array().exp();
    return p / p.sum();
}

std::pair<std::vector<Document>, SynthTruth> gen_mnir_corpus(const MnirCorpusConfig& config) {
    const auto V = config.phi.size();
    if (V == 0 || config.alpha.size() != V) throw InvalidInput("alpha and phi must have the same positive length");
    if (config.mean_length < 1.0) throw InvalidInput("mean document length must be at least 1");

    std::vector<std::string> words;
    for (Eigen::Index j = 0; j < V; ++j) words.push_back(synthetic_word(static_cast<std::size_t>(j)));

    std::vector<std::discrete_distribution<Eigen::Index>> word_dist;
    for (int r = 0; r < 6; ++r) {
        const Eigen::VectorXd p = word_probabilities(config.alpha, config.phi, r);
        word_dist.emplace_back(p.data(), p.data() + p.size());
    }
    std::discrete_distribution<int> rating_dist(config.rating_dist.begin(), config.rating_dist.end());

    std::vector<Document> docs;
    docs.reserve(config.n_docs);
    for (std::size_t i = 0; i < config.n_docs; ++i) {
        auto rng = substream(config.seed, kDocument, i);
        Document d;
        d.doc_id = padded("rev", i);
        d.kind = DocKind::review;
        d.rating = rating_dist(rng);
        const long length = 1 + std::poisson_distribution<long>(config.mean_length - 1.0)(rng);
        auto& dist = word_dist[static_cast<std::size_t>(*d.rating)];
        for (long k = 0; k < length; ++k) {
            const auto& w = words[static_cast<std::size_t>(dist(rng))];
            d.tokens.push_back(w);
            if (!d.raw_text.empty()) d.raw_text += ' ';
            d.raw_text += w;
        }
        docs.push_back(std::move(d));
    }

    SynthTruth truth;
    truth.seed = config.seed;
    truth.phi_true.assign(config.phi.data(), config.phi.data() + V);
    truth.alpha_true.assign(config.alpha.data(), config.alpha.data() + V);
    return {std::move(docs), std::move(truth)};
}

namespace {

constexpr double kLatentScale = 1.2;  // (rating - 3) / 1.2 is the latent sentiment

std::string listing_word(std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "k%04zux", j);
    return buf;
}

// Pronounceable lowercase names that are not English words.
std::string vendor_name(std::mt19937_64& rng) {
    static constexpr std::string_view consonants = "bdfgkmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::uniform_int_distribution<std::size_t> c(0, consonants.size() - 1), v(0, vowels.size() - 1);
    std::uniform_int_distribution<int> syllables(2, 3), digit(0, 9);
    std::string out;
    const int n = syllables(rng);
    for (int i = 0; i < n; ++i) {
        out += consonants[c(rng)];
        out += vowels[v(rng)];
    }
    out += consonants[c(rng)];
    out += static_cast<char>('0' + digit(rng));
    return out;
}

int draw_rating(std::mt19937_64& rng, double quality, double noise) {
    const double r = std::round(3.0 + quality + std::normal_distribution<double>(0.0, noise)(rng));
    return static_cast<int>(std::clamp(r, 0.0, 5.0));
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::string volume_category(long sold) {
    if (sold == 0) return "0";
    if (sold <= 5) return "1~5";
    if (sold <= 20) return "6~20";
    return "21+";
}

struct History {
    double sum = 0.0;
    long count = 0;
    double mean() const { return count > 0 ? sum / static_cast<double>(count) : 0.0; }
};

}  // namespace

std::string MarketConfig::to_json() const {
    nlohmann::json j;
    j["n_vendors"] = n_vendors;
    j["max_items_per_vendor"] = max_items_per_vendor;
    j["n_weeks"] = n_weeks;
    j["start"] = format_date(start);
    j["vocab_size"] = vocab_size;
    j["n_loaded"] = n_loaded;
    j["loading"] = loading;
    j["mean_review_length"] = mean_review_length;
    j["mean_post_length"] = mean_post_length;
    j["base_demand"] = base_demand;
    j["fe_spread"] = fe_spread;
    j["review_effect"] = review_effect;
    j["forum_effect"] = forum_effect;
    j["nfe_effect"] = nfe_effect;
    j["price_effect"] = price_effect;
    j["quality_drift"] = quality_drift;
    j["rating_noise"] = rating_noise;
    j["mention_rate"] = mention_rate;
    j["multi_vendor_share"] = multi_vendor_share;
    j["offtopic_share"] = offtopic_share;
    j["n_english_vendors"] = n_english_vendors;
    j["seed"] = seed;
    return j.dump(1);
}

MarketConfig MarketConfig::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("market config: ") + e.what());
    }
    if (!j.is_object()) throw InvalidInput("market config must be an object");
    MarketConfig c;
    const MarketConfig defaults;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "n_vendors") c.n_vendors = value.get<int>();
            else if (key == "max_items_per_vendor") c.max_items_per_vendor = value.get<int>();
            else if (key == "n_weeks") c.n_weeks = value.get<int>();
            else if (key == "start") c.start = parse_date(value.get<std::string>());
            else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
            else if (key == "n_loaded") c.n_loaded = value.get<std::size_t>();
            else if (key == "loading") c.loading = value.get<double>();
            else if (key == "mean_review_length") c.mean_review_length = value.get<double>();
            else if (key == "mean_post_length") c.mean_post_length = value.get<double>();
            else if (key == "base_demand") c.base_demand = value.get<double>();
            else if (key == "fe_spread") c.fe_spread = value.get<double>();
            else if (key == "review_effect") c.review_effect = value.get<double>();
            else if (key == "forum_effect") c.forum_effect = value.get<double>();
            else if (key == "nfe_effect") c.nfe_effect = value.get<double>();
            else if (key == "price_effect") c.price_effect = value.get<double>();
            else if (key == "quality_drift") c.quality_drift = value.get<double>();
            else if (key == "rating_noise") c.rating_noise = value.get<double>();
            else if (key == "mention_rate") c.mention_rate = value.get<double>();
            else if (key == "multi_vendor_share") c.multi_vendor_share = value.get<double>();
            else if (key == "offtopic_share") c.offtopic_share = value.get<double>();
            else if (key == "n_english_vendors") c.n_english_vendors = value.get<std::size_t>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw InvalidInput("market config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("market config: ") + e.what());
    }
    return c;
}

std::string MarketTruth::to_json() const {
    nlohmann::json j;
    j["format"] = "textdemand.market_truth";
    j["version"] = 1;
    j["seed"] = seed;
    j["review_effect"] = review_effect;
    j["forum_effect"] = forum_effect;
    j["vendors"] = vendors;
    j["english_vendors"] = english_vendors;
    j["items"] = items;
    j["item_effects"] = item_effects;
    j["quality"] = quality;
    j["phi_true"] = phi_true;
    j["alpha_true"] = alpha_true;
    j["n_sales"] = n_sales;
    j["n_mentions"] = n_mentions;
    return j.dump(1);
}

Market gen_market(const MarketConfig& config) {
    if (config.n_vendors < 2 || config.max_items_per_vendor < 1 || config.n_weeks < 2) {
        throw InvalidInput("market needs at least 2 vendors, 1 item per vendor and 2 weeks");
    }
    if (config.vocab_size < 2 || config.n_loaded > config.vocab_size) {
        throw InvalidInput("n_loaded must not exceed vocab_size");
    }
    if (config.n_english_vendors >= static_cast<std::size_t>(config.n_vendors)) {
        throw InvalidInput("too many English-named vendors");
    }
    if (config.mean_review_length < 1.0 || config.mean_post_length < 1.0) {
        throw InvalidInput("mean text lengths must be at least 1");
    }
    for (double share : {config.multi_vendor_share, config.offtopic_share}) {
        if (!(share >= 0.0 && share <= 1.0)) throw InvalidInput("shares must lie in [0, 1]");
    }
    const auto seed = config.seed;
    const auto V = static_cast<Eigen::Index>(config.vocab_size);
    const auto n_vendors = static_cast<std::size_t>(config.n_vendors);
    const auto n_weeks = static_cast<std::size_t>(config.n_weeks);

    Market m;
    auto& truth = m.truth;
    truth.seed = seed;
    truth.review_effect = config.review_effect;
    truth.forum_effect = config.forum_effect;

    // Text model: the first n_loaded words carry loadings of alternating sign.
    auto setup = substream(seed, kMarketSetup, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd alpha(V), phi = Eigen::VectorXd::Zero(V);
    for (Eigen::Index j = 0; j < V; ++j) alpha(j) = 0.5 * normal(setup);
    for (std::size_t j = 0; j < config.n_loaded; ++j) {
        phi(static_cast<Eigen::Index>(j)) = (j % 2 == 0 ? 1.0 : -1.0) * config.loading;
    }
    truth.alpha_true.assign(alpha.data(), alpha.data() + V);
    truth.phi_true.assign(phi.data(), phi.data() + V);
    std::vector<std::string> words;
    for (Eigen::Index j = 0; j < V; ++j) words.push_back(synthetic_word(static_cast<std::size_t>(j)));
    std::vector<std::discrete_distribution<std::size_t>> word_dist;
    for (int r = 0; r < 6; ++r) {
        const Eigen::VectorXd p = word_probabilities(alpha, phi, r);
        word_dist.emplace_back(p.data(), p.data() + p.size());
    }
    auto draw_text = [&](std::mt19937_64& rng, int rating, double mean_length) {
        const long length = 1 + std::poisson_distribution<long>(mean_length - 1.0)(rng);
        std::vector<std::string> out;
        for (long k = 0; k < length; ++k) out.push_back(words[word_dist[static_cast<std::size_t>(rating)](rng)]);
        return out;
    };

    // Vendors: English-named ones first in generation order, ids sorted later by consumers.
    const auto& english = default_english_words();
    static const std::vector<std::string> english_pool = {"apple", "river", "garden", "silver", "candy", "rocket"};
    std::set<std::string> taken;
    for (std::size_t v = 0; v < n_vendors; ++v) {
        std::string name;
        if (v < config.n_english_vendors) {
            name = english_pool[v % english_pool.size()];
            if (taken.count(name)) name += std::to_string(v);
            if (!english.count(name)) throw InvalidInput("English vendor name '" + name + "' is not in the word list");
            truth.english_vendors.push_back(name);
        } else {
            do {
                name = vendor_name(setup);
            } while (taken.count(name) || english.count(name));
        }
        taken.insert(name);
        truth.vendors.push_back(name);
    }
    m.roster = truth.vendors;
    std::sort(m.roster.begin(), m.roster.end());

    // Vendor quality paths.
    truth.quality.assign(n_vendors, std::vector<double>(n_weeks));
    for (std::size_t v = 0; v < n_vendors; ++v) {
        auto rng = substream(seed, kMarketQuality, v);
        double q = 0.8 * normal(rng);
        for (std::size_t t = 0; t < n_weeks; ++t) {
            truth.quality[v][t] = q;
            q += config.quality_drift * normal(rng);
        }
    }

    // Items.
    struct Item {
        std::size_t vendor = 0;
        std::string id;
        double mu = 0.0;
        double log_price = 0.0;
        bool nfe = false;
        int first_week = 0;
        int category = 0;
        std::vector<std::string> title;
    };
    constexpr int kCategories = 8;
    constexpr std::size_t kCategoryWords = 20;
    constexpr std::size_t kGenericWords = 60;
    std::vector<Item> items;
    std::uniform_int_distribution<int> n_items_dist(1, config.max_items_per_vendor);
    std::uniform_int_distribution<int> first_week_dist(0, std::max(0, config.n_weeks / 3));
    std::uniform_int_distribution<int> category_dist(0, kCategories - 1);
    std::uniform_int_distribution<std::size_t> category_word(0, kCategoryWords - 1), generic_word(0, kGenericWords - 1);
    auto category_token = [&](int c, std::size_t k) {
        return listing_word(static_cast<std::size_t>(c) * kCategoryWords + k);
    };
    auto generic_token = [&](std::size_t k) { return listing_word(kCategories * kCategoryWords + k); };
    for (std::size_t v = 0; v < n_vendors; ++v) {
        const int count = n_items_dist(setup);
        for (int i = 0; i < count; ++i) {
            Item it;
            it.vendor = v;
            it.id = padded("item", items.size());
            it.mu = config.base_demand + config.fe_spread * normal(setup);
            it.log_price = -3.0 + 0.7 * normal(setup);
            it.nfe = std::bernoulli_distribution(0.3)(setup);
            it.first_week = first_week_dist(setup);
            it.category = category_dist(setup);
            const int title_len = std::uniform_int_distribution<int>(3, 6)(setup);
            for (int k = 0; k < title_len; ++k) {
                it.title.push_back(k % 2 == 0 ? category_token(it.category, category_word(setup))
                                              : generic_token(generic_word(setup)));
            }
            truth.items.push_back(it.id);
            truth.item_effects.push_back(it.mu);
            items.push_back(std::move(it));
        }
    }
    double mean_log_price = 0.0;
    for (const auto& it : items) mean_log_price += it.log_price;
    mean_log_price /= static_cast<double>(items.size());

    std::vector<std::string> members;
    std::vector<std::optional<int>> member_posts;
    {
        auto rng = substream(seed, kMarketForum, 0);
        for (int k = 0; k < 300; ++k) {
            members.push_back(padded("member", static_cast<std::size_t>(k)));
            if (std::bernoulli_distribution(0.1)(rng)) member_posts.push_back(std::nullopt);
            else member_posts.push_back(static_cast<int>(std::exp(1.0 + 1.8 * normal(rng) + 3.0)));
        }
    }

    std::vector<History> review_hist(n_vendors), forum_hist(n_vendors);
    std::vector<History> item_hist(items.size());
    // Vendor trade volume, including deals made before the sample opens.
    std::vector<long> vendor_sold(n_vendors, 0);
    for (std::size_t v = 0; v < n_vendors; ++v) {
        auto rng = substream(seed, kMarketQuality, n_vendors + v);
        vendor_sold[v] = std::uniform_int_distribution<long>(1, 25)(rng);
    }
    std::vector<std::int64_t> vendor_thread(n_vendors, 0);
    std::int64_t next_post = 1, next_thread = 1;
    std::map<std::int64_t, std::size_t> thread_index;
    std::size_t review_no = 0;

    auto add_post = [&](std::int64_t thread, const std::string& author, bool is_vendor, std::optional<int> count,
                        Date day, std::string text) {
        ForumPost p;
        p.post_id = next_post++;
        p.thread_id = thread;
        p.author_id = author;
        p.author_is_vendor = is_vendor;
        p.author_post_count = count;
        p.timestamp = day;
        p.raw_text = std::move(text);
        m.threads[thread_index.at(thread)].posts.push_back(p.post_id);
        m.posts.push_back(std::move(p));
    };
    auto add_thread = [&](std::string title, std::string subforum) {
        ForumThread th;
        th.thread_id = next_thread++;
        th.title_raw = std::move(title);
        th.subforum = std::move(subforum);
        thread_index[th.thread_id] = m.threads.size();
        m.threads.push_back(std::move(th));
        return m.threads.back().thread_id;
    };
    // Inserts `name` at a random position of a word list.
    auto with_name = [](std::mt19937_64& rng, std::vector<std::string> text, const std::string& name) {
        std::uniform_int_distribution<std::size_t> pos(0, text.size());
        text.insert(text.begin() + static_cast<std::ptrdiff_t>(pos(rng)), name);
        return text;
    };

    const std::vector<std::string> subforums = default_subforums();
    for (std::size_t t = 0; t < n_weeks; ++t) {
        const Date week_start = config.start + std::chrono::days(7 * static_cast<int>(t));
        auto forum_rng = substream(seed, kMarketForum, 1 + t);
        std::uniform_int_distribution<int> day(0, 6);
        std::uniform_int_distribution<std::size_t> member(0, members.size() - 1);

        // A weekly general thread whose opener names nobody.
        const auto general = add_thread("weekly market chat " + std::to_string(t + 1), "General Discussion");
        {
            const auto a = member(forum_rng);
            add_post(general, members[a], false, member_posts[a], week_start + std::chrono::days(day(forum_rng)),
                     join_words(draw_text(forum_rng, 3, config.mean_post_length)));
        }
        const auto offtopic = add_thread("off topic " + std::to_string(t + 1), "Off Topic");
        {
            const auto a = member(forum_rng);
            add_post(offtopic, members[a], false, member_posts[a], week_start + std::chrono::days(day(forum_rng)),
                     join_words(draw_text(forum_rng, 3, config.mean_post_length)));
        }

        // Demand and reviews, driven by history strictly before week t.
        for (std::size_t i = 0; i < items.size(); ++i) {
            auto& it = items[i];
            if (static_cast<int>(t) < it.first_week) continue;
            auto rng = substream(seed, kMarketDemand, i * n_weeks + t);
            const std::size_t v = it.vendor;
            const double price_noise = 0.1 * normal(rng);
            const double eta = it.mu + config.review_effect * review_hist[v].mean() +
                               config.forum_effect * forum_hist[v].mean() + config.nfe_effect * (it.nfe ? 1.0 : 0.0) +
                               config.price_effect * (it.log_price + price_noise - mean_log_price);
            const long sold = std::poisson_distribution<long>(std::exp(std::min(eta, 20.0)))(rng);
            auto rrng = substream(seed, kMarketReview, i * n_weeks + t);
            for (long s = 0; s < sold; ++s) {
                const int rating = draw_rating(rrng, truth.quality[v][t], config.rating_noise);
                Document d;
                d.doc_id = padded("rev", review_no++);
                d.kind = DocKind::review;
                d.raw_text = join_words(draw_text(rrng, rating, config.mean_review_length));
                d.vendor_id = truth.vendors[v];
                d.author_id = padded("buyer", std::uniform_int_distribution<std::size_t>(0, 4999)(rrng));
                d.timestamp = week_start + std::chrono::days(day(rrng));
                d.rating = rating;
                d.extra["item_id"] = it.id;
                d.extra["buyer_deals"] = std::to_string(std::geometric_distribution<int>(0.15)(rrng));
                m.reviews.push_back(std::move(d));
                item_hist[i].sum += rating;
                ++item_hist[i].count;
            }
            vendor_sold[it.vendor] += sold;
            truth.n_sales += static_cast<std::size_t>(sold);
        }

        // Forum mentions.
        std::vector<std::pair<std::size_t, double>> new_mentions;
        for (std::size_t v = 0; v < n_vendors; ++v) {
            const long n = std::poisson_distribution<long>(config.mention_rate)(forum_rng);
            const auto& name = truth.vendors[v];
            for (long k = 0; k < n; ++k) {
                const int rating = draw_rating(forum_rng, truth.quality[v][t], config.rating_noise);
                const auto text = draw_text(forum_rng, rating, config.mean_post_length);
                const Date when = week_start + std::chrono::days(day(forum_rng));
                const auto a = member(forum_rng);
                const double latent = (rating - 3.0) / kLatentScale;
                if (std::bernoulli_distribution(0.45)(forum_rng)) {
                    auto body = with_name(forum_rng, text, name);
                    // Multi-vendor posts name two vendors the mention rules can see, so they
                    // drop out under the exclusive rule.
                    bool multi = false;
                    if (v >= config.n_english_vendors && n_vendors - config.n_english_vendors >= 2 &&
                        std::bernoulli_distribution(config.multi_vendor_share)(forum_rng)) {
                        std::uniform_int_distribution<std::size_t> pick(config.n_english_vendors, n_vendors - 1);
                        std::size_t other = v;
                        while (other == v) other = pick(forum_rng);
                        body = with_name(forum_rng, body, truth.vendors[other]);
                        multi = true;
                    }
                    add_post(general, members[a], false, member_posts[a], when, join_words(body));
                    if (!multi) new_mentions.emplace_back(v, latent);
                } else {
                    if (vendor_thread[v] == 0) {
                        vendor_thread[v] = add_thread(name + " review thread", "Vendor Discussion");
                    }
                    add_post(vendor_thread[v], members[a], false, member_posts[a], when, join_words(text));
                    new_mentions.emplace_back(v, latent);
                }
            }
            // Occasional self-promotion in the vendor's own thread and chatter outside the allowlist.
            if (vendor_thread[v] != 0 && std::bernoulli_distribution(0.1)(forum_rng)) {
                add_post(vendor_thread[v], name, true, std::nullopt, week_start + std::chrono::days(day(forum_rng)),
                         join_words(with_name(forum_rng, draw_text(forum_rng, 5, config.mean_post_length), name)));
            }
            if (std::bernoulli_distribution(config.offtopic_share)(forum_rng)) {
                const auto b = member(forum_rng);
                add_post(offtopic, members[b], false, member_posts[b], week_start + std::chrono::days(day(forum_rng)),
                         join_words(with_name(forum_rng, draw_text(forum_rng, 3, config.mean_post_length), name)));
            }
        }
        for (const auto& [v, latent] : new_mentions) {
            if (v < config.n_english_vendors) continue;
            forum_hist[v].sum += latent;
            ++forum_hist[v].count;
            ++truth.n_mentions;
        }
        // Review history is updated after the week so demand at t only sees earlier weeks.
        for (auto it = m.reviews.rbegin(); it != m.reviews.rend(); ++it) {
            if (it->timestamp < week_start) break;
            const auto v = static_cast<std::size_t>(
                std::find(truth.vendors.begin(), truth.vendors.end(), *it->vendor_id) - truth.vendors.begin());
            review_hist[v].sum += (*it->rating - 3.0) / kLatentScale;
            ++review_hist[v].count;
        }

        // Listing snapshots: at listing, then with probability 0.4 each week.
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& it = items[i];
            if (static_cast<int>(t) < it.first_week) continue;
            auto rng = substream(seed, kMarketListing, i * n_weeks + t);
            if (static_cast<int>(t) != it.first_week && !std::bernoulli_distribution(0.4)(rng)) continue;
            ListingSnapshot s;
            s.snapshot_id = it.id + "_s" + std::to_string(t);
            s.item_id = it.id;
            s.vendor_id = truth.vendors[it.vendor];
            s.timestamp = week_start + std::chrono::days(day(rng));
            s.price_btc = std::exp(it.log_price + 0.1 * normal(rng));
            s.nfe = std::bernoulli_distribution(0.1)(rng) ? !it.nfe : it.nfe;
            if (item_hist[i].count > 0) s.item_rating = item_hist[i].sum / static_cast<double>(item_hist[i].count);
            if (review_hist[it.vendor].count > 0 && std::bernoulli_distribution(0.8)(rng)) {
                s.vendor_rating = 3.0 + kLatentScale * review_hist[it.vendor].mean();
            }
            s.volume_category = volume_category(vendor_sold[it.vendor]);
            s.title = join_words(it.title);
            std::vector<std::string> desc;
            const int len = std::uniform_int_distribution<int>(15, 40)(rng);
            for (int k = 0; k < len; ++k) {
                desc.push_back(std::bernoulli_distribution(0.5)(rng) ? category_token(it.category, category_word(rng))
                                                                      : generic_token(generic_word(rng)));
            }
            s.description = join_words(desc);
            m.listings.push_back(std::move(s));
        }
    }
    return m;
}

}  // namespace textdemand
