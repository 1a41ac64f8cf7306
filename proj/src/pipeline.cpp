#include "textdemand/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "textdemand/errors.hpp"
#include "textdemand/hashing.hpp"

namespace textdemand {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kStageNames[] = {"synth", "prep", "fit-sentiment", "score", "mentions",
                                       "panel", "pcs",  "regress",       "report"};

// ---- config parsing ----

class ConfigReader {
public:
    explicit ConfigReader(std::vector<Diagnostic>& diags) : diags_(diags) {}

    void add(std::string code, std::string message) { diags_.push_back({std::move(code), std::move(message)}); }

    // Reads `obj[key]` into `out` when present; records E_BAD_VALUE on a type error.
    template <typename T>
    bool get(const json& obj, const std::string& where, const char* key, T& out) {
        auto it = obj.find(key);
        if (it == obj.end()) return false;
        try {
            out = it->template get<T>();
            return true;
        } catch (const json::exception&) {
            add("E_BAD_VALUE", where + "." + key + ": expected " + type_name<T>() + ", got " + it->dump());
            return false;
        }
    }

    // Flags keys outside `known`.
    void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
        for (const auto& [key, value] : obj.items()) {
            if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
                add("E_UNKNOWN_KEY", where.empty() ? "unknown key '" + key + "'" : where + ": unknown key '" + key + "'");
            }
        }
    }

    bool object(const json& parent, const char* key, const json*& out) {
        auto it = parent.find(key);
        if (it == parent.end()) return false;
        if (!it->is_object()) {
            add("E_BAD_VALUE", std::string(key) + " must be an object");
            return false;
        }
        out = &*it;
        return true;
    }

private:
    template <typename T>
    static std::string type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else return "a list";
    }

    std::vector<Diagnostic>& diags_;
};

std::optional<Date> read_date(ConfigReader& r, const json& obj, const std::string& where, const char* key) {
    std::string text;
    if (!r.get(obj, where, key, text)) return std::nullopt;
    try {
        return parse_date(text);
    } catch (const InvalidInput& e) {
        r.add("E_BAD_DATE", where + "." + key + ": " + e.what());
        return std::nullopt;
    }
}

std::vector<std::string> base_panel_columns() {
    return {"sales",         "avg_vendor_review_sent", "log_n_reviews",         "zero_reviews_flag",
            "avg_vendor_forum_sent", "log_n_mentions", "zero_mentions_flag",    "item_rating",
            "item_rating_missing",   "log_price",      "nfe_flag",              "vendor_rating",
            "vendor_rating_missing"};
}

// Columns the panel stage will produce for this config, apart from the
// data-dependent volume indicators (vol_*).
std::set<std::string> predicted_columns(const PipelineConfig& c) {
    auto base = base_panel_columns();
    std::set<std::string> out(base.begin(), base.end());
    const auto& s = c.interactions;
    for (const auto& [a, b] : s.products) out.insert(a + ":" + b);
    auto rolling = [&](const std::string& avg, const std::string& log_n, const std::string& flag) {
        out.insert(avg);
        out.insert(log_n);
        out.insert(flag);
    };
    if (s.experience_split) {
        for (const char* lvl : {"experienced", "inexperienced"}) {
            const std::string l = lvl;
            rolling("avg_review_sent_" + l, "log_n_reviews_" + l, "zero_reviews_" + l + "_flag");
            rolling("avg_forum_sent_" + l, "log_n_mentions_" + l, "zero_mentions_" + l + "_flag");
        }
    }
    if (s.finalize_split) {
        for (const char* base_col : {"avg_vendor_review_sent", "avg_vendor_forum_sent"}) {
            out.insert(std::string(base_col) + ":nfe");
            out.insert(std::string(base_col) + ":fe");
        }
    }
    if (s.own_other) {
        rolling("avg_own_review_sent", "log_n_own_reviews", "zero_own_reviews_flag");
        rolling("avg_other_review_sent", "log_n_other_reviews", "zero_other_reviews_flag");
    }
    for (int k = 1; k <= c.k_pcs; ++k) out.insert("pc_" + std::to_string(k));
    return out;
}

bool is_key_column(const std::string& name) {
    return name == "item_id" || name == "vendor_id" || name == "week" || name == "snapshot_id";
}

bool needs_pcs(const PipelineConfig& c) {
    for (const auto& col : c.regressions) {
        if (col.item_controls && c.k_pcs > 0) return true;
        for (const auto* list : {&col.spec.regressors, &col.extra}) {
            for (const auto& r : *list)
                if (r.rfind("pc_", 0) == 0) return true;
        }
    }
    return false;
}

json regression_json(const RegressionColumn& c) {
    json j = json::parse(c.spec.to_json());
    j["extra"] = c.extra;
    j["item_controls"] = c.item_controls;
    j["vendor_controls"] = c.vendor_controls;
    return j;
}

// ---- artifact helpers ----

// Freshness checks walk the upstream graph and revisit the same files.
std::string file_hash(const std::string& path) {
    struct Entry {
        fs::file_time_type mtime;
        std::uintmax_t size;
        std::string hash;
    };
    static std::map<std::string, Entry> cache;
    const auto mtime = fs::last_write_time(path);
    const auto size = fs::file_size(path);
    auto it = cache.find(path);
    if (it != cache.end() && it->second.mtime == mtime && it->second.size == size) return it->second.hash;
    auto hash = sha256_file(path);
    cache[path] = {mtime, size, hash};
    return hash;
}

std::string with_config_hash(std::string_view artifact_json, const std::string& hash) {
    json j = json::parse(artifact_json);
    j["config_hash"] = hash;
    return j.dump(1) + "\n";
}

std::string tokens_to_jsonl(const std::vector<Document>& docs) {
    std::string out;
    for (const auto& d : docs) {
        json j = json::object();
        j["id"] = d.doc_id;
        if (d.rating) j["rating"] = *d.rating;
        j["tokens"] = d.tokens;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<Document> parse_tokens_jsonl(std::string_view text, DocKind kind) {
    std::vector<Document> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            Document d;
            d.doc_id = j.at("id").get<std::string>();
            d.kind = kind;
            if (auto r = j.find("rating"); r != j.end()) d.rating = r->get<int>();
            d.tokens = j.at("tokens").get<std::vector<std::string>>();
            out.push_back(std::move(d));
        } catch (const json::exception& e) {
            throw InvalidInput("tokens line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::string scores_to_csv(const std::vector<SentimentScore>& scores) {
    std::string out = "doc_id,raw_score,standardized,informative\n";
    for (const auto& s : scores) {
        out += s.doc_id + ',' + format_double(s.raw_score) + ',' +
               (s.standardized ? format_double(*s.standardized) : std::string()) + ',' + (s.informative ? "1" : "0") +
               '\n';
    }
    return out;
}

std::vector<SentimentScore> scores_from_csv(std::string_view text) {
    std::vector<SentimentScore> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::getline(in, line);
    if (line != "doc_id,raw_score,standardized,informative") throw InvalidInput("scores CSV: bad header");
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() == 3) f.emplace_back();
        if (f.size() != 4) throw InvalidInput("scores CSV line " + std::to_string(n) + ": expected 4 fields");
        SentimentScore s;
        s.doc_id = f[0];
        try {
            s.raw_score = std::stod(f[1]);
            if (!f[2].empty()) s.standardized = std::stod(f[2]);
        } catch (const std::exception&) {
            throw InvalidInput("scores CSV line " + std::to_string(n) + ": bad number");
        }
        s.informative = f[3] == "1";
        out.push_back(std::move(s));
    }
    return out;
}

std::string components_to_csv(const TextComponents& pcs) {
    std::string out = "snapshot_id";
    for (Eigen::Index c = 0; c < pcs.scores.cols(); ++c) out += ",pc_" + std::to_string(c + 1);
    out += '\n';
    for (std::size_t r = 0; r < pcs.snapshot_ids.size(); ++r) {
        out += pcs.snapshot_ids[r];
        for (Eigen::Index c = 0; c < pcs.scores.cols(); ++c) {
            out += ',' + format_double(pcs.scores(static_cast<Eigen::Index>(r), c));
        }
        out += '\n';
    }
    return out;
}

TextComponents components_from_csv(std::string_view text) {
    TextComponents pcs;
    std::istringstream in{std::string(text)};
    std::string line;
    std::getline(in, line);
    const auto k = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        pcs.snapshot_ids.push_back(cell);
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        if (static_cast<Eigen::Index>(v.size()) != k) throw InvalidInput("components CSV: ragged row for " + pcs.snapshot_ids.back());
        rows.push_back(std::move(v));
    }
    pcs.scores.resize(static_cast<Eigen::Index>(rows.size()), k);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (Eigen::Index c = 0; c < k; ++c) pcs.scores(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    return pcs;
}

std::vector<Document> post_documents(const std::vector<ForumPost>& posts) {
    std::vector<Document> out;
    out.reserve(posts.size());
    for (const auto& p : posts) {
        Document d;
        d.doc_id = std::to_string(p.post_id);
        d.kind = DocKind::forum_post;
        d.raw_text = p.raw_text;
        d.author_id = p.author_id;
        d.timestamp = p.timestamp;
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace

// ---- stages and config ----

std::string_view to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

std::optional<Stage> stage_from_string(std::string_view s) {
    for (int i = 0; i < 9; ++i)
        if (s == kStageNames[i]) return static_cast<Stage>(i);
    return std::nullopt;
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages = {Stage::synth, Stage::prep, Stage::fit_sentiment,
                                              Stage::score, Stage::mentions, Stage::panel,
                                              Stage::pcs,   Stage::regress,  Stage::report};
    return stages;
}

std::string PipelineConfig::resolve(const std::string& path) const {
    if (path.empty()) return path;
    const fs::path p(path);
    return (p.is_absolute() ? p : fs::path(base_dir) / p).lexically_normal().string();
}

std::string PipelineConfig::stage_dir(Stage s) const { return (fs::path(resolve(output_dir)) / std::string(to_string(s))).string(); }

std::string PipelineConfig::section(Stage s) const {
    json j;
    j["stage"] = std::string(to_string(s));
    auto window_json = [&] { return json{{"start", format_date(window.start)}, {"end", format_date(window.end)}}; };
    switch (s) {
    case Stage::synth:
        j["synth"] = synth ? json::parse(synth->to_json()) : json(nullptr);
        break;
    case Stage::prep:
        j["min_count"] = min_count;
        j["listing_min_count"] = listing_min_count;
        j["stopwords"] = inputs.stopwords.empty() ? "shipped" : "file";
        break;
    case Stage::fit_sentiment:
        j["n_segments"] = sentiment.n_segments;
        j["selection"] = sentiment.selection == SegmentSelection::per_word ? "per_word" : "global";
        j["concavity"] = sentiment.concavity;
        j["lambda_min_ratio"] = sentiment.lambda_min_ratio;
        j["tolerance"] = sentiment.tolerance;
        j["max_sweeps"] = sentiment.max_sweeps;
        break;
    case Stage::score:
        break;
    case Stage::mentions:
        j["mode"] = std::string(to_string(mention_mode));
        j["subforums"] = subforums;
        j["manual_exclusions"] = manual_exclusions;
        j["window"] = window_json();
        j["english_words"] = inputs.english_words.empty() ? "shipped" : "file";
        break;
    case Stage::panel: {
        j["window"] = window_json();
        j["exclude_english_vendors"] = exclude_english_vendors;
        j["manual_exclusions"] = manual_exclusions;
        json products = json::array();
        for (const auto& [a, b] : interactions.products) products.push_back({a, b});
        j["interactions"] = {{"products", products},
                             {"experience_split", interactions.experience_split},
                             {"buyer_threshold", interactions.buyer_threshold},
                             {"author_threshold", interactions.author_threshold},
                             {"finalize_split", interactions.finalize_split},
                             {"own_other", interactions.own_other}};
        break;
    }
    case Stage::pcs:
        j["k"] = k_pcs;
        j["seed"] = pc_seed;
        break;
    case Stage::regress: {
        json cols = json::array();
        for (const auto& c : regressions) cols.push_back(regression_json(c));
        j["regressions"] = cols;
        j["k"] = k_pcs;
        break;
    }
    case Stage::report: {
        j["title"] = report_title;
        json tests = json::array();
        for (const auto& t : equality_tests) tests.push_back({t.label, t.coef_a, t.coef_b});
        j["equality_tests"] = tests;
        break;
    }
    }
    return j.dump();
}

std::string PipelineConfig::section_hash(Stage s) const { return sha256_hex(section(s)); }

ParsedConfig parse_config(std::string_view text, const std::string& base_dir, const std::string& output_override) {
    ParsedConfig result;
    auto& diags = result.diagnostics;
    ConfigReader r(diags);
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        r.add("E_PARSE", std::string("config is not valid JSON: ") + e.what());
        return result;
    }
    if (!root.is_object()) {
        r.add("E_PARSE", "config must be a JSON object");
        return result;
    }
    r.check_keys(root, "", {"output_dir", "synth", "inputs", "window", "text", "sentiment", "mentions", "panel", "pcs",
                            "regressions", "report"});

    PipelineConfig c;
    c.base_dir = base_dir.empty() ? "." : base_dir;
    r.get(root, "config", "output_dir", c.output_dir);
    if (!output_override.empty()) c.output_dir = output_override;
    if (c.output_dir.empty()) r.add("E_BAD_VALUE", "output_dir must not be empty");

    if (auto it = root.find("synth"); it != root.end()) {
        try {
            c.synth = MarketConfig::from_json(it->dump());
        } catch (const Error& e) {
            r.add("E_BAD_VALUE", std::string("synth: ") + e.what());
        }
    }

    const json* inputs = nullptr;
    if (r.object(root, "inputs", inputs)) {
        r.check_keys(*inputs, "inputs", {"reviews", "threads", "posts", "listings", "roster", "english_words", "stopwords"});
        r.get(*inputs, "inputs", "reviews", c.inputs.reviews);
        r.get(*inputs, "inputs", "threads", c.inputs.threads);
        r.get(*inputs, "inputs", "posts", c.inputs.posts);
        r.get(*inputs, "inputs", "listings", c.inputs.listings);
        r.get(*inputs, "inputs", "roster", c.inputs.roster);
        r.get(*inputs, "inputs", "english_words", c.inputs.english_words);
        r.get(*inputs, "inputs", "stopwords", c.inputs.stopwords);
    }
    if (c.synth) {
        if (!c.inputs.reviews.empty() || !c.inputs.threads.empty() || !c.inputs.posts.empty() ||
            !c.inputs.listings.empty() || !c.inputs.roster.empty()) {
            r.add("E_CONFLICT", "inputs.{reviews,threads,posts,listings,roster} come from the synth stage when a synth section is present");
        }
        const fs::path dir = fs::path(c.output_dir) / "synth";
        c.inputs.reviews = (dir / "reviews.jsonl").string();
        c.inputs.threads = (dir / "threads.jsonl").string();
        c.inputs.posts = (dir / "posts.jsonl").string();
        c.inputs.listings = (dir / "listings.jsonl").string();
        c.inputs.roster = (dir / "roster.txt").string();
    } else {
        for (auto [name, value] : {std::pair<const char*, const std::string*>{"reviews", &c.inputs.reviews},
                                   {"threads", &c.inputs.threads},
                                   {"posts", &c.inputs.posts},
                                   {"listings", &c.inputs.listings},
                                   {"roster", &c.inputs.roster}}) {
            if (value->empty()) r.add("E_MISSING_INPUT", std::string("inputs.") + name + " is required without a synth section");
        }
    }

    const json* window = nullptr;
    if (r.object(root, "window", window)) {
        r.check_keys(*window, "window", {"start", "end", "weeks"});
        const auto start = read_date(r, *window, "window", "start");
        if (!window->contains("start")) r.add("E_MISSING_WINDOW", "window.start is required");
        if (window->contains("end") == window->contains("weeks")) {
            r.add("E_MISSING_WINDOW", "window needs exactly one of end or weeks");
        }
        std::optional<Date> end = read_date(r, *window, "window", "end");
        int weeks = -1;
        if (r.get(*window, "window", "weeks", weeks) && weeks <= 0) {
            r.add("E_EMPTY_WINDOW", "window.weeks must be positive, got " + std::to_string(weeks));
        }
        if (start) {
            c.window.start = *start;
            if (end) {
                if (*end < *start) r.add("E_EMPTY_WINDOW", "window.end is before window.start");
                c.window.end = *end;
            } else if (weeks > 0) {
                c.window.end = *start + std::chrono::days(7 * weeks - 1);
            }
        }
    } else if (c.synth) {
        c.window.start = c.synth->start;
        c.window.end = c.synth->start + std::chrono::days(7 * c.synth->n_weeks - 1);
    } else {
        r.add("E_MISSING_WINDOW", "window is required without a synth section");
    }

    const json* text_cfg = nullptr;
    if (r.object(root, "text", text_cfg)) {
        r.check_keys(*text_cfg, "text", {"min_count", "listing_min_count"});
        r.get(*text_cfg, "text", "min_count", c.min_count);
        r.get(*text_cfg, "text", "listing_min_count", c.listing_min_count);
        if (c.min_count < 1 || c.listing_min_count < 1) r.add("E_BAD_VALUE", "text min counts must be at least 1");
    }

    const json* sent = nullptr;
    if (r.object(root, "sentiment", sent)) {
        r.check_keys(*sent, "sentiment", {"n_segments", "concavity", "selection", "lambda_min_ratio"});
        r.get(*sent, "sentiment", "n_segments", c.sentiment.n_segments);
        r.get(*sent, "sentiment", "concavity", c.sentiment.concavity);
        r.get(*sent, "sentiment", "lambda_min_ratio", c.sentiment.lambda_min_ratio);
        std::string sel;
        if (r.get(*sent, "sentiment", "selection", sel)) {
            if (sel == "per_word") c.sentiment.selection = SegmentSelection::per_word;
            else if (sel == "global") c.sentiment.selection = SegmentSelection::global;
            else r.add("E_BAD_VALUE", "sentiment.selection must be per_word or global");
        }
        if (c.sentiment.n_segments < 1) r.add("E_BAD_VALUE", "sentiment.n_segments must be at least 1");
        if (c.sentiment.concavity < 0.0) r.add("E_BAD_VALUE", "sentiment.concavity must be nonnegative");
        if (!(c.sentiment.lambda_min_ratio > 0.0 && c.sentiment.lambda_min_ratio < 1.0)) {
            r.add("E_BAD_VALUE", "sentiment.lambda_min_ratio must lie in (0, 1)");
        }
    }

    const json* men = nullptr;
    if (r.object(root, "mentions", men)) {
        r.check_keys(*men, "mentions", {"mode", "subforums", "manual_exclusions"});
        std::string mode;
        if (r.get(*men, "mentions", "mode", mode)) {
            try {
                c.mention_mode = mention_mode_from_string(mode);
            } catch (const InvalidInput&) {
                r.add("E_BAD_VALUE", "mentions.mode must be exclusive or duplicate");
            }
        }
        r.get(*men, "mentions", "subforums", c.subforums);
        r.get(*men, "mentions", "manual_exclusions", c.manual_exclusions);
    }

    const json* pan = nullptr;
    if (r.object(root, "panel", pan)) {
        r.check_keys(*pan, "panel", {"exclude_english_vendors", "interactions"});
        r.get(*pan, "panel", "exclude_english_vendors", c.exclude_english_vendors);
        const json* inter = nullptr;
        if (r.object(*pan, "interactions", inter)) {
            r.check_keys(*inter, "panel.interactions",
                         {"products", "experience_split", "buyer_threshold", "author_threshold", "finalize_split", "own_other"});
            std::vector<std::vector<std::string>> products;
            if (r.get(*inter, "panel.interactions", "products", products)) {
                for (const auto& p : products) {
                    if (p.size() != 2) r.add("E_BAD_VALUE", "panel.interactions.products entries must be [a, b] pairs");
                    else c.interactions.products.emplace_back(p[0], p[1]);
                }
            }
            r.get(*inter, "panel.interactions", "experience_split", c.interactions.experience_split);
            r.get(*inter, "panel.interactions", "buyer_threshold", c.interactions.buyer_threshold);
            r.get(*inter, "panel.interactions", "author_threshold", c.interactions.author_threshold);
            r.get(*inter, "panel.interactions", "finalize_split", c.interactions.finalize_split);
            r.get(*inter, "panel.interactions", "own_other", c.interactions.own_other);
        }
    }

    const json* pcs = nullptr;
    if (r.object(root, "pcs", pcs)) {
        r.check_keys(*pcs, "pcs", {"k", "seed"});
        r.get(*pcs, "pcs", "k", c.k_pcs);
        r.get(*pcs, "pcs", "seed", c.pc_seed);
        if (c.k_pcs < 1) r.add("E_K_BOUNDS", "pcs.k must be at least 1, got " + std::to_string(c.k_pcs));
    }

    if (auto it = root.find("regressions"); it != root.end() && it->is_array() && !it->empty()) {
        std::set<std::string> labels;
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto& rj = (*it)[i];
            const std::string where = "regressions[" + std::to_string(i) + "]";
            if (!rj.is_object()) {
                r.add("E_BAD_VALUE", where + " must be an object");
                continue;
            }
            r.check_keys(rj, where, {"label", "family", "dependent", "regressors", "extra", "item_controls",
                                     "vendor_controls", "time_fe", "group_key", "cluster_key"});
            RegressionColumn col;
            col.spec.label = "(" + std::to_string(i + 1) + ")";
            r.get(rj, where, "label", col.spec.label);
            std::string family = "poisson_fe";
            r.get(rj, where, "family", family);
            try {
                col.spec.family = family_from_string(family);
            } catch (const InvalidInput&) {
                r.add("E_BAD_FAMILY", where + ": unknown family '" + family + "'");
            }
            r.get(rj, where, "dependent", col.spec.dependent);
            r.get(rj, where, "regressors", col.spec.regressors);
            r.get(rj, where, "extra", col.extra);
            r.get(rj, where, "item_controls", col.item_controls);
            r.get(rj, where, "vendor_controls", col.vendor_controls);
            r.get(rj, where, "time_fe", col.spec.time_dummies);
            r.get(rj, where, "group_key", col.spec.group_key);
            r.get(rj, where, "cluster_key", col.spec.cluster_key);
            if (col.spec.regressors.empty()) r.add("E_NO_REGRESSORS", where + " lists no regressors");
            if (!labels.insert(col.spec.label).second) r.add("E_BAD_VALUE", where + ": duplicate label " + col.spec.label);
            c.regressions.push_back(std::move(col));
        }
    } else {
        r.add("E_NO_REGRESSIONS", "regressions must be a nonempty list");
    }

    const json* rep = nullptr;
    if (r.object(root, "report", rep)) {
        r.check_keys(*rep, "report", {"title", "equality_tests"});
        r.get(*rep, "report", "title", c.report_title);
        if (auto it = rep->find("equality_tests"); it != rep->end()) {
            if (!it->is_array()) r.add("E_BAD_VALUE", "report.equality_tests must be a list");
            else {
                for (const auto& t : *it) {
                    EqualityTest e;
                    if (!t.is_object() || !r.get(t, "report.equality_tests", "label", e.label) ||
                        !r.get(t, "report.equality_tests", "a", e.coef_a) ||
                        !r.get(t, "report.equality_tests", "b", e.coef_b)) {
                        r.add("E_BAD_VALUE", "report.equality_tests entries need label, a and b");
                        continue;
                    }
                    c.equality_tests.push_back(std::move(e));
                }
            }
        }
    }

    // Regression columns against the predicted panel columns.
    const auto known = predicted_columns(c);
    for (const auto& col : c.regressions) {
        for (const auto* list : {&col.spec.regressors, &col.extra}) {
            for (const auto& name : *list) {
                if (!known.count(name) && name.rfind("vol_", 0) != 0) {
                    r.add("E_UNKNOWN_COLUMN", col.spec.label + ": unknown column '" + name + "'");
                }
            }
        }
        if (!known.count(col.spec.dependent)) r.add("E_UNKNOWN_COLUMN", col.spec.label + ": unknown dependent '" + col.spec.dependent + "'");
        for (const auto* key : {&col.spec.group_key, &col.spec.cluster_key}) {
            if (!is_key_column(*key) && !known.count(*key)) r.add("E_UNKNOWN_COLUMN", col.spec.label + ": unknown key '" + *key + "'");
        }
    }
    for (const auto& [a, b] : c.interactions.products) {
        for (const auto& name : {a, b}) {
            if (!known.count(name)) r.add("E_UNKNOWN_COLUMN", "panel.interactions: unknown column '" + name + "'");
        }
    }

    if (diags.empty()) result.config = std::move(c);
    return result;
}

std::vector<Diagnostic> validate_config(std::string_view text, const std::string& base_dir,
                                        const std::string& output_override, bool inspect_artifacts) {
    auto parsed = parse_config(text, base_dir, output_override);
    if (!parsed.config) return parsed.diagnostics;
    std::vector<Diagnostic> diags;
    const auto& c = *parsed.config;

    std::size_t n_snapshots = 0;
    bool know_snapshots = false;
    if (c.synth) {
        try {
            n_snapshots = gen_market(*c.synth).listings.size();
            know_snapshots = true;
        } catch (const Error& e) {
            diags.push_back({"E_BAD_VALUE", std::string("synth: ") + e.what()});
        }
    } else {
        for (auto [name, path] : {std::pair<const char*, std::string>{"reviews", c.inputs.reviews},
                                  {"threads", c.inputs.threads},
                                  {"posts", c.inputs.posts},
                                  {"listings", c.inputs.listings},
                                  {"roster", c.inputs.roster}}) {
            if (!fs::exists(c.resolve(path))) {
                diags.push_back({"E_MISSING_PATH", std::string("inputs.") + name + ": no such file " + c.resolve(path)});
            }
        }
        if (fs::exists(c.resolve(c.inputs.listings))) {
            try {
                n_snapshots = parse_listings_jsonl(read_file(c.resolve(c.inputs.listings))).size();
                know_snapshots = true;
            } catch (const Error& e) {
                diags.push_back({"E_BAD_INPUT", std::string("inputs.listings: ") + e.what()});
            }
        }
    }
    for (auto [name, path] : {std::pair<const char*, std::string>{"english_words", c.inputs.english_words},
                              {"stopwords", c.inputs.stopwords}}) {
        if (!path.empty() && !fs::exists(c.resolve(path))) {
            diags.push_back({"E_MISSING_PATH", std::string("inputs.") + name + ": no such file " + c.resolve(path)});
        }
    }
    if (!needs_pcs(c)) know_snapshots = false;
    if (know_snapshots && static_cast<std::size_t>(c.k_pcs) > n_snapshots) {
        diags.push_back({"E_K_BOUNDS", "pcs.k = " + std::to_string(c.k_pcs) + " exceeds the " +
                                           std::to_string(n_snapshots) + " listing snapshots"});
    }
    if (!inspect_artifacts) return diags;
    // Tighter bound once the listing vocabularies exist.
    const fs::path prep = c.stage_dir(Stage::prep);
    if (needs_pcs(c) && fs::exists(prep / "title_vocab.csv") && fs::exists(prep / "desc_vocab.csv")) {
        try {
            const auto cols = Vocabulary::from_csv(read_file((prep / "title_vocab.csv").string())).size() +
                              Vocabulary::from_csv(read_file((prep / "desc_vocab.csv").string())).size();
            if (static_cast<std::size_t>(c.k_pcs) > cols) {
                diags.push_back({"E_K_BOUNDS", "pcs.k = " + std::to_string(c.k_pcs) + " exceeds the " +
                                                   std::to_string(cols) + " listing text columns"});
            }
        } catch (const Error&) {
        }
    }
    // Data-dependent columns once a panel exists.
    const fs::path panel = c.stage_dir(Stage::panel);
    if (fs::exists(panel / "panel.schema.csv")) {
        std::set<std::string> present;
        for (int k = 1; k <= c.k_pcs; ++k) present.insert("pc_" + std::to_string(k));
        std::istringstream in(read_file((panel / "panel.schema.csv").string()));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) present.insert(line.substr(0, line.find(',')));
        for (const auto& col : c.regressions) {
            for (const auto* list : {&col.spec.regressors, &col.extra}) {
                for (const auto& name : *list) {
                    if (name.rfind("vol_", 0) == 0 && !present.count(name)) {
                        diags.push_back({"E_UNKNOWN_COLUMN", col.spec.label + ": panel has no column '" + name + "'"});
                    }
                }
            }
        }
    }
    return diags;
}

// ---- in-memory stages ----

RawInputs inputs_from_market(const Market& market) {
    RawInputs in;
    in.reviews = market.reviews;
    in.threads = market.threads;
    in.posts = market.posts;
    in.listings = market.listings;
    in.roster = market.roster;
    in.english_words = default_english_words();
    in.stopwords = default_stopwords();
    return in;
}

RawInputs load_inputs(const PipelineConfig& c) {
    RawInputs in;
    in.reviews = parse_documents_jsonl(read_file(c.resolve(c.inputs.reviews)));
    in.threads = parse_threads_jsonl(read_file(c.resolve(c.inputs.threads)));
    in.posts = parse_posts_jsonl(read_file(c.resolve(c.inputs.posts)));
    in.listings = parse_listings_jsonl(read_file(c.resolve(c.inputs.listings)));
    in.roster = parse_roster(read_file(c.resolve(c.inputs.roster)));
    in.english_words = c.inputs.english_words.empty() ? default_english_words()
                                                      : load_word_list(c.resolve(c.inputs.english_words));
    in.stopwords = c.inputs.stopwords.empty() ? default_stopwords() : load_word_list(c.resolve(c.inputs.stopwords));
    return in;
}

PreparedText prepare_text(const RawInputs& in, const PipelineConfig& config) {
    PreparedText t;
    t.reviews = in.reviews;
    preprocess_all(t.reviews, in.stopwords);
    t.posts = post_documents(in.posts);
    preprocess_all(t.posts, in.stopwords);
    for (const auto& s : in.listings) {
        Document title;
        title.doc_id = s.snapshot_id;
        title.kind = DocKind::listing_title;
        title.raw_text = s.title;
        title.timestamp = s.timestamp;
        Document desc = title;
        desc.kind = DocKind::listing_desc;
        desc.raw_text = s.description;
        t.titles.push_back(std::move(title));
        t.descs.push_back(std::move(desc));
    }
    preprocess_all(t.titles, in.stopwords);
    preprocess_all(t.descs, in.stopwords);
    t.review_vocab = Vocabulary::build(t.reviews, config.min_count);
    t.title_vocab = Vocabulary::build(t.titles, config.listing_min_count);
    t.desc_vocab = Vocabulary::build(t.descs, config.listing_min_count);
    return t;
}

MnirModel fit_sentiment(const PreparedText& text, const PipelineConfig& config) {
    return fit_mnir(collapse_counts(text.reviews, text.review_vocab), config.sentiment);
}

TextScores score_text(const PreparedText& text, const MnirModel& model) {
    TextScores s;
    s.reviews = score(frequency_matrix(text.reviews, text.review_vocab), model);
    s.review_standardizer = standardize_scores(s.reviews);
    s.posts = project_onto_forum(text.posts, text.review_vocab, model).scores;
    return s;
}

MentionResult find_mentions(const RawInputs& in, const PipelineConfig& config) {
    MentionOptions opt;
    opt.mode = config.mention_mode;
    opt.allowed_subforums = config.subforums;
    opt.manual_exclusions = config.manual_exclusions;
    opt.window = config.window;
    return detect_mentions(in.threads, in.posts, in.roster, in.english_words, opt);
}

namespace {

PanelInputs panel_inputs(const RawInputs& in, const TextScores& scores, const MentionResult& mentions) {
    PanelInputs p;
    std::unordered_map<std::string, double> review_score;
    for (const auto& s : scores.reviews) review_score[s.doc_id] = s.standardized.value_or(0.0);
    for (const auto& d : in.reviews) {
        ReviewEvent e;
        e.doc_id = d.doc_id;
        const auto item = d.extra_field("item_id");
        if (!item || !d.vendor_id) throw InvalidInput("review " + d.doc_id + " lacks item_id or vendor_id");
        e.item_id = *item;
        e.vendor_id = *d.vendor_id;
        e.timestamp = d.timestamp;
        auto it = review_score.find(d.doc_id);
        if (it == review_score.end()) throw InvalidInput("review " + d.doc_id + " has no score");
        e.score = it->second;
        if (auto deals = d.extra_field("buyer_deals")) {
            try {
                e.buyer_deals = std::stoi(*deals);
            } catch (const std::exception&) {
                throw InvalidInput("review " + d.doc_id + ": buyer_deals is not an integer");
            }
        }
        p.reviews.push_back(std::move(e));
    }

    // Forum scores are standardized over the distinct posts carrying a mention.
    std::unordered_map<std::string, const SentimentScore*> post_score;
    for (const auto& s : scores.posts) post_score[s.doc_id] = &s;
    std::unordered_map<std::int64_t, const ForumPost*> post_by_id;
    for (const auto& post : in.posts) post_by_id[post.post_id] = &post;
    std::vector<SentimentScore> mention_scores;
    std::set<std::int64_t> seen;
    for (const auto& m : mentions.mentions) {
        if (!seen.insert(m.post_id).second) continue;
        auto it = post_score.find(std::to_string(m.post_id));
        if (it == post_score.end()) throw InvalidInput("mention post " + std::to_string(m.post_id) + " has no score");
        mention_scores.push_back(*it->second);
    }
    if (!mention_scores.empty()) standardize_scores(mention_scores);
    std::unordered_map<std::string, double> standardized;
    for (const auto& s : mention_scores) standardized[s.doc_id] = s.standardized.value_or(0.0);
    for (const auto& m : mentions.mentions) {
        const auto* post = post_by_id.at(m.post_id);
        MentionEvent e;
        e.post_id = m.post_id;
        e.vendor_id = m.vendor_id;
        e.timestamp = post->timestamp;
        e.score = standardized.at(std::to_string(m.post_id));
        e.author_post_count = post->author_post_count;
        p.mentions.push_back(std::move(e));
    }
    p.listings = in.listings;
    return p;
}

PanelConfig panel_config(const RawInputs& in, const PipelineConfig& config) {
    PanelConfig pc;
    pc.window = config.window;
    if (config.exclude_english_vendors) {
        for (const auto& v : in.roster)
            if (in.english_words.count(to_lower(v))) pc.excluded_vendors.insert(v);
    }
    for (const auto& v : config.manual_exclusions) pc.excluded_vendors.insert(v);
    return pc;
}

bool any_interactions(const InteractionSpec& s) {
    return !s.products.empty() || s.experience_split || s.finalize_split || s.own_other;
}

}  // namespace

PanelBuild build_panel(const RawInputs& in, const TextScores& scores, const MentionResult& mentions,
                       const PipelineConfig& config) {
    const auto inputs = panel_inputs(in, scores, mentions);
    const auto pc = panel_config(in, config);
    auto build = assemble_panel(inputs, pc);
    if (any_interactions(config.interactions)) {
        attach_interactions(build.table, config.interactions, inputs, pc);
        build.summary = [&] {
            auto s = summarize_panel(build.table);
            auto full = build.summary;
            full.columns = s.columns;
            return full;
        }();
    }
    return build;
}

TextComponents compute_text_components(const PreparedText& text, const PipelineConfig& config) {
    const auto joint =
        build_joint_matrix(frequency_matrix(text.titles, text.title_vocab), frequency_matrix(text.descs, text.desc_vocab));
    TsvdOptions opt;
    opt.seed = config.pc_seed;
    TextComponents out;
    out.basis = fit_tsvd(joint, config.k_pcs, opt);
    out.scores = project(joint, out.basis);
    out.snapshot_ids = joint.row_ids;
    out.n_flagged = joint.n_flagged();
    return out;
}

void attach_components(PanelTable& panel, const TextComponents& pcs) {
    std::unordered_map<std::string, Eigen::Index> row;
    for (std::size_t i = 0; i < pcs.snapshot_ids.size(); ++i) row[pcs.snapshot_ids[i]] = static_cast<Eigen::Index>(i);
    const auto k = pcs.scores.cols();
    std::vector<std::vector<double>> cols(static_cast<std::size_t>(k), std::vector<double>(panel.n_rows()));
    for (std::size_t r = 0; r < panel.n_rows(); ++r) {
        auto it = row.find(panel.snapshot_ids[r]);
        if (it == row.end()) throw InvalidInput("no text components for snapshot " + panel.snapshot_ids[r]);
        for (Eigen::Index c = 0; c < k; ++c) cols[static_cast<std::size_t>(c)][r] = pcs.scores(it->second, c);
    }
    for (Eigen::Index c = 0; c < k; ++c) {
        panel.set_column({"pc_" + std::to_string(c + 1), ColumnRole::text_pc, ""}, std::move(cols[static_cast<std::size_t>(c)]));
    }
}

std::vector<std::string> expand_regressors(const RegressionColumn& column, const PanelTable& panel, int k_pcs) {
    std::vector<std::string> out;
    auto add = [&](const std::string& name) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    };
    for (const auto& r : column.spec.regressors) add(r);
    for (const auto& r : column.extra) add(r);
    if (column.item_controls) {
        for (const char* r : {"item_rating", "item_rating_missing", "log_price", "nfe_flag"}) add(r);
        for (int k = 1; k <= k_pcs; ++k) add("pc_" + std::to_string(k));
    }
    if (column.vendor_controls) {
        for (const char* r : {"vendor_rating", "vendor_rating_missing"}) add(r);
        for (const auto& info : panel.columns())
            if (info.name.rfind("vol_", 0) == 0) add(info.name);
    }
    return out;
}

std::vector<FitResult> run_regressions(const PanelTable& panel, const PipelineConfig& config) {
    std::vector<FitResult> fits;
    for (const auto& col : config.regressions) {
        auto spec = col.spec;
        spec.regressors = expand_regressors(col, panel, config.k_pcs);
        try {
            fits.push_back(fit(panel, spec));
        } catch (const Error& e) {
            throw Error("regression " + col.spec.label + ": " + e.what());
        }
    }
    return fits;
}

RegressionTable make_report(const std::vector<FitResult>& fits, const PipelineConfig& config) {
    std::vector<std::vector<std::string>> displayed;
    std::vector<ColumnToggles> toggles;
    for (const auto& col : config.regressions) {
        displayed.push_back(col.spec.regressors);
        toggles.push_back({col.item_controls, col.vendor_controls, col.spec.time_dummies});
    }
    return build_table(fits, displayed, toggles, config.equality_tests, config.report_title);
}

PipelineResult run_in_memory(const RawInputs& in, const PipelineConfig& config) {
    PipelineResult r;
    r.text = prepare_text(in, config);
    r.model = fit_sentiment(r.text, config);
    r.scores = score_text(r.text, r.model);
    r.mentions = find_mentions(in, config);
    r.panel = build_panel(in, r.scores, r.mentions, config);
    if (needs_pcs(config)) {
        r.components = compute_text_components(r.text, config);
        attach_components(r.panel.table, r.components);
    }
    r.fits = run_regressions(r.panel.table, config);
    r.report = make_report(r.fits, config);
    return r;
}

// ---- manifests and file-backed stages ----

std::string Manifest::to_json() const {
    json j;
    j["format"] = "textdemand.manifest";
    j["version"] = 1;
    j["stage"] = stage;
    j["config_hash"] = config_hash;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    return j.dump(1) + "\n";
}

Manifest Manifest::from_json(std::string_view text) {
    try {
        const auto j = json::parse(text);
        if (j.value("format", "") != "textdemand.manifest") throw InvalidInput("not a stage manifest");
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        return m;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("manifest: ") + e.what());
    }
}

namespace {

struct StagePlan {
    std::vector<Stage> upstream;
    std::vector<std::string> inputs;  // absolute paths
};

std::string artifact(const PipelineConfig& c, Stage s, const char* name) {
    return (fs::path(c.stage_dir(s)) / name).string();
}

StagePlan plan(const PipelineConfig& c, Stage s) {
    StagePlan p;
    auto raw = [&](const std::string& path) {
        if (!path.empty()) p.inputs.push_back(c.resolve(path));
    };
    auto from_synth = [&] {
        if (c.synth) p.upstream.push_back(Stage::synth);
    };
    switch (s) {
    case Stage::synth:
        break;
    case Stage::prep:
        from_synth();
        raw(c.inputs.reviews);
        raw(c.inputs.posts);
        raw(c.inputs.listings);
        raw(c.inputs.stopwords);
        break;
    case Stage::fit_sentiment:
        p.upstream = {Stage::prep};
        p.inputs = {artifact(c, Stage::prep, "reviews.tokens.jsonl"), artifact(c, Stage::prep, "review_vocab.csv")};
        break;
    case Stage::score:
        p.upstream = {Stage::prep, Stage::fit_sentiment};
        p.inputs = {artifact(c, Stage::prep, "reviews.tokens.jsonl"), artifact(c, Stage::prep, "posts.tokens.jsonl"),
                    artifact(c, Stage::prep, "review_vocab.csv"), artifact(c, Stage::fit_sentiment, "model.json")};
        break;
    case Stage::mentions:
        from_synth();
        raw(c.inputs.threads);
        raw(c.inputs.posts);
        raw(c.inputs.roster);
        raw(c.inputs.english_words);
        break;
    case Stage::panel:
        from_synth();
        p.upstream.push_back(Stage::score);
        p.upstream.push_back(Stage::mentions);
        raw(c.inputs.reviews);
        raw(c.inputs.posts);
        raw(c.inputs.listings);
        raw(c.inputs.roster);
        raw(c.inputs.english_words);
        p.inputs.push_back(artifact(c, Stage::score, "review_scores.csv"));
        p.inputs.push_back(artifact(c, Stage::score, "post_scores.csv"));
        p.inputs.push_back(artifact(c, Stage::mentions, "mentions.csv"));
        break;
    case Stage::pcs:
        p.upstream = {Stage::prep};
        p.inputs = {artifact(c, Stage::prep, "titles.tokens.jsonl"), artifact(c, Stage::prep, "descs.tokens.jsonl"),
                    artifact(c, Stage::prep, "title_vocab.csv"), artifact(c, Stage::prep, "desc_vocab.csv")};
        break;
    case Stage::regress:
        p.upstream = {Stage::panel};
        p.inputs = {artifact(c, Stage::panel, "panel.csv"), artifact(c, Stage::panel, "panel.schema.csv")};
        if (needs_pcs(c)) {
            p.upstream.push_back(Stage::pcs);
            p.inputs.push_back(artifact(c, Stage::pcs, "pcs.csv"));
        }
        break;
    case Stage::report:
        p.upstream = {Stage::regress};
        p.inputs = {artifact(c, Stage::regress, "fits.json")};
        break;
    }
    return p;
}

std::string manifest_path(const PipelineConfig& c, Stage s) { return artifact(c, s, "manifest.json"); }

// Own manifest only, upstream not consulted.
StageStatus own_status(const PipelineConfig& c, Stage s) {
    const auto path = manifest_path(c, s);
    if (!fs::exists(path)) return {StageState::missing, "stage " + std::string(to_string(s)) + " has not been run"};
    Manifest m;
    try {
        m = Manifest::from_json(read_file(path));
    } catch (const Error& e) {
        return {StageState::stale, std::string("unreadable manifest: ") + e.what()};
    }
    const auto name = std::string(to_string(s));
    if (m.config_hash != c.section_hash(s)) return {StageState::stale, name + " settings changed"};
    const auto p = plan(c, s);
    if (m.inputs.size() != p.inputs.size()) return {StageState::stale, name + " inputs changed"};
    for (const auto& in : p.inputs) {
        auto it = m.inputs.find(in);
        if (it == m.inputs.end()) return {StageState::stale, name + " now reads " + in};
        if (!fs::exists(in)) return {StageState::stale, name + " input " + in + " is missing"};
        if (file_hash(in) != it->second) return {StageState::stale, name + " input " + in + " changed"};
    }
    for (const auto& [out, hash] : m.outputs) {
        if (!fs::exists(out)) return {StageState::stale, name + " output " + out + " is missing"};
        if (file_hash(out) != hash) return {StageState::stale, name + " output " + out + " was modified"};
    }
    return {StageState::fresh, {}};
}

void write_outputs(const PipelineConfig& c, Stage s, const std::vector<std::pair<std::string, std::string>>& files) {
    fs::create_directories(c.stage_dir(s));
    Manifest m;
    m.stage = std::string(to_string(s));
    m.config_hash = c.section_hash(s);
    for (const auto& in : plan(c, s).inputs) m.inputs[in] = file_hash(in);
    // An interrupted run leaves no manifest, so the stage never looks fresh.
    fs::remove(manifest_path(c, s));
    for (const auto& [name, content] : files) {
        const auto path = artifact(c, s, name.c_str());
        write_file(path, content);
        m.outputs[path] = sha256_hex(content);
    }
    write_file(manifest_path(c, s), m.to_json());
}

PreparedText load_prepared(const PipelineConfig& c, bool reviews, bool posts, bool listings) {
    PreparedText t;
    if (reviews) {
        t.reviews = parse_tokens_jsonl(read_file(artifact(c, Stage::prep, "reviews.tokens.jsonl")), DocKind::review);
        t.review_vocab = Vocabulary::from_csv(read_file(artifact(c, Stage::prep, "review_vocab.csv")), c.min_count);
    }
    if (posts) {
        t.posts = parse_tokens_jsonl(read_file(artifact(c, Stage::prep, "posts.tokens.jsonl")), DocKind::forum_post);
        if (!reviews) {
            t.review_vocab = Vocabulary::from_csv(read_file(artifact(c, Stage::prep, "review_vocab.csv")), c.min_count);
        }
    }
    if (listings) {
        t.titles = parse_tokens_jsonl(read_file(artifact(c, Stage::prep, "titles.tokens.jsonl")), DocKind::listing_title);
        t.descs = parse_tokens_jsonl(read_file(artifact(c, Stage::prep, "descs.tokens.jsonl")), DocKind::listing_desc);
        t.title_vocab =
            Vocabulary::from_csv(read_file(artifact(c, Stage::prep, "title_vocab.csv")), c.listing_min_count);
        t.desc_vocab = Vocabulary::from_csv(read_file(artifact(c, Stage::prep, "desc_vocab.csv")), c.listing_min_count);
    }
    return t;
}

void execute(const PipelineConfig& c, Stage s) {
    const auto hash = c.section_hash(s);
    switch (s) {
    case Stage::synth: {
        if (!c.synth) throw InvalidInput("the config has no synth section");
        const auto m = gen_market(*c.synth);
        std::string roster;
        for (const auto& v : m.roster) roster += v + "\n";
        write_outputs(c, s,
                      {{"reviews.jsonl", documents_to_jsonl(m.reviews)},
                       {"threads.jsonl", threads_to_jsonl(m.threads)},
                       {"posts.jsonl", posts_to_jsonl(m.posts)},
                       {"listings.jsonl", listings_to_jsonl(m.listings)},
                       {"roster.txt", roster},
                       {"truth.json", with_config_hash(m.truth.to_json(), hash)}});
        break;
    }
    case Stage::prep: {
        RawInputs in;
        in.reviews = parse_documents_jsonl(read_file(c.resolve(c.inputs.reviews)));
        in.posts = parse_posts_jsonl(read_file(c.resolve(c.inputs.posts)));
        in.listings = parse_listings_jsonl(read_file(c.resolve(c.inputs.listings)));
        in.stopwords = c.inputs.stopwords.empty() ? default_stopwords() : load_word_list(c.resolve(c.inputs.stopwords));
        const auto t = prepare_text(in, c);
        json summary = {{"format", "textdemand.prep"},
                        {"config_hash", hash},
                        {"reviews", t.reviews.size()},
                        {"posts", t.posts.size()},
                        {"snapshots", t.titles.size()},
                        {"review_vocab", t.review_vocab.size()},
                        {"title_vocab", t.title_vocab.size()},
                        {"desc_vocab", t.desc_vocab.size()}};
        write_outputs(c, s,
                      {{"reviews.tokens.jsonl", tokens_to_jsonl(t.reviews)},
                       {"posts.tokens.jsonl", tokens_to_jsonl(t.posts)},
                       {"titles.tokens.jsonl", tokens_to_jsonl(t.titles)},
                       {"descs.tokens.jsonl", tokens_to_jsonl(t.descs)},
                       {"review_vocab.csv", t.review_vocab.to_csv()},
                       {"title_vocab.csv", t.title_vocab.to_csv()},
                       {"desc_vocab.csv", t.desc_vocab.to_csv()},
                       {"prep.json", summary.dump(1) + "\n"}});
        break;
    }
    case Stage::fit_sentiment: {
        const auto t = load_prepared(c, true, false, false);
        const auto model = fit_sentiment(t, c);
        write_outputs(c, s, {{"model.json", with_config_hash(model.to_json(), hash)}});
        break;
    }
    case Stage::score: {
        const auto t = load_prepared(c, true, true, false);
        const auto model = MnirModel::from_json(read_file(artifact(c, Stage::fit_sentiment, "model.json")));
        const auto scores = score_text(t, model);
        json st = {{"format", "textdemand.standardizer"},
                   {"config_hash", hash},
                   {"mean", scores.review_standardizer.mean},
                   {"sd", scores.review_standardizer.sd},
                   {"n_informative", scores.review_standardizer.n_informative}};
        write_outputs(c, s,
                      {{"review_scores.csv", scores_to_csv(scores.reviews)},
                       {"post_scores.csv", scores_to_csv(scores.posts)},
                       {"standardizer.json", st.dump(1) + "\n"}});
        break;
    }
    case Stage::mentions: {
        RawInputs in;
        in.threads = parse_threads_jsonl(read_file(c.resolve(c.inputs.threads)));
        in.posts = parse_posts_jsonl(read_file(c.resolve(c.inputs.posts)));
        in.roster = parse_roster(read_file(c.resolve(c.inputs.roster)));
        in.english_words = c.inputs.english_words.empty() ? default_english_words()
                                                          : load_word_list(c.resolve(c.inputs.english_words));
        const auto result = find_mentions(in, c);
        const auto& r = result.report;
        json rep = {{"format", "textdemand.mention_report"},
                    {"config_hash", hash},
                    {"mode", std::string(to_string(c.mention_mode))},
                    {"posts_scanned", r.posts_scanned},
                    {"posts_outside_subforums", r.posts_outside_subforums},
                    {"posts_outside_window", r.posts_outside_window},
                    {"posts_multi_vendor", r.posts_multi_vendor},
                    {"self_mentions_removed", r.self_mentions_removed},
                    {"vendors_excluded_english", r.vendors_excluded_english},
                    {"vendors_excluded_manual", r.vendors_excluded_manual},
                    {"mention_posts", r.mention_posts},
                    {"direct", r.direct},
                    {"thread_title", r.thread_title},
                    {"thread_first_post", r.thread_first_post},
                    {"direct_fired", r.direct_fired},
                    {"title_fired", r.title_fired},
                    {"first_post_fired", r.first_post_fired}};
        write_outputs(c, s, {{"mentions.csv", mentions_to_csv(result.mentions)}, {"report.json", rep.dump(1) + "\n"}});
        break;
    }
    case Stage::panel: {
        const auto in = load_inputs(c);
        TextScores scores;
        scores.reviews = scores_from_csv(read_file(artifact(c, Stage::score, "review_scores.csv")));
        scores.posts = scores_from_csv(read_file(artifact(c, Stage::score, "post_scores.csv")));
        MentionResult mentions;
        mentions.mentions = mentions_from_csv(read_file(artifact(c, Stage::mentions, "mentions.csv")));
        const auto build = build_panel(in, scores, mentions, c);
        write_outputs(c, s,
                      {{"panel.csv", build.table.to_csv()},
                       {"panel.schema.csv", build.table.schema_csv()},
                       {"summary.txt", build.summary.to_text()},
                       {"summary.json", with_config_hash(build.summary.to_json(), hash)}});
        break;
    }
    case Stage::pcs: {
        const auto t = load_prepared(c, false, false, true);
        const auto pcs = compute_text_components(t, c);
        write_outputs(c, s,
                      {{"basis.json", with_config_hash(pcs.basis.to_json(), hash)}, {"pcs.csv", components_to_csv(pcs)}});
        break;
    }
    case Stage::regress: {
        auto panel = PanelTable::from_csv(read_file(artifact(c, Stage::panel, "panel.csv")),
                                          read_file(artifact(c, Stage::panel, "panel.schema.csv")));
        if (needs_pcs(c)) attach_components(panel, components_from_csv(read_file(artifact(c, Stage::pcs, "pcs.csv"))));
        const auto fits = run_regressions(panel, c);
        json j = {{"format", "textdemand.fits"}, {"version", 1}, {"config_hash", hash}};
        j["fits"] = json::array();
        for (const auto& f : fits) j["fits"].push_back(json::parse(f.to_json()));
        write_outputs(c, s, {{"fits.json", j.dump(1) + "\n"}});
        break;
    }
    case Stage::report: {
        const auto j = json::parse(read_file(artifact(c, Stage::regress, "fits.json")));
        std::vector<FitResult> fits;
        for (const auto& f : j.at("fits")) fits.push_back(FitResult::from_json(f.dump()));
        if (fits.size() != c.regressions.size()) throw StaleDependency("fits.json does not match the configured regressions");
        const auto table = make_report(fits, c);
        write_outputs(c, s, {{"report.txt", table.to_text()}, {"report.json", with_config_hash(table.to_json(), hash)}});
        break;
    }
    }
}

bool auto_runnable(Stage s) { return s == Stage::mentions || s == Stage::pcs; }

// Throws StaleDependency unless every upstream stage is fresh, running
// never-run auto-runnable stages on the way.
void ensure_upstream(const PipelineConfig& c, Stage s, std::vector<Stage>& auto_ran) {
    for (auto u : plan(c, s).upstream) {
        auto st = own_status(c, u);
        if (st.state == StageState::missing && auto_runnable(u)) {
            ensure_upstream(c, u, auto_ran);
            execute(c, u);
            auto_ran.push_back(u);
            continue;
        }
        if (st.state == StageState::fresh) {
            const auto up = stage_status(c, u);
            if (up.state == StageState::fresh) continue;
            st = up;
        }
        const auto name = std::string(to_string(u));
        if (st.state == StageState::missing) throw StaleDependency(st.reason + "; run '" + name + "' first");
        throw StaleDependency("stage " + name + " is stale (" + st.reason + "); re-run '" + name + "'");
    }
}

}  // namespace

StageStatus stage_status(const PipelineConfig& c, Stage stage) {
    auto st = own_status(c, stage);
    if (st.state != StageState::fresh) return st;
    for (auto u : plan(c, stage).upstream) {
        const auto up = stage_status(c, u);
        if (up.state != StageState::fresh) return {StageState::stale, "upstream: " + up.reason};
    }
    return st;
}

StageOutcome run_stage(const PipelineConfig& config, Stage stage) {
    StageOutcome out;
    ensure_upstream(config, stage, out.auto_ran);
    const auto name = std::string(to_string(stage));
    if (stage_status(config, stage).state == StageState::fresh) {
        out.message = name + ": up to date";
        return out;
    }
    execute(config, stage);
    out.ran = true;
    out.message = name + ": wrote " + config.stage_dir(stage);
    return out;
}

OutputLock::OutputLock(const std::string& output_dir) {
    fs::create_directories(output_dir);
    path_ = (fs::path(output_dir) / ".lock").string();
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        const int err = errno;
        path_.clear();
        if (err == EEXIST) {
            throw Error("output directory " + output_dir + " is locked by another run (remove " +
                        (fs::path(output_dir) / ".lock").string() + " if that run died)");
        }
        throw Error("cannot create lock file in " + output_dir + ": " + std::strerror(err));
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

OutputLock::~OutputLock() {
    if (!path_.empty()) {
        std::error_code ec;
        fs::remove(path_, ec);
    }
}

}  // namespace textdemand
