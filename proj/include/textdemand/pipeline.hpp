#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "textdemand/countreg.hpp"
#include "textdemand/decomp.hpp"
#include "textdemand/io.hpp"
#include "textdemand/mentions.hpp"
#include "textdemand/mnir.hpp"
#include "textdemand/panel.hpp"
#include "textdemand/report.hpp"
#include "textdemand/synth.hpp"

namespace textdemand {

enum class Stage { synth, prep, fit_sentiment, score, mentions, panel, pcs, regress, report };

std::string_view to_string(Stage s);
std::optional<Stage> stage_from_string(std::string_view s);
const std::vector<Stage>& all_stages();

/// One regression column of the report. The fitted regressors are the
/// displayed ones, then `extra` (fitted but not shown, e.g. zero-count
/// flags), then the item and vendor control groups when switched on.
struct RegressionColumn {
    RegressionSpec spec;  // spec.regressors holds the displayed columns
    std::vector<std::string> extra;
    bool item_controls = false;
    bool vendor_controls = false;
};

struct InputPaths {
    std::string reviews, threads, posts, listings, roster;
    std::string english_words;  // empty: shipped list
    std::string stopwords;      // empty: shipped list
};

struct PipelineConfig {
    std::string base_dir;  // relative paths resolve against this
    std::string output_dir = "out";
    std::optional<MarketConfig> synth;
    InputPaths inputs;  // defaults to the synth outputs when a synth section is present
    SampleWindow window;
    int min_count = 2;
    int listing_min_count = 1;
    MnirOptions sentiment;
    MentionMode mention_mode = MentionMode::exclusive;
    std::vector<std::string> subforums = default_subforums();
    std::vector<std::string> manual_exclusions;
    bool exclude_english_vendors = true;
    InteractionSpec interactions;
    int k_pcs = 10;
    std::uint64_t pc_seed = 7;
    std::vector<RegressionColumn> regressions;
    std::string report_title = "Impact of Consumer Text Sentiment on Product Demand";
    std::vector<EqualityTest> equality_tests;

    /// Canonical JSON of the settings one stage depends on.
    std::string section(Stage s) const;
    std::string section_hash(Stage s) const;
    /// Absolute path of an input or output location.
    std::string resolve(const std::string& path) const;
    std::string stage_dir(Stage s) const;
};

struct Diagnostic {
    std::string code;
    std::string message;
};

struct ParsedConfig {
    std::optional<PipelineConfig> config;
    std::vector<Diagnostic> diagnostics;
};

/// Parses the JSON config. Never throws: problems are returned as
/// diagnostics, and `config` is empty when any was found. The output
/// directory is taken from `output_override` when nonempty.
ParsedConfig parse_config(std::string_view text, const std::string& base_dir, const std::string& output_override = {});

/// parse_config plus checks that need the file system: input paths exist,
/// k fits the listing text matrix, regression columns exist in the panel.
/// An empty result means the config is runnable. With inspect_artifacts, the
/// k and column checks also use existing prep and panel outputs.
std::vector<Diagnostic> validate_config(std::string_view text, const std::string& base_dir,
                                        const std::string& output_override = {}, bool inspect_artifacts = true);

// ---- in-memory stages ----

struct RawInputs {
    std::vector<Document> reviews;
    std::vector<ForumThread> threads;
    std::vector<ForumPost> posts;
    std::vector<ListingSnapshot> listings;
    std::vector<std::string> roster;
    StopwordSet english_words;
    StopwordSet stopwords;
};

RawInputs inputs_from_market(const Market& market);
RawInputs load_inputs(const PipelineConfig& config);

/// Tokens per text unit. Listing titles and descriptions are keyed by
/// snapshot id, posts by post id.
struct PreparedText {
    std::vector<Document> reviews;
    std::vector<Document> posts;
    std::vector<Document> titles;
    std::vector<Document> descs;
    Vocabulary review_vocab;
    Vocabulary title_vocab;
    Vocabulary desc_vocab;
};

PreparedText prepare_text(const RawInputs& in, const PipelineConfig& config);
MnirModel fit_sentiment(const PreparedText& text, const PipelineConfig& config);

struct TextScores {
    std::vector<SentimentScore> reviews;  // standardized over reviews
    Standardizer review_standardizer;
    std::vector<SentimentScore> posts;  // raw; standardized over mention posts at panel time
};

TextScores score_text(const PreparedText& text, const MnirModel& model);
MentionResult find_mentions(const RawInputs& in, const PipelineConfig& config);

/// Assembles the panel (with the configured interactions). Forum scores are
/// standardized over the posts carrying a mention.
PanelBuild build_panel(const RawInputs& in, const TextScores& scores, const MentionResult& mentions,
                       const PipelineConfig& config);

struct TextComponents {
    PcBasis basis;
    std::vector<std::string> snapshot_ids;
    Eigen::MatrixXd scores;  // snapshot x k
    std::size_t n_flagged = 0;
};

TextComponents compute_text_components(const PreparedText& text, const PipelineConfig& config);
/// Adds pc_1..pc_k by snapshot id. Throws InvalidInput for an unscored snapshot.
void attach_components(PanelTable& panel, const TextComponents& pcs);

/// Fitted regressor list for one column, given the panel's columns.
std::vector<std::string> expand_regressors(const RegressionColumn& column, const PanelTable& panel, int k_pcs);
std::vector<FitResult> run_regressions(const PanelTable& panel, const PipelineConfig& config);
RegressionTable make_report(const std::vector<FitResult>& fits, const PipelineConfig& config);

struct PipelineResult {
    PreparedText text;
    MnirModel model;
    TextScores scores;
    MentionResult mentions;
    PanelBuild panel;  // with text components attached
    TextComponents components;
    std::vector<FitResult> fits;
    RegressionTable report;
};

/// Every stage in order, without touching the file system.
PipelineResult run_in_memory(const RawInputs& in, const PipelineConfig& config);

// ---- file-backed stages ----

/// What a stage wrote and what it read, by content hash.
struct Manifest {
    std::string stage;
    std::string config_hash;
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // path -> sha256

    std::string to_json() const;
    static Manifest from_json(std::string_view text);
};

enum class StageState { fresh, missing, stale };

struct StageStatus {
    StageState state = StageState::missing;
    std::string reason;
};

/// Checks the stage's manifest against the current config and files, and
/// recursively its upstream stages.
StageStatus stage_status(const PipelineConfig& config, Stage stage);

struct StageOutcome {
    bool ran = false;  // false when the stage was already up to date
    std::vector<Stage> auto_ran;
    std::string message;
};

/// Runs one stage from its upstream artifacts. Throws StaleDependency when
/// an upstream stage is missing or out of date; a never-run mentions or pcs
/// stage is run on demand. Rerunning with unchanged inputs does nothing.
StageOutcome run_stage(const PipelineConfig& config, Stage stage);

/// Exclusive ownership of the output directory for one process.
class OutputLock {
public:
    explicit OutputLock(const std::string& output_dir);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::string path_;
};

}  // namespace textdemand
