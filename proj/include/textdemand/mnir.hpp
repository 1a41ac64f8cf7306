#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "textdemand/textprep.hpp"

namespace textdemand {

constexpr int kRatingLevels = 6;  // star ratings 0..5

/// Rating-level by word count table. Under the i.i.d. multinomial word model
/// these counts are sufficient for the per-word intercepts and loadings.
struct LevelWordCounts {
    Eigen::MatrixXd counts;           // kRatingLevels x V
    std::vector<std::size_t> n_docs;  // documents per rating level
    std::string vocab_hash;

    std::size_t vocab_size() const { return static_cast<std::size_t>(counts.cols()); }
    std::size_t total_docs() const;
};

/// Throws InvalidInput if a document lacks a rating in 0..5.
LevelWordCounts collapse_counts(std::span<const Document> docs, const Vocabulary& vocab);

/// How the final loadings are read off the path. `per_word` picks, for each
/// word, the segment minimizing that word's own corrected AIC (its Poisson
/// likelihood factor given the shared level intercepts); `global` picks one
/// segment for all words by the corrected AIC of the full likelihood.
enum class SegmentSelection { per_word, global };

struct MnirOptions {
    int n_segments = 10;
    SegmentSelection selection = SegmentSelection::per_word;
    double concavity = 0.0;  // 0 gives the plain L1 penalty
    double lambda_min_ratio = 1e-4;
    double tolerance = 1e-8;  // relative objective change per sweep
    int max_sweeps = 1000;
};

/// Summary of one point on the regularization path.
struct PathSegment {
    double lambda = 0.0;
    std::size_t nonzero = 0;
    double loglik = 0.0;  // multinomial log-likelihood up to a data constant
    double aicc = 0.0;
    int sweeps = 0;
    Eigen::VectorXd alpha;
    Eigen::VectorXd phi;
    Eigen::VectorXd word_aicc;  // per-word corrected AIC of the Poisson factor
};

/// Fitted multinomial inverse regression: per-word intercepts and rating
/// loadings over one vocabulary, with the path it was selected from.
struct MnirModel {
    std::string vocab_hash;
    std::vector<int> levels;  // rating levels used in the fit
    Eigen::VectorXd alpha;
    Eigen::VectorXd phi;
    std::vector<double> lambda_path;
    SegmentSelection selection = SegmentSelection::per_word;
    std::size_t selected_segment = 0;           // global corrected-AIC choice
    std::vector<std::size_t> word_segment;      // segment each word's loading comes from
    std::vector<PathSegment> segments;
    std::vector<int> dropped_levels;  // levels with no words, left out with a warning
    std::vector<double> objective_trace;  // penalized objective after each sweep, all segments

    std::size_t vocab_size() const { return static_cast<std::size_t>(phi.size()); }
    std::size_t nonzero() const;
    double nonzero_fraction() const;

    std::string to_json() const;
    static MnirModel from_json(std::string_view text);
};

/// Regularization path fit. Throws InvalidInput with fewer than two rating
/// levels carrying words, ConvergenceError naming the words whose update
/// failed.
MnirModel fit_mnir(const LevelWordCounts& counts, const MnirOptions& options = {});

/// Single penalized fit at a fixed lambda (lambda = 0 gives the MLE).
/// Returns a model whose path holds just this segment.
MnirModel fit_mnir_at(const LevelWordCounts& counts, double lambda, const MnirOptions& options = {});

struct SentimentScore {
    std::string doc_id;
    double raw_score = 0.0;
    std::optional<double> standardized;
    bool informative = false;  // false exactly when raw_score == 0
};

/// sum_j f_j * phi_j over a normalized frequency row. Throws InvalidInput if
/// a column lies outside the model vocabulary.
double score_row(const SparseRow& row, const MnirModel& model);

/// Scores every row; throws InvalidInput if the matrix was built against a
/// different vocabulary.
std::vector<SentimentScore> score(const FrequencyMatrix& matrix, const MnirModel& model);

struct ProjectionSummary {
    std::vector<SentimentScore> scores;
    std::size_t n_uninformative = 0;
    double fraction_uninformative = 0.0;
};

/// Scores already-preprocessed forum posts with loadings fitted on reviews.
ProjectionSummary project_onto_forum(std::span<const Document> posts, const Vocabulary& vocab,
                                     const MnirModel& model);

/// Affine map fitted on the nonzero scores of one collection.
struct Standardizer {
    double mean = 0.0;
    double sd = 1.0;
    std::size_t n_informative = 0;

    double apply(double raw) const { return raw == 0.0 ? 0.0 : (raw - mean) / sd; }
};

/// Fits mean and SD (n-1 denominator) over nonzero raw scores and fills
/// `standardized` for every entry; zeros stay exactly zero. Throws
/// InvalidInput with fewer than two distinct nonzero scores.
Standardizer standardize_scores(std::vector<SentimentScore>& scores);

/// Applies a previously fitted map to another collection.
void apply_standardizer(std::vector<SentimentScore>& scores, const Standardizer& standardizer);

}  // namespace textdemand
