#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/SparseCore>

#include "textdemand/dates.hpp"

namespace textdemand {

enum class DocKind { review, forum_post, listing_title, listing_desc };

std::string_view to_string(DocKind kind);
DocKind doc_kind_from_string(std::string_view s);

/// A unit of text (review, forum post, listing title or description) with its
/// metadata. `extra` carries source-specific fields such as item_id.
struct Document {
    std::string doc_id;
    DocKind kind = DocKind::review;
    std::string raw_text;
    std::vector<std::string> tokens;
    std::optional<std::string> vendor_id;
    std::optional<std::string> author_id;
    Date timestamp{};
    std::optional<int> rating;
    std::map<std::string, std::string> extra;

    /// Value of `extra[key]` or nullopt.
    std::optional<std::string> extra_field(const std::string& key) const;
};

using StopwordSet = std::unordered_set<std::string>;

/// The stopword list shipped with the library (data/stopwords_en.txt).
const StopwordSet& default_stopwords();

/// Loads a stopword list: one word per line, blank lines and `#` comments ignored.
StopwordSet load_word_list(const std::string& path);
StopwordSet parse_word_list(std::string_view text);

/// Splits on maximal runs of non-alphanumeric ASCII characters and lowercases.
/// Digits stay inside tokens.
std::vector<std::string> tokenize(std::string_view raw_text);

/// Lowercase, strip non-alphanumerics, drop stopwords, stem. Stopwords are
/// checked both before and after stemming so the result is idempotent.
std::vector<std::string> preprocess(std::string_view raw_text, const StopwordSet& stopwords);

/// Runs preprocess on every document in place.
void preprocess_all(std::span<Document> docs, const StopwordSet& stopwords);

/// Stable digest of the stopword set (sorted, newline-joined).
std::string stopword_hash(const StopwordSet& stopwords);

/// Bijection word <-> column over words whose corpus count reaches a floor.
/// Columns are assigned in lexicographic word order.
class Vocabulary {
public:
    Vocabulary() = default;

    /// Throws DegenerateCorpus if no word survives the floor and
    /// InvalidInput if the corpus is empty or min_count < 1.
    static Vocabulary build(std::span<const Document> corpus, int min_count);

    /// Rebuilds from explicit (word, count) pairs, as read back from CSV.
    static Vocabulary from_entries(std::vector<std::pair<std::string, std::int64_t>> entries,
                                   int min_count, std::size_t pre_filter_size);

    std::optional<std::size_t> index_of(std::string_view word) const;
    const std::string& word(std::size_t index) const { return words_.at(index); }
    std::int64_t count(std::size_t index) const { return counts_.at(index); }
    std::size_t size() const { return words_.size(); }
    int min_count() const { return min_count_; }
    std::size_t pre_filter_size() const { return pre_filter_size_; }
    const std::vector<std::string>& words() const { return words_; }

    /// Digest over the ordered word list; ties artifacts to this vocabulary.
    const std::string& hash() const { return hash_; }

    /// word,index,count lines with a header row.
    std::string to_csv() const;
    static Vocabulary from_csv(std::string_view csv, int min_count = 1);

private:
    void finalize();

    std::vector<std::string> words_;
    std::vector<std::int64_t> counts_;
    std::unordered_map<std::string, std::size_t> index_;
    int min_count_ = 1;
    std::size_t pre_filter_size_ = 0;
    std::string hash_;
};

/// One sparse row: sorted column indices and matching values.
struct SparseRow {
    std::vector<std::uint32_t> cols;
    std::vector<double> vals;

    bool empty() const { return cols.empty(); }
    double sum() const;
};

/// Row-normalized word frequencies. Empty rows (no in-vocabulary word) are
/// kept and flagged uninformative.
struct FrequencyMatrix {
    std::vector<std::string> row_ids;
    std::vector<SparseRow> rows;
    std::size_t n_cols = 0;
    std::string vocab_hash;

    std::size_t n_rows() const { return rows.size(); }
    bool row_is_empty(std::size_t i) const { return rows[i].empty(); }
    std::size_t n_empty() const;

    Eigen::SparseMatrix<double, Eigen::RowMajor> to_sparse() const;
};

/// Normalized in-vocabulary word frequencies for one token list.
SparseRow frequency_row(std::span<const std::string> tokens, const Vocabulary& vocab);

FrequencyMatrix frequency_matrix(std::span<const Document> docs, const Vocabulary& vocab);

}  // namespace textdemand
