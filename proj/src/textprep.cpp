#include "textdemand/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "textdemand/errors.hpp"
#include "textdemand/hashing.hpp"
#include "textdemand/porter.hpp"

namespace textdemand {

namespace embedded {
extern const std::string_view stopwords_en;
}

std::string_view to_string(DocKind kind) {
    switch (kind) {
        case DocKind::review:
            return "review";
        case DocKind::forum_post:
            return "forum_post";
        case DocKind::listing_title:
            return "listing_title";
        case DocKind::listing_desc:
            return "listing_desc";
    }
    return "review";
}

DocKind doc_kind_from_string(std::string_view s) {
    if (s == "review") return DocKind::review;
    if (s == "forum_post") return DocKind::forum_post;
    if (s == "listing_title") return DocKind::listing_title;
    if (s == "listing_desc") return DocKind::listing_desc;
    throw InvalidInput("unknown document kind '" + std::string(s) + "'");
}

std::optional<std::string> Document::extra_field(const std::string& key) const {
    auto it = extra.find(key);
    if (it == extra.end()) return std::nullopt;
    return it->second;
}

StopwordSet parse_word_list(std::string_view text) {
    StopwordSet words;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
        line.erase(0, start);
        if (line.empty() || line.front() == '#') continue;
        std::transform(line.begin(), line.end(), line.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        words.insert(line);
    }
    return words;
}

StopwordSet load_word_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open word list " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_word_list(content);
}

const StopwordSet& default_stopwords() {
    static const StopwordSet words = parse_word_list(embedded::stopwords_en);
    return words;
}

std::vector<std::string> tokenize(std::string_view raw_text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : raw_text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 128 && std::isalnum(c)) {
            current += static_cast<char>(std::tolower(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::vector<std::string> preprocess(std::string_view raw_text, const StopwordSet& stopwords) {
    std::vector<std::string> out;
    for (auto& token : tokenize(raw_text)) {
        if (stopwords.contains(token)) continue;
        std::string stem = porter_stem_fixpoint(token);
        if (stopwords.contains(stem)) continue;
        out.push_back(std::move(stem));
    }
    return out;
}

void preprocess_all(std::span<Document> docs, const StopwordSet& stopwords) {
    for (auto& doc : docs) doc.tokens = preprocess(doc.raw_text, stopwords);
}

std::string stopword_hash(const StopwordSet& stopwords) {
    std::vector<std::string> sorted(stopwords.begin(), stopwords.end());
    std::sort(sorted.begin(), sorted.end());
    std::string joined;
    for (const auto& w : sorted) {
        joined += w;
        joined += '\n';
    }
    return sha256_hex(joined);
}

Vocabulary Vocabulary::build(std::span<const Document> corpus, int min_count) {
    if (corpus.empty()) throw InvalidInput("cannot build a vocabulary from an empty corpus");
    if (min_count < 1) throw InvalidInput("min_count must be at least 1");

    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& doc : corpus) {
        for (const auto& token : doc.tokens) ++counts[token];
    }
    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (auto& [word, n] : counts) {
        if (n >= min_count) kept.emplace_back(word, n);
    }
    if (kept.empty()) {
        throw DegenerateCorpus("all " + std::to_string(counts.size()) +
                               " distinct words fall below min_count=" + std::to_string(min_count));
    }
    return from_entries(std::move(kept), min_count, counts.size());
}

Vocabulary Vocabulary::from_entries(std::vector<std::pair<std::string, std::int64_t>> entries,
                                    int min_count, std::size_t pre_filter_size) {
    std::sort(entries.begin(), entries.end());
    Vocabulary v;
    v.min_count_ = min_count;
    v.pre_filter_size_ = pre_filter_size;
    for (auto& [word, n] : entries) {
        if (!v.words_.empty() && v.words_.back() == word) throw InvalidInput("duplicate word " + word);
        v.words_.push_back(std::move(word));
        v.counts_.push_back(n);
    }
    v.finalize();
    return v;
}

void Vocabulary::finalize() {
    index_.clear();
    std::string joined;
    for (std::size_t i = 0; i < words_.size(); ++i) {
        index_.emplace(words_[i], i);
        joined += words_[i];
        joined += '\n';
    }
    hash_ = sha256_hex(joined);
}

std::optional<std::size_t> Vocabulary::index_of(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::string Vocabulary::to_csv() const {
    std::ostringstream out;
    out << "word,index,count\n";
    for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << ',' << i << ',' << counts_[i] << '\n';
    return out.str();
}

Vocabulary Vocabulary::from_csv(std::string_view csv, int min_count) {
    std::istringstream in{std::string(csv)};
    std::string line;
    std::getline(in, line);
    if (line != "word,index,count") throw InvalidInput("vocabulary CSV: unexpected header '" + line + "'");
    std::vector<std::pair<std::string, std::int64_t>> entries;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) throw InvalidInput("vocabulary CSV: bad line");
        if (std::stoull(line.substr(c1 + 1, c2 - c1 - 1)) != expected++) {
            throw InvalidInput("vocabulary CSV: indices must be contiguous and sorted");
        }
        entries.emplace_back(line.substr(0, c1), std::stoll(line.substr(c2 + 1)));
    }
    const std::size_t n = entries.size();
    return from_entries(std::move(entries), min_count, n);
}

double SparseRow::sum() const {
    double s = 0.0;
    for (double v : vals) s += v;
    return s;
}

std::size_t FrequencyMatrix::n_empty() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const SparseRow& r) { return r.empty(); }));
}

Eigen::SparseMatrix<double, Eigen::RowMajor> FrequencyMatrix::to_sparse() const {
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < rows[i].cols.size(); ++k) {
            triplets.emplace_back(static_cast<int>(i), static_cast<int>(rows[i].cols[k]), rows[i].vals[k]);
        }
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> m(static_cast<Eigen::Index>(rows.size()),
                                                   static_cast<Eigen::Index>(n_cols));
    m.setFromTriplets(triplets.begin(), triplets.end());
    return m;
}

SparseRow frequency_row(std::span<const std::string> tokens, const Vocabulary& vocab) {
    std::map<std::uint32_t, std::int64_t> counts;
    std::int64_t total = 0;
    for (const auto& t : tokens) {
        if (auto idx = vocab.index_of(t)) {
            ++counts[static_cast<std::uint32_t>(*idx)];
            ++total;
        }
    }
    SparseRow row;
    row.cols.reserve(counts.size());
    row.vals.reserve(counts.size());
    for (auto [col, n] : counts) {
        row.cols.push_back(col);
        row.vals.push_back(static_cast<double>(n) / static_cast<double>(total));
    }
    return row;
}

FrequencyMatrix frequency_matrix(std::span<const Document> docs, const Vocabulary& vocab) {
    FrequencyMatrix m;
    m.n_cols = vocab.size();
    m.vocab_hash = vocab.hash();
    m.row_ids.reserve(docs.size());
    m.rows.reserve(docs.size());
    for (const auto& doc : docs) {
        m.row_ids.push_back(doc.doc_id);
        m.rows.push_back(frequency_row(doc.tokens, vocab));
    }
    return m;
}

}  // namespace textdemand
