#include <doctest.h>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "textdemand/errors.hpp"
#include "textdemand/porter.hpp"
#include "textdemand/textprep.hpp"

using namespace textdemand;

namespace {

Document doc_with_tokens(std::string id, std::vector<std::string> tokens) {
    Document d;
    d.doc_id = std::move(id);
    d.tokens = std::move(tokens);
    return d;
}

std::string join(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

}  // namespace

TEST_CASE("preprocess examples") {
    const auto& sw = default_stopwords();
    CHECK(preprocess("", sw).empty());
    CHECK(preprocess("Great STEALTH!!", sw) == std::vector<std::string>{"great", "stealth"});
    CHECK(preprocess("the vendor was a scammer", sw) == std::vector<std::string>{"vendor", "scammer"});
    CHECK(preprocess("got 5g of it, shipped-fast", sw) == std::vector<std::string>{"got", "5g", "ship", "fast"});
    CHECK(tokenize("a--b__c 12x") == std::vector<std::string>{"a", "b", "c", "12x"});
}

TEST_CASE("porter stemmer matches reference vectors") {
    std::ifstream in(std::string(TEXTDEMAND_TEST_DATA) + "/porter_vectors.txt");
    REQUIRE(in);
    std::string line;
    int checked = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string word, stem;
        ls >> word >> stem;
        INFO(word);
        CHECK(porter_stem(word) == stem);
        ++checked;
    }
    CHECK(checked > 2000);
}

TEST_CASE("porter fixpoint settles words a single pass leaves unstable") {
    CHECK(porter_stem("agreed") == "agre");
    CHECK(porter_stem("agre") == "agr");
    CHECK(porter_stem_fixpoint("agreed") == "agr");
    CHECK(porter_stem_fixpoint("vendor") == "vendor");
}

TEST_CASE("preprocess is idempotent and deterministic") {
    std::ifstream in(std::string(TEXTDEMAND_TEST_DATA) + "/porter_vectors.txt");
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        words.push_back(line.substr(0, line.find(' ')));
    }
    for (const auto& w : default_stopwords()) words.push_back(w);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    const char* seps[] = {" ", "!!", ", ", "\t", "...", "-"};
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        for (int k = 0; k < 25; ++k) {
            std::string w = words[pick(rng)];
            if (rng() % 3 == 0) w[0] = static_cast<char>(std::toupper(w[0]));
            text += w;
            text += seps[rng() % 6];
        }
        const auto once = preprocess(text, default_stopwords());
        CHECK(preprocess(join(once), default_stopwords()) == once);
        CHECK(preprocess(text, default_stopwords()) == once);
        for (const auto& t : once) CHECK_FALSE(default_stopwords().contains(t));
    }
}

TEST_CASE("shipped stopword file matches the embedded list") {
    const auto from_file = load_word_list(std::string(TEXTDEMAND_TEST_DATA) + "/../../data/stopwords_en.txt");
    CHECK(from_file == default_stopwords());
    CHECK(from_file.size() == 179);
    CHECK(stopword_hash(from_file) == stopword_hash(default_stopwords()));
}

TEST_CASE("vocabulary floor") {
    SUBCASE("exactly at the floor") {
        std::vector<Document> corpus(5, doc_with_tokens("d", {"alpha", "beta"}));
        const auto v = Vocabulary::build(corpus, 5);
        CHECK(v.size() == 2);
        CHECK(v.index_of("alpha") == 0);
        CHECK(v.index_of("beta") == 1);
        CHECK(v.count(0) == 5);
    }
    SUBCASE("all words below the floor") {
        std::vector<Document> corpus{doc_with_tokens("d", {"alpha", "beta"})};
        CHECK_THROWS_AS(Vocabulary::build(corpus, 2), DegenerateCorpus);
    }
    SUBCASE("bad arguments") {
        CHECK_THROWS_AS(Vocabulary::build(std::vector<Document>{}, 5), InvalidInput);
        std::vector<Document> corpus{doc_with_tokens("d", {"alpha"})};
        CHECK_THROWS_AS(Vocabulary::build(corpus, 0), InvalidInput);
    }
}

TEST_CASE("vocabulary equals brute-force count-and-filter") {
    std::mt19937_64 rng(42);
    std::geometric_distribution<int> word_pick(0.05);
    std::vector<Document> corpus;
    for (int d = 0; d < 200; ++d) {
        std::vector<std::string> toks;
        const int len = 1 + static_cast<int>(rng() % 20);
        for (int k = 0; k < len; ++k) toks.push_back("w" + std::to_string(word_pick(rng)));
        corpus.push_back(doc_with_tokens("d" + std::to_string(d), toks));
    }
    for (int floor : {1, 3, 5, 20}) {
        std::map<std::string, long> brute;
        for (const auto& d : corpus)
            for (const auto& t : d.tokens) brute[t] += 1;
        std::vector<std::string> retained;
        for (const auto& [w, n] : brute)
            if (n >= floor) retained.push_back(w);

        const auto v = Vocabulary::build(corpus, floor);
        CHECK(v.words() == retained);
        CHECK(v.pre_filter_size() == brute.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK(v.count(i) == brute[v.word(i)]);
            CHECK(v.count(i) >= floor);
            CHECK(v.index_of(v.word(i)) == i);
        }
        for (const auto& [w, n] : brute) {
            if (n < floor) CHECK_FALSE(v.index_of(w).has_value());
        }
    }
}

TEST_CASE("vocabulary CSV round trip") {
    std::vector<Document> corpus{doc_with_tokens("a", {"x", "y", "y", "z"})};
    const auto v = Vocabulary::build(corpus, 1);
    const auto back = Vocabulary::from_csv(v.to_csv());
    CHECK(back.words() == v.words());
    CHECK(back.hash() == v.hash());
    CHECK(back.count(1) == 2);
    CHECK(v.to_csv() == "word,index,count\nx,0,1\ny,1,2\nz,2,1\n");
}

TEST_CASE("frequency rows") {
    auto v = Vocabulary::from_entries({{"a", 10}, {"b", 10}}, 1, 2);
    SUBCASE("direct normalization") {
        const std::vector<std::string> toks{"a", "a", "b"};
        const auto row = frequency_row(toks, v);
        REQUIRE(row.cols == std::vector<std::uint32_t>{0, 1});
        CHECK(row.vals[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
        CHECK(row.vals[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("only out-of-vocabulary tokens") {
        std::vector<Document> docs{doc_with_tokens("d0", {"zzz", "qqq"})};
        const auto m = frequency_matrix(docs, v);
        CHECK(m.row_is_empty(0));
        CHECK(m.n_empty() == 1);
    }
}

TEST_CASE("frequency matrix equals dense row-normalized count oracle") {
    std::mt19937_64 rng(3);
    std::vector<std::pair<std::string, std::int64_t>> entries;
    for (int j = 0; j < 30; ++j) entries.emplace_back("w" + std::to_string(j), 1);
    const auto v = Vocabulary::from_entries(entries, 1, 30);

    std::vector<Document> docs;
    for (int d = 0; d < 50; ++d) {
        std::vector<std::string> toks;
        const int len = static_cast<int>(rng() % 15);
        for (int k = 0; k < len; ++k) toks.push_back("w" + std::to_string(rng() % 40));  // some OOV
        docs.push_back(doc_with_tokens("d" + std::to_string(d), toks));
    }
    const auto m = frequency_matrix(docs, v);
    const Eigen::MatrixXd sparse_dense = Eigen::MatrixXd(m.to_sparse());
    for (int d = 0; d < 50; ++d) {
        Eigen::VectorXd dense = Eigen::VectorXd::Zero(30);
        for (const auto& t : docs[static_cast<std::size_t>(d)].tokens) {
            for (int j = 0; j < 30; ++j)
                if (t == v.word(static_cast<std::size_t>(j))) dense(j) += 1.0;
        }
        const double total = dense.sum();
        if (total > 0) {
            dense /= total;
            CHECK(m.rows[static_cast<std::size_t>(d)].sum() == doctest::Approx(1.0).epsilon(1e-9));
        } else {
            CHECK(m.row_is_empty(static_cast<std::size_t>(d)));
        }
        CHECK((sparse_dense.row(d).transpose() - dense).cwiseAbs().maxCoeff() < 1e-15);
        for (auto c : m.rows[static_cast<std::size_t>(d)].cols) CHECK(c < 30);
    }
}
