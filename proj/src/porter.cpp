#include "textdemand/porter.hpp"

#include <array>
#include <utility>

namespace textdemand {

namespace {

// Working state for one word. `stem_end` marks the end of the candidate stem
// once a suffix has matched (the "j" of Porter's reference code).
class PorterWord {
public:
    explicit PorterWord(std::string_view w) : b_(w) {}

    std::string take() && { return std::move(b_); }

    void step1a() {
        if (ends("sses")) {
            replace_suffix(4, "ss");
        } else if (ends("ies")) {
            replace_suffix(3, "i");
        } else if (ends("ss")) {
            // unchanged
        } else if (ends("s")) {
            replace_suffix(1, "");
        }
    }

    void step1b() {
        bool removed = false;
        if (ends("eed")) {
            if (measure(b_.size() - 3) > 0) replace_suffix(3, "ee");
            return;
        }
        if (ends("ed") && has_vowel(b_.size() - 2)) {
            b_.resize(b_.size() - 2);
            removed = true;
        } else if (ends("ing") && has_vowel(b_.size() - 3)) {
            b_.resize(b_.size() - 3);
            removed = true;
        }
        if (!removed) return;

        if (ends("at")) {
            b_ += 'e';
        } else if (ends("bl")) {
            b_ += 'e';
        } else if (ends("iz")) {
            b_ += 'e';
        } else if (double_consonant(b_.size() - 1)) {
            const char last = b_.back();
            if (last != 'l' && last != 's' && last != 'z') b_.pop_back();
        } else if (measure(b_.size()) == 1 && cvc(b_.size() - 1)) {
            b_ += 'e';
        }
    }

    void step1c() {
        if (ends("y") && has_vowel(b_.size() - 1)) b_.back() = 'i';
    }

    void step2() {
        static constexpr std::array<std::pair<std::string_view, std::string_view>, 20> rules{{
            {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},
            {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},
            {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
            {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
            {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"},
        }};
        apply_longest(rules, 0);
    }

    void step3() {
        static constexpr std::array<std::pair<std::string_view, std::string_view>, 7> rules{{
            {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
            {"ical", "ic"},  {"ful", ""},   {"ness", ""},
        }};
        apply_longest(rules, 0);
    }

    void step4() {
        static constexpr std::array<std::string_view, 19> suffixes{
            "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
            "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
        };
        std::string_view best;
        for (auto s : suffixes) {
            if (s.size() > best.size() && ends(s)) {
                if (s == "ion") {
                    const std::size_t j = b_.size() - 3;
                    if (j == 0 || (b_[j - 1] != 's' && b_[j - 1] != 't')) continue;
                }
                best = s;
            }
        }
        if (best.empty()) return;
        const std::size_t stem_end = b_.size() - best.size();
        if (measure(stem_end) > 1) b_.resize(stem_end);
    }

    void step5() {
        if (ends("e")) {
            const std::size_t stem_end = b_.size() - 1;
            const int m = measure(stem_end);
            if (m > 1 || (m == 1 && !cvc(stem_end - 1))) b_.pop_back();
        }
        if (ends("ll") && measure(b_.size()) > 1) b_.pop_back();
    }

private:
    template <std::size_t N>
    void apply_longest(const std::array<std::pair<std::string_view, std::string_view>, N>& rules,
                       int min_measure) {
        const std::pair<std::string_view, std::string_view>* best = nullptr;
        for (const auto& rule : rules) {
            if (ends(rule.first) && (best == nullptr || rule.first.size() > best->first.size())) {
                best = &rule;
            }
        }
        if (best == nullptr) return;
        const std::size_t stem_end = b_.size() - best->first.size();
        if (measure(stem_end) > min_measure) replace_suffix(best->first.size(), best->second);
    }

    bool consonant(std::size_t i) const {
        switch (b_[i]) {
            case 'a':
            case 'e':
            case 'i':
            case 'o':
            case 'u':
                return false;
            case 'y':
                return i == 0 ? true : !consonant(i - 1);
            default:
                return true;
        }
    }

    // Number of VC sequences in b_[0, end).
    int measure(std::size_t end) const {
        int m = 0;
        std::size_t i = 0;
        while (i < end && consonant(i)) ++i;
        while (i < end) {
            while (i < end && !consonant(i)) ++i;
            if (i >= end) break;
            while (i < end && consonant(i)) ++i;
            ++m;
        }
        return m;
    }

    bool has_vowel(std::size_t end) const {
        for (std::size_t i = 0; i < end; ++i) {
            if (!consonant(i)) return true;
        }
        return false;
    }

    bool double_consonant(std::size_t i) const {
        return i >= 1 && b_[i] == b_[i - 1] && consonant(i);
    }

    // consonant-vowel-consonant ending at i, last consonant not w, x or y
    bool cvc(std::size_t i) const {
        if (i < 2 || !consonant(i) || consonant(i - 1) || !consonant(i - 2)) return false;
        const char c = b_[i];
        return c != 'w' && c != 'x' && c != 'y';
    }

    bool ends(std::string_view s) const {
        return b_.size() >= s.size() && std::string_view(b_).substr(b_.size() - s.size()) == s;
    }

    void replace_suffix(std::size_t len, std::string_view with) {
        b_.resize(b_.size() - len);
        b_.append(with);
    }

    std::string b_;
};

}  // namespace

std::string porter_stem(std::string_view word) {
    if (word.size() <= 2) return std::string(word);
    PorterWord w(word);
    w.step1a();
    w.step1b();
    w.step1c();
    w.step2();
    w.step3();
    w.step4();
    w.step5();
    return std::move(w).take();
}

std::string porter_stem_fixpoint(std::string_view word) {
    std::string current(word);
    // Each pass either shortens the word or leaves it unchanged, so this terminates.
    for (;;) {
        std::string next = porter_stem(current);
        if (next == current) return current;
        current = std::move(next);
    }
}

}  // namespace textdemand
