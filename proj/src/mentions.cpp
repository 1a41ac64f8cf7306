#include "textdemand/mentions.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <sstream>
#include <unordered_map>

#include "textdemand/errors.hpp"

namespace textdemand {

namespace embedded {
extern const std::string_view english_words;
}

std::string_view to_string(MentionRule rule) {
    switch (rule) {
        case MentionRule::direct:
            return "direct";
        case MentionRule::thread_title:
            return "thread_title";
        case MentionRule::thread_first_post:
            return "thread_first_post";
    }
    return "direct";
}

std::string_view to_string(MentionMode mode) { return mode == MentionMode::exclusive ? "exclusive" : "duplicate"; }

MentionMode mention_mode_from_string(std::string_view s) {
    if (s == "exclusive") return MentionMode::exclusive;
    if (s == "duplicate") return MentionMode::duplicate;
    throw InvalidInput("mention mode must be 'exclusive' or 'duplicate', got '" + std::string(s) + "'");
}

namespace {

MentionRule rule_from_string(std::string_view s) {
    for (auto r : {MentionRule::direct, MentionRule::thread_title, MentionRule::thread_first_post}) {
        if (to_string(r) == s) return r;
    }
    throw InvalidInput("unknown mention rule '" + std::string(s) + "'");
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

const StopwordSet& default_english_words() {
    static const StopwordSet words = parse_word_list(embedded::english_words);
    return words;
}

std::vector<std::string> default_subforums() {
    return {"General Discussion", "Vendor Discussion", "Product Offers", "Product Categories"};
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool contains_on_boundary(std::string_view text_lower, std::string_view name) {
    if (name.empty()) return false;
    for (auto pos = text_lower.find(name); pos != std::string_view::npos; pos = text_lower.find(name, pos + 1)) {
        const auto end = pos + name.size();
        const bool left = pos == 0 || !is_alnum(text_lower[pos - 1]);
        const bool right = end == text_lower.size() || !is_alnum(text_lower[end]);
        if (left && right) return true;
    }
    return false;
}

MentionResult detect_mentions(std::span<const ForumThread> threads, std::span<const ForumPost> posts,
                              std::span<const std::string> vendor_ids, const StopwordSet& english_words,
                              const MentionOptions& options) {
    if (vendor_ids.empty()) throw InvalidInput("vendor roster is empty");
    MentionResult result;
    auto& rep = result.report;

    StopwordSet english;
    for (const auto& w : english_words) english.insert(to_lower(w));
    StopwordSet manual;
    for (const auto& v : options.manual_exclusions) manual.insert(to_lower(v));

    // Active vendors: (lowercase name used for matching, original id).
    std::map<std::string, std::string> vendors;
    for (const auto& v : vendor_ids) {
        const auto low = to_lower(v);
        if (low.empty() || vendors.count(low)) continue;
        if (english.count(low)) {
            ++rep.vendors_excluded_english;
        } else if (manual.count(low)) {
            ++rep.vendors_excluded_manual;
        } else {
            vendors.emplace(low, v);
        }
    }

    std::unordered_map<std::int64_t, const ForumThread*> thread_by_id;
    for (const auto& t : threads) thread_by_id[t.thread_id] = &t;

    // First post per thread is the smallest post id among the thread's
    // listed posts and the posts that point at it.
    std::unordered_map<std::int64_t, std::int64_t> first_id;
    for (const auto& t : threads) {
        if (!t.posts.empty()) first_id[t.thread_id] = *std::min_element(t.posts.begin(), t.posts.end());
    }
    std::unordered_map<std::int64_t, const ForumPost*> post_by_id;
    for (const auto& p : posts) {
        if (!thread_by_id.count(p.thread_id)) {
            throw InvalidInput("post " + std::to_string(p.post_id) + " references unknown thread " +
                               std::to_string(p.thread_id));
        }
        post_by_id[p.post_id] = &p;
        auto [it, fresh] = first_id.emplace(p.thread_id, p.post_id);
        if (!fresh) it->second = std::min(it->second, p.post_id);
    }

    std::unordered_map<std::int64_t, std::vector<std::string>> title_hits;
    std::unordered_map<std::int64_t, std::vector<std::string>> first_hits;
    auto names_in = [&](const std::string& raw) {
        std::vector<std::string> hits;
        const auto low = to_lower(raw);
        for (const auto& [name, id] : vendors) {
            if (contains_on_boundary(low, name)) hits.push_back(name);
        }
        return hits;
    };
    for (const auto& t : threads) title_hits[t.thread_id] = names_in(t.title_raw);
    for (const auto& [tid, pid] : first_id) {
        auto it = post_by_id.find(pid);
        first_hits[tid] = it == post_by_id.end() ? std::vector<std::string>{} : names_in(it->second->raw_text);
    }

    const StopwordSet allowed(options.allowed_subforums.begin(), options.allowed_subforums.end());
    for (const auto& p : posts) {
        ++rep.posts_scanned;
        const auto& thread = *thread_by_id.at(p.thread_id);
        if (!allowed.count(thread.subforum)) {
            ++rep.posts_outside_subforums;
            continue;
        }
        if (options.window && !options.window->contains(p.timestamp)) {
            ++rep.posts_outside_window;
            continue;
        }

        std::map<std::string, MentionRule> found;  // lowercase name -> best rule
        auto add = [&](const std::vector<std::string>& names, MentionRule rule, std::size_t& fired) {
            for (const auto& n : names) {
                ++fired;
                auto [it, fresh] = found.emplace(n, rule);
                if (!fresh && rule < it->second) it->second = rule;
            }
        };
        add(names_in(p.raw_text), MentionRule::direct, rep.direct_fired);
        add(title_hits[p.thread_id], MentionRule::thread_title, rep.title_fired);
        add(first_hits[p.thread_id], MentionRule::thread_first_post, rep.first_post_fired);

        const auto self = found.find(to_lower(p.author_id));
        if (self != found.end()) {
            found.erase(self);
            ++rep.self_mentions_removed;
        }
        if (found.empty()) continue;
        if (found.size() > 1) {
            ++rep.posts_multi_vendor;
            if (options.mode == MentionMode::exclusive) continue;
        }
        const int week = options.window ? week_index(p.timestamp, options.window->start) : 0;
        ++rep.mention_posts;
        for (const auto& [name, rule] : found) {
            result.mentions.push_back({p.post_id, vendors.at(name), rule, week});
        }
    }

    std::sort(result.mentions.begin(), result.mentions.end(), [](const Mention& a, const Mention& b) {
        return std::tie(a.post_id, a.vendor_id) < std::tie(b.post_id, b.vendor_id);
    });
    for (const auto& m : result.mentions) {
        switch (m.rule) {
            case MentionRule::direct:
                ++rep.direct;
                break;
            case MentionRule::thread_title:
                ++rep.thread_title;
                break;
            case MentionRule::thread_first_post:
                ++rep.thread_first_post;
                break;
        }
    }
    return result;
}

ExperienceClass classify_author_experience(const ForumPost& post, int threshold) {
    if (!post.author_post_count) return {Experience::inexperienced, true};
    return {*post.author_post_count >= threshold ? Experience::experienced : Experience::inexperienced, false};
}

std::string mentions_to_csv(std::span<const Mention> mentions) {
    std::ostringstream out;
    out << "post_id,vendor_id,rule,week\n";
    for (const auto& m : mentions) out << m.post_id << ',' << m.vendor_id << ',' << to_string(m.rule) << ',' << m.week << '\n';
    return out.str();
}

std::vector<Mention> mentions_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::getline(in, line);
    if (line != "post_id,vendor_id,rule,week") throw InvalidInput("mentions CSV: unexpected header");
    std::vector<Mention> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string field; std::getline(ls, field, ',');) f.push_back(field);
        if (f.size() != 4) throw InvalidInput("mentions CSV: bad line '" + line + "'");
        Mention m;
        auto parse_int = [&](const std::string& s, auto& v) {
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || ptr != s.data() + s.size()) throw InvalidInput("mentions CSV: bad number '" + s + "'");
        };
        parse_int(f[0], m.post_id);
        m.vendor_id = f[1];
        m.rule = rule_from_string(f[2]);
        parse_int(f[3], m.week);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace textdemand
