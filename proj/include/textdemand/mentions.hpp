#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "textdemand/dates.hpp"
#include "textdemand/textprep.hpp"

namespace textdemand {

struct ForumPost {
    std::int64_t post_id = 0;
    std::int64_t thread_id = 0;
    std::string author_id;
    bool author_is_vendor = false;
    std::optional<int> author_post_count;
    std::optional<int> karma_pos;
    std::optional<int> karma_neg;
    Date timestamp{};
    std::string raw_text;
    std::vector<std::string> tokens;
};

struct ForumThread {
    std::int64_t thread_id = 0;
    std::string title_raw;
    std::vector<std::string> title_tokens;
    std::string subforum;
    std::vector<std::int64_t> posts;  // post ids; the smallest is the first post
};

enum class MentionRule { direct, thread_title, thread_first_post };
enum class MentionMode { exclusive, duplicate };

std::string_view to_string(MentionRule rule);
std::string_view to_string(MentionMode mode);
MentionMode mention_mode_from_string(std::string_view s);

struct Mention {
    std::int64_t post_id = 0;
    std::string vendor_id;
    MentionRule rule = MentionRule::direct;
    int week = 0;

    auto operator<=>(const Mention&) const = default;
};

/// Shipped English word list used to exclude vendors named like words.
const StopwordSet& default_english_words();

/// The subforums the mention rules are applied in.
std::vector<std::string> default_subforums();

struct MentionOptions {
    MentionMode mode = MentionMode::exclusive;
    std::vector<std::string> allowed_subforums = default_subforums();
    std::vector<std::string> manual_exclusions;  // vendor ids dropped by hand
    std::optional<SampleWindow> window;          // posts outside are dropped
};

/// Tallies reported next to the mention list. "Fired" counts are
/// overlapping: a post naming a vendor in its body inside a thread whose
/// title also names that vendor adds to both direct_fired and title_fired.
/// The by-rule counts use the precedence-resolved rule tags.
struct MentionReport {
    std::size_t posts_scanned = 0;
    std::size_t posts_outside_subforums = 0;
    std::size_t posts_outside_window = 0;
    std::size_t posts_multi_vendor = 0;  // naming two or more distinct vendors
    std::size_t self_mentions_removed = 0;
    std::size_t vendors_excluded_english = 0;
    std::size_t vendors_excluded_manual = 0;
    std::size_t mention_posts = 0;  // distinct posts carrying a mention
    std::size_t direct = 0;
    std::size_t thread_title = 0;
    std::size_t thread_first_post = 0;
    std::size_t direct_fired = 0;
    std::size_t title_fired = 0;
    std::size_t first_post_fired = 0;
};

struct MentionResult {
    std::vector<Mention> mentions;  // sorted by (post_id, vendor_id)
    MentionReport report;
};

/// True if `name` (already lowercase) occurs in `text_lower` with no
/// alphanumeric character directly before or after it.
bool contains_on_boundary(std::string_view text_lower, std::string_view name);

std::string to_lower(std::string_view s);

/// Applies the direct / thread-title / first-post rules. English-word
/// membership is case-insensitive. Throws InvalidInput if vendor_ids is
/// empty or a post references an unknown thread.
MentionResult detect_mentions(std::span<const ForumThread> threads, std::span<const ForumPost> posts,
                              std::span<const std::string> vendor_ids, const StopwordSet& english_words,
                              const MentionOptions& options = {});

enum class Experience { inexperienced, experienced };

struct ExperienceClass {
    Experience level = Experience::inexperienced;
    bool count_missing = false;
};

ExperienceClass classify_author_experience(const ForumPost& post, int threshold = 200);

/// post_id,vendor_id,rule,week
std::string mentions_to_csv(std::span<const Mention> mentions);
std::vector<Mention> mentions_from_csv(std::string_view text);

}  // namespace textdemand
