#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "textdemand/dates.hpp"
#include "textdemand/mentions.hpp"
#include "textdemand/textprep.hpp"

namespace textdemand {

/// One scrape of a product listing page.
struct ListingSnapshot {
    std::string snapshot_id;
    std::string item_id;
    std::string vendor_id;
    Date timestamp{};
    double price_btc = 0.0;
    bool nfe = false;  // listing says "no finalize early"
    std::optional<double> item_rating;
    std::optional<double> vendor_rating;
    std::string volume_category;  // e.g. "0", "1~5", "6~10"
    std::string title;
    std::string description;
};

// Line-delimited JSON. Readers throw InvalidInput naming the line number on
// a malformed record; blank lines are skipped. Writers emit one compact
// object per line with keys in a fixed order.

std::vector<Document> parse_documents_jsonl(std::string_view text);
std::string documents_to_jsonl(const std::vector<Document>& docs);

std::vector<ForumThread> parse_threads_jsonl(std::string_view text);
std::string threads_to_jsonl(const std::vector<ForumThread>& threads);

std::vector<ForumPost> parse_posts_jsonl(std::string_view text);
std::string posts_to_jsonl(const std::vector<ForumPost>& posts);

std::vector<ListingSnapshot> parse_listings_jsonl(std::string_view text);
std::string listings_to_jsonl(const std::vector<ListingSnapshot>& listings);

/// One vendor id per line; blank lines and `#` comments ignored.
std::vector<std::string> parse_roster(std::string_view text);

std::string read_file(const std::string& path);
/// Writes through a temporary file and rename, so readers never see a
/// partial file.
void write_file(const std::string& path, std::string_view content);

}  // namespace textdemand
