#include "textdemand/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "textdemand/errors.hpp"

namespace textdemand {

using nlohmann::json;

namespace {

template <typename F>
void for_each_record(std::string_view text, const char* what, F&& f) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            f(json::parse(line));
        } catch (const json::exception& e) {
            throw InvalidInput(std::string(what) + " line " + std::to_string(n) + ": " + e.what());
        } catch (const InvalidInput& e) {
            throw InvalidInput(std::string(what) + " line " + std::to_string(n) + ": " + e.what());
        }
    }
}

template <typename T>
std::optional<T> opt(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<T>();
}

template <typename T>
json or_null(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

std::vector<Document> parse_documents_jsonl(std::string_view text) {
    std::vector<Document> out;
    for_each_record(text, "documents", [&](const json& j) {
        Document d;
        d.doc_id = j.at("doc_id").get<std::string>();
        d.kind = doc_kind_from_string(j.at("kind").get<std::string>());
        d.raw_text = j.at("text").get<std::string>();
        d.vendor_id = opt<std::string>(j, "vendor_id");
        d.author_id = opt<std::string>(j, "author_id");
        d.timestamp = parse_date(j.at("timestamp").get<std::string>());
        d.rating = opt<int>(j, "rating");
        if (d.rating && (*d.rating < 0 || *d.rating > 5)) throw InvalidInput("rating outside 0..5");
        if (d.rating.has_value() != (d.kind == DocKind::review)) {
            throw InvalidInput("document " + d.doc_id + ": rating must be present exactly for reviews");
        }
        if (auto e = j.find("extra"); e != j.end() && !e->is_null()) {
            for (const auto& [k, v] : e->items()) d.extra[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
        out.push_back(std::move(d));
    });
    return out;
}

std::string documents_to_jsonl(const std::vector<Document>& docs) {
    std::string out;
    for (const auto& d : docs) {
        json j = json::object();
        j["doc_id"] = d.doc_id;
        j["kind"] = std::string(to_string(d.kind));
        j["text"] = d.raw_text;
        if (d.vendor_id) j["vendor_id"] = *d.vendor_id;
        if (d.author_id) j["author_id"] = *d.author_id;
        j["timestamp"] = format_date(d.timestamp);
        if (d.rating) j["rating"] = *d.rating;
        j["extra"] = d.extra;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<ForumThread> parse_threads_jsonl(std::string_view text) {
    std::vector<ForumThread> out;
    for_each_record(text, "threads", [&](const json& j) {
        ForumThread t;
        t.thread_id = j.at("thread_id").get<std::int64_t>();
        t.title_raw = j.at("title").get<std::string>();
        t.subforum = j.at("subforum").get<std::string>();
        t.posts = j.value("posts", std::vector<std::int64_t>{});
        out.push_back(std::move(t));
    });
    return out;
}

std::string threads_to_jsonl(const std::vector<ForumThread>& threads) {
    std::string out;
    for (const auto& t : threads) {
        json j = json::object();
        j["thread_id"] = t.thread_id;
        j["title"] = t.title_raw;
        j["subforum"] = t.subforum;
        j["posts"] = t.posts;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<ForumPost> parse_posts_jsonl(std::string_view text) {
    std::vector<ForumPost> out;
    for_each_record(text, "posts", [&](const json& j) {
        ForumPost p;
        p.post_id = j.at("post_id").get<std::int64_t>();
        p.thread_id = j.at("thread_id").get<std::int64_t>();
        p.author_id = j.at("author_id").get<std::string>();
        p.author_is_vendor = j.value("author_is_vendor", false);
        p.author_post_count = opt<int>(j, "author_post_count");
        p.karma_pos = opt<int>(j, "karma_pos");
        p.karma_neg = opt<int>(j, "karma_neg");
        p.timestamp = parse_date(j.at("timestamp").get<std::string>());
        p.raw_text = j.at("text").get<std::string>();
        out.push_back(std::move(p));
    });
    return out;
}

std::string posts_to_jsonl(const std::vector<ForumPost>& posts) {
    std::string out;
    for (const auto& p : posts) {
        json j = json::object();
        j["post_id"] = p.post_id;
        j["thread_id"] = p.thread_id;
        j["author_id"] = p.author_id;
        j["author_is_vendor"] = p.author_is_vendor;
        j["author_post_count"] = or_null(p.author_post_count);
        j["karma_pos"] = or_null(p.karma_pos);
        j["karma_neg"] = or_null(p.karma_neg);
        j["timestamp"] = format_date(p.timestamp);
        j["text"] = p.raw_text;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<ListingSnapshot> parse_listings_jsonl(std::string_view text) {
    std::vector<ListingSnapshot> out;
    for_each_record(text, "listings", [&](const json& j) {
        ListingSnapshot s;
        s.snapshot_id = j.at("snapshot_id").get<std::string>();
        s.item_id = j.at("item_id").get<std::string>();
        s.vendor_id = j.at("vendor_id").get<std::string>();
        s.timestamp = parse_date(j.at("timestamp").get<std::string>());
        s.price_btc = j.at("price_btc").get<double>();
        if (!(s.price_btc > 0.0)) throw InvalidInput("listing " + s.snapshot_id + ": price must be positive");
        s.nfe = j.value("nfe", false);
        s.item_rating = opt<double>(j, "item_rating");
        s.vendor_rating = opt<double>(j, "vendor_rating");
        s.volume_category = j.value("volume_category", std::string("0"));
        s.title = j.value("title", std::string());
        s.description = j.value("description", std::string());
        out.push_back(std::move(s));
    });
    return out;
}

std::string listings_to_jsonl(const std::vector<ListingSnapshot>& listings) {
    std::string out;
    for (const auto& s : listings) {
        json j = json::object();
        j["snapshot_id"] = s.snapshot_id;
        j["item_id"] = s.item_id;
        j["vendor_id"] = s.vendor_id;
        j["timestamp"] = format_date(s.timestamp);
        j["price_btc"] = s.price_btc;
        j["nfe"] = s.nfe;
        j["item_rating"] = or_null(s.item_rating);
        j["vendor_rating"] = or_null(s.vendor_rating);
        j["volume_category"] = s.volume_category;
        j["title"] = s.title;
        j["description"] = s.description;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<std::string> parse_roster(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        const auto start = line.find_first_not_of(' ');
        if (start == std::string::npos || line[start] == '#') continue;
        out.push_back(line.substr(start));
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
    const std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    const auto tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, target);
}

}  // namespace textdemand
