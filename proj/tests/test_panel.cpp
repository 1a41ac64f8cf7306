#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "textdemand/errors.hpp"
#include "textdemand/panel.hpp"
#include "support/oracles.hpp"

using namespace textdemand;
using namespace textdemand::testing;

namespace {

const Date kStart = kPanelStart;

PanelConfig config(int days = 27) {
    PanelConfig c;
    c.window = {kStart, day(days)};
    return c;
}

std::size_t row_of(const PanelTable& t, const std::string& item, int week) {
    for (std::size_t r = 0; r < t.n_rows(); ++r)
        if (t.item_ids[r] == item && t.weeks[r] == week) return r;
    FAIL("row not found");
    return 0;
}

}  // namespace

TEST_CASE("weekly sales binning") {
    std::vector<ReviewEvent> r{review("A", "v", 0, 0), review("A", "v", 3, 0), review("A", "v", 9, 0),
                               review("A", "v", 40, 0), review("B", "v", -1, 0)};
    const auto s = weekly_sales(r, {kStart, day(27)});
    CHECK(s.at("A", 0) == 2);
    CHECK(s.at("A", 1) == 1);
    CHECK(s.at("A", 2) == 0);
    CHECK(s.outside_window == 2);
    CHECK(s.in_window == 3);
}

TEST_CASE("weekly sales equals brute-force recount") {
    std::mt19937_64 rng(4);
    std::vector<ReviewEvent> r;
    for (int k = 0; k < 1000; ++k) r.push_back(review("i" + std::to_string(rng() % 7), "v", static_cast<int>(rng() % 80) - 5, 0));
    const SampleWindow w{kStart, day(69)};
    const auto s = weekly_sales(r, w);
    std::size_t total = 0;
    for (int i = 0; i < 7; ++i) {
        for (int t = 0; t < w.n_weeks(); ++t) {
            int n = 0;
            for (const auto& e : r) {
                const auto dd = (e.timestamp - kStart).count();
                if (e.item_id == "i" + std::to_string(i) && dd >= 0 && dd <= 69 && dd / 7 == t) ++n;
            }
            CHECK(s.at("i" + std::to_string(i), t) == n);
            total += static_cast<std::size_t>(n);
        }
    }
    CHECK(total == s.in_window);
}

TEST_CASE("rolling stats use strictly earlier weeks") {
    std::vector<KeyedEvent> ev{{"v", 1, 1.0}, {"v", 3, -0.5}};
    const RollingIndex idx(ev);
    for (const auto& v : {idx.at("v", 2), rolling_vendor_stats(ev, "v", 2)}) {
        CHECK(v.mean == doctest::Approx(1.0));
        CHECK(v.count == 1);
    }
    CHECK(idx.at("v", 4).mean == doctest::Approx(0.25));
    CHECK(idx.at("v", 4).count == 2);
    CHECK_FALSE(idx.at("v", 1).mean.has_value());
    CHECK(idx.at("v", 1).count == 0);
    CHECK(idx.at("other", 10).count == 0);
    std::vector<KeyedEvent> single{{"v", 5, 2.0}};
    CHECK(RollingIndex(single).at("v", 5).count == 0);
    CHECK(RollingIndex(single).at("v", 6).count == 1);
}

TEST_CASE("rolling index equals brute-force filtered mean") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    std::vector<KeyedEvent> ev;
    for (int k = 0; k < 500; ++k) ev.push_back({"v" + std::to_string(rng() % 5), static_cast<int>(rng() % 30), z(rng)});
    const RollingIndex idx(ev);
    for (int v = 0; v < 5; ++v) {
        const auto key = "v" + std::to_string(v);
        for (int t = -1; t <= 31; ++t) {
            double sum = 0;
            std::size_t n = 0;
            for (const auto& e : ev)
                if (e.key == key && e.week < t) {
                    sum += e.score;
                    ++n;
                }
            const auto got = idx.at(key, t);
            CHECK(got.count == n);
            if (n) CHECK(*got.mean == doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-12));
        }
    }
}

TEST_CASE("one item one week without vendor history") {
    PanelInputs in;
    in.listings.push_back(snap("s1", "A", "v", 2, 0.5));
    const auto b = assemble_panel(in, config(6));
    REQUIRE(b.table.n_rows() == 1);
    CHECK(b.table.column("zero_reviews_flag")[0] == 1.0);
    CHECK(b.table.column("zero_mentions_flag")[0] == 1.0);
    CHECK(b.table.column("avg_vendor_review_sent")[0] == 0.0);
    CHECK(b.table.column("avg_vendor_forum_sent")[0] == 0.0);
    CHECK(b.table.column("log_n_reviews")[0] == 0.0);
    CHECK(b.table.column("sales")[0] == 0.0);
    CHECK(b.table.column("log_price")[0] == doctest::Approx(std::log(0.5)));
    CHECK(b.table.column("item_rating_missing")[0] == 1.0);
}

TEST_CASE("3 items x 4 weeks hand-built table") {
    PanelInputs in;
    // A: listed all four weeks, price change in week 2 (two snapshots that week, later wins)
    in.listings.push_back(snap("A0", "A", "v1", 0, 1.0, false, 4.0, 4.5, "0"));
    in.listings.push_back(snap("A1", "A", "v1", 15, 2.0, true, 4.0, 4.5, "1~5"));
    in.listings.push_back(snap("A2", "A", "v1", 17, 4.0, true, 4.0, 4.5, "1~5"));
    in.listings.push_back(snap("A3", "A", "v1", 27, 4.0, true, 4.0, 4.5, "1~5"));
    // B: first seen week 1, reviewed in week 3
    in.listings.push_back(snap("B0", "B", "v1", 8, 0.5, false, {}, {}, "0"));
    // C: listed in week 2 only, reviewed in week 0 (span backfilled)
    in.listings.push_back(snap("C0", "C", "v2", 14, 0.25, false, 3.0, 5.0, "0"));

    in.reviews = {review("A", "v1", 1, 1.0), review("A", "v1", 2, -1.0), review("A", "v1", 10, 2.0),
                  review("B", "v1", 22, 0.5), review("C", "v2", 3, -2.0)};
    in.mentions = {mention("v1", 9, 0.3), mention("v2", 20, -1.0), mention("v2", 21, 0.0)};

    const auto b = assemble_panel(in, config(27));
    const auto& t = b.table;
    // rows: A weeks 0-3, B weeks 1-3, C weeks 0-2
    REQUIRE(t.n_rows() == 10);
    struct Row {
        std::string item;
        int week;
        double sales, rev_avg, log_n_rev, zero_rev, forum_avg, zero_forum, log_price, nfe, vol;
        std::string snapshot;
    };
    const double l2 = std::log(2.0), l3 = std::log(3.0);
    const std::vector<Row> expect{
        {"A", 0, 2, 0, 0, 1, 0, 1, std::log(1.0), 0, 0, "A0"},
        {"A", 1, 1, 0, l2, 0, 0, 1, std::log(1.0), 0, 0, "A0"},
        {"A", 2, 0, 2.0 / 3.0, l3, 0, 0.3, 0, std::log(4.0), 1, 1, "A2"},
        {"A", 3, 0, 2.0 / 3.0, l3, 0, 0.3, 0, std::log(4.0), 1, 1, "A3"},
        {"B", 1, 0, 0, l2, 0, 0, 1, std::log(0.5), 0, 0, "B0"},
        {"B", 2, 0, 2.0 / 3.0, l3, 0, 0.3, 0, std::log(0.5), 0, 0, "B0"},
        {"B", 3, 1, 2.0 / 3.0, l3, 0, 0.3, 0, std::log(0.5), 0, 0, "B0"},
        {"C", 0, 1, 0, 0, 1, 0, 1, std::log(0.25), 0, 0, "C0"},
        {"C", 1, 0, -2.0, 0, 0, 0, 1, std::log(0.25), 0, 0, "C0"},
        {"C", 2, 0, -2.0, 0, 0, 0, 1, std::log(0.25), 0, 0, "C0"},
    };
    for (const auto& e : expect) {
        CAPTURE(e.item);
        CAPTURE(e.week);
        const auto r = row_of(t, e.item, e.week);
        CHECK(t.snapshot_ids[r] == e.snapshot);
        CHECK(t.column("sales")[r] == e.sales);
        CHECK(t.column("avg_vendor_review_sent")[r] == doctest::Approx(e.rev_avg));
        CHECK(t.column("log_n_reviews")[r] == doctest::Approx(e.log_n_rev));
        CHECK(t.column("zero_reviews_flag")[r] == e.zero_rev);
        CHECK(t.column("avg_vendor_forum_sent")[r] == doctest::Approx(e.forum_avg));
        CHECK(t.column("zero_mentions_flag")[r] == e.zero_forum);
        CHECK(t.column("log_price")[r] == doctest::Approx(e.log_price));
        CHECK(t.column("nfe_flag")[r] == e.nfe);
        CHECK(t.column("vol_1_5")[r] == e.vol);
    }
    CHECK_FALSE(t.has_column("vol_0"));  // baseline category
    CHECK(t.column("vendor_rating_missing")[row_of(t, "B", 2)] == 1.0);
    CHECK(t.column("item_rating")[row_of(t, "C", 1)] == 3.0);
    CHECK(b.summary.n_observations == 10);
    CHECK(b.summary.n_items == 3);
    CHECK(b.summary.n_vendors == 2);
    CHECK(b.summary.n_weeks == 4);
}

TEST_CASE("panel invariants on random markets") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto in = random_inputs(rng);
        const auto cfg = config(69);
        const auto b = assemble_panel(in, cfg);
        const auto& t = b.table;

        // sales conservation over paneled items
        std::set<std::string> items(t.item_ids.begin(), t.item_ids.end());
        std::size_t expected = 0;
        for (const auto& r : in.reviews)
            if (items.count(r.item_id) && cfg.window.contains(r.timestamp)) ++expected;
        const auto& sales = t.column("sales");
        CHECK(std::accumulate(sales.begin(), sales.end(), 0.0) == static_cast<double>(expected));
        CHECK(b.summary.items_without_snapshots == 1);

        // flag consistency
        for (const char* prefix : {"review", "forum"}) {
            const auto& avg = t.column(prefix == std::string("review") ? "avg_vendor_review_sent" : "avg_vendor_forum_sent");
            const auto& flag = t.column(prefix == std::string("review") ? "zero_reviews_flag" : "zero_mentions_flag");
            const auto& logn = t.column(prefix == std::string("review") ? "log_n_reviews" : "log_n_mentions");
            for (std::size_t r = 0; r < t.n_rows(); ++r) {
                if (flag[r] == 1.0) {
                    CHECK(avg[r] == 0.0);
                    CHECK(logn[r] == 0.0);
                }
            }
        }

        // shuffled inputs give the same table after canonical sort
        std::shuffle(in.reviews.begin(), in.reviews.end(), rng);
        std::shuffle(in.mentions.begin(), in.mentions.end(), rng);
        std::shuffle(in.listings.begin(), in.listings.end(), rng);
        auto again = assemble_panel(in, cfg).table;
        auto sorted = t;
        sorted.sort_canonical();
        again.sort_canonical();
        CHECK(again.to_csv() == sorted.to_csv());
    }
}

TEST_CASE("no look-ahead: events at week >= t leave week-t covariates unchanged") {
    std::mt19937_64 rng(99);
    std::size_t compared = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto r = look_ahead_trial(rng);
        INFO(r.first_mismatch);
        CHECK(r.mismatches == 0);
        compared += r.rows_compared;
    }
    CHECK(compared > 200);
}

TEST_CASE("interactions") {
    PanelInputs in;
    in.listings.push_back(snap("s", "A", "v", 0, 1.0, true));
    in.listings.push_back(snap("s2", "B", "v", 0, 1.0, false));
    in.listings.push_back(snap("s3", "A", "v", 14, 1.0, true));
    in.listings.push_back(snap("s4", "B", "v", 14, 1.0, false));
    in.reviews = {review("A", "v", 1, 1.5, 12), review("A", "v", 2, -0.5, 3), review("A", "v", 8, 1.0, 10)};
    in.mentions = {mention("v", 1, 0.7, 250), mention("v", 2, -0.1)};
    const auto cfg = config(20);
    auto t = assemble_panel(in, cfg).table;

    std::vector<double> a(t.n_rows(), 2.0), bcol(t.n_rows(), 3.0);
    t.set_column({"a", ColumnRole::covariate, ""}, a);
    t.set_column({"b", ColumnRole::covariate, ""}, bcol);
    InteractionSpec spec;
    spec.products = {{"a", "b"}, {"avg_vendor_review_sent", "log_n_reviews"}};
    spec.experience_split = spec.finalize_split = spec.own_other = true;
    attach_interactions(t, spec, in, cfg);
    CHECK(t.column("a:b")[0] == 6.0);
    CHECK(t.info("a:b").role == ColumnRole::interaction);

    const auto a1 = row_of(t, "A", 1);
    const auto b1 = row_of(t, "B", 1);
    const auto a2 = row_of(t, "A", 2);
    // A week 1: reviews before are days 1 and 2 (week 0), both on A.
    CHECK(t.column("avg_own_review_sent")[a1] == doctest::Approx(0.5));
    CHECK(t.column("zero_other_reviews_flag")[a1] == 1.0);
    CHECK(t.column("avg_other_review_sent")[a1] == 0.0);
    CHECK(t.column("zero_own_reviews_flag")[b1] == 1.0);
    CHECK(t.column("avg_other_review_sent")[b1] == doctest::Approx(0.5));
    CHECK(t.column("avg_own_review_sent")[a2] == doctest::Approx(2.0 / 3.0));

    // experience split equals two independent rolling runs
    CHECK(t.column("avg_review_sent_experienced")[a1] == doctest::Approx(1.5));
    CHECK(t.column("avg_review_sent_inexperienced")[a1] == doctest::Approx(-0.5));
    CHECK(t.column("avg_review_sent_experienced")[a2] == doctest::Approx(1.25));
    CHECK(t.column("avg_forum_sent_experienced")[a1] == doctest::Approx(0.7));
    CHECK(t.column("avg_forum_sent_inexperienced")[a1] == doctest::Approx(-0.1));  // missing count -> inexperienced

    const auto& s = t.column("avg_vendor_review_sent");
    CHECK(t.column("avg_vendor_review_sent:nfe")[a1] == s[a1]);
    CHECK(t.column("avg_vendor_review_sent:fe")[a1] == 0.0);
    CHECK(t.column("avg_vendor_review_sent:fe")[b1] == s[b1]);
    CHECK(t.column("avg_vendor_review_sent:log_n_reviews")[a1] == doctest::Approx(s[a1] * std::log(2.0)));

    InteractionSpec bad;
    bad.products = {{"a", "nope"}};
    CHECK_THROWS_AS(attach_interactions(t, bad, in, cfg), InvalidInput);
}

TEST_CASE("split-stream oracle on random markets") {
    std::mt19937_64 rng(31);
    auto in = random_inputs(rng, 10, 2);
    const auto cfg = config(69);
    auto t = assemble_panel(in, cfg).table;
    InteractionSpec spec;
    spec.experience_split = true;
    attach_interactions(t, spec, in, cfg);
    std::vector<KeyedEvent> exp, inexp;
    for (const auto& r : in.reviews) {
        if (!cfg.window.contains(r.timestamp)) continue;
        auto& dst = r.buyer_deals && *r.buyer_deals >= 10 ? exp : inexp;
        dst.push_back({r.vendor_id, week_index(r.timestamp, kStart), r.score});
    }
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
        const auto e = rolling_vendor_stats(exp, t.vendor_ids[r], t.weeks[r]);
        const auto i = rolling_vendor_stats(inexp, t.vendor_ids[r], t.weeks[r]);
        CHECK(t.column("avg_review_sent_experienced")[r] == doctest::Approx(e.mean.value_or(0.0)));
        CHECK(t.column("zero_reviews_experienced_flag")[r] == (e.count == 0 ? 1.0 : 0.0));
        CHECK(t.column("avg_review_sent_inexperienced")[r] == doctest::Approx(i.mean.value_or(0.0)));
    }
}

TEST_CASE("excluded vendors and text components") {
    PanelInputs in;
    in.listings.push_back(snap("s1", "A", "apple", 0, 1.0));
    in.listings.push_back(snap("s2", "B", "v", 0, 1.0));
    in.reviews = {review("A", "apple", 1, 1.0), review("B", "v", 1, 1.0)};
    in.text_pcs = {{"s2", {0.1, -0.2}}};
    auto cfg = config(6);
    cfg.excluded_vendors = {"apple"};
    const auto b = assemble_panel(in, cfg);
    REQUIRE(b.table.n_rows() == 1);
    CHECK(b.table.item_ids[0] == "B");
    CHECK(b.table.column("pc_2")[0] == -0.2);
    CHECK(b.table.info("pc_1").role == ColumnRole::text_pc);
    CHECK(b.summary.reviews_excluded_vendor == 1);
    CHECK(b.summary.listings_excluded_vendor == 1);
    in.text_pcs = {{"other", {0.1}}};
    CHECK_THROWS_AS(assemble_panel(in, cfg), InvalidInput);
}

TEST_CASE("panel CSV round trip") {
    std::mt19937_64 rng(5);
    const auto b = assemble_panel(random_inputs(rng), config(69));
    const auto back = PanelTable::from_csv(b.table.to_csv(), b.table.schema_csv());
    CHECK(back.to_csv() == b.table.to_csv());
    CHECK(back.schema_csv() == b.table.schema_csv());
    CHECK(b.summary.to_text().find("Number of Observations") != std::string::npos);
}
