#include "annot/parsing.hpp"
#include "golden_cells.hpp"

#include <doctest.h>

using namespace annot;

namespace {

const std::vector<std::string> one{"a"};
const std::vector<std::string> four{"a", "b", "c", "d"};
const std::vector<std::string> two{"x", "y"};
const auto d10 = RatingScaleSpec::parse("D-10");
const auto b1 = RatingScaleSpec::parse("B-1");

double rating(const ParseOutcome& o, std::size_t i = 0) {
    REQUIRE(o.judgment);
    return o.judgment->ratings.at(i).second;
}

} // namespace

TEST_SUITE("parsing") {

TEST_CASE("single ratings in the requested format and common variants") {
    CHECK(rating(parse_rating("joy intensity: 7", one, d10)) == 7);
    CHECK(rating(parse_rating("Joy Intensity: 7.", one, d10)) == 7);
    CHECK(rating(parse_rating("7", one, d10)) == 7);
    CHECK(rating(parse_rating("I would say 6/10", one, d10)) == 6);
    CHECK(rating(parse_rating("The intensity is 3 out of 10.", one, d10)) == 3);
    CHECK(rating(parse_rating("**joy intensity:** 10", one, d10)) == 10);
    CHECK(rating(parse_rating("joy intensity: 0.83456", one, b1)) == doctest::Approx(0.8346).epsilon(1e-12));
    const auto j = parse_rating("joy intensity: 4", one, d10);
    CHECK(j.judgment->protocol == Protocol::rs);
    CHECK(j.judgment->ratings.front().first == "a");
}

TEST_CASE("unusable single ratings are rejected with a reason") {
    for (const char* bad : {"", "I cannot rate this.", "joy intensity: 11", "joy intensity: -1", "3 or 4",
                            "joy intensity: high"}) {
        CAPTURE(bad);
        const auto o = parse_rating(bad, one, d10);
        CHECK_FALSE(o);
        CHECK_FALSE(o.reason.empty());
    }
    CHECK_FALSE(parse_rating("joy intensity: 1.5", one, b1));
}

TEST_CASE("four ratings by index, in any order") {
    const auto o = parse_rating("Text 2: 5\nText 1: 3\nText 4: 10\nText 3: 0", four, d10);
    REQUIRE(o.judgment);
    CHECK(o.judgment->protocol == Protocol::rs_t);
    CHECK(o.judgment->ratings == std::vector<std::pair<std::string, double>>{{"a", 3}, {"b", 5}, {"c", 0}, {"d", 10}});
    CHECK(rating(parse_rating("Text 1: joy intensity: 7\nText 2: joy intensity: 1\nText 3: joy intensity: 2\n"
                              "Text 4: joy intensity: 3",
                              four, d10),
                 0) == 7);
    CHECK(rating(parse_rating("joy intensity: 1\njoy intensity: 2\njoy intensity: 3\njoy intensity: 4", four, d10),
                 3) == 4);
}

TEST_CASE("four ratings with gaps or conflicts are rejected") {
    CHECK_FALSE(parse_rating("Text 1: 3\nText 2: 5\nText 3: 0", four, d10));
    CHECK_FALSE(parse_rating("Text 1: 3\nText 1: 4\nText 3: 0\nText 4: 1", four, d10));
    CHECK_FALSE(parse_rating("Text 1: 3\nText 2: 5\nText 3: 0\nText 5: 1", four, d10));
}

TEST_CASE("best and worst in the requested format") {
    const auto o = parse_best_worst("Most joy Speaker: 2\nLeast joy Speaker: 4", four);
    REQUIRE(o.judgment);
    CHECK(*o.judgment->best_id == "b");
    CHECK(*o.judgment->worst_id == "d");
    CHECK(o.judgment->ids == four);
}

TEST_CASE("best and worst variants") {
    auto pick = [](const std::string& text, std::span<const std::string> texts = {}) {
        const auto o = parse_best_worst(text, four, texts);
        REQUIRE_MESSAGE(o.judgment, o.reason);
        return std::make_pair(*o.judgment->best_id, *o.judgment->worst_id);
    };
    const auto bd = std::make_pair(std::string("b"), std::string("d"));
    CHECK(pick("Most joy Speaker: Speaker 2\nLeast joy Speaker: Speaker 4") == bd);
    CHECK(pick("**Most joy Speaker:** 2\n**Least joy Speaker:** 4") == bd);
    CHECK(pick("Most joy Speaker:\n2\nLeast joy Speaker:\n4") == bd);
    CHECK(pick("Least joy Speaker: 4\nMost joy Speaker: 2") == bd);
    CHECK(pick("Most joy Speaker: 2.\nLeast joy Speaker: #4") == bd);
    CHECK(pick("2, 4") == bd);
    const std::vector<std::string> texts{"alpha", "bravo text", "charlie", "delta words"};
    CHECK(pick("Most joy Speaker: bravo text\nLeast joy Speaker: Delta words", texts) == bd);
}

TEST_CASE("unacceptable best/worst answers") {
    for (const char* bad : {"Most joy Speaker: 1\nLeast joy Speaker: 1", "Most joy Speaker: 5\nLeast joy Speaker: 1",
                            "Most joy Speaker: 2", "I can't decide.", "1, 2, 3", "Most joy Speaker: 2\nMost joy Speaker: 3\nLeast joy Speaker: 1"}) {
        CAPTURE(bad);
        const auto o = parse_best_worst(bad, four);
        CHECK_FALSE(o);
        CHECK_FALSE(o.reason.empty());
    }
}

TEST_CASE("pairs use the same format with two speakers") {
    const auto o = parse_best_worst("Most joy Speaker: 2\nLeast joy Speaker: 1", two);
    REQUIRE(o.judgment);
    CHECK(o.judgment->protocol == Protocol::pc);
    CHECK(*o.judgment->best_id == "y");
    CHECK(*o.judgment->worst_id == "x");
    CHECK_FALSE(parse_best_worst("Most joy Speaker: 3\nLeast joy Speaker: 1", two));
}

TEST_CASE("multi-emotion answers") {
    const auto& dims = testing::golden_emotions();
    std::string ratings;
    for (const auto& d : dims)
        for (int i = 1; i <= 4; ++i) ratings += "Text " + std::to_string(i) + " " + d + " intensity: " + std::to_string(i + 2) + "\n";
    const auto r = parse_adapted_ratings(ratings, four, dims, d10);
    REQUIRE(r.judgment);
    CHECK(r.judgment->adapted());
    CHECK(r.judgment->per_dimension.size() == 6);
    CHECK(r.judgment->project("fear").ratings.at(3) == std::pair<std::string, double>{"d", 6});
    CHECK_FALSE(parse_adapted_ratings(ratings.substr(0, ratings.rfind("Text 4")), four, dims, d10));

    std::string picks;
    for (const auto& d : dims) picks += "Most " + d + " Speaker: 3\nLeast " + d + " Speaker: 1\n";
    const auto p = parse_adapted_best_worst(picks, four, dims);
    REQUIRE(p.judgment);
    CHECK(*p.judgment->project("surprise").best_id == "c");
    CHECK(*p.judgment->project("anger").worst_id == "a");
    CHECK_THROWS_AS(p.judgment->project("love"), ValidationError);
    const auto missing = picks.substr(0, picks.find("Most sadness"));
    CHECK_FALSE(parse_adapted_best_worst(missing, four, dims));
}

TEST_CASE("dispatch on the prompt") {
    const auto texts = testing::golden_texts();
    const auto bws = render_prompt(Protocol::bws, texts, "joy", std::nullopt);
    CHECK(*parse_response(bws, "Most joy Speaker: 1\nLeast joy Speaker: 3").judgment->worst_id == "g3");
    const auto rs = render_prompt(Protocol::rs, std::span(texts.data(), 1), "joy", d10);
    CHECK(rating(parse_response(rs, "joy intensity: 9")) == 9);
    const auto ad = render_adapted_multiemotion(texts, testing::golden_emotions(), std::nullopt, Protocol::bws);
    CHECK_FALSE(parse_response(ad, "Most joy Speaker: 1\nLeast joy Speaker: 3"));
}

TEST_CASE("judgments survive JSON") {
    const auto o = parse_best_worst("Most joy Speaker: 2\nLeast joy Speaker: 4", four);
    CHECK(judgment_from_json(to_json(*o.judgment)) == *o.judgment);
    const auto r = parse_rating("Text 1: 3\nText 2: 5\nText 3: 0\nText 4: 10", four, d10);
    CHECK(judgment_from_json(to_json(*r.judgment)) == *r.judgment);
    std::string picks;
    for (const auto& d : testing::golden_emotions()) picks += "Most " + d + " Speaker: 3\nLeast " + d + " Speaker: 1\n";
    const auto p = parse_adapted_best_worst(picks, four, testing::golden_emotions());
    CHECK(judgment_from_json(to_json(*p.judgment)) == *p.judgment);
}

}
