#include <doctest.h>

#include <fstream>

#include "support/recording.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"
#include "tsr/knowledge.hpp"

using namespace tsr;
using namespace tsr::knowledge;
namespace fs = std::filesystem;

namespace {

dataset::TemplateCatalog tiny_catalog(const test::TempDir& dir) {
    for (const char* id : {"stop", "yield", "no_entry", "speed_50"})
        save_png(dir / (std::string(id) + ".png"), Image(16, 16, Rgb{180, 10, 10}));
    std::ofstream out(dir / "catalog.json");
    out << R"json({"version":1,"classes":[
      {"class_id":"stop","display_name":"Stop","template_image_path":"stop.png"},
      {"class_id":"yield","display_name":"Yield","template_image_path":"yield.png"},
      {"class_id":"no_entry","display_name":"No Entry","template_image_path":"no_entry.png"},
      {"class_id":"speed_50","display_name":"Speed Limit (50km/h)","template_image_path":"speed_50.png"}
    ]})json";
    out.close();
    return dataset::load_template_catalog(dir / "catalog.json");
}

CharacteristicDescription char_of(const std::string& id, const std::string& tag) {
    CharacteristicDescription c;
    c.class_id = id;
    c.shape = "shape-" + tag;
    c.color = "color-" + tag;
    c.composition = "composition-" + tag;
    c.raw_text = c.facet_block();
    return c;
}

}  // namespace

TEST_CASE("context prompt embeds center coordinates exactly when enabled") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);
    SignRegion region = make_region({900, 261, 920, 281}, 441);
    REQUIRE(region.center == Point{910, 271});

    RecognitionConfig cfg;
    cfg.use_coordinates = true;
    std::string with = build_context_prompt(region, catalog, cfg);
    CHECK(with.find("(910, 271)") != std::string::npos);

    cfg.use_coordinates = false;
    std::string without = build_context_prompt(region, catalog, cfg);
    CHECK(without.find("(910, 271)") == std::string::npos);

    SUBCASE("prompt assembly is byte-deterministic") {
        cfg.use_coordinates = true;
        CHECK(build_context_prompt(region, catalog, cfg) ==
              build_context_prompt(region, catalog, cfg));
    }
    SUBCASE("hypothesis toggle controls the candidate block") {
        cfg.use_coordinates = true;
        cfg.use_hypothesis = true;
        std::string hyp = build_context_prompt(region, catalog, cfg);
        CHECK(hyp.find("Candidates:") != std::string::npos);
        CHECK(hyp.find("Speed Limit (50km/h)") != std::string::npos);  // catalog names listed
        cfg.use_hypothesis = false;
        std::string nohyp = build_context_prompt(region, catalog, cfg);
        CHECK(nohyp.find("Candidates:") == std::string::npos);
    }
}

TEST_CASE("context answers parse into background and resolved hypothesis") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);

    ContextAnswer a = parse_context_answer(
        "Background: a rainy intersection with two cars.\nCandidates: Stop; Yield", catalog, 5);
    CHECK(a.background == "a rainy intersection with two cars.");
    REQUIRE(a.hypothesis.size() == 2);
    CHECK(a.hypothesis[0].class_id == "stop");
    CHECK(a.hypothesis[1].class_id == "yield");

    SUBCASE("unmatched candidates are dropped") {
        ContextAnswer b = parse_context_answer("Background: x\nCandidates: Stop; Unicorn Crossing",
                                               catalog, 5);
        REQUIRE(b.hypothesis.size() == 1);
        CHECK(b.hypothesis[0].class_id == "stop");
    }
    SUBCASE("'none' resolves to an empty hypothesis") {
        CHECK(parse_context_answer("Background: x\nCandidates: none", catalog, 5).hypothesis.empty());
    }
    SUBCASE("max_hypothesis caps the list") {
        ContextAnswer c = parse_context_answer(
            "Background: x\nCandidates: Stop; Yield; No Entry; Speed Limit (50km/h)", catalog, 2);
        CHECK(c.hypothesis.size() == 2);
    }
    SUBCASE("unlabeled reply keeps the whole text as background") {
        ContextAnswer d = parse_context_answer("a plain description", catalog, 5);
        CHECK(d.background == "a plain description");
        CHECK(d.hypothesis.empty());
    }
}

TEST_CASE("gen_context wires the coordinate switch through to the request") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);
    lmm::MockScript script;
    script.default_response = "Background: a road.\nCandidates: Stop";
    auto [client, recorder] = test::make_recording_client(script);

    Image road(64, 48, Rgb{80, 80, 80});
    SignRegion region = make_region({10, 10, 29, 29}, 400);
    RecognitionConfig cfg;

    ContextDescription cont = gen_context(road, region, catalog, cfg, client, "img1");
    CHECK(cont.background_text == "a road.");
    REQUIRE(cont.hypothesis.size() == 1);
    CHECK(cont.hypothesis[0].class_id == "stop");
    REQUIRE(recorder->requests.size() == 1);
    const auto& req = recorder->requests[0];
    CHECK(req.stage == "context");
    CHECK(req.prompt_text().find("(20, 20)") != std::string::npos);
    int images = 0;
    for (const auto& part : req.user_parts)
        if (std::holds_alternative<lmm::ImageAttachment>(part)) ++images;
    CHECK(images == 1);

    SUBCASE("hypothesis disabled leaves the list empty even if the mock offers names") {
        RecognitionConfig no_hyp = cfg;
        no_hyp.use_hypothesis = false;
        ContextDescription c2 = gen_context(road, region, catalog, no_hyp, client, "img1");
        CHECK(c2.hypothesis.empty());
    }
}

TEST_CASE("characteristic prompt names all three facets and carries few-shot examples") {
    std::string prompt = build_characteristic_prompt(dataset::ClassRef{"stop", "Stop", ""});
    CHECK(prompt.find("shape") != std::string::npos);
    CHECK(prompt.find("color") != std::string::npos);
    CHECK(prompt.find("composition") != std::string::npos);
    CHECK(prompt.find("Example 1:") != std::string::npos);
    CHECK(prompt.find("Example 2:") != std::string::npos);
    CHECK(prompt.find("Sign: Stop") != std::string::npos);
}

TEST_CASE("characteristic answers parse labeled and pipe-separated forms") {
    auto parsed = parse_characteristic_answer("Shape: octagon\nColor: red/white\nComposition: STOP text");
    REQUIRE(parsed.has_value());
    CHECK(parsed->shape == "octagon");

    auto piped = parse_characteristic_answer("Shape: octagon | Color: red/white | Composition: STOP text");
    REQUIRE(piped.has_value());
    CHECK(piped->shape == "octagon");
    CHECK(piped->color == "red/white");
    CHECK(piped->composition == "STOP text");

    CHECK_FALSE(parse_characteristic_answer("Shape: octagon\nColor: red").has_value());
    CHECK_FALSE(parse_characteristic_answer("gibberish").has_value());
}

TEST_CASE("gen_characteristic retries once with a stricter reminder") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);
    lmm::MockScript script;
    script.default_response = "no labels here";
    script.rules.push_back({"characteristic", "exactly three lines", "",
                            "Shape: octagon\nColor: red\nComposition: STOP word"});
    auto [client, recorder] = test::make_recording_client(script);

    Image tpl(16, 16, Rgb{200, 0, 0});
    CharacteristicDescription c = gen_characteristic(tpl, *catalog.find("stop"), client);
    CHECK(c.shape == "octagon");
    CHECK(recorder->mock().total_calls() == 2);  // first malformed, retry parsed

    SUBCASE("still malformed after retry surfaces ParseFailure") {
        lmm::MockScript bad;
        bad.default_response = "never labeled";
        auto [client2, rec2] = test::make_recording_client(bad);
        try {
            gen_characteristic(tpl, *catalog.find("yield"), client2);
            FAIL("expected ParseFailure");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ParseFailure);
        }
        CHECK(rec2->mock().total_calls() == 2);
    }
}

TEST_CASE("gen_differential is text-only and stores under the normalized pair") {
    lmm::MockScript script;
    script.default_response = "Differences: A is octagonal, B is triangular.";
    auto [client, recorder] = test::make_recording_client(script);

    auto cu = char_of("stop", "u");
    auto cv = char_of("yield", "v");
    DifferentialDescription ab = gen_differential(cu, cv, "Stop", "Yield", client);
    DifferentialDescription ba = gen_differential(cv, cu, "Yield", "Stop", client);
    CHECK(ab.pair == std::pair<std::string, std::string>{"stop", "yield"});
    CHECK(ba.pair == ab.pair);
    CHECK(ab.text == "A is octagonal, B is triangular.");

    for (const auto& req : recorder->requests) {
        CHECK(req.stage == "differential");
        for (const auto& part : req.user_parts)
            CHECK_FALSE(std::holds_alternative<lmm::ImageAttachment>(part));  // no images
        CHECK(req.prompt_text().find(cu.raw_text) != std::string::npos);
        CHECK(req.prompt_text().find(cv.raw_text) != std::string::npos);
    }

    CHECK_THROWS_AS(normalize_pair("stop", "stop"), Error);
}

TEST_CASE("bank build covers classes and induced pairs, idempotently") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);
    dataset::SimilarityGroups groups;
    groups.groups = {{"no_entry", "stop", "yield"}};  // C(3,2) = 3 pairs

    lmm::MockScript script;
    script.default_response = "Differences: border and shape differ.";
    script.rules.push_back(
        {"characteristic", "", "", "Shape: round\nColor: red\nComposition: symbol"});
    auto [client, recorder] = test::make_recording_client(script);

    fs::path bank_path = dir / "bank.json";
    MemoryBank bank = build_bank(catalog, groups, client, {bank_path, false});
    CHECK(bank.characteristics.size() == 4);
    CHECK(bank.differentials.size() == 3);
    CHECK(bank.provenance.prompt_version == kPromptVersion);
    CHECK(recorder->mock().total_calls() == 7);

    SUBCASE("second build issues zero LMM calls") {
        recorder->mock().reset_counters();
        MemoryBank again = build_bank(catalog, groups, client, {bank_path, false});
        CHECK(recorder->mock().total_calls() == 0);
        CHECK(again.characteristics.size() == 4);
    }
    SUBCASE("resume after losing entries regenerates exactly the gap") {
        MemoryBank partial = load_bank(bank_path);
        partial.characteristics.erase("stop");
        partial.differentials.erase({"stop", "yield"});
        save_bank(partial, bank_path);
        recorder->mock().reset_counters();
        build_bank(catalog, groups, client, {bank_path, false});
        CHECK(recorder->mock().total_calls() == 2);
    }
    SUBCASE("overlapping groups deduplicate pairs") {
        dataset::SimilarityGroups overlap;
        overlap.groups = {{"no_entry", "speed_50", "stop"}, {"speed_50", "stop", "yield"}};
        recorder->mock().reset_counters();
        MemoryBank b2 = build_bank(catalog, overlap, client, {});
        CHECK(b2.differentials.size() == 5);
    }
    SUBCASE("empty groups still yield a valid bank") {
        MemoryBank b3 = build_bank(catalog, {}, client, {});
        CHECK(b3.differentials.empty());
        CHECK(b3.characteristics.size() == 4);
    }
}

TEST_CASE("bank persistence round-trips and validates coverage") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);
    dataset::SimilarityGroups groups;
    groups.groups = {{"stop", "yield"}};

    MemoryBank bank;
    bank.provenance = {"mock", "mock-model", "2026-01-01T00:00:00Z", kPromptVersion};
    for (const auto& ref : catalog.classes)
        bank.characteristics[ref.class_id] = char_of(ref.class_id, ref.class_id);
    bank.differentials[{"stop", "yield"}] =
        DifferentialDescription{{"stop", "yield"}, "different shapes"};

    fs::path path = dir / "bank.json";
    save_bank(bank, path);
    MemoryBank loaded = load_bank(path, catalog, groups);
    CHECK(loaded == bank);

    SUBCASE("missing class is reported by name") {
        bank.characteristics.erase("no_entry");
        save_bank(bank, path);
        try {
            load_bank(path, catalog, groups);
            FAIL("expected CoverageGap");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::CoverageGap);
            CHECK(std::string(e.what()).find("no_entry") != std::string::npos);
        }
    }
    SUBCASE("missing pair is reported") {
        bank.differentials.clear();
        save_bank(bank, path);
        CHECK_THROWS_AS(load_bank(path, catalog, groups), Error);
    }
    SUBCASE("prompt version mismatch flags regeneration") {
        bank.provenance.prompt_version = "v0-stale";
        CHECK(bank_needs_regeneration(bank));
        bank.provenance.prompt_version = kPromptVersion;
        CHECK_FALSE(bank_needs_regeneration(bank));
    }
}

TEST_CASE("display-name resolution uses normalized containment") {
    test::TempDir dir;
    auto catalog = tiny_catalog(dir);

    CHECK(resolve_display_name(catalog, "Stop")->class_id == "stop");
    CHECK(resolve_display_name(catalog, "stop!")->class_id == "stop");
    CHECK(resolve_display_name(catalog, "Speed limit 50")->class_id == "speed_50");
    CHECK(resolve_display_name(catalog, "a Speed Limit (50km/h) sign")->class_id == "speed_50");
    CHECK(resolve_display_name(catalog, "Unicorn") == nullptr);
    CHECK(resolve_display_name(catalog, "none") == nullptr);

    auto found = find_names_in_text(catalog, "It could be Stop or maybe Yield.");
    REQUIRE(found.size() == 2);
    CHECK(found[0].class_id == "stop");
    CHECK(found[1].class_id == "yield");
}
