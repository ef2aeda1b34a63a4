#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "support/recording.hpp"
#include "support/tempdir.hpp"
#include "tsr/image_io.hpp"
#include "tsr/recognizer.hpp"

using namespace tsr;
using namespace tsr::recognizer;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    test::TempDir dir;
    dataset::TemplateCatalog catalog;
    dataset::SimilarityGroups groups;
    knowledge::MemoryBank bank;
    extraction::SignCrop crop;

    Fixture() {
        for (const char* id : {"stop", "yield", "no_entry", "speed_50", "speed_80"})
            save_png(dir / (std::string(id) + ".png"), Image(16, 16, Rgb{200, 40, 40}));
        std::ofstream out(dir / "catalog.json");
        out << R"json({"version":1,"classes":[
          {"class_id":"stop","display_name":"Stop","template_image_path":"stop.png"},
          {"class_id":"yield","display_name":"Yield","template_image_path":"yield.png"},
          {"class_id":"no_entry","display_name":"No Entry","template_image_path":"no_entry.png"},
          {"class_id":"speed_50","display_name":"Speed Limit (50km/h)","template_image_path":"speed_50.png"},
          {"class_id":"speed_80","display_name":"Speed Limit (80km/h)","template_image_path":"speed_80.png"}
        ]})json";
        out.close();
        catalog = dataset::load_template_catalog(dir / "catalog.json");
        groups.groups = {{"no_entry", "stop"}, {"speed_50", "speed_80"}};

        bank.provenance = {"mock", "mock-model", "now", knowledge::kPromptVersion};
        for (const auto& ref : catalog.classes) {
            knowledge::CharacteristicDescription c;
            c.class_id = ref.class_id;
            c.shape = "shape of " + ref.class_id;
            c.color = "color of " + ref.class_id;
            c.composition = "composition of " + ref.class_id;
            c.raw_text = c.facet_block();
            bank.characteristics[ref.class_id] = c;
        }
        for (const auto& pair : dataset::induced_pairs(groups))
            bank.differentials[pair] = knowledge::DifferentialDescription{
                pair, "difference between " + pair.first + " and " + pair.second};

        crop.patch = Image(24, 24, Rgb{180, 0, 0});
        crop.image_id = "img0";
        crop.region = make_region({4, 4, 27, 27}, 576);
    }

    knowledge::ContextDescription context(std::vector<std::string> hyp_ids = {}) const {
        knowledge::ContextDescription cont;
        cont.image_id = crop.image_id;
        cont.region = crop.region;
        cont.background_text = "an intersection with a crosswalk";
        for (const auto& id : hyp_ids) cont.hypothesis.push_back(*catalog.find(id));
        cont.raw_text = "Background: " + cont.background_text;
        return cont;
    }
};

std::vector<std::string> block_kinds(const MultistepPrompt& p) {
    std::vector<std::string> kinds;
    for (const auto& b : p.blocks) kinds.push_back(b.kind);
    return kinds;
}

}  // namespace

TEST_CASE("only enabled stages produce blocks") {
    Fixture fx;
    RecognitionConfig cfg = make_config(false, true, false);
    MultistepPrompt p = assemble_multistep_prompt(fx.crop, std::nullopt, fx.bank, fx.catalog,
                                                  fx.groups, cfg);
    CHECK(block_kinds(p) == std::vector<std::string>{"preamble", "characteristic", "final"});
    std::string text = p.joined_text();
    CHECK(text.find(kCharacteristicMarker) != std::string::npos);
    CHECK(text.find(kContextMarker) == std::string::npos);
    CHECK(text.find(kDifferentialMarker) == std::string::npos);
    CHECK(text.find("5 most likely sign names") != std::string::npos);

    SUBCASE("baseline keeps only preamble and final") {
        RecognitionConfig baseline = make_config(false, false, false);
        MultistepPrompt pb = assemble_multistep_prompt(fx.crop, std::nullopt, fx.bank, fx.catalog,
                                                       fx.groups, baseline);
        CHECK(block_kinds(pb) == std::vector<std::string>{"preamble", "final"});
    }
}

TEST_CASE("hypothesis narrows step 3 to candidates plus group co-members") {
    Fixture fx;
    RecognitionConfig cfg = make_config(true, true, true);
    auto cont = fx.context({"stop", "yield"});  // groups add no_entry via {no_entry, stop}

    MultistepPrompt p = assemble_multistep_prompt(fx.crop, cont, fx.bank, fx.catalog, fx.groups, cfg);
    std::string text = p.joined_text();
    CHECK(text.find("shape of stop") != std::string::npos);
    CHECK(text.find("shape of yield") != std::string::npos);
    CHECK(text.find("shape of no_entry") != std::string::npos);
    CHECK(text.find("shape of speed_50") == std::string::npos);  // outside the scope
    CHECK(text.find("difference between no_entry and stop") != std::string::npos);
    CHECK(text.find("difference between speed_50 and speed_80") == std::string::npos);

    SUBCASE("empty hypothesis falls back to the full catalog") {
        auto cont_empty = fx.context({});
        MultistepPrompt pf =
            assemble_multistep_prompt(fx.crop, cont_empty, fx.bank, fx.catalog, fx.groups, cfg);
        std::string tf = pf.joined_text();
        for (const auto& ref : fx.catalog.classes)
            CHECK(tf.find("shape of " + ref.class_id) != std::string::npos);
        CHECK(tf.find("difference between speed_50 and speed_80") != std::string::npos);
    }
    SUBCASE("scope classes are capped with sorted-id truncation") {
        RecognitionConfig capped = cfg;
        capped.prompt_class_cap = 2;
        auto cont_empty = fx.context({});
        MultistepPrompt pc =
            assemble_multistep_prompt(fx.crop, cont_empty, fx.bank, fx.catalog, fx.groups, capped);
        std::string tc = pc.joined_text();
        CHECK(tc.find("shape of no_entry") != std::string::npos);   // first two sorted ids
        CHECK(tc.find("shape of speed_50") != std::string::npos);
        CHECK(tc.find("shape of stop") == std::string::npos);
    }
}

TEST_CASE("thinking order permutes block order, never block content") {
    Fixture fx;
    RecognitionConfig cfg = make_config(true, true, true);
    auto cont = fx.context({"stop"});
    MultistepPrompt original = assemble_multistep_prompt(fx.crop, cont, fx.bank, fx.catalog,
                                                         fx.groups, cfg);

    RecognitionConfig swapped = cfg;
    swapped.thinking_order = {Stage::Characteristic, Stage::Context, Stage::Differential};
    MultistepPrompt permuted = assemble_multistep_prompt(fx.crop, cont, fx.bank, fx.catalog,
                                                         fx.groups, swapped);

    CHECK(block_kinds(original) ==
          std::vector<std::string>{"preamble", "context", "characteristic", "differential", "final"});
    CHECK(block_kinds(permuted) ==
          std::vector<std::string>{"preamble", "characteristic", "context", "differential", "final"});

    auto texts_sorted = [](const MultistepPrompt& p) {
        std::vector<std::string> t;
        for (const auto& b : p.blocks) t.push_back(b.text);
        std::sort(t.begin(), t.end());
        return t;
    };
    CHECK(texts_sorted(original) == texts_sorted(permuted));  // same multiset
    CHECK(original.joined_text() != permuted.joined_text());  // different order
}

TEST_CASE("context presence must match the switch") {
    Fixture fx;
    RecognitionConfig with_ctx = make_config(true, true, true);
    CHECK_THROWS_AS(
        assemble_multistep_prompt(fx.crop, std::nullopt, fx.bank, fx.catalog, fx.groups, with_ctx),
        Error);
    RecognitionConfig no_ctx = make_config(false, true, true);
    CHECK_THROWS_AS(
        assemble_multistep_prompt(fx.crop, fx.context(), fx.bank, fx.catalog, fx.groups, no_ctx),
        Error);
}

TEST_CASE("missing characteristics raise CoverageGap") {
    Fixture fx;
    fx.bank.characteristics.erase("yield");
    RecognitionConfig cfg = make_config(false, true, false);
    try {
        assemble_multistep_prompt(fx.crop, std::nullopt, fx.bank, fx.catalog, fx.groups, cfg);
        FAIL("expected CoverageGap");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::CoverageGap);
    }
}

TEST_CASE("ranked answers parse, dedupe, and truncate") {
    Fixture fx;

    auto ranked = parse_ranked_answer("1. Stop\n2. Yield\n3. No entry", fx.catalog, 5);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].class_id == "stop");
    CHECK(ranked[1].class_id == "yield");
    CHECK(ranked[2].class_id == "no_entry");

    SUBCASE("inline enumeration on a single line parses in order") {
        auto r = parse_ranked_answer("1. Stop 2. Yield 3. No entry", fx.catalog, 5);
        REQUIRE(r.size() == 3);
        CHECK(r[0].class_id == "stop");
        CHECK(r[1].class_id == "yield");
        CHECK(r[2].class_id == "no_entry");
    }
    SUBCASE("digits inside names are not enumeration markers") {
        auto r = parse_ranked_answer("1. Speed Limit (50km/h) 2. Stop", fx.catalog, 5);
        REQUIRE(r.size() == 2);
        CHECK(r[0].class_id == "speed_50");
        CHECK(r[1].class_id == "stop");
    }
    SUBCASE("loose speed-limit phrasing matches by containment") {
        auto r = parse_ranked_answer("1. Speed limit 50", fx.catalog, 5);
        REQUIRE(r.size() == 1);
        CHECK(r[0].class_id == "speed_50");
    }
    SUBCASE("single name without enumeration is the fallback") {
        auto r = parse_ranked_answer("The sign is definitely a Yield sign.", fx.catalog, 5);
        REQUIRE(r.size() == 1);
        CHECK(r[0].class_id == "yield");
    }
    SUBCASE("ambiguous unenumerated text yields nothing") {
        CHECK(parse_ranked_answer("Could be Stop or Yield.", fx.catalog, 5).empty());
    }
    SUBCASE("gibberish yields nothing") {
        CHECK(parse_ranked_answer("lorem ipsum dolor", fx.catalog, 5).empty());
    }
    SUBCASE("duplicates keep the first occurrence") {
        auto r = parse_ranked_answer("1. Stop\n2. stop\n3. Yield", fx.catalog, 5);
        REQUIRE(r.size() == 2);
        CHECK(r[0].class_id == "stop");
        CHECK(r[1].class_id == "yield");
    }
    SUBCASE("k_max truncates") {
        auto r = parse_ranked_answer("1. Stop\n2. Yield\n3. No Entry", fx.catalog, 2);
        CHECK(r.size() == 2);
    }
    SUBCASE("unmatched enumerated lines are skipped") {
        auto r = parse_ranked_answer("1. Dragon crossing\n2. Yield", fx.catalog, 5);
        REQUIRE(r.size() == 1);
        CHECK(r[0].class_id == "yield");
    }
}

TEST_CASE("recognize runs context then one multistep call") {
    Fixture fx;
    lmm::MockScript script;
    script.default_response = "none";
    script.rules.push_back({"context", "", "", "Background: a junction.\nCandidates: Stop"});
    script.rules.push_back({"multistep", "", "", "1. Stop\n2. No Entry"});
    auto [client, recorder] = test::make_recording_client(script);

    Image road(64, 48, Rgb{70, 70, 70});
    RecognitionConfig cfg = make_config(true, true, true);
    RecognitionResult result =
        recognize(fx.crop, road, fx.bank, fx.catalog, fx.groups, cfg, client);

    CHECK(result.ok());
    REQUIRE(result.ranked.size() == 2);
    CHECK(result.ranked[0].class_id == "stop");
    CHECK(result.raw_answer == "1. Stop\n2. No Entry");
    REQUIRE(result.transcript.size() == 2);
    CHECK(result.transcript[0].stage == "context");
    CHECK(result.transcript[1].stage == "multistep");
    CHECK(result.timings_ms.count("context") == 1);
    CHECK(result.timings_ms.count("multistep") == 1);
    REQUIRE(recorder->requests.size() == 2);
    CHECK(recorder->requests[0].stage == "context");
    CHECK(recorder->requests[1].stage == "multistep");

    SUBCASE("empty answers flag EmptyAnswer with an empty ranking") {
        lmm::MockScript empty_script;
        empty_script.default_response = "";
        auto [client2, rec2] = test::make_recording_client(empty_script);
        RecognitionConfig no_ctx = make_config(false, true, true);
        RecognitionResult r2 =
            recognize(fx.crop, std::nullopt, fx.bank, fx.catalog, fx.groups, no_ctx, client2);
        CHECK_FALSE(r2.ok());
        CHECK(r2.error == "EmptyAnswer");
        CHECK(r2.ranked.empty());
    }
    SUBCASE("use_context without a road image is a ConfigViolation") {
        CHECK_THROWS_AS(
            recognize(fx.crop, std::nullopt, fx.bank, fx.catalog, fx.groups, cfg, client), Error);
    }
}

TEST_CASE("effective_config downgrades context for datasets without road images") {
    RecognitionConfig cfg = make_config(true, true, true);
    RecognitionConfig same = effective_config(cfg, /*dataset_has_road_images=*/true);
    CHECK(same == cfg);

    RecognitionConfig down = effective_config(cfg, /*dataset_has_road_images=*/false);
    CHECK_FALSE(down.use_context);
    CHECK(down.thinking_order == std::vector<Stage>{Stage::Characteristic, Stage::Differential});
    CHECK_NOTHROW(down.validate());
}
