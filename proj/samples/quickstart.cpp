// Minimal end-to-end walkthrough on an in-memory scene with the mock backend:
// build a two-class catalog, extract the sign from a tiny road image, generate
// the knowledge bank, and recognize the crop.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tsr/dataset.hpp"
#include "tsr/extraction.hpp"
#include "tsr/image_io.hpp"
#include "tsr/knowledge.hpp"
#include "tsr/recognizer.hpp"

namespace fs = std::filesystem;
using namespace tsr;

int main() {
    fs::path dir = fs::temp_directory_path() / "tsr_quickstart";
    fs::create_directories(dir);

    // Two-class catalog with solid-color templates.
    save_png(dir / "stop.png", Image(32, 32, Rgb{200, 0, 0}));
    save_png(dir / "yield.png", Image(32, 32, Rgb{240, 240, 240}));
    {
        std::ofstream out(dir / "catalog.json");
        out << R"({"version":1,"classes":[
          {"class_id":"stop","display_name":"Stop","template_image_path":"stop.png"},
          {"class_id":"yield","display_name":"Yield","template_image_path":"yield.png"}]})";
    }
    dataset::TemplateCatalog catalog = dataset::load_template_catalog(dir / "catalog.json");
    dataset::SimilarityGroups groups;
    groups.groups = {{"stop", "yield"}};

    // A road scene and its color-coded mask.
    Image road(96, 64, Rgb{60, 60, 60});
    road.fill_rect(BBox{30, 12, 49, 31}, Rgb{200, 0, 0});
    extraction::MaskImage mask{Image(96, 64, Rgb{0, 0, 0}), extraction::default_color_map()};
    mask.image.fill_rect(BBox{30, 12, 49, 31}, Rgb{220, 220, 0});

    extraction::ExtractionOptions opts;
    extraction::ExtractionResult extracted = extraction::extract_signs(road, mask, opts, "demo");
    std::printf("extracted %zu region(s); first bbox (%d,%d)-(%d,%d) center (%d,%d)\n",
                extracted.regions.size(), extracted.regions[0].bbox.x_min,
                extracted.regions[0].bbox.y_min, extracted.regions[0].bbox.x_max,
                extracted.regions[0].bbox.y_max, extracted.regions[0].center.x,
                extracted.regions[0].center.y);

    // Mock backend scripted for each stage.
    lmm::MockScript script;
    script.default_response = "none";
    script.rules.push_back({"characteristic", "", "",
                            "Shape: octagon\nColor: red\nComposition: white STOP lettering"});
    script.rules.push_back({"differential", "", "",
                            "Differences: one is red and octagonal, the other white and triangular."});
    script.rules.push_back({"context", "", "",
                            "Background: an intersection with a crosswalk.\nCandidates: Stop"});
    script.rules.push_back({"multistep", "", "", "1. Stop\n2. Yield"});
    lmm::LmmClient client = lmm::LmmClient::make_mock(script);

    knowledge::MemoryBank bank = knowledge::build_bank(catalog, groups, client);
    std::printf("bank: %zu characteristics, %zu differential pairs\n", bank.characteristics.size(),
                bank.differentials.size());

    RecognitionConfig cfg;  // all stages on
    recognizer::RecognitionResult result = recognizer::recognize(
        extracted.crops[0], road, bank, catalog, groups, cfg, client);
    for (size_t i = 0; i < result.ranked.size(); ++i)
        std::printf("%zu. %s\n", i + 1, result.ranked[i].display_name.c_str());
    return result.ok() ? 0 : 1;
}
