#include <cstdio>
#include <random>

#include "mvqc/detail/text.hpp"
#include "mvqc/pipeline.hpp"
#include "mvqc/random.hpp"

namespace fs = std::filesystem;

namespace mvqc {

ComponentRegistry default_station_registry() {
    // Top sees the near-side frame from above, Middle the far side (smaller),
    // Bottom the near side head-on.
    std::vector<Component> comps;
    for (int i = 0; i < 4; ++i) {
        Component c;
        c.id = "S" + std::to_string(i + 1);
        const double x = 0.2 + 0.2 * i;
        c.views[index_of(CameraId::Top)] = {BBox{x, 0.3, 0.08, 0.08}, true};
        c.views[index_of(CameraId::Middle)] = {BBox{x + 0.05, 0.6, 0.06, 0.06}, true};
        c.views[index_of(CameraId::Bottom)] = {BBox{x, 0.7, 0.08, 0.10}, true};
        comps.push_back(std::move(c));
    }
    return ComponentRegistry(std::move(comps));
}

std::string assembly_image_id(CameraId camera, const std::string& assembly_id) {
    return std::string(to_string(camera)) + "/" + assembly_id;
}

Harness make_harness(const HarnessConfig& config, const ComponentRegistry& registry) {
    if (!(config.loose_probability >= 0.0 && config.loose_probability <= 1.0)) {
        throw ConfigError("loose probability must lie in [0, 1]");
    }
    Harness h;
    h.registry = registry;
    std::mt19937_64 rng(derive_seed(config.seed, "harness"));
    const auto& comps = registry.components();
    for (std::size_t a = 0; a < config.assemblies; ++a) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "A%05zu", a + 1);
        const std::string id = buf;
        h.assembly_ids.push_back(id);

        std::vector<ViewState> states;
        for (std::size_t c = 0; c < comps.size(); ++c) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            states.push_back(u < config.loose_probability ? ViewState::Loose : ViewState::Fastened);
        }
        for (CameraId cam : kAllCameras) {
            AnnotationRecord rec;
            rec.image_id = assembly_image_id(cam, id);
            rec.camera = cam;
            rec.image_path = "images/" + std::string(to_string(cam)) + "/" + id + ".png";
            for (std::size_t c = 0; c < comps.size(); ++c) {
                const auto& view = comps[c].view(cam);
                if (!view.visible) continue;
                rec.instances.push_back({states[c] == ViewState::Loose ? kLooseClass : kFastenedClass, view.roi});
            }
            h.manifest.records.push_back(std::move(rec));
        }
        h.truth.push_back(std::move(states));
    }
    return h;
}

void write_harness(const Harness& harness, const DetectorBackend& backend, const fs::path& root) {
    for (const auto& rec : harness.manifest.records) {
        const auto cam = std::string(to_string(rec.camera));
        const auto stem = rec.image_id.substr(cam.size() + 1);
        detail::write_file(root / rec.image_path, "");
        detail::write_file(root / "labels" / cam / (stem + ".txt"), write_label_file(rec));
        const auto dets = backend.detect({rec.image_id, rec.camera});
        detail::write_file(root / "detections" / cam / (stem + ".txt"), write_detection_file(dets));
    }
    detail::write_file(root / "registry.json", registry_to_json(harness.registry));
    save_manifest(harness.manifest, root / "manifest.json");
}

std::vector<EvalImage> exact_overlap_fixture(std::size_t total_gt, std::size_t true_positives,
                                             std::size_t per_image) {
    if (true_positives > total_gt) throw std::invalid_argument("more true positives than ground truth");
    if (per_image == 0 || per_image > 25) throw std::invalid_argument("per_image must lie in [1, 25]");
    std::vector<EvalImage> images;
    for (std::size_t k = 0; k < total_gt; ++k) {
        if (k % per_image == 0) images.emplace_back();
        const std::size_t slot = k % per_image;
        // 5x5 grid of disjoint boxes
        const BBox box{0.1 + 0.2 * static_cast<double>(slot % 5), 0.1 + 0.2 * static_cast<double>(slot / 5), 0.1,
                       0.1};
        images.back().ground_truth.push_back({kFastenedClass, box});
        if (k < true_positives) {
            const double conf = 0.99 - 0.2 * static_cast<double>(k) / static_cast<double>(total_gt);
            images.back().detections.push_back({box, conf, kFastenedClass});
        }
    }
    return images;
}

}  // namespace mvqc
