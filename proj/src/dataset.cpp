#include "mvqc/dataset.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "mvqc/detail/box_line.hpp"
#include "mvqc/detail/text.hpp"
#include "mvqc/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvqc {

std::string_view to_string(CameraId c) noexcept {
    switch (c) {
        case CameraId::Top: return "top";
        case CameraId::Middle: return "middle";
        case CameraId::Bottom: return "bottom";
    }
    return "?";
}

std::optional<CameraId> parse_camera(std::string_view name) noexcept {
    for (CameraId c : kAllCameras) {
        if (to_string(c) == name) return c;
    }
    return std::nullopt;
}

std::vector<std::string> default_class_names() { return {"fastened", "loose"}; }

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

TaxonomyError::TaxonomyError(std::size_t line, int class_id, std::size_t class_count)
    : std::runtime_error("line " + std::to_string(line) + ": class " + std::to_string(class_id) +
                         " outside taxonomy of " + std::to_string(class_count) + " classes"),
      line_(line) {}

std::string_view to_string(SplitTag t) noexcept {
    switch (t) {
        case SplitTag::Train: return "train";
        case SplitTag::Val: return "val";
        case SplitTag::Test: return "test";
        case SplitTag::Unsplit: return "unsplit";
    }
    return "?";
}

std::optional<SplitTag> parse_split_tag(std::string_view s) noexcept {
    for (SplitTag t : {SplitTag::Train, SplitTag::Val, SplitTag::Test, SplitTag::Unsplit}) {
        if (to_string(t) == s) return t;
    }
    return std::nullopt;
}

std::string_view to_string(IssueKind k) noexcept {
    switch (k) {
        case IssueKind::DuplicateId: return "DuplicateId";
        case IssueKind::MissingImage: return "MissingImage";
    }
    return "?";
}

std::array<std::size_t, kCameraCount> DatasetManifest::camera_counts() const noexcept {
    std::array<std::size_t, kCameraCount> counts{};
    for (const auto& r : records) ++counts[index_of(r.camera)];
    return counts;
}

const AnnotationRecord* DatasetManifest::find(std::string_view image_id) const noexcept {
    for (const auto& r : records) {
        if (r.image_id == image_id) return &r;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// label lines

namespace detail {

std::optional<BoxLine> parse_box_line(std::string_view line, std::size_t lineno,
                                      std::size_t class_count, bool with_confidence) {
    const auto tokens = split_ws(line);
    if (tokens.empty()) return std::nullopt;
    const std::size_t expected = with_confidence ? 6 : 5;
    if (tokens.size() != expected) {
        throw ParseError(lineno, "expected " + std::to_string(expected) + " fields, got " +
                                     std::to_string(tokens.size()));
    }
    const auto cls = parse_int(tokens[0]);
    if (!cls) throw ParseError(lineno, "class id is not an integer");
    double v[4];
    for (int i = 0; i < 4; ++i) {
        const auto d = parse_double(tokens[static_cast<std::size_t>(i) + 1]);
        if (!d) throw ParseError(lineno, "malformed coordinate '" + std::string(tokens[i + 1]) + "'");
        v[i] = *d;
    }
    if (*cls < 0 || static_cast<std::size_t>(*cls) >= class_count) {
        throw TaxonomyError(lineno, *cls, class_count);
    }
    BoxLine out;
    out.class_id = *cls;
    if (with_confidence) {
        const auto conf = parse_double(tokens[5]);
        if (!conf || *conf < 0.0 || *conf > 1.0) {
            throw ParseError(lineno, "confidence must be a number in [0, 1]");
        }
        out.confidence = *conf;
    }
    if (!(v[2] > 0.0 && v[3] > 0.0)) throw ParseError(lineno, "degenerate box (zero area)");
    try {
        const auto clamped = clamp_to_frame(BBox{v[0], v[1], v[2], v[3]});
        out.bbox = clamped.box;
        out.clamped = clamped.clamped;
    } catch (const GeometryError& e) {
        throw ParseError(lineno, e.what());
    }
    return out;
}

void append_box_line(std::string& out, int class_id, const BBox& b,
                     std::optional<double> confidence) {
    out += std::to_string(class_id);
    for (double v : {b.cx, b.cy, b.w, b.h}) {
        out += ' ';
        append_double(out, v);
    }
    if (confidence) {
        out += ' ';
        append_double(out, *confidence);
    }
    out += '\n';
}

}  // namespace detail

AnnotationRecord parse_label_file(std::string_view text, std::string image_id, CameraId camera,
                                  std::size_t class_count, std::vector<std::string>* warnings) {
    AnnotationRecord rec;
    rec.image_id = std::move(image_id);
    rec.camera = camera;
    detail::for_each_line(text, [&](std::size_t lineno, std::string_view line) {
        auto parsed = detail::parse_box_line(line, lineno, class_count, false);
        if (!parsed) return;
        if (parsed->clamped && warnings) {
            warnings->push_back(rec.image_id + ": line " + std::to_string(lineno) +
                                " box clamped to frame");
        }
        rec.instances.push_back({parsed->class_id, parsed->bbox});
    });
    return rec;
}

std::string write_label_file(const AnnotationRecord& record) {
    std::string out;
    for (const auto& inst : record.instances) detail::append_box_line(out, inst.class_id, inst.bbox);
    return out;
}

// ---------------------------------------------------------------------------
// directory scan

namespace {

bool is_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

CameraId camera_dir(const fs::path& dir) {
    const auto name = dir.filename().string();
    const auto cam = parse_camera(name);
    if (!cam) throw DatasetError("unknown camera directory '" + dir.string() + "'");
    return *cam;
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root, std::vector<std::string> class_names) {
    if (!fs::is_directory(root)) throw DatasetError("dataset root '" + root.string() + "' is not a directory");
    DatasetManifest m;
    m.class_names = std::move(class_names);

    const fs::path images = root / "images";
    const fs::path labels = root / "labels";
    if (!fs::is_directory(images)) {
        m.warnings.push_back("no images directory under " + root.string() + "; manifest is empty");
        return m;
    }

    // (camera, stem) -> relative image path
    std::map<std::pair<CameraId, std::string>, std::string> found;
    for (const auto& cam_entry : fs::directory_iterator(images)) {
        if (!cam_entry.is_directory()) {
            m.warnings.push_back("ignoring stray file " + cam_entry.path().string());
            continue;
        }
        const CameraId cam = camera_dir(cam_entry.path());
        for (const auto& f : fs::directory_iterator(cam_entry.path())) {
            if (!f.is_regular_file() || !is_image_extension(f.path())) continue;
            const auto key = std::make_pair(cam, f.path().stem().string());
            const auto rel = fs::relative(f.path(), root).generic_string();
            if (!found.emplace(key, rel).second) {
                throw DatasetError("duplicate image stem '" + key.second + "' under camera " +
                                   std::string(to_string(cam)));
            }
        }
    }

    std::set<std::pair<CameraId, std::string>> label_stems;
    if (fs::is_directory(labels)) {
        for (const auto& cam_entry : fs::directory_iterator(labels)) {
            if (!cam_entry.is_directory()) continue;
            const CameraId cam = camera_dir(cam_entry.path());
            for (const auto& f : fs::directory_iterator(cam_entry.path())) {
                if (f.is_regular_file() && f.path().extension() == ".txt") {
                    label_stems.emplace(cam, f.path().stem().string());
                }
            }
        }
    }

    for (const auto& [key, rel] : found) {
        const auto& [cam, stem] = key;
        std::string id = std::string(to_string(cam)) + "/" + stem;
        if (label_stems.erase(key) == 0) {
            m.warnings.push_back("no label file for " + id + "; treated as empty");
            AnnotationRecord rec;
            rec.image_id = std::move(id);
            rec.camera = cam;
            rec.image_path = rel;
            m.records.push_back(std::move(rec));
            continue;
        }
        const fs::path label_file = labels / std::string(to_string(cam)) / (stem + ".txt");
        AnnotationRecord rec;
        try {
            rec = parse_label_file(detail::read_file(label_file), id, cam, m.class_names.size(),
                                   &m.warnings);
        } catch (const ParseError& e) {
            throw ParseError(e.line(), label_file.string() + ": " + e.what());
        }
        rec.image_path = rel;
        m.records.push_back(std::move(rec));
    }
    for (const auto& [cam, stem] : label_stems) {
        m.warnings.push_back("label file without image: " + std::string(to_string(cam)) + "/" + stem);
    }
    if (m.records.empty()) m.warnings.push_back("no images found under " + images.string());
    return m;
}

// ---------------------------------------------------------------------------
// JSON

std::string manifest_to_json(const DatasetManifest& m) {
    json j;
    j["format_version"] = kManifestFormatVersion;
    j["split"] = to_string(m.split);
    j["class_names"] = m.class_names;
    const auto counts = m.camera_counts();
    for (CameraId c : kAllCameras) j["camera_counts"][std::string(to_string(c))] = counts[index_of(c)];
    j["records"] = json::array();
    for (const auto& r : m.records) {
        json jr;
        jr["image_id"] = r.image_id;
        jr["camera"] = to_string(r.camera);
        jr["image_path"] = r.image_path;
        jr["instances"] = json::array();
        for (const auto& inst : r.instances) {
            jr["instances"].push_back({{"class_id", inst.class_id},
                                       {"cx", inst.bbox.cx},
                                       {"cy", inst.bbox.cy},
                                       {"w", inst.bbox.w},
                                       {"h", inst.bbox.h}});
        }
        j["records"].push_back(std::move(jr));
    }
    j["warnings"] = m.warnings;
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DatasetError(std::string("manifest is not valid JSON: ") + e.what());
    }
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kManifestFormatVersion) {
            throw DatasetError("unsupported manifest format_version " + std::to_string(version));
        }
        DatasetManifest m;
        const auto tag = parse_split_tag(j.at("split").get<std::string>());
        if (!tag) throw DatasetError("unknown split tag");
        m.split = *tag;
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
        std::set<std::string> seen;
        for (const auto& jr : j.at("records")) {
            AnnotationRecord r;
            r.image_id = jr.at("image_id").get<std::string>();
            const auto cam = parse_camera(jr.at("camera").get<std::string>());
            if (!cam) throw DatasetError("record " + r.image_id + " has unknown camera");
            r.camera = *cam;
            r.image_path = jr.value("image_path", "");
            for (const auto& ji : jr.at("instances")) {
                GroundTruthInstance inst;
                inst.class_id = ji.at("class_id").get<int>();
                inst.bbox = {ji.at("cx").get<double>(), ji.at("cy").get<double>(),
                             ji.at("w").get<double>(), ji.at("h").get<double>()};
                if (inst.class_id < 0 || static_cast<std::size_t>(inst.class_id) >= m.class_names.size()) {
                    throw DatasetError("record " + r.image_id + " has class outside taxonomy");
                }
                if (!is_valid(inst.bbox)) throw DatasetError("record " + r.image_id + " has invalid box");
                r.instances.push_back(inst);
            }
            if (!seen.insert(r.image_id).second) throw DatasetError("duplicate image_id " + r.image_id);
            m.records.push_back(std::move(r));
        }
        return m;
    } catch (const json::exception& e) {
        throw DatasetError(std::string("malformed manifest: ") + e.what());
    }
}

void save_manifest(const DatasetManifest& m, const fs::path& file) {
    detail::write_file(file, manifest_to_json(m));
}

DatasetManifest load_manifest(const fs::path& file) {
    return manifest_from_json(detail::read_file(file));
}

// ---------------------------------------------------------------------------
// split

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
    // Guard against products like 30 * 0.7 landing one ulp below an integer.
    constexpr double eps = 1e-9;
    const auto floor_of = [&](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + eps));
    };
    const std::size_t train = std::min(n, floor_of(ratios.train));
    const std::size_t val = std::min(n - train, floor_of(ratios.val));
    return {train, val, n - train - val};
}

SplitResult stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios,
                             std::uint64_t seed) {
    if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
        throw SplitError("split ratios must be positive");
    }
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw SplitError("split ratios must sum to 1");
    }
    {
        std::set<std::string_view> ids;
        for (const auto& r : manifest.records) {
            if (!ids.insert(r.image_id).second) throw SplitError("duplicate image_id " + r.image_id);
        }
    }

    SplitResult out;
    for (DatasetManifest* part : {&out.train, &out.val, &out.test}) {
        part->class_names = manifest.class_names;
    }
    out.train.split = SplitTag::Train;
    out.val.split = SplitTag::Val;
    out.test.split = SplitTag::Test;

    for (CameraId cam : kAllCameras) {
        std::vector<const AnnotationRecord*> stratum;
        for (const auto& r : manifest.records) {
            if (r.camera == cam) stratum.push_back(&r);
        }
        if (stratum.empty()) continue;
        if (stratum.size() < 3) {
            throw SplitError("camera stratum '" + std::string(to_string(cam)) + "' has only " +
                             std::to_string(stratum.size()) + " records (need at least 3)");
        }
        // Canonical order first so the outcome does not depend on input order.
        std::sort(stratum.begin(), stratum.end(),
                  [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
        std::mt19937_64 rng(derive_seed(seed, to_string(cam)));
        portable_shuffle(std::span(stratum), rng);

        const auto sizes = split_sizes(stratum.size(), ratios);
        std::size_t pos = 0;
        DatasetManifest* parts[3] = {&out.train, &out.val, &out.test};
        for (std::size_t p = 0; p < 3; ++p) {
            std::vector<const AnnotationRecord*> chunk(stratum.begin() + static_cast<std::ptrdiff_t>(pos),
                                                       stratum.begin() + static_cast<std::ptrdiff_t>(pos + sizes[p]));
            std::sort(chunk.begin(), chunk.end(),
                      [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
            for (const auto* r : chunk) parts[p]->records.push_back(*r);
            pos += sizes[p];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// validation

ValidationReport validate(const DatasetManifest& manifest, const std::optional<fs::path>& root) {
    ValidationReport rep;
    for (auto& hist : rep.class_histograms) hist.assign(manifest.class_names.size(), 0);
    std::set<std::string_view> ids;
    for (const auto& r : manifest.records) {
        if (!ids.insert(r.image_id).second) {
            rep.issues.push_back({IssueKind::DuplicateId, r.image_id, "image_id appears more than once"});
        }
        if (root && !fs::exists(*root / r.image_path)) {
            rep.issues.push_back({IssueKind::MissingImage, r.image_id,
                                  "image file not found: " + r.image_path});
        }
        const auto cam = index_of(r.camera);
        ++rep.camera_counts[cam];
        if (r.instances.empty()) ++rep.empty_label_count;
        for (const auto& inst : r.instances) {
            const auto cls = static_cast<std::size_t>(inst.class_id);
            if (cls >= rep.class_histograms[cam].size()) rep.class_histograms[cam].resize(cls + 1, 0);
            ++rep.class_histograms[cam][cls];
        }
    }
    return rep;
}

std::string report_to_json(const ValidationReport& report, const DatasetManifest& manifest) {
    json j;
    j["records"] = manifest.records.size();
    j["clean"] = report.clean();
    j["empty_label_count"] = report.empty_label_count;
    j["issues"] = json::array();
    for (const auto& i : report.issues) {
        j["issues"].push_back({{"kind", to_string(i.kind)}, {"image_id", i.image_id}, {"detail", i.detail}});
    }
    for (CameraId c : kAllCameras) {
        const auto name = std::string(to_string(c));
        j["camera_counts"][name] = report.camera_counts[index_of(c)];
        json hist;
        const auto& h = report.class_histograms[index_of(c)];
        for (std::size_t k = 0; k < h.size(); ++k) {
            const std::string cls = k < manifest.class_names.size() ? manifest.class_names[k] : std::to_string(k);
            hist[cls] = h[k];
        }
        j["class_histograms"][name] = hist;
    }
    j["warnings"] = manifest.warnings;
    return j.dump(2) + "\n";
}

}  // namespace mvqc
