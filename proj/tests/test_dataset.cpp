#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "mvqc/dataset.hpp"
#include "mvqc/detail/text.hpp"

using namespace mvqc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mvqc_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

DatasetManifest synthetic_manifest(std::array<std::size_t, 3> per_camera, const std::string& prefix = "img") {
    DatasetManifest m;
    for (CameraId cam : kAllCameras) {
        for (std::size_t i = 0; i < per_camera[index_of(cam)]; ++i) {
            AnnotationRecord r;
            r.camera = cam;
            r.image_id = std::string(to_string(cam)) + "/" + prefix + std::to_string(i);
            r.image_path = "images/" + r.image_id + ".png";
            if (i % 3 == 0) r.instances.push_back({kLooseClass, {0.5, 0.5, 0.1, 0.1}});
            m.records.push_back(std::move(r));
        }
    }
    return m;
}

std::set<std::string> ids_of(const DatasetManifest& m) {
    std::set<std::string> s;
    for (const auto& r : m.records) s.insert(r.image_id);
    return s;
}

}  // namespace

TEST_CASE("camera names") {
    for (CameraId c : kAllCameras) CHECK(parse_camera(to_string(c)) == c);
    CHECK_FALSE(parse_camera("Top").has_value());
    CHECK_FALSE(parse_camera("side").has_value());
}

TEST_CASE("parse_label_file examples") {
    CHECK(parse_label_file("", "x", CameraId::Top).instances.empty());

    const auto one = parse_label_file("0 0.5 0.5 0.1 0.1", "x", CameraId::Top);
    REQUIRE(one.instances.size() == 1);
    CHECK(one.instances[0].class_id == kFastenedClass);
    CHECK(one.instances[0].bbox == BBox{0.5, 0.5, 0.1, 0.1});

    const auto two = parse_label_file("1 0.2 0.3 0.05 0.08\n0 0.7 0.7 0.1 0.1", "x", CameraId::Middle);
    REQUIRE(two.instances.size() == 2);
    CHECK(two.instances[0].class_id == kLooseClass);
    CHECK(two.instances[1].class_id == kFastenedClass);
    const auto again = parse_label_file(write_label_file(two), "x", CameraId::Middle);
    CHECK(again == two);
    CHECK(write_label_file(again) == write_label_file(two));
}

TEST_CASE("parse_label_file tolerates blank lines and CRLF") {
    const auto r = parse_label_file("\n0 0.5 0.5 0.1 0.1\r\n\n1 0.2 0.2 0.1 0.1\n", "x", CameraId::Top);
    CHECK(r.instances.size() == 2);
}

TEST_CASE("parse_label_file errors carry line numbers") {
    try {
        parse_label_file("0 0.5 0.5 0.1 0.1\n0 0.5 abc 0.1 0.1", "x", CameraId::Top);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    try {
        parse_label_file("\n\n2 0.5 0.5 0.1 0.1", "x", CameraId::Top);
        FAIL("expected a taxonomy error");
    } catch (const TaxonomyError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_label_file("0 0.5 0.5 0.1", "x", CameraId::Top), ParseError);
    CHECK_THROWS_AS(parse_label_file("0 0.5 0.5 0 0.1", "x", CameraId::Top), ParseError);
    CHECK_THROWS_AS(parse_label_file("-1 0.5 0.5 0.1 0.1", "x", CameraId::Top), TaxonomyError);
    CHECK_THROWS_AS(parse_label_file("0.5 0.5 0.5 0.1 0.1", "x", CameraId::Top), ParseError);
}

TEST_CASE("overrunning labels are clamped with a warning") {
    std::vector<std::string> warnings;
    const auto r = parse_label_file("0 0.98 0.5 0.1 0.1", "x", CameraId::Top, 2, &warnings);
    REQUIRE(r.instances.size() == 1);
    CHECK(to_corners(r.instances[0].bbox).x2 == doctest::Approx(1.0));
    CHECK(warnings.size() == 1);
}

TEST_CASE("label round trip on random records") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        AnnotationRecord rec;
        rec.image_id = "r";
        const int n = static_cast<int>(rng() % 8);
        for (int i = 0; i < n; ++i) {
            const double w = 0.01 + 0.3 * u(rng), h = 0.01 + 0.3 * u(rng);
            rec.instances.push_back({static_cast<int>(rng() % 2), {w / 2 + (1 - w) * u(rng), h / 2 + (1 - h) * u(rng), w, h}});
        }
        CHECK(parse_label_file(write_label_file(rec), "r", CameraId::Top) == rec);
    }
}

TEST_CASE("build_manifest") {
    SUBCASE("empty root") {
        TempDir d("empty");
        const auto m = build_manifest(d.path);
        CHECK(m.records.empty());
        CHECK_FALSE(m.warnings.empty());
    }
    SUBCASE("counts per camera and missing labels") {
        TempDir d("counts");
        const std::array<int, 3> n{3, 2, 1};
        for (CameraId cam : kAllCameras) {
            for (int i = 0; i < n[index_of(cam)]; ++i) {
                const std::string stem = "im" + std::to_string(i);
                detail::write_file(d.path / "images" / std::string(to_string(cam)) / (stem + ".jpg"), "");
                if (!(cam == CameraId::Top && i == 2)) {
                    detail::write_file(d.path / "labels" / std::string(to_string(cam)) / (stem + ".txt"),
                                       "0 0.5 0.5 0.1 0.1\n");
                }
            }
        }
        const auto m = build_manifest(d.path);
        CHECK(m.camera_counts() == std::array<std::size_t, 3>{3, 2, 1});
        REQUIRE(m.find("top/im2") != nullptr);
        CHECK(m.find("top/im2")->instances.empty());
        CHECK(m.warnings.size() == 1);
        CHECK(validate(m, d.path).clean());

        fs::remove(d.path / "images" / "middle" / "im1.jpg");
        const auto m2 = build_manifest(d.path);
        const auto rep = validate(m, d.path);
        REQUIRE(rep.issues.size() == 1);
        CHECK(rep.issues[0].kind == IssueKind::MissingImage);
        CHECK(m2.records.size() == 5);
    }
    SUBCASE("unknown camera directory") {
        TempDir d("unknown");
        detail::write_file(d.path / "images" / "side" / "a.png", "");
        CHECK_THROWS_AS(build_manifest(d.path), DatasetError);
    }
    SUBCASE("duplicate stems") {
        TempDir d("dup");
        detail::write_file(d.path / "images" / "top" / "a.png", "");
        detail::write_file(d.path / "images" / "top" / "a.jpg", "");
        CHECK_THROWS_AS(build_manifest(d.path), DatasetError);
    }
}

TEST_CASE("manifest JSON round trip and versioning") {
    auto m = synthetic_manifest({4, 3, 3});
    m.split = SplitTag::Val;
    const auto back = manifest_from_json(manifest_to_json(m));
    CHECK(back.records == m.records);
    CHECK(back.split == SplitTag::Val);
    CHECK(back.class_names == m.class_names);

    std::string text = manifest_to_json(m);
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"format_version\": 9");
    CHECK_THROWS_AS(manifest_from_json(text), DatasetError);
    CHECK_THROWS_AS(manifest_from_json("{not json"), DatasetError);
}

TEST_CASE("validate reports duplicates and histograms") {
    auto m = synthetic_manifest({3, 0, 0});
    m.records.push_back(m.records.front());
    const auto rep = validate(m);
    REQUIRE(rep.issues.size() == 1);
    CHECK(rep.issues[0].kind == IssueKind::DuplicateId);
    CHECK(rep.camera_counts[0] == 4);
    CHECK(rep.class_histograms[0][kLooseClass] == 2);
    CHECK(rep.empty_label_count == 2);
}

TEST_CASE("split sizes") {
    CHECK(split_sizes(200, {}) == std::array<std::size_t, 3>{140, 30, 30});
    CHECK(split_sizes(10, {}) == std::array<std::size_t, 3>{7, 1, 2});
    CHECK(split_sizes(3, {}) == std::array<std::size_t, 3>{2, 0, 1});
    for (std::size_t n = 3; n < 500; ++n) {
        const auto s = split_sizes(n, {});
        CHECK(s[0] + s[1] + s[2] == n);
    }
}

TEST_CASE("stratified split") {
    const auto m = synthetic_manifest({200, 200, 200});
    const auto a = stratified_split(m, {}, 42);
    CHECK(a.train.camera_counts() == std::array<std::size_t, 3>{140, 140, 140});
    CHECK(a.val.camera_counts() == std::array<std::size_t, 3>{30, 30, 30});
    CHECK(a.test.camera_counts() == std::array<std::size_t, 3>{30, 30, 30});

    SUBCASE("deterministic and byte-identical") {
        const auto b = stratified_split(m, {}, 42);
        CHECK(manifest_to_json(a.train) == manifest_to_json(b.train));
        CHECK(manifest_to_json(a.test) == manifest_to_json(b.test));
        const auto c = stratified_split(m, {}, 43);
        CHECK(manifest_to_json(a.train) != manifest_to_json(c.train));
    }
    SUBCASE("input order does not matter") {
        auto shuffled = m;
        std::mt19937_64 rng(9);
        std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
        const auto b = stratified_split(shuffled, {}, 42);
        CHECK(manifest_to_json(a.val) == manifest_to_json(b.val));
    }
    SUBCASE("partition") {
        std::set<std::string> all;
        std::size_t total = 0;
        for (const auto* p : {&a.train, &a.val, &a.test}) {
            const auto s = ids_of(*p);
            total += p->records.size();
            all.insert(s.begin(), s.end());
        }
        CHECK(total == m.records.size());
        CHECK(all == ids_of(m));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(stratified_split(synthetic_manifest({10, 2, 0}), {}, 1), SplitError);
        CHECK_THROWS_AS(stratified_split(m, {0.5, 0.5, 0.1}, 1), SplitError);
        CHECK_THROWS_AS(stratified_split(m, {1.0, 0.0, 0.0}, 1), SplitError);
        auto dup = m;
        dup.records.push_back(dup.records.front());
        CHECK_THROWS_AS(stratified_split(dup, {}, 1), SplitError);
    }
}

TEST_CASE("a missing camera stratum is allowed") {
    const auto r = stratified_split(synthetic_manifest({10, 0, 0}), {}, 7);
    CHECK(r.train.records.size() == 7);
    CHECK(r.val.records.size() == 1);
    CHECK(r.test.records.size() == 2);
}
