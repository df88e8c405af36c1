#include <doctest.h>

#include "oosdsd/dataset.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/image_io.hpp"
#include "oosdsd/synthgen.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace oosdsd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SynthOptions small_opts() {
  SynthOptions o;
  o.image_size = 96;
  return o;
}

} // namespace

TEST_CASE("box center/corner conversion round-trips") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 200; ++i) {
    OOSInstance a{u(gen), u(gen), 0.05, 0.07, OOSClass::front, 1.0};
    const auto b = OOSInstance::from_corners(a.corners(), a.cls);
    CHECK(std::abs(a.x - b.x) < 1e-9);
    CHECK(std::abs(a.y - b.y) < 1e-9);
    CHECK(std::abs(a.w - b.w) < 1e-9);
    CHECK(std::abs(a.h - b.h) < 1e-9);
  }
}

TEST_CASE("instance validation") {
  CHECK_NOTHROW(validate(OOSInstance{0.5, 0.5, 1.0, 1.0, OOSClass::normal, 1.0}));
  CHECK_THROWS_AS(validate(OOSInstance{0.5, 0.5, 0.0, 0.2}), ValidationError);
  CHECK_THROWS_AS(validate(OOSInstance{0.95, 0.5, 0.2, 0.2}), ValidationError);
  CHECK_THROWS_AS(validate(OOSInstance{0.5, 0.5, 0.2, 0.2, OOSClass::normal, 1.5}), ValidationError);
  CHECK_THROWS_AS(oos_class_from_index(2), ValidationError);
  CHECK(to_string(OOSClass::front) == "front");
}

TEST_CASE("label parsing") {
  std::istringstream in("# comment\n0 0.5 0.5 0.2 0.1\n\n1 0.25 0.25 0.1 0.1\n");
  const auto b = parse_labels(in);
  REQUIRE(b.size() == 2);
  CHECK(b[0].cls == OOSClass::normal);
  CHECK(b[1].cls == OOSClass::front);
  CHECK(b[0].w == doctest::Approx(0.2));
  CHECK(b[0].h == doctest::Approx(0.1));
  std::istringstream bad("0 0.5 0.5 0.2\n");
  CHECK_THROWS_AS(parse_labels(bad), ValidationError);
  std::istringstream extra("0 0.5 0.5 0.2 0.1 7\n");
  CHECK_THROWS_AS(parse_labels(extra), ValidationError);
}

TEST_CASE("load_dataset on 8 synthetic records") {
  testutil::TempDir dir("dm8");
  const auto gen = generate_dataset(8, 11, dir.path(), small_opts());
  const auto recs = load_dataset(dir.path());
  REQUIRE(recs.size() == 8);
  CHECK(std::is_sorted(recs.begin(), recs.end(),
                       [](const auto& a, const auto& b) { return a.image_id < b.image_id; }));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK_NOTHROW(validate(recs[i]));
    CHECK(recs[i].image == gen[i].image);
    CHECK((recs[i].seg.pixels == gen[i].seg.pixels).all());
    CHECK((recs[i].depth.pixels == gen[i].depth.pixels).all());
    CHECK_FALSE(recs[i].depth_is_pseudo);
    REQUIRE(recs[i].boxes.size() == gen[i].boxes.size());
    for (std::size_t k = 0; k < recs[i].boxes.size(); ++k) {
      CHECK(recs[i].boxes[k].cls == gen[i].boxes[k].cls);
      CHECK(std::abs(recs[i].boxes[k].x - gen[i].boxes[k].x) < 1e-6);
    }
  }
}

TEST_CASE("missing seg mask names the record") {
  testutil::TempDir dir("dmmiss");
  generate_dataset(3, 1, dir.path(), small_opts());
  fs::remove(dir.path() / "seg" / "synth_0001.png");
  try {
    load_dataset(dir.path());
    FAIL("expected MissingAnnotationError");
  } catch (const MissingAnnotationError& e) {
    CHECK(std::string(e.what()).find("synth_0001") != std::string::npos);
  }
}

TEST_CASE("depth of a different size is a dimension mismatch") {
  testutil::TempDir dir("dmdim");
  generate_dataset(2, 1, dir.path(), small_opts());
  io::write_depth_png(dir.path() / "depth" / "synth_0000.png", DepthMap{DepthGrid::Constant(48, 48, 0.5), false});
  try {
    load_dataset(dir.path(), {DepthSource::raw, false});
    FAIL("expected DimensionMismatchError");
  } catch (const DimensionMismatchError& e) {
    CHECK(std::string(e.what()).find("synth_0000") != std::string::npos);
  }
  // With checksum verification on, the edit is caught before the shape check.
  CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
}

TEST_CASE("save(load(root)) reproduces annotation files byte for byte") {
  testutil::TempDir a("rt_a"), b("rt_b");
  generate_dataset(4, 5, a.path(), small_opts());
  save_dataset(b.path(), load_dataset(a.path()));
  for (const auto& id : list_image_ids(a.path())) {
    for (const auto& rel : {fs::path("labels") / (id + ".txt"), fs::path("seg") / (id + ".png"),
                            fs::path("depth") / (id + ".png"), fs::path("images") / (id + ".png")})
      CHECK_MESSAGE(slurp(a.path() / rel) == slurp(b.path() / rel), rel.string());
  }
  CHECK(slurp(a.path() / "dataset.json") == slurp(b.path() / "dataset.json"));
}

TEST_CASE("save_dataset rejects duplicate ids and normalized depth") {
  testutil::TempDir dir("dmdup");
  auto recs = generate_dataset(2, 2, small_opts());
  recs[1].image_id = recs[0].image_id;
  CHECK_THROWS_AS(save_dataset(dir.path(), recs), ValidationError);
  recs = generate_dataset(1, 2, small_opts());
  recs[0].depth.normalized = true;
  CHECK_THROWS_AS(save_dataset(dir.path(), recs), ValidationError);
}

TEST_CASE("depth cache is preferred when requested") {
  testutil::TempDir dir("dmcache");
  auto recs = generate_dataset(2, 3, dir.path(), small_opts());
  CHECK_THROWS_AS(load_dataset(dir.path(), {DepthSource::normalized_cache}), MissingAnnotationError);
  for (auto& r : recs) {
    r.depth.pixels *= 1.25;
    r.depth.normalized = true;
  }
  write_depth_cache(dir.path(), recs);
  const auto loaded = load_dataset(dir.path(), {DepthSource::normalized_cache});
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(loaded[i].depth.normalized);
    CHECK((loaded[i].depth.pixels == recs[i].depth.pixels).all());
  }
  CHECK_FALSE(load_dataset(dir.path(), {DepthSource::raw})[0].depth.normalized);
}

TEST_CASE("make_folds: 10 ids, k=5") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
  const auto folds = make_folds(ids, 5, 0.15, 7);
  REQUIRE(folds.size() == 5);
  std::set<std::string> all_test;
  for (const auto& f : folds) {
    CHECK(f.test_ids.size() == 2);
    for (const auto& id : f.test_ids) CHECK(all_test.insert(id).second);
    // 8 remaining, round(1.2) = 1 validation id.
    CHECK(f.val_ids.size() == 1);
    std::set<std::string> u(f.train_ids.begin(), f.train_ids.end());
    for (const auto& v : {f.val_ids, f.test_ids})
      for (const auto& id : v) CHECK(u.insert(id).second);
    CHECK(u.size() == 10);
  }
  CHECK(all_test.size() == 10);
}

TEST_CASE("make_folds: 171 ids, sizes and determinism") {
  std::vector<std::string> ids;
  for (int i = 0; i < 171; ++i) ids.push_back("img" + std::to_string(i));
  const auto folds = make_folds(ids, 5, 0.15, 7);
  std::map<std::string, int> count;
  for (const auto& f : folds) {
    CHECK((f.test_ids.size() == 34 || f.test_ids.size() == 35));
    const auto rest = 171 - f.test_ids.size();
    CHECK(f.val_ids.size() == static_cast<std::size_t>(std::llround(0.15 * rest)));
    for (const auto& id : f.test_ids) ++count[id];
  }
  for (const auto& id : ids) CHECK(count[id] == 1);
  const auto again = make_folds(ids, 5, 0.15, 7);
  for (int f = 0; f < 5; ++f) {
    CHECK(again[f].train_ids == folds[f].train_ids);
    CHECK(again[f].val_ids == folds[f].val_ids);
    CHECK(again[f].test_ids == folds[f].test_ids);
  }
  CHECK(make_folds(ids, 5, 0.15, 8)[0].test_ids != folds[0].test_ids);
}

TEST_CASE("make_folds: too few records") {
  CHECK_THROWS_AS(make_folds({"a", "b", "c", "d"}, 5, 0.15, 0), TooFewRecordsError);
}

TEST_CASE("record validation catches broken invariants") {
  auto rec = generate_dataset(1, 4, small_opts())[0];
  CHECK_NOTHROW(validate(rec));
  auto r1 = rec;
  r1.seg.pixels(0, 0) = 2;
  CHECK_THROWS_AS(validate(r1), ValidationError);
  auto r2 = rec;
  r2.depth.pixels(0, 0) = 1.5;
  CHECK_THROWS_AS(validate(r2), ValidationError);
  r2.depth.normalized = true;
  CHECK_NOTHROW(validate(r2));
  auto r3 = rec;
  r3.seg.pixels = MaskGrid::Zero(10, 10);
  CHECK_THROWS_AS(validate(r3), DimensionMismatchError);
}
