#include <filesystem>
#include <random>

#include "doctest.h"
#include "efs/config.hpp"
#include "efs/io.hpp"

using namespace efs;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}
}  // namespace

TEST_CASE("TEN1 round-trips arrays of any rank") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> dist(-100.0f, 100.0f);
  for (const std::vector<int>& shape :
       {std::vector<int>{7}, {3, 5}, {2, 3, 4}, {4, 2, 3, 3}}) {
    NdArray arr(shape);
    for (auto& v : arr.data) v = dist(rng);  // f32 values survive exactly
    const fs::path p = temp_file("roundtrip.ten1");
    write_ten1(p, arr);
    const NdArray back = read_ten1(p);
    CHECK(back.shape == arr.shape);
    CHECK(back.data == arr.data);
    fs::remove(p);
  }
}

TEST_CASE("TEN1 rejects bad magic and truncation") {
  const fs::path p = temp_file("bad.ten1");
  write_text_atomic(p, "NOPE");
  CHECK_THROWS_AS(read_ten1(p), IoError);
  NdArray arr({4, 4}, 1.0);
  write_ten1(p, arr);
  std::string bytes = read_text(p);
  bytes.resize(bytes.size() / 2);
  write_text_atomic(p, bytes);
  CHECK_THROWS_AS(read_ten1(p), IoError);
  fs::remove(p);
}

TEST_CASE("EFS1 round-trips an event stream") {
  EventStream stream;
  stream.width = 17;
  stream.height = 9;
  stream.sweep = FocalSweep{1.5, 9.5, 0.75, 0.25, 2};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> t_dist(0.25, 1.0);
  for (int i = 0; i < 500; ++i) {
    Event e;
    e.t_s = t_dist(rng);
    e.x = static_cast<uint16_t>(rng() % 17);
    e.y = static_cast<uint16_t>(rng() % 9);
    e.polarity = (rng() & 1) ? 1 : -1;
    stream.events.push_back(e);
  }
  sort_events(stream.events);

  const fs::path p = temp_file("roundtrip.efs1");
  write_efs1(p, stream);
  // Record layout is 14 bytes after the 52-byte header.
  CHECK(fs::file_size(p) == 52 + 14 * stream.events.size());
  const EventStream back = read_efs1(p);
  CHECK(back.width == stream.width);
  CHECK(back.height == stream.height);
  CHECK(back.sweep.t_start_s == stream.sweep.t_start_s);
  CHECK(back.sweep.duration_s == stream.sweep.duration_s);
  CHECK(back.sweep.d_f_start_m == stream.sweep.d_f_start_m);
  CHECK(back.sweep.d_f_end_m == stream.sweep.d_f_end_m);
  REQUIRE(back.count() == stream.count());
  for (size_t i = 0; i < stream.count(); ++i) {
    CHECK(back.events[i].t_s == stream.events[i].t_s);
    CHECK(back.events[i].x == stream.events[i].x);
    CHECK(back.events[i].y == stream.events[i].y);
    CHECK(back.events[i].polarity == stream.events[i].polarity);
  }
  fs::remove(p);
}

TEST_CASE("atomic writes leave no temp files behind") {
  const fs::path p = temp_file("atomic.txt");
  write_text_atomic(p, "hello");
  CHECK(read_text(p) == "hello");
  CHECK_FALSE(fs::exists(p.string() + ".tmp"));
  fs::remove(p);
}

TEST_CASE("FlatKv parses, serializes and preserves exact doubles") {
  FlatKv kv;
  kv.set_double("a.b", 0.1234567890123456789);
  kv.set_int("c", -42);
  kv.set_bool("d", true);
  kv.set("e", "text value");
  const FlatKv back = FlatKv::parse(kv.serialize());
  CHECK(back.get_double("a.b") == kv.get_double("a.b"));
  CHECK(back.get_int("c") == -42);
  CHECK(back.get_bool("d"));
  CHECK(back.get_string("e") == "text value");
  CHECK_THROWS_WITH_AS(back.get_double("missing"), doctest::Contains("missing"), IoError);
  CHECK_THROWS_AS(back.get_int("e"), IoError);
}

TEST_CASE("FlatKv handles comments and reports malformed lines") {
  const FlatKv kv = FlatKv::parse("# comment\n key = 1 # trailing\n\n");
  CHECK(kv.get_int("key") == 1);
  CHECK_THROWS_AS(FlatKv::parse("not a pair\n"), IoError);
}

TEST_CASE("RunConfig rejects unknown keys by name") {
  CHECK_THROWS_WITH_AS(RunConfig::parse("lens.focal_lenght = 0.05\n"),
                       doctest::Contains("lens.focal_lenght"), ConfigError);
  CHECK_NOTHROW(RunConfig::parse("lens.focal_length_m = 0.05\n"));
}

TEST_CASE("RunConfig defaults satisfy every module validator") {
  const RunConfig cfg = RunConfig::defaults();
  CHECK_NOTHROW(cfg.lens());
  CHECK_NOTHROW(cfg.sweep());
  CHECK_NOTHROW(cfg.sim());
  CHECK_NOTHROW(cfg.encoding());
  CHECK_NOTHROW(cfg.scene(0));
  CHECK_NOTHROW(cfg.model());
  CHECK_NOTHROW(cfg.loss());
  CHECK_NOTHROW(cfg.train());
  CHECK_NOTHROW(cfg.baseline());
  CHECK(cfg.loss().alpha == 128.0);
  CHECK(cfg.loss().beta == 1.0);
  CHECK(cfg.train().learning_rate == 5e-4);
}

TEST_CASE("RunConfig overrides defaults and validates slices") {
  const RunConfig cfg = RunConfig::parse("lens.f_number = 1.2\nscene.height = 32\n");
  CHECK(cfg.lens().f_number == 1.2);
  CHECK(cfg.encoding().height == 32);

  const RunConfig bad = RunConfig::parse("sweep.num_samples = 1\n");
  CHECK_THROWS_AS(bad.sweep(), std::invalid_argument);
}

TEST_CASE("scene seeds advance per index") {
  const RunConfig cfg = RunConfig::defaults();
  CHECK(cfg.scene(0).seed + 1 == cfg.scene(1).seed);
}

TEST_CASE("describe_keys lists every schema key with units") {
  const std::string text = RunConfig::describe_keys();
  for (const KeySpec& spec : RunConfig::schema()) {
    CHECK(text.find(spec.key) != std::string::npos);
  }
  CHECK(text.find("(double, m)") != std::string::npos);
}
