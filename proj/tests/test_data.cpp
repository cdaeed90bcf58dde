#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>

#include "macu/data.hpp"

using namespace macu;
namespace fs = std::filesystem;

namespace {

std::vector<uint8_t> bytes_of(const std::string& head,
                              std::initializer_list<uint8_t> payload) {
  std::vector<uint8_t> b(head.begin(), head.end());
  b.insert(b.end(), payload);
  return b;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("macu_data_" + std::to_string(::rand()) + "_" +
            std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

Ppm rand_ppm(int64_t w, int64_t h, Rng& rng) {
  Ppm p;
  p.w = w;
  p.h = h;
  p.data.resize(size_t(w) * h * 3);
  for (auto& b : p.data) b = uint8_t(rng.next_below(256));
  return p;
}

Pgm rand_pgm(int64_t w, int64_t h, int classes, Rng& rng) {
  Pgm p;
  p.w = w;
  p.h = h;
  p.data.resize(size_t(w) * h);
  for (auto& b : p.data) b = uint8_t(rng.next_below(uint64_t(classes)));
  return p;
}

}  // namespace

TEST_CASE("decode single-pixel P6 and two-pixel P5") {
  auto img = decode_ppm(bytes_of("P6\n1 1\n255\n", {255, 0, 0}));
  CHECK(img.w == 1);
  CHECK(img.h == 1);
  REQUIRE(img.data.size() == 3);
  CHECK(img.data[0] == 255);
  CHECK(img.data[1] == 0);
  CHECK(img.data[2] == 0);

  auto g = decode_pgm(bytes_of("P5\n2 1\n255\n", {0, 5}));
  CHECK(g.w == 2);
  CHECK(g.h == 1);
  CHECK(g.data == std::vector<uint8_t>{0, 5});

  // one comment line after the magic is tolerated
  auto c = decode_ppm(bytes_of("P6\n# made up\n1 1\n255\n", {1, 2, 3}));
  CHECK(c.data == std::vector<uint8_t>{1, 2, 3});
}

TEST_CASE("netpbm decode failure modes") {
  CHECK_THROWS_AS(decode_ppm(bytes_of("P3\n1 1\n255\n", {0, 0, 0})),
                  BadMagicError);
  CHECK_THROWS_AS(decode_pgm(bytes_of("P6\n1 1\n255\n", {0, 0, 0})),
                  BadMagicError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n1 1\n255\n", {255, 0})),
                  TruncatedError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n1 1\n65535\n", {0, 0, 0})),
                  MaxvalError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\nx 1\n255\n", {0, 0, 0})),
                  FormatError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n0 1\n255\n", {})), FormatError);
}

TEST_CASE("encode/decode roundtrip") {
  Rng rng(3);
  auto img = rand_ppm(7, 5, rng);
  auto back = decode_ppm(encode_ppm(img));
  CHECK(back.w == img.w);
  CHECK(back.h == img.h);
  CHECK(back.data == img.data);

  auto g = rand_pgm(4, 9, 256, rng);
  auto gb = decode_pgm(encode_pgm(g));
  CHECK(gb.data == g.data);
}

TEST_CASE("image_to_tensor layout and scale") {
  Ppm img;
  img.w = 2;
  img.h = 1;
  img.data = {255, 0, 0, 0, 128, 255};
  auto t = image_to_tensor<double>(img);
  CHECK(t.shape == Shape{1, 3, 1, 2});
  CHECK(t.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(t.at(0, 1, 0, 0) == 0.0);
  CHECK(t.at(0, 2, 0, 0) == 0.0);
  CHECK(t.at(0, 0, 0, 1) == 0.0);
  CHECK(t.at(0, 1, 0, 1) == doctest::Approx(128.0 / 255.0));
  CHECK(t.at(0, 2, 0, 1) == doctest::Approx(1.0));
}

TEST_CASE("tensor_to_image quantization") {
  Tensor<double> t({1, 3, 1, 2});
  t.v = {0.5, -0.1, 1.2, 0.0, 1.0, 0.25098039215686274};
  auto img = tensor_to_image(t);
  // channel-planar input maps back to interleaved bytes
  CHECK(img.data[0] == 128);  // 0.5 rounds half up
  CHECK(img.data[1] == 255);  // 1.2 clamped above
  CHECK(img.data[2] == 255);  // 1.0
  CHECK(img.data[3] == 0);    // -0.1 clamped below
  CHECK(img.data[4] == 0);
  CHECK(img.data[5] == 64);  // 64/255

  Tensor<double> bad({1, 2, 1, 1});
  CHECK_THROWS_AS(tensor_to_image(bad), ShapeError);
}

TEST_CASE("byte -> unit -> byte is exact for every value") {
  Ppm img;
  img.w = 256;
  img.h = 1;
  img.data.resize(256 * 3);
  for (int i = 0; i < 256; ++i)
    for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = uint8_t(i);
  auto back = tensor_to_image(image_to_tensor<float>(img));
  CHECK(back.data == img.data);
}

TEST_CASE("mask conversions and validation") {
  Pgm g;
  g.w = 2;
  g.h = 2;
  g.data = {0, 0, 0, 0};
  auto m = mask_from_pgm(g);
  CHECK(m.n == 1);
  CHECK(m.h == 2);
  CHECK(m.w == 2);
  for (auto v : m.v) CHECK(v == 0);
  CHECK_NOTHROW(validate_mask(m, 1));

  m.v = {0, 5, 2, 1};
  CHECK_NOTHROW(validate_mask(m, 6));
  CHECK_THROWS_AS(validate_mask(m, 5), MaskRangeError);
  auto back = mask_to_pgm(m);
  CHECK(back.data == std::vector<uint8_t>{0, 5, 2, 1});

  m.v[0] = 300;
  CHECK_THROWS_AS(mask_to_pgm(m), MaskRangeError);
  m.v[0] = -1;
  CHECK_THROWS_AS(validate_mask(m, 6), MaskRangeError);
}

TEST_CASE("tile_grid arithmetic") {
  auto [cols, rows] = tile_grid(7200, 6800, 256);
  CHECK(cols == 28);
  CHECK(rows == 26);
  CHECK(cols * rows == 728);
  CHECK(15 * cols * rows == 10920);

  CHECK(tile_grid(256, 256, 256) == std::pair<int64_t, int64_t>{1, 1});
  CHECK(tile_grid(255, 256, 256).first == 0);
  CHECK_THROWS_AS(tile_grid(10, 10, 0), ValueError);
}

TEST_CASE("tiling is lossless over the covered region") {
  Rng rng(11);
  auto img = rand_ppm(9, 6, rng);  // rightmost column discarded at patch 2
  auto mask = rand_pgm(9, 6, 6, rng);
  auto tiles = tile_pair(img, mask, "s", 2);
  REQUIRE(tiles.size() == 4 * 3);
  CHECK(tiles.front().stem == "s_r0_c0");
  CHECK(tiles.back().stem == "s_r2_c3");

  // stitch back and compare pixel-for-pixel inside the grid
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 4; ++c) {
      const auto& t = tiles[size_t(r * 4 + c)];
      CHECK(t.image.w == 2);
      CHECK(t.mask.h == 2);
      for (int64_t y = 0; y < 2; ++y)
        for (int64_t x = 0; x < 2; ++x) {
          const int64_t sy = r * 2 + y, sx = c * 2 + x;
          CHECK(t.mask.data[y * 2 + x] == mask.data[sy * 9 + sx]);
          for (int ch = 0; ch < 3; ++ch)
            CHECK(t.image.data[(y * 2 + x) * 3 + ch] ==
                  img.data[(sy * 9 + sx) * 3 + ch]);
        }
    }

  Pgm small;
  small.w = 4;
  small.h = 6;
  small.data.assign(24, 0);
  CHECK_THROWS_AS(tile_pair(img, small, "s", 2), ShapeError);
}

TEST_CASE("split_counts on the reference dataset sizes") {
  auto a = split_counts(4940, 0.6, 0.2);
  CHECK(a == std::array<int64_t, 3>{2964, 988, 988});
  auto b = split_counts(10920, 0.6, 0.2);
  CHECK(b == std::array<int64_t, 3>{6552, 2184, 2184});
  auto c = split_counts(10, 1.0 / 3, 1.0 / 3);
  CHECK(c[0] == 3);
  CHECK(c[1] == 3);
  CHECK(c[2] == 4);
}

TEST_CASE("split_dataset partitions and is seed-deterministic") {
  std::vector<std::string> stems;
  for (int i = 0; i < 30; ++i) stems.push_back("t" + std::to_string(100 + i));

  auto a = split_dataset(stems, 0.6, 0.2, 0.2, 42);
  auto b = split_dataset(stems, 0.6, 0.2, 0.2, 42);
  CHECK(a.stems == b.stems);
  CHECK(a.sets == b.sets);
  CHECK(std::is_sorted(a.stems.begin(), a.stems.end()));

  std::array<int64_t, 3> got{0, 0, 0};
  for (auto s : a.sets) ++got[size_t(s)];
  CHECK(got == split_counts(30, 0.6, 0.2));

  auto tr = stems_in_set(a, SplitSet::train);
  auto va = stems_in_set(a, SplitSet::val);
  auto te = stems_in_set(a, SplitSet::test);
  std::set<std::string> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  all.insert(te.begin(), te.end());
  CHECK(all.size() == 30);  // disjoint cover

  CHECK_THROWS_AS(split_dataset({}, 0.6, 0.2, 0.2, 1), ValueError);
  CHECK_THROWS_AS(split_dataset(stems, 0.5, 0.2, 0.2, 1), ValueError);
  CHECK_THROWS_AS(split_dataset(stems, 1.4, -0.2, -0.2, 1), ValueError);
}

TEST_CASE("split assignments vary across seeds") {
  std::vector<std::string> stems;
  for (int i = 0; i < 30; ++i) stems.push_back("t" + std::to_string(100 + i));
  std::set<std::vector<SplitSet>> seen;
  for (uint64_t seed = 0; seed < 100; ++seed)
    seen.insert(split_dataset(stems, 0.6, 0.2, 0.2, seed).sets);
  CHECK(seen.size() >= 95);
}

TEST_CASE("split file roundtrip and format") {
  TempDir tmp;
  SplitAssignment a;
  a.stems = {"alpha", "beta", "gamma"};
  a.sets = {SplitSet::train, SplitSet::test, SplitSet::val};
  const std::string path = tmp.str() + "/split.tsv";
  write_split_file(path, a);

  auto raw = read_file(path);
  CHECK(std::string(raw.begin(), raw.end()) ==
        "alpha\ttrain\nbeta\ttest\ngamma\tval\n");

  auto back = read_split_file(path);
  CHECK(back.stems == a.stems);
  CHECK(back.sets == a.sets);

  write_file(path, bytes_of("alpha\tnowhere\n", {}));
  CHECK_THROWS_AS(read_split_file(path), FormatError);
  write_file(path, bytes_of("alpha train\n", {}));
  CHECK_THROWS_AS(read_split_file(path), FormatError);
  CHECK_THROWS_AS(read_file(tmp.str() + "/absent.tsv"), IoError);
}

TEST_CASE("dataset directory save/load/list") {
  TempDir tmp;
  Rng rng(5);
  auto img = rand_ppm(8, 8, rng);
  auto mask = rand_pgm(8, 8, 6, rng);
  save_pair(tmp.str(), "b_stem", img, &mask);
  save_pair(tmp.str(), "a_stem", img, nullptr);  // image-only pair

  auto stems = list_stems(tmp.str());
  CHECK(stems == std::vector<std::string>{"a_stem", "b_stem"});
  CHECK(load_image(tmp.str(), "b_stem").data == img.data);
  CHECK(load_mask(tmp.str(), "b_stem").data == mask.data);
  CHECK_THROWS_AS(load_mask(tmp.str(), "a_stem"), IoError);
  CHECK_THROWS_AS(list_stems(tmp.str() + "/nope"), IoError);
}

TEST_CASE("palette is stable up front and collision-free") {
  auto pal = palette(12);
  CHECK(pal[0] == std::array<uint8_t, 3>{0, 0, 0});
  CHECK(pal[1] == std::array<uint8_t, 3>{230, 25, 75});
  CHECK(pal[5] == std::array<uint8_t, 3>{240, 50, 230});
  std::set<std::array<uint8_t, 3>> uniq(pal.begin(), pal.end());
  CHECK(uniq.size() == pal.size());
}

TEST_CASE("colorize then reverse-lookup recovers the mask") {
  Rng rng(9);
  ClassMask m;
  m.n = 1;
  m.h = 5;
  m.w = 7;
  m.v.resize(35);
  for (auto& v : m.v) v = int32_t(rng.next_below(6));
  auto pal = palette(6);
  auto img = colorize_prediction(m, pal);
  std::map<std::array<uint8_t, 3>, int32_t> inv;
  for (int32_t c = 0; c < 6; ++c) inv[pal[size_t(c)]] = c;
  for (int64_t i = 0; i < 35; ++i) {
    std::array<uint8_t, 3> px = {img.data[i * 3], img.data[i * 3 + 1],
                                 img.data[i * 3 + 2]};
    CHECK(inv.at(px) == m.v[size_t(i)]);
  }
  m.v[0] = 6;
  CHECK_THROWS_AS(colorize_prediction(m, pal), MaskRangeError);
}

TEST_CASE("synthetic set covers every class and is deterministic") {
  SynthOptions o;  // defaults: 8 x 64x64, 6 classes
  auto a = synth_generate(o);
  auto b = synth_generate(o);
  REQUIRE(a.size() == 8);
  std::vector<bool> seen(size_t(o.classes), false);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.w == 64);
    CHECK(a[i].mask.h == 64);
    CHECK(a[i].stem == b[i].stem);
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].mask.data == b[i].mask.data);
    for (uint8_t v : a[i].mask.data) {
      CHECK(v < o.classes);
      seen[v] = true;
    }
  }
  for (bool s : seen) CHECK(s);
  CHECK(a[0].stem == "synth_0000");
  CHECK(a[7].stem == "synth_0007");
}

TEST_CASE("noise-free synthetic images are palette-exact") {
  SynthOptions o;
  o.noise = 0.0;
  o.count = 2;
  o.size = 32;
  auto set = synth_generate(o);
  auto pal = palette(o.classes);
  for (const auto& t : set)
    for (int64_t i = 0; i < 32 * 32; ++i) {
      const auto& want = pal[t.mask.data[size_t(i)]];
      CHECK(t.image.data[i * 3 + 0] == want[0]);
      CHECK(t.image.data[i * 3 + 1] == want[1]);
      CHECK(t.image.data[i * 3 + 2] == want[2]);
    }
}

TEST_CASE("synthetic option validation") {
  SynthOptions o;
  o.classes = 1;
  CHECK_THROWS_AS(synth_generate(o), ValueError);
  o.classes = 6;
  o.count = 0;
  CHECK_THROWS_AS(synth_generate(o), ValueError);
  o.count = 1;
  o.size = 4;
  CHECK_THROWS_AS(synth_generate(o), ValueError);
}
