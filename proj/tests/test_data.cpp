#include "deepbv/components.hpp"
#include "deepbv/errors.hpp"
#include "deepbv/metrics.hpp"
#include "deepbv/phantom.hpp"
#include "deepbv/volume.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

using namespace deepbv;
namespace fs = std::filesystem;

namespace {

FormatErrorKind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_volume(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decoded a corrupt volume";
  return FormatErrorKind::Io;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("deepbv_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image ramp_image(std::array<int, 3> dims) {
  Image v(dims);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = float(i) * 0.25f - 3.0f;
  return v;
}

}  // namespace

TEST(VolumeFormat, HeaderBytesMatchFixture) {
  VolumeHeader h;
  h.dims = {150, 161, 81};
  h.spacing = {50.0f, 50.0f, 50.0f};
  h.dtype = Dtype::Float32;
  const std::vector<std::uint8_t> expected{
      0x44, 0x42, 0x56, 0x31,                                      // "DBV1"
      0x96, 0x00, 0x00, 0x00, 0xA1, 0x00, 0x00, 0x00, 0x51, 0x00, 0x00, 0x00,  // dims
      0x00, 0x00, 0x48, 0x42, 0x00, 0x00, 0x48, 0x42, 0x00, 0x00, 0x48, 0x42,  // 50.0f x3
      0x00};
  EXPECT_EQ(encode_header(h), expected);
  EXPECT_EQ(expected.size(), kVolumeHeaderBytes);
  const auto back = decode_header(expected);
  EXPECT_EQ(back.dims, h.dims);
  EXPECT_EQ(back.spacing, h.spacing);
  EXPECT_EQ(back.dtype, Dtype::Float32);
}

TEST(VolumeFormat, RoundTripIsBitExact) {
  Image v = ramp_image({5, 3, 4});
  v.spacing = {48.5f, 50.0f, 51.25f};
  v.data[7] = -0.0f;
  v.data[8] = std::numeric_limits<float>::denorm_min();
  const auto bytes = encode_volume(v);
  EXPECT_EQ(bytes.size(), kVolumeHeaderBytes + 4 * v.size());
  const auto back = std::get<Image>(decode_volume(bytes));
  EXPECT_EQ(back.dims, v.dims);
  EXPECT_EQ(back.spacing, v.spacing);
  EXPECT_EQ(encode_volume(back), bytes);
  EXPECT_TRUE(std::signbit(back.data[7]));

  std::mt19937_64 rng(3);
  const Mask m = deepbv::testing::random_mask({6, 2, 5}, 0.3, rng);
  const auto mb = encode_volume(m);
  EXPECT_EQ(mb[28], 1);
  EXPECT_EQ(std::get<Mask>(decode_volume(mb)).data, m.data);
}

TEST(VolumeFormat, CorruptionRaisesTypedErrors) {
  const auto good = encode_volume(ramp_image({3, 3, 3}));
  auto bad = good;
  bad[1] = 'X';
  EXPECT_EQ(decode_kind(bad), FormatErrorKind::BadMagic);
  EXPECT_EQ(decode_kind({good.begin(), good.begin() + 10}), FormatErrorKind::Truncated);
  EXPECT_EQ(decode_kind({good.begin(), good.end() - 1}), FormatErrorKind::Truncated);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(decode_kind(bad), FormatErrorKind::Malformed);
  bad = good;
  bad[28] = 7;
  EXPECT_EQ(decode_kind(bad), FormatErrorKind::UnknownDtype);
  bad = good;
  bad[4] = bad[5] = bad[6] = bad[7] = 0;
  EXPECT_EQ(decode_kind(bad), FormatErrorKind::Malformed);

  Image nan = ramp_image({2, 2, 2});
  auto nb = encode_volume(nan);
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nb.data() + kVolumeHeaderBytes + 4, &q, 4);
  EXPECT_EQ(decode_kind(nb), FormatErrorKind::NonFinite);
  nan.data[3] = q;
  EXPECT_THROW(encode_volume(nan), FormatError);

  auto mb = encode_volume(Mask({2, 2, 2}));
  mb.back() = 2;
  EXPECT_EQ(decode_kind(mb), FormatErrorKind::Malformed);
}

TEST(VolumeFormat, FileReadersWidenAndCheckKinds) {
  const auto dir = scratch_dir("readers");
  std::mt19937_64 rng(4);
  const Mask m = deepbv::testing::random_mask({4, 5, 3}, 0.5, rng);
  const Image v = ramp_image({4, 5, 3});
  write_volume(m, (dir / "m.dbv").string());
  write_volume(v, (dir / "v.dbv").string());

  const Image widened = read_image((dir / "m.dbv").string());
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(widened.data[i], float(m.data[i]));
  EXPECT_EQ(read_image((dir / "v.dbv").string()).data, v.data);
  EXPECT_EQ(read_mask((dir / "m.dbv").string()).data, m.data);
  EXPECT_THROW(read_mask((dir / "v.dbv").string()), FormatError);
  try {
    read_volume((dir / "missing.dbv").string());
    ADD_FAILURE() << "read a missing file";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::Io);
  }
  fs::remove_all(dir);
}

TEST(Phantom, IsAPureFunctionOfSeed) {
  const auto cfg = PhantomConfig::desk();
  const Phantom a = generate_phantom(cfg, 17);
  const Phantom b = generate_phantom(cfg, 17);
  const Phantom c = generate_phantom(cfg, 18);
  EXPECT_EQ(encode_volume(a.image), encode_volume(b.image));
  EXPECT_EQ(a.mask.data, b.mask.data);
  EXPECT_NE(encode_volume(a.image), encode_volume(c.image));
}

TEST(Phantom, DeskVolumesAreWellFormed) {
  const auto cfg = PhantomConfig::desk();
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    SCOPED_TRACE(seed);
    const Phantom p = generate_phantom(cfg, seed);
    EXPECT_EQ(p.mask.dims, p.image.dims);
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(p.image.dims[std::size_t(a)], 88);
      EXPECT_LE(p.image.dims[std::size_t(a)], 104);
    }
    const double frac = double(count_nonzero(p.mask)) / double(p.mask.size());
    EXPECT_GE(frac, 0.001);
    EXPECT_LE(frac, 0.010);
    EXPECT_EQ(label_components(p.mask, 26).sizes.size(), 1u);

    // The cavity stays within the extent cap, and is darker than its surroundings on average.
    std::array<int, 3> lo{1 << 20, 1 << 20, 1 << 20}, hi{-1, -1, -1};
    double in_sum = 0, out_sum = 0;
    std::size_t in_n = 0, out_n = 0;
    for (int z = 0; z < p.mask.dims[2]; ++z)
      for (int y = 0; y < p.mask.dims[1]; ++y)
        for (int x = 0; x < p.mask.dims[0]; ++x) {
          const std::array<int, 3> q{x, y, z};
          if (p.mask.at(x, y, z)) {
            for (std::size_t k = 0; k < 3; ++k) {
              lo[k] = std::min(lo[k], q[k]);
              hi[k] = std::max(hi[k], q[k]);
            }
            in_sum += p.image.at(x, y, z);
            ++in_n;
          } else {
            out_sum += p.image.at(x, y, z);
            ++out_n;
          }
        }
    for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(hi[k] - lo[k] + 1, cfg.bv_max_extent);
    for (float x : p.image.data) ASSERT_TRUE(std::isfinite(x));
    EXPECT_LT(in_sum / double(in_n), out_sum / double(out_n));
  }
}

TEST(Phantom, InvalidConfigIsRejected) {
  PhantomConfig c = PhantomConfig::desk();
  c.dims_max = {80, 80, 80};
  EXPECT_THROW(generate_phantom(c, 1), PhantomError);
  c = PhantomConfig::desk();
  c.bv_fraction_min = 0.0;
  EXPECT_THROW(generate_phantom(c, 1), PhantomError);
}

TEST(Metrics, DiceValues) {
  Mask a({4, 4, 1}), b({4, 4, 1});
  EXPECT_EQ(dsc(a, b), 1.0);  // both empty
  a.data = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  b.data = {0, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(dsc(a, b), 2.0 * 2 / (3 + 4));
  EXPECT_EQ(dsc(a, b), dsc(b, a));
  EXPECT_EQ(dsc(a, a), 1.0);
  Mask c({4, 4, 1});
  c.data[15] = 1;
  EXPECT_EQ(dsc(a, c), 0.0);
  EXPECT_THROW(dsc(a, Mask({4, 4, 2})), ShapeError);
}

TEST(Metrics, BoxContainment) {
  Mask m({10, 10, 10});
  m.at(1, 1, 1) = m.at(2, 2, 2) = m.at(3, 3, 3) = m.at(8, 8, 8) = 1;
  EXPECT_DOUBLE_EQ(box_containment({{0, 0, 0}, 4}, m), 0.75);
  EXPECT_DOUBLE_EQ(box_containment({{0, 0, 0}, 10}, m), 1.0);
  EXPECT_DOUBLE_EQ(box_containment({{2, 2, 2}, 1}, m), 0.25);
  EXPECT_THROW(box_containment({{0, 0, 0}, 4}, Mask({3, 3, 3})), std::invalid_argument);
}

TEST(Metrics, ReportCountsAndJsonRoundTrip) {
  Mask gt({4, 1, 1}), good({4, 1, 1}), bad({4, 1, 1});
  gt.data = {1, 1, 0, 0};
  good.data = {1, 1, 0, 0};
  bad.data = {0, 1, 1, 1};  // dsc 0.4
  const std::vector<Mask> preds{good, bad}, gts{gt, gt};
  const std::vector<BoundingBox> boxes{{{0, 0, 0}, 2}, {{1, 0, 0}, 3}};
  const std::vector<std::string> names{"a", "b"};
  const auto r = evaluate(preds, gts, &boxes, &names);
  EXPECT_DOUBLE_EQ(r.mean_dsc, 0.7);
  EXPECT_EQ(r.failures, 1u);
  EXPECT_TRUE(r.has_boxes);
  EXPECT_EQ(r.boxes_full, 1u);
  EXPECT_EQ(r.boxes_95, 1u);
  ASSERT_TRUE(r.volumes[1].containment);
  EXPECT_DOUBLE_EQ(*r.volumes[1].containment, 0.5);

  const auto back = MetricsReport::from_json_lines(r.to_json_lines());
  EXPECT_EQ(back.to_json_lines(), r.to_json_lines());
  EXPECT_EQ(back.volumes.size(), 2u);
  EXPECT_EQ(back.volumes[0].name, "a");
  EXPECT_THROW(MetricsReport::from_json_lines("{\"type\":\"volume\",\"name\":\"a\",\"dsc\":1}\n"),
               std::invalid_argument);
}

TEST(Metrics, SliceExportWritesScaledPgm) {
  const auto dir = scratch_dir("pgm");
  Image v({3, 2, 2});
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = float(i);
  Mask m({3, 2, 2});
  m.at(2, 1, 1) = 1;
  const auto paths = export_slice(v, &m, 2, 1, (dir / "s.pgm").string());
  ASSERT_EQ(paths.size(), 2u);
  EXPECT_EQ(fs::path(paths[1]).filename(), "s_mask.pgm");

  // z = 1 holds values 6..11; columns run along x, rows along y.
  const std::string head = "P5\n3 2\n255\n";
  auto img = slurp(paths[0]);
  ASSERT_EQ(img.size(), head.size() + 6);
  EXPECT_EQ(std::string(img.begin(), img.begin() + long(head.size())), head);
  const std::vector<std::uint8_t> px(img.begin() + long(head.size()), img.end());
  EXPECT_EQ(px, (std::vector<std::uint8_t>{0, 51, 102, 153, 204, 255}));
  const auto mask_px = slurp(paths[1]);
  EXPECT_EQ(std::vector<std::uint8_t>(mask_px.begin() + long(head.size()), mask_px.end()),
            (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 255}));

  // An x cut is y columns by z rows.
  export_slice(v, nullptr, 0, 0, (dir / "x.pgm").string());
  const auto xs = slurp(dir / "x.pgm");
  EXPECT_EQ(std::string(xs.begin(), xs.begin() + 10), "P5\n2 2\n255");

  Image flat({2, 2, 2}, 3.0f);
  export_slice(flat, nullptr, 1, 0, (dir / "f.pgm").string());
  const auto fp = slurp(dir / "f.pgm");
  for (std::size_t i = fp.size() - 4; i < fp.size(); ++i) EXPECT_EQ(fp[i], 128);

  EXPECT_THROW(export_slice(v, nullptr, 3, 0, (dir / "e.pgm").string()), std::invalid_argument);
  EXPECT_THROW(export_slice(v, nullptr, 2, 2, (dir / "e.pgm").string()), std::out_of_range);
  fs::remove_all(dir);
}
