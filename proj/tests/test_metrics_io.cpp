#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "doctest.h"
#include "dsm/common.hpp"
#include "dsm/image_io.hpp"
#include "dsm/metrics.hpp"

using namespace dsm;

namespace {

DisparityMap map_of(int h, int w, std::initializer_list<double> vals) {
  DisparityMap m(h, w, MapRole::Disparity);
  std::size_t i = 0;
  for (double v : vals) m.data[i++] = v;
  return m;
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("metrics anchors: simple error ladder") {
  const DisparityMap gt = map_of(2, 2, {10.0, 10.0, 10.0, 10.0});
  const DisparityMap pred = map_of(2, 2, {10.0, 11.0, 12.0, 15.0});
  const MetricsReport r = compute_metrics(pred, gt);
  CHECK(r.valid_pixels == 4);
  CHECK(r.epe == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.pct_gt1 == doctest::Approx(0.5).epsilon(1e-12));  // strict: 1 px is not > 1
  CHECK(r.pct_gt3 == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(!r.has_split);
}

TEST_CASE("d1 needs both the absolute and the relative miss") {
  // large gt: 4 px off but under 5 percent
  DisparityMap gt = map_of(1, 1, {100.0});
  DisparityMap pred = map_of(1, 1, {104.0});
  CHECK(compute_metrics(pred, gt).d1 == 0.0);
  // small gt: same absolute error now counts
  gt = map_of(1, 1, {20.0});
  pred = map_of(1, 1, {24.0});
  CHECK(compute_metrics(pred, gt).d1 == 1.0);
  // 3.5 px at gt 100 fails the absolute arm
  gt = map_of(1, 1, {100.0});
  pred = map_of(1, 1, {103.5});
  CHECK(compute_metrics(pred, gt).d1 == 0.0);
  // 6 px at gt 100 passes both arms
  pred = map_of(1, 1, {106.0});
  CHECK(compute_metrics(pred, gt).d1 == 1.0);
  // boundaries are strict: exactly 3 px and exactly 5 percent do not count
  gt = map_of(1, 1, {60.0});
  pred = map_of(1, 1, {63.0});
  CHECK(compute_metrics(pred, gt).d1 == 0.0);
}

TEST_CASE("validity window: non-finite, negative, and oversized ground truth drop out") {
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const DisparityMap gt = map_of(1, 5, {200.0, 192.0, 0.0, -1.0, nan});
  const DisparityMap pred = map_of(1, 5, {1.0, 193.0, 1.0, 1.0, 1.0});
  const MetricsReport r = compute_metrics(pred, gt);
  CHECK(r.valid_pixels == 2);  // 192 inclusive, 0 inclusive
  CHECK(r.epe == doctest::Approx(1.0).epsilon(1e-12));
  (void)inf;

  const DisparityMap all_bad = map_of(1, 2, {-5.0, 500.0});
  const DisparityMap p2 = map_of(1, 2, {0.0, 0.0});
  CHECK_THROWS_AS(compute_metrics(p2, all_bad), DegenerateInputError);
  const DisparityMap wrong_shape = map_of(2, 1, {0.0, 0.0});
  CHECK_THROWS_AS(compute_metrics(wrong_shape, all_bad), ArgumentError);
}

TEST_CASE("metrics agree bit for bit with a naive reference loop") {
  Rng rng(201);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 16, w = 16;
    DisparityMap pred(h, w, MapRole::Disparity), gt(h, w, MapRole::Disparity);
    for (double& v : pred.data) v = rng.uniform(0.0, 20.0);
    for (double& v : gt.data) {
      const double roll = rng.uniform();
      if (roll < 0.05) v = -1.0;
      else if (roll < 0.1) v = std::numeric_limits<double>::quiet_NaN();
      else v = rng.uniform(0.0, 18.0);
    }

    double err_sum = 0.0, n1 = 0.0, n3 = 0.0, nd1 = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double g = gt.at(y, x);
        if (!std::isfinite(g) || g < 0.0 || g > 192.0) continue;
        const double e = std::abs(pred.at(y, x) - g);
        err_sum += e;
        if (e > 1.0) n1 += 1.0;
        if (e > 3.0) n3 += 1.0;
        if (e > 3.0 && e > 0.05 * g) nd1 += 1.0;
        ++n;
      }
    const MetricsReport r = compute_metrics(pred, gt, 192.0);
    REQUIRE(n > 0);
    CHECK(r.valid_pixels == n);
    CHECK(r.epe == err_sum / double(n));
    CHECK(r.pct_gt1 == n1 / double(n));
    CHECK(r.pct_gt3 == n3 / double(n));
    CHECK(r.d1 == nd1 / double(n));
  }
}

TEST_CASE("split metrics: the log-scale sign carves the image in two") {
  Rng rng(202);
  const int h = 8, w = 8;
  DisparityMap pred(h, w, MapRole::Disparity), gt(h, w, MapRole::Disparity);
  for (double& v : pred.data) v = rng.uniform(0.0, 10.0);
  for (double& v : gt.data) v = rng.uniform(0.0, 10.0);

  LogScaleMap all_match(h, w, MapRole::LogScale, -1.0);
  MetricsReport r = split_metrics(pred, gt, all_match);
  CHECK(r.has_split);
  CHECK(r.matchable_pixels == std::size_t(h * w));
  CHECK(r.epe_matchable == r.epe);
  CHECK(r.epe_unmatchable == 0.0);

  LogScaleMap none_match(h, w, MapRole::LogScale, 0.0);  // zero is not matchable
  r = split_metrics(pred, gt, none_match);
  CHECK(r.matchable_pixels == 0);
  CHECK(r.epe_unmatchable == r.epe);
  CHECK(r.epe_matchable == 0.0);

  LogScaleMap mixed(h, w, MapRole::LogScale);
  for (double& v : mixed.data) v = rng.uniform(-1.0, 1.0);
  r = split_metrics(pred, gt, mixed);
  const double nm = double(r.matchable_pixels);
  const double nu = double(r.valid_pixels) - nm;
  const double recombined = (r.epe_matchable * nm + r.epe_unmatchable * nu) / double(r.valid_pixels);
  CHECK(recombined == doctest::Approx(r.epe).epsilon(1e-9));
}

TEST_CASE("sample filter enforces the ten percent floor") {
  const int h = 10, w = 10;
  DisparityMap gt(h, w, MapRole::Disparity, -1.0);
  for (int i = 0; i < 9; ++i) gt.data[std::size_t(i)] = 1.0;  // 9 percent
  CHECK(!sample_filter(gt));
  gt.data[9] = 1.0;  // exactly 10 percent
  CHECK(sample_filter(gt));
  std::fill(gt.data.begin(), gt.data.end(), 3.0);
  CHECK(sample_filter(gt));
  DisparityMap empty;
  CHECK(!sample_filter(empty));
}

TEST_CASE("csv line and text report carry the same numbers") {
  const DisparityMap gt = map_of(1, 2, {4.0, 8.0});
  const DisparityMap pred = map_of(1, 2, {5.0, 8.0});
  const MetricsReport r = compute_metrics(pred, gt);
  const std::string csv = metrics_csv_line(r);
  CHECK(csv.find("0.5") != std::string::npos);
  const std::string text = format_metrics(r);
  CHECK(text.find("EPE") != std::string::npos);
  CHECK(!text.empty());
}

TEST_CASE("pfm round trip is bitwise at float precision") {
  Rng rng(203);
  ScalarMap m(5, 7, MapRole::Disparity);
  for (double& v : m.data) v = double(float(rng.uniform(-10.0, 10.0)));
  const std::string path = "io_roundtrip.pfm";
  write_pfm(path, m);
  const ScalarMap back = read_pfm(path, MapRole::Disparity);
  REQUIRE(back.h == 5);
  REQUIRE(back.w == 7);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(back.data[i] == m.data[i]);
  std::remove(path.c_str());
}

TEST_CASE("big-endian pfm decodes to the same map") {
  // hand-build both endiannesses of the same 2x2 payload
  const float vals[4] = {1.5f, -2.25f, 0.0f, 100.0f};  // rows bottom-up on disk
  std::string le = "Pf\n2 2\n-1.0\n";
  std::string be = "Pf\n2 2\n1.0\n";
  for (float f : vals) {
    unsigned char b[4];
    std::memcpy(b, &f, 4);  // host is little-endian
    le.append(reinterpret_cast<char*>(b), 4);
    for (int i = 3; i >= 0; --i) be.push_back(char(b[i]));
  }
  write_bytes("io_le.pfm", le);
  write_bytes("io_be.pfm", be);
  const ScalarMap a = read_pfm("io_le.pfm");
  const ScalarMap b = read_pfm("io_be.pfm");
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.data[i] == b.data[i]);
  CHECK(a.at(1, 0) == 1.5);   // first stored row is the bottom one
  CHECK(a.at(0, 0) == 0.0);
  std::remove("io_le.pfm");
  std::remove("io_be.pfm");
}

TEST_CASE("pfm failures carry byte offsets") {
  write_bytes("io_bad.pfm", "Qf\n2 2\n-1.0\n");
  try {
    read_pfm("io_bad.pfm");
    CHECK(false);
  } catch (const FormatError& e) {
    CHECK(e.byte_offset == 0);
  }

  std::string trunc = "Pf\n2 2\n-1.0\n";
  trunc.append(8, '\0');  // half the payload
  write_bytes("io_bad.pfm", trunc);
  try {
    read_pfm("io_bad.pfm");
    CHECK(false);
  } catch (const FormatError& e) {
    CHECK(e.byte_offset == trunc.size());
  }

  write_bytes("io_bad.pfm", "Pf\n2 2\n0.0\n" + std::string(16, '\0'));
  CHECK_THROWS_AS(read_pfm("io_bad.pfm"), FormatError);
  std::remove("io_bad.pfm");
}

TEST_CASE("pgm and ppm decode with comments and scale to unit range") {
  std::string pgm = "P5\n# a comment\n3 2\n255\n";
  const unsigned char g[6] = {0, 51, 102, 153, 204, 255};
  pgm.append(reinterpret_cast<const char*>(g), 6);
  write_bytes("io_gray.pgm", pgm);
  const ScalarMap gray = read_image("io_gray.pgm");
  REQUIRE(gray.h == 2);
  REQUIRE(gray.w == 3);
  CHECK(gray.at(0, 0) == 0.0);
  CHECK(gray.at(1, 2) == 1.0);
  CHECK(gray.at(0, 1) == doctest::Approx(51.0 / 255.0).epsilon(1e-12));
  std::remove("io_gray.pgm");

  std::string ppm = "P6\n1 1\n255\n";
  const unsigned char rgb[3] = {255, 0, 0};
  ppm.append(reinterpret_cast<const char*>(rgb), 3);
  write_bytes("io_color.ppm", ppm);
  const ScalarMap red = read_image("io_color.ppm");
  CHECK(red.at(0, 0) == doctest::Approx(0.299).epsilon(1e-12));
  std::remove("io_color.ppm");

  write_bytes("io_deep.pgm", "P5\n1 1\n65535\n\0\0");
  CHECK_THROWS_AS(read_image("io_deep.pgm"), FormatError);
  std::remove("io_deep.pgm");
}

TEST_CASE("heatmaps: linear mapping, degenerate range, and non-finite pixels") {
  ScalarMap m(1, 4, MapRole::Generic);
  m.data = {0.0, 5.0, 10.0, std::numeric_limits<double>::quiet_NaN()};
  write_pgm_heatmap("io_heat.pgm", m, 0.0, 10.0);
  std::ifstream in("io_heat.pgm", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  REQUIRE(bytes.size() >= 4);
  const unsigned char* px = reinterpret_cast<const unsigned char*>(bytes.data() + bytes.size() - 4);
  CHECK(px[0] == 0);
  CHECK(int(px[1]) == 128);  // rounds from 127.5 away from zero
  CHECK(px[2] == 255);
  CHECK(px[3] == 0);  // NaN pixels render black

  ScalarMap flat(1, 3, MapRole::Generic, 7.0);
  write_pgm_heatmap("io_heat.pgm", flat, 7.0, 7.0);
  std::ifstream in2("io_heat.pgm", std::ios::binary);
  std::string bytes2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
  in2.close();
  const unsigned char* px2 =
      reinterpret_cast<const unsigned char*>(bytes2.data() + bytes2.size() - 3);
  for (int i = 0; i < 3; ++i) CHECK(int(px2[i]) == 128);

  CHECK_THROWS_AS(write_pgm_heatmap("io_heat.pgm", flat, 1.0, 0.0), ArgumentError);
  std::remove("io_heat.pgm");
}
