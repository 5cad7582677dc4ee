#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsm/common.hpp"
#include "dsm/nn.hpp"

using namespace dsm;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Straightforward zero-padded convolution written independently of the
// library's loop structure.
std::vector<double> conv2d_ref(const std::vector<double>& x, int cin, int h, int w,
                               const std::vector<double>& wt, const std::vector<double>& b,
                               int cout, int k) {
  const int p = k / 2;
  std::vector<double> y(std::size_t(cout) * h * w, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < h; ++oy)
      for (int ox = 0; ox < w; ++ox) {
        double acc = b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy + ky - p, ix = ox + kx - p;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += wt[((std::size_t(co) * cin + ci) * k + ky) * k + kx] *
                     x[(std::size_t(ci) * h + iy) * w + ix];
            }
        y[(std::size_t(co) * h + oy) * w + ox] = acc;
      }
  return y;
}

std::vector<double> conv3d_ref(const std::vector<double>& x, int cin, int d, int h, int w,
                               const std::vector<double>& wt, const std::vector<double>& b,
                               int cout, int k) {
  const int p = k / 2;
  std::vector<double> y(std::size_t(cout) * d * h * w, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int od = 0; od < d; ++od)
      for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox) {
          double acc = b[co];
          for (int ci = 0; ci < cin; ++ci)
            for (int kd = 0; kd < k; ++kd)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int id = od + kd - p, iy = oy + ky - p, ix = ox + kx - p;
                  if (id < 0 || id >= d || iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  acc += wt[(((std::size_t(co) * cin + ci) * k + kd) * k + ky) * k + kx] *
                         x[((std::size_t(ci) * d + id) * h + iy) * w + ix];
                }
          y[((std::size_t(co) * d + od) * h + oy) * w + ox] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches a brute-force reference") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int cin = 1 + trial % 3, cout = 1 + (trial / 2) % 3, h = 4 + trial % 3, w = 5, k = 3;
    const auto x = rand_vec(rng, std::size_t(cin) * h * w);
    const auto wt = rand_vec(rng, std::size_t(cout) * cin * k * k);
    const auto b = rand_vec(rng, cout);
    std::vector<double> y(std::size_t(cout) * h * w);
    conv2d(x.data(), cin, h, w, wt.data(), b.data(), cout, k, y.data());
    const auto ref = conv2d_ref(x, cin, h, w, wt, b, cout, k);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d with a centered identity kernel reproduces the input plus bias") {
  Rng rng(22);
  const int h = 5, w = 6, k = 3;
  const auto x = rand_vec(rng, std::size_t(h) * w);
  std::vector<double> wt(k * k, 0.0);
  wt[4] = 1.0;  // center tap
  const std::vector<double> b = {0.25};
  std::vector<double> y(x.size());
  conv2d(x.data(), 1, h, w, wt.data(), b.data(), 1, k, y.data());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i] + 0.25);
}

TEST_CASE("conv3d matches a brute-force reference") {
  Rng rng(23);
  for (int trial = 0; trial < 6; ++trial) {
    const int cin = 1 + trial % 2, cout = 1 + trial % 3, d = 3, h = 4, w = 5, k = 3;
    const auto x = rand_vec(rng, std::size_t(cin) * d * h * w);
    const auto wt = rand_vec(rng, std::size_t(cout) * cin * k * k * k);
    const auto b = rand_vec(rng, cout);
    std::vector<double> y(std::size_t(cout) * d * h * w);
    conv3d(x.data(), cin, d, h, w, wt.data(), b.data(), cout, k, y.data());
    const auto ref = conv3d_ref(x, cin, d, h, w, wt, b, cout, k);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("relu clamps negatives and passes positives") {
  const std::vector<double> x = {-2.0, -0.0, 0.5, 3.0};
  std::vector<double> y(x.size());
  relu(x.data(), y.data(), x.size());
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);
  CHECK(y[3] == 3.0);

  const std::vector<double> gy = {1.0, 1.0, 1.0, 1.0};
  std::vector<double> gx(x.size(), 0.0);
  relu_backward(x.data(), gy.data(), gx.data(), x.size());
  CHECK(gx[0] == 0.0);
  CHECK(gx[1] == 0.0);  // gradient at the kink defined as 0
  CHECK(gx[2] == 1.0);
  CHECK(gx[3] == 1.0);
}

TEST_CASE("avgpool2 averages 2x2 cells with inclusive edge counts") {
  // 3x3 single channel: output 2x2; bottom/right cells see fewer taps.
  const std::vector<double> x = {1, 2, 3,
                                 4, 5, 6,
                                 7, 8, 9};
  std::vector<double> y(4);
  avgpool2(x.data(), 1, 3, 3, y.data());
  CHECK(y[0] == doctest::Approx((1 + 2 + 4 + 5) / 4.0));
  CHECK(y[1] == doctest::Approx((3 + 6) / 2.0));
  CHECK(y[2] == doctest::Approx((7 + 8) / 2.0));
  CHECK(y[3] == doctest::Approx(9.0));
}

TEST_CASE("avgpool2 backward spreads gradient by the forward weights") {
  std::vector<double> gy = {1.0, 0.0, 0.0, 0.0};
  std::vector<double> gx(9, 0.0);
  avgpool2_backward(1, 3, 3, gy.data(), gx.data());
  CHECK(gx[0] == doctest::Approx(0.25));
  CHECK(gx[1] == doctest::Approx(0.25));
  CHECK(gx[3] == doctest::Approx(0.25));
  CHECK(gx[4] == doctest::Approx(0.25));
  CHECK(gx[2] == 0.0);
}

TEST_CASE("bilinear_resize preserves constants and linear ramps") {
  const int h = 3, w = 4, ho = 6, wo = 8;
  std::vector<double> x(std::size_t(h) * w, 2.5);
  std::vector<double> y(std::size_t(ho) * wo);
  bilinear_resize(x.data(), 1, h, w, ho, wo, y.data());
  for (double v : y) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) x[std::size_t(yy) * w + xx] = 0.3 + 0.9 * xx;
  bilinear_resize(x.data(), 1, h, w, ho, wo, y.data());
  for (int yy = 0; yy < ho; ++yy)
    for (int xx = 0; xx < wo; ++xx) {
      const double xs = (xx + 0.5) * double(w) / wo - 0.5;
      if (xs < 0.0 || xs > w - 1) continue;
      CHECK(y[std::size_t(yy) * wo + xx] == doctest::Approx(0.3 + 0.9 * xs).epsilon(1e-12));
    }
}
