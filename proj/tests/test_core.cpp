#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "sudokusens/fft.hpp"
#include "sudokusens/kernels.hpp"
#include "sudokusens/parallel.hpp"
#include "sudokusens/rng.hpp"
#include "sudokusens/tensor.hpp"

using namespace sudoku;

TEST_CASE("rng uniform stays in [0,1) and is reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(u == b.uniform());
  }
}

TEST_CASE("rng normal has roughly standard moments") {
  Rng r(7);
  const int n = 200000;
  double s1 = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s1 += x;
    s2 += x * x;
  }
  double mean = s1 / n;
  double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("fork is independent of parent consumption") {
  Rng a(123);
  Rng b(123);
  (void)a.uniform();
  (void)a.uniform();
  (void)a.normal();
  Rng fa = a.fork("child");
  Rng fb = b.fork("child");
  for (int i = 0; i < 64; ++i) CHECK(fa.u64() == fb.u64());
}

TEST_CASE("distinct fork tags give distinct streams") {
  Rng a(5);
  Rng x = a.fork("alpha");
  Rng y = a.fork("beta");
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (x.u64() == y.u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("seed_everything fans out named substreams") {
  auto s1 = seed_everything(99);
  auto s2 = seed_everything(99);
  CHECK(s1.data.u64() == s2.data.u64());
  CHECK(s1.training.u64() == s2.training.u64());
  auto s3 = seed_everything(100);
  CHECK(s1.init.root_seed() != s3.init.root_seed());
}

TEST_CASE("tensor shape and accessors") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  t.at2(1, 2) = 5.0f;
  CHECK(t.data[5] == 5.0f);
  auto r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
  CHECK_THROWS(t.reshaped({4, 2}));
  Tensor<float> f({2, 2}, 3.0f);
  CHECK(f.data[3] == 3.0f);
  auto d = f.cast<double>();
  CHECK(d.data[0] == 3.0);
}

TEST_CASE("fft matches direct dft on random power-of-two input") {
  Rng r(11);
  const int n = 256;
  std::vector<std::complex<double>> x(n);
  for (auto& v : x) v = {r.normal(), r.normal()};
  auto want = fft::dft_direct(x);
  auto got = x;
  fft::fft_pow2(got);
  for (int i = 0; i < n; ++i) {
    CHECK(std::abs(got[i] - want[i]) < 1e-9 * n);
  }
}

TEST_CASE("one-sided dft of a pure sine puts energy in its bin") {
  const int n = 128;
  const int bin = 9;
  std::vector<double> x(n);
  for (int t = 0; t < n; ++t)
    x[t] = std::sin(2.0 * M_PI * bin * t / n);
  auto spec = fft::real_dft_onesided(x.data(), n);
  REQUIRE(static_cast<int>(spec.size()) == n / 2 + 1);
  // unnormalized convention: |X_bin| = n/2 for a unit sine
  CHECK(std::abs(spec[bin]) == doctest::Approx(n / 2.0).epsilon(1e-9));
  for (int k = 0; k <= n / 2; ++k) {
    if (k == bin) continue;
    CHECK(std::abs(spec[k]) < 1e-8);
  }
}

TEST_CASE("zero_band_filter removes exactly the masked band") {
  const int n = 64;
  std::vector<double> x(n);
  for (int t = 0; t < n; ++t)
    x[t] = std::sin(2.0 * M_PI * 3 * t / n) + 0.5 * std::cos(2.0 * M_PI * 10 * t / n);
  auto y = fft::zero_band_filter(x, 8, 12);
  auto spec = fft::real_dft_onesided(y.data(), n);
  CHECK(std::abs(spec[3]) == doctest::Approx(n / 2.0).epsilon(1e-9));
  CHECK(std::abs(spec[10]) < 1e-8);
  auto same = fft::zero_band_filter(x, 5, 5);
  for (int t = 0; t < n; ++t) CHECK(same[t] == doctest::Approx(x[t]));
}

template <typename F>
void check_gemm_case(bool ta, bool tb, F& rng) {
  const int64_t M = 7, N = 5, K = 9;
  std::vector<double> A(static_cast<size_t>(M * K)), B(static_cast<size_t>(K * N));
  for (auto& v : A) v = rng.normal();
  for (auto& v : B) v = rng.normal();
  std::vector<double> c_ref(static_cast<size_t>(M * N), 0.5);
  std::vector<double> c_omp = c_ref;
  kern::ref::gemm(ta, tb, M, N, K, A.data(), B.data(), c_ref.data(), true);
  kern::omp::gemm(ta, tb, M, N, K, A.data(), B.data(), c_omp.data(), true);
  for (size_t i = 0; i < c_ref.size(); ++i)
    CHECK(c_omp[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));
}

TEST_CASE("gemm omp matches serial reference for all transpose combos") {
  Rng r(3);
  check_gemm_case(false, false, r);
  check_gemm_case(true, false, r);
  check_gemm_case(false, true, r);
  check_gemm_case(true, true, r);
}

TEST_CASE("gemm known 2x2 product") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  std::vector<double> A{1, 2, 3, 4}, B{5, 6, 7, 8}, C(4, 0.0);
  kern::omp::gemm(false, false, 2, 2, 2, A.data(), B.data(), C.data());
  CHECK(C[0] == 19);
  CHECK(C[1] == 22);
  CHECK(C[2] == 43);
  CHECK(C[3] == 50);
}

TEST_CASE("conv kernels: omp matches serial reference") {
  Rng r(17);
  kern::Conv2dDims d{2, 3, 9, 11, 4, 3, 3, 2, 1, 1, 1};
  const int64_t OH = d.oh(), OW = d.ow();
  std::vector<double> x(static_cast<size_t>(d.n * d.ci * d.h * d.w));
  std::vector<double> w(static_cast<size_t>(d.co * d.ci * d.kh * d.kw));
  std::vector<double> gy(static_cast<size_t>(d.n * d.co * OH * OW));
  for (auto& v : x) v = r.normal();
  for (auto& v : w) v = r.normal();
  for (auto& v : gy) v = r.normal();

  std::vector<double> y1(gy.size()), y2(gy.size());
  kern::ref::conv2d_fwd(d, x.data(), w.data(), y1.data());
  kern::omp::conv2d_fwd(d, x.data(), w.data(), y2.data());
  for (size_t i = 0; i < y1.size(); ++i)
    CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-12));

  std::vector<double> gx1(x.size()), gx2(x.size());
  kern::ref::conv2d_bwd_input(d, gy.data(), w.data(), gx1.data());
  kern::omp::conv2d_bwd_input(d, gy.data(), w.data(), gx2.data());
  for (size_t i = 0; i < gx1.size(); ++i)
    CHECK(gx2[i] == doctest::Approx(gx1[i]).epsilon(1e-12));

  std::vector<double> gw1(w.size()), gw2(w.size());
  kern::ref::conv2d_bwd_weight(d, x.data(), gy.data(), gw1.data());
  kern::omp::conv2d_bwd_weight(d, x.data(), gy.data(), gw2.data());
  for (size_t i = 0; i < gw1.size(); ++i)
    CHECK(gw2[i] == doctest::Approx(gw1[i]).epsilon(1e-12));
}

TEST_CASE("conv2d identity kernel reproduces input") {
  kern::Conv2dDims d{1, 1, 4, 4, 1, 1, 1, 1, 1, 0, 0};
  std::vector<double> x(16), w{1.0}, y(16);
  for (int i = 0; i < 16; ++i) x[static_cast<size_t>(i)] = i;
  kern::omp::conv2d_fwd(d, x.data(), w.data(), y.data());
  for (int i = 0; i < 16; ++i) CHECK(y[static_cast<size_t>(i)] == x[static_cast<size_t>(i)]);
}

TEST_CASE("conv_transpose inverts shapes of a strided conv") {
  // conv: 8x8 -> (stride 2, k 3, pad 1) -> 4x4; transpose maps 4x4 back to 8x8
  kern::ConvT2dDims t{1, 2, 4, 4, 3, 3, 3, 2, 2, 1, 1, 1, 1};
  CHECK(t.oh() == 8);
  CHECK(t.ow() == 8);
  Rng r(23);
  std::vector<double> x(static_cast<size_t>(t.n * t.ci * t.h * t.w));
  std::vector<double> w(static_cast<size_t>(t.ci * t.co * t.kh * t.kw));
  for (auto& v : x) v = r.normal();
  for (auto& v : w) v = r.normal();
  std::vector<double> y1(static_cast<size_t>(t.n * t.co * t.oh() * t.ow()));
  std::vector<double> y2(y1.size());
  kern::ref::convt2d_fwd(t, x.data(), w.data(), y1.data());
  kern::omp::convt2d_fwd(t, x.data(), w.data(), y2.data());
  for (size_t i = 0; i < y1.size(); ++i)
    CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-12));

  // gradient kernels agree as well
  std::vector<double> gy(y1.size());
  for (auto& v : gy) v = r.normal();
  std::vector<double> gx1(x.size()), gx2(x.size());
  kern::ref::convt2d_bwd_input(t, gy.data(), w.data(), gx1.data());
  kern::omp::convt2d_bwd_input(t, gy.data(), w.data(), gx2.data());
  for (size_t i = 0; i < gx1.size(); ++i)
    CHECK(gx2[i] == doctest::Approx(gx1[i]).epsilon(1e-12));
  std::vector<double> gw1(w.size()), gw2(w.size());
  kern::ref::convt2d_bwd_weight(t, x.data(), gy.data(), gw1.data());
  kern::omp::convt2d_bwd_weight(t, x.data(), gy.data(), gw2.data());
  for (size_t i = 0; i < gw1.size(); ++i)
    CHECK(gw2[i] == doctest::Approx(gw1[i]).epsilon(1e-12));
}

TEST_CASE("worker_count respects SUDOKU_AUG_THREADS contract") {
  // cap is read once per process; with the variable unset, the count is the
  // OpenMP default and must be at least 1
  CHECK(worker_count() >= 1);
}
