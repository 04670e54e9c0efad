#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "reconkit/errors.hpp"
#include "reconkit/io.hpp"
#include "reconkit/metrics.hpp"
#include "support.hpp"

using namespace reconkit;
using testutil::random_tensor;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("reconkit_test_" + name);
}

// Direct per-window SSIM, no separable filtering.
double brute_ssim(const Tensor& a, const Tensor& b, double range) {
  const int win = 11;
  const double sd = 1.5;
  std::vector<double> w(win * win);
  double tot = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      w[i * win + j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sd * sd));
      tot += w[i * win + j];
    }
  for (double& v : w) v /= tot;
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  const auto& s = a.shape();
  double acc = 0.0;
  for (std::size_t ch = 0; ch < s[0]; ++ch) {
    double chan = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + win <= s[1]; ++r)
      for (std::size_t c = 0; c + win <= s[2]; ++c) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double x = a.at(ch, r + i, c + j), y = b.at(ch, r + i, c + j), k = w[i * win + j];
            mx += k * x;
            my += k * y;
            xx += k * x * x;
            yy += k * y * y;
            xy += k * x * y;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        chan += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    acc += chan / static_cast<double>(count);
  }
  return acc / static_cast<double>(s[0]);
}

}  // namespace

TEST_CASE("tnsr round trip") {
  std::vector<TnsrEntry> entries;
  Rng rng(1);
  const std::vector<Shape> shapes = {{7}, {3, 5}, {2, 3, 4}, {2, 1, 3, 2}};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    entries.push_back({"f64_" + std::to_string(i), random_tensor(shapes[i], rng), DType::f64});
    // f32 entries hold values representable in single precision.
    Tensor t = random_tensor(shapes[i], rng);
    for (double& v : t.storage()) v = static_cast<double>(static_cast<float>(v));
    entries.push_back({"f32_" + std::to_string(i), t, DType::f32});
  }
  entries.push_back({"ünï", Tensor({1}, -0.0), DType::f64});
  const std::string bytes = encode_tnsr(entries);
  CHECK(bytes.substr(0, 4) == "TNSR");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  const auto back = decode_tnsr(bytes);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(back[i].name == entries[i].name);
    CHECK(back[i].dtype == entries[i].dtype);
    CHECK(back[i].value.shape() == entries[i].value.shape());
    CHECK(std::memcmp(back[i].value.raw(), entries[i].value.raw(), entries[i].value.size() * sizeof(double)) == 0);
  }
  CHECK(encode_tnsr(back) == bytes);
  const auto path = temp_path("rt.tnsr");
  write_tnsr(path, entries);
  CHECK(read_file(path) == bytes);
  CHECK(find_entry(read_tnsr(path), "f64_2").value == entries[4].value);
  CHECK_THROWS_AS(find_entry(back, "missing"), DataError);
  std::filesystem::remove(path);

  // Header layout of a single f32 scalar.
  const std::string one = encode_tnsr({{"a", Tensor({1}, 1.0), DType::f32}});
  const std::string expect = std::string("TNSR\x01\x01\x00\x00\x00\x01\x00\x00\x00" "a\x00\x01\x01\x00\x00\x00", 20) +
                             std::string("\x00\x00\x80\x3f", 4);
  CHECK(one == expect);
}

TEST_CASE("tnsr rejects malformed input") {
  const std::string good = encode_tnsr({{"x", Tensor({2, 2}, 0.25), DType::f64}});
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_tnsr(bad), DataError);
  bad = good;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_tnsr(bad), DataError);
  bad = good;
  bad[14] = 7;  // dtype byte after "x"
  CHECK_THROWS_AS(decode_tnsr(bad), DataError);
  CHECK_THROWS_AS(decode_tnsr(good.substr(0, good.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_tnsr(good + "z"), DataError);
  CHECK_THROWS_AS(decode_tnsr(""), DataError);
}

TEST_CASE("pnm export and import") {
  const auto path = temp_path("img.pgm");
  export_pnm(Tensor({1, 3, 4}, 0.0), path);
  const std::string bytes = read_file(path);
  const std::string header = "P5\n4 3\n255\n";
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(bytes.size() == header.size() + 12);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == '\0');

  Rng rng(2);
  for (std::size_t c : {1u, 3u}) {
    Tensor x({c, 5, 6});
    for (double& v : x.storage()) v = rng.uniform();
    const auto p = temp_path(c == 1 ? "rt.pgm" : "rt.ppm");
    export_pnm(x, p);
    const Tensor back = import_pnm(p);
    CHECK(back.shape() == x.shape());
    CHECK(max_abs(back - x) <= 1.0 / 255.0);
    std::filesystem::remove(p);
  }
  Tensor clipped({1, 1, 2});
  clipped[0] = -1.0;
  clipped[1] = 4.0;
  export_pnm(clipped, path);
  const Tensor cb = import_pnm(path);
  CHECK(cb[0] == 0.0);
  CHECK(cb[1] == 1.0);
  CHECK_THROWS_AS(export_pnm(Tensor({2, 4, 4}), path), ShapeError);
  std::filesystem::remove(path);
}

TEST_CASE("psnr") {
  const Tensor x = random_tensor({1, 8, 8}, 3);
  CHECK(psnr(x, x) == kPsnrCap);
  Tensor off = x;
  for (double& v : off.storage()) v += 0.1;
  CHECK(psnr(off, x) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(x, off) == psnr(off, x));
  Tensor half(x.shape());
  for (std::size_t i = 0; i < half.size(); ++i) half[i] = x[i] + (i % 2 == 0 ? 0.1 : -0.1);
  CHECK(psnr(half, x) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(off, x, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(x, Tensor({1, 8, 7})), ShapeError);
}

TEST_CASE("ssim") {
  Rng rng(4);
  Tensor x({3, 24, 20});
  for (double& v : x.storage()) v = rng.uniform();
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  Tensor inv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) inv[i] = 1.0 - x[i];
  CHECK(ssim(inv, x) < 1.0);
  Tensor noisy = x;
  for (double& v : noisy.storage()) v += 0.2 * rng.normal();
  const double fast = ssim(noisy, x);
  CHECK(std::abs(fast - brute_ssim(noisy, x, 1.0)) < 1e-6);
  CHECK(std::abs(fast - ssim(x, noisy)) < 1e-12);
  CHECK(std::abs(ssim(noisy, x, 2.0) - brute_ssim(noisy, x, 2.0)) < 1e-6);
  CHECK_THROWS_AS(ssim(Tensor({1, 10, 30}), Tensor({1, 10, 30})), ShapeError);
}
