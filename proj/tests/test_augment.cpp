#include "test_util.hpp"

using namespace memaudit;
using memaudit::testing::smooth_image;

TEST(Noise, StdWithinChiBound) {
  const ImageSlice img(64, 64, 0.5f);
  const ImageSlice out = add_gaussian_noise(img, 0.01, 3);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double d = static_cast<double>(out.pixels[i]) - img.pixels[i];
    s += d;
    s2 += d * d;
  }
  const double n = static_cast<double>(img.pixels.size());
  const double sd = std::sqrt((s2 - s * s / n) / (n - 1));
  EXPECT_GE(sd, 0.008);
  EXPECT_LE(sd, 0.012);
}

TEST(Noise, DeterministicAndTinySigmaNearIdentity) {
  const ImageSlice img = smooth_image(32, 1);
  EXPECT_EQ(add_gaussian_noise(img, 0.02, 5), add_gaussian_noise(img, 0.02, 5));
  EXPECT_NE(add_gaussian_noise(img, 0.02, 5), add_gaussian_noise(img, 0.02, 6));
  const ImageSlice tiny = add_gaussian_noise(img, 1e-12, 5);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(tiny.pixels[i], img.pixels[i], 1e-7);
  for (float p : add_gaussian_noise(ImageSlice(8, 8, 1.0f), 0.5, 1).pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
}

TEST(Rotate, ZeroIsIdentity) {
  const ImageSlice img = smooth_image(32, 2);
  EXPECT_EQ(rotate(img, 0.0), img);
}

TEST(Rotate, RoundTripOnInterior) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ImageSlice img = smooth_image(128, seed);
    const ImageSlice back = rotate(rotate(img, 3.0), -3.0);
    double worst = 0.0;
    for (std::size_t y = 13; y < 115; ++y)
      for (std::size_t x = 13; x < 115; ++x) worst = std::max(worst, std::abs(static_cast<double>(back.at(y, x)) - img.at(y, x)));
    EXPECT_LE(worst, 0.05) << "seed " << seed;
  }
}

TEST(Rotate, ConstantImage) {
  const ImageSlice img(40, 40, 0.7f);
  const ImageSlice r = rotate(img, 5.0);
  for (std::size_t y = 8; y < 32; ++y)
    for (std::size_t x = 8; x < 32; ++x) EXPECT_NEAR(r.at(y, x), 0.7f, 1e-6);
  for (float p : r.pixels) EXPECT_LE(p, 0.7f + 1e-6f);
  EXPECT_LT(r.at(0, 0), 0.7f);
}

TEST(Rotate, QuarterPixelCheck) {
  // A point at (row 0, col c) relative to the center moves to the expected
  // place for a counter-clockwise turn as displayed.
  ImageSlice img(21, 21, 0.0f);
  img.at(10, 18) = 1.0f;  // 8 px right of center
  const ImageSlice r = rotate(img, 89.0);
  std::size_t by = 0, bx = 0;
  float best = -1.0f;
  for (std::size_t y = 0; y < 21; ++y)
    for (std::size_t x = 0; x < 21; ++x)
      if (r.at(y, x) > best) {
        best = r.at(y, x);
        by = y;
        bx = x;
      }
  EXPECT_EQ(bx, 10u);
  EXPECT_EQ(by, 2u);  // above center
  EXPECT_THROW(rotate(img, 90.0), ValidationError);
}

TEST(Flip, InvolutionsAndSmallCases) {
  const ImageSlice img = smooth_image(16, 4);
  EXPECT_EQ(flip_h(flip_h(img)), img);
  EXPECT_EQ(flip_v(flip_v(img)), img);
  const ImageSlice ab(1, 2, std::vector<float>{0.25f, 0.75f});
  EXPECT_EQ(flip_h(ab).pixels, (std::vector<float>{0.75f, 0.25f}));
  const ImageSlice sym(2, 3, std::vector<float>{0.1f, 0.2f, 0.1f, 0.3f, 0.4f, 0.3f});
  EXPECT_EQ(flip_h(sym), sym);
  const ImageSlice col(2, 1, std::vector<float>{0.1f, 0.9f});
  EXPECT_EQ(flip_v(col).pixels, (std::vector<float>{0.9f, 0.1f}));
}

TEST(Intensity, Examples) {
  const ImageSlice img = smooth_image(16, 5);
  EXPECT_EQ(scale_intensity(img, 1.0, 1.0, 3), img);
  EXPECT_FLOAT_EQ(scale_intensity_by(ImageSlice(1, 1, 1.0f), 0.9).pixels[0], 0.9f);
  EXPECT_EQ(scale_intensity(img, 0.9, 1.1, 3), scale_intensity(img, 0.9, 1.1, 3));
  for (float p : scale_intensity_by(img, 1.1).pixels) EXPECT_LE(p, 1.0f);
}

TEST(Spec, TagsRoundTrip) {
  for (const auto& a : standard_augmentations()) EXPECT_EQ(parse_augmentation(to_tag(a)), a);
  EXPECT_EQ(standard_augmentations().size(), 8u);
  EXPECT_EQ(to_tag(parse_augmentation("rotfixed_5")), "rotfixed_5");
  EXPECT_EQ(to_tag(parse_augmentation("intensity_0.8_1.2")), "intensity_0.8_1.2");
  EXPECT_THROW(parse_augmentation("blur"), ValidationError);
  EXPECT_THROW(parse_augmentation("noise_"), ValidationError);
  EXPECT_THROW(parse_augmentation("noise_-1"), ValidationError);
  EXPECT_THROW(parse_augmentation("rot_95"), ValidationError);
}

TEST(Spec, RotationSignIsSeededChoice) {
  const ImageSlice img = smooth_image(32, 6);
  const ImageSlice plus = rotate(img, 5.0), minus = rotate(img, -5.0);
  int n_plus = 0, n_minus = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const ImageSlice r = apply_augmentation(img, rotation_spec(5.0), seed);
    if (r == plus) ++n_plus;
    else if (r == minus) ++n_minus;
    else ADD_FAILURE() << "neither sign";
  }
  EXPECT_GT(n_plus, 5);
  EXPECT_GT(n_minus, 5);
  auto fixed = rotation_spec(5.0);
  fixed.fixed_sign = true;
  EXPECT_EQ(apply_augmentation(img, fixed, 1), plus);
}
