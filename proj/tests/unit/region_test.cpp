// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "hieredit/numerics/rng.hpp"
#include "hieredit/region/integrate.hpp"
#include "hieredit/region/io.hpp"
#include "hieredit/region/mask.hpp"
#include "hieredit/region/patchify.hpp"
#include "hieredit/region/resample.hpp"

using namespace hieredit;

namespace {

PixelImage random_image(Rng& rng, std::size_t w, std::size_t h) {
  PixelImage img(w, h);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

PixelMask block_mask(std::size_t w, std::size_t h, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  PixelMask m(w, h);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.set(x, y);
  return m;
}

}  // namespace

TEST(Downsample, Examples) {
  EXPECT_EQ(downsample(PixelImage(8, 4, 0.3f), 2), PixelImage(4, 2, 0.3f));
  Rng rng(1);
  const PixelImage img = random_image(rng, 6, 6);
  EXPECT_EQ(downsample(img, 1), img);
  PixelImage two(2, 2, 0.0f, 1);
  two.data = {0, 0, 1, 1};
  const PixelImage one = downsample(two, 2);
  EXPECT_EQ(one.width, 1u);
  EXPECT_FLOAT_EQ(one.data[0], 0.5f);
  EXPECT_THROW(downsample(img, 4), ResampleError);
}

TEST(Upsample, BilinearOfConstantIsConstant) {
  const PixelImage up = bilinear_upsample(PixelImage(3, 2, 0.25f), 4);
  EXPECT_EQ(up.width, 12u);
  for (float v : up.data) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_THROW(bilinear_upsample(PixelImage(3, 2), 0), ResampleError);
}

TEST(RefineMask, IdenticalImagesGiveEmptyMask) {
  Rng rng(2);
  const PixelImage img = random_image(rng, 16, 16);
  const auto m = refine_mask(img, img, {}, 4);
  EXPECT_TRUE(m.mask.empty());
  EXPECT_EQ(m.mask.width, 64u);
  EXPECT_EQ(m.provenance, MaskProvenance::Diff);
}

TEST(RefineMask, KnownBlockGivesIouOne) {
  Rng rng(3);
  const PixelImage lr = random_image(rng, 32, 32);
  PixelImage edited = lr;
  for (std::size_t y = 5; y < 15; ++y)
    for (std::size_t x = 11; x < 21; ++x) {
      const float v = lr.at(x, y, 1);
      edited.at(x, y, 1) = v > 0.5f ? v - 0.5f : v + 0.5f;
    }
  MaskParams p;
  p.tau = 0.1;
  p.dilation = 0;
  const auto m = refine_mask(lr, edited, p, 2);
  EXPECT_DOUBLE_EQ(mask_iou(m.mask, block_mask(64, 64, 22, 10, 42, 30)), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(m.lowres, block_mask(32, 32, 11, 5, 21, 15)), 1.0);
}

TEST(RefineMask, ZeroThresholdPicksUpFloatDust) {
  Rng rng(4);
  const PixelImage lr = random_image(rng, 32, 32);
  PixelImage dusty = lr;
  for (float& v : dusty.data) v = std::nextafter(v, 2.0f);
  MaskParams p;
  p.tau = 0.0;
  EXPECT_GE(refine_mask(lr, dusty, p).mask.fraction(), 0.99);
  p.tau = 0.05;
  EXPECT_TRUE(refine_mask(lr, dusty, p).mask.empty());
}

TEST(RefineMask, UnionWithUserMask) {
  const PixelImage a(8, 8, 0.2f);
  PixelImage b = a;
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) b.at(x, y, c) = 0.9f;
  const PixelMask user = block_mask(16, 16, 10, 10, 12, 12);
  const auto m = refine_mask(a, b, {}, 2, &user);
  EXPECT_EQ(m.provenance, MaskProvenance::Union);
  EXPECT_EQ(m.mask.count(), 16u + 4u);
}

TEST(RefineMask, MonotoneInThresholdAndDilation) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const PixelImage a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
    PixelMask prev;
    for (double tau : {0.0, 0.1, 0.3, 0.6, 0.9}) {
      MaskParams p;
      p.tau = tau;
      const auto m = refine_mask(a, b, p).mask;
      if (!prev.bits.empty()) {
        for (std::size_t i = 0; i < m.bits.size(); ++i) ASSERT_LE(m.bits[i], prev.bits[i]);
      }
      prev = m;
    }
    PixelMask smaller;
    for (std::size_t d : {0, 1, 2, 3}) {
      MaskParams p;
      p.tau = 0.5;
      p.dilation = d;
      const auto m = refine_mask(a, b, p).mask;
      if (!smaller.bits.empty()) {
        for (std::size_t i = 0; i < m.bits.size(); ++i) ASSERT_GE(m.bits[i], smaller.bits[i]);
      }
      smaller = m;
    }
  }
}

TEST(RefineMask, SpeckFilterDropsIsolatedPixels) {
  PixelMask m(8, 8);
  m.set(0, 0);
  m.set(5, 5);
  m.set(5, 6);
  m.set(6, 5);
  m.set(6, 6);
  const PixelMask f = remove_small_components(m, 4);
  EXPECT_FALSE(f(0, 0));
  EXPECT_EQ(f.count(), 4u);
  EXPECT_EQ(remove_small_components(m, 1), m);
}

TEST(RefineBbox, Examples) {
  const PixelMask inside = block_mask(64, 64, 18, 20, 26, 30);
  const auto snapped = refine_bbox(Bbox{17, 17, 30, 31}, inside, 16);
  ASSERT_TRUE(snapped);
  EXPECT_EQ(*snapped, (Bbox{16, 16, 32, 32}));
  // A cast shadow 3 px below the box grows it.
  const PixelMask shadow = block_mask(64, 64, 18, 20, 26, 35);
  const auto grown = refine_bbox(Bbox{16, 16, 32, 32}, shadow, 16);
  ASSERT_TRUE(grown);
  EXPECT_EQ(*grown, (Bbox{16, 16, 32, 48}));
  EXPECT_FALSE(refine_bbox(std::nullopt, PixelMask(64, 64), 16));
  EXPECT_FALSE(refine_bbox(Bbox{}, PixelMask(64, 64), 16));
  EXPECT_THROW(refine_bbox(Bbox{0, 0, 80, 10}, PixelMask(64, 64), 16), ContractError);
}

TEST(MaskToWindows, Examples) {
  // 8 px per token, 2-token windows: window (2, 3) covers pixels y 32..47, x 48..63.
  PixelMask one(64, 64);
  one.set(50, 40);
  const auto act = mask_to_windows(one, 8, 2);
  EXPECT_EQ(act.count(), 1u);
  EXPECT_TRUE(act.at(2, 3));
  const auto full = mask_to_windows(PixelMask(64, 64, true), 8, 2);
  EXPECT_EQ(full.count(), 16u);
}

TEST(MaskToWindows, CoverageOverRandomMasks) {
  Rng rng(6);
  const std::size_t patch = 4, window = 4, extent = 96;
  for (int trial = 0; trial < 100; ++trial) {
    PixelMask m(extent, extent);
    const auto blobs = 1 + rng.below(4);
    for (std::uint64_t b = 0; b < blobs; ++b) {
      const auto x0 = rng.below(extent), y0 = rng.below(extent);
      const auto w = 1 + rng.below(20), h = 1 + rng.below(20);
      for (std::size_t y = y0; y < std::min<std::size_t>(extent, y0 + h); ++y)
        for (std::size_t x = x0; x < std::min<std::size_t>(extent, x0 + w); ++x) m.set(x, y);
    }
    const auto act = mask_to_windows(m, patch, window);
    const std::size_t span = patch * window;
    std::size_t covered = 0;
    for (std::size_t y = 0; y < extent; ++y)
      for (std::size_t x = 0; x < extent; ++x)
        if (m(x, y) && act.at(y / span, x / span)) ++covered;
    ASSERT_EQ(covered, m.count());
    // Active iff some masked token is inside.
    const PixelMask tm = token_mask(m, patch);
    for (std::size_t wr = 0; wr < act.window_rows; ++wr)
      for (std::size_t wc = 0; wc < act.window_cols; ++wc) {
        bool any = false;
        for (std::size_t y = wr * window; y < (wr + 1) * window; ++y)
          for (std::size_t x = wc * window; x < (wc + 1) * window; ++x) any = any || tm(x, y);
        ASSERT_EQ(act.at(wr, wc), any);
      }
  }
}

TEST(Patchify, RoundTripIsBitwise) {
  Rng rng(7);
  const PixelImage img = random_image(rng, 48, 32);
  for (std::size_t p : {1, 2, 4, 16}) {
    const LatentGrid g = patchify(img, p);
    EXPECT_EQ(g.count(), (48 / p) * (32 / p));
    EXPECT_EQ(g.token_dim(), p * p * 3);
    EXPECT_EQ(unpatchify(g), img);
  }
  const LatentGrid id = patchify(img, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(id.tokens[i], img.data[i]);
  EXPECT_THROW(patchify(img, 5), ResampleError);
}

TEST(Patchify, ReferenceGeometry) {
  const LatentGrid g = patchify(PixelImage(1024, 1024), 16);
  EXPECT_EQ(g.rows, 64u);
  EXPECT_EQ(g.cols, 64u);
}

TEST(Integrate, RoleCounts) {
  Rng rng(8);
  const LatentGrid src = patchify(random_image(rng, 16, 16), 2);
  const Tensor noisy = rng_normal(rng, src.tokens.shape());
  PixelMask tm(8, 8);
  for (std::size_t i = 0; i < 16; ++i) tm.bits[i * 4] = 1;
  const auto it = integrate_tokens(src, noisy, tm);
  EXPECT_EQ(it.size(), 64u);
  EXPECT_EQ(std::count(it.roles.begin(), it.roles.end(), TokenRole::Noisy), 16);
  EXPECT_EQ(std::count(it.roles.begin(), it.roles.end(), TokenRole::Condition), 48);
  for (std::size_t i = 0; i < 64; ++i) {
    const Tensor& from = tm.bits[i] ? noisy : src.tokens;
    for (std::size_t k = 0; k < src.token_dim(); ++k) ASSERT_EQ(it.tokens.at(i, k), from.at(i, k));
  }
  const auto none = integrate_tokens(src, noisy, PixelMask(8, 8));
  EXPECT_TRUE(none.noisy.empty());
  const auto all = integrate_tokens(src, noisy, PixelMask(8, 8, true));
  EXPECT_EQ(all.noisy.size(), 64u);
  EXPECT_THROW(integrate_tokens(src, noisy, PixelMask(4, 8)), DimensionError);
}

TEST(Composite, PreservesOutOfMaskPixels) {
  Rng rng(9);
  const PixelImage src = random_image(rng, 20, 12), den = random_image(rng, 20, 12);
  EXPECT_EQ(composite(src, den, PixelMask(20, 12)), src);
  EXPECT_EQ(composite(src, den, PixelMask(20, 12, true)), den);
  const PixelMask m = block_mask(20, 12, 3, 2, 15, 10);
  for (std::size_t feather : {0, 2}) {
    const PixelImage out = composite(src, den, m, feather);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 20; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          if (!m(x, y)) {
            ASSERT_EQ(out.at(x, y, c), src.at(x, y, c));
          } else if (feather == 0) {
            ASSERT_EQ(out.at(x, y, c), den.at(x, y, c));
          } else {
            const float lo = std::min(src.at(x, y, c), den.at(x, y, c)), hi = std::max(src.at(x, y, c), den.at(x, y, c));
            ASSERT_GE(out.at(x, y, c), lo - 1e-6f);
            ASSERT_LE(out.at(x, y, c), hi + 1e-6f);
          }
        }
    if (feather > 0) {
      EXPECT_EQ(out.at(9, 6, 0), den.at(9, 6, 0));  // deep inside
    }
  }
}

TEST(ImageIo, PngAndPpmRoundTrip) {
  Rng rng(10);
  PixelImage img(7, 5);
  for (float& v : img.data) v = static_cast<float>(rng.below(256)) / 255.0f;
  const auto dir = std::filesystem::temp_directory_path() / "hieredit_io_test";
  std::filesystem::create_directories(dir);
  save_png(img, dir / "a.png");
  save_ppm(img, dir / "a.ppm");
  for (const char* name : {"a.png", "a.ppm"}) {
    const PixelImage back = load_image(dir / name);
    ASSERT_TRUE(back.same_extent(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) ASSERT_FLOAT_EQ(back.data[i], img.data[i]) << name;
  }
  PixelMask m(7, 5);
  m.set(3, 2);
  m.set(6, 4);
  save_mask(m, dir / "m.png");
  EXPECT_EQ(load_mask(dir / "m.png"), m);
  EXPECT_THROW(load_image(dir / "missing.png"), IoError);
  std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e'};
  EXPECT_THROW(decode_image(junk), IoError);
  std::filesystem::remove_all(dir);
}
