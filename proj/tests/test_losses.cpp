#include <doctest.h>

#include <cmath>
#include <random>

#include "osp3d/losses.hpp"
#include "osp3d/ssim.hpp"
#include "test_util.hpp"

using namespace osp3d;
using namespace osp3d::testing;

namespace {

// Direct windowed SSIM: for every pixel, explicit weighted sums over the
// in-bounds part of the 11x11 Gaussian window, then the SSIM formula.
double reference_ssim(const ImageD& a, const ImageD& b) {
  const int r = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        double z = 0, ma = 0, mb = 0, eaa = 0, ebb = 0, eab = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= a.width || yy >= a.height) continue;
            const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            z += w;
            ma += w * va;
            mb += w * vb;
            eaa += w * va * va;
            ebb += w * vb * vb;
            eab += w * va * vb;
          }
        ma /= z;
        mb /= z;
        const double va = eaa / z - ma * ma, vb = ebb / z - mb * mb, cov = eab / z - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
  return total / (a.pixel_count() * a.channels);
}

IdMap three_masks(int w, int h) {
  IdMap m(w, h, 1, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x < 3 && y < 5) m.at(x, y) = 4;
      else if (x >= 5) m.at(x, y) = 9;
      else if (y >= 6) m.at(x, y) = 2;
    }
  return m;
}

}  // namespace

TEST_CASE("rgb_loss examples") {
  std::mt19937_64 rng(1);
  const ImageD img = random_image(rng, 12, 10, 3, 0.0, 1.0);
  CHECK(rgb_loss(img, img, 0.2).loss == doctest::Approx(0.0).epsilon(1e-12));

  ImageD shifted = img;
  for (double& v : shifted.data) v += 0.1;
  CHECK(rgb_loss(shifted, img, 0.0).loss == doctest::Approx(0.1));

  const ImageD a(16, 16, 3, 0.4), b(16, 16, 3, 0.6);
  const double c1 = 1e-4;
  const double closed_form = 1.0 - (2 * 0.4 * 0.6 + c1) / (0.16 + 0.36 + c1);
  const double got = rgb_loss(a, b, 1.0).loss;
  CHECK(got == doctest::Approx(closed_form).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.0770).epsilon(0.01));
}

TEST_CASE("ssim agrees with the direct windowed reference") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 3; ++t) {
    const ImageD a = random_image(rng, 19, 13, 3, 0.0, 1.0);
    const ImageD b = random_image(rng, 19, 13, 3, 0.0, 1.0);
    CHECK(ssim(a, b) == doctest::Approx(reference_ssim(a, b)).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("rgb_loss gradient matches finite differences") {
  std::mt19937_64 rng(3);
  ImageD a = random_image(rng, 14, 12, 3, 0.0, 1.0);
  const ImageD b = random_image(rng, 14, 12, 3, 0.0, 1.0);
  const RgbLoss l = rgb_loss(a, b, 0.2);
  GradCompare cmp;
  const double h = 1e-6;
  for (std::size_t i = 0; i < a.data.size(); i += 7) {
    const double saved = a.data[i];
    a.data[i] = saved + h;
    const double fp = rgb_loss(a, b, 0.2).loss;
    a.data[i] = saved - h;
    const double fm = rgb_loss(a, b, 0.2).loss;
    a.data[i] = saved;
    cmp.add(l.grad.data[i], (fp - fm) / (2 * h));
  }
  CHECK(cmp.ok(1e-5, 1e-9));
}

TEST_CASE("contrastive loss examples") {
  SUBCASE("converged features") {
    ImageD f(4, 1, 1);
    f.data = {0.0, 0.0, 2.0, 2.0};
    IdMap m(4, 1, 1);
    m.data = {1, 1, 2, 2};
    const ContrastiveLoss l = instance_contrastive_loss(f, m, 1.0, 1.0, 1.0);
    CHECK(l.pos == 0.0);
    CHECK(l.neg == 0.0);
  }
  SUBCASE("two-pixel instance") {
    ImageD f(2, 1, 1);
    f.data = {0.0, 1.0};
    IdMap m(2, 1, 1, 3);
    const ContrastiveLoss l = instance_contrastive_loss(f, m, 1.0, 1.0, 1.0);
    REQUIRE(l.prototypes.size() == 1);
    CHECK(l.prototypes[0] == doctest::Approx(0.5));
    CHECK(l.pos == doctest::Approx(0.25));
    CHECK(l.neg == 0.0);
  }
  SUBCASE("margin between two prototypes") {
    ImageD f(2, 1, 1);
    f.data = {0.0, 0.5};
    IdMap m(2, 1, 1);
    m.data = {1, 2};
    const ContrastiveLoss l = instance_contrastive_loss(f, m, 1.0, 1.0, 1.0);
    CHECK(l.neg == doctest::Approx(0.75));
  }
  SUBCASE("no labeled pixels") {
    ImageD f(3, 3, 2, 0.7);
    const ContrastiveLoss l = instance_contrastive_loss(f, IdMap(3, 3, 1, 0), 1.0, 1.0, 1.0);
    CHECK(l.pos == 0.0);
    CHECK(l.neg == 0.0);
    for (double g : l.grad.data) CHECK(g == 0.0);
  }
}

TEST_CASE("contrastive gradient matches finite differences on 8x8x4 maps") {
  std::mt19937_64 rng(4);
  const IdMap m = three_masks(8, 8);
  for (int t = 0; t < 5; ++t) {
    ImageD f = random_image(rng, 8, 8, 4, -0.4, 0.4);
    const double wp = 0.7, wn = 1.3, gamma = 1.0;
    const ContrastiveLoss l = instance_contrastive_loss(f, m, gamma, wp, wn);
    REQUIRE(l.neg > 0.0);
    GradCompare cmp;
    const double h = 1e-6;
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      const double saved = f.data[i];
      f.data[i] = saved + h;
      const auto p = instance_contrastive_loss(f, m, gamma, wp, wn);
      f.data[i] = saved - h;
      const auto q = instance_contrastive_loss(f, m, gamma, wp, wn);
      f.data[i] = saved;
      cmp.add(l.grad.data[i], ((wp * p.pos + wn * p.neg) - (wp * q.pos + wn * q.neg)) / (2 * h));
    }
    INFO("rel " << cmp.max_rel << " abs " << cmp.max_abs);
    CHECK(cmp.ok(1e-4, 1e-9));
  }
}

TEST_CASE("contrastive loss invariances") {
  std::mt19937_64 rng(5);
  const IdMap m = three_masks(8, 8);
  const ImageD f = random_image(rng, 8, 8, 4, -0.5, 0.5);
  const ContrastiveLoss base = instance_contrastive_loss(f, m, 1.0, 1.0, 1.0);

  ImageD moved = f;
  for (std::size_t i = 0; i < moved.data.size(); ++i) moved.data[i] += 0.3 * double(i % 4) - 2.0;
  const ContrastiveLoss t = instance_contrastive_loss(moved, m, 1.0, 1.0, 1.0);
  CHECK(t.pos == doctest::Approx(base.pos).epsilon(1e-12));
  CHECK(t.neg == doctest::Approx(base.neg).epsilon(1e-12));

  IdMap relabeled = m;
  for (auto& id : relabeled.data)
    if (id == 4) id = 100;
    else if (id == 9) id = 2;
    else if (id == 2) id = 4;
  const ContrastiveLoss p = instance_contrastive_loss(f, relabeled, 1.0, 1.0, 1.0);
  CHECK(p.neg == doctest::Approx(base.neg).epsilon(1e-12));
  CHECK(p.pos == doctest::Approx(base.pos).epsilon(1e-12));

  ImageD far(8, 8, 4);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) far.at(x, y, 0) = 2.0 * m.at(x, y);
  const ContrastiveLoss z = instance_contrastive_loss(far, m, 1.0, 1.0, 1.0);
  CHECK(z.neg == 0.0);
}

TEST_CASE("variance loss examples") {
  CHECK(variance_loss(ImageD(5, 4, 8, 0.0)).loss == 0.0);
  ImageD one(1, 1, 1, 0.25);
  CHECK(variance_loss(one).loss == doctest::Approx(0.0625));
  ImageD two(2, 1, 1);
  two.data = {0.25, 0.0};
  const VarianceLoss v = variance_loss(two);
  CHECK(v.loss == doctest::Approx(0.03125));
  CHECK(v.grad.data[0] == doctest::Approx(0.25));
  CHECK(v.grad.data[1] == 0.0);
}

TEST_CASE("total loss combinations") {
  SceneConfig cfg;
  LossReport r;
  CHECK(total_loss(r, cfg) == 0.0);
  r.rgb = 1.0;
  r.pos = 0.5;
  r.neg = 0.5;
  r.var = 1.0;
  CHECK(total_loss(r, cfg) == doctest::Approx(1.6));
  CHECK(r.inst2d == doctest::Approx(1.0));
  cfg.lambda_inst2d = 0.0;
  cfg.lambda_var = 0.0;
  CHECK(total_loss(r, cfg) == doctest::Approx(1.0));
}
