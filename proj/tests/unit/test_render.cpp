#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <random>

#include "curio/autodiff/ops.hpp"
#include "curio/render/renderer.hpp"
#include "support/gradcheck.hpp"

using namespace curio;
using namespace curio::render;

namespace {

Camera ortho(std::size_t size) {
  Camera c;
  c.image_size = size;
  c.projection = Projection::orthographic;
  return c;
}

double pixel_sum(const Layer& l) {
  double s = 0.0;
  for (double a : l.alpha) s += a;
  return s;
}

}  // namespace

TEST(Circle, BoundaryAndCenterAlpha) {
  RenderSettings st;
  const Camera cam = ortho(32);
  // Pixel (16,16) has its center at (16.5,16.5): world offset 0.5 px.
  const double px_per_unit = 32.0 / 5.0;
  const double cx = (16.5 - 16.0) / px_per_unit;
  const double cy = -(16.5 - 16.0) / px_per_unit;
  Layer l = render_circle2d<double>({cx, cy}, 0.5, {1, 0, 0}, cam, st);
  EXPECT_NEAR(l.alpha[16 * 32 + 16], sigmoid(st.k(32) * 0.5 * px_per_unit), 1e-6);  // the distance carries a 1e-6 offset

  // Radius equal to the distance to a neighbouring pixel center puts it on the edge.
  Layer edge = render_circle2d<double>({cx, cy}, 3.0 / px_per_unit, {1, 0, 0}, cam, st);
  EXPECT_NEAR(edge.alpha[16 * 32 + 19], 0.5, 1e-9);
  EXPECT_THROW(render_circle2d<double>({0, 0}, 0.0, {1, 0, 0}, cam, st), InvalidConfig);
}

TEST(Circle, AlphaSumGradientMatchesFiniteDifference) {
  RenderSettings st;
  const Camera cam = ortho(32);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    const double x = u(rng), y = u(rng);
    using D = Dual<1>;
    auto dl = render_circle2d<D>({D::variable(x, 0), D(y)}, D(0.5), {D(1), D(0), D(0)}, cam, st);
    double analytic = 0.0;
    for (const D& a : dl.alpha) analytic += a.d[0];
    const double h = 1e-6;
    const double numeric =
        (pixel_sum(render_circle2d<double>({x + h, y}, 0.5, {1, 0, 0}, cam, st)) -
         pixel_sum(render_circle2d<double>({x - h, y}, 0.5, {1, 0, 0}, cam, st))) /
        (2 * h);
    EXPECT_NEAR(analytic, numeric, 1e-4 * std::max(1.0, std::abs(numeric)));
  }
}

TEST(Project, AxisPointHitsImageCenter) {
  Camera cam;
  const auto p = project<double>({0, 0, 3}, cam);
  EXPECT_NEAR(p.u, 32.0, 1e-12);
  EXPECT_NEAR(p.v, 32.0, 1e-12);
  EXPECT_NEAR(p.depth, 7.0, 1e-12);
  EXPECT_THROW(project<double>({0, 0, 12}, cam), BehindCamera);
}

TEST(Project, DoublingDistanceHalvesRadius) {
  Camera cam;
  cam.position = {0, 0, 4};
  const double r1 = projected_radius(0.5, project<double>({0, 0, 0}, cam).depth, cam);
  cam.position = {0, 0, 8};
  const double r2 = projected_radius(0.5, project<double>({0, 0, 0}, cam).depth, cam);
  EXPECT_NEAR(r1, 2.0 * r2, 1e-12);
}

TEST(Project, JacobianMatchesFiniteDifference) {
  Camera cam;
  cam.position = {1.0, -2.0, 9.0};
  cam.look_at = {0.2, 0.1, 0.0};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  using D = Dual<3>;
  for (int trial = 0; trial < 20; ++trial) {
    const std::array<double, 3> p = {u(rng), u(rng), u(rng) / 2};
    const auto pd = project<D>({D::variable(p[0], 0), D::variable(p[1], 1), D::variable(p[2], 2)},
                               cam);
    for (int a = 0; a < 3; ++a) {
      auto up = p, down = p;
      up[a] += 1e-6;
      down[a] -= 1e-6;
      const auto pu = project<double>(up, cam), pl = project<double>(down, cam);
      const double du = (pu.u - pl.u) / 2e-6, dv = (pu.v - pl.v) / 2e-6;
      EXPECT_NEAR(pd.u.d[a], du, 1e-4 * std::max(1.0, std::abs(du)));
      EXPECT_NEAR(pd.v.d[a], dv, 1e-4 * std::max(1.0, std::abs(dv)));
    }
  }
}

TEST(Sphere, HeadOnLightBrightestAtCenter) {
  Camera cam;
  cam.image_size = 33;
  RenderSettings st;
  // Light straight up the z axis points at the camera.
  Layer l = render_sphere<double>({0, 0, 0}, 1.0, {1, 1, 1}, 0.0, std::numbers::pi / 2, cam, st);
  std::size_t best = 0;
  for (std::size_t i = 0; i < 33 * 33; ++i) {
    if (l.rgb[i * 3] > l.rgb[best * 3]) best = i;
  }
  EXPECT_EQ(best, 16u * 33 + 16);
}

TEST(Sphere, AmbientFloor) {
  Camera cam;
  cam.image_size = 32;
  RenderSettings st;
  const std::array<double, 3> color = {0.8, 0.5, 0.3};
  Layer l = render_sphere<double>({0.3, 0, 0}, 1.5, color, std::numbers::pi, 0.2, cam, st);
  for (std::size_t i = 0; i < 32 * 32; ++i) {
    for (int c = 0; c < 3; ++c) EXPECT_GE(l.rgb[i * 3 + c], 0.2 * color[c] - 1e-12);
  }
}

TEST(Sphere, LightAzimuthGradientMatchesFiniteDifference) {
  Camera cam;
  cam.image_size = 24;
  RenderSettings st;
  using D = Dual<1>;
  auto total = [&](double az) {
    Layer l = render_sphere<double>({0.4, -0.3, 0.5}, 0.8, {0.9, 0.6, 0.4}, az, 0.7, cam, st);
    double s = 0.0;
    for (std::size_t i = 0; i < l.rgb.size(); ++i) s += l.rgb[i] * l.alpha[i / 3];
    return s;
  };
  for (double az : {-2.5, -1.0, 0.3, 1.7}) {
    auto dl = render_sphere<D>({D(0.4), D(-0.3), D(0.5)}, D(0.8), {D(0.9), D(0.6), D(0.4)},
                               D::variable(az, 0), D(0.7), cam, st);
    double analytic = 0.0;
    for (std::size_t i = 0; i < dl.rgb.size(); ++i) {
      analytic += dl.rgb[i].d[0] * dl.alpha[i / 3].v;
    }
    const double numeric = (total(az + 1e-6) - total(az - 1e-6)) / 2e-6;
    EXPECT_NEAR(analytic, numeric, 1e-3 * std::max(1.0, std::abs(numeric)));
  }
}

TEST(Composite, ZeroConfidenceIsBackground) {
  const Camera cam = ortho(16);
  RenderSettings st;
  std::vector<Layer> layers = {
      render_circle2d<double>({0, 0}, 1.0, {1, 0, 0}, cam, st),
      render_circle2d<double>({1, 1}, 1.0, {0, 1, 0}, cam, st)};
  const std::array<double, 3> bg = {0.1, 0.2, 0.3};
  Image img = composite_image(layers, {0.0, 0.0}, bg, 16);
  for (std::size_t i = 0; i < 16 * 16; ++i) {
    for (int c = 0; c < 3; ++c) EXPECT_EQ(img.data[i * 3 + c], bg[c]);
  }
  EXPECT_THROW(composite_image(layers, {1.0}, bg, 16), ShapeMismatch);
}

TEST(Composite, OpaqueLayerReplacesBackground) {
  Layer l;
  l.size = 4;
  l.alpha.assign(16, 1.0);
  l.rgb.resize(48);
  for (std::size_t i = 0; i < 48; ++i) l.rgb[i] = 0.01 * static_cast<double>(i);
  Image img = composite_image({l}, {1.0}, {0.5, 0.5, 0.5}, 4);
  EXPECT_EQ(img.data, l.rgb);
}

TEST(Composite, DisjointOrderIndependence) {
  Camera cam;
  cam.image_size = 32;
  RenderSettings st;
  Layer a = render_sphere<double>({-1.5, 0, 0}, 0.5, {1, 0, 0}, 0.0, 1.0, cam, st);
  Layer b = render_sphere<double>({1.5, 0, 0.5}, 0.5, {0, 1, 0}, 0.0, 1.0, cam, st);
  Image ab = composite_image({a, b}, {1.0, 1.0}, {0.5, 0.5, 0.5}, 32);
  Image ba = composite_image({b, a}, {1.0, 1.0}, {0.5, 0.5, 0.5}, 32);
  for (std::size_t i = 0; i < ab.data.size(); ++i) EXPECT_NEAR(ab.data[i], ba.data[i], 1e-12);
}

TEST(Composite, BackToFrontTiesKeepIndexOrder) {
  EXPECT_EQ(back_to_front({5.0, 7.0, 5.0, 9.0}, true),
            (std::vector<std::size_t>{3, 1, 0, 2}));
  EXPECT_EQ(back_to_front({5.0, 7.0}, false), (std::vector<std::size_t>{0, 1}));
}

TEST(Composite, ConfidenceMonotonicity) {
  const Camera cam = ortho(16);
  RenderSettings st;
  std::vector<Layer> layers = {render_circle2d<double>({0, 0}, 1.0, {1, 0, 0}, cam, st),
                               render_circle2d<double>({0.5, 0}, 1.0, {0, 0, 1}, cam, st)};
  Image prev = composite_image(layers, {0.7, 0.0}, {0.2, 0.2, 0.2}, 16);
  for (double c = 0.1; c <= 1.0; c += 0.1) {
    Image cur = composite_image(layers, {0.7, c}, {0.2, 0.2, 0.2}, 16);
    for (std::size_t i = 0; i < 256; ++i) {
      // Layer 1 is pure blue: blue rises and red falls wherever it covers.
      EXPECT_GE(cur.data[i * 3 + 2], prev.data[i * 3 + 2] - 1e-15);
      EXPECT_LE(cur.data[i * 3], prev.data[i * 3] + 1e-15);
    }
    prev = cur;
  }
}

TEST(RenderScene, EmptySceneIsBackground) {
  const auto world = worlds::spheres(16);
  Image img = render_scene({}, world, world.camera);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(img.data[i], 0.5);
}

TEST(RenderScene, KnownCountForcesConfidence) {
  const auto world = worlds::circles(32);
  SceneCode s;
  s.objects.push_back({});
  s.objects[0].center = {0.3, -0.4, 0.0};
  Image ref = render_scene(s, world, world.camera);
  for (double c : {0.0, 0.25, 0.9}) {
    s.objects[0].confidence = c;
    EXPECT_EQ(render_scene(s, world, world.camera).data, ref.data);
  }
}

TEST(RenderScene, PixelsStayInUnitRange) {
  const auto world = worlds::varied(32);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 5; ++t) {
    SceneCode s;
    for (int i = 0; i < 4; ++i) {
      SceneObject o;
      o.center = {4 * u(rng) - 2, 4 * u(rng) - 2, 2 * u(rng) - 1};
      o.rgb = {u(rng), u(rng), u(rng)};
      o.confidence = u(rng);
      s.objects.push_back(o);
    }
    for (double v : render_scene(s, world, world.camera).data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(RenderBatch, MatchesRenderScene) {
  const auto world = worlds::varied(16);
  Tape tape(false);
  Tensor center({1, 2, 3}, {0.5, 0.2, 0.1, -1.0, -0.5, -0.3});
  Tensor rgb({1, 2, 3}, {0.9, 0.2, 0.3, 0.1, 0.8, 0.5});
  Tensor conf({1, 2}, {0.8, 0.6});
  Var out = render_batch({tape.constant(center), tape.constant(rgb), tape.constant(conf), {}},
                         world, world.camera);
  SceneCode s;
  for (std::size_t i = 0; i < 2; ++i) {
    SceneObject o;
    o.center = {center[i * 3], center[i * 3 + 1], center[i * 3 + 2]};
    o.rgb = {rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]};
    o.confidence = conf[i];
    s.objects.push_back(o);
  }
  Image ref = render_scene(s, world, world.camera);
  Image got = from_chw(out.value(), 0);
  EXPECT_EQ(got.data, ref.data);
}

TEST(RenderBatch, GradientsMatchFiniteDifferences3D) {
  auto world = worlds::varied(12);
  world.groups.insert(Group::light);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor center({2, 2, 3});
    for (double& v : center.data()) v = 3 * u(rng) - 1.5;
    Tensor rgb = curio::testing::random_tensor({2, 2, 3}, rng, 0.2, 0.9);
    Tensor conf = curio::testing::random_tensor({2, 2}, rng, 0.2, 0.9);
    Tensor light({2, 2}, {u(rng) * 6 - 3, 0.4 + u(rng), u(rng) * 6 - 3, 0.4 + u(rng)});
    const double err = curio::testing::gradcheck(
        [&](Tape&, const std::vector<Var>& v) {
          return render_batch({v[0], v[1], v[2], v[3]}, world, world.camera);
        },
        {center, rgb, conf, light}, 1e-6);
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(RenderBatch, GradientsMatchFiniteDifferences2D) {
  const auto world = worlds::circles(16);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor center = curio::testing::random_tensor({3, 1, 2}, rng, -1.5, 1.5);
    const double err = curio::testing::gradcheck(
        [&](Tape&, const std::vector<Var>& v) {
          return render_batch({v[0], {}, {}, {}}, world, world.camera);
        },
        {center}, 1e-6);
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(RenderBatch, DisjointCirclesShrinkUnderL2) {
  // The image loss rewards a smaller prediction when it misses the target.
  const Camera cam = ortho(32);
  RenderSettings st;
  using D = Dual<1>;
  Layer target = render_circle2d<double>({-1.0, 0.5}, 0.5, {1, 0, 0}, cam, st);
  Image t = composite_image({target}, {1.0}, {0, 0, 0}, 32);
  auto pred = render_circle2d<D>({D(1.0), D(-0.6)}, D::variable(0.5, 0), {D(1), D(0), D(0)},
                                 cam, st);
  auto img = composite(std::vector<LayerT<D>>{pred}, std::vector<D>{D(1.0)}, {0, 0, 0}, 32);
  double dloss = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) dloss += 2.0 * (img[i].v - t.data[i]) * img[i].d[0];
  EXPECT_GT(dloss, 0.0);
}

TEST(Png, RoundTripQuantized) {
  Image img(5, 7, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = (i % 256) / 255.0;
  const auto path = std::filesystem::temp_directory_path() / "curio_png_roundtrip.png";
  write_png(path, img);
  Image back = read_png(path);
  ASSERT_EQ(back.height, 5u);
  ASSERT_EQ(back.width, 7u);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-12);
  std::filesystem::remove(path);
  EXPECT_THROW(decode_png({1, 2, 3}), FormatError);
}
