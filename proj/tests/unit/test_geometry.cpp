#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bayesvla/geometry.hpp"
#include "bayesvla/rng.hpp"

using namespace bayesvla;
using namespace bayesvla::geo;

namespace {

double pose_distance(const Pose& a, const Pose& b) {
  return frobenius_distance(a.R, b.R) + (a.t - b.t).norm();
}

}  // namespace

TEST_CASE("rot6d codec") {
  SECTION("identity encodes to the canonical six-vector") {
    const auto v = rot6d_encode(Mat3::identity());
    REQUIRE(v == std::array<double, 6>{1, 0, 0, 0, 1, 0});
  }
  SECTION("decode is scale invariant") {
    const Mat3 r = rot6d_decode({2, 0, 0, 0, 3, 0});
    REQUIRE(frobenius_distance(r, Mat3::identity()) <= 1e-12);
  }
  SECTION("round trip over 500 random rotations") {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
      const Mat3 r = random_rotation(rng);
      const Mat3 back = rot6d_decode(rot6d_encode(r));
      REQUIRE(frobenius_distance(back, r) <= 1e-6);
    }
  }
  SECTION("decode output is orthonormal with det +1, including near-degenerate input") {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
      // second vector nearly parallel to the first, just above the threshold
      const Vec3 a = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
      Vec3 perp = a.cross(Vec3{0.3, -0.5, 0.8});
      perp = perp.normalized() * 1e-6;
      const Vec3 b = a * 0.9 + perp;
      const Mat3 r = rot6d_decode({a.x, a.y, a.z, b.x, b.y, b.z});
      REQUIRE(is_rotation(r, 1e-6));
    }
  }
  SECTION("degenerate inputs rejected") {
    REQUIRE_THROWS_AS(rot6d_decode({1e-9, 0, 0, 0, 1, 0}), PoseError);
    REQUIRE_THROWS_AS(rot6d_decode({1, 0, 0, 2, 0, 0}), PoseError);
  }
}

TEST_CASE("action codec") {
  Rng rng(7);
  SECTION("zero motion encodes to identity in both variants") {
    const Pose ee = random_pose(rng);
    const Pose cam = random_pose(rng);
    const Pose a = encode_action(ee, ee, cam);
    const Pose ar = encode_action_refined(ee, ee, cam);
    REQUIRE(pose_distance(a, Pose::identity()) <= 1e-12);
    REQUIRE(pose_distance(ar, Pose::identity()) <= 1e-12);
  }
  SECTION("pure camera-frame z translation") {
    Pose cam;  // identity rotation at origin
    Pose now;
    now.t = {0.2, 0.3, 0.0};
    Pose next = now;
    next.t.z += 0.1;
    const Pose a = encode_action(now, next, cam);
    REQUIRE(std::abs(a.t.x) <= 1e-12);
    REQUIRE(std::abs(a.t.y) <= 1e-12);
    REQUIRE(a.t.z == Catch::Approx(0.1).margin(1e-12));
    REQUIRE(frobenius_distance(a.R, Mat3::identity()) <= 1e-12);
  }
  SECTION("refined translation equals rotated effector-frame displacement") {
    for (int i = 0; i < 50; ++i) {
      Pose cam = random_pose(rng);
      Pose now;
      now.R = random_rotation(rng);
      now.t = {rng.normal(), rng.normal(), rng.normal()};
      const Vec3 t_eff{rng.normal(), rng.normal(), rng.normal()};
      Pose next = now;
      next.t = now.t + now.R * t_eff;
      const Pose ar = encode_action_refined(now, next, cam);
      const Vec3 expect = cam.R.transposed() * now.R * t_eff;
      REQUIRE((ar.t - expect).norm() <= 1e-9);
    }
  }
  SECTION("decode inverts encode within 1e-9 over 200 random pose pairs") {
    for (int i = 0; i < 200; ++i) {
      const Pose now = random_pose(rng);
      const Pose next = random_pose(rng);
      const Pose cam = random_pose(rng);
      const Pose base = decode_action(encode_action(now, next, cam), now, cam,
                                      ActionCodec::Base);
      const Pose refined = decode_action(encode_action_refined(now, next, cam), now,
                                         cam, ActionCodec::Refined);
      REQUIRE(pose_distance(base, next) <= 1e-9);
      REQUIRE(pose_distance(refined, next) <= 1e-9);
    }
  }
  SECTION("left-action equivariance is exact for both variants") {
    for (int i = 0; i < 100; ++i) {
      const Pose now = random_pose(rng);
      const Pose next = random_pose(rng);
      const Pose cam = random_pose(rng);
      const Pose g = random_pose(rng);
      const Pose a1 = encode_action(now, next, cam);
      const Pose a2 = encode_action(g * now, g * next, g * cam);
      REQUIRE(pose_distance(a1, a2) <= 1e-12);
      const Pose r1 = encode_action_refined(now, next, cam);
      const Pose r2 = encode_action_refined(g * now, g * next, g * cam);
      REQUIRE(pose_distance(r1, r2) <= 1e-12);
    }
  }
  SECTION("camera translation perturbation: refined invariant, base not") {
    const Pose now = random_pose(rng);
    const Pose next = random_pose(rng);
    const Pose cam = random_pose(rng);
    Pose cam_shifted = cam;
    cam_shifted.t.x += 0.05;
    const Pose r1 = encode_action_refined(now, next, cam);
    const Pose r2 = encode_action_refined(now, next, cam_shifted);
    REQUIRE(pose_distance(r1, r2) <= 1e-9);
    const Pose b1 = encode_action(now, next, cam);
    const Pose b2 = encode_action(now, next, cam_shifted);
    REQUIRE(pose_distance(b1, b2) > 1e-6);
  }
  SECTION("non-orthonormal pose rejected") {
    Pose bad;
    bad.R(0, 0) = 2.0;
    REQUIRE_THROWS_AS(encode_action(bad, Pose::identity(), Pose::identity()), PoseError);
  }
  SECTION("action vector round trip carries gripper through") {
    for (int i = 0; i < 100; ++i) {
      const Pose now = random_pose(rng);
      const Pose next = random_pose(rng);
      const Pose cam = random_pose(rng);
      const double grip = rng.uniform(-1.0, 1.0);
      const ActionVector a = encode_action_vector(now, next, cam, grip);
      REQUIRE(a.gripper() == grip);
      const Pose back = decode_action_vector(a, now, cam);
      REQUIRE(pose_distance(back, next) <= 1e-9);
    }
  }
}

TEST_CASE("camera and plucker rays") {
  SECTION("camera at origin gives zero moments") {
    Camera cam;
    cam.grid = 4;
    cam.pose = Pose::identity();
    for (const auto& ray : patch_rays(cam)) {
      REQUIRE(ray.m.norm() <= 1e-12);
      REQUIRE(ray.d.norm() == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("down-looking camera central patch ray points along -z") {
    Camera cam;
    cam.grid = 4;
    cam.image_size = 64;
    cam.focal = 64;
    // principal point placed at the centre of patch (2, 2)
    cam.cx = 2.5 * 64 / 4;
    cam.cy = 2.5 * 64 / 4;
    cam.pose.R = Mat3::rot_x(M_PI);  // z axis of camera points down
    cam.pose.t = {0.5, 0.5, 1.0};
    const PluckerRay center = cam.patch_ray(2, 2);
    REQUIRE(std::abs(center.d.x) <= 1e-6);
    REQUIRE(std::abs(center.d.y) <= 1e-6);
    REQUIRE(center.d.z == Catch::Approx(-1.0).margin(1e-6));
  }
  SECTION("all rays are unit with orthogonal moments") {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      Camera cam;
      cam.grid = 8;
      const double az = rng.uniform(0, 2 * M_PI);
      const double el = rng.uniform(0.6, 1.3);
      const double dist = rng.uniform(0.8, 1.3);
      const Vec3 eye{0.5 + dist * std::cos(el) * std::cos(az),
                     0.5 + dist * std::cos(el) * std::sin(az),
                     dist * std::sin(el)};
      cam.pose = look_at(eye, {0.5, 0.5, 0.0});
      cam.pose.validate();
      for (const auto& ray : patch_rays(cam)) {
        REQUIRE(ray.d.norm() == Catch::Approx(1.0).margin(1e-9));
        REQUIRE(std::abs(ray.d.dot(ray.m)) <= 1e-9);
      }
    }
  }
  SECTION("projection round trip hits the right patch") {
    Rng rng(10);
    for (int i = 0; i < 200; ++i) {
      Camera cam;
      cam.grid = 8;
      const double az = rng.uniform(-0.8, 0.8);
      const double el = rng.uniform(0.95, 1.3);
      const double dist = rng.uniform(0.9, 1.2);
      const Vec3 eye{0.5 - dist * std::cos(el) * std::cos(az),
                     0.5 - dist * std::cos(el) * std::sin(az),
                     0.05 + dist * std::sin(el)};
      cam.pose = look_at(eye, {0.5, 0.5, 0.05});
      const Vec3 p{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.02};
      int row = -1, col = -1;
      REQUIRE(cam.patch_of(p, row, col));
      // reconstructing along the patch-grid ray with the true range lands in
      // the same patch cell
      double u, v;
      REQUIRE(cam.project(p, u, v));
      const Vec3 dir = cam.ray_direction(u, v);
      const Vec3 recon = cam.pose.t + dir * (p - cam.pose.t).norm();
      REQUIRE((recon - p).norm() <= 1e-9);
    }
  }
  SECTION("invalid cameras rejected") {
    Camera cam;
    cam.focal = -1;
    REQUIRE_THROWS_AS(patch_rays(cam), PoseError);
    Camera cam2;
    cam2.grid = 1;
    REQUIRE_THROWS_AS(patch_rays(cam2), PoseError);
  }
}
