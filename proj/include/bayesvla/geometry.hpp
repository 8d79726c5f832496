#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "bayesvla/errors.hpp"
#include "bayesvla/rng.hpp"

namespace bayesvla::geo {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
};

// row-major 3x3
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }

  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }

  Mat3 operator*(const Mat3& o) const {
    Mat3 out;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        out(i, j) = s;
      }
    return out;
  }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 transposed() const {
    Mat3 out;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out(i, j) = (*this)(j, i);
    return out;
  }

  Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
  void set_col(int c, const Vec3& v) {
    m[c] = v.x;
    m[3 + c] = v.y;
    m[6 + c] = v.z;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  static Mat3 rot_z(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
  }

  static Mat3 rot_x(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
  }
};

inline double frobenius_distance(const Mat3& a, const Mat3& b) {
  double s = 0;
  for (int i = 0; i < 9; ++i) s += (a.m[i] - b.m[i]) * (a.m[i] - b.m[i]);
  return std::sqrt(s);
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  const Mat3 should_be_i = r.transposed() * r;
  if (frobenius_distance(should_be_i, Mat3::identity()) > tol) return false;
  return std::abs(r.det() - 1.0) <= tol;
}

// Rigid transform: rotation + translation, meters.
struct Pose {
  Mat3 R;
  Vec3 t;

  static Pose identity() { return {}; }

  Pose operator*(const Pose& o) const { return {R * o.R, R * o.t + t}; }

  Vec3 apply(const Vec3& p) const { return R * p + t; }

  Pose inverse() const {
    const Mat3 rt = R.transposed();
    return {rt, (rt * t) * -1.0};
  }

  void validate() const {
    if (!is_rotation(R)) throw PoseError("pose rotation is not orthonormal");
  }
};

inline Mat3 quat_to_mat(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Mat3 r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
  return r;
}

inline Mat3 random_rotation(Rng& rng) {
  return quat_to_mat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
}

inline Pose random_pose(Rng& rng, double translation_scale = 1.0) {
  return {random_rotation(rng),
          {rng.normal() * translation_scale, rng.normal() * translation_scale,
           rng.normal() * translation_scale}};
}

// ---------------------------------------------------------------------------
// 6D rotation representation: the first two columns of R, decoded by
// Gram-Schmidt and completed with a cross product.

inline std::array<double, 6> rot6d_encode(const Mat3& r) {
  if (!is_rotation(r)) throw PoseError("rot6d_encode: input not a rotation");
  const Vec3 c0 = r.col(0), c1 = r.col(1);
  return {c0.x, c0.y, c0.z, c1.x, c1.y, c1.z};
}

inline Mat3 rot6d_decode(const std::array<double, 6>& v) {
  Vec3 a{v[0], v[1], v[2]}, b{v[3], v[4], v[5]};
  const double na = a.norm();
  if (na < 1e-8) throw PoseError("rot6d_decode: first column degenerate");
  const Vec3 u0 = a * (1.0 / na);
  const Vec3 b_perp = b - u0 * u0.dot(b);
  const double nb = b_perp.norm();
  if (nb < 1e-8) throw PoseError("rot6d_decode: columns nearly parallel");
  const Vec3 u1 = b_perp * (1.0 / nb);
  const Vec3 u2 = u0.cross(u1);
  Mat3 r;
  r.set_col(0, u0);
  r.set_col(1, u1);
  r.set_col(2, u2);
  return r;
}

// ---------------------------------------------------------------------------
// Camera-frame relative end-effector motion (embodiment-equivariant codec).
//
// Base variant conjugates the world-frame relative motion by the camera pose:
//   a = cam^-1 * ee_next * ee_now^-1 * cam
// Refined variant keeps the same rotation block but replaces the translation
// with the effector displacement rotated into the camera frame, which removes
// any dependence on the camera's translation:
//   R_a = Rc^T Rnext Rnow^T Rc,   t_a = Rc^T (t_next - t_now)

enum class ActionCodec { Base, Refined };

inline Pose encode_action(const Pose& ee_now, const Pose& ee_next, const Pose& cam) {
  ee_now.validate();
  ee_next.validate();
  cam.validate();
  const Pose cam_inv = cam.inverse();
  return cam_inv * ee_next * ee_now.inverse() * cam;
}

inline Pose encode_action_refined(const Pose& ee_now, const Pose& ee_next,
                                  const Pose& cam) {
  ee_now.validate();
  ee_next.validate();
  cam.validate();
  const Mat3 rc_t = cam.R.transposed();
  Pose a;
  a.R = rc_t * ee_next.R * ee_now.R.transposed() * cam.R;
  a.t = rc_t * (ee_next.t - ee_now.t);
  return a;
}

inline Pose decode_action(const Pose& a, const Pose& ee_now, const Pose& cam,
                          ActionCodec codec) {
  if (codec == ActionCodec::Base) {
    return cam * a * cam.inverse() * ee_now;
  }
  Pose next;
  next.R = cam.R * a.R * cam.R.transposed() * ee_now.R;
  next.t = ee_now.t + cam.R * a.t;
  return next;
}

// 10-D action vector: camera-frame translation, 6D rotation, gripper command.
struct ActionVector {
  std::array<double, 10> v{};

  static ActionVector from_pose(const Pose& rel, double gripper) {
    ActionVector a;
    a.v[0] = rel.t.x;
    a.v[1] = rel.t.y;
    a.v[2] = rel.t.z;
    const auto r6 = rot6d_encode(rel.R);
    for (int i = 0; i < 6; ++i) a.v[3 + i] = r6[i];
    a.v[9] = gripper;
    return a;
  }

  Pose to_pose() const {
    Pose p;
    p.t = {v[0], v[1], v[2]};
    p.R = rot6d_decode({v[3], v[4], v[5], v[6], v[7], v[8]});
    return p;
  }

  double gripper() const { return v[9]; }

  void validate() const {
    for (double x : v)
      if (!std::isfinite(x)) throw NumericError("action vector not finite");
    if (v[9] < -1.0 - 1e-9 || v[9] > 1.0 + 1e-9)
      throw Error("gripper command outside [-1, 1]");
  }
};

inline ActionVector encode_action_vector(const Pose& ee_now, const Pose& ee_next,
                                         const Pose& cam, double gripper,
                                         ActionCodec codec = ActionCodec::Refined) {
  const Pose rel = codec == ActionCodec::Base ? encode_action(ee_now, ee_next, cam)
                                              : encode_action_refined(ee_now, ee_next, cam);
  return ActionVector::from_pose(rel, gripper);
}

inline Pose decode_action_vector(const ActionVector& a, const Pose& ee_now,
                                 const Pose& cam,
                                 ActionCodec codec = ActionCodec::Refined) {
  return decode_action(a.to_pose(), ee_now, cam, codec);
}

// ---------------------------------------------------------------------------
// Pinhole camera over a G x G patch grid with per-patch Plucker rays.

struct PluckerRay {
  Vec3 d;  // unit direction
  Vec3 m;  // moment o x d
};

struct Camera {
  double focal = 64.0;        // pixels
  double cx = 32.0, cy = 32.0;  // principal point, pixels
  double image_size = 64.0;   // square image, pixels
  int grid = 8;               // patches per side
  Pose pose;                  // camera-to-world

  void validate() const {
    if (focal <= 0) throw PoseError("camera: focal must be positive");
    if (grid < 2) throw PoseError("camera: grid must be at least 2");
    pose.validate();
  }

  // world point -> pixel (u right, v down); z must be positive in front
  bool project(const Vec3& p_world, double& u, double& v) const {
    const Vec3 pc = pose.R.transposed() * (p_world - pose.t);
    if (pc.z <= 1e-9) return false;
    u = focal * pc.x / pc.z + cx;
    v = focal * pc.y / pc.z + cy;
    return u >= 0.0 && u < image_size && v >= 0.0 && v < image_size;
  }

  bool patch_of(const Vec3& p_world, int& row, int& col) const {
    double u, v;
    if (!project(p_world, u, v)) return false;
    col = static_cast<int>(u * grid / image_size);
    row = static_cast<int>(v * grid / image_size);
    if (row < 0 || row >= grid || col < 0 || col >= grid) return false;
    return true;
  }

  // continuous patch coordinates (row, col) of a world point
  bool patch_coords(const Vec3& p_world, double& row, double& col) const {
    double u, v;
    if (!project(p_world, u, v)) return false;
    row = v * grid / image_size;
    col = u * grid / image_size;
    return true;
  }

  Vec3 ray_direction(double u, double v) const {
    const Vec3 dir_cam{(u - cx) / focal, (v - cy) / focal, 1.0};
    return (pose.R * dir_cam).normalized();
  }

  PluckerRay patch_ray(int row, int col) const {
    const double u = (col + 0.5) * image_size / grid;
    const double v = (row + 0.5) * image_size / grid;
    const Vec3 d = ray_direction(u, v);
    return {d, pose.t.cross(d)};
  }
};

inline std::vector<PluckerRay> patch_rays(const Camera& cam) {
  cam.validate();
  std::vector<PluckerRay> rays;
  rays.reserve(static_cast<std::size_t>(cam.grid) * cam.grid);
  for (int r = 0; r < cam.grid; ++r)
    for (int c = 0; c < cam.grid; ++c) rays.push_back(cam.patch_ray(r, c));
  return rays;
}

// camera-to-world pose looking from eye toward target (OpenCV axes: x right,
// y down, z forward), world up = +z
inline Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 up{0, 0, 1};
  Vec3 right = fwd.cross(up);
  if (right.norm() < 1e-9) right = Vec3{1, 0, 0};
  right = right.normalized();
  const Vec3 down = fwd.cross(right);
  Mat3 r;
  r.set_col(0, right);
  r.set_col(1, down);
  r.set_col(2, fwd);
  Pose p{r, eye};
  return p;
}

}  // namespace bayesvla::geo
