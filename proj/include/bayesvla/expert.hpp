#pragma once

#include <functional>
#include <vector>

#include "bayesvla/language.hpp"
#include "bayesvla/world.hpp"

namespace bayesvla::sim {

using geo::ActionCodec;
using geo::ActionVector;

inline Mat3 top_down_rotation(double yaw) {
  return Mat3::rot_z(yaw) * Mat3::rot_x(M_PI);
}

inline Pose home_pose() {
  return {top_down_rotation(0.0), {0.5, 0.5, 0.35}};
}

// One demonstration: a scene, its instruction, the contact pose reached by
// the pre-contact phase and a single post-contact action chunk.
struct Episode {
  Scene scene;
  Instruction instruction;
  Pose contact_pose;
  std::vector<ActionVector> chunk;   // horizon actions, refined codec
  std::vector<Pose> poses;           // effector world poses, horizon + 1
  std::vector<double> widths;        // gripper state before each pose
  bool outcome = false;
  std::uint64_t episode_seed = 0;
};

// Scripted expert: top-down grasp above the target centroid, close, lift,
// straight-line transit above the container, descend, open. Resampled to
// exactly `horizon` steps at uniform arc length; yaw eases to zero during
// the first few steps so transport orientation is canonical.
inline Episode expert_demo(const Scene& scene, const Instruction& instruction,
                           const WorldConfig& cfg) {
  const ObjectSpec* target = find_object(scene, instruction.target_object_id);
  const ContainerSpec* container =
      find_container(scene, instruction.target_container_id);
  if (!target || !container) throw Error("expert: instruction does not match scene");

  const double yaw0 = target->shape == 2 ? target->yaw : 0.0;
  const Vec3 p0 = target->grasp_point();
  const Vec3 w1{p0.x, p0.y, cfg.lift_height};
  const Vec3 w2{container->position.x, container->position.y, cfg.lift_height};
  const Vec3 w3{container->position.x, container->position.y, cfg.place_height};
  const std::vector<Vec3> waypoints{p0, w1, w2, w3};

  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < waypoints.size(); ++i)
    cum.push_back(cum.back() + (waypoints[i] - waypoints[i - 1]).norm());
  const double total = cum.back();

  auto point_at = [&](double s) {
    for (std::size_t i = 1; i < waypoints.size(); ++i) {
      if (s <= cum[i] || i + 1 == waypoints.size()) {
        const double seg = cum[i] - cum[i - 1];
        const double f = seg > 1e-12 ? (s - cum[i - 1]) / seg : 0.0;
        return waypoints[i - 1] + (waypoints[i] - waypoints[i - 1]) * f;
      }
    }
    return waypoints.back();
  };

  const int T = cfg.horizon;
  Episode ep;
  ep.scene = scene;
  ep.instruction = instruction;
  ep.contact_pose = {top_down_rotation(yaw0), p0};
  ep.poses.push_back(ep.contact_pose);
  ep.widths.push_back(1.0);
  for (int k = 1; k <= T; ++k) {
    const double s = total * k / T;
    const double yaw = yaw0 * std::max(0.0, 1.0 - k / 4.0);
    Pose pk{top_down_rotation(yaw), point_at(s)};
    const double grip = k < T ? -1.0 : 1.0;
    ep.chunk.push_back(geo::encode_action_vector(ep.poses.back(), pk,
                                                 scene.camera.pose, grip,
                                                 ActionCodec::Refined));
    ep.poses.push_back(pk);
    ep.widths.push_back(grip);
  }
  ep.outcome = true;
  return ep;
}

// ---------------------------------------------------------------------------
// Kinematic execution. Attachment replaces physics: an object attaches when
// the gripper closes within grasp tolerance of its grasp point (checked
// before the step's motion) and detaches when the gripper opens (after the
// motion). A decoded pose below the table terminates with "collision".

struct StepLog {
  int chunk = 0;
  int step = 0;
  Pose effector;
  double gripper = 1.0;
  int attached = -1;
};

struct RolloutResult {
  bool collision = false;
  bool opened = false;
  int grasped_id = -1;  // last object attached, -1 if none
  int chunks_executed = 0;
  std::vector<Vec3> final_object_positions;
  std::vector<StepLog> log;
};

// Policy callback: produces the next chunk from the current world state.
using ChunkPolicy = std::function<std::vector<ActionVector>(
    const Scene& current, int chunk_index, const Pose& effector,
    double gripper_state, const std::vector<std::vector<ActionVector>>& history)>;

inline RolloutResult execute_rollout(const Scene& scene, const WorldConfig& cfg,
                                     const Pose& start_pose, const ChunkPolicy& policy,
                                     int max_chunks) {
  if (start_pose.t.z < 0.0) throw Error("rollout: contact pose below table");
  Scene world = scene;
  RolloutResult res;
  Pose ee = start_pose;
  double grip_state = 1.0;  // open
  int attached = -1;
  Vec3 attach_offset;
  std::vector<std::vector<ActionVector>> history;

  for (int chunk_i = 0; chunk_i < max_chunks && !res.collision && !res.opened;
       ++chunk_i) {
    std::vector<ActionVector> chunk = policy(world, chunk_i, ee, grip_state, history);
    if (chunk.empty()) break;
    ++res.chunks_executed;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const ActionVector& a = chunk[k];
      const double cmd = a.gripper();
      if (cmd < 0.0 && grip_state > 0.0) {
        grip_state = -1.0;
        int best = -1;
        double best_d = cfg.grasp_tolerance;
        for (const auto& o : world.objects) {
          const double d = (o.grasp_point() - ee.t).norm();
          if (d <= best_d) {
            best_d = d;
            best = o.id;
          }
        }
        if (best >= 0) {
          attached = best;
          res.grasped_id = best;
          attach_offset = find_object(world, best)->position - ee.t;
        }
      }
      Pose next;
      bool bad = false;
      try {
        next = geo::decode_action_vector(a, ee, world.camera.pose, ActionCodec::Refined);
      } catch (const Error&) {
        bad = true;
      }
      if (bad || !std::isfinite(next.t.x) || !std::isfinite(next.t.y) ||
          !std::isfinite(next.t.z) || next.t.z < -1e-9) {
        res.collision = true;
        break;
      }
      ee = next;
      if (attached >= 0)
        for (auto& o : world.objects)
          if (o.id == attached) o.position = ee.t + attach_offset;
      if (cmd > 0.0 && grip_state < 0.0) {
        grip_state = 1.0;
        if (attached >= 0) {
          for (auto& o : world.objects)
            if (o.id == attached) o.position.z = o.rest_height();
          attached = -1;
        }
        res.opened = true;
      }
      res.log.push_back({chunk_i, static_cast<int>(k), ee, grip_state, attached});
    }
    history.push_back(std::move(chunk));
  }
  res.final_object_positions.resize(world.objects.size());
  for (std::size_t i = 0; i < world.objects.size(); ++i)
    res.final_object_positions[i] = world.objects[i].position;
  return res;
}

inline RolloutResult execute_rollout(const Scene& scene, const WorldConfig& cfg,
                                     const Pose& start_pose,
                                     const std::vector<ActionVector>& chunk) {
  ChunkPolicy replay = [&chunk](const Scene&, int chunk_index, const Pose&, double,
                                const std::vector<std::vector<ActionVector>>&) {
    return chunk_index == 0 ? chunk : std::vector<ActionVector>{};
  };
  return execute_rollout(scene, cfg, start_pose, replay, 1);
}

struct SuccessVerdict {
  bool success = false;
  std::string failure_reason;  // collision | no grasp | wrong object | misplaced
};

// success iff the instructed object (and no other) ends within the instructed
// container's radius (inclusive) and the instructed object was the one grasped
inline SuccessVerdict check_success(const RolloutResult& res, const Scene& scene,
                                    const Instruction& instruction) {
  const ContainerSpec* container =
      find_container(scene, instruction.target_container_id);
  if (!container) throw Error("check_success: container missing");
  if (res.collision) return {false, "collision"};
  if (res.grasped_id < 0) return {false, "no grasp"};
  if (res.grasped_id != instruction.target_object_id) return {false, "wrong object"};
  auto planar = [&](const Vec3& p) {
    const double dx = p.x - container->position.x;
    const double dy = p.y - container->position.y;
    return std::sqrt(dx * dx + dy * dy);
  };
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].id == instruction.target_object_id) continue;
    if (planar(res.final_object_positions[i]) <= container->radius)
      return {false, "wrong object"};
  }
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].id != instruction.target_object_id) continue;
    if (planar(res.final_object_positions[i]) <= container->radius)
      return {true, ""};
    return {false, "misplaced"};
  }
  return {false, "misplaced"};
}

}  // namespace bayesvla::sim
