#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "bayesvla/errors.hpp"
#include "bayesvla/rng.hpp"

namespace bayesvla::info {

// Fully enumerable toy domain: two colored markers (red, blue) on a 4x4 grid,
// an instruction naming one of them, and the action "the instructed cell".
// Small enough to enumerate the exact joint distribution, which serves as the
// brute-force oracle for every estimator in this module.

struct JointVLA {
  // states are (v, l, a) triples with probability p
  std::vector<std::array<int, 3>> states;
  std::vector<double> p;

  void add(int v, int l, int a, double prob) {
    states.push_back({v, l, a});
    p.push_back(prob);
  }

  std::size_t size() const { return states.size(); }
};

struct MicroWorld {
  int grid_n = 4;
  std::string mode = "diverse";  // biased | diverse | uniform4

  int cells() const { return grid_n * grid_n; }
  int feature_dim() const { return 2 * cells(); }

  int n_instructions() const { return mode == "uniform4" ? 4 : 2; }

  // v encodes (cell of red, cell of blue)
  int encode_v(int cell_a, int cell_b) const { return cell_a * cells() + cell_b; }
  std::pair<int, int> decode_v(int v) const { return {v / cells(), v % cells()}; }

  JointVLA enumerate() const {
    const int n = cells();
    const int n_v = n * (n - 1);
    JointVLA joint;
    for (int a_cell = 0; a_cell < n; ++a_cell) {
      for (int b_cell = 0; b_cell < n; ++b_cell) {
        if (a_cell == b_cell) continue;
        const int v = encode_v(a_cell, b_cell);
        const double pv = 1.0 / n_v;
        if (mode == "biased") {
          const int l = a_cell < b_cell ? 0 : 1;
          joint.add(v, l, l == 0 ? a_cell : b_cell, pv);
        } else if (mode == "diverse") {
          joint.add(v, 0, a_cell, pv / 2.0);
          joint.add(v, 1, b_cell, pv / 2.0);
        } else if (mode == "uniform4") {
          // instruction carries no information: action ignores it
          for (int l = 0; l < 4; ++l) joint.add(v, l, a_cell, pv / 4.0);
        } else {
          throw ConfigError("microworld: unknown mode " + mode);
        }
      }
    }
    return joint;
  }

  std::vector<float> features(int v) const {
    auto [a_cell, b_cell] = decode_v(v);
    std::vector<float> f(feature_dim(), 0.0f);
    f[a_cell] = 1.0f;
    f[cells() + b_cell] = 1.0f;
    return f;
  }

  // lossy view: the unordered occupied-cell set (colors discarded)
  int lossy_f(int v) const {
    auto [a_cell, b_cell] = decode_v(v);
    const int lo = std::min(a_cell, b_cell), hi = std::max(a_cell, b_cell);
    return lo * cells() + hi;
  }

  // sample (v, l) pairs from the enumerated joint
  std::vector<std::pair<int, int>> sample_vl(int count, Rng& rng) const {
    const JointVLA joint = enumerate();
    std::vector<double> cdf(joint.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < joint.size(); ++i) {
      acc += joint.p[i];
      cdf[i] = acc;
    }
    std::vector<std::pair<int, int>> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
      const double u = rng.uniform() * acc;
      std::size_t lo = 0, hi = joint.size() - 1;
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (cdf[mid] < u)
          lo = mid + 1;
        else
          hi = mid;
      }
      out.emplace_back(joint.states[lo][0], joint.states[lo][1]);
    }
    return out;
  }
};

// --- exact plug-in quantities over an enumerated joint ----------------------

namespace detail {

using Key = std::vector<int>;

inline std::map<Key, double> marginal(const JointVLA& joint,
                                      const std::vector<int>& dims) {
  std::map<Key, double> out;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    Key k;
    for (int d : dims) k.push_back(joint.states[i][d]);
    out[k] += joint.p[i];
  }
  return out;
}

}  // namespace detail

// H(X | Y) for variable index sets over (v=0, l=1, a=2)
inline double cond_entropy(const JointVLA& joint, const std::vector<int>& x,
                           const std::vector<int>& y) {
  std::vector<int> xy = y;
  xy.insert(xy.end(), x.begin(), x.end());
  const auto pxy = detail::marginal(joint, xy);
  const auto py = detail::marginal(joint, y);
  double h = 0.0;
  for (const auto& [k, pj] : pxy) {
    if (pj <= 0.0) continue;
    detail::Key ky(k.begin(), k.begin() + y.size());
    h -= pj * std::log(pj / py.at(ky));
  }
  return h;
}

// I(a ; l | v) computed directly from the joint
inline double cond_mutual_info(const JointVLA& joint) {
  const auto pv = detail::marginal(joint, {0});
  const auto pvl = detail::marginal(joint, {0, 1});
  const auto pva = detail::marginal(joint, {0, 2});
  double mi = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    const double pj = joint.p[i];
    if (pj <= 0.0) continue;
    const int v = joint.states[i][0], l = joint.states[i][1], a = joint.states[i][2];
    mi += pj * std::log(pj * pv.at({v}) / (pvl.at({v, l}) * pva.at({v, a})));
  }
  return mi;
}

struct ExactQuantities {
  double h_l_given_v = 0.0;
  double h_a_given_v = 0.0;
  double h_a_given_vl = 0.0;
  double h_l_given_va = 0.0;
  double i_a_l_given_v_direct = 0.0;  // from the joint sum
  double i_a_l_given_v_via_a = 0.0;   // H(a|v) - H(a|v,l)
  double i_a_l_given_v_via_l = 0.0;   // H(l|v) - H(l|v,a)
};

inline ExactQuantities exact_micro_quantities(const JointVLA& joint) {
  if (joint.size() > 100000)
    throw ConfigError("exact_micro_quantities: joint support too large to enumerate");
  ExactQuantities q;
  q.h_l_given_v = cond_entropy(joint, {1}, {0});
  q.h_a_given_v = cond_entropy(joint, {2}, {0});
  q.h_a_given_vl = cond_entropy(joint, {2}, {0, 1});
  q.h_l_given_va = cond_entropy(joint, {1}, {0, 2});
  q.i_a_l_given_v_direct = cond_mutual_info(joint);
  q.i_a_l_given_v_via_a = q.h_a_given_v - q.h_a_given_vl;
  q.i_a_l_given_v_via_l = q.h_l_given_v - q.h_l_given_va;
  return q;
}

// replace v by f(v) and re-enumerate (used for the data-processing check)
template <class F>
inline JointVLA apply_lossy(const JointVLA& joint, F&& f) {
  std::map<std::array<int, 3>, double> merged;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    auto s = joint.states[i];
    s[0] = f(s[0]);
    merged[s] += joint.p[i];
  }
  JointVLA out;
  for (const auto& [s, p] : merged) out.add(s[0], s[1], s[2], p);
  return out;
}

// best achievable accuracy of any predictor of l from v alone
inline double best_vision_only_accuracy(const JointVLA& joint) {
  const auto pvl = detail::marginal(joint, {0, 1});
  std::map<int, double> best;
  for (const auto& [k, p] : pvl) best[k[0]] = std::max(best[k[0]], p);
  double acc = 0.0;
  for (const auto& [v, p] : best) acc += p;
  return acc;
}

}  // namespace bayesvla::info
