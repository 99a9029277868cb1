#ifndef SSPRL_REPORT_HPP_
#define SSPRL_REPORT_HPP_

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssprl/assignment.hpp"
#include "ssprl/common.hpp"
#include "ssprl/model.hpp"
#include "ssprl/pyramid.hpp"
#include "ssprl/synth.hpp"

namespace ssprl::report {

struct ItemAssignment {
  int image = 0;
  int patch = 0;  // 0 at scale 0
  int prototype = 0;
  double score = 0.0;  // cosine to the assigned prototype
};

struct ScaleReport {
  int scale = 0;
  std::vector<ItemAssignment> assignments;        // one per image/patch
  std::vector<int> histogram;                     // members per prototype
  std::vector<std::vector<ItemAssignment>> top;   // top_k per prototype by cosine
};

struct CoOccurrenceEntry {
  int prototype = 0;  // scale-0 prototype
  int member_count = 0;
  std::vector<std::pair<int, int>> top_patch_prototypes;  // (prototype, count)
};

struct PrototypeReport {
  std::vector<ScaleReport> scales;
  std::vector<CoOccurrenceEntry> cooccurrence;  // empty when S == 0
};

/// Assigns every image (scale 0) and patch (scale >= 1) of the dataset to its
/// argmax prototype on the un-augmented center pyramid, and derives the
/// histogram, top-k exemplars, and scale-0 -> top-scale co-occurrence table.
template <typename T>
PrototypeReport build_report(model::TrainState<T>& state, const std::vector<Image>& images,
                             const pyramid::PyramidSpec& pspec, int top_k) {
  if (top_k < 1) throw ConfigError("build_report: top_k must be >= 1");
  const int num_scales = pspec.num_scales;
  PrototypeReport rep;
  rep.scales.resize(num_scales + 1);
  for (int s = 0; s <= num_scales; ++s) {
    rep.scales[s].scale = s;
    rep.scales[s].histogram.assign(state.config.prototype_counts[s], 0);
  }

  // Scores per scale, kept for the top-k pass: scores[s] is K_s x items.
  std::vector<MatX<T>> all_scores(num_scales + 1);
  for (int s = 0; s <= num_scales; ++s)
    all_scores[s].resize(state.config.prototype_counts[s],
                         static_cast<Eigen::Index>(images.size()) * pspec.patches_at(s));

  const int chunk = 64;
  for (int start = 0; start < static_cast<int>(images.size()); start += chunk) {
    const int count = std::min(chunk, static_cast<int>(images.size()) - start);
    // Batch all patches of one scale across the chunk.
    for (int s = 0; s <= num_scales; ++s) {
      const int m_s = pspec.patches_at(s);
      pyramid::PatchGroup group;
      group.scale = s;
      for (int i = 0; i < count; ++i) {
        auto center = pyramid::build_center_pyramid(images[start + i], pspec);
        for (auto& patch : center[s].patches) group.patches.push_back(std::move(patch));
      }
      MatX<T> z = model::encode(state, group);
      all_scores[s].middleCols(static_cast<Eigen::Index>(start) * m_s,
                               static_cast<Eigen::Index>(count) * m_s) =
          assignment::prototype_scores<T>(z, state.prototypes[s]);
    }
  }

  for (int s = 0; s <= num_scales; ++s) {
    const int m_s = pspec.patches_at(s);
    for (Eigen::Index col = 0; col < all_scores[s].cols(); ++col) {
      Eigen::Index best;
      const double score = static_cast<double>(all_scores[s].col(col).maxCoeff(&best));
      ItemAssignment item;
      item.image = static_cast<int>(col / m_s);
      item.patch = static_cast<int>(col % m_s);
      item.prototype = static_cast<int>(best);
      item.score = score;
      rep.scales[s].histogram[item.prototype] += 1;
      rep.scales[s].assignments.push_back(item);
    }
    // Top-k nearest items per prototype by cosine score.
    const int k_s = state.config.prototype_counts[s];
    rep.scales[s].top.resize(k_s);
    for (int k = 0; k < k_s; ++k) {
      std::vector<Eigen::Index> order(all_scores[s].cols());
      std::iota(order.begin(), order.end(), 0);
      const int keep = std::min<int>(top_k, static_cast<int>(order.size()));
      std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                        [&](Eigen::Index a, Eigen::Index b) {
                          if (all_scores[s](k, a) != all_scores[s](k, b))
                            return all_scores[s](k, a) > all_scores[s](k, b);
                          return a < b;
                        });
      for (int j = 0; j < keep; ++j) {
        ItemAssignment item;
        item.image = static_cast<int>(order[j] / m_s);
        item.patch = static_cast<int>(order[j] % m_s);
        item.prototype = k;
        item.score = static_cast<double>(all_scores[s](k, order[j]));
        rep.scales[s].top[k].push_back(item);
      }
    }
  }

  // Cross-scale co-occurrence: for each scale-0 prototype, rank the top-scale
  // prototypes of its member images' patches and keep the top 3.
  if (num_scales >= 1) {
    const int top_scale = num_scales;
    const int m_top = pspec.patches_at(top_scale);
    for (int k0 = 0; k0 < state.config.prototype_counts[0]; ++k0) {
      CoOccurrenceEntry entry;
      entry.prototype = k0;
      std::vector<int> counts(state.config.prototype_counts[top_scale], 0);
      for (const auto& item : rep.scales[0].assignments) {
        if (item.prototype != k0) continue;
        ++entry.member_count;
        for (int m = 0; m < m_top; ++m)
          counts[rep.scales[top_scale].assignments[item.image * m_top + m].prototype] += 1;
      }
      std::vector<int> order(counts.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return counts[a] > counts[b]; });
      for (int j = 0; j < 3 && j < static_cast<int>(order.size()); ++j)
        if (counts[order[j]] > 0)
          entry.top_patch_prototypes.emplace_back(order[j], counts[order[j]]);
      rep.cooccurrence.push_back(entry);
    }
  }
  return rep;
}

inline nlohmann::json to_json(const PrototypeReport& rep, const std::string& config_hash) {
  nlohmann::json out;
  out["config_hash"] = config_hash;
  out["scales"] = nlohmann::json::array();
  for (const auto& sr : rep.scales) {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& list : sr.top) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& item : list)
        entries.push_back({{"image", item.image}, {"patch", item.patch}, {"score", item.score}});
      top.push_back(entries);
    }
    out["scales"].push_back(
        {{"scale", sr.scale}, {"histogram", sr.histogram}, {"top", top}});
  }
  out["cross_scale_cooccurrence"] = nlohmann::json::array();
  for (const auto& entry : rep.cooccurrence) {
    nlohmann::json tops = nlohmann::json::array();
    for (const auto& [proto, count] : entry.top_patch_prototypes)
      tops.push_back({{"prototype", proto}, {"count", count}});
    out["cross_scale_cooccurrence"].push_back({{"prototype", entry.prototype},
                                               {"member_count", entry.member_count},
                                               {"top_patch_prototypes", tops}});
  }
  return out;
}

}  // namespace ssprl::report

#endif  // SSPRL_REPORT_HPP_
