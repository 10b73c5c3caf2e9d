#pragma once

// Internal helpers shared by the VQA and SQA fine-tuning loops.

#include "multiclip/augment.hpp"
#include "multiclip/scene_encoder.hpp"
#include "multiclip/vqa_model.hpp"

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace multiclip::detail {

inline Mat multi_hot(const std::vector<std::string>& answers, const AnswerVocabulary& vocab) {
  Mat m = Mat::Zero(1, vocab.size());
  for (const auto& a : answers) {
    const int i = vocab.index(a);
    if (i >= 0) m(0, i) = 1.0;
  }
  return m;
}

inline std::vector<AxisAlignedBox> proposal_boxes(const ProposalOutputs& p) {
  std::vector<AxisAlignedBox> out;
  for (Eigen::Index i = 0; i < p.centers.rows(); ++i) {
    AxisAlignedBox b;
    b.center = p.centers.value().row(i).transpose();
    b.size = p.sizes.value().row(i).transpose();
    out.push_back(b);
  }
  return out;
}

// Batches of record indices in a fresh permutation per epoch, with the
// questions of each batch grouped by scene in first-appearance order.
struct SceneGroup {
  std::size_t scene = 0;
  std::vector<std::size_t> records;
};

inline std::vector<SceneGroup> group_by_scene(const std::vector<std::size_t>& batch,
                                              const std::vector<std::size_t>& scene_of_record) {
  std::vector<SceneGroup> groups;
  for (std::size_t r : batch) {
    const std::size_t s = scene_of_record[r];
    auto it = std::find_if(groups.begin(), groups.end(), [&](const SceneGroup& g) { return g.scene == s; });
    if (it == groups.end()) {
      groups.push_back({s, {r}});
    } else {
      it->records.push_back(r);
    }
  }
  return groups;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads (strided), rethrowing the
// first failure.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(jobs)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace multiclip::detail
