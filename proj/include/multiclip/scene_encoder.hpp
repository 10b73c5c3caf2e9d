#pragma once

// Point cloud -> M object proposals -> transformer-refined tokens with a
// learnable global token -> unit vector in the shared alignment space.

#include "multiclip/nn.hpp"
#include "multiclip/scene_data.hpp"

#include <cstdint>
#include <vector>

namespace multiclip {

using ad::Mat;
using ad::Var;
using ad::Vec;

inline constexpr int kProposalFeatureDim = 128;

struct SceneEncoderConfig {
  int num_proposals = 32;  // M
  int num_classes = 8;
  int point_hidden = 32;
  int point_feature = 64;
  double neighborhood_cell = 0.25;  // voxel size for the neighborhood max-pool
  double group_radius = 0.3;
  int group_samples = 16;
  int refine_layers = 1;
  int heads = 4;
  int ffn_hidden = 256;
  int embed_dim = 512;
  bool projection_bias = false;
  std::uint64_t init_seed = 7;
};

struct ObjectProposal {
  Vec feature;  // 128
  AxisAlignedBox box;
  double objectness_logit = 0.0;
  Vec class_logits;
};

struct SceneTokens {
  Mat object_tokens;  // M x 128
  Vec global_token;   // 128
};

// Differentiable proposal outputs, one row per proposal.
struct ProposalOutputs {
  Var features;      // M x 128
  Var objectness;    // M x 1
  Var centers;       // M x 3, world coordinates
  Var sizes;         // M x 3, positive
  Var class_logits;  // M x num_classes
  std::vector<Eigen::Index> seed_indices;
  Mat votes;  // M x 3, world coordinates
};

struct SceneTokensVar {
  Var object_tokens;  // M x 128
  Var global_token;   // 1 x 128
};

struct SceneForward {
  ProposalOutputs proposals;
  SceneTokensVar tokens;
  Var embedding;  // 1 x d, unit norm
};

// Farthest point sampling. Starts from the point farthest from the centroid;
// every tie resolves to the lowest index.
std::vector<Eigen::Index> farthest_point_sample(const Mat3X& points, int count);

class SceneEncoder {
 public:
  explicit SceneEncoder(const SceneEncoderConfig& config);
  SceneEncoder(const SceneEncoder&) = delete;
  SceneEncoder& operator=(const SceneEncoder&) = delete;

  // Throws Proposal when the cloud has fewer than M points.
  ProposalOutputs propose(const PointCloud& cloud) const;
  SceneTokensVar refine(const Var& proposal_features) const;
  // Throws DegenerateProjection when the projected vector is zero.
  Var project(const Var& global_token) const;
  SceneForward forward(const PointCloud& cloud) const;

  // Value-only views of the stages above.
  std::vector<ObjectProposal> propose_objects(const PointCloud& cloud) const;
  SceneTokens refine_with_transformer(const std::vector<ObjectProposal>& proposals) const;
  SceneTokens refine_with_transformer(const Mat& features) const;
  Vec project_to_clip_space(const Vec& global_token) const;
  Vec embed(const PointCloud& cloud) const;

  const SceneEncoderConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

 private:
  SceneEncoderConfig config_;
  nn::ParameterStore store_;
  Rng init_rng_;
  nn::Linear point1_, point2_, point3_;
  nn::Linear vote1_, vote2_;
  nn::Linear group1_, group2_;
  nn::Linear head1_, head2_;
  nn::Parameter* cls_token_;
  std::vector<nn::EncoderLayer> refine_layers_;
  nn::Linear projection_;
};

std::vector<ObjectProposal> to_proposals(const ProposalOutputs& outputs);

// ---------------------------------------------------------------- L_det --

struct DetectionLossConfig {
  double positive_radius = 0.3;
  double negative_radius = 0.6;
  double smooth_l1_beta = 0.1;
};

struct DetectionLossResult {
  double total = 0.0;
  double objectness = 0.0;
  double center = 0.0;
  double size = 0.0;
  double classification = 0.0;
  int num_positive = 0;
  int num_negative = 0;
  // Gradients of total with respect to each input.
  Mat grad_objectness, grad_centers, grad_sizes, grad_class_logits;
};

// Each proposal is matched to the annotation with the nearest center; it is
// positive within positive_radius, negative beyond negative_radius, ignored
// otherwise. L_det = BCE(objectness over positives and negatives)
// + smooth-L1(center) + smooth-L1(size) + CE(class), the last three over
// positives; each term is a mean over its support and 0 on empty support.
DetectionLossResult detection_loss(const Mat& objectness, const Mat& centers, const Mat& sizes,
                                   const Mat& class_logits, const std::vector<ObjectAnnotation>& annotations,
                                   const DetectionLossConfig& config = {});

// Autodiff form; `breakdown` receives the per-term values when non-null.
Var detection_loss(const ProposalOutputs& proposals, const std::vector<ObjectAnnotation>& annotations,
                   const DetectionLossConfig& config = {}, DetectionLossResult* breakdown = nullptr);

}  // namespace multiclip
