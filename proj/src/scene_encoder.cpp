#include "multiclip/scene_encoder.hpp"

#include "multiclip/error.hpp"
#include "multiclip/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace multiclip {

std::vector<Eigen::Index> farthest_point_sample(const Mat3X& points, int count) {
  const Eigen::Index n = points.rows();
  if (count <= 0) return {};
  if (n < count) throw Error(ErrorKind::Proposal, "farthest_point_sample: fewer points than samples");
  const Eigen::RowVector3d c = points.colwise().mean();
  Eigen::Index first = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = (points.row(i) - c).squaredNorm();
    if (d > best) {
      best = d;
      first = i;
    }
  }
  std::vector<Eigen::Index> picked{first};
  Eigen::VectorXd mind(n);
  for (Eigen::Index i = 0; i < n; ++i) mind(i) = (points.row(i) - points.row(first)).squaredNorm();
  while (static_cast<int>(picked.size()) < count) {
    Eigen::Index arg = 0;
    double far = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mind(i) > far) {
        far = mind(i);
        arg = i;
      }
    }
    picked.push_back(arg);
    for (Eigen::Index i = 0; i < n; ++i) {
      mind(i) = std::min(mind(i), (points.row(i) - points.row(arg)).squaredNorm());
    }
  }
  return picked;
}

SceneEncoder::SceneEncoder(const SceneEncoderConfig& config) : config_(config), init_rng_(config.init_seed) {
  if (config.num_proposals <= 0 || config.num_classes <= 0 || config.group_samples <= 0 ||
      config.group_radius <= 0 || config.neighborhood_cell <= 0 || config.embed_dim <= 0 ||
      config.refine_layers < 0) {
    throw Error(ErrorKind::Config, "scene encoder: invalid configuration");
  }
  const int f = config.point_feature;
  const int d = kProposalFeatureDim;
  point1_ = nn::Linear(store_, "scene.point1", 6, config.point_hidden, init_rng_);
  point2_ = nn::Linear(store_, "scene.point2", config.point_hidden, f, init_rng_);
  point3_ = nn::Linear(store_, "scene.point3", 2 * f, f, init_rng_);
  vote1_ = nn::Linear(store_, "scene.vote1", f, f, init_rng_);
  vote2_ = nn::Linear(store_, "scene.vote2", f, 3, init_rng_);
  vote2_.weight()->value() *= 0.1;
  group1_ = nn::Linear(store_, "scene.group1", f + 3, d, init_rng_);
  group2_ = nn::Linear(store_, "scene.group2", d, d, init_rng_);
  head1_ = nn::Linear(store_, "scene.head1", d, d, init_rng_);
  head2_ = nn::Linear(store_, "scene.head2", d, 7 + config.num_classes, init_rng_);
  Mat cls(1, d);
  for (Eigen::Index i = 0; i < d; ++i) cls(0, i) = init_rng_.normal(0.0, 0.02);
  cls_token_ = store_.add("scene.cls", cls);
  for (int l = 0; l < config.refine_layers; ++l) {
    refine_layers_.emplace_back(store_, "scene.refine.layer" + std::to_string(l), d, config.heads,
                                config.ffn_hidden, init_rng_);
  }
  projection_ = nn::Linear(store_, "scene.proj", d, config.embed_dim, init_rng_, config.projection_bias);
}

ProposalOutputs SceneEncoder::propose(const PointCloud& cloud) const {
  cloud.validate();
  const Eigen::Index n = cloud.size();
  const int m = config_.num_proposals;
  if (n < m) {
    throw Error(ErrorKind::Proposal, "cloud has " + std::to_string(n) + " points, need at least " +
                                         std::to_string(m) + " for proposals");
  }
  const Vec3 c = cloud.centroid();
  const Mat3X local = cloud.points.rowwise() - c.transpose();

  Mat input(n, 6);
  input << local, cloud.colors;
  const Var x = ad::constant(input);
  const Var h2 = ad::relu(point2_.forward(ad::relu(point1_.forward(x))));

  // Neighborhood context: max over points sharing a voxel cell.
  std::map<std::array<long, 3>, Eigen::Index> cells;
  std::vector<Eigen::Index> cell_of(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::array<long, 3> key;
    for (int a = 0; a < 3; ++a) key[a] = static_cast<long>(std::floor(local(i, a) / config_.neighborhood_cell));
    auto it = cells.emplace(key, static_cast<Eigen::Index>(cells.size())).first;
    cell_of[static_cast<std::size_t>(i)] = it->second;
  }
  const Var pooled = ad::segment_max(h2, cell_of, static_cast<Eigen::Index>(cells.size()));
  const std::array<Var, 2> ctx{h2, ad::gather_rows(pooled, cell_of)};
  const Var feat = ad::relu(point3_.forward(ad::concat_cols(ctx)));

  // Seeds and votes.
  const std::vector<Eigen::Index> seeds = farthest_point_sample(local, m);
  Mat seed_xyz(m, 3);
  for (int s = 0; s < m; ++s) seed_xyz.row(s) = local.row(seeds[static_cast<std::size_t>(s)]);
  const Var seed_feat = ad::gather_rows(feat, seeds);
  const Var offset = vote2_.forward(ad::relu(vote1_.forward(seed_feat)));
  const Var votes = ad::add(ad::constant(seed_xyz), offset);

  // Ball query around each vote.
  const double r = config_.group_radius;
  const double r2 = r * r;
  std::vector<Eigen::Index> flat, group_of;
  std::vector<std::pair<double, Eigen::Index>> cand;
  for (int s = 0; s < m; ++s) {
    const Eigen::RowVector3d v = votes.value().row(s);
    cand.clear();
    Eigen::Index nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (local.row(i) - v).squaredNorm();
      if (d < nearest_d) {
        nearest_d = d;
        nearest = i;
      }
      if (d <= r2) cand.emplace_back(d, i);
    }
    if (cand.empty()) cand.emplace_back(nearest_d, nearest);
    const std::size_t k = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(config_.group_samples));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) {
      flat.push_back(cand[j].second);
      group_of.push_back(s);
    }
  }
  const Var members = ad::gather_rows(feat, flat);
  Mat member_xyz(static_cast<Eigen::Index>(flat.size()), 3);
  for (std::size_t j = 0; j < flat.size(); ++j) member_xyz.row(static_cast<Eigen::Index>(j)) = local.row(flat[j]);
  const Var rel = ad::scale(ad::sub(ad::constant(member_xyz), ad::gather_rows(votes, group_of)), 1.0 / r);
  const std::array<Var, 2> gin{members, rel};
  const Var g = ad::relu(group2_.forward(ad::relu(group1_.forward(ad::concat_cols(gin)))));
  const Var features = ad::segment_max(g, group_of, m);

  const Var out = head2_.forward(ad::relu(head1_.forward(features)));
  ProposalOutputs po;
  po.features = features;
  po.objectness = ad::slice_cols(out, 0, 1);
  const Mat shift = Mat::Constant(m, 3, 0.0).rowwise() + c.transpose();
  po.centers = ad::add(ad::add(votes, ad::slice_cols(out, 1, 3)), ad::constant(shift));
  po.sizes = ad::add_constant(ad::softplus(ad::slice_cols(out, 4, 3)), 0.01);
  po.class_logits = ad::slice_cols(out, 7, config_.num_classes);
  po.seed_indices = seeds;
  po.votes = votes.value() + shift;
  return po;
}

SceneTokensVar SceneEncoder::refine(const Var& proposal_features) const {
  if (proposal_features.cols() != kProposalFeatureDim) {
    throw Error(ErrorKind::Input, "refine: proposal features must have 128 columns");
  }
  const std::array<Var, 2> parts{cls_token_->var(), proposal_features};
  Var h = ad::concat_rows(parts);
  for (const auto& layer : refine_layers_) h = layer.forward(h);
  return {ad::slice_rows(h, 1, proposal_features.rows()), ad::slice_rows(h, 0, 1)};
}

Var SceneEncoder::project(const Var& global_token) const {
  const Var z = projection_.forward(global_token);
  if (z.value().norm() <= 1e-12) throw Error(ErrorKind::DegenerateProjection, "scene embedding projected to zero");
  return ad::l2_normalize_rows(z);
}

SceneForward SceneEncoder::forward(const PointCloud& cloud) const {
  SceneForward f;
  f.proposals = propose(cloud);
  f.tokens = refine(f.proposals.features);
  f.embedding = project(f.tokens.global_token);
  return f;
}

std::vector<ObjectProposal> to_proposals(const ProposalOutputs& o) {
  std::vector<ObjectProposal> out;
  for (Eigen::Index i = 0; i < o.features.rows(); ++i) {
    ObjectProposal p;
    p.feature = o.features.value().row(i).transpose();
    p.box.center = o.centers.value().row(i).transpose();
    p.box.size = o.sizes.value().row(i).transpose();
    p.objectness_logit = o.objectness.value()(i, 0);
    p.class_logits = o.class_logits.value().row(i).transpose();
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ObjectProposal> SceneEncoder::propose_objects(const PointCloud& cloud) const {
  return to_proposals(propose(cloud));
}

SceneTokens SceneEncoder::refine_with_transformer(const Mat& features) const {
  const SceneTokensVar t = refine(ad::constant(features));
  return {t.object_tokens.value(), t.global_token.value().row(0).transpose()};
}

SceneTokens SceneEncoder::refine_with_transformer(const std::vector<ObjectProposal>& proposals) const {
  if (proposals.empty()) throw Error(ErrorKind::Input, "refine: no proposals");
  Mat f(static_cast<Eigen::Index>(proposals.size()), kProposalFeatureDim);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (proposals[i].feature.size() != kProposalFeatureDim) {
      throw Error(ErrorKind::Input, "refine: proposal feature must have 128 entries");
    }
    f.row(static_cast<Eigen::Index>(i)) = proposals[i].feature.transpose();
  }
  return refine_with_transformer(f);
}

Vec SceneEncoder::project_to_clip_space(const Vec& global_token) const {
  return project(ad::constant(global_token.transpose())).value().row(0).transpose();
}

Vec SceneEncoder::embed(const PointCloud& cloud) const {
  return forward(cloud).embedding.value().row(0).transpose();
}

DetectionLossResult detection_loss(const Mat& objectness, const Mat& centers, const Mat& sizes,
                                   const Mat& class_logits, const std::vector<ObjectAnnotation>& annotations,
                                   const DetectionLossConfig& config) {
  const Eigen::Index m = centers.rows();
  if (objectness.rows() != m || objectness.cols() != 1 || centers.cols() != 3 || sizes.rows() != m ||
      sizes.cols() != 3 || class_logits.rows() != m) {
    throw Error(ErrorKind::Input, "detection_loss: inconsistent proposal shapes");
  }
  DetectionLossResult r;
  r.grad_objectness = Mat::Zero(m, 1);
  r.grad_centers = Mat::Zero(m, 3);
  r.grad_sizes = Mat::Zero(m, 3);
  r.grad_class_logits = Mat::Zero(m, class_logits.cols());

  std::vector<int> match(static_cast<std::size_t>(m), -1);
  std::vector<int> label(static_cast<std::size_t>(m), -1);  // 1 pos, 0 neg, -1 ignore
  for (Eigen::Index i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < annotations.size(); ++a) {
      const double d = (centers.row(i).transpose() - annotations[a].box.center).norm();
      if (d < best) {
        best = d;
        match[static_cast<std::size_t>(i)] = static_cast<int>(a);
      }
    }
    if (best < config.positive_radius) label[static_cast<std::size_t>(i)] = 1;
    else if (best > config.negative_radius) label[static_cast<std::size_t>(i)] = 0;
  }
  for (int l : label) {
    if (l == 1) ++r.num_positive;
    if (l == 0) ++r.num_negative;
  }

  const int nobj = r.num_positive + r.num_negative;
  if (nobj > 0) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const int l = label[static_cast<std::size_t>(i)];
      if (l < 0) continue;
      const double x = objectness(i, 0);
      r.objectness += (loss::log1p_exp(x) - l * x) / nobj;
      r.grad_objectness(i, 0) = (loss::stable_sigmoid(x) - l) / nobj;
    }
  }
  if (r.num_positive > 0) {
    const double inv = 1.0 / r.num_positive;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (label[static_cast<std::size_t>(i)] != 1) continue;
      const ObjectAnnotation& a = annotations[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])];
      const auto c = loss::smooth_l1_sum(centers.row(i), a.box.center.transpose(), config.smooth_l1_beta);
      const auto s = loss::smooth_l1_sum(sizes.row(i), a.box.size.transpose(), config.smooth_l1_beta);
      if (a.class_id < 0 || a.class_id >= class_logits.cols()) {
        throw Error(ErrorKind::Input, "detection_loss: class id out of range");
      }
      const auto ce = loss::softmax_cross_entropy(class_logits.row(i), a.class_id);
      r.center += c.value * inv;
      r.size += s.value * inv;
      r.classification += ce.value * inv;
      r.grad_centers.row(i) = c.grad * inv;
      r.grad_sizes.row(i) = s.grad * inv;
      r.grad_class_logits.row(i) = ce.grad * inv;
    }
  }
  r.total = r.objectness + r.center + r.size + r.classification;
  return r;
}

Var detection_loss(const ProposalOutputs& p, const std::vector<ObjectAnnotation>& annotations,
                   const DetectionLossConfig& config, DetectionLossResult* breakdown) {
  DetectionLossResult r = detection_loss(p.objectness.value(), p.centers.value(), p.sizes.value(),
                                         p.class_logits.value(), annotations, config);
  Var out = ad::fused_scalar(r.total, {p.objectness, p.centers, p.sizes, p.class_logits},
                             {r.grad_objectness, r.grad_centers, r.grad_sizes, r.grad_class_logits});
  if (breakdown) *breakdown = std::move(r);
  return out;
}

}  // namespace multiclip
