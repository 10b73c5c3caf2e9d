#pragma once

// Answer and caption-style evaluation metrics. Text is normalized (lowercase,
// trimmed, whitespace collapsed) and split on spaces before n-gram counting.

#include "multiclip/scene_data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace multiclip {

std::vector<std::string> metric_tokens(const std::string& text);

// 1 when the normalized prediction equals any normalized ground truth.
int em_at_1(const std::string& predicted, const std::vector<std::string>& ground_truths);

double box_iou(const AxisAlignedBox& a, const AxisAlignedBox& b);

// Mean of [iou > threshold]; throws Input on length mismatch.
double acc_at_iou(const std::vector<AxisAlignedBox>& predicted, const std::vector<AxisAlignedBox>& ground_truth,
                  double threshold);

// Sentence BLEU-n: clipped precisions p_1..p_n, geometric mean, brevity
// penalty against the closest reference length (shorter on ties). For k >= 2
// a zero match count is smoothed to 1 / (candidate k-grams + 1).
double bleu_n(const std::string& candidate, const std::vector<std::string>& references, int n);

// Max over references of the LCS F-measure with beta = 1.2.
double rouge_l(const std::string& candidate, const std::vector<std::string>& references, double beta = 1.2);

struct CiderResult {
  double score = 0.0;  // mean of per_item
  std::vector<double> per_item;
};

// Plain CIDEr: n = 1..4 TF-IDF cosine averaged over references and n, times
// 10. Document frequencies come from the reference sets of all items.
CiderResult cider(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references);

struct EvalReport {
  double em_at_1 = 0.0;
  double acc_at_025 = 0.0;
  double acc_at_05 = 0.0;
  double bleu_1 = 0.0;
  double bleu_4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  int num_questions = 0;
  int num_localized = 0;  // questions with a referred box
  bool has_localization = false;
  bool has_language = false;

  std::string to_json() const;
  // Column layout: EM@1, BLEU-1, BLEU-4, ROUGE, CIDEr, Acc@0.25, Acc@0.5.
  std::string to_table() const;
};

// Answer metrics for aligned predictions and ground-truth sets.
EvalReport evaluate_answers(const std::vector<std::string>& predicted,
                            const std::vector<std::vector<std::string>>& ground_truths);

}  // namespace multiclip
