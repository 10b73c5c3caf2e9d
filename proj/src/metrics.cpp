#include "multiclip/metrics.hpp"

#include "multiclip/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace multiclip {

namespace {

using NGramCounts = std::map<std::vector<std::string>, int>;

NGramCounts ngrams(const std::vector<std::string>& tokens, int n) {
  NGramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<std::string> metric_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(normalize_answer(text));
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

int em_at_1(const std::string& predicted, const std::vector<std::string>& ground_truths) {
  const std::string p = normalize_answer(predicted);
  for (const auto& g : ground_truths) {
    if (normalize_answer(g) == p) return 1;
  }
  return 0;
}

double box_iou(const AxisAlignedBox& a, const AxisAlignedBox& b) {
  const Vec3 lo = a.min_corner().cwiseMax(b.min_corner());
  const Vec3 hi = a.max_corner().cwiseMin(b.max_corner());
  const Vec3 overlap = (hi - lo).cwiseMax(0.0);
  const double inter = overlap.prod();
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double acc_at_iou(const std::vector<AxisAlignedBox>& predicted, const std::vector<AxisAlignedBox>& ground_truth,
                  double threshold) {
  if (predicted.size() != ground_truth.size()) throw Error(ErrorKind::Input, "acc_at_iou: length mismatch");
  if (predicted.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (box_iou(predicted[i], ground_truth[i]) > threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double bleu_n(const std::string& candidate, const std::vector<std::string>& references, int n) {
  if (n < 1 || n > 4) throw Error(ErrorKind::Input, "bleu_n: n must be in 1..4");
  const auto cand = metric_tokens(candidate);
  if (cand.empty() || references.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(metric_tokens(r));

  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const NGramCounts c = ngrams(cand, k);
    NGramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, cnt] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
    }
    int total = 0, matched = 0;
    for (const auto& [g, cnt] : c) {
      total += cnt;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(cnt, it->second);
    }
    double p;
    if (k == 1) {
      if (matched == 0) return 0.0;
      p = static_cast<double>(matched) / total;
    } else if (matched == 0) {
      p = 1.0 / (total + 1.0);
    } else {
      p = static_cast<double>(matched) / total;
    }
    log_sum += std::log(p);
  }
  const double c_len = static_cast<double>(cand.size());
  double r_len = 0.0, best_gap = 1e300;
  for (const auto& r : refs) {
    const double len = static_cast<double>(r.size());
    const double gap = std::abs(len - c_len);
    if (gap < best_gap || (gap == best_gap && len < r_len)) {
      best_gap = gap;
      r_len = len;
    }
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(log_sum / n);
}

double rouge_l(const std::string& candidate, const std::vector<std::string>& references, double beta) {
  const auto cand = metric_tokens(candidate);
  if (cand.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : references) {
    const auto r = metric_tokens(ref);
    if (r.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(cand, r));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(cand.size());
    const double rec = lcs / static_cast<double>(r.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

CiderResult cider(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) throw Error(ErrorKind::Input, "cider: length mismatch");
  if (references.empty()) throw Error(ErrorKind::Input, "cider: empty reference corpus");
  constexpr int kMaxN = 4;
  const double num_items = static_cast<double>(references.size());

  std::vector<std::vector<std::array<NGramCounts, kMaxN>>> ref_grams(references.size());
  std::array<std::map<std::vector<std::string>, int>, kMaxN> df;
  for (std::size_t i = 0; i < references.size(); ++i) {
    std::array<std::set<std::vector<std::string>>, kMaxN> seen;
    for (const auto& r : references[i]) {
      const auto toks = metric_tokens(r);
      std::array<NGramCounts, kMaxN> g;
      for (int n = 1; n <= kMaxN; ++n) {
        g[n - 1] = ngrams(toks, n);
        for (const auto& kv : g[n - 1]) seen[n - 1].insert(kv.first);
      }
      ref_grams[i].push_back(std::move(g));
    }
    for (int n = 0; n < kMaxN; ++n) {
      for (const auto& gram : seen[n]) ++df[n][gram];
    }
  }

  auto weighted = [&](const NGramCounts& counts, int n, double& norm) {
    std::map<std::vector<std::string>, double> v;
    norm = 0.0;
    for (const auto& [g, c] : counts) {
      auto it = df[n].find(g);
      const double idf = std::log(num_items) - std::log(std::max(1.0, it == df[n].end() ? 0.0 : it->second * 1.0));
      const double w = c * idf;
      v[g] = w;
      norm += w * w;
    }
    norm = std::sqrt(norm);
    return v;
  };

  CiderResult out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto toks = metric_tokens(candidates[i]);
    double score = 0.0;
    for (int n = 1; n <= kMaxN; ++n) {
      double cn = 0.0;
      const auto cv = weighted(ngrams(toks, n), n - 1, cn);
      double sum = 0.0;
      for (const auto& rg : ref_grams[i]) {
        double rn = 0.0;
        const auto rv = weighted(rg[n - 1], n - 1, rn);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, w] : cv) {
          auto it = rv.find(g);
          if (it != rv.end()) dot += w * it->second;
        }
        sum += dot / (cn * rn);
      }
      if (!ref_grams[i].empty()) score += sum / static_cast<double>(ref_grams[i].size());
    }
    out.per_item.push_back(10.0 * score / kMaxN);
  }
  double total = 0.0;
  for (double s : out.per_item) total += s;
  out.score = out.per_item.empty() ? 0.0 : total / static_cast<double>(out.per_item.size());
  return out;
}

EvalReport evaluate_answers(const std::vector<std::string>& predicted,
                            const std::vector<std::vector<std::string>>& ground_truths) {
  if (predicted.size() != ground_truths.size()) throw Error(ErrorKind::Input, "evaluate_answers: length mismatch");
  EvalReport r;
  r.num_questions = static_cast<int>(predicted.size());
  r.has_language = true;
  if (predicted.empty()) return r;
  double em = 0, b1 = 0, b4 = 0, rl = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    em += em_at_1(predicted[i], ground_truths[i]);
    b1 += bleu_n(predicted[i], ground_truths[i], 1);
    b4 += bleu_n(predicted[i], ground_truths[i], 4);
    rl += rouge_l(predicted[i], ground_truths[i]);
  }
  const double n = static_cast<double>(predicted.size());
  r.em_at_1 = em / n;
  r.bleu_1 = b1 / n;
  r.bleu_4 = b4 / n;
  r.rouge_l = rl / n;
  r.cider = cider(predicted, ground_truths).score;
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["em_at_1"] = em_at_1;
  if (has_language) {
    j["bleu_1"] = bleu_1;
    j["bleu_4"] = bleu_4;
    j["rouge_l"] = rouge_l;
    j["cider"] = cider;
  }
  if (has_localization) {
    j["acc_at_025"] = acc_at_025;
    j["acc_at_05"] = acc_at_05;
    j["num_localized"] = num_localized;
  }
  j["num_questions"] = num_questions;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return std::string(buf);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  std::ostringstream head, row;
  head << "| EM@1 ";
  row << "| " << pct(em_at_1) << ' ';
  if (has_language) {
    head << "| BLEU-1 | BLEU-4 | ROUGE | CIDEr ";
    row << "| " << pct(bleu_1) << " | " << pct(bleu_4) << " | " << pct(rouge_l) << " | " << num(cider) << ' ';
  }
  if (has_localization) {
    head << "| Acc@0.25 | Acc@0.5 ";
    row << "| " << pct(acc_at_025) << " | " << pct(acc_at_05) << ' ';
  }
  head << "| N |";
  row << "| " << num_questions << " |";
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace multiclip
