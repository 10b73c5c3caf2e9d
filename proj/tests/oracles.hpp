#pragma once

// Independent reference implementations used as test oracles. They favor
// plain loops and string keys over speed and share no code with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace oracle {

inline long double contrastive(const Eigen::MatrixXd& a, const Eigen::MatrixXd& p, double tau) {
  const Eigen::Index b = a.rows();
  long double total = 0.0L;
  for (Eigen::Index i = 0; i < b; ++i) {
    long double denom = 0.0L;
    for (Eigen::Index j = 0; j < b; ++j) {
      long double dot = 0.0L;
      for (Eigen::Index k = 0; k < a.cols(); ++k) dot += static_cast<long double>(a(i, k)) * p(j, k);
      denom += std::exp(dot / tau);
    }
    long double self = 0.0L;
    for (Eigen::Index k = 0; k < a.cols(); ++k) self += static_cast<long double>(a(i, k)) * p(i, k);
    total += std::log(denom) - self / tau;
  }
  return total / static_cast<long double>(b);
}

inline std::vector<std::string> words(const std::string& text) {
  std::string lower;
  for (char ch : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  std::istringstream ss(lower);
  std::vector<std::string> out;
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

inline std::vector<std::string> grams(const std::vector<std::string>& w, int n) {
  std::vector<std::string> out;
  for (int i = 0; i + n <= static_cast<int>(w.size()); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) key += w[static_cast<std::size_t>(i + k)] + '\x1f';
    out.push_back(key);
  }
  return out;
}

inline int occurrences(const std::vector<std::string>& list, const std::string& key) {
  return static_cast<int>(std::count(list.begin(), list.end(), key));
}

inline double bleu(const std::string& candidate, const std::vector<std::string>& refs, int n) {
  const auto c = words(candidate);
  if (c.empty() || refs.empty()) return 0.0;
  double log_p = 0.0;
  for (int k = 1; k <= n; ++k) {
    const auto cg = grams(c, k);
    std::unordered_set<std::string> unique(cg.begin(), cg.end());
    int matched = 0;
    for (const auto& g : unique) {
      int best = 0;
      for (const auto& r : refs) best = std::max(best, occurrences(grams(words(r), k), g));
      matched += std::min(occurrences(cg, g), best);
    }
    const int total = static_cast<int>(cg.size());
    double p;
    if (matched > 0) {
      p = static_cast<double>(matched) / total;
    } else if (k == 1) {
      return 0.0;
    } else {
      p = 1.0 / (total + 1);
    }
    log_p += std::log(p) / n;
  }
  int ref_len = -1;
  for (const auto& r : refs) {
    const int len = static_cast<int>(words(r).size());
    const int c_len = static_cast<int>(c.size());
    if (ref_len < 0 || std::abs(len - c_len) < std::abs(ref_len - c_len) ||
        (std::abs(len - c_len) == std::abs(ref_len - c_len) && len < ref_len)) {
      ref_len = len;
    }
  }
  const double c_len = static_cast<double>(c.size());
  const double bp = c_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / c_len);
  return bp * std::exp(log_p);
}

inline int lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

inline double rouge_l(const std::string& candidate, const std::vector<std::string>& refs, double beta = 1.2) {
  const auto c = words(candidate);
  double best = 0.0;
  for (const auto& r : refs) {
    const auto w = words(r);
    const int l = lcs(c, w);
    if (l == 0) continue;
    const double p = static_cast<double>(l) / c.size();
    const double rec = static_cast<double>(l) / w.size();
    best = std::max(best, (1 + beta * beta) * p * rec / (rec + beta * beta * p));
  }
  return best;
}

inline std::vector<double> cider(const std::vector<std::string>& cands,
                                 const std::vector<std::vector<std::string>>& refs) {
  const double n_items = static_cast<double>(refs.size());
  std::vector<double> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double score = 0.0;
    for (int n = 1; n <= 4; ++n) {
      auto df = [&](const std::string& g) {
        int count = 0;
        for (const auto& set : refs) {
          bool any = false;
          for (const auto& r : set) any = any || occurrences(grams(words(r), n), g) > 0;
          count += any;
        }
        return static_cast<double>(count);
      };
      auto vec = [&](const std::string& text) {
        std::unordered_map<std::string, double> v;
        const auto g = grams(words(text), n);
        for (const auto& key : g) v[key] = occurrences(g, key) * (std::log(n_items) - std::log(std::max(1.0, df(key))));
        return v;
      };
      auto norm = [](const std::unordered_map<std::string, double>& v) {
        double s = 0.0;
        for (const auto& kv : v) s += kv.second * kv.second;
        return std::sqrt(s);
      };
      const auto cv = vec(cands[i]);
      double sum = 0.0;
      for (const auto& r : refs[i]) {
        const auto rv = vec(r);
        const double den = norm(cv) * norm(rv);
        if (den == 0.0) continue;
        double dot = 0.0;
        for (const auto& kv : cv) {
          auto it = rv.find(kv.first);
          if (it != rv.end()) dot += kv.second * it->second;
        }
        sum += dot / den;
      }
      if (!refs[i].empty()) score += sum / refs[i].size();
    }
    out.push_back(10.0 * score / 4.0);
  }
  return out;
}

}  // namespace oracle
