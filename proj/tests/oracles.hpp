#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "relabel/types.hpp"

// Independent implementations written from the definitions, shared by the
// unit tests and the acceptance run.
namespace test {

using Tokens = std::vector<std::string>;

// Straightforward BLEU written from the definition, independent of the
// library's counting code.
inline double reference_bleu(const Tokens& cand, const Tokens& ref, int max_n) {
  const int n_eff = std::min<int>(max_n, static_cast<int>(cand.size()));
  if (n_eff == 0) return 0.0;
  double log_sum = 0;
  for (int n = 1; n <= n_eff; ++n) {
    std::map<std::string, int> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) {
      std::string g;
      for (int k = 0; k < n; ++k) g += ref[i + k] + "\x01";
      ref_counts[g]++;
    }
    int total = 0;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) {
      std::string g;
      for (int k = 0; k < n; ++k) g += cand[i + k] + "\x01";
      cand_counts[g]++;
      total++;
    }
    int clipped = 0;
    for (const auto& [g, c] : cand_counts) {
      auto it = ref_counts.find(g);
      clipped += std::min(c, it == ref_counts.end() ? 0 : it->second);
    }
    double p;
    if (clipped == 0) {
      if (n == 1) return 0.0;
      p = 1.0 / (total + 1.0);
    } else {
      p = static_cast<double>(clipped) / total;
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / n_eff);
}

inline double pairwise_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) twice += 2;
      else if (scores[i] == scores[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pairs);
}

// Train items whose prediction differs from the label, in item order.
inline std::vector<std::string> mismatch_scan(const relabel::DatasetVersion& v,
                                              const std::vector<relabel::Prediction>& preds) {
  std::map<std::string, const relabel::Label*> by_id;
  for (const auto& p : preds) by_id[p.item_id] = &p.value;
  std::vector<std::string> out;
  for (const auto& it : v.items) {
    if (it.split != relabel::Split::train) continue;
    auto f = by_id.find(it.id);
    if (f != by_id.end() && !(*f->second == it.label())) out.push_back(it.id);
  }
  return out;
}

}  // namespace test
