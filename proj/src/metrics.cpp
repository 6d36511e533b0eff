#include "relabel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "relabel/error.hpp"
#include "relabel/hash.hpp"
#include "relabel/tokenize.hpp"

namespace relabel {

namespace {

// n-grams joined with a unit separator so tokens cannot collide.
std::unordered_map<std::string, int> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double sentence_bleu(std::span<const std::string> candidate, std::span<const std::string> reference,
                     const BleuConfig& cfg) {
  if (cfg.max_n < 1) throw Error(ErrorCode::invalid_argument, "BLEU max_n must be >= 1");
  if (reference.empty()) throw Error(ErrorCode::invalid_argument, "BLEU reference is empty");
  if (candidate.empty()) return 0.0;

  const std::size_t c = candidate.size();
  const std::size_t r = reference.size();
  const std::size_t max_n = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_n), c);

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matches += static_cast<std::size_t>(std::min(count, it->second));
    }
    const std::size_t total = c - n + 1;
    double precision;
    if (matches > 0) {
      precision = static_cast<double>(matches) / static_cast<double>(total);
    } else if (n >= 2 && cfg.smoothing == BleuSmoothing::add_one_on_zero_counts) {
      precision = 1.0 / static_cast<double>(total + 1);
    } else {
      return 0.0;
    }
    log_sum += std::log(precision);
  }
  const double brevity =
      c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return brevity * std::exp(log_sum / static_cast<double>(max_n));
}

std::size_t common_token_count(std::span<const std::string> a, std::span<const std::string> b) {
  std::unordered_set<std::string_view> left(a.begin(), a.end());
  std::unordered_set<std::string_view> shared;
  for (const auto& t : b) {
    if (left.count(t)) shared.insert(t);
  }
  return shared.size();
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

PRF1 prf1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF1 m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  const double pr = m.precision + m.recall;
  m.f1 = pr > 0 ? 2 * m.precision * m.recall / pr : 0.0;
  return m;
}

PRF1 span_prf1(std::span<const Span> gold, std::span<const Span> predicted) {
  const std::set<Span> g(gold.begin(), gold.end());
  const std::set<Span> p(predicted.begin(), predicted.end());
  std::size_t tp = 0;
  for (const auto& s : p) tp += g.count(s);
  return prf1_from_counts(tp, p.size() - tp, g.size() - tp);
}

double accuracy(std::span<const std::string> gold, std::span<const std::string> predicted) {
  if (gold.size() != predicted.size()) {
    throw Error(ErrorCode::invalid_argument, "accuracy: length mismatch");
  }
  if (gold.empty()) throw Error(ErrorCode::invalid_argument, "accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error(ErrorCode::invalid_argument, "auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Ranks are 1-based; the tie group [i, j] shares the midrank.
    const double midrank = static_cast<double>(i + j + 2) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw Error(ErrorCode::invalid_argument, "auc: labels must be 0 or 1");
      if (y == 1) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::invalid_argument, "auc: needs at least one positive and one negative");
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

SimilarityKey similarity_sort_key(std::string_view payload, int bands, std::uint64_t seed) {
  if (bands < 1) throw Error(ErrorCode::invalid_argument, "similarity key needs at least one band");
  const auto tokens = tokenize(payload);
  SimilarityKey key;
  key.text = normalize_text(payload);

  const std::size_t width = tokens.size() >= 3 ? 3 : 1;
  std::vector<std::uint64_t> shingles;
  for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
    std::string s = tokens[i];
    for (std::size_t k = 1; k < width; ++k) {
      s += '\x1f';
      s += tokens[i + k];
    }
    shingles.push_back(hash64(s));
  }
  std::sort(shingles.begin(), shingles.end());
  shingles.erase(std::unique(shingles.begin(), shingles.end()), shingles.end());

  const int functions = bands * kMinHashRows;
  std::vector<std::uint64_t> minima(static_cast<std::size_t>(functions),
                                    std::numeric_limits<std::uint64_t>::max());
  for (int f = 0; f < functions; ++f) {
    const std::uint64_t salt = mix64(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(f));
    for (auto s : shingles) minima[f] = std::min(minima[f], mix64(s ^ salt));
  }
  key.bands.reserve(static_cast<std::size_t>(bands));
  for (int b = 0; b < bands; ++b) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (int r = 0; r < kMinHashRows; ++r) h = mix64(h ^ minima[b * kMinHashRows + r]);
    key.bands.push_back(h);
  }
  return key;
}

}  // namespace relabel
