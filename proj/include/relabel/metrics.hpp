#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relabel/types.hpp"

namespace relabel {

enum class BleuSmoothing { none, add_one_on_zero_counts };

struct BleuConfig {
  int max_n = 4;
  BleuSmoothing smoothing = BleuSmoothing::add_one_on_zero_counts;
};

// Sentence-level BLEU over n = 1..min(max_n, |candidate|). Zero unigram
// overlap always yields 0; with add-one smoothing a zero count for n >= 2
// becomes 1 / (total + 1). Throws invalid_argument on an empty reference.
double sentence_bleu(std::span<const std::string> candidate, std::span<const std::string> reference,
                     const BleuConfig& cfg = {});

// Size of the intersection of the two token sets.
std::size_t common_token_count(std::span<const std::string> a, std::span<const std::string> b);

// Intersection over union; object classes are ignored.
double iou(const Box& a, const Box& b);

struct PRF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// 0/0 ratios are 0.
PRF1 prf1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

// Exact (start, end, class) matching; duplicate spans count once.
PRF1 span_prf1(std::span<const Span> gold, std::span<const Span> predicted);

double accuracy(std::span<const std::string> gold, std::span<const std::string> predicted);

// Mann-Whitney AUC by midrank sum; ties contribute one half. Requires at least
// one positive and one negative label.
double auc(std::span<const int> labels, std::span<const double> scores);

struct SimilarityKey {
  std::vector<std::uint64_t> bands;
  std::string text;

  auto operator<=>(const SimilarityKey&) const = default;
};

inline constexpr int kMinHashRows = 4;

// MinHash band signature over 3-token shingles (unigrams for texts shorter
// than three tokens), followed by the normalized text.
SimilarityKey similarity_sort_key(std::string_view payload, int bands = 16, std::uint64_t seed = 0);

}  // namespace relabel
