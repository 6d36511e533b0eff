#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "relabel/metrics.hpp"
#include "relabel/tokenize.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace relabel;
using test::error_of;
using test::pairwise_auc;
using test::reference_bleu;

namespace {

using Tokens = std::vector<std::string>;

Tokens toks(std::string_view s) { return tokenize(s); }

}  // namespace

TEST_CASE("tokenizer normalizes and splits on Unicode whitespace") {
  CHECK(tokenize("Café CAT") == Tokens{"café", "cat"});
  CHECK(tokenize("Café") == tokenize("Café"));
  CHECK(tokenize("a b　c\t d\n") == Tokens{"a", "b", "c", "d"});
  CHECK(tokenize("   ").empty());
}

TEST_CASE("sentence_bleu examples") {
  CHECK(sentence_bleu(toks("the cat sat"), toks("the cat sat")) == doctest::Approx(1.0));
  CHECK(sentence_bleu(toks("abc"), toks("xyz")) == 0.0);
  // n_eff = 3, all precisions 1, BP = exp(1 - 4/3).
  CHECK(sentence_bleu(toks("the cat sat"), toks("the cat sat down")) ==
        doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(1e-12));
  CHECK(std::exp(-1.0 / 3.0) == doctest::Approx(0.716531).epsilon(1e-6));
  CHECK(sentence_bleu({}, toks("a")) == 0.0);
  CHECK(error_of([] { sentence_bleu(toks("a"), {}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("sentence_bleu matches the reference implementation") {
  std::mt19937 rng(11);
  const Tokens vocab{"a", "b", "c", "d", "e", "f"};
  auto sentence = [&] {
    Tokens t(1 + rng() % 8);
    for (auto& w : t) w = vocab[rng() % vocab.size()];
    return t;
  };
  for (int i = 0; i < 200; ++i) {
    const Tokens c = sentence(), r = sentence();
    CHECK(std::abs(sentence_bleu(c, r) - reference_bleu(c, r, 4)) < 1e-9);
  }
}

TEST_CASE("common_token_count uses set semantics") {
  CHECK(common_token_count(toks("a b"), toks("a b")) == 2);
  CHECK(common_token_count(toks("a b"), toks("c d")) == 0);
  CHECK(common_token_count(toks("a a b"), toks("a c")) == 1);
}

TEST_CASE("iou") {
  const Box a{0, 0, 2, 2, "x"}, b{1, 1, 3, 3, "x"};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6, "x"}) == 0.0);
  CHECK(iou(a, b) == 1.0 / 7.0);
  CHECK(iou(Box{0, 0, 1, 1, "x"}, Box{1, 0, 2, 1, "x"}) == 0.0);  // touching edge

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 10);
  for (int i = 0; i < 500; ++i) {
    auto box = [&] {
      const double x = u(rng), y = u(rng);
      return Box{x, y, x + 0.1 + u(rng), y + 0.1 + u(rng), "x"};
    };
    const Box p = box(), q = box();
    const double v = iou(p, q);
    CHECK(v == iou(q, p));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("span_prf1") {
  const std::vector<Span> gold{{0, 2, "per"}, {3, 4, "loc"}, {5, 7, "org"}};
  auto same = span_prf1(gold, gold);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const std::vector<Span> g1{{0, 2, "per"}};
  const std::vector<Span> p1{{0, 2, "per"}, {5, 7, "loc"}};
  const auto r = span_prf1(g1, p1);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0));

  const auto empty = span_prf1(g1, {});
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);

  // Swapping gold and prediction swaps precision and recall.
  const auto swapped = span_prf1(p1, g1);
  CHECK(swapped.precision == r.recall);
  CHECK(swapped.recall == r.precision);
}

TEST_CASE("accuracy") {
  CHECK(accuracy(Tokens{"a", "b"}, Tokens{"a", "b"}) == 1.0);
  CHECK(accuracy(Tokens{"a", "b", "c"}, Tokens{"a", "b", "d"}) == doctest::Approx(2.0 / 3.0));
  CHECK(accuracy(Tokens{"a"}, Tokens{"b"}) == 0.0);
  CHECK(error_of([] { accuracy(Tokens{"a"}, Tokens{"a", "b"}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<int>{1, 0, 1}, std::vector<double>{0.9, 0.8, 0.3}) == 0.5);
  CHECK(auc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.2, 0.3, 0.4}) == 1.0);
  CHECK(auc(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.5, 0.5, 0.5, 0.5}) == 0.5);
  CHECK(error_of([] { auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}); }) ==
        ErrorCode::invalid_argument);
}

TEST_CASE("auc equals the pairwise count and is rank invariant") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 300);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % 2);
      scores[i] = static_cast<double>(rng() % 20) / 20.0;  // many ties
    }
    labels[0] = 0;
    labels[1] = 1;
    const double a = auc(labels, scores);
    CHECK(a == pairwise_auc(labels, scores));
    std::vector<double> moved(n);
    for (int i = 0; i < n; ++i) moved[i] = std::exp(3.0 * scores[i]) + 7.0;
    CHECK(auc(labels, moved) == a);
  }
}

TEST_CASE("similarity_sort_key") {
  CHECK(similarity_sort_key("the cat sat on the mat") == similarity_sort_key("the cat sat on the mat"));
  CHECK(similarity_sort_key("The Cat") == similarity_sort_key("the cat"));

  int differing = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = similarity_sort_key("alpha beta gamma delta epsilon zeta", 16, seed);
    const auto b = similarity_sort_key("one two three four five six", 16, seed);
    if (a.bands.front() != b.bands.front()) ++differing;
  }
  CHECK(differing >= 95);
}
