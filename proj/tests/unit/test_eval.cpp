#include "bpgpt/error.hpp"
#include "bpgpt/eval.hpp"
#include "bpgpt/prompting.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace bpgpt;
using namespace bpgpt::eval;
using ag::Matrix;

namespace {

class TableEmbedding : public EmbeddingProvider {
 public:
  explicit TableEmbedding(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
  Matrix embed(const Words& words) const override {
    Matrix m(Eigen::Index(words.size()), dim());
    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto& v = table_.at(words[i]);
      for (std::size_t j = 0; j < v.size(); ++j) m(Eigen::Index(i), Eigen::Index(j)) = v[j];
    }
    return m;
  }
  int dim() const override { return int(table_.begin()->second.size()); }

 private:
  std::map<std::string, std::vector<double>> table_;
};

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

// Greedy matching by explicit double loops.
double bertscore_oracle(const Matrix& c, const Matrix& r) {
  double p = 0.0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    double best = -2.0;
    for (Eigen::Index j = 0; j < r.rows(); ++j) best = std::max(best, cosine(c.row(i), r.row(j)));
    p += best;
  }
  p /= double(c.rows());
  double rec = 0.0;
  for (Eigen::Index j = 0; j < r.rows(); ++j) {
    double best = -2.0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) best = std::max(best, cosine(c.row(i), r.row(j)));
    rec += best;
  }
  rec /= double(r.rows());
  return 2.0 * p * rec / (p + rec);
}

const Words kFive{"the", "old", "man", "saw", "rain"};

}  // namespace

TEST_CASE("bleu1 examples") {
  CHECK(bleu1(kFive, kFive) == 1.0);
  CHECK(std::abs(bleu1({"the", "old", "cat", "saw", "dog"}, kFive) - 0.6) < 1e-12);
  CHECK(std::abs(bleu1({"a", "b"}, {"a", "b", "c", "d"}) - std::exp(-1.0)) < 1e-12);
  CHECK(bleu1({}, kFive) == 0.0);
  CHECK(bleu1({"x", "y"}, kFive) == 0.0);
  CHECK_THROWS_AS(bleu1(kFive, {}), ValidationError);
}

TEST_CASE("bleu1 clips repeated matches") {
  const Words ref{"a", "b", "c", "d"};
  const double once = bleu1({"a", "x", "y", "z"}, ref);
  const double repeated = bleu1({"a", "a", "a", "a"}, ref);
  CHECK(repeated == once);
}

TEST_CASE("meteor examples") {
  const double identity = meteor(kFive, kFive);
  CHECK(identity >= 0.99);
  CHECK(std::abs(identity - (1.0 - 0.5 * std::pow(1.0 / 5.0, 3.0))) < 1e-12);
  CHECK(meteor({"x", "y", "z"}, kFive) == 0.0);
  CHECK(meteor({}, kFive) == 0.0);

  Words reversed(kFive.rbegin(), kFive.rend());
  CHECK(meteor(reversed, kFive) < identity);
  CHECK(meteor_alignment(reversed, kFive) == std::pair<int, int>{5, 5});
  CHECK(meteor_alignment(kFive, kFive) == std::pair<int, int>{5, 1});
}

TEST_CASE("meteor hand computed partial match") {
  // 3 of 4 candidate words match a 6-word reference in two chunks.
  const Words cand{"the", "old", "x", "rain"};
  const Words ref{"the", "old", "man", "saw", "the", "rain"};
  const double p = 3.0 / 4.0, r = 3.0 / 6.0;
  const double fmean = p * r / (0.9 * p + 0.1 * r);
  const double pen = 0.5 * std::pow(2.0 / 3.0, 3.0);
  CHECK(meteor_alignment(cand, ref) == std::pair<int, int>{3, 2});
  CHECK(std::abs(meteor(cand, ref) - fmean * (1.0 - pen)) < 1e-12);
}

TEST_CASE("bertscore examples") {
  HashEmbedding hash;
  CHECK(std::abs(bertscore(kFive, kFive, hash) - 1.0) < 1e-6);

  OrthogonalEmbedding orth({"a", "b", "c", "d"});
  CHECK(std::abs(bertscore({"a", "b"}, {"c", "d"}, orth)) < 1e-6);
  CHECK(std::abs(bertscore({"a", "b"}, {"a", "b"}, orth) - 1.0) < 1e-6);

  TableEmbedding table({{"p", {1.0, 0.2, 0.0}}, {"q", {0.1, 1.0, 0.5}}, {"r", {-0.3, 0.4, 1.0}},
                        {"s", {0.7, 0.7, 0.1}}, {"t", {0.0, -1.0, 0.3}}});
  const Words cand{"p", "q", "r"};
  const Words ref{"s", "t", "q"};
  CHECK(std::abs(bertscore(cand, ref, table) - bertscore_oracle(table.embed(cand), table.embed(ref))) <
        1e-6);
}

TEST_CASE("contextual embedding uses the frozen text encoder") {
  auto enc = std::make_shared<const prompting::TextEncoder>();
  ContextualEmbedding emb(enc);
  Matrix m = emb.embed(kFive);
  CHECK(m.rows() == 5);
  CHECK(m.cols() == emb.dim());
  CHECK(std::abs(bertscore(kFive, kFive, emb) - 1.0) < 1e-6);
  CHECK(bertscore({"x", "y"}, kFive, emb) < 1.0);
}

TEST_CASE("evaluate_story averages windows") {
  HashEmbedding hash;
  auto all_same = evaluate_story({kFive, {"a", "b"}}, {kFive, {"a", "b"}}, hash);
  CHECK(all_same.bleu1 == 1.0);
  CHECK(std::abs(all_same.meteor - 0.5 * (meteor(kFive, kFive) + meteor({"a", "b"}, {"a", "b"}))) < 1e-12);
  CHECK(std::abs(all_same.bertscore - 1.0) < 1e-6);

  // 0.2 and 0.4 BLEU-1: 1 of 5 and 2 of 5 words right, no brevity penalty.
  auto mixed = evaluate_story({{"the", "x", "y", "z", "w"}, {"the", "old", "y", "z", "w"}}, {kFive, kFive},
                              hash);
  CHECK(std::abs(mixed.per_window[0].bleu1 - 0.2) < 1e-12);
  CHECK(std::abs(mixed.per_window[1].bleu1 - 0.4) < 1e-12);
  CHECK(std::abs(mixed.bleu1 - 0.3) < 1e-12);

  auto empty = evaluate_story({{}}, {kFive}, hash);
  CHECK(empty.bleu1 == 0.0);
  CHECK(empty.bertscore == 0.0);

  CHECK_THROWS_AS(evaluate_story({kFive}, {kFive, kFive}, hash), ValidationError);
}

TEST_CASE("metric report format") {
  HashEmbedding hash;
  auto report = evaluate_story({kFive}, {kFive}, hash);
  const std::string text = format_metric_report(report, {"s1@0.000"});
  CHECK(text.rfind("window\tbleu1\tmeteor\tbertscore\n", 0) == 0);
  CHECK(text.find("s1@0.000\t1.000000\t") != std::string::npos);
  CHECK(text.find("\nmean\t1.000000\t") != std::string::npos);
  CHECK(format_metric_report(report, {"s1@0.000"}) == text);
  CHECK(metric_tokens("The  Old\tman ") == Words{"the", "old", "man"});
}
