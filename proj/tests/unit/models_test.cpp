#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sbc/error.hpp"
#include "sbc/models.hpp"
#include "sbc/synthetic.hpp"

namespace {

using namespace sbc;

constexpr ModelKind kAllKinds[] = {ModelKind::kDecisionBranch, ModelKind::kDecisionBranchEnsemble,
                                   ModelKind::kDecisionTree, ModelKind::kRandomForest};
constexpr ModelKind kBoxKinds[] = {ModelKind::kDecisionBranch, ModelKind::kDecisionBranchEnsemble};

// Points near two random centres; positives around the first.
LabeledSet blobs(std::size_t dim, std::size_t pos, std::size_t neg, std::mt19937_64& rng,
                 double spread = 30.0) {
  std::uniform_real_distribution<double> centre(60.0, 195.0);
  std::normal_distribution<double> g(0.0, spread);
  std::vector<double> cp(dim);
  std::vector<double> cn(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    cp[j] = centre(rng);
    cn[j] = centre(rng);
  }
  LabeledSet set(dim);
  auto draw = [&](const std::vector<double>& c) {
    std::vector<std::uint8_t> code(dim);
    for (std::size_t j = 0; j < dim; ++j) code[j] = std::uint8_t(std::clamp(std::round(c[j] + g(rng)), 0.0, 255.0));
    return code;
  };
  for (std::size_t i = 0; i < pos; ++i) set.add(draw(cp), Label::kPositive);
  for (std::size_t i = 0; i < neg; ++i) set.add(draw(cn), Label::kNegative);
  return set;
}

DecisionTree leaf_tree(bool positive, double score) {
  DecisionTree::Node leaf;
  leaf.positive = positive;
  leaf.score = score;
  return DecisionTree({leaf});
}

TEST(Models, KindNames) {
  for (ModelKind k : kAllKinds) EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_EQ(parse_model_kind("dbranch-ensemble"), ModelKind::kDecisionBranchEnsemble);
  EXPECT_FALSE(parse_model_kind("svm").has_value());
  EXPECT_TRUE(supports_boxes(ModelKind::kDecisionBranch));
  EXPECT_FALSE(supports_boxes(ModelKind::kRandomForest));
}

TEST(Models, SeparableLineNeedsOneSplit) {
  LabeledSet set(1);
  for (int v = 0; v < 10; ++v) set.add(std::vector<std::uint8_t>{std::uint8_t(v)}, Label::kNegative);
  for (int v = 200; v < 210; ++v) set.add(std::vector<std::uint8_t>{std::uint8_t(v)}, Label::kPositive);
  const auto model = train_model(set, ModelKind::kDecisionBranch, 0);
  const auto& nodes = model.trees().front().nodes();
  ASSERT_EQ(nodes.size(), 3u);
  EXPECT_EQ(nodes[0].threshold, (9 + 200) / 2);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(model.predict(set.code(i)).label, set.label(i));
  EXPECT_EQ(model.predict(std::vector<std::uint8_t>{255}).score, 1.0);
}

TEST(Models, TiesGoToTheLowestDimension) {
  LabeledSet set(3);
  set.add(std::vector<std::uint8_t>{5, 5, 5}, Label::kNegative);
  set.add(std::vector<std::uint8_t>{9, 9, 9}, Label::kPositive);
  const auto model = train_model(set, ModelKind::kDecisionTree, 0);
  const auto& root = model.trees().front().nodes()[0];
  EXPECT_EQ(root.dim, 0);
  EXPECT_EQ(root.threshold, 7);
}

TEST(Models, IdenticalFeaturesGiveOneLeaf) {
  LabeledSet set(2);
  set.add(std::vector<std::uint8_t>{4, 4}, Label::kPositive);
  set.add(std::vector<std::uint8_t>{4, 4}, Label::kNegative, 3.0);
  const auto model = train_model(set, ModelKind::kDecisionBranch, 0);
  ASSERT_EQ(model.trees().front().nodes().size(), 1u);
  EXPECT_EQ(model.predict(std::vector<std::uint8_t>{4, 4}).label, Label::kNegative);
  EXPECT_DOUBLE_EQ(model.predict(std::vector<std::uint8_t>{4, 4}).score, 0.25);
  EXPECT_TRUE(extract_positive_boxes(model).empty());
}

TEST(Models, RequiresBothClasses) {
  LabeledSet set(2);
  set.add(std::vector<std::uint8_t>{1, 2}, Label::kPositive);
  for (ModelKind k : kAllKinds) EXPECT_THROW(train_model(set, k, 0), ValidationError);
  EXPECT_THROW(set.add(std::vector<std::uint8_t>{1}, Label::kPositive), InvalidArgument);
  EXPECT_THROW(set.add(std::vector<std::uint8_t>{1, 2}, Label::kPositive, 0.0), InvalidArgument);
}

TEST(Models, TrainingIsDeterministic) {
  std::mt19937_64 rng(1);
  const auto set = blobs(8, 30, 120, rng);
  for (ModelKind k : kAllKinds) {
    EXPECT_EQ(train_model(set, k, 42).serialize(), train_model(set, k, 42).serialize()) << to_string(k);
  }
  EXPECT_NE(train_model(set, ModelKind::kRandomForest, 1).serialize(),
            train_model(set, ModelKind::kRandomForest, 2).serialize());
}

TEST(Models, WeightEqualsReplication) {
  std::mt19937_64 rng(2);
  const auto base = blobs(4, 20, 40, rng, 45.0);
  LabeledSet weighted(4);
  LabeledSet replicated(4);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double w = base.label(i) == Label::kNegative && i % 3 == 0 ? 10.0 : 1.0;
    weighted.add(base.code(i), base.label(i), w);
    for (int r = 0; r < int(w); ++r) replicated.add(base.code(i), base.label(i));
  }
  EXPECT_EQ(train_model(weighted, ModelKind::kDecisionTree, 0).serialize(),
            train_model(replicated, ModelKind::kDecisionTree, 0).serialize());
}

TEST(Models, PositiveBoxOfAHandBuiltTree) {
  // x0 <= 100 -> negative; else x1 <= 50 -> positive, else negative.
  std::vector<DecisionTree::Node> nodes(5);
  nodes[0] = {1, 2, 0, 100, false, 0.0};
  nodes[1] = {DecisionTree::kLeaf, DecisionTree::kLeaf, 0, 0, false, 0.1};
  nodes[2] = {3, 4, 1, 50, false, 0.0};
  nodes[3] = {DecisionTree::kLeaf, DecisionTree::kLeaf, 0, 0, true, 0.9};
  nodes[4] = {DecisionTree::kLeaf, DecisionTree::kLeaf, 0, 0, false, 0.2};
  const BranchModel model(ModelKind::kDecisionBranch, 2, {DecisionTree(nodes)});
  const auto boxes = extract_positive_boxes(model);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0], (Box{{101, 0}, {255, 50}}));
  EXPECT_EQ(model.trees().front().depth(), 2u);
}

TEST(Models, ScanOnlyKindsHaveNoBoxes) {
  std::mt19937_64 rng(3);
  const auto set = blobs(4, 10, 20, rng);
  const auto catalog = oracle::identity_catalog(oracle::random_codes(100, 4, rng), 4);
  const auto index = KdTree::build(catalog);
  for (ModelKind k : {ModelKind::kDecisionTree, ModelKind::kRandomForest}) {
    const auto model = train_model(set, k, 0);
    EXPECT_THROW(extract_positive_boxes(model), UnsupportedOperation);
    EXPECT_THROW(search_positives(model, index, catalog), UnsupportedOperation);
    EXPECT_NO_THROW(scan_positives(model, catalog));
  }
}

TEST(Models, BoxesAgreeWithPredictOnTheWholeGrid) {
  std::mt19937_64 rng(4);
  for (ModelKind k : kBoxKinds) {
    const auto set = blobs(2, 25, 60, rng, 40.0);
    const auto model = train_model(set, k, 5);
    const auto boxes = extract_positive_boxes(model);
    const std::size_t members = model.trees().size();
    for (int a = 0; a < 256; ++a) {
      for (int b = 0; b < 256; ++b) {
        const std::vector<std::uint8_t> code{std::uint8_t(a), std::uint8_t(b)};
        std::size_t inside = 0;
        for (const auto& box : boxes) inside += box.contains(code);
        const bool by_boxes = 2 * inside > members;
        ASSERT_EQ(by_boxes, model.predict(code).label == Label::kPositive)
            << to_string(k) << " at " << a << "," << b;
      }
    }
  }
}

TEST(Models, PredictMatchesTreeWalk) {
  std::mt19937_64 rng(5);
  for (ModelKind k : kAllKinds) {
    const auto set = blobs(6, 40, 150, rng);
    const auto model = train_model(set, k, 9);
    for (int t = 0; t < 1000; ++t) {
      const auto code = oracle::random_codes(1, 6, rng);
      const auto want = oracle::model_walk(model, code);
      const auto got = model.predict(code);
      ASSERT_EQ(got.label, want.label);
      ASSERT_NEAR(got.score, want.score, 1e-12);
    }
  }
}

TEST(Models, StrictMajorityVote) {
  auto vote = [](std::size_t positive_members, std::size_t members) {
    std::vector<DecisionTree> trees;
    for (std::size_t m = 0; m < members; ++m) trees.push_back(leaf_tree(m < positive_members, m < positive_members ? 1.0 : 0.0));
    return BranchModel(ModelKind::kDecisionBranchEnsemble, 1, std::move(trees))
        .predict(std::vector<std::uint8_t>{0});
  };
  EXPECT_EQ(vote(13, 25).label, Label::kPositive);
  EXPECT_DOUBLE_EQ(vote(13, 25).score, 13.0 / 25.0);
  EXPECT_EQ(vote(12, 25).label, Label::kNegative);
  EXPECT_EQ(vote(2, 4).label, Label::kNegative);
  EXPECT_EQ(vote(3, 4).label, Label::kPositive);
}

TEST(Models, IndexSearchEqualsScan) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 2 + trial % 7;
    synthetic::ClusterConfig cfg;
    cfg.rows = 2000 + 300 * std::size_t(trial);
    cfg.dim = dim;
    cfg.clusters = 6;
    cfg.spread = 15.0;
    cfg.seed = std::uint64_t(trial);
    const auto catalog = synthetic::clustered_catalog(cfg);
    const auto index = KdTree::build(catalog, 8 + trial % 24);
    const auto set = blobs(dim, 5 + trial * 3, 40 + trial * 5, rng);
    for (ModelKind k : kBoxKinds) {
      const auto model = train_model(set, k, std::uint64_t(trial));
      const auto fast = search_positives(model, index, catalog);
      const auto slow = scan_positives(model, catalog);
      ASSERT_EQ(fast.positives, slow.positives) << to_string(k) << " trial " << trial;
      // Every positive was a candidate, and candidates never exceed the catalog.
      ASSERT_GE(fast.candidates, fast.positives.size());
      ASSERT_LE(fast.candidates, catalog.size());
    }
  }
}

TEST(Models, ZeroPositiveModelFindsNothing) {
  std::mt19937_64 rng(7);
  const auto catalog = oracle::identity_catalog(oracle::random_codes(500, 3, rng), 3);
  const auto index = KdTree::build(catalog);
  const BranchModel model(ModelKind::kDecisionBranch, 3, {leaf_tree(false, 0.0)});
  const auto out = search_positives(model, index, catalog);
  EXPECT_TRUE(out.positives.empty());
  EXPECT_EQ(out.candidates, 0u);
  EXPECT_EQ(out.index_stats.rows_scanned, 0u);
}

TEST(Models, ResultsAreRanked) {
  std::mt19937_64 rng(8);
  const auto set = blobs(4, 30, 100, rng);
  const auto catalog = oracle::identity_catalog(oracle::random_codes(3000, 4, rng), 4);
  const auto out = scan_positives(train_model(set, ModelKind::kRandomForest, 1), catalog);
  for (std::size_t i = 1; i < out.positives.size(); ++i) {
    const auto& a = out.positives[i - 1];
    const auto& b = out.positives[i];
    ASSERT_TRUE(a.score > b.score || (a.score == b.score && a.row < b.row));
  }
}

}  // namespace
