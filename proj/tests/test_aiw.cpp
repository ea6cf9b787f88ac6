#include <gtest/gtest.h>

#include <random>

#include "conceptlm/aiw.hpp"
#include "conceptlm/mock_backend.hpp"

using namespace conceptlm;

namespace {

struct Child {
  bool girl;
};

// Builds the family explicitly: the named girl, her sisters and her brothers.
// Picks the first sibling of the asked gender and counts that child's sisters.
std::optional<int> enumerate_family(int sisters, int brothers, aiw::Variant variant) {
  std::vector<Child> family{{true}};
  for (int i = 0; i < sisters; ++i) family.push_back({true});
  for (int i = 0; i < brothers; ++i) family.push_back({false});
  const bool want_girl = variant == aiw::Variant::sister;
  for (std::size_t s = 1; s < family.size(); ++s) {
    if (family[s].girl != want_girl) continue;
    int count = 0;
    for (std::size_t o = 0; o < family.size(); ++o)
      if (o != s && family[o].girl) ++count;
    return count;
  }
  return std::nullopt;
}

}  // namespace

TEST(SiblingPuzzle, OracleMatchesEnumerationOnRandomInstances) {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> d(0, 20);
  for (int trial = 0; trial < 100; ++trial) {
    const int x = d(rng), y = d(rng);
    auto brother = aiw::answer(x, y, aiw::Variant::brother);
    auto sister = aiw::answer(x, y, aiw::Variant::sister);
    ASSERT_EQ(brother, enumerate_family(x, y, aiw::Variant::brother)) << x << "," << y;
    ASSERT_EQ(sister, enumerate_family(x, y, aiw::Variant::sister)) << x << "," << y;
    if (y > 0) ASSERT_EQ(*brother, x + 1);
    if (x > 0) ASSERT_EQ(*sister, x);
  }
}

TEST(SiblingPuzzle, ExhaustiveSmallFamilies) {
  for (int x = 0; x <= 20; ++x)
    for (int y = 0; y <= 20; ++y)
      for (auto v : {aiw::Variant::brother, aiw::Variant::sister}) ASSERT_EQ(aiw::answer(x, y, v), enumerate_family(x, y, v));
  EXPECT_THROW(aiw::answer(-1, 2, aiw::Variant::brother), PreconditionError);
}

TEST(SiblingPuzzle, DemoInstance) {
  auto cp = aiw::problem();
  EXPECT_NE(cp.query.find("4 sisters and 11 brothers"), std::string::npos);
  EXPECT_TRUE(cp.expected->matches("so 4 + 1 = 5"));
  EXPECT_FALSE(cp.expected->matches("4"));
}

TEST(SiblingPuzzle, ScriptedDemoSeparatesExampleAndConceptStrategies) {
  MockBackend backend(aiw::mock_script());
  RetryPolicy retry;
  retry.sleep = [](std::chrono::milliseconds) {};
  auto rows = aiw::run_demo(backend, ModelSpec{"demo-model"}, retry);
  ASSERT_EQ(rows.size(), 5u);
  const std::map<Scm, int> expected = {{Scm::simple, 0}, {Scm::icl, 0}, {Scm::cot, 0}, {Scm::cicl, 1}, {Scm::coc, 1}};
  for (const auto& row : rows) {
    ASSERT_TRUE(row.k.has_value()) << to_string(row.scm);
    EXPECT_EQ(*row.k, expected.at(row.scm)) << to_string(row.scm);
  }
  EXPECT_EQ(rows[4].turns, 3u);
}
