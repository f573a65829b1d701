#include "hdeval/criteria_tree.hpp"
#include "hdeval/random.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace hdeval;

namespace {

std::vector<std::string> names(const std::vector<Criterion>& cs) {
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(c.name);
  return out;
}

const Criterion& by_name(const CriteriaTree& t, const std::string& name) {
  for (const auto& id : t.feature_order()) {
    if (t.node(id).name == name) return t.node(id);
  }
  throw NotFoundError(name);
}

}  // namespace

TEST_CASE("new tree holds only the task root") {
  const auto t = CriteriaTree::create("evaluate summarization quality", 3, 4);
  CHECK(t.size() == 1);
  CHECK(t.root().layer == 0);
  CHECK_FALSE(t.root().parent_id.has_value());
  CHECK(t.root().definition == "evaluate summarization quality");
  CHECK(t.nodes_at_layer(0).size() == 1);
  CHECK(t.depth() == 0);
}

TEST_CASE("new tree rejects bad arguments") {
  CHECK_THROWS_AS(CriteriaTree::create("", 3, 4), ValidationError);
  CHECK_THROWS_AS(CriteriaTree::create("x", 0, 4), ValidationError);
  CHECK_THROWS_AS(CriteriaTree::create("x", 3, 0), ValidationError);
}

TEST_CASE("single-layer tree accepts layer-1 children only") {
  const auto t = CriteriaTree::create("evaluate conversation quality", 1, 4);
  const std::vector<ChildSpec> kids{{"Coherence", "Stays on topic."}};
  const auto t1 = t.attach_children(t.root().id, kids);
  CHECK(t1.nodes_at_layer(1).size() == 1);
  CHECK_THROWS_AS(t1.attach_children(t1.nodes_at_layer(1)[0].id, kids), ValidationError);
}

TEST_CASE("attach four children under Naturalness") {
  auto t = CriteriaTree::create("evaluate conversation quality");
  t = t.attach_children(t.root().id, std::vector<ChildSpec>{{"Naturalness", "Sounds natural."}});
  const auto nat = t.nodes_at_layer(1)[0].id;
  const std::vector<ChildSpec> kids{{"Grammar and syntax", "Follows grammar."},
                                    {"Spelling and punctuation", "Correct spelling."},
                                    {"Lexical choice and diversity", "Varied words."},
                                    {"Fluency", "Reads smoothly."}};
  const auto t2 = t.attach_children(nat, kids);
  const auto layer2 = t2.nodes_at_layer(2);
  REQUIRE(layer2.size() == 4);
  for (std::size_t i = 0; i < layer2.size(); ++i) {
    CHECK(layer2[i].ordinal == static_cast<int>(i));
    CHECK(layer2[i].parent_id == nat);
    CHECK(layer2[i].name == kids[i].name);
  }
}

TEST_CASE("attach rejects too many children, duplicates and unknown parents") {
  auto t = CriteriaTree::create("task", 3, 4);
  std::vector<ChildSpec> five;
  for (int i = 0; i < 5; ++i) five.push_back({"c" + std::to_string(i), "d"});
  CHECK_THROWS_AS(t.attach_children(t.root().id, five), ValidationError);

  const std::vector<ChildSpec> dup{{"A", "d"}, {"A", "e"}};
  CHECK_THROWS_AS(t.attach_children(t.root().id, dup), ValidationError);
  CHECK_THROWS_AS(t.attach_children("nope", std::vector<ChildSpec>{{"A", "d"}}), NotFoundError);
  CHECK_THROWS_AS(t.attach_children(t.root().id, std::vector<ChildSpec>{{"A", ""}}), ValidationError);

  // A second batch counts against the same limit.
  t = t.attach_children(t.root().id, std::vector<ChildSpec>{{"A", "d"}, {"B", "d"}, {"C", "d"}});
  CHECK_THROWS_AS(t.attach_children(t.root().id, std::vector<ChildSpec>{{"D", "d"}, {"E", "d"}}), ValidationError);
  CHECK_THROWS_AS(t.attach_children(t.root().id, std::vector<ChildSpec>{{"A", "again"}}), ValidationError);
}

TEST_CASE("attaching nothing returns an identical snapshot") {
  const auto t = test::topical_chat_tree();
  const auto same = t.attach_children(t.root().id, std::vector<ChildSpec>{});
  CHECK(same.to_json() == t.to_json());
}

TEST_CASE("lineage follows parents up to the task") {
  const auto t = test::topical_chat_tree();
  const auto& sp = by_name(t, "Spelling correctness");
  const auto lin = t.lineage(sp.id);
  CHECK(names(lin) ==
        std::vector<std::string>{"task", "Naturalness", "Spelling and punctuation", "Spelling correctness"});
  for (std::size_t i = 0; i < lin.size(); ++i) CHECK(lin[i].layer == static_cast<int>(i));
  CHECK(t.lineage(t.root().id).size() == 1);
  CHECK_THROWS_AS(t.lineage("c999"), NotFoundError);
}

TEST_CASE("nodes_at_layer uses canonical order") {
  const auto t = test::topical_chat_tree();
  CHECK(names(t.nodes_at_layer(1)) ==
        std::vector<std::string>{"Naturalness", "Coherence", "Engagingness", "Groundedness"});
  CHECK(t.nodes_at_layer(0).front().id == t.root().id);
  CHECK_THROWS_AS(t.nodes_at_layer(4), ValidationError);
  CHECK_THROWS_AS(t.nodes_at_layer(-1), ValidationError);
  const auto l3 = t.nodes_at_layer(3);
  CHECK(l3.front().name == "Spelling correctness");
  CHECK(l3.back().name == "Factual relevance");
}

TEST_CASE("feature order of the fixture tree") {
  const auto t = test::topical_chat_tree();
  CHECK(t.nodes_at_layer(1).size() == 4);
  CHECK(t.nodes_at_layer(2).size() == 15);
  CHECK(t.nodes_at_layer(3).size() == 12);
  const auto order = t.feature_order();
  REQUIRE(order.size() == 31);
  for (int i = 0; i < 4; ++i) CHECK(t.node(order[static_cast<std::size_t>(i)]).layer == 1);
  CHECK(std::is_sorted(order.begin(), order.end(),
                       [&](const auto& a, const auto& b) { return t.node(a).layer < t.node(b).layer; }));

  const auto restored = CriteriaTree::from_json(nlohmann::json::parse(t.to_json().dump()));
  CHECK(restored.feature_order() == order);
  CHECK(restored.to_json() == t.to_json());
}

TEST_CASE("identically named criteria stay distinct") {
  const auto t = test::topical_chat_tree();
  int count = 0;
  std::set<std::string> ids;
  for (const auto& id : t.feature_order()) {
    if (t.node(id).name == "Topic relevance") {
      ++count;
      ids.insert(id);
    }
  }
  CHECK(count == 2);
  CHECK(ids.size() == 2);
}

TEST_CASE("root-only tree has no features") {
  CHECK_THROWS_AS(CriteriaTree::create("task").feature_order(), ValidationError);
}

TEST_CASE("json layout and rejection of broken trees") {
  const auto t = test::topical_chat_tree();
  const auto j = t.to_json();
  CHECK(j.at("max_layers") == 3);
  CHECK(j.at("max_children") == 4);
  CHECK(j.at("nodes").size() == 32);
  CHECK(j.at("nodes")[0].at("parent_id").is_null());
  for (const char* key : {"id", "name", "definition", "layer", "parent_id", "ordinal"}) {
    CHECK(j.at("nodes")[1].contains(key));
  }

  auto bad = j;
  bad["nodes"][5]["parent_id"] = "c999";
  CHECK_THROWS_AS(CriteriaTree::from_json(bad), ValidationError);
  bad = j;
  bad["nodes"][5]["layer"] = 3;
  CHECK_THROWS_AS(CriteriaTree::from_json(bad), ValidationError);
  bad = j;
  bad["nodes"][6]["ordinal"] = bad["nodes"][5]["ordinal"];
  CHECK_THROWS_AS(CriteriaTree::from_json(bad), ValidationError);
  bad = j;
  bad["nodes"][3]["definition"] = "";
  CHECK_THROWS_AS(CriteriaTree::from_json(bad), ValidationError);
  bad = j;
  bad["max_children"] = 2;
  CHECK_THROWS_AS(CriteriaTree::from_json(bad), ValidationError);
  CHECK_THROWS_AS(CriteriaTree::from_json(nlohmann::json{{"task", 3}}), ParseError);
}

TEST_CASE("random attach sequences keep every invariant") {
  Rng rng(20240611);
  for (int trial = 0; trial < 200; ++trial) {
    const int max_layers = 1 + static_cast<int>(rng.below(4));
    const int max_children = 1 + static_cast<int>(rng.below(4));
    auto t = CriteriaTree::create("task " + std::to_string(trial), max_layers, max_children);
    for (int step = 0; step < 25; ++step) {
      std::vector<std::string> all{t.root().id};
      for (int l = 1; l <= t.depth(); ++l) {
        for (const auto& c : t.nodes_at_layer(l)) all.push_back(c.id);
      }
      const auto parent = all[rng.below(all.size())];
      std::vector<ChildSpec> kids;
      const auto n = rng.below(static_cast<std::uint64_t>(max_children) + 2);
      for (std::uint64_t k = 0; k < n; ++k) {
        kids.push_back({"n" + std::to_string(rng.below(6)), "definition " + std::to_string(k)});
      }
      const auto before = t.to_json();
      try {
        auto next = t.attach_children(parent, kids);
        CHECK(t.to_json() == before);
        t = std::move(next);
      } catch (const ValidationError&) {
        CHECK(t.to_json() == before);
      }
    }
    // Every invariant is re-checked by from_json.
    const auto restored = CriteriaTree::from_json(t.to_json());
    if (t.depth() == 0) continue;
    const auto order = t.feature_order();
    CHECK(restored.feature_order() == order);
    CHECK(order.size() + 1 == t.size());
    std::set<std::string> unique(order.begin(), order.end());
    CHECK(unique.size() == order.size());
    CHECK(unique.count(t.root().id) == 0);
    for (const auto& id : order) {
      const auto lin = t.lineage(id);
      CHECK(lin.size() == static_cast<std::size_t>(t.node(id).layer) + 1);
      for (std::size_t i = 0; i < lin.size(); ++i) CHECK(lin[i].layer == static_cast<int>(i));
      CHECK(t.node(id).layer <= max_layers);
      CHECK(t.children(id).size() <= static_cast<std::size_t>(max_children));
    }
  }
}

TEST_CASE("truncation keeps the shallow layers") {
  const auto t = test::topical_chat_tree();
  const auto t2 = t.truncated(2);
  CHECK(t2.depth() == 2);
  CHECK(t2.feature_order().size() == 19);
}
