#include "hdeval/dataset.hpp"
#include "hdeval/util.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace hdeval;

namespace {

DatasetManifest summeval_manifest() {
  DatasetManifest m;
  m.name = "summeval-like";
  m.task_description = "text summarization";
  m.task_background = "A summary is a shorter passage that keeps the key details of the article.";
  m.template_id = TemplateId::summarization;
  m.aspects = {{"coherence", "c"}, {"consistency", "s"}, {"fluency", "f"}, {"relevance", "r"}};
  return m;
}

std::vector<EvalSample> summeval_samples(int docs, int per_doc) {
  std::vector<EvalSample> out;
  for (int d = 0; d < docs; ++d) {
    for (int k = 0; k < per_doc; ++k) {
      EvalSample s;
      s.sample_id = "M" + std::to_string(k) + "-D" + std::to_string(d);
      s.group_id = "D" + std::to_string(d);
      s.context = "Article " + std::to_string(d) + " with \"quotes\", commas, and a\nnewline.";
      s.candidate = "Summary " + std::to_string(k);
      s.labels = {{"coherence", 1 + (d + k) % 5},
                  {"consistency", 4.5},
                  {"fluency", 1.0 + 0.25 * k},
                  {"relevance", 3.333333333333333}};
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::string sample_line(const EvalSample& s) { return to_json(s).dump(); }

std::set<std::string> groups_of(const std::vector<EvalSample>& v) {
  std::set<std::string> g;
  for (const auto& s : v) g.insert(s.group_id);
  return g;
}

std::set<std::string> ids_of(const std::vector<EvalSample>& v) {
  std::set<std::string> g;
  for (const auto& s : v) g.insert(s.sample_id);
  return g;
}

}  // namespace

TEST_CASE("load 1600 summaries") {
  test::TempDir dir;
  Dataset ds{summeval_manifest(), summeval_samples(100, 16)};
  write_dataset(ds, dir / "manifest.json", dir / "data.jsonl");
  const auto back = load_dataset(dir / "manifest.json", dir / "data.jsonl");
  CHECK(back.samples.size() == 1600);
  CHECK(back.manifest.aspect_names() == std::vector<std::string>{"coherence", "consistency", "fluency", "relevance"});
}

TEST_CASE("write then load is the identity") {
  test::TempDir dir;
  Dataset ds{summeval_manifest(), summeval_samples(3, 2)};
  ds.samples[0].fact = "a fact";
  ds.samples[1].extra = {{"system", "M7"}, {"annotators", {1, 2, 3}}};
  ds.manifest.aspect_groups = {{"g1", {"coherence", "fluency"}}, {"g2", {"consistency", "relevance"}}};
  write_dataset(ds, dir / "m.json", dir / "d.jsonl");
  const auto back = load_dataset(dir / "m.json", dir / "d.jsonl");
  CHECK(to_json(back.manifest) == to_json(ds.manifest));
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(to_json(back.samples[i]) == to_json(ds.samples[i]));
  CHECK(back.samples[0].fact == "a fact");
  CHECK(back.samples[1].extra.at("system") == "M7");
  CHECK(back.samples[2].labels.at("relevance") == 3.333333333333333);
}

TEST_CASE("load reports the failing line") {
  test::TempDir dir;
  Dataset ds{summeval_manifest(), summeval_samples(2, 2)};
  write_dataset(ds, dir / "manifest.json", dir / "ok.jsonl");
  auto lines = std::vector<std::string>{};
  for (const auto& s : ds.samples) lines.push_back(sample_line(s));

  auto write_lines = [&](const std::vector<std::string>& ls) {
    std::string text;
    for (const auto& l : ls) text += l + "\n";
    write_file_atomic(dir / "data.jsonl", text);
  };
  auto message = [&]() -> std::string {
    try {
      load_dataset(dir / "manifest.json", dir / "data.jsonl");
    } catch (const Error& e) {
      return e.what();
    }
    return "";
  };

  auto missing = nlohmann::json::parse(lines[2]);
  missing.erase("candidate");
  auto ls = lines;
  ls[2] = missing.dump();
  write_lines(ls);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "data.jsonl"), ParseError);
  CHECK(message().find(":3:") != std::string::npos);

  ls = lines;
  ls[1] = "{not json";
  write_lines(ls);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "data.jsonl"), ParseError);
  CHECK(message().find(":2:") != std::string::npos);

  auto extra = nlohmann::json::parse(lines[3]);
  extra["labels"]["engagingness"] = 2;
  ls = lines;
  ls[3] = extra.dump();
  write_lines(ls);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "data.jsonl"), ValidationError);
  CHECK(message().find(":4:") != std::string::npos);

  auto short_labels = nlohmann::json::parse(lines[0]);
  short_labels["labels"].erase("fluency");
  ls = lines;
  ls[0] = short_labels.dump();
  write_lines(ls);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "data.jsonl"), ValidationError);

  ls = lines;
  ls[3] = lines[0];
  write_lines(ls);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "data.jsonl"), ValidationError);
  CHECK(message().find("duplicate") != std::string::npos);

  auto text_label = nlohmann::json::parse(lines[0]);
  text_label["labels"]["fluency"] = "high";
  ls = lines;
  ls[0] = text_label.dump();
  write_lines(ls);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "data.jsonl"), ParseError);

  // Blank lines are skipped.
  ls = lines;
  ls.insert(ls.begin() + 1, "");
  write_lines(ls);
  CHECK(load_dataset(dir / "manifest.json", dir / "data.jsonl").samples.size() == 4);

  CHECK_THROWS_AS(load_dataset(dir / "nope.json", dir / "data.jsonl"), IoError);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.json", dir / "nope.jsonl"), IoError);
}

TEST_CASE("manifest validation") {
  auto j = to_json(summeval_manifest());
  CHECK_NOTHROW(manifest_from_json(j));
  auto bad = j;
  bad["aspects"] = nlohmann::json::array();
  CHECK_THROWS_AS(manifest_from_json(bad), ValidationError);
  bad = j;
  bad["template_id"] = "poetry";
  CHECK_THROWS_AS(manifest_from_json(bad), ValidationError);
  bad = j;
  bad["aspect_groups"] = {{{"name", "g"}, {"aspects", {"coherence"}}}};
  CHECK_THROWS_AS(manifest_from_json(bad), ValidationError);

  const auto m = manifest_from_json(j);
  const auto groups = m.resolved_groups();
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].aspects == m.aspect_names());
  CHECK(template_id_from_string(to_string(TemplateId::data_to_text)) == TemplateId::data_to_text);
}

TEST_CASE("split is seeded and group-atomic") {
  const auto samples = summeval_samples(10, 3);
  const auto s = split(samples, 0.5, 1);
  CHECK(groups_of(s.train).size() == 5);
  CHECK(groups_of(s.test).size() == 5);
  const auto again = split(samples, 0.5, 1);
  CHECK(ids_of(again.train) == ids_of(s.train));
  CHECK_THROWS_AS(split(samples, 1.0, 1), ValidationError);
  CHECK_THROWS_AS(split(samples, 0.0, 1), ValidationError);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto part = split(samples, 0.3, seed);
    const auto tr = groups_of(part.train), te = groups_of(part.test);
    for (const auto& g : tr) CHECK_FALSE(te.contains(g));
    auto all = ids_of(part.train);
    const auto test_ids = ids_of(part.test);
    CHECK(all.size() + test_ids.size() == samples.size());
    all.insert(test_ids.begin(), test_ids.end());
    CHECK(all == ids_of(samples));
    // Input order is preserved on each side.
    CHECK(std::is_sorted(part.train.begin(), part.train.end(), [&](const auto& a, const auto& b) {
      auto pos = [&](const EvalSample& x) {
        return std::find_if(samples.begin(), samples.end(), [&](const auto& y) { return y.sample_id == x.sample_id; });
      };
      return pos(a) < pos(b);
    }));
  }
}

TEST_CASE("subsample sizes") {
  const auto train = summeval_samples(200, 4);
  CHECK(subsample_train(train, 0.25, 3).size() == 200);
  CHECK(subsample_train(train, 0.05, 3).size() == 40);
  CHECK(ids_of(subsample_train(train, 1.0, 3)) == ids_of(train));
  CHECK_THROWS_AS(subsample_train(train, 0.0, 3), ValidationError);
  CHECK_THROWS_AS(subsample_train(train, 1.5, 3), ValidationError);

  const auto a = subsample_train(train, 0.25, 9);
  const auto b = subsample_train(train, 0.25, 9);
  CHECK(ids_of(a) == ids_of(b));

  // At most one group is cut.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto sub = subsample_train(train, 0.1301, seed);
    CHECK(sub.size() == 105);
    std::map<std::string, int> counts;
    for (const auto& s : sub) ++counts[s.group_id];
    int partial = 0;
    for (const auto& [g, c] : counts) partial += c != 4;
    CHECK(partial <= 1);
  }
}

TEST_CASE("label matrix follows the aspect order") {
  const auto samples = summeval_samples(1, 2);
  const Matrix y = label_matrix(samples, {"fluency", "coherence"});
  CHECK(y(1, 0) == 1.25);
  CHECK(y(0, 1) == 1.0);
  CHECK_THROWS_AS(label_matrix(samples, {"engagingness"}), ValidationError);
}
