#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hdeval {

// One node of the hierarchy. Layer 0 is the evaluation task itself.
struct Criterion {
  std::string id;
  std::string name;
  std::string definition;
  int layer = 0;
  std::optional<std::string> parent_id;
  int ordinal = 0;

  bool operator==(const Criterion&) const = default;
};

struct ChildSpec {
  std::string name;
  std::string definition;
};

inline constexpr int kDefaultMaxLayers = 3;
inline constexpr int kDefaultMaxChildren = 4;

// Immutable tree of evaluation criteria. Growth happens through
// attach_children(), which returns a new snapshot and leaves *this untouched.
//
// Ids are surrogate keys ("c0" for the root, then "c<n>" in attach order);
// names may repeat across branches.
class CriteriaTree {
 public:
  static CriteriaTree create(std::string task_description, int max_layers = kDefaultMaxLayers,
                             int max_children = kDefaultMaxChildren);

  [[nodiscard]] CriteriaTree attach_children(std::string_view parent_id,
                                             std::span<const ChildSpec> children) const;

  const Criterion& root() const { return nodes_.front(); }
  const std::string& task() const { return nodes_.front().definition; }
  int max_layers() const { return max_layers_; }
  int max_children() const { return max_children_; }
  std::size_t size() const { return nodes_.size(); }
  // Deepest layer that holds at least one node.
  int depth() const;

  bool contains(std::string_view id) const;
  const Criterion& node(std::string_view id) const;

  // Root-to-node path, inclusive; element i sits at layer i.
  std::vector<Criterion> lineage(std::string_view id) const;

  // Children of a node in ordinal order.
  std::vector<Criterion> children(std::string_view id) const;

  // Canonical order: parent's canonical position first, then sibling ordinal.
  std::vector<Criterion> nodes_at_layer(int layer) const;

  // Aggregator input order: ascending layer then canonical within-layer order,
  // root excluded. Throws ValidationError for a root-only tree.
  std::vector<std::string> feature_order() const;

  // Snapshot keeping only layers <= max_layer (ids preserved).
  [[nodiscard]] CriteriaTree truncated(int max_layer) const;

  nlohmann::json to_json() const;
  static CriteriaTree from_json(const nlohmann::json& j);

 private:
  CriteriaTree() = default;
  void validate() const;
  std::string next_id() const;

  std::vector<Criterion> nodes_;
  int max_layers_ = kDefaultMaxLayers;
  int max_children_ = kDefaultMaxChildren;
};

}  // namespace hdeval
