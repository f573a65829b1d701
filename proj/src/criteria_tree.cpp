#include "hdeval/criteria_tree.hpp"

#include "hdeval/common.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

namespace hdeval {

CriteriaTree CriteriaTree::create(std::string task_description, int max_layers, int max_children) {
  if (task_description.empty()) throw ValidationError("task description must be non-empty");
  if (max_layers < 1) throw ValidationError("max_layers must be >= 1");
  if (max_children < 1) throw ValidationError("max_children must be >= 1");
  CriteriaTree tree;
  tree.max_layers_ = max_layers;
  tree.max_children_ = max_children;
  tree.nodes_.push_back(Criterion{"c0", "task", std::move(task_description), 0, std::nullopt, 0});
  return tree;
}

std::string CriteriaTree::next_id() const {
  std::size_t n = nodes_.size();
  std::string id = "c" + std::to_string(n);
  while (contains(id)) id = "c" + std::to_string(++n);
  return id;
}

CriteriaTree CriteriaTree::attach_children(std::string_view parent_id,
                                           std::span<const ChildSpec> children) const {
  const Criterion& parent = node(parent_id);
  if (children.empty()) return *this;
  if (parent.layer + 1 > max_layers_) {
    throw ValidationError("cannot attach below layer " + std::to_string(parent.layer) +
                          ": max_layers is " + std::to_string(max_layers_));
  }
  const auto existing = this->children(parent_id);
  if (existing.size() + children.size() > static_cast<std::size_t>(max_children_)) {
    throw ValidationError("parent " + parent.id + " would have " +
                          std::to_string(existing.size() + children.size()) +
                          " children; max_children is " + std::to_string(max_children_));
  }
  std::set<std::string> names;
  for (const auto& c : existing) names.insert(c.name);
  for (const auto& c : children) {
    if (c.name.empty()) throw ValidationError("child criterion name must be non-empty");
    if (c.definition.empty()) throw ValidationError("child criterion '" + c.name + "' has no definition");
    if (!names.insert(c.name).second) {
      throw ValidationError("duplicate sibling name '" + c.name + "' under " + parent.id);
    }
  }

  CriteriaTree out = *this;
  const int layer = parent.layer + 1;
  const std::string pid = parent.id;
  int ordinal = static_cast<int>(existing.size());
  for (const auto& c : children) {
    out.nodes_.push_back(Criterion{out.next_id(), c.name, c.definition, layer, pid, ordinal++});
  }
  return out;
}

int CriteriaTree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.layer);
  return d;
}

bool CriteriaTree::contains(std::string_view id) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const Criterion& c) { return c.id == id; });
}

const Criterion& CriteriaTree::node(std::string_view id) const {
  auto it = std::find_if(nodes_.begin(), nodes_.end(), [&](const Criterion& c) { return c.id == id; });
  if (it == nodes_.end()) throw NotFoundError("unknown criterion id '" + std::string(id) + "'");
  return *it;
}

std::vector<Criterion> CriteriaTree::lineage(std::string_view id) const {
  std::vector<Criterion> path;
  const Criterion* cur = &node(id);
  path.push_back(*cur);
  while (cur->parent_id) {
    cur = &node(*cur->parent_id);
    path.push_back(*cur);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<Criterion> CriteriaTree::children(std::string_view id) const {
  std::vector<Criterion> out;
  for (const auto& n : nodes_) {
    if (n.parent_id && *n.parent_id == id) out.push_back(n);
  }
  std::sort(out.begin(), out.end(), [](const Criterion& a, const Criterion& b) { return a.ordinal < b.ordinal; });
  return out;
}

std::vector<Criterion> CriteriaTree::nodes_at_layer(int layer) const {
  if (layer < 0 || layer > max_layers_) {
    throw ValidationError("layer " + std::to_string(layer) + " outside [0, " +
                          std::to_string(max_layers_) + "]");
  }
  std::vector<Criterion> level{root()};
  for (int l = 1; l <= layer; ++l) {
    std::vector<Criterion> next;
    for (const auto& parent : level) {
      auto kids = children(parent.id);
      next.insert(next.end(), kids.begin(), kids.end());
    }
    level = std::move(next);
  }
  return level;
}

std::vector<std::string> CriteriaTree::feature_order() const {
  std::vector<std::string> order;
  for (int l = 1; l <= max_layers_; ++l) {
    for (const auto& c : nodes_at_layer(l)) order.push_back(c.id);
  }
  if (order.empty()) throw ValidationError("tree has no criteria below the root");
  return order;
}

CriteriaTree CriteriaTree::truncated(int max_layer) const {
  CriteriaTree out = *this;
  std::erase_if(out.nodes_, [&](const Criterion& c) { return c.layer > max_layer; });
  return out;
}

void CriteriaTree::validate() const {
  if (nodes_.empty()) throw ValidationError("tree has no nodes");
  std::unordered_map<std::string, const Criterion*> by_id;
  std::set<std::pair<std::string, int>> ordinals;
  int roots = 0;
  for (const auto& n : nodes_) {
    if (!by_id.emplace(n.id, &n).second) throw ValidationError("duplicate node id '" + n.id + "'");
  }
  for (const auto& n : nodes_) {
    if (n.layer < 0 || n.layer > max_layers_) {
      throw ValidationError("node '" + n.id + "' has layer out of range");
    }
    if ((n.layer == 0) != !n.parent_id.has_value()) {
      throw ValidationError("node '" + n.id + "': layer 0 iff no parent");
    }
    if (n.layer == 0) {
      ++roots;
      continue;
    }
    if (n.definition.empty()) throw ValidationError("node '" + n.id + "' has empty definition");
    auto it = by_id.find(*n.parent_id);
    if (it == by_id.end()) throw ValidationError("node '" + n.id + "' has unknown parent");
    if (it->second->layer != n.layer - 1) {
      throw ValidationError("node '" + n.id + "' is not one layer below its parent");
    }
    if (!ordinals.emplace(*n.parent_id, n.ordinal).second) {
      throw ValidationError("duplicate ordinal under '" + *n.parent_id + "'");
    }
  }
  if (roots != 1) throw ValidationError("tree must have exactly one layer-0 node");
  if (nodes_.front().layer != 0) throw ValidationError("root must be stored first");
  for (const auto& n : nodes_) {
    if (children(n.id).size() > static_cast<std::size_t>(max_children_)) {
      throw ValidationError("node '" + n.id + "' exceeds max_children");
    }
  }
}

nlohmann::json CriteriaTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  auto emit = [&](const Criterion& c) {
    nodes.push_back({{"id", c.id},
                     {"name", c.name},
                     {"definition", c.definition},
                     {"layer", c.layer},
                     {"parent_id", c.parent_id ? nlohmann::json(*c.parent_id) : nlohmann::json(nullptr)},
                     {"ordinal", c.ordinal}});
  };
  emit(root());
  if (size() > 1) {
    for (const auto& id : feature_order()) emit(node(id));
  }
  return {{"task", task()}, {"max_layers", max_layers_}, {"max_children", max_children_}, {"nodes", nodes}};
}

CriteriaTree CriteriaTree::from_json(const nlohmann::json& j) {
  try {
    CriteriaTree tree;
    tree.max_layers_ = j.at("max_layers").get<int>();
    tree.max_children_ = j.at("max_children").get<int>();
    for (const auto& n : j.at("nodes")) {
      Criterion c;
      c.id = n.at("id").get<std::string>();
      c.name = n.at("name").get<std::string>();
      c.definition = n.at("definition").get<std::string>();
      c.layer = n.at("layer").get<int>();
      if (!n.at("parent_id").is_null()) c.parent_id = n.at("parent_id").get<std::string>();
      c.ordinal = n.at("ordinal").get<int>();
      tree.nodes_.push_back(std::move(c));
    }
    tree.validate();
    if (tree.task() != j.at("task").get<std::string>()) {
      throw ValidationError("task field does not match the root definition");
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("criteria tree json: ") + e.what());
  }
}

}  // namespace hdeval
