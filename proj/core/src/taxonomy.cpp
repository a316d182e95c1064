#include "sevtrain/taxonomy.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "sevtrain/util.hpp"

namespace sevtrain {

using nlohmann::json;

ClassTaxonomy::ClassTaxonomy(std::vector<Node> nodes,
                             std::vector<std::pair<std::string, int>> classes,
                             std::vector<std::string> coarse_names)
    : nodes_(std::move(nodes)), coarse_names_(std::move(coarse_names)) {
  for (int i = 0; i < num_nodes(); ++i) {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!name_to_node_.emplace(n.name, i).second) {
      throw std::runtime_error("taxonomy: duplicate node name '" + n.name + "'");
    }
  }
  for (int i = 0; i < num_nodes(); ++i) {
    const int p = nodes_[static_cast<std::size_t>(i)].parent;
    if (p == -1) {
      if (root_ != -1) {
        throw std::runtime_error("taxonomy: multiple roots ('" + nodes_[static_cast<std::size_t>(root_)].name +
                                 "' and '" + nodes_[static_cast<std::size_t>(i)].name + "')");
      }
      root_ = i;
    } else if (p < 0 || p >= num_nodes()) {
      throw std::runtime_error("taxonomy: node '" + nodes_[static_cast<std::size_t>(i)].name +
                               "' has an out-of-range parent");
    }
  }
  if (root_ == -1) throw std::runtime_error("taxonomy: no root node (cycle detected)");

  // Depths via parent chains; a chain longer than the node count is a cycle.
  depths_.assign(static_cast<std::size_t>(num_nodes()), -1);
  depths_[static_cast<std::size_t>(root_)] = 0;
  for (int i = 0; i < num_nodes(); ++i) {
    int steps = 0;
    int cur = i;
    std::vector<int> chain;
    while (depths_[static_cast<std::size_t>(cur)] == -1) {
      chain.push_back(cur);
      cur = nodes_[static_cast<std::size_t>(cur)].parent;
      if (++steps > num_nodes()) {
        throw std::runtime_error("taxonomy: cycle detected at node '" +
                                 nodes_[static_cast<std::size_t>(i)].name + "'");
      }
    }
    int d = depths_[static_cast<std::size_t>(cur)];
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      depths_[static_cast<std::size_t>(*it)] = ++d;
    }
  }

  if (classes.empty()) throw std::runtime_error("taxonomy: no fine classes declared");
  fine_nodes_.reserve(classes.size());
  fine_coarse_.reserve(classes.size());
  std::vector<bool> used(static_cast<std::size_t>(num_nodes()), false);
  for (const auto& [name, coarse] : classes) {
    auto it = name_to_node_.find(name);
    if (it == name_to_node_.end()) {
      throw std::runtime_error("taxonomy: fine class node '" + name + "' not in the tree");
    }
    if (used[static_cast<std::size_t>(it->second)]) {
      throw std::runtime_error("taxonomy: node '" + name + "' used by two fine classes");
    }
    used[static_cast<std::size_t>(it->second)] = true;
    if (coarse < 0 || coarse >= num_coarse()) {
      throw std::runtime_error("taxonomy: fine class '" + name + "' has no valid coarse mapping");
    }
    fine_nodes_.push_back(it->second);
    fine_coarse_.push_back(coarse);
  }
}

int ClassTaxonomy::node_index(const std::string& name) const {
  auto it = name_to_node_.find(name);
  if (it == name_to_node_.end()) {
    throw std::runtime_error("taxonomy: unknown node name '" + name + "'");
  }
  return it->second;
}

void ClassTaxonomy::check_fine(int fine) const {
  if (fine < 0 || fine >= num_fine()) {
    throw std::runtime_error("taxonomy: unknown fine class index " + std::to_string(fine));
  }
}

int ClassTaxonomy::fine_node(int fine) const {
  check_fine(fine);
  return fine_nodes_[static_cast<std::size_t>(fine)];
}

const std::string& ClassTaxonomy::fine_name(int fine) const {
  return nodes_[static_cast<std::size_t>(fine_node(fine))].name;
}

int ClassTaxonomy::coarse_of(int fine) const {
  check_fine(fine);
  return fine_coarse_[static_cast<std::size_t>(fine)];
}

int ClassTaxonomy::path_distance_nodes(int a, int b) const {
  if (a < 0 || a >= num_nodes() || b < 0 || b >= num_nodes()) {
    throw std::runtime_error("taxonomy: node index out of range");
  }
  // Walk both nodes up to their lowest common ancestor.
  int da = depths_[static_cast<std::size_t>(a)];
  int db = depths_[static_cast<std::size_t>(b)];
  int dist = 0;
  while (da > db) { a = nodes_[static_cast<std::size_t>(a)].parent; --da; ++dist; }
  while (db > da) { b = nodes_[static_cast<std::size_t>(b)].parent; --db; ++dist; }
  while (a != b) {
    a = nodes_[static_cast<std::size_t>(a)].parent;
    b = nodes_[static_cast<std::size_t>(b)].parent;
    dist += 2;
  }
  return dist;
}

int ClassTaxonomy::path_distance(const std::string& a, const std::string& b) const {
  return path_distance_nodes(node_index(a), node_index(b));
}

double ClassTaxonomy::path_similarity(int fine_a, int fine_b) const {
  const int d = path_distance_nodes(fine_node(fine_a), fine_node(fine_b));
  return 1.0 / (static_cast<double>(d) + 1.0);
}

SimilarityMatrix::SimilarityMatrix(int f, std::vector<double> values,
                                   std::vector<std::string> names)
    : f_(f), values_(std::move(values)), names_(std::move(names)) {
  if (f_ <= 0 || values_.size() != static_cast<std::size_t>(f_) * static_cast<std::size_t>(f_) ||
      names_.size() != static_cast<std::size_t>(f_)) {
    throw std::runtime_error("similarity matrix: inconsistent dimensions");
  }
}

std::string SimilarityMatrix::to_csv() const {
  std::string out;
  for (int j = 0; j < f_; ++j) {
    if (j) out += ',';
    out += names_[static_cast<std::size_t>(j)];
  }
  out += '\n';
  for (int i = 0; i < f_; ++i) {
    for (int j = 0; j < f_; ++j) {
      if (j) out += ',';
      out += format_g9(at(i, j));
    }
    out += '\n';
  }
  return out;
}

void SimilarityMatrix::save_csv(const std::filesystem::path& p) const {
  write_text_file(p, to_csv());
}

ClassTaxonomy parse_taxonomy_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("taxonomy: malformed file: ") + e.what());
  }
  if (!j.contains("nodes") || !j.contains("edges") || !j.contains("classes")) {
    throw std::runtime_error("taxonomy: malformed file: missing nodes/edges/classes section");
  }

  std::vector<ClassTaxonomy::Node> nodes;
  std::unordered_map<std::string, int> index;
  for (const auto& n : j.at("nodes")) {
    std::string name = n.at("name").get<std::string>();
    if (index.count(name)) throw std::runtime_error("taxonomy: duplicate node name '" + name + "'");
    index.emplace(name, static_cast<int>(nodes.size()));
    nodes.push_back({std::move(name), -1});
  }
  for (const auto& e : j.at("edges")) {
    const std::string child = e.at("child").get<std::string>();
    const std::string parent = e.at("parent").get<std::string>();
    auto ci = index.find(child);
    auto pi = index.find(parent);
    if (ci == index.end()) throw std::runtime_error("taxonomy: edge references unknown node '" + child + "'");
    if (pi == index.end()) throw std::runtime_error("taxonomy: edge references unknown node '" + parent + "'");
    auto& node = nodes[static_cast<std::size_t>(ci->second)];
    if (node.parent != -1) {
      throw std::runtime_error("taxonomy: node '" + child + "' has two parents");
    }
    node.parent = pi->second;
  }

  const auto& classes_json = j.at("classes");
  std::vector<std::pair<std::string, int>> classes(classes_json.size());
  std::vector<std::string> coarse_names;
  std::vector<bool> seen(classes_json.size(), false);
  for (const auto& c : classes_json) {
    const int fine = c.at("fine_index").get<int>();
    if (fine < 0 || fine >= static_cast<int>(classes.size()) || seen[static_cast<std::size_t>(fine)]) {
      throw std::runtime_error("taxonomy: fine_index values must cover 0..F-1 exactly once");
    }
    seen[static_cast<std::size_t>(fine)] = true;
    const int coarse = c.at("coarse_index").get<int>();
    const std::string coarse_name = c.at("coarse_name").get<std::string>();
    if (coarse < 0) throw std::runtime_error("taxonomy: negative coarse_index");
    if (coarse >= static_cast<int>(coarse_names.size())) {
      coarse_names.resize(static_cast<std::size_t>(coarse) + 1);
    }
    auto& slot = coarse_names[static_cast<std::size_t>(coarse)];
    if (slot.empty()) {
      slot = coarse_name;
    } else if (slot != coarse_name) {
      throw std::runtime_error("taxonomy: coarse index " + std::to_string(coarse) +
                               " maps to two names ('" + slot + "', '" + coarse_name + "')");
    }
    classes[static_cast<std::size_t>(fine)] = {c.at("node_name").get<std::string>(), coarse};
  }
  for (std::size_t i = 0; i < coarse_names.size(); ++i) {
    if (coarse_names[i].empty()) {
      throw std::runtime_error("taxonomy: coarse index " + std::to_string(i) + " has no classes");
    }
  }
  return ClassTaxonomy(std::move(nodes), std::move(classes), std::move(coarse_names));
}

ClassTaxonomy load_taxonomy(const std::filesystem::path& file) {
  return parse_taxonomy_json(read_text_file(file));
}

std::string taxonomy_to_json(const ClassTaxonomy& tax) {
  json nodes = json::array();
  json edges = json::array();
  for (int i = 0; i < tax.num_nodes(); ++i) {
    nodes.push_back({{"name", tax.node_name(i)}});
    if (tax.parent_of(i) != -1) {
      edges.push_back({{"child", tax.node_name(i)}, {"parent", tax.node_name(tax.parent_of(i))}});
    }
  }
  json classes = json::array();
  for (int f = 0; f < tax.num_fine(); ++f) {
    const int c = tax.coarse_of(f);
    classes.push_back({{"fine_index", f},
                       {"node_name", tax.fine_name(f)},
                       {"coarse_index", c},
                       {"coarse_name", tax.coarse_name(c)}});
  }
  json j = {{"nodes", nodes}, {"edges", edges}, {"classes", classes}};
  return j.dump(2) + "\n";
}

SimilarityMatrix build_similarity_matrix(const ClassTaxonomy& tax) {
  const int f = tax.num_fine();
  std::vector<double> values(static_cast<std::size_t>(f) * static_cast<std::size_t>(f));
  std::vector<std::string> names(static_cast<std::size_t>(f));
  for (int a = 0; a < f; ++a) {
    names[static_cast<std::size_t>(a)] = tax.fine_name(a);
    values[static_cast<std::size_t>(a) * static_cast<std::size_t>(f) + static_cast<std::size_t>(a)] = 1.0;
    for (int b = a + 1; b < f; ++b) {
      const double s = tax.path_similarity(a, b);
      values[static_cast<std::size_t>(a) * static_cast<std::size_t>(f) + static_cast<std::size_t>(b)] = s;
      values[static_cast<std::size_t>(b) * static_cast<std::size_t>(f) + static_cast<std::size_t>(a)] = s;
    }
  }
  return SimilarityMatrix(f, std::move(values), std::move(names));
}

SemanticTargetSet build_target_sets(const SimilarityMatrix& sim, int k) {
  const int f = sim.size();
  if (k < 1 || k >= f) {
    throw std::runtime_error("build_target_sets: k must satisfy 1 <= k < F (k=" +
                             std::to_string(k) + ", F=" + std::to_string(f) + ")");
  }
  SemanticTargetSet out;
  out.k = k;
  out.targets.resize(static_cast<std::size_t>(f));
  std::vector<int> order(static_cast<std::size_t>(f));
  for (int y = 0; y < f; ++y) {
    std::iota(order.begin(), order.end(), 0);
    // Highest similarity first; ties broken by ascending class index.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return sim.at(y, a) > sim.at(y, b);
    });
    auto& t = out.targets[static_cast<std::size_t>(y)];
    t.reserve(static_cast<std::size_t>(k));
    for (int idx : order) {
      if (idx == y) continue;
      t.push_back(idx);
      if (static_cast<int>(t.size()) == k) break;
    }
  }
  return out;
}

}  // namespace sevtrain
