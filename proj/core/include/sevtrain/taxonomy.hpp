#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace sevtrain {

// Rooted tree of label concepts. Leaves carry the fine classes; every fine
// class belongs to exactly one coarse (super) class. Immutable once built.
class ClassTaxonomy {
 public:
  struct Node {
    std::string name;
    int parent = -1;  // -1 for the root
  };

  // Builds and validates. `classes[i]` gives, for fine class i, the node name
  // and the coarse class index; `coarse_names[c]` names coarse class c.
  ClassTaxonomy(std::vector<Node> nodes,
                std::vector<std::pair<std::string, int>> classes,
                std::vector<std::string> coarse_names);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_fine() const { return static_cast<int>(fine_nodes_.size()); }
  int num_coarse() const { return static_cast<int>(coarse_names_.size()); }
  int root() const { return root_; }

  const std::string& node_name(int node) const { return nodes_[static_cast<std::size_t>(node)].name; }
  int parent_of(int node) const { return nodes_[static_cast<std::size_t>(node)].parent; }
  int node_index(const std::string& name) const;  // throws on unknown name

  int fine_node(int fine) const;                    // tree node of a fine class
  const std::string& fine_name(int fine) const;
  int coarse_of(int fine) const;                    // coarse class of a fine class
  const std::string& coarse_name(int coarse) const { return coarse_names_[static_cast<std::size_t>(coarse)]; }

  // Edge count of the unique tree path between two nodes (undirected).
  int path_distance_nodes(int a, int b) const;
  // Same, addressed by node names.
  int path_distance(const std::string& a, const std::string& b) const;
  // 1 / (distance + 1) between two fine classes.
  double path_similarity(int fine_a, int fine_b) const;

  int depth_of(int node) const { return depths_[static_cast<std::size_t>(node)]; }

 private:
  void check_fine(int fine) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> name_to_node_;
  std::vector<int> fine_nodes_;            // fine class -> node index
  std::vector<int> fine_coarse_;           // fine class -> coarse class
  std::vector<std::string> coarse_names_;
  std::vector<int> depths_;                // node -> depth from root
  int root_ = -1;
};

// F x F symmetric matrix of path similarities, diagonal exactly 1.
class SimilarityMatrix {
 public:
  SimilarityMatrix(int f, std::vector<double> values, std::vector<std::string> names);

  int size() const { return f_; }
  double at(int a, int b) const { return values_[static_cast<std::size_t>(a) * static_cast<std::size_t>(f_) + static_cast<std::size_t>(b)]; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::string>& class_names() const { return names_; }

  // CSV: header row of class names, then F rows of F values.
  std::string to_csv() const;
  void save_csv(const std::filesystem::path& p) const;

 private:
  int f_;
  std::vector<double> values_;
  std::vector<std::string> names_;
};

// Per-class semantic target sets C(y): the k classes most similar to y.
struct SemanticTargetSet {
  int k = 5;
  std::vector<std::vector<int>> targets;  // targets[y], each of size k, y excluded

  const std::vector<int>& for_class(int y) const { return targets[static_cast<std::size_t>(y)]; }
};

// Loads the edge-list hierarchy format (JSON with nodes/edges/classes
// sections). Throws std::runtime_error naming the offending node on any
// structural violation.
ClassTaxonomy load_taxonomy(const std::filesystem::path& file);
ClassTaxonomy parse_taxonomy_json(const std::string& text);

// Serializes a taxonomy back to the hierarchy file format.
std::string taxonomy_to_json(const ClassTaxonomy& tax);

SimilarityMatrix build_similarity_matrix(const ClassTaxonomy& tax);

// For each class, the k most similar classes (self excluded); ties broken by
// ascending class index. Throws if k >= F.
SemanticTargetSet build_target_sets(const SimilarityMatrix& sim, int k);

}  // namespace sevtrain
