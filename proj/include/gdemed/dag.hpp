#pragma once

// Causal DAGs in the dagitty text format, d-separation and minimal
// sufficient adjustment sets.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gdemed {

using NodeSet = std::set<std::string>;
using Attribute = std::pair<std::string, std::optional<std::string>>;

struct DagNode {
  std::string name;
  bool latent = false;
  bool exposure = false;
  bool outcome = false;
  bool adjusted = false;
  std::optional<std::string> pos;
  std::vector<Attribute> other;  // kept for round-tripping
};

struct DagEdge {
  int from = 0;
  int to = 0;
  std::vector<Attribute> attrs;
};

class DagError : public std::runtime_error {
 public:
  DagError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  [[nodiscard]] int line() const { return line_; }

 private:
  int line_;
};

class CausalDag {
 public:
  static constexpr int kMaxNodes = 64;

  /// Throws DagError on duplicate names or when the graph is full.
  int add_node(DagNode node);
  /// Throws DagError for unknown endpoints or when the edge closes a cycle.
  void add_edge(std::string_view from, std::string_view to, std::vector<Attribute> attrs = {});

  [[nodiscard]] const std::vector<DagNode>& nodes() const { return nodes_; }
  [[nodiscard]] const std::vector<DagEdge>& edges() const { return edges_; }
  [[nodiscard]] int size() const { return static_cast<int>(nodes_.size()); }
  [[nodiscard]] std::optional<int> find(std::string_view name) const;
  /// Throws DagError for unknown names.
  [[nodiscard]] int index(std::string_view name) const;
  [[nodiscard]] std::uint64_t parents(int v) const { return parents_[static_cast<std::size_t>(v)]; }
  [[nodiscard]] std::uint64_t children(int v) const { return children_[static_cast<std::size_t>(v)]; }
  [[nodiscard]] std::uint64_t ancestors(std::uint64_t set) const;    // inclusive
  [[nodiscard]] std::uint64_t descendants(std::uint64_t set) const;  // inclusive
  [[nodiscard]] std::uint64_t observed() const;
  [[nodiscard]] std::uint64_t mask(const NodeSet& names) const;
  [[nodiscard]] NodeSet names(std::uint64_t mask) const;
  [[nodiscard]] std::optional<std::string> exposure() const;
  [[nodiscard]] std::optional<std::string> outcome() const;

  std::vector<Attribute> graph_attrs;  // e.g. bb

 private:
  std::vector<DagNode> nodes_;
  std::vector<DagEdge> edges_;
  std::vector<std::uint64_t> parents_;
  std::vector<std::uint64_t> children_;
};

CausalDag parse_dag(std::string_view text);
/// Canonical text: graph attributes, node lines in declaration order, edge
/// lines in insertion order.
std::string serialize_dag(const CausalDag& g);

/// True when every path between A and B is blocked by C. Sets must be disjoint.
bool d_separated(const CausalDag& g, const NodeSet& a, const NodeSet& b, const NodeSet& c);
bool d_separated(const CausalDag& g, std::uint64_t a, std::uint64_t b, std::uint64_t c);

/// Z is a valid adjustment set for the effect of exposure on outcome.
bool is_adjustment_set(const CausalDag& g, const std::string& exposure, const std::string& outcome, const NodeSet& z);

/// All inclusion-minimal valid adjustment sets of observed nodes, sorted.
std::vector<NodeSet> minimal_adjustment_sets(const CausalDag& g, const std::string& exposure,
                                             const std::string& outcome);

}  // namespace gdemed
