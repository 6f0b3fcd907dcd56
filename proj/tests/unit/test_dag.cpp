#include <algorithm>
#include <fstream>
#include <tuple>
#include <sstream>

#include "doctest.h"
#include "gdemed/dag.hpp"
#include "gdemed/stochastics.hpp"
#include "oracles.hpp"

using namespace gdemed;

namespace {

std::string fixture_text() {
  std::ifstream in(std::string(GDEMED_TEST_DATA) + "/causal.dag");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

oracle::Digraph to_oracle(const CausalDag& g) {
  oracle::Digraph d(g.size());
  for (const auto& e : g.edges()) d.edge(e.from, e.to);
  return d;
}

std::vector<bool> as_flags(int n, const std::vector<int>& members) {
  std::vector<bool> z(n, false);
  for (int v : members) z[v] = true;
  return z;
}

// Adjustment criterion for a single exposure, from paths alone: no member on
// or below a proper causal path, and every back-door path blocked once the
// first edges of causal paths are removed.
bool valid_by_paths(const CausalDag& g, int x, int y, const std::vector<int>& z) {
  const oracle::Digraph d = to_oracle(g);
  const auto below_x = d.descendants(x);
  std::vector<bool> on_causal(g.size(), false);
  for (int v = 0; v < g.size(); ++v)
    if (v != x && below_x[v] && d.descendants(v)[y]) on_causal[v] = true;
  for (int m : z)
    for (int v = 0; v < g.size(); ++v)
      if (on_causal[v] && d.descendants(v)[m]) return false;
  oracle::Digraph backdoor(g.size());
  for (const auto& e : g.edges())
    if (!(e.from == x && on_causal[e.to])) backdoor.edge(e.from, e.to);
  return !oracle::path_open(backdoor, x, y, as_flags(g.size(), z));
}

std::vector<NodeSet> minimal_by_paths(const CausalDag& g, int x, int y) {
  std::vector<int> cand;
  for (int v = 0; v < g.size(); ++v)
    if (v != x && v != y && !g.nodes()[v].latent) cand.push_back(v);
  std::vector<std::vector<int>> valid;
  for (unsigned m = 0; m < (1u << cand.size()); ++m) {
    std::vector<int> z;
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (m >> i & 1u) z.push_back(cand[i]);
    if (valid_by_paths(g, x, y, z)) valid.push_back(z);
  }
  std::vector<NodeSet> out;
  for (const auto& z : valid) {
    bool minimal = true;
    for (const auto& w : valid)
      if (w.size() < z.size() && std::includes(z.begin(), z.end(), w.begin(), w.end())) minimal = false;
    if (!minimal) continue;
    NodeSet s;
    for (int v : z) s.insert(g.nodes()[v].name);
    out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("fixture graph parses") {
  const CausalDag g = parse_dag(fixture_text());
  CHECK(g.size() == 14);
  CHECK(g.edges().size() == 26);
  int latent = 0;
  for (const auto& n : g.nodes()) latent += n.latent;
  CHECK(latent == 5);
  CHECK(g.exposure() == "sym15");
  CHECK(g.outcome() == "y2");
  CHECK(g.nodes()[g.index("treat")].adjusted);
  CHECK(g.nodes()[g.index("y0")].pos == "0.212,0.436");
  CHECK(g.graph_attrs.size() == 1);
}

TEST_CASE("adjustment set table") {
  const CausalDag g = parse_dag(fixture_text());
  const std::vector<std::tuple<std::string, std::string, NodeSet>> table{
      {"sym15", "y2", {"sym05", "sym1", "y1.5"}}, {"sym1", "y2", {"sym05", "y1"}}, {"sym1", "y1.5", {"sym05", "y1"}},
      {"sym05", "y2", {"y05"}},                   {"sym05", "y1.5", {"y05"}},    {"sym05", "y1", {"y05"}}};
  for (const auto& [x, y, want] : table) {
    CAPTURE(x);
    CAPTURE(y);
    const auto sets = minimal_adjustment_sets(g, x, y);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0] == want);
    CHECK(sets == minimal_by_paths(g, g.index(x), g.index(y)));
  }
}

TEST_CASE("every pair on the fixture agrees with the path criterion") {
  const CausalDag g = parse_dag(fixture_text());
  for (int x = 0; x < g.size(); ++x)
    for (int y = 0; y < g.size(); ++y) {
      if (x == y || g.nodes()[x].latent || g.nodes()[y].latent) continue;
      CAPTURE(g.nodes()[x].name);
      CAPTURE(g.nodes()[y].name);
      const auto sets = minimal_adjustment_sets(g, g.nodes()[x].name, g.nodes()[y].name);
      CHECK(sets == minimal_by_paths(g, x, y));
      for (const auto& s : sets) CHECK(is_adjustment_set(g, g.nodes()[x].name, g.nodes()[y].name, s));
    }
}

TEST_CASE("textbook d-separation") {
  const CausalDag chain = parse_dag("dag { a b c a -> b b -> c }");
  CHECK(d_separated(chain, NodeSet{"a"}, NodeSet{"c"}, NodeSet{"b"}));
  CHECK_FALSE(d_separated(chain, NodeSet{"a"}, NodeSet{"c"}, NodeSet{}));
  const CausalDag collider = parse_dag("dag { a b c d a -> b c -> b b -> d }");
  CHECK(d_separated(collider, NodeSet{"a"}, NodeSet{"c"}, NodeSet{}));
  CHECK_FALSE(d_separated(collider, NodeSet{"a"}, NodeSet{"c"}, NodeSet{"b"}));
  CHECK_FALSE(d_separated(collider, NodeSet{"a"}, NodeSet{"c"}, NodeSet{"d"}));
  const CausalDag two = parse_dag("dag { a b a -> b }");
  CHECK(two.size() == 2);
  CHECK(two.edges().size() == 1);
  const auto sets = minimal_adjustment_sets(two, "a", "b");
  REQUIRE(sets.size() == 1);
  CHECK(sets[0].empty());
}

TEST_CASE("d-separation matches path enumeration on the fixture") {
  const CausalDag g = parse_dag(fixture_text());
  const oracle::Digraph d = to_oracle(g);
  const int n = g.size();
  Stream s(StreamKey(41, {0}));
  for (int q = 0; q < 2000; ++q) {
    const int a = static_cast<int>(s.uniform() * n);
    int b = static_cast<int>(s.uniform() * n);
    if (b == a) b = (b + 1) % n;
    std::uint64_t z = 0;
    std::vector<bool> flags(n, false);
    for (int v = 0; v < n; ++v)
      if (v != a && v != b && s.uniform() < 0.25) {
        z |= 1ull << v;
        flags[v] = true;
      }
    CAPTURE(q);
    CHECK(d_separated(g, 1ull << a, 1ull << b, z) == oracle::d_separated(d, {a}, {b}, flags));
  }
  // Every conditioning set of size <= 3 for one mediator-outcome pair.
  const int x = g.index("sym05"), y = g.index("y2");
  std::vector<int> others;
  for (int v = 0; v < n; ++v)
    if (v != x && v != y) others.push_back(v);
  for (std::size_t i = 0; i <= others.size(); ++i)
    for (std::size_t j = i; j <= others.size(); ++j)
      for (std::size_t k = j; k <= others.size(); ++k) {
        std::vector<int> zs;
        for (std::size_t idx : {i, j, k})
          if (idx < others.size() && std::find(zs.begin(), zs.end(), others[idx]) == zs.end()) zs.push_back(others[idx]);
        std::uint64_t z = 0;
        for (int v : zs) z |= 1ull << v;
        CHECK(d_separated(g, 1ull << x, 1ull << y, z) == oracle::d_separated(d, {x}, {y}, as_flags(n, zs)));
      }
}

TEST_CASE("d-separation matches path enumeration on random graphs") {
  Stream s(StreamKey(42, {0}));
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 5 + rep % 9;
    std::string text = "dag {\n";
    for (int v = 0; v < n; ++v) text += "v" + std::to_string(v) + "\n";
    oracle::Digraph d(n);
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b)
        if (s.uniform() < 0.3) {
          text += "v" + std::to_string(a) + " -> v" + std::to_string(b) + "\n";
          d.edge(a, b);
        }
    const CausalDag g = parse_dag(text + "}\n");
    for (int q = 0; q < 40; ++q) {
      const int a = static_cast<int>(s.uniform() * n);
      const int b = (a + 1 + static_cast<int>(s.uniform() * (n - 1))) % n;
      std::uint64_t z = 0;
      std::vector<bool> flags(n, false);
      for (int v = 0; v < n; ++v)
        if (v != a && v != b && s.uniform() < 0.3) {
          z |= 1ull << v;
          flags[v] = true;
        }
      CHECK(d_separated(g, 1ull << a, 1ull << b, z) == oracle::d_separated(d, {a}, {b}, flags));
    }
  }
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_dag("dag { a -> b b -> a }"), DagError);
  CHECK_THROWS_AS(parse_dag("dag { a b a -> b b -> a }"), DagError);
  CHECK_THROWS_AS(parse_dag("dag {\na\na -> c\n}"), DagError);
  CHECK_THROWS_AS(parse_dag("dag {\na\na\n}"), DagError);
  CHECK_THROWS_AS(parse_dag("graph { a }"), DagError);
  CHECK_THROWS_AS(parse_dag("dag {\na [latent\n}"), DagError);
  try {
    (void)parse_dag("dag {\na\nb\na -> -> b\n}");
    FAIL("expected DagError");
  } catch (const DagError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("serialize then parse is a fixed point") {
  const CausalDag g = parse_dag(fixture_text());
  const std::string once = serialize_dag(g);
  const CausalDag h = parse_dag(once);
  CHECK(serialize_dag(h) == once);
  CHECK(h.size() == g.size());
  CHECK(h.edges().size() == g.edges().size());
  for (int v = 0; v < g.size(); ++v) {
    CHECK(h.nodes()[v].name == g.nodes()[v].name);
    CHECK(h.nodes()[v].latent == g.nodes()[v].latent);
    CHECK(h.nodes()[v].pos == g.nodes()[v].pos);
  }
  CHECK(minimal_adjustment_sets(h, "sym15", "y2") == minimal_adjustment_sets(g, "sym15", "y2"));
}
