#include "gdemed/dag.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <sstream>

namespace gdemed {

namespace {

constexpr std::uint64_t bit(int v) { return std::uint64_t{1} << v; }

template <class F>
void for_each_bit(std::uint64_t set, F&& f) {
  while (set) {
    const int v = std::countr_zero(set);
    f(v);
    set &= set - 1;
  }
}

std::uint64_t closure(std::uint64_t set, const std::vector<std::uint64_t>& step) {
  std::uint64_t frontier = set;
  while (frontier) {
    std::uint64_t next = 0;
    for_each_bit(frontier, [&](int v) { next |= step[static_cast<std::size_t>(v)]; });
    frontier = next & ~set;
    set |= next;
  }
  return set;
}

bool dsep(const std::vector<std::uint64_t>& parents, const std::vector<std::uint64_t>& children, std::uint64_t a,
          std::uint64_t b, std::uint64_t c) {
  const std::uint64_t anc_c = closure(c, parents);
  // Reachability over (node, direction): up = entered from a child.
  std::uint64_t seen_up = 0, seen_down = 0;
  std::vector<std::pair<int, bool>> stack;
  for_each_bit(a, [&](int v) { stack.emplace_back(v, true); });
  while (!stack.empty()) {
    const auto [v, up] = stack.back();
    stack.pop_back();
    std::uint64_t& seen = up ? seen_up : seen_down;
    if (seen & bit(v)) continue;
    seen |= bit(v);
    const bool conditioned = (c & bit(v)) != 0;
    if (!conditioned && (b & bit(v))) return false;
    const auto i = static_cast<std::size_t>(v);
    if (up) {
      if (conditioned) continue;
      for_each_bit(parents[i], [&](int p) { stack.emplace_back(p, true); });
      for_each_bit(children[i], [&](int ch) { stack.emplace_back(ch, false); });
    } else {
      if (!conditioned) for_each_bit(children[i], [&](int ch) { stack.emplace_back(ch, false); });
      if (anc_c & bit(v)) for_each_bit(parents[i], [&](int p) { stack.emplace_back(p, true); });
    }
  }
  return true;
}

// ---- tokenizer -------------------------------------------------------------

enum class Tok { ident, string, arrow, lbrace, rbrace, lbracket, rbracket, comma, equals, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  int line = 0;
};

bool is_name_char(char ch) {
  return !std::isspace(static_cast<unsigned char>(ch)) && ch != '{' && ch != '}' && ch != '[' && ch != ']' &&
         ch != ',' && ch != '=' && ch != '"' && ch != ';';
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  int line = 1;
  std::size_t i = 0;
  while (i < text.size()) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == ';') {
      ++i;
      continue;
    }
    switch (ch) {
      case '{': out.push_back({Tok::lbrace, "{", line}); ++i; continue;
      case '}': out.push_back({Tok::rbrace, "}", line}); ++i; continue;
      case '[': out.push_back({Tok::lbracket, "[", line}); ++i; continue;
      case ']': out.push_back({Tok::rbracket, "]", line}); ++i; continue;
      case ',': out.push_back({Tok::comma, ",", line}); ++i; continue;
      case '=': out.push_back({Tok::equals, "=", line}); ++i; continue;
      default: break;
    }
    if (ch == '"') {
      const std::size_t close = text.find('"', i + 1);
      if (close == std::string_view::npos) throw DagError("unterminated string", line);
      const std::string_view body = text.substr(i + 1, close - i - 1);
      out.push_back({Tok::string, std::string(body), line});
      line += static_cast<int>(std::count(body.begin(), body.end(), '\n'));
      i = close + 1;
      continue;
    }
    if (text.substr(i, 2) == "->") {
      out.push_back({Tok::arrow, "->", line});
      i += 2;
      continue;
    }
    if (text.substr(i, 2) == "<-" || text.substr(i, 2) == "--")
      throw DagError("unsupported edge type '" + std::string(text.substr(i, 3)) + "'", line);
    std::size_t j = i;
    while (j < text.size() && is_name_char(text[j]) && text.substr(j, 2) != "->" && text.substr(j, 2) != "<-")
      ++j;
    if (j == i) throw DagError(std::string("unexpected character '") + ch + "'", line);
    out.push_back({Tok::ident, std::string(text.substr(i, j - i)), line});
    i = j;
  }
  out.push_back({Tok::end, "", line});
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  CausalDag run() {
    const Token& head = next();
    if (head.kind != Tok::ident || head.text != "dag") throw DagError("expected 'dag'", head.line);
    expect(Tok::lbrace, "'{'");
    CausalDag g;
    while (peek().kind != Tok::rbrace) {
      const Token& name = next();
      if (name.kind == Tok::end) throw DagError("missing closing '}'", name.line);
      if (name.kind != Tok::ident && name.kind != Tok::string)
        throw DagError("expected a node name, got '" + name.text + "'", name.line);
      if (peek().kind == Tok::equals) {
        next();
        const Token& value = next();
        if (value.kind != Tok::string && value.kind != Tok::ident)
          throw DagError("expected a value for '" + name.text + "'", value.line);
        g.graph_attrs.emplace_back(name.text, value.text);
        continue;
      }
      if (peek().kind == Tok::arrow) {
        std::string from = name.text;
        while (peek().kind == Tok::arrow) {
          next();
          const Token& to = next();
          if (to.kind != Tok::ident && to.kind != Tok::string)
            throw DagError("expected a node name after '->'", to.line);
          auto attrs = peek().kind == Tok::lbracket ? attributes() : std::vector<Attribute>{};
          for (const std::string* n : {static_cast<const std::string*>(&from), &to.text})
            if (!g.find(*n)) throw DagError("edge references undeclared node '" + *n + "'", to.line);
          try {
            g.add_edge(from, to.text, std::move(attrs));
          } catch (const DagError& e) {
            throw DagError(e.what(), to.line);
          }
          from = to.text;
        }
        continue;
      }
      DagNode node;
      node.name = name.text;
      if (peek().kind == Tok::lbracket) {
        for (auto& [key, value] : attributes()) {
          if (key == "latent" && !value) node.latent = true;
          else if (key == "exposure" && !value) node.exposure = true;
          else if (key == "outcome" && !value) node.outcome = true;
          else if (key == "adjusted" && !value) node.adjusted = true;
          else if (key == "pos" && value) node.pos = value;
          else node.other.emplace_back(key, value);
        }
      }
      try {
        g.add_node(std::move(node));
      } catch (const DagError& e) {
        throw DagError(e.what(), name.line);
      }
    }
    next();
    if (peek().kind != Tok::end) throw DagError("unexpected text after closing '}'", peek().line);
    return g;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  void expect(Tok kind, const char* what) {
    const Token& t = next();
    if (t.kind != kind) throw DagError(std::string("expected ") + what, t.line);
  }

  std::vector<Attribute> attributes() {
    expect(Tok::lbracket, "'['");
    std::vector<Attribute> out;
    while (true) {
      const Token& key = next();
      if (key.kind == Tok::rbracket && out.empty()) break;
      if (key.kind != Tok::ident) throw DagError("malformed attribute list", key.line);
      std::optional<std::string> value;
      if (peek().kind == Tok::equals) {
        next();
        const Token& v = next();
        if (v.kind != Tok::string && v.kind != Tok::ident) throw DagError("malformed attribute value", v.line);
        value = v.text;
      }
      out.emplace_back(key.text, value);
      const Token& sep = next();
      if (sep.kind == Tok::rbracket) break;
      if (sep.kind != Tok::comma) throw DagError("expected ',' or ']' in attribute list", sep.line);
    }
    return out;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

void write_attrs(std::ostream& out, const std::vector<Attribute>& attrs) {
  if (attrs.empty()) return;
  out << " [";
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (i) out << ',';
    out << attrs[i].first;
    if (attrs[i].second) out << "=\"" << *attrs[i].second << '"';
  }
  out << ']';
}

}  // namespace

int CausalDag::add_node(DagNode node) {
  if (find(node.name)) throw DagError("duplicate node '" + node.name + "'");
  if (size() >= kMaxNodes) throw DagError("too many nodes");
  nodes_.push_back(std::move(node));
  parents_.push_back(0);
  children_.push_back(0);
  return size() - 1;
}

void CausalDag::add_edge(std::string_view from, std::string_view to, std::vector<Attribute> attrs) {
  const int a = index(from), b = index(to);
  if (a == b || (descendants(bit(b)) & bit(a)))
    throw DagError("edge " + std::string(from) + " -> " + std::string(to) + " creates a cycle");
  if (children_[static_cast<std::size_t>(a)] & bit(b)) return;
  edges_.push_back({a, b, std::move(attrs)});
  children_[static_cast<std::size_t>(a)] |= bit(b);
  parents_[static_cast<std::size_t>(b)] |= bit(a);
}

std::optional<int> CausalDag::find(std::string_view name) const {
  for (int i = 0; i < size(); ++i)
    if (nodes_[static_cast<std::size_t>(i)].name == name) return i;
  return std::nullopt;
}

int CausalDag::index(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw DagError("unknown node '" + std::string(name) + "'");
}

std::uint64_t CausalDag::ancestors(std::uint64_t set) const { return closure(set, parents_); }
std::uint64_t CausalDag::descendants(std::uint64_t set) const { return closure(set, children_); }

std::uint64_t CausalDag::observed() const {
  std::uint64_t m = 0;
  for (int i = 0; i < size(); ++i)
    if (!nodes_[static_cast<std::size_t>(i)].latent) m |= bit(i);
  return m;
}

std::uint64_t CausalDag::mask(const NodeSet& names) const {
  std::uint64_t m = 0;
  for (const auto& n : names) m |= bit(index(n));
  return m;
}

NodeSet CausalDag::names(std::uint64_t m) const {
  NodeSet out;
  for_each_bit(m, [&](int v) { out.insert(nodes_[static_cast<std::size_t>(v)].name); });
  return out;
}

std::optional<std::string> CausalDag::exposure() const {
  for (const auto& n : nodes_)
    if (n.exposure) return n.name;
  return std::nullopt;
}

std::optional<std::string> CausalDag::outcome() const {
  for (const auto& n : nodes_)
    if (n.outcome) return n.name;
  return std::nullopt;
}

CausalDag parse_dag(std::string_view text) { return Parser(tokenize(text)).run(); }

std::string serialize_dag(const CausalDag& g) {
  std::ostringstream out;
  out << "dag {\n";
  for (const auto& [key, value] : g.graph_attrs) out << key << "=\"" << value.value_or("") << "\"\n";
  for (const auto& n : g.nodes()) {
    std::vector<Attribute> attrs;
    if (n.latent) attrs.emplace_back("latent", std::nullopt);
    if (n.exposure) attrs.emplace_back("exposure", std::nullopt);
    if (n.outcome) attrs.emplace_back("outcome", std::nullopt);
    if (n.adjusted) attrs.emplace_back("adjusted", std::nullopt);
    attrs.insert(attrs.end(), n.other.begin(), n.other.end());
    if (n.pos) attrs.emplace_back("pos", *n.pos);
    out << n.name;
    write_attrs(out, attrs);
    out << '\n';
  }
  for (const auto& e : g.edges()) {
    out << g.nodes()[static_cast<std::size_t>(e.from)].name << " -> " << g.nodes()[static_cast<std::size_t>(e.to)].name;
    write_attrs(out, e.attrs);
    out << '\n';
  }
  out << "}\n";
  return out.str();
}

bool d_separated(const CausalDag& g, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  if ((a & b) || (a & c) || (b & c)) throw std::invalid_argument("d_separated: sets must be disjoint");
  std::vector<std::uint64_t> parents, children;
  for (int v = 0; v < g.size(); ++v) {
    parents.push_back(g.parents(v));
    children.push_back(g.children(v));
  }
  return dsep(parents, children, a, b, c);
}

bool d_separated(const CausalDag& g, const NodeSet& a, const NodeSet& b, const NodeSet& c) {
  return d_separated(g, g.mask(a), g.mask(b), g.mask(c));
}

namespace {

struct AdjustmentProblem {
  std::vector<std::uint64_t> parents, children;  // proper back-door graph
  std::uint64_t forbidden = 0;
  std::uint64_t x = 0, y = 0;

  AdjustmentProblem(const CausalDag& g, int xi, int yi) : x(bit(xi)), y(bit(yi)) {
    if (xi == yi) throw std::invalid_argument("adjustment: exposure and outcome must differ");
    const std::uint64_t causal = (g.descendants(x) & ~x) & g.ancestors(y);
    forbidden = g.descendants(causal) | x;
    for (int v = 0; v < g.size(); ++v) {
      parents.push_back(g.parents(v));
      children.push_back(g.children(v));
    }
    const auto xs = static_cast<std::size_t>(xi);
    for_each_bit(children[xs] & causal, [&](int w) { parents[static_cast<std::size_t>(w)] &= ~x; });
    children[xs] &= ~causal;
  }

  [[nodiscard]] bool valid(std::uint64_t z) const { return !(z & forbidden) && !(z & y) && dsep(parents, children, x, y, z); }
};

}  // namespace

bool is_adjustment_set(const CausalDag& g, const std::string& exposure, const std::string& outcome, const NodeSet& z) {
  return AdjustmentProblem(g, g.index(exposure), g.index(outcome)).valid(g.mask(z));
}

std::vector<NodeSet> minimal_adjustment_sets(const CausalDag& g, const std::string& exposure,
                                             const std::string& outcome) {
  const AdjustmentProblem prob(g, g.index(exposure), g.index(outcome));
  const std::uint64_t cand = g.observed() & ~prob.forbidden & ~prob.y;
  std::vector<int> idx;
  for_each_bit(cand, [&](int v) { idx.push_back(v); });
  if (idx.size() > 24) throw std::invalid_argument("adjustment: too many candidate nodes for exhaustive search");
  const std::uint32_t total = std::uint32_t{1} << idx.size();
  std::vector<std::uint32_t> order(total);
  for (std::uint32_t s = 0; s < total; ++s) order[s] = s;
  std::stable_sort(order.begin(), order.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
  std::vector<std::uint64_t> found;
  for (std::uint32_t s : order) {
    std::uint64_t z = 0;
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (s & (1u << k)) z |= bit(idx[k]);
    if (std::any_of(found.begin(), found.end(), [&](std::uint64_t f) { return (f & z) == f; })) continue;
    if (prob.valid(z)) found.push_back(z);
  }
  std::vector<NodeSet> out;
  for (auto z : found) out.push_back(g.names(z));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace gdemed
