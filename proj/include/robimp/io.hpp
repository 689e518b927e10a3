#pragma once

// Artifact serialization.  CSV files carry a `# seed=` comment line, then a
// mandatory header, then LF-terminated rows with minimal quoting; doubles are
// printed with std::to_chars so the text round-trips bit-exactly and never
// depends on locale.  Summary reports serialize as JSON with pinned key order.

#include <charconv>
#include <fstream>
#include <map>

#include <json.hpp>

#include "oracle.hpp"
#include "sdg.hpp"

namespace robimp {

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  const std::to_chars_result r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const std::from_chars_result r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InvalidInstance("parse_double: bad number '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  const std::from_chars_result r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InvalidInstance("parse_int: bad integer '" + std::string(s) + "'");
  return v;
}

// ---------------------------------------------------------------------------
// CSV primitives
// ---------------------------------------------------------------------------

namespace detail {

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (const char ch : field) {
    if (ch == '"') out += "\"\"";
    else out += ch;
  }
  out += '"';
  return out;
}

inline void csv_row(std::string& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_quote(fields[i]);
  }
  out += '\n';
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvDoc {
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvDoc read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInstance("read_csv: cannot open " + path);
  CsvDoc doc;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string_view sv(line);
      const std::size_t at = sv.find("seed=");
      if (at != std::string_view::npos) {
        doc.seed = (std::uint64_t)parse_int(sv.substr(at + 5));
        doc.has_seed = true;
      }
      continue;
    }
    if (!saw_header) {
      doc.header = csv_split(line);
      saw_header = true;
    } else {
      doc.rows.push_back(csv_split(line));
    }
  }
  if (!saw_header) throw InvalidInstance("read_csv: missing header in " + path);
  return doc;
}

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInstance("write_text: cannot open " + path);
  out << body;
  if (!out) throw InvalidInstance("write_text: write failed for " + path);
}

inline std::string hist_column(const InterventionHistory& v) { return hist_text(v); }

inline InterventionHistory parse_hist_column(const std::string& text) {
  InterventionHistory v;
  if (text == "-" || text.empty()) return v;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t colon = text.find(':', pos);
    if (colon == std::string::npos)
      throw InvalidInstance("history column: missing ':' in '" + text + "'");
    std::size_t comma = text.find(',', colon);
    if (comma == std::string::npos) comma = text.size();
    const int t = (int)parse_int(std::string_view(text).substr(pos, colon - pos));
    const int b = (int)parse_int(std::string_view(text).substr(colon + 1, comma - colon - 1));
    v = with_entry(v, t, b);
    pos = comma == text.size() ? comma : comma + 1;
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Value field table: depth,node_id,history,budget,value with budget the
// remaining intervention allowance at that state.
// ---------------------------------------------------------------------------

inline std::string field_csv_text(const ValueField& field, std::uint64_t seed) {
  std::string out = "# seed=" + std::to_string(seed) + "\n";
  detail::csv_row(out, {"depth", "node_id", "history", "budget", "value"});
  for (const ValueField::Entry& e : field.sorted_entries()) {
    detail::csv_row(out, {std::to_string(e.node.depth), std::to_string(e.node.index),
                          detail::hist_column(e.hist),
                          std::to_string(field.budget - (int)e.hist.size()),
                          format_double(e.value)});
  }
  return out;
}

inline void write_field_csv(const std::string& path, const ValueField& field,
                            std::uint64_t seed) {
  detail::write_text(path, field_csv_text(field, seed));
}

struct LoadedField {
  ValueField field;
  std::uint64_t seed = 0;
};

inline LoadedField read_field_csv(const std::string& path) {
  const detail::CsvDoc doc = detail::read_csv(path);
  const std::vector<std::string> want = {"depth", "node_id", "history", "budget", "value"};
  if (doc.header != want) throw InvalidInstance("field csv: unexpected header in " + path);
  LoadedField out;
  out.seed = doc.seed;
  out.field.budget = -1;
  for (const std::vector<std::string>& row : doc.rows) {
    if (row.size() != 5) throw InvalidInstance("field csv: bad row width in " + path);
    const NodeRef nd{(int)parse_int(row[0]), (std::uint64_t)parse_int(row[1])};
    const InterventionHistory v = detail::parse_hist_column(row[2]);
    const int k = (int)parse_int(row[3]) + (int)v.size();
    if (out.field.budget < 0) out.field.budget = k;
    if (out.field.budget != k)
      throw InvalidInstance("field csv: inconsistent budget arithmetic in " + path);
    out.field.table[state_key(nd, v)] = parse_double(row[4]);
  }
  if (out.field.budget < 0) out.field.budget = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Control table: one row per state where the rule intervenes.
// ---------------------------------------------------------------------------

inline std::string control_csv_text(const ImpulseProblem& p, const ImpulseControlRule& rule,
                                    int k, std::uint64_t seed) {
  const LatticeModel& m = p.lattice;
  std::string out = "# seed=" + std::to_string(seed) + "\n";
  detail::csv_row(out, {"depth", "node_id", "history", "impulse"});
  for (int depth = 0; depth < m.grid.n; ++depth) {
    const std::vector<InterventionHistory> hists =
        enumerate_histories(depth, p.n_impulses(), std::max(0, k - 1));
    for (std::uint64_t node = 0; node < m.nodes_at(depth); ++node) {
      const NodeRef nd{depth, node};
      for (const InterventionHistory& v : hists) {
        const std::optional<int> act = rule.decide(nd, v);
        if (!act) continue;
        detail::csv_row(out, {std::to_string(depth), std::to_string(node),
                              detail::hist_column(v), std::to_string(*act)});
      }
    }
  }
  return out;
}

inline void write_control_csv(const std::string& path, const ImpulseProblem& p,
                              const ImpulseControlRule& rule, int k, std::uint64_t seed) {
  detail::write_text(path, control_csv_text(p, rule, k, seed));
}

struct LoadedControl {
  std::map<std::string, int> fire;
  std::uint64_t seed = 0;

  ImpulseControlRule rule() const {
    ImpulseControlRule r;
    r.decide = [tab = fire](const NodeRef& nd,
                            const InterventionHistory& v) -> std::optional<int> {
      const auto it = tab.find(state_key(nd, v));
      if (it == tab.end()) return std::nullopt;
      return it->second;
    };
    return r;
  }
};

inline LoadedControl read_control_csv(const std::string& path) {
  const detail::CsvDoc doc = detail::read_csv(path);
  const std::vector<std::string> want = {"depth", "node_id", "history", "impulse"};
  if (doc.header != want) throw InvalidInstance("control csv: unexpected header in " + path);
  LoadedControl out;
  out.seed = doc.seed;
  for (const std::vector<std::string>& row : doc.rows) {
    if (row.size() != 4) throw InvalidInstance("control csv: bad row width in " + path);
    const NodeRef nd{(int)parse_int(row[0]), (std::uint64_t)parse_int(row[1])};
    out.fire[state_key(nd, detail::parse_hist_column(row[2]))] = (int)parse_int(row[3]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strategy table: one row per interior state with the chosen kernel index.
// ---------------------------------------------------------------------------

inline std::string strategy_csv_text(const ImpulseProblem& p, const AdversaryStrategyRule& rule,
                                     int k, std::uint64_t seed) {
  const LatticeModel& m = p.lattice;
  std::string out = "# seed=" + std::to_string(seed) + "\n";
  detail::csv_row(out, {"depth", "node_id", "history", "kernel"});
  for (int depth = 0; depth < m.grid.n; ++depth) {
    const std::vector<InterventionHistory> hists =
        enumerate_histories(depth, p.n_impulses(), k);
    for (std::uint64_t node = 0; node < m.nodes_at(depth); ++node) {
      const NodeRef nd{depth, node};
      for (const InterventionHistory& v : hists)
        detail::csv_row(out, {std::to_string(depth), std::to_string(node),
                              detail::hist_column(v), std::to_string(rule.choose(nd, v))});
    }
  }
  return out;
}

inline void write_strategy_csv(const std::string& path, const ImpulseProblem& p,
                               const AdversaryStrategyRule& rule, int k, std::uint64_t seed) {
  detail::write_text(path, strategy_csv_text(p, rule, k, seed));
}

struct LoadedStrategy {
  std::map<std::string, int> pick;
  std::uint64_t seed = 0;

  AdversaryStrategyRule rule() const {
    AdversaryStrategyRule r;
    r.choose = [tab = pick](const NodeRef& nd, const InterventionHistory& v) -> int {
      const auto it = tab.find(state_key(nd, v));
      if (it == tab.end())
        throw StructuralError("strategy table: no row for " + detail::node_text(nd) +
                              " history " + detail::hist_text(v));
      return it->second;
    };
    return r;
  }
};

inline LoadedStrategy read_strategy_csv(const std::string& path) {
  const detail::CsvDoc doc = detail::read_csv(path);
  const std::vector<std::string> want = {"depth", "node_id", "history", "kernel"};
  if (doc.header != want) throw InvalidInstance("strategy csv: unexpected header in " + path);
  LoadedStrategy out;
  out.seed = doc.seed;
  for (const std::vector<std::string>& row : doc.rows) {
    if (row.size() != 4) throw InvalidInstance("strategy csv: bad row width in " + path);
    const NodeRef nd{(int)parse_int(row[0]), (std::uint64_t)parse_int(row[1])};
    out.pick[state_key(nd, detail::parse_hist_column(row[2]))] = (int)parse_int(row[3]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON summaries (pinned key order)
// ---------------------------------------------------------------------------

using json = nlohmann::ordered_json;

inline json solve_summary_json(double root_value, int k_used, double certified_gap,
                               double residual, std::uint64_t seed) {
  json j;
  j["root_value"] = root_value;
  j["k_used"] = k_used;
  j["certified_gap"] = certified_gap;
  j["dpp_residual"] = residual;
  j["seed"] = seed;
  return j;
}

inline json game_value_json(const GameValueReport& rep, int k, std::uint64_t seed) {
  json j;
  j["upper"] = rep.upper;
  j["lower"] = rep.lower;
  j["dp_value"] = rep.dp_value;
  j["k"] = k;
  j["n_controls"] = rep.n_controls;
  j["n_strategies"] = rep.n_strategies;
  j["seed"] = seed;
  j["pass"] = rep.pass;
  return j;
}

inline json mc_json(const McReport& rep) {
  json j;
  j["mean"] = rep.mean;
  j["se"] = rep.se;
  j["n_paths"] = rep.n_paths;
  j["seed"] = rep.seed;
  return j;
}

inline void write_json(const std::string& path, const json& j) {
  detail::write_text(path, j.dump(2) + "\n");
}

}  // namespace robimp
