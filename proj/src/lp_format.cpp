#include "gridflow/errors.hpp"
#include "gridflow/io.hpp"
#include "gridflow/miqp.hpp"

#include <charconv>
#include <cmath>
#include <unordered_map>

namespace gridflow {

namespace {

constexpr std::size_t kLineWidth = 78;

// Accumulates whitespace-separated tokens, breaking lines before kLineWidth.
class LineWriter {
 public:
  explicit LineWriter(std::string& out) : out_(out) {}

  void begin(std::string_view first) {
    finish();
    line_ = " ";
    line_ += first;
  }

  void token(std::string_view tok) {
    if (line_.size() + 1 + tok.size() > kLineWidth) {
      out_ += line_;
      out_ += '\n';
      line_ = "   ";
    } else {
      line_ += ' ';
    }
    line_ += tok;
  }

  void finish() {
    if (!line_.empty()) {
      out_ += line_;
      out_ += '\n';
      line_.clear();
    }
  }

 private:
  std::string& out_;
  std::string line_;
};

void write_term(LineWriter& w, double coef, std::string_view name, bool first) {
  if (std::signbit(coef)) {
    w.token("-");
  } else if (!first) {
    w.token("+");
  }
  w.token(format_real(std::abs(coef)));
  w.token(name);
}

const char* sense_token(Sense s) {
  switch (s) {
    case Sense::le: return "<=";
    case Sense::ge: return ">=";
    case Sense::eq: return "=";
  }
  return "=";
}

void write_name_list(std::string& out, const MiqpModel& model, VarKind kind,
                     std::string_view header) {
  if (model.count(kind) == 0) return;
  out += header;
  out += '\n';
  LineWriter w(out);
  bool first = true;
  for (const auto& v : model.variables) {
    if (v.kind != kind) continue;
    if (first) {
      w.begin(v.name);
      first = false;
    } else {
      w.token(v.name);
    }
  }
  w.finish();
}

}  // namespace

std::string emit_lp(const MiqpModel& model) {
  std::string out;
  out += "\\ gridflow intersection MIQP\n";
  out += "\\ meta vehicles=" + std::to_string(model.n_vehicles) +
         " horizon=" + std::to_string(model.horizon) + " big_m=" + format_real(model.big_m) +
         " objective_constant=" + format_real(model.objective_constant) + '\n';
  out += model.sense == ObjectiveSense::minimize ? "Minimize\n" : "Maximize\n";

  const auto name = [&](int k) -> const std::string& {
    return model.variables[static_cast<std::size_t>(k)].name;
  };

  LineWriter w(out);
  w.begin("obj:");
  bool first = true;
  for (const auto& t : model.linear_objective) {
    write_term(w, t.coef, name(t.var), first);
    first = false;
  }
  if (!model.quadratic_objective.empty()) {
    if (!first) w.token("+");
    w.token("[");
    bool first_q = true;
    for (const auto& q : model.quadratic_objective) {
      // The bracket is halved, so coefficients are written doubled.
      const double c = 2.0 * q.coef;
      if (std::signbit(c)) {
        w.token("-");
      } else if (!first_q) {
        w.token("+");
      }
      w.token(format_real(std::abs(c)));
      if (q.a == q.b) {
        w.token(name(q.a));
        w.token("^2");
      } else {
        w.token(name(q.a));
        w.token("*");
        w.token(name(q.b));
      }
      first_q = false;
    }
    w.token("]");
    w.token("/");
    w.token("2");
  }
  w.finish();

  out += "Subject To\n";
  for (const auto& c : model.constraints) {
    w.begin(c.name + ':');
    bool first_t = true;
    for (const auto& t : c.terms) {
      write_term(w, t.coef, name(t.var), first_t);
      first_t = false;
    }
    w.token(sense_token(c.sense));
    w.token(format_real(c.rhs));
    w.finish();
  }

  out += "Bounds\n";
  for (const auto& v : model.variables) {
    out += ' ' + format_real(v.lower) + " <= " + v.name + " <= " + format_real(v.upper) + '\n';
  }
  write_name_list(out, model, VarKind::integer, "Generals");
  write_name_list(out, model, VarKind::binary, "Binaries");
  out += "End\n";
  return out;
}

namespace {

struct Token {
  std::string_view text;
  std::size_t line;
};

enum class Section { none, objective, constraints, bounds, generals, binaries, end };

class LpReader {
 public:
  explicit LpReader(std::string_view text) : text_(text) {}

  MiqpModel read() {
    split();
    parse_bounds();  // variable order comes from the Bounds section
    parse_objective();
    parse_constraints();
    mark_kind(generals_, VarKind::integer);
    mark_kind(binaries_, VarKind::binary);
    return std::move(model_);
  }

 private:
  std::string_view text_;
  MiqpModel model_;
  std::vector<Token> objective_, constraints_, bounds_, generals_, binaries_;
  std::unordered_map<std::string, int> index_;
  bool have_meta_ = false;
  bool have_end_ = false;

  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

  [[noreturn]] static void fail(const std::string& what, std::size_t line) {
    throw FormatError("LP line " + std::to_string(line) + ": " + what, 0, line);
  }

  static double number(const Token& t) {
    double v = 0.0;
    const char* begin = t.text.data();
    const char* end = begin + t.text.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) fail("expected a number, got '" + std::string(t.text) + "'", t.line);
    return v;
  }

  void parse_meta(std::string_view line, std::size_t line_no) {
    // "\ meta key=value ..."
    std::size_t pos = line.find("meta");
    std::string_view rest = line.substr(pos + 4);
    int seen = 0;
    while (!rest.empty()) {
      while (!rest.empty() && is_space(rest.front())) rest.remove_prefix(1);
      if (rest.empty()) break;
      const std::size_t stop = rest.find(' ');
      const std::string_view kv = rest.substr(0, stop);
      rest = stop == std::string_view::npos ? std::string_view{} : rest.substr(stop);
      const std::size_t eq = kv.find('=');
      if (eq == std::string_view::npos) fail("malformed metadata '" + std::string(kv) + "'", line_no);
      const std::string_view key = kv.substr(0, eq);
      const Token value{kv.substr(eq + 1), line_no};
      if (key == "vehicles") {
        model_.n_vehicles = static_cast<int>(number(value));
      } else if (key == "horizon") {
        model_.horizon = static_cast<int>(number(value));
      } else if (key == "big_m") {
        model_.big_m = number(value);
      } else if (key == "objective_constant") {
        model_.objective_constant = number(value);
      } else {
        fail("unknown metadata key '" + std::string(key) + "'", line_no);
      }
      ++seen;
    }
    have_meta_ = seen == 4;
  }

  void split() {
    Section section = Section::none;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text_.size()) {
      std::size_t stop = text_.find('\n', start);
      if (stop == std::string_view::npos) stop = text_.size();
      std::string_view line = text_.substr(start, stop - start);
      start = stop + 1;
      ++line_no;
      while (!line.empty() && is_space(line.back())) line.remove_suffix(1);
      if (line.empty()) continue;
      if (line.front() == '\\') {
        if (line.find("\\ meta ") == 0) parse_meta(line, line_no);
        continue;
      }
      if (section == Section::end) fail("content after End", line_no);
      if (line == "Minimize" || line == "Maximize") {
        model_.sense = line == "Minimize" ? ObjectiveSense::minimize : ObjectiveSense::maximize;
        section = Section::objective;
        continue;
      }
      if (line == "Subject To") { section = Section::constraints; continue; }
      if (line == "Bounds") { section = Section::bounds; continue; }
      if (line == "Generals") { section = Section::generals; continue; }
      if (line == "Binaries") { section = Section::binaries; continue; }
      if (line == "End") { section = Section::end; have_end_ = true; continue; }

      std::vector<Token>* dest = nullptr;
      switch (section) {
        case Section::objective: dest = &objective_; break;
        case Section::constraints: dest = &constraints_; break;
        case Section::bounds: dest = &bounds_; break;
        case Section::generals: dest = &generals_; break;
        case Section::binaries: dest = &binaries_; break;
        default: fail("content outside any section", line_no);
      }
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && is_space(line[i])) ++i;
        std::size_t j = i;
        while (j < line.size() && !is_space(line[j])) ++j;
        if (j > i) dest->push_back({line.substr(i, j - i), line_no});
        i = j;
      }
    }
    if (!have_end_) fail("missing End", line_no);
    if (!have_meta_) fail("missing metadata comment", 1);
  }

  int var(const Token& t) {
    auto it = index_.find(std::string(t.text));
    if (it == index_.end()) fail("undeclared variable '" + std::string(t.text) + "'", t.line);
    return it->second;
  }

  void parse_bounds() {
    if (bounds_.size() % 5 != 0) fail("malformed Bounds section", bounds_.empty() ? 0 : bounds_.back().line);
    for (std::size_t k = 0; k < bounds_.size(); k += 5) {
      if (bounds_[k + 1].text != "<=" || bounds_[k + 3].text != "<=") {
        fail("expected 'lower <= name <= upper'", bounds_[k].line);
      }
      Variable v;
      v.name = std::string(bounds_[k + 2].text);
      v.lower = number(bounds_[k]);
      v.upper = number(bounds_[k + 4]);
      if (!index_.emplace(v.name, static_cast<int>(model_.variables.size())).second) {
        fail("duplicate bound for '" + v.name + "'", bounds_[k].line);
      }
      model_.variables.push_back(std::move(v));
    }
  }

  // Reads "[sign] coef name" terms from toks[pos...] until a stop token.
  std::vector<LinearTerm> linear_terms(const std::vector<Token>& toks, std::size_t& pos,
                                       bool allow_bracket) {
    std::vector<LinearTerm> terms;
    while (pos < toks.size()) {
      std::string_view t = toks[pos].text;
      if (t == "<=" || t == ">=" || t == "=") break;
      if (allow_bracket && (t == "[" || (t == "+" && pos + 1 < toks.size() && toks[pos + 1].text == "["))) break;
      double sign = 1.0;
      if (t == "+" || t == "-") {
        sign = t == "-" ? -1.0 : 1.0;
        ++pos;
      }
      if (pos + 1 >= toks.size()) fail("truncated term", toks.back().line);
      const double coef = number(toks[pos]);
      const int v = var(toks[pos + 1]);
      terms.push_back({v, sign * coef});
      pos += 2;
    }
    return terms;
  }

  void parse_objective() {
    if (objective_.empty() || objective_.front().text != "obj:") fail("expected 'obj:'", objective_.empty() ? 0 : objective_.front().line);
    std::size_t pos = 1;
    model_.linear_objective = linear_terms(objective_, pos, true);
    if (pos == objective_.size()) return;
    if (objective_[pos].text == "+") ++pos;
    if (pos >= objective_.size() || objective_[pos].text != "[") fail("expected '['", objective_[pos - 1].line);
    ++pos;
    while (pos < objective_.size() && objective_[pos].text != "]") {
      double sign = 1.0;
      if (objective_[pos].text == "+" || objective_[pos].text == "-") {
        sign = objective_[pos].text == "-" ? -1.0 : 1.0;
        ++pos;
      }
      if (pos + 2 >= objective_.size()) fail("truncated quadratic term", objective_.back().line);
      const double coef = sign * number(objective_[pos]) / 2.0;
      const int a = var(objective_[pos + 1]);
      if (objective_[pos + 2].text == "^2") {
        model_.quadratic_objective.push_back({a, a, coef});
        pos += 3;
      } else if (objective_[pos + 2].text == "*" && pos + 3 < objective_.size()) {
        model_.quadratic_objective.push_back({a, var(objective_[pos + 3]), coef});
        pos += 4;
      } else {
        fail("malformed quadratic term", objective_[pos].line);
      }
    }
    if (pos + 3 != objective_.size() || objective_[pos + 1].text != "/" ||
        objective_[pos + 2].text != "2") {
      fail("expected '] / 2' closing the quadratic part", objective_.back().line);
    }
  }

  void parse_constraints() {
    std::size_t pos = 0;
    while (pos < constraints_.size()) {
      const Token& head = constraints_[pos];
      if (head.text.size() < 2 || head.text.back() != ':') fail("expected a row name", head.line);
      Constraint c;
      c.name = std::string(head.text.substr(0, head.text.size() - 1));
      ++pos;
      c.terms = linear_terms(constraints_, pos, false);
      if (pos + 1 >= constraints_.size()) fail("row '" + c.name + "' has no right-hand side", head.line);
      const std::string_view s = constraints_[pos].text;
      c.sense = s == "<=" ? Sense::le : s == ">=" ? Sense::ge : Sense::eq;
      c.rhs = number(constraints_[pos + 1]);
      pos += 2;
      model_.constraints.push_back(std::move(c));
    }
  }

  void mark_kind(const std::vector<Token>& names, VarKind kind) {
    for (const auto& t : names) {
      model_.variables[static_cast<std::size_t>(var(t))].kind = kind;
    }
  }
};

}  // namespace

MiqpModel parse_lp(std::string_view text) { return LpReader(text).read(); }

}  // namespace gridflow
