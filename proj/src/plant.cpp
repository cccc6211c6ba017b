#include "cpfc/plant.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cpfc/errors.hpp"
#include "cpfc/io.hpp"

namespace cpfc {

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

DerSpec make(const char* name, DerKind kind, double p, double delay, double rise) {
  DerSpec s;
  s.name = name;
  s.kind = kind;
  s.p_inst = p;
  s.t_delay = delay;
  s.t_rise = rise;
  return s;
}

}  // namespace

std::string to_string(DerKind kind) {
  switch (kind) {
    case DerKind::WT: return "WT";
    case DerKind::CHP: return "CHP";
    case DerKind::PV: return "PV";
  }
  return "?";
}

std::string to_string(ModelType model) {
  switch (model) {
    case ModelType::PT1: return "pt1";
    case ModelType::PT2: return "pt2";
    case ModelType::RHPZ: return "rhpz";
  }
  return "?";
}

DerKind parse_der_kind(const std::string& text) {
  const auto u = upper(text);
  if (u == "WT") return DerKind::WT;
  if (u == "CHP") return DerKind::CHP;
  if (u == "PV") return DerKind::PV;
  throw ArgumentError("unknown DER kind '" + text + "' (expected WT, CHP or PV)");
}

ModelType parse_model_type(const std::string& text) {
  const auto u = upper(text);
  if (u == "PT1") return ModelType::PT1;
  if (u == "PT2") return ModelType::PT2;
  if (u == "RHPZ") return ModelType::RHPZ;
  throw ArgumentError("unknown model type '" + text + "' (expected pt1, pt2 or rhpz)");
}

double DerSpec::schedule_at(double t) const {
  double v = 0.0;
  for (const auto& [ts, p] : schedule) {
    if (ts > t) break;
    v = p;
  }
  return v;
}

void DerSpec::validate() const {
  if (name.empty()) throw ArgumentError("DER name must not be empty");
  if (!(p_inst > 0.0) || !std::isfinite(p_inst)) throw ArgumentError(name + ": p_inst must be > 0");
  if (!(t_delay >= 0.0) || !std::isfinite(t_delay)) throw ArgumentError(name + ": t_delay must be >= 0");
  if (!(t_rise > 0.0) || !std::isfinite(t_rise)) throw ArgumentError(name + ": t_rise must be > 0");
  if (c_d && !std::isfinite(*c_d)) throw ArgumentError(name + ": c_d must be finite");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (!(schedule[i].first > schedule[i - 1].first))
      throw ArgumentError(name + ": schedule times must be increasing");
}

DerSet::DerSet(std::vector<DerSpec> specs) : specs_(std::move(specs)) {
  if (specs_.empty() || specs_.size() > 24) throw ArgumentError("DER set needs 1..24 entries");
  std::set<std::string> names;
  for (const auto& s : specs_) {
    s.validate();
    if (!names.insert(s.name).second) throw ArgumentError("duplicate DER name '" + s.name + "'");
  }
}

Mask DerSet::full_mask() const { return static_cast<Mask>((std::uint64_t{1} << specs_.size()) - 1); }

std::vector<std::size_t> DerSet::active(Mask mask) const {
  if (mask == 0) throw ArgumentError("empty DER mask");
  if ((mask & ~full_mask()) != 0) throw ArgumentError("mask " + std::to_string(mask) + " has bits beyond the DER set");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (mask & (Mask{1} << i)) idx.push_back(i);
  return idx;
}

std::string DerSet::hash() const {
  std::ostringstream ss;
  for (const auto& s : specs_) {
    ss << s.name << ',' << to_string(s.kind) << ',' << format_number(s.p_inst) << ','
       << format_number(s.t_delay) << ',' << format_number(s.t_rise) << ','
       << format_number(s.participation()) << ';';
    for (const auto& [t, p] : s.schedule) ss << format_number(t) << ':' << format_number(p) << ' ';
    ss << '\n';
  }
  return fnv1a_hex(ss.str());
}

DerSet reference_fleet() {
  return DerSet({
      make("SGen 1", DerKind::WT, 2.0e6, 0.01, 0.515),
      make("SGen 2", DerKind::WT, 2.0e6, 0.01, 0.515),
      make("SGen 3", DerKind::WT, 1.7e6, 0.01, 0.515),
      make("SGen 4", DerKind::WT, 1.9e6, 0.01, 0.515),
      make("SGen 5", DerKind::CHP, 0.31e6, 1.0, 24.57),
      make("SGen 6", DerKind::CHP, 0.35e6, 1.0, 24.57),
      make("SGen 7", DerKind::WT, 1.8e6, 0.01, 0.515),
      make("SGen 8", DerKind::WT, 2.0e6, 0.01, 0.515),
      make("SGen 9", DerKind::PV, 0.195e6, 0.01, 0.1),
      make("SGen 10", DerKind::PV, 0.125e6, 0.01, 0.1),
      make("SGen 11", DerKind::CHP, 0.28e6, 1.0, 24.57),
  });
}

double time_constant(double t_rise) {
  if (!(t_rise > 0.0)) throw ArgumentError("t_rise must be > 0");
  return t_rise / kRiseFactor;
}

DelayTf build_der_tf(const DerSpec& spec, double w, double b, ModelType model) {
  if (!(w > 0.0) || w > 1.0) throw ArgumentError("w must lie in (0, 1]");
  if (!(b > 0.0) || !std::isfinite(b)) throw ArgumentError("b must be > 0");
  const double k = w * spec.p_inst;
  const double t = time_constant(spec.t_rise) * b;
  switch (model) {
    case ModelType::PT1:
      return DelayTf(RationalTf({k}, {1.0, t}), spec.t_delay);
    case ModelType::PT2: {
      const double a = t / 1.5291;
      return DelayTf(RationalTf({k}, {1.0, t / 0.7645, a * a}), spec.t_delay);
    }
    case ModelType::RHPZ: {
      const double a = t / 3.7348;
      return DelayTf(RationalTf({k, -0.25 * k}, {1.0, t / 0.9337, a * a}), spec.t_delay);
    }
  }
  throw ArgumentError("unknown model type");
}

std::vector<DelayTf> aggregate_plant(const DerSet& set, Mask mask, const std::vector<double>& w,
                                     double b, ModelType model) {
  const auto idx = set.active(mask);
  if (!w.empty() && w.size() != idx.size())
    throw ArgumentError("w needs one entry per active DER");
  std::vector<DelayTf> branches;
  branches.reserve(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j)
    branches.push_back(build_der_tf(set[idx[j]], w.empty() ? 1.0 : w[j], b, model));
  return branches;
}

LoopModel build_loop(double kp, double ki, std::vector<DelayTf> branches, double t_com, double t_meas) {
  if (!(kp >= 0.0) || !std::isfinite(kp)) throw ArgumentError("kp must be >= 0");
  if (!(ki > 0.0) || !std::isfinite(ki)) throw ArgumentError("ki must be > 0");
  return LoopModel(DelayTf(RationalTf::pi(kp, ki)), DelayTf::pure_delay(t_com), std::move(branches),
                   DelayTf::pure_delay(t_meas));
}

std::vector<Mask> enumerate_combos(std::size_t m) {
  if (m < 1 || m > 24) throw ArgumentError("DER count must be in 1..24");
  const Mask n = static_cast<Mask>((std::uint64_t{1} << m) - 1);
  std::vector<Mask> masks(n);
  for (Mask i = 0; i < n; ++i) masks[i] = i + 1;
  return masks;
}

double average_time(const DerSet& set, Mask mask) {
  double num = 0.0, den = 0.0;
  for (auto i : set.active(mask)) {
    num += (set[i].t_delay + set[i].t_rise) * set[i].p_inst;
    den += set[i].p_inst;
  }
  return num / den;
}

// ---------------------------------------------------------------------------

DerSet parse_der_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::vector<DerSpec> specs;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#')
      continue;
    const auto cells = split_csv_line(line);
    if (header.empty()) {
      header = cells;
      for (const char* req : {"name", "kind", "p_inst_w", "t_delay_s", "t_rise_s"})
        if (std::find(header.begin(), header.end(), req) == header.end())
          throw ParseError(origin, lineno, req, "missing column in header");
      continue;
    }
    if (cells.size() != header.size())
      throw ParseError(origin, lineno, "*", "expected " + std::to_string(header.size()) + " columns, got " +
                                               std::to_string(cells.size()));
    DerSpec s;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const auto& col = header[c];
      const auto& v = cells[c];
      try {
        if (col == "name") s.name = v;
        else if (col == "kind") s.kind = parse_der_kind(v);
        else if (col == "p_inst_w") s.p_inst = parse_number(v);
        else if (col == "t_delay_s") s.t_delay = parse_number(v);
        else if (col == "t_rise_s") s.t_rise = parse_number(v);
        else if (col == "c_d_w" && !v.empty()) s.c_d = parse_number(v);
        // other columns (e.g. q_inst_var) are accepted and ignored
      } catch (const std::exception& e) {
        throw ParseError(origin, lineno, col, e.what());
      }
    }
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw ParseError(origin, lineno, "*", e.what());
    }
    specs.push_back(std::move(s));
  }
  if (header.empty()) throw ParseError(origin, lineno, "header", "file is empty");
  try {
    return DerSet(std::move(specs));
  } catch (const std::exception& e) {
    throw ParseError(origin, lineno, "*", e.what());
  }
}

DerSet parse_der_json(const std::string& text, const std::string& origin) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin, "<document>", e.what());
  }
  const json* arr = &doc;
  if (doc.is_object()) {
    if (!doc.contains("ders")) throw ParseError(origin, "ders", "missing");
    arr = &doc["ders"];
  }
  if (!arr->is_array()) throw ParseError(origin, "ders", "expected an array");
  std::vector<DerSpec> specs;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const json& e = (*arr)[i];
    const std::string path = "ders[" + std::to_string(i) + "]";
    DerSpec s;
    auto num = [&](const char* key) -> double {
      if (!e.contains(key)) throw ParseError(origin, path + "." + key, "missing");
      if (!e[key].is_number()) throw ParseError(origin, path + "." + key, "expected a number");
      return e[key].get<double>();
    };
    auto str = [&](const char* key) -> std::string {
      if (!e.contains(key) || !e[key].is_string()) throw ParseError(origin, path + "." + key, "expected a string");
      return e[key].get<std::string>();
    };
    s.name = str("name");
    try {
      s.kind = parse_der_kind(str("kind"));
    } catch (const ArgumentError& ex) {
      throw ParseError(origin, path + ".kind", ex.what());
    }
    s.p_inst = num("p_inst_w");
    s.t_delay = num("t_delay_s");
    s.t_rise = num("t_rise_s");
    if (e.contains("c_d_w")) s.c_d = num("c_d_w");
    if (e.contains("schedule")) {
      const auto& sch = e["schedule"];
      if (!sch.is_array()) throw ParseError(origin, path + ".schedule", "expected [[t, watts], ...]");
      for (std::size_t k = 0; k < sch.size(); ++k) {
        const auto& p = sch[k];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
          throw ParseError(origin, path + ".schedule[" + std::to_string(k) + "]", "expected [t, watts]");
        s.schedule.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
    }
    try {
      s.validate();
    } catch (const std::exception& ex) {
      throw ParseError(origin, path, ex.what());
    }
    specs.push_back(std::move(s));
  }
  try {
    return DerSet(std::move(specs));
  } catch (const std::exception& ex) {
    throw ParseError(origin, "ders", ex.what());
  }
}

DerSet load_der_table(const std::string& path) {
  const std::string text = read_text_file(path);
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : upper(path.substr(dot + 1));
  if (ext == "JSON") return parse_der_json(text, path);
  return parse_der_csv(text, path);
}

void save_der_csv(const DerSet& set, const std::string& path) {
  std::ostringstream out;
  out << "name,kind,p_inst_w,t_delay_s,t_rise_s\n";
  for (const auto& s : set.specs())
    out << s.name << ',' << to_string(s.kind) << ',' << format_number(s.p_inst) << ','
        << format_number(s.t_delay) << ',' << format_number(s.t_rise) << '\n';
  write_text_file(path, out.str());
}

}  // namespace cpfc
