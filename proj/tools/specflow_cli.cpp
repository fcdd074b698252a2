// specflow command-line front end. JSON (default) or CSV output, 12 significant digits,
// exit codes: 0 ok, 2 validation, 3 numerical, 4 I/O.

#include "specflow/circle_model.hpp"
#include "specflow/clifford.hpp"
#include "specflow/flow.hpp"
#include "specflow/lattice.hpp"
#include "specflow/oscillator.hpp"
#include "specflow/torus.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

using json = nlohmann::ordered_json;
using namespace sfl;

namespace {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double num(double x) {
  if (!std::isfinite(x)) throw NumericalError("non-finite value in output");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  double v = std::strtod(buf, nullptr);
  return v == 0.0 ? 0.0 : v;  // no negative zero
}

std::string rat(const Rational& q) { return q.str(); }

json rat_vec(const CohClass& c) {
  json a = json::array();
  for (auto& x : c.coeffs) a.push_back(rat(x));
  return a;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_arg(const std::string& arg) {
  std::string text = arg;
  auto first = arg.find_first_not_of(" \t\n");
  if (first == std::string::npos || (arg[first] != '{' && arg[first] != '[')) text = read_file(arg);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + " must be a JSON object");
  for (auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ValidationError("unknown key '" + k + "' in " + what);
}

template <class T>
T get(const json& j, const std::string& key, const std::string& what) {
  if (!j.contains(key)) throw ValidationError("missing key '" + key + "' in " + what);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("bad value for '" + key + "' in " + what);
  }
}

std::vector<double> parse_floats(const std::vector<std::string>& parts) {
  std::vector<double> out;
  for (const auto& p : parts) {
    std::string s = p;
    for (char& c : s)
      if (c == ',') c = ' ';
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) {
      try {
        size_t pos;
        out.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError("not a number: " + tok);
      }
    }
  }
  return out;
}

Rational parse_rational(const std::string& s) {
  try {
    return Rational(s.c_str());
  } catch (const std::exception&) {
    throw ValidationError("not a rational number: " + s);
  }
}

CohClass parse_class(const std::string& s, int n) {
  std::string t = s;
  // accepts "1,0,2", "1 0 2" or a JSON array "[1, 0, \"1/2\"]"
  for (char& c : t)
    if (c == ',' || c == '[' || c == ']' || c == '"') c = ' ';
  std::istringstream is(t);
  std::string tok;
  RVec v;
  while (is >> tok) v.push_back(parse_rational(tok));
  if (static_cast<int>(v.size()) != n)
    throw ValidationError("class has " + std::to_string(v.size()) + " coefficients, form rank is " + std::to_string(n));
  return CohClass(v);
}

Mat3 parse_M(const std::vector<std::string>& parts, std::uint64_t seed) {
  if (parts.size() == 1 && parts[0] == "identity") return Mat3::Identity();
  if (parts.size() == 1 && parts[0] == "random") {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> N;
    Mat3 M;
    do
      for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = N(g);
    while (std::abs(M.determinant()) < 0.05);
    return M;
  }
  auto v = parse_floats(parts);
  if (v.size() != 9) throw ValidationError("--M expects 'identity', 'random' or 9 numbers");
  Mat3 M;
  for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = v[i];
  if (std::abs(M.determinant()) < 1e-12) throw ValidationError("--M must be invertible");
  return M;
}

json mat3_json(const Mat3& M) {
  json a = json::array();
  for (int i = 0; i < 3; ++i) a.push_back({num(M(i, 0)), num(M(i, 1)), num(M(i, 2))});
  return a;
}

// ---------------------------------------------------------------------------
// Output

struct Output {
  json doc;
  std::vector<std::string> csv_header;
  std::vector<std::vector<std::string>> csv_rows;
};

std::string cell(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void flatten(const json& j, const std::string& prefix, std::vector<std::vector<std::string>>& rows) {
  if (j.is_object()) {
    for (auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, rows);
  } else if (j.is_array() && !j.empty() && (j.front().is_object() || j.front().is_array())) {
    for (size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "[" + std::to_string(i) + "]", rows);
  } else {
    rows.push_back({prefix, cell(j)});
  }
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
  return o + "\"";
}

std::string render(const Output& out, bool csv) {
  if (!csv) return out.doc.dump(2) + "\n";
  std::vector<std::string> header = out.csv_header;
  std::vector<std::vector<std::string>> rows = out.csv_rows;
  if (header.empty()) {
    header = {"key", "value"};
    flatten(out.doc, "", rows);
  }
  std::string s;
  for (size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + csv_quote(header[i]);
  s += "\n";
  for (auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + csv_quote(r[i]);
    s += "\n";
  }
  return s;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", num(x));
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommand bodies

Output levels_output(const std::string& command, const SpectrumSlice& sl, json params) {
  Output o;
  o.doc["command"] = command;
  o.doc["params"] = std::move(params);
  json lv = json::array();
  for (size_t i = 0; i < sl.eigenvalues.size(); ++i) {
    lv.push_back({{"index", i}, {"eigenvalue", num(sl.eigenvalues[i])}, {"multiplicity", sl.multiplicities[i]},
                  {"residual", num(sl.residuals[i])}});
    o.csv_rows.push_back({std::to_string(i), fmt(sl.eigenvalues[i]), std::to_string(sl.multiplicities[i]),
                          fmt(sl.residuals[i])});
  }
  o.doc["levels"] = lv;
  o.doc["truncation_residual"] = num(sl.truncation_residual);
  o.csv_header = {"index", "eigenvalue", "multiplicity", "residual"};
  return o;
}

MatrixLoop load_loop(const std::string& arg, std::uint64_t seed) {
  json j = parse_json_arg(arg);
  check_keys(j, {"ell", "samples", "builtin", "sign", "seed", "amplitude", "M"}, "loop file");
  double ell = get<double>(j, "ell", "loop file");
  if (!(ell > 0)) throw ValidationError("loop length must be positive");
  if (j.contains("builtin")) {
    std::string b = get<std::string>(j, "builtin", "loop file");
    if (b == "rotation") return rotation_loop(ell, j.value("sign", 1));
    if (b == "random") return random_loop(j.value("seed", seed), ell, j.value("amplitude", 0.12));
    if (b == "constant") {
      auto v = get<std::vector<double>>(j, "M", "loop file");
      if (v.size() != 9) throw ValidationError("constant loop needs 9 entries in M");
      Mat3 M;
      for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = v[i];
      if (std::abs(M.determinant()) < 1e-12) throw ValidationError("constant loop matrix must be invertible");
      return constant_loop(M, ell);
    }
    throw ValidationError("unknown builtin loop '" + b + "'");
  }
  auto rows = get<std::vector<std::vector<double>>>(j, "samples", "loop file");
  std::vector<Mat3> samples;
  for (auto& r : rows) {
    if (r.size() != 9) throw ValidationError("each loop sample must have 9 entries");
    Mat3 M;
    for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = r[i];
    samples.push_back(M);
  }
  MatrixLoop L = loop_from_samples(ell, samples);
  for (int k = 0; k < 256; ++k)
    if (std::abs(L.M(ell * k / 256).determinant()) < 1e-10) throw ValidationError("loop matrix is singular somewhere");
  return L;
}

std::optional<PerturbationData> load_pert(const std::string& arg) {
  if (arg.empty()) return std::nullopt;
  json j = parse_json_arg(arg);
  check_keys(j, {"b0", "q", "r0", "M", "W", "B", "C"}, "perturbation file");
  PerturbationData p;
  p.b0 = j.value("b0", 0.0);
  p.q = j.value("q", 0.0);
  p.r0 = j.value("r0", 1.0);
  auto vec3 = [&](const char* key) -> std::function<Vec3(double)> {
    if (!j.contains(key)) return nullptr;
    auto v = get<std::vector<double>>(j, key, "perturbation file");
    if (v.size() != 3) throw ValidationError(std::string(key) + " must have 3 entries");
    Vec3 c(v[0], v[1], v[2]);
    return [c](double) { return c; };
  };
  p.Mvec = vec3("M");
  p.B = vec3("B");
  p.C = vec3("C");
  if (j.contains("W")) {
    auto v = get<std::vector<double>>(j, "W", "perturbation file");
    if (v.size() != 9) throw ValidationError("W must have 9 entries");
    Mat3 W;
    for (int i = 0; i < 9; ++i) W(i / 3, i % 3) = v[i];
    p.W = [W](double) { return W; };
  }
  return p;
}

MatXcd parse_matrix(const json& j, const std::string& what) {
  auto rows_of = [&](const json& a) {
    std::vector<std::vector<double>> r;
    try {
      r = a.get<std::vector<std::vector<double>>>();
    } catch (const json::exception&) {
      throw ValidationError(what + " must be an array of numeric rows");
    }
    return r;
  };
  std::vector<std::vector<double>> re, im;
  if (j.is_object()) {
    check_keys(j, {"re", "im"}, what);
    re = rows_of(get<json>(j, "re", what));
    if (j.contains("im")) im = rows_of(j.at("im"));
  } else {
    re = rows_of(j);
  }
  const size_t n = re.size();
  if (n == 0) throw ValidationError(what + " is empty");
  MatXcd M(n, n);
  for (size_t r = 0; r < n; ++r) {
    if (re[r].size() != n || (!im.empty() && (im.size() != n || im[r].size() != n)))
      throw ValidationError(what + " must be square");
    for (size_t c = 0; c < n; ++c) M(r, c) = cd(re[r][c], im.empty() ? 0.0 : im[r][c]);
  }
  if ((M - M.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * (1 + M.cwiseAbs().maxCoeff()))
    throw ValidationError(what + " must be Hermitian");
  return M;
}

OperatorFamily load_family(const std::string& arg) {
  json j = parse_json_arg(arg);
  const std::string w = "family spec";
  std::string type = get<std::string>(j, "type", w);
  if (type == "pencil") {
    check_keys(j, {"type", "A0", "B", "t0", "t1", "n_grid"}, w);
    MatXcd A0 = parse_matrix(get<json>(j, "A0", w), "A0"), B = parse_matrix(get<json>(j, "B", w), "B");
    if (A0.rows() != B.rows()) throw ValidationError("A0 and B differ in size");
    double t0 = get<double>(j, "t0", w), t1 = get<double>(j, "t1", w);
    int ng = j.value("n_grid", 41);
    if (!(t1 > t0) || ng < 2) throw ValidationError("family needs t1 > t0 and n_grid >= 2");
    return pencil_family(A0, B, t0, t1, ng);
  }
  if (type == "torus") {
    check_keys(j, {"type", "q", "m", "t0", "t1", "n_grid", "sector"}, w);
    TorusModelSpec s = torus_spec(get<int>(j, "q", w), get<double>(j, "m", w));
    validate_torus_spec(s);
    std::string sec = j.value("sector", std::string("plus"));
    if (sec != "plus" && sec != "zero") throw ValidationError("sector must be 'plus' or 'zero'");
    double t0 = get<double>(j, "t0", w), t1 = get<double>(j, "t1", w);
    if (!(t1 > t0)) throw ValidationError("family needs t1 > t0");
    return torus_t_family(s, sec == "plus" ? TorusSector::Plus : TorusSector::Zero, t0, t1, j.value("n_grid", 41));
  }
  throw ValidationError("unknown family type '" + type + "'");
}

json flow_json(const FlowResult& fr) {
  json cr = json::array();
  for (auto& c : fr.crossings) cr.push_back({{"t", num(c.t)}, {"dir", c.dir}, {"mult", c.mult}, {"slope", num(c.slope)}});
  return {{"crossings", cr},
          {"net", fr.net_flow},
          {"up", fr.up},
          {"down", fr.down},
          {"endpoint_kernels", {fr.endpoint_ambiguity[0], fr.endpoint_ambiguity[1]}},
          {"grid_points", fr.grid_points},
          {"refinements", fr.refinements},
          {"max_residual", num(fr.max_residual)}};
}

UnimodularForm load_form(const std::string& arg) {
  json j = parse_json_arg(arg);
  const std::string w = "form";
  check_keys(j, {"kind", "params", "gram"}, w);
  std::string kind = get<std::string>(j, "kind", w);
  json p = get<json>(j, "params", w);
  UnimodularForm f;
  if (kind == "odd") {
    check_keys(p, {"p_plus", "q_minus"}, "form params");
    f = odd_form(get<int>(p, "p_plus", "form params"), get<int>(p, "q_minus", "form params"));
  } else if (kind == "even") {
    check_keys(p, {"hyperbolic", "e8"}, "form params");
    f = even_form(get<int>(p, "hyperbolic", "form params"), p.value("e8", 0));
  } else {
    throw ValidationError("form kind must be 'odd' or 'even'");
  }
  if (j.contains("gram")) {
    auto g = get<std::vector<std::vector<long long>>>(j, "gram", w);
    if (g != f.gram) throw ValidationError("gram does not match the normal form for the given params");
  }
  return f;
}

json form_json(const UnimodularForm& f) {
  return {{"kind", f.is_odd() ? "odd" : "even"},
          {"rank", f.rank()},
          {"p_plus", f.is_odd() ? f.p_plus : 0},
          {"q_minus", f.is_odd() ? f.q_minus : 0},
          {"hyperbolic", f.hyperbolic},
          {"e8", f.e8_count}};
}

std::string join_args(const json& v) {
  if (v.is_array()) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + join_args(v[i]);
    return s;
  }
  if (v.is_string()) return v.get<std::string>();
  if (v.is_object()) return v.dump();
  return v.dump();
}

// --config file: {"command": "lattice index", "params": {...}, "seed": n, "output": {"path", "format"}}
std::vector<std::string> config_to_args(const std::string& path) {
  json j = parse_json_arg(path);
  check_keys(j, {"command", "params", "seed", "output"}, "config");
  std::vector<std::string> args;
  std::istringstream is(get<std::string>(j, "command", "config"));
  std::string w;
  while (is >> w) args.push_back(w);
  if (j.contains("params")) {
    json p = j.at("params");
    if (!p.is_object()) throw ValidationError("config params must be an object");
    for (auto& [k, v] : p.items()) {
      if (v.is_boolean()) {
        if (v.get<bool>()) args.push_back("--" + k);
        continue;
      }
      args.push_back("--" + k);
      args.push_back(join_args(v));
    }
  }
  if (j.contains("seed")) args.push_back("--seed"), args.push_back(j.at("seed").dump());
  if (j.contains("output")) {
    json o = j.at("output");
    check_keys(o, {"path", "format"}, "config output");
    if (o.contains("path")) args.push_back("--out"), args.push_back(get<std::string>(o, "path", "config output"));
    std::string fmt = o.value("format", std::string("json"));
    if (fmt != "json" && fmt != "csv") throw ValidationError("output format must be json or csv");
    args.push_back("--" + fmt);
  }
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"Spectral-flow and lattice toolkit"};
  app.require_subcommand(1);
  bool as_json = false, as_csv = false;
  std::string out_path, config_path;
  std::uint64_t seed = 1;
  app.add_flag("--json", as_json, "JSON output (default)");
  app.add_flag("--csv", as_csv, "CSV output");
  app.add_option("--out", out_path, "write output to this file");
  app.add_option("--seed", seed, "seed for randomized inputs");
  app.add_option("--config", config_path, "JSON experiment configuration");
  app.fallthrough();

  Output result;
  std::function<void()> action;
  int status = 0;

  // clifford
  auto* cl = app.add_subcommand("clifford", "Clifford module checks");
  cl->require_subcommand(1);
  cl->add_subcommand("check", "verify all relations exactly")->callback([&] {
    action = [&] {
      auto rep = build_clifford_rep();
      auto v = verify_relations(rep);
      result.doc["command"] = "clifford check";
      result.doc["violations"] = v;
      result.doc["relation_defect"] = num(relation_defect(rep));
    };
  });
  cl->add_subcommand("dump", "integer matrices of the representation")->callback([&] {
    action = [&] {
      auto rep = build_clifford_rep();
      auto m = [](const Mat8& A) {
        Mat8i I;
        if (!detail::to_integer(A, I)) throw NumericalError("non-integral Clifford matrix");
        json a = json::array();
        for (int r = 0; r < 8; ++r) {
          json row = json::array();
          for (int c = 0; c < 8; ++c) row.push_back(I(r, c));
          a.push_back(row);
        }
        return a;
      };
      result.doc["command"] = "clifford dump";
      result.doc["gamma"] = {m(rep.gamma[0]), m(rep.gamma[1]), m(rep.gamma[2]), m(rep.gamma[3])};
      result.doc["rho"] = {m(rep.rho[0]), m(rep.rho[1]), m(rep.rho[2])};
      result.doc["Gamma"] = m(rep.Gamma);
    };
  });

  // spectrum
  auto* sp = app.add_subcommand("spectrum", "truncated spectra");
  sp->require_subcommand(1);
  std::vector<std::string> M_arg{"identity"};
  double R = 1.0, R_mu = 1.0, band = 1.0;
  int nmax = 40, count = 5, nmax1d = 20, lmax = 4;
  std::string loop_arg, pert_arg;
  auto* d0 = sp->add_subcommand("d0", "fiber operator spectrum");
  d0->add_option("--M", M_arg, "'identity', 'random' or 9 numbers (row major)")->expected(1, 9);
  d0->add_option("--R", R)->check(CLI::PositiveNumber);
  d0->add_option("--nmax", nmax)->check(CLI::Range(1, 200));
  d0->add_option("--count", count)->check(CLI::Range(1, 10000));
  d0->callback([&] {
    action = [&] {
      Mat3 M = parse_M(M_arg, seed);
      auto rep = build_clifford_rep();
      auto sl = certified_levels([&](int n) { return build_D0(M, R, rep, n); }, nmax, count);
      NormalForm nf = normal_form(M);
      auto cf = d0_spectrum_closedform(OscBasisSpec{R, {nf.lambda(0), nf.lambda(1), nf.lambda(2)}, nmax}, count);
      result = levels_output("spectrum d0", sl, {{"M", mat3_json(M)}, {"R", num(R)}, {"n_max", nmax}, {"count", count}});
      json c = json::array();
      for (size_t i = 0; i < cf.eigenvalues.size(); ++i)
        c.push_back({{"eigenvalue", num(cf.eigenvalues[i])}, {"multiplicity", cf.multiplicities[i]}});
      result.doc["closed_form"] = c;
    };
  });
  auto* m1 = sp->add_subcommand("model1d", "one-dimensional model spectrum");
  m1->add_option("--Rmu", R_mu)->check(CLI::PositiveNumber);
  m1->add_option("--nmax", nmax1d)->check(CLI::Range(1, 2000));
  m1->add_option("--count", count)->check(CLI::Range(1, 10000));
  m1->callback([&] {
    action = [&] {
      auto rep = build_clifford_rep();
      auto sl = certified_levels([&](int n) { return build_model_1d(R_mu, rep, n); }, nmax1d, count);
      result = levels_output("spectrum model1d", sl, {{"R_mu", num(R_mu)}, {"n_max", nmax1d}, {"count", count}});
    };
  });
  auto* ci = sp->add_subcommand("circle", "circle operator band spectrum and lattice fit");
  ci->add_option("--loop", loop_arg, "loop JSON file or inline JSON")->required();
  ci->add_option("--R", R)->check(CLI::PositiveNumber);
  ci->add_option("--band", band)->check(CLI::PositiveNumber);
  ci->add_option("--pert", pert_arg, "perturbation JSON file or inline JSON");
  ci->add_option("--lmax", lmax, "fiber level bound")->check(CLI::Range(1, 12));
  ci->callback([&] {
    action = [&] {
      auto rep = build_clifford_rep();
      MatrixLoop L = load_loop(loop_arg, seed);
      auto pert = load_pert(pert_arg);
      auto op = build_D_circle(L, R, pert ? &*pert : nullptr, lmax, default_fourier_max(band, L.ell), rep);
      auto ep = band_eigenpairs(op, band);
      result.doc["command"] = "spectrum circle";
      result.doc["params"] = {{"ell", num(L.ell)}, {"R", num(R)}, {"band", num(band)}, {"L_max", lmax},
                              {"fourier_max", default_fourier_max(band, L.ell)}, {"dim", op.dim}};
      json ev = json::array();
      for (int i = 0; i < ep.values.size(); ++i) {
        ev.push_back({{"index", i}, {"eigenvalue", num(ep.values(i))}, {"residual", num(ep.residuals(i))}});
        result.csv_rows.push_back({std::to_string(i), fmt(ep.values(i)), "1", fmt(ep.residuals(i))});
      }
      result.csv_header = {"index", "eigenvalue", "multiplicity", "residual"};
      result.doc["eigenvalues"] = ev;
      if (band <= std::sqrt(R) / kappa * (1 + 1e-12) && ep.values.size() > 0) {
        auto fit = low_spectrum_fit(op, band);
        json tau = json::array(), idx = json::array();
        for (size_t i = 0; i < fit.residuals.size(); ++i) tau.push_back(num(fit.residuals[i])), idx.push_back(fit.n_indices[i]);
        result.doc["fit"] = {{"alpha", num(fit.alpha)}, {"n", idx}, {"tau", tau}, {"max_tau", num(fit.max_tau())},
                             {"tau_bound", num(fit.tau_bound)}};
      } else {
        result.doc["fit"] = nullptr;
      }
    };
  });

  // berry
  int nsteps = 64;
  auto* be = app.add_subcommand("berry", "kernel-line holonomy alpha");
  be->add_option("--loop", loop_arg)->required();
  be->add_option("--R", R)->check(CLI::PositiveNumber);
  be->add_option("--nsteps", nsteps)->check(CLI::Range(64, 1 << 20));
  be->add_option("--pert", pert_arg);
  be->callback([&] {
    action = [&] {
      auto rep = build_clifford_rep();
      MatrixLoop L = load_loop(loop_arg, seed);
      auto pert = load_pert(pert_arg);
      auto br = berry_alpha(L, R, pert ? &*pert : nullptr, nsteps, rep);
      result.doc["command"] = "berry";
      result.doc["params"] = {{"ell", num(L.ell)}, {"R", num(R)}, {"n_steps", nsteps}};
      result.doc["alpha"] = num(br.alpha);
      result.doc["alpha_coarse"] = num(br.alpha_coarse);
      result.doc["alpha_fine"] = num(br.alpha_fine);
      result.doc["residual"] = num(std::abs(circ_diff(br.alpha_fine, br.alpha_coarse)));
      result.doc["g"] = br.g;
    };
  });

  // flow
  std::string family_arg;
  double flow_band = 1.0, level = 0.0;
  auto* fl = app.add_subcommand("flow", "spectral flow of a one-parameter family");
  fl->add_option("--family", family_arg, "family JSON file or inline JSON")->required();
  fl->add_option("--band", flow_band)->check(CLI::PositiveNumber);
  fl->add_option("--level", level);
  fl->callback([&] {
    action = [&] {
      OperatorFamily fam = load_family(family_arg);
      FlowResult fr = spectral_flow(fam, flow_band, level);
      result.doc["command"] = "flow";
      result.doc["params"] = {{"band", num(flow_band)}, {"level", num(level)}, {"description", fam.description}};
      json fj = flow_json(fr);
      for (auto& [k, v] : fj.items()) result.doc[k] = v;
      result.csv_header = {"t", "dir", "mult"};
      for (auto& c : fr.crossings) result.csv_rows.push_back({fmt(c.t), std::to_string(c.dir), std::to_string(c.mult)});
    };
  });

  // torus
  int q = 1, ngrid = 41;
  double m = 1.0, tband = 1.0;
  std::vector<double> window;
  auto* to = app.add_subcommand("torus", "flat T^4 model: crossing predictions and tracked flow");
  to->add_option("--q", q)->required();
  to->add_option("--m", m)->check(CLI::PositiveNumber);
  to->add_option("--window", window, "a,b")->delimiter(',')->expected(2)->required();
  to->add_option("--ngrid", ngrid)->check(CLI::Range(2, 100000));
  to->add_option("--band", tband)->check(CLI::PositiveNumber);
  to->callback([&] {
    action = [&] {
      if (!(window[1] > window[0])) throw ValidationError("window must satisfy a < b");
      TorusModelSpec s = torus_spec(q, m);
      validate_torus_spec(s);
      auto chk = sector_flow_check(s, window[0], window[1], ngrid, tband);
      const auto& p = chk.prediction;
      result.doc["command"] = "torus";
      result.doc["params"] = {{"q", q}, {"m", num(m)}, {"r", num(s.r)}, {"window", {num(window[0]), num(window[1])}},
                              {"n_grid", ngrid}, {"band", num(tband)}, {"lattice_n", s.lattice_n}};
      result.doc["prediction"] = {{"t_cross", num(p.t_cross)}, {"up", p.up}, {"down", p.down}, {"net", p.net},
                                  {"dbar_dim", p.dbar_dim}, {"sector_up", p.sector_up},
                                  {"sector_down", p.sector_down}, {"note", p.note}};
      result.doc["flow"] = flow_json(chk.flow);
      result.doc["window_contains_cross"] = chk.window_contains_cross;
      result.doc["clustered"] = chk.clustered;
      result.doc["counts_match"] = chk.counts_match;
      result.doc["sum_of_squares_defect"] =
          num(q != 0 ? sum_of_squares_defect(s, TorusSector::Plus, 0.5 * (window[0] + window[1])) : 0.0);
    };
  });

  // lattice
  auto* la = app.add_subcommand("lattice", "exact lattice arithmetic");
  la->require_subcommand(1);
  std::string form_arg, K_arg, w_arg, ansatz = "auto", F_arg, Sigma_arg, tt_arg = "0", tK_arg = "0";
  long long k = 0, coeff_min = 1, b1 = 0, b2plus = 0, nn = 0;
  int tk_sign = 1, qmax = 64;
  double eps_bound = 0.5;
  bool tK_nonzero = false;

  auto* po = la->add_subcommand("pontrjagin", "class t with t.t = k");
  po->add_option("--form", form_arg)->required();
  po->add_option("--k", k)->required();
  po->add_option("--coeff-min", coeff_min)->check(CLI::PositiveNumber);
  po->add_option("--ansatz", ansatz)->check(CLI::IsMember({"auto", "literal", "shifted"}));
  po->callback([&] {
    action = [&] {
      UnimodularForm f = load_form(form_arg);
      OddAnsatz a = ansatz == "literal" ? OddAnsatz::Literal : ansatz == "shifted" ? OddAnsatz::Shifted : OddAnsatz::Auto;
      auto r = pontrjagin_class_search(f, k, coeff_min, a);
      result.doc["command"] = "lattice pontrjagin";
      result.doc["form"] = form_json(f);
      result.doc["params"] = {{"k", k}, {"coeff_min", coeff_min}, {"ansatz", ansatz}};
      result.doc["ok"] = r.ok;
      result.doc["report"] = r.report;
      result.doc["t"] = r.ok ? rat_vec(r.t) : json::array();
      result.doc["tt"] = r.ok ? rat(r.tt) : "";
      result.doc["ansatz"] = r.ansatz;
      result.doc["residual"] = r.ok ? rat(r.tt - Rational(k)) : "";
      if (!r.ok) {
        std::cerr << "validation error: " << r.report << "\n";
        status = 2;
      }
    };
  });

  auto* st = la->add_subcommand("search-t", "class t with t.t = 0, t.K = 0, t.w != 0");
  st->add_option("--form", form_arg)->required();
  st->add_option("--K", K_arg)->required();
  st->add_option("--w", w_arg)->required();
  st->add_flag("--tK-nonzero", tK_nonzero, "ask for t.K != 0 instead of t.K = 0");
  st->callback([&] {
    action = [&] {
      UnimodularForm f = load_form(form_arg);
      auto K = parse_class(K_arg, f.rank()), w = parse_class(w_arg, f.rank());
      auto r = kahler_t_search(f, K, w, !tK_nonzero);
      result.doc["command"] = "lattice search-t";
      result.doc["form"] = form_json(f);
      result.doc["t"] = rat_vec(r.t);
      result.doc["tt"] = rat(r.tt);
      result.doc["tK"] = rat(r.tK);
      result.doc["tw"] = rat(r.tw);
      result.doc["method"] = r.method;
      result.doc["selection"] = r.selection;
      result.doc["residual"] = "0";
    };
  });

  auto* sz = la->add_subcommand("search-zeta", "class zeta with zeta.zeta = 0, zeta.K = 0, zeta.w > 0");
  sz->add_option("--form", form_arg)->required();
  sz->add_option("--K", K_arg)->required();
  sz->add_option("--w", w_arg)->required();
  sz->callback([&] {
    action = [&] {
      UnimodularForm f = load_form(form_arg);
      auto K = parse_class(K_arg, f.rank()), w = parse_class(w_arg, f.rank());
      auto r = symplectic_zeta_search(f, K, w);
      result.doc["command"] = "lattice search-zeta";
      result.doc["form"] = form_json(f);
      result.doc["zeta"] = rat_vec(r.zeta);
      result.doc["zeta_integral"] = rat_vec(clear_denominators(r.zeta));
      result.doc["zz"] = rat(r.zz);
      result.doc["zK"] = rat(r.zK);
      result.doc["zw"] = rat(r.zw);
      result.doc["method"] = r.method;
      result.doc["base_self_pairing"] = rat(r.eps_base);
      result.doc["residual"] = "0";
    };
  });

  auto* ix = la->add_subcommand("index", "(1 + b2+ - b1) + t.t - t.K");
  ix->add_option("--b1", b1)->required()->check(CLI::NonNegativeNumber);
  ix->add_option("--b2plus", b2plus)->required()->check(CLI::NonNegativeNumber);
  ix->add_option("--tt", tt_arg);
  ix->add_option("--tK", tK_arg);
  ix->add_option("--tk-sign", tk_sign)->check(CLI::IsMember({1, -1}));
  ix->callback([&] {
    action = [&] {
      Rational v = index_formula(b1, b2plus, parse_rational(tt_arg), parse_rational(tK_arg), tk_sign);
      result.doc["command"] = "lattice index";
      result.doc["params"] = {{"b1", b1}, {"b2plus", b2plus}, {"tt", tt_arg}, {"tK", tK_arg}, {"tk_sign", tk_sign}};
      result.doc["index"] = rat(v);
      result.doc["residual"] = "0";
    };
  });

  auto* cr = la->add_subcommand("criterion", "boundedness of q n + eps_q");
  cr->add_option("--n", nn)->required();
  cr->add_option("--eps-bound", eps_bound)->check(CLI::NonNegativeNumber);
  cr->add_option("--qmax", qmax)->check(CLI::Range(1, 1000000));
  cr->callback([&] {
    action = [&] {
      auto r = boundedness_criterion(nn, eps_bound, qmax);
      result.doc["command"] = "lattice criterion";
      result.doc["params"] = {{"n", nn}, {"eps_bound", num(eps_bound)}, {"q_max", qmax}};
      result.doc["bounded"] = r.bounded;
      result.doc["divergence_rate"] = r.divergence_rate;
      result.doc["variation"] = num(r.variation);
      json s = json::array();
      for (double x : r.sequence) s.push_back(num(x));
      result.doc["sequence"] = s;
    };
  });

  auto* pe = la->add_subcommand("prop515", "pairing estimate F.Sigma +- kappa");
  pe->add_option("--form", form_arg)->required();
  pe->add_option("--F", F_arg)->required();
  pe->add_option("--Sigma", Sigma_arg)->required();
  pe->callback([&] {
    action = [&] {
      UnimodularForm f = load_form(form_arg);
      auto e = prop515_estimate(parse_class(F_arg, f.rank()), parse_class(Sigma_arg, f.rank()), f);
      result.doc["command"] = "lattice prop515";
      result.doc["form"] = form_json(f);
      result.doc["central"] = rat(e.central);
      result.doc["plus_minus"] = num(e.plus_minus);
    };
  });

  // a --config file replaces the command line
  std::vector<std::string> args(argv + 1, argv + argc);
  for (size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--config") {
      auto extra = config_to_args(args[i + 1]);
      args.erase(args.begin() + i, args.begin() + i + 2);
      args.insert(args.begin(), extra.begin(), extra.end());
      break;
    }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (as_json && as_csv) throw ValidationError("--json and --csv are exclusive");
  if (!action) throw ValidationError("no operation selected");
  action();
  if (!result.doc.contains("seed")) result.doc["seed"] = seed;
  std::string text = render(result, as_csv);
  if (out_path.empty()) {
    std::cout << text;
    if (!std::cout) throw IoError("cannot write to stdout");
  } else {
    std::ofstream o(out_path, std::ios::binary);
    if (!o) throw IoError("cannot open " + out_path);
    o << text;
    if (!o) throw IoError("cannot write " + out_path);
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
}
