#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kt/cli.hpp"
#include "kt/errors.hpp"

namespace kt {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t k) { return path + "[" + std::to_string(k) + "]"; }

[[noreturn]] void schema(const std::string& path, const std::string& msg) {
  throw InputError("config " + (path.empty() ? std::string("<root>") : path) + ": " + msg);
}

void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) schema(path, "expected an object");
}

void check_keys(const Json& j, const std::string& path, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) schema(join(path, key), "unknown key");
  }
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) schema(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) schema(path, "expected a finite number");
  return v;
}

double positive(const Json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v > 0.0)) schema(path, "expected a positive number");
  return v;
}

std::uint64_t unsigned_int(const Json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    schema(path, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) schema(path, "expected true or false");
  return j.get<bool>();
}

std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) schema(path, "expected a string");
  return j.get<std::string>();
}

std::vector<double> number_list(const Json& j, const std::string& path) {
  if (!j.is_array()) schema(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(number(j[k], index(path, k)));
  return out;
}

std::vector<std::vector<double>> number_table(const Json& j, const std::string& path) {
  if (!j.is_array()) schema(path, "expected an array of rows");
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(number_list(j[k], index(path, k)));
  return out;
}

std::vector<std::vector<double>> read_kernel_csv(const std::string& file, const std::string& path) {
  std::ifstream in(file);
  if (!in) schema(path, "cannot open '" + file + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        schema(path, "'" + file + "' line " + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::set<std::string> kModelNames{"word_tree", "word_tree_invariant", "delta", "sink_chain", "finite_state"};

ModelConfig parse_model(const Json& j, const std::string& path, const std::string& base_dir) {
  require_object(j, path);
  ModelConfig mc;
  if (!j.contains("name")) schema(join(path, "name"), "missing");
  mc.name = text(j["name"], join(path, "name"));
  if (!kModelNames.count(mc.name)) schema(join(path, "name"), "unknown model '" + mc.name + "'");

  std::set<std::string> allowed{"name", "base", "base_depth", "certificate"};
  if (mc.name == "word_tree" || mc.name == "word_tree_invariant") allowed.insert({"m", "r", "c", "eta"});
  if (mc.name == "delta") allowed.insert("m");
  if (mc.name == "sink_chain") allowed.insert("deficit");
  if (mc.name == "finite_state") allowed.insert({"maps", "kernel", "kernel_csv"});
  check_keys(j, path, allowed);

  if (j.contains("m")) {
    const auto m = unsigned_int(j["m"], join(path, "m"));
    if (m < 2 || m > 64) schema(join(path, "m"), "expected 2 <= m <= 64");
    mc.word_tree.m = static_cast<int>(m);
  }
  if (j.contains("r")) mc.word_tree.r = number(j["r"], join(path, "r"));
  if (j.contains("c")) mc.word_tree.c = number(j["c"], join(path, "c"));
  if (j.contains("eta")) mc.word_tree.eta = number(j["eta"], join(path, "eta"));
  if (j.contains("deficit")) mc.deficit = number(j["deficit"], join(path, "deficit"));

  if (mc.name == "finite_state") {
    if (!j.contains("maps")) schema(join(path, "maps"), "missing");
    const Json& maps = j["maps"];
    if (!maps.is_array() || maps.empty()) schema(join(path, "maps"), "expected a non-empty array of tables");
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const std::string p = index(join(path, "maps"), i);
      if (!maps[i].is_array()) schema(p, "expected an array of state indices");
      std::vector<int> table;
      for (std::size_t k = 0; k < maps[i].size(); ++k) table.push_back(static_cast<int>(unsigned_int(maps[i][k], index(p, k))));
      mc.maps.push_back(std::move(table));
    }
    if (j.contains("kernel") == j.contains("kernel_csv")) {
      schema(path, "exactly one of 'kernel' and 'kernel_csv' is required");
    }
    if (j.contains("kernel")) {
      mc.kernel = number_table(j["kernel"], join(path, "kernel"));
    } else {
      const std::string file = text(j["kernel_csv"], join(path, "kernel_csv"));
      const std::filesystem::path p = std::filesystem::path(file).is_absolute()
                                          ? std::filesystem::path(file)
                                          : std::filesystem::path(base_dir) / file;
      mc.kernel = read_kernel_csv(p.string(), join(path, "kernel_csv"));
    }
  }

  if (j.contains("certificate")) {
    const Json& c = j["certificate"];
    const std::string p = join(path, "certificate");
    if (c.is_boolean()) {
      mc.use_certificate = c.get<bool>();
    } else if (c.is_object() && mc.name == "finite_state") {
      check_keys(c, p, {"r", "C", "beta", "form"});
      for (const char* key : {"r", "C", "beta"})
        if (!c.contains(key)) schema(join(p, key), "missing");
      mc.certificate_r = number_list(c["r"], join(p, "r"));
      mc.certificate_C = number(c["C"], join(p, "C"));
      mc.certificate_beta = number(c["beta"], join(p, "beta"));
      if (c.contains("form")) mc.certificate_form = text(c["form"], join(p, "form"));
      if (mc.certificate_form != "defect" && mc.certificate_form != "diagonal") {
        schema(join(p, "form"), "expected 'defect' or 'diagonal'");
      }
    } else {
      schema(p, mc.name == "finite_state" ? "expected a boolean or an object" : "expected a boolean");
    }
  }

  if (j.contains("base")) {
    const Json& b = j["base"];
    if (!b.is_array()) schema(join(path, "base"), "expected an array of point labels");
    for (std::size_t k = 0; k < b.size(); ++k) {
      const std::string p = index(join(path, "base"), k);
      if (b[k].is_number_unsigned()) {
        mc.base.push_back(std::to_string(b[k].get<std::uint64_t>()));
      } else {
        mc.base.push_back(text(b[k], p));
      }
    }
  }
  if (j.contains("base_depth")) mc.base_depth = unsigned_int(j["base_depth"], join(path, "base_depth"));
  return mc;
}

Json model_to_json(const ModelConfig& mc) {
  Json j;
  j["name"] = mc.name;
  if (mc.name == "word_tree" || mc.name == "word_tree_invariant") {
    j["m"] = mc.word_tree.m;
    j["r"] = mc.word_tree.r;
    j["c"] = mc.word_tree.c;
    j["eta"] = mc.word_tree.eta;
  } else if (mc.name == "delta") {
    j["m"] = mc.word_tree.m;
  } else if (mc.name == "sink_chain") {
    j["deficit"] = mc.deficit;
  } else if (mc.name == "finite_state") {
    j["maps"] = mc.maps;
    j["kernel"] = mc.kernel;
  }
  if (mc.name == "finite_state" && !mc.certificate_r.empty() && mc.use_certificate) {
    j["certificate"] = Json{{"r", mc.certificate_r},
                            {"C", mc.certificate_C},
                            {"beta", mc.certificate_beta},
                            {"form", mc.certificate_form}};
  } else {
    j["certificate"] = mc.use_certificate;
  }
  j["base"] = mc.base;
  j["base_depth"] = mc.base_depth;
  return j;
}

}  // namespace

ExperimentConfig parse_config(const Json& j, const std::string& base_dir) {
  require_object(j, "");
  check_keys(j, "", {"model", "models", "horizon", "tol", "ceiling", "seed", "nsamples", "write_samples", "threads",
                     "out", "format", "diagonal", "boundary", "verify"});
  ExperimentConfig c;
  if (j.contains("model") && j.contains("models")) schema("", "give either 'model' or 'models', not both");
  if (j.contains("model")) {
    c.models = {parse_model(j["model"], "model", base_dir)};
  } else if (j.contains("models")) {
    const Json& ms = j["models"];
    if (!ms.is_array()) schema("models", "expected an array");
    if (ms.empty()) schema("models", "empty model list");
    c.models.clear();
    for (std::size_t k = 0; k < ms.size(); ++k) c.models.push_back(parse_model(ms[k], index("models", k), base_dir));
  }
  if (j.contains("horizon")) c.horizon = unsigned_int(j["horizon"], "horizon");
  if (j.contains("tol")) c.tol = positive(j["tol"], "tol");
  if (j.contains("ceiling")) c.ceiling = positive(j["ceiling"], "ceiling");
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = unsigned_int(j["seed"], "seed");
  if (j.contains("nsamples")) {
    c.nsamples = unsigned_int(j["nsamples"], "nsamples");
    if (c.nsamples == 0) schema("nsamples", "expected a positive integer");
  }
  if (j.contains("write_samples")) c.write_samples = boolean(j["write_samples"], "write_samples");
  if (j.contains("threads")) {
    const auto t = unsigned_int(j["threads"], "threads");
    if (t == 0 || t > 1024) schema("threads", "expected 1..1024");
    c.threads = static_cast<int>(t);
  }
  if (j.contains("out")) c.out = text(j["out"], "out");
  if (j.contains("format")) {
    c.format = text(j["format"], "format");
    if (c.format != "csv" && c.format != "json" && c.format != "both") schema("format", "expected csv, json or both");
  }
  if (j.contains("diagonal")) {
    const Json& d = j["diagonal"];
    require_object(d, "diagonal");
    check_keys(d, "diagonal", {"witness"});
    if (d.contains("witness") && !d["witness"].is_null()) {
      const Json& w = d["witness"];
      require_object(w, "diagonal.witness");
      check_keys(w, "diagonal.witness", {"epsilon", "rho"});
      c.witness_epsilon = w.contains("epsilon") ? positive(w["epsilon"], "diagonal.witness.epsilon") : 1.0;
      if (w.contains("rho")) c.witness_rho = number(w["rho"], "diagonal.witness.rho");
      if (c.witness_rho != 0.0 && !(c.witness_rho > 1.0)) schema("diagonal.witness.rho", "expected rho > 1 (or 0 for m)");
    }
  }
  if (j.contains("boundary")) {
    const Json& b = j["boundary"];
    require_object(b, "boundary");
    check_keys(b, "boundary", {"cylinder_levels", "levels", "nu"});
    if (b.contains("cylinder_levels")) c.cylinder_levels = unsigned_int(b["cylinder_levels"], "boundary.cylinder_levels");
    if (b.contains("levels")) {
      c.boundary_levels = unsigned_int(b["levels"], "boundary.levels");
      if (c.boundary_levels == 0) schema("boundary.levels", "expected a positive integer");
    }
    if (b.contains("nu")) c.nu = number_table(b["nu"], "boundary.nu");
  }
  if (j.contains("verify")) {
    const Json& v = j["verify"];
    require_object(v, "verify");
    check_keys(v, "verify", {"inject_fault"});
    if (v.contains("inject_fault")) c.inject_fault = boolean(v["inject_fault"], "verify.inject_fault");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config(j, dir.empty() ? "." : dir.string());
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["models"] = Json::array();
  for (const auto& m : c.models) j["models"].push_back(model_to_json(m));
  j["horizon"] = c.horizon;
  j["tol"] = c.tol;
  j["ceiling"] = c.ceiling;
  j["seed"] = c.seed ? Json(*c.seed) : Json(nullptr);
  j["nsamples"] = c.nsamples;
  j["write_samples"] = c.write_samples;
  j["threads"] = c.threads;
  j["out"] = c.out;
  j["format"] = c.format;
  j["diagonal"] = {{"witness", c.witness_epsilon ? Json{{"epsilon", *c.witness_epsilon}, {"rho", c.witness_rho}}
                                                 : Json(nullptr)}};
  j["boundary"] = {{"cylinder_levels", c.cylinder_levels}, {"levels", c.boundary_levels}, {"nu", c.nu}};
  j["verify"] = {{"inject_fault", c.inject_fault}};
  return j;
}

ResolvedModel resolve_model(const ModelConfig& mc, double tol) {
  ResolvedModel out;
  if (mc.name == "word_tree") {
    out.model = make_word_tree(mc.word_tree)->model();
  } else if (mc.name == "word_tree_invariant") {
    out.model = make_word_tree(mc.word_tree)->invariant_model();
  } else if (mc.name == "delta") {
    out.model = make_delta_model(mc.word_tree.m);
  } else if (mc.name == "sink_chain") {
    out.model = load_finite_state(sink_chain_spec(mc.deficit), tol);
  } else if (mc.name == "finite_state") {
    FiniteStateSpec spec;
    spec.maps = mc.maps;
    spec.kernel = mc.kernel;
    if (!mc.certificate_r.empty()) {
      auto table = mc.certificate_r;
      LyapunovCandidate cand;
      cand.r = [table](Point s) { return s.id < table.size() ? table[s.id] : 0.0; };
      cand.C = mc.certificate_C;
      cand.beta = mc.certificate_beta;
      cand.form = mc.certificate_form == "diagonal" ? LyapunovForm::diagonal : LyapunovForm::defect;
      cand.description = "r table";
      if (table.size() != mc.kernel.size()) {
        throw InputError("config certificate.r has " + std::to_string(table.size()) + " entries, expected " +
                         std::to_string(mc.kernel.size()));
      }
      spec.certificate = cand;
    }
    out.model = load_finite_state(spec, tol);
  } else {
    throw InputError("unknown model '" + mc.name + "'");
  }
  if (!mc.use_certificate) out.model.certificate.reset();

  std::vector<Point> base;
  if (mc.base.empty()) {
    base = out.model.default_base;
  } else {
    for (const auto& label : mc.base) {
      const Point p = out.model.system->parse(label);
      if (std::find(base.begin(), base.end(), p) == base.end()) base.push_back(p);
    }
  }
  out.base = orbit_closure(*out.model.system, base, mc.base_depth);
  return out;
}

}  // namespace kt
