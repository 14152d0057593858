#include <cmath>
#include <limits>
#include <string>

#include "cli.hpp"
#include "csflock/errors.hpp"

namespace csflock::cli {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

// Object reader that remembers which keys were consumed so leftovers can be
// reported as typos.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "document" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    if (!has(key)) fail(key_path(key), "missing required key");
    return j_.at(key);
  }

  double number(const std::string& key, std::optional<double> def = std::nullopt) {
    if (!has(key)) {
      if (!def) fail(key_path(key), "missing required key");
      return *def;
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(key_path(key), "expected a number");
    return v.get<double>();
  }

  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> def = std::nullopt) {
    if (!has(key)) {
      if (!def) fail(key_path(key), "missing required key");
      return *def;
    }
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned())
      fail(key_path(key), "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  bool flag(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) fail(key_path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, std::optional<std::string> def = std::nullopt) {
    if (!has(key)) {
      if (!def) fail(key_path(key), "missing required key");
      return *def;
    }
    const auto& v = j_.at(key);
    if (!v.is_string()) fail(key_path(key), "expected a string");
    return v.get<std::string>();
  }

  /// Number list; a bare number is broadcast to `broadcast` entries when nonzero.
  std::vector<double> numbers(const std::string& key, std::size_t broadcast = 0,
                              std::optional<std::vector<double>> def = std::nullopt) {
    if (!has(key)) {
      if (!def) fail(key_path(key), "missing required key");
      return *def;
    }
    const auto& v = j_.at(key);
    if (v.is_number() && broadcast > 0) return std::vector<double>(broadcast, v.get<double>());
    if (!v.is_array()) fail(key_path(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(key_path(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    if (broadcast > 0 && out.size() != broadcast)
      fail(key_path(key), "expected " + std::to_string(broadcast) + " entries, got " + std::to_string(out.size()));
    return out;
  }

  Section child(const std::string& key) { return Section(at(key), key_path(key)); }

  void done() const {
    for (const auto& item : j_.items())
      if (!used_.count(item.key())) fail(key_path(item.key()), "unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) fail(path, what);
}

// Rewraps library validation errors so they carry the config path.
template <class F>
auto at_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

InitialLaw parse_law(Section s, std::size_t dim, json& echo) {
  const std::string kind = s.text("law", "gaussian");
  const auto lk = at_path(s.key_path("law"), [&] { return initial_law_kind_from_string(kind); });
  echo["law"] = kind;
  InitialLaw law;
  switch (lk) {
    case InitialLaw::Kind::uniform_box: {
      auto lo = s.numbers("lo", dim), hi = s.numbers("hi", dim);
      echo["lo"] = lo;
      echo["hi"] = hi;
      law = at_path(s.key_path("law"), [&] { return InitialLaw::uniform_box(lo, hi); });
      break;
    }
    case InitialLaw::Kind::gaussian: {
      auto mean = s.numbers("mean", dim, std::vector<double>(dim, 0.0));
      auto sd = s.numbers("stddev", dim, std::vector<double>(dim, 1.0));
      echo["mean"] = mean;
      echo["stddev"] = sd;
      law = at_path(s.key_path("law"), [&] { return InitialLaw::gaussian(mean, sd); });
      break;
    }
    case InitialLaw::Kind::two_cluster: {
      auto a = s.numbers("mean_a", dim), b = s.numbers("mean_b", dim);
      auto sd = s.numbers("stddev", dim, std::vector<double>(dim, 1.0));
      const double w = s.number("weight_a", 0.5);
      echo["mean_a"] = a;
      echo["mean_b"] = b;
      echo["stddev"] = sd;
      echo["weight_a"] = w;
      law = at_path(s.key_path("law"), [&] { return InitialLaw::two_cluster(a, b, sd, w); });
      break;
    }
  }
  s.done();
  return law;
}

InitialLaw default_law(std::size_t dim, json& echo) {
  echo = {{"law", "gaussian"}, {"mean", std::vector<double>(dim, 0.0)}, {"stddev", std::vector<double>(dim, 1.0)}};
  return InitialLaw::gaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
}

KernelSpec parse_kernel(Section s, json& echo) {
  KernelSpec k;
  const std::string family = s.text("family", "constant");
  k.family = at_path(s.key_path("family"), [&] { return kernel_family_from_string(family); });
  k.params = s.numbers("params", 0, k.family == KernelFamily::constant ? std::optional(std::vector<double>{1.0})
                                                                       : std::nullopt);
  k.range = s.number("range", 0.0);
  s.done();
  at_path(s.key_path("params"), [&] { return k.build(); });
  echo = {{"family", family}, {"params", k.params}};
  if (k.family == KernelFamily::tabulated) echo["range"] = k.range;
  return k;
}

std::vector<double> positive_list(Section& s, const std::string& key, std::vector<double> def) {
  auto v = s.numbers(key, 0, def);
  require(!v.empty(), s.key_path(key), "must not be empty");
  for (double x : v) require(x > 0.0, s.key_path(key), "entries must be > 0");
  return v;
}

json parse_test_function(Section s, std::size_t d) {
  const std::string fam = s.text("family", "gaussian_bump");
  require(fam == "gaussian_bump" || fam == "polynomial_cutoff", s.key_path("family"),
          "expected gaussian_bump or polynomial_cutoff");
  json out = {{"family", fam},
              {"center_x", s.numbers("center_x", d, std::vector<double>(d, 0.0))},
              {"center_v", s.numbers("center_v", d, std::vector<double>(d, 0.0))}};
  const double scale = s.number("scale", 1.0);
  const double sx = s.number("scale_x", scale), sv = s.number("scale_v", scale);
  require(sx > 0.0 && sv > 0.0, s.key_path("scale"), "scales must be > 0");
  out["scale_x"] = sx;
  out["scale_v"] = sv;
  s.done();
  return out;
}

json parse_forcing(Section& parent) {
  if (!parent.has("A")) return {{"kind", "constant"}, {"a", 1.0}};
  const json& a = parent.at("A");
  if (a.is_number()) {
    require(a.get<double>() >= 0.0, parent.key_path("A"), "A must be ≥ 0");
    return {{"kind", "constant"}, {"a", a.get<double>()}};
  }
  Section s(a, parent.key_path("A"));
  const std::string kind = s.text("kind", "constant");
  require(kind == "constant" || kind == "linear" || kind == "exponential", s.key_path("kind"),
          "expected constant, linear or exponential");
  json out = {{"kind", kind}, {"a", s.number("a")}};
  if (kind != "constant") out["b"] = s.number("b");
  require(out["a"].get<double>() >= 0.0, s.key_path("a"), "a must be ≥ 0");
  if (kind == "linear") require(out["b"].get<double>() >= 0.0, s.key_path("b"), "b must be ≥ 0 so A stays ≥ 0");
  s.done();
  return out;
}

// Experiment sections. Each returns the validated parameters with defaults.
json parse_section(Experiment e, Section s, const RunConfig& c) {
  const std::size_t dim = 2 * c.d;
  json p = json::object();
  switch (e) {
    case Experiment::simulate:
      p["tolerance_c"] = s.number("tolerance_c", 10.0);
      require(p["tolerance_c"].get<double>() > 0.0, s.key_path("tolerance_c"), "must be > 0");
      break;
    case Experiment::phase_sweep: {
      auto sig = s.numbers("sigmas", 0, std::vector<double>{c.sigma});
      require(!sig.empty(), s.key_path("sigmas"), "must not be empty");
      for (double x : sig) require(x >= 0.0, s.key_path("sigmas"), "sigma must be ≥ 0");
      p["sigmas"] = sig;
      const std::string est = s.text("estimator", "tilted");
      at_path(s.key_path("estimator"), [&] { return estimator_from_string(est); });
      p["estimator"] = est;
      p["also_plain"] = s.flag("also_plain", true);
      p["allowance"] = s.number("allowance", 10.0 * c.dt);
      require(p["allowance"].get<double>() >= 0.0, s.key_path("allowance"), "must be ≥ 0");
      p["jackknife_groups"] = s.count("jackknife_groups", 20);
      p["series_stride"] = s.count("series_stride", c.stride == 0 ? 10 : c.stride);
      break;
    }
    case Experiment::meanfield: {
      std::vector<double> cells = s.numbers("cells", 0, std::vector<double>{4, 8, 16});
      std::vector<std::size_t> ci;
      for (double x : cells) {
        require(x >= 1.0 && x == std::floor(x), s.key_path("cells"), "entries must be positive integers");
        ci.push_back(static_cast<std::size_t>(x));
      }
      p["cells"] = ci;
      // Default box: law support padded by four standard deviations.
      std::vector<double> lo(dim), hi(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        switch (c.law.kind) {
          case InitialLaw::Kind::uniform_box:
            lo[k] = c.law.lo[k];
            hi[k] = c.law.hi[k];
            break;
          case InitialLaw::Kind::gaussian:
            lo[k] = c.law.mean[k] - 4.0 * c.law.stddev[k];
            hi[k] = c.law.mean[k] + 4.0 * c.law.stddev[k];
            break;
          case InitialLaw::Kind::two_cluster:
            lo[k] = std::min(c.law.mean[k], c.law.mean2[k]) - 4.0 * c.law.stddev[k];
            hi[k] = std::max(c.law.mean[k], c.law.mean2[k]) + 4.0 * c.law.stddev[k];
            break;
        }
      }
      p["lo"] = s.numbers("lo", dim, lo);
      p["hi"] = s.numbers("hi", dim, hi);
      p["particles_per_atom"] = s.count("particles_per_atom", 1);
      require(p["particles_per_atom"].get<std::size_t>() >= 1, s.key_path("particles_per_atom"), "must be ≥ 1");
      p["checkpoints"] = s.count("checkpoints", 20);
      break;
    }
    case Experiment::stability:
      p["etas"] = positive_list(s, "etas", {1e-2, 1e-3, 1e-4});
      p["checkpoints"] = s.count("checkpoints", 20);
      p["velocity_weight"] = s.number("velocity_weight", 1.0);
      p["max_spread"] = s.number("max_spread", 4.0);
      require(p["velocity_weight"].get<double>() > 0.0, s.key_path("velocity_weight"), "must be > 0");
      break;
    case Experiment::gronwall_check:
      p["c1"] = s.number("c1", 0.3);
      p["c2"] = s.number("c2", 0.2);
      p["X0"] = s.number("X0", 1.0);
      require(p["X0"].get<double>() >= 0.0, s.key_path("X0"), "X0 must be ≥ 0");
      p["A"] = parse_forcing(s);
      p["tolerance_c"] = s.number("tolerance_c", 10.0);
      break;
    case Experiment::wasserstein: {
      json echo;
      if (s.has("target")) {
        parse_law(s.child("target"), dim, echo);
        p["target"] = echo;
      } else {
        fail(s.key_path("target"), "missing required key");
      }
      if (s.has("source")) {
        json src;
        parse_law(s.child("source"), dim, src);
        p["source"] = src;
      }
      p["source_N"] = s.count("source_N", c.n);
      p["target_N"] = s.count("target_N", c.n);
      require(p["source_N"].get<std::size_t>() >= 1 && p["target_N"].get<std::size_t>() >= 1,
              s.key_path("source_N"), "N must be ≥ 1");
      const std::string method = s.text("method", "auto");
      require(method == "auto" || method == "exact" || method == "sinkhorn", s.key_path("method"),
              "expected auto, exact or sinkhorn");
      p["method"] = method;
      p["epsilon"] = s.number("epsilon", 0.01);
      require(p["epsilon"].get<double>() > 0.0, s.key_path("epsilon"), "epsilon must be > 0");
      p["velocity_weight"] = s.number("velocity_weight", 1.0);
      require(p["velocity_weight"].get<double>() > 0.0, s.key_path("velocity_weight"), "must be > 0");
      break;
    }
    case Experiment::weak_residual:
      p["test_function"] = s.has("test_function") ? parse_test_function(s.child("test_function"), c.d)
                                                   : parse_test_function(Section(json::object(), s.key_path("test_function")), c.d);
      p["seeds"] = s.count("seeds", 20);
      require(p["seeds"].get<std::size_t>() >= 1, s.key_path("seeds"), "must be ≥ 1");
      p["ratio_lo"] = s.number("ratio_lo", 1.3);
      p["ratio_hi"] = s.number("ratio_hi", 3.0);
      p["scheme_consistency"] = s.flag("scheme_consistency", false);
      p["min_order"] = s.number("min_order", 0.5);
      break;
  }
  s.done();
  return p;
}

std::string section_name(Experiment e) {
  std::string name(to_string(e));
  for (char& ch : name)
    if (ch == '-') ch = '_';
  return name;
}

}  // namespace

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::simulate: return "simulate";
    case Experiment::phase_sweep: return "phase-sweep";
    case Experiment::meanfield: return "meanfield";
    case Experiment::stability: return "stability";
    case Experiment::gronwall_check: return "gronwall-check";
    case Experiment::wasserstein: return "wasserstein";
    case Experiment::weak_residual: return "weak-residual";
  }
  return "unknown";
}

Experiment experiment_from_string(std::string_view name) {
  for (auto e : {Experiment::simulate, Experiment::phase_sweep, Experiment::meanfield, Experiment::stability,
                 Experiment::gronwall_check, Experiment::wasserstein, Experiment::weak_residual})
    if (name == to_string(e)) return e;
  throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

CommunicationKernel KernelSpec::build() const { return CommunicationKernel::from_params(family, params, range); }

RunConfig parse_config(std::string_view text, std::optional<Experiment> experiment) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(doc, "");
  RunConfig c;
  if (root.has("experiment")) {
    const std::string name = root.text("experiment");
    const auto e = at_path("experiment", [&] { return experiment_from_string(name); });
    if (experiment && *experiment != e)
      fail("experiment", "config names '" + name + "' but the subcommand is '" + std::string(to_string(*experiment)) + "'");
    c.experiment = e;
  } else if (experiment) {
    c.experiment = *experiment;
  } else {
    fail("experiment", "missing required key");
  }

  json norm = {{"experiment", to_string(c.experiment)}};

  // model
  {
    json model_doc = root.has("model") ? doc.at("model") : json::object();
    Section m(model_doc, "model");
    const auto n = m.count("N", 64);
    require(n >= 1, "model.N", "N must be ≥ 1");
    c.n = n;
    const auto d = m.count("d", 2);
    require(d >= 1, "model.d", "d must be ≥ 1");
    c.d = d;
    c.sigma = m.number("sigma", 0.0);
    require(c.sigma >= 0.0 && std::isfinite(c.sigma), "model.sigma", "sigma must be ≥ 0");
    json kecho, lecho;
    c.kernel = m.has("kernel") ? parse_kernel(m.child("kernel"), kecho) : parse_kernel(Section(json::object(), "model.kernel"), kecho);
    c.law = m.has("initial") ? parse_law(m.child("initial"), 2 * c.d, lecho) : default_law(2 * c.d, lecho);
    m.done();
    norm["model"] = {{"N", c.n}, {"d", c.d}, {"sigma", c.sigma}, {"kernel", kecho}, {"initial", lecho}};
  }

  // numerics
  {
    json num_doc = root.has("numerics") ? doc.at("numerics") : json::object();
    Section s(num_doc, "numerics");
    c.dt = s.number("dt", 1e-3);
    require(c.dt > 0.0 && std::isfinite(c.dt), "numerics.dt", "dt must be > 0");
    c.horizon = s.number("T", 5.0);
    require(c.horizon > 0.0 && std::isfinite(c.horizon), "numerics.T", "T must be > 0");
    const double ratio = c.horizon / c.dt;
    require(std::abs(ratio - std::round(ratio)) <= 1e-9 * ratio, "numerics.dt", "dt must divide T");
    const std::string scheme = s.text("scheme", "ito_euler");
    c.scheme = at_path("numerics.scheme", [&] { return scheme_from_string(scheme); });
    c.seed = s.count("seed", 0);
    c.realizations = s.count("realizations", 64);
    require(c.realizations >= 1, "numerics.realizations", "realizations must be ≥ 1");
    c.refinement_levels = static_cast<unsigned>(s.count("refinement_levels", 3));
    s.done();
    norm["numerics"] = {{"dt", c.dt}, {"T", c.horizon}, {"scheme", scheme}, {"seed", c.seed},
                        {"realizations", c.realizations}, {"refinement_levels", c.refinement_levels}};
  }

  // output
  {
    json out_doc = root.has("output") ? doc.at("output") : json::object();
    Section s(out_doc, "output");
    c.directory = s.text("directory", "out");
    if (s.has("formats")) {
      const auto& f = out_doc.at("formats");
      require(f.is_array(), "output.formats", "expected an array of strings");
      c.formats.clear();
      for (const auto& x : f) {
        require(x.is_string(), "output.formats", "expected an array of strings");
        const auto name = x.get<std::string>();
        require(name == "csv" || name == "json" || name == "svg", "output.formats",
                "unknown format '" + name + "' (expected csv, json, svg)");
        c.formats.insert(name);
      }
    }
    c.stride = s.count("stride", 10);
    s.done();
    norm["output"] = {{"directory", c.directory}, {"formats", c.formats}, {"stride", c.stride}};
  }

  // Experiment sections: every one present is validated; the chosen one is kept.
  for (auto e : {Experiment::simulate, Experiment::phase_sweep, Experiment::meanfield, Experiment::stability,
                 Experiment::gronwall_check, Experiment::wasserstein, Experiment::weak_residual}) {
    const auto key = section_name(e);
    const bool present = root.has(key);
    if (!present && e != c.experiment) continue;
    const json section_doc = present ? doc.at(key) : json::object();
    auto p = parse_section(e, Section(section_doc, key), c);
    if (e == c.experiment) {
      c.params = p;
      norm[key] = p;
    }
  }
  root.done();
  c.normalized = norm;
  return c;
}

}  // namespace csflock::cli
