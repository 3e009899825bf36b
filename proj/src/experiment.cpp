#include "pwhf/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "pwhf/oracles.hpp"

#ifndef PWHF_VERSION
#define PWHF_VERSION "unknown"
#endif

namespace pwhf::experiment {

namespace fs = std::filesystem;

namespace {

// Sample streams of a run, next to the solver's own (0: init, 1: potential
// batch, even numbers: metric batches).
constexpr std::uint64_t kSnapshotStream = 3;
constexpr std::uint64_t kErrorStream = 5;

Vector constant(Eigen::Index d, double v) { return Vector::Constant(d, v); }

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector json_vector(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(what) + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Matrix json_matrix(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + ": expected rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Vector first = json_vector(j[0], what);
  Matrix m(rows, first.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector row = json_vector(j[static_cast<std::size_t>(r)], what);
    if (row.size() != first.size()) throw ConfigError(std::string(what) + ": ragged rows");
    m.row(r) = row.transpose();
  }
  return m;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string("unknown field '") + key + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid field '") + key + "': " + e.what());
  }
}

std::string time_label(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", t);
  return buf;
}

// ---- presets ---------------------------------------------------------------

RunConfig base(const std::string& name, MapConfig map, PotentialConfig pot, Vector phi0) {
  RunConfig c;
  c.preset = name;
  c.map = std::move(map);
  c.potential = std::move(pot);
  c.phi0 = std::move(phi0);
  return c;
}

MapConfig resnet(Eigen::Index d) { return {MapKind::resnet, d, {}, {}, {}, {}}; }
MapConfig affine(Eigen::Index d) { return {MapKind::affine, d, {}, {}, {}, {}}; }

PotentialConfig quadratic(Vector a) { return {PotentialKind::quadratic, std::move(a), 0.1}; }

std::vector<Vector> plane_points() {
  return {vec({1.0, 0.0}), vec({0.5, 0.5}), vec({-1.0, 1.0}), vec({2.0, -1.0})};
}

RunConfig geodesic(const std::string& name, MapConfig map) {
  RunConfig c = base(name, std::move(map), {}, vec({-1.0, 0.0}));
  c.tracked_points = plane_points();
  return c;
}

RunConfig ho2d(const std::string& name, MapConfig map) {
  RunConfig c = base(name, std::move(map), quadratic(vec({2.25, 0.36})), vec({-1.0, 0.0}));
  c.tracked_points = plane_points();
  return c;
}

// Frequencies (1, r) with phases ±π/4, so the coordinates are a quarter period apart.
RunConfig lissajous(const std::string& name, double r) {
  const Vector a = vec({1.0, r * r});
  const Vector b = vec({1.0, -1.0});
  RunConfig c = base(name, resnet(2), quadratic(a), b.cwiseProduct(a.cwiseSqrt()));
  c.solver.h = 0.002;
  c.t_final = 40.0;
  c.tracked_points = plane_points();
  c.snapshot_times = {0.0, 10.0, 20.0, 40.0};
  return c;
}

RunConfig ho10d(const std::string& name) {
  Vector a = constant(10, 1.0);
  a[0] = 0.75;
  Vector beta = constant(10, 1.0);
  beta[0] = 0.0;
  RunConfig c = base(name, resnet(10), quadratic(a), beta);
  c.tracked_points = {Vector::Unit(10, 0), Vector::Unit(10, 1)};
  return c;
}

RunConfig interaction(const std::string& name) {
  RunConfig c = base(name, resnet(2), {PotentialKind::interaction, {}, 0.1}, vec({0.0, 0.0}));
  c.solver.h = 0.005;
  c.t_final = 1.0;
  c.tracked_points = plane_points();
  c.snapshot_times = {0.0, 0.5, 1.0};
  return c;
}

struct PresetEntry {
  const char* name;
  const char* summary;
  std::function<RunConfig(const std::string&)> make;
};

const std::vector<PresetEntry>& preset_table() {
  static const std::vector<PresetEntry> table = {
      {"geodesic2d", "zero potential, Phi0=-x1^2/2, resnet, h=0.002, T=4, N=50000",
       [](const std::string& n) {
         RunConfig c = geodesic(n, resnet(2));
         c.solver.h = 0.002;
         c.t_final = 4.0;
         c.snapshot_times = {0.0, 0.5, 1.0, 2.0, 4.0};
         return c;
       }},
      {"geodesic2d-desk", "geodesic2d at N=5000, h=0.005, T=2.5",
       [](const std::string& n) {
         RunConfig c = geodesic(n, resnet(2));
         c.solver.h = 0.005;
         c.t_final = 2.5;
         c.solver.metric_samples = 5000;
         c.snapshot_times = {0.0, 1.0, 2.5};
         return c;
       }},
      {"geodesic2d-affine", "geodesic with the affine map, tight MINRES, h=0.01, T=2.5",
       [](const std::string& n) {
         RunConfig c = geodesic(n, affine(2));
         c.solver.h = 0.01;
         c.t_final = 2.5;
         c.solver.metric_samples = 5000;
         c.solver.minres_tol = 1e-12;
         c.snapshot_times = {0.0, 1.0, 2.5};
         return c;
       }},
      {"ho2d-affine", "harmonic oscillator a=(2.25,0.36), affine map, h=0.002, T=40",
       [](const std::string& n) {
         RunConfig c = ho2d(n, affine(2));
         c.solver.h = 0.002;
         c.t_final = 40.0;
         c.solver.metric_samples = 5000;
         c.solver.diag_every = 100;
         c.snapshot_times = {0.0, 10.0, 20.0, 40.0};
         return c;
       }},
      {"ho2d-affine-error", "ho2d-affine error study, h=0.01, T=20",
       [](const std::string& n) {
         RunConfig c = ho2d(n, affine(2));
         c.solver.h = 0.01;
         c.t_final = 20.0;
         c.solver.metric_samples = 5000;
         c.solver.diag_every = 100;
         return c;
       }},
      {"ho2d", "harmonic oscillator a=(2.25,0.36), resnet, h=0.002, T=2pi, N=50000",
       [](const std::string& n) {
         RunConfig c = ho2d(n, resnet(2));
         c.solver.h = 0.002;
         c.t_final = 2.0 * std::numbers::pi;
         c.snapshot_times = {0.0, 1.0, 2.0, 3.0};
         return c;
       }},
      {"ho2d-desk", "ho2d at N=5000, h=0.005",
       [](const std::string& n) {
         RunConfig c = ho2d(n, resnet(2));
         c.solver.h = 0.005;
         c.t_final = 2.0 * std::numbers::pi;
         c.solver.metric_samples = 5000;
         c.snapshot_times = {0.0, 1.0, 2.0, 3.0};
         return c;
       }},
      {"lissajous", "Lissajous figure, frequency ratio 1/2", [](const std::string& n) {
         return lissajous(n, 0.5);
       }},
      {"lissajous-1-2", "Lissajous figure, frequency ratio 1/2", [](const std::string& n) {
         return lissajous(n, 0.5);
       }},
      {"lissajous-2-3", "Lissajous figure, frequency ratio 2/3", [](const std::string& n) {
         return lissajous(n, 2.0 / 3.0);
       }},
      {"lissajous-3-4", "Lissajous figure, frequency ratio 3/4", [](const std::string& n) {
         return lissajous(n, 0.75);
       }},
      {"velocity2d", "quadratic a=(1,2/3), Phi0=-x1^2/2, resnet, h=0.002, T=2",
       [](const std::string& n) {
         RunConfig c = base(n, resnet(2), quadratic(vec({1.0, 2.0 / 3.0})), vec({-1.0, 0.0}));
         c.solver.h = 0.002;
         c.t_final = 2.0;
         c.tracked_points = plane_points();
         c.snapshot_times = {0.0, 0.5, 1.0, 1.5, 2.0};
         return c;
       }},
      {"ho10d", "10-d oscillator, resnet(80,80), h=0.001, T=2pi, N=50000",
       [](const std::string& n) {
         RunConfig c = ho10d(n);
         c.solver.h = 0.001;
         c.t_final = 2.0 * std::numbers::pi;
         c.snapshot_times = {0.0, 0.5, 1.0, 1.5, 2.0, 0.75 * std::numbers::pi};
         return c;
       }},
      {"ho10d-desk", "ho10d at N=5000, h=0.005, T=2",
       [](const std::string& n) {
         RunConfig c = ho10d(n);
         c.solver.h = 0.005;
         c.t_final = 2.0;
         c.solver.metric_samples = 5000;
         c.snapshot_times = {0.0, 0.5, 1.0, 1.5, 2.0};
         return c;
       }},
      {"interaction2d", "interaction kernel b=0.1, resnet, N_potential=12000, h=0.005, T=1",
       [](const std::string& n) { return interaction(n); }},
      {"interaction2d-desk", "interaction2d at N=2000 for both batches",
       [](const std::string& n) {
         RunConfig c = interaction(n);
         c.solver.metric_samples = 2000;
         c.solver.potential_samples = 2000;
         return c;
       }},
      {"entropy-diag", "entropy, diagonal map, d=1, D(0)=1, D'(0)=1, h=0.0005, T=2",
       [](const std::string& n) {
         RunConfig c = base(n, {MapKind::diagonal, 1, {}, {}, {}, {}},
                            {PotentialKind::entropy_diagonal, {}, 0.1}, vec({1.0}));
         c.solver.h = 0.0005;
         c.t_final = 2.0;
         c.solver.metric_samples = 1000;
         c.solver.moment_matched = true;
         c.solver.checkpoint_every = 1;
         c.tracked_points = {vec({1.0})};
         c.snapshot_times = {0.0, 1.0, 2.0};
         return c;
       }},
  };
  return table;
}

// ---- output ----------------------------------------------------------------

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : out_(path) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
    out_ << '\n';
  }
  CsvWriter& cell(double v) { return raw(format_number(v)); }
  CsvWriter& cell(Eigen::Index v) { return raw(std::to_string(v)); }
  CsvWriter& raw(const std::string& s) {
    out_ << (first_ ? "" : ",") << s;
    first_ = false;
    return *this;
  }
  void end() {
    out_ << '\n';
    first_ = true;
  }

 private:
  std::ofstream out_;
  bool first_ = true;
};

std::vector<std::string> coord_names(const char* prefix, Eigen::Index n, int offset) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + offset));
  return out;
}

// Positions of the oracle flow for the error batch, one matrix per row.
class Reference {
 public:
  virtual ~Reference() = default;
  virtual Matrix at(Eigen::Index step, double t) const = 0;
};

class PointwiseReference : public Reference {
 public:
  PointwiseReference(Matrix x0, std::function<Vector(const Vector&, double)> flow)
      : x0_(std::move(x0)), flow_(std::move(flow)) {}
  Matrix at(Eigen::Index, double t) const override {
    Matrix out(x0_.rows(), x0_.cols());
    for (Eigen::Index i = 0; i < x0_.cols(); ++i) out.col(i) = flow_(x0_.col(i), t);
    return out;
  }

 private:
  Matrix x0_;
  std::function<Vector(const Vector&, double)> flow_;
};

class ScaledReference : public Reference {
 public:
  // x(t) = x0 ∘ D(t) / D(0), componentwise.
  ScaledReference(Matrix x0, std::vector<EntropyTrajectory> comps, Vector D0)
      : x0_(std::move(x0)), comps_(std::move(comps)), D0_(std::move(D0)) {}
  Matrix at(Eigen::Index step, double) const override {
    Vector s(D0_.size());
    for (Eigen::Index k = 0; k < s.size(); ++k)
      s[k] = comps_[static_cast<std::size_t>(k)].D[static_cast<std::size_t>(step)] / D0_[k];
    return s.asDiagonal() * x0_;
  }

 private:
  Matrix x0_;
  std::vector<EntropyTrajectory> comps_;
  Vector D0_;
};

class EnsembleReference : public Reference {
 public:
  explicit EnsembleReference(std::vector<ParticleEnsemble> frames) : frames_(std::move(frames)) {}
  Matrix at(Eigen::Index step, double) const override {
    return frames_.at(static_cast<std::size_t>(step)).positions;
  }

 private:
  std::vector<ParticleEnsemble> frames_;
};

std::unique_ptr<Reference> make_reference(const RunConfig& cfg, OracleKind kind,
                                          const PushForwardMap& map, const ParamVector& theta0,
                                          const SampleBatch& eval) {
  const Matrix x0 = map.forward_batch(theta0, eval.points);
  const Vector phi0 = cfg.phi0;
  switch (kind) {
    case OracleKind::geodesic:
      return std::make_unique<PointwiseReference>(x0, [phi0](const Vector& x, double t) {
        return oracles::geodesic_exact(
            x, [&](const Vector& y) { return Vector(phi0.cwiseProduct(y)); }, t);
      });
    case OracleKind::harmonic: {
      const QuadraticSpec q = QuadraticSpec::from_initial_phase(cfg.potential.a, phi0);
      return std::make_unique<PointwiseReference>(
          x0, [q](const Vector& x, double t) { return oracles::ho_exact(x, q, t).position; });
    }
    case OracleKind::entropy: {
      if (cfg.map.kind != MapKind::diagonal)
        throw ConfigError("entropy oracle needs the diagonal map");
      std::vector<double> grid;
      for (Eigen::Index l = 0; l <= cfg.solver.steps; ++l)
        grid.push_back(static_cast<double>(l) * cfg.solver.h);
      std::vector<EntropyTrajectory> comps;
      for (Eigen::Index k = 0; k < theta0.size(); ++k)
        comps.push_back(oracles::entropy_oracle(grid, theta0[k], phi0[k] * theta0[k]));
      return std::make_unique<ScaledReference>(x0, std::move(comps), theta0);
    }
    case OracleKind::particle: {
      ParticleEnsemble init;
      init.positions = x0;
      init.velocities = phi0.asDiagonal() * x0;
      const Eigen::Index sub = cfg.particle_substeps;
      return std::make_unique<EnsembleReference>(oracles::particle_reference(
          init, cfg.potential.spec(), cfg.solver.h / static_cast<double>(sub),
          cfg.solver.steps * sub, sub));
    }
    default:
      return nullptr;
  }
}

}  // namespace

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view to_string(OracleKind kind) {
  switch (kind) {
    case OracleKind::automatic: return "auto";
    case OracleKind::none: return "none";
    case OracleKind::geodesic: return "geodesic";
    case OracleKind::harmonic: return "harmonic";
    case OracleKind::entropy: return "entropy";
    case OracleKind::particle: return "particle";
  }
  return "?";
}

OracleKind parse_oracle_kind(std::string_view s) {
  for (auto k : {OracleKind::automatic, OracleKind::none, OracleKind::geodesic,
                 OracleKind::harmonic, OracleKind::entropy, OracleKind::particle}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown oracle '" + std::string(s) + "'");
}

MapDescriptor MapConfig::descriptor() const {
  switch (kind) {
    case MapKind::affine: return MapDescriptor::affine(dim);
    case MapKind::diagonal: return MapDescriptor::diagonal(dim);
    case MapKind::resnet:
      if (hidden.empty()) return MapDescriptor::resnet(dim);
      if (hidden.size() != 2) throw ConfigError("resnet needs exactly two hidden widths");
      return MapDescriptor::resnet(dim, hidden[0], hidden[1]);
  }
  throw ConfigError("unknown map kind");
}

std::optional<ParamVector> MapConfig::theta0() const {
  const PushForwardMap map(descriptor());
  if (kind == MapKind::affine && (gamma || shift)) {
    const Matrix g = gamma ? *gamma : Matrix(Matrix::Identity(dim, dim));
    const Vector b = shift ? *shift : Vector(Vector::Zero(dim));
    if (g.rows() != dim || g.cols() != dim) throw ConfigError("map.gamma must be d x d");
    require_size(b.size(), dim, "map.shift");
    return map.affine_params(g, b);
  }
  if (kind == MapKind::diagonal && scale) {
    require_size(scale->size(), dim, "map.scale");
    return *scale;
  }
  if (gamma || shift || scale)
    throw ConfigError("explicit initial parameters do not fit map kind '" +
                      std::string(to_string(kind)) + "'");
  return std::nullopt;
}

PotentialSpec PotentialConfig::spec() const {
  switch (kind) {
    case PotentialKind::zero: return PotentialSpec::zero();
    case PotentialKind::quadratic: return PotentialSpec::quadratic(a);
    case PotentialKind::interaction: return PotentialSpec::interaction(b);
    case PotentialKind::entropy_diagonal: return PotentialSpec::entropy_diagonal();
    case PotentialKind::entropy_affine: return PotentialSpec::entropy_affine();
    case PotentialKind::generic_linear: break;
  }
  throw ConfigError("potential kind '" + std::string(to_string(kind)) +
                    "' cannot be configured from a file");
}

void RunConfig::resolve() {
  if (t_final && !steps_explicit) {
    if (!(*t_final >= 0.0)) throw ConfigError("t_final must be nonnegative");
    solver.steps = static_cast<Eigen::Index>(std::llround(*t_final / solver.h));
  }
  solver.validate();
  const MapDescriptor desc = map.descriptor();
  desc.validate();
  potential.spec().validate(desc);
  require_size(phi0.size(), map.dim, "phi0");
  for (const auto& z : tracked_points) require_size(z.size(), map.dim, "tracked point");
  const double T = horizon();
  for (double t : snapshot_times) {
    if (!(t >= 0.0) || t > T + 1e-9 * std::max(1.0, T))
      throw ConfigError("snapshot time " + format_number(t) + " outside [0, " + format_number(T) +
                        "]");
  }
  if (snapshot_samples < 1) throw ConfigError("snapshot_samples must be positive");
  if (error_samples < 0) throw ConfigError("error_samples must be nonnegative");
  if (particle_substeps < 1) throw ConfigError("particle_substeps must be positive");
  (void)map.theta0();
  if (resolved_oracle() == OracleKind::entropy && map.kind != MapKind::diagonal)
    throw ConfigError("entropy oracle needs the diagonal map");
  if (resolved_oracle() == OracleKind::harmonic && potential.kind != PotentialKind::quadratic)
    throw ConfigError("harmonic oracle needs the quadratic potential");
}

OracleKind RunConfig::resolved_oracle() const {
  if (oracle != OracleKind::automatic) return oracle;
  switch (potential.kind) {
    case PotentialKind::zero: return OracleKind::geodesic;
    case PotentialKind::quadratic: return OracleKind::harmonic;
    case PotentialKind::interaction: return OracleKind::particle;
    case PotentialKind::entropy_diagonal:
      return map.kind == MapKind::diagonal ? OracleKind::entropy : OracleKind::none;
    default: return OracleKind::none;
  }
}

Problem RunConfig::problem() const {
  Problem pr;
  pr.map = map.descriptor();
  pr.potential = potential.spec();
  const Vector beta = phi0;
  pr.grad_phi0 = [beta](const Vector& x) { return Vector(beta.cwiseProduct(x)); };
  pr.theta0 = map.theta0();
  return pr;
}

std::vector<PresetInfo> presets() {
  std::vector<PresetInfo> out;
  for (const auto& e : preset_table()) out.push_back({e.name, e.summary});
  return out;
}

RunConfig preset(const std::string& name) {
  for (const auto& e : preset_table()) {
    if (name == e.name) return e.make(name);
  }
  throw ConfigError("unknown preset '" + name + "'");
}

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  json m = {{"kind", std::string(to_string(c.map.kind))}, {"dim", c.map.dim}};
  if (!c.map.hidden.empty()) m["hidden"] = c.map.hidden;
  if (c.map.gamma) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < c.map.gamma->rows(); ++r)
      rows.push_back(vector_json(c.map.gamma->row(r).transpose()));
    m["gamma"] = rows;
  }
  if (c.map.shift) m["shift"] = vector_json(*c.map.shift);
  if (c.map.scale) m["scale"] = vector_json(*c.map.scale);
  j["map"] = m;
  json p = {{"kind", std::string(to_string(c.potential.kind))}};
  if (c.potential.kind == PotentialKind::quadratic) p["a"] = vector_json(c.potential.a);
  if (c.potential.kind == PotentialKind::interaction) p["b"] = c.potential.b;
  j["potential"] = p;
  j["phi0"] = vector_json(c.phi0);
  if (c.t_final) j["t_final"] = *c.t_final;
  const SolverConfig& s = c.solver;
  json sj = {{"h", s.h},
             {"inner_iters", s.inner_iters},
             {"gamma", s.gamma},
             {"minres_tol", s.minres_tol},
             {"minres_max_iter", s.minres_max_iter},
             {"metric_samples", s.metric_samples},
             {"potential_samples", s.potential_samples},
             {"resample", std::string(to_string(s.resample))},
             {"seed", s.seed},
             {"inner_mode", std::string(to_string(s.inner_mode))},
             {"stepper", std::string(to_string(s.stepper))},
             {"warm_start", s.warm_start},
             {"moment_matched", s.moment_matched},
             {"max_consecutive_failures", s.max_consecutive_failures},
             {"diag_every", s.diag_every},
             {"checkpoint_every", s.checkpoint_every},
             {"divergence_bound", s.divergence_bound}};
  if (c.steps_explicit || !c.t_final) sj["steps"] = s.steps;
  j["solver"] = sj;
  json tp = json::array();
  for (const auto& z : c.tracked_points) tp.push_back(vector_json(z));
  j["tracked_points"] = tp;
  j["snapshot_times"] = c.snapshot_times;
  j["snapshot_samples"] = c.snapshot_samples;
  j["error_samples"] = c.error_samples;
  j["oracle"] = std::string(to_string(c.oracle));
  j["particle_substeps"] = c.particle_substeps;
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig from_json(const json& doc, RunConfig c) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (doc.contains("config") && doc.contains("version")) return from_json(doc.at("config"), {});
  reject_unknown(doc,
                 {"preset", "map", "potential", "phi0", "t_final", "solver", "tracked_points",
                  "snapshot_times", "snapshot_samples", "error_samples", "oracle",
                  "particle_substeps", "output_dir"},
                 "config");
  if (doc.contains("preset")) {
    const auto name = get<std::string>(doc, "preset");
    if (!name.empty()) c = preset(name);
  }
  if (doc.contains("map")) {
    const json& m = doc.at("map");
    reject_unknown(m, {"kind", "dim", "hidden", "gamma", "shift", "scale"}, "map");
    MapConfig mc = c.map;
    if (m.contains("kind")) {
      const MapKind kind = parse_map_kind(get<std::string>(m, "kind"));
      if (kind != mc.kind) mc = {kind, mc.dim, {}, {}, {}, {}};
    }
    if (m.contains("dim")) mc.dim = get<Eigen::Index>(m, "dim");
    if (m.contains("hidden")) mc.hidden = get<std::vector<Eigen::Index>>(m, "hidden");
    if (m.contains("gamma")) mc.gamma = json_matrix(m.at("gamma"), "map.gamma");
    if (m.contains("shift")) mc.shift = json_vector(m.at("shift"), "map.shift");
    if (m.contains("scale")) mc.scale = json_vector(m.at("scale"), "map.scale");
    c.map = mc;
  }
  if (doc.contains("potential")) {
    const json& p = doc.at("potential");
    reject_unknown(p, {"kind", "a", "b"}, "potential");
    if (p.contains("kind")) c.potential.kind = parse_potential_kind(get<std::string>(p, "kind"));
    if (p.contains("a")) c.potential.a = json_vector(p.at("a"), "potential.a");
    if (p.contains("b")) c.potential.b = get<double>(p, "b");
  }
  if (doc.contains("phi0")) c.phi0 = json_vector(doc.at("phi0"), "phi0");
  if (doc.contains("t_final")) {
    c.t_final = get<double>(doc, "t_final");
    c.steps_explicit = false;
  }
  if (doc.contains("solver")) {
    const json& s = doc.at("solver");
    reject_unknown(s,
                   {"h", "steps", "inner_iters", "gamma", "minres_tol", "minres_max_iter",
                    "metric_samples", "potential_samples", "resample", "seed", "inner_mode",
                    "stepper", "warm_start", "moment_matched", "max_consecutive_failures",
                    "diag_every", "checkpoint_every", "divergence_bound"},
                   "solver");
    SolverConfig& sc = c.solver;
    if (s.contains("h")) sc.h = get<double>(s, "h");
    if (s.contains("steps")) {
      sc.steps = get<Eigen::Index>(s, "steps");
      c.steps_explicit = true;
    }
    if (s.contains("inner_iters")) sc.inner_iters = get<int>(s, "inner_iters");
    if (s.contains("gamma")) sc.gamma = get<double>(s, "gamma");
    if (s.contains("minres_tol")) sc.minres_tol = get<double>(s, "minres_tol");
    if (s.contains("minres_max_iter")) sc.minres_max_iter = get<Eigen::Index>(s, "minres_max_iter");
    if (s.contains("metric_samples")) sc.metric_samples = get<Eigen::Index>(s, "metric_samples");
    if (s.contains("potential_samples"))
      sc.potential_samples = get<Eigen::Index>(s, "potential_samples");
    if (s.contains("resample")) sc.resample = parse_batch_policy(get<std::string>(s, "resample"));
    if (s.contains("seed")) sc.seed = get<std::uint64_t>(s, "seed");
    if (s.contains("inner_mode")) sc.inner_mode = parse_inner_mode(get<std::string>(s, "inner_mode"));
    if (s.contains("stepper")) sc.stepper = parse_stepper(get<std::string>(s, "stepper"));
    if (s.contains("warm_start")) sc.warm_start = get<bool>(s, "warm_start");
    if (s.contains("moment_matched")) sc.moment_matched = get<bool>(s, "moment_matched");
    if (s.contains("max_consecutive_failures"))
      sc.max_consecutive_failures = get<int>(s, "max_consecutive_failures");
    if (s.contains("diag_every")) sc.diag_every = get<Eigen::Index>(s, "diag_every");
    if (s.contains("checkpoint_every")) sc.checkpoint_every = get<Eigen::Index>(s, "checkpoint_every");
    if (s.contains("divergence_bound")) sc.divergence_bound = get<double>(s, "divergence_bound");
  }
  if (doc.contains("tracked_points")) {
    const json& tp = doc.at("tracked_points");
    if (!tp.is_array()) throw ConfigError("tracked_points: expected a list of points");
    c.tracked_points.clear();
    for (const auto& z : tp) c.tracked_points.push_back(json_vector(z, "tracked_points"));
  }
  if (doc.contains("snapshot_times")) c.snapshot_times = get<std::vector<double>>(doc, "snapshot_times");
  if (doc.contains("snapshot_samples")) c.snapshot_samples = get<Eigen::Index>(doc, "snapshot_samples");
  if (doc.contains("error_samples")) c.error_samples = get<Eigen::Index>(doc, "error_samples");
  if (doc.contains("oracle")) c.oracle = parse_oracle_kind(get<std::string>(doc, "oracle"));
  if (doc.contains("particle_substeps"))
    c.particle_substeps = get<Eigen::Index>(doc, "particle_substeps");
  if (doc.contains("output_dir")) c.output_dir = get<std::string>(doc, "output_dir");
  return c;
}

void apply(RunConfig& c, const Overrides& o) {
  if (o.seed) c.solver.seed = *o.seed;
  if (o.dt) c.solver.h = *o.dt;
  if (o.steps) {
    c.solver.steps = *o.steps;
    c.steps_explicit = true;
  }
  if (o.samples) c.solver.metric_samples = *o.samples;
  if (o.out) c.output_dir = *o.out;
  if (o.diag_every) c.solver.diag_every = *o.diag_every;
  if (o.resample) c.solver.resample = *o.resample;
}

RunOutcome execute(RunConfig cfg, const ExecuteOptions& opts) {
  cfg.resolve();
  const auto started = std::chrono::steady_clock::now();
  RunOutcome out;
  const Eigen::Index d = cfg.map.dim;
  const SolverConfig& sc = cfg.solver;

  Solver solver(cfg.problem(), sc);
  const ParamVector theta0 = solver.initial_theta();

  std::map<Eigen::Index, double> snapshot_steps;
  for (double t : cfg.snapshot_times)
    snapshot_steps[static_cast<Eigen::Index>(std::llround(t / sc.h))] = t;
  SampleBatch snap_batch;
  if (!snapshot_steps.empty())
    snap_batch = SampleBatch::standard_normal(d, cfg.snapshot_samples,
                                              derive_seed(sc.seed, kSnapshotStream));

  const OracleKind oracle = cfg.resolved_oracle();
  SampleBatch eval;
  std::unique_ptr<Reference> ref;
  if (oracle != OracleKind::none && cfg.error_samples > 0) {
    eval = SampleBatch::standard_normal(d, cfg.error_samples, derive_seed(sc.seed, kErrorStream));
    ref = make_reference(cfg, oracle, solver.map(), theta0, eval);
  }

  Matrix tracked_z(d, static_cast<Eigen::Index>(cfg.tracked_points.size()));
  for (std::size_t k = 0; k < cfg.tracked_points.size(); ++k)
    tracked_z.col(static_cast<Eigen::Index>(k)) = cfg.tracked_points[k];
  out.tracked.resize(cfg.tracked_points.size());

  RunOptions ro;
  ro.warn = opts.warn;
  ro.observer = [&](const StateView& v) {
    const Eigen::Index l = v.row.step;
    out.rows.push_back(v.row);
    if (tracked_z.cols() > 0) {
      const Linearization lz = v.map.linearize(v.state.theta, tracked_z);
      const Matrix vel = lz.jvp(v.velocity);
      for (Eigen::Index k = 0; k < tracked_z.cols(); ++k)
        out.tracked[static_cast<std::size_t>(k)].push_back(
            {v.row.t, lz.outputs().col(k), vel.col(k)});
    }
    if (sc.checkpoint_every > 0 && (l % sc.checkpoint_every == 0 || l == sc.steps))
      out.checkpoints.push_back({l, v.row.t, v.state.theta, v.state.p});
    if (snapshot_steps.count(l))
      out.snapshots[l] = v.map.forward_batch(v.state.theta, snap_batch.points);
    if (ref) {
      const Matrix target = ref->at(l, v.row.t);
      const Matrix diff = v.map.forward_batch(v.state.theta, eval.points) - target;
      const Vector sq = diff.colwise().squaredNorm().transpose();
      const double n = static_cast<double>(sq.size());
      ErrorRow e{v.row.t, sq.cwiseSqrt().sum() / n, sq.sum() / n, target.squaredNorm() / n};
      out.eps_hat = std::max(out.eps_hat, e.mean_error);
      out.errors.push_back(e);
    }
  };

  try {
    solver.run(ro);
  } catch (const SolverAbort& e) {
    out.ok = false;
    out.message = e.what();
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (opts.write_files) write_outputs(cfg, out);
  return out;
}

void write_outputs(const RunConfig& cfg, const RunOutcome& out) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  const Eigen::Index d = cfg.map.dim;

  {
    CsvWriter w(dir / "trajectory.csv");
    w.header({"step", "t", "H", "KE", "PE", "minres_iterations", "minres_residual",
              "minres_converged", "fp_residual"});
    for (const auto& r : out.rows) {
      w.cell(r.step).cell(r.t).cell(r.hamiltonian).cell(r.kinetic).cell(r.potential);
      w.cell(r.minres_iterations).cell(r.minres_residual).raw(r.minres_converged ? "1" : "0");
      w.cell(r.fp_residual).end();
    }
  }
  {
    CsvWriter w(dir / "diagnostics.csv");
    w.header({"t", "H", "KE", "PE", "delta_theta"});
    for (const auto& r : out.rows) {
      w.cell(r.t).cell(r.hamiltonian).cell(r.kinetic).cell(r.potential);
      if (r.delta) w.cell(*r.delta); else w.raw("");
      w.end();
    }
  }
  if (!out.errors.empty()) {
    CsvWriter w(dir / "error.csv");
    w.header({"t", "mean_err", "mse"});
    for (const auto& e : out.errors) {
      w.cell(e.t).cell(e.mean_error).cell(e.mse).end();
    }
  }
  if (!out.checkpoints.empty()) {
    CsvWriter w(dir / "checkpoints.csv");
    const Eigen::Index m = out.checkpoints.front().theta.size();
    std::vector<std::string> cols = {"step", "t"};
    for (auto& s : coord_names("theta_", m, 0)) cols.push_back(s);
    for (auto& s : coord_names("p_", m, 0)) cols.push_back(s);
    w.header(cols);
    for (const auto& c : out.checkpoints) {
      w.cell(c.step).cell(c.t);
      for (Eigen::Index i = 0; i < m; ++i) w.cell(c.theta[i]);
      for (Eigen::Index i = 0; i < m; ++i) w.cell(c.p[i]);
      w.end();
    }
  }
  if (!out.snapshots.empty()) {
    fs::create_directories(dir / "snapshots");
    for (double t : cfg.snapshot_times) {
      const auto l = static_cast<Eigen::Index>(std::llround(t / cfg.solver.h));
      auto it = out.snapshots.find(l);
      if (it == out.snapshots.end()) continue;  // run aborted before t
      CsvWriter w(dir / "snapshots" / ("t_" + time_label(t) + ".csv"));
      w.header(coord_names("x", d, 1));
      const Matrix& x = it->second;
      for (Eigen::Index i = 0; i < x.cols(); ++i) {
        for (Eigen::Index k = 0; k < d; ++k) w.cell(x(k, i));
        w.end();
      }
    }
  }
  if (!out.tracked.empty()) {
    fs::create_directories(dir / "tracked");
    std::vector<std::string> cols = {"t"};
    for (auto& s : coord_names("x", d, 1)) cols.push_back(s);
    for (auto& s : coord_names("v", d, 1)) cols.push_back(s);
    for (std::size_t k = 0; k < out.tracked.size(); ++k) {
      CsvWriter w(dir / "tracked" / (std::to_string(k) + ".csv"));
      w.header(cols);
      for (const auto& s : out.tracked[k]) {
        w.cell(s.t);
        for (Eigen::Index i = 0; i < d; ++i) w.cell(s.position[i]);
        for (Eigen::Index i = 0; i < d; ++i) w.cell(s.velocity[i]);
        w.end();
      }
    }
  }

  json meta;
  meta["version"] = PWHF_VERSION;
  meta["status"] = out.ok ? "ok" : "aborted";
  if (!out.ok) meta["message"] = out.message;
  meta["seed"] = cfg.solver.seed;
  meta["wall_seconds"] = out.wall_seconds;
  if (!out.rows.empty()) {
    const StepRow& last = out.rows.back();
    meta["final"] = {{"step", last.step},
                     {"t", last.t},
                     {"H", last.hamiltonian},
                     {"KE", last.kinetic},
                     {"PE", last.potential}};
  }
  if (!out.errors.empty()) meta["eps_hat"] = out.eps_hat;
  meta["oracle"] = std::string(to_string(cfg.resolved_oracle()));
  meta["config"] = to_json(cfg);
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

DiffReport diff_csv(const std::string& path_a, const std::string& path_b, double tol) {
  auto read = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (!line.empty() && line.back() == ',') cells.emplace_back();
      rows.push_back(std::move(cells));
    }
    return rows;
  };
  const auto a = read(path_a), b = read(path_b);
  DiffReport rep;
  if (a.size() != b.size()) {
    rep.same_shape = false;
    rep.first_mismatch = "row count " + std::to_string(a.size()) + " vs " + std::to_string(b.size());
    return rep;
  }
  rep.rows = a.empty() ? 0 : a.size() - 1;
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r].size() != b[r].size()) {
      rep.same_shape = false;
      rep.first_mismatch = "column count differs on line " + std::to_string(r + 1);
      return rep;
    }
    for (std::size_t k = 0; k < a[r].size(); ++k) {
      const std::string& x = a[r][k];
      const std::string& y = b[r][k];
      if (x == y) continue;
      char* ex = nullptr;
      char* ey = nullptr;
      const double u = std::strtod(x.c_str(), &ex);
      const double v = std::strtod(y.c_str(), &ey);
      const bool numeric = r > 0 && !x.empty() && !y.empty() && *ex == '\0' && *ey == '\0';
      if (!numeric) {
        if (rep.first_mismatch.empty())
          rep.first_mismatch = "line " + std::to_string(r + 1) + ": '" + x + "' vs '" + y + "'";
        continue;
      }
      const double diff = std::abs(u - v);
      const double scale = std::max({1.0, std::abs(u), std::abs(v)});
      rep.max_abs = std::max(rep.max_abs, diff);
      const double mag = std::max(std::abs(u), std::abs(v));
      if (mag > 0.0) rep.max_rel = std::max(rep.max_rel, diff / mag);
      if ((diff > tol * scale || std::isnan(diff)) && rep.first_mismatch.empty())
        rep.first_mismatch = "line " + std::to_string(r + 1) + " column " +
                             std::to_string(k + 1) + ": " + x + " vs " + y;
    }
  }
  return rep;
}

}  // namespace pwhf::experiment
