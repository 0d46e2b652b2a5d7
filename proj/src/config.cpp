#include "qgk/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace qgk {

RunConfig& RunConfig::finalize() {
  dataset.seed = seed;
  model.train.seed = seed + 1;
  physics.derive();
  physics.validate();
  model.train.validate();
  model.weights.validate();
  if (model.d < 1) throw std::invalid_argument("config: model.d must be positive");
  if (dataset.subsample < 1) throw std::invalid_argument("config: dataset.subsample must be >= 1");
  if (dataset.out_resolution < 2 || dataset.out_resolution > physics.nx) {
    throw std::invalid_argument("config: dataset.out_resolution must not exceed physics.nx");
  }
  parse_mode(eval.mode);
  if (!(eval.dt_query_hours > 0)) throw std::invalid_argument("config: eval.dt_query_hours must be positive");
  return *this;
}

RolloutOptions RunConfig::rollout_options(double dt_snapshot_seconds) const {
  RolloutOptions o;
  o.start = eval.start;
  o.horizon = eval.horizon;
  o.mode = parse_mode(eval.mode);
  o.dt_query = eval.dt_query_hours * 3600.0 / dt_snapshot_seconds;
  o.max_lag = eval.max_lag;
  o.drift_mode = eval.drift_endpoints ? DriftMode::kEndpoints : DriftMode::kHeadTailMean;
  return o;
}

namespace {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class Emit {
 public:
  explicit Emit(YAML::Emitter& out) : out_(out) {}
  void num(const char* key, double v) { out_ << YAML::Key << key << YAML::Value << format_double(v); }
  template <typename T>
  void val(const char* key, const T& v) {
    out_ << YAML::Key << key << YAML::Value << v;
  }

 private:
  YAML::Emitter& out_;
};

class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsMap()) throw std::invalid_argument("config: section '" + name_ + "' must be a map");
  }
  ~Section() = default;

  template <typename T>
  void get(const char* key, T& target) {
    allowed_.insert(key);
    if (!node_) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      target = v.as<T>();
    } catch (const YAML::Exception&) {
      throw std::invalid_argument("config: bad value for " + name_ + "." + key);
    }
  }
  void get_optional(const char* key, std::optional<double>& target) {
    allowed_.insert(key);
    if (!node_) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (v.IsNull()) {
      target.reset();
      return;
    }
    try {
      target = v.as<double>();
    } catch (const YAML::Exception&) {
      throw std::invalid_argument("config: bad value for " + name_ + "." + key);
    }
  }
  YAML::Node child(const char* key) {
    allowed_.insert(key);
    return node_ ? node_[key] : YAML::Node();
  }
  void reject_unknown() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!allowed_.count(key)) throw std::invalid_argument("config: unknown key " + name_ + "." + key);
    }
  }

 private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> allowed_;
};

}  // namespace

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter out;
  Emit e(out);
  out << YAML::BeginMap;
  e.val("seed", c.seed);

  out << YAML::Key << "physics" << YAML::Value << YAML::BeginMap;
  const QGParams& p = c.physics;
  e.val("nx", p.nx);
  e.val("ny", p.ny);
  e.num("L", p.L);
  e.num("dt", p.dt);
  e.num("beta", p.beta);
  e.num("r_ek", p.r_ek);
  e.num("U1", p.U1);
  e.num("U2", p.U2);
  e.num("H1", p.H1);
  e.num("H2", p.H2);
  e.num("delta", p.delta);
  e.num("kd2", p.kd2);
  e.num("ssd_cutoff_frac", p.ssd_cutoff_frac);
  e.num("ssd_strength", p.ssd_strength);
  e.num("ssd_order", p.ssd_order);
  out << YAML::EndMap;

  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  e.num("spinup_days", c.dataset.spinup_days);
  e.num("run_days", c.dataset.run_days);
  e.val("subsample", c.dataset.subsample);
  e.val("out_resolution", c.dataset.out_resolution);
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  const TrainConfig& t = c.model.train;
  e.val("d", c.model.d);
  e.val("rollout_len", t.rollout_len);
  e.val("batch_size", t.batch_size);
  e.num("lr", t.lr);
  e.num("weight_decay", t.weight_decay);
  e.val("epochs", t.epochs);
  if (t.stabilize_margin) {
    e.num("stabilize_margin", *t.stabilize_margin);
  } else {
    out << YAML::Key << "stabilize_margin" << YAML::Value << YAML::Null;
  }
  e.num("holdout_fraction", t.holdout_fraction);
  e.num("ridge", t.ridge);
  e.val("threads", t.threads);
  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  const LossWeights& w = c.model.weights;
  e.num("w_pred", w.w_pred);
  e.num("w_latent", w.w_latent);
  e.num("w_phys", w.w_phys);
  e.num("grad_mask_strength", w.grad_mask_strength);
  e.num("repulsion_scale", w.repulsion_scale);
  e.num("repulsion_bandwidth", w.repulsion_bandwidth);
  out << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  e.val("horizon", c.eval.horizon);
  e.val("mode", c.eval.mode);
  e.num("dt_query_hours", c.eval.dt_query_hours);
  e.val("start", c.eval.start);
  e.val("max_lag", c.eval.max_lag);
  e.val("drift_endpoints", c.eval.drift_endpoints);
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

RunConfig from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& ex) {
    throw std::invalid_argument(std::string("config: malformed YAML: ") + ex.what());
  }
  RunConfig c;
  if (!root || root.IsNull()) return c.finalize();
  Section top(root, "<root>");
  top.get("seed", c.seed);

  Section phys(top.child("physics"), "physics");
  QGParams& p = c.physics;
  phys.get("nx", p.nx);
  phys.get("ny", p.ny);
  phys.get("L", p.L);
  phys.get("dt", p.dt);
  phys.get("beta", p.beta);
  phys.get("r_ek", p.r_ek);
  phys.get("U1", p.U1);
  phys.get("U2", p.U2);
  phys.get("H1", p.H1);
  phys.get("H2", p.H2);
  phys.get("delta", p.delta);
  phys.get("kd2", p.kd2);
  phys.get("ssd_cutoff_frac", p.ssd_cutoff_frac);
  phys.get("ssd_strength", p.ssd_strength);
  phys.get("ssd_order", p.ssd_order);
  phys.reject_unknown();
  const double delta_given = p.delta;
  p.derive();
  if (std::abs(delta_given - p.delta) > 1e-12 * p.delta) {
    throw std::invalid_argument("config: physics.delta must equal H1/H2");
  }

  Section ds(top.child("dataset"), "dataset");
  ds.get("spinup_days", c.dataset.spinup_days);
  ds.get("run_days", c.dataset.run_days);
  ds.get("subsample", c.dataset.subsample);
  ds.get("out_resolution", c.dataset.out_resolution);
  ds.reject_unknown();

  Section model(top.child("model"), "model");
  TrainConfig& t = c.model.train;
  model.get("d", c.model.d);
  model.get("rollout_len", t.rollout_len);
  model.get("batch_size", t.batch_size);
  model.get("lr", t.lr);
  model.get("weight_decay", t.weight_decay);
  model.get("epochs", t.epochs);
  model.get_optional("stabilize_margin", t.stabilize_margin);
  model.get("holdout_fraction", t.holdout_fraction);
  model.get("ridge", t.ridge);
  model.get("threads", t.threads);
  Section loss(model.child("loss"), "model.loss");
  LossWeights& w = c.model.weights;
  loss.get("w_pred", w.w_pred);
  loss.get("w_latent", w.w_latent);
  loss.get("w_phys", w.w_phys);
  loss.get("grad_mask_strength", w.grad_mask_strength);
  loss.get("repulsion_scale", w.repulsion_scale);
  loss.get("repulsion_bandwidth", w.repulsion_bandwidth);
  loss.reject_unknown();
  model.reject_unknown();

  Section ev(top.child("eval"), "eval");
  ev.get("horizon", c.eval.horizon);
  ev.get("mode", c.eval.mode);
  ev.get("dt_query_hours", c.eval.dt_query_hours);
  ev.get("start", c.eval.start);
  ev.get("max_lag", c.eval.max_lag);
  ev.get("drift_endpoints", c.eval.drift_endpoints);
  ev.reject_unknown();
  top.reject_unknown();
  return c.finalize();
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_yaml(config);
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace qgk
