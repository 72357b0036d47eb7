// avdml: simulate, monitor, diagnose and report anytime-valid DML runs.
//
// Exit codes: 0 success, 1 runtime or data failure, 2 usage or config failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "avdml/avdml.hpp"
#include "csv_input.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace avdml::cli {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------------------
// Options shared by the stream-running commands.

struct StreamOptions {
  std::string estimand;
  double alpha = 0.05;
  std::optional<int> k_folds;
  std::int64_t burn_in = 250;
  std::optional<double> rho;
  std::optional<double> gamma;
  double epsilon = 0.01;
  double refit_factor = 2.0;
  std::uint64_t seed = 0;
  std::string aggregation = "dml2";
  std::string fold_rule = "round-robin";
  std::string boundary = "mixture";
  std::string regression = "gbt";
  std::string classifier = "logistic";
  int rounds = 200;
  int depth = 2;
  double learning_rate = 0.1;
  int min_leaf = 20;
  double ridge_lambda = 1e-3;
  double logistic_lambda = 1e-4;
};

void add_stream_options(CLI::App* app, StreamOptions& o) {
  app->add_option("--estimand", o.estimand, "ate | late | plr | pate_lower | pate_upper");
  app->add_option("--alpha", o.alpha, "Miscoverage level")->capture_default_str();
  app->add_option("--k-folds", o.k_folds, "Cross-fitting folds");
  app->add_option("--burn-in", o.burn_in, "First peeking time")->capture_default_str();
  app->add_option("--rho", o.rho, "Fixed mixture parameter (default: tuned at the first peek)");
  app->add_option("--gamma", o.gamma, "Sensitivity parameter for the bound estimands");
  app->add_option("--epsilon", o.epsilon, "Propensity clip")->capture_default_str();
  app->add_option("--refit-factor", o.refit_factor, "Geometric refit factor")->capture_default_str();
  app->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app->add_option("--aggregation", o.aggregation, "dml1 | dml2")->capture_default_str();
  app->add_option("--fold-rule", o.fold_rule, "round-robin | random")->capture_default_str();
  app->add_option("--boundary", o.boundary, "mixture | printed-scalar")->capture_default_str();
  app->add_option("--regression", o.regression, "gbt | ridge")->capture_default_str();
  app->add_option("--classifier", o.classifier, "logistic | gbt")->capture_default_str();
  app->add_option("--rounds", o.rounds, "Boosting rounds")->capture_default_str();
  app->add_option("--depth", o.depth, "Tree depth")->capture_default_str();
  app->add_option("--learning-rate", o.learning_rate, "Boosting learning rate")->capture_default_str();
  app->add_option("--min-leaf", o.min_leaf, "Minimum rows per leaf")->capture_default_str();
  app->add_option("--ridge-lambda", o.ridge_lambda, "Ridge penalty")->capture_default_str();
  app->add_option("--logistic-lambda", o.logistic_lambda, "Logistic penalty")->capture_default_str();
}

nuisance::LearnerSpec learner(const std::string& name, const StreamOptions& o, bool classifier) {
  nuisance::LearnerSpec s;
  if (name == "gbt") {
    s = nuisance::LearnerSpec::gbt();
  } else if (name == "ridge" && !classifier) {
    s = nuisance::LearnerSpec::ridge(o.ridge_lambda);
  } else if (name == "logistic" && classifier) {
    s = nuisance::LearnerSpec::logistic(o.logistic_lambda);
  } else {
    throw UsageError("unknown " + std::string(classifier ? "classifier" : "regression") + " learner '" +
                     name + "'");
  }
  s.rounds = o.rounds;
  s.depth = o.depth;
  s.learning_rate = o.learning_rate;
  s.min_leaf = o.min_leaf;
  s.seed = o.seed;
  return s;
}

StreamConfig stream_config(const StreamOptions& o, Estimand estimand, int default_folds) {
  StreamConfig c;
  c.estimand = estimand;
  c.alpha = o.alpha;
  c.k_folds = o.k_folds.value_or(default_folds);
  c.burn_in = o.burn_in;
  c.rho = o.rho;
  c.gamma = o.gamma.value_or(1.0);
  c.epsilon = o.epsilon;
  c.refit_factor = o.refit_factor;
  c.seed = o.seed;
  if (o.aggregation == "dml1") {
    c.aggregation = Aggregation::dml1;
  } else if (o.aggregation == "dml2") {
    c.aggregation = Aggregation::dml2;
  } else {
    throw UsageError("unknown aggregation '" + o.aggregation + "'");
  }
  if (o.fold_rule == "round-robin") {
    c.fold_rule = FoldRule::round_robin;
  } else if (o.fold_rule == "random") {
    c.fold_rule = FoldRule::seeded_random;
  } else {
    throw UsageError("unknown fold rule '" + o.fold_rule + "'");
  }
  if (o.boundary == "mixture") {
    c.boundary = BoundaryForm::robbins_mixture;
  } else if (o.boundary == "printed-scalar") {
    c.boundary = BoundaryForm::printed_scalar;
  } else {
    throw UsageError("unknown boundary '" + o.boundary + "'");
  }
  c.regression = learner(o.regression, o, false);
  c.classifier = learner(o.classifier, o, true);
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  return c;
}

Estimand estimand_or(const StreamOptions& o, Estimand fallback) {
  if (o.estimand.empty()) return fallback;
  auto e = parse_estimand(o.estimand);
  if (!e) throw UsageError("unknown estimand '" + o.estimand + "'");
  return *e;
}

json config_json(const StreamConfig& c) {
  json j;
  j["estimand"] = to_string(c.estimand);
  j["alpha"] = c.alpha;
  j["k_folds"] = c.k_folds;
  j["burn_in"] = c.burn_in;
  j["rho"] = c.rho ? json(*c.rho) : json("tuned");
  j["gamma"] = c.gamma;
  j["epsilon"] = c.epsilon;
  j["refit_factor"] = c.refit_factor;
  j["seed"] = c.seed;
  j["aggregation"] = c.aggregation == Aggregation::dml1 ? "dml1" : "dml2";
  return j;
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void write_log(const fs::path& p, const std::vector<CsPoint>& log) {
  auto os = open_out(p);
  for (const auto& pt : log) write_ndjson(os, pt);
}

void write_dataset(const fs::path& p, const std::vector<Observation>& data) {
  auto os = open_out(p);
  const bool has_z = !data.empty() && data.front().z.has_value();
  const std::size_t d = data.empty() ? 0 : data.front().x.size();
  os << "y,a";
  if (has_z) os << ",z";
  for (std::size_t j = 1; j <= d; ++j) os << ",x" << j;
  os << "\n";
  for (const auto& o : data) {
    os << exact(o.y) << "," << o.a;
    if (has_z) os << "," << o.z.value_or(0);
    for (double v : o.x) os << "," << exact(v);
    os << "\n";
  }
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  StreamOptions stream;
  std::string dgp;
  std::string out = "results";
  int reps = 200;
  std::optional<std::int64_t> n_max;
  std::int64_t peek_every = 250;
  unsigned threads = 0;
  std::optional<int> d;
  double theta = 3.0;
  double alpha_z = 2.0;
  double p_instrument = 0.4;
  double tau = -0.5;
  double gamma_data = std::exp(0.6);
  std::string write_data;
  bool data_only = false;
};

int cmd_simulate(const SimulateOptions& o) {
  if (o.dgp != "late" && o.dgp != "partial-id") throw UsageError("--dgp must be late or partial-id");
  const bool late = o.dgp == "late";
  const std::int64_t n_max = o.n_max.value_or(late ? 5000 : 10000);
  if (n_max < 1) throw UsageError("--n-max must be positive");
  if (o.peek_every < 1) throw UsageError("--peek-every must be positive");
  if (o.reps < 1) throw UsageError("--reps must be positive");

  sim::LateDgpParams late_params;
  sim::PartialIdDgpParams pid_params;
  try {
    if (late) {
      late_params = sim::LateDgpParams::draw(o.stream.seed, o.d.value_or(2));
      late_params.theta = o.theta;
      late_params.alpha_z = o.alpha_z;
      late_params.p_instrument = o.p_instrument;
      if (o.write_data.empty() || !o.data_only) late_params.validate();
    } else {
      pid_params = sim::PartialIdDgpParams::draw(o.stream.seed, o.d.value_or(4));
      pid_params.tau = o.tau;
      pid_params.gamma_data = o.gamma_data;
      pid_params.validate();
    }
  } catch (const DgpError& e) {
    throw UsageError(e.what());
  }

  const fs::path out = prepare_out(o.out);
  const std::uint64_t data_seed = avdml::detail::derive_seed(o.stream.seed, 1);
  if (!o.write_data.empty()) {
    if (late) {
      write_dataset(o.write_data, sim::gen_late(n_max, late_params, data_seed, false).observations);
    } else {
      write_dataset(o.write_data, sim::gen_partial_id(n_max, pid_params, data_seed).observations);
    }
  }
  if (o.data_only) {
    if (o.write_data.empty()) throw UsageError("--data-only needs --write-data");
    return 0;
  }

  json experiment;
  experiment["dgp"] = o.dgp;
  experiment["n_max"] = n_max;
  experiment["peek_every"] = o.peek_every;

  const Estimand fallback = late ? Estimand::late : Estimand::pate_lower;
  const Estimand estimand = estimand_or(o.stream, fallback);
  const bool band = !late && estimand != Estimand::ate;
  if (late && estimand != Estimand::late) throw UsageError("the late DGP pairs with --estimand late");
  if (band && estimand != Estimand::pate_lower && estimand != Estimand::pate_upper) {
    throw UsageError("the partial-id DGP pairs with --estimand ate or a pate bound");
  }

  if (band) {
    StreamOptions so = o.stream;
    if (!so.gamma) so.gamma = o.gamma_data;
    sim::BandConfig cfg;
    cfg.n_max = n_max;
    cfg.peek_every = o.peek_every;
    cfg.seed = data_seed;
    cfg.stream = stream_config(so, Estimand::pate_lower, 4);
    cfg.partial_id = pid_params;
    experiment["tau"] = pid_params.tau;
    experiment["gamma_data"] = pid_params.gamma_data;
    experiment["mu"] = vector_json(pid_params.mu);
    experiment["beta"] = vector_json(pid_params.beta);
    experiment["stream"] = config_json(cfg.stream);

    const sim::BandResult r = sim::run_band(cfg);
    auto os = open_out(out / "band.csv");
    os << "n,lower_band,upper_band,lower_band_int,upper_band_int,batch_lower_band,batch_upper_band,"
          "aipw_lower,aipw_upper\n";
    for (const auto& row : r.rows) {
      os << row.n << "," << num(row.lower_band) << "," << num(row.upper_band) << ","
         << num(row.lower_band_int) << "," << num(row.upper_band_int) << ","
         << num(row.batch_lower_band) << "," << num(row.batch_upper_band) << ","
         << num(row.aipw_lower) << "," << num(row.aipw_upper) << "\n";
    }
    fs::create_directories(out / "runs");
    write_log(out / "runs" / "lower.ndjson", r.lower_log);
    write_log(out / "runs" / "upper.ndjson", r.upper_log);
    write_log(out / "runs" / "aipw.ndjson", r.aipw_log);
    experiment["peeks"] = r.rows.size();
    experiment["band_covers_tau"] = r.covered_all;
    if (!r.rows.empty()) {
      experiment["final_band"] = {r.rows.back().lower_band, r.rows.back().upper_band};
    }
  } else {
    sim::CoverageConfig cfg;
    cfg.dgp = late ? sim::Dgp::late : sim::Dgp::partial_id;
    cfg.reps = o.reps;
    cfg.n_max = n_max;
    cfg.peek_every = o.peek_every;
    cfg.seed = o.stream.seed;
    cfg.threads = o.threads;
    cfg.stream = stream_config(o.stream, estimand, 4);
    cfg.late = late_params;
    cfg.partial_id = pid_params;
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (late) {
      experiment["theta"] = late_params.theta;
      experiment["alpha_z"] = late_params.alpha_z;
      experiment["p_instrument"] = late_params.p_instrument;
      experiment["beta"] = vector_json(late_params.beta);
    } else {
      experiment["tau"] = pid_params.tau;
      experiment["gamma_data"] = pid_params.gamma_data;
      experiment["mu"] = vector_json(pid_params.mu);
      experiment["beta"] = vector_json(pid_params.beta);
    }
    experiment["reps"] = o.reps;
    experiment["stream"] = config_json(cfg.stream);

    const sim::CoverageResult r = sim::run_coverage(cfg);
    {
      auto os = open_out(out / "results.csv");
      os << "method,rep,n,cum_miscoverage,mean_width\n";
      for (const char* method : {"asympcs", "batch"}) {
        const bool asymp = std::string(method) == "asympcs";
        for (std::size_t rep = 0; rep < r.reps.size(); ++rep) {
          const auto& rr = r.reps[rep];
          for (std::size_t g = 0; g < r.grid.size(); ++g) {
            os << method << "," << rep << "," << r.grid[g] << ","
               << int(asymp ? rr.asymp_missed[g] : rr.batch_missed[g]) << ","
               << num(asymp ? rr.asymp_width[g] : rr.batch_width[g]) << "\n";
          }
        }
      }
    }
    {
      auto os = open_out(out / "summary.csv");
      os << "method,n,cum_miscoverage,mean_width\n";
      for (const auto& c : r.curve) {
        os << "asympcs," << c.n << "," << num(c.asymp_miscoverage) << "," << num(c.asymp_mean_width) << "\n";
      }
      for (const auto& c : r.curve) {
        os << "batch," << c.n << "," << num(c.batch_miscoverage) << "," << num(c.batch_mean_width) << "\n";
      }
    }
    fs::create_directories(out / "runs");
    bool all_nested = true;
    for (std::size_t rep = 0; rep < r.reps.size(); ++rep) {
      char name[32];
      std::snprintf(name, sizeof name, "rep_%04zu.ndjson", rep);
      write_log(out / "runs" / name, r.reps[rep].log);
      all_nested = all_nested && r.reps[rep].nested;
    }
    if (!r.curve.empty()) {
      experiment["final_asympcs_miscoverage"] = r.curve.back().asymp_miscoverage;
      experiment["final_batch_miscoverage"] = r.curve.back().batch_miscoverage;
    }
    experiment["all_nested"] = all_nested;
  }

  auto os = open_out(out / "experiment.json");
  os << experiment.dump(2) << "\n";
  std::cout << experiment.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// monitor / diagnose

struct MonitorOptions {
  StreamOptions stream;
  std::string input;
  std::int64_t peek_every = 50;
  std::string stop_rule = "none";
  double stop_width = 0.0;
};

struct InputStream {
  std::ifstream file;
  std::istream* in = nullptr;
};

void open_input(InputStream& s, const std::string& path) {
  if (path.empty()) throw UsageError("an input CSV is required");
  if (path == "-") {
    s.in = &std::cin;
    return;
  }
  s.file.open(path);
  if (!s.file) throw UsageError("cannot open input " + path);
  s.in = &s.file;
}

std::optional<StopRule> parse_stop_rule(const std::string& name, double width) {
  if (name == "none") return std::nullopt;
  if (name == "excludes-zero") return StopRule::excludes_zero();
  if (name == "sign-determined") return StopRule::sign_determined();
  if (name == "width-below") {
    if (!(width > 0.0)) throw UsageError("width-below needs a positive --stop-width");
    return StopRule::width_below(width);
  }
  throw UsageError("unknown stop rule '" + name + "'");
}

StreamConfig checked_stream(const StreamOptions& so, const CsvSchema& schema) {
  const Estimand e = estimand_or(so, Estimand::ate);
  if (needs_instrument(e) && !schema.has_z) {
    throw UsageError("estimand " + to_string(e) + " requires a z column");
  }
  return stream_config(so, e, 5);
}

int cmd_monitor(const MonitorOptions& o) {
  if (o.peek_every < 1) throw UsageError("--peek-every must be positive");
  InputStream input;
  open_input(input, o.input);
  CsvReader reader(*input.in);
  StreamConfig cfg = checked_stream(o.stream, reader.schema());
  cfg.stop_rule = parse_stop_rule(o.stop_rule, o.stop_width);
  Stream stream(cfg);

  std::optional<std::int64_t> stop_n;
  std::string stop_reason;
  std::string not_ready;
  auto peek = [&] {
    const auto p = stream.try_peek();
    if (!p) {
      not_ready = stream.size() < cfg.burn_in ? "burn-in not reached" : "folds lack a required arm";
      return;
    }
    write_ndjson(std::cout, *p);
    if (p->stopped && !stop_n) {
      stop_n = p->n;
      stop_reason = check_stop(*p, *cfg.stop_rule).reason;
    }
  };
  while (auto obs = reader.next()) {
    stream.push(std::move(*obs));
    const std::int64_t n = stream.size();
    if (n >= cfg.burn_in && n % o.peek_every == 0) peek();
  }
  if (stream.size() >= cfg.burn_in && (stream.log().empty() || stream.log().back().n != stream.size())) {
    peek();
  }

  json s;
  s["status"] = stream.log().empty() ? "not_ready" : "ok";
  s["n"] = stream.size();
  s["peeks"] = stream.log().size();
  if (stream.log().empty()) {
    s["reason"] = stream.size() < cfg.burn_in ? "burn-in not reached" : not_ready;
  } else {
    const CsPoint& last = stream.log().back();
    s["estimate"] = last.theta_hat;
    s["lower_int"] = last.lower_int;
    s["upper_int"] = last.upper_int;
    s["rho"] = *stream.rho();
  }
  s["stop_rule"] = o.stop_rule;
  s["stopped"] = stop_n.has_value();
  s["stop_n"] = stop_n ? json(*stop_n) : json(nullptr);
  if (stop_n) s["stop_reason"] = stop_reason;
  s["post_stop"] = stream.post_stop_count();
  json line;
  line["summary"] = s;
  std::cout << line.dump() << "\n";
  return 0;
}

struct DiagnoseOptions {
  StreamOptions stream;
  std::string input;
  std::int64_t peek_every = 250;
  double c0 = 0.1;
  double c1 = 100.0;
};

json gateaux_report(const Stream& stream, double theta) {
  const auto& obs = stream.observations();
  const auto& evals = stream.evaluations();
  std::vector<WeightedObservation> dgp;
  dgp.reserve(obs.size());
  const double w = 1.0 / static_cast<double>(obs.size());
  for (const auto& o : obs) dgp.push_back({w, o});
  std::unordered_map<const Observation*, std::size_t> index;
  for (std::size_t i = 0; i < dgp.size(); ++i) index[&dgp[i].obs] = i;
  const NuisanceMap eta0 = [&](const Observation& o) { return evals[index.at(&o)]; };
  const StreamConfig& cfg = stream.config();
  const ScoreFn score = score_function(cfg.estimand, cfg.gamma);

  json out = json::object();
  for (const auto& field : score_coordinates(cfg.estimand)) {
    const NuisanceEval dir = unit_direction(field);
    const NuisanceMap direction = [dir](const Observation&) { return dir; };
    try {
      out[field] = gateaux_orthogonality_check(score, dgp, eta0, direction, theta);
    } catch (const Error&) {
      out[field] = nullptr;  // a step leaves the nuisance's admissible range
    }
  }
  return out;
}

int cmd_diagnose(const DiagnoseOptions& o) {
  if (o.peek_every < 1) throw UsageError("--peek-every must be positive");
  if (!(o.c0 > 0.0 && o.c1 >= o.c0)) throw UsageError("need 0 < c0 <= c1");
  InputStream input;
  open_input(input, o.input);
  CsvReader reader(*input.in);
  StreamConfig cfg = checked_stream(o.stream, reader.schema());
  Stream stream(cfg);

  std::size_t treated = 0, control = 0, z1 = 0, z0 = 0;
  std::string failure;
  auto peek = [&] {
    try {
      stream.peek();
      failure.clear();
    } catch (const NotReadyError& e) {
      failure = std::string("not ready: ") + e.what();
    } catch (const IdentificationError& e) {
      failure = std::string("identification: ") + e.what();
    }
  };
  while (auto obs = reader.next()) {
    (obs->a == 1 ? treated : control)++;
    if (obs->z) (*obs->z == 1 ? z1 : z0)++;
    stream.push(std::move(*obs));
    const std::int64_t n = stream.size();
    if (n >= cfg.burn_in && n % o.peek_every == 0) peek();
  }
  if (stream.size() < cfg.burn_in) {
    failure = "not ready: burn-in not reached";
  } else if (stream.log().empty() || stream.log().back().n != stream.size()) {
    peek();
  }

  json r;
  r["estimand"] = to_string(cfg.estimand);
  r["n"] = stream.size();
  r["arms"] = {{"treated", treated}, {"control", control}};
  if (reader.schema().has_z) r["instrument"] = {{"z1", z1}, {"z0", z0}};

  json id;
  id["c0"] = o.c0;
  id["c1"] = o.c1;
  bool pass = false;
  if (failure.empty() && stream.last_fit()) {
    const IdentificationReport rep = identification_diagnostics(*stream.last_fit(), o.c0, o.c1);
    id["jacobian_min_singular"] = rep.jacobian_min_singular;
    id["jacobian_max_singular"] = rep.jacobian_max_singular;
    id["score_min_eigenvalue"] = rep.score_min_eigenvalue;
    id["jacobian_ok"] = rep.jacobian_ok;
    id["nondegenerate_ok"] = rep.nondegenerate_ok;
    pass = rep.pass();
    if (!rep.jacobian_ok) failure = "jacobian singular values outside [c0, c1]";
    else if (!rep.nondegenerate_ok) failure = "score second moment below c0";
  }
  if (treated == 0 || control == 0) {
    pass = false;
    failure = "degenerate treatment: one arm is empty, propensity is 0 or 1";
  }
  id["pass"] = pass;
  if (!pass) id["reason"] = failure;
  r["identification"] = id;

  if (stream.last_fit()) {
    const CsPoint& last = stream.log().back();
    r["estimate"] = last.theta_hat;
    r["sigma"] = last.sigma_hat;
    r["interval"] = {last.lower, last.upper};
    r["interval_int"] = {last.lower_int, last.upper_int};
    r["gateaux"] = gateaux_report(stream, last.theta_hat);
  }
  json refits = json::array();
  for (const auto& rec : stream.refits()) {
    json e;
    e["n"] = rec.n;
    json h = json::object();
    for (const auto& [role, err] : rec.holdout_error) h[role] = number_or_null(err);
    e["holdout_error"] = h;
    refits.push_back(e);
  }
  r["refits"] = refits;
  r["clip_count"] = stream.clip_count();
  r["out_of_fold"] = stream.verify_out_of_fold();
  std::cout << r.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::string input;
  std::string out = "results";
};

int cmd_report(const ReportOptions& o) {
  if (o.input.empty()) throw UsageError("an input NDJSON log is required");
  std::ifstream in(o.input);
  if (!in) throw UsageError("cannot open input " + o.input);
  std::vector<CsPoint> log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw RowError("line " + std::to_string(line_no) + ": not valid JSON");
    }
    if (j.contains("summary")) continue;
    try {
      CsPoint p;
      p.n = j.at("n").get<std::int64_t>();
      p.theta_hat = j.at("estimate").get<double>();
      p.sigma_hat = j.at("sigma").get<double>();
      p.lower = j.at("lower").get<double>();
      p.upper = j.at("upper").get<double>();
      p.lower_int = j.at("lower_int").get<double>();
      p.upper_int = j.at("upper_int").get<double>();
      p.stopped = j.at("stopped").get<bool>();
      p.empty_int = p.lower_int > p.upper_int;
      log.push_back(p);
    } catch (const json::exception&) {
      throw RowError("line " + std::to_string(line_no) + ": missing or mistyped peek fields");
    }
  }

  const fs::path out = prepare_out(o.out);
  auto os = open_out(out / "report.csv");
  os << "n,estimate,sigma,lower,upper,lower_int,upper_int,width,width_int,stopped\n";
  for (const auto& p : log) {
    os << p.n << "," << num(p.theta_hat) << "," << num(p.sigma_hat) << "," << num(p.lower) << ","
       << num(p.upper) << "," << num(p.lower_int) << "," << num(p.upper_int) << ","
       << num(p.upper - p.lower) << "," << num(std::max(0.0, p.upper_int - p.lower_int)) << ","
       << (p.stopped ? 1 : 0) << "\n";
  }

  json s;
  s["records"] = log.size();
  if (!log.empty()) {
    s["first_n"] = log.front().n;
    s["last_n"] = log.back().n;
    s["final"] = {{"estimate", log.back().theta_hat},
                  {"lower_int", log.back().lower_int},
                  {"upper_int", log.back().upper_int}};
    std::optional<std::int64_t> stop;
    for (const auto& p : log) {
      if (p.stopped) {
        stop = p.n;
        break;
      }
    }
    s["first_stop_n"] = stop ? json(*stop) : json(nullptr);
  }
  s["nested"] = sim::nested(log);
  std::cout << s.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Flat config files: `key = value` lines, '#' comments. Keys are option
// names without the leading dashes. File entries are placed before the
// command-line arguments so that flags win.

std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(trim(body.substr(0, eq)));
    for (char& c : key) {
      if (c == '_') c = '-';
    }
    std::string value(trim(body.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw UsageError(path + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(key, value);
  }
  return out;
}

std::optional<std::string> find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

std::vector<std::string> config_args(CLI::App* sub, const std::string& path) {
  std::vector<std::string> out;
  for (const auto& [key, value] : read_config(path)) {
    if (key == "config") throw UsageError("config files cannot include other configs");
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw UsageError("unknown config key '" + key + "' for " + sub->get_name());
    if (key == "out" && std::getenv("AVDML_OUT_DIR") != nullptr) continue;  // env outranks the file
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1") {
        out.push_back("--" + key);
      } else if (value != "false" && value != "0") {
        throw UsageError("config key '" + key + "' expects true or false");
      }
      continue;
    }
    out.push_back("--" + key);
    out.push_back(value);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Streaming confidence sequences for cross-fitted causal estimates"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  SimulateOptions sim_o;
  auto* simulate = app.add_subcommand("simulate", "Run a coverage experiment or a partial-identification band");
  add_stream_options(simulate, sim_o.stream);
  simulate->add_option("--dgp", sim_o.dgp, "late | partial-id");
  simulate->add_option("--out", sim_o.out, "Output directory")->envname("AVDML_OUT_DIR")->capture_default_str();
  simulate->add_option("--reps", sim_o.reps, "Repetitions")->capture_default_str();
  simulate->add_option("--n-max", sim_o.n_max, "Largest sample size (late: 5000, partial-id: 10000)");
  simulate->add_option("--peek-every", sim_o.peek_every, "Peek grid spacing")->capture_default_str();
  simulate->add_option("--threads", sim_o.threads, "Worker threads (0: all cores)");
  simulate->add_option("--d", sim_o.d, "Covariate dimension (late: 2, partial-id: 4)");
  simulate->add_option("--theta", sim_o.theta, "LATE effect size")->capture_default_str();
  simulate->add_option("--alpha-z", sim_o.alpha_z, "Instrument strength")->capture_default_str();
  simulate->add_option("--p-instrument", sim_o.p_instrument, "P(Z = 1)")->capture_default_str();
  simulate->add_option("--tau", sim_o.tau, "Partial-id treatment effect")->capture_default_str();
  simulate->add_option("--gamma-data", sim_o.gamma_data, "Confounding strength of the partial-id DGP");
  simulate->add_option("--write-data", sim_o.write_data, "Also write one generated dataset to this CSV");
  simulate->add_flag("--data-only", sim_o.data_only, "Only write the dataset");
  simulate->add_option("--config", config_path, "Flat key = value config file");

  MonitorOptions mon_o;
  auto* monitor = app.add_subcommand("monitor", "Stream a CSV and print one NDJSON record per peek");
  add_stream_options(monitor, mon_o.stream);
  monitor->add_option("input,--input", mon_o.input, "CSV with columns y,a[,z],x1..xd ('-' for stdin)");
  monitor->add_option("--peek-every", mon_o.peek_every, "Peek cadence")->capture_default_str();
  monitor->add_option("--stop-rule", mon_o.stop_rule, "none | excludes-zero | width-below | sign-determined")
      ->capture_default_str();
  monitor->add_option("--stop-width", mon_o.stop_width, "Threshold for width-below");
  monitor->add_option("--config", config_path, "Flat key = value config file");

  DiagnoseOptions diag_o;
  auto* diagnose = app.add_subcommand("diagnose", "Identification and nuisance diagnostics for a CSV");
  add_stream_options(diagnose, diag_o.stream);
  diagnose->add_option("input,--input", diag_o.input, "CSV with columns y,a[,z],x1..xd ('-' for stdin)");
  diagnose->add_option("--peek-every", diag_o.peek_every, "Peek cadence")->capture_default_str();
  diagnose->add_option("--c0", diag_o.c0, "Lower identification constant")->capture_default_str();
  diagnose->add_option("--c1", diag_o.c1, "Upper identification constant")->capture_default_str();
  diagnose->add_option("--config", config_path, "Flat key = value config file");

  ReportOptions rep_o;
  auto* report = app.add_subcommand("report", "Summarize an NDJSON peek log into a plot-ready CSV");
  report->add_option("input,--input", rep_o.input, "NDJSON peek log");
  report->add_option("--out", rep_o.out, "Output directory")->envname("AVDML_OUT_DIR")->capture_default_str();
  report->add_option("--config", config_path, "Flat key = value config file");

  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty()) {
    CLI::App* sub = nullptr;
    for (auto* s : {simulate, monitor, diagnose, report}) {
      if (s->get_name() == args[0]) sub = s;
    }
    if (sub != nullptr) {
      if (auto path = find_config_arg(args)) {
        auto injected = config_args(sub, *path);
        args.insert(args.begin() + 1, injected.begin(), injected.end());
      }
    }
  }
  std::reverse(args.begin(), args.end());  // CLI11 consumes the vector from the back
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "avdml: " << e.what() << "\n";
    return 2;
  }

  if (simulate->parsed()) {
    if (sim_o.dgp.empty()) throw UsageError("--dgp is required");
    return cmd_simulate(sim_o);
  }
  if (monitor->parsed()) return cmd_monitor(mon_o);
  if (diagnose->parsed()) return cmd_diagnose(diag_o);
  return cmd_report(rep_o);
}

}  // namespace
}  // namespace avdml::cli

int main(int argc, char** argv) {
  using namespace avdml;
  try {
    return cli::run(argc, argv);
  } catch (const cli::UsageError& e) {
    std::cerr << "avdml: " << e.what() << "\n";
    return 2;
  } catch (const cli::SchemaError& e) {
    std::cerr << "avdml: " << e.what() << "\n";
    return 2;
  } catch (const cli::RowError& e) {
    std::cerr << "avdml: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "avdml: " << e.what() << "\n";
    return 1;
  }
}
