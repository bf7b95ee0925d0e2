#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "transport/transport.hpp"

namespace {

using namespace transport;

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open spec file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& ex) {
    throw DataError("spec file " + path + ": " + ex.what());
  }
}

double z_for(double level) {
  if (!(level > 0.0 && level < 1.0)) throw DataError("confidence level must lie strictly in (0,1)");
  return level == 0.95 ? kZ95 : norm_quantile(0.5 + level / 2.0);
}

void set_level(EstimateReport& rep, double level) {
  rep.level = level;
  if (!rep.se_available || level == 0.95) return;
  const double z = z_for(level);
  rep.ci_lo = rep.psi_hat - z * rep.se;
  rep.ci_hi = rep.psi_hat + z * rep.se;
}

void set_level(RatioEstimate& rep, double level) {
  rep.level = level;
  if (!rep.se_available || level == 0.95) return;
  const double z = z_for(level);
  rep.ci_lo = std::exp(std::log(rep.psi_hat) - z * rep.se_log);
  rep.ci_hi = std::exp(std::log(rep.psi_hat) + z * rep.se_log);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

void emit_diagnostics(const StudyDataset& d, const Diagnostics& diag) {
  for (const std::string& w : d.warnings) std::cerr << "note: " << w << "\n";
  for (const std::string& n : diag.notes) std::cerr << "note: " << n << "\n";
  if (diag.clipped_pi > 0) std::cerr << "note: " << diag.clipped_pi << " selection scores clipped\n";
  if (diag.zero_support_rows > 0)
    std::cerr << "note: " << diag.zero_support_rows << " source rows outside the support rule\n";
  if (diag.weight_capped > 0) std::cerr << "note: " << diag.weight_capped << " trial weights capped\n";
  std::cerr << "note: estimating-equation residual " << diag.ee_residual << "\n";
}

struct EstimateOpts {
  std::string input;
  std::string spec_path;
  std::string weights = "optimal";
  std::string out;
  double ci = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  bool literal = false;
};

EstimateSpec spec_for(const StudyDataset& d, const EstimateOpts& opts) {
  EstimateSpec spec = opts.spec_path.empty() ? default_estimate_spec(d)
                                             : parse_estimate_spec(load_json_file(opts.spec_path), d);
  spec.weights = parse_weights(opts.weights);
  return spec;
}

int run_estimate(const EstimateOpts& opts, Mode mode) {
  const StudyDataset d = load_csv(opts.input, mode);
  const EstimateSpec spec = spec_for(d, opts);
  const NuisanceSet nu = fit_estimate_spec(d, spec);
  nlohmann::json j;
  char line[256];
  if (mode == Mode::difference) {
    EstimateReport rep = eif_ate(d, nu, spec.weights);
    set_level(rep, opts.ci);
    emit_diagnostics(d, rep.diag);
    j = to_json(rep);
    std::snprintf(line, sizeof(line), "ate %.6f  se %.6f  ci%.0f [%.6f, %.6f]  n %lld  trials %d\n", rep.psi_hat,
                  rep.se, 100.0 * opts.ci, rep.ci_lo, rep.ci_hi, static_cast<long long>(d.n()), d.m);
  } else {
    RatioEstimate rep = cmr_estimate(d, nu, spec.weights, opts.literal);
    set_level(rep, opts.ci);
    emit_diagnostics(d, rep.diag);
    j = to_json(rep);
    std::snprintf(line, sizeof(line), "cmr %.6f  se %.6f  ci%.0f [%.6f, %.6f]  n %lld  trials %d\n", rep.psi_hat,
                  rep.se, 100.0 * opts.ci, rep.ci_lo, rep.ci_hi, static_cast<long long>(d.n()), d.m);
  }
  const std::string out = opts.out.empty() ? "report.json" : opts.out;
  write_text_file(out, j.dump(2) + "\n");
  std::cout << line;
  return 0;
}

int run_drlearner(const EstimateOpts& opts) {
  const StudyDataset d = load_csv(opts.input, Mode::difference);
  const EstimateSpec spec = spec_for(d, opts);
  const NuisanceSet nu = fit_estimate_spec(d, spec);
  const PseudoOutcomes pseudo = drlearner_pseudo(d, nu);
  const DrLearnerFit fit = drlearner_fit(pseudo, d, spec.dr_basis);
  for (const std::string& w : d.warnings) std::cerr << "note: " << w << "\n";
  nlohmann::json j = to_json(fit);
  std::vector<std::string> names;
  if (spec.dr_basis.intercept) names.push_back("(intercept)");
  for (Eigen::Index c : spec.dr_basis.covs) names.push_back(d.xnames[static_cast<size_t>(c)]);
  j["terms"] = names;
  const std::string out = opts.out.empty() ? "drlearner.json" : opts.out;
  write_text_file(out, j.dump(2) + "\n");
  std::cout << "drlearner";
  for (size_t k = 0; k < names.size(); ++k) {
    char cell[96];
    std::snprintf(cell, sizeof(cell), "  %s %.6f", names[k].c_str(), fit.coef[static_cast<Eigen::Index>(k)]);
    std::cout << cell;
  }
  std::cout << "\n";
  return 0;
}

struct SimulateOpts {
  std::string preset;
  std::string spec_path;
  std::string out = "tables";
  int reps = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<long long> sizes;
};

int run_simulate(const SimulateOpts& opts) {
  SimulationPlan plan;
  if (!opts.spec_path.empty()) {
    plan = parse_sim_spec(load_json_file(opts.spec_path), opts.reps, opts.seed, opts.threads);
  } else if (!opts.preset.empty()) {
    std::vector<Eigen::Index> sizes;
    for (long long n : opts.sizes) sizes.push_back(static_cast<Eigen::Index>(n));
    if (sizes.empty()) sizes = {1250, 5000};
    plan = preset_plan(opts.preset, opts.reps, opts.seed, opts.threads, sizes);
  } else {
    throw DataError("simulate: --preset or --spec required");
  }
  const std::vector<SummaryRow> rows = run_plan(plan);
  int failures = 0;
  for (const SummaryRow& r : rows) failures += r.failures;
  if (failures > 0) std::cerr << "note: " << failures << " replications failed and were excluded\n";
  const std::string text = emit_table_text(rows, plan.layout);
  write_text_file(opts.out + ".csv", emit_table_csv(rows));
  write_text_file(opts.out + ".txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-trial treatment effect transport"};
  app.require_subcommand(1);

  EstimateOpts est;
  SimulateOpts sim;

  auto add_estimate_flags = [&](CLI::App* cmd) {
    cmd->add_option("--input", est.input, "input CSV")->required();
    cmd->add_option("--spec", est.spec_path, "model spec JSON");
    cmd->add_option("--weights", est.weights, "optimal | constant | custom:<l1>,<l0>");
    cmd->add_option("--ci", est.ci, "confidence level");
    cmd->add_option("--seed", est.seed, "random seed (accepted for interface stability)");
    cmd->add_option("--threads", est.threads, "thread count (single-dataset estimation is serial)");
    cmd->add_option("--out", est.out, "report JSON path");
  };

  CLI::App* ate = app.add_subcommand("estimate-ate", "difference-effect estimate from a CSV");
  add_estimate_flags(ate);
  CLI::App* cmr = app.add_subcommand("estimate-cmr", "mean-ratio estimate from a CSV");
  add_estimate_flags(cmr);
  cmr->add_flag("--literal-correction", est.literal, "scale the one-step correction by 1/log of the initial numerator");
  CLI::App* drl = app.add_subcommand("drlearner", "effect-surface regression from pseudo-outcomes");
  add_estimate_flags(drl);

  CLI::App* simc = app.add_subcommand("simulate", "run a replication grid and emit tables");
  simc->add_option("--preset", sim.preset, "table1 | table2 | table3");
  simc->add_option("--spec", sim.spec_path, "simulation spec JSON");
  simc->add_option("--reps", sim.reps, "replications per cell");
  simc->add_option("--seed", sim.seed, "random seed");
  simc->add_option("--threads", sim.threads, "worker threads over replications");
  simc->add_option("--n", sim.sizes, "sample sizes (repeatable; default 1250 5000)");
  simc->add_option("--out", sim.out, "output path prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ate->parsed()) return run_estimate(est, transport::Mode::difference);
    if (cmr->parsed()) return run_estimate(est, transport::Mode::ratio);
    if (drl->parsed()) return run_drlearner(est);
    return run_simulate(sim);
  } catch (const transport::DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return 2;
  } catch (const transport::NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  }
}
