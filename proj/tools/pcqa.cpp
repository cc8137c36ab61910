#include <atomic>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcqa/pcqa.hpp"

namespace {

struct MetricFlags {
  int k3 = 20;
  int k4 = 5;
  int kn = 20;
  bool no_sampling = false;
  double prescale = 1.0;
  int threads = 0;  // 0 = all hardware threads

  pcqa::MetricConfig config() const {
    pcqa::MetricConfig c;
    c.k3 = k3;
    c.k4 = k4;
    c.k_n = kn;
    c.sampling_enabled = !no_sampling;
    return c;
  }
};

void add_metric_flags(CLI::App* cmd, MetricFlags& mf) {
  cmd->add_option("--k3", mf.k3, "Neighborhood size for the lightness variance score")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--k4", mf.k4, "Neighborhood size for the graph variation score")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--kn", mf.kn, "Neighborhood size for normal estimation")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--no-sampling", mf.no_sampling,
                "Compute S3/S4 on the full distorted cloud instead of the correspondence sample");
  cmd->add_option("--prescale", mf.prescale,
                  "Uniform scale applied to all coordinates on load (for non-voxelized data)");
}

pcqa::PointCloud load_cloud(const std::string& path, double prescale) {
  pcqa::PointCloud pc = pcqa::load_ply(path);
  if (prescale != 1.0)
    for (pcqa::Vec3& p : pc.positions) p = prescale * p;
  return pc;
}

std::array<double, 5> feature_row(const pcqa::FeatureVector& fv) {
  return {fv.s1, fv.s2, fv.s3, fv.s4, fv.s5};
}

nlohmann::json timing_json(const pcqa::StageTiming& t) {
  return {{"lightness", t.lightness},   {"index_build", t.index_build},
          {"correspondence", t.correspondence}, {"graph_ref", t.graph_ref},
          {"normals", t.normals},       {"sampling", t.sampling},
          {"s1", t.s1},                 {"s2", t.s2},
          {"s3", t.s3},                 {"s4", t.s4},
          {"s5", t.s5},                 {"total", t.total}};
}

int run_score(const std::string& ref_path, const std::string& dist_path,
              const std::string& model_path, const MetricFlags& mf, bool as_json, bool timing) {
  const pcqa::PointCloud ref = load_cloud(ref_path, mf.prescale);
  const pcqa::PointCloud dist = load_cloud(dist_path, mf.prescale);
  pcqa::StageTiming stage;
  const pcqa::FeatureVector fv =
      pcqa::compute_features(ref, dist, mf.config(), mf.threads, &stage);

  std::optional<double> pred;
  if (!model_path.empty()) {
    const pcqa::SvrModel model = pcqa::load_svr_model(model_path);
    pred = model.predict(feature_row(fv));
  }

  if (as_json) {
    nlohmann::json j{{"ref", ref_path},          {"dist", dist_path},
                     {"s1", fv.s1},              {"s2", fv.s2},
                     {"s3", fv.s3},              {"s4", fv.s4},
                     {"s5", fv.s5},              {"e_p2point", fv.e_p2point},
                     {"e_p2plane", fv.e_p2plane},{"e_bvar", fv.e_bvar},
                     {"e_gvar", fv.e_gvar}};
    if (pred) j["pred"] = *pred;
    if (timing) j["timing"] = timing_json(stage);
    std::cout << j.dump(1) << "\n";
  } else {
    std::string line = pcqa::format_double(fv.s1) + "," + pcqa::format_double(fv.s2) + "," +
                       pcqa::format_double(fv.s3) + "," + pcqa::format_double(fv.s4) + "," +
                       pcqa::format_double(fv.s5);
    if (pred) line += "," + pcqa::format_double(*pred);
    std::cout << line << "\n";
    if (timing) std::cerr << "total " << stage.total << " s (index " << stage.index_build
                          << ", normals " << stage.normals << ", sampling " << stage.sampling << ")\n";
  }
  return 0;
}

int run_batch(const std::string& manifest_path, const std::string& out_path, int jobs,
              const MetricFlags& mf, bool timing) {
  const pcqa::CsvTable manifest = pcqa::read_csv_file(manifest_path);
  const int c_ref = manifest.require_column("ref_path");
  const int c_dist = manifest.require_column("dist_path");
  const int c_mos = manifest.column("mos");
  const std::size_t n = manifest.rows.size();

  if (jobs < 1) jobs = 1;
  const int pair_threads = jobs > 1 ? 1 : mf.threads;

  std::vector<std::string> lines(n);
  std::vector<std::string> failures(n);
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const auto& row = manifest.rows[i];
      try {
        const auto t0 = std::chrono::steady_clock::now();
        const pcqa::PointCloud ref = load_cloud(row[c_ref], mf.prescale);
        const pcqa::PointCloud dist = load_cloud(row[c_dist], mf.prescale);
        const pcqa::FeatureVector fv = pcqa::compute_features(ref, dist, mf.config(), pair_threads);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::vector<std::string> fields{row[c_ref], row[c_dist],
                                        pcqa::format_double(fv.s1), pcqa::format_double(fv.s2),
                                        pcqa::format_double(fv.s3), pcqa::format_double(fv.s4),
                                        pcqa::format_double(fv.s5)};
        if (c_mos >= 0) fields.push_back(row[c_mos]);
        if (timing) fields.push_back(pcqa::format_double(secs));
        lines[i] = pcqa::join_csv_row(fields);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error(out_path + ": cannot open file for writing");
  std::vector<std::string> header{"ref_path", "dist_path", "s1", "s2", "s3", "s4", "s5"};
  if (c_mos >= 0) header.push_back("mos");
  if (timing) header.push_back("seconds");
  out << pcqa::join_csv_row(header);
  std::size_t failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!failures[i].empty()) {
      ++failed;
      std::cerr << "row " << (i + 1) << " failed: " << failures[i] << "\n";
      continue;
    }
    out << lines[i];
  }
  if (!out.flush()) throw std::runtime_error(out_path + ": write failed");
  if (failed > 0) {
    std::cerr << failed << " of " << n << " pairs failed\n";
    return 3;
  }
  return 0;
}

constexpr const char* kFeatureColumns[5] = {"s1", "s2", "s3", "s4", "s5"};

pcqa::DataMatrix feature_matrix(const pcqa::CsvTable& table) {
  int cols[5];
  for (int j = 0; j < 5; ++j) cols[j] = table.require_column(kFeatureColumns[j]);
  pcqa::DataMatrix x(table.rows.size(), 5);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (int j = 0; j < 5; ++j)
      x.at(i, static_cast<std::size_t>(j)) = pcqa::parse_double_field(
          table.rows[i][static_cast<std::size_t>(cols[j])], "row " + std::to_string(i + 2));
  return x;
}

int run_train(const std::string& features_path, const std::string& out_path, double c_opt,
              double epsilon_opt, double gamma_opt, double kkt_tol, std::uint64_t max_passes) {
  const pcqa::CsvTable table = pcqa::read_csv_file(features_path);
  const int c_mos = table.require_column("mos");
  const pcqa::DataMatrix x = feature_matrix(table);
  std::vector<double> y(table.rows.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = pcqa::parse_double_field(table.rows[i][static_cast<std::size_t>(c_mos)],
                                    "row " + std::to_string(i + 2));

  pcqa::SvrHyperparams hp;
  hp.C = c_opt;
  hp.epsilon = epsilon_opt;
  hp.gamma = gamma_opt;
  hp.kkt_tolerance = kkt_tol;
  hp.max_passes = max_passes;
  const pcqa::SvrModel model = pcqa::train_svr(x, y, hp);
  pcqa::save_svr_model(model, out_path);
  std::cout << "n=" << x.rows << " dim=" << x.cols
            << " support_vectors=" << model.coefficients.size()
            << " converged=" << (model.converged ? "yes" : "no")
            << " iterations=" << model.iterations
            << " C=" << model.C << " epsilon=" << model.epsilon << " gamma=" << model.gamma << "\n";
  if (!model.converged)
    std::cerr << "warning: SMO stopped at the pair-update cap with KKT violation "
              << model.final_kkt_violation << "\n";
  return 0;
}

int run_predict(const std::string& model_path, const std::string& features_path,
                const std::string& out_path) {
  const pcqa::SvrModel model = pcqa::load_svr_model(model_path);
  pcqa::CsvTable table = pcqa::read_csv_file(features_path);
  const pcqa::DataMatrix x = feature_matrix(table);
  if (x.cols != model.dim)
    throw std::runtime_error("model expects " + std::to_string(model.dim) + " features, CSV has " +
                             std::to_string(x.cols));
  table.header.push_back("pred");
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    table.rows[i].push_back(pcqa::format_double(model.predict(x.row_span(i))));
  pcqa::write_csv_file(out_path, table);
  return 0;
}

int run_evaluate(const std::string& pred_path, const std::string& out_path) {
  const pcqa::CsvTable table = pcqa::read_csv_file(pred_path);
  const int c_pred = table.require_column("pred");
  const int c_mos = table.require_column("mos");
  if (table.rows.size() < 5)
    throw std::runtime_error(pred_path + ": need at least 5 rows, got " +
                             std::to_string(table.rows.size()));
  std::vector<double> pred(table.rows.size()), mos(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    pred[i] = pcqa::parse_double_field(table.rows[i][static_cast<std::size_t>(c_pred)],
                                       "row " + std::to_string(i + 2));
    mos[i] = pcqa::parse_double_field(table.rows[i][static_cast<std::size_t>(c_mos)],
                                      "row " + std::to_string(i + 2));
  }
  const pcqa::EvalReport report = pcqa::evaluate_predictions(pred, mos);
  if (report.curve.identity_fallback)
    std::cerr << "warning: logistic mapping fell back to identity\n";
  std::cout << "n=" << report.n << " plcc=" << pcqa::format_double(report.plcc)
            << " srocc=" << pcqa::format_double(report.srocc)
            << " rmse=" << pcqa::format_double(report.rmse) << "\n";
  std::cout << "logistic: beta1=" << pcqa::format_double(report.curve.b1)
            << " beta2=" << pcqa::format_double(report.curve.b2)
            << " beta3=" << pcqa::format_double(report.curve.b3)
            << " beta4=" << pcqa::format_double(report.curve.b4)
            << (report.curve.identity_fallback ? " (identity fallback)" : "") << "\n";
  if (!out_path.empty()) {
    pcqa::CsvTable out;
    out.header = {"n", "plcc", "srocc", "beta1", "beta2", "beta3", "beta4", "rmse"};
    out.rows.push_back({std::to_string(report.n), pcqa::format_double(report.plcc),
                        pcqa::format_double(report.srocc), pcqa::format_double(report.curve.b1),
                        pcqa::format_double(report.curve.b2), pcqa::format_double(report.curve.b3),
                        pcqa::format_double(report.curve.b4), pcqa::format_double(report.rmse)});
    pcqa::write_csv_file(out_path, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Full-reference point cloud quality assessment"};
  app.require_subcommand(1);

  auto* score = app.add_subcommand("score", "Score one (reference, distorted) PLY pair");
  std::string s_ref, s_dist, s_model;
  MetricFlags s_mf;
  bool s_json = false, s_timing = false;
  score->add_option("--ref", s_ref, "Reference PLY file")->required();
  score->add_option("--dist", s_dist, "Distorted PLY file")->required();
  score->add_option("--model", s_model, "Trained SVR model; adds a predicted quality value");
  add_metric_flags(score, s_mf);
  score->add_option("--threads", s_mf.threads, "Worker threads (0 = all cores)");
  score->add_flag("--json", s_json, "Emit a JSON object instead of a CSV line");
  score->add_flag("--timing", s_timing, "Report per-stage timing");

  auto* batch = app.add_subcommand("batch", "Score every pair in a manifest CSV");
  std::string b_manifest, b_out;
  MetricFlags b_mf;
  int b_jobs = 1;
  bool b_timing = false;
  batch->add_option("--manifest", b_manifest, "CSV with ref_path,dist_path[,mos]")->required();
  batch->add_option("--out", b_out, "Output feature CSV")->required();
  batch->add_option("--jobs", b_jobs, "Pairs scored in parallel")->check(CLI::PositiveNumber);
  add_metric_flags(batch, b_mf);
  batch->add_option("--threads", b_mf.threads, "Per-pair threads when --jobs is 1");
  batch->add_flag("--timing", b_timing, "Append a per-pair seconds column");

  auto* train = app.add_subcommand("train", "Train an SVR model from a feature CSV with mos");
  std::string t_features, t_out;
  double t_c = 1.0, t_epsilon = -1.0, t_gamma = -1.0, t_kkt = 1e-3;
  std::uint64_t t_max_passes = 1000000;
  train->add_option("--features", t_features, "Feature CSV with s1..s5 and mos columns")->required();
  train->add_option("--out", t_out, "Output model file")->required();
  train->add_option("--c", t_c, "Box constraint C");
  train->add_option("--epsilon", t_epsilon, "Tube width (default 0.1 * std of mos)");
  train->add_option("--gamma", t_gamma, "RBF width (default 1/5)");
  train->add_option("--kkt-tol", t_kkt, "KKT stopping tolerance");
  train->add_option("--max-passes", t_max_passes, "Pair-update cap");

  auto* predict = app.add_subcommand("predict", "Append SVR predictions to a feature CSV");
  std::string p_model, p_features, p_out;
  predict->add_option("--model", p_model, "Trained model file")->required();
  predict->add_option("--features", p_features, "Feature CSV with s1..s5")->required();
  predict->add_option("--out", p_out, "Output CSV (input columns + pred)")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Correlate predictions against MOS");
  std::string e_pred, e_out;
  evaluate->add_option("--pred", e_pred, "CSV with pred and mos columns")->required();
  evaluate->add_option("--out", e_out, "Report CSV (n,plcc,srocc,beta1..beta4,rmse)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*score) return run_score(s_ref, s_dist, s_model, s_mf, s_json, s_timing);
    if (*batch) return run_batch(b_manifest, b_out, b_jobs, b_mf, b_timing);
    if (*train) return run_train(t_features, t_out, t_c, t_epsilon, t_gamma, t_kkt, t_max_passes);
    if (*predict) return run_predict(p_model, p_features, p_out);
    if (*evaluate) return run_evaluate(e_pred, e_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
