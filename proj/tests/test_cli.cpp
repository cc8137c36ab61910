#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pcqa/csv.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/svr.hpp"
#include "support/fixtures.hpp"

namespace {

std::string cli_path() {
  const char* env = std::getenv("PCQA_CLI");
  return env ? env : "";
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const fixtures::TempDir& tmp) {
  const std::string out_file = tmp.file("stdout.txt");
  const std::string err_file = tmp.file("stderr.txt");
  const std::string cmd = cli_path() + " " + args + " >" + out_file + " 2>" + err_file;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

std::string write_pair(const fixtures::TempDir& tmp) {
  const pcqa::PointCloud pc = fixtures::random_blob(150, 7);
  pcqa::save_ply(pc, tmp.file("a.ply"), pcqa::PlyEncoding::binary_little_endian);
  return tmp.file("a.ply");
}

}  // namespace

TEST_CASE("cli: score of an identity pair prints 1,1,1,1,1") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const std::string ply = write_pair(tmp);
  const RunResult r = run_cli("score --ref " + ply + " --dist " + ply, tmp);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out == "1,1,1,1,1\n");
}

TEST_CASE("cli: explicit --k3 20 --k4 5 equals the defaults") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const pcqa::PointCloud a = fixtures::random_blob(150, 7);
  const pcqa::PointCloud b = fixtures::with_radial_noise(a, 0.15, 8);
  pcqa::save_ply(a, tmp.file("a.ply"), pcqa::PlyEncoding::binary_little_endian);
  pcqa::save_ply(b, tmp.file("b.ply"), pcqa::PlyEncoding::binary_little_endian);
  const std::string pair = "--ref " + tmp.file("a.ply") + " --dist " + tmp.file("b.ply");
  const RunResult dflt = run_cli("score " + pair, tmp);
  const RunResult expl = run_cli("score --k3 20 --k4 5 " + pair, tmp);
  REQUIRE(dflt.exit_code == 0);
  REQUIRE(dflt.out == expl.out);
  const RunResult other = run_cli("score --k3 6 --k4 3 " + pair, tmp);
  REQUIRE(other.out != dflt.out);
}

TEST_CASE("cli: score with a model appends predict(model, features)") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const std::string ply = write_pair(tmp);

  // toy model trained on a constant target: predicts that constant everywhere
  pcqa::DataMatrix x(6, 5);
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : x.values) v = u(rng);
  const std::vector<double> y(6, 4.25);
  const pcqa::SvrModel model = pcqa::train_svr(x, y);
  pcqa::save_svr_model(model, tmp.file("m.json"));
  const double expected = model.predict(std::vector<double>{1, 1, 1, 1, 1});

  const RunResult r =
      run_cli("score --ref " + ply + " --dist " + ply + " --model " + tmp.file("m.json"), tmp);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out == "1,1,1,1,1," + pcqa::format_double(expected) + "\n");
}

TEST_CASE("cli: score --json carries scores and raw errors") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const std::string ply = write_pair(tmp);
  const RunResult r = run_cli("score --json --ref " + ply + " --dist " + ply, tmp);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("\"s1\": 1.0") != std::string::npos);
  REQUIRE(r.out.find("\"e_p2point\": 0.0") != std::string::npos);
}

TEST_CASE("cli: usage and input errors use distinct exit codes") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  REQUIRE(run_cli("score --bogus-flag", tmp).exit_code == 1);
  REQUIRE(run_cli("nonexistent-subcommand", tmp).exit_code == 1);
  const RunResult r = run_cli("score --ref missing_a.ply --dist missing_b.ply", tmp);
  REQUIRE(r.exit_code == 2);
  REQUIRE(r.err.find("error:") != std::string::npos);
}

TEST_CASE("cli: batch writes manifest-ordered rows and is --jobs invariant") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const pcqa::PointCloud a = fixtures::random_blob(120, 19);
  const pcqa::PointCloud b = fixtures::with_radial_noise(a, 0.2, 20);
  pcqa::save_ply(a, tmp.file("a.ply"), pcqa::PlyEncoding::binary_little_endian);
  pcqa::save_ply(b, tmp.file("b.ply"), pcqa::PlyEncoding::binary_little_endian);

  pcqa::CsvTable manifest;
  manifest.header = {"ref_path", "dist_path", "mos"};
  manifest.rows.push_back({tmp.file("a.ply"), tmp.file("a.ply"), "5.0"});
  manifest.rows.push_back({tmp.file("a.ply"), tmp.file("b.ply"), "3.5"});
  pcqa::write_csv_file(tmp.file("manifest.csv"), manifest);

  const RunResult r1 =
      run_cli("batch --manifest " + tmp.file("manifest.csv") + " --out " + tmp.file("o1.csv"), tmp);
  REQUIRE(r1.exit_code == 0);
  const pcqa::CsvTable t = pcqa::read_csv_file(tmp.file("o1.csv"));
  REQUIRE(t.header == std::vector<std::string>{"ref_path", "dist_path", "s1", "s2", "s3", "s4",
                                               "s5", "mos"});
  REQUIRE(t.rows.size() == 2);
  REQUIRE(t.rows[0][2] == "1");  // identity pair
  REQUIRE(t.rows[1][2] != "1");
  REQUIRE(t.rows[0][7] == "5.0");

  const RunResult r4 = run_cli(
      "batch --jobs 4 --manifest " + tmp.file("manifest.csv") + " --out " + tmp.file("o4.csv"),
      tmp);
  REQUIRE(r4.exit_code == 0);
  std::ifstream f1(tmp.file("o1.csv"), std::ios::binary), f4(tmp.file("o4.csv"), std::ios::binary);
  std::stringstream s1, s4;
  s1 << f1.rdbuf();
  s4 << f4.rdbuf();
  REQUIRE(s1.str() == s4.str());
}

TEST_CASE("cli: batch reports missing files but keeps completed rows") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const std::string ply = write_pair(tmp);
  pcqa::CsvTable manifest;
  manifest.header = {"ref_path", "dist_path"};
  manifest.rows.push_back({ply, ply});
  manifest.rows.push_back({ply, tmp.file("nope.ply")});
  pcqa::write_csv_file(tmp.file("m.csv"), manifest);
  const RunResult r =
      run_cli("batch --manifest " + tmp.file("m.csv") + " --out " + tmp.file("o.csv"), tmp);
  REQUIRE(r.exit_code == 3);
  REQUIRE(r.err.find("row 2 failed") != std::string::npos);
  const pcqa::CsvTable t = pcqa::read_csv_file(tmp.file("o.csv"));
  REQUIRE(t.rows.size() == 1);
}

TEST_CASE("cli: train, predict, evaluate flow") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;

  // synthetic features with mos = 5 * s1
  std::mt19937 rng(33);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  pcqa::CsvTable features;
  features.header = {"ref_path", "dist_path", "s1", "s2", "s3", "s4", "s5", "mos"};
  for (int i = 0; i < 80; ++i) {
    const double s1 = u(rng);
    features.rows.push_back({"r.ply", "d.ply", pcqa::format_double(s1),
                             pcqa::format_double(u(rng)), pcqa::format_double(u(rng)),
                             pcqa::format_double(u(rng)), pcqa::format_double(u(rng)),
                             pcqa::format_double(5.0 * s1)});
  }
  pcqa::write_csv_file(tmp.file("features.csv"), features);

  const RunResult tr = run_cli("train --features " + tmp.file("features.csv") + " --out " +
                                   tmp.file("model.json") + " --c 10 --epsilon 0.01 --gamma 0.5",
                               tmp);
  REQUIRE(tr.exit_code == 0);
  REQUIRE(tr.out.find("converged=yes") != std::string::npos);

  const RunResult pr = run_cli("predict --model " + tmp.file("model.json") + " --features " +
                                   tmp.file("features.csv") + " --out " + tmp.file("pred.csv"),
                               tmp);
  REQUIRE(pr.exit_code == 0);
  const pcqa::CsvTable pred = pcqa::read_csv_file(tmp.file("pred.csv"));
  REQUIRE(pred.column("pred") == 8);
  // held-in RMSE within epsilon + 0.05
  const int c_pred = pred.column("pred");
  const int c_mos = pred.column("mos");
  double sse = 0.0;
  for (const auto& row : pred.rows) {
    const double p = pcqa::parse_double_field(row[static_cast<std::size_t>(c_pred)], "p");
    const double m = pcqa::parse_double_field(row[static_cast<std::size_t>(c_mos)], "m");
    sse += (p - m) * (p - m);
  }
  REQUIRE(std::sqrt(sse / static_cast<double>(pred.rows.size())) <= 0.01 + 0.05);

  const RunResult ev = run_cli(
      "evaluate --pred " + tmp.file("pred.csv") + " --out " + tmp.file("report.csv"), tmp);
  REQUIRE(ev.exit_code == 0);
  const pcqa::CsvTable report = pcqa::read_csv_file(tmp.file("report.csv"));
  REQUIRE(report.header[1] == "plcc");
  const double plcc = pcqa::parse_double_field(report.rows[0][1], "plcc");
  const double srocc = pcqa::parse_double_field(report.rows[0][2], "srocc");
  REQUIRE(plcc >= 0.99);
  REQUIRE(srocc >= 0.99);
}

TEST_CASE("cli: repeated runs are byte-identical") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const pcqa::PointCloud a = fixtures::random_blob(130, 71);
  const pcqa::PointCloud b = fixtures::with_radial_noise(a, 0.2, 72);
  pcqa::save_ply(a, tmp.file("a.ply"), pcqa::PlyEncoding::binary_little_endian);
  pcqa::save_ply(b, tmp.file("b.ply"), pcqa::PlyEncoding::binary_little_endian);

  const std::string score_cmd =
      "score --ref " + tmp.file("a.ply") + " --dist " + tmp.file("b.ply");
  REQUIRE(run_cli(score_cmd, tmp).out == run_cli(score_cmd, tmp).out);

  // training twice produces byte-identical model files
  std::mt19937 rng(73);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  pcqa::CsvTable features;
  features.header = {"s1", "s2", "s3", "s4", "s5", "mos"};
  for (int i = 0; i < 40; ++i) {
    const double s1 = u(rng);
    features.rows.push_back({pcqa::format_double(s1), pcqa::format_double(u(rng)),
                             pcqa::format_double(u(rng)), pcqa::format_double(u(rng)),
                             pcqa::format_double(u(rng)), pcqa::format_double(4.0 * s1 + 1.0)});
  }
  pcqa::write_csv_file(tmp.file("f.csv"), features);
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  REQUIRE(run_cli("train --features " + tmp.file("f.csv") + " --out " + tmp.file("m1.json"), tmp)
              .exit_code == 0);
  REQUIRE(run_cli("train --features " + tmp.file("f.csv") + " --out " + tmp.file("m2.json"), tmp)
              .exit_code == 0);
  REQUIRE(slurp(tmp.file("m1.json")) == slurp(tmp.file("m2.json")));
  REQUIRE_FALSE(slurp(tmp.file("m1.json")).empty());
}

TEST_CASE("cli: batch --timing appends a seconds column") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  const std::string ply = write_pair(tmp);
  pcqa::CsvTable manifest;
  manifest.header = {"ref_path", "dist_path"};
  manifest.rows.push_back({ply, ply});
  pcqa::write_csv_file(tmp.file("m.csv"), manifest);
  const RunResult r = run_cli(
      "batch --timing --manifest " + tmp.file("m.csv") + " --out " + tmp.file("o.csv"), tmp);
  REQUIRE(r.exit_code == 0);
  const pcqa::CsvTable t = pcqa::read_csv_file(tmp.file("o.csv"));
  REQUIRE(t.header.back() == "seconds");
  REQUIRE(pcqa::parse_double_field(t.rows[0].back(), "seconds") >= 0.0);
}

TEST_CASE("cli: malformed ply is an input error (exit 2)") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  std::ofstream(tmp.file("broken.ply")) << "ply\nformat ascii 1.0\nelement vertex 2\n"
                                           "property float x\nproperty float y\nproperty float z\n"
                                           "property uchar red\nproperty uchar green\n"
                                           "property uchar blue\nend_header\n0 0 0 1 2 3\n";
  const RunResult r = run_cli(
      "score --ref " + tmp.file("broken.ply") + " --dist " + tmp.file("broken.ply"), tmp);
  REQUIRE(r.exit_code == 2);
  REQUIRE(r.err.find("vertex count mismatch") != std::string::npos);
}

TEST_CASE("cli: evaluate with pred == mos reports perfect correlation") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  pcqa::CsvTable t;
  t.header = {"pred", "mos"};
  for (int i = 0; i < 12; ++i) {
    const std::string v = pcqa::format_double(1.0 + 0.3 * i);
    t.rows.push_back({v, v});
  }
  pcqa::write_csv_file(tmp.file("p.csv"), t);
  const RunResult r = run_cli("evaluate --pred " + tmp.file("p.csv"), tmp);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("plcc=1") != std::string::npos);
  REQUIRE(r.out.find("srocc=1") != std::string::npos);
}

TEST_CASE("cli: train rejects a features file without mos") {
  if (cli_path().empty()) SKIP("PCQA_CLI not set");
  fixtures::TempDir tmp;
  pcqa::CsvTable t;
  t.header = {"s1", "s2", "s3", "s4", "s5"};
  t.rows.push_back({"1", "1", "1", "1", "1"});
  pcqa::write_csv_file(tmp.file("f.csv"), t);
  const RunResult r =
      run_cli("train --features " + tmp.file("f.csv") + " --out " + tmp.file("m.json"), tmp);
  REQUIRE(r.exit_code == 2);
  REQUIRE(r.err.find("mos") != std::string::npos);
}
