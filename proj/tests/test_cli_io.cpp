#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qgk/config.hpp"
#include "qgk/report_io.hpp"
#include "test_util.hpp"

using namespace qgk;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args, const fs::path& log) {
#ifdef QGK_CLI_PATH
  const std::string cmd = std::string("\"") + QGK_CLI_PATH + "\" " + args + " >\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#else
  (void)args;
  (void)log;
  return -1;
#endif
}

RunConfig small_config() {
  RunConfig c;
  c.seed = 7;
  c.physics.nx = c.physics.ny = 32;
  c.dataset.spinup_days = 1.0;
  c.dataset.run_days = 200.0 / 24.0;
  c.dataset.out_resolution = 16;
  c.model.d = 8;
  c.model.train.epochs = 2;
  c.model.train.batch_size = 4;
  c.model.train.rollout_len = 3;
  c.model.train.stabilize_margin = 0.01;
  c.eval.horizon = 12;
  c.eval.max_lag = 4;
  return c.finalize();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

}  // namespace

TEST(Config, DefaultRoundTrip) {
  RunConfig c;
  c.finalize();
  const std::string y = to_yaml(c);
  EXPECT_EQ(to_yaml(from_yaml(y).finalize()), y);
}

TEST(Config, EditedValuesSurvive) {
  RunConfig c = small_config();
  c.physics.beta = 1.2345678901234567e-11;
  c.model.weights.w_phys = 0.3;
  c.eval.mode = "rk4";
  c.model.train.stabilize_margin.reset();
  const RunConfig r = from_yaml(to_yaml(c)).finalize();
  EXPECT_EQ(r.physics.beta, c.physics.beta);
  EXPECT_EQ(r.physics.nx, 32);
  EXPECT_EQ(r.model.weights.w_phys, 0.3);
  EXPECT_EQ(r.eval.mode, "rk4");
  EXPECT_FALSE(r.model.train.stabilize_margin.has_value());
  EXPECT_EQ(r.dataset.seed, 7u);
  EXPECT_EQ(r.model.train.seed, 8u);
  EXPECT_EQ(to_yaml(r), to_yaml(c));
}

TEST(Config, PartialFileKeepsDefaults) {
  const RunConfig r = from_yaml("seed: 3\nmodel:\n  d: 16\n").finalize();
  EXPECT_EQ(r.seed, 3u);
  EXPECT_EQ(r.model.d, 16);
  EXPECT_EQ(r.physics.nx, RunConfig{}.physics.nx);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(from_yaml("sead: 3\n"), std::invalid_argument);
  EXPECT_THROW(from_yaml("model:\n  dd: 3\n"), std::invalid_argument);
  EXPECT_THROW(from_yaml("model:\n  d: abc\n"), std::invalid_argument);
  EXPECT_THROW(from_yaml("physics:\n  delta: 0.5\n"), std::invalid_argument);
  EXPECT_THROW(from_yaml("eval:\n  mode: leapfrog\n").finalize(), std::invalid_argument);
  EXPECT_THROW(from_yaml("physics:\n  nx: 48\n  ny: 48\n").finalize(), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/qgk.yaml"), IoError);
}

TEST(Config, RolloutOptionsInSnapshotUnits) {
  RunConfig c = small_config();
  c.eval.dt_query_hours = 1.0;
  EXPECT_DOUBLE_EQ(c.rollout_options(18000.0).dt_query, 0.2);
  c.eval.dt_query_hours = 10.0;
  EXPECT_DOUBLE_EQ(c.rollout_options(18000.0).dt_query, 2.0);
}

TEST(ReportIo, EpochRecordKeys) {
  EpochRecord r;
  r.epoch = 3;
  r.terms.total = 1.5;
  r.grad_norm = 0.25;
  const json j = json::parse(epoch_record_json(r));
  for (const char* k : {"epoch", "L_total", "L_recon", "L_pred", "L_latent", "L_phys", "grad_norm",
                        "spectral_abscissa", "wall_ms"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["epoch"], 3);
  EXPECT_EQ(j["L_total"], 1.5);
}

TEST(ReportIo, WritesAllFiles) {
  RolloutReport rep;
  rep.horizon_steps = 2;
  rep.mode = "matrix_exp";
  for (std::size_t s = 1; s <= 2; ++s) {
    StepRecord r;
    r.step = s;
    r.t_units = double(s);
    r.t_seconds = 18000.0 * s;
    r.ke = 0.1 * s;
    if (s == 1) r.rmse = 0.5;
    rep.per_step.push_back(r);
  }
  rep.ke_spectrum.k = {0.0, 1.0};
  rep.ke_spectrum.energy = {1.0, 0.5};
  rep.truth_ke_spectrum.k = {0.0, 1.0};
  rep.truth_ke_spectrum.energy = {1.0, 0.25};
  rep.autocorrelation = {1.0, 0.5};
  rep.truth_autocorrelation = {1.0, 0.4};
  rep.lambda = 0.01;
  const fs::path dir = test::temp_dir("report_io");
  OperatorSpectrum eigs = spectrum(Matrix::Identity(2, 2) * -0.5);
  write_report(rep, dir, "seed: 1\n", eigs);
  for (const char* f : {"report.json", "per_step.csv", "spectrum.csv", "autocorr.csv", "eigs.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const json j = json::parse(test::read_file(dir / "report.json"));
  EXPECT_EQ(j["config"], "seed: 1\n");
  EXPECT_EQ(j["lambda"], 0.01);
  EXPECT_EQ(j["lambda_time_unit"], "snapshot interval");
  EXPECT_EQ(j["per_step"].size(), 2u);
  const auto csv = lines(test::read_file(dir / "per_step.csv"));
  ASSERT_EQ(csv.size(), 3u);
  EXPECT_EQ(csv[0], "step,t_units,t_seconds,rmse,acc,error_norm,ke,enstrophy,truth_ke,truth_enstrophy,max_abs");
  EXPECT_EQ(lines(test::read_file(dir / "spectrum.csv"))[0], "k,energy,truth_energy");
  EXPECT_EQ(lines(test::read_file(dir / "autocorr.csv"))[0], "lag,pred,truth");
  EXPECT_EQ(read_spectrum_csv(dir / "eigs.csv").size(), 2u);
}

TEST(ReportIo, ConfigEcho) {
  const fs::path dir = test::temp_dir("echo");
  const fs::path artifact = dir / "op.qgko";
  EXPECT_EQ(config_echo_path(artifact), dir / "op.qgko.config.yaml");
  write_config_echo(artifact, "seed: 5\n");
  EXPECT_EQ(test::read_file(config_echo_path(artifact)), "seed: 5\n");
}

#ifdef QGK_CLI_PATH

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = test::temp_dir("cli");
    save_config(small_config(), dir_ / "cfg.yaml");
    const fs::path log = dir_ / "setup.log";
    const std::string c = "-q -c \"" + (dir_ / "cfg.yaml").string() + "\" ";
    gen_ = run("generate " + c + "-o \"" + (dir_ / "data.qgk").string() + "\"", log);
    train_ = run("train " + c + "-d \"" + (dir_ / "data.qgk").string() + "\" -o \"" +
                     (dir_ / "op.qgko").string() + "\"",
                 log);
  }
  std::string cfg() const { return "-c \"" + (dir_ / "cfg.yaml").string() + "\" "; }
  std::string p(const std::string& name) const { return "\"" + (dir_ / name).string() + "\""; }
  fs::path log() const { return dir_ / "cmd.log"; }

  static inline fs::path dir_;
  static inline int gen_ = -1, train_ = -1;
};

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("", log()), 1);
  EXPECT_EQ(run("frobnicate", log()), 1);
  EXPECT_EQ(run("generate", log()), 1);
  EXPECT_EQ(run("rollout --operator x", log()), 1);
}

TEST_F(Cli, ConfigInitMatchesDefaults) {
  EXPECT_EQ(run("config init", log()), 0);
  RunConfig c;
  EXPECT_EQ(test::read_file(log()), to_yaml(c.finalize()));
  EXPECT_EQ(run("config init -o " + p("init.yaml"), log()), 0);
  EXPECT_EQ(test::read_file(dir_ / "init.yaml"), to_yaml(c));
}

TEST_F(Cli, IoErrors) {
  EXPECT_EQ(run("pod -c " + p("missing.yaml") + " -d " + p("data.qgk") + " -o " + p("x.qgkb"), log()), 3);
  EXPECT_EQ(run("pod " + cfg() + "-d " + p("missing.qgk") + " -o " + p("x.qgkb"), log()), 3);
  std::ofstream(dir_ / "junk.qgk") << "JUNKJUNKJUNK";
  EXPECT_EQ(run("pod " + cfg() + "-d " + p("junk.qgk") + " -o " + p("x.qgkb"), log()), 3);
  EXPECT_EQ(run("spectrum --operator " + p("junk.qgk"), log()), 3);
}

TEST_F(Cli, BadConfigIsUsageError) {
  std::ofstream(dir_ / "bad.yaml") << "seed: 1\nunknown_key: 2\n";
  EXPECT_EQ(run("generate -c " + p("bad.yaml") + " -o " + p("bad.qgk"), log()), 1);
}

TEST_F(Cli, GenerateIsDeterministic) {
  ASSERT_EQ(gen_, 0);
  EXPECT_EQ(run("-q generate " + cfg() + "-o " + p("data2.qgk"), log()), 0);
  EXPECT_EQ(test::read_file(dir_ / "data.qgk"), test::read_file(dir_ / "data2.qgk"));
  EXPECT_TRUE(fs::exists(dir_ / "data.qgk.config.yaml"));
  const Dataset d = read_dataset(dir_ / "data.qgk");
  EXPECT_EQ(d.n_snapshots, 40u);
  EXPECT_EQ(d.nx, 16u);
  EXPECT_EQ(run("-q generate " + cfg() + "--seed 8 -o " + p("data3.qgk"), log()), 0);
  EXPECT_NE(test::read_file(dir_ / "data.qgk"), test::read_file(dir_ / "data3.qgk"));
}

TEST_F(Cli, TrainWritesArtifacts) {
  ASSERT_EQ(train_, 0);
  const KoopmanOperator op = read_operator(dir_ / "op.qgko");
  EXPECT_EQ(op.d(), 8);
  EXPECT_LE(spectrum(op.K()).spectral_abscissa, -0.01 + 1e-9);
  EXPECT_EQ(read_basis(dir_ / "op.qgko.basis").d(), 8);
  const auto log_lines = lines(test::read_file(dir_ / "op.qgko.log.jsonl"));
  ASSERT_EQ(log_lines.size(), 3u);
  for (std::size_t i = 0; i < log_lines.size(); ++i) {
    const json j = json::parse(log_lines[i]);
    EXPECT_EQ(j["epoch"], int(i));
    EXPECT_TRUE(j["L_total"].is_number());
  }
  const RunConfig echo = load_config(dir_ / "op.qgko.config.yaml");
  EXPECT_EQ(echo.model.d, 8);
}

TEST_F(Cli, PodCommand) {
  ASSERT_EQ(gen_, 0);
  EXPECT_EQ(run("pod " + cfg() + "-d " + p("data.qgk") + " -o " + p("pod.qgkb"), log()), 0);
  EXPECT_EQ(test::read_file(dir_ / "pod.qgkb"), test::read_file(dir_ / "op.qgko.basis"));
}

TEST_F(Cli, RolloutReport) {
  ASSERT_EQ(train_, 0);
  const std::string common = "rollout " + cfg() + "--operator " + p("op.qgko") + " --basis " +
                             p("op.qgko.basis") + " -d " + p("data.qgk") + " ";
  ASSERT_EQ(run(common + "-o " + p("rep") + " --save-latents", log()), 0) << test::read_file(log());
  const json j = json::parse(test::read_file(dir_ / "rep" / "report.json"));
  EXPECT_EQ(j["per_step"].size(), 12u);
  EXPECT_TRUE(j["config"].is_string());
  EXPECT_EQ(j["mode"], "matrix_exp");
  for (const char* f : {"per_step.csv", "spectrum.csv", "autocorr.csv", "eigs.csv", "latents.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "rep" / f)) << f;
  EXPECT_EQ(lines(test::read_file(dir_ / "rep" / "latents.csv")).size(), 14u);

  ASSERT_EQ(run(common + "-o " + p("rep1h") + " --dt-query-hours 1 --horizon 60", log()), 0);
  const json j1 = json::parse(test::read_file(dir_ / "rep1h" / "report.json"));
  EXPECT_EQ(j1["per_step"].size(), 60u);
  // Step 5 at 1 h equals step 1 at 5 h.
  EXPECT_NEAR(j1["per_step"][4]["ke"].get<double>(), j["per_step"][0]["ke"].get<double>(),
              1e-9 * std::abs(j["per_step"][0]["ke"].get<double>()));

  EXPECT_EQ(run(common + "-o " + p("repx") + " --mode leapfrog", log()), 1);
  EXPECT_EQ(run(common + "-o " + p("repx") + " --start 0", log()), 1);
}

TEST_F(Cli, RolloutBlowUpExitCode) {
  ASSERT_EQ(train_, 0);
  const Matrix K = Matrix::Identity(8, 8) * 500.0;
  write_operator({K, K}, dir_ / "bad.qgko");
  EXPECT_EQ(run("rollout " + cfg() + "--operator " + p("bad.qgko") + " --basis " + p("op.qgko.basis") + " -d " +
                    p("data.qgk") + " -o " + p("repbad"),
                log()),
            2);
}

TEST_F(Cli, SpectrumCommand) {
  ASSERT_EQ(train_, 0);
  EXPECT_EQ(run("spectrum --operator " + p("op.qgko") + " -o " + p("eigs.csv"), log()), 0);
  const auto eig = read_spectrum_csv(dir_ / "eigs.csv");
  EXPECT_EQ(eig.size(), 8u);
  for (const auto& l : eig) EXPECT_LT(l.real(), 0.0);
}

TEST_F(Cli, Bench) {
  ASSERT_EQ(train_, 0);
  const std::string common =
      "bench " + cfg() + "--operator " + p("op.qgko") + " --basis " + p("op.qgko.basis") + " ";
  EXPECT_EQ(run(common + "-n 0", log()), 1);
  ASSERT_EQ(run(common + "-n 5 -o " + p("bench.json"), log()), 0) << test::read_file(log());
  const json j = json::parse(test::read_file(dir_ / "bench.json"));
  EXPECT_GT(j["ratio"].get<double>(), 0.0);
  EXPECT_EQ(run(common + "-n 5 --latent-only", log()), 0);
}

TEST_F(Cli, IncompatibleConfig) {
  ASSERT_EQ(gen_, 0);
  RunConfig c = small_config();
  c.dataset.out_resolution = 32;
  save_config(c, dir_ / "mismatch.yaml");
  EXPECT_EQ(run("pod -c " + p("mismatch.yaml") + " -d " + p("data.qgk") + " -o " + p("m.qgkb"), log()), 1);
}

TEST_F(Cli, ThreadsEnvironment) {
  ASSERT_EQ(gen_, 0);
  EXPECT_EQ(run("-q --threads 2 train " + cfg() + "-d " + p("data.qgk") + " -o " + p("op2.qgko"), log()), 0);
  EXPECT_EQ(test::read_file(dir_ / "op2.qgko"), test::read_file(dir_ / "op.qgko"));
  EXPECT_EQ(setenv("QGK_THREADS", "zero", 1), 0);
  EXPECT_EQ(run("-q train " + cfg() + "-d " + p("data.qgk") + " -o " + p("op3.qgko"), log()), 1);
  unsetenv("QGK_THREADS");
}

#endif
