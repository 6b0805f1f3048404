#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dcs3gd/dataset_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string output;  // stdout and stderr together
};

Result cli(const std::string& args, const std::string& env = "") {
    const std::string command = env + (env.empty() ? "" : " ") + "'" DCS3GD_CLI_PATH "' " + args + " 2>&1";
    Result r;
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buffer{};
    std::size_t n;
    while ((n = std::fread(buffer.data(), 1, buffer.size(), pipe)) > 0) r.output.append(buffer.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    static const fs::path root = [] {
        auto p = fs::temp_directory_path() / ("dcs3gd_test_cli_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root / name;
}

// Writes a small, fast config and returns its path.
fs::path write_config(const std::string& name, const std::string& extra_schedule = "",
                      const std::string& algorithm = "dc_s3gd") {
    const auto path = scratch(name + ".ini");
    std::ofstream(path) << "[run]\nmax_iterations = 40\noutput_dir = " << scratch(name).string()
                        << "\n[cluster]\nn_workers = 4\nalgorithm = " << algorithm
                        << "\nlocal_batch_size = 16\n[model]\nkind = logistic_regression\n"
                           "[dataset]\nsource = synthetic\nn_samples = 1024\ndimension = 8\nn_classes = 3\n"
                           "[schedule]\n"
                        << extra_schedule;
    return path;
}

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, RunWritesOutputsAndExitsZero) {
    const auto config = write_config("run_ok");
    const auto r = cli("run " + quoted(config));
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(scratch("run_ok") / "metrics.csv"));
    EXPECT_TRUE(fs::exists(scratch("run_ok") / "run.meta"));
    EXPECT_NE(r.output.find("iterations=40"), std::string::npos) << r.output;
}

TEST(Cli, DivergenceExitsThree) {
    const auto config = write_config("run_diverge", "eta_single_node = 1e200\n");
    const auto r = cli("run " + quoted(config));
    EXPECT_EQ(r.code, 3) << r.output;
    EXPECT_NE(r.output.find("diverged"), std::string::npos) << r.output;
}

TEST(Cli, ConfigErrorsExitTwoAndNameTheField) {
    const auto path = scratch("bad.ini");
    std::ofstream(path) << "[cluster]\nn_workers = 0\n[model]\nkind = mlp\n[dataset]\nsource = synthetic\n";
    for (const std::string verb : {"run", "validate-config"}) {
        const auto r = cli(verb + " " + quoted(path));
        EXPECT_EQ(r.code, 2) << verb << ": " << r.output;
        EXPECT_NE(r.output.find("n_workers"), std::string::npos) << r.output;
    }
}

TEST(Cli, MissingConfigFileExitsFour) {
    const auto r = cli("run " + quoted(scratch("no_such.ini")));
    EXPECT_EQ(r.code, 4) << r.output;
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
    EXPECT_EQ(cli("compare " + quoted(scratch("only_one"))).code, 2);
    EXPECT_EQ(cli("--version").code, 0);
}

TEST(Cli, ValidateConfigPrintsResolvedDefaults) {
    const auto r = cli("validate-config '" DCS3GD_CONFIG_DIR "/minimal.ini'");
    EXPECT_EQ(r.code, 0) << r.output;
    for (const char* line : {"lambda0=0.2", "weight_decay_factor=2.3", "momentum=0.9", "epochs=30"})
        EXPECT_NE(r.output.find(line), std::string::npos) << line;
}

TEST(Cli, CompareReportsSpeedup) {
    ASSERT_EQ(cli("run " + quoted(write_config("cmp_dc"))).code, 0);
    ASSERT_EQ(cli("run " + quoted(write_config("cmp_ss", "", "ssgd"))).code, 0);
    const auto csv = scratch("cmp.csv");
    const auto r = cli("compare " + quoted(scratch("cmp_dc")) + " " + quoted(scratch("cmp_ss")) + " --csv " +
                       quoted(csv));
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("2.00×"), std::string::npos) << r.output;
    std::ifstream in(csv);
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_NE(ss.str().find(",2.00,"), std::string::npos) << ss.str();
}

TEST(Cli, CompareIncompleteRunExitsFour) {
    ASSERT_EQ(cli("run " + quoted(write_config("cmp_ok"))).code, 0);
    fs::create_directories(scratch("cmp_empty"));
    const auto r = cli("compare " + quoted(scratch("cmp_ok")) + " " + quoted(scratch("cmp_empty")));
    EXPECT_EQ(r.code, 4) << r.output;
}

TEST(Cli, SweepContinuesPastFailingValue) {
    const auto config = write_config("sweep");
    const auto r = cli("sweep " + quoted(config) + " --axis cluster.n_workers --values 1,0,2 --jobs 2");
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_TRUE(fs::exists(scratch("sweep") / "cluster.n_workers=1" / "run.meta"));
    EXPECT_TRUE(fs::exists(scratch("sweep") / "cluster.n_workers=2" / "run.meta"));
    EXPECT_FALSE(fs::exists(scratch("sweep") / "cluster.n_workers=0"));
}

TEST(Cli, SweepOfLambdaSucceeds) {
    const auto config = write_config("sweep_lambda");
    const auto r = cli("sweep " + quoted(config) + " --axis compensation.lambda0 --values 0,0.1,0.2,0.4");
    EXPECT_EQ(r.code, 0) << r.output;
    for (const char* v : {"0", "0.1", "0.2", "0.4"})
        EXPECT_TRUE(fs::exists(scratch("sweep_lambda") / (std::string("compensation.lambda0=") + v) / "run.meta"));
}

TEST(Cli, GenDataThenRunFromFile) {
    const auto config = write_config("gen");
    const auto data = scratch("gen.bin");
    auto r = cli("gen-data " + quoted(config) + " " + quoted(data));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto file = dcs3gd::read_dataset(data);
    EXPECT_EQ(file.samples.size(), 1024u);
    EXPECT_EQ(file.dimension, 8u);

    const auto from_file = scratch("from_file.ini");
    std::ofstream(from_file) << "[run]\nmax_iterations = 40\noutput_dir = " << scratch("from_file").string()
                             << "\n[cluster]\nn_workers = 4\nlocal_batch_size = 16\n"
                                "[model]\nkind = logistic_regression\n[dataset]\nsource = file\npath = "
                             << data.string() << "\n";
    r = cli("run " + quoted(from_file));
    EXPECT_EQ(r.code, 0) << r.output;
    ASSERT_EQ(cli("run " + quoted(config)).code, 0);
    std::stringstream sa, sb;
    sa << std::ifstream(scratch("gen") / "metrics.csv").rdbuf();
    sb << std::ifstream(scratch("from_file") / "metrics.csv").rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Cli, UnwritableDataOutputExitsFour) {
    const auto config = write_config("gen_bad");
    const auto r = cli("gen-data " + quoted(config) + " " + quoted(scratch("no_dir") / "x" / "out.bin"));
    EXPECT_EQ(r.code, 4) << r.output;
}

TEST(Cli, OutputRootVariable) {
    const auto path = scratch("relative.ini");
    std::ofstream(path) << "[run]\nmax_iterations = 10\noutput_dir = rel/run\n[cluster]\nn_workers = 2\n"
                           "local_batch_size = 8\n[model]\nkind = logistic_regression\n"
                           "[dataset]\nsource = synthetic\nn_samples = 256\ndimension = 4\nn_classes = 2\n";
    const auto r = cli("run " + quoted(path), "DCS3GD_OUTPUT_ROOT=" + quoted(scratch("root")));
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(scratch("root") / "rel/run/run.meta"));
}
