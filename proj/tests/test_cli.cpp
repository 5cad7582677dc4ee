#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "dsm/image_io.hpp"
#include "dsm/params.hpp"
#include "dsm/synthetic.hpp"

using namespace dsm;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DSMATCH_BIN) + " " + args + " >cli_stdout.tmp 2>cli_stderr.tmp";
  const int status = std::system(cmd.c_str());
#ifdef _WIN32
  return status;
#else
  return (status >= 0 && (status & 0x7f) == 0) ? (status >> 8) & 0xff : -1;
#endif
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "dsmatch_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

const char* kMatchCfg =
    "disparities = 8\n"
    "stride = 1\n"
    "cost_mode = absdiff\n"
    "feature_mode = census\n"
    "channels = 8\n"
    "temperature = 0.1\n"
    "refine_iters = 4\n";

const char* kTrainCfg =
    "disparities = 8\n"
    "temperature = 0.1\n"
    "refine_iters = 4\n"
    "height = 32\n"
    "width = 48\n"
    "max_disp = 6\n"
    "samples = 2\n"
    "epochs = 2\n"
    "lr = 0.001\n";

void put(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("cli: full train, match, eval, refine round trip") {
  Workspace ws;
  put(ws.path("train.cfg"), kTrainCfg);
  put(ws.path("match.cfg"), kMatchCfg);

  // train a toy model
  CHECK(run("train-toy --config " + ws.path("train.cfg") + " --out " + ws.path("ck.bin") +
            " --seed 0 --history " + ws.path("hist.csv")) == 0);
  CHECK(fs::exists(ws.path("ck.bin")));
  const std::string hist = slurp(ws.path("hist.csv"));
  CHECK(hist.rfind("epoch,l1_init,joint,l1_ref,total,epe", 0) == 0);

  // stage a stereo pair and its ground truth
  SyntheticConfig scfg;
  scfg.h = 32;
  scfg.w = 48;
  scfg.max_disp = 6;
  const SyntheticSample s = gen_synthetic_pair(12, scfg);
  write_pfm(ws.path("left.pfm"), s.left);
  write_pfm(ws.path("right.pfm"), s.right);
  write_pfm(ws.path("gt.pfm"), s.dgt);

  // match with the trained checkpoint, emitting every optional artifact
  fs::create_directories(ws.path("maps"));
  CHECK(run("match --left " + ws.path("left.pfm") + " --right " + ws.path("right.pfm") +
            " --config " + ws.path("match.cfg") + " --ckpt " + ws.path("ck.bin") +
            " --out-disp " + ws.path("disp.pfm") + " --out-match " + ws.path("m.pfm") +
            " --out-logscale " + ws.path("b.pfm") + " --heatmaps " + ws.path("maps")) == 0);
  const ScalarMap disp = read_pfm(ws.path("disp.pfm"));
  CHECK(disp.h == 32);
  CHECK(disp.w == 48);
  for (double v : disp.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 7.0);
  }
  CHECK(fs::exists(ws.path("maps") + "/d_init.pgm"));
  CHECK(fs::exists(ws.path("maps") + "/d_refined.pgm"));
  CHECK(fs::exists(ws.path("maps") + "/match.pgm"));
  CHECK(fs::exists(ws.path("maps") + "/logscale.pgm"));

  // plain and split evaluation, text and csv
  CHECK(run("eval --pred " + ws.path("disp.pfm") + " --gt " + ws.path("gt.pfm") +
            " --max-disp 6") == 0);
  CHECK(slurp("cli_stdout.tmp").find("EPE") != std::string::npos);
  CHECK(run("eval --pred " + ws.path("disp.pfm") + " --gt " + ws.path("gt.pfm") +
            " --max-disp 6 --logscale " + ws.path("b.pfm") + " --csv") == 0);
  const std::string csv = slurp("cli_stdout.tmp");
  CHECK(!csv.empty());
  CHECK(csv.find(',') != std::string::npos);

  // standalone diffusion against the same checkpoint
  CHECK(run("refine --disp " + ws.path("disp.pfm") + " --left " + ws.path("left.pfm") +
            " --match " + ws.path("m.pfm") + " --ckpt " + ws.path("ck.bin") + " --config " +
            ws.path("match.cfg") + " --iters 4 --out " + ws.path("ref.pfm")) == 0);
  const ScalarMap ref = read_pfm(ws.path("ref.pfm"));
  CHECK(ref.h == 32);
  CHECK(ref.w == 48);

  std::remove("cli_stdout.tmp");
  std::remove("cli_stderr.tmp");
}

TEST_CASE("cli: gradcheck verbs and failure modes") {
  CHECK(run("gradcheck --op l1_loss") == 0);
  CHECK(slurp("cli_stdout.tmp").find("ok") != std::string::npos);
  CHECK(run("gradcheck --op no_such_op") == 2);

  // argument errors: missing required flags, bogus files
  CHECK(run("match --left nope.pfm") != 0);
  CHECK(run("eval --pred nope.pfm --gt nope.pfm") != 0);
  CHECK(run("") != 0);  // a subcommand is required

  std::remove("cli_stdout.tmp");
  std::remove("cli_stderr.tmp");
}
