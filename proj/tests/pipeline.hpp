#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cforge/io.hpp"
#include "cli.hpp"
#include "support.hpp"

namespace cforge::testing {

inline int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

inline void cli_ok(const std::vector<std::string>& args) {
  std::string err;
  if (run_cli(args, nullptr, &err) != 0) throw std::runtime_error("command failed: " + err);
}

// A few dozen 32-point shapes, a small auto-encoder, a regressor, two CAVs
// and a bundle. Cheap enough to build once per test binary.
struct TinyPipeline {
  TempDir dir{"pipeline"};
  std::string root = dir.path().string();

  std::string p(const std::string& name) const { return root + "/" + name; }

  TinyPipeline() {
    cli_ok({"gen-data", "--out", p("data"), "--cars", "16", "--cuboids", "12", "--ellipsoids", "12", "--points",
            "32", "--seed", "3"});
    cli_ok({"train-ae", "--data", p("data"), "--out", p("ae.txt"), "--epochs", "40", "--hidden", "48,16",
            "--seed", "3"});
    cli_ok({"train-reg", "--ae", p("ae.txt"), "--out", p("reg.txt"), "--epochs", "60", "--seed", "3"});
    write_text_file(p("cuboid.json"), R"({"name": "cuboid", "label": "cuboid"})");
    write_text_file(p("ellipsoid.json"), R"({"name": "ellipsoid", "label": "ellipsoid"})");
    std::filesystem::create_directories(p("cavs"));
    cli_ok({"train-cav", "--ae", p("ae.txt"), "--concept", p("cuboid.json"), "--counter", p("ellipsoid.json"),
            "--out", p("cavs/cuboid.cav.json"), "--seed", "3"});
    cli_ok({"train-cav", "--ae", p("ae.txt"), "--concept", p("ellipsoid.json"), "--counter",
            "random:20", "--out", p("cavs/ellipsoid.cav.json"), "--seed", "3"});
    std::filesystem::create_directories(p("concepts"));
    write_text_file(p("concepts/cuboid.json"),
                    R"({"name": "cuboid", "label": "cuboid", "counter": "../ellipsoid.json"})");
    cli_ok({"tcav", "--ae", p("ae.txt"), "--reg", p("reg.txt"), "--concepts", p("concepts"), "--runs", "10",
            "--sample", "10", "--out", p("tcav.csv"), "--seed", "3"});
    cli_ok({"make-bundle", "--out", p("bundle"), "--ae", p("ae.txt"), "--reg", p("reg.txt"), "--data", p("data"),
            "--cav", p("cavs/cuboid.cav.json"), "--cav", p("cavs/ellipsoid.cav.json"), "--tcav", p("tcav.csv")});
  }
};

}  // namespace cforge::testing
