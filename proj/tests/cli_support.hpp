#pragma once

// Runs the built CLI in a shell and captures exit status and stderr.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "anatomy/matrix.hpp"
#include "anatomy/rng.hpp"

namespace anatomy::testing {

struct CliResult {
  int status = -1;
  std::string err;
  std::string out;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline CliResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("'") + ANATOMY_CLI + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

inline void write_gaussian_ltxt(const std::filesystem::path& p, std::size_t rows, std::size_t cols,
                                std::uint64_t seed) {
  EmbeddingMatrix m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.values) v = static_cast<float>(rng.normal());
  write_ltxt(p, m);
}

inline void write_sample_corpus(const std::filesystem::path& dir) {
  std::ofstream a(dir / "coco.txt");
  a << "a man in a white shirt riding a bike\nred car\nthe dog on the left\n"
       "two people sitting at a table with food and drinks in a crowded restaurant at night\n"
       "small blue bird\nperson\n";
  std::ofstream b(dir / "refs.jsonl");
  b << "{\"text\": \"left zebra\", \"source\": \"refcoco\"}\n"
       "{\"text\": \"man wearing a hat\", \"source\": \"refcoco\"}\n"
       "{\"text\": \"the giraffe closest to the camera eating leaves\", \"source\": \"refcoco\"}\n";
}

}  // namespace anatomy::testing
