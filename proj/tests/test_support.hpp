#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "omrd/rng.hpp"
#include "omrd/tensor.hpp"

namespace omrd::test {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool param = true) {
  ArrX<T> v(numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(lo, hi));
  return param ? Tensor<T>::parameter(std::move(shape), std::move(v))
               : Tensor<T>::constant(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> random_unit_vector(Rng& rng, int dim, bool param = false) {
  ArrX<T> v(dim);
  double norm2 = 0;
  for (int i = 0; i < dim; ++i) {
    const double x = rng.normal();
    v[i] = static_cast<T>(x);
    norm2 += x * x;
  }
  v /= static_cast<T>(std::sqrt(std::max(norm2, 1e-30)));
  return param ? Tensor<T>::parameter({dim}, std::move(v)) : Tensor<T>::constant({dim}, std::move(v));
}

// Scratch directory unique to a test; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("omrd_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

// Runs the CLI binary (OMRD_CLI_PATH) with the given arguments.
inline CommandResult run_cli(const std::string& args) {
  const std::filesystem::path log =
      std::filesystem::temp_directory_path() / ("omrd_cli_out_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(OMRD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CommandResult res;
  res.exit_code = raw == -1 ? -1 : WEXITSTATUS(raw);
  res.output = read_file(log);
  std::error_code ec;
  std::filesystem::remove(log, ec);
  return res;
}

}  // namespace omrd::test
