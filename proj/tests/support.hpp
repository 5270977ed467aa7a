#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "layeragg/tensor.hpp"

namespace testing {

using layeragg::Index;
using layeragg::Tensord;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("layeragg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Triple-loop product with a fixed k order, independent of Eigen.
inline Tensord naive_matmul(const Tensord& a, const Tensord& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensord c({m, n});
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      long double acc = 0;
      for (Index p = 0; p < k; ++p) acc += static_cast<long double>(a(i, p)) * b(p, j);
      c(i, j) = static_cast<double>(acc);
    }
  }
  return c;
}

inline double max_abs_diff(const Tensord& a, const Tensord& b) {
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

}  // namespace testing
