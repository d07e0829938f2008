#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "tumorkit/random.hpp"
#include "tumorkit/volume.hpp"

namespace testutil {

namespace fs = std::filesystem;

class TempDir {
public:
  TempDir() {
    static std::mt19937_64 gen{std::random_device{}()};
    path_ = fs::temp_directory_path() /
            ("tumorkit_test_" + std::to_string(gen()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const fs::path &path() const { return path_; }
  fs::path operator/(const std::string &name) const { return path_ / name; }

private:
  fs::path path_;
};

inline fs::path data_dir() { return fs::path(TUMORKIT_TEST_DATA); }

/// Sets the inclusive box [z0,z1]x[y0,y1]x[x0,x1] to value.
template <typename G>
void fill_box(G &g, std::size_t z0, std::size_t z1, std::size_t y0,
              std::size_t y1, std::size_t x0, std::size_t x1,
              typename G::value_type value) {
  for (std::size_t z = z0; z <= z1; ++z)
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x)
        g.at(z, y, x) = value;
}

inline tumorkit::BinaryMask random_mask(const tumorkit::Dims &d,
                                        tumorkit::Rng &rng, double p,
                                        tumorkit::Spacing s = {}) {
  tumorkit::BinaryMask m(d, s);
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = rng.uniform() < p;
  return m;
}

inline tumorkit::Volume3 random_volume(const tumorkit::Dims &d,
                                       tumorkit::Rng &rng,
                                       tumorkit::Spacing s = {}) {
  tumorkit::Volume3 v(d, s);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<float>(rng.uniform());
  return v;
}

inline int run_cli(const std::string &args) {
  const std::string cmd = std::string(TUMORKIT_CLI) + " " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace testutil
