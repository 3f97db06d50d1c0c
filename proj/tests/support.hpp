#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "colorcount/nn/tensor.hpp"

namespace testing {

using colorcount::nn::Tensor;

inline Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(scale));
  Tensor t(c, h, w);
  for (auto& v : t.v) v = n(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

/// Central differences of f at x with steps h and h/2 combined by Richardson
/// extrapolation, so the truncation error is O(h^4).
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-4) {
  std::vector<double> g(x.size());
  auto central = [&](std::size_t i, double step) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    return (up - down) / (2.0 * step);
  };
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = (4.0 * central(i, h / 2) - central(i, h)) / 3.0;
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// Direct convolution with "same" padding of dilation * (k - 1) / 2.
inline Tensor naive_conv(const Tensor& x, const std::vector<float>& weight, const std::vector<float>* bias, int out,
                         int k, int stride, int dilation, int groups) {
  const int pad = dilation * (k - 1) / 2;
  const int ho = (x.h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  const int wo = (x.w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  const int in_per = x.c / groups;
  const int out_per = out / groups;
  Tensor y(out, ho, wo);
  for (int o = 0; o < out; ++o) {
    const int g = o / out_per;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        double s = bias ? (*bias)[o] : 0.0;
        for (int ci = 0; ci < in_per; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int yy = i * stride - pad + ky * dilation;
              const int xx = j * stride - pad + kx * dilation;
              if (yy < 0 || yy >= x.h || xx < 0 || xx >= x.w) continue;
              s += static_cast<double>(weight[((static_cast<std::size_t>(o) * in_per + ci) * k + ky) * k + kx]) *
                   x.at(g * in_per + ci, yy, xx);
            }
          }
        }
        y.at(o, i, j) = static_cast<float>(s);
      }
    }
  }
  return y;
}

/// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("colorcount_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
