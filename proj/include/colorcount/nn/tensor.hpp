#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace colorcount::nn {

/// Single-image activation, channel-major (C x H x W), float32.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, float fill = 0.0f)
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

  [[nodiscard]] std::size_t size() const { return v.size(); }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  float& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  [[nodiscard]] float at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  [[nodiscard]] std::span<float> channel(int ch) { return {v.data() + ch * plane(), plane()}; }
  [[nodiscard]] std::span<const float> channel(int ch) const { return {v.data() + ch * plane(), plane()}; }

  Tensor& operator+=(const Tensor& o);
};

[[nodiscard]] std::string shape_string(const Tensor& t);

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s);

  [[nodiscard]] std::size_t size() const { return value.size(); }
  void zero_grad();
};

}  // namespace colorcount::nn
