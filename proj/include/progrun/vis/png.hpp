// Copyright 2026 The progrun Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace progrun {

using Rgba = std::array<std::uint8_t, 4>;

// Piecewise-linear ramps through fixed anchors. "viridis" follows the
// perceptual ramp of the same name at nine stops.
inline Rgba colormap(std::string_view name, double v) {
  static constexpr std::array<std::array<double, 3>, 9> kViridis = {{{68, 1, 84},
                                                                     {71, 44, 122},
                                                                     {59, 81, 139},
                                                                     {44, 113, 142},
                                                                     {33, 144, 141},
                                                                     {39, 173, 129},
                                                                     {92, 200, 99},
                                                                     {170, 220, 50},
                                                                     {253, 231, 37}}};
  if (std::isnan(v)) v = 0;
  v = std::clamp(v, 0.0, 1.0);
  if (name == "gray" || name == "grey") {
    auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
    return {g, g, g, 255};
  }
  if (name != "viridis") throw std::invalid_argument("unknown colormap '" + std::string(name) + "'");
  double f = v * (kViridis.size() - 1);
  std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(f), kViridis.size() - 2);
  double t = f - static_cast<double>(i);
  Rgba out{0, 0, 0, 255};
  for (int c = 0; c < 3; ++c)
    out[c] = static_cast<std::uint8_t>(std::lround(kViridis[i][c] * (1 - t) + kViridis[i + 1][c] * t));
  return out;
}

inline bool is_colormap(std::string_view name) { return name == "viridis" || name == "gray" || name == "grey"; }

// Encodes 8-bit RGBA rows (top row first) as PNG. Output is a pure function
// of the pixels: no timestamps or text chunks are written.
inline std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& rgba, std::uint32_t width,
                                            std::uint32_t height) {
  if (rgba.size() != static_cast<std::size_t>(width) * height * 4) throw std::invalid_argument("encode_png: size mismatch");
  if (width == 0 || height == 0) throw std::invalid_argument("encode_png: empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + len);
      },
      nullptr);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (std::uint32_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgba.data() + static_cast<std::size_t>(y) * width * 4));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace progrun
