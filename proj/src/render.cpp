#include "beamplan/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "beamplan/raw_io.hpp"

namespace beamplan {
namespace {

int nearest_source(int i, int n_dst, int n_src) {
  const auto s = static_cast<int>(std::floor((i + 0.5) * n_src / n_dst));
  return std::clamp(s, 0, n_src - 1);
}

}  // namespace

StateTensor render_state(const EnvState& state, Index3 dims, double prescription_gy) {
  const GridGeometry& g = state.phantom->geometry();
  if (dims.x < 1 || dims.y < 1 || dims.z < 1 || dims.x > g.dims.x || dims.y > g.dims.y || dims.z > g.dims.z)
    throw std::invalid_argument("render_state: dims " + to_string(dims) + " must lie within grid " +
                                to_string(g.dims));
  StateTensor t{dims, 2, {}};
  const std::size_t per_channel = t.channel_size();
  t.data.resize(2 * per_channel);
  const auto& hu = state.phantom->ct.hu;
  const auto& dose = state.dose.dose_gy;
  std::size_t out = 0;
  for (int z = 0; z < dims.z; ++z) {
    const int k = nearest_source(z, dims.z, g.dims.z);
    for (int y = 0; y < dims.y; ++y) {
      const int j = nearest_source(y, dims.y, g.dims.y);
      for (int x = 0; x < dims.x; ++x, ++out) {
        const std::size_t src = g.index(nearest_source(x, dims.x, g.dims.x), j, k);
        t.data[out] = std::clamp((static_cast<double>(hu[src]) + 1000.0) / 2000.0, 0.0, 1.0);
        t.data[per_channel + out] = std::clamp(dose[src] / prescription_gy, 0.0, 2.0) / 2.0;
      }
    }
  }
  return t;
}

namespace {

using Rgb = std::array<double, 3>;

// Five-stop blue-cyan-green-yellow-red ramp over [0, 1].
Rgb ramp(double v) {
  static constexpr std::array<Rgb, 5> stops{{{0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  v = std::clamp(v, 0.0, 1.0) * 4.0;
  const int i = std::min(static_cast<int>(v), 3);
  const double f = v - i;
  return {stops[i][0] + f * (stops[i + 1][0] - stops[i][0]), stops[i][1] + f * (stops[i + 1][1] - stops[i][1]),
          stops[i][2] + f * (stops[i + 1][2] - stops[i][2])};
}

constexpr std::array<std::array<std::uint8_t, 3>, 4> kOarColours{{{200, 120, 40}, {240, 220, 40}, {60, 120, 255},
                                                                   {200, 60, 200}}};
constexpr std::array<std::uint8_t, 3> kPtvColour{255, 30, 30};
constexpr double kOverlayThreshold = 0.05;
constexpr double kOverlayAlpha = 0.5;

struct View {
  const char* name;
  // image column / row -> voxel index along the two in-plane axes
  int h_axis;
  int v_axis;
};

}  // namespace

std::vector<SliceImage> render_slices_for_prompt(const EnvState& state, double prescription_gy) {
  const Phantom& ph = *state.phantom;
  const GridGeometry& g = ph.geometry();
  const Vec3 c = mask_centroid_index(g, ph.ptv().mask);
  const int centre[3] = {static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y)),
                         static_cast<int>(std::lround(c.z))};
  const int n[3] = {g.dims.x, g.dims.y, g.dims.z};
  // Anterior (+y) and superior (+z) are drawn at the top.
  const std::array<View, 3> views{{{"axial", 0, 1}, {"coronal", 0, 2}, {"sagittal", 1, 2}}};

  std::vector<SliceImage> images;
  const int size = kPromptImageSize;
  for (const View& view : views) {
    SliceImage img{view.name, size, size, std::vector<std::uint8_t>(3 * size * size),
                   std::vector<std::uint8_t>(size * size, 0)};
    std::vector<std::size_t> voxel(static_cast<std::size_t>(size) * size);
    for (int row = 0; row < size; ++row)
      for (int col = 0; col < size; ++col) {
        int idx[3] = {centre[0], centre[1], centre[2]};
        idx[view.h_axis] = nearest_source(col, size, n[view.h_axis]);
        idx[view.v_axis] = n[view.v_axis] - 1 - nearest_source(row, size, n[view.v_axis]);
        voxel[row * size + col] = g.index(idx[0], idx[1], idx[2]);
      }

    for (std::size_t p = 0; p < voxel.size(); ++p) {
      const std::size_t v = voxel[p];
      const double grey = std::clamp((static_cast<double>(ph.ct.hu[v]) + 1000.0) / 2000.0, 0.0, 1.0) * 255.0;
      Rgb px{grey, grey, grey};
      const double rel = state.dose.dose_gy[v] / prescription_gy;
      if (rel >= kOverlayThreshold) {
        const Rgb col = ramp(rel / 1.2);
        for (int ch = 0; ch < 3; ++ch) px[ch] = (1.0 - kOverlayAlpha) * px[ch] + kOverlayAlpha * col[ch];
        img.overlay[p] = 1;
      }
      for (int ch = 0; ch < 3; ++ch) img.rgb[3 * p + ch] = static_cast<std::uint8_t>(std::lround(px[ch]));
    }

    std::size_t oar_index = 0;
    for (const Structure& s : ph.structures) {
      const auto colour = s.kind == StructureKind::ptv ? kPtvColour : kOarColours[oar_index++ % kOarColours.size()];
      auto inside = [&](int row, int col) {
        if (row < 0 || col < 0 || row >= size || col >= size) return false;
        return s.mask[voxel[row * size + col]] != 0;
      };
      for (int row = 0; row < size; ++row)
        for (int col = 0; col < size; ++col) {
          if (!inside(row, col)) continue;
          if (inside(row - 1, col) && inside(row + 1, col) && inside(row, col - 1) && inside(row, col + 1)) continue;
          const std::size_t p = static_cast<std::size_t>(row) * size + col;
          for (int ch = 0; ch < 3; ++ch) img.rgb[3 * p + ch] = colour[ch];
        }
    }
    images.push_back(std::move(img));
  }
  return images;
}

namespace {

void put_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void put_chunk(std::string& out, const char* type, const std::string& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  put_u32_be(out, static_cast<std::uint32_t>(
                      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(const SliceImage& image) {
  const std::size_t stride = 3 * static_cast<std::size_t>(image.width);
  if (image.rgb.size() != stride * image.height) throw std::invalid_argument("encode_png: pixel buffer size");

  std::string raw;
  raw.reserve((stride + 1) * image.height);
  for (int row = 0; row < image.height; ++row) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(image.rgb.data() + row * stride), stride);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("encode_png: deflate failed");
  packed.resize(packed_size);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string header;
  put_u32_be(header, static_cast<std::uint32_t>(image.width));
  put_u32_be(header, static_cast<std::uint32_t>(image.height));
  header += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB, no interlace
  put_chunk(png, "IHDR", header);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", "");
  return png;
}

void write_png(const SliceImage& image, const std::filesystem::path& path) {
  rawio::write_text(path, encode_png(image));
}

}  // namespace beamplan
