#include "fcis/psroi.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fcis {

RoiGrid project_roi(const BoxXYXY& box, int stride, int map_h, int map_w, int k) {
  if (stride < 1 || map_h < 1 || map_w < 1 || k < 1) {
    throw std::invalid_argument("project_roi: bad stride/map extent/k");
  }
  RoiGrid g;
  g.k = k;
  int x0 = static_cast<int>(std::floor(box.x1 / stride));
  int y0 = static_cast<int>(std::floor(box.y1 / stride));
  int x1 = static_cast<int>(std::ceil(box.x2 / stride));  // exclusive
  int y1 = static_cast<int>(std::ceil(box.y2 / stride));
  x0 = std::max(0, std::min(x0, map_w - 1));
  y0 = std::max(0, std::min(y0, map_h - 1));
  x1 = std::max(x0 + 1, std::min(x1, map_w));
  y1 = std::max(y0 + 1, std::min(y1, map_h));
  g.x0 = x0;
  g.y0 = y0;
  g.width = x1 - x0;
  g.height = y1 - y0;
  g.cell_col.resize(g.width);
  g.cell_row.resize(g.height);
  for (int x = 0; x < g.width; ++x) {
    g.cell_col[x] = std::min(x * k / g.width, k - 1);
  }
  for (int y = 0; y < g.height; ++y) {
    g.cell_row[y] = std::min(y * k / g.height, k - 1);
  }
  return g;
}

namespace {

int checked_groups(const std::vector<int>& map_shape, const RoiGrid& grid) {
  if (map_shape.size() != 3) {
    throw std::invalid_argument("psroi_assemble wants rank-3 score maps");
  }
  const int k2 = grid.k * grid.k;
  if (map_shape[0] % k2 != 0) {
    throw std::invalid_argument("psroi_assemble: " + std::to_string(map_shape[0]) +
                                " channels are not a multiple of k^2 = " + std::to_string(k2));
  }
  if (grid.x0 < 0 || grid.y0 < 0 || grid.width < 1 || grid.height < 1 ||
      grid.x0 + grid.width > map_shape[2] || grid.y0 + grid.height > map_shape[1]) {
    throw std::invalid_argument("psroi_assemble: grid span is outside the map");
  }
  if (static_cast<int>(grid.cell_col.size()) != grid.width ||
      static_cast<int>(grid.cell_row.size()) != grid.height) {
    throw std::invalid_argument("psroi_assemble: cell tables do not match the span");
  }
  return map_shape[0] / k2;
}

}  // namespace

namespace kernels {

template <typename T>
Tensor<T> psroi_assemble_forward(const Tensor<T>& maps, const RoiGrid& grid) {
  const int groups = checked_groups(maps.shape(), grid);
  const int k2 = grid.k * grid.k;
  const int h = maps.dim(1), w = maps.dim(2);
  Tensor<T> out({groups, grid.height, grid.width});
  const T* src = maps.data();
  T* dst = out.data();
  for (int g = 0; g < groups; ++g) {
    for (int y = 0; y < grid.height; ++y) {
      const std::int64_t row_base = std::int64_t(grid.y0 + y) * w + grid.x0;
      for (int x = 0; x < grid.width; ++x) {
        const int ch = g * k2 + grid.cell(y, x);
        *dst++ = src[std::int64_t(ch) * h * w + row_base + x];
      }
    }
  }
  return out;
}

template <typename T>
void psroi_assemble_backward(const Tensor<T>& grad_out, const RoiGrid& grid,
                             Tensor<T>& grad_maps) {
  const int groups = checked_groups(grad_maps.shape(), grid);
  const int k2 = grid.k * grid.k;
  if (grad_out.shape() != std::vector<int>{groups, grid.height, grid.width}) {
    throw std::invalid_argument("psroi_assemble_backward: gradient shape mismatch");
  }
  const int h = grad_maps.dim(1), w = grad_maps.dim(2);
  const T* src = grad_out.data();
  T* dst = grad_maps.data();
  for (int g = 0; g < groups; ++g) {
    for (int y = 0; y < grid.height; ++y) {
      const std::int64_t row_base = std::int64_t(grid.y0 + y) * w + grid.x0;
      for (int x = 0; x < grid.width; ++x) {
        const int ch = g * k2 + grid.cell(y, x);
        dst[std::int64_t(ch) * h * w + row_base + x] += *src++;
      }
    }
  }
}

template Tensor<float> psroi_assemble_forward(const Tensor<float>&, const RoiGrid&);
template Tensor<double> psroi_assemble_forward(const Tensor<double>&, const RoiGrid&);
template void psroi_assemble_backward(const Tensor<float>&, const RoiGrid&, Tensor<float>&);
template void psroi_assemble_backward(const Tensor<double>&, const RoiGrid&, Tensor<double>&);

}  // namespace kernels

template <typename T>
Var psroi_assemble(Tape<T>& t, Var maps, const RoiGrid& grid) {
  Tensor<T> out = kernels::psroi_assemble_forward(t.value(maps), grid);
  return t.emit("psroi_assemble", std::move(out),
                [maps, grid](Tape<T>& tape, const Tensor<T>& g) {
                  if (Tensor<T>* gm = tape.grad_accum_if(maps)) {
                    kernels::psroi_assemble_backward(g, grid, *gm);
                  }
                });
}

template Var psroi_assemble<float>(Tape<float>&, Var, const RoiGrid&);
template Var psroi_assemble<double>(Tape<double>&, Var, const RoiGrid&);

template <typename T>
Tensor<T> assemble_inout(const Tensor<T>& psmaps, const RoiGrid& grid, int categories) {
  Tensor<T> flat = kernels::psroi_assemble_forward(psmaps, grid);
  if (flat.dim(0) != 2 * (categories + 1)) {
    throw std::invalid_argument("assemble_inout: channel count does not match " +
                                std::to_string(categories) + " categories");
  }
  return Tensor<T>({2, categories + 1, grid.height, grid.width}, flat.values());
}

template Tensor<float> assemble_inout(const Tensor<float>&, const RoiGrid&, int);
template Tensor<double> assemble_inout(const Tensor<double>&, const RoiGrid&, int);

}  // namespace fcis
