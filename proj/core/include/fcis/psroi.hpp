#pragma once

#include <vector>

#include "fcis/geometry.hpp"
#include "fcis/ops.hpp"
#include "fcis/tape.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

// An ROI projected onto the score map: an integer pixel span plus the k x k
// cell index of every span pixel. The cell tables are separable because the
// partition is axis-aligned.
struct RoiGrid {
  int x0 = 0, y0 = 0;       // inclusive start, map pixels
  int width = 0, height = 0;
  int k = 1;
  std::vector<int> cell_col;  // width entries in [0, k)
  std::vector<int> cell_row;  // height entries in [0, k)

  int cell(int y, int x) const { return cell_row[y] * k + cell_col[x]; }
};

// Outward rounding (floor start, ceil end) never drops boundary evidence;
// the span is clipped to the map and repaired to at least one pixel. Cell of
// span pixel (x, y) is floor(k*(x-x0)/width) (and likewise for rows), edge
// pixels clamped into [0, k).
RoiGrid project_roi(const BoxXYXY& box, int stride, int map_h, int map_w, int k);

namespace kernels {

// Pure gather: out[g, y, x] = maps[g*k^2 + cell(y, x), y0+y, x0+x] for every
// channel group g = maps.dim(0) / k^2. No interpolation anywhere.
template <typename T>
Tensor<T> psroi_assemble_forward(const Tensor<T>& maps, const RoiGrid& grid);

// Scatter-add adjoint; accumulates into grad_maps.
template <typename T>
void psroi_assemble_backward(const Tensor<T>& grad_out, const RoiGrid& grid,
                             Tensor<T>& grad_maps);

}  // namespace kernels

template <typename T>
Var psroi_assemble(Tape<T>& t, Var maps, const RoiGrid& grid);

// Inside/outside view of the gather: [2, C+1, rh, rw] (same data, the group
// axis split as inout-major, category-minor).
template <typename T>
Tensor<T> assemble_inout(const Tensor<T>& psmaps, const RoiGrid& grid, int categories);

}  // namespace fcis
