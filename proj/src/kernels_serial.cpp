#include "kernels_body.hpp"

namespace aacv::serial {

namespace {

template <typename Body>
void for_rows(std::size_t rows, Body&& body) {
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    body(static_cast<std::size_t>(r));
  }
}

}  // namespace

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a,
                         bool transpose_b) {
  const auto g = detail::matmul_geometry(a, b, transpose_a, transpose_b);
  Tensor<T> c(detail::matmul_out_shape(a, g));
  const T* ap = a.raw();
  const T* bp = b.raw();
  T* cp = c.raw();
  for_rows(g.batch * g.m, [&](std::size_t row) { detail::matmul_row(g, ap, bp, cp, row); });
  return c;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  const auto g = detail::conv_geometry(x.shape(), w.shape(), stride);
  Tensor<T> y(Shape{g.b, g.ph.out, g.pw.out, g.cout});
  const T* xp = x.raw();
  const T* wp = w.raw();
  T* yp = y.raw();
  for_rows(g.b * g.ph.out, [&](std::size_t row) { detail::conv_forward_row(g, xp, wp, yp, row); });
  return y;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dy, const Tensor<T>& w, const Shape& x_shape,
                            std::size_t stride) {
  const auto g = detail::conv_geometry(x_shape, w.shape(), stride);
  if (dy.shape() != Shape{g.b, g.ph.out, g.pw.out, g.cout}) {
    throw ShapeError("conv2d_grad_input: output gradient shape " + to_string(dy.shape()));
  }
  Tensor<T> dx(x_shape);
  const T* dyp = dy.raw();
  const T* wp = w.raw();
  T* dxp = dx.raw();
  for_rows(g.b * g.h, [&](std::size_t row) { detail::conv_grad_input_row(g, dyp, wp, dxp, row); });
  return dx;
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, const Shape& w_shape,
                             std::size_t stride) {
  const auto g = detail::conv_geometry(x.shape(), w_shape, stride);
  if (dy.shape() != Shape{g.b, g.ph.out, g.pw.out, g.cout}) {
    throw ShapeError("conv2d_grad_weight: output gradient shape " + to_string(dy.shape()));
  }
  Tensor<T> dw(w_shape);
  const T* xp = x.raw();
  const T* dyp = dy.raw();
  T* dwp = dw.raw();
  for_rows(g.k * g.k * g.cin,
           [&](std::size_t row) { detail::conv_grad_weight_row(g, xp, dyp, dwp, row); });
  return dw;
}

#define AACV_INSTANTIATE(T)                                                              \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t);            \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&, \
                                       std::size_t);                                     \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const Shape&, \
                                        std::size_t);
AACV_INSTANTIATE(float)
AACV_INSTANTIATE(double)
#undef AACV_INSTANTIATE

}  // namespace aacv::serial
