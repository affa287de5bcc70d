#include "hamil/nn/layers.hpp"

#include "hamil/common/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hamil::nn {

Dims3 ConvSpec::output_size(Dims3 in) const {
  auto axis = [](int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; };
  Dims3 out{axis(in.d, kernel.d, stride.d, padding.d), axis(in.h, kernel.h, stride.h, padding.h),
            axis(in.w, kernel.w, stride.w, padding.w)};
  if (out.d < 1 || out.h < 1 || out.w < 1) throw ConfigError("convolution input too small for kernel");
  return out;
}

bool ConvSpec::pointwise() const {
  return kernel == Dims3{1, 1, 1} && stride == Dims3{1, 1, 1} && padding == Dims3{0, 0, 0};
}

template <typename T>
void im2col(const Activation<T>& in, const ConvSpec& spec, Dims3 out_size, Mat<T>& col) {
  const int cin = in.channels;
  const Dims3 is = in.size;
  const std::int64_t in_s = is.volume();
  const std::int64_t out_s = out_size.volume();
  const auto rows = static_cast<Eigen::Index>(spec.taps() * cin);
  col.resize(rows, static_cast<Eigen::Index>(in.batch * out_s));
  const T* src = in.data.data();
  T* dst = col.data();
  for (int n = 0; n < in.batch; ++n) {
    for (int od = 0; od < out_size.d; ++od) {
      for (int oh = 0; oh < out_size.h; ++oh) {
        for (int ow = 0; ow < out_size.w; ++ow) {
          T* out_col = dst + (n * out_s + (std::int64_t{od} * out_size.h + oh) * out_size.w + ow) * rows;
          int tap = 0;
          for (int kd = 0; kd < spec.kernel.d; ++kd) {
            const int id = od * spec.stride.d - spec.padding.d + kd;
            for (int kh = 0; kh < spec.kernel.h; ++kh) {
              const int ih = oh * spec.stride.h - spec.padding.h + kh;
              for (int kw = 0; kw < spec.kernel.w; ++kw, ++tap) {
                const int iw = ow * spec.stride.w - spec.padding.w + kw;
                T* slot = out_col + std::int64_t{tap} * cin;
                if (id < 0 || id >= is.d || ih < 0 || ih >= is.h || iw < 0 || iw >= is.w) {
                  std::fill(slot, slot + cin, T(0));
                } else {
                  const T* px = src + (n * in_s + (std::int64_t{id} * is.h + ih) * is.w + iw) * cin;
                  std::memcpy(slot, px, sizeof(T) * static_cast<std::size_t>(cin));
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& col, const ConvSpec& spec, Dims3 out_size, Activation<T>& d_in) {
  const int cin = d_in.channels;
  const Dims3 is = d_in.size;
  const std::int64_t in_s = is.volume();
  const std::int64_t out_s = out_size.volume();
  const std::int64_t rows = col.rows();
  const T* src = col.data();
  T* dst = d_in.data.data();
  for (int n = 0; n < d_in.batch; ++n) {
    for (int od = 0; od < out_size.d; ++od) {
      for (int oh = 0; oh < out_size.h; ++oh) {
        for (int ow = 0; ow < out_size.w; ++ow) {
          const T* out_col = src + (n * out_s + (std::int64_t{od} * out_size.h + oh) * out_size.w + ow) * rows;
          int tap = 0;
          for (int kd = 0; kd < spec.kernel.d; ++kd) {
            const int id = od * spec.stride.d - spec.padding.d + kd;
            for (int kh = 0; kh < spec.kernel.h; ++kh) {
              const int ih = oh * spec.stride.h - spec.padding.h + kh;
              for (int kw = 0; kw < spec.kernel.w; ++kw, ++tap) {
                const int iw = ow * spec.stride.w - spec.padding.w + kw;
                if (id < 0 || id >= is.d || ih < 0 || ih >= is.h || iw < 0 || iw >= is.w) continue;
                const T* slot = out_col + std::int64_t{tap} * cin;
                T* px = dst + (n * in_s + (std::int64_t{id} * is.h + ih) * is.w + iw) * cin;
                for (int c = 0; c < cin; ++c) px[c] += slot[c];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const Activation<T>& in, const ConvSpec& spec, const Vec<T>& weight, Activation<T>& out,
                  Mat<T>& scratch) {
  require(in.channels == spec.in_channels, "conv input channel mismatch");
  const Dims3 os = spec.output_size(in.size);
  out.resize(spec.out_channels, in.batch, os);
  Eigen::Map<const Mat<T>> w(weight.data(), spec.out_channels, spec.taps() * spec.in_channels);
  if (spec.pointwise()) {
    out.data.noalias() = w * in.data;
  } else {
    im2col(in, spec, os, scratch);
    out.data.noalias() = w * scratch;
  }
}

template <typename T>
void conv_backward(const Activation<T>& in, const ConvSpec& spec, const Vec<T>& weight, const Mat<T>& d_out,
                   Vec<T>& d_weight, Activation<T>* d_in, Mat<T>& scratch) {
  const Dims3 os = spec.output_size(in.size);
  const auto k = static_cast<Eigen::Index>(spec.taps() * spec.in_channels);
  Eigen::Map<const Mat<T>> w(weight.data(), spec.out_channels, k);
  Eigen::Map<Mat<T>> dw(d_weight.data(), spec.out_channels, k);
  if (spec.pointwise()) {
    dw.noalias() += d_out * in.data.transpose();
    if (d_in) {
      d_in->resize(in.channels, in.batch, in.size);
      d_in->data.noalias() = w.transpose() * d_out;
    }
    return;
  }
  im2col(in, spec, os, scratch);
  dw.noalias() += d_out * scratch.transpose();
  if (d_in) {
    scratch.noalias() = w.transpose() * d_out;
    d_in->resize(in.channels, in.batch, in.size);
    d_in->data.setZero();
    col2im_add(scratch, spec, os, *d_in);
  }
}

template <typename T>
void group_norm_forward(const Activation<T>& in, int groups, const Vec<T>& gamma, const Vec<T>& beta,
                        Activation<T>& out, NormCache<T>& cache) {
  const int c = in.channels;
  require(groups >= 1 && c % groups == 0, "group count must divide channels");
  const int cg = c / groups;
  const auto s = static_cast<Eigen::Index>(in.size.volume());
  out.resize(c, in.batch, in.size);
  cache.xhat.resize(c, in.data.cols());
  cache.rstd.resize(std::int64_t{in.batch} * groups);
  for (int n = 0; n < in.batch; ++n) {
    for (int g = 0; g < groups; ++g) {
      const auto x = in.data.block(g * cg, n * s, cg, s);
      const double mean = static_cast<double>(x.sum()) / static_cast<double>(x.size());
      const double var = static_cast<double>((x.array() - T(mean)).square().sum()) / static_cast<double>(x.size());
      const T rstd = T(1.0 / std::sqrt(var + kNormEps));
      cache.rstd(n * groups + g) = rstd;
      cache.xhat.block(g * cg, n * s, cg, s) = (x.array() - T(mean)) * rstd;
    }
  }
  out.data = (cache.xhat.array().colwise() * gamma.array()).colwise() + beta.array();
}

template <typename T>
void group_norm_backward(const Activation<T>& in, int groups, const NormCache<T>& cache, const Vec<T>& gamma,
                         const Mat<T>& d_out, Vec<T>& d_gamma, Vec<T>& d_beta, Mat<T>& d_in) {
  const int c = in.channels;
  const int cg = c / groups;
  const auto s = static_cast<Eigen::Index>(in.size.volume());
  d_gamma += (d_out.array() * cache.xhat.array()).rowwise().sum().matrix();
  d_beta += d_out.rowwise().sum();
  d_in.resize(c, d_out.cols());
  const T m = T(cg) * T(s);
  for (int n = 0; n < in.batch; ++n) {
    for (int g = 0; g < groups; ++g) {
      const auto dy = d_out.block(g * cg, n * s, cg, s);
      const auto xh = cache.xhat.block(g * cg, n * s, cg, s);
      const Mat<T> dxh = dy.array().colwise() * gamma.segment(g * cg, cg).array();
      const T sum_dxh = dxh.sum();
      const T sum_dxh_xh = (dxh.array() * xh.array()).sum();
      const T rstd = cache.rstd(n * groups + g);
      d_in.block(g * cg, n * s, cg, s) = (rstd / m) * (m * dxh.array() - sum_dxh - xh.array() * sum_dxh_xh);
    }
  }
}

template <typename T>
void batch_norm_forward(const Activation<T>& in, const Vec<T>& gamma, const Vec<T>& beta,
                        const Vec<T>& running_mean, const Vec<T>& running_var, bool training,
                        Activation<T>& out, NormCache<T>& cache) {
  out.resize(in.channels, in.batch, in.size);
  if (training) {
    const auto m = static_cast<double>(in.data.cols());
    cache.mean = (in.data.rowwise().sum().template cast<double>() / m).template cast<T>();
    cache.var = ((in.data.colwise() - cache.mean).array().square().rowwise().sum().template cast<double>() / m)
                    .template cast<T>()
                    .matrix();
  } else {
    cache.mean = running_mean;
    cache.var = running_var;
  }
  cache.rstd = (cache.var.array() + T(kNormEps)).rsqrt();
  cache.xhat = (in.data.colwise() - cache.mean).array().colwise() * cache.rstd.array();
  out.data = (cache.xhat.array().colwise() * gamma.array()).colwise() + beta.array();
}

template <typename T>
void batch_norm_backward(const NormCache<T>& cache, const Vec<T>& gamma, const Mat<T>& d_out, Vec<T>& d_gamma,
                         Vec<T>& d_beta, Mat<T>& d_in) {
  const T m = T(d_out.cols());
  const Vec<T> sum_dy = d_out.rowwise().sum();
  const Vec<T> sum_dy_xh = (d_out.array() * cache.xhat.array()).rowwise().sum();
  d_gamma += sum_dy_xh;
  d_beta += sum_dy;
  const Vec<T> scale = (gamma.array() * cache.rstd.array()) / m;
  d_in = ((m * d_out.array()).colwise() - sum_dy.array() - cache.xhat.array().colwise() * sum_dy_xh.array())
             .colwise() *
         scale.array();
}

template <typename T>
void relu_inplace(Mat<T>& x) {
  x = x.cwiseMax(T(0));
}

template <typename T>
void relu_backward_inplace(const Mat<T>& output, Mat<T>& grad) {
  grad = (output.array() > T(0)).select(grad, T(0));
}

template <typename T>
Mat<T> global_average_pool(const Activation<T>& in) {
  const auto s = static_cast<Eigen::Index>(in.size.volume());
  Mat<T> out(in.channels, in.batch);
  for (int n = 0; n < in.batch; ++n) out.col(n) = in.data.middleCols(n * s, s).rowwise().mean();
  return out;
}

template <typename T>
void global_average_pool_backward(const Mat<T>& d_out, Dims3 size, Mat<T>& d_in) {
  const auto s = static_cast<Eigen::Index>(size.volume());
  d_in.resize(d_out.rows(), d_out.cols() * s);
  for (Eigen::Index n = 0; n < d_out.cols(); ++n)
    d_in.middleCols(n * s, s) = (d_out.col(n) / T(s)).replicate(1, s);
}

#define HAMIL_INSTANTIATE(T)                                                                                   \
  template void im2col<T>(const Activation<T>&, const ConvSpec&, Dims3, Mat<T>&);                             \
  template void col2im_add<T>(const Mat<T>&, const ConvSpec&, Dims3, Activation<T>&);                         \
  template void conv_forward<T>(const Activation<T>&, const ConvSpec&, const Vec<T>&, Activation<T>&, Mat<T>&); \
  template void conv_backward<T>(const Activation<T>&, const ConvSpec&, const Vec<T>&, const Mat<T>&, Vec<T>&,  \
                                 Activation<T>*, Mat<T>&);                                                     \
  template void group_norm_forward<T>(const Activation<T>&, int, const Vec<T>&, const Vec<T>&, Activation<T>&,  \
                                      NormCache<T>&);                                                          \
  template void group_norm_backward<T>(const Activation<T>&, int, const NormCache<T>&, const Vec<T>&,           \
                                       const Mat<T>&, Vec<T>&, Vec<T>&, Mat<T>&);                              \
  template void batch_norm_forward<T>(const Activation<T>&, const Vec<T>&, const Vec<T>&, const Vec<T>&,        \
                                      const Vec<T>&, bool, Activation<T>&, NormCache<T>&);                     \
  template void batch_norm_backward<T>(const NormCache<T>&, const Vec<T>&, const Mat<T>&, Vec<T>&, Vec<T>&,     \
                                       Mat<T>&);                                                               \
  template void relu_inplace<T>(Mat<T>&);                                                                      \
  template void relu_backward_inplace<T>(const Mat<T>&, Mat<T>&);                                              \
  template Mat<T> global_average_pool<T>(const Activation<T>&);                                                \
  template void global_average_pool_backward<T>(const Mat<T>&, Dims3, Mat<T>&);

HAMIL_INSTANTIATE(float)
HAMIL_INSTANTIATE(double)
#undef HAMIL_INSTANTIATE

}  // namespace hamil::nn
