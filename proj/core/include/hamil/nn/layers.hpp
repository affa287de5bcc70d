#pragma once

#include "hamil/common/types.hpp"

#include <cstdint>

namespace hamil::nn {

// Feature map for a batch of samples. Column j = n * size.volume() + spatial
// index; each column holds the `channels` values of one position, so the
// layout is channels-last and a convolution is a single GEMM over columns.
template <typename T>
struct Activation {
  int channels = 0;
  int batch = 0;
  Dims3 size;
  Mat<T> data;

  std::int64_t positions() const { return std::int64_t{batch} * size.volume(); }
  void resize(int c, int n, Dims3 s) {
    channels = c;
    batch = n;
    size = s;
    data.resize(c, static_cast<Eigen::Index>(positions()));
  }
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  Dims3 kernel{1, 3, 3};
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 1, 1};

  Dims3 output_size(Dims3 in) const;
  std::int64_t taps() const { return kernel.volume(); }
  std::int64_t weight_count() const { return std::int64_t{out_channels} * taps() * in_channels; }
  bool pointwise() const;
};

// Weight layout: out_channels x (tap * in_channels + in_channel), column-major.
template <typename T>
void im2col(const Activation<T>& in, const ConvSpec& spec, Dims3 out_size, Mat<T>& col);
template <typename T>
void col2im_add(const Mat<T>& col, const ConvSpec& spec, Dims3 out_size, Activation<T>& d_in);

template <typename T>
void conv_forward(const Activation<T>& in, const ConvSpec& spec, const Vec<T>& weight, Activation<T>& out,
                  Mat<T>& scratch);
// Accumulates into d_weight; writes d_in when non-null.
template <typename T>
void conv_backward(const Activation<T>& in, const ConvSpec& spec, const Vec<T>& weight, const Mat<T>& d_out,
                   Vec<T>& d_weight, Activation<T>* d_in, Mat<T>& scratch);

enum class NormKind { group, batch };

template <typename T>
struct NormCache {
  Mat<T> xhat;
  Vec<T> rstd;  // per (sample, group) for group norm, per channel for batch norm
  Vec<T> mean;
  Vec<T> var;
};

inline constexpr double kNormEps = 1e-5;

template <typename T>
void group_norm_forward(const Activation<T>& in, int groups, const Vec<T>& gamma, const Vec<T>& beta,
                        Activation<T>& out, NormCache<T>& cache);
template <typename T>
void group_norm_backward(const Activation<T>& in, int groups, const NormCache<T>& cache, const Vec<T>& gamma,
                         const Mat<T>& d_out, Vec<T>& d_gamma, Vec<T>& d_beta, Mat<T>& d_in);

// Training mode normalizes with batch statistics (recorded in the cache for
// the caller to fold into the running estimates); inference mode uses the
// running estimates.
template <typename T>
void batch_norm_forward(const Activation<T>& in, const Vec<T>& gamma, const Vec<T>& beta,
                        const Vec<T>& running_mean, const Vec<T>& running_var, bool training,
                        Activation<T>& out, NormCache<T>& cache);
template <typename T>
void batch_norm_backward(const NormCache<T>& cache, const Vec<T>& gamma, const Mat<T>& d_out, Vec<T>& d_gamma,
                         Vec<T>& d_beta, Mat<T>& d_in);

template <typename T>
void relu_inplace(Mat<T>& x);
// Zeroes gradient entries where the forward output was not positive.
template <typename T>
void relu_backward_inplace(const Mat<T>& output, Mat<T>& grad);

// channels x (batch * S) -> channels x batch
template <typename T>
Mat<T> global_average_pool(const Activation<T>& in);
template <typename T>
void global_average_pool_backward(const Mat<T>& d_out, Dims3 size, Mat<T>& d_in);

}  // namespace hamil::nn
