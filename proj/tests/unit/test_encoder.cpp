#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/nn/layers.hpp"
#include "hamil/nn/resnet.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace hamil;
using namespace hamil::nn;

namespace {

// Independent count: every conv carries a norm (scale + shift); a 1x1
// projection shortcut appears whenever a block changes stride or width.
std::int64_t count_by_hand(const EncoderConfig& c) {
  const std::int64_t taps = c.volumetric ? 27 : 9;
  auto conv = [&](std::int64_t cin, std::int64_t cout, std::int64_t t) { return t * cin * cout + 2 * cout; };
  std::int64_t total = conv(1, c.stem_channels, taps);
  std::int64_t in = c.stem_channels;
  for (std::size_t s = 0; s < c.channels.size(); ++s) {
    for (int b = 0; b < c.num_blocks; ++b) {
      const std::int64_t w = c.channels[s];
      const bool down = s > 0 && b == 0;
      total += conv(in, w, taps) + conv(w, w, taps);
      if (down || in != w) total += conv(in, w, 1);
      in = w;
    }
  }
  return total + in * c.embedding_dim + c.embedding_dim;
}

EncoderConfig tiny_config(NormKind norm = NormKind::group) {
  EncoderConfig c;
  c.in_rows = 8;
  c.in_cols = 8;
  c.stem_channels = 4;
  c.channels = {4, 8};
  c.embedding_dim = 3;
  c.norm = norm;
  c.norm_groups = 2;
  c.seed = 11;
  return c;
}

template <typename T>
Activation<T> random_input(const EncoderConfig& c, int batch, std::uint64_t seed) {
  Activation<T> a;
  a.resize(1, batch, c.input_size());
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < a.data.size(); ++i) a.data(i) = static_cast<T>(n(rng));
  return a;
}

Activation<double> take(const Activation<double>& in, std::vector<int> order) {
  Activation<double> out;
  out.resize(in.channels, static_cast<int>(order.size()), in.size);
  const auto s = static_cast<Eigen::Index>(in.size.volume());
  for (std::size_t j = 0; j < order.size(); ++j)
    out.data.middleCols(static_cast<Eigen::Index>(j) * s, s) = in.data.middleCols(order[j] * s, s);
  return out;
}

double at(const Activation<double>& a, int c, int n, int z, int y, int x) {
  return a.data(c, static_cast<Eigen::Index>(n * a.size.volume() + (std::int64_t{z} * a.size.h + y) * a.size.w + x));
}

}  // namespace

TEST_CASE("parameter counts follow the topology") {
  const auto desk = EncoderConfig::desk_scale(16, 16);
  CHECK(count_by_hand(desk) == 81264);
  CHECK(parameter_count(desk) == 81264);
  CHECK(ResidualNet<float>(desk).init_params().scalar_count(true) == 81264);

  const auto r10 = EncoderConfig::resnet10(48, 48);
  CHECK(parameter_count(r10) == count_by_hand(r10));

  auto vol = EncoderConfig::desk_scale(32, 32);
  vol.volumetric = true;
  vol.in_slices = 16;
  vol.embedding_dim = 1;
  CHECK(parameter_count(vol) == count_by_hand(vol));
  CHECK(ResidualNet<float>(vol).init_params().scalar_count(true) == count_by_hand(vol));

  auto bn = desk;
  bn.norm = NormKind::batch;
  const auto store = ResidualNet<float>(bn).init_params();
  CHECK(store.scalar_count(true) == 81264);
  CHECK(store.scalar_count(false) > 81264);
}

TEST_CASE("configuration errors") {
  auto c = EncoderConfig::desk_scale(16, 16);
  c.norm_groups = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig::desk_scale(4, 16);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig::desk_scale(16, 16);
  c.channels.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(EncoderConfig::from_descriptor("mlp dims=2"), DescriptorError);
  CHECK_THROWS_AS(EncoderConfig::from_descriptor("resnet bogus=1"), DescriptorError);
}

TEST_CASE("descriptor round trip") {
  auto c = EncoderConfig::resnet10(48, 40);
  c.norm = NormKind::batch;
  c.stem_stride = 2;
  const auto back = EncoderConfig::from_descriptor(c.descriptor());
  CHECK(back.same_architecture(c));
  CHECK(back.channels == c.channels);
  CHECK(back.stem_stride == 2);
  CHECK_FALSE(EncoderConfig::desk_scale(16, 16).same_architecture(EncoderConfig::desk_scale(32, 32)));
}

TEST_CASE("initialization is deterministic in the seed") {
  auto c = EncoderConfig::desk_scale(16, 16);
  c.seed = 5;
  const auto a = ResidualNet<double>(c).init_params();
  const auto b = ResidualNet<double>(c).init_params();
  c.seed = 6;
  const auto d = ResidualNet<double>(c).init_params();
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[static_cast<int>(i)].value == b[static_cast<int>(i)].value;
    differs = differs || a[static_cast<int>(i)].value != d[static_cast<int>(i)].value;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("output shape and zero head") {
  auto c = EncoderConfig::desk_scale(16, 16);
  ResidualNet<float> net(c);
  const auto params = net.init_params();
  const auto out = net.infer(params, random_input<float>(c, 5, 1));
  CHECK(out.rows() == 64);
  CHECK(out.cols() == 5);
  CHECK(out.allFinite());

  c.zero_init_head = true;
  ResidualNet<float> zero(c);
  CHECK(zero.infer(zero.init_params(), random_input<float>(c, 3, 2)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("group-norm encoder treats samples independently") {
  const auto c = tiny_config();
  ResidualNet<double> net(c);
  const auto params = net.init_params();
  const auto batch = random_input<double>(c, 5, 3);
  const Mat<double> all = net.infer(params, batch);

  for (int j = 0; j < 5; ++j) {
    const Mat<double> one = net.infer(params, take(batch, {j}));
    CHECK((one.col(0) - all.col(j)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const Mat<double> perm = net.infer(params, take(batch, {4, 2, 0, 1, 3}));
  CHECK((perm.col(0) - all.col(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((perm.col(4) - all.col(3)).cwiseAbs().maxCoeff() < 1e-12);
  const Mat<double> dup = net.infer(params, take(batch, {1, 1}));
  CHECK(dup.col(0) == dup.col(1));
}

TEST_CASE("convolution matches direct summation") {
  Rng rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  for (bool vol : {false, true}) {
    ConvSpec spec{3, 5, vol ? Dims3{3, 3, 3} : Dims3{1, 3, 3}, vol ? Dims3{2, 2, 2} : Dims3{1, 2, 2},
                  vol ? Dims3{1, 1, 1} : Dims3{0, 1, 1}};
    Activation<double> in;
    in.resize(3, 2, vol ? Dims3{5, 7, 6} : Dims3{1, 7, 6});
    for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data(i) = n(rng);
    Vec<double> w(spec.weight_count());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = n(rng);
    Activation<double> out;
    Mat<double> scratch;
    conv_forward(in, spec, w, out, scratch);
    const Dims3 os = spec.output_size(in.size);
    CHECK(out.size == os);
    double worst = 0;
    for (int b = 0; b < 2; ++b)
      for (int o = 0; o < 5; ++o)
        for (int z = 0; z < os.d; ++z)
          for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x) {
              double s = 0;
              for (int kd = 0; kd < spec.kernel.d; ++kd)
                for (int kh = 0; kh < 3; ++kh)
                  for (int kw = 0; kw < 3; ++kw)
                    for (int i = 0; i < 3; ++i) {
                      const int iz = z * spec.stride.d - spec.padding.d + kd;
                      const int iy = y * spec.stride.h - spec.padding.h + kh;
                      const int ix = x * spec.stride.w - spec.padding.w + kw;
                      if (iz < 0 || iz >= in.size.d || iy < 0 || iy >= in.size.h || ix < 0 || ix >= in.size.w)
                        continue;
                      const int tap = (kd * 3 + kh) * 3 + kw;
                      s += w(o + 5 * (tap * 3 + i)) * at(in, i, b, iz, iy, ix);
                    }
              worst = std::max(worst, std::abs(s - at(out, o, b, z, y, x)));
            }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("group norm matches the textbook formula") {
  Rng rng(22);
  std::normal_distribution<double> n(1.0, 2.0);
  Activation<double> in;
  in.resize(6, 3, Dims3{1, 4, 5});
  for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data(i) = n(rng);
  Vec<double> gamma(6), beta(6);
  for (int c = 0; c < 6; ++c) {
    gamma(c) = 0.5 + c;
    beta(c) = -c;
  }
  Activation<double> out;
  NormCache<double> cache;
  group_norm_forward(in, 3, gamma, beta, out, cache);
  double worst = 0;
  for (int b = 0; b < 3; ++b)
    for (int g = 0; g < 3; ++g) {
      double sum = 0, sq = 0;
      const int count = 2 * 20;
      for (int c = 2 * g; c < 2 * g + 2; ++c)
        for (int s = 0; s < 20; ++s) sum += in.data(c, b * 20 + s);
      const double mean = sum / count;
      for (int c = 2 * g; c < 2 * g + 2; ++c)
        for (int s = 0; s < 20; ++s) sq += std::pow(in.data(c, b * 20 + s) - mean, 2);
      const double var = sq / count;
      for (int c = 2 * g; c < 2 * g + 2; ++c)
        for (int s = 0; s < 20; ++s) {
          const double expect = gamma(c) * (in.data(c, b * 20 + s) - mean) / std::sqrt(var + kNormEps) + beta(c);
          worst = std::max(worst, std::abs(expect - out.data(c, b * 20 + s)));
        }
    }
  CHECK(worst < 1e-12);
}

namespace {

// Central differences of <R, forward(x)> for a sample of entries of every
// trainable tensor. Entries where the estimate changes with the step size
// sit next to a ReLU kink and are skipped.
struct FdResult {
  double worst = 0;
  int checked = 0;
  int skipped = 0;
};

FdResult encoder_fd(NormKind norm, int workers) {
  const auto c = tiny_config(norm);
  ResidualNet<double> net(c);
  auto params = net.init_params();
  const auto input = random_input<double>(c, 4, 7);
  Rng rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<double> R(c.embedding_dim, 4);
  for (Eigen::Index i = 0; i < R.size(); ++i) R(i) = n(rng);

  ShardedPass<double> pass;
  forward_sharded(net, params, input, workers, true, pass);
  auto grads = params.zeros_like();
  backward_sharded(net, params, pass, R, grads);

  auto objective = [&] {
    ShardedPass<double> p;
    return (R.array() * forward_sharded(net, params, input, workers, true, p).array()).sum();
  };
  auto fd = [&](double& x, double h) {
    const double saved = x;
    x = saved + h;
    const double up = objective();
    x = saved - h;
    const double down = objective();
    x = saved;
    return (up - down) / (2 * h);
  };

  FdResult r;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& tensor = params[static_cast<int>(t)];
    if (!tensor.trainable) continue;
    const Eigen::Index stride = std::max<Eigen::Index>(1, tensor.value.size() / 6);
    for (Eigen::Index i = 0; i < tensor.value.size(); i += stride) {
      const double a = grads[static_cast<int>(t)].value(i);
      const double n1 = fd(tensor.value(i), 1e-5);
      const double n2 = fd(tensor.value(i), 5e-6);
      if (std::abs(n1 - n2) > 1e-6 * std::max(1.0, std::abs(n1))) {
        ++r.skipped;
        continue;
      }
      r.worst = std::max(r.worst, std::abs(a - n1) / std::max({std::abs(a), std::abs(n1), 1e-6}));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace

TEST_CASE("encoder gradients match central differences") {
  for (auto norm : {NormKind::group, NormKind::batch}) {
    CAPTURE(static_cast<int>(norm));
    const auto r = encoder_fd(norm, 1);
    CHECK(r.checked > 60);
    CHECK(r.skipped < r.checked / 5);
    CHECK(r.worst < 1e-4);
  }
  const auto sharded = encoder_fd(NormKind::group, 3);
  CHECK(sharded.worst < 1e-4);
}

TEST_CASE("sharded passes match the single-shard pass") {
  const auto c = tiny_config();
  ResidualNet<double> net(c);
  const auto params = net.init_params();
  const auto input = random_input<double>(c, 7, 9);
  Mat<double> R = Mat<double>::Ones(c.embedding_dim, 7);

  ShardedPass<double> one, three;
  const Mat<double> a = forward_sharded(net, params, input, 1, true, one);
  const Mat<double> b = forward_sharded(net, params, input, 3, true, three);
  CHECK(three.shards.size() == 3);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  auto ga = params.zeros_like();
  auto gb = params.zeros_like();
  backward_sharded(net, params, one, R, ga);
  backward_sharded(net, params, three, R, gb);
  double worst = 0;
  for (std::size_t t = 0; t < ga.size(); ++t)
    worst = std::max(worst, (ga[static_cast<int>(t)].value - gb[static_cast<int>(t)].value).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-10);
  CHECK((infer_sharded(net, params, input, 4) - net.infer(params, input)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every trainable tensor receives gradient") {
  auto c = EncoderConfig::desk_scale(16, 16);
  c.seed = 3;
  ResidualNet<float> net(c);
  const auto params = net.init_params();
  typename ResidualNet<float>::Workspace ws;
  const Mat<float> out = net.forward(params, random_input<float>(c, 4, 10), ws, true);
  auto grads = params.zeros_like();
  net.backward(params, ws, Mat<float>::Ones(out.rows(), out.cols()), grads);
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const auto& g = grads[static_cast<int>(t)];
    CAPTURE(g.name);
    if (g.trainable) CHECK(g.value.norm() > 0.0f);
  }
}

TEST_CASE("batch norm running statistics move toward batch statistics") {
  auto c = tiny_config(NormKind::batch);
  ResidualNet<double> net(c);
  auto params = net.init_params();
  typename ResidualNet<double>::Workspace ws;
  net.forward(params, random_input<double>(c, 4, 12), ws, true);
  const int rm = params.find("stem.norm.running_mean");
  REQUIRE(rm >= 0);
  const Vec<double> before = params[rm].value;
  const typename ResidualNet<double>::Workspace* passes[] = {&ws};
  net.update_running_stats(params, passes);
  CHECK((params[rm].value - (0.9 * before + 0.1 * ws.stem.norm.mean)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer description of the volumetric variant") {
  auto c = EncoderConfig::desk_scale(32, 32);
  c.volumetric = true;
  c.in_slices = 8;
  c.embedding_dim = 1;
  ResidualNet<float> net(c);
  const auto layers = net.describe_layers(c.input_size());
  CHECK(layers.front().kind == "conv");
  CHECK(layers.front().kernel == Dims3{3, 3, 3});
  CHECK(layers.back().kind == "linear");
  CHECK(layers.back().out_channels == 1);
  const auto out = net.infer(net.init_params(), random_input<float>(c, 2, 13));
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 2);
}
