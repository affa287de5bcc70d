#include "hamil/nn/resnet.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/common/text_format.hpp"

#include <cmath>
#include <thread>

namespace hamil::nn {

void EncoderConfig::validate() const {
  if (in_rows < 8 || in_cols < 8) throw ConfigError("encoder input must be at least 8x8");
  if (volumetric && in_slices < 1) throw ConfigError("volumetric encoder needs at least one slice");
  if (!volumetric && in_slices != 1) throw ConfigError("2D encoder expects in_slices = 1");
  if (channels.empty()) throw ConfigError("encoder needs at least one stage");
  for (int c : channels)
    if (c <= 0) throw ConfigError("stage widths must be positive");
  if (stem_channels <= 0) throw ConfigError("stem width must be positive");
  if (stem_stride < 1) throw ConfigError("stem stride must be >= 1");
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (!volumetric && embedding_dim < 2) throw ConfigError("embedding dimension must be >= 2");
  if (embedding_dim < 1) throw ConfigError("output width must be >= 1");
  if (norm == NormKind::group) {
    if (norm_groups < 1) throw ConfigError("norm_groups must be >= 1");
    if (stem_channels % norm_groups != 0) throw ConfigError("norm_groups must divide every width");
    for (int c : channels)
      if (c % norm_groups != 0) throw ConfigError("norm_groups must divide every width");
  }
}

std::string EncoderConfig::descriptor() const {
  std::string chans;
  for (std::size_t i = 0; i < channels.size(); ++i) chans += (i ? "," : "") + std::to_string(channels[i]);
  return std::string("resnet ") + (volumetric ? "dims=3" : "dims=2") + " input=" + std::to_string(in_slices) + "x" +
         std::to_string(in_rows) + "x" + std::to_string(in_cols) + " stem=" + std::to_string(stem_channels) +
         " stem_stride=" + std::to_string(stem_stride) + " stages=" + chans +
         " blocks=" + std::to_string(num_blocks) + " out=" + std::to_string(embedding_dim) +
         " norm=" + (norm == NormKind::group ? "group" : "batch") + " groups=" + std::to_string(norm_groups);
}

EncoderConfig EncoderConfig::from_descriptor(const std::string& text) {
  const auto toks = split_ws(text);
  if (toks.empty() || toks[0] != "resnet") throw DescriptorError("not a resnet descriptor: " + text);
  EncoderConfig cfg;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    const auto eq = toks[i].find('=');
    if (eq == std::string::npos) throw DescriptorError("malformed descriptor token: " + toks[i]);
    const std::string key = toks[i].substr(0, eq);
    const std::string val = toks[i].substr(eq + 1);
    if (key == "dims") {
      cfg.volumetric = val == "3";
    } else if (key == "input") {
      const auto parts = split(val, 'x');
      if (parts.size() != 3) throw DescriptorError("bad input extent: " + val);
      cfg.in_slices = static_cast<int>(parse_int(parts[0], "input"));
      cfg.in_rows = static_cast<int>(parse_int(parts[1], "input"));
      cfg.in_cols = static_cast<int>(parse_int(parts[2], "input"));
    } else if (key == "stem") {
      cfg.stem_channels = static_cast<int>(parse_int(val, key));
    } else if (key == "stem_stride") {
      cfg.stem_stride = static_cast<int>(parse_int(val, key));
    } else if (key == "stages") {
      cfg.channels.clear();
      for (const auto& p : split(val, ',')) cfg.channels.push_back(static_cast<int>(parse_int(p, key)));
    } else if (key == "blocks") {
      cfg.num_blocks = static_cast<int>(parse_int(val, key));
    } else if (key == "out") {
      cfg.embedding_dim = static_cast<int>(parse_int(val, key));
    } else if (key == "norm") {
      if (val != "group" && val != "batch") throw DescriptorError("unknown norm kind: " + val);
      cfg.norm = val == "group" ? NormKind::group : NormKind::batch;
    } else if (key == "groups") {
      cfg.norm_groups = static_cast<int>(parse_int(val, key));
    } else {
      throw DescriptorError("unknown descriptor key: " + key);
    }
  }
  return cfg;
}

bool EncoderConfig::same_architecture(const EncoderConfig& other) const {
  return descriptor() == other.descriptor();
}

EncoderConfig EncoderConfig::desk_scale(int rows, int cols) {
  EncoderConfig cfg;
  cfg.in_rows = rows;
  cfg.in_cols = cols;
  return cfg;
}

EncoderConfig EncoderConfig::resnet10(int rows, int cols) {
  EncoderConfig cfg = desk_scale(rows, cols);
  cfg.channels = {16, 32, 64, 128};
  return cfg;
}

template <typename T>
typename ResidualNet<T>::ConvUnit ResidualNet<T>::make_unit(ParamStore<T>& layout, const std::string& name,
                                                             ConvSpec spec) const {
  ConvUnit unit;
  unit.spec = spec;
  const Dims3 k = spec.kernel;
  unit.weight = layout.add(name + ".conv.weight", {spec.out_channels, k.d, k.h, k.w, spec.in_channels});
  unit.norm.gamma = layout.add(name + ".norm.gamma", {spec.out_channels});
  unit.norm.beta = layout.add(name + ".norm.beta", {spec.out_channels});
  if (config_.norm == NormKind::batch) {
    unit.norm.running_mean = layout.add(name + ".norm.running_mean", {spec.out_channels}, false);
    unit.norm.running_var = layout.add(name + ".norm.running_var", {spec.out_channels}, false);
  }
  return unit;
}

template <typename T>
ResidualNet<T>::ResidualNet(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const bool vol = config_.volumetric;
  const Dims3 k3 = vol ? Dims3{3, 3, 3} : Dims3{1, 3, 3};
  const Dims3 pad3 = vol ? Dims3{1, 1, 1} : Dims3{0, 1, 1};
  auto stride_of = [&](int s) { return vol ? Dims3{s, s, s} : Dims3{1, s, s}; };

  stem_ = make_unit(layout_, "stem", ConvSpec{1, config_.stem_channels, k3, stride_of(config_.stem_stride), pad3});
  int in_ch = config_.stem_channels;
  for (std::size_t s = 0; s < config_.channels.size(); ++s) {
    const int width = config_.channels[s];
    for (int b = 0; b < config_.num_blocks; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      Block block;
      block.conv1 = make_unit(layout_, name + ".conv1", ConvSpec{in_ch, width, k3, stride_of(stride), pad3});
      block.conv2 = make_unit(layout_, name + ".conv2", ConvSpec{width, width, k3, stride_of(1), pad3});
      if (stride != 1 || in_ch != width) {
        block.shortcut = make_unit(layout_, name + ".shortcut",
                                   ConvSpec{in_ch, width, Dims3{1, 1, 1}, stride_of(stride), Dims3{0, 0, 0}});
      }
      blocks_.push_back(block);
      in_ch = width;
    }
  }
  head_weight_ = layout_.add("head.weight", {config_.embedding_dim, in_ch});
  head_bias_ = layout_.add("head.bias", {config_.embedding_dim});
  // Fail early if the input is too small for the downsampling chain.
  (void)describe_layers(config_.input_size());
}

template <typename T>
ParamStore<T> ResidualNet<T>::init_params() const {
  ParamStore<T> params = layout_;
  Rng rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_conv = [&](const ConvUnit& u) {
    const double std = std::sqrt(2.0 / static_cast<double>(u.spec.taps() * u.spec.in_channels));
    for (auto& v : params[u.weight].value) v = static_cast<T>(std * normal(rng));
    params[u.norm.gamma].value.setOnes();
    params[u.norm.beta].value.setZero();
    if (u.norm.running_var >= 0) params[u.norm.running_var].value.setOnes();
  };
  fill_conv(stem_);
  for (const auto& b : blocks_) {
    fill_conv(b.conv1);
    fill_conv(b.conv2);
    if (b.shortcut) fill_conv(*b.shortcut);
  }
  if (config_.zero_init_head) {
    params[head_weight_].value.setZero();
  } else {
    const double std = std::sqrt(1.0 / static_cast<double>(params[head_weight_].shape[1]));
    for (auto& v : params[head_weight_].value) v = static_cast<T>(std * normal(rng));
  }
  params[head_bias_].value.setZero();
  return params;
}

template <typename T>
std::vector<LayerInfo> ResidualNet<T>::describe_layers(Dims3 input) const {
  std::vector<LayerInfo> out;
  auto add_unit = [&](const ConvUnit& u, Dims3 in, bool relu) {
    const Dims3 os = u.spec.output_size(in);
    out.push_back({"conv", u.spec.in_channels, u.spec.out_channels, u.spec.kernel, os});
    out.push_back({"norm", u.spec.out_channels, u.spec.out_channels, {1, 1, 1}, os});
    if (relu) out.push_back({"relu", u.spec.out_channels, u.spec.out_channels, {1, 1, 1}, os});
    return os;
  };
  Dims3 cur = add_unit(stem_, input, true);
  for (const auto& b : blocks_) {
    const Dims3 mid = add_unit(b.conv1, cur, true);
    const Dims3 o = add_unit(b.conv2, mid, false);
    if (b.shortcut) add_unit(*b.shortcut, cur, false);
    out.push_back({"add", b.conv2.spec.out_channels, b.conv2.spec.out_channels, {1, 1, 1}, o});
    out.push_back({"relu", b.conv2.spec.out_channels, b.conv2.spec.out_channels, {1, 1, 1}, o});
    cur = o;
  }
  const int c = blocks_.empty() ? stem_.spec.out_channels : blocks_.back().conv2.spec.out_channels;
  out.push_back({"pool", c, c, {1, 1, 1}, {1, 1, 1}});
  out.push_back({"linear", c, config_.embedding_dim, {1, 1, 1}, {1, 1, 1}});
  return out;
}

template <typename T>
void ResidualNet<T>::unit_forward(const ParamStore<T>& params, const ConvUnit& unit, const Activation<T>& in,
                                  UnitCache& cache, Mat<T>& scratch, bool training) const {
  conv_forward(in, unit.spec, params[unit.weight].value, cache.conv_out, scratch);
  if (config_.norm == NormKind::group) {
    group_norm_forward(cache.conv_out, config_.norm_groups, params[unit.norm.gamma].value,
                       params[unit.norm.beta].value, cache.out, cache.norm);
  } else {
    batch_norm_forward(cache.conv_out, params[unit.norm.gamma].value, params[unit.norm.beta].value,
                       params[unit.norm.running_mean].value, params[unit.norm.running_var].value, training,
                       cache.out, cache.norm);
  }
}

template <typename T>
void ResidualNet<T>::unit_backward(const ParamStore<T>& params, const ConvUnit& unit, const Activation<T>& in,
                                   const UnitCache& cache, Mat<T> d_norm_out, ParamStore<T>& grads,
                                   Activation<T>* d_in, Mat<T>& scratch) const {
  Mat<T> d_conv;
  if (config_.norm == NormKind::group) {
    group_norm_backward(cache.conv_out, config_.norm_groups, cache.norm, params[unit.norm.gamma].value, d_norm_out,
                        grads[unit.norm.gamma].value, grads[unit.norm.beta].value, d_conv);
  } else {
    batch_norm_backward(cache.norm, params[unit.norm.gamma].value, d_norm_out, grads[unit.norm.gamma].value,
                        grads[unit.norm.beta].value, d_conv);
  }
  conv_backward(in, unit.spec, params[unit.weight].value, d_conv, grads[unit.weight].value, d_in, scratch);
}

template <typename T>
Mat<T> ResidualNet<T>::forward(const ParamStore<T>& params, const Activation<T>& input, Workspace& ws,
                               bool training) const {
  require(input.channels == 1, "encoder input must be single-channel");
  require(input.size == config_.input_size(), "encoder input extent mismatch");
  ws.training = training;
  ws.input = input;
  unit_forward(params, stem_, ws.input, ws.stem, ws.scratch, training);
  relu_inplace(ws.stem.out.data);
  ws.blocks.resize(blocks_.size());
  const Activation<T>* cur = &ws.stem.out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    BlockCache& c = ws.blocks[i];
    unit_forward(params, b.conv1, *cur, c.conv1, ws.scratch, training);
    relu_inplace(c.conv1.out.data);
    unit_forward(params, b.conv2, c.conv1.out, c.conv2, ws.scratch, training);
    c.out = c.conv2.out;
    if (b.shortcut) {
      unit_forward(params, *b.shortcut, *cur, c.shortcut, ws.scratch, training);
      c.out.data += c.shortcut.out.data;
    } else {
      c.out.data += cur->data;
    }
    relu_inplace(c.out.data);
    cur = &c.out;
  }
  ws.pooled = global_average_pool(*cur);
  Eigen::Map<const Mat<T>> w(params[head_weight_].value.data(), config_.embedding_dim, ws.pooled.rows());
  Mat<T> out = w * ws.pooled;
  out.colwise() += params[head_bias_].value;
  return out;
}

template <typename T>
void ResidualNet<T>::backward(const ParamStore<T>& params, const Workspace& ws, const Mat<T>& d_out,
                              ParamStore<T>& grads) const {
  require(d_out.rows() == config_.embedding_dim && d_out.cols() == ws.pooled.cols(), "encoder gradient shape");
  Eigen::Map<const Mat<T>> w(params[head_weight_].value.data(), config_.embedding_dim, ws.pooled.rows());
  Eigen::Map<Mat<T>> dw(grads[head_weight_].value.data(), config_.embedding_dim, ws.pooled.rows());
  dw.noalias() += d_out * ws.pooled.transpose();
  grads[head_bias_].value += d_out.rowwise().sum();
  const Mat<T> d_pooled = w.transpose() * d_out;

  const Activation<T>& last = blocks_.empty() ? ws.stem.out : ws.blocks.back().out;
  Mat<T> d_cur;
  global_average_pool_backward(d_pooled, last.size, d_cur);

  Activation<T> d_main;
  Activation<T> d_short;
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const Block& b = blocks_[i];
    const BlockCache& c = ws.blocks[i];
    const Activation<T>& in = i == 0 ? ws.stem.out : ws.blocks[i - 1].out;
    relu_backward_inplace(c.out.data, d_cur);
    // d_cur now holds the gradient at the residual sum.
    Activation<T> d_mid;
    unit_backward(params, b.conv2, c.conv1.out, c.conv2, d_cur, grads, &d_mid, ws.scratch);
    relu_backward_inplace(c.conv1.out.data, d_mid.data);
    unit_backward(params, b.conv1, in, c.conv1, std::move(d_mid.data), grads, &d_main, ws.scratch);
    if (b.shortcut) {
      unit_backward(params, *b.shortcut, in, c.shortcut, d_cur, grads, &d_short, ws.scratch);
      d_cur = d_main.data + d_short.data;
    } else {
      d_cur = d_main.data + d_cur;
    }
  }
  relu_backward_inplace(ws.stem.out.data, d_cur);
  unit_backward(params, stem_, ws.input, ws.stem, std::move(d_cur), grads, nullptr, ws.scratch);
}

template <typename T>
Mat<T> ResidualNet<T>::infer(const ParamStore<T>& params, const Activation<T>& input) const {
  Workspace ws;
  return forward(params, input, ws, false);
}

template <typename T>
void ResidualNet<T>::update_running_stats(ParamStore<T>& params, std::span<const Workspace* const> passes) const {
  if (config_.norm != NormKind::batch || passes.empty()) return;
  constexpr double momentum = 0.1;
  auto fold = [&](const ConvUnit& u, auto&& cache_of) {
    Vec<T> mean = Vec<T>::Zero(u.spec.out_channels);
    Vec<T> var = Vec<T>::Zero(u.spec.out_channels);
    for (const Workspace* ws : passes) {
      const UnitCache& c = cache_of(*ws);
      const double m = static_cast<double>(c.conv_out.data.cols());
      mean += c.norm.mean;
      var += c.norm.var * T(m > 1 ? m / (m - 1) : 1.0);
    }
    mean /= T(passes.size());
    var /= T(passes.size());
    auto& rm = params[u.norm.running_mean].value;
    auto& rv = params[u.norm.running_var].value;
    rm = T(1 - momentum) * rm + T(momentum) * mean;
    rv = T(1 - momentum) * rv + T(momentum) * var;
  };
  fold(stem_, [](const Workspace& ws) -> const UnitCache& { return ws.stem; });
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    fold(blocks_[i].conv1, [i](const Workspace& ws) -> const UnitCache& { return ws.blocks[i].conv1; });
    fold(blocks_[i].conv2, [i](const Workspace& ws) -> const UnitCache& { return ws.blocks[i].conv2; });
    if (blocks_[i].shortcut)
      fold(*blocks_[i].shortcut, [i](const Workspace& ws) -> const UnitCache& { return ws.blocks[i].shortcut; });
  }
}

namespace {

template <typename T>
Activation<T> slice_batch(const Activation<T>& in, int begin, int end) {
  Activation<T> out;
  out.resize(in.channels, end - begin, in.size);
  const auto s = static_cast<Eigen::Index>(in.size.volume());
  out.data = in.data.middleCols(begin * s, (end - begin) * s);
  return out;
}

std::vector<int> shard_offsets(int batch, int workers) {
  const int shards = std::max(1, std::min(workers, batch));
  std::vector<int> offsets(static_cast<std::size_t>(shards) + 1);
  for (int i = 0; i <= shards; ++i) offsets[static_cast<std::size_t>(i)] = static_cast<int>(std::int64_t{batch} * i / shards);
  return offsets;
}

template <typename F>
void run_shards(std::size_t count, F&& fn) {
  if (count == 1) {
    fn(std::size_t{0});
    return;
  }
  std::vector<std::jthread> threads;
  threads.reserve(count - 1);
  for (std::size_t i = 1; i < count; ++i) threads.emplace_back([&fn, i] { fn(i); });
  fn(std::size_t{0});
}

}  // namespace

template <typename T>
Mat<T> forward_sharded(const ResidualNet<T>& net, const ParamStore<T>& params, const Activation<T>& input,
                       int workers, bool training, ShardedPass<T>& pass) {
  pass.offsets = shard_offsets(input.batch, workers);
  const std::size_t shards = pass.offsets.size() - 1;
  pass.shards.resize(shards);
  std::vector<Mat<T>> outs(shards);
  if (shards == 1) {
    outs[0] = net.forward(params, input, pass.shards[0], training);
    return outs[0];
  }
  std::vector<std::exception_ptr> errors(shards);
  run_shards(shards, [&](std::size_t i) {
    try {
      const Activation<T> part = slice_batch(input, pass.offsets[i], pass.offsets[i + 1]);
      outs[i] = net.forward(params, part, pass.shards[i], training);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  Mat<T> out(net.output_dim(), input.batch);
  for (std::size_t i = 0; i < shards; ++i) out.middleCols(pass.offsets[i], outs[i].cols()) = outs[i];
  return out;
}

template <typename T>
void backward_sharded(const ResidualNet<T>& net, const ParamStore<T>& params, const ShardedPass<T>& pass,
                      const Mat<T>& d_out, ParamStore<T>& grads) {
  const std::size_t shards = pass.shards.size();
  if (shards == 1) {
    net.backward(params, pass.shards[0], d_out, grads);
    return;
  }
  std::vector<ParamStore<T>> partial(shards, grads.zeros_like());
  std::vector<std::exception_ptr> errors(shards);
  run_shards(shards, [&](std::size_t i) {
    try {
      const Mat<T> d = d_out.middleCols(pass.offsets[i], pass.offsets[i + 1] - pass.offsets[i]);
      net.backward(params, pass.shards[i], d, partial[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& p : partial) grads.add_scaled(p, T(1));
}

template <typename T>
Mat<T> infer_sharded(const ResidualNet<T>& net, const ParamStore<T>& params, const Activation<T>& input,
                     int workers) {
  ShardedPass<T> pass;
  return forward_sharded(net, params, input, workers, false, pass);
}

std::int64_t parameter_count(const EncoderConfig& config) {
  return ResidualNet<double>(config).init_params().scalar_count(true);
}

template class ResidualNet<float>;
template class ResidualNet<double>;
template Mat<float> forward_sharded<float>(const ResidualNet<float>&, const ParamStore<float>&,
                                           const Activation<float>&, int, bool, ShardedPass<float>&);
template Mat<double> forward_sharded<double>(const ResidualNet<double>&, const ParamStore<double>&,
                                             const Activation<double>&, int, bool, ShardedPass<double>&);
template void backward_sharded<float>(const ResidualNet<float>&, const ParamStore<float>&, const ShardedPass<float>&,
                                      const Mat<float>&, ParamStore<float>&);
template void backward_sharded<double>(const ResidualNet<double>&, const ParamStore<double>&,
                                       const ShardedPass<double>&, const Mat<double>&, ParamStore<double>&);
template Mat<float> infer_sharded<float>(const ResidualNet<float>&, const ParamStore<float>&, const Activation<float>&,
                                         int);
template Mat<double> infer_sharded<double>(const ResidualNet<double>&, const ParamStore<double>&,
                                           const Activation<double>&, int);

}  // namespace hamil::nn
