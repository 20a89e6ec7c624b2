#include "fsd/network.hpp"

#include "fsd/frontend.hpp"

#include <stdexcept>

namespace fsd {

NetworkSpec NetworkSpec::make(AttentionKind attention, int depth) {
  NetworkSpec spec;
  spec.attention = attention;
  spec.depth = depth;
  switch (depth) {
    case 9:
      spec.block_counts = {1, 1, 1, 1};
      break;
    case 18:
      spec.block_counts = {2, 2, 2, 2};
      break;
    case 34:
      spec.block_counts = {3, 4, 6, 3};
      break;
    case 50:
      spec.block_counts = {3, 4, 6, 3};
      spec.block_kind = BlockKind::kBottleneck;
      break;
    default:
      throw std::invalid_argument("unsupported depth " + std::to_string(depth) +
                                  " (expected 9, 18, 34 or 50)");
  }
  return spec;
}

void NetworkSpec::validate() const {
  const NetworkSpec reference = make(attention, depth);
  if (block_counts != reference.block_counts) {
    throw std::invalid_argument("block counts do not match depth " + std::to_string(depth));
  }
  if (block_kind != reference.block_kind) {
    throw std::invalid_argument("depth " + std::to_string(depth) + " requires " +
                                to_string(reference.block_kind) + " units");
  }
  for (int c : channel_plan) {
    if (c < 1) throw std::invalid_argument("channel plan entries must be positive");
  }
  if (stem_channels < 1) throw std::invalid_argument("stem_channels must be positive");
  if (se_reduction < 1) throw std::invalid_argument("se_reduction must be >= 1");
  if (eca_kernel < 0 || (eca_kernel > 0 && eca_kernel % 2 == 0)) {
    throw std::invalid_argument("eca_kernel must be odd (or 0 for the adaptive size)");
  }
  if (bottleneck_width < 1) throw std::invalid_argument("bottleneck_width must be >= 1");
  if (num_classes != 2) throw std::invalid_argument("num_classes must be 2");
}

std::string to_string(AttentionKind kind) { return kind == AttentionKind::kSE ? "se" : "eca"; }

std::string to_string(BlockKind kind) {
  return kind == BlockKind::kBasic ? "basic" : "bottleneck";
}

AttentionKind parse_attention(const std::string& text) {
  if (text == "se" || text == "SE") return AttentionKind::kSE;
  if (text == "eca" || text == "ECA") return AttentionKind::kECA;
  throw std::invalid_argument("unknown attention kind '" + text + "' (expected se or eca)");
}

BlockKind parse_block_kind(const std::string& text) {
  if (text == "basic") return BlockKind::kBasic;
  if (text == "bottleneck") return BlockKind::kBottleneck;
  throw std::invalid_argument("unknown block kind '" + text + "'");
}

std::array<Index, 3> block_output_shape(const NetworkSpec& spec, int block, Index height,
                                        Index width) {
  for (int b = 0; b < block; ++b) {
    const Index s = kStageStrides[b];
    height = (height + 2 - 3) / s + 1;
    width = (width + 2 - 3) / s + 1;
  }
  return {spec.channel_plan[block - 1], height, width};
}

// ----------------------------------------------------------- ResidualUnit

template <typename Scalar>
ResidualUnit<Scalar>::ResidualUnit(const std::string& name, const NetworkSpec& spec,
                                   Index in_channels, Index out_channels, Index stride) {
  if (spec.block_kind == BlockKind::kBasic) {
    convs_.emplace_back(name + ".conv1", in_channels, out_channels, 3, stride, 1);
    bns_.emplace_back(name + ".bn1", out_channels);
    convs_.emplace_back(name + ".conv2", out_channels, out_channels, 3, 1, 1);
    bns_.emplace_back(name + ".bn2", out_channels);
  } else {
    const Index inner = out_channels * spec.bottleneck_width;
    convs_.emplace_back(name + ".conv1", in_channels, inner, 1, 1, 0);
    bns_.emplace_back(name + ".bn1", inner);
    convs_.emplace_back(name + ".conv2", inner, inner, 3, stride, 1);
    bns_.emplace_back(name + ".bn2", inner);
    convs_.emplace_back(name + ".conv3", inner, out_channels, 1, 1, 0);
    bns_.emplace_back(name + ".bn3", out_channels);
  }
  attention_ = ChannelAttention<Scalar>(name, spec.attention, out_channels, spec.se_reduction,
                                        spec.eca_kernel);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_conv_.emplace(name + ".shortcut.conv", in_channels, out_channels, 1, stride, 0);
    shortcut_bn_.emplace(name + ".shortcut.bn", out_channels);
  }
}

template <typename Scalar>
void ResidualUnit<Scalar>::initialize(std::mt19937_64& rng) {
  for (auto& conv : convs_) conv.initialize(rng);
  attention_.initialize(rng);
  if (shortcut_conv_) shortcut_conv_->initialize(rng);
}

template <typename Scalar>
Tensor4<Scalar> ResidualUnit<Scalar>::forward(const Tensor4<Scalar>& x, Cache* cache,
                                              RowMatrix<Scalar>* gates_out) const {
  const std::size_t depth = convs_.size();
  if (cache) {
    cache->conv.resize(depth);
    cache->bn.resize(depth);
    cache->relu_out.resize(depth - 1);
  }
  Tensor4<Scalar> h = x;
  for (std::size_t i = 0; i < depth; ++i) {
    h = convs_[i].forward(h, cache ? &cache->conv[i] : nullptr);
    h = bns_[i].forward(h, cache ? &cache->bn[i] : nullptr);
    if (i + 1 < depth) {
      h = relu(h);
      if (cache) cache->relu_out[i] = h;
    }
  }
  h = attention_.forward(h, cache ? &cache->attention : nullptr, gates_out);
  if (shortcut_conv_) {
    Tensor4<Scalar> s = shortcut_conv_->forward(x, cache ? &cache->shortcut_conv : nullptr);
    s = shortcut_bn_->forward(s, cache ? &cache->shortcut_bn : nullptr);
    h.data() += s.data();
  } else {
    h.data() += x.data();
  }
  h = relu(h);
  if (cache) cache->output = h;
  return h;
}

template <typename Scalar>
Tensor4<Scalar> ResidualUnit<Scalar>::backward(const Cache& cache, const Tensor4<Scalar>& dy) {
  const Tensor4<Scalar> d_sum = relu_backward(cache.output, dy);
  Tensor4<Scalar> dx;
  if (shortcut_conv_) {
    dx = shortcut_conv_->backward(cache.shortcut_conv,
                                  shortcut_bn_->backward(cache.shortcut_bn, d_sum));
  } else {
    dx = d_sum;
  }
  Tensor4<Scalar> d = attention_.backward(cache.attention, d_sum);
  for (std::size_t i = convs_.size(); i-- > 0;) {
    if (i + 1 < convs_.size()) d = relu_backward(cache.relu_out[i], d);
    d = bns_[i].backward(cache.bn[i], d);
    d = convs_[i].backward(cache.conv[i], d);
  }
  dx.data() += d.data();
  return dx;
}

template <typename Scalar>
void ResidualUnit<Scalar>::update_running(const Cache& cache, std::optional<double> momentum) {
  for (std::size_t i = 0; i < bns_.size(); ++i) bns_[i].update_running(cache.bn[i], momentum);
  if (shortcut_bn_) shortcut_bn_->update_running(cache.shortcut_bn, momentum);
}

template <typename Scalar>
void ResidualUnit<Scalar>::collect(ParameterList<Scalar>& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(out);
    bns_[i].collect(out);
  }
  attention_.collect(out);
  if (shortcut_conv_) {
    shortcut_conv_->collect(out);
    shortcut_bn_->collect(out);
  }
}

template <typename Scalar>
void ResidualUnit<Scalar>::collect(ConstParameterList<Scalar>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(out);
    bns_[i].collect(out);
  }
  attention_.collect(out);
  if (shortcut_conv_) {
    shortcut_conv_->collect(out);
    shortcut_bn_->collect(out);
  }
}

// ---------------------------------------------------------------- Network

template <typename Scalar>
Network<Scalar>::Network(const NetworkSpec& spec, std::uint64_t seed, bool with_auxiliary)
    : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  build(&rng, with_auxiliary);
}

template <typename Scalar>
void Network<Scalar>::build(std::mt19937_64* rng, bool with_auxiliary) {
  stem_conv_ = Conv2d<Scalar>("stem.conv", 1, spec_.stem_channels, 3, 1, 1);
  stem_bn_ = BatchNorm2d<Scalar>("stem.bn", spec_.stem_channels);
  stem_conv_.initialize(*rng);
  Index in_channels = spec_.stem_channels;
  for (int s = 0; s < 4; ++s) {
    stages_[s].clear();
    for (int u = 0; u < spec_.block_counts[s]; ++u) {
      const std::string name = "stage" + std::to_string(s + 1) + ".unit" + std::to_string(u);
      stages_[s].emplace_back(name, spec_, in_channels, spec_.channel_plan[s],
                              u == 0 ? kStageStrides[s] : 1);
      stages_[s].back().initialize(*rng);
      in_channels = spec_.channel_plan[s];
    }
  }
  head_ = AngleLinear<Scalar>("head", spec_.embedding_dim(), spec_.num_classes);
  head_.initialize(*rng);
  aux_.clear();
  if (with_auxiliary) {
    for (int b = 1; b <= 3; ++b) {
      aux_.push_back(make_branch(b));
      aux_.back().adapter.initialize(*rng);
      aux_.back().head.initialize(*rng);
    }
  }
}

template <typename Scalar>
AuxiliaryBranch<Scalar> Network<Scalar>::make_branch(int block) const {
  const std::string prefix = "aux" + std::to_string(block);
  return AuxiliaryBranch<Scalar>{
      Linear<Scalar>(prefix + ".adapter", spec_.channel_plan[block - 1], spec_.embedding_dim()),
      AngleLinear<Scalar>(prefix + ".head", spec_.embedding_dim(), spec_.num_classes)};
}

template <typename Scalar>
void Network<Scalar>::attach_auxiliary(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  aux_.clear();
  for (int b = 1; b <= 3; ++b) {
    aux_.push_back(make_branch(b));
    aux_.back().adapter.initialize(rng);
    aux_.back().head.initialize(rng);
  }
}

template <typename Scalar>
BlockOutputs<Scalar> Network<Scalar>::forward(const Tensor4<Scalar>& x, bool with_auxiliary,
                                              ForwardTape<Scalar>* tape) const {
  if (x.channels() != 1) {
    throw ShapeError("network input must have a single channel, got shape " +
                     shape_string(x.shape()));
  }
  with_auxiliary = with_auxiliary && has_auxiliary();
  BlockOutputs<Scalar> out;
  out.has_auxiliary = with_auxiliary;

  Tensor4<Scalar> h = stem_conv_.forward(x, tape ? &tape->stem_conv : nullptr);
  h = relu(stem_bn_.forward(h, tape ? &tape->stem_bn : nullptr));
  if (tape) tape->stem_out = h;

  for (int s = 0; s < 4; ++s) {
    if (tape) tape->units[s].resize(stages_[s].size());
    for (std::size_t u = 0; u < stages_[s].size(); ++u) {
      h = stages_[s][u].forward(h, tape ? &tape->units[s][u] : nullptr);
    }
    out.features[s] = h;
    if (tape) tape->feature_planes[s] = h.plane();
  }

  out.embedding = global_average_pool(out.features[3]);
  out.heads[3] = head_.forward(out.embedding, tape ? &tape->head : nullptr);

  if (with_auxiliary) {
    for (int b = 0; b < 3; ++b) {
      const RowMatrix<Scalar> pooled = global_average_pool(out.features[b]);
      out.adapted[b] = aux_[b].adapter.forward(pooled, tape ? &tape->aux[b].adapter : nullptr);
      out.heads[b] = aux_[b].head.forward(out.adapted[b], tape ? &tape->aux[b].head : nullptr);
    }
  }
  if (tape) tape->has_auxiliary = with_auxiliary;
  return out;
}

namespace {

template <typename Scalar>
RowMatrix<Scalar> head_backward(AngleLinear<Scalar>& head,
                                const typename AngleLinear<Scalar>::Cache& cache,
                                const RowMatrix<Scalar>& d_cos, const Vector<Scalar>& d_norm) {
  const Index batch = cache.input.rows();
  const RowMatrix<Scalar> dc =
      d_cos.size() ? d_cos : RowMatrix<Scalar>::Zero(batch, head.classes());
  const Vector<Scalar> dn = d_norm.size() ? d_norm : Vector<Scalar>::Zero(batch);
  return head.backward(cache, dc, dn);
}

}  // namespace

template <typename Scalar>
void Network<Scalar>::backward(const ForwardTape<Scalar>& tape,
                               const OutputGradients<Scalar>& grads) {
  RowMatrix<Scalar> d_embedding =
      head_backward(head_, tape.head, grads.d_cos[3], grads.d_norm[3]);
  if (grads.d_embedding.size()) d_embedding += grads.d_embedding;

  std::array<RowMatrix<Scalar>, 3> d_pooled;
  if (tape.has_auxiliary) {
    for (int b = 0; b < 3; ++b) {
      RowMatrix<Scalar> d_adapted =
          head_backward(aux_[b].head, tape.aux[b].head, grads.d_cos[b], grads.d_norm[b]);
      if (grads.d_adapted[b].size()) d_adapted += grads.d_adapted[b];
      d_pooled[b] = aux_[b].adapter.backward(tape.aux[b].adapter, d_adapted);
    }
  }

  const auto& last_units = tape.units[3];
  const Tensor4<Scalar>& f4 = last_units.back().output;
  Tensor4<Scalar> d(f4.batch(), f4.channels(), f4.height(), f4.width());
  accumulate_pool_gradient(d_embedding, d);

  for (int s = 3; s >= 0; --s) {
    for (std::size_t u = stages_[s].size(); u-- > 0;) {
      d = stages_[s][u].backward(tape.units[s][u], d);
    }
    // d now holds the gradient at the output of stage s-1 (or the stem).
    if (s > 0 && tape.has_auxiliary) accumulate_pool_gradient(d_pooled[s - 1], d);
  }
  d = relu_backward(tape.stem_out, d);
  d = stem_bn_.backward(tape.stem_bn, d);
  stem_conv_.backward(tape.stem_conv, d);
}

template <typename Scalar>
void Network<Scalar>::update_running_stats(const ForwardTape<Scalar>& tape,
                                           std::optional<double> momentum) {
  stem_bn_.update_running(tape.stem_bn, momentum);
  for (int s = 0; s < 4; ++s) {
    for (std::size_t u = 0; u < stages_[s].size(); ++u) {
      stages_[s][u].update_running(tape.units[s][u], momentum);
    }
  }
}

template <typename Scalar>
void Network<Scalar>::recalibrate_batch_norm(std::span<const Tensor4<Scalar>> batches) {
  // Momentum 1/k turns the running blend into a plain mean over k batches.
  for (std::size_t k = 0; k < batches.size(); ++k) {
    ForwardTape<Scalar> tape;
    forward(batches[k], false, &tape);
    update_running_stats(tape, 1.0 / static_cast<double>(k + 1));
  }
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->grad.setZero();
}

template <typename Scalar>
void Network<Scalar>::normalize_angle_weights() {
  head_.normalize_rows();
  for (auto& branch : aux_) branch.head.normalize_rows();
}

template <typename Scalar>
ParameterList<Scalar> Network<Scalar>::parameters() {
  ParameterList<Scalar> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (auto& stage : stages_) {
    for (auto& unit : stage) unit.collect(out);
  }
  head_.collect(out);
  for (auto& branch : aux_) {
    branch.adapter.collect(out);
    branch.head.collect(out);
  }
  return out;
}

template <typename Scalar>
ConstParameterList<Scalar> Network<Scalar>::parameters() const {
  ConstParameterList<Scalar> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (const auto& stage : stages_) {
    for (const auto& unit : stage) unit.collect(out);
  }
  head_.collect(out);
  for (const auto& branch : aux_) {
    branch.adapter.collect(out);
    branch.head.collect(out);
  }
  return out;
}

template <typename Scalar>
ParameterList<Scalar> Network<Scalar>::auxiliary_parameters() {
  ParameterList<Scalar> out;
  for (auto& branch : aux_) {
    branch.adapter.collect(out);
    branch.head.collect(out);
  }
  return out;
}

template <typename Scalar>
std::size_t Network<Scalar>::parameter_count(bool include_auxiliary) const {
  std::size_t total = 0;
  for (const auto* p : parameters()) {
    if (!p->trainable()) continue;
    if (!include_auxiliary && p->name.rfind("aux", 0) == 0) continue;
    total += static_cast<std::size_t>(p->value.size());
  }
  return total;
}

template <typename Scalar>
std::vector<RowMatrix<Scalar>> Network<Scalar>::attention_gates(const Tensor4<Scalar>& x) const {
  std::vector<RowMatrix<Scalar>> gates;
  Tensor4<Scalar> h = relu(stem_bn_.forward(stem_conv_.forward(x, nullptr), nullptr));
  for (const auto& stage : stages_) {
    for (const auto& unit : stage) {
      RowMatrix<Scalar> g;
      h = unit.forward(h, nullptr, &g);
      gates.push_back(std::move(g));
    }
  }
  return gates;
}

// ------------------------------------------------------------ free functions

template <typename Scalar>
Tensor4<Scalar> make_batch(std::span<const FeatureMatrix> features) {
  if (features.empty()) throw ShapeError("empty feature batch");
  const Index rows = features.front().rows();
  const Index cols = features.front().cols();
  Tensor4<Scalar> batch(static_cast<Index>(features.size()), 1, rows, cols);
  for (std::size_t n = 0; n < features.size(); ++n) {
    if (features[n].rows() != rows || features[n].cols() != cols) {
      throw ShapeError("inconsistent feature shapes in batch");
    }
    Eigen::Map<RowMatrix<Scalar>>(batch.sample(static_cast<Index>(n)).data(), rows, cols) =
        features[n].values.template cast<Scalar>();
  }
  return batch;
}

template <typename Scalar>
BlockOutputs<Scalar> forward_backbone(const Network<Scalar>& net, const FeatureMatrix& x,
                                      bool with_auxiliary) {
  if (x.rows() != kSubbandBins || x.cols() != kFrameCount) {
    throw ShapeError("expected a " + std::to_string(kSubbandBins) + "x" +
                     std::to_string(kFrameCount) + " feature, got " + std::to_string(x.rows()) +
                     "x" + std::to_string(x.cols()));
  }
  return net.forward(make_batch<Scalar>(std::span<const FeatureMatrix>(&x, 1)), with_auxiliary,
                     nullptr);
}

template <typename Scalar>
double score_from_logits(const RowMatrix<Scalar>& logits, Index row) {
  return static_cast<double>(logits(row, 0)) - static_cast<double>(logits(row, 1));
}

template <typename Scalar>
double infer_score(const Network<Scalar>& net, const FeatureMatrix& x) {
  if (net.training()) {
    throw std::logic_error("infer_score requires a network in evaluation mode");
  }
  const BlockOutputs<Scalar> out = forward_backbone(net, x, false);
  return score_from_logits(out.logits(4), 0);
}

template <typename Scalar>
std::vector<double> infer_scores(const Network<Scalar>& net, const Tensor4<Scalar>& batch) {
  if (net.training()) {
    throw std::logic_error("infer_scores requires a network in evaluation mode");
  }
  const BlockOutputs<Scalar> out = net.forward(batch, false, nullptr);
  const RowMatrix<Scalar> logits = out.logits(4);
  std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
  for (Index n = 0; n < logits.rows(); ++n) scores[n] = score_from_logits(logits, n);
  return scores;
}

#define FSD_INSTANTIATE_NETWORK(T)                                                      \
  template class ResidualUnit<T>;                                                       \
  template class Network<T>;                                                            \
  template Tensor4<T> make_batch<T>(std::span<const FeatureMatrix>);                    \
  template BlockOutputs<T> forward_backbone<T>(const Network<T>&, const FeatureMatrix&, \
                                               bool);                                   \
  template double score_from_logits<T>(const RowMatrix<T>&, Index);                     \
  template double infer_score<T>(const Network<T>&, const FeatureMatrix&);              \
  template std::vector<double> infer_scores<T>(const Network<T>&, const Tensor4<T>&);

FSD_INSTANTIATE_NETWORK(float)
FSD_INSTANTIATE_NETWORK(double)

#undef FSD_INSTANTIATE_NETWORK

}  // namespace fsd
