#include "sarnas/cell.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "sarnas/error.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

namespace {

std::array<CellEdge, kNumEdges> make_edges() {
  std::array<CellEdge, kNumEdges> out{};
  std::size_t e = 0;
  for (std::size_t node = 0; node < kNumIntermediate; ++node) {
    for (std::size_t src = 0; src < kNumInputs + node; ++src) out[e++] = {src, kNumInputs + node};
  }
  return out;
}

template <typename T>
std::vector<double> softmax_row(std::span<const T> row) {
  double peak = static_cast<double>(row[0]);
  for (T v : row) peak = std::max(peak, static_cast<double>(v));
  std::vector<double> out(row.size());
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(static_cast<double>(row[i]) - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

template <typename T>
void require_alpha_shape(const Tensor<T>& alpha) {
  if (alpha.shape() != Shape{kNumEdges, kNumOps}) {
    throw DimensionError("alpha must be " + Shape{kNumEdges, kNumOps}.str() + ", got " + alpha.shape().str());
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& layer) {
  if (!all_finite(t)) throw NumericFault("non-finite activation at " + layer);
}

}  // namespace

const std::array<CellEdge, kNumEdges>& cell_edges() {
  static const std::array<CellEdge, kNumEdges> edges = make_edges();
  return edges;
}

std::size_t edge_index(std::size_t node, std::size_t src) {
  if (node >= kNumIntermediate || src >= kNumInputs + node) {
    throw DimensionError("no edge from node " + std::to_string(src) + " into n" + std::to_string(node));
  }
  std::size_t base = 0;
  for (std::size_t k = 0; k < node; ++k) base += kNumInputs + k;
  return base + src;
}

std::string node_name(std::size_t node) {
  if (node < kNumInputs) return "input" + std::to_string(node);
  return "n" + std::to_string(node - kNumInputs);
}

std::optional<std::size_t> parse_node_name(std::string_view name) {
  for (std::size_t n = 0; n < kNumInputs + kNumIntermediate; ++n) {
    if (name == node_name(n)) return n;
  }
  return std::nullopt;
}

const char* cell_type_name(CellType type) { return type == CellType::Normal ? "normal" : "reduce"; }

std::array<std::size_t, 2> reduction_positions(std::size_t cells) {
  if (cells < 3) throw ConfigError("a cell stack needs at least 3 cells, got " + std::to_string(cells));
  return {cells / 3 - 1, 2 * cells / 3 - 1};
}

bool is_reduction_cell(std::size_t index, std::size_t cells) {
  const auto r = reduction_positions(cells);
  return index == r[0] || index == r[1];
}

template <typename T>
std::vector<T> AlphaParams<T>::weights(CellType type) const {
  const Tensor<T>& a = of(type);
  require_alpha_shape(a);
  std::vector<T> out;
  out.reserve(kNumEdges * kNumOps);
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    for (double w : softmax_row(a.values().subspan(e * kNumOps, kNumOps))) out.push_back(static_cast<T>(w));
  }
  return out;
}

template <typename T>
AlphaParams<T> AlphaParams<T>::clone() const {
  auto copy = [](const Tensor<T>& t) {
    return Tensor<T>::leaf(t.shape(), std::vector<T>(t.values().begin(), t.values().end()), t.requires_grad());
  };
  return {copy(normal), copy(reduce)};
}

template <typename T>
AlphaParams<T> init_alpha(std::uint64_t seed, double noise_scale) {
  if (!(noise_scale >= 0.0)) throw ConfigError("alpha noise scale must be non-negative");
  std::mt19937_64 rng(seed);
  auto draw = [&] {
    std::vector<T> v(kNumEdges * kNumOps);
    for (auto& x : v) x = static_cast<T>(noise_scale * standard_normal(rng));
    return Tensor<T>::leaf(Shape{kNumEdges, kNumOps}, std::move(v), true);
  };
  AlphaParams<T> out;
  out.normal = draw();
  out.reduce = draw();
  return out;
}

template <typename T>
double mean_edge_entropy(const Tensor<T>& alpha) {
  require_alpha_shape(alpha);
  double total = 0.0;
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    for (double p : softmax_row(alpha.values().subspan(e * kNumOps, kNumOps))) {
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(kNumEdges);
}

template <typename T>
Tensor<T> mixed_op_forward(const Tensor<T>& x, const Tensor<T>& weights, std::size_t offset,
                           std::span<OpInstance<T>* const> ops) {
  std::vector<Tensor<T>> outputs;
  outputs.reserve(ops.size());
  for (auto* op : ops) {
    outputs.push_back(op->forward(x));
    if (outputs.back().shape() != outputs.front().shape()) {
      throw DimensionError(std::string("mixed op: ") + std::string(op_name(op->kind())) + " produced " +
                           outputs.back().shape().str() + ", expected " + outputs.front().shape().str());
    }
  }
  return weighted_sum(outputs, weights, offset);
}

template <typename T>
CellInputs<T>::CellInputs(const CellShape& shape, std::uint64_t seed) {
  SeedStream seeds(seed);
  if (shape.reduction_prev) {
    pre0_ = &this->register_module(
        "pre0", std::make_unique<FactorizedReduce<T>>(shape.prev_prev_channels, shape.channels, seeds.next()));
  } else {
    pre0_ = &this->register_module(
        "pre0", std::make_unique<ReluConvBn<T>>(shape.prev_prev_channels, shape.channels, 1, 1, 0, seeds.next()));
  }
  pre1_ = &this->register_module(
      "pre1", std::make_unique<ReluConvBn<T>>(shape.prev_channels, shape.channels, 1, 1, 0, seeds.next()));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> CellInputs<T>::align(const Tensor<T>& prev_prev, const Tensor<T>& prev) {
  Tensor<T> a = pre0_->forward(prev_prev);
  Tensor<T> b = pre1_->forward(prev);
  if (a.shape() != b.shape()) {
    throw DimensionError("cell inputs disagree after alignment: " + a.shape().str() + " vs " + b.shape().str());
  }
  return {a, b};
}

template <typename T>
SearchCell<T>::SearchCell(const CellShape& shape, const Tensor<T>* weights, std::uint64_t seed,
                          const OpOptions& options)
    : Cell<T>(shape.type), weights_(weights) {
  SeedStream seeds(seed);
  inputs_ = &this->register_module("inputs", std::make_unique<CellInputs<T>>(shape, seeds.next()));
  const bool reduce = shape.type == CellType::Reduce;
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    const CellEdge edge = cell_edges()[e];
    const std::size_t stride = reduce && edge.src < kNumInputs ? 2 : 1;
    std::vector<OpInstance<T>*> ops;
    for (OpKind kind : kAllOps) {
      auto op = build_op<T>(kind, shape.channels, stride, seeds.next(), options);
      ops.push_back(&this->register_module("edge" + std::to_string(e) + "." + std::string(op_name(kind)),
                                           std::move(op)));
    }
    edges_.push_back(std::move(ops));
  }
}

template <typename T>
Tensor<T> SearchCell<T>::forward_cell(const Tensor<T>& prev_prev, const Tensor<T>& prev) {
  if (weights_ == nullptr || !weights_->defined()) throw StateError("search cell has no mixing weights");
  return forward_with(prev_prev, prev, *weights_);
}

template <typename T>
Tensor<T> SearchCell<T>::forward_with(const Tensor<T>& prev_prev, const Tensor<T>& prev, const Tensor<T>& weights) {
  auto [s0, s1] = inputs_->align(prev_prev, prev);
  std::vector<Tensor<T>> states{s0, s1};
  std::size_t e = 0;
  for (std::size_t node = 0; node < kNumIntermediate; ++node) {
    Tensor<T> acc;
    for (std::size_t src = 0; src < states.size(); ++src, ++e) {
      Tensor<T> term = mixed_op_forward<T>(states[src], weights, e * kNumOps, edges_[e]);
      acc = acc.defined() ? add(acc, term) : term;
    }
    states.push_back(acc);
  }
  return channel_concat<T>({states.begin() + kNumInputs, states.end()});
}

std::vector<CellShape> plan_cells(const NetworkConfig& config) {
  const auto reductions = reduction_positions(config.cells);
  std::vector<CellShape> out;
  std::size_t pp = config.init_channels;
  std::size_t p = config.init_channels;
  std::size_t c = config.init_channels;
  bool reduction_prev = false;
  for (std::size_t i = 0; i < config.cells; ++i) {
    const bool reduce = i == reductions[0] || i == reductions[1];
    if (reduce) c *= 2;
    out.push_back({reduce ? CellType::Reduce : CellType::Normal, pp, p, c, reduction_prev});
    pp = p;
    p = 4 * c;
    reduction_prev = reduce;
  }
  return out;
}

template <typename T>
CellNetwork<T>::CellNetwork(const NetworkConfig& config) : config_(config) {
  if (config.init_channels == 0 || config.classes == 0 || config.in_channels == 0) {
    throw ConfigError("network channels and classes must be positive");
  }
  if (config.init_channels % 2 != 0) {
    throw ConfigError("initial channel count must be even, got " + std::to_string(config.init_channels));
  }
  plan_cells(config);  // validates the depth
}

template <typename T>
void CellNetwork<T>::assemble(
    const std::function<std::unique_ptr<Cell<T>>(std::size_t, const CellShape&, std::uint64_t)>& make_cell) {
  Conv2dOptions stem;
  stem.padding = {1, 1};
  stem_conv_ = &this->register_module(
      "stem.conv", std::make_unique<Conv<T>>(config_.in_channels, config_.init_channels, 3, stem,
                                             derive_seed(config_.seed, 0)));
  stem_bn_ = &this->register_module("stem.bn", std::make_unique<BatchNorm<T>>(config_.init_channels));
  const auto plan = plan_cells(config_);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    cells_.push_back(&this->register_module("cell" + std::to_string(i),
                                            make_cell(i, plan[i], derive_seed(config_.seed, 1 + i))));
  }
  const std::size_t features = 4 * plan.back().channels;
  std::mt19937_64 rng(derive_seed(config_.seed, 1 + plan.size()));
  fc_weight_ = &this->register_parameter("classifier.weight", Shape{config_.classes, features},
                                         fan_in_uniform<T>(config_.classes * features, features, rng));
  fc_bias_ = &this->register_parameter("classifier.bias", Shape{config_.classes},
                                       std::vector<T>(config_.classes, T(0)));
}

template <typename T>
Tensor<T> CellNetwork<T>::forward(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "network input");
  if (input.shape()[kChannel] != config_.in_channels) {
    throw DimensionError("network input has " + std::to_string(input.shape()[kChannel]) + " channels, expected " +
                         std::to_string(config_.in_channels));
  }
  before_forward();
  Tensor<T> x = stem_bn_->forward(stem_conv_->forward(input));
  check_finite(x, "stem");
  Tensor<T> prev_prev = x;
  Tensor<T> prev = x;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    Tensor<T> out = cells_[i]->forward_cell(prev_prev, prev);
    check_finite(out, "cell " + std::to_string(i));
    prev_prev = prev;
    prev = out;
  }
  Tensor<T> logits = linear(global_avg_spatial(prev), fc_weight_->tensor(), fc_bias_->tensor());
  check_finite(logits, "classifier");
  return logits;
}

template <typename T>
SuperNet<T>::SuperNet(const NetworkConfig& config, AlphaParams<T> alpha, const OpOptions& options)
    : CellNetwork<T>(config), alpha_(std::move(alpha)) {
  require_alpha_shape(alpha_.normal);
  require_alpha_shape(alpha_.reduce);
  this->assemble([&](std::size_t, const CellShape& shape, std::uint64_t seed) -> std::unique_ptr<Cell<T>> {
    const Tensor<T>* slot = shape.type == CellType::Normal ? &normal_weights_ : &reduce_weights_;
    return std::make_unique<SearchCell<T>>(shape, slot, seed, options);
  });
}

template <typename T>
void SuperNet<T>::before_forward() {
  normal_weights_ = softmax_rows(alpha_.normal);
  reduce_weights_ = softmax_rows(alpha_.reduce);
}

std::size_t network_param_count(const NetworkConfig& config,
                                const std::function<std::size_t(const CellShape&)>& cell_body) {
  const auto plan = plan_cells(config);
  std::size_t total = config.init_channels * config.in_channels * 9 + 2 * config.init_channels;
  for (const auto& shape : plan) {
    total += shape.reduction_prev ? factorized_reduce_param_count(shape.prev_prev_channels, shape.channels)
                                  : relu_conv_bn_param_count(shape.prev_prev_channels, shape.channels, 1);
    total += relu_conv_bn_param_count(shape.prev_channels, shape.channels, 1);
    total += cell_body(shape);
  }
  const std::size_t features = 4 * plan.back().channels;
  return total + config.classes * features + config.classes;
}

std::size_t supernet_param_count(const NetworkConfig& config, const OpOptions& options) {
  return network_param_count(config, [&](const CellShape& shape) {
    std::size_t body = 0;
    for (const CellEdge& edge : cell_edges()) {
      const std::size_t stride = shape.type == CellType::Reduce && edge.src < kNumInputs ? 2 : 1;
      for (OpKind kind : kAllOps) body += op_param_count(kind, shape.channels, stride, options);
    }
    return body;
  });
}

template <typename T>
std::string relaxed_cell_dot(const AlphaParams<T>& alpha, CellType type) {
  const std::vector<T> w = alpha.weights(type);
  std::ostringstream os;
  os << "digraph " << cell_type_name(type) << " {\n  rankdir=LR;\n";
  for (std::size_t n = 0; n < kNumInputs + kNumIntermediate; ++n) os << "  " << node_name(n) << ";\n";
  os << "  out;\n";
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    std::size_t best = 0;
    for (std::size_t o = 1; o < kNumOps; ++o) {
      if (w[e * kNumOps + o] > w[e * kNumOps + best]) best = o;
    }
    char weight[32];
    std::snprintf(weight, sizeof weight, "%.3f", static_cast<double>(w[e * kNumOps + best]));
    const CellEdge edge = cell_edges()[e];
    os << "  " << node_name(edge.src) << " -> " << node_name(edge.dst) << " [label=\"" << op_name(kAllOps[best])
       << ' ' << weight << "\"];\n";
  }
  for (std::size_t n = 0; n < kNumIntermediate; ++n) os << "  " << node_name(kNumInputs + n) << " -> out;\n";
  os << "}\n";
  return os.str();
}

#define SARNAS_INSTANTIATE_CELL(T)                                                                           \
  template struct AlphaParams<T>;                                                                            \
  template AlphaParams<T> init_alpha(std::uint64_t, double);                                                 \
  template double mean_edge_entropy(const Tensor<T>&);                                                       \
  template Tensor<T> mixed_op_forward(const Tensor<T>&, const Tensor<T>&, std::size_t,                       \
                                      std::span<OpInstance<T>* const>);                                      \
  template class CellInputs<T>;                                                                              \
  template class SearchCell<T>;                                                                              \
  template class CellNetwork<T>;                                                                             \
  template class SuperNet<T>;                                                                                \
  template std::string relaxed_cell_dot(const AlphaParams<T>&, CellType);

SARNAS_INSTANTIATE_CELL(float)
SARNAS_INSTANTIATE_CELL(double)

}  // namespace sarnas
