#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sarnas/operators.hpp"

namespace sarnas {

/// Nodes in canonical order: input0, input1, n0..n3. Edges are listed per
/// destination node, sources ascending, which gives the 14 rows of an α matrix.
inline constexpr std::size_t kNumInputs = 2;
inline constexpr std::size_t kNumIntermediate = 4;
inline constexpr std::size_t kNumEdges = 14;

struct CellEdge {
  std::size_t src;  // node index, 0..5
  std::size_t dst;  // node index, 2..5
};

const std::array<CellEdge, kNumEdges>& cell_edges();
/// Row index of the edge src -> intermediate node `node` (0..3).
std::size_t edge_index(std::size_t node, std::size_t src);
/// "input0", "input1", "n0".."n3".
std::string node_name(std::size_t node);
/// Inverse of node_name; nullopt for anything else.
std::optional<std::size_t> parse_node_name(std::string_view name);

enum class CellType { Normal, Reduce };

const char* cell_type_name(CellType type);

/// 0-based cell positions of the two reduction cells in an L-cell stack:
/// the floor(L/3)-th and floor(2L/3)-th cells counted from one.
/// Throws ConfigError for L < 3.
std::array<std::size_t, 2> reduction_positions(std::size_t cells);
bool is_reduction_cell(std::size_t index, std::size_t cells);

/// Architecture parameters, one 14x8 matrix per cell type, shared by every cell of that type.
template <typename T>
struct AlphaParams {
  Tensor<T> normal;
  Tensor<T> reduce;

  Tensor<T>& of(CellType type) { return type == CellType::Normal ? normal : reduce; }
  const Tensor<T>& of(CellType type) const { return type == CellType::Normal ? normal : reduce; }
  /// Row-wise softmax, row-major 14x8.
  std::vector<T> weights(CellType type) const;
  AlphaParams clone() const;
};

/// Entries drawn from N(0, noise_scale^2); noise_scale 0 gives uniform mixtures.
template <typename T>
AlphaParams<T> init_alpha(std::uint64_t seed, double noise_scale = 1e-3);

/// Mean softmax entropy (nats) over the 14 edges of one α matrix.
template <typename T>
double mean_edge_entropy(const Tensor<T>& alpha);

/// sum_o w[offset + o] * op_o(x), w being softmax weights (a row of
/// softmax_rows(alpha)). Throws DimensionError if the op outputs disagree.
template <typename T>
Tensor<T> mixed_op_forward(const Tensor<T>& x, const Tensor<T>& weights, std::size_t offset,
                           std::span<OpInstance<T>* const> ops);

/// Common interface of searched and discrete cells.
template <typename T>
class Cell : public Module<T> {
 public:
  explicit Cell(CellType type) : type_(type) {}
  CellType type() const { return type_; }

  virtual Tensor<T> forward_cell(const Tensor<T>& prev_prev, const Tensor<T>& prev) = 0;
  Tensor<T> forward(const Tensor<T>& input) override { return forward_cell(input, input); }

 private:
  CellType type_;
};

/// Channel plan for one position in the stack.
struct CellShape {
  CellType type;
  std::size_t prev_prev_channels;
  std::size_t prev_channels;
  std::size_t channels;  // C of this cell; output has 4C
  bool reduction_prev;
};

/// Aligns both cell inputs to C channels: prev_prev by 1x1 ReLU-Conv-BN, or
/// by a factorized reduce when the previous cell was a reduction; prev by
/// 1x1 ReLU-Conv-BN.
template <typename T>
class CellInputs : public Module<T> {
 public:
  CellInputs(const CellShape& shape, std::uint64_t seed);
  std::pair<Tensor<T>, Tensor<T>> align(const Tensor<T>& prev_prev, const Tensor<T>& prev);
  Tensor<T> forward(const Tensor<T>& input) override { return align(input, input).second; }

 private:
  Module<T>* pre0_;
  Module<T>* pre1_;
};

/// A relaxed cell: all 8 candidate operators on each of the 14 edges.
/// Reads its mixing weights from a slot owned by the enclosing network.
template <typename T>
class SearchCell : public Cell<T> {
 public:
  SearchCell(const CellShape& shape, const Tensor<T>* weights, std::uint64_t seed, const OpOptions& options = {});

  Tensor<T> forward_cell(const Tensor<T>& prev_prev, const Tensor<T>& prev) override;
  /// forward_cell with explicit softmax weights (14x8).
  Tensor<T> forward_with(const Tensor<T>& prev_prev, const Tensor<T>& prev, const Tensor<T>& weights);

  std::size_t edge_count() const { return edges_.size(); }
  std::span<OpInstance<T>* const> edge_ops(std::size_t edge) const { return edges_[edge]; }

 private:
  CellInputs<T>* inputs_;
  const Tensor<T>* weights_;
  std::vector<std::vector<OpInstance<T>*>> edges_;
};

struct NetworkConfig {
  std::size_t cells = 4;
  std::size_t init_channels = 8;
  std::size_t classes = 3;
  std::size_t in_channels = 3;
  std::uint64_t seed = 1;
};

/// Channel plan of every cell position (doubling C at reductions).
std::vector<CellShape> plan_cells(const NetworkConfig& config);

/// Stem (3x3 conv + BN), the cell stack with two-predecessor wiring, global
/// average pool and a linear classifier.
template <typename T>
class CellNetwork : public Module<T> {
 public:
  /// (B,3,T,N) -> (B,K) logits. Throws NumericFault naming the first layer
  /// whose output is not finite.
  Tensor<T> forward(const Tensor<T>& input) override;

  const NetworkConfig& config() const { return config_; }
  std::size_t cell_count() const { return cells_.size(); }
  Cell<T>& cell(std::size_t i) { return *cells_[i]; }

 protected:
  explicit CellNetwork(const NetworkConfig& config);
  /// Builds every cell via make_cell and then the classifier. Called from the
  /// subclass constructor once per-cell state is ready.
  void assemble(const std::function<std::unique_ptr<Cell<T>>(std::size_t, const CellShape&, std::uint64_t)>& make_cell);
  virtual void before_forward() {}

 private:
  NetworkConfig config_;
  Conv<T>* stem_conv_ = nullptr;
  BatchNorm<T>* stem_bn_ = nullptr;
  std::vector<Cell<T>*> cells_;
  Parameter<T>* fc_weight_ = nullptr;
  Parameter<T>* fc_bias_ = nullptr;
};

/// The relaxed search network. α is owned here but is not part of
/// parameters(), so ω and α stay disjoint.
template <typename T>
class SuperNet : public CellNetwork<T> {
 public:
  SuperNet(const NetworkConfig& config, AlphaParams<T> alpha, const OpOptions& options = {});

  AlphaParams<T>& alpha() { return alpha_; }
  const AlphaParams<T>& alpha() const { return alpha_; }
  SearchCell<T>& search_cell(std::size_t i) { return static_cast<SearchCell<T>&>(this->cell(i)); }

 protected:
  void before_forward() override;

 private:
  AlphaParams<T> alpha_;
  Tensor<T> normal_weights_;
  Tensor<T> reduce_weights_;
};

/// Trainable element count of a cell stack: stem, per-cell input alignment,
/// classifier, plus `cell_body(shape)` for each position.
std::size_t network_param_count(const NetworkConfig& config,
                                const std::function<std::size_t(const CellShape&)>& cell_body);
std::size_t supernet_param_count(const NetworkConfig& config, const OpOptions& options = {});

/// DOT digraph of a relaxed cell: 14 edges, each labeled with its
/// top-weighted operator and that operator's softmax weight.
template <typename T>
std::string relaxed_cell_dot(const AlphaParams<T>& alpha, CellType type);

}  // namespace sarnas
