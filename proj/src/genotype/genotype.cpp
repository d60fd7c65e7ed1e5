#include "sarnas/genotype.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <regex>
#include <sstream>

#include "sarnas/error.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

namespace {

constexpr std::size_t kZeroIndex = op_index(OpKind::Zero);

template <typename T>
std::vector<double> softmax_weights(const Tensor<T>& alpha) {
  if (alpha.shape() != Shape{kNumEdges, kNumOps}) {
    throw DimensionError("alpha must be (14,8), got " + alpha.shape().str());
  }
  const auto v = alpha.values();
  std::vector<double> out(v.size());
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    double peak = -INFINITY;
    for (std::size_t o = 0; o < kNumOps; ++o) peak = std::max(peak, static_cast<double>(v[e * kNumOps + o]));
    double total = 0.0;
    for (std::size_t o = 0; o < kNumOps; ++o) {
      out[e * kNumOps + o] = std::exp(static_cast<double>(v[e * kNumOps + o]) - peak);
      total += out[e * kNumOps + o];
    }
    for (std::size_t o = 0; o < kNumOps; ++o) out[e * kNumOps + o] /= total;
  }
  return out;
}

void validate_cell(const CellGenotype& cell, const char* type) {
  for (std::size_t k = 0; k < kNumIntermediate; ++k) {
    const std::string where = std::string(type) + " n" + std::to_string(k);
    for (const auto& edge : cell[k]) {
      if (edge.op == OpKind::Zero) throw InvariantError(where + ": Zero is not a retained operation");
      if (op_index(edge.op) >= kNumOps) throw InvariantError(where + ": unknown operation");
      if (edge.src >= kNumInputs + k) {
        throw InvariantError(where + ": source " + std::to_string(edge.src) + " does not precede the node");
      }
    }
    if (cell[k][0].src == cell[k][1].src) throw InvariantError(where + ": both connections share one source");
  }
}

std::string edge_text(const GenotypeEdge& e) { return std::string(op_name(e.op)) + "<-" + node_name(e.src); }

}  // namespace

void validate_genotype(const Genotype& g) {
  validate_cell(g.normal, "normal");
  validate_cell(g.reduce, "reduce");
}

CellGenotype derive_cell_genotype(std::span<const double> weights) {
  if (weights.size() != kNumEdges * kNumOps) throw DimensionError("derive: expected 14x8 weights");
  CellGenotype out{};
  std::size_t first_edge = 0;
  for (std::size_t k = 0; k < kNumIntermediate; ++k) {
    struct Scored {
      double score;
      std::size_t edge;
      std::size_t op;
    };
    std::vector<Scored> scored;
    for (std::size_t src = 0; src < kNumInputs + k; ++src) {
      const std::size_t e = first_edge + src;
      std::size_t best = 0;
      for (std::size_t o = 1; o < kNumOps; ++o) {
        if (o != kZeroIndex && weights[e * kNumOps + o] > weights[e * kNumOps + best]) best = o;
      }
      scored.push_back({weights[e * kNumOps + best], e, best});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    for (std::size_t i = 0; i < 2; ++i) {
      out[k][i] = {kAllOps[scored[i].op], cell_edges()[scored[i].edge].src};
    }
    first_edge += kNumInputs + k;
  }
  return out;
}

template <typename T>
Genotype derive_genotype(const AlphaParams<T>& alpha) {
  return {derive_cell_genotype(softmax_weights(alpha.normal)), derive_cell_genotype(softmax_weights(alpha.reduce))};
}

std::string serialize_genotype(const Genotype& g) {
  validate_genotype(g);
  std::string out(kGenotypeHeader);
  out += '\n';
  for (CellType type : {CellType::Normal, CellType::Reduce}) {
    const CellGenotype& cell = g.of(type);
    for (std::size_t k = 0; k < kNumIntermediate; ++k) {
      out += std::string(cell_type_name(type)) + " n" + std::to_string(k) + ": " + edge_text(cell[k][0]) + ", " +
             edge_text(cell[k][1]) + '\n';
    }
  }
  return out;
}

Genotype parse_genotype(std::string_view text) {
  std::vector<std::string> lines;
  {
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != kGenotypeHeader) {
    throw ParseError("genotype line 1: expected header \"" + std::string(kGenotypeHeader) + "\"");
  }
  if (lines.size() != 1 + 2 * kNumIntermediate) {
    throw ParseError("genotype: expected " + std::to_string(2 * kNumIntermediate) + " node lines, found " +
                     std::to_string(lines.size() - 1));
  }

  static const std::regex grammar(R"(^(normal|reduce) n(\d+): (\w+)<-(\w+), (\w+)<-(\w+)$)");
  Genotype g{};
  std::array<std::array<bool, kNumIntermediate>, 2> seen{};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "genotype line " + std::to_string(i + 1) + ": ";
    std::smatch m;
    if (!std::regex_match(lines[i], m, grammar)) {
      throw ParseError(where + "expected \"<normal|reduce> n<k>: <Op><-<src>, <Op><-<src>\"");
    }
    const CellType type = m[1] == "normal" ? CellType::Normal : CellType::Reduce;
    const std::size_t k = std::stoul(m[2]);
    if (k >= kNumIntermediate || m[2].length() != 1) throw ParseError(where + "node n" + m[2].str() + " out of range");
    auto& flag = seen[type == CellType::Normal ? 0 : 1][k];
    if (flag) throw ParseError(where + "duplicate entry for " + m[1].str() + " n" + m[2].str());
    flag = true;
    for (std::size_t j = 0; j < 2; ++j) {
      const std::string op_text = m[3 + 2 * j];
      const std::string src_text = m[4 + 2 * j];
      const auto op = parse_op_name(op_text);
      if (!op) throw ParseError(where + "unknown operation \"" + op_text + "\"");
      if (*op == OpKind::Zero) throw ParseError(where + "Zero is not a retained operation");
      const auto src = parse_node_name(src_text);
      if (!src) throw ParseError(where + "unknown source \"" + src_text + "\"");
      if (*src >= kNumInputs + k) throw ParseError(where + "source " + src_text + " does not precede n" + m[2].str());
      g.of(type)[k][j] = {*op, *src};
    }
    if (g.of(type)[k][0].src == g.of(type)[k][1].src) throw ParseError(where + "duplicate source");
  }
  return g;
}

Genotype random_genotype(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Genotype g{};
  for (CellType type : {CellType::Normal, CellType::Reduce}) {
    for (std::size_t k = 0; k < kNumIntermediate; ++k) {
      const std::size_t sources = kNumInputs + k;
      const std::size_t a = rng() % sources;
      std::size_t b = rng() % (sources - 1);
      if (b >= a) ++b;
      g.of(type)[k][0] = {kAllOps[rng() % (kNumOps - 1)], a};
      g.of(type)[k][1] = {kAllOps[rng() % (kNumOps - 1)], b};
    }
  }
  return g;
}

template <typename T>
DiscreteCell<T>::DiscreteCell(const CellShape& shape, const CellGenotype& genotype, std::uint64_t seed,
                              const OpOptions& options)
    : Cell<T>(shape.type), genotype_(genotype) {
  validate_cell(genotype, cell_type_name(shape.type));
  SeedStream seeds(seed);
  inputs_ = &this->register_module("inputs", std::make_unique<CellInputs<T>>(shape, seeds.next()));
  for (std::size_t k = 0; k < kNumIntermediate; ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      const GenotypeEdge& edge = genotype[k][j];
      const std::size_t stride = shape.type == CellType::Reduce && edge.src < kNumInputs ? 2 : 1;
      ops_[k][j] = &this->register_module(
          "n" + std::to_string(k) + "." + std::to_string(j) + "." + std::string(op_name(edge.op)),
          build_op<T>(edge.op, shape.channels, stride, seeds.next(), options));
    }
  }
}

template <typename T>
Tensor<T> DiscreteCell<T>::forward_cell(const Tensor<T>& prev_prev, const Tensor<T>& prev) {
  auto [s0, s1] = inputs_->align(prev_prev, prev);
  std::vector<Tensor<T>> states{s0, s1};
  for (std::size_t k = 0; k < kNumIntermediate; ++k) {
    Tensor<T> a = ops_[k][0]->forward(states[genotype_[k][0].src]);
    Tensor<T> b = ops_[k][1]->forward(states[genotype_[k][1].src]);
    if (a.shape() != b.shape()) {
      throw DimensionError("node n" + std::to_string(k) + ": operator outputs " + a.shape().str() + " and " +
                           b.shape().str() + " disagree");
    }
    states.push_back(add(a, b));
  }
  return channel_concat<T>({states.begin() + kNumInputs, states.end()});
}

template <typename T>
DiscreteNetwork<T>::DiscreteNetwork(const NetworkConfig& config, const Genotype& genotype, const OpOptions& options)
    : CellNetwork<T>(config), genotype_(genotype) {
  validate_genotype(genotype);
  this->assemble([&](std::size_t, const CellShape& shape, std::uint64_t seed) -> std::unique_ptr<Cell<T>> {
    return std::make_unique<DiscreteCell<T>>(shape, genotype_.of(shape.type), seed, options);
  });
}

std::size_t discrete_param_count(const NetworkConfig& config, const Genotype& genotype, const OpOptions& options) {
  validate_genotype(genotype);
  return network_param_count(config, [&](const CellShape& shape) {
    std::size_t body = 0;
    for (const auto& node : genotype.of(shape.type)) {
      for (const auto& edge : node) {
        const std::size_t stride = shape.type == CellType::Reduce && edge.src < kNumInputs ? 2 : 1;
        body += op_param_count(edge.op, shape.channels, stride, options);
      }
    }
    return body;
  });
}

std::string genotype_dot(const Genotype& g, CellType type) {
  validate_genotype(g);
  std::ostringstream os;
  os << "digraph " << cell_type_name(type) << " {\n  rankdir=LR;\n";
  for (std::size_t n = 0; n < kNumInputs + kNumIntermediate; ++n) os << "  " << node_name(n) << ";\n";
  os << "  out;\n";
  const CellGenotype& cell = g.of(type);
  for (std::size_t k = 0; k < kNumIntermediate; ++k) {
    for (const auto& edge : cell[k]) {
      os << "  " << node_name(edge.src) << " -> " << node_name(kNumInputs + k) << " [label=\"" << op_name(edge.op)
         << "\"];\n";
    }
  }
  for (std::size_t k = 0; k < kNumIntermediate; ++k) os << "  " << node_name(kNumInputs + k) << " -> out;\n";
  os << "}\n";
  return os.str();
}

template Genotype derive_genotype(const AlphaParams<float>&);
template Genotype derive_genotype(const AlphaParams<double>&);
template class DiscreteCell<float>;
template class DiscreteCell<double>;
template class DiscreteNetwork<float>;
template class DiscreteNetwork<double>;

}  // namespace sarnas
