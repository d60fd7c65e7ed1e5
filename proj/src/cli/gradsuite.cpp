#include "sarnas/gradsuite.hpp"

#include <algorithm>
#include <functional>

#include "sarnas/cell.hpp"
#include "sarnas/gradcheck.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

namespace {

using D = double;
using TensorD = Tensor<D>;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seeds_(seed) {}

  TensorD input(const Shape& shape, double lo = -1.0, double hi = 1.0) {
    return random_tensor<D>(shape, seeds_.next(), lo, hi, true);
  }
  std::uint64_t seed() { return seeds_.next(); }

  // Fresh BN statistics put an SE squeeze exactly on its ReLU kink; move every
  // parameter to a generic point first.
  void scramble(Module<D>& m) {
    for (auto* p : m.parameters()) {
      const auto r = random_tensor<D>(p->shape(), seeds_.next(), -1.0, 1.0, false);
      std::copy(r.values().begin(), r.values().end(), p->values().begin());
    }
  }

  void check(std::string name, const std::function<TensorD()>& output, const std::vector<TensorD>& wrt,
             double tolerance = kGradTolerance) {
    const std::uint64_t projection = seeds_.next();
    const auto report = check_gradients<D>([&] { return random_projection(output(), projection); }, wrt);
    cases_.push_back({std::move(name), report.max_error, tolerance, report.elements, report.worst});
  }

  /// Scalar-valued loss, checked as is.
  void check_scalar(std::string name, const std::function<TensorD()>& loss, const std::vector<TensorD>& wrt,
                    double tolerance = kGradTolerance) {
    const auto report = check_gradients<D>(loss, wrt);
    cases_.push_back({std::move(name), report.max_error, tolerance, report.elements, report.worst});
  }

  std::vector<GradCase> take() { return std::move(cases_); }

 private:
  SeedStream seeds_;
  std::vector<GradCase> cases_;
};

void primitives(Suite& s) {
  {
    auto x = s.input({2, 3, 5, 5});
    auto w = s.input({4, 3, 3, 3});
    Conv2dOptions o;
    o.padding = {1, 1};
    s.check("conv2d 3x3 pad 1", [&] { return conv2d(x, w, o); }, {x, w});
  }
  {
    auto x = s.input({2, 3, 6, 6});
    auto w = s.input({4, 3, 3, 3});
    Conv2dOptions o;
    o.stride = {2, 2};
    o.padding = {1, 1};
    s.check("conv2d 3x3 stride 2", [&] { return conv2d(x, w, o); }, {x, w});
  }
  {
    auto x = s.input({2, 4, 6, 6});
    auto w = s.input({4, 1, 3, 3});
    Conv2dOptions o;
    o.padding = {2, 2};
    o.dilation = {2, 2};
    o.groups = 4;
    s.check("conv2d depthwise dilation 2", [&] { return conv2d(x, w, o); }, {x, w});
  }
  {
    auto x = s.input({2, 4, 5, 6});
    auto w = s.input({2, 4, 1, 1});
    Conv2dOptions o;
    o.stride = {2, 2};
    s.check("conv2d 1x1 stride 2", [&] { return conv2d(x, w, o); }, {x, w});
  }
  for (std::size_t stride : {1, 2}) {
    auto x = s.input({2, 3, 6, 5});
    s.check("max pool stride " + std::to_string(stride), [&] { return pool2d(x, PoolMode::Max, stride); }, {x});
    auto y = s.input({2, 3, 6, 5});
    s.check("avg pool stride " + std::to_string(stride), [&] { return pool2d(y, PoolMode::Average, stride); }, {y});
  }
  {
    auto x = s.input({3, 4, 4, 5});
    auto g = s.input({4}, 0.5, 1.5);
    auto b = s.input({4});
    RunningStats<D> stats(4);
    s.check("batchnorm train", [&] { return batchnorm2d(x, g, b, stats, NormMode::Train); }, {x, g, b},
            kGradToleranceBatchNorm);
    RunningStats<D> fixed(4);
    for (std::size_t c = 0; c < 4; ++c) {
      fixed.mean[c] = 0.1 * static_cast<double>(c);
      fixed.var[c] = 0.5 + 0.25 * static_cast<double>(c);
    }
    auto y = s.input({3, 4, 4, 5});
    s.check("batchnorm eval", [&] { return batchnorm2d(y, g, b, fixed, NormMode::Eval); }, {y, g, b});
  }
  {
    auto x = s.input({2, 3, 4, 4});
    s.check("relu", [&] { return relu(x); }, {x});
    auto y = s.input({2, 3, 4, 4}, -3.0, 3.0);
    s.check("sigmoid", [&] { return sigmoid(y); }, {y});
  }
  {
    auto x = s.input({3, 5});
    auto w = s.input({4, 5});
    auto b = s.input({4});
    s.check("linear", [&] { return linear(x, w, b); }, {x, w, b});
  }
  {
    auto x = s.input({2, 3, 4, 5});
    s.check("global average pool", [&] { return global_avg_spatial(x); }, {x});
    s.check_scalar("sum", [&] { return sum(x); }, {x});
    s.check("shift spatial", [&] { return shift_spatial(x); }, {x});
    s.check("scale", [&] { return scale(x, 1.7); }, {x});
  }
  {
    auto a = s.input({2, 2, 3, 3});
    auto b = s.input({2, 3, 3, 3});
    s.check("channel concat", [&] { return channel_concat<D>({a, b}); }, {a, b});
  }
  {
    auto a = s.input({2, 3, 3, 3});
    auto b = s.input({2, 3, 3, 3});
    s.check("add", [&] { return add(a, b); }, {a, b});
    s.check("sub", [&] { return sub(a, b); }, {a, b});
    s.check("mul", [&] { return mul(a, b); }, {a, b});
  }
  {
    auto x = s.input({2, 3, 4, 4});
    auto g = s.input({2, 3});
    s.check("channel scale", [&] { return channel_scale(x, g); }, {x, g});
  }
  {
    auto x = s.input({3, 6}, -2.0, 2.0);
    s.check("softmax rows", [&] { return softmax_rows(x); }, {x});
  }
  {
    auto t0 = s.input({2, 2, 3, 3});
    auto t1 = s.input({2, 2, 3, 3});
    auto t2 = s.input({2, 2, 3, 3});
    auto w = s.input({5});
    s.check("weighted sum", [&] { return weighted_sum<D>({t0, t1, t2}, w, 1); }, {t0, t1, t2, w});
  }
  {
    auto logits = s.input({4, 5}, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 4, 1};
    s.check_scalar("softmax cross-entropy",
                   [&] { return softmax_cross_entropy(logits, std::span<const int>(labels)).loss; }, {logits});
  }
}

bool uses_batchnorm(OpKind kind, std::size_t stride) {
  switch (kind) {
    case OpKind::MaxPool3:
    case OpKind::AvgPool3:
    case OpKind::Zero:
      return false;
    case OpKind::SkipConnect:
      return stride == 2;
    default:
      return true;
  }
}

void operators(Suite& s) {
  for (OpKind kind : kAllOps) {
    for (std::size_t stride : {1, 2}) {
      auto op = build_op<D>(kind, 4, stride, s.seed());
      op->set_training(true);
      s.scramble(*op);
      auto x = s.input({2, 4, 6, 6});
      std::vector<TensorD> wrt{x};
      for (auto* p : op->parameters()) wrt.push_back(p->tensor());
      s.check(std::string(op_name(kind)) + " stride " + std::to_string(stride), [&] { return op->forward(x); }, wrt,
              uses_batchnorm(kind, stride) ? kGradToleranceBatchNorm : kGradTolerance);
    }
  }
}

void mixed(Suite& s) {
  std::vector<std::unique_ptr<OpInstance<D>>> owned;
  std::vector<OpInstance<D>*> ops;
  for (OpKind kind : kAllOps) {
    owned.push_back(build_op<D>(kind, 4, 1, s.seed()));
    ops.push_back(owned.back().get());
  }
  auto x = s.input({1, 4, 6, 6});
  auto alpha = s.input({1, kNumOps});
  s.check("mixed op wrt alpha", [&] { return mixed_op_forward<D>(x, softmax_rows(alpha), 0, ops); }, {alpha});
  s.check("mixed op wrt input", [&] { return mixed_op_forward<D>(x, softmax_rows(alpha), 0, ops); }, {x},
          kGradToleranceBatchNorm);

  for (CellType type : {CellType::Normal, CellType::Reduce}) {
    const CellShape shape{type, 4, 4, 2, false};
    SearchCell<D> cell(shape, nullptr, s.seed());
    s.scramble(cell);
    auto a = s.input({kNumEdges, kNumOps});
    auto p0 = s.input({1, 4, 4, 4});
    auto p1 = s.input({1, 4, 4, 4});
    s.check(std::string(cell_type_name(type)) + " cell wrt alpha and inputs",
            [&] { return cell.forward_with(p0, p1, softmax_rows(a)); }, {a, p0, p1}, kGradToleranceBatchNorm);
  }
}

}  // namespace

std::vector<GradCase> run_gradient_suite(std::uint64_t seed) {
  Suite s(seed);
  primitives(s);
  operators(s);
  mixed(s);
  return s.take();
}

}  // namespace sarnas
