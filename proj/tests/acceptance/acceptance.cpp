// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../support/genotype_oracle.hpp"
#include "../support/toy_bilevel.hpp"
#include "sarnas/commands.hpp"
#include "sarnas/genotype.hpp"
#include "sarnas/gradcheck.hpp"
#include "sarnas/gradsuite.hpp"
#include "sarnas/random.hpp"
#include "sarnas/skeleton.hpp"
#include "sarnas/training.hpp"

using namespace sarnas;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sarnas");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

CliRun cli_ok(const std::vector<std::string>& args) {
  CliRun r = cli(args);
  if (r.code != kExitOk) throw std::runtime_error(args.front() + " exited " + std::to_string(r.code) + ": " + r.err);
  return r;
}

std::string summary_value(const fs::path& summary, const std::string& key) {
  std::istringstream is(slurp(summary));
  for (std::string line; std::getline(is, line);)
    if (line.starts_with(key + "=")) return line.substr(key.size() + 1);
  throw std::runtime_error("no " + key + " in " + summary.string());
}

fs::path work_root() {
  const fs::path root = fs::temp_directory_path() / "sarnas_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  return root;
}

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = run_gradient_suite(1);
  const double secs = seconds_since(t0);
  std::size_t passed = 0;
  double worst = 0.0;
  for (const auto& c : cases) {
    passed += c.passed();
    worst = std::max(worst, c.max_error / c.tolerance);
    v.require(c.passed(), c.name + fmt(" %.2e > %.0e", c.max_error, c.tolerance));
  }
  v.require(secs < 120.0, fmt("took %.1fs", secs));
  if (v.pass) v.detail = fmt("%zu/%zu cases, worst error at %.3f of tolerance, %.1fs", passed, cases.size(), worst, secs);
  return v;
}

Verdict mixed_op_degeneracy() {
  Verdict v;
  std::vector<std::unique_ptr<OpInstance<double>>> owned;
  std::vector<OpInstance<double>*> ops;
  for (OpKind k : kAllOps) {
    owned.push_back(build_op<double>(k, 4, 1, 100 + op_index(k)));
    owned.back()->set_training(false);
    ops.push_back(owned.back().get());
  }
  const auto x = random_tensor<double>({2, 4, 6, 5}, 21, -1.0, 1.0, false);
  std::vector<std::vector<double>> outputs;
  for (auto* op : ops) {
    const auto y = op->forward(x);
    outputs.emplace_back(y.values().begin(), y.values().end());
  }
  double spike_err = 0.0;
  for (std::size_t k = 0; k < kNumOps; ++k) {
    std::vector<double> logits(kNumOps, 0.0);
    logits[k] = 40.0;
    const auto w = softmax_rows(Tensor<double>::leaf({1, kNumOps}, logits));
    const auto y = mixed_op_forward<double>(x, w, 0, ops);
    for (std::size_t i = 0; i < y.numel(); ++i) spike_err = std::max(spike_err, std::abs(y.at(i) - outputs[k][i]));
  }
  const auto uniform = softmax_rows(Tensor<double>::zeros({1, kNumOps}));
  const auto y = mixed_op_forward<double>(x, uniform, 0, ops);
  double mean_err = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    double mean = 0.0;
    for (const auto& o : outputs) mean += o[i];
    mean_err = std::max(mean_err, std::abs(y.at(i) - mean / kNumOps));
  }
  v.require(spike_err <= 1e-5, fmt("spike error %.2e", spike_err));
  v.require(mean_err <= 1e-6, fmt("uniform error %.2e", mean_err));
  if (v.pass) v.detail = fmt("spike max error %.2e, uniform max error %.2e", spike_err, mean_err);
  return v;
}

Verdict cell_structure() {
  Verdict v;
  v.require(cell_edges().size() == 14, "cell_edges() size " + std::to_string(cell_edges().size()));
  const auto x = random_tensor<float>({2, 8, 12, 10}, 3, -1.0, 1.0, false);
  const auto w = softmax_rows(Tensor<float>::zeros({kNumEdges, kNumOps}));
  NoGradGuard guard;
  for (CellType t : {CellType::Normal, CellType::Reduce}) {
    SearchCell<float> cell({t, 8, 8, 8, false}, nullptr, 5);
    v.require(cell.edge_count() == 14, std::string(cell_type_name(t)) + " cell edge count");
    const Shape want = t == CellType::Normal ? Shape{2, 32, 12, 10} : Shape{2, 32, 6, 5};
    const Shape got = cell.forward_with(x, x, w).shape();
    v.require(got == want, std::string(cell_type_name(t)) + " cell output " + got.str());
  }
  NetworkConfig c;
  c.cells = 6;
  c.init_channels = 16;
  c.classes = 60;
  SuperNet<float> net(c, init_alpha<float>(1));
  net.set_training(false);
  for (std::size_t i = 0; i < c.cells; ++i) v.require(net.search_cell(i).edge_count() == 14, "supernet cell edges");
  const Shape logits = net.forward(random_tensor<float>({2, 3, 112, 50}, 4, -1.0, 1.0, false)).shape();
  v.require(logits == Shape({2, 60}), "supernet logits " + logits.str());
  if (v.pass) v.detail = "14 edges; normal (12,10) kept, reduce -> (6,5); 6-cell C16 supernet (2,3,112,50) -> (2,60)";
  return v;
}

Verdict hypergradient_oracle() {
  using Toy = sarnas::testing::QuadraticToy<double>;
  Verdict v;
  double worst = 0.0;
  for (double eps : {0.01, 0.05, 0.1, 0.3, 0.5}) {
    for (double omega : {-1.0, -0.3, 0.2, 0.8, 1.7}) {
      const double alpha = 0.25;
      Toy toy(omega, alpha);
      const double g = alpha_hypergradient<double>(toy, {}, {}, eps)[0][0];
      const double expected = Toy::hypergradient(omega, alpha, eps);
      const double rel = std::abs(g - expected) / std::abs(expected);
      worst = std::max(worst, rel);
      v.require(rel <= 0.01, fmt("eps %.2f omega %.1f rel error %.3e", eps, omega, rel));
    }
  }

  // ε = 0 against a twin supernet's plain validation gradient.
  NetworkConfig c;
  c.cells = 3;
  c.init_channels = 4;
  auto batch = [](std::uint64_t seed) {
    Batch<double> b;
    b.inputs = random_tensor<double>({4, 3, 8, 6}, seed, -1.0, 1.0, false);
    b.labels = {0, 1, 2, 0};
    return b;
  };
  SuperNet<double> net(c, init_alpha<double>(4, 0.3));
  SuperNetProblem<double> problem(net);
  const auto g = alpha_hypergradient<double>(problem, batch(1), batch(2), 0.0);
  SuperNet<double> twin(c, init_alpha<double>(4, 0.3));
  SuperNetProblem<double> twin_problem(twin);
  backward(twin_problem.val_loss(batch(2)));
  const auto arch = twin_problem.arch();
  std::size_t mismatches = 0;
  for (std::size_t a = 0; a < arch.size(); ++a)
    for (std::size_t i = 0; i < g[a].size(); ++i) mismatches += g[a][i] != arch[a].grad()[i];
  v.require(mismatches == 0, std::to_string(mismatches) + " eps=0 entries differ");
  if (v.pass) v.detail = fmt("5x5 grid worst rel error %.2e; eps=0 bit-identical to val gradient", worst);
  return v;
}

Verdict genotype_oracle() {
  Verdict v;
  std::size_t mismatches = 0;
  std::size_t round_trip_failures = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto alpha = init_alpha<double>(derive_seed(seed, 17), 1.0);
    const Genotype g = derive_genotype(alpha);
    for (CellType t : {CellType::Normal, CellType::Reduce})
      mismatches += g.of(t) != sarnas::testing::brute_force_genotype(alpha.weights(t));
    const std::string text = serialize_genotype(g);
    round_trip_failures += parse_genotype(text) != g || serialize_genotype(parse_genotype(text)) != text;
    const Genotype r = random_genotype(seed);
    round_trip_failures += parse_genotype(serialize_genotype(r)) != r;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " cells differ from the brute-force ranking");
  v.require(round_trip_failures == 0, std::to_string(round_trip_failures) + " round trips failed");
  if (v.pass) v.detail = "1000 alphas x 2 cells match brute force; 2000 round trips identical";
  return v;
}

Verdict overfit_run() {
  struct Reached {
    std::size_t epoch;
  };
  Verdict v;
  SynthOptions so;
  so.classes = 2;
  so.per_class = 16;
  so.frames = 16;
  const Dataset data = make_dataset(synth_generate(so), PrepareOptions{});
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  NetworkConfig c;
  c.cells = 4;
  c.init_channels = 8;
  c.classes = 2;
  DiscreteNetwork<float> net(c, random_genotype(1));
  TrainConfig tc;
  tc.epochs = 200;
  tc.lr.lr0 = 0.05;
  tc.lr.epochs = 200;
  tc.batch = 8;

  // the "validation" split is the training set itself, scored in eval mode
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t reached = 0;
  double best = 0.0;
  try {
    train_classifier<float>(net, data, all, all, tc, [&](const TrainEpoch& e) {
      best = std::max(best, e.val_top1);
      if (e.val_top1 == 1.0) throw Reached{e.epoch};
    });
  } catch (const Reached& r) {
    reached = r.epoch;
  }
  const double secs = seconds_since(t0);
  v.require(reached > 0, fmt("best train top-1 %.4f after 200 epochs", best));
  v.require(secs < 300.0, fmt("took %.1fs", secs));
  if (v.pass) v.detail = fmt("100%% train top-1 on %zu samples at epoch %zu, %.1fs", data.size(), reached, secs);
  return v;
}

Verdict search_sanity(const fs::path& root) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string data = "data=" + (root / "data").string();
  cli_ok({"synth", "out=" + (root / "data").string(), "classes=3", "per_class=200", "frames=16"});
  const CliRun search =
      cli_ok({"search", data, "out=" + (root / "search").string(), "cells=4", "epochs=20", "frames=16"});

  double h0n = 0, h1n = 0, h0r = 0, h1r = 0;
  const auto at = search.out.find("entropy normal");
  if (at == std::string::npos ||
      std::sscanf(search.out.c_str() + at, "entropy normal %lf -> %lf, reduce %lf -> %lf", &h0n, &h1n, &h0r, &h1r) != 4)
    throw std::runtime_error("search printed no entropy summary");
  const double h0 = 0.5 * (h0n + h0r);
  const double h1 = 0.5 * (h1n + h1r);
  v.require(h1 < h0, fmt("(a) mean entropy %.6f -> %.6f", h0, h1));

  auto train = [&](const std::string& name, const std::string& genotype) {
    cli_ok({"train", data, "out=" + (root / name).string(), "genotype=" + genotype, "cells=4", "frames=16"});
    return std::stod(summary_value(root / name / "summary.txt", "holdout_top1"));
  };
  const double derived = train("derived", (root / "search" / "genotype.txt").string());
  v.require(derived >= 0.9, fmt("(b) derived held-out top-1 %.4f", derived));
  double random_mean = 0.0;
  std::string randoms;
  for (int i = 0; i < 5; ++i) {
    const double r = train("random" + std::to_string(i), "random:" + std::to_string(1000 + i));
    random_mean += r / 5.0;
    randoms += fmt(i ? " %.3f" : "%.3f", r);
  }
  v.require(derived > random_mean, fmt("(c) derived %.4f vs random mean %.4f", derived, random_mean));
  const double secs = seconds_since(t0);
  v.require(secs < 1800.0, fmt("took %.0fs", secs));
  if (v.pass)
    v.detail = fmt("entropy %.6f -> %.6f; derived %.4f >= 0.9 and > random mean %.4f (", h0, h1, derived,
                   random_mean) +
               randoms + fmt("); %.0fs", secs);
  return v;
}

Verdict parameter_accounting() {
  Verdict v;
  std::size_t checked = 0;
  for (OpKind k : kAllOps)
    for (std::size_t c : {8, 16})
      for (std::size_t s : {1, 2}) {
        auto op = build_op<float>(k, c, s, 1);
        std::size_t n = 0;
        for (auto* p : op->parameters()) n += p->numel();
        v.require(op_param_count(k, c, s) == n, fmt("%s C=%zu s=%zu", std::string(op_name(k)).c_str(), c, s));
        ++checked;
      }
  std::size_t nets = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    NetworkConfig c;
    c.cells = 3 + seed % 7;
    c.init_channels = seed % 2 ? 8 : 16;
    c.classes = 3 + seed % 5;
    const Genotype g = random_genotype(seed);
    const std::size_t discrete = discrete_param_count(c, g);
    v.require(discrete < supernet_param_count(c), fmt("seed %zu: discrete not below supernet", seed));
    if (seed < 6) {
      DiscreteNetwork<float> d(c, g);
      SuperNet<float> s(c, init_alpha<float>(seed));
      v.require(d.parameter_count() == discrete, fmt("seed %zu discrete enumeration", seed));
      v.require(s.parameter_count() == supernet_param_count(c), fmt("seed %zu supernet enumeration", seed));
    }
    ++nets;
  }
  if (v.pass) v.detail = fmt("%zu operator configs match enumeration; %zu discrete nets below their supernet", checked, nets);
  return v;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

Verdict determinism(const fs::path& root) {
  Verdict v;
  const std::string data = "data=" + (root / "data").string();
  const std::string geno = (root / "search" / "genotype.txt").string();
  const std::vector<std::vector<std::string>> commands{
      {"synth", "per_class=30"},
      {"search", data, "epochs=2", "channels=4"},
      {"train", data, "genotype=" + geno, "epochs=3"},
      {"eval", data, "genotype=" + geno, "checkpoint=" + (root / "derived" / "weights.ckpt").string()},
      {"export-dot", "input=" + (root / "search" / "alpha.ckpt").string()},
      {"gradcheck", "seed=3"},
  };
  std::size_t files = 0;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const fs::path out = root / ("repeat" + std::to_string(i));
    auto args = commands[i];
    args.push_back("out=" + out.string());
    cli_ok(args);
    const auto first = dir_bytes(out);
    fs::remove_all(out);
    cli_ok(args);
    const auto second = dir_bytes(out);
    v.require(first == second, commands[i][0] + " output differs between runs");
    files += first.size();
  }
  if (v.pass) v.detail = fmt("6 commands repeated, %zu output files bit-identical", files);
  return v;
}

}  // namespace

int main() {
  const fs::path root = work_root();
  std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"mixed-op degeneracy", mixed_op_degeneracy},
      {"cell structure", cell_structure},
      {"hypergradient oracle", hypergradient_oracle},
      {"genotype oracle", genotype_oracle},
      {"overfit run", overfit_run},
      {"search sanity", [&] { return search_sanity(root / "pipeline"); }},
      {"parameter accounting", parameter_accounting},
      {"determinism", [&] { return determinism(root / "pipeline"); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS  " : "FAIL  ") << name << ": " << v.detail << std::endl;
  }
  fs::remove_all(root);
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
