#include "sarnas/commands.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "sarnas/bilevel.hpp"
#include "sarnas/checkpoint.hpp"
#include "sarnas/error.hpp"
#include "sarnas/genotype.hpp"
#include "sarnas/gradsuite.hpp"
#include "sarnas/random.hpp"
#include "sarnas/skeleton.hpp"
#include "sarnas/training.hpp"

namespace sarnas {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSeedEnv = "SARNAS_SEED";
constexpr const char* kResolvedName = "config.resolved";
constexpr std::string_view kRandomGenotype = "random:";

void data_keys(ConfigSchema& s) {
  s.text("data", "", "dataset directory holding the manifest")
      .text("manifest", std::string(kManifestName), "manifest file name inside the data directory")
      .size("frames", 16, "frames T after uniform sampling")
      .text("layout", "custom:6x2", "joint layout: ntu, kinetics or custom:<joints>x<persons>")
      .flag("center", false, "subtract the per-clip coordinate mean")
      .real("holdout", 0.2, "fraction held out from search and training")
      .size("split_seed", 1, "seed of the holdout and validation splits");
}

void network_keys(ConfigSchema& s) {
  s.size("cells", 4, "cell count L")
      .size("channels", 8, "initial channels C")
      .size("classes", 0, "class count K (0: infer from the data)");
}

void schedule_keys(ConfigSchema& s, std::size_t epochs, double lr, std::size_t batch) {
  s.size("epochs", epochs, "training epochs")
      .size("batch", batch, "minibatch size")
      .real("lr", lr, "initial weight learning rate")
      .real("lr_min", 1e-4, "final learning rate of the cosine schedule")
      .choice("decay", {"cosine", "step"}, "learning-rate decay")
      .flag("decay_per_step", false, "update the learning rate every step instead of every epoch")
      .size("decay_every", 10, "step decay: epochs between drops")
      .real("decay_factor", 0.1, "step decay: multiplier per drop")
      .real("momentum", 0.9, "SGD momentum");
}

std::map<std::string, ConfigSchema, std::less<>> build_schemas() {
  std::map<std::string, ConfigSchema, std::less<>> m;
  {
    ConfigSchema s;
    s.text("out", "runs/synth", "output dataset directory")
        .size("classes", 3, "class count K")
        .size("per_class", 200, "clips per class M")
        .size("frames", 16, "frames per clip")
        .text("layout", "custom:6x2", "joint layout of the generated clips")
        .real("noise", 0.05, "gaussian noise relative to the amplitude")
        .real("separation", 0.06, "maximum class phase deviation in radians")
        .size("seed", 7, "generator seed");
    m.emplace("synth", std::move(s));
  }
  {
    ConfigSchema s;
    data_keys(s);
    s.text("out", "runs/search", "run directory");
    network_keys(s);
    schedule_keys(s, 20, 0.025, 8);
    s.real("alpha_lr", 1.0, "architecture learning rate")
        .real("alpha_wd", 0.0, "architecture weight decay")
        .real("alpha_noise", 1e-3, "std of the initial architecture logits")
        .choice("order", {"second", "first"}, "hypergradient: second-order virtual step or first-order")
        .size("seed", 1, "weight, architecture and batch-order seed");
    m.emplace("search", std::move(s));
  }
  {
    ConfigSchema s;
    data_keys(s);
    s.text("out", "runs/train", "run directory")
        .text("genotype", "", "genotype file, or random:<seed>")
        .real("val_fraction", 0.1, "share of the training data used to pick the best epoch");
    network_keys(s);
    schedule_keys(s, 20, 0.05, 16);
    s.size("seed", 1, "weight and batch-order seed");
    m.emplace("train", std::move(s));
  }
  {
    ConfigSchema s;
    data_keys(s);
    s.text("out", "runs/eval", "run directory")
        .choice("subset", {"holdout", "rest", "all"}, "samples to evaluate")
        .text("genotype", "", "genotype file, or random:<seed>")
        .text("checkpoint", "", "weights checkpoint (empty: freshly initialised weights)");
    network_keys(s);
    s.size("batch", 64, "evaluation batch size").size("seed", 1, "weight seed when no checkpoint is given");
    m.emplace("eval", std::move(s));
  }
  {
    ConfigSchema s;
    s.text("input", "", "genotype file or architecture checkpoint").text("out", "runs/dot", "output directory");
    m.emplace("export-dot", std::move(s));
  }
  {
    ConfigSchema s;
    s.size("seed", 1, "seed of the random test tensors").text("out", "runs/gradcheck", "output directory");
    m.emplace("gradcheck", std::move(s));
  }
  return m;
}

const std::map<std::string, ConfigSchema, std::less<>>& schemas() {
  static const auto m = build_schemas();
  return m;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Creates the run directory and writes the resolved configuration into it.
fs::path open_run(const Config& config) {
  const fs::path dir = config.text("out");
  if (dir.empty()) throw ConfigError("out must not be empty");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / kResolvedName, config.echo());
  return dir;
}

double fraction(const Config& c, std::string_view key, bool allow_one = false) {
  const double v = c.real(key);
  if (!(v >= 0.0 && (allow_one ? v <= 1.0 : v < 1.0))) {
    throw ConfigError(std::string(key) + " must lie in [0," + (allow_one ? "1]" : "1)"));
  }
  return v;
}

double positive(const Config& c, std::string_view key, bool allow_zero = false) {
  const double v = c.real(key);
  if (!(allow_zero ? v >= 0.0 : v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string(key) + (allow_zero ? " must be non-negative" : " must be positive"));
  }
  return v;
}

std::size_t at_least(const Config& c, std::string_view key, std::size_t lo) {
  const std::size_t v = c.size(key);
  if (v < lo) throw ConfigError(std::string(key) + " must be at least " + std::to_string(lo));
  return v;
}

struct DataSplit {
  Dataset data;
  std::vector<std::size_t> rest;     // everything outside the holdout
  std::vector<std::size_t> holdout;
};

DataSplit load_split(const Config& c) {
  if (c.text("data").empty()) throw ConfigError("data is required");
  PrepareOptions prep;
  prep.frames = at_least(c, "frames", 1);
  prep.layout = parse_layout(c.text("layout"));
  prep.center = c.flag("center");
  const double holdout = fraction(c, "holdout");
  DataSplit s;
  s.data = load_dataset(c.text("data"), prep, c.text("manifest"));
  auto [rest, held] = split_indices(s.data.size(), 1.0 - holdout, c.seed("split_seed"));
  s.rest = std::move(rest);
  s.holdout = std::move(held);
  if (s.data.classes() < 2) throw ConfigError("the dataset needs at least 2 classes");
  return s;
}

std::vector<std::size_t> pick(const std::vector<std::size_t>& from, const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(from[p]);
  return out;
}

NetworkConfig network_config(const Config& c, const Dataset& data, std::uint64_t seed) {
  NetworkConfig n;
  n.cells = c.size("cells");
  n.init_channels = at_least(c, "channels", 1);
  n.classes = c.size("classes") == 0 ? data.classes() : c.size("classes");
  if (n.classes < data.classes()) {
    throw ConfigError("classes=" + std::to_string(n.classes) + " but the data has labels up to " +
                      std::to_string(data.classes() - 1));
  }
  n.seed = seed;
  reduction_positions(n.cells);
  return n;
}

LrSchedule schedule(const Config& c) {
  LrSchedule s;
  s.kind = c.text("decay") == "step" ? DecayKind::Step : DecayKind::Cosine;
  s.lr0 = positive(c, "lr", true);
  s.lr_min = positive(c, "lr_min", true);
  s.epochs = c.size("epochs");
  s.per_step = c.flag("decay_per_step");
  s.step_every = at_least(c, "decay_every", 1);
  s.step_factor = positive(c, "decay_factor", true);
  return s;
}

Genotype load_genotype(const std::string& spec) {
  if (spec.empty()) throw ConfigError("genotype is required");
  if (spec.starts_with(kRandomGenotype)) {
    std::uint64_t seed = 0;
    const std::string_view digits = std::string_view(spec).substr(kRandomGenotype.size());
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
    if (digits.empty() || res.ec != std::errc() || res.ptr != digits.data() + digits.size()) {
      throw ConfigError("genotype \"" + spec + "\": expected random:<seed>");
    }
    return random_genotype(seed);
  }
  return parse_genotype(read_text(spec));
}

constexpr std::string_view kAlphaNormal = "alpha.normal";
constexpr std::string_view kAlphaReduce = "alpha.reduce";

void write_alpha(const fs::path& path, const AlphaParams<float>& alpha) {
  write_checkpoint(path, {make_entry<float>(std::string(kAlphaNormal), alpha.normal.shape(), alpha.normal.values()),
                          make_entry<float>(std::string(kAlphaReduce), alpha.reduce.shape(), alpha.reduce.values())});
}

AlphaParams<float> read_alpha(const fs::path& path) {
  const auto entries = read_checkpoint(path);
  const Shape expected{kNumEdges, kNumOps};
  std::optional<Tensor<float>> normal;
  std::optional<Tensor<float>> reduce;
  for (const auto& e : entries) {
    if (e.name != kAlphaNormal && e.name != kAlphaReduce) {
      throw CheckpointError(path.string() + ": unexpected tensor " + e.name + " in an architecture checkpoint");
    }
    if (e.shape != expected) {
      throw CheckpointError(path.string() + ": " + e.name + " has shape " + e.shape.str() + ", expected " +
                            expected.str());
    }
    (e.name == kAlphaNormal ? normal : reduce) = Tensor<float>::leaf(e.shape, e.values);
  }
  if (!normal || !reduce) throw CheckpointError(path.string() + ": missing alpha.normal or alpha.reduce");
  return {*normal, *reduce};
}

bool is_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::string head(11, '\0');
  is.read(head.data(), static_cast<std::streamsize>(head.size()));
  return is.gcount() == 11 && head == "SARNAS-CKPT";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_row(std::ostream& out, const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  out << buf << std::flush;
}

int cmd_synth(const Config& c, std::ostream& out) {
  SynthOptions o;
  o.classes = c.size("classes");
  o.per_class = at_least(c, "per_class", 1);
  o.frames = at_least(c, "frames", 1);
  o.layout = parse_layout(c.text("layout"));
  o.noise = positive(c, "noise", true);
  o.separation = positive(c, "separation", true);
  o.seed = c.seed("seed");
  const auto clips = synth_generate(o);

  const fs::path dir = open_run(c);
  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (ec) throw IoError("cannot create " + (dir / "clips").string() + ": " + ec.message());
  std::vector<ManifestEntry> manifest;
  std::vector<std::size_t> counts(o.classes, 0);
  char name[64];
  for (const auto& clip : clips) {
    std::snprintf(name, sizeof name, "clips/c%d_%04zu.skl", clip.label, counts[clip.label]++);
    save_clip(clip, dir / name);
    manifest.push_back({name, clip.label});
  }
  write_text(dir / kManifestName, format_manifest(manifest));
  for (std::size_t k = 0; k < counts.size(); ++k) out << "class " << k << ": " << counts[k] << " clips\n";
  out << "samples: " << clips.size() << "\nwrote " << (dir / kManifestName).string() << '\n';
  return kExitOk;
}

int cmd_search(const Config& c, std::ostream& out) {
  const DataSplit split = load_split(c);
  const std::uint64_t seed = c.seed("seed");
  const NetworkConfig net_config = network_config(c, split.data, derive_seed(seed, 1));
  SearchConfig sc;
  sc.epochs = c.size("epochs");
  sc.omega_lr = schedule(c);
  sc.momentum = positive(c, "momentum", true);
  sc.alpha_lr = positive(c, "alpha_lr", true);
  sc.alpha_weight_decay = positive(c, "alpha_wd", true);
  sc.second_order = c.text("order") == "second";
  const std::size_t batch = at_least(c, "batch", 1);
  const double noise = positive(c, "alpha_noise", true);

  auto [a_pos, b_pos] = split_indices(split.rest.size(), 0.5, derive_seed(c.seed("split_seed"), 1));
  const auto arch_train = pick(split.rest, a_pos);
  const auto arch_val = pick(split.rest, b_pos);
  if (arch_train.empty() || arch_val.empty()) throw ConfigError("too few samples for a 50/50 search split");
  SuperNet<float> net(net_config, init_alpha<float>(derive_seed(seed, 2), noise));

  const fs::path dir = open_run(c);
  out << "search: " << arch_train.size() << " architecture-train / " << arch_val.size() << " architecture-val samples, "
      << net_config.classes << " classes, " << net.parameter_count() << " weights\n";
  const auto t0 = std::chrono::steady_clock::now();
  auto source = [&](const std::vector<std::size_t>& indices, std::uint64_t stream) {
    return [&, indices, stream](std::size_t epoch) {
      auto order = indices;
      seeded_shuffle(order, derive_seed(derive_seed(seed, stream), epoch));
      return make_batches<float>(split.data, order, batch);
    };
  };
  const auto result = run_search<float>(net, sc, source(arch_train, 3), source(arch_val, 4), [&](const EpochMetrics& m) {
    print_row(out, "epoch %3zu  train %.4f  val %.4f  top1 %.3f  H(normal) %.5f  H(reduce) %.5f  %.1fs\n", m.epoch,
              m.train_loss, m.val_loss, m.val_top1, m.entropy_normal, m.entropy_reduce, seconds_since(t0));
  });

  write_text(dir / "metrics.csv", metrics_csv(result.metrics));
  write_alpha(dir / "alpha.ckpt", net.alpha());
  write_alpha(dir / "alpha_best.ckpt", result.best);
  const Genotype genotype = derive_genotype(net.alpha());
  write_text(dir / "genotype.txt", serialize_genotype(genotype));
  print_row(out, "entropy normal %.6f -> %.6f, reduce %.6f -> %.6f\n", result.initial_entropy_normal,
            mean_edge_entropy(net.alpha().normal), result.initial_entropy_reduce, mean_edge_entropy(net.alpha().reduce));
  out << serialize_genotype(genotype) << "wrote " << (dir / "genotype.txt").string() << '\n';
  return kExitOk;
}

int cmd_train(const Config& c, std::ostream& out) {
  const DataSplit split = load_split(c);
  const Genotype genotype = load_genotype(c.text("genotype"));
  const std::uint64_t seed = c.seed("seed");
  const NetworkConfig net_config = network_config(c, split.data, derive_seed(seed, 1));
  TrainConfig tc;
  tc.epochs = c.size("epochs");
  tc.lr = schedule(c);
  tc.momentum = positive(c, "momentum", true);
  tc.batch = at_least(c, "batch", 1);
  tc.seed = derive_seed(seed, 2);
  const double val_fraction = fraction(c, "val_fraction");
  auto [t_pos, v_pos] = split_indices(split.rest.size(), 1.0 - val_fraction, derive_seed(c.seed("split_seed"), 2));
  const auto train = pick(split.rest, t_pos);
  const auto val = pick(split.rest, v_pos);
  if (train.empty()) throw ConfigError("the training split is empty");
  DiscreteNetwork<float> net(net_config, genotype);

  const fs::path dir = open_run(c);
  const std::size_t params = net.parameter_count();
  out << "train: " << train.size() << " train / " << val.size() << " val / " << split.holdout.size()
      << " holdout samples\nparameters: " << params << '\n';
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train_classifier<float>(net, split.data, train, val, tc, [&](const TrainEpoch& e) {
    print_row(out, "epoch %3zu  loss %.4f  train top1 %.3f  val loss %.4f  val top1 %.3f  lr %.5f  %.1fs\n", e.epoch,
              e.train_loss, e.train_top1, e.val_loss, e.val_top1, e.lr, seconds_since(t0));
  });
  write_text(dir / "metrics.csv", train_metrics_csv(result.epochs));
  write_checkpoint(dir / "weights.ckpt", module_state<float>(net));
  write_text(dir / "genotype.txt", serialize_genotype(genotype));

  std::string summary = "parameters=" + std::to_string(params) + "\nbest_epoch=" + std::to_string(result.best_epoch) + '\n';
  if (!result.epochs.empty()) {
    const double first = result.epochs.front().train_loss;
    double lowest = first;
    for (const auto& e : result.epochs) lowest = std::min(lowest, e.train_loss);
    const bool decreased = lowest < 0.99 * first;
    summary += "train_loss_first=" + num(first) + "\ntrain_loss_last=" + num(result.epochs.back().train_loss) +
               "\ntrain_loss_decreased=" + (decreased ? "true" : "false") + '\n';
    if (!decreased) out << "warning: training loss never fell 1% below its first-epoch value\n";
  }
  if (!split.holdout.empty()) {
    const EvalResult held = evaluate<float>(net, make_batches<float>(split.data, split.holdout, 64));
    summary += "holdout_samples=" + std::to_string(held.samples) + "\nholdout_top1=" + num(held.top1) +
               "\nholdout_top5=" + num(held.top5) + '\n';
    print_row(out, "holdout top1 %.4f  top5 %.4f  (%zu samples)\n", held.top1, held.top5, held.samples);
  }
  write_text(dir / "summary.txt", summary);
  out << "best epoch " << result.best_epoch << ", wrote " << (dir / "weights.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const Config& c, std::ostream& out) {
  const DataSplit split = load_split(c);
  const Genotype genotype = load_genotype(c.text("genotype"));
  const NetworkConfig net_config = network_config(c, split.data, derive_seed(c.seed("seed"), 1));
  const std::size_t batch = at_least(c, "batch", 1);
  DiscreteNetwork<float> net(net_config, genotype);
  if (!c.text("checkpoint").empty()) load_module_state<float>(net, read_checkpoint(c.text("checkpoint")));
  std::vector<std::size_t> indices;
  if (c.text("subset") == "holdout") {
    indices = split.holdout;
  } else if (c.text("subset") == "rest") {
    indices = split.rest;
  } else {
    indices.resize(split.data.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  if (indices.empty()) throw ConfigError("subset " + c.text("subset") + " is empty");

  const fs::path dir = open_run(c);
  const EvalResult r = evaluate<float>(net, make_batches<float>(split.data, indices, batch));
  write_text(dir / "eval.csv",
             "samples,loss,top1,top5\n" + std::to_string(r.samples) + ',' + num(r.loss) + ',' + num(r.top1) + ',' +
                 num(r.top5) + '\n');
  print_row(out, "top1 %.4f  top5 %.4f  loss %.4f  (%zu samples)\n", r.top1, r.top5, r.loss, r.samples);
  return kExitOk;
}

int cmd_export_dot(const Config& c, std::ostream& out) {
  const fs::path input = c.text("input");
  if (input.empty()) throw ConfigError("input is required");
  std::string normal;
  std::string reduce;
  if (is_checkpoint(input)) {
    const auto alpha = read_alpha(input);
    normal = relaxed_cell_dot(alpha, CellType::Normal);
    reduce = relaxed_cell_dot(alpha, CellType::Reduce);
  } else {
    const Genotype g = parse_genotype(read_text(input));
    normal = genotype_dot(g, CellType::Normal);
    reduce = genotype_dot(g, CellType::Reduce);
  }
  const fs::path dir = open_run(c);
  write_text(dir / "normal.dot", normal);
  write_text(dir / "reduce.dot", reduce);
  out << "wrote " << (dir / "normal.dot").string() << " and " << (dir / "reduce.dot").string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Config& c, std::ostream& out) {
  const std::uint64_t seed = c.seed("seed");
  const fs::path dir = open_run(c);
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = run_gradient_suite(seed);
  std::string csv = "case,max_rel_error,tolerance,elements,passed\n";
  std::size_t failed = 0;
  for (const auto& g : cases) {
    csv += g.name + ',' + num(g.max_error) + ',' + num(g.tolerance) + ',' + std::to_string(g.elements) + ',' +
           (g.passed() ? "true" : "false") + '\n';
    print_row(out, "%-4s %-40s %.3e (tol %.0e)%s%s\n", g.passed() ? "ok" : "FAIL", g.name.c_str(), g.max_error,
              g.tolerance, g.passed() ? "" : "  worst at ", g.passed() ? "" : g.worst.c_str());
    failed += !g.passed();
  }
  write_text(dir / "gradcheck.csv", csv);
  print_row(out, "%zu/%zu cases passed in %.1fs\n", cases.size() - failed, cases.size(), seconds_since(t0));
  return failed == 0 ? kExitOk : kExitFailure;
}

std::string key_help(const ConfigSchema& schema) {
  std::string text = "Keys (key=value, later wins):\n";
  for (const auto& k : schema.keys()) {
    std::string line = "  " + k.name + "=" + k.default_value;
    if (line.size() < 28) line.resize(28, ' ');
    text += line + "  " + k.help;
    if (!k.choices.empty()) {
      text += " {";
      for (std::size_t i = 0; i < k.choices.size(); ++i) text += (i ? "|" : "") + k.choices[i];
      text += '}';
    }
    text += '\n';
  }
  return text;
}

}  // namespace

const ConfigSchema& command_schema(std::string_view command) {
  auto it = schemas().find(command);
  if (it == schemas().end()) throw UsageError("unknown command \"" + std::string(command) + "\"");
  return it->second;
}

int run_command(std::string_view command, const Config& config, std::ostream& out) {
  if (command == "synth") return cmd_synth(config, out);
  if (command == "search") return cmd_search(config, out);
  if (command == "train") return cmd_train(config, out);
  if (command == "eval") return cmd_eval(config, out);
  if (command == "export-dot") return cmd_export_dot(config, out);
  if (command == "gradcheck") return cmd_gradcheck(config, out);
  throw UsageError("unknown command \"" + std::string(command) + "\"");
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Differentiable architecture search for skeleton action recognition", "sarnas"};
  app.require_subcommand(1);
  struct Invocation {
    std::string config_file;
    std::vector<std::string> overrides;
  };
  std::map<std::string, Invocation, std::less<>> invocations;
  const std::map<std::string_view, std::string_view> blurbs{
      {"synth", "generate a synthetic skeleton dataset"},
      {"search", "bilevel architecture search, writes alpha and the derived genotype"},
      {"train", "train a discrete network from a genotype"},
      {"eval", "top-1 / top-5 of a trained checkpoint"},
      {"export-dot", "DOT graphs of a genotype or an architecture checkpoint"},
      {"gradcheck", "finite-difference gradient suite"}};
  for (std::string_view name : kCommands) {
    auto& inv = invocations[std::string(name)];
    CLI::App* sub = app.add_subcommand(std::string(name), std::string(blurbs.at(name)));
    sub->add_option("--config", inv.config_file, "key=value configuration file");
    sub->add_option("overrides", inv.overrides, "key=value overrides");
    sub->footer(key_help(command_schema(name)));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const Invocation& inv = invocations.at(command);
  try {
    const std::string file_text = inv.config_file.empty() ? std::string() : read_text(inv.config_file);
    const Config config = resolve_config(command_schema(command), file_text, inv.overrides, kSeedEnv);
    return run_command(command, config, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace sarnas
