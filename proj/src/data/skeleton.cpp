#include "sarnas/skeleton.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "sarnas/error.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

namespace {

void require_clip(const SkeletonClip& clip, const char* what) {
  if (clip.frames == 0) throw InputError(std::string(what) + ": clip has no frames");
  if (clip.data.size() != clip.frames * clip.persons * clip.joints_per_person * clip.channels) {
    throw InputError(std::string(what) + ": clip data does not match its declared dimensions");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

/// Whitespace-separated tokens of one line with their absolute byte offsets.
struct Token {
  std::string_view text;
  std::size_t offset;
};

std::vector<Token> split_line(std::string_view text, std::size_t begin, std::size_t end) {
  std::vector<Token> out;
  std::size_t i = begin;
  while (i < end) {
    while (i < end && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < end && !is_space(text[i])) ++i;
    if (i > start) out.push_back({text.substr(start, i - start), start});
  }
  return out;
}

std::size_t parse_count(const Token& t, const char* what) {
  std::size_t v = 0;
  auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
  if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
    throw ParseError("clip byte " + std::to_string(t.offset) + ": " + what + " is not a non-negative integer");
  }
  return v;
}

}  // namespace

std::string Layout::name() const {
  switch (kind) {
    case LayoutKind::Ntu:
      return "ntu";
    case LayoutKind::Kinetics:
      return "kinetics";
    case LayoutKind::Custom:
      break;
  }
  return "custom:" + std::to_string(joints_per_person) + "x" + std::to_string(persons_max);
}

Layout parse_layout(std::string_view text) {
  if (text == "ntu") return Layout::ntu();
  if (text == "kinetics") return Layout::kinetics();
  constexpr std::string_view prefix = "custom:";
  if (text.starts_with(prefix)) {
    const std::string_view rest = text.substr(prefix.size());
    const auto x = rest.find('x');
    std::size_t joints = 0;
    std::size_t persons = 0;
    if (x != std::string_view::npos) {
      const auto a = std::from_chars(rest.data(), rest.data() + x, joints);
      const auto b = std::from_chars(rest.data() + x + 1, rest.data() + rest.size(), persons);
      if (a.ec == std::errc() && a.ptr == rest.data() + x && b.ec == std::errc() &&
          b.ptr == rest.data() + rest.size() && joints > 0 && persons > 0) {
        return Layout::custom(joints, persons);
      }
    }
  }
  throw ConfigError("unknown layout \"" + std::string(text) + "\" (expected ntu, kinetics or custom:<joints>x<persons>)");
}

std::vector<std::size_t> sample_indices(std::size_t source_frames, std::size_t target_frames) {
  if (source_frames == 0) throw InputError("uniform sampling of an empty clip");
  if (target_frames == 0) throw InputError("uniform sampling to zero frames");
  std::vector<std::size_t> out(target_frames);
  for (std::size_t i = 0; i < target_frames; ++i) out[i] = i * source_frames / target_frames;
  return out;
}

SkeletonClip uniform_sample(const SkeletonClip& clip, std::size_t target_frames) {
  const auto indices = sample_indices(clip.frames, target_frames);
  require_clip(clip, "uniform_sample");
  SkeletonClip out = clip;
  out.frames = target_frames;
  const std::size_t stride = clip.persons * clip.joints_per_person * clip.channels;
  out.data.resize(target_frames * stride);
  for (std::size_t i = 0; i < target_frames; ++i) {
    std::copy_n(clip.data.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

SkeletonClip select_persons(const SkeletonClip& clip, std::size_t keep) {
  require_clip(clip, "select_persons");
  if (clip.channels < 3) throw InputError("select_persons: clip has no confidence channel");
  if (clip.persons <= keep) return clip;
  std::vector<double> score(clip.persons, 0.0);
  for (std::size_t f = 0; f < clip.frames; ++f) {
    for (std::size_t p = 0; p < clip.persons; ++p) {
      for (std::size_t j = 0; j < clip.joints_per_person; ++j) score[p] += clip.at(f, p, j, 2);
    }
  }
  std::vector<std::size_t> order(clip.persons);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  SkeletonClip out = clip;
  out.persons = keep;
  out.data.assign(clip.frames * keep * clip.joints_per_person * clip.channels, 0.0);
  for (std::size_t f = 0; f < clip.frames; ++f) {
    for (std::size_t slot = 0; slot < keep; ++slot) {
      for (std::size_t j = 0; j < clip.joints_per_person; ++j) {
        for (std::size_t c = 0; c < clip.channels; ++c) out.at(f, slot, j, c) = clip.at(f, order[slot], j, c);
      }
    }
  }
  return out;
}

SkeletonClip center_clip(const SkeletonClip& clip) {
  require_clip(clip, "center_clip");
  SkeletonClip out = clip;
  const std::size_t count = clip.frames * clip.persons * clip.joints_per_person;
  if (count == 0) return out;
  for (std::size_t c = 0; c < clip.channels; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < count; ++i) mean += clip.data[i * clip.channels + c];
    mean /= static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) out.data[i * clip.channels + c] -= mean;
  }
  return out;
}

ActionTensor encode(const SkeletonClip& clip, const Layout& layout) {
  require_clip(clip, "encode");
  if (clip.channels != 3) throw InputError("encode: expected 3 channels, got " + std::to_string(clip.channels));
  if (clip.joints_per_person != layout.joints_per_person) {
    throw InputError("encode: clip has " + std::to_string(clip.joints_per_person) + " joints per person, layout " +
                     layout.name() + " expects " + std::to_string(layout.joints_per_person));
  }
  if (clip.persons > layout.persons_max) {
    throw InputError("encode: " + std::to_string(clip.persons) + " persons exceed the layout maximum of " +
                     std::to_string(layout.persons_max));
  }
  ActionTensor out;
  out.frames = clip.frames;
  out.columns = layout.columns();
  out.data.assign(3 * out.frames * out.columns, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < clip.frames; ++t) {
      for (std::size_t p = 0; p < clip.persons; ++p) {
        for (std::size_t j = 0; j < clip.joints_per_person; ++j) {
          out.data[(c * out.frames + t) * out.columns + p * layout.joints_per_person + j] =
              static_cast<float>(clip.at(t, p, j, c));
        }
      }
    }
  }
  return out;
}

std::vector<SkeletonClip> synth_generate(const SynthOptions& o) {
  if (o.classes < 2) throw ConfigError("synthetic data needs at least 2 classes, got " + std::to_string(o.classes));
  if (o.frames == 0 || o.per_class == 0) throw ConfigError("synthetic data needs frames > 0 and per_class > 0");
  if (!(o.noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative");
  if (!(o.separation >= 0.0)) throw ConfigError("synthetic class separation must be non-negative");
  const std::size_t joints = o.layout.joints_per_person;
  const std::size_t persons = o.layout.persons_max;
  const std::size_t tracks = persons * joints * 3;
  constexpr double kAmplitude = 1.0;
  const double two_pi = 2.0 * std::numbers::pi;

  // shared per-track frequency and phase; each class perturbs the phases
  std::mt19937_64 base_rng(derive_seed(o.seed, 0));
  std::vector<double> frequency(tracks);
  std::vector<double> base_phase(tracks);
  for (std::size_t i = 0; i < tracks; ++i) {
    frequency[i] = 1.0 + static_cast<double>(base_rng() % 2);
    base_phase[i] = two_pi * unit_uniform(base_rng);
  }

  std::vector<SkeletonClip> out;
  out.reserve(o.classes * o.per_class);
  for (std::size_t k = 0; k < o.classes; ++k) {
    std::mt19937_64 pattern_rng(derive_seed(o.seed, 1 + k));
    std::vector<double> phase(tracks);
    for (std::size_t i = 0; i < tracks; ++i) {
      phase[i] = base_phase[i] + o.separation * (2.0 * unit_uniform(pattern_rng) - 1.0);
    }
    for (std::size_t n = 0; n < o.per_class; ++n) {
      std::mt19937_64 rng(derive_seed(derive_seed(o.seed, 1 + o.classes + k), n));
      const double offset = two_pi * unit_uniform(rng);
      SkeletonClip clip;
      clip.frames = o.frames;
      clip.persons = persons;
      clip.joints_per_person = joints;
      clip.channels = 3;
      clip.label = static_cast<int>(k);
      clip.data.resize(o.frames * tracks);
      for (std::size_t t = 0; t < o.frames; ++t) {
        const double time = static_cast<double>(t) / static_cast<double>(o.frames);
        for (std::size_t i = 0; i < tracks; ++i) {
          double v = kAmplitude * std::sin(two_pi * frequency[i] * time + phase[i] + offset);
          if (o.noise > 0.0) v += o.noise * kAmplitude * standard_normal(rng);
          clip.data[t * tracks + i] = v;
        }
      }
      out.push_back(std::move(clip));
    }
  }
  return out;
}

std::string format_clip(const SkeletonClip& clip) {
  require_clip(clip, "format_clip");
  std::string out = "SKL1 " + std::to_string(clip.frames) + ' ' + std::to_string(clip.joints_per_person) + ' ' +
                    std::to_string(clip.channels) + ' ' + std::to_string(clip.persons) + '\n';
  const std::size_t per_line = clip.joints_per_person * clip.channels;
  char buf[64];
  for (std::size_t line = 0; line < clip.frames * clip.persons; ++line) {
    for (std::size_t i = 0; i < per_line; ++i) {
      if (i > 0) out += ' ';
      auto res = std::to_chars(buf, buf + sizeof buf, clip.data[line * per_line + i]);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

SkeletonClip parse_clip(std::string_view text) {
  // line boundaries
  std::vector<std::pair<std::size_t, std::size_t>> lines;
  for (std::size_t begin = 0; begin < text.size();) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(begin, end);
    begin = end + 1;
  }
  if (lines.empty()) throw ParseError("clip byte 0: empty input");

  const auto header = split_line(text, lines[0].first, lines[0].second);
  if (header.empty() || header[0].text != "SKL1") {
    throw ParseError("clip byte 0: unknown format or version (expected \"SKL1\")");
  }
  if (header.size() != 5) {
    throw ParseError("clip byte " + std::to_string(lines[0].second) +
                     ": header needs 4 counts after SKL1 (frames joints channels persons)");
  }
  SkeletonClip clip;
  clip.frames = parse_count(header[1], "frame count");
  clip.joints_per_person = parse_count(header[2], "joint count");
  clip.channels = parse_count(header[3], "channel count");
  clip.persons = parse_count(header[4], "person count");
  if (clip.frames == 0) throw ParseError("clip byte " + std::to_string(header[1].offset) + ": zero frames");

  const std::size_t per_line = clip.joints_per_person * clip.channels;
  const std::size_t expected_lines = clip.frames * clip.persons;
  const std::size_t expected = expected_lines * per_line;

  std::vector<std::vector<Token>> body;
  std::size_t found = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto tokens = split_line(text, lines[i].first, lines[i].second);
    if (tokens.empty()) continue;
    found += tokens.size();
    body.push_back(std::move(tokens));
  }
  if (found != expected || body.size() != expected_lines) {
    std::size_t at = text.size();
    if (found > expected) {
      std::size_t seen = 0;
      for (const auto& tokens : body) {
        for (const Token& t : tokens) {
          if (seen++ == expected && at == text.size()) at = t.offset;
        }
      }
    }
    throw ParseError("clip byte " + std::to_string(at) + ": header declares " + std::to_string(expected) +
                     " values on " + std::to_string(expected_lines) + " lines, found " + std::to_string(found) +
                     " values on " + std::to_string(body.size()) + " lines");
  }

  clip.data.reserve(expected);
  for (const auto& tokens : body) {
    if (tokens.size() != per_line) {
      throw ParseError("clip byte " + std::to_string(tokens.front().offset) + ": expected " +
                       std::to_string(per_line) + " values on this line, found " + std::to_string(tokens.size()));
    }
    for (const Token& t : tokens) {
      double v = 0.0;
      auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
      if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
        throw ParseError("clip byte " + std::to_string(t.offset) + ": \"" + std::string(t.text) +
                         "\" is not a number");
      }
      clip.data.push_back(v);
    }
  }
  return clip;
}

void save_clip(const SkeletonClip& clip, const std::filesystem::path& path) { write_file(path, format_clip(clip)); }

SkeletonClip load_clip(const std::filesystem::path& path) {
  try {
    return parse_clip(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = "path\tlabel\n";
  for (const auto& e : entries) out += e.path + '\t' + std::to_string(e.label) + '\n';
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (number == 1 && line == "path\tlabel") continue;
    const auto tab = line.find('\t');
    int label = -1;
    if (tab != std::string::npos) {
      const auto res = std::from_chars(line.data() + tab + 1, line.data() + line.size(), label);
      if (res.ec != std::errc() || res.ptr != line.data() + line.size()) label = -1;
    }
    if (tab == std::string::npos || tab == 0 || label < 0) {
      throw ParseError("manifest line " + std::to_string(number) + ": expected \"<path>\\t<label>\"");
    }
    out.push_back({line.substr(0, tab), label});
  }
  return out;
}

std::size_t Dataset::classes() const {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  return static_cast<std::size_t>(top + 1);
}

ActionTensor prepare_clip(const SkeletonClip& clip, const PrepareOptions& options) {
  SkeletonClip c = clip.persons > options.layout.persons_max ? select_persons(clip, options.layout.persons_max) : clip;
  c = uniform_sample(c, options.frames);
  if (options.center) c = center_clip(c);
  return encode(c, options.layout);
}

Dataset make_dataset(const std::vector<SkeletonClip>& clips, const PrepareOptions& options) {
  Dataset out;
  out.frames = options.frames;
  out.columns = options.layout.columns();
  for (const auto& clip : clips) {
    if (clip.label < 0) throw InputError("negative class label");
    out.samples.push_back(prepare_clip(clip, options).data);
    out.labels.push_back(clip.label);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir, const PrepareOptions& options, std::string_view manifest) {
  const auto entries = parse_manifest(read_file(dir / manifest));
  if (entries.empty()) throw InputError("manifest in " + dir.string() + " lists no clips");
  std::vector<SkeletonClip> clips;
  clips.reserve(entries.size());
  for (const auto& e : entries) {
    clips.push_back(load_clip(dir / e.path));
    clips.back().label = e.label;
  }
  return make_dataset(clips, options);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("split fraction must lie in [0,1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  seeded_shuffle(order, seed);
  const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  return {{order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut)},
          {order.begin() + static_cast<std::ptrdiff_t>(cut), order.end()}};
}

template <typename T>
std::vector<Batch<T>> make_batches(const Dataset& data, const std::vector<std::size_t>& order,
                                   std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t per_sample = 3 * data.frames * data.columns;
  std::vector<Batch<T>> out;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - begin);
    std::vector<T> values;
    values.reserve(count * per_sample);
    Batch<T> batch;
    for (std::size_t i = begin; i < begin + count; ++i) {
      const auto& s = data.samples.at(order[i]);
      values.insert(values.end(), s.begin(), s.end());
      batch.labels.push_back(data.labels[order[i]]);
    }
    batch.inputs = Tensor<T>::leaf(Shape{count, 3, data.frames, data.columns}, std::move(values));
    out.push_back(std::move(batch));
  }
  return out;
}

template std::vector<Batch<float>> make_batches(const Dataset&, const std::vector<std::size_t>&, std::size_t);
template std::vector<Batch<double>> make_batches(const Dataset&, const std::vector<std::size_t>&, std::size_t);

}  // namespace sarnas
