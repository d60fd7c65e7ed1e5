#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sarnas/batch.hpp"

namespace sarnas {

enum class LayoutKind { Ntu, Kinetics, Custom };

/// Joint-axis layout: N = persons_max * joints_per_person columns, person-major.
struct Layout {
  LayoutKind kind = LayoutKind::Custom;
  std::size_t joints_per_person = 6;
  std::size_t persons_max = 2;

  std::size_t columns() const { return joints_per_person * persons_max; }
  std::string name() const;

  static Layout ntu() { return {LayoutKind::Ntu, 25, 2}; }
  static Layout kinetics() { return {LayoutKind::Kinetics, 18, 2}; }
  static Layout custom(std::size_t joints, std::size_t persons = 2) { return {LayoutKind::Custom, joints, persons}; }
};

/// "ntu", "kinetics" or "custom:<joints>x<persons>". Throws ConfigError.
Layout parse_layout(std::string_view text);

/// A skeleton sequence with a fixed person count. `data` is row-major
/// (frames, persons, joints_per_person, channels).
struct SkeletonClip {
  std::size_t frames = 0;
  std::size_t persons = 0;
  std::size_t joints_per_person = 0;
  std::size_t channels = 3;
  std::vector<double> data;
  int label = 0;

  double& at(std::size_t f, std::size_t p, std::size_t j, std::size_t c) {
    return data[((f * persons + p) * joints_per_person + j) * channels + c];
  }
  double at(std::size_t f, std::size_t p, std::size_t j, std::size_t c) const {
    return data[((f * persons + p) * joints_per_person + j) * channels + c];
  }
  bool operator==(const SkeletonClip&) const = default;
};

/// Source frame indices floor(i * F / T), i = 0..T-1.
std::vector<std::size_t> sample_indices(std::size_t source_frames, std::size_t target_frames);

/// Resamples to exactly `target_frames` frames. Throws InputError on an empty
/// clip or a zero target.
SkeletonClip uniform_sample(const SkeletonClip& clip, std::size_t target_frames);

/// Keeps the `keep` persons with the highest mean confidence (channel 2) over
/// the whole clip, best first, ties to the lower original index.
SkeletonClip select_persons(const SkeletonClip& clip, std::size_t keep = 2);

/// Subtracts the per-channel mean over all frames, persons and joints.
SkeletonClip center_clip(const SkeletonClip& clip);

/// (3, T, N) encoding in row-major order. Column p * joints_per_person + j
/// holds person p's joint j; absent persons stay zero. Throws InputError when
/// the clip does not fit the layout.
struct ActionTensor {
  std::size_t channels = 3;
  std::size_t frames = 0;
  std::size_t columns = 0;
  std::vector<float> data;

  float at(std::size_t c, std::size_t t, std::size_t n) const { return data[(c * frames + t) * columns + n]; }
};

ActionTensor encode(const SkeletonClip& clip, const Layout& layout);

struct SynthOptions {
  std::size_t classes = 3;
  std::size_t per_class = 200;
  std::size_t frames = 16;
  Layout layout = Layout::custom(6, 2);
  std::uint64_t seed = 7;
  double noise = 0.05;  // gaussian std as a fraction of the signal amplitude
  double separation = 0.06;  // max per-track phase deviation (radians) between a class and the shared pattern
};

/// Class-balanced synthetic clips, ordered by class then instance. Each joint
/// coordinate is a sinusoid with a per-track frequency and a phase pattern
/// that depends on the class, shifted by an instance-specific phase, plus
/// gaussian noise. Single frames carry no class information; the class shows
/// only in the relative phases across joints over time.
/// Throws ConfigError for fewer than 2 classes.
std::vector<SkeletonClip> synth_generate(const SynthOptions& options);

/// Text clip format: header "SKL1 <frames> <joints> <channels> <persons>",
/// then frames*persons lines of joints*channels values, person-major within a frame.
std::string format_clip(const SkeletonClip& clip);
/// Throws ParseError with the byte offset of the problem.
SkeletonClip parse_clip(std::string_view text);
void save_clip(const SkeletonClip& clip, const std::filesystem::path& path);
SkeletonClip load_clip(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int label = 0;
};

inline constexpr std::string_view kManifestName = "manifest.tsv";

std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(std::string_view text);

/// Encoded samples, all with shape (3, T, N).
struct Dataset {
  std::size_t frames = 0;
  std::size_t columns = 0;
  std::vector<std::vector<float>> samples;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t classes() const;
};

struct PrepareOptions {
  std::size_t frames = 16;
  Layout layout = Layout::custom(6, 2);
  bool center = false;
};

/// select_persons (when needed) -> uniform_sample -> optional centering -> encode.
ActionTensor prepare_clip(const SkeletonClip& clip, const PrepareOptions& options);
Dataset make_dataset(const std::vector<SkeletonClip>& clips, const PrepareOptions& options);
/// Reads `dir`/`manifest` and every clip it lists.
Dataset load_dataset(const std::filesystem::path& dir, const PrepareOptions& options,
                     std::string_view manifest = kManifestName);

/// Seeded permutation of 0..n-1 cut at round(n * fraction).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

/// Batches of `batch_size` (the last may be smaller) in the given order.
template <typename T>
std::vector<Batch<T>> make_batches(const Dataset& data, const std::vector<std::size_t>& order,
                                   std::size_t batch_size);

}  // namespace sarnas
