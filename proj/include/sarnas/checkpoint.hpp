#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sarnas/module.hpp"
#include "sarnas/shape.hpp"

namespace sarnas {

/// Checkpoint layout:
///   "SARNAS-CKPT v1 <entry-count>\n"
///   per entry: "<name> <rank> <d0> ... <dr-1>\n" then numel little-endian float32 values.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Parameters followed by buffers, in registration order.
template <typename T>
std::vector<CheckpointEntry> module_state(Module<T>& module);

/// Loads a checkpoint into `module`. Every parameter and buffer must be
/// present with an identical shape and the file may hold nothing else.
template <typename T>
void load_module_state(Module<T>& module, const std::vector<CheckpointEntry>& entries);

template <typename T>
CheckpointEntry make_entry(const std::string& name, const Shape& shape, std::span<const T> values);

}  // namespace sarnas
