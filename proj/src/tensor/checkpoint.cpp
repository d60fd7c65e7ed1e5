#include "sarnas/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sarnas/error.hpp"

namespace sarnas {

namespace {

constexpr const char* kMagic = "SARNAS-CKPT";
constexpr const char* kVersion = "v1";

void put_le(std::ostream& os, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

float get_le(const unsigned char* bytes) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string read_line(std::istream& is, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError(path.string() + ": unexpected end of file");
  return line;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << kMagic << ' ' << kVersion << ' ' << entries.size() << '\n';
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.find_first_of(" \n\t") != std::string::npos) {
      throw CheckpointError("invalid tensor name '" + e.name + "'");
    }
    if (e.values.size() != e.shape.numel()) {
      throw CheckpointError(e.name + ": value count does not match shape " + e.shape.str());
    }
    os << e.name << ' ' << e.shape.rank();
    for (auto d : e.shape.dims()) os << ' ' << d;
    os << '\n';
    for (float v : e.values) put_le(os, v);
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::istringstream header(read_line(is, path));
  std::string magic, version;
  std::size_t count = 0;
  if (!(header >> magic >> version >> count) || magic != kMagic) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad manifest line)");
  }
  if (version != kVersion) throw CheckpointError(path.string() + ": unsupported version " + version);

  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream line(read_line(is, path));
    CheckpointEntry e;
    std::size_t rank = 0;
    if (!(line >> e.name >> rank)) throw CheckpointError(path.string() + ": malformed entry header " + std::to_string(k));
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) {
      if (!(line >> d)) throw CheckpointError(path.string() + ": malformed shape for " + e.name);
    }
    e.shape = Shape(std::move(dims));
    std::vector<unsigned char> raw(e.shape.numel() * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
      throw CheckpointError(path.string() + ": truncated data for " + e.name);
    }
    e.values.resize(e.shape.numel());
    for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] = get_le(raw.data() + 4 * i);
    entries.push_back(std::move(e));
  }
  return entries;
}

template <typename T>
CheckpointEntry make_entry(const std::string& name, const Shape& shape, std::span<const T> values) {
  CheckpointEntry e{name, shape, {}};
  e.values.reserve(values.size());
  for (T v : values) e.values.push_back(static_cast<float>(v));
  return e;
}

template <typename T>
std::vector<CheckpointEntry> module_state(Module<T>& module) {
  std::vector<CheckpointEntry> out;
  for (auto* p : module.parameters()) out.push_back(make_entry<T>(p->name(), p->shape(), p->values()));
  for (const auto& b : module.buffers()) {
    out.push_back(make_entry<T>(b.name, b.shape, std::span<const T>(*b.data)));
  }
  return out;
}

template <typename T>
void load_module_state(Module<T>& module, const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw CheckpointError("duplicate tensor " + e.name);
  }
  auto take = [&](const std::string& name, const Shape& shape) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    if (!(it->second->shape == shape)) {
      throw CheckpointError("tensor " + name + ": checkpoint shape " + it->second->shape.str() +
                            " does not match expected " + shape.str());
    }
    const CheckpointEntry& e = *it->second;
    by_name.erase(it);
    return e;
  };
  // Validate everything before mutating anything.
  std::vector<std::pair<std::span<T>, const CheckpointEntry*>> plan;
  for (auto* p : module.parameters()) plan.emplace_back(p->values(), &take(p->name(), p->shape()));
  for (const auto& b : module.buffers()) plan.emplace_back(std::span<T>(*b.data), &take(b.name, b.shape));
  if (!by_name.empty()) throw CheckpointError("checkpoint has unexpected tensor " + by_name.begin()->first);
  for (auto& [dst, e] : plan) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
  }
}

template CheckpointEntry make_entry(const std::string&, const Shape&, std::span<const float>);
template CheckpointEntry make_entry(const std::string&, const Shape&, std::span<const double>);
template std::vector<CheckpointEntry> module_state(Module<float>&);
template std::vector<CheckpointEntry> module_state(Module<double>&);
template void load_module_state(Module<float>&, const std::vector<CheckpointEntry>&);
template void load_module_state(Module<double>&, const std::vector<CheckpointEntry>&);

}  // namespace sarnas
