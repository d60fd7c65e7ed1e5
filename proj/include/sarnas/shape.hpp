#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace sarnas {

/// Ordered list of positive extents. Rank-4 activations are always laid out
/// as (batch, channels, frames, joints), row-major with the last dim contiguous.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;

  bool operator==(const Shape& other) const = default;

  std::string str() const;

 private:
  std::vector<std::size_t> dims_;
};

// Axis names for rank-4 activations.
inline constexpr std::size_t kBatch = 0;
inline constexpr std::size_t kChannel = 1;
inline constexpr std::size_t kFrame = 2;
inline constexpr std::size_t kJoint = 3;

/// Throws DimensionError unless `shape` has the given rank.
void require_rank(const Shape& shape, std::size_t rank, const char* what);

}  // namespace sarnas
