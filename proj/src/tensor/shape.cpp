#include "sarnas/shape.hpp"

#include <sstream>

#include "sarnas/error.hpp"

namespace sarnas {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i] == 0) {
      throw DimensionError("shape " + str() + ": axis " + std::to_string(i) + " has zero extent");
    }
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ')';
  return os.str();
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape.str());
  }
}

}  // namespace sarnas
