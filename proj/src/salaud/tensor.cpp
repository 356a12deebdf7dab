#include "salaud/tensor.hpp"

namespace salaud {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::InputShape: return "input shape error";
    case ErrorCode::Domain: return "domain error";
    case ErrorCode::Index: return "index error";
    case ErrorCode::Consistency: return "consistency error";
    case ErrorCode::Spec: return "spec error";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Config: return "config error";
    case ErrorCode::Size: return "size error";
    case ErrorCode::Training: return "training error";
    case ErrorCode::Solver: return "solver error";
    case ErrorCode::Capacity: return "capacity error";
    case ErrorCode::Architecture: return "architecture error";
    case ErrorCode::Selection: return "selection error";
    case ErrorCode::Io: return "I/O error";
  }
  return "unknown error";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int extent : shape) n *= static_cast<std::size_t>(extent);
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace salaud
