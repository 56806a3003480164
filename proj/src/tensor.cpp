#include "metaiqa/tensor.hpp"

#include <cmath>
#include <sstream>

namespace metaiqa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::Incompatible: return "incompatible parameters";
    case ErrorKind::CorruptCheckpoint: return "corrupt checkpoint";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::FingerprintMismatch: return "fingerprint mismatch";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::State: return "invalid state";
  }
  return "error";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  require(!shape.empty(), "tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) fail(ErrorKind::ShapeMismatch, "tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    fail(ErrorKind::ShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) fail(ErrorKind::ShapeMismatch, "item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!grad_) fail(ErrorKind::State, "tensor has no gradient");
  return *grad_;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (!grad_) grad_.emplace(data_.size(), T(0));
  return *grad_;
}

template <typename T>
void BasicTensor<T>::set_grad(std::vector<T> g) {
  if (g.size() != data_.size()) fail(ErrorKind::ShapeMismatch, "gradient length does not match tensor");
  grad_ = std::move(g);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template <typename T>
void BasicTensor<T>::reshape(Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    fail(ErrorKind::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  if (grad_) grad_->resize(data_.size());
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace metaiqa
