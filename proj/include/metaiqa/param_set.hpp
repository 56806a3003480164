#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metaiqa/hashing.hpp"
#include "metaiqa/tensor.hpp"

namespace metaiqa {

struct ConvLayerSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Convolutional feature extractor (conv + ReLU per layer, padding kernel/2),
/// global average pooling, a ReLU hidden layer and a linear scalar head.
struct BackboneSpec {
  std::vector<ConvLayerSpec> conv;
  std::size_t hidden = 64;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  /// 16/32/64/64 channels, 3x3 stride-2 convolutions, hidden width 64, 32x32 RGB.
  static BackboneSpec toy();

  void validate() const;
  Shape image_shape() const { return {channels, height, width}; }
  std::string canonical() const;
  Digest fingerprint() const;

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// Ordered named parameter tensors of one network, tagged with the backbone
/// they belong to.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  ParamSet() = default;
  ParamSet(BackboneSpec spec, std::vector<Entry> entries);

  const BackboneSpec& spec() const { return spec_; }
  const Digest& fingerprint() const { return fingerprint_; }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  Tensor& tensor(std::size_t i) { return entries_.at(i).tensor; }
  const Tensor& tensor(std::size_t i) const { return entries_.at(i).tensor; }
  const Tensor& tensor(std::string_view name) const;
  std::span<const Entry> entries() const { return entries_; }

  std::size_t parameter_count() const;

  /// Name of the first tensor that differs in name or shape, or a note on a
  /// fingerprint or length difference; empty when compatible.
  std::optional<std::string> first_mismatch(const ParamSet& other) const;
  bool compatible(const ParamSet& other) const { return !first_mismatch(other).has_value(); }
  void require_compatible(const ParamSet& other, std::string_view context) const;

  /// SHA-256 over names, shapes and raw bytes.
  Digest checksum() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  BackboneSpec spec_;
  Digest fingerprint_{};
  std::vector<Entry> entries_;
};

/// Gradient buffers mirroring a ParamSet entry by entry.
using GradientSet = std::vector<Tensor>;

GradientSet zeros_like(const ParamSet& params);

}  // namespace metaiqa
