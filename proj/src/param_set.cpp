#include "metaiqa/param_set.hpp"

#include <cstring>
#include <set>
#include <sstream>

namespace metaiqa {

BackboneSpec BackboneSpec::toy() {
  BackboneSpec s;
  s.conv = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {64, 3, 2}};
  s.hidden = 64;
  s.channels = 3;
  s.height = 32;
  s.width = 32;
  return s;
}

void BackboneSpec::validate() const {
  require(!conv.empty(), "backbone needs at least one conv layer");
  require(hidden > 0, "backbone hidden width must be positive");
  require(channels > 0 && height > 0 && width > 0, "backbone input resolution must be positive");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& l = conv[i];
    const std::string at = "conv layer " + std::to_string(i + 1);
    require(l.out_channels > 0, at + " has zero output channels");
    require(l.kernel > 0 && l.stride > 0, at + " needs positive kernel and stride");
    require(l.kernel <= h && l.kernel <= w, at + ": kernel " + std::to_string(l.kernel) + " larger than its " +
                                                std::to_string(h) + "x" + std::to_string(w) + " input");
    const std::size_t pad = l.kernel / 2;
    h = (h + 2 * pad - l.kernel) / l.stride + 1;
    w = (w + 2 * pad - l.kernel) / l.stride + 1;
  }
}

std::string BackboneSpec::canonical() const {
  std::ostringstream os;
  os << "metaiqa-backbone/v1;in=" << channels << 'x' << height << 'x' << width << ";conv=";
  for (const auto& l : conv) os << l.out_channels << ':' << l.kernel << ':' << l.stride << ',';
  os << ";hidden=" << hidden;
  return os.str();
}

Digest BackboneSpec::fingerprint() const { return sha256(canonical()); }

ParamSet::ParamSet(BackboneSpec spec, std::vector<Entry> entries)
    : spec_(std::move(spec)), fingerprint_(spec_.fingerprint()), entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    require(seen.insert(e.name).second, "duplicate parameter name '" + e.name + "'");
  }
}

const Tensor& ParamSet::tensor(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  fail(ErrorKind::InvalidArgument, "no parameter named '" + std::string(name) + "'");
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::optional<std::string> ParamSet::first_mismatch(const ParamSet& other) const {
  const std::size_t n = std::min(entries_.size(), other.entries_.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name) return "'" + a.name + "' vs '" + b.name + "'";
    if (a.tensor.shape() != b.tensor.shape()) {
      return "'" + a.name + "' " + shape_str(a.tensor.shape()) + " vs " + shape_str(b.tensor.shape());
    }
  }
  if (entries_.size() != other.entries_.size()) {
    return "tensor count " + std::to_string(entries_.size()) + " vs " + std::to_string(other.entries_.size());
  }
  if (fingerprint_ != other.fingerprint_) return "architecture fingerprint";
  return std::nullopt;
}

void ParamSet::require_compatible(const ParamSet& other, std::string_view context) const {
  if (auto m = first_mismatch(other)) fail(ErrorKind::Incompatible, std::string(context) + ": mismatch at " + *m);
}

Digest ParamSet::checksum() const {
  std::string bytes;
  for (const auto& e : entries_) {
    bytes += e.name;
    bytes += shape_str(e.tensor.shape());
    const auto d = e.tensor.data();
    const auto* p = reinterpret_cast<const char*>(d.data());
    bytes.append(p, d.size_bytes());
  }
  return sha256(bytes);
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.fingerprint_ != b.fingerprint_ || a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.tensor.shape() != y.tensor.shape()) return false;
    const auto dx = x.tensor.data();
    const auto dy = y.tensor.data();
    if (std::memcmp(dx.data(), dy.data(), dx.size_bytes()) != 0) return false;
  }
  return true;
}

GradientSet zeros_like(const ParamSet& params) {
  GradientSet g;
  g.reserve(params.size());
  for (const auto& e : params.entries()) g.emplace_back(e.tensor.shape());
  return g;
}

}  // namespace metaiqa
