#include "metaiqa/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace metaiqa {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MatMul: return "matmul";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Relu: return "relu";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Mse: return "mse";
  }
  return "?";
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w, out_c, kh, kw, out_h, out_w, stride, pad;
  std::size_t patch() const { return in_c * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, Conv2dOptions o) {
  ConvGeometry g{};
  g.batch = x[0];
  g.in_c = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_c = w[0];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = o.stride;
  g.pad = o.padding;
  g.out_h = (g.in_h + 2 * g.pad - g.kh) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// Output positions [lo, hi) along one axis whose input index o * stride + k - pad
// falls inside [0, in), for each kernel offset k.
struct ValidRanges {
  std::vector<std::size_t> lo, hi;

  ValidRanges(std::size_t kernel, const ConvGeometry& g, std::size_t in, std::size_t out) : lo(kernel), hi(kernel) {
    for (std::size_t k = 0; k < kernel; ++k) {
      lo[k] = k >= g.pad ? 0 : (g.pad - k + g.stride - 1) / g.stride;
      hi[k] = std::min(out, (in + g.pad - k + g.stride - 1) / g.stride);
      if (lo[k] > hi[k]) lo[k] = hi[k];
    }
  }
};

// Writes one image into cols laid out as [patch, row_stride], starting at column
// `offset`. Only in-bounds entries are written; padding entries keep whatever
// the buffer holds, which callers zero once at allocation.
template <typename T>
void im2col(const T* __restrict x, const ConvGeometry& g, const ValidRanges& ry, const ValidRanges& rx,
            T* __restrict cols, std::size_t row_stride, std::size_t offset) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* plane = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j, ++r) {
        T* dst = cols + r * row_stride + offset;
        const std::size_t xlo = rx.lo[j], xhi = rx.hi[j];
        for (std::size_t oy = ry.lo[i]; oy < ry.hi[i]; ++oy) {
          T* d = dst + oy * g.out_w;
          const T* src = plane + (oy * g.stride + i - g.pad) * g.in_w + j - g.pad;
          if (g.stride == 1) {
            for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = src[ox];
          } else if (g.stride == 2) {
            for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = src[2 * ox];
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = src[ox * g.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* __restrict cols, const ConvGeometry& g, const ValidRanges& ry, const ValidRanges& rx,
                std::size_t row_stride, std::size_t offset, T* __restrict dx) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    T* plane = dx + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j, ++r) {
        const T* src = cols + r * row_stride + offset;
        const std::size_t xlo = rx.lo[j], xhi = rx.hi[j];
        for (std::size_t oy = ry.lo[i]; oy < ry.hi[i]; ++oy) {
          const T* s = src + oy * g.out_w;
          T* d = plane + (oy * g.stride + i - g.pad) * g.in_w + j - g.pad;
          for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox * g.stride] += s[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
const typename BasicGraph<T>::Node& BasicGraph<T>::node(NodeId id) const {
  if (id.index >= nodes_.size()) fail(ErrorKind::InvalidArgument, "unknown graph node #" + std::to_string(id.index));
  return nodes_[id.index];
}

template <typename T>
typename BasicGraph<T>::Node& BasicGraph<T>::node(NodeId id) {
  if (id.index >= nodes_.size()) fail(ErrorKind::InvalidArgument, "unknown graph node #" + std::to_string(id.index));
  return nodes_[id.index];
}

template <typename T>
std::string BasicGraph<T>::describe(NodeId id) const {
  const auto& n = node(id);
  std::string s = std::string(op_name(n.kind)) + " node #" + std::to_string(id.index);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s;
}

template <typename T>
NodeId BasicGraph<T>::push(Node n) {
  for (auto op : n.operands) n.needs_grad = n.needs_grad || node(op).needs_grad;
  nodes_.push_back(std::move(n));
  forwarded_ = false;
  backwarded_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeId BasicGraph<T>::input(std::string name, Shape shape, bool requires_grad) {
  for (auto d : shape) require(d > 0, "input '" + name + "' has a zero extent");
  Node n;
  n.kind = OpKind::Input;
  n.name = std::move(name);
  n.shape = std::move(shape);
  n.requires_grad = requires_grad;
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::parameter(std::string name, const TensorT& value) {
  Node n;
  n.kind = OpKind::Parameter;
  n.name = std::move(name);
  n.shape = value.shape();
  n.requires_grad = true;
  n.needs_grad = true;
  n.source = &value;
  n.value = value;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::parameter(std::string name, TensorT& value) {
  NodeId id = parameter(std::move(name), static_cast<const TensorT&>(value));
  nodes_.back().sink = &value;
  return id;
}

template <typename T>
NodeId BasicGraph<T>::conv2d(NodeId x, NodeId weight, Conv2dOptions options) {
  const Shape& xs = node(x).shape;
  const Shape& ws = node(weight).shape;
  const std::string where = "conv2d on " + describe(x);
  if (xs.size() != 4) fail(ErrorKind::ShapeMismatch, where + ": input must be rank 4, got " + shape_str(xs));
  if (ws.size() != 4) fail(ErrorKind::ShapeMismatch, where + ": weight must be rank 4, got " + shape_str(ws));
  if (ws[1] != xs[1]) {
    fail(ErrorKind::ShapeMismatch, where + ": weight " + shape_str(ws) + " expects " + std::to_string(ws[1]) +
                                       " input channels, got " + std::to_string(xs[1]));
  }
  require(options.stride >= 1, where + ": stride must be >= 1");
  if (ws[2] > xs[2] + 2 * options.padding || ws[3] > xs[3] + 2 * options.padding) {
    fail(ErrorKind::ShapeMismatch, where + ": kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  }
  Node n;
  n.kind = OpKind::Conv2d;
  n.operands = {x, weight};
  n.conv = options;
  auto g = conv_geometry(xs, ws, options);
  n.shape = {g.batch, g.out_c, g.out_h, g.out_w};
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::matmul(NodeId a, NodeId b) {
  const Shape& as = node(a).shape;
  const Shape& bs = node(b).shape;
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    fail(ErrorKind::ShapeMismatch, "matmul of " + describe(a) + " " + shape_str(as) + " and " + describe(b) + " " +
                                       shape_str(bs) + ": inner dimensions disagree");
  }
  Node n;
  n.kind = OpKind::MatMul;
  n.operands = {a, b};
  n.shape = {as[0], bs[1]};
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::bias_add(NodeId x, NodeId bias) {
  const Shape& xs = node(x).shape;
  const Shape& bs = node(bias).shape;
  if (xs.size() < 2 || bs.size() != 1 || bs[0] != xs[1]) {
    fail(ErrorKind::ShapeMismatch,
         "bias_add of " + describe(bias) + " " + shape_str(bs) + " onto " + describe(x) + " " + shape_str(xs));
  }
  Node n;
  n.kind = OpKind::BiasAdd;
  n.operands = {x, bias};
  n.shape = xs;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::relu(NodeId x) {
  Node n;
  n.kind = OpKind::Relu;
  n.operands = {x};
  n.shape = node(x).shape;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::global_avg_pool(NodeId x) {
  const Shape& xs = node(x).shape;
  if (xs.size() != 4) fail(ErrorKind::ShapeMismatch, "global_avg_pool on " + describe(x) + " needs rank 4, got " + shape_str(xs));
  Node n;
  n.kind = OpKind::GlobalAvgPool;
  n.operands = {x};
  n.shape = {xs[0], xs[1]};
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::add(NodeId a, NodeId b) {
  if (node(a).shape != node(b).shape) {
    fail(ErrorKind::ShapeMismatch, "add of " + describe(a) + " " + shape_str(node(a).shape) + " and " + describe(b) +
                                       " " + shape_str(node(b).shape));
  }
  Node n;
  n.kind = OpKind::Add;
  n.operands = {a, b};
  n.shape = node(a).shape;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::scale(NodeId x, T factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.operands = {x};
  n.shape = node(x).shape;
  n.factor = factor;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::sum(NodeId x) {
  Node n;
  n.kind = OpKind::Sum;
  n.operands = {x};
  n.shape = {1};
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::mse(NodeId prediction, NodeId target) {
  if (node(prediction).shape != node(target).shape) {
    fail(ErrorKind::ShapeMismatch, "mse of " + describe(prediction) + " " + shape_str(node(prediction).shape) +
                                       " against " + describe(target) + " " + shape_str(node(target).shape));
  }
  Node n;
  n.kind = OpKind::Mse;
  n.operands = {prediction, target};
  n.shape = {1};
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::output() const {
  if (nodes_.empty()) fail(ErrorKind::State, "graph is empty");
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::value(NodeId id) const {
  const auto& n = node(id);
  if (n.value.empty()) fail(ErrorKind::State, describe(id) + " has no value; run forward first");
  return n.value;
}

template <typename T>
BasicTensor<T>& BasicGraph<T>::mutable_value(NodeId id) {
  auto& n = node(id);
  if (n.value.empty()) fail(ErrorKind::State, describe(id) + " has no value; run forward first");
  return n.value;
}

template <typename T>
std::span<const T> BasicGraph<T>::gradient(NodeId id) const {
  const auto& n = node(id);
  if (!backwarded_) fail(ErrorKind::State, "gradient requested before backward");
  if (n.grad.empty()) fail(ErrorKind::State, describe(id) + " did not receive a gradient");
  return n.grad;
}

template <typename T>
std::vector<NodeId> BasicGraph<T>::parameters() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Parameter) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

template <typename T>
std::vector<NodeId> BasicGraph<T>::inputs() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Input) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

template <typename T>
BasicGraph<T> BasicGraph<T>::from_nodes(std::vector<Node> nodes) {
  BasicGraph g;
  g.nodes_ = std::move(nodes);
  g.forwarded_ = !g.nodes_.empty();
  for (const auto& n : g.nodes_) g.forwarded_ = g.forwarded_ && !n.value.empty();
  return g;
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::forward(std::span<const TensorT> inputs) {
  if (nodes_.empty()) fail(ErrorKind::State, "forward on an empty graph");
  std::size_t next = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::Input) {
      NodeId id{static_cast<std::uint32_t>(i)};
      if (next >= inputs.size()) {
        fail(ErrorKind::ShapeMismatch, "missing tensor for " + describe(id) + "; got " + std::to_string(inputs.size()) +
                                           " inputs");
      }
      const TensorT& in = inputs[next++];
      if (in.shape() != n.shape) {
        fail(ErrorKind::ShapeMismatch, describe(id) + " expects " + shape_str(n.shape) + ", got " + shape_str(in.shape()));
      }
      n.value = in;
    } else if (n.kind == OpKind::Parameter && n.source != nullptr) {
      if (n.source->shape() != n.shape) {
        fail(ErrorKind::ShapeMismatch, describe(NodeId{static_cast<std::uint32_t>(i)}) + " changed shape since binding");
      }
      n.value = *n.source;
    }
  }
  if (next != inputs.size()) {
    fail(ErrorKind::ShapeMismatch, "graph declares " + std::to_string(next) + " inputs, got " + std::to_string(inputs.size()));
  }
  replay_from(0);
  forwarded_ = true;
  backwarded_ = false;
  return nodes_.back().value;
}

template <typename T>
void BasicGraph<T>::replay_from(std::size_t first) {
  for (std::size_t i = first; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::Input || n.kind == OpKind::Parameter) continue;
    evaluate(n);
  }
}

template <typename T>
void BasicGraph<T>::evaluate(Node& n) {
  auto in = [&](std::size_t k) -> const TensorT& { return nodes_[n.operands[k].index].value; };
  if (n.value.shape() != n.shape) n.value = TensorT(n.shape);
  T* out = n.value.data().data();
  const std::size_t count = n.value.numel();

  switch (n.kind) {
    case OpKind::Conv2d: {
      const TensorT& x = in(0);
      const TensorT& w = in(1);
      auto g = conv_geometry(x.shape(), w.shape(), n.conv);
      const std::size_t patch = g.patch(), pixels = g.pixels(), wide = g.batch * pixels;
      // cols is [patch, batch * pixels] so the whole batch is one product.
      if (n.saved.size() != patch * wide) n.saved.assign(patch * wide, T(0));
      const ValidRanges ry(g.kh, g, g.in_h, g.out_h), rx(g.kw, g, g.in_w, g.out_w);
      for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(x.data().data() + b * g.in_c * g.in_h * g.in_w, g, ry, rx, n.saved.data(), wide, b * pixels);
      }
      n.work.resize(g.out_c * wide);
      MapMat<T>(n.work.data(), g.out_c, wide).noalias() =
          ConstMapMat<T>(w.data().data(), g.out_c, patch) * ConstMapMat<T>(n.saved.data(), patch, wide);
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t o = 0; o < g.out_c; ++o) {
          std::copy_n(n.work.data() + o * wide + b * pixels, pixels, out + (b * g.out_c + o) * pixels);
        }
      }
      break;
    }
    case OpKind::MatMul: {
      const TensorT& a = in(0);
      const TensorT& b = in(1);
      ConstMapMat<T> am(a.data().data(), a.dim(0), a.dim(1));
      ConstMapMat<T> bm(b.data().data(), b.dim(0), b.dim(1));
      MapMat<T>(out, n.shape[0], n.shape[1]).noalias() = am * bm;
      break;
    }
    case OpKind::BiasAdd: {
      const TensorT& x = in(0);
      const TensorT& bias = in(1);
      const std::size_t channels = n.shape[1];
      const std::size_t inner = count / (n.shape[0] * channels);
      const T* xs = x.data().data();
      for (std::size_t o = 0; o < n.shape[0]; ++o) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (o * channels + c) * inner;
          const T bc = bias[c];
          for (std::size_t i = 0; i < inner; ++i) out[base + i] = xs[base + i] + bc;
        }
      }
      break;
    }
    case OpKind::Relu: {
      const T* __restrict xs = in(0).data().data();
      T* __restrict o = out;
      for (std::size_t i = 0; i < count; ++i) o[i] = xs[i] > T(0) ? xs[i] : T(0);
      break;
    }
    case OpKind::GlobalAvgPool: {
      const TensorT& x = in(0);
      const std::size_t area = x.dim(2) * x.dim(3);
      const T* xs = x.data().data();
      for (std::size_t i = 0; i < count; ++i) {
        T acc = T(0);
        for (std::size_t p = 0; p < area; ++p) acc += xs[i * area + p];
        out[i] = acc / static_cast<T>(area);
      }
      break;
    }
    case OpKind::Add: {
      const T* a = in(0).data().data();
      const T* b = in(1).data().data();
      for (std::size_t i = 0; i < count; ++i) out[i] = a[i] + b[i];
      break;
    }
    case OpKind::Scale: {
      const T* a = in(0).data().data();
      for (std::size_t i = 0; i < count; ++i) out[i] = n.factor * a[i];
      break;
    }
    case OpKind::Sum: {
      T acc = T(0);
      for (T v : in(0).data()) acc += v;
      out[0] = acc;
      break;
    }
    case OpKind::Mse: {
      const TensorT& p = in(0);
      const TensorT& t = in(1);
      T acc = T(0);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const T d = p[i] - t[i];
        acc += d * d;
      }
      out[0] = acc / static_cast<T>(p.numel());
      break;
    }
    case OpKind::Input:
    case OpKind::Parameter:
      break;
  }
}

template <typename T>
void BasicGraph<T>::backward(NodeId loss) {
  if (!forwarded_) fail(ErrorKind::State, "backward called before forward");
  const Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    fail(ErrorKind::ShapeMismatch, "backward needs a scalar loss, " + describe(loss) + " has shape " + shape_str(ln.shape));
  }
  for (auto& n : nodes_) {
    if (n.needs_grad) {
      n.grad.assign(n.value.numel(), T(0));
    } else {
      n.grad.clear();
    }
  }
  Node& seed = node(loss);
  if (seed.grad.empty()) seed.grad.assign(1, T(0));
  seed.grad[0] = T(1);

  for (std::size_t i = loss.index + 1; i-- > 0;) propagate(i);

  for (auto& n : nodes_) {
    if (n.kind == OpKind::Parameter && n.sink != nullptr) n.sink->set_grad(n.grad);
  }
  backwarded_ = true;
}

template <typename T>
void BasicGraph<T>::propagate(std::size_t index) {
  Node& n = nodes_[index];
  if (n.kind == OpKind::Input || n.kind == OpKind::Parameter || n.grad.empty()) return;
  const T scale = (corrupted_ && n.kind == corrupt_kind_) ? corrupt_factor_ : T(1);
  const T* dy = n.grad.data();
  const std::size_t count = n.grad.size();
  auto operand = [&](std::size_t k) -> Node& { return nodes_[n.operands[k].index]; };

  switch (n.kind) {
    case OpKind::Conv2d: {
      Node& xn = operand(0);
      Node& wn = operand(1);
      auto g = conv_geometry(xn.shape, wn.shape, n.conv);
      const std::size_t patch = g.patch(), pixels = g.pixels(), wide = g.batch * pixels;
      n.work.resize(g.out_c * wide);
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t o = 0; o < g.out_c; ++o) {
          std::copy_n(dy + (b * g.out_c + o) * pixels, pixels, n.work.data() + o * wide + b * pixels);
        }
      }
      ConstMapMat<T> dout(n.work.data(), g.out_c, wide);
      ConstMapMat<T> cols(n.saved.data(), patch, wide);
      if (wn.needs_grad) {
        MapMat<T>(wn.grad.data(), g.out_c, patch).noalias() += scale * (dout * cols.transpose());
      }
      if (xn.needs_grad) {
        n.aux.resize(patch * wide);
        MapMat<T> dcols(n.aux.data(), patch, wide);
        dcols.noalias() = scale * (ConstMapMat<T>(wn.value.data().data(), g.out_c, patch).transpose() * dout);
        const ValidRanges ry(g.kh, g, g.in_h, g.out_h), rx(g.kw, g, g.in_w, g.out_w);
        for (std::size_t b = 0; b < g.batch; ++b) {
          col2im_add(n.aux.data(), g, ry, rx, wide, b * pixels, xn.grad.data() + b * g.in_c * g.in_h * g.in_w);
        }
      }
      break;
    }
    case OpKind::MatMul: {
      Node& an = operand(0);
      Node& bn = operand(1);
      ConstMapMat<T> dout(dy, n.shape[0], n.shape[1]);
      ConstMapMat<T> am(an.value.data().data(), an.shape[0], an.shape[1]);
      ConstMapMat<T> bm(bn.value.data().data(), bn.shape[0], bn.shape[1]);
      if (an.needs_grad) MapMat<T>(an.grad.data(), an.shape[0], an.shape[1]).noalias() += scale * (dout * bm.transpose());
      if (bn.needs_grad) MapMat<T>(bn.grad.data(), bn.shape[0], bn.shape[1]).noalias() += scale * (am.transpose() * dout);
      break;
    }
    case OpKind::BiasAdd: {
      Node& xn = operand(0);
      Node& bn = operand(1);
      const std::size_t channels = n.shape[1];
      const std::size_t inner = count / (n.shape[0] * channels);
      if (xn.needs_grad) {
        T* __restrict dx = xn.grad.data();
        for (std::size_t i = 0; i < count; ++i) dx[i] += scale * dy[i];
      }
      if (bn.needs_grad) {
        for (std::size_t o = 0; o < n.shape[0]; ++o) {
          for (std::size_t c = 0; c < channels; ++c) {
            T acc = T(0);
            const T* src = dy + (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) acc += src[i];
            bn.grad[c] += scale * acc;
          }
        }
      }
      break;
    }
    case OpKind::Relu: {
      Node& xn = operand(0);
      if (!xn.needs_grad) break;
      const T* __restrict xs = xn.value.data().data();
      T* __restrict dx = xn.grad.data();
      for (std::size_t i = 0; i < count; ++i) dx[i] += xs[i] > T(0) ? scale * dy[i] : T(0);
      break;
    }
    case OpKind::GlobalAvgPool: {
      Node& xn = operand(0);
      if (!xn.needs_grad) break;
      const std::size_t area = xn.shape[2] * xn.shape[3];
      const T inv = T(1) / static_cast<T>(area);
      for (std::size_t i = 0; i < count; ++i) {
        const T share = scale * dy[i] * inv;
        for (std::size_t p = 0; p < area; ++p) xn.grad[i * area + p] += share;
      }
      break;
    }
    case OpKind::Add: {
      for (std::size_t k = 0; k < 2; ++k) {
        Node& on = operand(k);
        if (!on.needs_grad) continue;
        for (std::size_t i = 0; i < count; ++i) on.grad[i] += scale * dy[i];
      }
      break;
    }
    case OpKind::Scale: {
      Node& xn = operand(0);
      if (!xn.needs_grad) break;
      for (std::size_t i = 0; i < count; ++i) xn.grad[i] += scale * n.factor * dy[i];
      break;
    }
    case OpKind::Sum: {
      Node& xn = operand(0);
      if (!xn.needs_grad) break;
      for (auto& g : xn.grad) g += scale * dy[0];
      break;
    }
    case OpKind::Mse: {
      Node& pn = operand(0);
      Node& tn = operand(1);
      const std::size_t m = pn.value.numel();
      const T coeff = scale * T(2) * dy[0] / static_cast<T>(m);
      for (std::size_t i = 0; i < m; ++i) {
        const T d = coeff * (pn.value[i] - tn.value[i]);
        if (pn.needs_grad) pn.grad[i] += d;
        if (tn.needs_grad) tn.grad[i] -= d;
      }
      break;
    }
    case OpKind::Input:
    case OpKind::Parameter:
      break;
  }
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace metaiqa
