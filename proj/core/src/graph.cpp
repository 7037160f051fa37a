#include "m2at/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace m2at {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool2d: return "maxpool2d";
    case OpKind::Mean: return "mean";
    case OpKind::Reshape: return "reshape";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::MarginLoss: return "margin_loss";
  }
  return "?";
}

namespace {

[[noreturn]] void op_error(OpKind kind, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
}

// ---- dense GEMM kernels, fixed summation order ----
// Every C element is accumulated over the shared dimension in ascending
// order, so splitting the M loop across threads cannot change any result.

// C[m,n] += A[m,k] * B[k,n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    S* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const S* bj = b + j * k;
      S acc = S(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const S* ap = a + p * m;
    const S* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const S av = ap[i];
      S* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

struct ConvDims {
  std::size_t n = 0, ci = 0, h = 0, w = 0;
  std::size_t co = 0, kh = 0, kw = 0;
  std::size_t ho = 0, wo = 0;
  int stride = 1, pad = 0;
  std::size_t patch() const { return ci * kh * kw; }
  std::size_t out_hw() const { return ho * wo; }
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad) {
  if (xs.size() != 4 || ws.size() != 4)
    op_error(OpKind::Conv2d, "expects x [n,ci,h,w] and w [co,ci,kh,kw], got " +
                                 shape_str(xs) + " and " + shape_str(ws));
  if (xs[1] != ws[1])
    op_error(OpKind::Conv2d, "channel mismatch: x " + shape_str(xs) + " vs w " + shape_str(ws));
  if (stride < 1) op_error(OpKind::Conv2d, "stride must be >= 1");
  if (pad < 0) op_error(OpKind::Conv2d, "pad must be >= 0");
  ConvDims d;
  d.n = xs[0]; d.ci = xs[1]; d.h = xs[2]; d.w = xs[3];
  d.co = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  d.stride = stride; d.pad = pad;
  const std::size_t ph = d.h + 2 * std::size_t(pad);
  const std::size_t pw = d.w + 2 * std::size_t(pad);
  if (d.kh == 0 || d.kw == 0 || d.kh > ph || d.kw > pw)
    op_error(OpKind::Conv2d, "kernel " + shape_str(ws) + " does not fit padded input " + shape_str(xs));
  d.ho = (ph - d.kh) / std::size_t(stride) + 1;
  d.wo = (pw - d.kw) / std::size_t(stride) + 1;
  return d;
}

// col is [ci*kh*kw, ho*wo]; x points at one sample's [ci,h,w] block.
template <typename S>
void im2col(const S* x, const ConvDims& d, S* col) {
  const std::size_t howo = d.out_hw();
  std::size_t r = 0;
  for (std::size_t c = 0; c < d.ci; ++c)
    for (std::size_t dy = 0; dy < d.kh; ++dy)
      for (std::size_t dx = 0; dx < d.kw; ++dx, ++r) {
        S* out = col + r * howo;
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const long iy = long(oy) * d.stride - d.pad + long(dy);
          S* orow = out + oy * d.wo;
          if (iy < 0 || iy >= long(d.h)) {
            for (std::size_t ox = 0; ox < d.wo; ++ox) orow[ox] = S(0);
            continue;
          }
          const S* xrow = x + (c * d.h + std::size_t(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const long ix = long(ox) * d.stride - d.pad + long(dx);
            orow[ox] = (ix < 0 || ix >= long(d.w)) ? S(0) : xrow[ix];
          }
        }
      }
}

// Scatter-add of a column gradient back onto one sample's [ci,h,w] block.
template <typename S>
void col2im_acc(const S* col, const ConvDims& d, S* dx) {
  const std::size_t howo = d.out_hw();
  std::size_t r = 0;
  for (std::size_t c = 0; c < d.ci; ++c)
    for (std::size_t dy = 0; dy < d.kh; ++dy)
      for (std::size_t dx_ = 0; dx_ < d.kw; ++dx_, ++r) {
        const S* in = col + r * howo;
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const long iy = long(oy) * d.stride - d.pad + long(dy);
          if (iy < 0 || iy >= long(d.h)) continue;
          S* xrow = dx + (c * d.h + std::size_t(iy)) * d.w;
          const S* irow = in + oy * d.wo;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const long ix = long(ox) * d.stride - d.pad + long(dx_);
            if (ix >= 0 && ix < long(d.w)) xrow[ix] += irow[ox];
          }
        }
      }
}

struct PoolDims {
  std::size_t n = 0, c = 0, h = 0, w = 0, ho = 0, wo = 0;
  int window = 0, stride = 0;
};

PoolDims pool_dims(const Shape& xs, int window, int stride) {
  if (xs.size() != 4)
    op_error(OpKind::MaxPool2d, "expects [n,c,h,w], got " + shape_str(xs));
  if (window < 1) op_error(OpKind::MaxPool2d, "window must be >= 1");
  if (stride == 0) stride = window;
  if (stride < 1) op_error(OpKind::MaxPool2d, "stride must be >= 1");
  PoolDims d;
  d.n = xs[0]; d.c = xs[1]; d.h = xs[2]; d.w = xs[3];
  d.window = window; d.stride = stride;
  if (std::size_t(window) > d.h || std::size_t(window) > d.w)
    op_error(OpKind::MaxPool2d, "window " + std::to_string(window) + " exceeds input " + shape_str(xs));
  d.ho = (d.h - std::size_t(window)) / std::size_t(stride) + 1;
  d.wo = (d.w - std::size_t(window)) / std::size_t(stride) + 1;
  return d;
}

// rows/classes split shared by the two loss ops; rank 1 is a single row.
void loss_dims(OpKind kind, const Shape& zs, const Shape& ts,
               std::size_t& rows, std::size_t& klass) {
  if (zs != ts)
    op_error(kind, "shape mismatch " + shape_str(zs) + " vs " + shape_str(ts));
  if (zs.size() == 1) {
    rows = 1; klass = zs[0];
  } else if (zs.size() == 2) {
    rows = zs[0]; klass = zs[1];
  } else {
    op_error(kind, "expects rank 1 or 2 logits, got " + shape_str(zs));
  }
  if (klass == 0) op_error(kind, "needs at least one class");
}

}  // namespace

template <typename S>
NodeId GraphT<S>::leaf(TensorT<S> value) {
  if (nodes_.size() >= std::size_t(std::numeric_limits<NodeId>::max()))
    throw std::length_error("graph: tape is full");
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

template <typename S>
const typename GraphT<S>::Node& GraphT<S>::node(NodeId id) const {
  if (id < 0 || std::size_t(id) >= nodes_.size())
    throw std::invalid_argument("graph: node id " + std::to_string(id) + " out of range");
  return nodes_[std::size_t(id)];
}

template <typename S>
typename GraphT<S>::Node& GraphT<S>::node_mut(NodeId id) {
  return const_cast<Node&>(node(id));
}

template <typename S>
TensorT<S>& GraphT<S>::leaf_value(NodeId id) {
  Node& n = node_mut(id);
  if (n.kind != OpKind::Leaf)
    throw std::invalid_argument("graph: node " + std::to_string(id) + " is " +
                                op_name(n.kind) + ", not a leaf");
  return n.value;
}

template <typename S>
NodeId GraphT<S>::apply(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs) {
  if (kind == OpKind::Leaf)
    throw std::invalid_argument("graph: leaf is not an applied op; use leaf()");
  const bool unary = kind == OpKind::Relu || kind == OpKind::MaxPool2d ||
                     kind == OpKind::Mean || kind == OpKind::Reshape;
  const std::size_t arity = unary ? 1 : 2;
  if (inputs.size() != arity)
    op_error(kind, "expects " + std::to_string(arity) + " inputs, got " +
                       std::to_string(inputs.size()));
  for (NodeId id : inputs) node(id);  // range check
  if (nodes_.size() >= std::size_t(std::numeric_limits<NodeId>::max()))
    throw std::length_error("graph: tape is full");
  Node n;
  n.kind = kind;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.attrs = std::move(attrs);
  nodes_.push_back(std::move(n));
  try {
    forward_into(nodes_.back());
  } catch (...) {
    nodes_.pop_back();  // keep the tape consistent when validation rejects
    throw;
  }
  return NodeId(nodes_.size() - 1);
}

template <typename S>
NodeId GraphT<S>::add(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::Add, in);
}

template <typename S>
NodeId GraphT<S>::mul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::Mul, in);
}

template <typename S>
NodeId GraphT<S>::matmul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::MatMul, in);
}

template <typename S>
NodeId GraphT<S>::conv2d(NodeId x, NodeId w, int stride, int pad) {
  const NodeId in[] = {x, w};
  OpAttrs at;
  at.stride = stride;
  at.pad = pad;
  return apply(OpKind::Conv2d, in, std::move(at));
}

template <typename S>
NodeId GraphT<S>::relu(NodeId a) {
  const NodeId in[] = {a};
  return apply(OpKind::Relu, in);
}

template <typename S>
NodeId GraphT<S>::maxpool2d(NodeId a, int window, int stride) {
  const NodeId in[] = {a};
  OpAttrs at;
  at.window = window;
  at.pool_stride = stride;
  return apply(OpKind::MaxPool2d, in, std::move(at));
}

template <typename S>
NodeId GraphT<S>::mean(NodeId a, std::vector<std::size_t> axes) {
  const NodeId in[] = {a};
  OpAttrs at;
  at.axes = std::move(axes);
  return apply(OpKind::Mean, in, std::move(at));
}

template <typename S>
NodeId GraphT<S>::reshape(NodeId a, Shape target) {
  const NodeId in[] = {a};
  OpAttrs at;
  at.target_shape = std::move(target);
  return apply(OpKind::Reshape, in, std::move(at));
}

template <typename S>
NodeId GraphT<S>::softmax_cross_entropy(NodeId logits, NodeId labels) {
  const NodeId in[] = {logits, labels};
  return apply(OpKind::SoftmaxCrossEntropy, in);
}

template <typename S>
NodeId GraphT<S>::margin_loss(NodeId logits, NodeId labels) {
  const NodeId in[] = {logits, labels};
  return apply(OpKind::MarginLoss, in);
}

template <typename S>
void GraphT<S>::forward_into(Node& n) const {
  switch (n.kind) {
    case OpKind::Leaf:
      return;

    case OpKind::Add: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      const TensorT<S>& b = nodes_[n.inputs[1]].value;
      n.value = a;
      if (a.same_shape(b)) {
        for (std::size_t i = 0; i < a.numel(); ++i) n.value.data[i] += b.data[i];
      } else if (b.ndim() == 1 && a.ndim() == 2 && b.extent(0) == a.extent(1)) {
        const std::size_t rows = a.extent(0), k = a.extent(1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < k; ++j) n.value.data[r * k + j] += b.data[j];
      } else if (b.ndim() == 1 && a.ndim() == 4 && b.extent(0) == a.extent(1)) {
        const std::size_t nn = a.extent(0), c = a.extent(1);
        const std::size_t hw = a.extent(2) * a.extent(3);
        for (std::size_t s = 0; s < nn; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const S bv = b.data[ch];
            S* out = n.value.data.data() + (s * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) out[p] += bv;
          }
      } else {
        op_error(OpKind::Add, "incompatible shapes " + shape_str(a.shape) + " and " +
                                  shape_str(b.shape));
      }
      break;
    }

    case OpKind::Mul: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      const TensorT<S>& b = nodes_[n.inputs[1]].value;
      if (!a.same_shape(b))
        op_error(OpKind::Mul, "shape mismatch " + shape_str(a.shape) + " vs " +
                                  shape_str(b.shape));
      n.value = TensorT<S>(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) n.value.data[i] = a.data[i] * b.data[i];
      break;
    }

    case OpKind::MatMul: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      const TensorT<S>& b = nodes_[n.inputs[1]].value;
      if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0))
        op_error(OpKind::MatMul, "incompatible shapes " + shape_str(a.shape) + " and " +
                                     shape_str(b.shape));
      const std::size_t m = a.extent(0), k = a.extent(1), n2 = b.extent(1);
      n.value = TensorT<S>::zeros({m, n2});
      S* out = n.value.data.data();
      const S* ap = a.data.data();
      const S* bp = b.data.data();
      parallel_for(m, [&](std::size_t lo, std::size_t hi) {
        gemm_nn(ap + lo * k, bp, out + lo * n2, hi - lo, k, n2);
      });
      break;
    }

    case OpKind::Conv2d: {
      const TensorT<S>& x = nodes_[n.inputs[0]].value;
      const TensorT<S>& w = nodes_[n.inputs[1]].value;
      const ConvDims d = conv_dims(x.shape, w.shape, n.attrs.stride, n.attrs.pad);
      n.value = TensorT<S>::zeros({d.n, d.co, d.ho, d.wo});
      const std::size_t in_sz = d.ci * d.h * d.w;
      const std::size_t out_sz = d.co * d.out_hw();
      const S* xp = x.data.data();
      const S* wp = w.data.data();
      S* yp = n.value.data.data();
      parallel_for(d.n, [&](std::size_t lo, std::size_t hi) {
        std::vector<S> col(d.patch() * d.out_hw());
        for (std::size_t s = lo; s < hi; ++s) {
          im2col(xp + s * in_sz, d, col.data());
          gemm_nn(wp, col.data(), yp + s * out_sz, d.co, d.patch(), d.out_hw());
        }
      });
      break;
    }

    case OpKind::Relu: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      n.value = TensorT<S>(a.shape);
      n.relu_mask.assign(a.numel(), 0);
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const bool pos = a.data[i] > S(0);
        n.relu_mask[i] = pos ? 1 : 0;
        n.value.data[i] = pos ? a.data[i] : S(0);
      }
      break;
    }

    case OpKind::MaxPool2d: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      const PoolDims d = pool_dims(a.shape, n.attrs.window, n.attrs.pool_stride);
      n.value = TensorT<S>::zeros({d.n, d.c, d.ho, d.wo});
      n.pool_argmax.assign(n.value.numel(), 0);
      const std::size_t planes = d.n * d.c;
      const S* ap = a.data.data();
      S* yp = n.value.data.data();
      std::uint32_t* am = n.pool_argmax.data();
      parallel_for(planes, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t pl = lo; pl < hi; ++pl) {
          const S* in = ap + pl * d.h * d.w;
          S* out = yp + pl * d.ho * d.wo;
          std::uint32_t* arg = am + pl * d.ho * d.wo;
          for (std::size_t oy = 0; oy < d.ho; ++oy)
            for (std::size_t ox = 0; ox < d.wo; ++ox) {
              const std::size_t y0 = oy * std::size_t(d.stride);
              const std::size_t x0 = ox * std::size_t(d.stride);
              // first maximum in row-major window order wins a tie
              S best = in[y0 * d.w + x0];
              std::size_t besti = y0 * d.w + x0;
              for (std::size_t dy = 0; dy < std::size_t(d.window); ++dy)
                for (std::size_t dx = 0; dx < std::size_t(d.window); ++dx) {
                  const std::size_t idx = (y0 + dy) * d.w + (x0 + dx);
                  if (in[idx] > best) { best = in[idx]; besti = idx; }
                }
              out[oy * d.wo + ox] = best;
              arg[oy * d.wo + ox] = std::uint32_t(besti);
            }
        }
      });
      break;
    }

    case OpKind::Mean: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      const Shape& is = a.shape;
      std::vector<char> reduced(is.size(), 0);
      if (n.attrs.axes.empty()) {
        std::fill(reduced.begin(), reduced.end(), 1);
      } else {
        for (std::size_t i = 0; i < n.attrs.axes.size(); ++i) {
          const std::size_t ax = n.attrs.axes[i];
          if (ax >= is.size())
            op_error(OpKind::Mean, "axis " + std::to_string(ax) + " out of range for " +
                                       shape_str(is));
          if (i > 0 && n.attrs.axes[i] <= n.attrs.axes[i - 1])
            op_error(OpKind::Mean, "axes must be strictly ascending");
          reduced[ax] = 1;
        }
      }
      Shape os;
      std::size_t count = 1;
      for (std::size_t d2 = 0; d2 < is.size(); ++d2) {
        if (reduced[d2]) count *= is[d2];
        else os.push_back(is[d2]);
      }
      std::vector<std::size_t> ostride(is.size(), 0);
      std::size_t stride = 1;
      for (std::size_t d2 = is.size(); d2-- > 0;) {
        if (!reduced[d2]) { ostride[d2] = stride; stride *= is[d2]; }
      }
      n.value = TensorT<S>::zeros(os);
      std::vector<std::size_t> idx(is.size(), 0);
      std::size_t oi = 0;
      for (std::size_t lin = 0; lin < a.numel(); ++lin) {
        n.value.data[oi] += a.data[lin];
        for (std::size_t d2 = is.size(); d2-- > 0;) {
          oi += ostride[d2];
          if (++idx[d2] < is[d2]) break;
          idx[d2] = 0;
          oi -= ostride[d2] * is[d2];
        }
      }
      const S inv = S(1) / S(count);
      for (auto& v : n.value.data) v *= inv;
      break;
    }

    case OpKind::Reshape: {
      const TensorT<S>& a = nodes_[n.inputs[0]].value;
      if (shape_numel(n.attrs.target_shape) != a.numel())
        op_error(OpKind::Reshape, "cannot view " + shape_str(a.shape) + " as " +
                                      shape_str(n.attrs.target_shape));
      n.value = TensorT<S>(n.attrs.target_shape, a.data);
      break;
    }

    case OpKind::SoftmaxCrossEntropy: {
      const TensorT<S>& z = nodes_[n.inputs[0]].value;
      const TensorT<S>& t = nodes_[n.inputs[1]].value;
      std::size_t rows = 0, k = 0;
      loss_dims(OpKind::SoftmaxCrossEntropy, z.shape, t.shape, rows, k);
      n.softmax = TensorT<S>(z.shape);
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* zr = z.data.data() + r * k;
        const S* tr = t.data.data() + r * k;
        S* pr = n.softmax.data.data() + r * k;
        S m = zr[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, zr[j]);
        double zsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double e = std::exp(double(zr[j] - m));
          pr[j] = S(e);  // scaled by 1/zsum below
          zsum += e;
        }
        const double logz = std::log(zsum);
        double loss = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          pr[j] = S(double(pr[j]) / zsum);
          loss += double(tr[j]) * (logz - double(zr[j] - m));
        }
        total += loss;
      }
      n.value = TensorT<S>({}, {S(total / double(rows))});
      break;
    }

    case OpKind::MarginLoss: {
      const TensorT<S>& z = nodes_[n.inputs[0]].value;
      const TensorT<S>& t = nodes_[n.inputs[1]].value;
      std::size_t rows = 0, k = 0;
      loss_dims(OpKind::MarginLoss, z.shape, t.shape, rows, k);
      if (k < 2) op_error(OpKind::MarginLoss, "needs at least two classes");
      n.margin_pick.assign(rows * 2, 0);
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* zr = z.data.data() + r * k;
        const S* tr = t.data.data() + r * k;
        std::size_t y = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (tr[j] > tr[y]) y = j;
        std::size_t best = y == 0 ? 1 : 0;
        for (std::size_t j = 0; j < k; ++j)
          if (j != y && zr[j] > zr[best]) best = j;
        n.margin_pick[2 * r] = std::uint32_t(y);
        n.margin_pick[2 * r + 1] = std::uint32_t(best);
        total += double(zr[best]) - double(zr[y]);
      }
      n.value = TensorT<S>({}, {S(total / double(rows))});
      break;
    }
  }

  if (!all_finite(n.value))
    throw std::runtime_error(std::string(op_name(n.kind)) +
                             ": non-finite output (overflow or invalid operand)");
}

template <typename S>
void GraphT<S>::recompute() {
  for (Node& n : nodes_)
    if (n.kind != OpKind::Leaf) forward_into(n);
}

template <typename S>
std::unordered_map<NodeId, TensorT<S>> GraphT<S>::backward(
    NodeId output, std::span<const NodeId> wrt, BackwardOptions opts) const {
  const Node& out = node(output);
  if (out.value.numel() != 1)
    throw std::invalid_argument("backward: output must be scalar, got shape " +
                                shape_str(out.value.shape));

  // A node's gradient is needed iff its subtree reaches a requested node.
  std::vector<char> want(nodes_.size(), 0);
  for (NodeId id : wrt) { node(id); want[std::size_t(id)] = 1; }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (want[i]) continue;
    for (NodeId in : nodes_[i].inputs)
      if (want[std::size_t(in)]) { want[i] = 1; break; }
  }

  std::vector<TensorT<S>> grads(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);
  auto grab = [&](NodeId id) -> TensorT<S>& {
    const auto i = std::size_t(id);
    if (!has[i]) { grads[i] = TensorT<S>::zeros(nodes_[i].value.shape); has[i] = 1; }
    return grads[i];
  };
  grab(output).data[0] = S(1);

  for (NodeId id = output; id >= 0; --id) {
    const auto ui = std::size_t(id);
    if (!has[ui]) continue;
    const Node& nd = nodes_[ui];
    if (nd.kind == OpKind::Leaf) continue;
    const TensorT<S>& g = grads[ui];
    const auto wants = [&](std::size_t slot) { return want[std::size_t(nd.inputs[slot])] != 0; };

    switch (nd.kind) {
      case OpKind::Leaf:
        break;

      case OpKind::Add: {
        const TensorT<S>& a = nodes_[nd.inputs[0]].value;
        const TensorT<S>& b = nodes_[nd.inputs[1]].value;
        if (wants(0)) {
          TensorT<S>& da = grab(nd.inputs[0]);
          for (std::size_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i];
        }
        if (wants(1)) {
          TensorT<S>& db = grab(nd.inputs[1]);
          if (a.same_shape(b)) {
            for (std::size_t i = 0; i < g.numel(); ++i) db.data[i] += g.data[i];
          } else if (a.ndim() == 2) {
            const std::size_t rows = a.extent(0), k = a.extent(1);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < k; ++j) db.data[j] += g.data[r * k + j];
          } else {
            const std::size_t nn = a.extent(0), c = a.extent(1);
            const std::size_t hw = a.extent(2) * a.extent(3);
            for (std::size_t s = 0; s < nn; ++s)
              for (std::size_t ch = 0; ch < c; ++ch) {
                const S* gp = g.data.data() + (s * c + ch) * hw;
                S acc = S(0);
                for (std::size_t p = 0; p < hw; ++p) acc += gp[p];
                db.data[ch] += acc;
              }
          }
        }
        break;
      }

      case OpKind::Mul: {
        const TensorT<S>& a = nodes_[nd.inputs[0]].value;
        const TensorT<S>& b = nodes_[nd.inputs[1]].value;
        if (wants(0)) {
          TensorT<S>& da = grab(nd.inputs[0]);
          for (std::size_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i] * b.data[i];
        }
        if (wants(1)) {
          TensorT<S>& db = grab(nd.inputs[1]);
          for (std::size_t i = 0; i < g.numel(); ++i) db.data[i] += g.data[i] * a.data[i];
        }
        break;
      }

      case OpKind::MatMul: {
        const TensorT<S>& a = nodes_[nd.inputs[0]].value;
        const TensorT<S>& b = nodes_[nd.inputs[1]].value;
        const std::size_t m = a.extent(0), k = a.extent(1), n2 = b.extent(1);
        if (wants(0)) {
          TensorT<S>& da = grab(nd.inputs[0]);
          S* dap = da.data.data();
          const S* gp = g.data.data();
          const S* bp = b.data.data();
          parallel_for(m, [&](std::size_t lo, std::size_t hi) {
            gemm_nt(gp + lo * n2, bp, dap + lo * k, hi - lo, n2, k);
          });
        }
        if (wants(1)) {
          TensorT<S>& db = grab(nd.inputs[1]);
          gemm_tn(a.data.data(), g.data.data(), db.data.data(), k, m, n2);
        }
        break;
      }

      case OpKind::Conv2d: {
        const TensorT<S>& x = nodes_[nd.inputs[0]].value;
        const TensorT<S>& w = nodes_[nd.inputs[1]].value;
        const ConvDims d = conv_dims(x.shape, w.shape, nd.attrs.stride, nd.attrs.pad);
        const std::size_t in_sz = d.ci * d.h * d.w;
        const std::size_t out_sz = d.co * d.out_hw();
        if (wants(1)) {
          TensorT<S>& dw = grab(nd.inputs[1]);
          std::vector<S> col(d.patch() * d.out_hw());
          // samples accumulate in ascending order; keep this loop serial
          for (std::size_t s = 0; s < d.n; ++s) {
            im2col(x.data.data() + s * in_sz, d, col.data());
            gemm_nt(g.data.data() + s * out_sz, col.data(), dw.data.data(),
                    d.co, d.out_hw(), d.patch());
          }
        }
        if (wants(0)) {
          TensorT<S>& dx = grab(nd.inputs[0]);
          const S* wp = w.data.data();
          const S* gp = g.data.data();
          S* dxp = dx.data.data();
          parallel_for(d.n, [&](std::size_t lo, std::size_t hi) {
            std::vector<S> colg(d.patch() * d.out_hw());
            for (std::size_t s = lo; s < hi; ++s) {
              std::fill(colg.begin(), colg.end(), S(0));
              gemm_tn(wp, gp + s * out_sz, colg.data(), d.patch(), d.co, d.out_hw());
              col2im_acc(colg.data(), d, dxp + s * in_sz);
            }
          });
        }
        break;
      }

      case OpKind::Relu: {
        if (wants(0)) {
          TensorT<S>& dx = grab(nd.inputs[0]);
          for (std::size_t i = 0; i < g.numel(); ++i)
            if (nd.relu_mask[i]) dx.data[i] += g.data[i];
        }
        break;
      }

      case OpKind::MaxPool2d: {
        if (wants(0)) {
          const TensorT<S>& a = nodes_[nd.inputs[0]].value;
          const PoolDims d = pool_dims(a.shape, nd.attrs.window, nd.attrs.pool_stride);
          TensorT<S>& dx = grab(nd.inputs[0]);
          const std::size_t ohw = d.ho * d.wo;
          for (std::size_t pl = 0; pl < d.n * d.c; ++pl) {
            S* dplane = dx.data.data() + pl * d.h * d.w;
            const S* gp = g.data.data() + pl * ohw;
            const std::uint32_t* arg = nd.pool_argmax.data() + pl * ohw;
            for (std::size_t e = 0; e < ohw; ++e) dplane[arg[e]] += gp[e];
          }
        }
        break;
      }

      case OpKind::Mean: {
        if (wants(0)) {
          const TensorT<S>& a = nodes_[nd.inputs[0]].value;
          const Shape& is = a.shape;
          std::vector<char> reduced(is.size(), 0);
          if (nd.attrs.axes.empty()) std::fill(reduced.begin(), reduced.end(), 1);
          else for (std::size_t ax : nd.attrs.axes) reduced[ax] = 1;
          std::size_t count = 1;
          for (std::size_t d2 = 0; d2 < is.size(); ++d2)
            if (reduced[d2]) count *= is[d2];
          std::vector<std::size_t> ostride(is.size(), 0);
          std::size_t stride = 1;
          for (std::size_t d2 = is.size(); d2-- > 0;)
            if (!reduced[d2]) { ostride[d2] = stride; stride *= is[d2]; }
          TensorT<S>& dx = grab(nd.inputs[0]);
          const S inv = S(1) / S(count);
          std::vector<std::size_t> idx(is.size(), 0);
          std::size_t oi = 0;
          for (std::size_t lin = 0; lin < a.numel(); ++lin) {
            dx.data[lin] += g.data[oi] * inv;
            for (std::size_t d2 = is.size(); d2-- > 0;) {
              oi += ostride[d2];
              if (++idx[d2] < is[d2]) break;
              idx[d2] = 0;
              oi -= ostride[d2] * is[d2];
            }
          }
        }
        break;
      }

      case OpKind::Reshape: {
        if (wants(0)) {
          TensorT<S>& dx = grab(nd.inputs[0]);
          for (std::size_t i = 0; i < g.numel(); ++i) dx.data[i] += g.data[i];
        }
        break;
      }

      case OpKind::SoftmaxCrossEntropy: {
        const TensorT<S>& z = nodes_[nd.inputs[0]].value;
        const TensorT<S>& t = nodes_[nd.inputs[1]].value;
        std::size_t rows = 0, k = 0;
        loss_dims(OpKind::SoftmaxCrossEntropy, z.shape, t.shape, rows, k);
        const S gs = g.data[0] / S(rows);
        if (wants(0)) {
          TensorT<S>& dz = grab(nd.inputs[0]);
          for (std::size_t r = 0; r < rows; ++r) {
            const S* tr = t.data.data() + r * k;
            const S* pr = nd.softmax.data.data() + r * k;
            S tsum = S(0);
            for (std::size_t j = 0; j < k; ++j) tsum += tr[j];
            S* dzr = dz.data.data() + r * k;
            for (std::size_t j = 0; j < k; ++j) dzr[j] += gs * (pr[j] * tsum - tr[j]);
          }
        }
        if (wants(1)) {
          TensorT<S>& dt = grab(nd.inputs[1]);
          for (std::size_t i = 0; i < dt.numel(); ++i)
            dt.data[i] += gs * S(-std::log(double(nd.softmax.data[i])));
        }
        break;
      }

      case OpKind::MarginLoss: {
        // labels enter only through an argmax, so their gradient is zero
        if (wants(0)) {
          const std::size_t rows = nd.margin_pick.size() / 2;
          const std::size_t k = nodes_[nd.inputs[0]].value.numel() / rows;
          const S gs = g.data[0] / S(rows);
          TensorT<S>& dz = grab(nd.inputs[0]);
          for (std::size_t r = 0; r < rows; ++r) {
            dz.data[r * k + nd.margin_pick[2 * r]] -= gs;
            dz.data[r * k + nd.margin_pick[2 * r + 1]] += gs;
          }
        }
        break;
      }
    }
  }

  std::unordered_map<NodeId, TensorT<S>> result;
  result.reserve(wrt.size());
  for (NodeId id : wrt) {
    const auto i = std::size_t(id);
    if (result.count(id)) continue;
    if (has[i]) {
      if (opts.check_finite && !all_finite(grads[i]))
        throw std::runtime_error("backward: non-finite gradient for node " + std::to_string(id));
      result.emplace(id, std::move(grads[i]));
    } else {
      result.emplace(id, TensorT<S>::zeros(nodes_[i].value.shape));
    }
  }
  return result;
}

template class GraphT<float>;
template class GraphT<double>;

GradCheckReport grad_check(GraphT<double>& graph, NodeId loss,
                           std::span<const GradCheckEntry> wrt, double tolerance,
                           double step) {
  if (graph.value(loss).numel() != 1)
    throw std::invalid_argument("grad_check: loss must be scalar");
  std::vector<NodeId> ids;
  ids.reserve(wrt.size());
  for (const auto& e : wrt) ids.push_back(e.id);
  const auto analytic = graph.backward(loss, ids);

  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (const auto& e : wrt) {
    const TensorT<double>& a = analytic.at(e.id);
    TensorT<double>& v = graph.leaf_value(e.id);
    GradCheckReport::PerParam pp;
    pp.name = e.name;
    pp.id = e.id;
    for (std::size_t j = 0; j < v.numel(); ++j) {
      const double orig = v.data[j];
      v.data[j] = orig + step;
      graph.recompute();
      const double lp = graph.value(loss).data[0];
      v.data[j] = orig - step;
      graph.recompute();
      const double lm = graph.value(loss).data[0];
      v.data[j] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double ref = a.data[j];
      const double rel = std::abs(ref - numeric) /
                         std::max({1.0, std::abs(ref), std::abs(numeric)});
      if (rel > pp.max_rel_err) { pp.max_rel_err = rel; pp.worst_index = j; }
    }
    rep.max_rel_err = std::max(rep.max_rel_err, pp.max_rel_err);
    rep.params.push_back(std::move(pp));
  }
  graph.recompute();  // restore values downstream of the probes
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

}  // namespace m2at
