#include "saliency_audit/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace sa::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

struct ConvGeometry {
  std::size_t n, c, h, w, out_c, k, stride, pad, out_h, out_w;
  std::size_t col_rows() const { return c * k * k; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  std::size_t lo = 0;
  while (lo < g.out_w && lo * g.stride + kx < g.pad) ++lo;
  std::size_t hi = g.out_w;
  while (hi > lo && (hi - 1) * g.stride + kx >= g.pad + g.w) --hi;
  return {lo, hi};
}

// Unfolds one sample [C,H,W] into [C*k*k, H'*W'].
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * g.col_cols();
        const auto [lo, hi] = valid_columns(g, kx);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::size_t iy = oy * g.stride + ky;
          T* dst = row + oy * g.out_w;
          if (iy < g.pad || iy >= g.pad + g.h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          // Offsets are taken relative to `lo` so that no index goes negative.
          const T* src = x + (c * g.h + (iy - g.pad)) * g.w + (lo * g.stride + kx - g.pad);
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * g.col_cols();
        const auto [lo, hi] = valid_columns(g, kx);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::size_t iy = oy * g.stride + ky;
          if (iy < g.pad || iy >= g.pad + g.h) continue;
          T* dst = x + (c * g.h + (iy - g.pad)) * g.w + (lo * g.stride + kx - g.pad);
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.stride] += src[ox];
        }
      }
}

}  // namespace

template <typename T>
NodeId Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
  return nodes_.size() - 1;
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(NodeId id) const {
  require(id < nodes_.size(), "tape: unknown node id " + std::to_string(id));
  return nodes_[id];
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(NodeId id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.dims);
  return n.grad;
}

template <typename T>
NodeId Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, {});
}

template <typename T>
NodeId Tape<T>::conv2d(NodeId xi, NodeId wi, NodeId bi, std::size_t stride, std::size_t pad) {
  const auto& x = node(xi).value;
  const auto& w = node(wi).value;
  const auto& b = node(bi).value;
  require(x.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_string(x.dims));
  require(w.rank() == 4 && w.dims[1] == x.dims[1] && w.dims[2] == w.dims[3],
          "conv2d: weight must be [O,C,k,k] matching input channels");
  require(b.rank() == 1 && b.dims[0] == w.dims[0], "conv2d: bias must be [O]");
  require(stride >= 1, "conv2d: stride must be positive");
  ConvGeometry g{x.dims[0], x.dims[1], x.dims[2], x.dims[3], w.dims[0], w.dims[2], stride, pad, 0, 0};
  require(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k, "conv2d: kernel larger than padded input");
  g.out_h = (g.h + 2 * pad - g.k) / stride + 1;
  g.out_w = (g.w + 2 * pad - g.k) / stride + 1;

  Tensor<T> out({g.n, g.out_c, g.out_h, g.out_w});
  AlignedVector<T> col(g.col_rows() * g.col_cols());
  const ConstMapMat<T> wm(w.data.data(), g.out_c, g.col_rows());
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.data.data(), g.out_c);
  const std::size_t in_stride = g.c * g.h * g.w;
  const std::size_t out_stride = g.out_c * g.col_cols();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(x.data.data() + s * in_stride, g, col.data());
    MapMat<T> om(out.data.data() + s * out_stride, g.out_c, g.col_cols());
    om.noalias() = wm * ConstMapMat<T>(col.data(), g.col_rows(), g.col_cols());
    om.colwise() += bv;
  }

  const bool rg = node(xi).requires_grad || node(wi).requires_grad || node(bi).requires_grad;
  const NodeId self = nodes_.size();
  return push(std::move(out), rg, [this, xi, wi, bi, g, self, in_stride, out_stride] {
    const auto& gout = nodes_[self].grad;
    const auto& xv = nodes_[xi].value;
    const auto& wv = nodes_[wi].value;
    AlignedVector<T> col(g.col_rows() * g.col_cols());
    const ConstMapMat<T> wm(wv.data.data(), g.out_c, g.col_rows());
    for (std::size_t s = 0; s < g.n; ++s) {
      const ConstMapMat<T> gm(gout.data.data() + s * out_stride, g.out_c, g.col_cols());
      if (nodes_[wi].requires_grad) {
        im2col(xv.data.data() + s * in_stride, g, col.data());
        MapMat<T> gw(grad_slot(wi).data.data(), g.out_c, g.col_rows());
        gw.noalias() += gm * ConstMapMat<T>(col.data(), g.col_rows(), g.col_cols()).transpose();
      }
      if (nodes_[bi].requires_grad) {
        auto& gb = grad_slot(bi);
        for (std::size_t o = 0; o < g.out_c; ++o) gb.data[o] += gm.row(o).sum();
      }
      if (nodes_[xi].requires_grad) {
        MapMat<T> gcol(col.data(), g.col_rows(), g.col_cols());
        gcol.noalias() = wm.transpose() * gm;
        col2im_add(col.data(), g, grad_slot(xi).data.data() + s * in_stride);
      }
    }
  });
}

template <typename T>
NodeId Tape<T>::relu(NodeId xi) {
  const auto& x = node(xi).value;
  Tensor<T> out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  const NodeId self = nodes_.size();
  return push(std::move(out), node(xi).requires_grad, [this, xi, self] {
    if (!nodes_[xi].requires_grad) return;
    const auto& gout = nodes_[self].grad;
    const auto& xv = nodes_[xi].value;
    auto& gx = grad_slot(xi);
    const bool guided = mode_ == ReluMode::guided;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T g = gout.data[i];
      if (xv.data[i] > T(0) && (!guided || g > T(0))) gx.data[i] += g;
    }
  });
}

template <typename T>
NodeId Tape<T>::maxpool2d(NodeId xi, std::size_t k) {
  const auto& x = node(xi).value;
  require(x.rank() == 4, "maxpool2d: input must be [N,C,H,W]");
  require(k >= 1 && x.dims[2] >= k && x.dims[3] >= k, "maxpool2d: window larger than input");
  const std::size_t nc = x.dims[0] * x.dims[1], h = x.dims[2], w = x.dims[3];
  const std::size_t oh = h / k, ow = w / k;
  Tensor<T> out({x.dims[0], x.dims[1], oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t at = p * h * w + (oy * k + dy) * w + ox * k + dx;
            if (x.data[at] > x.data[best]) best = at;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out.data[o] = x.data[best];
        (*argmax)[o] = best;
      }
  const NodeId self = nodes_.size();
  return push(std::move(out), node(xi).requires_grad, [this, xi, self, argmax] {
    if (!nodes_[xi].requires_grad) return;
    const auto& gout = nodes_[self].grad;
    auto& gx = grad_slot(xi);
    for (std::size_t o = 0; o < argmax->size(); ++o) gx.data[(*argmax)[o]] += gout.data[o];
  });
}

template <typename T>
NodeId Tape<T>::mean_pool(NodeId xi) {
  const auto& x = node(xi).value;
  require(x.rank() == 4, "mean_pool: input must be [N,C,H,W]");
  const std::size_t nc = x.dims[0] * x.dims[1];
  const std::size_t area = x.dims[2] * x.dims[3];
  Tensor<T> out({x.dims[0], x.dims[1]});
  for (std::size_t p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < area; ++i) acc += x.data[p * area + i];
    out.data[p] = acc / static_cast<T>(area);
  }
  const NodeId self = nodes_.size();
  return push(std::move(out), node(xi).requires_grad, [this, xi, self, nc, area] {
    if (!nodes_[xi].requires_grad) return;
    const auto& gout = nodes_[self].grad;
    auto& gx = grad_slot(xi);
    for (std::size_t p = 0; p < nc; ++p) {
      const T g = gout.data[p] / static_cast<T>(area);
      for (std::size_t i = 0; i < area; ++i) gx.data[p * area + i] += g;
    }
  });
}

template <typename T>
NodeId Tape<T>::center_rows(NodeId xi) {
  const auto& x = node(xi).value;
  require(x.rank() == 4, "center_rows: input must be [N,C,H,W]");
  const std::size_t planes = x.dims[0] * x.dims[1];
  const std::size_t h = x.dims[2], w = x.dims[3];
  Tensor<T> out(x.dims, x.data);
  std::vector<T> mean(w);
  for (std::size_t p = 0; p < planes; ++p) {
    T* base = out.data.data() + p * h * w;
    std::fill(mean.begin(), mean.end(), T(0));
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) mean[c] += base[r * w + c];
    for (auto& m : mean) m /= static_cast<T>(h);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) base[r * w + c] -= mean[c];
  }
  const NodeId self = nodes_.size();
  return push(std::move(out), node(xi).requires_grad, [this, xi, self, planes, h, w] {
    if (!nodes_[xi].requires_grad) return;
    const auto& gout = nodes_[self].grad;
    auto& gx = grad_slot(xi);
    std::vector<T> mean(w);
    for (std::size_t p = 0; p < planes; ++p) {
      const T* g = gout.data.data() + p * h * w;
      T* dst = gx.data.data() + p * h * w;
      std::fill(mean.begin(), mean.end(), T(0));
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) mean[c] += g[r * w + c];
      for (auto& m : mean) m /= static_cast<T>(h);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) dst[r * w + c] += g[r * w + c] - mean[c];
    }
  });
}

template <typename T>
NodeId Tape<T>::reshape(NodeId xi, Shape dims) {
  const auto& x = node(xi).value;
  require(element_count(dims) == x.size(),
          "reshape: " + shape_string(x.dims) + " cannot become " + shape_string(dims));
  Tensor<T> out(std::move(dims), x.data);
  const NodeId self = nodes_.size();
  return push(std::move(out), node(xi).requires_grad, [this, xi, self] {
    if (!nodes_[xi].requires_grad) return;
    const auto& gout = nodes_[self].grad;
    auto& gx = grad_slot(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += gout.data[i];
  });
}

template <typename T>
NodeId Tape<T>::flatten(NodeId xi) {
  const auto& x = node(xi).value;
  require(x.rank() >= 1, "flatten: scalar input");
  const std::size_t n = x.dims[0];
  return reshape(xi, {n, n == 0 ? 0 : x.size() / n});
}

template <typename T>
NodeId Tape<T>::dense(NodeId xi, NodeId wi, NodeId bi) {
  const auto& x = node(xi).value;
  const auto& w = node(wi).value;
  const auto& b = node(bi).value;
  require(x.rank() == 2 && w.rank() == 2 && w.dims[1] == x.dims[1],
          "dense: expected x [N,I] and w [O,I], got " + shape_string(x.dims) + " and " +
              shape_string(w.dims));
  require(b.rank() == 1 && b.dims[0] == w.dims[0], "dense: bias must be [O]");
  const std::size_t n = x.dims[0], in = x.dims[1], outd = w.dims[0];
  Tensor<T> out({n, outd});
  MapMat<T> om(out.data.data(), n, outd);
  om.noalias() = ConstMapMat<T>(x.data.data(), n, in) * ConstMapMat<T>(w.data.data(), outd, in).transpose();
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b.data.data(), outd);
  om.rowwise() += bv;
  const bool rg = node(xi).requires_grad || node(wi).requires_grad || node(bi).requires_grad;
  const NodeId self = nodes_.size();
  return push(std::move(out), rg, [this, xi, wi, bi, self, n, in, outd] {
    const ConstMapMat<T> gm(nodes_[self].grad.data.data(), n, outd);
    if (nodes_[xi].requires_grad) {
      MapMat<T> gx(grad_slot(xi).data.data(), n, in);
      gx.noalias() += gm * ConstMapMat<T>(nodes_[wi].value.data.data(), outd, in);
    }
    if (nodes_[wi].requires_grad) {
      MapMat<T> gw(grad_slot(wi).data.data(), outd, in);
      gw.noalias() += gm.transpose() * ConstMapMat<T>(nodes_[xi].value.data.data(), n, in);
    }
    if (nodes_[bi].requires_grad) {
      auto& gb = grad_slot(bi);
      for (std::size_t o = 0; o < outd; ++o) gb.data[o] += gm.col(o).sum();
    }
  });
}

template <typename T>
NodeId Tape<T>::matmul(NodeId ai, NodeId bi) {
  const auto& a = node(ai).value;
  const auto& b = node(bi).value;
  require(a.rank() == 2 && b.rank() == 2 && a.dims[1] == b.dims[0],
          "matmul: incompatible shapes " + shape_string(a.dims) + " x " + shape_string(b.dims));
  const std::size_t m = a.dims[0], k = a.dims[1], n = b.dims[1];
  Tensor<T> out({m, n});
  MapMat<T>(out.data.data(), m, n).noalias() =
      ConstMapMat<T>(a.data.data(), m, k) * ConstMapMat<T>(b.data.data(), k, n);
  const bool rg = node(ai).requires_grad || node(bi).requires_grad;
  const NodeId self = nodes_.size();
  return push(std::move(out), rg, [this, ai, bi, self, m, k, n] {
    const ConstMapMat<T> gm(nodes_[self].grad.data.data(), m, n);
    if (nodes_[ai].requires_grad)
      MapMat<T>(grad_slot(ai).data.data(), m, k).noalias() +=
          gm * ConstMapMat<T>(nodes_[bi].value.data.data(), k, n).transpose();
    if (nodes_[bi].requires_grad)
      MapMat<T>(grad_slot(bi).data.data(), k, n).noalias() +=
          ConstMapMat<T>(nodes_[ai].value.data.data(), m, k).transpose() * gm;
  });
}

template <typename T>
NodeId Tape<T>::add(NodeId ai, NodeId bi) {
  const auto& a = node(ai).value;
  const auto& b = node(bi).value;
  require(a.dims == b.dims, "add: shape mismatch");
  Tensor<T> out(a.dims);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  const NodeId self = nodes_.size();
  return push(std::move(out), node(ai).requires_grad || node(bi).requires_grad, [this, ai, bi, self] {
    const auto& g = nodes_[self].grad;
    for (NodeId in : {ai, bi}) {
      if (!nodes_[in].requires_grad) continue;
      auto& gi = grad_slot(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi.data[i] += g.data[i];
    }
  });
}

template <typename T>
NodeId Tape<T>::mul(NodeId ai, NodeId bi) {
  const auto& a = node(ai).value;
  const auto& b = node(bi).value;
  require(a.dims == b.dims, "mul: shape mismatch");
  Tensor<T> out(a.dims);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  const NodeId self = nodes_.size();
  return push(std::move(out), node(ai).requires_grad || node(bi).requires_grad, [this, ai, bi, self] {
    const auto& g = nodes_[self].grad;
    if (nodes_[ai].requires_grad) {
      auto& ga = grad_slot(ai);
      const auto& bv = nodes_[bi].value;
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
    }
    if (nodes_[bi].requires_grad) {
      auto& gb = grad_slot(bi);
      const auto& av = nodes_[ai].value;
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
    }
  });
}

template <typename T>
NodeId Tape<T>::affine(NodeId xi, T scale, T shift) {
  const auto& x = node(xi).value;
  Tensor<T> out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = (x.data[i] - shift) * scale;
  const NodeId self = nodes_.size();
  return push(std::move(out), node(xi).requires_grad, [this, xi, self, scale] {
    if (!nodes_[xi].requires_grad) return;
    const auto& g = nodes_[self].grad;
    auto& gx = grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * scale;
  });
}

template <typename T>
NodeId Tape<T>::sum(NodeId xi) {
  const auto& x = node(xi).value;
  T acc = 0;
  for (T v : x.data) acc += v;
  const NodeId self = nodes_.size();
  return push(Tensor<T>({1}, {acc}), node(xi).requires_grad, [this, xi, self] {
    if (!nodes_[xi].requires_grad) return;
    const T g = nodes_[self].grad.data[0];
    for (auto& v : grad_slot(xi).data) v += g;
  });
}

template <typename T>
NodeId Tape<T>::softmax_cross_entropy(NodeId li, std::span<const std::size_t> labels) {
  const auto& logits = node(li).value;
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be [N,C]");
  const std::size_t n = logits.dims[0], c = logits.dims[1];
  require(labels.size() == n, "softmax_cross_entropy: one label per row required");
  auto probs = std::make_shared<std::vector<T>>(n * c);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    require(lab[r] < c, "softmax_cross_entropy: label out of range");
    const T* row = logits.data.data() + r * c;
    const T mx = *std::max_element(row, row + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - mx) / z;
    loss += -(row[lab[r]] - mx - std::log(z));
  }
  loss /= static_cast<T>(n);
  const NodeId self = nodes_.size();
  return push(Tensor<T>({1}, {loss}), node(li).requires_grad,
              [this, li, self, probs, lab = std::move(lab), n, c] {
                if (!nodes_[li].requires_grad) return;
                const T g = nodes_[self].grad.data[0] / static_cast<T>(n);
                auto& gl = grad_slot(li);
                for (std::size_t r = 0; r < n; ++r)
                  for (std::size_t j = 0; j < c; ++j)
                    gl.data[r * c + j] += g * ((*probs)[r * c + j] - (j == lab[r] ? T(1) : T(0)));
              });
}

template <typename T>
void Tape<T>::backward(NodeId root, const Tensor<T>& seed) {
  require(root < nodes_.size(), "backward: unknown root");
  require(seed.dims == nodes_[root].value.dims, "backward: seed shape must match the root value");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_slot(root) = seed;
  for (NodeId id = root + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.requires_grad && n.backward && n.grad.size() == n.value.size()) n.backward();
  }
}

template <typename T>
void Tape<T>::backward(NodeId root) {
  require(root < nodes_.size() && nodes_[root].value.size() == 1, "backward: root must be scalar");
  backward(root, Tensor<T>(nodes_[root].value.dims, T(1)));
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

template class Tape<float>;
template class Tape<double>;
template std::vector<float> softmax(std::span<const float>);
template std::vector<double> softmax(std::span<const double>);

}  // namespace sa::nn
