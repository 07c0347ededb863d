#include "ipdfer/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ipdfer {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }
int deconv_out_dim(int in, int k, int stride, int pad) { return (in - 1) * stride - 2 * pad + k; }

/// Gathers conv receptive fields into col(N*Ho*Wo, Cin*kh*kw); zero padding.
void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, MatRM& col) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  col.setZero(static_cast<Eigen::Index>(n) * ho * wo, static_cast<Eigen::Index>(ci) * k * k);
  for (int in = 0; in < n; ++in)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        const Eigen::Index row = (static_cast<Eigen::Index>(in) * ho + oh) * wo + ow;
        for (int c = 0; c < ci; ++c)
          for (int di = 0; di < k; ++di) {
            const int ih = oh * stride - pad + di;
            if (ih < 0 || ih >= h) continue;
            for (int dj = 0; dj < k; ++dj) {
              const int iw = ow * stride - pad + dj;
              if (iw < 0 || iw >= w) continue;
              col(row, (static_cast<Eigen::Index>(c) * k + di) * k + dj) = x.at4(in, c, ih, iw);
            }
          }
      }
}

/// Adjoint of im2col: scatter-adds col rows back into image gradient.
void col2im_add(const MatRM& col, int k, int stride, int pad, int ho, int wo, Tensor& gx) {
  const int n = gx.dim(0), ci = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  for (int in = 0; in < n; ++in)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        const Eigen::Index row = (static_cast<Eigen::Index>(in) * ho + oh) * wo + ow;
        for (int c = 0; c < ci; ++c)
          for (int di = 0; di < k; ++di) {
            const int ih = oh * stride - pad + di;
            if (ih < 0 || ih >= h) continue;
            for (int dj = 0; dj < k; ++dj) {
              const int iw = ow * stride - pad + dj;
              if (iw < 0 || iw >= w) continue;
              gx.at4(in, c, ih, iw) += col(row, (static_cast<Eigen::Index>(c) * k + di) * k + dj);
            }
          }
      }
}

}  // namespace

struct Graph::Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  Parameter* leaf = nullptr;
  std::function<void(Graph&, NodeId)> back;
};

struct Graph::Impl {
  std::vector<Node> nodes;
  bool backward_done = false;
};

Graph::Graph() : impl_(std::make_unique<Impl>()) {}
Graph::~Graph() = default;

Graph::Node& Graph::node(NodeId id) { return impl_->nodes[static_cast<std::size_t>(id)]; }
const Graph::Node& Graph::node(NodeId id) const { return impl_->nodes[static_cast<std::size_t>(id)]; }

NodeId Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&, NodeId)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  impl_->nodes.push_back(std::move(n));
  return static_cast<NodeId>(impl_->nodes.size() - 1);
}

NodeId Graph::input(Tensor t) { return push(std::move(t), false, nullptr); }

NodeId Graph::param(Parameter& p) {
  NodeId id = push(p.value, p.trainable, nullptr);
  node(id).leaf = &p;
  return id;
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

Tensor Graph::grad_of(NodeId id) const {
  const Node& n = node(id);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.dims());
}

bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }

std::size_t Graph::node_count() const { return impl_->nodes.size(); }

Tensor& Graph::grad_buf(NodeId id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.dims());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(NodeId id, const Tensor& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  Tensor& buf = grad_buf(id);
  const double* src = g.data();
  double* dst = buf.data();
  const std::int64_t m = buf.size();
  for (std::int64_t i = 0; i < m; ++i) dst[i] += src[i];
}

void Graph::backward(NodeId root) {
  if (impl_->backward_done) throw std::logic_error("graph: backward called twice");
  impl_->backward_done = true;
  Node& r = node(root);
  if (r.value.size() != 1) throw std::invalid_argument("graph: backward root must be scalar");
  if (!r.requires_grad) return;
  grad_buf(root)[0] = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = node(id);
    if (n.has_grad && n.back) n.back(*this, id);
  }
  for (std::size_t i = 0; i < impl_->nodes.size(); ++i) {
    Node& n = impl_->nodes[i];
    if (n.leaf && n.has_grad && n.leaf->trainable) {
      if (n.leaf->grad.size() != n.value.size()) n.leaf->grad = Tensor(n.value.dims());
      double* dst = n.leaf->grad.data();
      const double* src = n.grad.data();
      for (std::int64_t j = 0; j < n.grad.size(); ++j) dst[j] += src[j];
    }
  }
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_same_shape(node(a).value, node(b).value, "add");
  Tensor out = node(a).value;
  const Tensor& vb = node(b).value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out), rg, [a, b](Graph& g, NodeId self) {
    const Tensor& go = g.node(self).grad;
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

NodeId Graph::add3_commutative(NodeId a, NodeId b, NodeId c) {
  check_same_shape(node(a).value, node(b).value, "add3");
  check_same_shape(node(a).value, node(c).value, "add3");
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  const Tensor& vc = node(c).value;
  Tensor out(va.dims());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double v[3] = {va[i], vb[i], vc[i]};
    std::sort(v, v + 3, std::greater<double>());
    out[i] = (v[0] + v[1]) + v[2];
  }
  bool rg = node(a).requires_grad || node(b).requires_grad || node(c).requires_grad;
  return push(std::move(out), rg, [a, b, c](Graph& g, NodeId self) {
    const Tensor& go = g.node(self).grad;
    g.accumulate(a, go);
    g.accumulate(b, go);
    g.accumulate(c, go);
  });
}

NodeId Graph::leaky_relu(NodeId x, double alpha) {
  const Tensor& vx = node(x).value;
  Tensor out(vx.dims());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = vx[i] > 0.0 ? vx[i] : alpha * vx[i];
  return push(std::move(out), node(x).requires_grad, [x, alpha](Graph& g, NodeId self) {
    if (!g.node(x).requires_grad) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& vx = g.node(x).value;
    Tensor gx(vx.dims());
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * (vx[i] > 0.0 ? 1.0 : alpha);
    g.accumulate(x, gx);
  });
}

NodeId Graph::sigmoid(NodeId x) {
  const Tensor& vx = node(x).value;
  Tensor out(vx.dims());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double v = vx[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return push(std::move(out), node(x).requires_grad, [x](Graph& g, NodeId self) {
    if (!g.node(x).requires_grad) return;
    const Tensor& go = g.node(self).grad;
    const Tensor& y = g.node(self).value;
    Tensor gx(y.dims());
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * y[i] * (1.0 - y[i]);
    g.accumulate(x, gx);
  });
}

NodeId Graph::reshape(NodeId x, std::vector<int> dims) {
  const Tensor& vx = node(x).value;
  if (Tensor::count(dims) != vx.size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out(dims, std::vector<double>(vx.data(), vx.data() + vx.size()));
  return push(std::move(out), node(x).requires_grad, [x](Graph& g, NodeId self) {
    if (!g.node(x).requires_grad) return;
    const Tensor& go = g.node(self).grad;
    Tensor gx(g.node(x).value.dims(), std::vector<double>(go.data(), go.data() + go.size()));
    g.accumulate(x, gx);
  });
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Tensor& vx = node(x).value;
  const Tensor& vw = node(w).value;
  const Tensor& vb = node(b).value;
  if (vx.rank() != 4 || vw.rank() != 4) throw std::invalid_argument("conv2d: expects 4-D input and weight");
  if (vx.dim(1) != vw.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  const int n = vx.dim(0), cout = vw.dim(0), k = vw.dim(2);
  if (vw.dim(3) != k) throw std::invalid_argument("conv2d: non-square kernel");
  const int ho = conv_out_dim(vx.dim(2), k, stride, pad);
  const int wo = conv_out_dim(vx.dim(3), k, stride, pad);
  const Eigen::Index kk = static_cast<Eigen::Index>(vx.dim(1)) * k * k;

  auto col = std::make_shared<MatRM>();
  im2col(vx, k, stride, pad, ho, wo, *col);
  CMapM wm(vw.data(), cout, kk);
  MatRM outm = *col * wm.transpose();  // (N*Ho*Wo, Cout)

  Tensor out({n, cout, ho, wo});
  for (int in = 0; in < n; ++in)
    for (int co = 0; co < cout; ++co)
      for (int p = 0; p < ho * wo; ++p)
        out.at4(in, co, p / wo, p % wo) = outm(static_cast<Eigen::Index>(in) * ho * wo + p, co) + vb[co];

  bool rg = node(x).requires_grad || node(w).requires_grad || node(b).requires_grad;
  return push(std::move(out), rg, [x, w, b, stride, pad, k, col](Graph& g, NodeId self) {
    const Tensor& go = g.node(self).value;  // shape only
    const Tensor& gov = g.node(self).grad;
    const int n = go.dim(0), cout = go.dim(1), ho = go.dim(2), wo = go.dim(3);
    const Tensor& vw = g.node(w).value;
    const Eigen::Index kk = static_cast<Eigen::Index>(vw.dim(1)) * k * k;

    MatRM gom(static_cast<Eigen::Index>(n) * ho * wo, cout);
    for (int in = 0; in < n; ++in)
      for (int co = 0; co < cout; ++co)
        for (int p = 0; p < ho * wo; ++p)
          gom(static_cast<Eigen::Index>(in) * ho * wo + p, co) = gov.at4(in, co, p / wo, p % wo);

    if (g.node(w).requires_grad) {
      Tensor gw(vw.dims());
      MapM gwm(gw.data(), cout, kk);
      gwm.noalias() = gom.transpose() * (*col);
      g.accumulate(w, gw);
    }
    if (g.node(b).requires_grad) {
      Tensor gb({cout});
      for (int co = 0; co < cout; ++co) gb[co] = gom.col(co).sum();
      g.accumulate(b, gb);
    }
    if (g.node(x).requires_grad) {
      CMapM wm(vw.data(), cout, kk);
      MatRM gcol = gom * wm;  // (N*Ho*Wo, K)
      Tensor gx(g.node(x).value.dims());
      col2im_add(gcol, k, stride, pad, ho, wo, gx);
      g.accumulate(x, gx);
    }
  });
}

NodeId Graph::conv_transpose2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Tensor& vx = node(x).value;
  const Tensor& vw = node(w).value;  // (Cin, Cout, k, k)
  const Tensor& vb = node(b).value;
  if (vx.rank() != 4 || vw.rank() != 4) throw std::invalid_argument("conv_transpose2d: expects 4-D input and weight");
  if (vx.dim(1) != vw.dim(0)) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int n = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), wdim = vx.dim(3);
  const int cout = vw.dim(1), k = vw.dim(2);
  const int ho = deconv_out_dim(h, k, stride, pad);
  const int wo = deconv_out_dim(wdim, k, stride, pad);
  const Eigen::Index kt = static_cast<Eigen::Index>(cout) * k * k;
  const Eigen::Index np = static_cast<Eigen::Index>(n) * h * wdim;

  auto xrows = std::make_shared<MatRM>(np, cin);
  for (int in = 0; in < n; ++in)
    for (int c = 0; c < cin; ++c)
      for (int p = 0; p < h * wdim; ++p)
        (*xrows)(static_cast<Eigen::Index>(in) * h * wdim + p, c) = vx.at4(in, c, p / wdim, p % wdim);

  CMapM wv(vw.data(), cin, kt);
  MatRM colt = *xrows * wv;  // (N*H*W, Cout*k*k)

  Tensor out({n, cout, ho, wo});
  for (int in = 0; in < n; ++in)
    for (int ih = 0; ih < h; ++ih)
      for (int iw = 0; iw < wdim; ++iw) {
        const Eigen::Index row = (static_cast<Eigen::Index>(in) * h + ih) * wdim + iw;
        for (int co = 0; co < cout; ++co)
          for (int di = 0; di < k; ++di) {
            const int oh = ih * stride - pad + di;
            if (oh < 0 || oh >= ho) continue;
            for (int dj = 0; dj < k; ++dj) {
              const int ow = iw * stride - pad + dj;
              if (ow < 0 || ow >= wo) continue;
              out.at4(in, co, oh, ow) += colt(row, (static_cast<Eigen::Index>(co) * k + di) * k + dj);
            }
          }
      }
  for (int in = 0; in < n; ++in)
    for (int co = 0; co < cout; ++co)
      for (int p = 0; p < ho * wo; ++p) out.at4(in, co, p / wo, p % wo) += vb[co];

  bool rg = node(x).requires_grad || node(w).requires_grad || node(b).requires_grad;
  return push(std::move(out), rg, [x, w, b, stride, pad, k, xrows](Graph& g, NodeId self) {
    const Tensor& gov = g.node(self).grad;
    const int n = gov.dim(0), cout = gov.dim(1), ho = gov.dim(2), wo = gov.dim(3);
    const Tensor& vx = g.node(x).value;
    const int cin = vx.dim(1), h = vx.dim(2), wdim = vx.dim(3);
    const Eigen::Index kt = static_cast<Eigen::Index>(cout) * k * k;
    const Eigen::Index np = static_cast<Eigen::Index>(n) * h * wdim;

    MatRM gcolt;
    gcolt.setZero(np, kt);
    for (int in = 0; in < n; ++in)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < wdim; ++iw) {
          const Eigen::Index row = (static_cast<Eigen::Index>(in) * h + ih) * wdim + iw;
          for (int co = 0; co < cout; ++co)
            for (int di = 0; di < k; ++di) {
              const int oh = ih * stride - pad + di;
              if (oh < 0 || oh >= ho) continue;
              for (int dj = 0; dj < k; ++dj) {
                const int ow = iw * stride - pad + dj;
                if (ow < 0 || ow >= wo) continue;
                gcolt(row, (static_cast<Eigen::Index>(co) * k + di) * k + dj) = gov.at4(in, co, oh, ow);
              }
            }
        }

    const Tensor& vw = g.node(w).value;
    if (g.node(w).requires_grad) {
      Tensor gw(vw.dims());
      MapM gwv(gw.data(), cin, kt);
      gwv.noalias() = xrows->transpose() * gcolt;
      g.accumulate(w, gw);
    }
    if (g.node(b).requires_grad) {
      Tensor gb({cout});
      for (int in = 0; in < n; ++in)
        for (int co = 0; co < cout; ++co)
          for (int p = 0; p < ho * wo; ++p) gb[co] += gov.at4(in, co, p / wo, p % wo);
      g.accumulate(b, gb);
    }
    if (g.node(x).requires_grad) {
      CMapM wv(vw.data(), cin, kt);
      MatRM gxr = gcolt * wv.transpose();  // (N*H*W, Cin)
      Tensor gx(vx.dims());
      for (int in = 0; in < n; ++in)
        for (int c = 0; c < cin; ++c)
          for (int p = 0; p < h * wdim; ++p)
            gx.at4(in, c, p / wdim, p % wdim) = gxr(static_cast<Eigen::Index>(in) * h * wdim + p, c);
      g.accumulate(x, gx);
    }
  });
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
  const Tensor& vx = node(x).value;  // (N, in)
  const Tensor& vw = node(w).value;  // (out, in)
  const Tensor& vb = node(b).value;  // (out)
  if (vx.rank() != 2 || vw.rank() != 2) throw std::invalid_argument("linear: expects 2-D input and weight");
  if (vx.dim(1) != vw.dim(1))
    throw std::invalid_argument("linear: dimension mismatch " + vx.shape_str() + " vs " + vw.shape_str());
  const int n = vx.dim(0), in_d = vx.dim(1), out_d = vw.dim(0);

  Tensor out({n, out_d});
  {
    CMapM xm(vx.data(), n, in_d);
    CMapM wm(vw.data(), out_d, in_d);
    MapM om(out.data(), n, out_d);
    om.noalias() = xm * wm.transpose();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < out_d; ++c) om(r, c) += vb[c];
  }
  bool rg = node(x).requires_grad || node(w).requires_grad || node(b).requires_grad;
  return push(std::move(out), rg, [x, w, b](Graph& g, NodeId self) {
    const Tensor& gov = g.node(self).grad;
    const Tensor& vx = g.node(x).value;
    const Tensor& vw = g.node(w).value;
    const int n = vx.dim(0), in_d = vx.dim(1), out_d = vw.dim(0);
    CMapM gom(gov.data(), n, out_d);
    if (g.node(w).requires_grad) {
      Tensor gw(vw.dims());
      MapM gwm(gw.data(), out_d, in_d);
      CMapM xm(vx.data(), n, in_d);
      gwm.noalias() = gom.transpose() * xm;
      g.accumulate(w, gw);
    }
    if (g.node(b).requires_grad) {
      Tensor gb({out_d});
      for (int c = 0; c < out_d; ++c) gb[c] = gom.col(c).sum();
      g.accumulate(b, gb);
    }
    if (g.node(x).requires_grad) {
      Tensor gx(vx.dims());
      MapM gxm(gx.data(), n, in_d);
      CMapM wm(vw.data(), out_d, in_d);
      gxm.noalias() = gom * wm;
      g.accumulate(x, gx);
    }
  });
}

NodeId Graph::instance_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& vx = node(x).value;
  if (vx.rank() != 4) throw std::invalid_argument("instance_norm: expects 4-D input");
  const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const Tensor& vg = node(gamma).value;
  const Tensor& vbt = node(beta).value;
  if (vg.size() != c || vbt.size() != c) throw std::invalid_argument("instance_norm: affine size mismatch");
  const int m = h * w;

  auto xhat = std::make_shared<Tensor>(vx.dims());
  auto inv_std = std::make_shared<Tensor>(Tensor({n, c}));
  Tensor out(vx.dims());
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (int p = 0; p < m; ++p) mean += vx.at4(in, ch, p / w, p % w);
      mean /= m;
      double var = 0.0;
      for (int p = 0; p < m; ++p) {
        double d = vx.at4(in, ch, p / w, p % w) - mean;
        var += d * d;
      }
      var /= m;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std->at2(in, ch) = inv;
      for (int p = 0; p < m; ++p) {
        double xh = (vx.at4(in, ch, p / w, p % w) - mean) * inv;
        xhat->at4(in, ch, p / w, p % w) = xh;
        out.at4(in, ch, p / w, p % w) = vg[ch] * xh + vbt[ch];
      }
    }

  bool rg = node(x).requires_grad || node(gamma).requires_grad || node(beta).requires_grad;
  return push(std::move(out), rg, [x, gamma, beta, xhat, inv_std](Graph& g, NodeId self) {
    const Tensor& gov = g.node(self).grad;
    const int n = gov.dim(0), c = gov.dim(1), h = gov.dim(2), w = gov.dim(3);
    const int m = h * w;
    const Tensor& vg = g.node(gamma).value;

    if (g.node(gamma).requires_grad || g.node(beta).requires_grad) {
      Tensor gg({c}), gb({c});
      for (int in = 0; in < n; ++in)
        for (int ch = 0; ch < c; ++ch)
          for (int p = 0; p < m; ++p) {
            double go = gov.at4(in, ch, p / w, p % w);
            gg[ch] += go * xhat->at4(in, ch, p / w, p % w);
            gb[ch] += go;
          }
      g.accumulate(gamma, gg);
      g.accumulate(beta, gb);
    }
    if (g.node(x).requires_grad) {
      Tensor gx(gov.dims());
      for (int in = 0; in < n; ++in)
        for (int ch = 0; ch < c; ++ch) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int p = 0; p < m; ++p) {
            double dxh = gov.at4(in, ch, p / w, p % w) * vg[ch];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat->at4(in, ch, p / w, p % w);
          }
          const double inv = inv_std->at2(in, ch);
          for (int p = 0; p < m; ++p) {
            double dxh = gov.at4(in, ch, p / w, p % w) * vg[ch];
            double xh = xhat->at4(in, ch, p / w, p % w);
            gx.at4(in, ch, p / w, p % w) = (inv / m) * (m * dxh - sum_dxhat - xh * sum_dxhat_xhat);
          }
        }
      g.accumulate(x, gx);
    }
  });
}

NodeId Graph::global_avg_pool(NodeId x) {
  const Tensor& vx = node(x).value;
  if (vx.rank() != 4) throw std::invalid_argument("global_avg_pool: expects 4-D input");
  const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const int m = h * w;
  Tensor out({n, c});
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int p = 0; p < m; ++p) s += vx.at4(in, ch, p / w, p % w);
      out.at2(in, ch) = s / m;
    }
  return push(std::move(out), node(x).requires_grad, [x](Graph& g, NodeId self) {
    if (!g.node(x).requires_grad) return;
    const Tensor& gov = g.node(self).grad;
    const Tensor& vx = g.node(x).value;
    const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    const int m = h * w;
    Tensor gx(vx.dims());
    for (int in = 0; in < n; ++in)
      for (int ch = 0; ch < c; ++ch) {
        double go = gov.at2(in, ch) / m;
        for (int p = 0; p < m; ++p) gx.at4(in, ch, p / w, p % w) = go;
      }
    g.accumulate(x, gx);
  });
}

namespace {

/// Row-wise softmax with the logsumexp trick; returns probs and fills lse.
Tensor softmax_and_lse(const Tensor& logits, std::vector<double>& lse) {
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor probs(logits.dims());
  lse.assign(static_cast<std::size_t>(n), 0.0);
  for (int r = 0; r < n; ++r) {
    double mx = logits.at2(r, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits.at2(r, c));
    double s = 0.0;
    for (int c = 0; c < k; ++c) s += std::exp(logits.at2(r, c) - mx);
    const double l = mx + std::log(s);
    lse[static_cast<std::size_t>(r)] = l;
    for (int c = 0; c < k; ++c) probs.at2(r, c) = std::exp(logits.at2(r, c) - l);
  }
  return probs;
}

}  // namespace

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  const Tensor& vl = node(logits).value;
  if (vl.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: expects (N,K) logits");
  const int n = vl.dim(0), k = vl.dim(1);
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");

  std::vector<double> lse;
  auto probs = std::make_shared<Tensor>(softmax_and_lse(vl, lse));
  double loss = 0.0;
  for (int r = 0; r < n; ++r) loss += lse[static_cast<std::size_t>(r)] - vl.at2(r, labels[static_cast<std::size_t>(r)]);
  loss /= n;

  auto lab = std::make_shared<std::vector<int>>(std::move(labels));
  return push(Tensor::scalar(loss), node(logits).requires_grad, [logits, probs, lab](Graph& g, NodeId self) {
    if (!g.node(logits).requires_grad) return;
    const double go = g.node(self).grad[0];
    const int n = probs->dim(0), k = probs->dim(1);
    Tensor gl(probs->dims());
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < k; ++c)
        gl.at2(r, c) = go * (probs->at2(r, c) - (c == (*lab)[static_cast<std::size_t>(r)] ? 1.0 : 0.0)) / n;
    g.accumulate(logits, gl);
  });
}

NodeId Graph::uniform_cross_entropy(NodeId logits) {
  const Tensor& vl = node(logits).value;
  if (vl.rank() != 2) throw std::invalid_argument("uniform_cross_entropy: expects (N,K) logits");
  const int n = vl.dim(0), k = vl.dim(1);
  std::vector<double> lse;
  auto probs = std::make_shared<Tensor>(softmax_and_lse(vl, lse));
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    double mean_l = 0.0;
    for (int c = 0; c < k; ++c) mean_l += vl.at2(r, c);
    mean_l /= k;
    loss += lse[static_cast<std::size_t>(r)] - mean_l;
  }
  loss /= n;
  return push(Tensor::scalar(loss), node(logits).requires_grad, [logits, probs](Graph& g, NodeId self) {
    if (!g.node(logits).requires_grad) return;
    const double go = g.node(self).grad[0];
    const int n = probs->dim(0), k = probs->dim(1);
    Tensor gl(probs->dims());
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < k; ++c) gl.at2(r, c) = go * (probs->at2(r, c) - 1.0 / k) / n;
    g.accumulate(logits, gl);
  });
}

NodeId Graph::l1_per_sample(NodeId a, NodeId b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  check_same_shape(va, vb, "l1_per_sample");
  const int n = va.dim(0);
  const std::int64_t m = va.size() / n;
  Tensor out({n});
  for (int r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::int64_t i = 0; i < m; ++i) s += std::abs(va[r * m + i] - vb[r * m + i]);
    out[r] = s / static_cast<double>(m);
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out), rg, [a, b](Graph& g, NodeId self) {
    const Tensor& gov = g.node(self).grad;
    const Tensor& va = g.node(a).value;
    const Tensor& vb = g.node(b).value;
    const int n = va.dim(0);
    const std::int64_t m = va.size() / n;
    const bool need_a = g.node(a).requires_grad, need_b = g.node(b).requires_grad;
    Tensor ga(va.dims()), gb(vb.dims());
    for (int r = 0; r < n; ++r) {
      const double go = gov[r] / static_cast<double>(m);
      for (std::int64_t i = 0; i < m; ++i) {
        double d = va[r * m + i] - vb[r * m + i];
        double s = d > 0.0 ? go : (d < 0.0 ? -go : 0.0);
        if (need_a) ga[r * m + i] = s;
        if (need_b) gb[r * m + i] = -s;
      }
    }
    if (need_a) g.accumulate(a, ga);
    if (need_b) g.accumulate(b, gb);
  });
}

NodeId Graph::mean(NodeId v) {
  const Tensor& vv = node(v).value;
  double s = 0.0;
  for (std::int64_t i = 0; i < vv.size(); ++i) s += vv[i];
  s /= static_cast<double>(vv.size());
  return push(Tensor::scalar(s), node(v).requires_grad, [v](Graph& g, NodeId self) {
    if (!g.node(v).requires_grad) return;
    const double go = g.node(self).grad[0];
    const Tensor& vv = g.node(v).value;
    Tensor gv(vv.dims());
    const double s = go / static_cast<double>(vv.size());
    for (std::int64_t i = 0; i < gv.size(); ++i) gv[i] = s;
    g.accumulate(v, gv);
  });
}

NodeId Graph::masked_mean(NodeId v, std::vector<double> mask) {
  const Tensor& vv = node(v).value;
  if (static_cast<std::int64_t>(mask.size()) != vv.size()) throw std::invalid_argument("masked_mean: mask size mismatch");
  const double n = static_cast<double>(vv.size());
  double s = 0.0;
  for (std::int64_t i = 0; i < vv.size(); ++i) s += mask[static_cast<std::size_t>(i)] * vv[i];
  s /= n;
  auto msk = std::make_shared<std::vector<double>>(std::move(mask));
  return push(Tensor::scalar(s), node(v).requires_grad, [v, msk, n](Graph& g, NodeId self) {
    if (!g.node(v).requires_grad) return;
    const double go = g.node(self).grad[0];
    const Tensor& vv = g.node(v).value;
    Tensor gv(vv.dims());
    for (std::int64_t i = 0; i < gv.size(); ++i) gv[i] = go * (*msk)[static_cast<std::size_t>(i)] / n;
    g.accumulate(v, gv);
  });
}

NodeId Graph::abs_cosine_mean(NodeId a, NodeId b, double eps) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  check_same_shape(va, vb, "abs_cosine_mean");
  if (va.rank() != 2) throw std::invalid_argument("abs_cosine_mean: expects (N,d)");
  const int n = va.dim(0), d = va.dim(1);
  auto cosines = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    double s = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < d; ++i) {
      s += va.at2(r, i) * vb.at2(r, i);
      na2 += va.at2(r, i) * va.at2(r, i);
      nb2 += vb.at2(r, i) * vb.at2(r, i);
    }
    const double den = std::sqrt(na2) * std::sqrt(nb2) + eps;
    const double c = s / den;
    (*cosines)[static_cast<std::size_t>(r)] = c;
    total += std::abs(c);
  }
  total /= n;
  bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(Tensor::scalar(total), rg, [a, b, eps, cosines](Graph& g, NodeId self) {
    const double go = g.node(self).grad[0];
    const Tensor& va = g.node(a).value;
    const Tensor& vb = g.node(b).value;
    const int n = va.dim(0), d = va.dim(1);
    const bool need_a = g.node(a).requires_grad, need_b = g.node(b).requires_grad;
    Tensor ga(va.dims()), gb(vb.dims());
    for (int r = 0; r < n; ++r) {
      double na2 = 0.0, nb2 = 0.0;
      for (int i = 0; i < d; ++i) {
        na2 += va.at2(r, i) * va.at2(r, i);
        nb2 += vb.at2(r, i) * vb.at2(r, i);
      }
      const double na = std::sqrt(na2), nb = std::sqrt(nb2);
      const double den = na * nb + eps;
      const double c = (*cosines)[static_cast<std::size_t>(r)];
      const double sgn = c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
      const double f = go * sgn / n;
      const double inv_na = na > 0.0 ? 1.0 / na : 0.0;
      const double inv_nb = nb > 0.0 ? 1.0 / nb : 0.0;
      for (int i = 0; i < d; ++i) {
        if (need_a) ga.at2(r, i) = f * (vb.at2(r, i) - c * nb * inv_na * va.at2(r, i)) / den;
        if (need_b) gb.at2(r, i) = f * (va.at2(r, i) - c * na * inv_nb * vb.at2(r, i)) / den;
      }
    }
    if (need_a) g.accumulate(a, ga);
    if (need_b) g.accumulate(b, gb);
  });
}

NodeId Graph::weighted_sum(const std::vector<NodeId>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size() || scalars.empty())
    throw std::invalid_argument("weighted_sum: term/weight count mismatch");
  double s = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const Tensor& v = node(scalars[i]).value;
    if (v.size() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
    s += weights[i] * v[0];
    rg = rg || node(scalars[i]).requires_grad;
  }
  auto ids = std::make_shared<std::vector<NodeId>>(scalars);
  auto ws = std::make_shared<std::vector<double>>(weights);
  return push(Tensor::scalar(s), rg, [ids, ws](Graph& g, NodeId self) {
    const double go = g.node(self).grad[0];
    for (std::size_t i = 0; i < ids->size(); ++i) {
      Tensor gi = Tensor::scalar(go * (*ws)[i]);
      g.accumulate((*ids)[i], gi);
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  std::vector<double> lse;
  return softmax_and_lse(logits, lse);
}

double mean_abs_cosine(const Tensor& a, const Tensor& b, double eps) {
  check_same_shape(a, b, "mean_abs_cosine");
  const int n = a.dim(0), d = a.dim(1);
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    double s = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < d; ++i) {
      s += a.at2(r, i) * b.at2(r, i);
      na2 += a.at2(r, i) * a.at2(r, i);
      nb2 += b.at2(r, i) * b.at2(r, i);
    }
    total += std::abs(s) / (std::sqrt(na2) * std::sqrt(nb2) + eps);
  }
  return total / n;
}

}  // namespace ipdfer
