#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace misode {

// Named trainable tensor. Gradients are accumulated here by the optimizer
// after per-sample graphs ran their backward passes.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>::zeros(value.rows(), value.cols());
  }
};

// Dynamic reverse-mode tape over 2D tensors. One Graph instance per forward
// pass; values are computed eagerly at op construction. Graphs built with
// grad disabled skip all backward bookkeeping (used for inference and the
// finite-difference probes).
template <typename T>
class Graph {
 public:
  using Id = int;

  explicit Graph(bool enable_grad = true) : grad_enabled_(enable_grad) {}

  bool grad_enabled() const { return grad_enabled_; }

  const Tensor<T>& value(Id id) const { return nodes_[id].value; }

  // Gradient of the last backward() root w.r.t. this node.
  const Tensor<T>& grad(Id id) const {
    if (!nodes_[id].has_grad) throw std::logic_error("graph: node has no gradient");
    return nodes_[id].grad;
  }

  // ---- leaves ----

  Id param(Param<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    const Id id = push(clone(p.value), nullptr);
    param_nodes_[&p] = id;
    param_list_.push_back({&p, id});
    return id;
  }

  Id input(Tensor<T> v) { return push(std::move(v), nullptr); }

  const std::vector<std::pair<Param<T>*, Id>>& params_used() const { return param_list_; }

  // ---- ops ----

  // y = x * W + 1 b^T   (b optional: pass -1)
  Id linear(Id x, Id W, Id b) {
    const auto& xv = nodes_[x].value;
    const auto& wv = nodes_[W].value;
    check(xv.cols() == wv.rows(), "linear: inner dims");
    Tensor<T> y(xv.rows(), wv.cols());
    y.map().noalias() = xv.map() * wv.map();
    if (b >= 0) {
      const auto& bv = nodes_[b].value;
      check(bv.rows() == 1 && bv.cols() == wv.cols(), "linear: bias shape");
      y.map().rowwise() += bv.map().row(0);
    }
    return push(std::move(y), [x, W, b](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      typename Tensor<T>::ConstMap gym = gy.map();
      g.grad_ref(x).map().noalias() += gym * g.nodes_[W].value.map().transpose();
      g.grad_ref(W).map().noalias() += g.nodes_[x].value.map().transpose() * gym;
      if (b >= 0) g.grad_ref(b).map().row(0) += gym.colwise().sum();
    });
  }

  Id matmul(Id a, Id b) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[b].value;
    check(av.cols() == bv.rows(), "matmul: inner dims");
    Tensor<T> y(av.rows(), bv.cols());
    y.map().noalias() = av.map() * bv.map();
    return push(std::move(y), [a, b](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      g.grad_ref(a).map().noalias() += gy.map() * g.nodes_[b].value.map().transpose();
      g.grad_ref(b).map().noalias() += g.nodes_[a].value.map().transpose() * gy.map();
    });
  }

  Id add(Id a, Id b) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[b].value;
    check(av.same_shape(bv), "add: shapes");
    Tensor<T> y(av.rows(), av.cols());
    y.map() = av.map() + bv.map();
    return push(std::move(y), [a, b](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      g.grad_ref(a).map() += gy.map();
      g.grad_ref(b).map() += gy.map();
    });
  }

  Id mul(Id a, Id b) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[b].value;
    check(av.same_shape(bv), "mul: shapes");
    Tensor<T> y(av.rows(), av.cols());
    y.map().array() = av.map().array() * bv.map().array();
    return push(std::move(y), [a, b](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      g.grad_ref(a).map().array() += gy.map().array() * g.nodes_[b].value.map().array();
      g.grad_ref(b).map().array() += gy.map().array() * g.nodes_[a].value.map().array();
    });
  }

  Id scale(Id a, T s) {
    Tensor<T> y(nodes_[a].value.rows(), nodes_[a].value.cols());
    y.map() = nodes_[a].value.map() * s;
    return push(std::move(y), [a, s](Graph& g, Id self) {
      g.grad_ref(a).map() += g.nodes_[self].grad.map() * s;
    });
  }

  // y = a * s with scalar node s (1,1)
  Id scale_by(Id a, Id s) {
    const auto& av = nodes_[a].value;
    const auto& sv = nodes_[s].value;
    check(sv.rows() == 1 && sv.cols() == 1, "scale_by: scalar shape");
    Tensor<T> y(av.rows(), av.cols());
    y.map() = av.map() * sv.at(0, 0);
    return push(std::move(y), [a, s](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      g.grad_ref(a).map() += gy.map() * g.nodes_[s].value.at(0, 0);
      g.grad_ref(s).at(0, 0) += (g.nodes_[a].value.map().array() * gy.map().array()).sum();
    });
  }

  // Elementwise mean of equally shaped tensors.
  Id average(const std::vector<Id>& xs) {
    check(!xs.empty(), "average: empty list");
    const auto& first = nodes_[xs[0]].value;
    Tensor<T> y(first.rows(), first.cols());
    for (Id x : xs) {
      check(nodes_[x].value.same_shape(first), "average: shapes");
      y.map() += nodes_[x].value.map();
    }
    const T inv = T(1) / static_cast<T>(xs.size());
    y.map() *= inv;
    return push(std::move(y), [xs, inv](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      for (Id x : xs) g.grad_ref(x).map() += gy.map() * inv;
    });
  }

  // y = sum_j w_j x_j with w a column vector node (n,1).
  Id weighted_sum(const std::vector<Id>& xs, Id w) {
    const auto& wv = nodes_[w].value;
    check(wv.cols() == 1 && wv.rows() == static_cast<long>(xs.size()), "weighted_sum: weight shape");
    const auto& first = nodes_[xs[0]].value;
    Tensor<T> y(first.rows(), first.cols());
    for (std::size_t j = 0; j < xs.size(); ++j) {
      check(nodes_[xs[j]].value.same_shape(first), "weighted_sum: shapes");
      y.map() += nodes_[xs[j]].value.map() * wv.at(static_cast<long>(j), 0);
    }
    return push(std::move(y), [xs, w](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      for (std::size_t j = 0; j < xs.size(); ++j) {
        const long jj = static_cast<long>(j);
        g.grad_ref(xs[j]).map() += gy.map() * g.nodes_[w].value.at(jj, 0);
        g.grad_ref(w).at(jj, 0) +=
            (g.nodes_[xs[j]].value.map().array() * gy.map().array()).sum();
      }
    });
  }

  // Exact (erf-based) GELU.
  Id gelu(Id a) {
    const auto& av = nodes_[a].value;
    Tensor<T> y(av.rows(), av.cols());
    const T* in = av.data();
    T* out = y.data();
    for (long i = 0; i < av.size(); ++i) {
      const T x = in[i];
      out[i] = T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
    }
    return push(std::move(y), [a](Graph& g, Id self) {
      const auto& av2 = g.nodes_[a].value;
      const auto& gy = g.nodes_[self].grad;
      auto& ga = g.grad_ref(a);
      const T* in = av2.data();
      const T* gyp = gy.data();
      T* gap = ga.data();
      constexpr T inv_sqrt2pi = T(0.3989422804014327);
      for (long i = 0; i < av2.size(); ++i) {
        const T x = in[i];
        const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        gap[i] += gyp[i] * (cdf + x * pdf);
      }
    });
  }

  // Row-wise layer normalization with learned gain/bias.
  Id layer_norm(Id x, Id gamma, Id beta) {
    const auto& xv = nodes_[x].value;
    const auto& gv = nodes_[gamma].value;
    check(gv.rows() == 1 && gv.cols() == xv.cols(), "layer_norm: gamma shape");
    const long R = xv.rows(), C = xv.cols();
    Tensor<T> y(R, C);
    Tensor<T> xhat(R, C);
    Tensor<T> inv_std(R, 1);
    constexpr T eps = T(1e-5);
    for (long r = 0; r < R; ++r) {
      const T mean = xv.map().row(r).mean();
      const T var = (xv.map().row(r).array() - mean).square().mean();
      const T is = T(1) / std::sqrt(var + eps);
      inv_std.at(r, 0) = is;
      xhat.map().row(r) = (xv.map().row(r).array() - mean) * is;
    }
    y.map() = (xhat.map().array().rowwise() * gv.map().row(0).array()).rowwise() +
              nodes_[beta].value.map().row(0).array();
    auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
    auto inv_p = std::make_shared<Tensor<T>>(std::move(inv_std));
    return push(std::move(y), [x, gamma, beta, xhat_p, inv_p](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      const auto& gv2 = g.nodes_[gamma].value;
      const long R = gy.rows(), C = gy.cols();
      auto& gx = g.grad_ref(x);
      auto& gg = g.grad_ref(gamma);
      auto& gb = g.grad_ref(beta);
      for (long r = 0; r < R; ++r) {
        auto gyr = gy.map().row(r).array();
        auto xh = xhat_p->map().row(r).array();
        gg.map().row(0).array() += gyr * xh;
        gb.map().row(0).array() += gyr;
        // dL/dxhat
        Eigen::Array<T, 1, Eigen::Dynamic> dxh = gyr * gv2.map().row(0).array();
        const T m1 = dxh.mean();
        const T m2 = (dxh * xh).mean();
        gx.map().row(r).array() += (dxh - m1 - xh * m2) * inv_p->at(r, 0) * T(1);
        (void)C;
      }
    });
  }

  // Softmax over the rows of a column vector (n,1).
  Id softmax_col(Id x) {
    const auto& xv = nodes_[x].value;
    check(xv.cols() == 1, "softmax_col: column vector expected");
    Tensor<T> y(xv.rows(), 1);
    const T mx = xv.map().maxCoeff();
    y.map() = (xv.map().array() - mx).exp();
    y.map() /= y.map().sum();
    auto y_p = std::make_shared<Tensor<T>>(y);
    return push(std::move(y), [x, y_p](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      auto ya = y_p->map().array();
      const T dot = (gy.map().array() * ya).sum();
      g.grad_ref(x).map().array() += ya * (gy.map().array() - dot);
    });
  }

  // Multi-head scaled dot-product attention over nb independent blocks.
  // q: (nb*q_block, d), k and v: (nb*kv_block, d). Heads split d evenly.
  // With causal=true (requires q_block == kv_block) position i attends to
  // keys 0..i of its own block; masked weights are exactly zero.
  Id mha(Id q, Id k, Id v, int heads, long nb, long q_block, long kv_block, bool causal) {
    const auto& qv = nodes_[q].value;
    const auto& kv = nodes_[k].value;
    const auto& vv = nodes_[v].value;
    const long d = qv.cols();
    check(d == kv.cols() && d == vv.cols(), "mha: widths");
    check(d % heads == 0, "mha: heads must divide width");
    check(qv.rows() == nb * q_block && kv.rows() == nb * kv_block && vv.rows() == nb * kv_block,
          "mha: block layout");
    check(!causal || q_block == kv_block, "mha: causal needs square blocks");
    const long dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Tensor<T> y(qv.rows(), d);
    // Attention weights, laid out as (nb*q_block, heads*kv_block).
    auto attn = std::make_shared<Tensor<T>>(qv.rows(), heads * kv_block);
    for (long b = 0; b < nb; ++b) {
      auto Qb = qv.map().middleRows(b * q_block, q_block);
      auto Kb = kv.map().middleRows(b * kv_block, kv_block);
      auto Vb = vv.map().middleRows(b * kv_block, kv_block);
      auto Yb = y.map().middleRows(b * q_block, q_block);
      auto Ab = attn->map().middleRows(b * q_block, q_block);
      for (int h = 0; h < heads; ++h) {
        auto Qh = Qb.middleCols(h * dh, dh);
        auto Kh = Kb.middleCols(h * dh, dh);
        auto Vh = Vb.middleCols(h * dh, dh);
        auto Ah = Ab.middleCols(h * kv_block, kv_block);
        Ah.noalias() = Qh * Kh.transpose() * scale;
        for (long i = 0; i < q_block; ++i) {
          const long limit = causal ? i + 1 : kv_block;
          auto row = Ah.row(i).head(limit).array();
          const T mx = row.maxCoeff();
          row = (row - mx).exp();
          row /= row.sum();
          if (limit < kv_block) Ah.row(i).tail(kv_block - limit).setZero();
        }
        Yb.middleCols(h * dh, dh).noalias() = Ah * Vh;
      }
    }
    return push(std::move(y),
                [q, k, v, heads, nb, q_block, kv_block, dh, scale, attn](Graph& g, Id self) {
                  const auto& gy = g.nodes_[self].grad;
                  const auto& qv2 = g.nodes_[q].value;
                  const auto& kv2 = g.nodes_[k].value;
                  const auto& vv2 = g.nodes_[v].value;
                  auto& gq = g.grad_ref(q);
                  auto& gk = g.grad_ref(k);
                  auto& gv = g.grad_ref(v);
                  using Mat = typename Tensor<T>::Mat;
                  for (long b = 0; b < nb; ++b) {
                    auto Qb = qv2.map().middleRows(b * q_block, q_block);
                    auto Kb = kv2.map().middleRows(b * kv_block, kv_block);
                    auto Vb = vv2.map().middleRows(b * kv_block, kv_block);
                    auto Ab = attn->map().middleRows(b * q_block, q_block);
                    auto gYb = gy.map().middleRows(b * q_block, q_block);
                    for (int h = 0; h < heads; ++h) {
                      auto Ah = Ab.middleCols(h * kv_block, kv_block);
                      auto gYh = gYb.middleCols(h * dh, dh);
                      Mat dA = gYh * Vb.middleCols(h * dh, dh).transpose();
                      // softmax backward: dS = A o (dA - rowsum(dA o A))
                      Mat dS(q_block, kv_block);
                      for (long i = 0; i < q_block; ++i) {
                        const T dot = (dA.row(i).array() * Ah.row(i).array()).sum();
                        dS.row(i) = Ah.row(i).array() * (dA.row(i).array() - dot);
                      }
                      gv.map().middleRows(b * kv_block, kv_block).middleCols(h * dh, dh).noalias() +=
                          Ah.transpose() * gYh;
                      gq.map().middleRows(b * q_block, q_block).middleCols(h * dh, dh).noalias() +=
                          dS * Kb.middleCols(h * dh, dh) * scale;
                      gk.map().middleRows(b * kv_block, kv_block).middleCols(h * dh, dh).noalias() +=
                          dS.transpose() * Qb.middleCols(h * dh, dh) * scale;
                    }
                  }
                });
  }

  // Row gather from an embedding table; id -1 yields a zero row.
  Id embed_rows(Id table, std::vector<int> ids) {
    const auto& tv = nodes_[table].value;
    Tensor<T> y(static_cast<long>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      check(ids[i] < tv.rows(), "embed_rows: id out of range");
      if (ids[i] >= 0) y.map().row(static_cast<long>(i)) = tv.map().row(ids[i]);
    }
    return push(std::move(y), [table, ids = std::move(ids)](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      auto& gt = g.grad_ref(table);
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] >= 0) gt.map().row(ids[i]) += gy.map().row(static_cast<long>(i));
    });
  }

  // Slot-wise gather: ids has len*slots entries; output row i concatenates
  // the embeddings of its `slots` ids; -1 slots stay zero.
  Id embed_slots(Id table, std::vector<int> ids, long len, long slots) {
    const auto& tv = nodes_[table].value;
    const long d = tv.cols();
    check(static_cast<long>(ids.size()) == len * slots, "embed_slots: id count");
    Tensor<T> y(len, slots * d);
    for (long i = 0; i < len; ++i)
      for (long s = 0; s < slots; ++s) {
        const int id = ids[static_cast<std::size_t>(i * slots + s)];
        check(id < tv.rows(), "embed_slots: id out of range");
        if (id >= 0) y.map().row(i).segment(s * d, d) = tv.map().row(id);
      }
    return push(std::move(y), [table, ids = std::move(ids), len, slots, d](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      auto& gt = g.grad_ref(table);
      for (long i = 0; i < len; ++i)
        for (long s = 0; s < slots; ++s) {
          const int id = ids[static_cast<std::size_t>(i * slots + s)];
          if (id >= 0) gt.map().row(id) += gy.map().row(i).segment(s * d, d);
        }
    });
  }

  Id concat_rows(const std::vector<Id>& xs) {
    check(!xs.empty(), "concat_rows: empty list");
    const long C = nodes_[xs[0]].value.cols();
    long R = 0;
    for (Id x : xs) {
      check(nodes_[x].value.cols() == C, "concat_rows: widths");
      R += nodes_[x].value.rows();
    }
    Tensor<T> y(R, C);
    long r = 0;
    for (Id x : xs) {
      const auto& xv = nodes_[x].value;
      y.map().middleRows(r, xv.rows()) = xv.map();
      r += xv.rows();
    }
    return push(std::move(y), [xs](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      long r = 0;
      for (Id x : xs) {
        const long n = g.nodes_[x].value.rows();
        g.grad_ref(x).map() += gy.map().middleRows(r, n);
        r += n;
      }
    });
  }

  Id take_rows(Id x, std::vector<long> rows) {
    const auto& xv = nodes_[x].value;
    Tensor<T> y(static_cast<long>(rows.size()), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check(rows[i] >= 0 && rows[i] < xv.rows(), "take_rows: index");
      y.map().row(static_cast<long>(i)) = xv.map().row(rows[i]);
    }
    return push(std::move(y), [x, rows = std::move(rows)](Graph& g, Id self) {
      const auto& gy = g.nodes_[self].grad;
      auto& gx = g.grad_ref(x);
      for (std::size_t i = 0; i < rows.size(); ++i)
        gx.map().row(rows[i]) += gy.map().row(static_cast<long>(i));
    });
  }

  // (1, d) -> (n, d) with identical rows.
  Id repeat_row(Id x, long n) {
    const auto& xv = nodes_[x].value;
    check(xv.rows() == 1, "repeat_row: single row expected");
    Tensor<T> y(n, xv.cols());
    y.map().rowwise() = xv.map().row(0);
    return push(std::move(y), [x](Graph& g, Id self) {
      g.grad_ref(x).map().row(0) += g.nodes_[self].grad.map().colwise().sum();
    });
  }

  // Token-level cross entropy, averaged over non-pad labels.
  Id cross_entropy(Id logits, const std::vector<int>& labels, int pad_id) {
    const auto& lv = nodes_[logits].value;
    check(static_cast<long>(labels.size()) == lv.rows(), "cross_entropy: label count");
    long count = 0;
    for (int l : labels)
      if (l != pad_id) ++count;
    if (count == 0) throw std::invalid_argument("cross_entropy: no non-pad labels");

    auto probs = std::make_shared<Tensor<T>>(lv.rows(), lv.cols());
    T total = T(0);
    for (long r = 0; r < lv.rows(); ++r) {
      auto row = lv.map().row(r).array();
      const T mx = row.maxCoeff();
      auto pr = probs->map().row(r).array();
      pr = (row - mx).exp();
      const T z = pr.sum();
      pr /= z;
      if (labels[static_cast<std::size_t>(r)] != pad_id) {
        const T logp = row(labels[static_cast<std::size_t>(r)]) - mx - std::log(z);
        total -= logp;
      }
    }
    Tensor<T> y(1, 1);
    y.at(0, 0) = total / static_cast<T>(count);
    return push(std::move(y), [logits, labels, pad_id, count, probs](Graph& g, Id self) {
      const T go = g.nodes_[self].grad.at(0, 0);
      auto& gl = g.grad_ref(logits);
      const T inv = go / static_cast<T>(count);
      for (long r = 0; r < gl.rows(); ++r) {
        const int lab = labels[static_cast<std::size_t>(r)];
        if (lab == pad_id) continue;
        gl.map().row(r).array() += probs->map().row(r).array() * inv;
        gl.at(r, lab) -= inv;
      }
    });
  }

  // Seeds d(root)/d(root) = 1 and walks the tape in reverse creation order.
  void backward(Id root) {
    if (!grad_enabled_) throw std::logic_error("graph: backward on a no-grad graph");
    const auto& rv = nodes_[root].value;
    check(rv.rows() == 1 && rv.cols() == 1, "backward: root must be scalar");
    grad_ref(root).at(0, 0) = T(1);
    for (Id i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, i);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    std::function<void(Graph&, Id)> backward;
  };

  static Tensor<T> clone(const Tensor<T>& t) { return t; }

  static void check(bool ok, const char* what) {
    if (!ok) throw std::logic_error(std::string("graph: ") + what);
  }

  Tensor<T>& grad_ref(Id id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  // The closure only becomes a std::function (heap allocation) when gradients
  // are enabled; no-grad graphs pay nothing for backward bookkeeping.
  template <typename F>
  Id push(Tensor<T> value, F&& backward) {
    Node n;
    n.value = std::move(value);
    if constexpr (!std::is_same_v<std::decay_t<F>, std::nullptr_t>) {
      if (grad_enabled_) n.backward = std::forward<F>(backward);
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  bool grad_enabled_;
  // deque: references into nodes stay valid while the tape grows
  std::deque<Node> nodes_;
  std::unordered_map<Param<T>*, Id> param_nodes_;
  std::vector<std::pair<Param<T>*, Id>> param_list_;
};

}  // namespace misode
