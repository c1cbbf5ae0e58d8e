#include "tcformer/autograd.hpp"

#include <cmath>

namespace tcformer::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

Graph* graph_of(Var v) { return v.node->graph; }

bool wants_grad(Var v) { return v.node != nullptr && v.node->needs_grad; }

// Linear indices into a (plane_h x plane_w) plane for every kernel tap of every
// grid position; -1 marks taps that fall outside the plane. Shared between
// conv (grid = output) and transposed conv (grid = input).
std::vector<int> patch_indices(int grid_h, int grid_w, int plane_h, int plane_w, int k, int stride,
                               int pad) {
    std::vector<int> out(static_cast<size_t>(grid_h) * grid_w * k * k, -1);
    size_t pos = 0;
    for (int gy = 0; gy < grid_h; ++gy) {
        for (int gx = 0; gx < grid_w; ++gx) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx, ++pos) {
                    const int py = gy * stride + ky - pad;
                    const int px = gx * stride + kx - pad;
                    if (py >= 0 && py < plane_h && px >= 0 && px < plane_w) {
                        out[pos] = py * plane_w + px;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace

void Node::ensure_grad() {
    if (!has_grad) {
        grad = Tensor::zeros(value.shape());
        has_grad = true;
    }
}

MatMap Node::grad_mat() {
    ensure_grad();
    return grad.mat();
}

void Node::accum(const Tensor& g) {
    if (!needs_grad) return;
    ensure_grad();
    grad.vec() += g.vec();
}

void Node::accum_scaled(const Tensor& g, double s) {
    if (!needs_grad) return;
    ensure_grad();
    grad.vec() += s * g.vec();
}

Var Graph::make(Tensor value, bool needs_grad, std::function<void(Node&)> backprop) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = needs_grad ? std::move(backprop) : nullptr;
    n.graph = this;
    return Var{&n};
}

void Graph::backward(Var loss) {
    check_internal(loss.node && loss.node->graph == this, "loss not on this graph");
    check_internal(loss.val().numel() == 1, "backward expects a scalar loss");
    loss.node->ensure_grad();
    loss.node->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->has_grad && it->backprop) it->backprop(*it);
    }
}

// --- elementwise -------------------------------------------------------------

Var add(Var a, Var b) {
    check_internal(same_shape(a.val(), b.val()), "add: shape mismatch");
    Tensor out = a.val();
    out.vec() += b.val().vec();
    const bool ng = wants_grad(a) || wants_grad(b);
    if (!ng) return graph_of(a)->constant(std::move(out));
    return graph_of(a)->make(std::move(out), true, [an = a.node, bn = b.node](Node& self) {
        an->accum(self.grad);
        bn->accum(self.grad);
    });
}

Var sub(Var a, Var b) {
    check_internal(same_shape(a.val(), b.val()), "sub: shape mismatch");
    Tensor out = a.val();
    out.vec() -= b.val().vec();
    const bool ng = wants_grad(a) || wants_grad(b);
    if (!ng) return graph_of(a)->constant(std::move(out));
    return graph_of(a)->make(std::move(out), true, [an = a.node, bn = b.node](Node& self) {
        an->accum(self.grad);
        bn->accum_scaled(self.grad, -1.0);
    });
}

Var scale(Var a, double s) {
    Tensor out = a.val();
    out.vec() *= s;
    if (!wants_grad(a)) return graph_of(a)->constant(std::move(out));
    return graph_of(a)->make(std::move(out), true,
                             [an = a.node, s](Node& self) { an->accum_scaled(self.grad, s); });
}

Var add_rowvec(Var x, Var v) {
    check_internal(v.val().numel() == x.val().cols(), "add_rowvec: length mismatch");
    Tensor out = x.val();
    out.mat().rowwise() += v.val().vec().transpose();
    const bool ng = wants_grad(x) || wants_grad(v);
    if (!ng) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node, vn = v.node](Node& self) {
        xn->accum(self.grad);
        if (vn->needs_grad) {
            vn->ensure_grad();
            vn->grad.vec() += self.grad.mat().colwise().sum().transpose();
        }
    });
}

Var gelu(Var x) {
    const Tensor& xv = x.val();
    Tensor out(xv.shape());
    for (Index i = 0; i < xv.numel(); ++i) {
        const double z = xv[i];
        out[i] = 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
    }
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node](Node& self) {
        xn->ensure_grad();
        for (Index i = 0; i < self.grad.numel(); ++i) {
            const double z = xn->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * z * z);
            xn->grad[i] += self.grad[i] * (cdf + z * pdf);
        }
    });
}

Var slice_cols(Var x, Index start, Index len) {
    const Tensor& xv = x.val();
    check_internal(start >= 0 && start + len <= xv.cols(), "slice_cols out of range");
    Tensor out({xv.rows(), len});
    out.mat() = xv.mat().middleCols(start, len);
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node, start, len](Node& self) {
        xn->grad_mat().middleCols(start, len) += self.grad.mat();
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    check_internal(!parts.empty(), "concat_cols: empty");
    const Index rows = parts[0].val().rows();
    Index cols = 0;
    bool ng = false;
    for (const Var& p : parts) {
        check_internal(p.val().rows() == rows, "concat_cols: row mismatch");
        cols += p.val().cols();
        ng = ng || wants_grad(p);
    }
    Tensor out({rows, cols});
    Index at = 0;
    for (const Var& p : parts) {
        out.mat().middleCols(at, p.val().cols()) = p.val().mat();
        at += p.val().cols();
    }
    if (!ng) return graph_of(parts[0])->constant(std::move(out));
    std::vector<Node*> nodes;
    for (const Var& p : parts) nodes.push_back(p.node);
    return graph_of(parts[0])->make(std::move(out), true, [nodes](Node& self) {
        Index at = 0;
        for (Node* n : nodes) {
            const Index w = n->value.cols();
            if (n->needs_grad) n->grad_mat() += self.grad.mat().middleCols(at, w);
            at += w;
        }
    });
}

// --- linear algebra ----------------------------------------------------------

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
    ConstMatMap am = a.val().cmat();
    ConstMatMap bm = b.val().cmat();
    const Index m = trans_a ? am.cols() : am.rows();
    const Index ka = trans_a ? am.rows() : am.cols();
    const Index kb = trans_b ? bm.cols() : bm.rows();
    const Index n = trans_b ? bm.rows() : bm.cols();
    check_internal(ka == kb, "matmul: inner dimension mismatch");
    Tensor out({m, n});
    if (!trans_a && !trans_b)
        out.mat().noalias() = am * bm;
    else if (!trans_a && trans_b)
        out.mat().noalias() = am * bm.transpose();
    else if (trans_a && !trans_b)
        out.mat().noalias() = am.transpose() * bm;
    else
        out.mat().noalias() = am.transpose() * bm.transpose();

    const bool ng = wants_grad(a) || wants_grad(b);
    if (!ng) return graph_of(a)->constant(std::move(out));
    return graph_of(a)->make(
        std::move(out), true, [an = a.node, bn = b.node, trans_a, trans_b](Node& self) {
            ConstMatMap g = self.grad.cmat();
            ConstMatMap av = an->value.cmat();
            ConstMatMap bv = bn->value.cmat();
            if (an->needs_grad) {
                auto da = an->grad_mat();
                if (!trans_a && !trans_b)
                    da.noalias() += g * bv.transpose();
                else if (!trans_a && trans_b)
                    da.noalias() += g * bv;
                else if (trans_a && !trans_b)
                    da.noalias() += bv * g.transpose();
                else
                    da.noalias() += bv.transpose() * g.transpose();
            }
            if (bn->needs_grad) {
                auto db = bn->grad_mat();
                if (!trans_a && !trans_b)
                    db.noalias() += av.transpose() * g;
                else if (!trans_a && trans_b)
                    db.noalias() += g.transpose() * av;
                else if (trans_a && !trans_b)
                    db.noalias() += av * g;
                else
                    db.noalias() += g.transpose() * av.transpose();
            }
        });
}

Var linear(Var x, Var w, Var b) {
    ConstMatMap xm = x.val().cmat();
    ConstMatMap wm = w.val().cmat();
    check_internal(xm.cols() == wm.rows(), "linear: dimension mismatch");
    Tensor out({xm.rows(), wm.cols()});
    out.mat().noalias() = xm * wm;
    if (b) {
        check_internal(b.val().numel() == wm.cols(), "linear: bias length");
        out.mat().rowwise() += b.val().vec().transpose();
    }
    const bool ng = wants_grad(x) || wants_grad(w) || (b && wants_grad(b));
    if (!ng) return graph_of(x)->constant(std::move(out));
    Node* bn = b ? b.node : nullptr;
    return graph_of(x)->make(std::move(out), true, [xn = x.node, wn = w.node, bn](Node& self) {
        ConstMatMap g = self.grad.cmat();
        if (xn->needs_grad) xn->grad_mat().noalias() += g * wn->value.mat().transpose();
        if (wn->needs_grad) wn->grad_mat().noalias() += xn->value.mat().transpose() * g;
        if (bn && bn->needs_grad) {
            bn->ensure_grad();
            bn->grad.vec() += g.colwise().sum().transpose();
        }
    });
}

// --- normalization / attention -----------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    ConstMatMap xm = x.val().cmat();
    const Index n = xm.rows(), c = xm.cols();
    check_internal(gamma.val().numel() == c && beta.val().numel() == c, "layer_norm: param size");
    Tensor xhat_t({n, c});
    Tensor inv_t({n});
    auto xhat = xhat_t.mat();
    for (Index i = 0; i < n; ++i) {
        const double mu = xm.row(i).mean();
        const double var = (xm.row(i).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_t[i] = inv;
        xhat.row(i) = (xm.row(i).array() - mu) * inv;
    }
    Tensor out({n, c});
    out.mat() = (xhat.array().rowwise() * gamma.val().vec().transpose().array()).rowwise() +
                beta.val().vec().transpose().array();

    const bool ng = wants_grad(x) || wants_grad(gamma) || wants_grad(beta);
    if (!ng) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true,
                             [xn = x.node, gn = gamma.node, bn = beta.node,
                              xhat_t = std::move(xhat_t), inv_t = std::move(inv_t)](Node& self) {
                                 ConstMatMap g = self.grad.cmat();
                                 ConstMatMap xhat = xhat_t.cmat();
                                 const Index n = g.rows();
                                 if (bn->needs_grad) {
                                     bn->ensure_grad();
                                     bn->grad.vec() += g.colwise().sum().transpose();
                                 }
                                 if (gn->needs_grad) {
                                     gn->ensure_grad();
                                     gn->grad.vec() +=
                                         g.cwiseProduct(xhat).colwise().sum().transpose();
                                 }
                                 if (xn->needs_grad) {
                                     auto dx = xn->grad_mat();
                                     Eigen::RowVectorXd gv = gn->value.vec().transpose();
                                     for (Index i = 0; i < n; ++i) {
                                         Eigen::RowVectorXd h = g.row(i).cwiseProduct(gv);
                                         const double mh = h.mean();
                                         const double mhx = h.cwiseProduct(xhat.row(i)).mean();
                                         dx.row(i) += inv_t[i] *
                                                      (h.array() - mh - xhat.row(i).array() * mhx)
                                                          .matrix();
                                     }
                                 }
                             });
}

Var softmax_rows(Var x) {
    ConstMatMap xm = x.val().cmat();
    Tensor out({xm.rows(), xm.cols()});
    auto ym = out.mat();
    for (Index i = 0; i < xm.rows(); ++i) {
        const double m = xm.row(i).maxCoeff();
        ym.row(i) = (xm.row(i).array() - m).exp();
        ym.row(i) /= ym.row(i).sum();
    }
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node](Node& self) {
        ConstMatMap y = self.value.cmat();
        ConstMatMap g = self.grad.cmat();
        auto dx = xn->grad_mat();
        for (Index i = 0; i < y.rows(); ++i) {
            const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
            dx.row(i) += (g.row(i).array() - dot).matrix().cwiseProduct(y.row(i));
        }
    });
}

// --- reductions / losses -----------------------------------------------------

Var mean_rows(Var x) {
    ConstMatMap xm = x.val().cmat();
    Tensor out({1, xm.cols()});
    out.mat() = xm.colwise().mean();
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node](Node& self) {
        const double inv = 1.0 / static_cast<double>(xn->value.rows());
        xn->grad_mat().rowwise() += (self.grad.mat().row(0) * inv);
    });
}

Var mean_all(Var x) {
    Tensor out = Tensor::scalar(x.val().vec().mean());
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node](Node& self) {
        xn->ensure_grad();
        xn->grad.vec().array() += self.grad[0] / static_cast<double>(xn->value.numel());
    });
}

Var mse_loss(Var pred, const Tensor& target) {
    check_internal(same_shape(pred.val(), target), "mse_loss: shape mismatch");
    const Index n = target.numel();
    const double v = (pred.val().vec() - target.vec()).squaredNorm() / static_cast<double>(n);
    Tensor out = Tensor::scalar(v);
    if (!wants_grad(pred)) return graph_of(pred)->constant(std::move(out));
    return graph_of(pred)->make(std::move(out), true, [pn = pred.node, target](Node& self) {
        pn->ensure_grad();
        const double s = 2.0 * self.grad[0] / static_cast<double>(target.numel());
        pn->grad.vec() += s * (pn->value.vec() - target.vec());
    });
}

Var dot_const(Var x, const Tensor& w) {
    check_internal(x.val().numel() == w.numel(), "dot_const: size mismatch");
    Tensor out = Tensor::scalar(x.val().vec().dot(w.vec()));
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node, w](Node& self) {
        xn->ensure_grad();
        xn->grad.vec() += self.grad[0] * w.vec();
    });
}

// --- structured ops ----------------------------------------------------------

Var gather_rows(Var x, std::vector<int> index) {
    ConstMatMap xm = x.val().cmat();
    Tensor out({static_cast<Index>(index.size()), xm.cols()});
    auto ym = out.mat();
    for (size_t i = 0; i < index.size(); ++i) {
        check_internal(index[i] >= 0 && index[i] < xm.rows(), "gather_rows: index out of range");
        ym.row(static_cast<Index>(i)) = xm.row(index[i]);
    }
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true,
                             [xn = x.node, index = std::move(index)](Node& self) {
                                 auto dx = xn->grad_mat();
                                 ConstMatMap g = self.grad.cmat();
                                 for (size_t i = 0; i < index.size(); ++i) {
                                     dx.row(index[i]) += g.row(static_cast<Index>(i));
                                 }
                             });
}

Tensor apply_mix(const Tensor& x, const MixTable& table) {
    check_internal(x.rows() == table.in_count, "apply_mix: row count mismatch");
    Tensor out({table.out_count, x.cols()});
    auto ym = out.mat();
    ConstMatMap xm = x.cmat();
    for (Index i = 0; i < table.out_count; ++i) {
        for (Index e = table.offsets[i]; e < table.offsets[i + 1]; ++e) {
            ym.row(i) += table.weights[e] * xm.row(table.indices[e]);
        }
    }
    return out;
}

Var apply_mix(Var x, const MixTable& table) {
    Tensor out = apply_mix(x.val(), table);
    if (!wants_grad(x)) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(std::move(out), true, [xn = x.node, table](Node& self) {
        auto dx = xn->grad_mat();
        ConstMatMap g = self.grad.cmat();
        for (Index i = 0; i < table.out_count; ++i) {
            for (Index e = table.offsets[i]; e < table.offsets[i + 1]; ++e) {
                dx.row(table.indices[e]) += table.weights[e] * g.row(i);
            }
        }
    });
}

Var segment_merge(Var x, Var p, const std::vector<int>& assignment, Index merged_count) {
    ConstMatMap xm = x.val().cmat();
    const Index n = xm.rows(), c = xm.cols();
    check_internal(p.val().numel() == n, "segment_merge: score length mismatch");
    check_internal(static_cast<Index>(assignment.size()) == n, "segment_merge: assignment length");

    std::vector<double> shift(static_cast<size_t>(merged_count),
                              -std::numeric_limits<double>::infinity());
    for (Index j = 0; j < n; ++j) {
        const int m = assignment[static_cast<size_t>(j)];
        check_internal(m >= 0 && m < merged_count, "segment_merge: bad assignment");
        shift[static_cast<size_t>(m)] = std::max(shift[static_cast<size_t>(m)], p.val()[j]);
    }
    Tensor weights({n});
    Tensor denom({merged_count});
    for (Index j = 0; j < n; ++j) {
        const int m = assignment[static_cast<size_t>(j)];
        weights[j] = std::exp(p.val()[j] - shift[static_cast<size_t>(m)]);
        denom[m] += weights[j];
    }
    for (Index m = 0; m < merged_count; ++m) {
        check_internal(denom[m] > 0.0, "segment_merge: empty cluster");
    }
    Tensor out({merged_count, c});
    auto ym = out.mat();
    for (Index j = 0; j < n; ++j) {
        ym.row(assignment[static_cast<size_t>(j)]) += weights[j] * xm.row(j);
    }
    for (Index m = 0; m < merged_count; ++m) ym.row(m) /= denom[m];

    const bool ng = wants_grad(x) || wants_grad(p);
    if (!ng) return graph_of(x)->constant(std::move(out));
    return graph_of(x)->make(
        std::move(out), true,
        [xn = x.node, pn = p.node, assignment, weights = std::move(weights),
         denom = std::move(denom)](Node& self) {
            ConstMatMap g = self.grad.cmat();
            ConstMatMap y = self.value.cmat();
            ConstMatMap xv = xn->value.cmat();
            const Index n = xv.rows();
            for (Index j = 0; j < n; ++j) {
                const int m = assignment[static_cast<size_t>(j)];
                const double coef = weights[j] / denom[m];
                if (xn->needs_grad) xn->grad_mat().row(j) += coef * g.row(m);
                if (pn->needs_grad) {
                    pn->ensure_grad();
                    pn->grad[j] += coef * (g.row(m).dot(xv.row(j)) - g.row(m).dot(y.row(m)));
                }
            }
        });
}

// --- convolutions ------------------------------------------------------------

Var conv2d(Var x, Var w, Var b, int h, int w_in, int in_ch, int out_ch, int k, int stride,
           int pad) {
    const Tensor& xv = x.val();
    check_internal(xv.rows() == static_cast<Index>(h) * w_in && xv.cols() == in_ch,
                   "conv2d: input shape mismatch");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w_in + 2 * pad - k) / stride + 1;
    check_internal(oh > 0 && ow > 0, "conv2d: empty output");
    check_internal(w.val().rows() == static_cast<Index>(k) * k * in_ch &&
                       w.val().cols() == out_ch,
                   "conv2d: weight shape mismatch");

    auto taps = patch_indices(oh, ow, h, w_in, k, stride, pad);
    Tensor cols({static_cast<Index>(oh) * ow, static_cast<Index>(k) * k * in_ch});
    {
        auto cm = cols.mat();
        ConstMatMap xm = xv.cmat();
        const Index taps_per = static_cast<Index>(k) * k;
        for (Index g = 0; g < cols.rows(); ++g) {
            for (Index t = 0; t < taps_per; ++t) {
                const int src = taps[static_cast<size_t>(g * taps_per + t)];
                if (src >= 0) cm.block(g, t * in_ch, 1, in_ch) = xm.row(src);
            }
        }
    }
    Tensor out({static_cast<Index>(oh) * ow, out_ch});
    out.mat().noalias() = cols.mat() * w.val().mat();
    if (b) out.mat().rowwise() += b.val().vec().transpose();

    const bool ng = wants_grad(x) || wants_grad(w) || (b && wants_grad(b));
    if (!ng) return graph_of(x)->constant(std::move(out));
    Node* bn = b ? b.node : nullptr;
    return graph_of(x)->make(
        std::move(out), true,
        [xn = x.node, wn = w.node, bn, taps = std::move(taps), cols = std::move(cols), in_ch,
         k](Node& self) {
            ConstMatMap g = self.grad.cmat();
            if (bn && bn->needs_grad) {
                bn->ensure_grad();
                bn->grad.vec() += g.colwise().sum().transpose();
            }
            if (wn->needs_grad) wn->grad_mat().noalias() += cols.mat().transpose() * g;
            if (xn->needs_grad) {
                Tensor dcols({cols.rows(), cols.cols()});
                dcols.mat().noalias() = g * wn->value.mat().transpose();
                auto dx = xn->grad_mat();
                auto dc = dcols.mat();
                const Index taps_per = static_cast<Index>(k) * k;
                for (Index gi = 0; gi < dcols.rows(); ++gi) {
                    for (Index t = 0; t < taps_per; ++t) {
                        const int dst = taps[static_cast<size_t>(gi * taps_per + t)];
                        if (dst >= 0) dx.row(dst) += dc.block(gi, t * in_ch, 1, in_ch);
                    }
                }
            }
        });
}

Var dwconv3x3(Var x, Var w, Var b, int h, int w_in, int ch) {
    const Tensor& xv = x.val();
    check_internal(xv.rows() == static_cast<Index>(h) * w_in && xv.cols() == ch,
                   "dwconv3x3: input shape mismatch");
    check_internal(w.val().rows() == ch && w.val().cols() == 9, "dwconv3x3: weight shape");

    auto taps = patch_indices(h, w_in, h, w_in, 3, 1, 1);
    Tensor out({xv.rows(), ch});
    {
        auto ym = out.mat();
        ConstMatMap xm = xv.cmat();
        ConstMatMap wm = w.val().cmat();
        for (Index p = 0; p < xv.rows(); ++p) {
            for (Index t = 0; t < 9; ++t) {
                const int src = taps[static_cast<size_t>(p * 9 + t)];
                if (src >= 0) ym.row(p) += xm.row(src).cwiseProduct(wm.col(t).transpose());
            }
        }
        if (b) ym.rowwise() += b.val().vec().transpose();
    }
    const bool ng = wants_grad(x) || wants_grad(w) || (b && wants_grad(b));
    if (!ng) return graph_of(x)->constant(std::move(out));
    Node* bn = b ? b.node : nullptr;
    return graph_of(x)->make(
        std::move(out), true, [xn = x.node, wn = w.node, bn, taps = std::move(taps)](Node& self) {
            ConstMatMap g = self.grad.cmat();
            ConstMatMap xm = xn->value.cmat();
            ConstMatMap wm = wn->value.cmat();
            if (bn && bn->needs_grad) {
                bn->ensure_grad();
                bn->grad.vec() += g.colwise().sum().transpose();
            }
            for (Index p = 0; p < g.rows(); ++p) {
                for (Index t = 0; t < 9; ++t) {
                    const int src = taps[static_cast<size_t>(p * 9 + t)];
                    if (src < 0) continue;
                    if (wn->needs_grad) {
                        wn->grad_mat().col(t) += g.row(p).cwiseProduct(xm.row(src)).transpose();
                    }
                    if (xn->needs_grad) {
                        xn->grad_mat().row(src) += g.row(p).cwiseProduct(wm.col(t).transpose());
                    }
                }
            }
        });
}

Var conv_transpose2d(Var x, Var w, Var b, int h, int w_in, int in_ch, int out_ch, int k,
                     int stride, int pad) {
    const Tensor& xv = x.val();
    check_internal(xv.rows() == static_cast<Index>(h) * w_in && xv.cols() == in_ch,
                   "conv_transpose2d: input shape mismatch");
    check_internal(w.val().rows() == in_ch && w.val().cols() == static_cast<Index>(k) * k * out_ch,
                   "conv_transpose2d: weight shape mismatch");
    const int oh = stride * (h - 1) + k - 2 * pad;
    const int ow = stride * (w_in - 1) + k - 2 * pad;
    check_internal(oh > 0 && ow > 0, "conv_transpose2d: empty output");

    auto taps = patch_indices(h, w_in, oh, ow, k, stride, pad);
    Tensor patches({xv.rows(), static_cast<Index>(k) * k * out_ch});
    patches.mat().noalias() = xv.mat() * w.val().mat();
    Tensor out({static_cast<Index>(oh) * ow, out_ch});
    {
        auto ym = out.mat();
        auto pm = patches.mat();
        const Index taps_per = static_cast<Index>(k) * k;
        for (Index g = 0; g < xv.rows(); ++g) {
            for (Index t = 0; t < taps_per; ++t) {
                const int dst = taps[static_cast<size_t>(g * taps_per + t)];
                if (dst >= 0) ym.row(dst) += pm.block(g, t * out_ch, 1, out_ch);
            }
        }
        if (b) ym.rowwise() += b.val().vec().transpose();
    }
    const bool ng = wants_grad(x) || wants_grad(w) || (b && wants_grad(b));
    if (!ng) return graph_of(x)->constant(std::move(out));
    Node* bn = b ? b.node : nullptr;
    return graph_of(x)->make(
        std::move(out), true,
        [xn = x.node, wn = w.node, bn, taps = std::move(taps), out_ch, k](Node& self) {
            ConstMatMap g = self.grad.cmat();
            if (bn && bn->needs_grad) {
                bn->ensure_grad();
                bn->grad.vec() += g.colwise().sum().transpose();
            }
            const Index n_in = xn->value.rows();
            const Index taps_per = static_cast<Index>(k) * k;
            Tensor dpatches({n_in, taps_per * out_ch});
            auto dp = dpatches.mat();
            for (Index gi = 0; gi < n_in; ++gi) {
                for (Index t = 0; t < taps_per; ++t) {
                    const int src = taps[static_cast<size_t>(gi * taps_per + t)];
                    if (src >= 0) dp.block(gi, t * out_ch, 1, out_ch) = g.row(src);
                }
            }
            if (xn->needs_grad)
                xn->grad_mat().noalias() += dp * wn->value.mat().transpose();
            if (wn->needs_grad)
                wn->grad_mat().noalias() += xn->value.mat().transpose() * dp;
        });
}

}  // namespace tcformer::ad
