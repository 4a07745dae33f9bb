// SPDX-License-Identifier: Apache-2.0
#include "treesr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "treesr/error.hpp"

namespace treesr {

namespace {

thread_local bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

bool any_requires_grad(std::span<const Var> xs) {
    if (!g_grad_enabled) return false;
    return std::any_of(xs.begin(), xs.end(), [](const Var& v) { return v->requires_grad; });
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    if (any_requires_grad(inputs)) {
        out->requires_grad = true;
        out->inputs = std::move(inputs);
        out->backward_fn = std::move(fn);
    }
    return out;
}

void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

void im2col(const float* x, int cin, int h, int w, int k, float* cols) {
    const int pad = (k - 1) / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < cin; ++ci) {
        const float* src = x + ci * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    float* row = dst + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(row, row + w, 0.0f);
                        continue;
                    }
                    const float* srow = src + static_cast<std::size_t>(sy) * w;
                    std::fill(row, row + x0, 0.0f);
                    std::copy(srow + x0 + dx, srow + x1 + dx, row + x0);
                    std::fill(row + x1, row + w, 0.0f);
                }
            }
        }
    }
}

void col2im(const float* cols, int cin, int h, int w, int k, float* dx_out) {
    const int pad = (k - 1) / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < cin; ++ci) {
        float* dst = dx_out + ci * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const float* row = src + static_cast<std::size_t>(y) * w;
                    float* drow = dst + static_cast<std::size_t>(sy) * w;
                    for (int x = x0; x < x1; ++x) drow[x + dx] += row[x];
                }
            }
        }
    }
}

}  // namespace

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

Tensor& Node::grad_buffer() {
    if (grad.data.empty()) grad = Tensor(value.shape);
    return grad;
}

Var constant(Tensor t) {
    auto v = std::make_shared<Node>();
    v->value = std::move(t);
    return v;
}

Var parameter(Tensor t) {
    auto v = constant(std::move(t));
    v->requires_grad = true;
    return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(std::span<const Var> roots) {
    // Iterative DFS post-order gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    for (const Var& r : roots) {
        if (!r || !r->requires_grad || seen.count(r.get())) continue;
        seen.insert(r.get());
        stack.emplace_back(r.get(), 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                Node* child = node->inputs[next++].get();
                if (child->requires_grad && !seen.count(child)) {
                    seen.insert(child);
                    stack.emplace_back(child, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
    }
    for (Node* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->inputs.clear();
            node->grad = Tensor();
        }
    }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
    const Shape xs = x->shape(), ws = weight->shape();
    require(ws.h == ws.w && (ws.h % 2) == 1, "conv2d: kernel must be square and odd");
    require(ws.c == xs.c, "conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                              std::to_string(ws.c));
    require(bias->shape().c == ws.n, "conv2d: bias size mismatch");
    const int cout = ws.n, cin = ws.c, k = ws.h, h = xs.h, w = xs.w, batch = xs.n;
    const int kk = cin * k * k;
    const std::size_t hw = xs.plane();
    Tensor out(Shape{batch, cout, h, w});

    const bool record = any_requires_grad(std::vector<Var>{x, weight, bias});
    auto cols = std::make_shared<std::vector<float>>();
    std::vector<float> scratch;
    if (k > 1) {
        if (record) cols->resize(static_cast<std::size_t>(batch) * kk * hw);
        else scratch.resize(static_cast<std::size_t>(kk) * hw);
    }
    CMapRM wm(weight->value.data.data(), cout, kk);
    for (int n = 0; n < batch; ++n) {
        const float* xin = x->value.data.data() + static_cast<std::size_t>(n) * cin * hw;
        const float* colp = xin;
        if (k > 1) {
            float* dst = record ? cols->data() + static_cast<std::size_t>(n) * kk * hw : scratch.data();
            im2col(xin, cin, h, w, k, dst);
            colp = dst;
        }
        MapRM om(out.data.data() + static_cast<std::size_t>(n) * cout * hw, cout, static_cast<Eigen::Index>(hw));
        om.noalias() = wm * CMapRM(colp, kk, static_cast<Eigen::Index>(hw));
        for (int co = 0; co < cout; ++co) om.row(co).array() += bias->value.data[co];
    }

    return make_result(std::move(out), {x, weight, bias}, [cols, cout, cin, k, kk, h, w, batch, hw](Node& self) {
        const Var& xv = self.inputs[0];
        const Var& wv = self.inputs[1];
        const Var& bv = self.inputs[2];
        const Tensor& g = self.grad;
        CMapRM wmat(wv->value.data.data(), cout, kk);
        std::vector<float> dcols(k > 1 ? static_cast<std::size_t>(kk) * hw : 0);
        for (int n = 0; n < batch; ++n) {
            CMapRM gm(g.data.data() + static_cast<std::size_t>(n) * cout * hw, cout, static_cast<Eigen::Index>(hw));
            const float* colp = k > 1 ? cols->data() + static_cast<std::size_t>(n) * kk * hw
                                      : xv->value.data.data() + static_cast<std::size_t>(n) * cin * hw;
            if (wv->requires_grad) {
                MapRM dw(wv->grad_buffer().data.data(), cout, kk);
                dw.noalias() += gm * CMapRM(colp, kk, static_cast<Eigen::Index>(hw)).transpose();
            }
            if (bv->requires_grad) {
                auto& db = bv->grad_buffer().data;
                for (int co = 0; co < cout; ++co) db[co] += gm.row(co).sum();
            }
            if (xv->requires_grad) {
                float* dx = xv->grad_buffer().data.data() + static_cast<std::size_t>(n) * cin * hw;
                if (k > 1) {
                    MapRM dc(dcols.data(), kk, static_cast<Eigen::Index>(hw));
                    dc.noalias() = wmat.transpose() * gm;
                    col2im(dcols.data(), cin, h, w, k, dx);
                } else {
                    MapRM dxm(dx, cin, static_cast<Eigen::Index>(hw));
                    dxm.noalias() += wmat.transpose() * gm;
                }
            }
        }
    });
}

Var relu(const Var& x) {
    Tensor out = x->value;
    for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
    return make_result(std::move(out), {x}, [](Node& self) {
        const Var& xv = self.inputs[0];
        auto& dx = xv->grad_buffer().data;
        const auto& xd = xv->value.data;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xd[i] > 0.0f) dx[i] += self.grad.data[i];
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (float& v : out.data) v = 1.0f / (1.0f + std::exp(-v));
    return make_result(std::move(out), {x}, [](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer().data;
        const auto& y = self.value.data;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad.data[i] * y[i] * (1.0f - y[i]);
    });
}

Var add(const Var& a, const Var& b) {
    require(a->shape() == b->shape(), "add: shape mismatch " + a->shape().str() + " vs " + b->shape().str());
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            const Var& in = self.inputs[k];
            if (!in->requires_grad) continue;
            auto& d = in->grad_buffer().data;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad.data[i];
        }
    });
}

Var add_scalar(const Var& x, float s) {
    Tensor out = x->value;
    for (float& v : out.data) v += s;
    return make_result(std::move(out), {x}, [](Node& self) {
        auto& d = self.inputs[0]->grad_buffer().data;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad.data[i];
    });
}

Var scale_channels(const Var& x, const Var& s) {
    const Shape xs = x->shape();
    require(s->shape() == (Shape{xs.n, xs.c, 1, 1}), "scale_channels: gate shape mismatch");
    const std::size_t hw = xs.plane();
    Tensor out = x->value;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const float g = s->value.data[static_cast<std::size_t>(n) * xs.c + c];
            float* p = out.data.data() + (static_cast<std::size_t>(n) * xs.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] *= g;
        }
    return make_result(std::move(out), {x, s}, [xs, hw](Node& self) {
        const Var& xv = self.inputs[0];
        const Var& sv = self.inputs[1];
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                const std::size_t nc = static_cast<std::size_t>(n) * xs.c + c;
                const float* g = self.grad.data.data() + nc * hw;
                const float* xp = xv->value.data.data() + nc * hw;
                if (xv->requires_grad) {
                    float* dx = xv->grad_buffer().data.data() + nc * hw;
                    const float gate = sv->value.data[nc];
                    for (std::size_t i = 0; i < hw; ++i) dx[i] += g[i] * gate;
                }
                if (sv->requires_grad) {
                    float acc = 0.0f;
                    for (std::size_t i = 0; i < hw; ++i) acc += g[i] * xp[i];
                    sv->grad_buffer().data[nc] += acc;
                }
            }
    });
}

Var global_avg_pool(const Var& x) {
    const Shape xs = x->shape();
    const std::size_t hw = xs.plane();
    Tensor out(Shape{xs.n, xs.c, 1, 1});
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
        const float* p = x->value.data.data() + nc * hw;
        float acc = 0.0f;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        out.data[nc] = acc / static_cast<float>(hw);
    }
    return make_result(std::move(out), {x}, [xs, hw](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer().data;
        for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
            const float g = self.grad.data[nc] / static_cast<float>(hw);
            float* p = dx.data() + nc * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] += g;
        }
    });
}

Var pixel_shuffle(const Var& x, int r) {
    const Shape xs = x->shape();
    require(r >= 1 && xs.c % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
    const Shape os{xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
    Tensor out(os);
    // out[n, c, y*r+i, x*r+j] = in[n, c*r*r + i*r + j, y, x]
    auto src_index = [xs, os, r](int n, int c, int oy, int ox) {
        const int ci = c * r * r + (oy % r) * r + (ox % r);
        return ((static_cast<std::size_t>(n) * xs.c + ci) * xs.h + oy / r) * xs.w + ox / r;
    };
    for (int n = 0; n < os.n; ++n)
        for (int c = 0; c < os.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int xx = 0; xx < os.w; ++xx) out.at(n, c, y, xx) = x->value.data[src_index(n, c, y, xx)];
    return make_result(std::move(out), {x}, [os, src_index](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer().data;
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx) dx[src_index(n, c, y, xx)] += self.grad.at(n, c, y, xx);
    });
}

Var concat_channels(std::span<const Var> xs) {
    require(!xs.empty(), "concat_channels: no inputs");
    Shape os = xs[0]->shape();
    os.c = 0;
    for (const Var& v : xs) {
        const Shape s = v->shape();
        require(s.n == os.n && s.h == os.h && s.w == os.w, "concat_channels: spatial/batch mismatch");
        os.c += s.c;
    }
    Tensor out(os);
    const std::size_t hw = os.plane();
    for (int n = 0; n < os.n; ++n) {
        float* dst = out.data.data() + static_cast<std::size_t>(n) * os.c * hw;
        for (const Var& v : xs) {
            const std::size_t len = static_cast<std::size_t>(v->shape().c) * hw;
            const float* src = v->value.data.data() + static_cast<std::size_t>(n) * len;
            dst = std::copy(src, src + len, dst);
        }
    }
    std::vector<Var> inputs(xs.begin(), xs.end());
    return make_result(std::move(out), std::move(inputs), [os, hw](Node& self) {
        for (int n = 0; n < os.n; ++n) {
            const float* src = self.grad.data.data() + static_cast<std::size_t>(n) * os.c * hw;
            for (const Var& v : self.inputs) {
                const std::size_t len = static_cast<std::size_t>(v->shape().c) * hw;
                if (v->requires_grad) {
                    float* d = v->grad_buffer().data.data() + static_cast<std::size_t>(n) * len;
                    for (std::size_t i = 0; i < len; ++i) d[i] += src[i];
                }
                src += len;
            }
        }
    });
}

Var softmax_channels(const Var& x) {
    const Shape xs = x->shape();
    const std::size_t hw = xs.plane();
    Tensor out(xs);
    for (int n = 0; n < xs.n; ++n) {
        const float* in = x->value.data.data() + static_cast<std::size_t>(n) * xs.c * hw;
        float* o = out.data.data() + static_cast<std::size_t>(n) * xs.c * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            float m = in[p];
            for (int c = 1; c < xs.c; ++c) m = std::max(m, in[c * hw + p]);
            float sum = 0.0f;
            for (int c = 0; c < xs.c; ++c) {
                o[c * hw + p] = std::exp(in[c * hw + p] - m);
                sum += o[c * hw + p];
            }
            for (int c = 0; c < xs.c; ++c) o[c * hw + p] /= sum;
        }
    }
    return make_result(std::move(out), {x}, [xs, hw](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer().data;
        for (int n = 0; n < xs.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * xs.c * hw;
            const float* y = self.value.data.data() + base;
            const float* g = self.grad.data.data() + base;
            float* d = dx.data() + base;
            for (std::size_t p = 0; p < hw; ++p) {
                float dot = 0.0f;
                for (int c = 0; c < xs.c; ++c) dot += g[c * hw + p] * y[c * hw + p];
                for (int c = 0; c < xs.c; ++c) d[c * hw + p] += y[c * hw + p] * (g[c * hw + p] - dot);
            }
        }
    });
}

Var weighted_sum(std::span<const Var> preds, const Var& weights) {
    require(!preds.empty(), "weighted_sum: no predictions");
    const Shape ps = preds[0]->shape();
    const Shape wsh = weights->shape();
    require(wsh.c == static_cast<int>(preds.size()), "weighted_sum: " + std::to_string(preds.size()) +
                                                          " predictions but " + std::to_string(wsh.c) + " weight planes");
    require(wsh.n == ps.n && wsh.h == ps.h && wsh.w == ps.w, "weighted_sum: weight map size mismatch");
    for (const Var& p : preds) require(p->shape() == ps, "weighted_sum: prediction shape mismatch");
    const std::size_t hw = ps.plane();
    const int count = static_cast<int>(preds.size());
    Tensor out(ps);
    for (int n = 0; n < ps.n; ++n)
        for (int i = 0; i < count; ++i) {
            const float* wp = weights->value.data.data() + (static_cast<std::size_t>(n) * count + i) * hw;
            for (int c = 0; c < ps.c; ++c) {
                const std::size_t off = (static_cast<std::size_t>(n) * ps.c + c) * hw;
                const float* pp = preds[i]->value.data.data() + off;
                float* o = out.data.data() + off;
                for (std::size_t k = 0; k < hw; ++k) o[k] += pp[k] * wp[k];
            }
        }
    std::vector<Var> inputs(preds.begin(), preds.end());
    inputs.push_back(weights);
    return make_result(std::move(out), std::move(inputs), [ps, hw, count](Node& self) {
        const Var& wv = self.inputs.back();
        for (int n = 0; n < ps.n; ++n)
            for (int i = 0; i < count; ++i) {
                const Var& pv = self.inputs[i];
                const std::size_t woff = (static_cast<std::size_t>(n) * count + i) * hw;
                const float* wp = wv->value.data.data() + woff;
                for (int c = 0; c < ps.c; ++c) {
                    const std::size_t off = (static_cast<std::size_t>(n) * ps.c + c) * hw;
                    const float* g = self.grad.data.data() + off;
                    if (pv->requires_grad) {
                        float* d = pv->grad_buffer().data.data() + off;
                        for (std::size_t k = 0; k < hw; ++k) d[k] += g[k] * wp[k];
                    }
                    if (wv->requires_grad) {
                        float* dw = wv->grad_buffer().data.data() + woff;
                        const float* pp = pv->value.data.data() + off;
                        for (std::size_t k = 0; k < hw; ++k) dw[k] += g[k] * pp[k];
                    }
                }
            }
    });
}

}  // namespace treesr
