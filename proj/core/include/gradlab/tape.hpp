#pragma once

#include <cstdint>
#include <vector>

#include "gradlab/error.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

/// Reverse-mode autodiff on an eagerly evaluated tape.
///
/// Every operation's adjoint is expressed through tape operations again, so a
/// backward pass extends the graph and its results can be differentiated a
/// second time. Inversion attacks rely on this: they need the derivative of a
/// parameter-gradient distance with respect to the dummy input.
template <typename T>
class Tape {
    enum class Op {
        Leaf,
        Const,
        Add,
        Sub,
        Mul,
        Div,
        Neg,
        Exp,
        Log,
        Sqrt,
        Scale,
        AddScalar,
        Relu,
        MatmulNT,
        MatmulNN,
        MatmulTN,
        Conv,
        ConvInputGrad,
        ConvWeightGrad,
        BiasRows,
        BiasChan,
        SumRows,
        BroadcastRows,
        SumChan,
        BroadcastChan,
        SumCols,
        BroadcastCols,
        SumAll,
        BroadcastAll,
        Reshape,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        Tensor<T> value;
        double c = 0.0;   // Scale / AddScalar constant
        int stride = 1;
        int pad = 0;
        bool requires_grad = false;
    };

public:
    int leaf(Tensor<T> v) { return push(Op::Leaf, -1, -1, std::move(v), true); }
    int constant(Tensor<T> v) { return push(Op::Const, -1, -1, std::move(v), false); }

    const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t size() const { return nodes_.size(); }
    void reserve(size_t n) { nodes_.reserve(n); }

    int add(int a, int b) {
        check_same(a, b, "add");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return push(Op::Add, a, b, std::move(out), rg(a) || rg(b));
    }

    int sub(int a, int b) {
        check_same(a, b, "sub");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return push(Op::Sub, a, b, std::move(out), rg(a) || rg(b));
    }

    int mul(int a, int b) {
        check_same(a, b, "mul");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return push(Op::Mul, a, b, std::move(out), rg(a) || rg(b));
    }

    int div(int a, int b) {
        check_same(a, b, "div");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
        return push(Op::Div, a, b, std::move(out), rg(a) || rg(b));
    }

    int neg(int a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = -v;
        return push(Op::Neg, a, -1, std::move(out), rg(a));
    }

    int exp(int a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = std::exp(v);
        return push(Op::Exp, a, -1, std::move(out), rg(a));
    }

    int log(int a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = std::log(v);
        return push(Op::Log, a, -1, std::move(out), rg(a));
    }

    int sqrt(int a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = std::sqrt(v);
        return push(Op::Sqrt, a, -1, std::move(out), rg(a));
    }

    int scale(int a, double c) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = static_cast<T>(v * c);
        int id = push(Op::Scale, a, -1, std::move(out), rg(a));
        nodes_.back().c = c;
        return id;
    }

    int add_scalar(int a, double c) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = static_cast<T>(v + c);
        int id = push(Op::AddScalar, a, -1, std::move(out), rg(a));
        nodes_.back().c = c;
        return id;
    }

    int relu(int a) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
        return push(Op::Relu, a, -1, std::move(out), rg(a));
    }

    /// y[n,o] = sum_i a[n,i] * b[o,i]
    int matmul_nt(int a, int b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1), "matmul_nt shapes");
        int64_t N = va.dim(0), I = va.dim(1), O = vb.dim(0);
        Tensor<T> out({N, O});
        for (int64_t n = 0; n < N; ++n) {
            const T* ap = &va[n * I];
            T* yp = &out[n * O];
            for (int64_t o = 0; o < O; ++o) {
                const T* bp = &vb[o * I];
                T s = 0;
                for (int64_t i = 0; i < I; ++i) s += ap[i] * bp[i];
                yp[o] = s;
            }
        }
        return push(Op::MatmulNT, a, b, std::move(out), rg(a) || rg(b));
    }

    /// y[n,i] = sum_o a[n,o] * b[o,i]
    int matmul_nn(int a, int b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), "matmul_nn shapes");
        int64_t N = va.dim(0), O = va.dim(1), I = vb.dim(1);
        Tensor<T> out({N, I});
        for (int64_t n = 0; n < N; ++n) {
            T* yp = &out[n * I];
            for (int64_t o = 0; o < O; ++o) {
                T av = va[n * O + o];
                const T* bp = &vb[o * I];
                for (int64_t i = 0; i < I; ++i) yp[i] += av * bp[i];
            }
        }
        return push(Op::MatmulNN, a, b, std::move(out), rg(a) || rg(b));
    }

    /// y[o,i] = sum_n a[n,o] * b[n,i]
    int matmul_tn(int a, int b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        require(va.rank() == 2 && vb.rank() == 2 && va.dim(0) == vb.dim(0), "matmul_tn shapes");
        int64_t N = va.dim(0), O = va.dim(1), I = vb.dim(1);
        Tensor<T> out({O, I});
        for (int64_t n = 0; n < N; ++n) {
            const T* bp = &vb[n * I];
            for (int64_t o = 0; o < O; ++o) {
                T av = va[n * O + o];
                T* yp = &out[o * I];
                for (int64_t i = 0; i < I; ++i) yp[i] += av * bp[i];
            }
        }
        return push(Op::MatmulTN, a, b, std::move(out), rg(a) || rg(b));
    }

    /// x: [N,H,W,IC], w: [KH,KW,IC,OC] -> [N,OH,OW,OC]
    int conv2d(int x, int w, int stride, int pad) {
        const Tensor<T>& vx = val(x);
        const Tensor<T>& vw = val(w);
        require(vx.rank() == 4 && vw.rank() == 4 && vx.dim(3) == vw.dim(2), "conv2d shapes");
        int64_t N = vx.dim(0), H = vx.dim(1), W = vx.dim(2), IC = vx.dim(3);
        int64_t KH = vw.dim(0), KW = vw.dim(1), OC = vw.dim(3);
        int64_t OH = out_dim(H, KH, stride, pad), OW = out_dim(W, KW, stride, pad);
        Tensor<T> out({N, OH, OW, OC});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    T* yp = &out[((n * OH + oy) * OW + ox) * OC];
                    for (int64_t ky = 0; ky < KH; ++ky) {
                        int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            const T* xp = &vx[((n * H + iy) * W + ix) * IC];
                            const T* wp = &vw[(ky * KW + kx) * IC * OC];
                            for (int64_t ic = 0; ic < IC; ++ic) {
                                T a = xp[ic];
                                const T* wr = wp + ic * OC;
                                for (int64_t oc = 0; oc < OC; ++oc) yp[oc] += a * wr[oc];
                            }
                        }
                    }
                }
        int id = push(Op::Conv, x, w, std::move(out), rg(x) || rg(w));
        nodes_.back().stride = stride;
        nodes_.back().pad = pad;
        return id;
    }

    /// Adjoint of conv2d w.r.t. its input. dy: [N,OH,OW,OC], w: [KH,KW,IC,OC].
    int conv2d_input_grad(int dy, int w, int64_t H, int64_t W, int stride, int pad) {
        const Tensor<T>& vg = val(dy);
        const Tensor<T>& vw = val(w);
        require(vg.rank() == 4 && vw.rank() == 4 && vg.dim(3) == vw.dim(3), "conv2d_input_grad shapes");
        int64_t N = vg.dim(0), OH = vg.dim(1), OW = vg.dim(2), OC = vg.dim(3);
        int64_t KH = vw.dim(0), KW = vw.dim(1), IC = vw.dim(2);
        require(out_dim(H, KH, stride, pad) == OH && out_dim(W, KW, stride, pad) == OW,
                "conv2d_input_grad geometry");
        Tensor<T> out({N, H, W, IC});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    const T* gp = &vg[((n * OH + oy) * OW + ox) * OC];
                    for (int64_t ky = 0; ky < KH; ++ky) {
                        int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            T* xp = &out[((n * H + iy) * W + ix) * IC];
                            const T* wp = &vw[(ky * KW + kx) * IC * OC];
                            for (int64_t ic = 0; ic < IC; ++ic) {
                                const T* wr = wp + ic * OC;
                                T s = 0;
                                for (int64_t oc = 0; oc < OC; ++oc) s += gp[oc] * wr[oc];
                                xp[ic] += s;
                            }
                        }
                    }
                }
        int id = push(Op::ConvInputGrad, dy, w, std::move(out), rg(dy) || rg(w));
        nodes_.back().stride = stride;
        nodes_.back().pad = pad;
        return id;
    }

    /// Adjoint of conv2d w.r.t. its weights. x: [N,H,W,IC], dy: [N,OH,OW,OC].
    int conv2d_weight_grad(int x, int dy, int64_t KH, int64_t KW, int stride, int pad) {
        const Tensor<T>& vx = val(x);
        const Tensor<T>& vg = val(dy);
        require(vx.rank() == 4 && vg.rank() == 4 && vx.dim(0) == vg.dim(0), "conv2d_weight_grad shapes");
        int64_t N = vx.dim(0), H = vx.dim(1), W = vx.dim(2), IC = vx.dim(3);
        int64_t OH = vg.dim(1), OW = vg.dim(2), OC = vg.dim(3);
        require(out_dim(H, KH, stride, pad) == OH && out_dim(W, KW, stride, pad) == OW,
                "conv2d_weight_grad geometry");
        Tensor<T> out({KH, KW, IC, OC});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    const T* gp = &vg[((n * OH + oy) * OW + ox) * OC];
                    for (int64_t ky = 0; ky < KH; ++ky) {
                        int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            const T* xp = &vx[((n * H + iy) * W + ix) * IC];
                            T* wp = &out[(ky * KW + kx) * IC * OC];
                            for (int64_t ic = 0; ic < IC; ++ic) {
                                T a = xp[ic];
                                T* wr = wp + ic * OC;
                                for (int64_t oc = 0; oc < OC; ++oc) wr[oc] += a * gp[oc];
                            }
                        }
                    }
                }
        int id = push(Op::ConvWeightGrad, x, dy, std::move(out), rg(x) || rg(dy));
        nodes_.back().stride = stride;
        nodes_.back().pad = pad;
        return id;
    }

    /// [N,F] + [F]
    int bias_rows(int a, int b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        require(va.rank() == 2 && vb.rank() == 1 && va.dim(1) == vb.dim(0), "bias_rows shapes");
        Tensor<T> out = va;
        int64_t N = va.dim(0), F = va.dim(1);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t f = 0; f < F; ++f) out[n * F + f] += vb[f];
        return push(Op::BiasRows, a, b, std::move(out), rg(a) || rg(b));
    }

    /// [N,H,W,C] + [C]
    int bias_chan(int a, int b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        require(va.rank() == 4 && vb.rank() == 1 && va.dim(3) == vb.dim(0), "bias_chan shapes");
        Tensor<T> out = va;
        int64_t M = out.size() / vb.dim(0), C = vb.dim(0);
        for (int64_t m = 0; m < M; ++m)
            for (int64_t c = 0; c < C; ++c) out[m * C + c] += vb[c];
        return push(Op::BiasChan, a, b, std::move(out), rg(a) || rg(b));
    }

    int sum_rows(int a) {
        const Tensor<T>& va = val(a);
        require(va.rank() == 2, "sum_rows rank");
        int64_t N = va.dim(0), F = va.dim(1);
        Tensor<T> out({F});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t f = 0; f < F; ++f) out[f] += va[n * F + f];
        return push(Op::SumRows, a, -1, std::move(out), rg(a));
    }

    int broadcast_rows(int a, int64_t n_rows) {
        const Tensor<T>& va = val(a);
        require(va.rank() == 1, "broadcast_rows rank");
        int64_t F = va.dim(0);
        Tensor<T> out({n_rows, F});
        for (int64_t n = 0; n < n_rows; ++n)
            for (int64_t f = 0; f < F; ++f) out[n * F + f] = va[f];
        return push(Op::BroadcastRows, a, -1, std::move(out), rg(a));
    }

    int sum_chan(int a) {
        const Tensor<T>& va = val(a);
        require(va.rank() == 4, "sum_chan rank");
        int64_t C = va.dim(3), M = va.size() / C;
        Tensor<T> out({C});
        for (int64_t m = 0; m < M; ++m)
            for (int64_t c = 0; c < C; ++c) out[c] += va[m * C + c];
        return push(Op::SumChan, a, -1, std::move(out), rg(a));
    }

    int broadcast_chan(int a, int64_t N, int64_t H, int64_t W) {
        const Tensor<T>& va = val(a);
        require(va.rank() == 1, "broadcast_chan rank");
        int64_t C = va.dim(0);
        Tensor<T> out({N, H, W, C});
        int64_t M = N * H * W;
        for (int64_t m = 0; m < M; ++m)
            for (int64_t c = 0; c < C; ++c) out[m * C + c] = va[c];
        return push(Op::BroadcastChan, a, -1, std::move(out), rg(a));
    }

    int sum_cols(int a) {
        const Tensor<T>& va = val(a);
        require(va.rank() == 2, "sum_cols rank");
        int64_t N = va.dim(0), C = va.dim(1);
        Tensor<T> out({N});
        for (int64_t n = 0; n < N; ++n) {
            T s = 0;
            for (int64_t c = 0; c < C; ++c) s += va[n * C + c];
            out[n] = s;
        }
        return push(Op::SumCols, a, -1, std::move(out), rg(a));
    }

    int broadcast_cols(int a, int64_t n_cols) {
        const Tensor<T>& va = val(a);
        require(va.rank() == 1, "broadcast_cols rank");
        int64_t N = va.dim(0);
        Tensor<T> out({N, n_cols});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < n_cols; ++c) out[n * n_cols + c] = va[n];
        return push(Op::BroadcastCols, a, -1, std::move(out), rg(a));
    }

    int sum_all(int a) {
        const Tensor<T>& va = val(a);
        T s = 0;
        for (T v : va.data) s += v;
        return push(Op::SumAll, a, -1, Tensor<T>::scalar(s), rg(a));
    }

    int broadcast_all(int a, std::vector<int64_t> shape) {
        const Tensor<T>& va = val(a);
        require(va.size() == 1, "broadcast_all takes a scalar");
        Tensor<T> out = Tensor<T>::full(std::move(shape), va[0]);
        return push(Op::BroadcastAll, a, -1, std::move(out), rg(a));
    }

    int reshape(int a, std::vector<int64_t> shape) {
        Tensor<T> out = val(a).reshaped(std::move(shape));
        return push(Op::Reshape, a, -1, std::move(out), rg(a));
    }

    /// Gradients of a scalar node w.r.t. the given nodes. The backward pass is
    /// built from tape operations, so the returned ids can be differentiated
    /// again. An id of -1 means the gradient is identically zero.
    std::vector<int> gradients(int loss, const std::vector<int>& wrt) {
        require(val(loss).size() == 1, "gradients needs a scalar loss");
        size_t n = static_cast<size_t>(loss) + 1;
        std::vector<int> grad(n, -1);
        grad[static_cast<size_t>(loss)] = constant(Tensor<T>::scalar(T(1)));
        for (int i = loss; i >= 0; --i) {
            int g = grad[static_cast<size_t>(i)];
            if (g < 0) continue;
            const Node& node = nodes_[static_cast<size_t>(i)];
            if (!node.requires_grad) continue;
            backprop_one(i, g, grad);
        }
        std::vector<int> out;
        out.reserve(wrt.size());
        for (int w : wrt) out.push_back(static_cast<size_t>(w) < n ? grad[static_cast<size_t>(w)] : -1);
        return out;
    }

    /// Gradient value helper: returns a zero tensor shaped like the node when
    /// the gradient id is -1.
    Tensor<T> grad_value(int wrt, int grad_id) const {
        if (grad_id >= 0) return val(grad_id);
        return Tensor<T>(val(wrt).shape);
    }

private:
    std::vector<Node> nodes_;

    static int64_t out_dim(int64_t in, int64_t k, int stride, int pad) {
        int64_t d = in + 2 * pad - k;
        if (d < 0) throw InvalidSpec("kernel larger than (padded) feature map");
        return d / stride + 1;
    }

    bool rg(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    void check_same(int a, int b, const char* what) const {
        if (!val(a).same_shape(val(b))) throw InvalidInput(std::string("shape mismatch in ") + what);
    }

    static void require(bool ok, const char* what) {
        if (!ok) throw InvalidInput(std::string("invalid operand: ") + what);
    }

    int push(Op op, int a, int b, Tensor<T> v, bool requires_grad) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void accumulate(std::vector<int>& grad, int target, int g) {
        if (target < 0 || !rg(target)) return;
        int& slot = grad[static_cast<size_t>(target)];
        slot = slot < 0 ? g : add(slot, g);
    }

    void backprop_one(int i, int g, std::vector<int>& grad) {
        const Node n = nodes_[static_cast<size_t>(i)];  // copy: nodes_ may reallocate
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::Add:
                accumulate(grad, n.a, g);
                accumulate(grad, n.b, g);
                break;
            case Op::Sub:
                accumulate(grad, n.a, g);
                if (n.b >= 0 && rg(n.b)) accumulate(grad, n.b, neg(g));
                break;
            case Op::Mul:
                if (rg(n.a)) accumulate(grad, n.a, mul(g, n.b));
                if (rg(n.b)) accumulate(grad, n.b, mul(g, n.a));
                break;
            case Op::Div:
                if (rg(n.a)) accumulate(grad, n.a, div(g, n.b));
                if (rg(n.b)) accumulate(grad, n.b, neg(mul(div(g, n.b), i)));
                break;
            case Op::Neg:
                accumulate(grad, n.a, neg(g));
                break;
            case Op::Exp:
                accumulate(grad, n.a, mul(g, i));
                break;
            case Op::Log:
                accumulate(grad, n.a, div(g, n.a));
                break;
            case Op::Sqrt:
                accumulate(grad, n.a, div(scale(g, 0.5), i));
                break;
            case Op::Scale:
                accumulate(grad, n.a, scale(g, n.c));
                break;
            case Op::AddScalar:
                accumulate(grad, n.a, g);
                break;
            case Op::Relu: {
                Tensor<T> mask = val(n.a);
                for (auto& v : mask.data) v = v > T(0) ? T(1) : T(0);
                accumulate(grad, n.a, mul(g, constant(std::move(mask))));
                break;
            }
            case Op::MatmulNT:
                if (rg(n.a)) accumulate(grad, n.a, matmul_nn(g, n.b));
                if (rg(n.b)) accumulate(grad, n.b, matmul_tn(g, n.a));
                break;
            case Op::MatmulNN:
                if (rg(n.a)) accumulate(grad, n.a, matmul_nt(g, n.b));
                if (rg(n.b)) accumulate(grad, n.b, matmul_tn(n.a, g));
                break;
            case Op::MatmulTN:
                if (rg(n.a)) accumulate(grad, n.a, matmul_nt(n.b, g));
                if (rg(n.b)) accumulate(grad, n.b, matmul_nn(n.a, g));
                break;
            case Op::Conv:
                if (rg(n.a))
                    accumulate(grad, n.a,
                               conv2d_input_grad(g, n.b, val(n.a).dim(1), val(n.a).dim(2), n.stride, n.pad));
                if (rg(n.b))
                    accumulate(grad, n.b,
                               conv2d_weight_grad(n.a, g, val(n.b).dim(0), val(n.b).dim(1), n.stride, n.pad));
                break;
            case Op::ConvInputGrad:
                // z = adjoint_x(a, w): linear in both; adjoint of the adjoint is conv2d.
                if (rg(n.a)) accumulate(grad, n.a, conv2d(g, n.b, n.stride, n.pad));
                if (rg(n.b))
                    accumulate(grad, n.b,
                               conv2d_weight_grad(g, n.a, val(n.b).dim(0), val(n.b).dim(1), n.stride, n.pad));
                break;
            case Op::ConvWeightGrad:
                if (rg(n.a))
                    accumulate(grad, n.a,
                               conv2d_input_grad(n.b, g, val(n.a).dim(1), val(n.a).dim(2), n.stride, n.pad));
                if (rg(n.b)) accumulate(grad, n.b, conv2d(n.a, g, n.stride, n.pad));
                break;
            case Op::BiasRows:
                accumulate(grad, n.a, g);
                if (n.b >= 0 && rg(n.b)) accumulate(grad, n.b, sum_rows(g));
                break;
            case Op::BiasChan:
                accumulate(grad, n.a, g);
                if (n.b >= 0 && rg(n.b)) accumulate(grad, n.b, sum_chan(g));
                break;
            case Op::SumRows:
                accumulate(grad, n.a, broadcast_rows(g, val(n.a).dim(0)));
                break;
            case Op::BroadcastRows:
                accumulate(grad, n.a, sum_rows(g));
                break;
            case Op::SumChan:
                accumulate(grad, n.a,
                           broadcast_chan(g, val(n.a).dim(0), val(n.a).dim(1), val(n.a).dim(2)));
                break;
            case Op::BroadcastChan:
                accumulate(grad, n.a, sum_chan(g));
                break;
            case Op::SumCols:
                accumulate(grad, n.a, broadcast_cols(g, val(n.a).dim(1)));
                break;
            case Op::BroadcastCols:
                accumulate(grad, n.a, sum_cols(g));
                break;
            case Op::SumAll:
                accumulate(grad, n.a, broadcast_all(g, val(n.a).shape));
                break;
            case Op::BroadcastAll:
                accumulate(grad, n.a, sum_all(g));
                break;
            case Op::Reshape:
                accumulate(grad, n.a, reshape(g, val(n.a).shape));
                break;
        }
    }
};

}  // namespace gradlab
