#pragma once

// Minimal reverse-mode autodiff over dense tensors: the 3D layers, losses
// and Adam needed by the adversarial training loop. Templated on the scalar
// type; training runs in float, gradient checks in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "enmc/errors.hpp"
#include "enmc/volgrid.hpp"

namespace enmc::gn {

/// Runtime toggle for post-op finite checks (slow; enabled by tests).
inline bool& finite_checks() {
    static bool on = false;
    return on;
}

template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad; // allocated iff requires_grad
    bool requires_grad = false;

    std::size_t size() const { return data.size(); }

    void ensure_grad() {
        requires_grad = true;
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        std::fill(grad.begin(), grad.end(), T(0));
    }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive tensor extent");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

template <class T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    std::size_t n = shape_numel<T>(shape);
    t->shape = std::move(shape);
    t->data.assign(n, T(0));
    if (requires_grad) t->ensure_grad();
    return t;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!finite_checks()) return;
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw DomainError(std::string("non-finite value produced by ") + op);
}

/// Tape of executed ops; closures run in reverse execution order.
template <class T>
class Graph {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    void backward(const TensorPtr<T>& loss) {
        if (consumed_)
            throw StateError("backward called twice on the same graph");
        if (loss->size() != 1)
            throw ShapeError("backward expects a scalar loss tensor");
        if (!loss->requires_grad)
            throw StateError("loss does not require grad; nothing to differentiate");
        consumed_ = true;
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

namespace detail {

template <class T>
void prepare_output(Graph<T>* g, const TensorPtr<T>& out, bool any_input_grad) {
    if (g && any_input_grad) out->ensure_grad();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> relu(Graph<T>* g, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i)
        out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out]() {
            for (std::size_t i = 0; i < x->size(); ++i)
                if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
        });
    }
    check_finite(*out, "relu");
    return out;
}

template <class T>
TensorPtr<T> sigmoid(Graph<T>* g, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i)
        out->data[i] = T(1) / (T(1) + std::exp(-x->data[i]));
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out]() {
            for (std::size_t i = 0; i < x->size(); ++i) {
                T s = out->data[i];
                x->grad[i] += out->grad[i] * s * (T(1) - s);
            }
        });
    }
    check_finite(*out, "sigmoid");
    return out;
}

template <class T>
TensorPtr<T> add(Graph<T>* g, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require(a->shape == b->shape, "add: shape mismatch");
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    bool ag = a->requires_grad, bg = b->requires_grad;
    detail::prepare_output(g, out, ag || bg);
    if (g && (ag || bg)) {
        g->record([a, b, out, ag, bg]() {
            for (std::size_t i = 0; i < out->size(); ++i) {
                if (ag) a->grad[i] += out->grad[i];
                if (bg) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> scale(Graph<T>* g, const TensorPtr<T>& x, double k) {
    auto out = make_tensor<T>(x->shape);
    const T kk = static_cast<T>(k);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = kk * x->data[i];
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out, kk]() {
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += kk * out->grad[i];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> sum(Graph<T>* g, const TensorPtr<T>& x) {
    auto out = make_tensor<T>({1});
    T acc = T(0);
    for (T v : x->data) acc += v;
    out->data[0] = acc;
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out]() {
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv3d: input [C_in,D,H,W], weight [C_out,C_in,k,k,k], bias [C_out]
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> conv3d(Graph<T>* g, const TensorPtr<T>& input, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias, int stride = 1, int pad = 0) {
    detail::require(input->shape.size() == 4, "conv3d: input must be rank 4 [C,D,H,W]");
    detail::require(weight->shape.size() == 5, "conv3d: weight must be rank 5");
    detail::require(bias->shape.size() == 1, "conv3d: bias must be rank 1");
    if (stride < 1) throw ShapeError("conv3d: stride must be >= 1");
    const int ci_n = input->shape[0], D = input->shape[1], H = input->shape[2], W = input->shape[3];
    const int co_n = weight->shape[0], k = weight->shape[2];
    detail::require(weight->shape[1] == ci_n, "conv3d: channel axis mismatch (weight C_in)");
    detail::require(weight->shape[3] == k && weight->shape[4] == k, "conv3d: kernel must be cubic");
    detail::require(bias->shape[0] == co_n, "conv3d: bias length mismatch (C_out axis)");
    const int Do = (D + 2 * pad - k) / stride + 1;
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    detail::require(Do >= 1 && Ho >= 1 && Wo >= 1, "conv3d: kernel does not fit padded input");

    auto out = make_tensor<T>({co_n, Do, Ho, Wo});
    const T* in = input->data.data();
    const T* w = weight->data.data();
    T* o = out->data.data();
    const std::size_t in_c = static_cast<std::size_t>(D) * H * W;
    const std::size_t out_c = static_cast<std::size_t>(Do) * Ho * Wo;

    if (stride == 1) {
        // streaming saxpy sweeps per (co,ci,kz,ky); the three kx taps fused
        for (int co = 0; co < co_n; ++co) {
            T b = bias->data[co];
            T* oc = o + static_cast<std::size_t>(co) * out_c;
            for (std::size_t i = 0; i < out_c; ++i) oc[i] = b;
            for (int ci = 0; ci < ci_n; ++ci) {
                const T* icn = in + static_cast<std::size_t>(ci) * in_c;
                for (int kz = 0; kz < k; ++kz)
                    for (int ky = 0; ky < k; ++ky) {
                        const T* wrow =
                            w + ((((static_cast<std::size_t>(co) * ci_n + ci) * k + kz) * k + ky) * k);
                        const int z0 = std::max(0, pad - kz), z1 = std::min(Do, D + pad - kz);
                        const int y0 = std::max(0, pad - ky), y1 = std::min(Ho, H + pad - ky);
                        for (int zo = z0; zo < z1; ++zo)
                            for (int yo = y0; yo < y1; ++yo) {
                                T* orow = oc + (static_cast<std::size_t>(zo) * Ho + yo) * Wo;
                                const T* irow = icn +
                                    (static_cast<std::size_t>(zo - pad + kz) * H + (yo - pad + ky)) * W;
                                if (k == 3 && pad == 1 && Wo >= 2) {
                                    const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                                    orow[0] += w1 * irow[0] + w2 * irow[1];
#pragma omp simd
                                    for (int xo = 1; xo < Wo - 1; ++xo)
                                        orow[xo] += w0 * irow[xo - 1] + w1 * irow[xo] + w2 * irow[xo + 1];
                                    orow[Wo - 1] += w0 * irow[Wo - 2] + w1 * irow[Wo - 1];
                                } else {
                                    for (int kx = 0; kx < k; ++kx) {
                                        const T wv = wrow[kx];
                                        const int x0 = std::max(0, pad - kx);
                                        const int x1 = std::min(Wo, W + pad - kx);
                                        const T* ir = irow + (x0 - pad + kx);
#pragma omp simd
                                        for (int xo = x0; xo < x1; ++xo)
                                            orow[xo] += wv * ir[xo - x0];
                                    }
                                }
                            }
                    }
            }
        }
    } else {
        for (int co = 0; co < co_n; ++co) {
            T b = bias->data[co];
            T* oc = o + co * out_c;
            for (std::size_t i = 0; i < out_c; ++i) oc[i] = b;
        }
        for (int co = 0; co < co_n; ++co)
            for (int zo = 0; zo < Do; ++zo)
                for (int yo = 0; yo < Ho; ++yo)
                    for (int xo = 0; xo < Wo; ++xo) {
                        T acc = T(0);
                        for (int ci = 0; ci < ci_n; ++ci)
                            for (int kz = 0; kz < k; ++kz)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        int zi = zo * stride - pad + kz;
                                        int yi = yo * stride - pad + ky;
                                        int xi = xo * stride - pad + kx;
                                        if (zi < 0 || yi < 0 || xi < 0 || zi >= D || yi >= H || xi >= W)
                                            continue;
                                        acc += w[(((static_cast<std::size_t>(co) * ci_n + ci) * k + kz) * k + ky) * k + kx] *
                                               in[(static_cast<std::size_t>(ci) * D + zi) * H * W + static_cast<std::size_t>(yi) * W + xi];
                                    }
                        o[(static_cast<std::size_t>(co) * Do + zo) * Ho * Wo + static_cast<std::size_t>(yo) * Wo + xo] += acc;
                    }
    }

    bool ig = input->requires_grad, wg = weight->requires_grad, bg = bias->requires_grad;
    detail::prepare_output(g, out, ig || wg || bg);
    if (g && (ig || wg || bg)) {
        g->record([input, weight, bias, out, stride, pad, ig, wg, bg]() {
            const int ci_n = input->shape[0], D = input->shape[1], H = input->shape[2], W = input->shape[3];
            const int co_n = weight->shape[0], k = weight->shape[2];
            const int Do = out->shape[1], Ho = out->shape[2], Wo = out->shape[3];
            const std::size_t in_c = static_cast<std::size_t>(D) * H * W;
            const std::size_t out_c = static_cast<std::size_t>(Do) * Ho * Wo;
            const T* go = out->grad.data();
            const T* in = input->data.data();
            const T* w = weight->data.data();

            if (bg) {
                for (int co = 0; co < co_n; ++co) {
                    const T* gc = go + static_cast<std::size_t>(co) * out_c;
                    T acc = T(0);
#pragma omp simd reduction(+ : acc)
                    for (std::size_t i = 0; i < out_c; ++i) acc += gc[i];
                    bias->grad[co] += acc;
                }
            }
            if (stride == 1) {
                if (ig) {
                    T* gi = input->grad.data();
                    for (int co = 0; co < co_n; ++co) {
                        const T* gc = go + static_cast<std::size_t>(co) * out_c;
                        for (int ci = 0; ci < ci_n; ++ci) {
                            T* gic = gi + static_cast<std::size_t>(ci) * in_c;
                            for (int kz = 0; kz < k; ++kz)
                                for (int ky = 0; ky < k; ++ky) {
                                    const T* wrow =
                                        w + ((((static_cast<std::size_t>(co) * ci_n + ci) * k + kz) * k + ky) * k);
                                    const int z0 = std::max(0, pad - kz), z1 = std::min(Do, D + pad - kz);
                                    const int y0 = std::max(0, pad - ky), y1 = std::min(Ho, H + pad - ky);
                                    for (int zo = z0; zo < z1; ++zo)
                                        for (int yo = y0; yo < y1; ++yo) {
                                            const T* grow =
                                                gc + (static_cast<std::size_t>(zo) * Ho + yo) * Wo;
                                            T* girow = gic +
                                                (static_cast<std::size_t>(zo - pad + kz) * H + (yo - pad + ky)) * W;
                                            if (k == 3 && pad == 1 && W >= 2) {
                                                const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                                                girow[0] += w1 * grow[0] + w0 * grow[1];
#pragma omp simd
                                                for (int xi = 1; xi < W - 1; ++xi)
                                                    girow[xi] += w2 * grow[xi - 1] + w1 * grow[xi] + w0 * grow[xi + 1];
                                                girow[W - 1] += w2 * grow[W - 2] + w1 * grow[W - 1];
                                            } else {
                                                for (int kx = 0; kx < k; ++kx) {
                                                    const T wv = wrow[kx];
                                                    const int x0 = std::max(0, pad - kx);
                                                    const int x1 = std::min(Wo, W + pad - kx);
                                                    T* gir = girow + (x0 - pad + kx);
#pragma omp simd
                                                    for (int xo = x0; xo < x1; ++xo)
                                                        gir[xo - x0] += wv * grow[xo];
                                                }
                                            }
                                        }
                                }
                        }
                    }
                }
                if (wg) {
                    T* gw = weight->grad.data();
                    for (int co = 0; co < co_n; ++co) {
                        const T* gc = go + static_cast<std::size_t>(co) * out_c;
                        for (int ci = 0; ci < ci_n; ++ci) {
                            const T* icn = in + static_cast<std::size_t>(ci) * in_c;
                            for (int kz = 0; kz < k; ++kz)
                                for (int ky = 0; ky < k; ++ky) {
                                    T* gwrow = gw +
                                        ((((static_cast<std::size_t>(co) * ci_n + ci) * k + kz) * k + ky) * k);
                                    const int z0 = std::max(0, pad - kz), z1 = std::min(Do, D + pad - kz);
                                    const int y0 = std::max(0, pad - ky), y1 = std::min(Ho, H + pad - ky);
                                    T t0 = T(0), t1 = T(0), t2 = T(0);
                                    for (int zo = z0; zo < z1; ++zo)
                                        for (int yo = y0; yo < y1; ++yo) {
                                            const T* grow =
                                                gc + (static_cast<std::size_t>(zo) * Ho + yo) * Wo;
                                            const T* irow = icn +
                                                (static_cast<std::size_t>(zo - pad + kz) * H + (yo - pad + ky)) * W;
                                            if (k == 3 && pad == 1 && Wo >= 2) {
                                                T r0 = T(0), r1 = T(0), r2 = T(0);
#pragma omp simd reduction(+ : r0, r1, r2)
                                                for (int xo = 1; xo < Wo - 1; ++xo) {
                                                    const T gv = grow[xo];
                                                    r0 += gv * irow[xo - 1];
                                                    r1 += gv * irow[xo];
                                                    r2 += gv * irow[xo + 1];
                                                }
                                                r1 += grow[0] * irow[0] + grow[Wo - 1] * irow[Wo - 1];
                                                r2 += grow[0] * irow[1];
                                                r0 += grow[Wo - 1] * irow[Wo - 2];
                                                t0 += r0;
                                                t1 += r1;
                                                t2 += r2;
                                            } else {
                                                for (int kx = 0; kx < k; ++kx) {
                                                    const int x0 = std::max(0, pad - kx);
                                                    const int x1 = std::min(Wo, W + pad - kx);
                                                    const T* ir = irow + (x0 - pad + kx);
                                                    T racc = T(0);
#pragma omp simd reduction(+ : racc)
                                                    for (int xo = x0; xo < x1; ++xo)
                                                        racc += grow[xo] * ir[xo - x0];
                                                    gwrow[kx] += racc;
                                                }
                                            }
                                        }
                                    if (k == 3 && pad == 1 && Wo >= 2) {
                                        gwrow[0] += t0;
                                        gwrow[1] += t1;
                                        gwrow[2] += t2;
                                    }
                                }
                        }
                    }
                }
            } else {
                for (int co = 0; co < co_n; ++co)
                    for (int zo = 0; zo < Do; ++zo)
                        for (int yo = 0; yo < Ho; ++yo)
                            for (int xo = 0; xo < Wo; ++xo) {
                                T gv = go[(static_cast<std::size_t>(co) * Do + zo) * Ho * Wo + static_cast<std::size_t>(yo) * Wo + xo];
                                for (int ci = 0; ci < ci_n; ++ci)
                                    for (int kz = 0; kz < k; ++kz)
                                        for (int ky = 0; ky < k; ++ky)
                                            for (int kx = 0; kx < k; ++kx) {
                                                int zi = zo * stride - pad + kz;
                                                int yi = yo * stride - pad + ky;
                                                int xi = xo * stride - pad + kx;
                                                if (zi < 0 || yi < 0 || xi < 0 || zi >= D || yi >= H || xi >= W)
                                                    continue;
                                                std::size_t wi = (((static_cast<std::size_t>(co) * ci_n + ci) * k + kz) * k + ky) * k + kx;
                                                std::size_t ii = (static_cast<std::size_t>(ci) * D + zi) * H * W + static_cast<std::size_t>(yi) * W + xi;
                                                if (ig) input->grad[ii] += w[wi] * gv;
                                                if (wg) weight->grad[wi] += in[ii] * gv;
                                            }
                            }
            }
        });
    }
    check_finite(*out, "conv3d");
    return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> maxpool3d(Graph<T>* g, const TensorPtr<T>& x) {
    detail::require(x->shape.size() == 4, "maxpool3d: input must be rank 4");
    const int C = x->shape[0], D = x->shape[1], H = x->shape[2], W = x->shape[3];
    detail::require(D >= 2 && H >= 2 && W >= 2, "maxpool3d: spatial extents must be >= 2");
    const int Do = D / 2, Ho = H / 2, Wo = W / 2;
    auto out = make_tensor<T>({C, Do, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());
    for (int c = 0; c < C; ++c)
        for (int zo = 0; zo < Do; ++zo)
            for (int yo = 0; yo < Ho; ++yo)
                for (int xo = 0; xo < Wo; ++xo) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                std::size_t i = ((static_cast<std::size_t>(c) * D + (2 * zo + dz)) * H + (2 * yo + dy)) * W + (2 * xo + dx);
                                if (x->data[i] > best) { best = x->data[i]; best_i = i; }
                            }
                    std::size_t oi = ((static_cast<std::size_t>(c) * Do + zo) * Ho + yo) * Wo + xo;
                    out->data[oi] = best;
                    (*argmax)[oi] = best_i;
                }
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out, argmax]() {
            for (std::size_t oi = 0; oi < out->size(); ++oi)
                x->grad[(*argmax)[oi]] += out->grad[oi];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> trilinear_upsample(Graph<T>* g, const TensorPtr<T>& x) {
    detail::require(x->shape.size() == 4, "trilinear_upsample: input must be rank 4");
    const int C = x->shape[0], D = x->shape[1], H = x->shape[2], W = x->shape[3];
    const int Do = D * 2, Ho = H * 2, Wo = W * 2;
    auto out = make_tensor<T>({C, Do, Ho, Wo});

    // (o + 0.5)/2 - 0.5 source coordinate, clamped at the borders
    auto coords = [](int n_out, int n_in, std::vector<int>& i0, std::vector<int>& i1, std::vector<T>& f) {
        i0.resize(n_out);
        i1.resize(n_out);
        f.resize(n_out);
        for (int o = 0; o < n_out; ++o) {
            double s = (o + 0.5) / 2.0 - 0.5;
            double fl = std::floor(s);
            int a = static_cast<int>(fl);
            double frac = s - fl;
            int b = a + 1;
            a = std::clamp(a, 0, n_in - 1);
            b = std::clamp(b, 0, n_in - 1);
            i0[o] = a;
            i1[o] = b;
            f[o] = static_cast<T>(frac);
        }
    };
    std::vector<int> z0, z1, y0, y1, x0, x1;
    std::vector<T> fz, fy, fx;
    coords(Do, D, z0, z1, fz);
    coords(Ho, H, y0, y1, fy);
    coords(Wo, W, x0, x1, fx);

    for (int c = 0; c < C; ++c) {
        const T* ic = x->data.data() + static_cast<std::size_t>(c) * D * H * W;
        T* oc = out->data.data() + static_cast<std::size_t>(c) * Do * Ho * Wo;
        for (int zo = 0; zo < Do; ++zo)
            for (int yo = 0; yo < Ho; ++yo)
                for (int xo = 0; xo < Wo; ++xo) {
                    T wz1 = fz[zo], wz0 = T(1) - wz1;
                    T wy1 = fy[yo], wy0 = T(1) - wy1;
                    T wx1 = fx[xo], wx0 = T(1) - wx1;
                    auto at = [&](int z, int y, int xx) {
                        return ic[(static_cast<std::size_t>(z) * H + y) * W + xx];
                    };
                    T v = wz0 * (wy0 * (wx0 * at(z0[zo], y0[yo], x0[xo]) + wx1 * at(z0[zo], y0[yo], x1[xo])) +
                                 wy1 * (wx0 * at(z0[zo], y1[yo], x0[xo]) + wx1 * at(z0[zo], y1[yo], x1[xo]))) +
                          wz1 * (wy0 * (wx0 * at(z1[zo], y0[yo], x0[xo]) + wx1 * at(z1[zo], y0[yo], x1[xo])) +
                                 wy1 * (wx0 * at(z1[zo], y1[yo], x0[xo]) + wx1 * at(z1[zo], y1[yo], x1[xo])));
                    oc[(static_cast<std::size_t>(zo) * Ho + yo) * Wo + xo] = v;
                }
    }
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out, z0, z1, y0, y1, x0, x1, fz, fy, fx]() {
            const int C = x->shape[0], D = x->shape[1], H = x->shape[2], W = x->shape[3];
            const int Do = out->shape[1], Ho = out->shape[2], Wo = out->shape[3];
            for (int c = 0; c < C; ++c) {
                T* gic = x->grad.data() + static_cast<std::size_t>(c) * D * H * W;
                const T* goc = out->grad.data() + static_cast<std::size_t>(c) * Do * Ho * Wo;
                for (int zo = 0; zo < Do; ++zo)
                    for (int yo = 0; yo < Ho; ++yo)
                        for (int xo = 0; xo < Wo; ++xo) {
                            T gv = goc[(static_cast<std::size_t>(zo) * Ho + yo) * Wo + xo];
                            T wz1 = fz[zo], wz0 = T(1) - wz1;
                            T wy1 = fy[yo], wy0 = T(1) - wy1;
                            T wx1 = fx[xo], wx0 = T(1) - wx1;
                            auto acc = [&](int z, int y, int xx, T w) {
                                gic[(static_cast<std::size_t>(z) * H + y) * W + xx] += w * gv;
                            };
                            acc(z0[zo], y0[yo], x0[xo], wz0 * wy0 * wx0);
                            acc(z0[zo], y0[yo], x1[xo], wz0 * wy0 * wx1);
                            acc(z0[zo], y1[yo], x0[xo], wz0 * wy1 * wx0);
                            acc(z0[zo], y1[yo], x1[xo], wz0 * wy1 * wx1);
                            acc(z1[zo], y0[yo], x0[xo], wz1 * wy0 * wx0);
                            acc(z1[zo], y0[yo], x1[xo], wz1 * wy0 * wx1);
                            acc(z1[zo], y1[yo], x0[xo], wz1 * wy1 * wx0);
                            acc(z1[zo], y1[yo], x1[xo], wz1 * wy1 * wx1);
                        }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Channel ops
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> concat_channels(Graph<T>* g, const std::vector<TensorPtr<T>>& parts) {
    detail::require(!parts.empty(), "concat_channels: no inputs");
    const auto& s0 = parts[0]->shape;
    detail::require(s0.size() == 4, "concat_channels: inputs must be rank 4");
    int total_c = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        detail::require(p->shape.size() == 4 && p->shape[1] == s0[1] && p->shape[2] == s0[2] &&
                            p->shape[3] == s0[3],
                        "concat_channels: spatial dims mismatch");
        total_c += p->shape[0];
        any_grad = any_grad || p->requires_grad;
    }
    auto out = make_tensor<T>({total_c, s0[1], s0[2], s0[3]});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->size();
    }
    detail::prepare_output(g, out, any_grad);
    if (g && any_grad) {
        g->record([parts, out]() {
            std::size_t off = 0;
            for (const auto& p : parts) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
                off += p->size();
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> select_channel(Graph<T>* g, const TensorPtr<T>& x, int c) {
    detail::require(x->shape.size() == 4, "select_channel: input must be rank 4");
    detail::require(c >= 0 && c < x->shape[0], "select_channel: channel axis out of range");
    const std::size_t plane = static_cast<std::size_t>(x->shape[1]) * x->shape[2] * x->shape[3];
    auto out = make_tensor<T>({1, x->shape[1], x->shape[2], x->shape[3]});
    std::copy(x->data.begin() + c * plane, x->data.begin() + (c + 1) * plane, out->data.begin());
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out, c, plane]() {
            for (std::size_t i = 0; i < plane; ++i) x->grad[c * plane + i] += out->grad[i];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> softmax_channel(Graph<T>* g, const TensorPtr<T>& x) {
    detail::require(x->shape.size() == 4, "softmax_channel: input must be rank 4");
    const int C = x->shape[0];
    const std::size_t plane = static_cast<std::size_t>(x->shape[1]) * x->shape[2] * x->shape[3];
    auto out = make_tensor<T>(x->shape);
    for (std::size_t i = 0; i < plane; ++i) {
        T mx = x->data[i];
        for (int c = 1; c < C; ++c) mx = std::max(mx, x->data[c * plane + i]);
        T denom = T(0);
        for (int c = 0; c < C; ++c) {
            T e = std::exp(x->data[c * plane + i] - mx);
            out->data[c * plane + i] = e;
            denom += e;
        }
        for (int c = 0; c < C; ++c) out->data[c * plane + i] /= denom;
    }
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out, C, plane]() {
            for (std::size_t i = 0; i < plane; ++i) {
                T dot = T(0);
                for (int c = 0; c < C; ++c)
                    dot += out->data[c * plane + i] * out->grad[c * plane + i];
                for (int c = 0; c < C; ++c) {
                    T y = out->data[c * plane + i];
                    x->grad[c * plane + i] += y * (out->grad[c * plane + i] - dot);
                }
            }
        });
    }
    check_finite(*out, "softmax_channel");
    return out;
}

template <class T>
TensorPtr<T> global_avg_pool(Graph<T>* g, const TensorPtr<T>& x) {
    detail::require(x->shape.size() == 4, "global_avg_pool: input must be rank 4");
    const int C = x->shape[0];
    const std::size_t plane = static_cast<std::size_t>(x->shape[1]) * x->shape[2] * x->shape[3];
    auto out = make_tensor<T>({C});
    for (int c = 0; c < C; ++c) {
        T acc = T(0);
        const T* p = x->data.data() + c * plane;
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out->data[c] = acc / static_cast<T>(plane);
    }
    detail::prepare_output(g, out, x->requires_grad);
    if (g && x->requires_grad) {
        g->record([x, out, C, plane]() {
            for (int c = 0; c < C; ++c) {
                T gv = out->grad[c] / static_cast<T>(plane);
                T* p = x->grad.data() + c * plane;
                for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> dense(Graph<T>* g, const TensorPtr<T>& x, const TensorPtr<T>& weight,
                   const TensorPtr<T>& bias) {
    detail::require(x->shape.size() == 1, "dense: input must be rank 1");
    detail::require(weight->shape.size() == 2, "dense: weight must be rank 2");
    const int in_n = x->shape[0], out_n = weight->shape[0];
    detail::require(weight->shape[1] == in_n, "dense: input axis mismatch");
    detail::require(bias->shape.size() == 1 && bias->shape[0] == out_n, "dense: bias axis mismatch");
    auto out = make_tensor<T>({out_n});
    for (int o = 0; o < out_n; ++o) {
        T acc = bias->data[o];
        const T* wr = weight->data.data() + static_cast<std::size_t>(o) * in_n;
#pragma omp simd reduction(+ : acc)
        for (int i = 0; i < in_n; ++i) acc += wr[i] * x->data[i];
        out->data[o] = acc;
    }
    bool xg = x->requires_grad, wg = weight->requires_grad, bg = bias->requires_grad;
    detail::prepare_output(g, out, xg || wg || bg);
    if (g && (xg || wg || bg)) {
        g->record([x, weight, bias, out, in_n, out_n, xg, wg, bg]() {
            for (int o = 0; o < out_n; ++o) {
                T gv = out->grad[o];
                if (bg) bias->grad[o] += gv;
                const T* wr = weight->data.data() + static_cast<std::size_t>(o) * in_n;
                if (xg)
                    for (int i = 0; i < in_n; ++i) x->grad[i] += wr[i] * gv;
                if (wg) {
                    T* gw = weight->grad.data() + static_cast<std::size_t>(o) * in_n;
                    for (int i = 0; i < in_n; ++i) gw[i] += x->data[i] * gv;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kLogClip = 1e-7;

template <class T>
TensorPtr<T> bce_loss(Graph<T>* g, const TensorPtr<T>& pred, double target) {
    detail::require(pred->size() == 1, "bce_loss: prediction must be scalar");
    if (target != 0.0 && target != 1.0) throw DomainError("bce_loss: target must be 0 or 1");
    const T eps = static_cast<T>(kLogClip);
    T p = std::clamp(pred->data[0], eps, T(1) - eps);
    bool clipped = pred->data[0] < eps || pred->data[0] > T(1) - eps;
    auto out = make_tensor<T>({1});
    out->data[0] = -(static_cast<T>(target) * std::log(p) +
                     (T(1) - static_cast<T>(target)) * std::log(T(1) - p));
    detail::prepare_output(g, out, pred->requires_grad);
    if (g && pred->requires_grad) {
        g->record([pred, out, p, target, clipped]() {
            if (clipped) return;
            T t = static_cast<T>(target);
            pred->grad[0] += out->grad[0] * (-(t / p) + (T(1) - t) / (T(1) - p));
        });
    }
    return out;
}

/// Mean over voxels of -log p_true. seg is [num_classes, D, H, W] softmax output.
template <class T>
TensorPtr<T> mce_loss(Graph<T>* g, const TensorPtr<T>& seg, const LabelVolume& labels) {
    detail::require(seg->shape.size() == 4, "mce_loss: seg must be rank 4");
    const int C = seg->shape[0];
    detail::require(C == LabelVolume::kNumClasses, "mce_loss: class axis must have 5 channels");
    const std::size_t plane = static_cast<std::size_t>(seg->shape[1]) * seg->shape[2] * seg->shape[3];
    if (plane != labels.dims.voxels() || seg->shape[1] != labels.dims.nz ||
        seg->shape[2] != labels.dims.ny || seg->shape[3] != labels.dims.nx)
        throw ShapeError("mce_loss: seg spatial axes do not match label dims");
    const T eps = static_cast<T>(kLogClip);
    auto out = make_tensor<T>({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        T p = std::clamp(seg->data[labels.data[i] * plane + i], eps, T(1) - eps);
        acc -= std::log(static_cast<double>(p));
    }
    out->data[0] = static_cast<T>(acc / static_cast<double>(plane));
    detail::prepare_output(g, out, seg->requires_grad);
    if (g && seg->requires_grad) {
        auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.data);
        g->record([seg, out, lab, plane]() {
            const T eps = static_cast<T>(kLogClip);
            T gv = out->grad[0] / static_cast<T>(plane);
            for (std::size_t i = 0; i < plane; ++i) {
                std::size_t idx = (*lab)[i] * plane + i;
                T p = seg->data[idx];
                if (p < eps || p > T(1) - eps) continue;
                seg->grad[idx] += -gv / p;
            }
        });
    }
    return out;
}

// Tensor layout note: spatial tensors index [c][z][y][x], so a Volume's
// x-fastest buffer maps directly onto the innermost two axes.
template <class T>
TensorPtr<T> tensor_from_volume(const Volume& v, bool requires_grad = false) {
    auto t = make_tensor<T>({1, v.dims.nz, v.dims.ny, v.dims.nx}, requires_grad);
    for (std::size_t i = 0; i < v.data.size(); ++i) t->data[i] = static_cast<T>(v.data[i]);
    return t;
}

template <class T>
Volume volume_from_channel(const TensorPtr<T>& t, int c, const Spacing& spacing) {
    detail::require(t->shape.size() == 4, "volume_from_channel: tensor must be rank 4");
    Dims d{t->shape[3], t->shape[2], t->shape[1]};
    Volume v(d, spacing);
    const std::size_t plane = d.voxels();
    for (std::size_t i = 0; i < plane; ++i)
        v.data[i] = static_cast<float>(t->data[c * plane + i]);
    return v;
}

// ---------------------------------------------------------------------------
// Parameters, init, Adam
// ---------------------------------------------------------------------------

template <class T>
struct NetworkParams {
    std::vector<std::pair<std::string, TensorPtr<T>>> entries;

    TensorPtr<T> add(const std::string& name, std::vector<int> shape) {
        if (find(name)) throw StateError("duplicate parameter name: " + name);
        auto t = make_tensor<T>(std::move(shape), /*requires_grad=*/true);
        entries.emplace_back(name, t);
        return t;
    }
    TensorPtr<T> find(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return t;
        return nullptr;
    }
    TensorPtr<T> at(const std::string& name) const {
        auto t = find(name);
        if (!t) throw StateError("unknown parameter: " + name);
        return t;
    }
    void set_requires_grad(bool on) {
        for (auto& [n, t] : entries) {
            if (on)
                t->ensure_grad();
            else
                t->requires_grad = false;
        }
    }
    void zero_grads() {
        for (auto& [n, t] : entries)
            if (!t->grad.empty()) t->zero_grad();
    }
};

template <class T>
void he_normal_fill(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
}

template <class T>
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<T>> m, v; // aligned with NetworkParams::entries

    void init(const NetworkParams<T>& params) {
        m.clear();
        v.clear();
        for (const auto& [n, p] : params.entries) {
            m.emplace_back(p->size(), T(0));
            v.emplace_back(p->size(), T(0));
        }
        t = 0;
    }
};

template <class T>
void adam_step(NetworkParams<T>& params, AdamState<T>& state) {
    if (state.m.size() != params.entries.size())
        throw StateError("adam state not initialized for these parameters");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
        auto& p = *params.entries[pi].second;
        if (p.grad.size() != p.data.size())
            throw StateError("missing gradient for parameter " + params.entries[pi].first);
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            double gpi = static_cast<double>(p.grad[i]);
            double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gpi;
            double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gpi * gpi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double mh = mi / bc1;
            double vh = vi / bc2;
            p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                       state.lr * mh / (std::sqrt(vh) + state.eps));
        }
        p.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container (.enmw): f32 payload regardless of working precision
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kCkptMagic[4] = {'E', 'N', 'M', 'W'};
inline constexpr std::uint16_t kCkptVersion = 1;

struct CkptEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

void write_ckpt_entries(const std::string& path, const std::vector<CkptEntry>& entries);
std::vector<CkptEntry> read_ckpt_entries(const std::string& path);

} // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const NetworkParams<T>& params,
                     const AdamState<T>* adam = nullptr) {
    std::vector<detail::CkptEntry> entries;
    auto push = [&](const std::string& name, const std::vector<int>& shape,
                    const std::vector<T>& data) {
        detail::CkptEntry e;
        e.name = name;
        e.shape = shape;
        e.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) e.data[i] = static_cast<float>(data[i]);
        entries.push_back(std::move(e));
    };
    for (const auto& [name, t] : params.entries) push(name, t->shape, t->data);
    if (adam) {
        for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
            const auto& [name, t] = params.entries[pi];
            push("__adam_m__" + name, t->shape, adam->m[pi]);
            push("__adam_v__" + name, t->shape, adam->v[pi]);
        }
        push("__adam_t__", {1}, {static_cast<T>(adam->t)});
    }
    detail::write_ckpt_entries(path, entries);
}

template <class T>
void load_checkpoint(const std::string& path, NetworkParams<T>& params,
                     AdamState<T>* adam = nullptr) {
    auto entries = detail::read_ckpt_entries(path);
    auto take = [&](const std::string& name) -> const detail::CkptEntry* {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    };
    for (auto& [name, t] : params.entries) {
        const auto* e = take(name);
        if (!e) throw ParseError("checkpoint missing parameter " + name);
        if (e->shape != t->shape) throw ParseError("checkpoint shape mismatch for " + name);
        for (std::size_t i = 0; i < e->data.size(); ++i) t->data[i] = static_cast<T>(e->data[i]);
    }
    if (adam) {
        adam->init(params);
        for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
            const auto& name = params.entries[pi].first;
            const auto* em = take("__adam_m__" + name);
            const auto* ev = take("__adam_v__" + name);
            if (!em || !ev) throw ParseError("checkpoint missing Adam state for " + name);
            for (std::size_t i = 0; i < em->data.size(); ++i) {
                adam->m[pi][i] = static_cast<T>(em->data[i]);
                adam->v[pi][i] = static_cast<T>(ev->data[i]);
            }
        }
        const auto* et = take("__adam_t__");
        if (!et) throw ParseError("checkpoint missing Adam step count");
        adam->t = static_cast<std::int64_t>(et->data[0]);
    }
}

} // namespace enmc::gn
