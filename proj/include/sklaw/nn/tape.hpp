#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sklaw/core/error.hpp"

namespace sklaw {

// Named parameter registry: values, gradient accumulators, and Adam moments
// live together so the optimizer and checkpointing can walk one structure.
template <typename Scalar>
class ParamStoreT {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    struct Entry {
        std::string name;
        Mat value, grad, m, v;
    };

    int add(const std::string& name, Mat init) {
        for (const Entry& e : entries_)
            if (e.name == name) throw Error("duplicate parameter name: " + name);
        Entry e;
        e.name = name;
        e.grad = Mat::Zero(init.rows(), init.cols());
        e.m = e.grad;
        e.v = e.grad;
        e.value = std::move(init);
        entries_.push_back(std::move(e));
        return static_cast<int>(entries_.size()) - 1;
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return static_cast<int>(i);
        return -1;
    }

    Entry& entry(int h) { return entries_[static_cast<std::size_t>(h)]; }
    const Entry& entry(int h) const { return entries_[static_cast<std::size_t>(h)]; }
    Mat& value(int h) { return entry(h).value; }
    const Mat& value(int h) const { return entry(h).value; }
    Mat& grad(int h) { return entry(h).grad; }
    std::size_t size() const { return entries_.size(); }

    void zero_grads() {
        for (Entry& e : entries_) e.grad.setZero();
    }

    void check_finite_grads() const {
        for (const Entry& e : entries_)
            if (!e.grad.allFinite()) throw Error("non-finite gradient for parameter " + e.name);
    }

private:
    std::vector<Entry> entries_;
};

// Eager reverse-mode tape over dense matrices. Every op computes its value
// immediately and records a pull-back closure; backward() replays them in
// reverse. One tape instance per forward/backward pass.
template <typename Scalar>
class TapeT {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Store = ParamStoreT<Scalar>;

    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    void clear() { nodes_.clear(); }
    std::size_t num_nodes() const { return nodes_.size(); }

    const Mat& value(Var v) const { return node(v).value; }
    const Mat& grad(Var v) const {
        const Node& n = node(v);
        if (!n.needs_grad) throw Error("gradient requested for a non-differentiable node");
        return n.grad;
    }

    // --- leaves ---------------------------------------------------------

    Var leaf(Mat value) { return make(std::move(value), false, {}); }

    Var input(Mat value, bool needs_grad = false) {
        return make(std::move(value), needs_grad, {});
    }

    Var param(Store& store, int handle) {
        Var out = make(store.value(handle), true, {});
        Store* sp = &store;
        node(out).pull = [out, sp, handle](TapeT& t) { sp->grad(handle) += t.node(out).grad; };
        return out;
    }

    // --- arithmetic -----------------------------------------------------

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        Var out = make(value(a) + value(b), needs(a) || needs(b), {});
        set_pull(out, [out, a, b](TapeT& t) {
            t.accum(a, t.node(out).grad);
            t.accum(b, t.node(out).grad);
        });
        return out;
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        Var out = make(value(a) - value(b), needs(a) || needs(b), {});
        set_pull(out, [out, a, b](TapeT& t) {
            t.accum(a, t.node(out).grad);
            t.accum(b, -t.node(out).grad);
        });
        return out;
    }

    Var mul(Var a, Var b) {  // elementwise
        require_same_shape(a, b, "mul");
        Var out = make(value(a).cwiseProduct(value(b)), needs(a) || needs(b), {});
        set_pull(out, [out, a, b](TapeT& t) {
            if (t.needs(a)) t.accum(a, t.node(out).grad.cwiseProduct(t.node(b).value));
            if (t.needs(b)) t.accum(b, t.node(out).grad.cwiseProduct(t.node(a).value));
        });
        return out;
    }

    Var scale(Var a, Scalar s) {
        Var out = make(value(a) * s, needs(a), {});
        set_pull(out, [out, a, s](TapeT& t) { t.accum(a, t.node(out).grad * s); });
        return out;
    }

    Var add_const(Var a, Scalar c) {
        Var out = make((value(a).array() + c).matrix(), needs(a), {});
        set_pull(out, [out, a](TapeT& t) { t.accum(a, t.node(out).grad); });
        return out;
    }

    Var matmul(Var a, Var b) {
        if (value(a).cols() != value(b).rows())
            throw Error("matmul: inner dimensions disagree (" + shape_str(a) + " vs " +
                        shape_str(b) + ")");
        Var out = make(value(a) * value(b), needs(a) || needs(b), {});
        set_pull(out, [out, a, b](TapeT& t) {
            if (t.needs(a)) t.accum(a, t.node(out).grad * t.node(b).value.transpose());
            if (t.needs(b)) t.accum(b, t.node(a).value.transpose() * t.node(out).grad);
        });
        return out;
    }

    // broadcast a 1-row bias over every row of a
    Var add_rowvec(Var a, Var row) {
        if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
            throw Error("add_rowvec: bias must be 1x" + std::to_string(value(a).cols()));
        Var out = make(value(a).rowwise() + value(row).row(0), needs(a) || needs(row), {});
        set_pull(out, [out, a, row](TapeT& t) {
            t.accum(a, t.node(out).grad);
            if (t.needs(row)) t.accum(row, t.node(out).grad.colwise().sum());
        });
        return out;
    }

    // scale every column of a by the n x 1 column c
    Var mul_colvec(Var a, Var c) {
        if (value(c).cols() != 1 || value(c).rows() != value(a).rows())
            throw Error("mul_colvec: scaler must be " + std::to_string(value(a).rows()) + "x1");
        Var out = make((value(a).array().colwise() * value(c).col(0).array()).matrix(),
                       needs(a) || needs(c), {});
        set_pull(out, [out, a, c](TapeT& t) {
            const Mat& g = t.node(out).grad;
            if (t.needs(a))
                t.accum(a, (g.array().colwise() * t.node(c).value.col(0).array()).matrix());
            if (t.needs(c)) t.accum(c, g.cwiseProduct(t.node(a).value).rowwise().sum());
        });
        return out;
    }

    // --- activations ----------------------------------------------------

    Var leaky_relu(Var a, Scalar slope) {
        const Mat& x = value(a);
        Mat y = x.unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; });
        Var out = make(std::move(y), needs(a), {});
        set_pull(out, [out, a, slope](TapeT& t) {
            const Mat& x2 = t.node(a).value;
            const Mat& g = t.node(out).grad;
            t.accum(a, (x2.array() > Scalar(0))
                           .select(g.array(), g.array() * slope)
                           .matrix());
        });
        return out;
    }

    Var sigmoid(Var a) {
        Mat y = value(a).unaryExpr(
            [](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
        Var out = make(std::move(y), needs(a), {});
        set_pull(out, [out, a](TapeT& t) {
            const Mat& y2 = t.node(out).value;
            t.accum(a, t.node(out)
                           .grad.array()
                           .cwiseProduct(y2.array() * (Scalar(1) - y2.array()))
                           .matrix());
        });
        return out;
    }

    Var softplus(Var a) {
        Mat y = value(a).unaryExpr([](Scalar v) {
            return std::max(v, Scalar(0)) + std::log1p(std::exp(-std::abs(v)));
        });
        Var out = make(std::move(y), needs(a), {});
        set_pull(out, [out, a](TapeT& t) {
            const Mat sig = t.node(a).value.unaryExpr(
                [](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
            t.accum(a, t.node(out).grad.cwiseProduct(sig));
        });
        return out;
    }

    // --- batch normalization -------------------------------------------

    // Train mode: batch statistics normalize the batch and update the running
    // buffers in place (EMA of the biased batch variance, so that eval mode
    // converges to the train-mode transform under full-batch training).
    Var batchnorm_train(Var x, Var gamma, Var beta, Mat& running_mean, Mat& running_var,
                        Scalar momentum, Scalar eps) {
        const Mat& xv = value(x);
        if (xv.rows() < 2) throw Error("batchnorm: train mode needs at least 2 rows");
        const Mat mean = xv.colwise().mean();
        const Mat centered = xv.rowwise() - mean.row(0);
        const Mat var = centered.array().square().colwise().mean().matrix();
        running_mean = (Scalar(1) - momentum) * running_mean + momentum * mean;
        running_var = (Scalar(1) - momentum) * running_var + momentum * var;

        const Mat inv_std = (var.array() + eps).rsqrt().matrix();
        Mat xhat = centered;
        xhat.array().rowwise() *= inv_std.row(0).array();
        Mat y = xhat;
        y.array().rowwise() *= value(gamma).row(0).array();
        y.rowwise() += value(beta).row(0);
        Var out = make(std::move(y), needs(x) || needs(gamma) || needs(beta), {});
        auto xhat_s = std::make_shared<Mat>(std::move(xhat));
        auto inv_s = std::make_shared<Mat>(inv_std);
        set_pull(out, [out, x, gamma, beta, xhat_s, inv_s](TapeT& t) {
            const Mat& g = t.node(out).grad;
            if (t.needs(gamma)) t.accum(gamma, g.cwiseProduct(*xhat_s).colwise().sum());
            if (t.needs(beta)) t.accum(beta, g.colwise().sum());
            if (t.needs(x)) {
                const Mat mean_g = g.colwise().mean();
                const Mat mean_gx = g.cwiseProduct(*xhat_s).colwise().mean();
                Mat dx = g.rowwise() - mean_g.row(0);
                Mat corr = *xhat_s;
                corr.array().rowwise() *= mean_gx.row(0).array();
                dx -= corr;
                dx.array().rowwise() *=
                    t.node(gamma).value.row(0).array() * inv_s->row(0).array();
                t.accum(x, dx);
            }
        });
        return out;
    }

    // Eval mode: a fixed affine transform using the running statistics.
    Var batchnorm_eval(Var x, Var gamma, Var beta, const Mat& running_mean,
                       const Mat& running_var, Scalar eps) {
        const Mat inv_std = (running_var.array() + eps).rsqrt().matrix();
        Mat xhat = value(x).rowwise() - running_mean.row(0);
        xhat.array().rowwise() *= inv_std.row(0).array();
        Mat y = xhat;
        y.array().rowwise() *= value(gamma).row(0).array();
        y.rowwise() += value(beta).row(0);
        Var out = make(std::move(y), needs(x) || needs(gamma) || needs(beta), {});
        auto xhat_s = std::make_shared<Mat>(std::move(xhat));
        auto inv_s = std::make_shared<Mat>(inv_std);
        set_pull(out, [out, x, gamma, beta, xhat_s, inv_s](TapeT& t) {
            const Mat& g = t.node(out).grad;
            if (t.needs(gamma)) t.accum(gamma, g.cwiseProduct(*xhat_s).colwise().sum());
            if (t.needs(beta)) t.accum(beta, g.colwise().sum());
            if (t.needs(x)) {
                Mat dx = g;
                dx.array().rowwise() *=
                    t.node(gamma).value.row(0).array() * inv_s->row(0).array();
                t.accum(x, dx);
            }
        });
        return out;
    }

    // --- structural ops -------------------------------------------------

    // Per-segment exclusive weighted prefix sum: for row r inside its
    // segment, out[r] = sum_{j<r in segment} alpha[j] * feat[j]. This is the
    // attention encoding over a whole batch of autoregressive prefixes.
    Var attention_encode(Var alpha, const Mat& feat,
                         std::span<const std::pair<int, int>> segments) {
        if (value(alpha).cols() != 1 || value(alpha).rows() != feat.rows())
            throw Error("attention_encode: alpha must be " + std::to_string(feat.rows()) + "x1");
        const Eigen::Index e = feat.cols();
        Mat out_v = Mat::Zero(feat.rows(), e);
        for (const auto& [start, len] : segments) {
            Mat running = Mat::Zero(1, e);
            for (int r = start; r < start + len; ++r) {
                out_v.row(r) = running.row(0);
                running.row(0) += value(alpha)(r, 0) * feat.row(r);
            }
        }
        Var out = make(std::move(out_v), needs(alpha), {});
        auto feat_s = std::make_shared<Mat>(feat);
        std::vector<std::pair<int, int>> segs(segments.begin(), segments.end());
        set_pull(out, [out, alpha, feat_s, segs = std::move(segs)](TapeT& t) {
            const Mat& g = t.node(out).grad;
            Mat da = Mat::Zero(g.rows(), 1);
            for (const auto& [start, len] : segs) {
                Mat acc = Mat::Zero(1, g.cols());
                for (int r = start + len - 1; r >= start; --r) {
                    da(r, 0) = acc.row(0).dot(feat_s->row(r));
                    acc.row(0) += g.row(r);
                }
            }
            t.accum(alpha, da);
        });
        return out;
    }

    Var gather_rows(Var src, std::span<const int> rows) {
        Mat out_v(static_cast<Eigen::Index>(rows.size()), value(src).cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            out_v.row(static_cast<Eigen::Index>(i)) = value(src).row(rows[i]);
        Var out = make(std::move(out_v), needs(src), {});
        std::vector<int> idx(rows.begin(), rows.end());
        set_pull(out, [out, src, idx = std::move(idx)](TapeT& t) {
            Mat ds = Mat::Zero(t.node(src).value.rows(), t.node(src).value.cols());
            const Mat& g = t.node(out).grad;
            for (std::size_t i = 0; i < idx.size(); ++i)
                ds.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
            t.accum(src, ds);
        });
        return out;
    }

    Var concat_cols(std::span<const Var> parts) {
        Eigen::Index rows = -1, cols = 0;
        bool any = false;
        for (const Var& p : parts) {
            if (rows < 0) rows = value(p).rows();
            if (value(p).rows() != rows) throw Error("concat_cols: row counts disagree");
            cols += value(p).cols();
            any = any || needs(p);
        }
        Mat out_v(rows, cols);
        Eigen::Index at = 0;
        for (const Var& p : parts) {
            out_v.middleCols(at, value(p).cols()) = value(p);
            at += value(p).cols();
        }
        Var out = make(std::move(out_v), any, {});
        std::vector<Var> ps(parts.begin(), parts.end());
        set_pull(out, [out, ps = std::move(ps)](TapeT& t) {
            Eigen::Index at2 = 0;
            for (const Var& p : ps) {
                const Eigen::Index w = t.node(p).value.cols();
                t.accum(p, t.node(out).grad.middleCols(at2, w));
                at2 += w;
            }
        });
        return out;
    }

    // --- reductions -----------------------------------------------------

    Var sum(Var a) {
        Mat s(1, 1);
        s(0, 0) = value(a).sum();
        Var out = make(std::move(s), needs(a), {});
        set_pull(out, [out, a](TapeT& t) {
            t.accum(a, Mat::Constant(t.node(a).value.rows(), t.node(a).value.cols(),
                                     t.node(out).grad(0, 0)));
        });
        return out;
    }

    // mean |a - target|; the subgradient at 0 is 0
    Var mean_abs_error(Var a, const Mat& target) {
        if (target.rows() != value(a).rows() || target.cols() != value(a).cols())
            throw Error("mean_abs_error: shape mismatch");
        const Mat diff = value(a) - target;
        Mat s(1, 1);
        s(0, 0) = diff.array().abs().mean();
        Var out = make(std::move(s), needs(a), {});
        auto diff_s = std::make_shared<Mat>(diff);
        set_pull(out, [out, a, diff_s](TapeT& t) {
            const Scalar n = static_cast<Scalar>(diff_s->size());
            const Scalar g = t.node(out).grad(0, 0);
            t.accum(a, (diff_s->array().sign() * (g / n)).matrix());
        });
        return out;
    }

    // mean (a - center)^2
    Var mean_sq_around(Var a, Scalar center) {
        const Mat dev = (value(a).array() - center).matrix();
        Mat s(1, 1);
        s(0, 0) = dev.array().square().mean();
        Var out = make(std::move(s), needs(a), {});
        auto dev_s = std::make_shared<Mat>(dev);
        set_pull(out, [out, a, dev_s](TapeT& t) {
            const Scalar n = static_cast<Scalar>(dev_s->size());
            t.accum(a, (dev_s->array() * (Scalar(2) * t.node(out).grad(0, 0) / n)).matrix());
        });
        return out;
    }

    // a + w * b, elementwise (used for scalar loss composition)
    Var add_weighted(Var a, Var b, Scalar w) {
        require_same_shape(a, b, "add_weighted");
        Var out = make(value(a) + w * value(b), needs(a) || needs(b), {});
        set_pull(out, [out, a, b, w](TapeT& t) {
            t.accum(a, t.node(out).grad);
            t.accum(b, w * t.node(out).grad);
        });
        return out;
    }

    // --- reverse sweep --------------------------------------------------

    void backward(Var root) {
        Node& r = node(root);
        if (r.value.size() != 1) throw Error("backward: root must be scalar");
        if (!r.needs_grad) throw Error("backward: root does not require gradients");
        for (Node& n : nodes_)
            if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        r.grad(0, 0) = Scalar(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.needs_grad && n.pull) n.pull(*this);
        }
    }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        std::function<void(TapeT&)> pull;
    };

    std::vector<Node> nodes_;

    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    bool needs(Var v) const { return node(v).needs_grad; }

    void accum(Var v, const Mat& g) {
        Node& n = node(v);
        if (n.needs_grad) n.grad += g;
    }

    Var make(Mat value, bool needs_grad, std::function<void(TapeT&)> pull) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.pull = std::move(pull);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // only attach the closure when gradients can actually flow
    void set_pull(Var v, std::function<void(TapeT&)> pull) {
        if (node(v).needs_grad) node(v).pull = std::move(pull);
    }

    void require_same_shape(Var a, Var b, const char* what) const {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
            throw Error(std::string(what) + ": shape mismatch (" + shape_str(a) + " vs " +
                        shape_str(b) + ")");
    }

    std::string shape_str(Var v) const {
        return std::to_string(value(v).rows()) + "x" + std::to_string(value(v).cols());
    }
};

using ParamStore = ParamStoreT<double>;
using Tape = TapeT<double>;
using TapeVar = Tape::Var;

}  // namespace sklaw
