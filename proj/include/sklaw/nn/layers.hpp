#pragma once

#include <cmath>
#include <string>

#include "sklaw/core/rng.hpp"
#include "sklaw/nn/tape.hpp"

namespace sklaw {

// Uniform(+-sqrt(6/(fan_in+fan_out))) weight init, deterministic under seed.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> glorot_init(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> w(rows, cols);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            w(i, j) = static_cast<Scalar>(rng.uniform(-limit, limit));
    return w;
}

// Two hidden Leaky-ReLU layers and a linear output head.
template <typename Scalar>
struct MlpT {
    using Mat = typename TapeT<Scalar>::Mat;
    using Var = typename TapeT<Scalar>::Var;

    int w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
    Scalar slope = Scalar(0.01);

    static MlpT create(ParamStoreT<Scalar>& store, const std::string& prefix, int in, int hidden,
                       int out, Rng& rng) {
        MlpT mlp;
        mlp.w1 = store.add(prefix + ".w1", glorot_init<Scalar>(in, hidden, rng));
        mlp.b1 = store.add(prefix + ".b1", Mat::Zero(1, hidden));
        mlp.w2 = store.add(prefix + ".w2", glorot_init<Scalar>(hidden, hidden, rng));
        mlp.b2 = store.add(prefix + ".b2", Mat::Zero(1, hidden));
        mlp.w3 = store.add(prefix + ".w3", glorot_init<Scalar>(hidden, out, rng));
        mlp.b3 = store.add(prefix + ".b3", Mat::Zero(1, out));
        return mlp;
    }

    Var forward(TapeT<Scalar>& t, ParamStoreT<Scalar>& store, Var x) const {
        Var h = t.leaky_relu(t.add_rowvec(t.matmul(x, t.param(store, w1)), t.param(store, b1)),
                             slope);
        h = t.leaky_relu(t.add_rowvec(t.matmul(h, t.param(store, w2)), t.param(store, b2)), slope);
        return t.add_rowvec(t.matmul(h, t.param(store, w3)), t.param(store, b3));
    }
};

template <typename Scalar>
struct BatchNormT {
    using Mat = typename TapeT<Scalar>::Mat;
    using Var = typename TapeT<Scalar>::Var;

    int gamma = -1, beta = -1;
    Mat running_mean, running_var;
    Scalar momentum = Scalar(0.1);
    Scalar eps = Scalar(1e-5);

    static BatchNormT create(ParamStoreT<Scalar>& store, const std::string& prefix, int width) {
        BatchNormT bn;
        bn.gamma = store.add(prefix + ".gamma", Mat::Ones(1, width));
        bn.beta = store.add(prefix + ".beta", Mat::Zero(1, width));
        bn.running_mean = Mat::Zero(1, width);
        bn.running_var = Mat::Ones(1, width);
        return bn;
    }

    Var forward(TapeT<Scalar>& t, ParamStoreT<Scalar>& store, Var x, bool train) {
        Var g = t.param(store, gamma);
        Var b = t.param(store, beta);
        if (train)
            return t.batchnorm_train(x, g, b, running_mean, running_var, momentum, eps);
        return t.batchnorm_eval(x, g, b, running_mean, running_var, eps);
    }
};

// Adam with bias correction; moment buffers live in the parameter store.
template <typename Scalar>
struct AdamT {
    Scalar lr = Scalar(1e-3);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar eps = Scalar(1e-8);
    long step_count = 0;

    void step(ParamStoreT<Scalar>& store) {
        ++step_count;
        const Scalar c1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(step_count));
        const Scalar c2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(step_count));
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto& e = store.entry(static_cast<int>(i));
            e.m = beta1 * e.m + (Scalar(1) - beta1) * e.grad;
            e.v = beta2 * e.v + (Scalar(1) - beta2) * e.grad.cwiseProduct(e.grad);
            e.value.array() -=
                lr * (e.m.array() / c1) / ((e.v.array() / c2).sqrt() + eps);
        }
    }
};

using Mlp = MlpT<double>;
using BatchNorm = BatchNormT<double>;
using Adam = AdamT<double>;

}  // namespace sklaw
