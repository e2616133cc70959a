#pragma once

// Uniform entry point over every differentiable primitive. The typed free
// functions are what library code calls; this dispatcher exists so tests
// can sweep op kinds generically.

#include "featmap/nn_ops.hpp"

namespace featmap {

enum class OpKind {
    Matmul,
    Conv2d,
    TransposedConv2d,
    MaxPool2x2,
    BilinearUpsample2x,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Relu,
    LeakyRelu,
    Tanh,
    Reshape,
    Sum,
    Mean,
    Abs,
    Square,
    L2NormSq,
    BatchNorm,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Matmul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::TransposedConv2d: return "transposed-conv2d";
        case OpKind::MaxPool2x2: return "max-pool2x2";
        case OpKind::BilinearUpsample2x: return "bilinear-upsample2x";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::ScalarMul: return "scalar-mul";
        case OpKind::Relu: return "relu";
        case OpKind::LeakyRelu: return "leaky-relu";
        case OpKind::Tanh: return "tanh";
        case OpKind::Reshape: return "reshape";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Abs: return "abs";
        case OpKind::Square: return "square";
        case OpKind::L2NormSq: return "L2-norm-squared";
        case OpKind::BatchNorm: return "batch-norm";
    }
    return "?";
}

template <typename T>
struct OpAttrs {
    int stride = 1;
    int pad = 0;
    T scalar = T(1);
    T slope = T(0.2);
    Shape reshape_to;
    BatchNormState<T> bn;
    bool training = true;
};

template <typename T>
Var<T> forward_primitive(OpKind kind, const std::vector<Var<T>>& in, const OpAttrs<T>& attrs = {}) {
    auto arity = [&](size_t n) {
        if (in.size() != n)
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                             " inputs, got " + std::to_string(in.size()));
    };
    switch (kind) {
        case OpKind::Matmul: arity(2); return matmul(in[0], in[1]);
        case OpKind::Conv2d: arity(2); return conv2d(in[0], in[1], attrs.stride, attrs.pad);
        case OpKind::TransposedConv2d:
            arity(2);
            return transposed_conv2d(in[0], in[1], attrs.stride, attrs.pad);
        case OpKind::MaxPool2x2: arity(1); return max_pool2x2(in[0]);
        case OpKind::BilinearUpsample2x: arity(1); return bilinear_upsample2x(in[0]);
        case OpKind::Add: arity(2); return add(in[0], in[1]);
        case OpKind::Sub: arity(2); return sub(in[0], in[1]);
        case OpKind::Mul: arity(2); return mul(in[0], in[1]);
        case OpKind::ScalarMul: arity(1); return scalar_mul(in[0], attrs.scalar);
        case OpKind::Relu: arity(1); return relu(in[0]);
        case OpKind::LeakyRelu: arity(1); return leaky_relu(in[0], attrs.slope);
        case OpKind::Tanh: arity(1); return tanh_op(in[0]);
        case OpKind::Reshape: arity(1); return reshape(in[0], attrs.reshape_to);
        case OpKind::Sum: arity(1); return sum(in[0]);
        case OpKind::Mean: arity(1); return mean(in[0]);
        case OpKind::Abs: arity(1); return abs_op(in[0]);
        case OpKind::Square: arity(1); return square(in[0]);
        case OpKind::L2NormSq: arity(1); return l2_norm_sq(in[0]);
        case OpKind::BatchNorm:
            arity(3);
            return batch_norm(in[0], in[1], in[2], attrs.bn, attrs.training);
    }
    throw Error("unknown op-kind " + std::to_string(int(kind)));
}

}  // namespace featmap
