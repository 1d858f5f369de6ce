#include "thor/unet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace thor::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;
using MutVecMap = Eigen::Map<Eigen::VectorXf>;

ConstMap weights(std::span<const float> p, const ConvLayer& c) {
    return {p.data() + c.weight, c.cout, c.cin * c.kernel * c.kernel};
}
ConstVecMap bias(std::span<const float> p, const ConvLayer& c) {
    return {p.data() + c.bias, c.cout};
}
MutMap weights(std::span<float> g, const ConvLayer& c) {
    return {g.data() + c.weight, c.cout, c.cin * c.kernel * c.kernel};
}
MutVecMap bias(std::span<float> g, const ConvLayer& c) {
    return {g.data() + c.bias, c.cout};
}
ConstMap weights(std::span<const float> p, const DenseLayer& d) {
    return {p.data() + d.weight, d.out, d.in};
}
ConstVecMap bias(std::span<const float> p, const DenseLayer& d) {
    return {p.data() + d.bias, d.out};
}
MutMap weights(std::span<float> g, const DenseLayer& d) {
    return {g.data() + d.weight, d.out, d.in};
}
MutVecMap bias(std::span<float> g, const DenseLayer& d) {
    return {g.data() + d.bias, d.out};
}

// 3x3, stride 1, zero padding 1.
Tensor im2col3(const Tensor& x, int h, int w) {
    const auto cin = x.rows();
    Tensor col = Tensor::Zero(cin * 9, static_cast<Eigen::Index>(h) * w);
    for (Eigen::Index c = 0; c < cin; ++c) {
        const float* src = x.row(c).data();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* dst = col.row(c * 9 + ky * 3 + kx).data();
                const int dx = kx - 1;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    std::copy(src + sy * w + x0 + dx, src + sy * w + x1 + dx, dst + y * w + x0);
                }
            }
        }
    }
    return col;
}

Tensor col2im3(const Tensor& col, int h, int w) {
    const auto cin = col.rows() / 9;
    Tensor x = Tensor::Zero(cin, static_cast<Eigen::Index>(h) * w);
    for (Eigen::Index c = 0; c < cin; ++c) {
        float* dst = x.row(c).data();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* src = col.row(c * 9 + ky * 3 + kx).data();
                const int dx = kx - 1;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    float* d = dst + sy * w + dx;
                    const float* s = src + y * w;
                    for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
                }
            }
        }
    }
    return x;
}

Tensor silu(const Tensor& x) {
    return (x.array() / (1.0f + (-x.array()).exp())).matrix();
}

// d silu / dx evaluated at the pre-activation, times the incoming gradient.
Tensor silu_grad(const Tensor& pre, const Tensor& grad) {
    const auto s = (1.0f + (-pre.array()).exp()).inverse();
    return (grad.array() * s * (1.0f + pre.array() * (1.0f - s))).matrix();
}

Eigen::VectorXf silu(const Eigen::VectorXf& x) {
    return (x.array() / (1.0f + (-x.array()).exp())).matrix();
}

Eigen::VectorXf silu_grad(const Eigen::VectorXf& pre, const Eigen::VectorXf& grad) {
    const Eigen::ArrayXf s = (1.0f + (-pre.array()).exp()).inverse();
    return (grad.array() * s * (1.0f + pre.array() * (1.0f - s))).matrix();
}

Tensor avg_pool2(const Tensor& x, int h, int w) {
    const int ho = h / 2;
    const int wo = w / 2;
    Tensor out(x.rows(), static_cast<Eigen::Index>(ho) * wo);
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const float* s = x.row(c).data();
        float* d = out.row(c).data();
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                d[y * wo + xx] = 0.25f * (s[(2 * y) * w + 2 * xx] + s[(2 * y) * w + 2 * xx + 1] +
                                          s[(2 * y + 1) * w + 2 * xx] + s[(2 * y + 1) * w + 2 * xx + 1]);
    }
    return out;
}

Tensor avg_pool2_backward(const Tensor& grad, int h, int w) {
    const int wo = w / 2;
    Tensor out(grad.rows(), static_cast<Eigen::Index>(h) * w);
    for (Eigen::Index c = 0; c < grad.rows(); ++c) {
        const float* s = grad.row(c).data();
        float* d = out.row(c).data();
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) d[y * w + xx] = 0.25f * s[(y / 2) * wo + xx / 2];
    }
    return out;
}

// Nearest-neighbour 2x upsampling from (h, w).
Tensor upsample2(const Tensor& x, int h, int w) {
    const int wo = 2 * w;
    Tensor out(x.rows(), static_cast<Eigen::Index>(4) * h * w);
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const float* s = x.row(c).data();
        float* d = out.row(c).data();
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < wo; ++xx) d[y * wo + xx] = s[(y / 2) * w + xx / 2];
    }
    return out;
}

Tensor upsample2_backward(const Tensor& grad, int h, int w) {
    const int wo = 2 * w;
    Tensor out = Tensor::Zero(grad.rows(), static_cast<Eigen::Index>(h) * w);
    for (Eigen::Index c = 0; c < grad.rows(); ++c) {
        const float* s = grad.row(c).data();
        float* d = out.row(c).data();
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < wo; ++xx) d[(y / 2) * w + xx / 2] += s[y * wo + xx];
    }
    return out;
}

Tensor conv_forward(std::span<const float> p, const ConvLayer& c, const Tensor& col) {
    Tensor out(c.cout, col.cols());
    out.noalias() = weights(p, c) * col;
    out.colwise() += bias(p, c);
    return out;
}

// Accumulates weight/bias gradients; returns d(col).
Tensor conv_backward(std::span<const float> p, const ConvLayer& c, const Tensor& col, const Tensor& grad,
                     std::span<float> g) {
    weights(g, c).noalias() += grad * col.transpose();
    bias(g, c) += grad.rowwise().sum().transpose();
    Tensor dcol(col.rows(), col.cols());
    dcol.noalias() = weights(p, c).transpose() * grad;
    return dcol;
}

} // namespace

Eigen::VectorXf timestep_embedding(int t, int dim) {
    Eigen::VectorXf e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = static_cast<float>(std::sin(t * freq));
        e[i + half] = static_cast<float>(std::cos(t * freq));
    }
    if (dim % 2) e[dim - 1] = 0.0f;
    return e;
}

ConvLayer UNet::make_conv(int cin, int cout, int kernel) {
    ConvLayer c{cin, cout, kernel, n_params_, 0};
    n_params_ += static_cast<std::size_t>(cout) * cin * kernel * kernel;
    c.bias = n_params_;
    n_params_ += cout;
    return c;
}

DenseLayer UNet::make_dense(int in, int out) {
    DenseLayer d{in, out, n_params_, 0};
    n_params_ += static_cast<std::size_t>(out) * in;
    d.bias = n_params_;
    n_params_ += out;
    return d;
}

ResBlock UNet::make_block(int level, int cin, int cout) {
    ResBlock b;
    b.level = level;
    b.conv1 = make_conv(cin, cout, 3);
    b.conv2 = make_conv(cout, cout, 3);
    b.time_proj = make_dense(arch_.time_embed_dim, cout);
    b.projected_skip = cin != cout;
    if (b.projected_skip) b.skip = make_conv(cin, cout, 1);
    return b;
}

int UNet::channels(int level) const {
    return arch_.base_channels * std::min(1 << level, 4);
}

UNet::UNet(const Architecture& arch) : arch_(arch) {
    if (arch.depth < 0 || arch.base_channels < 1 || arch.time_embed_dim < 2) {
        throw std::invalid_argument("UNet: invalid architecture");
    }
    const int div = 1 << arch.depth;
    if (arch.height % div != 0 || arch.width % div != 0) {
        throw std::invalid_argument("UNet: image size must be divisible by 2^depth");
    }
    time_mlp_ = make_dense(arch.time_embed_dim, arch.time_embed_dim);
    conv_in_ = make_conv(1, channels(0), 3);
    int prev = channels(0);
    for (int l = 0; l < arch.depth; ++l) {
        encoder_.push_back(make_block(l, prev, channels(l)));
        prev = channels(l);
    }
    middle_ = make_block(arch.depth, prev, channels(arch.depth));
    prev = channels(arch.depth);
    decoder_.resize(arch.depth);
    for (int l = arch.depth - 1; l >= 0; --l) {
        decoder_[l] = make_block(l, prev + channels(l), channels(l));
        prev = channels(l);
    }
    conv_out_ = make_conv(channels(0), 1, 3);
}

std::vector<float> UNet::initial_parameters(std::uint64_t seed) const {
    std::vector<float> p(n_params_, 0.0f);
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t offset, std::size_t count, double stddev) {
        std::normal_distribution<float> normal(0.0f, static_cast<float>(stddev));
        for (std::size_t i = 0; i < count; ++i) p[offset + i] = normal(rng);
    };
    auto conv = [&](const ConvLayer& c, double gain) {
        const int fan_in = c.cin * c.kernel * c.kernel;
        fill(c.weight, static_cast<std::size_t>(c.cout) * fan_in, gain * std::sqrt(2.0 / fan_in));
    };
    auto dense = [&](const DenseLayer& d) {
        fill(d.weight, static_cast<std::size_t>(d.out) * d.in, std::sqrt(1.0 / d.in));
    };
    auto block = [&](const ResBlock& b) {
        conv(b.conv1, 1.0);
        // second conv starts at zero so every block begins as its skip path
        dense(b.time_proj);
        if (b.projected_skip) conv(b.skip, std::sqrt(0.5));
    };
    dense(time_mlp_);
    conv(conv_in_, 1.0);
    for (const auto& b : encoder_) block(b);
    block(middle_);
    for (const auto& b : decoder_) block(b);
    return p;
}

Tensor UNet::block_forward(std::span<const float> p, const ResBlock& b, const Tensor& x,
                           const Eigen::VectorXf& temb, BlockTape* tape) const {
    const int h = arch_.height >> b.level;
    const int w = arch_.width >> b.level;
    Tensor col1 = im2col3(silu(x), h, w);
    Tensor pre1 = conv_forward(p, b.conv1, col1);
    const Eigen::VectorXf shift = weights(p, b.time_proj) * temb + bias(p, b.time_proj);
    pre1.colwise() += shift;
    Tensor col2 = im2col3(silu(pre1), h, w);
    Tensor out = conv_forward(p, b.conv2, col2);
    if (b.projected_skip) {
        out += conv_forward(p, b.skip, x);
    } else {
        out += x;
    }
    if (tape) {
        tape->input = x;
        tape->col1 = std::move(col1);
        tape->pre1 = std::move(pre1);
        tape->col2 = std::move(col2);
    }
    return out;
}

Tensor UNet::block_backward(std::span<const float> p, const ResBlock& b, const BlockTape& tape,
                            const Eigen::VectorXf& temb, const Tensor& grad, Eigen::VectorXf& grad_temb,
                            std::span<float> g) const {
    const int h = arch_.height >> b.level;
    const int w = arch_.width >> b.level;
    const Tensor dcol2 = conv_backward(p, b.conv2, tape.col2, grad, g);
    const Tensor dpre1 = silu_grad(tape.pre1, col2im3(dcol2, h, w));

    const Eigen::VectorXf dshift = dpre1.rowwise().sum().transpose();
    weights(g, b.time_proj).noalias() += dshift * temb.transpose();
    bias(g, b.time_proj) += dshift;
    grad_temb.noalias() += weights(p, b.time_proj).transpose() * dshift;

    const Tensor dcol1 = conv_backward(p, b.conv1, tape.col1, dpre1, g);
    Tensor dx = silu_grad(tape.input, col2im3(dcol1, h, w));
    if (b.projected_skip) {
        dx += conv_backward(p, b.skip, tape.input, grad, g);
    } else {
        dx += grad;
    }
    return dx;
}

Tensor UNet::forward(std::span<const float> p, const Tensor& x, int t, Tape* tape) const {
    if (p.size() != n_params_) throw std::invalid_argument("UNet::forward: parameter count mismatch");
    if (x.rows() != 1 || x.cols() != static_cast<Eigen::Index>(arch_.height) * arch_.width) {
        throw std::invalid_argument("UNet::forward: input shape mismatch");
    }
    const Eigen::VectorXf emb = timestep_embedding(t, arch_.time_embed_dim);
    const Eigen::VectorXf time_pre = weights(p, time_mlp_) * emb + bias(p, time_mlp_);
    const Eigen::VectorXf temb = silu(time_pre);

    Tensor col_in = im2col3(x, arch_.height, arch_.width);
    Tensor h = conv_forward(p, conv_in_, col_in);

    const int depth = arch_.depth;
    std::vector<Tensor> skips(depth);
    if (tape) {
        tape->encoder.resize(depth);
        tape->decoder.resize(depth);
    }
    for (int l = 0; l < depth; ++l) {
        h = block_forward(p, encoder_[l], h, temb, tape ? &tape->encoder[l] : nullptr);
        skips[l] = h;
        h = avg_pool2(h, arch_.height >> l, arch_.width >> l);
    }
    h = block_forward(p, middle_, h, temb, tape ? &tape->middle : nullptr);
    for (int l = depth - 1; l >= 0; --l) {
        Tensor up = upsample2(h, arch_.height >> (l + 1), arch_.width >> (l + 1));
        Tensor cat(up.rows() + skips[l].rows(), up.cols());
        cat << up, skips[l];
        h = block_forward(p, decoder_[l], cat, temb, tape ? &tape->decoder[l] : nullptr);
    }
    Tensor col_out = im2col3(silu(h), arch_.height, arch_.width);
    Tensor out = conv_forward(p, conv_out_, col_out);

    if (tape) {
        tape->embedding = emb;
        tape->time_pre = time_pre;
        tape->time_act = temb;
        tape->col_in = std::move(col_in);
        tape->out_pre = std::move(h);
        tape->col_out = std::move(col_out);
    }
    return out;
}

void UNet::backward(std::span<const float> p, const Tape& tape, const Tensor& grad_out,
                    std::span<float> g) const {
    if (g.size() != n_params_) throw std::invalid_argument("UNet::backward: gradient size mismatch");
    const int depth = arch_.depth;
    Eigen::VectorXf grad_temb = Eigen::VectorXf::Zero(arch_.time_embed_dim);

    const Tensor dcol_out = conv_backward(p, conv_out_, tape.col_out, grad_out, g);
    Tensor dh = silu_grad(tape.out_pre, col2im3(dcol_out, arch_.height, arch_.width));

    std::vector<Tensor> dskips(depth);
    for (int l = 0; l < depth; ++l) {
        const Tensor dcat = block_backward(p, decoder_[l], tape.decoder[l], tape.time_act, dh, grad_temb, g);
        const auto up_channels = dcat.rows() - channels(l);
        dskips[l] = dcat.bottomRows(channels(l));
        dh = upsample2_backward(dcat.topRows(up_channels), arch_.height >> (l + 1), arch_.width >> (l + 1));
    }
    dh = block_backward(p, middle_, tape.middle, tape.time_act, dh, grad_temb, g);
    for (int l = depth - 1; l >= 0; --l) {
        dh = avg_pool2_backward(dh, arch_.height >> l, arch_.width >> l);
        dh += dskips[l];
        dh = block_backward(p, encoder_[l], tape.encoder[l], tape.time_act, dh, grad_temb, g);
    }
    conv_backward(p, conv_in_, tape.col_in, dh, g);

    const Eigen::VectorXf dpre = silu_grad(tape.time_pre, grad_temb);
    weights(g, time_mlp_).noalias() += dpre * tape.embedding.transpose();
    bias(g, time_mlp_) += dpre;
}

} // namespace thor::nn
