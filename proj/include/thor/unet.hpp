#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace thor::nn {

/// Feature map stored as channels x (height * width), row-major.
using Tensor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Architecture {
    int height = 64;
    int width = 64;
    int base_channels = 32;
    int depth = 3;
    int time_embed_dim = 64;
};

struct ConvLayer {
    int cin = 0;
    int cout = 0;
    int kernel = 3;
    std::size_t weight = 0; // cout x (cin * kernel^2)
    std::size_t bias = 0;
};

struct DenseLayer {
    int in = 0;
    int out = 0;
    std::size_t weight = 0; // out x in
    std::size_t bias = 0;
};

struct ResBlock {
    int level = 0;
    ConvLayer conv1;
    ConvLayer conv2;
    DenseLayer time_proj;
    bool projected_skip = false;
    ConvLayer skip; // 1x1, only when channel counts differ
};

struct BlockTape {
    Tensor input;
    Tensor col1;
    Tensor pre1;
    Tensor col2;
};

/// Activations kept from a forward pass for the backward pass.
struct Tape {
    Eigen::VectorXf embedding;
    Eigen::VectorXf time_pre;
    Eigen::VectorXf time_act;
    Tensor col_in;
    std::vector<BlockTape> encoder;
    BlockTape middle;
    std::vector<BlockTape> decoder;
    Tensor out_pre;
    Tensor col_out;
};

/// Small U-shaped epsilon predictor: 3x3 conv residual blocks with SiLU,
/// average-pool down, nearest up, skip concatenation, and a sinusoidal
/// timestep embedding added per block. Parameters live in one flat buffer.
class UNet {
public:
    explicit UNet(const Architecture& arch);

    [[nodiscard]] const Architecture& architecture() const { return arch_; }
    [[nodiscard]] std::size_t parameter_count() const { return n_params_; }
    [[nodiscard]] int channels(int level) const;

    [[nodiscard]] std::vector<float> initial_parameters(std::uint64_t seed) const;

    /// x: 1 x (H*W). Returns 1 x (H*W). Fills `tape` when non-null.
    [[nodiscard]] Tensor forward(std::span<const float> params, const Tensor& x, int t, Tape* tape) const;

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
    void backward(std::span<const float> params, const Tape& tape, const Tensor& grad_out,
                  std::span<float> grads) const;

private:
    ConvLayer make_conv(int cin, int cout, int kernel);
    DenseLayer make_dense(int in, int out);
    ResBlock make_block(int level, int cin, int cout);

    [[nodiscard]] Tensor block_forward(std::span<const float> p, const ResBlock& b, const Tensor& x,
                                       const Eigen::VectorXf& temb, BlockTape* tape) const;
    [[nodiscard]] Tensor block_backward(std::span<const float> p, const ResBlock& b, const BlockTape& tape,
                                        const Eigen::VectorXf& temb, const Tensor& grad,
                                        Eigen::VectorXf& grad_temb, std::span<float> g) const;

    Architecture arch_;
    std::size_t n_params_ = 0;
    DenseLayer time_mlp_;
    ConvLayer conv_in_;
    std::vector<ResBlock> encoder_;
    ResBlock middle_;
    std::vector<ResBlock> decoder_;
    ConvLayer conv_out_;
};

/// Sinusoidal embedding of an integer timestep.
Eigen::VectorXf timestep_embedding(int t, int dim);

} // namespace thor::nn
