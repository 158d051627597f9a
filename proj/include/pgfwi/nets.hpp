#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfwi/adam.hpp"
#include "pgfwi/checkpoint.hpp"
#include "pgfwi/tensor.hpp"
#include "pgfwi/wavesim.hpp"

namespace pgfwi {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Upsample { Transposed, Bilinear };

struct UNetConfig {
    static constexpr std::size_t depth = 4;

    std::size_t in_channels = 10; // one per shot
    std::size_t base_channels = 32;
    std::size_t out_nx = 0;
    std::size_t out_nz = 0;
    double v_min = 1500.0;
    double v_max = 4500.0;
    // Every shot gather is resized to input_h (receivers) by input_w (time).
    std::size_t input_h = 64;
    std::size_t input_w = 64;
    Upsample upsample = Upsample::Transposed;
    std::uint64_t seed = 1;

    void validate() const;
};

struct ConvLayer {
    Tensor weight;
    Tensor bias;
};

class UNet {
public:
    explicit UNet(const UNetConfig& cfg);

    const UNetConfig& config() const { return cfg_; }
    NamedTensors named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    // (1, in_channels, input_h, input_w) -> (1, 1, out_nz, out_nx) velocities.
    Tensor forward(const Tensor& input) const;

private:
    struct Block {
        ConvLayer a, b;
    };
    UNetConfig cfg_;
    std::vector<Block> down_;
    Block center_;
    std::vector<ConvLayer> up_;
    std::vector<Block> dec_;
    ConvLayer head_;
};

// Network input: each shot resized to (h, w), stacked as channels and
// normalized per channel to zero mean, unit standard deviation.
Tensor unet_input(const ShotGather& d, std::size_t h, std::size_t w);

VelocityModel tensor_to_model(const Tensor& t, std::size_t nx, std::size_t nz, double dx_km);
Tensor model_to_tensor(const VelocityModel& m);

VelocityModel unet_forward(const UNet& net, const ShotGather& d_obs, double dx_km);

struct DiscriminatorConfig {
    std::size_t in_channels = 1;
    std::size_t base_channels = 32;
    std::size_t n_blocks = 6;
    std::size_t fc_hidden = 2000;
    double leaky_slope = 0.1;
    std::size_t input_h = 64; // receivers
    std::size_t input_w = 64; // time samples
    std::uint64_t seed = 2;

    void validate() const;
};

class Discriminator {
public:
    explicit Discriminator(const DiscriminatorConfig& cfg);

    const DiscriminatorConfig& config() const { return cfg_; }
    NamedTensors named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    std::vector<std::size_t> channel_widths() const;

    // (B, in_channels, input_h, input_w) -> (B, 1) raw scores.
    Tensor forward(const Tensor& x) const;

private:
    DiscriminatorConfig cfg_;
    std::vector<ConvLayer> convs_;
    ConvLayer fc1_, fc2_;
};

struct PretrainConfig {
    std::size_t epochs = 200;
    double lr = 1e-3;
    // Stop once the loss improved by less than this fraction over `patience` epochs.
    double min_rel_improvement = 1e-5;
    std::size_t patience = 20;
};

struct PretrainResult {
    std::vector<double> loss; // per epoch, before the update
    bool converged = false;
};

// L2 fit of the network output to `target`, with velocities scaled to [0, 1]
// by the configured range. Throws NetError if the loss exceeds 10x its start.
PretrainResult pretrain_unet(UNet& net, const Tensor& input, const VelocityModel& target,
                             const PretrainConfig& cfg, AdamState* state = nullptr);

} // namespace pgfwi
