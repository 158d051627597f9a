#include "pgfwi/nets.hpp"

#include <cmath>
#include <random>

#include "pgfwi/ops.hpp"

namespace pgfwi {

namespace {

// He-uniform weights with bound sqrt(6 / fan_in), zero bias.
ConvLayer make_layer(Shape wshape, std::size_t fan_in, std::size_t n_bias, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(numel(wshape));
    for (auto& x : w) x = u(rng);
    return {Tensor::from(std::move(wshape), std::move(w), true), Tensor::zeros({n_bias}, true)};
}

ConvLayer conv3(std::size_t cin, std::size_t cout, std::mt19937_64& rng) {
    return make_layer({cout, cin, 3, 3}, cin * 9, cout, rng);
}

void add_named(NamedTensors& out, const std::string& name, const ConvLayer& l) {
    out.emplace_back(name + ".weight", l.weight);
    out.emplace_back(name + ".bias", l.bias);
}

Tensor conv_relu(const Tensor& x, const ConvLayer& l) {
    return ops::relu(ops::conv2d(x, l.weight, l.bias, 1, 1));
}

std::size_t count(const NamedTensors& ps) {
    std::size_t n = 0;
    for (const auto& [name, t] : ps) n += t.numel();
    return n;
}

std::vector<Tensor> tensors(const NamedTensors& ps) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : ps) out.push_back(t);
    return out;
}

} // namespace

void UNetConfig::validate() const {
    const std::size_t f = std::size_t{1} << depth;
    if (in_channels == 0 || base_channels == 0) throw NetError("unet: channel counts must be positive");
    if (input_h == 0 || input_w == 0 || input_h % f || input_w % f) {
        throw NetError("unet: input_resample " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                       " must be divisible by " + std::to_string(f));
    }
    if (out_nx == 0 || out_nz == 0) throw NetError("unet: output grid not set");
    if (!(v_min < v_max)) throw NetError("unet: v_min must be below v_max");
}

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    std::size_t cin = cfg_.in_channels;
    for (std::size_t l = 0; l < UNetConfig::depth; ++l) {
        std::size_t c = cfg_.base_channels << l;
        Block blk{conv3(cin, c, rng), {}};
        blk.b = conv3(c, c, rng);
        down_.push_back(blk);
        cin = c;
    }
    std::size_t cc = cfg_.base_channels << UNetConfig::depth;
    center_.a = conv3(cin, cc, rng);
    center_.b = conv3(cc, cc, rng);
    cin = cc;
    for (std::size_t i = 0; i < UNetConfig::depth; ++i) {
        std::size_t c = cfg_.base_channels << (UNetConfig::depth - 1 - i);
        if (cfg_.upsample == Upsample::Transposed) {
            up_.push_back(make_layer({cin, c, 2, 2}, c * 4, c, rng));
        } else {
            up_.push_back(make_layer({c, cin, 1, 1}, cin, c, rng));
        }
        Block blk{conv3(2 * c, c, rng), {}};
        blk.b = conv3(c, c, rng);
        dec_.push_back(blk);
        cin = c;
    }
    head_ = make_layer({1, cin, 1, 1}, cin, 1, rng);
}

NamedTensors UNet::named_parameters() const {
    NamedTensors out;
    for (std::size_t l = 0; l < down_.size(); ++l) {
        add_named(out, "enc" + std::to_string(l) + ".conv1", down_[l].a);
        add_named(out, "enc" + std::to_string(l) + ".conv2", down_[l].b);
    }
    add_named(out, "center.conv1", center_.a);
    add_named(out, "center.conv2", center_.b);
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        add_named(out, "dec" + std::to_string(i) + ".up", up_[i]);
        add_named(out, "dec" + std::to_string(i) + ".conv1", dec_[i].a);
        add_named(out, "dec" + std::to_string(i) + ".conv2", dec_[i].b);
    }
    add_named(out, "head", head_);
    return out;
}

std::vector<Tensor> UNet::parameters() const { return tensors(named_parameters()); }
std::size_t UNet::parameter_count() const { return count(named_parameters()); }

Tensor UNet::forward(const Tensor& input) const {
    const Shape want{1, cfg_.in_channels, cfg_.input_h, cfg_.input_w};
    if (input.shape() != want) {
        throw ShapeError("unet: expected input " + shape_str(want) + ", got " + shape_str(input.shape()));
    }
    std::vector<Tensor> skips;
    Tensor x = input;
    for (const auto& blk : down_) {
        x = conv_relu(conv_relu(x, blk.a), blk.b);
        skips.push_back(x);
        x = ops::maxpool2d(x, 2);
    }
    x = conv_relu(conv_relu(x, center_.a), center_.b);
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        const Tensor& skip = skips[skips.size() - 1 - i];
        Tensor up;
        if (cfg_.upsample == Upsample::Transposed) {
            up = ops::conv_transpose2d(x, up_[i].weight, up_[i].bias, 2, 0);
        } else {
            up = ops::conv2d(ops::bilinear_resize(x, skip.dim(2), skip.dim(3)), up_[i].weight, up_[i].bias);
        }
        Tensor cat[2] = {skip, up};
        x = ops::concat_channels(cat);
        x = conv_relu(conv_relu(x, dec_[i].a), dec_[i].b);
    }
    x = ops::sigmoid(ops::conv2d(x, head_.weight, head_.bias));
    x = ops::bilinear_resize(x, cfg_.out_nz, cfg_.out_nx);
    return ops::add_scalar(ops::scale(x, cfg_.v_max - cfg_.v_min), cfg_.v_min);
}

Tensor unet_input(const ShotGather& d, std::size_t h, std::size_t w) {
    auto raw = Tensor::from({d.ns, d.nr, d.nt}, d.traces);
    auto img = ops::bilinear_resize(raw, h, w);
    auto& v = img.storage();
    const std::size_t plane = h * w;
    for (std::size_t s = 0; s < d.ns; ++s) {
        double* p = v.data() + s * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        double sd = std::sqrt(var / static_cast<double>(plane));
        for (std::size_t i = 0; i < plane; ++i) p[i] = sd > 0.0 ? (p[i] - mean) / sd : p[i] - mean;
    }
    return Tensor::from({1, d.ns, h, w}, std::move(v));
}

VelocityModel tensor_to_model(const Tensor& t, std::size_t nx, std::size_t nz, double dx_km) {
    if (t.numel() != nx * nz) {
        throw ShapeError("tensor_to_model: " + shape_str(t.shape()) + " does not hold " + std::to_string(nz) +
                         "x" + std::to_string(nx));
    }
    return {nx, nz, dx_km, {t.data().begin(), t.data().end()}};
}

Tensor model_to_tensor(const VelocityModel& m) { return Tensor::from({1, 1, m.nz, m.nx}, m.v); }

VelocityModel unet_forward(const UNet& net, const ShotGather& d_obs, double dx_km) {
    const auto& c = net.config();
    auto out = net.forward(unet_input(d_obs, c.input_h, c.input_w));
    return tensor_to_model(out, c.out_nx, c.out_nz, dx_km);
}

void DiscriminatorConfig::validate() const {
    const std::size_t f = std::size_t{1} << n_blocks;
    if (n_blocks == 0 || in_channels == 0 || base_channels == 0 || fc_hidden == 0) {
        throw NetError("discriminator: sizes must be positive");
    }
    if (input_h % f || input_w % f || input_h == 0 || input_w == 0) {
        throw NetError("discriminator: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                       " must be divisible by " + std::to_string(f));
    }
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    std::size_t cin = cfg_.in_channels;
    for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
        std::size_t c = cfg_.base_channels << b;
        convs_.push_back(conv3(cin, c, rng));
        cin = c;
    }
    std::size_t flat = cin * (cfg_.input_h >> cfg_.n_blocks) * (cfg_.input_w >> cfg_.n_blocks);
    fc1_ = make_layer({cfg_.fc_hidden, flat}, flat, cfg_.fc_hidden, rng);
    fc2_ = make_layer({1, cfg_.fc_hidden}, cfg_.fc_hidden, 1, rng);
}

NamedTensors Discriminator::named_parameters() const {
    NamedTensors out;
    for (std::size_t b = 0; b < convs_.size(); ++b) add_named(out, "block" + std::to_string(b), convs_[b]);
    add_named(out, "fc1", fc1_);
    add_named(out, "fc2", fc2_);
    return out;
}

std::vector<Tensor> Discriminator::parameters() const { return tensors(named_parameters()); }
std::size_t Discriminator::parameter_count() const { return count(named_parameters()); }

std::vector<std::size_t> Discriminator::channel_widths() const {
    std::vector<std::size_t> w;
    for (const auto& c : convs_) w.push_back(c.weight.dim(0));
    return w;
}

Tensor Discriminator::forward(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w) {
        throw ShapeError("discriminator: expected (B," + std::to_string(cfg_.in_channels) + "," +
                         std::to_string(cfg_.input_h) + "," + std::to_string(cfg_.input_w) + "), got " +
                         shape_str(x.shape()));
    }
    Tensor h = x;
    for (const auto& c : convs_) {
        h = ops::maxpool2d(ops::leaky_relu(ops::conv2d(h, c.weight, c.bias, 1, 1), cfg_.leaky_slope), 2);
    }
    h = ops::flatten(h, 1);
    h = ops::leaky_relu(ops::linear(h, fc1_.weight, fc1_.bias), cfg_.leaky_slope);
    return ops::linear(h, fc2_.weight, fc2_.bias);
}

PretrainResult pretrain_unet(UNet& net, const Tensor& input, const VelocityModel& target,
                             const PretrainConfig& cfg, AdamState* state) {
    const auto& c = net.config();
    if (target.nx != c.out_nx || target.nz != c.out_nz) {
        throw NetError("pretrain: target grid " + std::to_string(target.nx) + "x" + std::to_string(target.nz) +
                       " differs from network output " + std::to_string(c.out_nx) + "x" +
                       std::to_string(c.out_nz));
    }
    AdamState local;
    local.lr = cfg.lr;
    AdamState& opt = state ? *state : local;
    auto params = net.parameters();
    const double inv_range = 1.0 / (c.v_max - c.v_min);
    auto goal = Tensor::from({1, 1, c.out_nz, c.out_nx}, target.v);

    PretrainResult res;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        auto diff = ops::scale(ops::sub(net.forward(input), goal), inv_range);
        auto loss = ops::mean(ops::square(diff));
        double l = loss.item();
        if (!std::isfinite(l) || (!res.loss.empty() && l > 10.0 * res.loss.front())) {
            throw NetError("pretrain: loss diverged at epoch " + std::to_string(e) + " (" + std::to_string(l) + ")");
        }
        res.loss.push_back(l);
        if (e >= cfg.patience) {
            double before = res.loss[e - cfg.patience];
            if (before - l < cfg.min_rel_improvement * before) {
                res.converged = true;
                break;
            }
        }
        backward(loss);
        adam_step(params, opt);
    }
    return res;
}

} // namespace pgfwi
