#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfwi/adam.hpp"
#include "pgfwi/fwi.hpp"
#include "pgfwi/nets.hpp"
#include "pgfwi/wavesim.hpp"

namespace pgfwi {

class GanError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LossKind { Vanilla, WganGp };

LossKind parse_loss_kind(const std::string& s);
std::string loss_kind_name(LossKind k);

struct GanConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 15;
    double lr = 1e-3; // networks
    std::size_t d_steps_per_g = 6;
    LossKind loss = LossKind::WganGp;
    double gp_lambda = 10.0;
    std::size_t fwi_inner_iters = 10;
    std::size_t distill_every = 25;
    std::size_t distill_steps = 100;
    std::size_t pretrain_epochs = 200;
    // Adam step size (m/s) for the adversarial update of the velocity model.
    double adversarial_lr = 1.0;
    std::size_t checkpoint_every = 25;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

// Raw critic scores (B, 1) for a batch (B, 1, H, W).
using Critic = std::function<Tensor(const Tensor&)>;

Critic as_critic(const Discriminator& d);

// One discriminator sample: a shot, optionally every second receiver.
struct SampleDraw {
    std::size_t shot = 0;
    std::size_t stride = 1; // 1 or 2
    std::size_t offset = 0; // < stride
};

std::vector<SampleDraw> draw_samples(std::mt19937_64& rng, std::size_t ns, std::size_t count);

// Batch (B, 1, h, w) from a gather tensor (ns, nr, nt): decimated rows,
// bilinear resize, multiplied by `scale`. Differentiable in `gather`.
Tensor build_batch(const Tensor& gather, const std::vector<SampleDraw>& draws, std::size_t h, std::size_t w,
                   double scale);

Tensor gather_tensor(const ShotGather& d, bool requires_grad = false);

// Vanilla losses from raw scores; probabilities are clamped to [1e-7, 1 - 1e-7].
Tensor vanilla_disc_loss(const Tensor& real_scores, const Tensor& fake_scores);
Tensor vanilla_gen_loss(const Tensor& fake_scores);

// lambda-free penalty mean((|grad_x critic(x_hat)| - 1)^2) at x_hat = e*real + (1-e)*fake, per-sample e.
Tensor gradient_penalty(const Critic& critic, const Tensor& real, const Tensor& fake,
                        const std::vector<double>& eps);

struct DiscLossParts {
    Tensor total;
    double adversarial = 0.0;
    double penalty = 0.0; // before gp_lambda
};

// `eps` is used only by wgan_gp.
DiscLossParts disc_loss(const Critic& critic, const Tensor& real, const Tensor& fake, LossKind kind,
                        double gp_lambda, const std::vector<double>& eps);

Tensor gen_loss(const Critic& critic, const Tensor& fake, LossKind kind);

struct GeneratorState {
    UNet unet;
    std::optional<VelocityModel> v_current;
    FwiConfig fwi_cfg;
    AdamState fwi_opt;
    AdamState unet_opt;
    AdamState adv_opt;

    GeneratorState(const UNetConfig& ucfg, const FwiConfig& fcfg, double net_lr, double adversarial_lr);
};

struct GeneratorOutput {
    VelocityModel v_corr;
    ShotGather d_syn;
    std::vector<double> fwi_misfit;
};

GeneratorOutput generator_produce(GeneratorState& state, const ShotGather& d_obs, const AcquisitionGeometry& geom,
                                  std::size_t fwi_inner_iters, double dx_km);

struct AdversarialGradient {
    double loss = 0.0;
    std::vector<double> gradient; // dL_G/dv, nx*nz
};

// L_G of a fake batch drawn from forward_model(v) and its gradient in v,
// through the adjoint of the forward operator.
AdversarialGradient adversarial_gradient(const Critic& critic, const VelocityModel& v, const ShotGather& d_syn,
                                         const AcquisitionGeometry& geom, const std::vector<SampleDraw>& draws,
                                         std::size_t h, std::size_t w, double scale, LossKind kind, int threads);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double misfit = 0.0;
    std::optional<double> ssim;
    std::optional<double> snr_db;
};

struct TrainOptions {
    UNetConfig unet;
    DiscriminatorConfig disc;
    FwiConfig fwi;
    std::optional<VelocityModel> true_model;
    std::optional<std::filesystem::path> run_dir;
    std::string config_json; // written as run_dir/config.json when non-empty
};

struct TrainResult {
    VelocityModel v_final;
    std::vector<EpochRecord> history;
    double initial_misfit = 0.0;
    double final_misfit = 0.0;
    std::optional<double> initial_ssim;
    std::optional<double> initial_snr_db;
    std::optional<double> final_ssim;
    std::optional<double> final_snr_db;
    std::size_t d_updates = 0;
    std::size_t g_updates = 0;
    std::vector<std::string> schedule; // one line per epoch, e.g. "DDDDDDG"
};

TrainResult train(const GanConfig& cfg, const ShotGather& d_obs, const AcquisitionGeometry& geom,
                  const VelocityModel& v_init, const TrainOptions& opts);

std::string format_metrics_row(const EpochRecord& r);

} // namespace pgfwi
