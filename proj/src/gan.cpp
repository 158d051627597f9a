#include "pgfwi/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pgfwi/checkpoint.hpp"
#include "pgfwi/io.hpp"
#include "pgfwi/metrics.hpp"
#include "pgfwi/ops.hpp"

namespace pgfwi {

LossKind parse_loss_kind(const std::string& s) {
    if (s == "vanilla") return LossKind::Vanilla;
    if (s == "wgan_gp") return LossKind::WganGp;
    throw GanError("unknown loss '" + s + "' (expected vanilla or wgan_gp)");
}

std::string loss_kind_name(LossKind k) { return k == LossKind::Vanilla ? "vanilla" : "wgan_gp"; }

void GanConfig::validate() const {
    if (d_steps_per_g < 1) throw GanError("gan: d_steps_per_g must be >= 1");
    if (batch_size < 1) throw GanError("gan: batch_size must be >= 1");
    if (!(lr >= 0.0) || !(adversarial_lr >= 0.0)) throw GanError("gan: learning rates must be >= 0");
    if (!(gp_lambda >= 0.0)) throw GanError("gan: gp_lambda must be >= 0");
}

Critic as_critic(const Discriminator& d) {
    return [&d](const Tensor& x) { return d.forward(x); };
}

std::vector<SampleDraw> draw_samples(std::mt19937_64& rng, std::size_t ns, std::size_t count) {
    std::vector<SampleDraw> out(count);
    for (auto& s : out) {
        s.shot = static_cast<std::size_t>(rng() % ns);
        s.stride = 1 + static_cast<std::size_t>(rng() % 2);
        s.offset = static_cast<std::size_t>(rng() % s.stride);
    }
    return out;
}

Tensor gather_tensor(const ShotGather& d, bool requires_grad) {
    return Tensor::from({d.ns, d.nr, d.nt}, d.traces, requires_grad);
}

Tensor build_batch(const Tensor& gather, const std::vector<SampleDraw>& draws, std::size_t h, std::size_t w,
                   double scale) {
    if (gather.ndim() != 3) throw ShapeError("build_batch: expected (ns, nr, nt), got " + shape_str(gather.shape()));
    const std::size_t ns = gather.dim(0), nr = gather.dim(1), nt = gather.dim(2);
    auto flat = ops::reshape(gather, {ns * nr, nt});
    std::vector<Tensor> samples;
    for (const auto& d : draws) {
        if (d.shot >= ns) throw ShapeError("build_batch: shot index out of range");
        std::vector<std::size_t> rows;
        for (std::size_t r = d.offset; r < nr; r += d.stride) rows.push_back(d.shot * nr + r);
        auto sel = ops::select_rows(flat, rows);
        samples.push_back(ops::bilinear_resize(ops::reshape(sel, {1, rows.size(), nt}), h, w));
    }
    auto batch = ops::reshape(ops::concat_channels(samples), {draws.size(), 1, h, w});
    return ops::scale(batch, scale);
}

namespace {

constexpr double kProbFloor = 1e-7;

Tensor clamped_prob(const Tensor& scores) {
    return ops::clamp(ops::sigmoid(scores), kProbFloor, 1.0 - kProbFloor);
}

Tensor one_minus(const Tensor& p) { return ops::add_scalar(ops::scale(p, -1.0), 1.0); }

void require_finite(double v, const char* what, std::size_t epoch) {
    if (!std::isfinite(v)) {
        throw GanError(std::string("gan: ") + what + " became non-finite at epoch " + std::to_string(epoch));
    }
}

} // namespace

Tensor vanilla_disc_loss(const Tensor& real_scores, const Tensor& fake_scores) {
    auto real_term = ops::mean(ops::log(clamped_prob(real_scores)));
    auto fake_term = ops::mean(ops::log(one_minus(clamped_prob(fake_scores))));
    return ops::scale(ops::add(real_term, fake_term), -1.0);
}

Tensor vanilla_gen_loss(const Tensor& fake_scores) {
    return ops::scale(ops::mean(ops::log(clamped_prob(fake_scores))), -1.0);
}

Tensor gradient_penalty(const Critic& critic, const Tensor& real, const Tensor& fake, const std::vector<double>& eps) {
    if (real.shape() != fake.shape() || real.ndim() != 4) {
        throw ShapeError("gradient_penalty: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
    }
    const std::size_t b = real.dim(0), per = real.numel() / b;
    if (eps.size() != b) throw ShapeError("gradient_penalty: need one interpolation weight per sample");
    std::vector<double> mix(real.numel());
    auto r = real.data(), f = fake.data();
    for (std::size_t i = 0; i < mix.size(); ++i) {
        double e = eps[i / per];
        mix[i] = e * r[i] + (1.0 - e) * f[i];
    }
    auto x_hat = Tensor::from(real.shape(), std::move(mix), true);
    auto g = grad_of_grad(ops::sum(critic(x_hat)), x_hat);
    auto sq = ops::square(ops::reshape(g, {b, per}));
    auto norms = ops::sqrt(ops::matmul(sq, Tensor::full({per, 1}, 1.0)));
    return ops::mean(ops::square(ops::add_scalar(norms, -1.0)));
}

DiscLossParts disc_loss(const Critic& critic, const Tensor& real, const Tensor& fake, LossKind kind,
                        double gp_lambda, const std::vector<double>& eps) {
    if (real.shape() != fake.shape()) {
        throw ShapeError("disc_loss: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
    }
    auto real_scores = critic(real);
    auto fake_scores = critic(fake);
    DiscLossParts out;
    if (kind == LossKind::Vanilla) {
        out.total = vanilla_disc_loss(real_scores, fake_scores);
        out.adversarial = out.total.item();
        return out;
    }
    auto adv = ops::sub(ops::mean(fake_scores), ops::mean(real_scores));
    auto gp = gradient_penalty(critic, real.detach(), fake.detach(), eps);
    out.adversarial = adv.item();
    out.penalty = gp.item();
    out.total = ops::add(adv, ops::scale(gp, gp_lambda));
    return out;
}

Tensor gen_loss(const Critic& critic, const Tensor& fake, LossKind kind) {
    auto scores = critic(fake);
    if (kind == LossKind::Vanilla) return vanilla_gen_loss(scores);
    return ops::scale(ops::mean(scores), -1.0);
}

GeneratorState::GeneratorState(const UNetConfig& ucfg, const FwiConfig& fcfg, double net_lr, double adversarial_lr)
    : unet(ucfg), fwi_cfg(fcfg), fwi_opt(velocity_optimizer(fcfg.lr)), adv_opt(velocity_optimizer(adversarial_lr)) {
    unet_opt.lr = net_lr;
}

GeneratorOutput generator_produce(GeneratorState& state, const ShotGather& d_obs, const AcquisitionGeometry& geom,
                                  std::size_t fwi_inner_iters, double dx_km) {
    if (!state.v_current) {
        auto v_pre = unet_forward(state.unet, d_obs, dx_km);
        for (auto& v : v_pre.v) v = std::clamp(v, state.fwi_cfg.v_min, state.fwi_cfg.v_max);
        state.v_current = std::move(v_pre);
    }
    GeneratorOutput out;
    if (fwi_inner_iters > 0) {
        FwiConfig c = state.fwi_cfg;
        c.n_iters = fwi_inner_iters;
        auto r = fwi_refine(*state.v_current, d_obs, geom, c, &state.fwi_opt);
        out.v_corr = std::move(r.model);
        out.fwi_misfit = std::move(r.misfit);
    } else {
        out.v_corr = *state.v_current;
    }
    out.d_syn = forward_model(out.v_corr, geom, state.fwi_cfg.threads);
    state.v_current = out.v_corr;
    return out;
}

AdversarialGradient adversarial_gradient(const Critic& critic, const VelocityModel& v, const ShotGather& d_syn,
                                         const AcquisitionGeometry& geom, const std::vector<SampleDraw>& draws,
                                         std::size_t h, std::size_t w, double scale, LossKind kind, int threads) {
    auto t = gather_tensor(d_syn, true);
    auto loss = gen_loss(critic, build_batch(t, draws, h, w, scale), kind);
    backward(loss);
    ShotGather residual(d_syn.ns, d_syn.nr, d_syn.nt);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), residual.traces.begin());
    return {loss.item(), adjoint_gradient(v, geom, residual, threads)};
}

std::string format_metrics_row(const EpochRecord& r) {
    auto num = [](double x) {
        if (std::isinf(x)) return std::string(x > 0 ? "inf" : "-inf");
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.12g", x);
        return std::string(buf);
    };
    std::string s = std::to_string(r.epoch) + "," + num(r.loss_d) + "," + num(r.loss_g) + "," + num(r.misfit) + ",";
    s += (r.ssim ? num(*r.ssim) : "") + "," + (r.snr_db ? num(*r.snr_db) : "");
    return s;
}

namespace {

struct RunWriter {
    std::optional<std::filesystem::path> dir;
    std::ofstream metrics, schedule;

    explicit RunWriter(const std::optional<std::filesystem::path>& d, const std::string& config_json) : dir(d) {
        if (!dir) return;
        for (const char* sub : {"checkpoints", "models", "final"}) std::filesystem::create_directories(*dir / sub);
        if (!config_json.empty()) std::ofstream(*dir / "config.json") << config_json << '\n';
        metrics.open(*dir / "metrics.csv");
        schedule.open(*dir / "schedule.log");
        if (!metrics || !schedule) throw FormatError("cannot write run directory " + dir->string());
        metrics << "epoch,L_D,L_G,E,SSIM,SNR\n" << std::flush;
    }

    void epoch(const EpochRecord& r, const std::string& steps) {
        if (!dir) return;
        metrics << format_metrics_row(r) << '\n' << std::flush;
        schedule << "epoch " << r.epoch << ": " << steps << '\n' << std::flush;
    }

    void snapshot(std::size_t epoch, const UNet& unet, const Discriminator& disc, const VelocityModel& v) {
        if (!dir) return;
        NamedTensors all;
        for (auto& [n, t] : unet.named_parameters()) all.emplace_back("unet." + n, t);
        for (auto& [n, t] : disc.named_parameters()) all.emplace_back("disc." + n, t);
        const std::string tag = "epoch_" + std::to_string(epoch);
        save_checkpoint(*dir / "checkpoints" / (tag + ".wgt1"), all);
        write_model(*dir / "models" / (tag + ".bin"), v);
    }

    void final_model(const VelocityModel& v) {
        if (dir) write_model(*dir / "final" / "v_final.bin", v);
    }
};

void score(const std::optional<VelocityModel>& truth, const VelocityModel& v, std::optional<double>& s,
           std::optional<double>& snr_db) {
    if (!truth) return;
    s = ssim(*truth, v);
    snr_db = snr(*truth, v);
}

} // namespace

TrainResult train(const GanConfig& cfg, const ShotGather& d_obs, const AcquisitionGeometry& geom,
                  const VelocityModel& v_init, const TrainOptions& opts) {
    cfg.validate();
    v_init.validate();
    RunWriter out(opts.run_dir, opts.config_json);

    TrainResult res;
    res.initial_misfit = misfit(v_init, geom, d_obs, cfg.threads);
    score(opts.true_model, v_init, res.initial_ssim, res.initial_snr_db);
    if (cfg.epochs == 0) {
        res.v_final = v_init;
        res.final_misfit = res.initial_misfit;
        res.final_ssim = res.initial_ssim;
        res.final_snr_db = res.initial_snr_db;
        out.final_model(v_init);
        return res;
    }

    // Seeds: U-Net init seed+1, discriminator init seed+2, everything else
    // from one stream in loop order (draws for each D step, then the G step).
    UNetConfig ucfg = opts.unet;
    ucfg.seed = cfg.seed + 1;
    ucfg.in_channels = d_obs.ns;
    ucfg.out_nx = v_init.nx;
    ucfg.out_nz = v_init.nz;
    ucfg.v_min = opts.fwi.v_min;
    ucfg.v_max = opts.fwi.v_max;
    DiscriminatorConfig dcfg = opts.disc;
    dcfg.seed = cfg.seed + 2;
    FwiConfig fcfg = opts.fwi;
    fcfg.threads = cfg.threads;
    std::mt19937_64 rng(cfg.seed);

    GeneratorState gen(ucfg, fcfg, cfg.lr, cfg.adversarial_lr);
    Discriminator disc(dcfg);
    auto critic = as_critic(disc);
    auto d_params = disc.parameters();
    AdamState d_opt;
    d_opt.lr = cfg.lr;

    const auto input = unet_input(d_obs, ucfg.input_h, ucfg.input_w);
    PretrainConfig pre{.epochs = cfg.pretrain_epochs, .lr = cfg.lr};
    pretrain_unet(gen.unet, input, v_init, pre, &gen.unet_opt);

    double peak = 0.0;
    for (double x : d_obs.traces) peak = std::max(peak, std::abs(x));
    if (peak == 0.0) throw GanError("gan: observed data are all zero");
    const double scale = 1.0 / peak;
    const auto real_t = gather_tensor(d_obs);
    const std::size_t frozen = std::min(fcfg.water_top_freeze, v_init.nz) * v_init.nx;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto produced = generator_produce(gen, d_obs, geom, cfg.fwi_inner_iters, v_init.dx_km);
        const auto fake_t = gather_tensor(produced.d_syn);
        EpochRecord rec;
        rec.epoch = epoch;
        std::string steps;

        for (std::size_t k = 0; k < cfg.d_steps_per_g; ++k) {
            auto real_draws = draw_samples(rng, d_obs.ns, cfg.batch_size);
            auto fake_draws = draw_samples(rng, d_obs.ns, cfg.batch_size);
            std::vector<double> eps(cfg.batch_size);
            if (cfg.loss == LossKind::WganGp) {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                for (auto& e : eps) e = u(rng);
            }
            auto real = build_batch(real_t, real_draws, dcfg.input_h, dcfg.input_w, scale);
            auto fake = build_batch(fake_t, fake_draws, dcfg.input_h, dcfg.input_w, scale);
            auto parts = disc_loss(critic, real, fake, cfg.loss, cfg.gp_lambda, eps);
            rec.loss_d = parts.total.item();
            require_finite(rec.loss_d, "discriminator loss", epoch);
            backward(parts.total);
            adam_step(d_params, d_opt);
            steps += 'D';
            ++res.d_updates;
        }

        auto g_draws = draw_samples(rng, d_obs.ns, cfg.batch_size);
        auto adv = adversarial_gradient(critic, produced.v_corr, produced.d_syn, geom, g_draws, dcfg.input_h,
                                        dcfg.input_w, scale, cfg.loss, cfg.threads);
        for (auto p : d_params) p.zero_grad();
        rec.loss_g = adv.loss;
        require_finite(rec.loss_g, "generator loss", epoch);
        {
            auto v = Tensor::from({gen.v_current->v.size()}, gen.v_current->v, true);
            std::fill_n(adv.gradient.begin(), frozen, 0.0);
            std::copy(adv.gradient.begin(), adv.gradient.end(), v.mutable_grad().begin());
            std::vector<Tensor> vp{v};
            adam_step(vp, gen.adv_opt);
            for (std::size_t i = 0; i < gen.v_current->v.size(); ++i) {
                gen.v_current->v[i] = std::clamp(v.data()[i], fcfg.v_min, fcfg.v_max);
            }
        }
        steps += 'G';
        ++res.g_updates;

        rec.misfit = misfit(produced.d_syn, d_obs);
        require_finite(rec.misfit, "data misfit", epoch);
        if (cfg.distill_every && epoch % cfg.distill_every == 0) {
            PretrainConfig distill{.epochs = cfg.distill_steps, .lr = cfg.lr};
            pretrain_unet(gen.unet, input, *gen.v_current, distill, &gen.unet_opt);
        }
        score(opts.true_model, *gen.v_current, rec.ssim, rec.snr_db);

        res.history.push_back(rec);
        res.schedule.push_back(steps);
        out.epoch(rec, steps);
        if ((cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0) || epoch == cfg.epochs) {
            out.snapshot(epoch, gen.unet, disc, *gen.v_current);
        }
    }

    res.v_final = *gen.v_current;
    res.final_misfit = misfit(res.v_final, geom, d_obs, cfg.threads);
    score(opts.true_model, res.v_final, res.final_ssim, res.final_snr_db);
    out.final_model(res.v_final);
    return res;
}

} // namespace pgfwi
