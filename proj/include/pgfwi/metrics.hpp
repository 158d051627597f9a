#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "pgfwi/wavesim.hpp"

namespace pgfwi {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SsimOptions {
    std::size_t window = 11; // odd
    double sigma = 1.5;
    // Dynamic range; 0 means "range of the reference model".
    double L = 0.0;
};

// Mean SSIM over Gaussian-weighted local windows with mirrored edges.
double ssim(const VelocityModel& v, const VelocityModel& v_hat, const SsimOptions& opts = {});

// 10 log10(|v|^2 / |v - v_hat|^2); +inf when the models are identical.
double snr(const VelocityModel& v, const VelocityModel& v_hat);

// Adds white Gaussian noise rescaled to exactly target_snr_db. A target of
// +inf returns the input unchanged.
ShotGather add_awgn(const ShotGather& d, double target_snr_db, std::uint64_t seed);

// 10 log10(|d|^2 / |noisy - d|^2) for data gathers.
double data_snr(const ShotGather& clean, const ShotGather& noisy);

struct MetricReport {
    double ssim = 0.0;
    double snr_db = 0.0;
    std::size_t window = 11;
    double sigma = 1.5;
    double L = 0.0;

    // snr_db is written as the string "inf" when infinite.
    std::string to_json() const;
};

MetricReport evaluate(const VelocityModel& v, const VelocityModel& v_hat, const SsimOptions& opts = {});

} // namespace pgfwi
