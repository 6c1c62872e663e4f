#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spillover/cusum.hpp"
#include "spillover/nn.hpp"
#include "spillover/spatial_dgp.hpp"

namespace spillover {

/// Forward-process variances. The default is a linear beta schedule rescaled
/// with 1000/T so the terminal signal level alpha_bar_T stays below 1% for
/// any step count.
struct NoiseSchedule {
  int n_steps = 1000;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha_bar;

  static NoiseSchedule linear(int n_steps);
  void validate() const;
};

/// Boundary-aware treatment encoding: gamma_PE d below the boundary,
/// gamma_GE d + phi (s - s*) at or above it. s and s_star live in the
/// standardized state units used by the model.
struct TreatmentEncodingParams {
  double gamma_pe = 0.5;
  double gamma_ge = 1.0;
  double phi = 0.25;
  double s_star = 0.0;
  void validate() const;
};

double psi(double d, double s, const TreatmentEncodingParams& params);

struct ForwardSample {
  double x_t = 0.0;
  double target_eps = 0.0;
};
/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, t in 1..T.
/// Conditioning (treatment, covariates, state) is fed to the denoiser as
/// input features, never added into the noising mean.
ForwardSample forward_sample(double x0, int t, const NoiseSchedule& schedule, double eps);

/// Per-period regime read off the panel: the cross-sectional mean outcome is
/// standardized into a state series, a CUSUM with threshold h detects the
/// shift, and the change point is placed at the last zero of the statistic
/// before the alarm. Periods from the change point on are general
/// equilibrium.
struct RegimeDetection {
  std::vector<double> s_hat;   // standardized per-period state estimate
  std::vector<int> regime;     // 0 = PE, 1 = GE
  std::optional<std::size_t> onset;  // first GE period (0-based)
  double s_star_hat = 0.0;     // boundary in s_hat units
  CusumTrace trace;
  double p_ge() const;
};
RegimeDetection detect_panel_regimes(const SpatialPanel& panel, double h = 5.0);
RegimeDetection detect_state_series(const std::vector<double>& state, double h = 5.0);

/// Treated-neighbourhood exposure sum_j W_ij D_j at t = 0.
Eigen::VectorXd treatment_exposure(const SpatialPanel& panel);

struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;
  double fwd(double x) const { return (x - mean) / sd; }
  double inv(double z) const { return mean + sd * z; }
  static Standardizer fit(const Eigen::VectorXd& values);
};

struct DdpmTrainConfig {
  int epochs = 60;
  int batch = 128;
  double lr = 1e-3;
  int n_steps = 100;             // diffusion steps T
  std::vector<int> hidden = {64, 64};
  double snr_clip_lo = 0.05;
  double snr_clip_hi = 20.0;
  double cusum_h = 5.0;          // training-time boundary monitor threshold
  bool boundary_aware = true;    // false trains the PE-only variant
  std::uint64_t seed = 0;
};

struct TrainingLog {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
  std::vector<std::size_t> boundary_crossings;  // batch counter at monitor alarms
};

struct DdpmModel {
  Mlp denoiser;
  NoiseSchedule schedule;
  TreatmentEncodingParams encoding;
  Standardizer x_std;                  // outcome scale after period centering
  Eigen::VectorXd period_offset;       // per-period mean removed before scaling
  std::vector<Standardizer> z_std;     // per-covariate scale
  RegimeDetection detection;           // training-time regimes and state
  int n_covariates = 0;
  bool trained = false;
  TrainingLog training_log;

  int feature_dim() const { return n_covariates + 8; }
  /// Writes [x_t, t/T, sin, cos, d, z..., exposure, s_hat, psi] into a
  /// contiguous feature row; z points at n_covariates standardized values.
  void fill_features(double* row, double x_t, int t, double d, const double* z_standardized,
                     double exposure, double s_hat) const;
};

/// Algorithm: epochs of minibatch denoising-score matching with SNR-weighted
/// loss, a CUSUM monitor on the per-batch mean residual, and Adam updates.
DdpmModel train(const SpatialPanel& panel, const DdpmTrainConfig& config);

/// Ancestral sampling of m_samples independent outcomes conditioned on
/// (d, z, exposure, s_hat). Reverse variance is beta_t; the final step is
/// noiseless. Deterministic given seed. Returns outcomes on the original
/// scale, re-anchored at the mean period level (outcomes are centered by
/// period before training; period constants cancel in every contrast).
Eigen::VectorXd sample_counterfactual(const DdpmModel& model, double d, const Eigen::VectorXd& z,
                                      double exposure, double s_hat, int m_samples,
                                      std::uint64_t seed);

struct EffectEstimate {
  std::optional<double> tau_pe;
  std::optional<double> tau_ge;
  double tau_aggregate = 0.0;
  double p_ge = 0.0;
  Eigen::VectorXd per_unit;    // per-location mean contrast
  Eigen::MatrixXd contrasts;   // N x T per-observation contrasts
  int m_samples = 0;
  bool single_regime_fallback = false;
};

/// Per observation, contrasts counterfactual means under d = 1 and d = 0 at
/// the unit's observed conditioning (common random numbers across arms),
/// then averages within the detected regimes. The aggregate is the
/// p_ge-weighted combination, which by construction equals the grand mean of
/// the contrasts.
EffectEstimate estimate_effects(const DdpmModel& model, const SpatialPanel& panel,
                                const RegimeDetection& detection, int m_samples,
                                std::uint64_t seed);

/// Versioned JSON parameter dump (schedule, layer shapes, flattened weights,
/// encoding, standardizers).
std::string save_model_json(const DdpmModel& model);
DdpmModel load_model_json(const std::string& text);

}  // namespace spillover
