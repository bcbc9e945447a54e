#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dexfit/biomech.hpp"
#include "dexfit/body_model.hpp"
#include "dexfit/tape.hpp"

namespace dexfit {

enum class PriorKind { Body, Hand };

const char* prior_kind_name(PriorKind kind);
PriorKind parse_prior_kind(const std::string& name);

/// Architecture and loss configuration of one pose prior. The six loss
/// weights are (KL, recon, mesh, orth, reg, biomech); setting the sixth to 0
/// disables the joint-limit term.
struct PriorConfig {
  PriorKind kind = PriorKind::Body;
  int input_joints = 21;
  int latent_dim = 33;
  int hidden = 512;
  int layers_per_stack = 3;
  std::array<double, 6> loss_weights = {0.001, 0.999, 0.999,
                                        0.01,  0.0001, 1.5};
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  static PriorConfig body_default();
  /// filtered=false selects the wider latent used when the training set was
  /// not biomechanically rectified.
  static PriorConfig hand_default(bool filtered = true);

  int input_dim() const { return 9 * input_joints; }
  void validate() const;
};

/// Linear layer; W is stored input-major ({in, out}) so batches multiply
/// without a transpose.
struct Dense {
  Tensor W, b;
};

struct PriorModel {
  PriorConfig config;
  Dense enc1, enc2, enc_mu, enc_logvar;
  Dense dec1, dec2, dec3;

  std::uint64_t train_seed = 0;
  std::string dataset_hash;
  std::string activation = "leaky_relu(0.01)";
  std::vector<double> train_curve, val_curve;

  /// Deterministic initialization: hidden layers Gaussian, heads near zero,
  /// decoder output biased to identity blocks so raw outputs start inside
  /// the projection's differentiable regime.
  static PriorModel init(const PriorConfig& config);

  std::vector<Tensor*> weights();
  std::vector<const Tensor*> weights() const;
  void validate() const;
};

struct LatentCode {
  PriorKind kind = PriorKind::Body;
  std::vector<double> z;
};

struct EncodeResult {
  std::vector<double> mu, log_var;
};

/// Deterministic encoder pass over J_in rotation blocks.
EncodeResult encode(const PriorModel& model, const std::vector<Mat3>& pose);
EncodeResult encode_pose(const PriorModel& model,
                         const std::vector<Vec3>& pose_aa);

/// z = mu + exp(log_var / 2) * noise.
std::vector<double> reparameterize(const std::vector<double>& mu,
                                   const std::vector<double>& log_var,
                                   const std::vector<double>& noise);

struct DecodeResult {
  std::vector<Mat3> raw;
  std::vector<Mat3> rotations;
  std::vector<Vec3> axis_angles;
};

/// Decoder pass: raw 3x3 blocks, their rotation projections, and the
/// corresponding axis-angles. Raises DegenerateMatrixError when a raw block
/// has rank < 2 (untrained or diverged model).
DecodeResult decode(const PriorModel& model, const std::vector<double>& z);

double kl_loss(const std::vector<double>& mu,
               const std::vector<double>& log_var);

/// Sagittal reflection of one axis-angle: (x, -y, -z). Maps left-hand poses
/// into the right-hand frame of the shared hand prior and back.
Vec3 mirror_aa(const Vec3& aa);
std::vector<Vec3> mirror_hand_pose(const std::vector<Vec3>& pose);

/// Parameter handles on a tape; trainable registers inputs, otherwise
/// constants (fitting-time decoding).
struct PriorParamVars {
  Var enc1W, enc1b, enc2W, enc2b, muW, mub, lvW, lvb;
  Var dec1W, dec1b, dec2W, dec2b, dec3W, dec3b;
  std::vector<Var> all;
};

PriorParamVars prior_param_vars(Tape& tape, const PriorModel& model,
                                bool trainable);

/// X {B, 9*J_in} -> (mu {B,d}, log_var {B,d}).
std::pair<Var, Var> encode_graph(Tape& tape, const PriorParamVars& pv, Var x);

/// Z {B,d} -> raw decoder output {B, 9*J_in}.
Var decode_graph_raw(Tape& tape, const PriorParamVars& pv, Var z);

/// Fitting-time decode of a single latent z {d} with model weights held
/// constant; one block triple per joint.
struct PriorDecode {
  std::vector<Var> raw;
  std::vector<Var> projected;
  std::vector<Var> axis_angles;
};

PriorDecode decode_graph(Tape& tape, const PriorModel& model, Var z);

struct PriorSample {
  std::vector<Vec3> pose;
  int sequence = 0;
};

struct PriorLossGraph {
  Var total;
  Var kl, recon, mesh, orth, reg, biomech;
};

/// Full training objective for one batch on one tape. noise is {B, d}.
PriorLossGraph training_loss_graph(Tape& tape, const PriorParamVars& pv,
                                   const PriorConfig& config,
                                   const std::vector<PriorSample>& batch,
                                   const Tensor& noise,
                                   const SkeletonTemplate& tpl,
                                   const RomTable& rom);

struct LossComponents {
  double kl = 0, recon = 0, mesh = 0, orth = 0, reg = 0, biomech = 0;
  double total = 0;
};

LossComponents training_losses(const PriorModel& model,
                               const std::vector<PriorSample>& batch,
                               const Tensor& noise, const SkeletonTemplate& tpl,
                               const RomTable& rom);

struct TrainOptions {
  int max_steps = 2000;
  int batch_size = 64;
  int val_interval = 20;
  /// Validation checks without improvement before stopping early.
  int patience = 15;
  double val_fraction = 0.05;
  double test_fraction = 0.05;
  bool verbose = false;
};

struct TrainReport {
  std::vector<double> train_curve, val_curve;
  int steps = 0;
  int best_val_step = -1;
  double best_val = 0.0;
  std::size_t train_samples = 0, val_samples = 0, test_samples = 0;
};

/// Adam training with a by-sequence train/dev/test split; returns the
/// best-validation snapshot. Raises DivergedTrainingError when the loss
/// leaves the finite (or near-orthogonal) regime.
PriorModel train_prior(const PriorConfig& config,
                       const std::vector<PriorSample>& dataset,
                       const SkeletonTemplate& tpl, const RomTable& rom,
                       const TrainOptions& options = {},
                       TrainReport* report = nullptr);

/// Mean joint-position error of decode(encode mu) against the input poses,
/// over the prior's own joints.
double prior_recon_mpjpe(const PriorModel& model,
                         const std::vector<PriorSample>& samples,
                         const SkeletonTemplate& tpl);

}  // namespace dexfit
