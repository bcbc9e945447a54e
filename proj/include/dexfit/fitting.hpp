#pragma once

#include <array>
#include <string>
#include <vector>

#include "dexfit/biomech.hpp"
#include "dexfit/body_model.hpp"
#include "dexfit/diffgeom.hpp"
#include "dexfit/lbfgs.hpp"
#include "dexfit/priors.hpp"
#include "dexfit/tape.hpp"

namespace dexfit {

enum class Handedness { TwoHanded, OneHandedLeft, OneHandedRight };

const char* handedness_name(Handedness h);
Handedness parse_handedness(const std::string& name);

/// One observed 2D joint: pixel, detector confidence and a static weight.
struct Keypoint {
  int joint = -1;  // template joint index
  double x = 0, y = 0;
  double confidence = 1;  // omega, in [0, 1]
  double weight = 1;      // gamma, > 0
};

struct KeypointFrame {
  int index = 0;
  Handedness handedness = Handedness::TwoHanded;
  std::vector<Keypoint> joints;

  /// Raises DimensionMismatchError when a joint index is out of range or
  /// repeated, a confidence is outside [0, 1], or a weight is not positive.
  void validate(const SkeletonTemplate& tpl) const;
};

/// Solver settings tuned for the frame objective, whose curvature spans
/// pixel-scale translation directions and weakly regularized latent
/// directions. The long history covers that spread; the tolerance is the
/// tightest gradient norm the solve reliably reaches in double precision.
inline LbfgsSettings fit_lbfgs_defaults() {
  LbfgsSettings s;
  s.history = 30;
  s.max_iterations = 2000;
  s.grad_tolerance = 1e-6;
  return s;
}

/// Objective weights and robustifier scales. Term weights default to the
/// published values; the latent regularizers are defaults without a
/// published ablation.
struct FitWeights {
  double lambda_bprior = 1.0;
  double lambda_hprior = 1.0;
  double lambda_pen = 0.1;
  double lambda_temp = 1.0;
  double lambda_bbio = 1.5;
  double lambda_hbio = 1.5;
  double lambda_zbar = 0.01;
  double lambda_eps_left = 0.01;
  double lambda_eps_right = 0.01;
  double sigma_joint = 100.0;  // pixels
  double sigma_prior = 1.0;    // radians
  double sigma_temp = 1.0;     // radians
  /// Additive shoulder/elbow/wrist corrections on top of the decoded body
  /// pose, range-bounded through the biomech term.
  bool limb_refinement = true;
  LbfgsSettings lbfgs = fit_lbfgs_defaults();

  /// Raises DimensionMismatchError on a negative weight or a non-positive
  /// robustifier scale.
  void validate() const;
};

/// Capsule between two template joints, used as a collision proxy.
struct Capsule {
  int joint_a = -1;
  int joint_b = -1;
  double radius = 0;
};

struct CollisionProxies {
  std::vector<Capsule> capsules;

  /// Unordered capsule pairs that do not share an endpoint joint. The
  /// penetration mean runs over this fixed set so the loss stays smooth
  /// when a pair enters or leaves contact.
  std::vector<std::pair<int, int>> candidate_pairs() const;
  void validate(const SkeletonTemplate& tpl) const;
};

/// Forearm, torso and finger-segment capsules sized to keep the rest pose
/// contact-free.
CollisionProxies default_proxies(const SkeletonTemplate& tpl);

/// Geman-McClure: sigma^2 ||e||^2 / (sigma^2 + ||e||^2).
double geman_mcclure(const std::vector<double>& e, double sigma);
Var geman_mcclure(Tape& tape, Var residual, double sigma);

/// Per-joint confidence multipliers in {0, 1}: lower body is always 0; a
/// one-handed frame also zeroes the non-dominant arm and hand.
std::vector<double> decision_mask(Handedness h, const SkeletonTemplate& tpl);
void apply_decision_mask(KeypointFrame& frame, const std::vector<double>& mask);

/// Mean over the frame's joints of gamma * omega * mask * psi(projection
/// error). A joint behind the camera contributes the robustifier cap
/// sigma^2 instead and is reported through `log`.
double joint_loss(const PoseParams& pose, const Camera& cam,
                  const SkeletonTemplate& tpl, const KeypointFrame& frame,
                  const std::vector<double>& mask, double sigma_joint,
                  std::vector<std::string>* log = nullptr);

/// Closest-point distance between segments [a0,a1] and [b0,b1]; optionally
/// reports the minimizing parameters.
double segment_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0,
                        const Vec3& b1, double* s_out = nullptr,
                        double* t_out = nullptr);

/// Mean squared contact depth over the candidate pairs of the proxy set.
double penetration_loss(const PoseParams& pose, const SkeletonTemplate& tpl,
                        const CollisionProxies& proxies);

/// psi_{sigma_temp} of the body-pose difference; zero when prev is null.
double temporal_loss(const PoseParams& pose, const PoseParams* prev,
                     double sigma_temp);

/// psi(decode(zbar) - theta_b_init) + lambda_zbar ||zbar||^2. Raises
/// KindMismatchError unless both the latent and the model are body-kind.
double bprior_loss(const std::vector<Vec3>& theta_b_init,
                   const LatentCode& zbar, const PriorModel& body_prior,
                   double lambda_zbar, double sigma_prior);

/// Sum of the per-hand robustified decode errors plus both latent
/// regularizers; a masked side contributes exactly zero. The left hand is
/// decoded in the shared right-hand frame and mirrored before comparison.
double hprior_loss(const std::vector<Vec3>& left_init,
                   const std::vector<Vec3>& right_init,
                   const LatentCode& eps_left, const LatentCode& eps_right,
                   const PriorModel& hand_prior, double lambda_eps_left,
                   double lambda_eps_right, double sigma_prior,
                   bool left_active, bool right_active);

/// Optimization state: latents, root, and limb refinement deltas
/// (shoulder, elbow, wrist per side).
struct FitState {
  std::vector<double> zbar, eps_left, eps_right;
  Vec3 root_orient = {0, 0, 0};
  Vec3 root_trans = {0, 0, 0};
  std::array<Vec3, 3> delta_left = {Vec3{0, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 0}};
  std::array<Vec3, 3> delta_right = {Vec3{0, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 0}};
};

/// Everything a single-frame solve reads; pointers stay owned by the caller.
struct FitInputs {
  const SkeletonTemplate* tpl = nullptr;
  const Camera* cam = nullptr;
  const PriorModel* body_prior = nullptr;
  const PriorModel* hand_prior = nullptr;
  const RomTable* rom = nullptr;
  const CollisionProxies* proxies = nullptr;
  PoseParams init_pose;                   // supervisory pose, also frozen values
  const PoseParams* prev_pose = nullptr;  // null on the first frame
  KeypointFrame frame;

  void validate() const;
};

/// Raw (unweighted) term values.
struct FitTerms {
  double joint = 0, bprior = 0, hprior = 0, pen = 0, temporal = 0, bbio = 0,
         hbio = 0;
  double weighted_total(const FitWeights& w) const;
};

/// One evaluation of the full objective as tape nodes. Term Vars are
/// invalid when the corresponding weight is zero (the term is skipped).
struct ObjectiveGraph {
  Var total;
  Var joint, bprior, hprior, pen, temporal, bbio, hbio;
  std::vector<Var> vars;  // registered inputs, packing order
  PoseParams pose;        // pose implied by the state
  std::vector<std::string> notes;
};

ObjectiveGraph build_objective(Tape& tape, const FitState& state,
                               const FitInputs& inputs, const FitWeights& weights);

FitTerms read_terms(const ObjectiveGraph& g);

/// Pose implied by a state without building a tape: decoded body plus
/// refinement deltas, decoded (and mirrored) hands, init values on a
/// masked side.
PoseParams assemble_pose(const FitState& state, const FitInputs& inputs,
                         const FitWeights& weights);

struct FitResult {
  PoseParams pose;
  std::vector<double> zbar, eps_left, eps_right;
  FitState state;  // full optimizer state, reusable as warm start
  FitTerms terms;
  double objective = 0;
  std::vector<double> trace;  // accepted objective values, non-increasing
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> notes;
};

/// Torso-only root pre-alignment followed by one full solve. `warm`
/// overrides the encode-based state initialization.
FitResult fit_frame(const FitInputs& inputs, const FitWeights& weights,
                    const FitState* warm = nullptr);

/// Frame-by-frame solve; frame t reuses frame t-1's solution as temporal
/// anchor and warm start. `init` holds one pose for the whole sequence or
/// one per frame. A failed frame keeps the last good pose and is reported
/// non-converged.
std::vector<FitResult> fit_sequence(const std::vector<KeypointFrame>& frames,
                                    const SkeletonTemplate& tpl,
                                    const Camera& cam,
                                    const PriorModel& body_prior,
                                    const PriorModel& hand_prior,
                                    const RomTable& rom,
                                    const CollisionProxies& proxies,
                                    const FitWeights& weights,
                                    const std::vector<PoseParams>& init);

}  // namespace dexfit
