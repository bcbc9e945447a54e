#include "dexfit/priors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <random>

#include "dexfit/diffgeom.hpp"
#include "dexfit/rotations.hpp"

namespace dexfit {

namespace {

constexpr double kLeakySlope = 0.01;

Var leaky(Var x) { return vmax(x, mul(x, kLeakySlope)); }

Tensor gaussian(std::mt19937_64& rng, std::vector<std::int64_t> shape,
                double scale) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = scale * g(rng);
  return t;
}

/// Template joint index owning prior joint j.
int prior_joint_to_template(const PriorConfig& cfg, const SkeletonTemplate& tpl,
                            int j) {
  return cfg.kind == PriorKind::Body ? 1 + j : tpl.right_hand_start() + j;
}

/// ROM entries constrained by this prior, as (prior joint, entry) pairs.
std::vector<std::pair<int, const RomEntry*>> constrained_entries(
    const PriorConfig& cfg, const SkeletonTemplate& tpl, const RomTable& rom) {
  std::vector<std::pair<int, const RomEntry*>> out;
  if (cfg.kind == PriorKind::Body) {
    for (const RomEntry& e : rom.body) {
      const int k = tpl.find_joint(e.joint);
      if (k < 1 || k >= tpl.left_hand_start())
        throw DimensionMismatchError("prior biomech: ROM joint '" + e.joint +
                                     "' is not a body joint");
      out.push_back({k - 1, &e});
    }
  } else {
    if (static_cast<int>(rom.right_hand.size()) != cfg.input_joints)
      throw DimensionMismatchError("prior biomech: hand ROM size mismatch");
    for (int j = 0; j < cfg.input_joints; ++j)
      out.push_back({j, &rom.right_hand[static_cast<std::size_t>(j)]});
  }
  return out;
}

void require_sample(const PriorConfig& cfg, const PriorSample& s) {
  if (static_cast<int>(s.pose.size()) != cfg.input_joints)
    throw DimensionMismatchError(
        "prior sample has " + std::to_string(s.pose.size()) + " joints, " +
        "config expects " + std::to_string(cfg.input_joints));
}

std::vector<double> dense_forward(const Dense& layer,
                                  const std::vector<double>& x) {
  const std::int64_t in = layer.W.rows(), out = layer.W.cols();
  std::vector<double> y(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) y[static_cast<std::size_t>(o)] = layer.b.at(o);
  for (std::int64_t i = 0; i < in; ++i) {
    const double xi = x[static_cast<std::size_t>(i)];
    for (std::int64_t o = 0; o < out; ++o)
      y[static_cast<std::size_t>(o)] += xi * layer.W.at(i, o);
  }
  return y;
}

void leaky_inplace(std::vector<double>& v) {
  for (double& x : v) x = x > 0.0 ? x : kLeakySlope * x;
}

std::string hash_dataset(const std::vector<PriorSample>& dataset) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(dataset.size());
  for (const PriorSample& s : dataset) {
    mix(static_cast<std::uint64_t>(s.sequence));
    for (const Vec3& aa : s.pose)
      for (double d : aa) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        mix(bits);
      }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

const char* prior_kind_name(PriorKind kind) {
  return kind == PriorKind::Body ? "body" : "hand";
}

PriorKind parse_prior_kind(const std::string& name) {
  if (name == "body") return PriorKind::Body;
  if (name == "hand") return PriorKind::Hand;
  throw ParseError("unknown prior kind '" + name + "'");
}

PriorConfig PriorConfig::body_default() { return PriorConfig{}; }

PriorConfig PriorConfig::hand_default(bool filtered) {
  PriorConfig c;
  c.kind = PriorKind::Hand;
  c.input_joints = 15;
  c.latent_dim = filtered ? 23 : 24;
  c.loss_weights = {0.0001, 0.999, 0.999, 0.01, 0.0001, 1.5};
  return c;
}

void PriorConfig::validate() const {
  if (latent_dim < 1) throw DimensionMismatchError("prior: latent_dim < 1");
  if (input_joints < 1 || hidden < 1)
    throw DimensionMismatchError("prior: non-positive layer size");
  if (layers_per_stack != 3)
    throw DimensionMismatchError("prior: only 3-layer stacks are supported");
  for (double w : loss_weights)
    if (!(w >= 0.0)) throw DimensionMismatchError("prior: negative loss weight");
  if (!(learning_rate > 0.0))
    throw DimensionMismatchError("prior: learning rate must be positive");
}

PriorModel PriorModel::init(const PriorConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  PriorModel m;
  m.config = config;
  const int in = config.input_dim(), h = config.hidden, d = config.latent_dim;

  auto dense = [&](int rows, int cols, double scale) {
    Dense l;
    l.W = gaussian(rng, {rows, cols}, scale);
    l.b = Tensor::zeros({cols});
    return l;
  };
  m.enc1 = dense(in, h, 1.0 / std::sqrt(static_cast<double>(in)));
  m.enc2 = dense(h, h, 1.0 / std::sqrt(static_cast<double>(h)));
  m.enc_mu = dense(h, d, 1e-3);
  m.enc_logvar = dense(h, d, 1e-3);
  m.dec1 = dense(d, h, 1.0 / std::sqrt(static_cast<double>(d)));
  m.dec2 = dense(h, h, 1.0 / std::sqrt(static_cast<double>(h)));
  m.dec3 = dense(h, in, 1e-4);
  for (int j = 0; j < config.input_joints; ++j)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        m.dec3.b.at(9 * j + 3 * r + c) = r == c ? 1.0 : 0.0;
  return m;
}

std::vector<Tensor*> PriorModel::weights() {
  return {&enc1.W, &enc1.b, &enc2.W,      &enc2.b,      &enc_mu.W, &enc_mu.b,
          &enc_logvar.W, &enc_logvar.b, &dec1.W, &dec1.b, &dec2.W, &dec2.b,
          &dec3.W, &dec3.b};
}

std::vector<const Tensor*> PriorModel::weights() const {
  auto* self = const_cast<PriorModel*>(this);
  std::vector<const Tensor*> out;
  for (Tensor* t : self->weights()) out.push_back(t);
  return out;
}

void PriorModel::validate() const {
  config.validate();
  const std::int64_t in = config.input_dim(), h = config.hidden,
                     d = config.latent_dim;
  auto expect = [](const Tensor& t, std::vector<std::int64_t> shape,
                   const char* name) {
    if (t.shape != shape)
      throw ShapeMismatchError(std::string("prior weight ") + name +
                               " has shape " + Tensor::shape_str(t.shape) +
                               ", expected " + Tensor::shape_str(shape));
    for (double v : t.data)
      if (!std::isfinite(v))
        throw NonFiniteValueError(std::string("prior weight ") + name);
  };
  expect(enc1.W, {in, h}, "enc1.W");
  expect(enc1.b, {h}, "enc1.b");
  expect(enc2.W, {h, h}, "enc2.W");
  expect(enc2.b, {h}, "enc2.b");
  expect(enc_mu.W, {h, d}, "enc_mu.W");
  expect(enc_mu.b, {d}, "enc_mu.b");
  expect(enc_logvar.W, {h, d}, "enc_logvar.W");
  expect(enc_logvar.b, {d}, "enc_logvar.b");
  expect(dec1.W, {d, h}, "dec1.W");
  expect(dec1.b, {h}, "dec1.b");
  expect(dec2.W, {h, h}, "dec2.W");
  expect(dec2.b, {h}, "dec2.b");
  expect(dec3.W, {h, in}, "dec3.W");
  expect(dec3.b, {in}, "dec3.b");
}

EncodeResult encode(const PriorModel& model, const std::vector<Mat3>& pose) {
  if (static_cast<int>(pose.size()) != model.config.input_joints)
    throw ShapeMismatchError("encode: pose has " +
                             std::to_string(pose.size()) + " joints, model " +
                             std::to_string(model.config.input_joints));
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(model.config.input_dim()));
  for (const Mat3& R : pose) x.insert(x.end(), R.begin(), R.end());
  std::vector<double> h1 = dense_forward(model.enc1, x);
  leaky_inplace(h1);
  std::vector<double> h2 = dense_forward(model.enc2, h1);
  leaky_inplace(h2);
  EncodeResult out;
  out.mu = dense_forward(model.enc_mu, h2);
  out.log_var = dense_forward(model.enc_logvar, h2);
  return out;
}

EncodeResult encode_pose(const PriorModel& model,
                         const std::vector<Vec3>& pose_aa) {
  std::vector<Mat3> rots;
  rots.reserve(pose_aa.size());
  for (const Vec3& aa : pose_aa) rots.push_back(aa_to_matrix(aa));
  return encode(model, rots);
}

std::vector<double> reparameterize(const std::vector<double>& mu,
                                   const std::vector<double>& log_var,
                                   const std::vector<double>& noise) {
  if (mu.size() != log_var.size() || mu.size() != noise.size())
    throw ShapeMismatchError("reparameterize: size mismatch");
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i)
    z[i] = mu[i] + std::exp(0.5 * log_var[i]) * noise[i];
  return z;
}

DecodeResult decode(const PriorModel& model, const std::vector<double>& z) {
  if (static_cast<int>(z.size()) != model.config.latent_dim)
    throw ShapeMismatchError("decode: |z| = " + std::to_string(z.size()) +
                             ", model latent_dim = " +
                             std::to_string(model.config.latent_dim));
  std::vector<double> h1 = dense_forward(model.dec1, z);
  leaky_inplace(h1);
  std::vector<double> h2 = dense_forward(model.dec2, h1);
  leaky_inplace(h2);
  const std::vector<double> raw = dense_forward(model.dec3, h2);

  DecodeResult out;
  const int J = model.config.input_joints;
  out.raw.resize(static_cast<std::size_t>(J));
  out.rotations.resize(static_cast<std::size_t>(J));
  out.axis_angles.resize(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    Mat3& R = out.raw[static_cast<std::size_t>(j)];
    for (int i = 0; i < 9; ++i)
      R[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(9 * j + i)];
    out.rotations[static_cast<std::size_t>(j)] = project_to_rotation(R);
    out.axis_angles[static_cast<std::size_t>(j)] =
        matrix_to_aa(out.rotations[static_cast<std::size_t>(j)]);
  }
  return out;
}

double kl_loss(const std::vector<double>& mu,
               const std::vector<double>& log_var) {
  if (mu.size() != log_var.size())
    throw ShapeMismatchError("kl_loss: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    s += mu[i] * mu[i] + std::exp(log_var[i]) - 1.0 - log_var[i];
  return 0.5 * s;
}

Vec3 mirror_aa(const Vec3& aa) { return {aa[0], -aa[1], -aa[2]}; }

std::vector<Vec3> mirror_hand_pose(const std::vector<Vec3>& pose) {
  std::vector<Vec3> out;
  out.reserve(pose.size());
  for (const Vec3& aa : pose) out.push_back(mirror_aa(aa));
  return out;
}

PriorParamVars prior_param_vars(Tape& tape, const PriorModel& model,
                                bool trainable) {
  auto reg = [&](const Tensor& t) {
    return trainable ? tape.input(t) : tape.constant(t);
  };
  PriorParamVars pv;
  pv.enc1W = reg(model.enc1.W);
  pv.enc1b = reg(model.enc1.b);
  pv.enc2W = reg(model.enc2.W);
  pv.enc2b = reg(model.enc2.b);
  pv.muW = reg(model.enc_mu.W);
  pv.mub = reg(model.enc_mu.b);
  pv.lvW = reg(model.enc_logvar.W);
  pv.lvb = reg(model.enc_logvar.b);
  pv.dec1W = reg(model.dec1.W);
  pv.dec1b = reg(model.dec1.b);
  pv.dec2W = reg(model.dec2.W);
  pv.dec2b = reg(model.dec2.b);
  pv.dec3W = reg(model.dec3.W);
  pv.dec3b = reg(model.dec3.b);
  pv.all = {pv.enc1W, pv.enc1b, pv.enc2W, pv.enc2b, pv.muW,   pv.mub,
            pv.lvW,   pv.lvb,   pv.dec1W, pv.dec1b, pv.dec2W, pv.dec2b,
            pv.dec3W, pv.dec3b};
  return pv;
}

std::pair<Var, Var> encode_graph(Tape& tape, const PriorParamVars& pv,
                                 Var x) {
  (void)tape;
  Var h1 = leaky(add_rows(matmul(x, pv.enc1W), pv.enc1b));
  Var h2 = leaky(add_rows(matmul(h1, pv.enc2W), pv.enc2b));
  return {add_rows(matmul(h2, pv.muW), pv.mub),
          add_rows(matmul(h2, pv.lvW), pv.lvb)};
}

Var decode_graph_raw(Tape& tape, const PriorParamVars& pv, Var z) {
  (void)tape;
  Var h1 = leaky(add_rows(matmul(z, pv.dec1W), pv.dec1b));
  Var h2 = leaky(add_rows(matmul(h1, pv.dec2W), pv.dec2b));
  return add_rows(matmul(h2, pv.dec3W), pv.dec3b);
}

PriorDecode decode_graph(Tape& tape, const PriorModel& model, Var z) {
  if (!z.valid() ||
      z.value().shape !=
          std::vector<std::int64_t>{model.config.latent_dim})
    throw ShapeMismatchError("decode_graph: z must have shape {latent_dim}");
  const PriorParamVars pv = prior_param_vars(tape, model, false);
  const Var raw =
      decode_graph_raw(tape, pv, reshape(z, {1, model.config.latent_dim}));
  PriorDecode out;
  for (int j = 0; j < model.config.input_joints; ++j) {
    Var block = reshape(slice(raw, {0, 9 * j}, {1, 9}), {3, 3});
    out.raw.push_back(block);
    out.projected.push_back(project_rotation(block));
    out.axis_angles.push_back(rotation_log(out.projected.back()));
  }
  return out;
}

PriorLossGraph training_loss_graph(Tape& tape, const PriorParamVars& pv,
                                   const PriorConfig& config,
                                   const std::vector<PriorSample>& batch,
                                   const Tensor& noise,
                                   const SkeletonTemplate& tpl,
                                   const RomTable& rom) {
  config.validate();
  if (batch.empty()) throw DimensionMismatchError("prior loss: empty batch");
  const int B = static_cast<int>(batch.size());
  const int J = config.input_joints;
  const int d = config.latent_dim;
  if (noise.shape != std::vector<std::int64_t>{B, d})
    throw ShapeMismatchError("prior loss: noise must be {batch, latent_dim}");
  for (const PriorSample& s : batch) require_sample(config, s);

  // Encoder input and recon targets (canonical axis-angles).
  Tensor X = Tensor::zeros({B, 9 * J});
  std::vector<Vec3> targets(static_cast<std::size_t>(B) *
                            static_cast<std::size_t>(J));
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < J; ++j) {
      const Vec3 aa = batch[static_cast<std::size_t>(i)]
                          .pose[static_cast<std::size_t>(j)];
      const Mat3 R = aa_to_matrix(aa);
      for (int t = 0; t < 9; ++t)
        X.at(i, 9 * j + t) = R[static_cast<std::size_t>(t)];
      targets[static_cast<std::size_t>(i * J + j)] = canonicalize_aa(aa);
    }

  auto [mu, lv] = encode_graph(tape, pv, tape.constant(X));
  const Var z =
      add(mu, mul(exp(mul(lv, 0.5)), tape.constant(noise)));
  const Var raw = decode_graph_raw(tape, pv, z);

  // KL: 0.5 sum(mu^2 + sigma^2 - 1 - log sigma^2), mean over the batch.
  const Var kl = mul(
      sub(add(sum(square(mu)), sum(exp(lv))), add(sum(lv), double(B * d))),
      0.5 / B);

  std::vector<Vec3> rest;
  std::vector<double> shaped;
  shaped_template(tpl, std::vector<double>(tpl.shape_dim, 0.0), shaped, rest);
  const Var ident = tape.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const auto biomech_joints = constrained_entries(config, tpl, rom);

  Var recon, mesh, orth, biomech;
  auto acc = [](Var& dst, Var term) {
    dst = dst.valid() ? add(dst, term) : term;
  };

  for (int i = 0; i < B; ++i) {
    std::vector<Var> rots(static_cast<std::size_t>(tpl.joint_count()));
    std::vector<Var> blocks(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
      Var block = reshape(slice(raw, {i, 9 * j}, {1, 9}), {3, 3});
      acc(orth, sum(square(sub(matmul(block, transpose(block)), ident))));
      Var proj = project_rotation(block);
      blocks[static_cast<std::size_t>(j)] = proj;
      rots[static_cast<std::size_t>(prior_joint_to_template(config, tpl, j))] =
          proj;
      const Vec3& t = targets[static_cast<std::size_t>(i * J + j)];
      acc(recon, sum(square(sub(rotation_log(proj),
                                tape.constant(Tensor({3}, {t[0], t[1],
                                                           t[2]}))))));
    }

    // Vertex fidelity against the reference-skinned input pose.
    PoseParams in_pose = PoseParams::zeros(tpl);
    for (int j = 0; j < J; ++j)
      in_pose.joint_rotation(prior_joint_to_template(config, tpl, j), tpl) =
          batch[static_cast<std::size_t>(i)].pose[static_cast<std::size_t>(j)];
    const std::vector<double> target_verts = skin_vertices(tpl, in_pose);
    const std::int64_t N = tpl.vertex_count;
    Tensor tx = Tensor::zeros({N, 1}), ty = Tensor::zeros({N, 1}),
           tz = Tensor::zeros({N, 1});
    for (std::int64_t v = 0; v < N; ++v) {
      tx.at(v, 0) = target_verts[static_cast<std::size_t>(3 * v)];
      ty.at(v, 0) = target_verts[static_cast<std::size_t>(3 * v + 1)];
      tz.at(v, 0) = target_verts[static_cast<std::size_t>(3 * v + 2)];
    }
    DiffFk fk = build_fk(tape, tpl, rest, rots, Var{});
    DiffVertices verts = lbs_vertices(tape, tpl, shaped, fk);
    acc(mesh, add(add(sum(square(sub(verts.x, tape.constant(tx)))),
                      sum(square(sub(verts.y, tape.constant(ty))))),
                  sum(square(sub(verts.z, tape.constant(tz))))));

    for (const auto& [pj, entry] : biomech_joints) {
      Var euler = euler_angles(blocks[static_cast<std::size_t>(pj)],
                               entry->convention);
      Tensor lo = Tensor::zeros({3}), hi = Tensor::zeros({3});
      for (int a = 0; a < 3; ++a) {
        lo.at(a) = entry->axes[static_cast<std::size_t>(a)].min_rad;
        hi.at(a) = entry->axes[static_cast<std::size_t>(a)].max_rad;
      }
      acc(biomech,
          add(sum(square(hinge(sub(euler, tape.constant(hi))))),
              sum(square(hinge(sub(tape.constant(lo), euler))))));
    }
  }

  Var reg;
  for (const Var& w : pv.all) acc(reg, sum(square(w)));

  PriorLossGraph out;
  out.kl = kl;
  out.recon = mul(recon, 1.0 / B);
  out.mesh = mul(mesh, 1.0 / B);
  out.orth = mul(orth, 1.0 / B);
  out.reg = reg;
  out.biomech = biomech.valid() ? mul(biomech, 1.0 / B)
                                : tape.constant(Tensor::scalar(0.0));
  const auto& c = config.loss_weights;
  out.total = add(add(add(mul(out.kl, c[0]), mul(out.recon, c[1])),
                      add(mul(out.mesh, c[2]), mul(out.orth, c[3]))),
                  add(mul(out.reg, c[4]), mul(out.biomech, c[5])));
  return out;
}

LossComponents training_losses(const PriorModel& model,
                               const std::vector<PriorSample>& batch,
                               const Tensor& noise, const SkeletonTemplate& tpl,
                               const RomTable& rom) {
  Tape tape;
  const PriorParamVars pv = prior_param_vars(tape, model, false);
  const PriorLossGraph g =
      training_loss_graph(tape, pv, model.config, batch, noise, tpl, rom);
  LossComponents out;
  out.kl = g.kl.value().scalar_value();
  out.recon = g.recon.value().scalar_value();
  out.mesh = g.mesh.value().scalar_value();
  out.orth = g.orth.value().scalar_value();
  out.reg = g.reg.value().scalar_value();
  out.biomech = g.biomech.value().scalar_value();
  out.total = g.total.value().scalar_value();
  return out;
}

namespace {

struct AdamState {
  std::vector<Tensor> m, v;
  int t = 0;
};

void adam_step(PriorModel& model, const std::vector<Tensor>& grads,
               AdamState& state, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto weights = model.weights();
  if (state.m.empty()) {
    for (Tensor* w : weights) {
      state.m.push_back(Tensor::zeros(w->shape));
      state.v.push_back(Tensor::zeros(w->shape));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(b1, state.t);
  const double c2 = 1.0 - std::pow(b2, state.t);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor& w = *weights[i];
    const Tensor& g = grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < w.data.size(); ++k) {
      m.data[k] = b1 * m.data[k] + (1.0 - b1) * g.data[k];
      v.data[k] = b2 * v.data[k] + (1.0 - b2) * g.data[k] * g.data[k];
      w.data[k] -= lr * (m.data[k] / c1) / (std::sqrt(v.data[k] / c2) + eps);
    }
  }
}

std::vector<Tensor> snapshot(const PriorModel& model) {
  std::vector<Tensor> out;
  for (const Tensor* w : model.weights()) out.push_back(*w);
  return out;
}

void restore(PriorModel& model, const std::vector<Tensor>& snap) {
  auto weights = model.weights();
  for (std::size_t i = 0; i < weights.size(); ++i) *weights[i] = snap[i];
}

}  // namespace

PriorModel train_prior(const PriorConfig& config,
                       const std::vector<PriorSample>& dataset,
                       const SkeletonTemplate& tpl, const RomTable& rom,
                       const TrainOptions& options, TrainReport* report) {
  config.validate();
  if (dataset.empty())
    throw DimensionMismatchError("train_prior: empty dataset");
  for (const PriorSample& s : dataset) require_sample(config, s);

  // Split by sequence id so no sequence straddles train/dev/test.
  std::vector<int> seqs;
  for (const PriorSample& s : dataset) seqs.push_back(s.sequence);
  std::sort(seqs.begin(), seqs.end());
  seqs.erase(std::unique(seqs.begin(), seqs.end()), seqs.end());
  const std::size_t n_seq = seqs.size();
  std::size_t n_test =
      static_cast<std::size_t>(options.test_fraction * double(n_seq));
  std::size_t n_val =
      static_cast<std::size_t>(options.val_fraction * double(n_seq));
  if (n_seq >= 3) {
    n_test = std::max<std::size_t>(n_test, 1);
    n_val = std::max<std::size_t>(n_val, 1);
  }
  const std::size_t n_train = n_seq - n_val - n_test;
  auto seq_bucket = [&](int seq) {
    const std::size_t pos = static_cast<std::size_t>(
        std::lower_bound(seqs.begin(), seqs.end(), seq) - seqs.begin());
    if (pos < n_train) return 0;
    if (pos < n_train + n_val) return 1;
    return 2;
  };
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int b = seq_bucket(dataset[i].sequence);
    (b == 0 ? train_idx : b == 1 ? val_idx : test_idx).push_back(i);
  }
  if (train_idx.empty())
    throw DimensionMismatchError("train_prior: empty training split");
  // Tiny datasets may lack dev sequences; validate on train then.
  const std::vector<std::size_t>& val_pool =
      val_idx.empty() ? train_idx : val_idx;

  PriorModel model = PriorModel::init(config);
  model.train_seed = config.seed;
  model.dataset_hash = hash_dataset(dataset);

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);

  AdamState adam;
  std::vector<Tensor> best = snapshot(model);
  double best_val = std::numeric_limits<double>::infinity();
  int best_step = -1;
  int stale = 0;

  const int B = std::min<int>(options.batch_size,
                              static_cast<int>(train_idx.size()));

  auto validation_loss = [&]() {
    const Tensor zero_noise =
        Tensor::zeros({static_cast<std::int64_t>(1), config.latent_dim});
    double total = 0.0;
    std::size_t count = 0;
    std::vector<PriorSample> chunk;
    for (std::size_t idx : val_pool) {
      chunk.push_back(dataset[idx]);
      if (static_cast<int>(chunk.size()) == B || count + chunk.size() ==
                                                     val_pool.size()) {
        const Tensor nz = Tensor::zeros(
            {static_cast<std::int64_t>(chunk.size()), config.latent_dim});
        const LossComponents c =
            training_losses(model, chunk, nz, tpl, rom);
        total += c.total * double(chunk.size());
        count += chunk.size();
        chunk.clear();
      }
    }
    (void)zero_noise;
    return total / double(count);
  };

  int steps_run = 0;
  try {
    for (int step = 0; step < options.max_steps; ++step) {
      std::vector<PriorSample> batch;
      batch.reserve(static_cast<std::size_t>(B));
      for (int i = 0; i < B; ++i)
        batch.push_back(dataset[train_idx[pick(rng)]]);
      Tensor noise = Tensor::zeros({B, config.latent_dim});
      for (double& v : noise.data) v = gauss(rng);

      Tape tape;
      const PriorParamVars pv = prior_param_vars(tape, model, true);
      const PriorLossGraph g =
          training_loss_graph(tape, pv, config, batch, noise, tpl, rom);
      const double total = g.total.value().scalar_value();
      model.train_curve.push_back(total);
      const std::vector<Tensor> grads = tape.gradient(g.total, pv.all);
      adam_step(model, grads, adam, config.learning_rate);
      steps_run = step + 1;

      if ((step + 1) % options.val_interval == 0 ||
          step + 1 == options.max_steps) {
        const double vl = validation_loss();
        model.val_curve.push_back(vl);
        if (options.verbose)
          std::fprintf(stderr, "step %d train %.6f val %.6f\n", step + 1,
                       total, vl);
        if (vl < best_val - 1e-12) {
          best_val = vl;
          best = snapshot(model);
          best_step = step + 1;
          stale = 0;
        } else if (++stale >= options.patience) {
          break;
        }
      }
    }
  } catch (const NonFiniteValueError& e) {
    throw DivergedTrainingError(std::string("training diverged: ") +
                                e.what());
  } catch (const NotARotationError& e) {
    throw DivergedTrainingError(
        std::string("decoder left the near-orthogonal regime: ") + e.what());
  } catch (const DegenerateMatrixError& e) {
    throw DivergedTrainingError(std::string("degenerate decoder output: ") +
                                e.what());
  }

  restore(model, best);
  if (report) {
    report->train_curve = model.train_curve;
    report->val_curve = model.val_curve;
    report->steps = steps_run;
    report->best_val_step = best_step;
    report->best_val = best_val;
    report->train_samples = train_idx.size();
    report->val_samples = val_idx.size();
    report->test_samples = test_idx.size();
  }
  return model;
}

double prior_recon_mpjpe(const PriorModel& model,
                         const std::vector<PriorSample>& samples,
                         const SkeletonTemplate& tpl) {
  if (samples.empty()) return 0.0;
  const PriorConfig& cfg = model.config;
  double total = 0.0;
  std::size_t count = 0;
  for (const PriorSample& s : samples) {
    require_sample(cfg, s);
    const EncodeResult enc = encode_pose(model, s.pose);
    const DecodeResult dec = decode(model, enc.mu);

    PoseParams in_pose = PoseParams::zeros(tpl);
    PoseParams out_pose = PoseParams::zeros(tpl);
    for (int j = 0; j < cfg.input_joints; ++j) {
      const int k = prior_joint_to_template(cfg, tpl, j);
      in_pose.joint_rotation(k, tpl) = s.pose[static_cast<std::size_t>(j)];
      out_pose.joint_rotation(k, tpl) =
          dec.axis_angles[static_cast<std::size_t>(j)];
    }
    const FkResult fin = forward_kinematics(tpl, in_pose);
    const FkResult fout = forward_kinematics(tpl, out_pose);
    for (int j = 0; j < cfg.input_joints; ++j) {
      const int k = prior_joint_to_template(cfg, tpl, j);
      const Vec3& a = fin.joints[static_cast<std::size_t>(k)];
      const Vec3& b = fout.joints[static_cast<std::size_t>(k)];
      total += std::sqrt((a[0] - b[0]) * (a[0] - b[0]) +
                         (a[1] - b[1]) * (a[1] - b[1]) +
                         (a[2] - b[2]) * (a[2] - b[2]));
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace dexfit
