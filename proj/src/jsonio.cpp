#include "dexfit/jsonio.hpp"

#include <cmath>
#include <fstream>

namespace dexfit {

namespace {

constexpr int kTemplateSchema = 1;
constexpr int kPoseSchema = 1;
constexpr int kCameraSchema = 1;

void require(bool ok, const std::string& what) {
  if (!ok) throw ParseError("json: " + what);
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("json: missing field '") + key + "'");
  return *it;
}

void check_schema(const json& j, int version, const char* kind) {
  const auto& v = field(j, "schema_version");
  require(v.is_number_integer() && v.get<int>() == version,
          std::string(kind) + ": unsupported schema_version");
}

template <typename T>
std::vector<T> vec_of(const json& j, const char* key) {
  const auto& a = field(j, key);
  require(a.is_array(), std::string(key) + " must be an array");
  return a.get<std::vector<T>>();
}

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 vec3_from(const json& a, const char* what) {
  require(a.is_array() && a.size() == 3, std::string(what) + " must have 3 entries");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace

json template_to_json(const SkeletonTemplate& tpl) {
  json joints = json::array();
  for (int k = 0; k < tpl.joint_count(); ++k) {
    joints.push_back({{"name", tpl.joint_names[static_cast<std::size_t>(k)]},
                      {"parent", tpl.parents[static_cast<std::size_t>(k)]},
                      {"offset", vec3_json(tpl.rest_offsets[static_cast<std::size_t>(k)])}});
  }
  json weights = json::array();
  for (std::int64_t v = 0; v < tpl.vertex_count; ++v)
    for (int s = 0; s < 4; ++s)
      if (tpl.weight_joints[4 * v + s] >= 0)
        weights.push_back(json::array(
            {v, tpl.weight_joints[4 * v + s], tpl.weight_values[4 * v + s]}));
  json regressor = json::array();
  for (int k = 0; k < tpl.joint_count(); ++k)
    for (std::int64_t n = 0; n < tpl.vertex_count; ++n) {
      const double w = tpl.joint_regressor[static_cast<std::size_t>(k) * tpl.vertex_count + n];
      if (w != 0.0) regressor.push_back(json::array({k, n, w}));
    }
  json regions;
  for (const auto& [name, region] : tpl.regions)
    regions[name] = {{"joints", region.joints}, {"vertices", region.vertices}};
  json groups;
  for (const auto& [name, g] : tpl.joint_groups) groups[name] = g;
  return json{{"schema_version", kTemplateSchema},
              {"body_joint_count", tpl.body_joint_count},
              {"hand_joint_count", tpl.hand_joint_count},
              {"shape_dim", tpl.shape_dim},
              {"vertex_count", tpl.vertex_count},
              {"seed", tpl.seed},
              {"joints", joints},
              {"vertices", tpl.vertices},
              {"skin_weights", weights},
              {"shape_dirs", tpl.shape_dirs},
              {"joint_regressor", regressor},
              {"regions", regions},
              {"joint_groups", groups}};
}

SkeletonTemplate template_from_json(const json& j) {
  check_schema(j, kTemplateSchema, "template");
  SkeletonTemplate tpl;
  tpl.body_joint_count = field(j, "body_joint_count").get<int>();
  tpl.hand_joint_count = field(j, "hand_joint_count").get<int>();
  tpl.shape_dim = field(j, "shape_dim").get<int>();
  tpl.vertex_count = field(j, "vertex_count").get<std::int64_t>();
  tpl.seed = field(j, "seed").get<unsigned>();
  for (const auto& joint : field(j, "joints")) {
    tpl.joint_names.push_back(field(joint, "name").get<std::string>());
    tpl.parents.push_back(field(joint, "parent").get<int>());
    tpl.rest_offsets.push_back(vec3_from(field(joint, "offset"), "joint offset"));
  }
  tpl.vertices = vec_of<double>(j, "vertices");
  tpl.shape_dirs = vec_of<double>(j, "shape_dirs");
  const int K = tpl.joint_count();
  tpl.weight_joints.assign(static_cast<std::size_t>(tpl.vertex_count) * 4, -1);
  tpl.weight_values.assign(static_cast<std::size_t>(tpl.vertex_count) * 4, 0.0);
  std::vector<int> slot(static_cast<std::size_t>(tpl.vertex_count), 0);
  for (const auto& t : field(j, "skin_weights")) {
    require(t.is_array() && t.size() == 3, "skin weight triplet malformed");
    const std::int64_t v = t[0].get<std::int64_t>();
    require(v >= 0 && v < tpl.vertex_count, "skin weight vertex out of range");
    const int s = slot[static_cast<std::size_t>(v)]++;
    require(s < 4, "more than 4 weights on one vertex");
    tpl.weight_joints[4 * v + s] = t[1].get<int>();
    tpl.weight_values[4 * v + s] = t[2].get<double>();
  }
  tpl.joint_regressor.assign(static_cast<std::size_t>(K) * tpl.vertex_count, 0.0);
  for (const auto& t : field(j, "joint_regressor")) {
    require(t.is_array() && t.size() == 3, "regressor triplet malformed");
    const int k = t[0].get<int>();
    const std::int64_t n = t[1].get<std::int64_t>();
    require(k >= 0 && k < K && n >= 0 && n < tpl.vertex_count,
            "regressor index out of range");
    tpl.joint_regressor[static_cast<std::size_t>(k) * tpl.vertex_count + n] =
        t[2].get<double>();
  }
  for (const auto& [name, r] : field(j, "regions").items()) {
    Region region;
    region.joints = field(r, "joints").get<std::vector<int>>();
    region.vertices = field(r, "vertices").get<std::vector<std::int64_t>>();
    tpl.regions[name] = region;
  }
  for (const auto& [name, g] : field(j, "joint_groups").items())
    tpl.joint_groups[name] = g.get<std::vector<int>>();
  tpl.validate();
  return tpl;
}

json pose_to_json(const PoseParams& pose) {
  auto aa_list = [](const std::vector<Vec3>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(json::array({x[0], x[1], x[2]}));
    return a;
  };
  return json{{"schema_version", kPoseSchema},
              {"root_orient", vec3_json(pose.root_orient)},
              {"root_trans", vec3_json(pose.root_trans)},
              {"body_pose", aa_list(pose.body_pose)},
              {"left_hand_pose", aa_list(pose.left_hand_pose)},
              {"right_hand_pose", aa_list(pose.right_hand_pose)},
              {"shape", pose.shape}};
}

PoseParams pose_from_json(const json& j, const SkeletonTemplate& tpl) {
  check_schema(j, kPoseSchema, "pose");
  PoseParams p = PoseParams::zeros(tpl);
  p.root_orient = vec3_from(field(j, "root_orient"), "root_orient");
  p.root_trans = vec3_from(field(j, "root_trans"), "root_trans");
  auto read_aa = [&](const char* key, std::vector<Vec3>& out, int want) {
    const auto& a = field(j, key);
    require(a.is_array() && static_cast<int>(a.size()) == want,
            std::string(key) + " has wrong joint count");
    out.clear();
    for (const auto& x : a) out.push_back(vec3_from(x, key));
  };
  read_aa("body_pose", p.body_pose, tpl.body_joint_count);
  read_aa("left_hand_pose", p.left_hand_pose, tpl.hand_joint_count);
  read_aa("right_hand_pose", p.right_hand_pose, tpl.hand_joint_count);
  p.shape = vec_of<double>(j, "shape");
  if (static_cast<int>(p.shape.size()) != tpl.shape_dim)
    throw ParseError("pose: shape length mismatch");
  return p;
}

json camera_to_json(const Camera& cam) {
  return json{{"schema_version", kCameraSchema},
              {"fx", cam.fx},
              {"fy", cam.fy},
              {"cx", cam.cx},
              {"cy", cam.cy},
              {"rotation", cam.rotation},
              {"translation", vec3_json(cam.translation)}};
}

Camera camera_from_json(const json& j) {
  check_schema(j, kCameraSchema, "camera");
  Camera cam;
  cam.fx = field(j, "fx").get<double>();
  cam.fy = field(j, "fy").get<double>();
  cam.cx = field(j, "cx").get<double>();
  cam.cy = field(j, "cy").get<double>();
  if (cam.fx <= 0 || cam.fy <= 0) throw ParseError("camera: focal must be positive");
  const auto& r = field(j, "rotation");
  require(r.is_array() && r.size() == 9, "camera rotation must have 9 entries");
  for (int i = 0; i < 9; ++i) cam.rotation[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)].get<double>();
  if (!is_rotation(cam.rotation, 1e-6))
    throw NotARotationError("camera: extrinsic rotation invalid");
  cam.translation = vec3_from(field(j, "translation"), "camera translation");
  return cam;
}

namespace {

constexpr int kRomSchema = 1;
constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

double round_deg(double v) { return std::round(v * 1e9) / 1e9; }

json rom_pair_json(const RomEntry& right, const std::string& left_name) {
  json axes = json::array();
  for (const RomAxis& a : right.axes)
    axes.push_back({{"label", a.label},
                    {"positive_deg", round_deg(a.max_rad * kRadToDeg)},
                    {"negative_deg", round_deg(-a.min_rad * kRadToDeg)},
                    {"mirror", a.mirror}});
  return json{{"joint_pair", json::array({left_name, right.joint})},
              {"convention", euler_order_name(right.convention)},
              {"axes", axes}};
}

std::array<ClinicalAxis, 3> clinical_from_json(const json& j) {
  const auto& axes = field(j, "axes");
  require(axes.is_array() && axes.size() == 3, "rom entry needs 3 axes");
  std::array<ClinicalAxis, 3> out;
  for (int i = 0; i < 3; ++i) {
    const auto& a = axes[static_cast<std::size_t>(i)];
    ClinicalAxis& c = out[static_cast<std::size_t>(i)];
    c.label = field(a, "label").get<std::string>();
    c.positive_deg = field(a, "positive_deg").get<double>();
    c.negative_deg = field(a, "negative_deg").get<double>();
    c.mirror = field(a, "mirror").get<bool>();
  }
  return out;
}

void rom_pairs_from_json(const json& list, std::vector<RomEntry>& left_out,
                         std::vector<RomEntry>& right_out) {
  for (const auto& p : list) {
    const auto& pair = field(p, "joint_pair");
    require(pair.is_array() && pair.size() == 2,
            "rom joint_pair must be [left, right]");
    const std::string convention = field(p, "convention").get<std::string>();
    const auto clinical = clinical_from_json(p);
    RomEntry l, r;
    l.joint = pair[0].get<std::string>();
    l.convention = parse_euler_order(convention);
    l.side = Side::Left;
    l.axes = normalize_rom(clinical, Side::Left, convention);
    r.joint = pair[1].get<std::string>();
    r.convention = l.convention;
    r.side = Side::Right;
    r.axes = normalize_rom(clinical, Side::Right, convention);
    left_out.push_back(l);
    right_out.push_back(r);
  }
}

}  // namespace

json rom_to_json(const RomTable& rom) {
  json body = json::array();
  for (const RomEntry& e : rom.body) {
    if (e.side != Side::Right) continue;
    std::string left_name = e.joint;
    const auto pos = left_name.find("right");
    require(pos != std::string::npos, "rom right entry lacks 'right' in name");
    left_name.replace(pos, 5, "left");
    body.push_back(rom_pair_json(e, left_name));
  }
  json hand = json::array();
  for (const RomEntry& e : rom.right_hand) {
    std::string left_name = e.joint;
    const auto pos = left_name.find("right");
    require(pos != std::string::npos, "rom right entry lacks 'right' in name");
    left_name.replace(pos, 5, "left");
    hand.push_back(rom_pair_json(e, left_name));
  }
  const SignerSpace& s = rom.space;
  return json{{"schema_version", kRomSchema},
              {"signer_space",
               {{"lateral_halfwidths", s.lateral_halfwidths},
                {"vertical_low_torso", s.vertical_low_torso},
                {"vertical_high_torso", s.vertical_high_torso},
                {"depth_near_torso", s.depth_near_torso},
                {"depth_far_torso", s.depth_far_torso},
                {"abduction_cap_deg", s.abduction_cap_rad * kRadToDeg},
                {"adduction_cap_deg", s.adduction_cap_rad * kRadToDeg}}},
              {"body", body},
              {"hand", hand}};
}

RomTable rom_from_json(const json& j) {
  check_schema(j, kRomSchema, "rom");
  RomTable t;
  rom_pairs_from_json(field(j, "body"), t.body, t.body);
  // Reorder so left entries precede right ones, as built-in tables do.
  {
    std::vector<RomEntry> ordered;
    for (std::size_t i = 0; i + 1 < t.body.size(); i += 2) ordered.push_back(t.body[i]);
    for (std::size_t i = 1; i < t.body.size(); i += 2) ordered.push_back(t.body[i]);
    t.body = std::move(ordered);
  }
  rom_pairs_from_json(field(j, "hand"), t.left_hand, t.right_hand);
  const auto& s = field(j, "signer_space");
  t.space.lateral_halfwidths = field(s, "lateral_halfwidths").get<double>();
  t.space.vertical_low_torso = field(s, "vertical_low_torso").get<double>();
  t.space.vertical_high_torso = field(s, "vertical_high_torso").get<double>();
  t.space.depth_near_torso = field(s, "depth_near_torso").get<double>();
  t.space.depth_far_torso = field(s, "depth_far_torso").get<double>();
  t.space.abduction_cap_rad =
      field(s, "abduction_cap_deg").get<double>() / kRadToDeg;
  t.space.adduction_cap_rad =
      field(s, "adduction_cap_deg").get<double>() / kRadToDeg;
  t.validate();
  return t;
}

namespace {

constexpr int kPriorSchema = 1;

json tensor_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from(const json& j, const char* name) {
  const auto shape = vec_of<std::int64_t>(j, "shape");
  auto data = vec_of<double>(j, "data");
  require(Tensor::numel_of(shape) == static_cast<std::int64_t>(data.size()),
          std::string("prior weight ") + name + ": shape/data mismatch");
  return Tensor(shape, std::move(data));
}

constexpr const char* kWeightNames[] = {
    "enc1_w", "enc1_b", "enc2_w", "enc2_b", "enc_mu_w",     "enc_mu_b",
    "enc_logvar_w", "enc_logvar_b", "dec1_w", "dec1_b", "dec2_w", "dec2_b",
    "dec3_w", "dec3_b"};

}  // namespace

json prior_to_json(const PriorModel& model) {
  json weights;
  const auto tensors = model.weights();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    weights[kWeightNames[i]] = tensor_json(*tensors[i]);
  return json{
      {"schema_version", kPriorSchema},
      {"kind", prior_kind_name(model.config.kind)},
      {"config",
       {{"input_joints", model.config.input_joints},
        {"latent_dim", model.config.latent_dim},
        {"hidden", model.config.hidden},
        {"layers_per_stack", model.config.layers_per_stack},
        {"loss_weights", model.config.loss_weights},
        {"learning_rate", model.config.learning_rate},
        {"seed", model.config.seed}}},
      {"weights", weights},
      {"metadata",
       {{"train_seed", model.train_seed},
        {"dataset_hash", model.dataset_hash},
        {"activation", model.activation},
        {"train_curve", model.train_curve},
        {"val_curve", model.val_curve}}}};
}

PriorModel prior_from_json(const json& j) {
  check_schema(j, kPriorSchema, "prior");
  PriorModel m;
  m.config.kind = parse_prior_kind(field(j, "kind").get<std::string>());
  const json& c = field(j, "config");
  m.config.input_joints = field(c, "input_joints").get<int>();
  m.config.latent_dim = field(c, "latent_dim").get<int>();
  m.config.hidden = field(c, "hidden").get<int>();
  m.config.layers_per_stack = field(c, "layers_per_stack").get<int>();
  const auto lw = vec_of<double>(c, "loss_weights");
  require(lw.size() == 6, "prior: loss_weights must have 6 entries");
  std::copy(lw.begin(), lw.end(), m.config.loss_weights.begin());
  m.config.learning_rate = field(c, "learning_rate").get<double>();
  m.config.seed = field(c, "seed").get<std::uint64_t>();

  const json& w = field(j, "weights");
  const auto tensors = m.weights();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    *tensors[i] = tensor_from(field(w, kWeightNames[i]), kWeightNames[i]);

  const json& meta = field(j, "metadata");
  m.train_seed = field(meta, "train_seed").get<std::uint64_t>();
  m.dataset_hash = field(meta, "dataset_hash").get<std::string>();
  m.activation = field(meta, "activation").get<std::string>();
  m.train_curve = vec_of<double>(meta, "train_curve");
  m.val_curve = vec_of<double>(meta, "val_curve");
  try {
    m.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("prior: ") + e.what());
  }
  return m;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError("cannot parse JSON in " + path + ": " + e.what());
  }
  return j;
}

void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for writing: " + path);
  out << j.dump(1) << "\n";
}

}  // namespace dexfit
