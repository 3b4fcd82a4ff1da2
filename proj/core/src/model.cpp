#include "anerf/model.hpp"

#include <cmath>
#include <numbers>

namespace anerf {

Tensor PositionalEncoding::operator()(const Tensor& x) const {
  std::vector<Tensor> parts;
  if (include_input) parts.push_back(x);
  real freq = static_cast<real>(std::numbers::pi);
  for (int k = 0; k < num_frequencies; ++k, freq *= 2) {
    Tensor s = x * freq;
    parts.push_back(sin(s));
    parts.push_back(cos(s));
  }
  if (parts.size() == 1) return parts[0];
  return concat(parts, 1);
}

DeformationNet::DeformationNet(PositionalEncoding pe, std::int64_t feature_dim, std::int64_t pose_dim, int width,
                               int depth, real delta_max, Rng& rng)
    : pe_(pe), mlp_(pe.output_dim() + feature_dim + pose_dim, width, 3, depth, rng), delta_max_(delta_max) {
  mlp_.last().zero_init();
}

Tensor DeformationNet::forward(const Tensor& x_c, const Tensor& pooled, const Tensor& pose) const {
  const auto p = x_c.dim(0);
  Tensor pose_rows = broadcast_to(reshape(pose, {1, pose.numel()}), {p, pose.numel()});
  Tensor out = mlp_.forward(concat({pe_(x_c), pooled, pose_rows}, 1));
  return x_c + tanh(out) * delta_max_;
}

void DeformationNet::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  mlp_.collect(out, prefix);
}

RenderNet::RenderNet(PositionalEncoding pe, std::int64_t pixel_dim, std::int64_t volume_dim, bool use_view_dir,
                     int width, int depth, real density_scale, Rng& rng)
    : pe_(pe), use_view_dir_(use_view_dir), density_scale_(density_scale) {
  const std::int64_t in = pe.output_dim() + pixel_dim + volume_dim + (use_view_dir ? dir_pe_.output_dim() : 0);
  mlp_ = Mlp(in, width, 4, depth, rng);
}

RenderOutput RenderNet::forward(const Tensor& x_i, const Tensor& pooled, const Tensor& volume_features,
                                const Tensor& view_dirs) const {
  std::vector<Tensor> parts{pe_(x_i), pooled, volume_features};
  if (use_view_dir_) {
    if (!view_dirs.defined()) throw ContractError("render net expects view directions");
    parts.push_back(dir_pe_(view_dirs));
  }
  Tensor out = mlp_.forward(concat(parts, 1));
  const auto p = x_i.dim(0);
  RenderOutput r;
  r.sigma = reshape(softplus(slice(out, 1, 0, 1)) * density_scale_, {p});
  r.color = sigmoid(slice(out, 1, 1, 4));
  return r;
}

void RenderNet::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  mlp_.collect(out, prefix);
}

Ablation parse_ablation(const std::string& name) {
  if (name == "none") return Ablation::none;
  if (name == "no-deform") return Ablation::no_deform;
  if (name == "no-pixel-feat") return Ablation::no_pixel_feat;
  if (name == "no-body-feat") return Ablation::no_body_feat;
  throw ContractError("unknown ablation '" + name + "'");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_deform: return "no-deform";
    case Ablation::no_pixel_feat: return "no-pixel-feat";
    case Ablation::no_body_feat: return "no-body-feat";
  }
  return "none";
}

SceneModel::SceneModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), template_(template_skeleton(config.bones)) {
  Rng rng(seed);
  const PositionalEncoding pe{config.pe_frequencies, true};
  encoder_ = Encoder(config.feature_channels, config.encoder_hidden, rng);
  diffusion_ = DiffusionNet(config.support_frames * config.feature_channels, config.volume_channels, rng);
  const GridSpec grid{canonical_bounds(template_, 0.1, config.canonical_pad),
                      {config.skinning_resolution, config.skinning_resolution, config.skinning_resolution}};
  prior_ = skinning_prior(template_, grid);
  skinning_ = SkinningVolume(grid, prior_);
  const real delta = config.ablation == Ablation::no_deform ? real(0) : config.delta_max;
  deformation_ = DeformationNet(pe, config.feature_channels, 3 * config.bones, config.deform_width,
                                config.deform_depth, delta, rng);
  rendering_ = RenderNet(pe, config.feature_channels, config.volume_channels, config.use_view_dir,
                         config.render_width, config.render_depth, config.density_scale, rng);
}

GridSpec SceneModel::feature_grid() const {
  const int r = config_.feature_resolution;
  return GridSpec{skinning_.grid().box, {r, r, r}};
}

std::vector<ParameterGroup> SceneModel::groups() const {
  std::vector<ParameterGroup> g(4);
  for (int i = 0; i < 4; ++i) {
    g[i].name = kGroupNames[i];
    g[i].frozen = frozen(kGroupNames[i]);
  }
  encoder_.collect(g[0].params, "encoder.");
  diffusion_.collect(g[0].params, "diffusion.");
  g[1].params.push_back({"logits", skinning_.logits()});
  deformation_.collect(g[2].params, "");
  rendering_.collect(g[3].params, "");
  return g;
}

void SceneModel::set_frozen(const std::string& group, bool frozen) {
  if (std::find(kGroupNames.begin(), kGroupNames.end(), group) == kGroupNames.end()) {
    throw ContractError("unknown parameter group '" + group + "'");
  }
  if (frozen) {
    frozen_.insert(group);
  } else {
    frozen_.erase(group);
  }
  // Frozen leaves stop recording graphs, which also skips their backward work.
  for (auto& g : groups()) {
    if (g.name != group) continue;
    for (auto& p : g.params) p.value.set_requires_grad(!frozen);
  }
}

std::map<std::string, std::vector<real>> SceneModel::parameters() const {
  std::map<std::string, std::vector<real>> out;
  for (const auto& g : groups()) {
    for (const auto& p : g.params) {
      const auto v = p.value.values();
      out[g.name + "/" + p.name] = std::vector<real>(v.begin(), v.end());
    }
  }
  return out;
}

void SceneModel::load_parameters(const std::map<std::string, std::vector<real>>& values) {
  for (auto& g : groups()) {
    for (auto& p : g.params) {
      const auto key = g.name + "/" + p.name;
      auto it = values.find(key);
      if (it == values.end()) throw ContractError("missing parameter '" + key + "'");
      auto dst = p.value.mutable_values();
      if (it->second.size() != dst.size()) throw ContractError("parameter '" + key + "' has the wrong size");
      std::copy(it->second.begin(), it->second.end(), dst.begin());
    }
  }
}

SceneModel SceneModel::clone() const {
  SceneModel copy(config_, 0);
  copy.load_parameters(parameters());
  for (const auto& g : frozen_) copy.set_frozen(g, true);
  return copy;
}

Conditioning condition(const SceneModel& model, std::vector<SupportFrame> frames, const Skeleton& actor) {
  const auto& cfg = model.config();
  if (frames.empty()) throw ContractError("condition: empty support set");
  if (static_cast<int>(frames.size()) != cfg.support_frames) {
    throw ContractError("condition: model expects " + std::to_string(cfg.support_frames) + " support frames, got " +
                        std::to_string(frames.size()));
  }
  Conditioning c;
  c.actor = actor;
  for (auto& f : frames) {
    if (f.transforms.empty()) f.transforms = forward_kinematics(actor, f.pose);
    f.features = model.encoder().encode(f.image);
  }
  if (cfg.ablation != Ablation::no_body_feat) {
    const auto verts = body_surface_points(actor, cfg.surface_vertices);
    std::vector<real> flat;
    flat.reserve(verts.size() * 3);
    for (const auto& v : verts) flat.insert(flat.end(), {v.x(), v.y(), v.z()});
    const Tensor canon = Tensor::from({static_cast<std::int64_t>(verts.size()), 3}, std::move(flat));
    const Tensor w = weights_at(model.skinning(), canon);
    std::vector<Tensor> per_frame;
    for (const auto& f : frames) {
      const auto posed = forward_warp(canon, w, f.transforms, cfg.warp);
      per_frame.push_back(body_vertex_features(f, posed.points));
    }
    c.volume = diffuse_to_canonical(per_frame, verts, model.feature_grid(), model.diffusion());
  }
  c.frames = std::move(frames);
  return c;
}

Tensor pool_pixel_features(const SceneModel& model, const Conditioning& cond, const Tensor& x_c) {
  const auto p = x_c.dim(0);
  const auto ch = model.config().feature_channels;
  if (model.config().ablation == Ablation::no_pixel_feat) return Tensor::zeros({p, ch});
  const Tensor w = weights_at(model.skinning(), x_c);
  Tensor total;
  std::vector<real> count(static_cast<std::size_t>(p), real(0));
  for (const auto& f : cond.frames) {
    const auto posed = forward_warp(x_c, w, f.transforms, model.config().warp);
    auto px = pixel_aligned(f.features, f.camera, posed.points);
    for (std::int64_t i = 0; i < p; ++i) count[i] += px.in_frustum[i];
    total = total.defined() ? total + px.values : px.values;
  }
  for (auto& c : count) c = real(1) / std::max(c, real(1));
  return total * Tensor::from({p, 1}, std::move(count));
}

QueryResult query_pipeline(const SceneModel& model, const Conditioning& cond, const Tensor& x_o,
                           const BoneTransforms& target, const Pose& target_pose, const Tensor& view_dirs) {
  const auto& cfg = model.config();
  const auto p = x_o.dim(0);
  QueryResult out;
  out.on_body.assign(static_cast<std::size_t>(p), 0);
  Index rows;
  {
    NoGradGuard no_grad;
    const auto pre = backward_warp(x_o, model.skinning(), target, cfg.warp);
    const auto mass = pre.bone_mass.values();
    for (std::int64_t i = 0; i < p; ++i) {
      if (mass[i] >= cfg.warp.tau_empty) {
        out.on_body[i] = 1;
        rows.push_back(i);
      }
    }
  }
  if (rows.empty()) {
    out.sigma = Tensor::zeros({p});
    out.color = Tensor::zeros({p, 3});
    return out;
  }
  const auto q = static_cast<std::int64_t>(rows.size());
  const Tensor xs = static_cast<std::int64_t>(rows.size()) == p ? x_o : index_select(x_o, rows);
  const Tensor x_c = backward_warp(xs, model.skinning(), target, cfg.warp).points;
  const Tensor pooled = pool_pixel_features(model, cond, x_c);
  Tensor x_i = x_c;
  if (cfg.ablation != Ablation::no_deform) {
    const auto flat = target_pose.flattened();
    x_i = model.deformation().forward(x_c, pooled, Tensor::from({static_cast<std::int64_t>(flat.size())}, flat));
  }
  Tensor vol = cfg.ablation == Ablation::no_body_feat || !cond.volume.defined()
                   ? Tensor::zeros({q, cfg.volume_channels})
                   : grid_sample_3d(cond.volume, x_i, model.feature_grid().box).values;
  Tensor dirs;
  if (model.rendering().uses_view_dir()) dirs = q == p ? view_dirs : index_select(view_dirs, rows);
  const auto r = model.rendering().forward(x_i, pooled, vol, dirs);
  out.sigma = reshape(index_add(reshape(r.sigma, {q, 1}), rows, p), {p});
  out.color = index_add(r.color, rows, p);
  return out;
}

}  // namespace anerf
