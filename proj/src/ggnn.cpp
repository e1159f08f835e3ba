#include "polyloop/ggnn.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "polyloop/checkpoint.hpp"
#include "polyloop/errors.hpp"
#include "polyloop/simulator.hpp"

namespace polyloop::nn {

using geometry::GridVertex;
using geometry::Point2;
using geometry::PolygonSeq;
using json = nlohmann::json;

GgnnConfig ggnn_preset(const std::string& name, int in_channels) {
  GgnnConfig c;
  c.in_channels = in_channels;
  if (name == "desk") return c;
  if (name == "full") {
    c.hidden = 256;
    c.obs_channels = 256;
    c.obs_branch = "wide";
    return c;
  }
  if (name == "tiny") {
    c.grid = 8;
    c.fine_grid = 16;
    c.hidden = 8;
    c.obs_channels = 4;
    return c;
  }
  throw Error("unknown ggnn preset '" + name + "'");
}

json to_json(const GgnnConfig& c) {
  return {{"grid", c.grid},           {"fine_grid", c.fine_grid},
          {"steps", c.steps},         {"patch", c.patch},
          {"window", c.window},       {"hidden", c.hidden},
          {"in_channels", c.in_channels}, {"obs_channels", c.obs_channels},
          {"obs_branch", c.obs_branch},   {"edge_types", c.edge_types},
          {"replace_threshold", c.replace_threshold}};
}

GgnnConfig ggnn_config_from_json(const json& j) {
  GgnnConfig c;
  c.grid = j.at("grid");
  c.fine_grid = j.at("fine_grid");
  c.steps = j.at("steps");
  c.patch = j.at("patch");
  c.window = j.at("window");
  c.hidden = j.at("hidden");
  c.in_channels = j.at("in_channels");
  c.obs_channels = j.at("obs_channels");
  c.obs_branch = j.at("obs_branch").get<std::string>();
  c.edge_types = j.at("edge_types");
  c.replace_threshold = j.at("replace_threshold");
  return c;
}

PolygonGraph build_graph(const PolygonSeq& poly, int fine_grid, int edge_types) {
  if (poly.size() < 3) throw DegeneratePolygon("graph needs >= 3 vertices, got " + std::to_string(poly.size()));
  if (edge_types < 1 || edge_types > 3) throw Error("edge_types must be 1, 2 or 3");
  const auto up = geometry::upscale_nearest(poly, fine_grid);
  const int n = static_cast<int>(up.size());
  PolygonGraph g;
  g.fine_grid = fine_grid;
  for (int i = 0; i < n; ++i) {
    const auto a = up[static_cast<std::size_t>(i)];
    const auto b = up[static_cast<std::size_t>((i + 1) % n)];
    g.nodes.push_back({a, NodeRole::kOriginal});
    g.nodes.push_back({{(a.x + b.x) / 2, (a.y + b.y) / 2}, NodeRole::kMidpoint});
  }
  const int m = 2 * n;
  for (int j = 0; j < m; ++j) {
    g.edges.push_back({j, (j + 1) % m, 1});
    if (edge_types >= 2) g.edges.push_back({j, (j - 1 + m) % m, 2});
  }
  if (edge_types >= 3) {
    for (int i = 0; i < n; ++i) {
      const int a = 2 * i;
      const int b = 2 * ((i + 1) % n);
      g.edges.push_back({a, b, 3});
      g.edges.push_back({b, a, 3});
    }
  }
  return g;
}

PolygonSeq apply_offsets(const PolygonGraph& graph, const std::vector<int>& classes, int window) {
  if (classes.size() != graph.nodes.size()) throw ShapeMismatch("one class per node required");
  PolygonSeq out{{}, graph.fine_grid, true};
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] >= window * window) throw OutOfBounds("offset class out of range");
    const auto [dx, dy] = class_offset(classes[i], window);
    const auto p = graph.nodes[i].pos;
    out.vertices.push_back({std::clamp(p.x + dx, 0, graph.fine_grid - 1),
                            std::clamp(p.y + dy, 0, graph.fine_grid - 1)});
  }
  return out;
}

GgnnImpl::GgnnImpl(const GgnnConfig& cfg) : cfg_(cfg) {
  const int c = cfg.obs_channels;
  auto conv = [](int in, int out, int k, int dil) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(dil * (k / 2)).dilation(dil));
  };
  if (cfg.obs_branch == "wide") {
    obs_ = register_module("obs", torch::nn::Sequential(conv(cfg.in_channels, c, 15, 1), torch::nn::ReLU()));
  } else if (cfg.obs_branch == "dilated") {
    obs_ = register_module("obs", torch::nn::Sequential(conv(cfg.in_channels, c, 3, 1), torch::nn::ReLU(),
                                                        conv(c, c, 3, 2), torch::nn::ReLU(),
                                                        conv(c, c, 3, 4), torch::nn::ReLU()));
  } else {
    throw Error("unknown observation branch '" + cfg.obs_branch + "'");
  }
  const int x_len = c * cfg.patch * cfg.patch;
  if (x_len > cfg.hidden) throw Error("node observation longer than the hidden state");
  const int h = cfg.hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (int k = 1; k <= cfg.edge_types; ++k) {
    w_in_.push_back(register_parameter("w_in" + std::to_string(k), torch::empty({h, h}).uniform_(-bound, bound)));
    w_out_.push_back(register_parameter("w_out" + std::to_string(k), torch::empty({h, h}).uniform_(-bound, bound)));
  }
  bias_ = register_parameter("bias", torch::zeros({h}));
  wz_ = register_module("wz", torch::nn::Linear(h, h));
  uz_ = register_module("uz", torch::nn::Linear(torch::nn::LinearOptions(h, h).bias(false)));
  wr_ = register_module("wr", torch::nn::Linear(h, h));
  ur_ = register_module("ur", torch::nn::Linear(torch::nn::LinearOptions(h, h).bias(false)));
  wh_ = register_module("wh", torch::nn::Linear(h, h));
  uh_ = register_module("uh", torch::nn::Linear(torch::nn::LinearOptions(h, h).bias(false)));
  f1_ = register_module("f1", torch::nn::Linear(h, h));
  f2_ = register_module("f2", torch::nn::Linear(h, cfg.classes()));
}

torch::Tensor& GgnnImpl::edge_weight(int type, bool incoming) {
  auto& v = incoming ? w_in_ : w_out_;
  return v.at(static_cast<std::size_t>(type - 1));
}

torch::Tensor GgnnImpl::observe(const torch::Tensor& ggnn_grid) { return obs_->forward(ggnn_grid); }

torch::Tensor GgnnImpl::node_features(const torch::Tensor& obs, const PolygonGraph& graph) const {
  const int s = cfg_.patch;
  const int r = s / 2;
  const auto padded = r > 0 ? torch::constant_pad_nd(obs, {r, r, r, r}, 0.0) : obs;
  std::vector<torch::Tensor> xs;
  for (const auto& node : graph.nodes) {
    xs.push_back(padded.narrow(1, node.pos.y, s).narrow(2, node.pos.x, s).reshape({-1}));
  }
  return torch::stack(xs);
}

torch::Tensor GgnnImpl::initial_state(const torch::Tensor& x) const {
  return torch::constant_pad_nd(x, {0, cfg_.hidden - x.size(1)}, 0.0);
}

torch::Tensor GgnnImpl::messages(const PolygonGraph& graph, const torch::Tensor& h) {
  const auto n = static_cast<std::int64_t>(graph.nodes.size());
  auto a = bias_.expand({n, cfg_.hidden}).clone();
  for (int k = 1; k <= cfg_.edge_types; ++k) {
    std::vector<float> in_adj(static_cast<std::size_t>(n * n), 0.0f), out_adj(in_adj.size(), 0.0f);
    bool any = false;
    for (const auto& e : graph.edges) {
      if (e.type != k) continue;
      in_adj[static_cast<std::size_t>(e.dst * n + e.src)] += 1.0f;   // dst receives from src
      out_adj[static_cast<std::size_t>(e.src * n + e.dst)] += 1.0f;  // src sees dst on its outgoing edge
      any = true;
    }
    if (!any) continue;
    const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
    const auto ain = torch::from_blob(in_adj.data(), {n, n}, opts).clone().to(h.dtype());
    const auto aout = torch::from_blob(out_adj.data(), {n, n}, opts).clone().to(h.dtype());
    a = a + ain.mm(h.mm(edge_weight(k, true).t())) + aout.mm(h.mm(edge_weight(k, false).t()));
  }
  return a;
}

torch::Tensor GgnnImpl::gru(const torch::Tensor& h, const torch::Tensor& a) {
  const auto z = torch::sigmoid(wz_(a) + uz_(h));
  const auto r = torch::sigmoid(wr_(a) + ur_(h));
  const auto cand = torch::tanh(wh_(a) + uh_(r * h));
  return (1 - z) * h + z * cand;
}

torch::Tensor GgnnImpl::propagate(const PolygonGraph& graph, const torch::Tensor& h, int steps) {
  if (steps < 0) throw InvalidRange("propagation steps must be >= 0");
  auto state = h;
  for (int t = 0; t < steps; ++t) state = gru(state, messages(graph, state));
  return state;
}

torch::Tensor GgnnImpl::outputs(const torch::Tensor& h) { return f2_(torch::tanh(f1_(h))); }

torch::Tensor GgnnImpl::forward(const torch::Tensor& obs_single, const PolygonGraph& graph, int steps) {
  const auto x = node_features(obs_single, graph);
  return outputs(propagate(graph, initial_state(x), steps));
}

GgnnTargets ggnn_targets(const PolygonSeq& pred, const PolygonSeq& gt, const PolygonSeq& gt_fine,
                         const GgnnConfig& cfg) {
  if (gt.empty() || gt_fine.empty()) throw InvalidTarget("empty GT polygon");
  GgnnTargets t;
  PolygonSeq input = pred;
  if (!pred.empty()) {
    const auto aligned = sim::align_gt(pred, gt);
    for (std::size_t i = 0; i < std::min(pred.size(), aligned.size()); ++i) {
      if (geometry::manhattan(pred[i], aligned[i]) > cfg.replace_threshold) input.vertices[i] = aligned[i];
    }
    input = geometry::remove_consecutive_duplicates(input);
  }
  if (geometry::distinct_vertex_count(input) < 3) input = gt;
  t.input = input;
  t.graph = build_graph(input, cfg.fine_grid, cfg.edge_types);

  std::vector<Point2> boundary;
  for (const auto& v : gt_fine.vertices) boundary.push_back({static_cast<double>(v.x), static_cast<double>(v.y)});
  const int r = cfg.radius();
  for (const auto& node : t.graph.nodes) {
    const auto p = node.pos;
    std::optional<GridVertex> target;
    if (node.role == NodeRole::kOriginal) {
      int best = -1;
      for (std::size_t i = 0; i < gt_fine.size(); ++i) {
        const auto& v = gt_fine[i];
        if (std::abs(v.x - p.x) > r || std::abs(v.y - p.y) > r) continue;
        const int dist = geometry::manhattan(v, p);
        if (best < 0 || dist < geometry::manhattan(gt_fine[static_cast<std::size_t>(best)], p)) {
          best = static_cast<int>(i);
        }
      }
      if (best >= 0) target = gt_fine[static_cast<std::size_t>(best)];
    }
    if (!target) {
      const auto q = geometry::nearest_boundary_point({static_cast<double>(p.x), static_cast<double>(p.y)}, boundary);
      target = GridVertex{static_cast<int>(std::lround(q.x)), static_cast<int>(std::lround(q.y))};
    }
    const int dx = std::clamp(target->x - p.x, -r, r);
    const int dy = std::clamp(target->y - p.y, -r, r);
    t.classes.push_back(offset_class(dx, dy, cfg.window));
  }
  return t;
}

void save_ggnn(const std::filesystem::path& path, GgnnImpl& ggnn, const json& meta) {
  save_checkpoint(path, ggnn, {"ggnn", to_json(ggnn.config()), meta});
}

Ggnn load_ggnn(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  Ggnn g(ggnn_config_from_json(header.config));
  load_checkpoint(path, *g, "ggnn");
  g->eval();
  return g;
}

}  // namespace polyloop::nn
