#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyloop/geometry.hpp"

namespace polyloop::nn {

struct GgnnConfig {
  int grid = 28;             // D of incoming polygons
  int fine_grid = 112;       // D'
  int steps = 5;             // T
  int patch = 1;             // S
  int window = 15;           // offset classes window x window
  int hidden = 64;           // H
  int in_channels = 48;      // C_g of the encoder's ggnn_grid
  int obs_channels = 32;     // width of the observation branch
  std::string obs_branch = "dilated";  // "dilated": 3x3 convs, dilation 1,2,4; "wide": one 15x15 conv
  int edge_types = 3;        // 1 forward, 2 backward, 3 original<->original
  int replace_threshold = 3; // cells at D

  int classes() const { return window * window; }
  int radius() const { return window / 2; }
};

// "full": H=256, 15x15 conv with 256 filters on a 256-channel grid.
// "desk": the default above.
GgnnConfig ggnn_preset(const std::string& name, int in_channels);

nlohmann::json to_json(const GgnnConfig& c);
GgnnConfig ggnn_config_from_json(const nlohmann::json& j);

enum class NodeRole { kOriginal, kMidpoint };

struct GraphNode {
  geometry::GridVertex pos;  // on the D' grid
  NodeRole role = NodeRole::kOriginal;
};

struct GraphEdge {
  int src = 0;
  int dst = 0;
  int type = 1;  // 1-based
};

// Cycle o0, m0, o1, m1, ... with typed directed edges.
struct PolygonGraph {
  int fine_grid = 0;
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
};

// Originals map to cell centres on D' (v * s + s / 2); midpoints are
// floor((a + b) / 2) of the scaled neighbours. Throws DegeneratePolygon for
// fewer than 3 vertices.
PolygonGraph build_graph(const geometry::PolygonSeq& poly, int fine_grid, int edge_types = 3);

inline int offset_class(int dx, int dy, int window) {
  const int r = window / 2;
  return (dy + r) * window + (dx + r);
}
inline std::pair<int, int> class_offset(int cls, int window) {
  const int r = window / 2;
  return {cls % window - r, cls / window - r};
}

// Moves every node by its class offset, clipped to the D' grid; node order kept.
geometry::PolygonSeq apply_offsets(const PolygonGraph& graph, const std::vector<int>& classes,
                                   int window);

class GgnnImpl : public torch::nn::Module {
 public:
  explicit GgnnImpl(const GgnnConfig& cfg);

  const GgnnConfig& config() const { return cfg_; }

  // [B, C_g, D', D'] -> [B, obs_channels, D', D']
  torch::Tensor observe(const torch::Tensor& ggnn_grid);
  // x_v: S x S patches around every node, flattened. obs: [C, D', D'] -> [N, C*S*S]
  torch::Tensor node_features(const torch::Tensor& obs, const PolygonGraph& graph) const;
  // h_v^0 = [x_v, 0]
  torch::Tensor initial_state(const torch::Tensor& x) const;
  // T rounds of typed message passing followed by a GRU update.
  torch::Tensor propagate(const PolygonGraph& graph, const torch::Tensor& h, int steps);
  // Messages a_v for one round.
  torch::Tensor messages(const PolygonGraph& graph, const torch::Tensor& h);
  torch::Tensor gru(const torch::Tensor& h, const torch::Tensor& a);
  // f2(tanh(f1(h))) -> [N, window^2]
  torch::Tensor outputs(const torch::Tensor& h);

  // observe -> features -> propagate(cfg.steps) -> outputs, for one graph.
  torch::Tensor forward(const torch::Tensor& obs_single, const PolygonGraph& graph, int steps);

  // Direct access for tests and ablations.
  torch::Tensor& edge_weight(int type, bool incoming);
  torch::Tensor& message_bias() { return bias_; }

 private:
  GgnnConfig cfg_;
  torch::nn::Sequential obs_{nullptr};
  std::vector<torch::Tensor> w_in_, w_out_;  // per edge type, [H, H]
  torch::Tensor bias_;                       // [H]
  torch::nn::Linear wz_{nullptr}, uz_{nullptr}, wr_{nullptr}, ur_{nullptr}, wh_{nullptr}, uh_{nullptr};
  torch::nn::Linear f1_{nullptr}, f2_{nullptr};
};
TORCH_MODULE(Ggnn);

struct GgnnTargets {
  geometry::PolygonSeq input;   // prediction after the > threshold replacement, D grid
  PolygonGraph graph;
  std::vector<int> classes;     // per node
};

// Snaps predicted vertices deviating from their aligned GT vertex by more
// than cfg.replace_threshold cells (manhattan, D grid), builds the graph and
// labels each node with the offset to its GT correspondence on D':
// midpoints -> nearest GT boundary point; originals -> nearest GT vertex
// inside the window, else nearest boundary point. Offsets are clipped to the
// window. Throws InvalidTarget for an empty GT.
GgnnTargets ggnn_targets(const geometry::PolygonSeq& pred, const geometry::PolygonSeq& gt,
                         const geometry::PolygonSeq& gt_fine, const GgnnConfig& cfg);

void save_ggnn(const std::filesystem::path& path, GgnnImpl& ggnn,
               const nlohmann::json& meta = nlohmann::json::object());
Ggnn load_ggnn(const std::filesystem::path& path);

}  // namespace polyloop::nn
