// polyloop: dataset synthesis, training, evaluation, online fine-tuning and
// the annotation server. Every flag can also be set through an environment
// variable POLYLOOP_<FLAG> (upper case, dashes as underscores).

#include <torch/torch.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "polyloop/adapt.hpp"
#include "polyloop/dataset.hpp"
#include "polyloop/evaluator.hpp"
#include "polyloop/ggnn.hpp"
#include "polyloop/ggnn_training.hpp"
#include "polyloop/http_api.hpp"
#include "polyloop/inference.hpp"
#include "polyloop/metrics.hpp"
#include "polyloop/predictor.hpp"
#include "polyloop/service.hpp"
#include "polyloop/simulator.hpp"
#include "polyloop/synth.hpp"
#include "polyloop/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace polyloop;

namespace {

std::string env_name(const std::string& flag) {
  std::string out = "POLYLOOP_";
  for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

template <typename T>
CLI::Option* opt(CLI::App* app, const std::string& flag, T& value, const std::string& help) {
  return app->add_option("--" + flag, value, help)->envname(env_name(flag))->capture_default_str();
}

CLI::Option* flag(CLI::App* app, const std::string& name, bool& value, const std::string& help) {
  return app->add_flag("--" + name, value, help)->envname(env_name(name));
}

struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
};

std::vector<data::InstanceSample> load_samples(const fs::path& manifest, const data::CropSpec& spec,
                                               const data::BoxNoise& noise = {}) {
  const auto records = data::load_manifest(manifest);
  auto samples = data::extract_all(records, spec, noise, manifest.parent_path());
  std::cerr << manifest.string() << ": " << samples.size() << " of " << records.size()
            << " instances usable\n";
  if (samples.empty()) throw Error("no usable instances in " + manifest.string());
  return samples;
}

data::CropSpec spec_of(const nn::ModelConfig& c) { return {c.crop_size, c.grid, c.fine_grid, 0.15}; }

void print_log(const json& j) { std::cerr << j.dump() << "\n"; }

nn::EvaluatorNet maybe_evaluator(const std::string& path) {
  if (path.empty()) return nullptr;
  auto ev = nn::load_evaluator(path);
  ev->eval();
  return ev;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polyloop: polygon annotation models, simulation and service"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  opt(&app, "seed", common.seed, "random seed");
  opt(&app, "threads", common.threads, "intra-op threads");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string s_preset = "source", s_out = "data", s_name, s_split = "train";
  int s_n = 400;
  double s_occluder = -1.0, s_contrast = -1.0, s_noise = -1.0;
  opt(synth, "preset", s_preset, "source | shift | detail | mixed")->check(CLI::IsMember({"source", "shift", "detail", "mixed"}));
  opt(synth, "n", s_n, "number of instances")->check(CLI::PositiveNumber);
  opt(synth, "out", s_out, "output directory");
  opt(synth, "name", s_name, "manifest name (default: <preset>_<split>)");
  opt(synth, "split", s_split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  opt(synth, "occluder-prob", s_occluder, "override occluder probability");
  opt(synth, "contrast", s_contrast, "override min object/background L1 colour distance");
  opt(synth, "noise", s_noise, "override per-pixel noise sigma");

  // shared model/data flags
  std::string train_path, val_path, out_path, init_path, metrics_path, preset = "desk";
  int steps = 1000, batch = 8, log_every = 50;
  double lr = 1e-4, tau = 0.6, grad_clip = 40.0, lambda_fp = 1.0;
  bool smoothed = false;

  auto* mle = app.add_subcommand("train-mle", "maximum-likelihood training");
  opt(mle, "train", train_path, "training manifest")->required();
  opt(mle, "val", val_path, "validation manifest");
  opt(mle, "out", out_path, "output checkpoint")->required();
  opt(mle, "init", init_path, "initial checkpoint");
  opt(mle, "model-preset", preset, "desk | full | tiny")->check(CLI::IsMember({"desk", "full", "tiny"}));
  opt(mle, "steps", steps, "updates");
  opt(mle, "batch", batch, "batch size");
  opt(mle, "lr", lr, "Adam learning rate");
  opt(mle, "grad-clip", grad_clip, "gradient norm clip");
  opt(mle, "lambda-fp", lambda_fp, "first-vertex loss weight");
  opt(mle, "log-every", log_every, "log interval");
  opt(mle, "metrics", metrics_path, "metrics .jsonl");
  flag(mle, "smoothed", smoothed, "smoothed targets");

  auto* rl = app.add_subcommand("train-rl", "self-critical fine-tuning");
  opt(rl, "init", init_path, "MLE checkpoint")->required();
  opt(rl, "train", train_path, "training manifest")->required();
  opt(rl, "val", val_path, "validation manifest");
  opt(rl, "out", out_path, "output checkpoint")->required();
  opt(rl, "steps", steps, "updates");
  opt(rl, "batch", batch, "batch size");
  opt(rl, "lr", lr, "Adam learning rate");
  opt(rl, "tau", tau, "sampling temperature");
  opt(rl, "grad-clip", grad_clip, "gradient norm clip");
  opt(rl, "log-every", log_every, "log interval");
  opt(rl, "metrics", metrics_path, "metrics .jsonl");

  std::string model_path, evaluator_path, ggnn_path;
  auto* ev = app.add_subcommand("train-eval", "train the evaluator network");
  opt(ev, "model", model_path, "polygon model checkpoint")->required();
  opt(ev, "train", train_path, "training manifest")->required();
  opt(ev, "out", out_path, "output checkpoint")->required();
  opt(ev, "steps", steps, "updates");
  opt(ev, "batch", batch, "batch size");
  opt(ev, "lr", lr, "Adam learning rate");
  opt(ev, "tau", tau, "sampling temperature for candidates");
  opt(ev, "log-every", log_every, "log interval");
  opt(ev, "metrics", metrics_path, "metrics .jsonl");

  std::string ggnn_preset = "desk";
  int ggnn_steps_t = -1;
  auto* gg = app.add_subcommand("train-ggnn", "train the upscaling GGNN");
  opt(gg, "model", model_path, "polygon model checkpoint")->required();
  opt(gg, "train", train_path, "training manifest")->required();
  opt(gg, "val", val_path, "validation manifest");
  opt(gg, "out", out_path, "output checkpoint")->required();
  opt(gg, "ggnn-preset", ggnn_preset, "desk | full | tiny");
  opt(gg, "propagation-steps", ggnn_steps_t, "T (default from preset)");
  opt(gg, "steps", steps, "updates");
  opt(gg, "batch", batch, "graphs per update");
  opt(gg, "lr", lr, "Adam learning rate");
  opt(gg, "log-every", log_every, "log interval");
  opt(gg, "metrics", metrics_path, "metrics .jsonl");

  int k = 5, beam = 1;
  bool oracle = false;
  auto* ea = app.add_subcommand("eval-auto", "mean IoU per category");
  opt(ea, "model", model_path, "polygon model checkpoint");
  opt(ea, "evaluator", evaluator_path, "evaluator checkpoint");
  opt(ea, "val", val_path, "evaluation manifest")->required();
  opt(ea, "k", k, "first-vertex candidates");
  opt(ea, "beam", beam, "beam width");
  opt(ea, "out", out_path, "table .tsv");
  flag(ea, "oracle", oracle, "score the ground truth itself (pipeline check)");

  std::vector<int> T_list{1, 2, 3, 4};
  double T2 = 0.8;
  std::string traces_path;
  bool no_early_stop = false;
  auto* ei = app.add_subcommand("eval-interactive", "simulated annotator clicks vs IoU");
  opt(ei, "model", model_path, "polygon model checkpoint");
  opt(ei, "evaluator", evaluator_path, "evaluator checkpoint");
  opt(ei, "val", val_path, "evaluation manifest")->required();
  opt(ei, "T", T_list, "correction thresholds")->expected(1, -1);
  opt(ei, "T2", T2, "acceptance IoU");
  opt(ei, "k", k, "first-vertex candidates");
  opt(ei, "beam", beam, "beam width");
  opt(ei, "out", out_path, "curve .tsv");
  opt(ei, "traces", traces_path, "per-session traces .jsonl");
  flag(ei, "oracle", oracle, "perfect predictor");
  flag(ei, "no-early-stop", no_early_stop, "only check T2 before the first correction");

  std::vector<double> bucket_edges{0, 5, 10, 15};
  auto* en = app.add_subcommand("eval-noise", "IoU under bounding-box noise");
  opt(en, "model", model_path, "polygon model checkpoint")->required();
  opt(en, "evaluator", evaluator_path, "evaluator checkpoint");
  opt(en, "val", val_path, "evaluation manifest")->required();
  opt(en, "buckets", bucket_edges, "bucket edges in percent; first bucket is exact")->expected(2, -1);
  opt(en, "k", k, "first-vertex candidates");
  opt(en, "beam", beam, "beam width");
  opt(en, "out", out_path, "table .tsv");

  adapt::ChunkSchedule sched;
  std::string data_path, out_dir = "adapt_out";
  auto* ft = app.add_subcommand("finetune-online", "online fine-tuning on a new domain");
  opt(ft, "model", model_path, "source polygon model checkpoint")->required();
  opt(ft, "evaluator", evaluator_path, "source evaluator checkpoint");
  opt(ft, "data", data_path, "new-domain manifest, consumed in order")->required();
  opt(ft, "chunks", sched.chunks, "C");
  opt(ft, "chunk-size", sched.chunk_size, "CS");
  opt(ft, "n-mle", sched.n_mle, "MLE updates per chunk");
  opt(ft, "n-rl", sched.n_rl, "RL updates per chunk");
  opt(ft, "n-ev", sched.n_ev, "evaluator updates per chunk");
  opt(ft, "mle-lr", sched.mle.lr, "MLE learning rate");
  opt(ft, "rl-lr", sched.rl.lr, "RL learning rate");
  opt(ft, "ev-lr", sched.ev.lr, "evaluator learning rate");
  opt(ft, "out-dir", out_dir, "output directory");

  service::ServiceConfig svc;
  std::string store = "annotations.jsonl", image_root, host = "127.0.0.1";
  int port = 8080;
  bool queue = false;
  auto* sv = app.add_subcommand("serve", "annotation HTTP service");
  opt(sv, "model", model_path, "polygon model checkpoint")->required();
  opt(sv, "evaluator", evaluator_path, "evaluator checkpoint");
  opt(sv, "ggnn", ggnn_path, "GGNN checkpoint");
  opt(sv, "k", svc.k, "first-vertex candidates");
  opt(sv, "beam", svc.beam_width, "beam width");
  opt(sv, "host", host, "bind address");
  opt(sv, "port", port, "port");
  opt(sv, "store", store, "annotation store path");
  opt(sv, "image-root", image_root, "directory relative image refs resolve against");
  flag(sv, "finetune-queue", queue, "enqueue committed instances for fine-tuning");

  std::string plot_in, plot_out, plot_x = "step";
  std::vector<std::string> plot_y;
  auto* pl = app.add_subcommand("plot", "render a metrics or table file as SVG");
  opt(pl, "in", plot_in, ".jsonl metrics or .tsv table")->required();
  opt(pl, "out", plot_out, "output .svg")->required();
  opt(pl, "x", plot_x, "x column");
  opt(pl, "y", plot_y, "y columns")->required()->expected(1, -1);

  CLI11_PARSE(app, argc, argv);

  try {
    torch::set_num_threads(common.threads);
    torch::manual_seed(common.seed);
    auto tc = [&] {
      nn::TrainConfig c;
      c.steps = steps;
      c.batch_size = batch;
      c.lr = lr;
      c.grad_clip = grad_clip;
      c.lambda_fp = lambda_fp;
      c.smoothed = smoothed;
      c.tau = tau;
      c.seed = common.seed;
      c.log_every = log_every;
      c.on_log = print_log;
      return c;
    };
    std::unique_ptr<MetricsLog> metrics;
    if (!metrics_path.empty()) metrics = std::make_unique<MetricsLog>(metrics_path);

    if (*synth) {
      auto cfg = data::synth_preset(s_preset, common.seed);
      cfg.split = data::split_from_string(s_split);
      if (s_occluder >= 0) cfg.occluder_prob = s_occluder;
      if (s_contrast >= 0) cfg.object_contrast = s_contrast;
      if (s_noise >= 0) cfg.noise_sigma = s_noise;
      const auto name = s_name.empty() ? s_preset + "_" + s_split : s_name;
      const auto path = data::write_dataset(data::synth_generate(cfg, s_n), s_out, name);
      std::cout << path.string() << "\n";
    } else if (*mle) {
      nn::PolygonModel model = init_path.empty() ? nn::PolygonModel(nn::model_preset(preset))
                                                 : nn::load_model(init_path);
      const auto samples = load_samples(train_path, spec_of(model->config()));
      auto c = tc();
      c.metrics = metrics.get();
      nn::train_mle(*model, samples, c);
      nn::save_model(out_path, *model, {{"phase", "mle"}, {"steps", steps}});
      if (!val_path.empty()) {
        const auto val = load_samples(val_path, spec_of(model->config()));
        const auto r = nn::evaluate(*model, nullptr, val, {1, 1, false}, true);
        std::cout << json{{"val_mean_iou", r.mean_iou}, {"n", val.size()}}.dump() << "\n";
      }
    } else if (*rl) {
      auto model = nn::load_model(init_path);
      const auto samples = load_samples(train_path, spec_of(model->config()));
      std::vector<data::InstanceSample> val;
      if (!val_path.empty()) val = load_samples(val_path, spec_of(model->config()));
      double before = 0.0;
      if (!val.empty()) before = nn::evaluate(*model, nullptr, val, {1, 1, false}, true).mean_iou;
      auto c = tc();
      c.metrics = metrics.get();
      nn::train_rl(*model, samples, c);
      nn::save_model(out_path, *model, {{"phase", "rl"}, {"steps", steps}, {"init", init_path}});
      if (!val.empty()) {
        const double after = nn::evaluate(*model, nullptr, val, {1, 1, false}, true).mean_iou;
        std::cout << json{{"val_mean_iou_before", before}, {"val_mean_iou_after", after}}.dump() << "\n";
      }
    } else if (*ev) {
      auto model = nn::load_model(model_path);
      const auto samples = load_samples(train_path, spec_of(model->config()));
      nn::EvaluatorNet evaluator(model->config());
      auto c = tc();
      if (!ev->get_option("--tau")->count()) c.tau = 0.3;
      c.metrics = metrics.get();
      nn::train_evaluator(*model, *evaluator, samples, c);
      nn::save_evaluator(out_path, *evaluator, {{"model", model_path}, {"steps", steps}});
    } else if (*gg) {
      auto model = nn::load_model(model_path);
      const auto samples = load_samples(train_path, spec_of(model->config()));
      auto gcfg = nn::ggnn_preset(ggnn_preset, model->config().ggnn_channels());
      gcfg.grid = model->config().grid;
      gcfg.fine_grid = model->config().fine_grid;
      if (ggnn_steps_t >= 0) gcfg.steps = ggnn_steps_t;
      nn::Ggnn ggnn(gcfg);
      nn::GgnnTrainConfig c;
      c.steps = steps;
      c.batch_size = batch;
      c.lr = gg->get_option("--lr")->count() ? lr : 1e-3;
      c.seed = common.seed;
      c.log_every = log_every;
      c.metrics = metrics.get();
      c.on_log = print_log;
      nn::train_ggnn(*model, *ggnn, samples, c);
      nn::save_ggnn(out_path, *ggnn, {{"model", model_path}, {"steps", steps}});
      if (!val_path.empty()) {
        const auto val = load_samples(val_path, spec_of(model->config()));
        const auto preds = nn::evaluate(*model, nullptr, val, {1, 1, false}, true).polygons;
        const auto u = nn::evaluate_upscale(*model, *ggnn, val, preds);
        std::cout << json{{"ggnn_iou", u.ggnn_iou}, {"nearest_iou", u.nearest_iou}}.dump() << "\n";
      }
    } else if (*ea) {
      data::CropSpec spec;
      nn::PolygonModel model{nullptr};
      if (!oracle) {
        if (model_path.empty()) throw Error("--model is required unless --oracle is given");
        model = nn::load_model(model_path);
        spec = spec_of(model->config());
      }
      const auto val = load_samples(val_path, spec);
      std::vector<double> ious;
      if (oracle) {
        for (const auto& s : val) ious.push_back(sim::polygon_iou(s.gt, s.gt_mask));
      } else {
        auto evaluator = maybe_evaluator(evaluator_path);
        const bool greedy = !evaluator && k == 1 && beam == 1;
        ious = nn::evaluate(*model, evaluator ? evaluator.get() : nullptr, val, {k, beam, false}, greedy).ious;
      }
      std::map<std::string, std::pair<double, int>> per;
      double total = 0.0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        auto& [sum, n] = per[val[i].category];
        sum += ious[i];
        ++n;
        total += ious[i];
      }
      std::ostringstream table;
      table << "category\tmean_iou\tn\n";
      for (const auto& [cat, v] : per) table << cat << "\t" << v.first / v.second << "\t" << v.second << "\n";
      table << "all\t" << total / static_cast<double>(val.size()) << "\t" << val.size() << "\n";
      std::cout << table.str();
      if (!out_path.empty()) std::ofstream(out_path) << table.str();
    } else if (*ei) {
      data::CropSpec spec;
      std::unique_ptr<sim::Predictor> predictor;
      if (oracle) {
        predictor = std::make_unique<sim::OraclePredictor>();
      } else {
        if (model_path.empty()) throw Error("--model is required unless --oracle is given");
        auto model = nn::load_model(model_path);
        spec = spec_of(model->config());
        predictor = std::make_unique<nn::ModelPredictor>(model, maybe_evaluator(evaluator_path),
                                                         nn::InferenceOptions{k, beam, false});
      }
      const auto val = load_samples(val_path, spec);
      if (!traces_path.empty()) {
        std::ofstream tr(traces_path);
        for (int T : T_list) {
          for (const auto& s : val) {
            auto j = sim::trace_to_json(sim::simulate(*predictor, s, {T, T2, -1, !no_early_stop}));
            j["id"] = s.id;
            j["T"] = T;
            tr << j.dump() << "\n";
          }
        }
      }
      const auto table = sim::clicks_vs_iou_curve(*predictor, val, T_list, T2, !no_early_stop);
      if (!out_path.empty()) write_table(table, out_path);
      for (const auto& c : table.columns) std::cout << c << "\t";
      std::cout << "\n";
      for (const auto& r : table.rows) {
        for (double v : r) std::cout << v << "\t";
        std::cout << "\n";
      }
    } else if (*en) {
      auto model = nn::load_model(model_path);
      auto evaluator = maybe_evaluator(evaluator_path);
      const bool greedy = !evaluator && k == 1 && beam == 1;
      Table table{{"lo_pct", "hi_pct", "mean_iou", "n"}, {}};
      std::vector<std::pair<double, double>> buckets{{0.0, 0.0}};
      for (std::size_t i = 0; i + 1 < bucket_edges.size(); ++i) buckets.emplace_back(bucket_edges[i], bucket_edges[i + 1]);
      for (const auto& [lo, hi] : buckets) {
        const auto val = load_samples(val_path, spec_of(model->config()), {lo / 100.0, hi / 100.0, common.seed});
        const auto r = nn::evaluate(*model, evaluator ? evaluator.get() : nullptr, val, {k, beam, false}, greedy);
        table.rows.push_back({lo, hi, r.mean_iou, static_cast<double>(val.size())});
        std::cout << lo << "-" << hi << "%\t" << r.mean_iou << "\n";
      }
      if (!out_path.empty()) write_table(table, out_path);
    } else if (*ft) {
      auto model = nn::load_model(model_path);
      auto evaluator = maybe_evaluator(evaluator_path);
      const auto samples = load_samples(data_path, spec_of(model->config()));
      sched.seed = common.seed;
      const auto frozen = adapt::frozen_baseline(samples, sched, *model, evaluator ? evaluator.get() : nullptr);
      auto res = adapt::run_online_finetune(samples, sched, *model, evaluator ? evaluator.get() : nullptr);
      fs::create_directories(out_dir);
      Table table{{"chunk", "clicks_saved_pct", "frozen_clicks_saved_pct", "mean_iou", "frozen_mean_iou"}, {}};
      for (std::size_t i = 0; i < res.reports.size(); ++i) {
        const auto& r = res.reports[i];
        table.rows.push_back({static_cast<double>(r.chunk), r.clicks_saved_pct, frozen[i].clicks_saved_pct,
                              r.mean_iou, frozen[i].mean_iou});
        std::cout << "chunk " << r.chunk << "\tclicks saved " << r.clicks_saved_pct << "%\tfrozen "
                  << frozen[i].clicks_saved_pct << "%\n";
      }
      write_table(table, fs::path(out_dir) / "chunks.tsv");
      nn::save_model(fs::path(out_dir) / "model.ckpt", *res.model, {{"phase", "online"}, {"source", model_path}});
      if (res.evaluator) nn::save_evaluator(fs::path(out_dir) / "evaluator.ckpt", *res.evaluator);
    } else if (*sv) {
      svc.model_checkpoint = model_path;
      svc.evaluator_checkpoint = evaluator_path;
      svc.ggnn_checkpoint = ggnn_path;
      svc.host = host;
      svc.port = port;
      svc.store_path = store;
      svc.image_root = image_root;
      svc.finetune_queue = queue;
      auto service = std::make_shared<service::AnnotationService>(svc, service::load_bundle(svc));
      service::HttpApi api(service);
      std::cerr << "serving on " << host << ":" << port << "\n";
      api.listen(host, port);
    } else if (*pl) {
      plot_file(plot_in, plot_out, plot_x, plot_y);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
